import numpy as np
import pytest

from mtldyn import (
    InvalidInputError,
    TeacherSpec,
    make_related_pair,
    make_teacher,
    perturb_teacher,
    relatedness,
    sample_dataset,
)


def spec(f=4, c=2, rank=1, s=(5.0,), sigma=0.0):
    return TeacherSpec(n_features=f, n_classes=c, rank=rank, singular_values=s, noise_sigma=sigma)


# ------------------------------------------------------------ TeacherSpec

def test_spec_validation():
    with pytest.raises(InvalidInputError):
        TeacherSpec(4, 2, 3, (1.0, 1.0, 1.0))  # rank > min(f, c)
    with pytest.raises(InvalidInputError):
        TeacherSpec(4, 2, 1, (0.0,))  # non-positive singular value
    with pytest.raises(InvalidInputError):
        TeacherSpec(4, 2, 1, (1.0, 2.0))  # wrong count


def test_spec_round_trip():
    s = spec(f=10, c=3, rank=2, s=(2.0, 1.0), sigma=0.7)
    assert TeacherSpec.from_dict(s.to_dict()) == s


# ----------------------------------------------------------- make_teacher

def test_rank1_frobenius_norm_equals_singular_value():
    t = make_teacher(spec(), seed=0)
    assert abs(np.linalg.norm(t.w_bar) - 5.0) < 1e-8


def test_rank10_unit_eigenvalues():
    t = make_teacher(TeacherSpec(20, 10, 10, (1.0,) * 10), seed=1)
    evals = np.linalg.eigvalsh(t.w_bar.T @ t.w_bar)
    assert np.sum(evals > 1e-8) == 10
    assert np.allclose(np.sort(evals)[-10:], 1.0, atol=1e-10)


def test_fig2_regime_rank_10_of_10_classes():
    t = make_teacher(TeacherSpec(64, 10, 10, (3.0,) * 10), seed=2)
    assert np.sum(t.svd.s > 1e-8) == 10


def test_teacher_matches_spec_singular_values():
    t = make_teacher(spec(f=12, c=6, rank=3, s=(4.0, 2.0, 1.0)), seed=3)
    assert np.allclose(t.svd.s[:3], [4.0, 2.0, 1.0], atol=1e-8)


# ------------------------------------------------------- make_related_pair

@pytest.mark.parametrize("r", [0.0, 0.5, 1.0])
def test_related_pair_inner_product(r):
    s = TeacherSpec(16, 4, 2, (3.0, 3.0))
    a, b = make_related_pair(s, s, r, seed=4)
    got = relatedness(a, b)
    assert np.abs(got - r * np.eye(2)).max() < 1e-8


def test_related_pair_requires_room():
    s = TeacherSpec(3, 2, 2, (1.0, 1.0))
    with pytest.raises(InvalidInputError):
        make_related_pair(s, s, 0.5, seed=0)


def test_related_pair_shares_frames_across_r_and_scale():
    s1 = TeacherSpec(16, 4, 2, (3.0, 3.0))
    s2 = TeacherSpec(16, 4, 2, (10.0, 10.0))
    a1, _ = make_related_pair(s1, s1, 0.2, seed=9)
    a2, b2 = make_related_pair(s1, s2, 0.9, seed=9)
    assert np.allclose(a1.w_bar, a2.w_bar)
    assert abs(np.linalg.norm(b2.w_bar) - 10.0 * np.sqrt(2)) < 1e-8


# --------------------------------------------------------- perturb_teacher

def test_zero_noise_is_identity():
    t = make_teacher(spec(), seed=5)
    nt = perturb_teacher(t, 0.0, seed=6)
    assert np.array_equal(nt.sigma_hat, t.w_bar)
    assert np.all(nt.noise == 0)


def test_noise_moments():
    t = make_teacher(TeacherSpec(100, 10, 1, (3.0,)), seed=7)
    nt = perturb_teacher(t, 1.0, seed=8)
    assert nt.noise.shape == (10, 100)
    assert abs(nt.noise.var() - 0.01) < 0.001  # sigma^2 / n_features = 0.01
    assert np.allclose(nt.sigma_hat, t.w_bar + nt.noise)


def test_large_noise_flips_labels():
    t = make_teacher(TeacherSpec(32, 2, 1, (1.0,)), seed=9)
    nt = perturb_teacher(t, 5.0, seed=10)
    d = sample_dataset(nt, t, 500, seed=11)
    assert np.mean(d.noisy_labels != d.clean_labels) > 0


def test_small_noise_keeps_top_vector():
    t = make_teacher(spec(f=32), seed=12)
    nt = perturb_teacher(t, 1e-12, seed=13)
    angle = np.arccos(np.clip(abs(nt.svd.v[:, 0] @ t.svd.v[:, 0]), 0, 1))
    assert angle < 1e-5


def test_moderate_noise_moves_singular_values():
    t = make_teacher(spec(f=32), seed=12)
    nt = perturb_teacher(t, 0.5, seed=13)
    assert abs(nt.svd.s[0] - t.svd.s[0]) > 1e-6


# ---------------------------------------------------------- sample_dataset

def test_dataset_labels_follow_teachers():
    t = make_teacher(spec(f=8), seed=14)
    nt = perturb_teacher(t, 1.0, seed=15)
    d = sample_dataset(nt, t, 100, seed=16)
    assert np.all(d.noisy_labels == np.argmax(nt.sigma_hat @ d.x, axis=0))
    assert np.all(d.clean_labels == np.argmax(t.w_bar @ d.x, axis=0))
    assert set(np.unique(d.noisy_labels)) <= {0, 1}


def test_zero_noise_means_no_flips():
    t = make_teacher(spec(f=8), seed=17)
    nt = perturb_teacher(t, 0.0, seed=18)
    d = sample_dataset(nt, t, 200, seed=19)
    assert np.array_equal(d.noisy_labels, d.clean_labels)


def test_balanced_teacher_roughly_balances_classes():
    s = TeacherSpec(32, 10, 10, (1.0,) * 10)
    t = make_teacher(s, seed=20)
    nt = perturb_teacher(t, 0.0, seed=21)
    d = sample_dataset(nt, t, 8000, seed=22)
    freq = np.bincount(d.clean_labels, minlength=10) / 8000
    assert freq.max() <= 5 * 0.1
    assert freq.min() >= 0.1 / 5


def test_dataset_deterministic():
    t = make_teacher(spec(f=8), seed=23)
    nt = perturb_teacher(t, 0.5, seed=24)
    d1 = sample_dataset(nt, t, 50, seed=25)
    d2 = sample_dataset(nt, t, 50, seed=25)
    assert np.array_equal(d1.x, d2.x)
    assert np.array_equal(d1.noisy_labels, d2.noisy_labels)


def test_non_psd_covariance_rejected():
    t = make_teacher(spec(f=3), seed=26)
    nt = perturb_teacher(t, 0.0, seed=27)
    with pytest.raises(InvalidInputError):
        sample_dataset(nt, t, 10, c_x=np.array([[1.0, 0, 0], [0, -1.0, 0], [0, 0, 1.0]]), seed=28)


def test_general_covariance_respected():
    t = make_teacher(spec(f=3), seed=29)
    nt = perturb_teacher(t, 0.0, seed=30)
    c_x = np.array([[2.0, 0.5, 0.0], [0.5, 1.0, 0.0], [0.0, 0.0, 0.25]])
    d = sample_dataset(nt, t, 200_000, c_x=c_x, seed=31)
    emp = d.x @ d.x.T / d.n_data
    assert np.abs(emp - c_x).max() < 0.03


# ------------------------------------------------------------- relatedness

def test_self_relatedness_identity():
    t = make_teacher(spec(f=10, c=4, rank=2, s=(2.0, 1.0)), seed=32)
    assert np.abs(relatedness(t, t) - np.eye(2)).max() < 1e-10


def test_independent_teachers_nearly_orthogonal():
    s = TeacherSpec(1000, 2, 1, (1.0,))
    a = make_teacher(s, seed=33)
    b = make_teacher(s, seed=34)
    assert abs(relatedness(a, b)[0, 0]) < 0.1
