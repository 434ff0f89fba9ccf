"""Low-rank teachers, relatedness-controlled pairs, noisy teachers, datasets.

Teachers are built directly from SVD factors (random orthonormal frames from
QR of Gaussian matrices); only the composite map and its SVD are ever used
downstream, so no layer factorization is kept. A noisy teacher is the clean
composite plus a single fixed Gaussian perturbation; that perturbation is
drawn once per NoisyTeacher and reused for every dataset sampled from it.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence, Union

import numpy as np

from .core import (
    InvalidInputError,
    SvdTriple,
    argmax_labels,
    gaussian_matrix,
    rng_from_seed,
    svd,
)

__all__ = [
    "TeacherSpec",
    "Teacher",
    "NoisyTeacher",
    "Dataset",
    "make_teacher",
    "make_related_pair",
    "perturb_teacher",
    "sample_dataset",
    "relatedness",
]

EXACT_ARGMAX = "exact-argmax"


@dataclass(frozen=True)
class TeacherSpec:
    """Declarative description of a low-rank teacher.

    label_sharpness is either the literal "exact-argmax" (hard labels, the
    default) or a positive float used for softened targets.
    """

    n_features: int
    n_classes: int
    rank: int
    singular_values: tuple
    noise_sigma: float = 0.0
    label_sharpness: Union[str, float] = EXACT_ARGMAX

    def __post_init__(self):
        object.__setattr__(self, "singular_values", tuple(float(s) for s in self.singular_values))
        if self.rank > min(self.n_features, self.n_classes):
            raise InvalidInputError(
                f"rank {self.rank} exceeds min(n_features, n_classes)="
                f"{min(self.n_features, self.n_classes)}"
            )
        if len(self.singular_values) != self.rank:
            raise InvalidInputError("need exactly one singular value per rank")
        if any(s <= 0 for s in self.singular_values):
            raise InvalidInputError("singular values must be strictly positive")
        if self.noise_sigma < 0:
            raise InvalidInputError("noise_sigma must be non-negative")
        if self.label_sharpness != EXACT_ARGMAX and not float(self.label_sharpness) > 0:
            raise InvalidInputError("label_sharpness must be positive or 'exact-argmax'")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TeacherSpec":
        return cls(
            n_features=int(d["n_features"]),
            n_classes=int(d["n_classes"]),
            rank=int(d["rank"]),
            singular_values=tuple(d["singular_values"]),
            noise_sigma=float(d.get("noise_sigma", 0.0)),
            label_sharpness=d.get("label_sharpness", EXACT_ARGMAX),
        )


@dataclass(frozen=True)
class Teacher:
    """Ground-truth map: composite weight plus its SVD."""

    w_bar: np.ndarray
    svd: SvdTriple
    spec: TeacherSpec

    @property
    def n_classes(self) -> int:
        return self.w_bar.shape[0]

    @property
    def n_features(self) -> int:
        return self.w_bar.shape[1]


@dataclass(frozen=True)
class NoisyTeacher:
    """Noise-perturbed teacher sigma_hat = w_bar + noise, with its SVD."""

    sigma_hat: np.ndarray
    svd: SvdTriple
    noise: np.ndarray
    teacher: Teacher

    @property
    def n_classes(self) -> int:
        return self.sigma_hat.shape[0]

    @property
    def n_features(self) -> int:
        return self.sigma_hat.shape[1]


@dataclass(frozen=True)
class Dataset:
    """Gaussian inputs with noisy training labels and clean test labels."""

    x: np.ndarray
    noisy_labels: np.ndarray
    clean_labels: np.ndarray
    input_covariance: np.ndarray

    @property
    def n_data(self) -> int:
        return self.x.shape[1]


def _random_frame(n: int, k: int, gen: np.random.Generator) -> np.ndarray:
    """Random (n, k) column-orthonormal frame, Haar up to the sign fix."""
    g = gen.standard_normal((n, k))
    q, r = np.linalg.qr(g)
    # Fixing diag(r) > 0 makes the frame a deterministic function of g.
    q *= np.sign(np.diag(r))
    return q


def make_teacher(spec: TeacherSpec, seed) -> Teacher:
    """Draw a teacher with the spec's singular values and random frames."""
    gen = rng_from_seed(seed)
    u = _random_frame(spec.n_classes, spec.rank, gen)
    v = _random_frame(spec.n_features, spec.rank, gen)
    s = np.asarray(spec.singular_values, dtype=np.float64)
    w_bar = (u * s) @ v.T
    return Teacher(w_bar=w_bar, svd=svd(w_bar), spec=spec)


def make_related_pair(
    spec_a: TeacherSpec, spec_b: TeacherSpec, r: float, seed
) -> tuple:
    """Two teachers whose right frames have constant inner product r.

    V_B = r*V_A + sqrt(1-r^2)*V_perp columnwise, with V_perp orthonormal and
    orthogonal to span(V_A); U_B is an independent random frame. The same
    seed reuses identical frames across different r (and different singular
    values), which keeps sweeps comparable cell to cell.
    """
    if not 0.0 <= r <= 1.0:
        raise InvalidInputError(f"relatedness r must lie in [0, 1], got {r}")
    if spec_a.rank != spec_b.rank:
        raise InvalidInputError("related pair requires rank_A == rank_B")
    if spec_a.n_features != spec_b.n_features:
        raise InvalidInputError("related pair requires equal n_features")
    if 2 * spec_a.rank > spec_a.n_features:
        raise InvalidInputError(
            "need 2*rank <= n_features to fit an orthogonal complement"
        )
    gen = rng_from_seed(seed)
    u_a = _random_frame(spec_a.n_classes, spec_a.rank, gen)
    v_a = _random_frame(spec_a.n_features, spec_a.rank, gen)
    u_b = _random_frame(spec_b.n_classes, spec_b.rank, gen)
    # Orthonormal complement frame: project a fresh Gaussian block away from
    # span(V_A) and orthonormalize.
    g = gen.standard_normal((spec_a.n_features, spec_a.rank))
    g -= v_a @ (v_a.T @ g)
    q, rr = np.linalg.qr(g)
    q *= np.sign(np.diag(rr))
    v_b = r * v_a + np.sqrt(1.0 - r * r) * q

    s_a = np.asarray(spec_a.singular_values, dtype=np.float64)
    s_b = np.asarray(spec_b.singular_values, dtype=np.float64)
    w_a = (u_a * s_a) @ v_a.T
    w_b = (u_b * s_b) @ v_b.T
    # Keep the construction frames rather than re-deriving them from an SVD:
    # for repeated singular values the SVD frame is only defined up to
    # rotation, which would scramble the engineered relatedness.
    t_a = Teacher(w_a, SvdTriple(u_a, s_a.copy(), v_a), spec_a)
    t_b = Teacher(w_b, SvdTriple(u_b, s_b.copy(), v_b), spec_b)
    return t_a, t_b


def perturb_teacher(t: Teacher, sigma_hat: float, seed) -> NoisyTeacher:
    """Add i.i.d. N(0, sigma_hat^2 / n_features) noise to the composite."""
    if sigma_hat < 0:
        raise InvalidInputError("sigma_hat must be non-negative")
    noise = gaussian_matrix(
        t.n_classes, t.n_features, sigma_hat**2 / t.n_features, seed
    )
    sig = t.w_bar + noise
    return NoisyTeacher(sigma_hat=sig, svd=svd(sig), noise=noise, teacher=t)


def _covariance_factor(c_x: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root factor L with L @ L.T = c_x."""
    c = np.asarray(c_x, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise InvalidInputError("input covariance must be square")
    if not np.allclose(c, c.T, atol=1e-10):
        raise InvalidInputError("input covariance must be symmetric")
    evals, evecs = np.linalg.eigh(c)
    if evals.min() < -1e-10 * max(1.0, evals.max()):
        raise InvalidInputError("input covariance must be positive semi-definite")
    return evecs * np.sqrt(np.clip(evals, 0.0, None))


def sample_dataset(
    nt: NoisyTeacher,
    t: Teacher,
    n_data: int,
    c_x: Optional[np.ndarray] = None,
    seed=0,
) -> Dataset:
    """Draw X ~ N(0, C_X) columns and label them with both teachers."""
    if n_data < 1:
        raise InvalidInputError("n_data must be at least 1")
    if nt.n_features != t.n_features:
        raise InvalidInputError("noisy teacher and teacher disagree on n_features")
    f = t.n_features
    if c_x is None:
        c_x = np.eye(f)
    c_x = np.asarray(c_x, dtype=np.float64)
    gen = rng_from_seed(seed)
    white = gen.standard_normal((f, int(n_data)))
    if np.allclose(c_x, np.eye(f)):
        x = white
    else:
        x = _covariance_factor(c_x) @ white
    return Dataset(
        x=x,
        noisy_labels=argmax_labels(nt.sigma_hat @ x),
        clean_labels=argmax_labels(t.w_bar @ x),
        input_covariance=c_x,
    )


def relatedness(a: Teacher, b: Teacher) -> np.ndarray:
    """r_AB = V_B^T V_A restricted to the top rank_B x rank_A block."""
    if a.n_features != b.n_features:
        raise InvalidInputError("teachers must share n_features")
    v_a = a.svd.v[:, : a.spec.rank]
    v_b = b.svd.v[:, : b.spec.rank]
    return v_b.T @ v_a
