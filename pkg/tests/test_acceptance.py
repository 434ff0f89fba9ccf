"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The heavyweight protocols (theory/experiment overlay, benefit sweeps) run
from the committed config files in configs/, so the CLI, the acceptance
numbers, and the rendered figures all share one source of truth. Sweep
outputs are also written under results/acceptance/ for the figure package.
"""

import csv
import dataclasses
import json
from pathlib import Path

import numpy as np
import pytest

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

import mtldyn as m
from mtldyn.harness import ExperimentConfig, build_cell, run_sweep, write_trajectory_csv
from mtldyn.harness import _students_for_cell, _train_config, _cells, training_targets
from mtldyn.students import _forward_cache, _log_softmax_loss, _one_hot
from mtldyn.tadynamics import attach_generalization

REPO = Path(__file__).resolve().parent.parent
CONFIGS = REPO / "configs"
OUT = REPO / "results" / "acceptance"


def report(criterion, ok, detail):
    print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}")
    assert ok, f"criterion {criterion}: {detail}"


def load_cfg(name):
    return ExperimentConfig.from_file(CONFIGS / f"{name}.toml")


# ---------------------------------------------------------------- shared runs

@pytest.fixture(scope="module")
def fig1_runs():
    """Empirical mean curves and theory curves for both class counts."""
    out = {}
    OUT.mkdir(parents=True, exist_ok=True)
    for name in ("fig1_2class", "fig1_20class"):
        cfg = load_cfg(name)
        coords = next(iter(_cells(cfg)))
        tc = _train_config(cfg)
        sv_curves, gen_curves = [], []
        steps = None
        for seed in range(cfg.n_seeds):
            t_a, _, nt_a, nt_b, d_a, _ = build_cell(cfg, coords, seed)
            single, _ = _students_for_cell(cfg, nt_a, nt_b, seed)
            traj = m.train(single, d_a, t_a, tc, targets=training_targets(cfg, nt_a, d_a))
            sv_curves.append(traj.singular_values[:, 0])
            gen_curves.append(traj.gen_loss)
            steps = traj.steps
            write_trajectory_csv(traj, OUT / f"{name}_empirical_seed{seed}.csv")
        t_a, _, nt_a, _, _, _ = build_cell(cfg, coords, 0)
        sharp = cfg.soft_targets_beta if cfg.soft_targets_beta > 0 else "exact-argmax"
        lookup = m.build_g_lookup(
            nt_a.svd.truncate(1), n_modes=1, s_max=cfg.lookup_s_max,
            n_samples=cfg.lookup_samples, seed=m.derive_seed(cfg.master_seed, "gcache"),
            sharpness=sharp,
        )
        theory = m.integrate_rank1(
            cfg.s0, float(nt_a.svd.s[0]), 1.0 / cfg.learning_rate, cfg.steps,
            lookup, record_every=cfg.record_every,
        )
        theory = attach_generalization(
            theory, nt_a.svd.u[:, :1], nt_a.svd.v[:, :1], t_a,
            n_test=cfg.n_test, seed=tc.test_seed,
        )
        write_trajectory_csv(theory, OUT / f"{name}_theory.csv")
        out[name] = {
            "steps": steps,
            "emp_sv": np.mean(sv_curves, axis=0),
            "emp_gen": np.mean(gen_curves, axis=0),
            "th_sv": theory.s[:, 0],
            "th_gen": theory.gen_loss,
        }
    return out


@pytest.fixture(scope="module")
def table1_rows():
    cfg = load_cfg("table1")
    return run_sweep(cfg, OUT / "table1", resume=True), cfg


@pytest.fixture(scope="module")
def abundant_rows():
    cfg = load_cfg("abundant")
    return run_sweep(cfg, OUT / "abundant", resume=True), cfg


def rows_from_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def cell_mts(out_dir, **filters):
    rows = rows_from_csv(Path(out_dir) / "results.csv")
    picked = []
    for r in rows:
        if all(abs(float(r[k]) - v) < 1e-12 for k, v in filters.items()):
            assert r["status"] == "ok"
            picked.append(r)
    assert picked, f"no rows for {filters}"
    return picked


# ------------------------------------------------------------- criterion 1

def test_criterion_1_fig1_agreement(fig1_runs):
    details = []
    ok = True
    for name, run in fig1_runs.items():
        mask = run["steps"] >= 100
        rel = np.abs(run["emp_sv"] - run["th_sv"]) / run["th_sv"]
        worst = float(rel[mask].max())
        gen_gap = abs(run["emp_gen"].min() - run["th_gen"].min())
        ok &= worst <= 0.10 and gen_gap <= 0.05
        details.append(f"{name}: max sv err {worst:.1%}, gen-min gap {gen_gap:.4f}")
    report(1, ok, "; ".join(details))


# ------------------------------------------------------------- criterion 2

def test_criterion_2_gradient_oracle():
    gen = m.rng_from_seed(2024)
    worst = 0.0
    eps = 1e-5
    for trial in range(50):
        c = int(gen.integers(2, 6))
        f = int(gen.integers(2, 9))
        n_layers = int(gen.integers(2, 5))
        widths = [f] + [int(gen.integers(2, 7)) for _ in range(n_layers - 1)] + [c]
        act = "relu" if trial % 2 else "linear"
        arch = m.StudentArch(tuple(widths), activation=act, init="random", init_scale=0.7)
        stu = m.init_student(arch, seed=trial)
        x = gen.standard_normal((f, 9))
        targets = _one_hot(gen.integers(0, c, 9), c)
        analytic = m.layer_gradients(stu, x, targets)
        for l, w in enumerate(stu.layers):
            for i in range(w.shape[0]):
                for j in range(w.shape[1]):
                    vals = []
                    for sign in (1.0, -1.0):
                        layers = [lw.copy() for lw in stu.layers]
                        layers[l][i, j] += sign * eps
                        _, logits = _forward_cache(layers, act, x)
                        vals.append(_log_softmax_loss(logits, targets))
                    num = (vals[0] - vals[1]) / (2 * eps)
                    worst = max(worst, abs(num - analytic[l][i, j]))
    report(2, worst < 1e-6, f"max |analytic - FD| = {worst:.2e} over 50 instances")


# ------------------------------------------------------------- criterion 3

def test_criterion_3_g_oracle():
    gen = m.rng_from_seed(33)
    worst_sigma = 0.0
    for trial in range(20):
        rank = 1 + trial % 2
        c = int(gen.integers(2, 7))
        f = int(gen.integers(max(rank, 3), 10))
        svals = tuple(float(0.5 + 3.0 * gen.random()) for _ in range(rank))
        t = m.make_teacher(m.TeacherSpec(f, c, rank, svals), seed=trial)
        est = m.estimate_g(t.w_bar, n_samples=120_000, seed=trial)
        exact = m.gauss_hermite_g(t.w_bar)
        gap = np.abs(est.g - exact) / np.maximum(est.std_err, 1e-14)
        worst_sigma = max(worst_sigma, float(gap.max()))
    zero = m.estimate_g(np.zeros((4, 6)), n_samples=100, seed=0)
    zero_err = float(np.abs(zero.g - (np.eye(4) / 4 - np.ones((4, 4)) / 16)).max())
    ok = worst_sigma < 3.0 and zero_err < 1e-13
    report(3, ok, f"max |MC - quadrature| = {worst_sigma:.2f} stderr; W=0 err {zero_err:.1e}")


# ------------------------------------------------------------- criterion 4

def _conservation_drift(seed, eta, steps):
    spec = m.TeacherSpec(8, 3, 2, (3.0, 1.5), noise_sigma=0.5)
    t = m.make_teacher(spec, seed=seed)
    nt = m.perturb_teacher(t, 0.5, seed=seed + 1)
    d = m.sample_dataset(nt, t, 60, seed=seed + 2)
    arch = m.StudentArch((8, 6, 3), init="random", init_scale=0.3)
    stu = m.init_student(arch, seed=seed + 3)
    cfg = m.TrainConfig(learning_rate=eta, steps=steps, record_every=steps, n_test=10)
    traj = m.train(stu, d, t, cfg)
    w1, w2 = stu.layers
    f1, f2 = traj.final_student.layers
    return float(np.linalg.norm((f2.T @ f2 - f1 @ f1.T) - (w2.T @ w2 - w1 @ w1.T)))


def test_criterion_4_conservation():
    worst, worst_ratio = 0.0, np.inf
    for seed in range(20):
        d3 = _conservation_drift(seed * 10, 1e-3, 2000)
        d4 = _conservation_drift(seed * 10, 1e-4, 2000)
        worst = max(worst, d3)
        worst_ratio = min(worst_ratio, d3 / max(d4, 1e-300))
    ok = worst < 1e-2 and worst_ratio >= 5.0
    report(4, ok, f"max drift {worst:.2e} (< 1e-2); min shrink factor {worst_ratio:.1f}x (>= 5x)")


# ------------------------------------------------------------- criterion 5

def test_criterion_5_monotone_descent():
    worst = -np.inf
    for seed in range(100):
        spec = m.TeacherSpec(6, 3, 2, (3.0, 2.0), noise_sigma=0.5)
        t = m.make_teacher(spec, seed=seed)
        nt = m.perturb_teacher(t, 0.5, seed=seed + 1)
        d = m.sample_dataset(nt, t, 40, seed=seed + 2)
        arch = m.StudentArch((6, 5, 3), init="random", init_scale=0.4)
        stu = m.init_student(arch, seed=seed + 3)
        cfg = m.TrainConfig(learning_rate=1e-3, steps=120, record_every=1, n_test=10)
        traj = m.train(stu, d, t, cfg)
        worst = max(worst, float(np.diff(traj.train_loss).max()))
    report(5, worst <= 0.0 + 1e-12, f"max stepwise train-loss increase {worst:+.2e} over 100 runs")


# ---------------------------------------------------------- criteria 6 and 7

def mean_and_sigma(rows):
    mts = np.array([float(r["mt_benefit"]) for r in rows])
    mc = np.array([float(r["loss_stderr"]) for r in rows])
    sem = mts.std(ddof=1) / np.sqrt(len(mts)) if len(mts) > 1 else 0.0
    sigma = float(np.hypot(np.sqrt(np.mean(mc**2) / len(mc)), sem))
    return float(mts.mean()), sigma


def test_criterion_6_unrelated_null(table1_rows):
    _, cfg = table1_rows
    rows = cell_mts(OUT / "table1", relatedness=0.0, s_bar_b=10.0)
    mt, sigma = mean_and_sigma(rows)
    ok = abs(mt) < 2 * sigma
    report(6, ok, f"r=0 seed-mean MT = {mt:+.5f}, 2*sigma = {2 * sigma:.5f}")


def test_criterion_7_trend(table1_rows):
    means = {}
    for r in (0.0, 0.4, 0.8):
        means[r], _ = mean_and_sigma(cell_mts(OUT / "table1", relatedness=r, s_bar_b=10.0))
    low_snr, _ = mean_and_sigma(cell_mts(OUT / "table1", relatedness=0.8, s_bar_b=0.1))
    ok_r = means[0.0] < means[0.4] < means[0.8]
    ok_snr = low_snr < means[0.8]
    detail = (
        f"MT(r)={means[0.0]:+.5f} < {means[0.4]:+.5f} < {means[0.8]:+.5f} ({ok_r}); "
        f"MT(sB=0.1)={low_snr:+.5f} < MT(sB=10)={means[0.8]:+.5f} ({ok_snr})"
    )
    report(7, ok_r and ok_snr, detail)


# ------------------------------------------------------------- criterion 8

def test_criterion_8_abundant_data(abundant_rows):
    _, cfg = abundant_rows
    mt800, _ = mean_and_sigma(cell_mts(OUT / "abundant", n_data=800))
    mt6400, _ = mean_and_sigma(cell_mts(OUT / "abundant", n_data=6400))
    ratio = abs(mt6400) / abs(mt800)
    ok = ratio < 0.5
    report(8, ok, f"MT(800)={mt800:+.5f}, MT(6400)={mt6400:+.5f}, ratio {ratio:.2f} (< 0.5)")


# ------------------------------------------------------------- criterion 9

def test_criterion_9_unrelated_high_snr_harm():
    cfg = load_cfg("unrelated_harm")
    rows = run_sweep(cfg, OUT / "unrelated_harm", resume=True)
    rows = rows_from_csv(OUT / "unrelated_harm" / "results.csv")
    mt, sigma = mean_and_sigma(rows)
    report(9, mt <= 0.0, f"random-init r=0 s_bar_B=100: seed-mean MT = {mt:+.5f} (<= 0)")


# ------------------------------------------------------------- criterion 10

def test_criterion_10_bound_sandwich(table1_rows, abundant_rows):
    bad = []
    n = 0
    for out_dir in (OUT / "table1", OUT / "abundant"):
        for r in rows_from_csv(out_dir / "results.csv"):
            if r["status"] != "ok":
                continue
            n += 1
            mt = float(r["mt_benefit"])
            lo, hi = float(r["bound_lower"]), float(r["bound_upper"])
            sigma = float(r["loss_stderr"])
            if not (lo - 3 * sigma <= mt <= hi + 3 * sigma):
                bad.append((out_dir.name, r["relatedness"], r["seed"], lo, mt, hi, sigma))
    report(10, not bad, f"sandwich held on {n - len(bad)}/{n} TA runs" +
           (f"; violations: {bad[:3]}" if bad else ""))


# ------------------------------------------------------------- criterion 11

def test_criterion_11_multitask_ode_consistency():
    t = m.make_teacher(m.TeacherSpec(24, 3, 1, (4.0,)), seed=7)
    gl = m.build_g_lookup(t.svd.truncate(1), s_max=10.0, n_samples=60_000, seed=8)
    single = m.integrate_ta([0.3], [4.0], 1e3, 5000, gl, record_every=10)
    mt_a, mt_b = m.integrate_multitask(
        [0.3], [0.25], [4.0], [4.0], 0.0, 1e3, 5000, gl, gl, record_every=10
    )
    gap = float(np.abs(mt_a.s - single.s).max())
    r = 0.6
    mt_a2, mt_b2 = m.integrate_multitask(
        [0.3], [0.25], [4.0], [3.0], r, 1e3, 3000, gl, gl, record_every=10
    )
    coupling = float(np.abs(mt_a2.trunk**2 - (mt_a2.head**2 + r * mt_b2.head**2)).max())
    ok = gap < 1e-8 and coupling < 1e-10
    report(11, ok, f"r=0 gap {gap:.2e} (< 1e-8); coupling residual {coupling:.2e} (< 1e-10)")
