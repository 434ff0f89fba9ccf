"""Experiment configuration, orchestration, sweeps, and persistence.

A sweep is the Cartesian product of coordinate grids (relatedness, teacher
singular values, dataset sizes) times a list of seed indices. Every cell is a
pure function of (config, coordinates, seed index): all randomness is derived
from the master seed with component-wise coordinate hashing, so teacher
frames and datasets are shared across cells that don't logically depend on
the varying coordinate (common random numbers), and adding grid points never
perturbs existing rows.

Results go to a CSV with a fixed column order plus a sidecar metadata JSON;
rows are byte-identical across re-runs and sweeps are resumable by skipping
already-present (coordinates, seed) keys.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
import time
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib  # py >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from . import __version__ as _version
from .core import DivergenceError, InvalidInputError, derive_seed, rng_from_seed
from .core import svd as _svd
from .teachers import (
    Teacher,
    TeacherSpec,
    make_related_pair,
    make_teacher,
    perturb_teacher,
    sample_dataset,
)
from .students import (
    StudentArch,
    TrainConfig,
    Trajectory,
    composite_weight,
    init_multitask_student,
    init_student,
    train,
    train_multitask,
)
from .benefit import benefit_bounds_general, estimate_bound_inputs, multitask_benefit

__all__ = [
    "ExperimentConfig",
    "ResultRow",
    "RESULT_COLUMNS",
    "run_single",
    "run_sweep",
    "write_trajectory_csv",
    "cache_dir",
]

COORD_NAMES = ("relatedness", "s_bar_a", "s_bar_b", "n_data", "n_data_aux")
RESULT_COLUMNS = COORD_NAMES + (
    "seed",
    "mt_benefit",
    "min_loss_single",
    "min_loss_multi",
    "argmin_single",
    "argmin_multi",
    "bound_lower",
    "bound_upper",
    "loss_stderr",
    "status",
)
SCHEMA_VERSION = 1


def cache_dir() -> Path:
    """g-lookup cache location, overridable via MTLDYN_CACHE_DIR."""
    return Path(os.environ.get("MTLDYN_CACHE_DIR", Path.home() / ".cache" / "mtldyn"))


@dataclass(frozen=True)
class ExperimentConfig:
    """Declarative description of one experiment family / sweep."""

    # teachers
    n_features: int = 64
    n_classes: int = 2
    rank: int = 1
    sigma_hat: float = 1.0
    fix_teacher_across_seeds: bool = False
    teacher_seed: int = 0
    # "random": Haar frames via make_related_pair; "contrast": rank-1 teacher
    # whose left vector is the two-class contrast direction (the TA-premise
    # instance used for theory/experiment overlays; r grid must be {0})
    teacher_construction: str = "random"
    # grids
    relatedness: tuple = (0.0,)
    s_bar_a: tuple = (3.0,)
    s_bar_b: tuple = (10.0,)
    n_data: tuple = (400,)
    n_data_aux: tuple = ()  # empty -> mirror n_data
    # student
    hidden: tuple = (8,)
    activation: str = "linear"
    init: str = "training_aligned"
    s0: float = 0.1
    init_scale: float = 0.1
    ta_modes: int = 1
    # training
    learning_rate: float = 1e-3
    steps: int = 16000
    record_every: int = 20
    loss_weights: tuple = (1.0, 1.0)
    # 0 -> hard one-hot targets (the sharp-label limit); > 0 -> soft targets
    # softmax(beta * Sigma_hat X), the finite-sharpness fidelity mode
    soft_targets_beta: float = 0.0
    # test protocol / theory
    n_test: int = 10_000
    lookup_s_max: float = 16.0
    lookup_samples: int = 200_000
    # run
    master_seed: int = 42
    n_seeds: int = 5
    compute_bounds: bool = True
    bound_samples: int = 200_000

    def __post_init__(self):
        for name in ("relatedness", "s_bar_a", "s_bar_b", "n_data", "n_data_aux", "hidden", "loss_weights"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        for name in ("relatedness", "s_bar_a", "s_bar_b", "n_data"):
            if len(getattr(self, name)) == 0:
                raise InvalidInputError(f"grid {name} must be non-empty")
        if self.n_seeds < 1:
            raise InvalidInputError("need at least one seed")
        if self.n_data_aux and len(self.n_data_aux) != len(self.n_data):
            raise InvalidInputError("n_data_aux must be empty or match n_data in length")

    # -- config file round trip ------------------------------------------------

    _SECTIONS = {
        "teachers": ("n_features", "n_classes", "rank", "sigma_hat",
                     "fix_teacher_across_seeds", "teacher_seed", "teacher_construction"),
        "grid": ("relatedness", "s_bar_a", "s_bar_b", "n_data", "n_data_aux"),
        "student": ("hidden", "activation", "init", "s0", "init_scale", "ta_modes"),
        "train": ("learning_rate", "steps", "record_every", "loss_weights",
                  "soft_targets_beta"),
        "test": ("n_test", "lookup_s_max", "lookup_samples"),
        "run": ("master_seed", "n_seeds", "compute_bounds", "bound_samples"),
    }

    @classmethod
    def from_dict(cls, tree: dict) -> "ExperimentConfig":
        kwargs = {}
        known = {f.name for f in dataclasses.fields(cls)}
        for section, body in tree.items():
            if section not in cls._SECTIONS:
                raise InvalidInputError(f"unknown config section [{section}]")
            for key, value in body.items():
                if key not in known:
                    raise InvalidInputError(f"unknown config key {section}.{key}")
                kwargs[key] = tuple(value) if isinstance(value, list) else value
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path, "rb") as fh:
            return cls.from_dict(tomllib.load(fh))

    def to_dict(self) -> dict:
        return {
            section: {k: getattr(self, k) for k in keys}
            for section, keys in self._SECTIONS.items()
        }

    def to_toml(self) -> str:
        def fmt(v):
            if isinstance(v, bool):
                return "true" if v else "false"
            if isinstance(v, (int, np.integer)):
                return str(int(v))
            if isinstance(v, float):
                return repr(float(v))
            if isinstance(v, str):
                return json.dumps(v)
            if isinstance(v, (tuple, list)):
                return "[" + ", ".join(fmt(x) for x in v) + "]"
            raise InvalidInputError(f"cannot serialize config value {v!r}")

        lines = []
        for section, body in self.to_dict().items():
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {fmt(v)}" for k, v in body.items())
            lines.append("")
        return "\n".join(lines)


@dataclass(frozen=True)
class ResultRow:
    """One sweep cell: coordinates, seed, benefit summary, bounds, status."""

    coords: dict
    seed: int
    mt_benefit: float = float("nan")
    min_loss_single: float = float("nan")
    min_loss_multi: float = float("nan")
    argmin_single: int = -1
    argmin_multi: int = -1
    bound_lower: float = float("nan")
    bound_upper: float = float("nan")
    loss_stderr: float = float("nan")
    status: str = "ok"

    def as_csv_row(self) -> list:
        vals = [repr(float(self.coords[c])) if c in ("relatedness", "s_bar_a", "s_bar_b")
                else str(int(self.coords[c])) for c in COORD_NAMES]
        vals += [
            str(self.seed),
            repr(float(self.mt_benefit)),
            repr(float(self.min_loss_single)),
            repr(float(self.min_loss_multi)),
            str(int(self.argmin_single)),
            str(int(self.argmin_multi)),
            repr(float(self.bound_lower)),
            repr(float(self.bound_upper)),
            repr(float(self.loss_stderr)),
            self.status,
        ]
        return vals


def _contrast_teacher(spec: TeacherSpec, seed) -> Teacher:
    """Rank-1 teacher with left vector (e_0 - e_1)/sqrt(2), random right one."""
    if spec.rank != 1 or spec.n_classes < 2:
        raise InvalidInputError("contrast construction needs rank 1 and >= 2 classes")
    gen = rng_from_seed(seed)
    v = gen.standard_normal(spec.n_features)
    v /= np.linalg.norm(v)
    u = np.zeros(spec.n_classes)
    u[0], u[1] = 1.0 / np.sqrt(2), -1.0 / np.sqrt(2)
    w = spec.singular_values[0] * np.outer(u, v)
    return Teacher(w, _svd(w), spec)


def _cells(cfg: ExperimentConfig):
    aux = cfg.n_data_aux if cfg.n_data_aux else cfg.n_data
    for r, sa, sb, (nd, nda) in product(
        cfg.relatedness, cfg.s_bar_a, cfg.s_bar_b, zip(cfg.n_data, aux)
    ):
        yield {"relatedness": r, "s_bar_a": sa, "s_bar_b": sb, "n_data": nd, "n_data_aux": nda}


def build_cell(cfg: ExperimentConfig, coords: dict, seed: int):
    """Teachers, noisy teachers and datasets for one cell, seeded for CRN.

    The frame seed depends only on the seed index (not on r or the singular
    values), so sweeps compare cells on identical teacher geometry; data
    seeds additionally hash the dataset size.
    """
    ms = cfg.master_seed
    frame_seed = cfg.teacher_seed if cfg.fix_teacher_across_seeds else derive_seed(ms, seed, "frames")
    spec_a = TeacherSpec(cfg.n_features, cfg.n_classes, cfg.rank,
                         (coords["s_bar_a"],) * cfg.rank, cfg.sigma_hat)
    spec_b = TeacherSpec(cfg.n_features, cfg.n_classes, cfg.rank,
                         (coords["s_bar_b"],) * cfg.rank, cfg.sigma_hat)
    if cfg.teacher_construction == "contrast":
        if coords["relatedness"] != 0.0:
            raise InvalidInputError("contrast teacher construction supports r = 0 only")
        t_a = _contrast_teacher(spec_a, frame_seed)
        t_b = make_teacher(spec_b, derive_seed(frame_seed, "aux"))
    else:
        t_a, t_b = make_related_pair(spec_a, spec_b, coords["relatedness"], frame_seed)
    # A fixed teacher means a fixed noisy teacher too (it is the object the
    # theory integrates); otherwise each seed draws a fresh perturbation.
    noise_scope = (cfg.teacher_seed,) if cfg.fix_teacher_across_seeds else (ms, seed)
    nt_a = perturb_teacher(t_a, cfg.sigma_hat, derive_seed(*noise_scope, "noise-a"))
    nt_b = perturb_teacher(t_b, cfg.sigma_hat, derive_seed(*noise_scope, "noise-b"))
    d_a = sample_dataset(nt_a, t_a, coords["n_data"], seed=derive_seed(ms, seed, "data-a", coords["n_data"]))
    d_b = sample_dataset(nt_b, t_b, coords["n_data_aux"], seed=derive_seed(ms, seed, "data-b", coords["n_data_aux"]))
    return t_a, t_b, nt_a, nt_b, d_a, d_b


def _train_config(cfg: ExperimentConfig) -> TrainConfig:
    return TrainConfig(
        learning_rate=cfg.learning_rate,
        steps=cfg.steps,
        record_every=cfg.record_every,
        loss_weights=cfg.loss_weights,
        n_test=cfg.n_test,
        test_seed=derive_seed(cfg.master_seed, "test-set"),
    )


def _students_for_cell(cfg: ExperimentConfig, nt_a, nt_b, seed: int):
    widths = (cfg.n_features,) + cfg.hidden + (cfg.n_classes,)
    if cfg.init == "training_aligned":
        arch = StudentArch(widths, activation=cfg.activation, init="training_aligned",
                           init_singular_values=(cfg.s0,) * cfg.ta_modes)
        single = init_student(arch, teacher_svd=nt_a.svd, seed=0)
        multi = init_multitask_student(
            (cfg.n_features,) + cfg.hidden, cfg.n_classes, cfg.n_classes,
            activation=cfg.activation, init="training_aligned", s0=cfg.s0,
            svd_a=nt_a.svd, svd_b=nt_b.svd, n_modes=cfg.ta_modes,
        )
    else:
        arch = StudentArch(widths, activation=cfg.activation, init="random",
                           init_scale=cfg.init_scale)
        single = init_student(arch, seed=derive_seed(cfg.master_seed, seed, "init-single"))
        multi = init_multitask_student(
            (cfg.n_features,) + cfg.hidden, cfg.n_classes, cfg.n_classes,
            activation=cfg.activation, init="random", init_scale=cfg.init_scale,
            seed=derive_seed(cfg.master_seed, seed, "init-multi"),
        )
    return single, multi


def training_targets(cfg: ExperimentConfig, nt, dataset) -> Optional[np.ndarray]:
    """None for hard one-hot labels, else softmax(beta Sigma_hat X) targets."""
    if cfg.soft_targets_beta <= 0:
        return None
    from .core import softmax_columns

    return softmax_columns(cfg.soft_targets_beta * (nt.sigma_hat @ dataset.x))


def run_single(cfg: ExperimentConfig, coords: dict, seed: int) -> ResultRow:
    """One cell: train baseline and multitask students, report the benefit.

    Fully deterministic per (config, coordinates, seed). Divergence is
    reported as a flagged row rather than raised.
    """
    t_a, t_b, nt_a, nt_b, d_a, d_b = build_cell(cfg, coords, seed)
    tc = _train_config(cfg)
    single, multi = _students_for_cell(cfg, nt_a, nt_b, seed)
    try:
        traj_single = train(single, d_a, t_a, tc, targets=training_targets(cfg, nt_a, d_a))
        traj_multi_a, _ = train_multitask(
            multi, d_a, d_b, t_a, t_b, tc,
            targets_a=training_targets(cfg, nt_a, d_a),
            targets_b=training_targets(cfg, nt_b, d_b),
        )
    except DivergenceError as err:
        return ResultRow(coords=coords, seed=seed, status=f"diverged:{err.step}")

    report = multitask_benefit(traj_single, traj_multi_a)
    row = ResultRow(
        coords=coords,
        seed=seed,
        mt_benefit=report.mt_benefit,
        min_loss_single=report.min_loss_single,
        min_loss_multi=report.min_loss_multi,
        argmin_single=report.argmin_steps[0],
        argmin_multi=report.argmin_steps[1],
        loss_stderr=report.mt_stderr,
    )
    if not cfg.compute_bounds:
        return row

    w_multi = _composite_at(traj_multi_a, report.argmin_steps[1])
    w_single = _composite_at(traj_single, report.argmin_steps[0])
    inputs = estimate_bound_inputs(
        w_multi, w_single, t_a,
        n_samples=cfg.bound_samples, seed=derive_seed(cfg.master_seed, seed, "bounds"),
    )
    bounds = benefit_bounds_general(w_multi, w_single, t_a.w_bar, g_estimates=inputs)
    return dataclasses.replace(
        row,
        bound_lower=bounds.lower,
        bound_upper=bounds.upper,
        loss_stderr=float(np.sqrt(report.mt_stderr**2
                                  + max(bounds.lower_stderr, bounds.upper_stderr) ** 2)),
    )


def _composite_at(traj: Trajectory, step: int) -> np.ndarray:
    if traj.composites is None:
        raise InvalidInputError("trajectory did not record composite weights")
    i = int(np.nonzero(traj.steps == step)[0][0])
    return traj.composites[i]


def _row_key(coords: dict, seed: int) -> tuple:
    return tuple(repr(float(coords[c])) for c in ("relatedness", "s_bar_a", "s_bar_b")) + (
        int(coords["n_data"]), int(coords["n_data_aux"]), int(seed)
    )


def _cell_worker(args):
    cfg, coords, seed = args
    return coords, seed, run_single(cfg, coords, seed)


def run_sweep(
    cfg: ExperimentConfig,
    out_dir,
    jobs: int = 1,
    resume: bool = True,
    fmt: str = "csv",
) -> list:
    """Grid x seeds sweep with incremental, resumable CSV output."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results_path = out / ("results.csv" if fmt == "csv" else "results.json")
    meta_path = out / "metadata.json"

    done = set()
    if resume and fmt == "csv" and results_path.exists():
        with open(results_path, newline="") as fh:
            for r in csv.DictReader(fh):
                key = (r["relatedness"], r["s_bar_a"], r["s_bar_b"],
                       int(r["n_data"]), int(r["n_data_aux"]), int(r["seed"]))
                done.add(key)

    todo = [
        (cfg, coords, seed)
        for coords in _cells(cfg)
        for seed in range(cfg.n_seeds)
        if _row_key(coords, seed) not in done
    ]

    t_start = time.time()
    rows = []
    if jobs > 1 and len(todo) > 1:
        import multiprocessing as mp

        with mp.get_context("spawn").Pool(jobs) as pool:
            for coords, seed, row in pool.imap(_cell_worker, todo):
                rows.append(row)
    else:
        for args in todo:
            rows.append(_cell_worker(args)[2])

    if fmt == "csv":
        new_file = not results_path.exists()
        with open(results_path, "a", newline="") as fh:
            writer = csv.writer(fh)
            if new_file:
                writer.writerow(RESULT_COLUMNS)
            for row in rows:
                writer.writerow(row.as_csv_row())
    else:
        existing = []
        if resume and results_path.exists():
            existing = json.loads(results_path.read_text())
        existing.extend(
            {**{c: row.coords[c] for c in COORD_NAMES},
             **{k: getattr(row, k) for k in RESULT_COLUMNS if k not in COORD_NAMES}}
            for row in rows
        )
        results_path.write_text(json.dumps(existing, indent=1))

    n_total = sum(1 for _ in _cells(cfg)) * cfg.n_seeds
    n_failed = sum(1 for row in rows if row.status != "ok")
    meta = {
        "schema_version": SCHEMA_VERSION,
        "package_version": _version,
        "config": self_describing_config(cfg),
        "rows_total_expected": n_total,
        "rows_written_this_run": len(rows),
        "rows_skipped_resume": n_total - len(todo),
        "rows_flagged": n_failed,
        "seeds": list(range(cfg.n_seeds)),
        "gen_loss_record_granularity": cfg.record_every,
        "noise_resampled_per_seed": not cfg.fix_teacher_across_seeds,
        "elapsed_seconds": round(time.time() - t_start, 3),
    }
    meta_path.write_text(json.dumps(meta, indent=1))
    return rows


def self_describing_config(cfg: ExperimentConfig) -> dict:
    return json.loads(json.dumps(cfg.to_dict()))


def write_trajectory_csv(traj, path, source: Optional[str] = None) -> None:
    """step, train_loss, gen_loss, gen_loss_stderr, s_1..s_k, source."""
    src = source or getattr(traj, "source", "empirical")
    sv = traj.s if hasattr(traj, "s") else traj.singular_values
    k = sv.shape[1]
    train_losses = getattr(traj, "train_loss", None)
    gen = traj.gen_loss if traj.gen_loss is not None else np.full(len(sv), np.nan)
    gen_se = traj.gen_loss_stderr if traj.gen_loss_stderr is not None else np.full(len(sv), np.nan)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "train_loss", "gen_loss", "gen_loss_stderr"]
                        + [f"s_{i + 1}" for i in range(k)] + ["source"])
        for i in range(len(sv)):
            tl = float("nan") if train_losses is None else float(train_losses[i])
            writer.writerow(
                [int(traj.steps[i]), repr(tl), repr(float(gen[i])), repr(float(gen_se[i]))]
                + [repr(float(x)) for x in sv[i]] + [src]
            )
