"""Command-line interface: teachers, training, theory curves, sweeps, cache.

Exit codes: 0 success, 1 validation failure, 2 configuration/usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from .core import InvalidInputError, derive_seed
from .gmatrix import build_g_lookup
from .harness import (
    ExperimentConfig,
    build_cell,
    cache_dir,
    run_single,
    run_sweep,
    training_targets,
    write_trajectory_csv,
    _cells,
    _students_for_cell,
    _train_config,
)
from .students import train
from .tadynamics import attach_generalization, integrate_ta
from .validation import run_all_checks


def _add_common(p):
    p.add_argument("--config", required=True, help="TOML experiment config")
    p.add_argument("--out", default="results", help="output directory")
    p.add_argument("--seed", type=int, default=None, help="restrict to one seed index")


def _first_cell(cfg):
    return next(iter(_cells(cfg)))


def cmd_gen_teachers(cfg, args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    coords = _first_cell(cfg)
    seeds = [args.seed] if args.seed is not None else list(range(cfg.n_seeds))
    summary = []
    for seed in seeds:
        t_a, t_b, nt_a, nt_b, _, _ = build_cell(cfg, coords, seed)
        np.savez(
            out / f"teachers_seed{seed}.npz",
            w_bar_a=t_a.w_bar, w_bar_b=t_b.w_bar,
            sigma_hat_a=nt_a.sigma_hat, sigma_hat_b=nt_b.sigma_hat,
        )
        summary.append({
            "seed": seed,
            "relatedness": coords["relatedness"],
            "s_bar_a": coords["s_bar_a"],
            "s_bar_b": coords["s_bar_b"],
            "noisy_top_sv_a": float(nt_a.svd.s[0]),
            "noisy_top_sv_b": float(nt_b.svd.s[0]),
        })
    (out / "teachers.json").write_text(json.dumps(summary, indent=1))
    print(f"wrote {len(seeds)} teacher pair(s) to {out}")
    return 0


def cmd_train(cfg, args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    coords = _first_cell(cfg)
    tc = _train_config(cfg)
    seeds = [args.seed] if args.seed is not None else list(range(cfg.n_seeds))
    for seed in seeds:
        t_a, _, nt_a, nt_b, d_a, _ = build_cell(cfg, coords, seed)
        single, _ = _students_for_cell(cfg, nt_a, nt_b, seed)
        traj = train(single, d_a, t_a, tc, targets=training_targets(cfg, nt_a, d_a))
        path = out / f"trajectory_empirical_seed{seed}.csv"
        write_trajectory_csv(traj, path, source="empirical")
        print(f"seed {seed}: final top sv {traj.singular_values[-1, 0]:.4f} -> {path}")
    return 0


def cmd_integrate(cfg, args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    coords = _first_cell(cfg)
    seed = args.seed if args.seed is not None else 0
    t_a, _, nt_a, _, d_a, _ = build_cell(cfg, coords, seed)
    k = cfg.ta_modes
    sharp = cfg.soft_targets_beta if cfg.soft_targets_beta > 0 else "exact-argmax"
    lookup = build_g_lookup(
        nt_a.svd.truncate(max(k, min(nt_a.svd.rank, nt_a.n_classes))),
        n_modes=k,
        s_max=cfg.lookup_s_max,
        n_samples=cfg.lookup_samples,
        seed=derive_seed(cfg.master_seed, "gcache"),
        sharpness=sharp,
    )
    traj = integrate_ta(
        np.full(k, cfg.s0), nt_a.svd.s[:k], 1.0 / cfg.learning_rate,
        cfg.steps, lookup, record_every=cfg.record_every,
    )
    traj = attach_generalization(
        traj, nt_a.svd.u[:, :k], nt_a.svd.v[:, :k], t_a,
        n_test=cfg.n_test, seed=derive_seed(cfg.master_seed, "test-set"),
    )
    path = out / "trajectory_theory.csv"
    write_trajectory_csv(traj, path, source="theory")
    print(f"theory: final top sv {traj.s[-1, 0]:.4f} -> {path}")
    return 0


def cmd_benefit(cfg, args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = [args.seed] if args.seed is not None else list(range(cfg.n_seeds))
    rows = []
    for coords in _cells(cfg):
        for seed in seeds:
            row = run_single(cfg, coords, seed)
            rows.append(row)
            print(
                f"r={coords['relatedness']} sB={coords['s_bar_b']} N={coords['n_data']} "
                f"seed={seed}: MT={row.mt_benefit:+.5f} "
                f"bounds=[{row.bound_lower:+.5f}, {row.bound_upper:+.5f}] ({row.status})"
            )
    mts = [r.mt_benefit for r in rows if r.status == "ok"]
    if mts:
        print(f"seed-mean MT = {np.mean(mts):+.5f}")
    return 0


def cmd_sweep(cfg, args) -> int:
    rows = run_sweep(cfg, args.out, jobs=args.jobs, resume=not args.no_resume, fmt=args.format)
    n_bad = sum(1 for r in rows if r.status != "ok")
    print(f"sweep wrote {len(rows)} rows ({n_bad} flagged) to {args.out}")
    return 0


def cmd_gcache(cfg, args) -> int:
    coords = _first_cell(cfg)
    seed = args.seed if args.seed is not None else 0
    _, _, nt_a, _, _, _ = build_cell(cfg, coords, seed)
    k = cfg.ta_modes
    lookup = build_g_lookup(
        nt_a.svd, n_modes=k, s_max=cfg.lookup_s_max,
        n_samples=cfg.lookup_samples, seed=derive_seed(cfg.master_seed, "gcache"),
    )
    key_src = (
        lookup.u.tobytes(), lookup.v.tobytes(), lookup.n_classes,
        cfg.lookup_samples, cfg.master_seed,
    )
    key = hashlib.sha256(repr(key_src).encode()).hexdigest()[:16]
    target = Path(args.out) if args.out != "results" else cache_dir()
    target.mkdir(parents=True, exist_ok=True)
    path = target / f"glookup_{key}.npz"
    lookup.save(path)
    print(f"g lookup ({lookup.s_grid.size} grid points) -> {path}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mtldyn",
        description="Teacher-student softmax dynamics: training, theory curves, multitask sweeps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, helptext in [
        ("gen-teachers", "materialize teacher pairs for inspection"),
        ("train", "run empirical single-task training, write trajectory CSVs"),
        ("integrate", "integrate the TA theory curve, write trajectory CSV"),
        ("benefit", "run benefit cells and print/write reports"),
        ("sweep", "run the full coordinate grid x seeds"),
        ("gcache", "build and cache a g lookup table"),
    ]:
        p = sub.add_parser(name, help=helptext)
        _add_common(p)
        if name == "sweep":
            p.add_argument("--jobs", type=int, default=1)
            p.add_argument("--format", choices=("csv", "json"), default="csv")
            p.add_argument("--no-resume", action="store_true")

    sub.add_parser("validate", help="run the invariant battery (exit 1 on failure)")

    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        # argparse exits 2 on usage errors already; normalize other codes
        return 2 if err.code not in (0,) else 0

    if args.command == "validate":
        return 0 if run_all_checks() else 1

    try:
        cfg = ExperimentConfig.from_file(args.config)
    except (OSError, InvalidInputError, ValueError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2

    handler = {
        "gen-teachers": cmd_gen_teachers,
        "train": cmd_train,
        "integrate": cmd_integrate,
        "benefit": cmd_benefit,
        "sweep": cmd_sweep,
        "gcache": cmd_gcache,
    }[args.command]
    try:
        return handler(cfg, args)
    except InvalidInputError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
