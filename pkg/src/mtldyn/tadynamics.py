"""Training-aligned singular-value ODEs: rank-1, general, and two-teacher.

All integrators use explicit Euler at the SGD learning rate 1/tau, applied to
the per-layer singular values (head and trunk separately) rather than to the
composite directly. That mirrors what layerwise SGD does to a training-
aligned network step for step, and it makes the single-task integrator the
exact r=0 special case of the coupled two-teacher system: both run the same
update with the trunk scale recomputed each step from the coupling relation

    s21 (.) s21 = s_head_A (.) s_head_A + r * s_head_B (.) s_head_B.

The reported trajectories are composite singular values (head times trunk).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .core import InvalidInputError, NumericalError
from .gmatrix import GLookup
from .students import LossEstimate, _draw_test_set, _gen_loss_on

__all__ = [
    "TaTrajectory",
    "rank1_rhs",
    "integrate_rank1",
    "integrate_ta",
    "integrate_multitask",
    "attach_generalization",
]


@dataclass(frozen=True)
class TaTrajectory:
    """Theory trajectory: composite singular values per recorded step.

    For multitask runs, head and trunk carry the per-layer scales so the
    coupling relation can be re-checked independently of the integrator.
    """

    steps: np.ndarray
    s: np.ndarray
    head: Optional[np.ndarray] = None
    trunk: Optional[np.ndarray] = None
    gen_loss: Optional[np.ndarray] = None
    gen_loss_stderr: Optional[np.ndarray] = None
    source: str = "theory"

    @property
    def n_records(self) -> int:
        return self.steps.size

    def argmin_gen(self) -> tuple:
        if self.gen_loss is None:
            raise InvalidInputError("trajectory carries no generalization loss")
        i = int(np.argmin(self.gen_loss))
        return int(self.steps[i]), float(self.gen_loss[i]), float(self.gen_loss_stderr[i])


def _drive_vector(g_of: GLookup, s_hat: np.ndarray) -> np.ndarray:
    """Teacher-side drive per mode.

    In argmax mode this is the stored sharp-label limit of s_hat*g(s_hat);
    in soft mode it is the literal beta*s_hat*g(beta*s_hat) read off the ray
    table, which vanishes against the student term exactly at s = s_hat.
    """
    s_hat = np.atleast_1d(np.asarray(s_hat, dtype=np.float64))
    if g_of.mode == "argmax":
        if s_hat.size != g_of.drive.size:
            raise InvalidInputError(
                "s_hat mode count does not match the lookup's stored drive"
            )
        return g_of.drive.copy()
    beta = 1.0 if g_of.beta is None else float(g_of.beta)
    return beta * s_hat * g_of.g_vec(beta * s_hat)


def rank1_rhs(s: float, s_hat: float, g_of: GLookup) -> float:
    """tau * ds/dt for the top composite singular value (composite form)."""
    drive = float(_drive_vector(g_of, np.array([s_hat]))[0])
    return 2.0 * s * (drive - s * g_of.g(s))


def _integrate_coupled(
    a0: np.ndarray,
    b0: np.ndarray,
    drive_a: np.ndarray,
    drive_b: np.ndarray,
    r: float,
    tau: float,
    steps: int,
    g_a: GLookup,
    g_b: GLookup,
    record_every: int,
):
    """Layerwise Euler on head scales, trunk recomputed from the coupling."""
    if tau <= 0:
        raise InvalidInputError("tau must be positive")
    if steps < 0:
        raise InvalidInputError("steps must be non-negative")
    eta = 1.0 / tau
    a = a0.astype(np.float64).copy()
    b = b0.astype(np.float64).copy()
    rec = {"steps": [], "sa": [], "sb": [], "head_a": [], "head_b": [], "trunk": []}

    for step in range(steps + 1):
        m = np.sqrt(a * a + r * (b * b))
        s_a = a * m
        s_b = b * m
        if step % record_every == 0 or step == steps:
            rec["steps"].append(step)
            rec["sa"].append(s_a.copy())
            rec["sb"].append(s_b.copy())
            rec["head_a"].append(a.copy())
            rec["head_b"].append(b.copy())
            rec["trunk"].append(m.copy())
        if step == steps:
            break
        d_a = drive_a - g_a.g_vec(s_a) * s_a
        d_b = drive_b - g_b.g_vec(s_b) * s_b
        a = a + eta * m * d_a
        b = b + eta * (m * d_b) * r
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise NumericalError(f"TA integration produced non-finite state at step {step + 1}")
    return rec


def integrate_ta(
    s0,
    s_hat,
    tau: float,
    steps: int,
    g_of: GLookup,
    record_every: int = 1,
) -> TaTrajectory:
    """Single-task TA dynamics for a vector of composite singular values.

    Components with zero teacher drive decay toward zero; components started
    at exactly zero stay there (the degenerate fixed point).
    """
    s0 = np.atleast_1d(np.asarray(s0, dtype=np.float64))
    s_hat = np.atleast_1d(np.asarray(s_hat, dtype=np.float64))
    if np.any(s0 < 0):
        raise InvalidInputError("initial singular values must be non-negative")
    if s0.shape != s_hat.shape:
        raise InvalidInputError("s0 and s_hat must have matching shapes")
    drive = _drive_vector(g_of, s_hat)
    a0 = np.sqrt(s0)
    rec = _integrate_coupled(
        a0, np.zeros_like(a0), drive, np.zeros_like(drive),
        0.0, tau, steps, g_of, g_of, record_every,
    )
    return TaTrajectory(
        steps=np.array(rec["steps"], dtype=int),
        s=np.array(rec["sa"]),
        head=np.array(rec["head_a"]),
        trunk=np.array(rec["trunk"]),
    )


def integrate_rank1(
    s0: float,
    s_hat: float,
    tau: float,
    steps: int,
    g_of: GLookup,
    record_every: int = 1,
) -> TaTrajectory:
    """Rank-1 TA dynamics; trajectory index aligns with SGD step index."""
    if s0 <= 0:
        raise InvalidInputError("rank-1 integration needs s0 > 0")
    return integrate_ta(
        np.array([float(s0)]), np.array([float(s_hat)]), tau, steps, g_of, record_every
    )


def integrate_multitask(
    s_a0,
    s_b0,
    s_hat_a,
    s_hat_b,
    r: float,
    tau: float,
    steps: int,
    g_of_a: GLookup,
    g_of_b: GLookup,
    record_every: int = 1,
) -> tuple:
    """Coupled two-teacher TA dynamics at scalar relatedness r.

    The initial head scales are chosen so the composites start at (s_a0,
    s_b0) while satisfying the coupling relation; the trunk scale is then
    recomputed from that relation every step. At r = 0 this reduces exactly
    (bitwise) to two decoupled single-task integrations.
    """
    if not 0.0 <= r <= 1.0:
        raise InvalidInputError("relatedness r must lie in [0, 1]")
    s_a0 = np.atleast_1d(np.asarray(s_a0, dtype=np.float64))
    s_b0 = np.atleast_1d(np.asarray(s_b0, dtype=np.float64))
    s_hat_a = np.atleast_1d(np.asarray(s_hat_a, dtype=np.float64))
    s_hat_b = np.atleast_1d(np.asarray(s_hat_b, dtype=np.float64))
    if s_a0.shape != s_b0.shape:
        raise InvalidInputError("both tasks must carry the same number of modes")
    if np.any(s_a0 < 0) or np.any(s_b0 < 0):
        raise InvalidInputError("initial singular values must be non-negative")
    # Solve a*m = s_a0, b*m = s_b0, m^2 = a^2 + r b^2 for the head scales.
    m0_sq = np.sqrt(s_a0**2 + r * s_b0**2)
    m0 = np.sqrt(m0_sq)
    with np.errstate(invalid="ignore", divide="ignore"):
        a0 = np.where(m0 > 0, s_a0 / m0, 0.0)
        b0 = np.where(m0 > 0, s_b0 / m0, 0.0)
    drive_a = _drive_vector(g_of_a, s_hat_a)
    drive_b = _drive_vector(g_of_b, s_hat_b)
    rec = _integrate_coupled(
        a0, b0, drive_a, drive_b, float(r), tau, steps, g_of_a, g_of_b, record_every
    )
    steps_arr = np.array(rec["steps"], dtype=int)
    head_a = np.array(rec["head_a"])
    head_b = np.array(rec["head_b"])
    trunk = np.array(rec["trunk"])
    coupling_gap = np.max(np.abs(trunk**2 - (head_a**2 + r * head_b**2)))
    if coupling_gap > 1e-8:
        raise NumericalError(
            f"coupling relation violated by {coupling_gap:.3e} during integration"
        )
    traj_a = TaTrajectory(steps=steps_arr, s=np.array(rec["sa"]), head=head_a, trunk=trunk)
    traj_b = TaTrajectory(steps=steps_arr, s=np.array(rec["sb"]), head=head_b, trunk=trunk)
    return traj_a, traj_b


def attach_generalization(
    traj: TaTrajectory,
    u: np.ndarray,
    v: np.ndarray,
    teacher,
    n_test: int = 10_000,
    c_x: Optional[np.ndarray] = None,
    seed=0,
) -> TaTrajectory:
    """Score W(t) = U diag(s(t)) V^T against a teacher's clean labels.

    Uses the same Monte Carlo protocol as the empirical trainer (one fixed
    test set per seed), so theory and experiment curves are comparable.
    """
    x_test, labels = _draw_test_set(teacher, n_test, c_x, seed)
    losses = np.empty(traj.n_records)
    stderrs = np.empty(traj.n_records)
    for i in range(traj.n_records):
        w = (u * traj.s[i]) @ v.T
        est: LossEstimate = _gen_loss_on([w], "linear", x_test, labels)
        losses[i] = est.value
        stderrs[i] = est.stderr
    return replace(traj, gen_loss=losses, gen_loss_stderr=stderrs)
