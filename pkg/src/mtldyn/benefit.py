"""Multitask benefit MT_{A<-B} and its analytic lower/upper bounds.

MT is the min-over-time single-task generalization loss minus the
min-over-time multitask generalization loss on the same teacher, minima
taken over the recorded grid. The bounds come from the convexity of
log-sum-exp: for any pair of composite weights (multitask W_A, baseline
W~_A),

    Tr([T - G(W_A) W_A C_X] D^T) <= MT <= Tr([T - G(W~_A) W~_A C_X] D^T)

with D = W_A - W~_A and T the clean teacher's label/input cross-covariance
E[y_bar(X) X^T] (the sharp-label limit of G(W_bar) W_bar C_X, matching the
hard clean labels used in the generalization loss).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Union

import numpy as np

from .core import InvalidInputError
from .gmatrix import GEstimate, GLookup, estimate_g, label_cross_cov
from .teachers import Teacher

__all__ = [
    "BenefitReport",
    "BoundInputs",
    "Bounds",
    "multitask_benefit",
    "estimate_bound_inputs",
    "benefit_bounds_general",
    "benefit_bounds_rank1",
]


class Bounds(NamedTuple):
    lower: float
    upper: float
    lower_stderr: float = 0.0
    upper_stderr: float = 0.0


@dataclass(frozen=True)
class BoundInputs:
    """Estimates feeding the general bounds.

    Exactly one of (teacher_cross_cov, g_bar) supplies the teacher term:
    the sharp-label cross-covariance (default protocol) or a finite-scale
    G(W_bar) estimate (literal softmax form).
    """

    g_multi: GEstimate
    g_single: GEstimate
    teacher_cross_cov: Optional[np.ndarray] = None
    teacher_cross_cov_stderr: Optional[np.ndarray] = None
    g_bar: Optional[GEstimate] = None


@dataclass(frozen=True)
class BenefitReport:
    """Min-over-time losses, MT value, and (optionally) the bounds."""

    min_loss_single: float
    min_loss_multi: float
    mt_benefit: float
    argmin_steps: tuple
    mt_stderr: float = 0.0
    bound_lower: Optional[float] = None
    bound_upper: Optional[float] = None
    bound_lower_stderr: float = 0.0
    bound_upper_stderr: float = 0.0
    metadata: dict = field(default_factory=dict)


def multitask_benefit(traj_single, traj_multi) -> BenefitReport:
    """MT = min_t single-task loss - min_t multitask loss (recorded grid).

    Both trajectories must have scored generalization loss on the same
    teacher with the same test protocol; the report's stderr combines the
    two Monte Carlo errors at the argmins.
    """
    for traj in (traj_single, traj_multi):
        if traj.n_records == 0 or traj.gen_loss is None or len(traj.gen_loss) == 0:
            raise InvalidInputError("trajectories must carry recorded generalization loss")
    step_s, min_s, se_s = traj_single.argmin_gen()
    step_m, min_m, se_m = traj_multi.argmin_gen()
    return BenefitReport(
        min_loss_single=min_s,
        min_loss_multi=min_m,
        mt_benefit=min_s - min_m,
        argmin_steps=(step_s, step_m),
        mt_stderr=float(np.hypot(se_s, se_m)),
        metadata={"record_grid": (int(traj_single.steps[-1]), int(traj_multi.steps[-1]))},
    )


def estimate_bound_inputs(
    w_a: np.ndarray,
    w_a_tilde: np.ndarray,
    teacher: Teacher,
    c_x: Optional[np.ndarray] = None,
    n_samples: int = 200_000,
    seed=0,
) -> BoundInputs:
    """Monte Carlo estimates of everything the general bounds need."""
    t_bar, t_err = label_cross_cov(teacher.svd, c_x=c_x, n_samples=n_samples, seed=seed)
    return BoundInputs(
        g_multi=estimate_g(w_a, c_x=c_x, n_samples=n_samples, seed=seed),
        g_single=estimate_g(w_a_tilde, c_x=c_x, n_samples=n_samples, seed=seed),
        teacher_cross_cov=t_bar,
        teacher_cross_cov_stderr=t_err,
    )


def _student_term(g_est: GEstimate, w: np.ndarray, c_x, delta: np.ndarray):
    """Tr(G W C_X delta^T) and its propagated standard error."""
    wc = w if c_x is None else w @ np.asarray(c_x, dtype=np.float64)
    a = wc @ delta.T  # (F-contracted) so term = sum_ij G_ij a_ji
    term = float(np.sum(g_est.g * a.T))
    stderr = float(np.sqrt(np.sum((g_est.std_err * a.T) ** 2)))
    return term, stderr


def benefit_bounds_general(
    w_a: np.ndarray,
    w_a_tilde: np.ndarray,
    w_bar_a: np.ndarray,
    c_x: Optional[np.ndarray] = None,
    g_estimates: Optional[BoundInputs] = None,
) -> Bounds:
    """Depth- and initialization-agnostic bounds from the composite weights."""
    w_a = np.asarray(w_a, dtype=np.float64)
    w_a_tilde = np.asarray(w_a_tilde, dtype=np.float64)
    w_bar_a = np.asarray(w_bar_a, dtype=np.float64)
    if not (w_a.shape == w_a_tilde.shape == w_bar_a.shape):
        raise InvalidInputError("all composite weights must share one shape")
    if g_estimates is None:
        raise InvalidInputError("g_estimates is required (see estimate_bound_inputs)")
    delta = w_a - w_a_tilde

    if g_estimates.teacher_cross_cov is not None:
        teacher_term = float(np.sum(g_estimates.teacher_cross_cov * delta))
        t_err = g_estimates.teacher_cross_cov_stderr
        teacher_err = 0.0 if t_err is None else float(np.sqrt(np.sum((t_err * delta) ** 2)))
    elif g_estimates.g_bar is not None:
        teacher_term, teacher_err = _student_term(g_estimates.g_bar, w_bar_a, c_x, delta)
    else:
        raise InvalidInputError("bound inputs carry neither a teacher cross-cov nor G(W_bar)")

    multi_term, multi_err = _student_term(g_estimates.g_multi, w_a, c_x, delta)
    single_term, single_err = _student_term(g_estimates.g_single, w_a_tilde, c_x, delta)
    return Bounds(
        lower=teacher_term - multi_term,
        upper=teacher_term - single_term,
        lower_stderr=float(np.hypot(teacher_err, multi_err)),
        upper_stderr=float(np.hypot(teacher_err, single_err)),
    )


def benefit_bounds_rank1(
    s_a: float,
    s_a_tilde: float,
    s_bar_a: float,
    g_of: GLookup,
) -> Bounds:
    """Rank-1 TA specialization on a shared singular-vector frame.

    lower = (s_A - s~_A)(drive(s_bar) - s_A g(s_A)),
    upper = (s_A - s~_A)(drive(s_bar) - s~_A g(s~_A)),
    where drive(s_bar) is s_bar*g(s_bar) at the lookup's label sharpness
    (its hard-label limit under argmax labels). Build g_of on the clean
    teacher's frame.
    """
    gap = float(s_a) - float(s_a_tilde)
    teacher_term = g_of.drive_at(float(s_bar_a))
    lower = gap * (teacher_term - float(s_a) * g_of.g(float(s_a)))
    upper = gap * (teacher_term - float(s_a_tilde) * g_of.g(float(s_a_tilde)))
    return Bounds(lower=lower, upper=upper)
