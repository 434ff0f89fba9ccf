"""Softmax-gradient structure G(W), its trace/projections, and lookup tables.

G(W)_cc' = E[P_c] delta_cc' - E[P_c P_c'] over X ~ N(0, C_X), where P is the
softmax of WX. Monte Carlo is the primary estimator; a Gauss-Hermite
quadrature oracle is provided for rank <= 2. Sampling happens in logit space:
the logits WX are exactly N(0, W C_X W^T), so the estimator never touches the
feature dimension.

The dynamics integrators consume ray lookup tables (GLookup): the projected
scalar g along the frame of a fixed teacher, tabulated against the common
per-mode scale and interpolated linearly, plus the teacher-side drive term.
With hard argmax labels the drive is the sharp-label limit of s_hat*g(s_hat)
(the labels' cross-covariance with the inputs); with soft labels at finite
sharpness the literal softmax form is used.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .core import (
    InvalidInputError,
    NumericalError,
    SvdTriple,
    rng_from_seed,
    softmax_columns,
)

__all__ = [
    "GEstimate",
    "GLookup",
    "LookupRangeError",
    "estimate_g",
    "gauss_hermite_g",
    "trace_g",
    "isotropic_approx",
    "empirical_cross_cov",
    "label_cross_cov",
    "build_g_lookup",
]

DEFAULT_MC_SAMPLES = 200_000


class LookupRangeError(NumericalError):
    """Raised when a g-lookup is queried outside its tabulated range."""


@dataclass(frozen=True)
class GEstimate:
    """Monte Carlo estimate of G(W) with per-entry standard errors."""

    g: np.ndarray
    n_samples: int
    std_err: np.ndarray

    @property
    def trace(self) -> float:
        return float(np.trace(self.g))


def _logit_factor(w: np.ndarray, c_x: Optional[np.ndarray]) -> np.ndarray:
    """Factor A with A @ A.T = W C_X W^T, so logits = A @ N(0, I)."""
    if c_x is None:
        m = w @ w.T
    else:
        m = w @ np.asarray(c_x, dtype=np.float64) @ w.T
    m = 0.5 * (m + m.T)
    evals, evecs = np.linalg.eigh(m)
    return evecs * np.sqrt(np.clip(evals, 0.0, None))


def estimate_g(
    w,
    c_x: Optional[np.ndarray] = None,
    n_samples: int = DEFAULT_MC_SAMPLES,
    seed=0,
) -> GEstimate:
    """Monte Carlo estimate of G(W) over X ~ N(0, C_X).

    At W = 0 the softmax is uniform for every sample, so the estimate is
    exact with zero variance.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise InvalidInputError("w must be a 2-D matrix")
    if n_samples < 1:
        raise InvalidInputError("n_samples must be at least 1")
    c = w.shape[0]
    gen = rng_from_seed(seed)
    a = _logit_factor(w, c_x)
    logits = a @ gen.standard_normal((c, int(n_samples)))
    p = softmax_columns(logits)

    p_mean = p.mean(axis=1)
    second = (p @ p.T) / n_samples
    g = np.diag(p_mean) - second
    g = 0.5 * (g + g.T)

    # Per-entry standard errors of the sample means behind G. Off-diagonal
    # entries are means of -P_c*P_c'; diagonal entries are means of P_c-P_c^2.
    p2 = p * p
    second_sq = (p2 @ p2.T) / n_samples
    var = second_sq - second**2
    diag_vals = p - p2
    var_diag = (diag_vals**2).mean(axis=1) - diag_vals.mean(axis=1) ** 2
    var[np.diag_indices(c)] = var_diag
    std_err = np.sqrt(np.clip(var, 0.0, None) / n_samples)
    return GEstimate(g=g, n_samples=int(n_samples), std_err=std_err)


def gauss_hermite_g(w, c_x: Optional[np.ndarray] = None, order: int = 120) -> np.ndarray:
    """Quadrature oracle for G(W), valid for numerical rank <= 2.

    The softmax depends on X only through the <= 2 right-singular
    projections, so a (tensor) Gauss-Hermite rule computes the defining
    expectations essentially exactly.
    """
    w = np.asarray(w, dtype=np.float64)
    c = w.shape[0]
    u_full, s_full, vt_full = np.linalg.svd(w, full_matrices=False)
    tol = max(1e-12, 1e-12 * (s_full[0] if s_full.size else 0.0))
    k = int(np.sum(s_full > tol))
    if k == 0:
        return np.eye(c) / c - np.ones((c, c)) / c**2
    if k > 2:
        raise InvalidInputError("quadrature oracle supports rank <= 2 only")
    u = u_full[:, :k]
    s = s_full[:k]
    v = vt_full[:k].T
    if c_x is None:
        cov_z = np.eye(k)
    else:
        cov_z = v.T @ np.asarray(c_x, dtype=np.float64) @ v
    chol = np.linalg.cholesky(cov_z + 1e-15 * np.eye(k))

    nodes, weights = np.polynomial.hermite_e.hermegauss(order)
    norm = np.sqrt(2.0 * np.pi)
    if k == 1:
        zeta = nodes[None, :]
        wts = weights / norm
    else:
        g1, g2 = np.meshgrid(nodes, nodes, indexing="ij")
        zeta = np.stack([g1.ravel(), g2.ravel()])
        wts = np.outer(weights, weights).ravel() / norm**2
    logits = (u * s) @ (chol @ zeta)
    p = softmax_columns(logits)
    p_mean = p @ wts
    second = (p * wts) @ p.T
    g = np.diag(p_mean) - second
    return 0.5 * (g + g.T)


def trace_g(s, u, v, c_x=None, n_samples: int = DEFAULT_MC_SAMPLES, seed=0) -> float:
    """Tr G at W = U diag(s) V^T; the scalar behind the isotropic form."""
    s = np.atleast_1d(np.asarray(s, dtype=np.float64))
    w = (np.asarray(u)[:, : s.size] * s) @ np.asarray(v)[:, : s.size].T
    return estimate_g(w, c_x=c_x, n_samples=n_samples, seed=seed).trace


def isotropic_approx(w, trace: float) -> np.ndarray:
    """(trace/(C-1)) * (I - (1/C) 11^T): the isotropic stand-in for G(W)."""
    if trace < 0:
        raise InvalidInputError("trace must be non-negative")
    c = np.asarray(w).shape[0]
    return (trace / (c - 1)) * (np.eye(c) - np.ones((c, c)) / c)


def empirical_cross_cov(source, x, n_classes: Optional[int] = None) -> np.ndarray:
    """(1/N) sum_mu y(X^mu) X^mu^T over a finite dataset.

    source is either a composite weight matrix (softmax outputs) or a 1-D
    integer label vector (one-hot outputs; n_classes then required unless
    inferable from the labels).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidInputError("x must be a feature-by-sample matrix")
    n = x.shape[1]
    src = np.asarray(source)
    if src.ndim == 2:
        return softmax_columns(src @ x) @ x.T / n
    labels = src.astype(int)
    if labels.shape[0] != n:
        raise InvalidInputError("label count must match sample count")
    c = int(n_classes) if n_classes is not None else int(labels.max()) + 1
    out = np.zeros((c, x.shape[0]))
    np.add.at(out, labels, x.T)
    return out / n


def _z_covariance_factor(v: np.ndarray, c_x: Optional[np.ndarray]) -> np.ndarray:
    k = v.shape[1]
    if c_x is None:
        return np.eye(k)
    cov = v.T @ np.asarray(c_x, dtype=np.float64) @ v
    evals, evecs = np.linalg.eigh(0.5 * (cov + cov.T))
    return evecs * np.sqrt(np.clip(evals, 0.0, None))


def label_cross_cov(
    triple: SvdTriple,
    c_x: Optional[np.ndarray] = None,
    n_samples: int = DEFAULT_MC_SAMPLES,
    seed=0,
    sharpness: Union[str, float] = "exact-argmax",
):
    """Population cross-covariance E[y(X) X^T] of a teacher's labels.

    y is the one-hot argmax of (U S V^T) X by default, or the softmax at
    finite sharpness beta. Returns (matrix, std_err), both (C, F). This is
    the sharp-scale limit of G(beta W) beta W C_X, i.e. the teacher-side
    drive of the training dynamics under hard labels.
    """
    u, s, v = triple.u, triple.s, triple.v
    c, k = u.shape
    gen = rng_from_seed(seed)
    chol = _z_covariance_factor(v, c_x)
    z = chol @ gen.standard_normal((k, int(n_samples)))
    logits = (u * s) @ z
    if sharpness == "exact-argmax":
        labels = np.argmax(logits, axis=0)
        y = np.zeros((c, int(n_samples)))
        y[labels, np.arange(int(n_samples))] = 1.0
    else:
        y = softmax_columns(float(sharpness) * logits)
    e_yz = y @ z.T / n_samples
    e_yz2 = (y * y) @ (z.T**2) / n_samples
    var = np.clip(e_yz2 - e_yz**2, 0.0, None) / n_samples

    # Map the z-space expectation back to feature space through E[X | z].
    if c_x is None:
        back = v.T
    else:
        cov_z = v.T @ np.asarray(c_x, dtype=np.float64) @ v
        back = np.linalg.solve(cov_z, v.T @ np.asarray(c_x, dtype=np.float64))
    mat = e_yz @ back
    std_err = np.sqrt(var @ back**2)
    return mat, std_err


@dataclass
class GLookup:
    """Tabulated projected g along a fixed teacher frame, plus drive terms.

    g_grid[i] is the mean over active modes of u_sigma^T G(W(s)) u_sigma at
    W(s) = U diag(s * ones) V^T, i.e. the scalar coupling of the isotropic
    approximation evaluated on the ray the TA dynamics actually traverses.
    drive[sigma] is the teacher-side term: the sharp-label limit of
    s_hat*g(s_hat) in argmax mode, or its finite-sharpness softmax value.
    """

    s_grid: np.ndarray
    g_grid: np.ndarray
    drive: np.ndarray
    s_hat: np.ndarray
    u: np.ndarray
    v: np.ndarray
    n_classes: int
    mode: str = "argmax"
    beta: Optional[float] = None
    n_samples: int = DEFAULT_MC_SAMPLES
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def n_modes(self) -> int:
        return self.u.shape[1]

    def g(self, s: float) -> float:
        """Linear interpolation of the tabulated scalar g at per-mode scale s."""
        s = float(s)
        lo, hi = float(self.s_grid[0]), float(self.s_grid[-1])
        if s < lo - 1e-12 or s > hi + 1e-12:
            raise LookupRangeError(
                f"g-lookup queried at s={s}, outside tabulated [{lo}, {hi}]"
            )
        return float(np.interp(s, self.s_grid, self.g_grid))

    def g_vec(self, s_vec) -> float:
        """Scalar g for a vector of mode scales, via the norm parameterization."""
        s_vec = np.asarray(s_vec, dtype=np.float64)
        return self.g(float(np.linalg.norm(s_vec)) / np.sqrt(max(s_vec.size, 1)))

    def drive_at(self, s_hat: Optional[float] = None) -> float:
        """Scalar teacher drive (rank-1 convenience).

        In argmax mode the drive is the precomputed sharp-label limit; in
        soft mode it is the literal beta*s_hat*g(beta*s_hat), which vanishes
        against the student term exactly at s = s_hat.
        """
        if self.mode == "argmax" or s_hat is None:
            return float(self.drive[0])
        b = 1.0 if self.beta is None else float(self.beta)
        return b * float(s_hat) * self.g(b * float(s_hat))

    def save(self, path) -> None:
        np.savez(
            path,
            s_grid=self.s_grid,
            g_grid=self.g_grid,
            drive=self.drive,
            s_hat=self.s_hat,
            u=self.u,
            v=self.v,
            n_classes=self.n_classes,
            mode=self.mode,
            beta=-1.0 if self.beta is None else self.beta,
            n_samples=self.n_samples,
            seed=self.seed,
            meta=json.dumps(self.meta),
        )

    @classmethod
    def load(cls, path) -> "GLookup":
        d = np.load(path, allow_pickle=False)
        beta = float(d["beta"])
        return cls(
            s_grid=d["s_grid"],
            g_grid=d["g_grid"],
            drive=d["drive"],
            s_hat=d["s_hat"],
            u=d["u"],
            v=d["v"],
            n_classes=int(d["n_classes"]),
            mode=str(d["mode"]),
            beta=None if beta < 0 else beta,
            n_samples=int(d["n_samples"]),
            seed=int(d["seed"]),
            meta=json.loads(str(d["meta"])),
        )


def _projected_g_on_ray(
    u_active: np.ndarray,
    base_logits: np.ndarray,
    s: float,
) -> float:
    """Mean over active modes of u_sigma^T G u_sigma at scale s (CRN samples)."""
    p = softmax_columns(s * base_logits) if s != 0.0 else np.full_like(
        base_logits, 1.0 / base_logits.shape[0]
    )
    n = p.shape[1]
    p_mean = p.mean(axis=1)
    proj = u_active.T @ p
    diag_first = (u_active**2).T @ p_mean
    diag_second = (proj**2).mean(axis=1)
    return float(np.mean(diag_first - diag_second))


def build_g_lookup(
    teacher_svd: SvdTriple,
    n_modes: int = 1,
    c_x: Optional[np.ndarray] = None,
    s_max: float = 10.0,
    ds: float = 0.05,
    refine_tol: float = 0.02,
    n_samples: int = DEFAULT_MC_SAMPLES,
    seed=0,
    sharpness: Union[str, float] = "exact-argmax",
) -> GLookup:
    """Tabulate the projected g on the top-n_modes ray of a teacher frame.

    Common random numbers are shared across the whole s-grid so the curve is
    smooth enough for Euler integration. The grid starts uniform with spacing
    ds and is refined where the relative change between neighbours exceeds
    refine_tol. The teacher drive is estimated from the teacher's full SVD
    (all modes contribute to the labels), projected onto the active modes.
    """
    if n_modes < 1 or n_modes > teacher_svd.rank:
        raise InvalidInputError("n_modes must be in [1, rank of teacher SVD]")
    if s_max <= 0:
        raise InvalidInputError("s_max must be positive")
    u_active = teacher_svd.u[:, :n_modes]
    v_active = teacher_svd.v[:, :n_modes]
    c = u_active.shape[0]
    gen = rng_from_seed(seed)
    chol = _z_covariance_factor(v_active, c_x)
    z = chol @ gen.standard_normal((n_modes, int(n_samples)))
    base_logits = u_active @ z  # logits at unit per-mode scale

    grid = list(np.arange(0.0, s_max + ds / 2, ds))
    if grid[-1] < s_max:
        grid.append(s_max)
    values = {s: _projected_g_on_ray(u_active, base_logits, s) for s in grid}
    for _ in range(3):
        inserts = []
        for a, b in zip(grid[:-1], grid[1:]):
            ga, gb = values[a], values[b]
            ref = max(abs(ga), abs(gb), 1e-12)
            if abs(gb - ga) > refine_tol * ref and (b - a) > 1e-3:
                inserts.append(0.5 * (a + b))
        if not inserts:
            break
        for s in inserts:
            values[s] = _projected_g_on_ray(u_active, base_logits, s)
        grid = sorted(values)

    s_grid = np.array(sorted(values))
    g_grid = np.array([values[s] for s in s_grid])

    drive_mat, _ = label_cross_cov(
        teacher_svd, c_x=c_x, n_samples=n_samples,
        seed=derive_drive_seed(seed), sharpness=sharpness,
    )
    drive = np.einsum("cs,cf,fs->s", u_active, drive_mat, v_active)
    return GLookup(
        s_grid=s_grid,
        g_grid=g_grid,
        drive=drive,
        s_hat=teacher_svd.s[:n_modes].copy(),
        u=u_active.copy(),
        v=v_active.copy(),
        n_classes=c,
        mode="argmax" if sharpness == "exact-argmax" else "soft",
        beta=None if sharpness == "exact-argmax" else float(sharpness),
        n_samples=int(n_samples),
        seed=int(seed) if not isinstance(seed, np.random.Generator) else 0,
        meta={"format_version": 1},
    )


def derive_drive_seed(seed) -> int:
    """Decorrelate the drive estimate from the g-grid samples."""
    if isinstance(seed, np.random.Generator):
        return int(seed.integers(2**63))
    return (int(seed) * 0x9E3779B97F4A7C15 + 0x5851F42D4C957F2D) % 2**63
