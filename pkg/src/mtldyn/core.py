"""Shared numerical primitives: softmax, argmax labeling, SVD, seeded Gaussians.

All matrices are plain float64 numpy arrays in the usual (rows, cols) layout.
Every public operation validates that its inputs are finite and never lets a
NaN/Inf escape. Randomness always flows through an explicit seed (or an
already-constructed Generator); there is no global RNG state anywhere in the
package.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

__all__ = [
    "InvalidInputError",
    "NumericalError",
    "DivergenceError",
    "SvdTriple",
    "rng_from_seed",
    "derive_seed",
    "softmax_columns",
    "argmax_labels",
    "svd",
    "gaussian_matrix",
]


class InvalidInputError(ValueError):
    """Raised when an operation receives input violating its preconditions."""


class NumericalError(RuntimeError):
    """Raised when a numerical routine fails to produce a usable result."""


class DivergenceError(NumericalError):
    """Raised when a training run diverges; carries the offending step."""

    def __init__(self, step: int, loss: float):
        self.step = step
        self.loss = loss
        super().__init__(f"training diverged at step {step} (loss={loss!r})")


def rng_from_seed(seed) -> np.random.Generator:
    """Build a Generator from a 64-bit seed; pass Generators through unchanged."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(int(seed))


def derive_seed(*parts) -> int:
    """Map an arbitrary tuple of labels/values to a stable 64-bit seed.

    Uses SHA-256 of the canonical string form, so the stream attached to a
    given (master seed, purpose, coordinates) tuple never changes when other
    grid points are added to a sweep.
    """
    canon = "|".join(repr(p) for p in parts)
    digest = hashlib.sha256(canon.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def _as_finite_array(m, name: str) -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return a


def softmax_columns(logits) -> np.ndarray:
    """Column-wise softmax, computed shift-stably (max subtracted per column).

    Each output column is non-negative and sums to 1 to within 1e-12, even
    for logit magnitudes of order 1e3.
    """
    a = _as_finite_array(logits, "logits")
    if a.ndim != 2:
        raise InvalidInputError("logits must be a 2-D matrix")
    shifted = a - a.max(axis=0, keepdims=True)
    np.exp(shifted, out=shifted)
    shifted /= shifted.sum(axis=0, keepdims=True)
    return shifted


def argmax_labels(scores) -> np.ndarray:
    """One label per column: the row index of the column maximum.

    Ties break to the lowest row index (numpy argmax semantics), which keeps
    label generation deterministic.
    """
    a = _as_finite_array(scores, "scores")
    if a.ndim != 2 or a.size == 0:
        raise InvalidInputError("scores must be a non-empty 2-D matrix")
    return np.argmax(a, axis=0)


@dataclass(frozen=True)
class SvdTriple:
    """Thin SVD with a deterministic sign convention.

    u: (m, k) column-orthonormal, s: (k,) non-increasing and non-negative,
    v: (n, k) column-orthonormal, with k = min(m, n).
    """

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.s) @ self.v.T

    def truncate(self, k: int) -> "SvdTriple":
        """Keep the top k modes."""
        return SvdTriple(self.u[:, :k].copy(), self.s[:k].copy(), self.v[:, :k].copy())

    @property
    def rank(self) -> int:
        return self.s.size


def svd(m) -> SvdTriple:
    """Thin SVD with signs fixed so results are reproducible across platforms.

    Convention: in each column of U the largest-magnitude entry is made
    positive (first such entry on ties), and the matching V column is flipped
    with it, leaving the reconstruction unchanged.
    """
    a = _as_finite_array(m, "matrix")
    if a.ndim != 2 or a.size == 0:
        raise InvalidInputError("svd requires a non-empty 2-D matrix")
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as err:
        # LAPACK gesdd occasionally fails to converge; gesvd is slower but
        # far more robust, so retry before giving up.
        try:
            import scipy.linalg

            u, s, vt = scipy.linalg.svd(a, full_matrices=False, lapack_driver="gesvd")
        except Exception:
            raise NumericalError(
                f"SVD failed to converge on a {a.shape[0]}x{a.shape[1]} matrix: {err}"
            ) from err
    v = vt.T
    pivot = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[pivot, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return SvdTriple(u * signs, s, v * signs)


def gaussian_matrix(rows: int, cols: int, variance: float, seed) -> np.ndarray:
    """An i.i.d. N(0, variance) matrix, reproducible from the seed."""
    if variance < 0:
        raise InvalidInputError(f"variance must be non-negative, got {variance}")
    gen = rng_from_seed(seed)
    out = gen.standard_normal((int(rows), int(cols)))
    out *= np.sqrt(variance)
    return out
