"""Truncated SVD factors, matrix norms, and a power-iteration spectral norm."""

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError

__all__ = [
    "LowRankFactors",
    "SvdResult",
    "frobenius_norm",
    "spectral_norm",
    "svd",
    "truncated_factors",
]


@dataclass
class SvdResult:
    """Thin SVD ``M = U diag(S) V^T`` with S in non-increasing order."""

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray


@dataclass
class LowRankFactors:
    """A rank-r approximation ``A B^T`` with A (d1, r) and B (d2, r)."""

    a: np.ndarray
    b: np.ndarray
    rank: int

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        if a.ndim != 2 or b.ndim != 2:
            raise ValueError("adapter factors must be 2-D")
        if self.rank < 1:
            raise ValueError(f"rank must be positive, got {self.rank}")
        if a.shape[1] != self.rank or b.shape[1] != self.rank:
            raise ValueError(
                f"factors with shapes {a.shape} and {b.shape} do not match "
                f"rank {self.rank}"
            )
        self.a = a
        self.b = b


def _as_matrix(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains non-finite values")
    return m


def svd(m) -> SvdResult:
    """Deterministic thin SVD.

    Singular values are non-increasing and each column of U is sign-fixed so
    that its largest-magnitude entry is non-negative, which makes repeated
    calls on equal inputs return identical factors.
    """
    m = _as_matrix(m)
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    v = vt.T
    picks = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[picks, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return SvdResult(u=u * signs, s=s, v=v * signs)


def truncated_factors(m, rank: int) -> LowRankFactors:
    """Best rank-r approximation of m in Frobenius norm, split as A B^T.

    Column i of A is sqrt(s_i) * u_i and column i of B is sqrt(s_i) * v_i, so
    the two factors carry the singular values in balance.
    """
    m = _as_matrix(m)
    if not 1 <= rank <= min(m.shape):
        raise ValueError(
            f"rank must lie in [1, {min(m.shape)}] for shape {m.shape}, got {rank}"
        )
    res = svd(m)
    root = np.sqrt(res.s[:rank])
    return LowRankFactors(a=res.u[:, :rank] * root, b=res.v[:, :rank] * root, rank=rank)


def frobenius_norm(m) -> float:
    """Frobenius norm of a matrix."""
    return float(np.linalg.norm(_as_matrix(m)))


def spectral_norm(m, tol: float = 1e-9, max_iters: int = 20000) -> float:
    """Largest singular value, estimated by two-sided power iteration.

    Starts from a fixed pseudorandom unit vector so results are
    deterministic, and stops once successive estimates agree to a relative
    tolerance of ``tol``.

    Raises:
        ConvergenceError: if the estimate has not settled after
            ``max_iters`` iterations; the error carries the last estimate.
    """
    m = _as_matrix(m)
    if not tol > 0.0:
        raise ValueError(f"tol must be positive, got {tol}")
    if max_iters < 1:
        raise ValueError(f"max_iters must be positive, got {max_iters}")
    rng = np.random.default_rng(0x5EED)
    v = rng.standard_normal(m.shape[1])
    v /= np.linalg.norm(v)
    prev = np.inf
    est = 0.0
    for _ in range(max_iters):
        y = m @ v
        est = float(np.linalg.norm(y))
        if est == 0.0:
            return 0.0
        z = m.T @ y
        zn = np.linalg.norm(z)
        if zn == 0.0:
            return est
        v = z / zn
        if abs(est - prev) <= tol * est:
            return est
        prev = est
    raise ConvergenceError(
        f"spectral norm did not converge within {max_iters} iterations",
        last_estimate=est,
    )
