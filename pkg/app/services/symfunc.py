"""
Symmetric-function calculus of the p-sum product operator

    F(lambda) = prod over p-subsets S of sum_{i in S} lambda_i,    F~ = F^(1/m), m = C(n, p)

Every operation accepts a single spectrum of shape (n,) or a batch of shape (..., n);
batched calls return arrays with the leading shape, single calls return floats.
"""

import logging
import math
from dataclasses import dataclass, field
from itertools import combinations
from math import comb
from typing import Optional, Tuple, Union

import numpy as np

from app.exceptions import (
    EigenSolverError, GrowthHypothesisError, NotInConeError, OperatorOverflowError
)
from config import settings

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, list, tuple]


@dataclass(frozen=True)
class PSpec:
    """Dimension n, subset size p and the precomputed p-subset tables."""
    n: int
    p: int
    m: int = field(init=False)
    subsets: np.ndarray = field(init=False, repr=False, compare=False)
    membership: np.ndarray = field(init=False, repr=False, compare=False)
    swap_scatter: np.ndarray = field(init=False, repr=False, compare=False)
    swap_pairs: Tuple[np.ndarray, np.ndarray] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 2 <= self.n <= settings.MAX_DIMENSION:
            raise ValueError(f"n must be in [2, {settings.MAX_DIMENSION}], got {self.n}")
        if not 1 <= self.p <= self.n:
            raise ValueError(f"p must be in [1, n], got p={self.p}, n={self.n}")

        subsets = list(combinations(range(self.n), self.p))
        index = {s: i for i, s in enumerate(subsets)}
        membership = np.zeros((len(subsets), self.n))
        for i, s in enumerate(subsets):
            membership[i, list(s)] = 1.0

        # Matched pairs (S, T) with r in S, k not in S and T = S \ {r} + {k}
        rows, s_idx, t_idx = [], [], []
        for i, s in enumerate(subsets):
            for r in s:
                for k in range(self.n):
                    if k in s:
                        continue
                    t = tuple(sorted((set(s) - {r}) | {k}))
                    rows.append(k * self.n + r)
                    s_idx.append(i)
                    t_idx.append(index[t])
        scatter = np.zeros((len(rows), self.n * self.n))
        scatter[np.arange(len(rows)), rows] = 1.0

        for name, value in (
            ("m", comb(self.n, self.p)),
            ("subsets", np.array(subsets, dtype=int).reshape(len(subsets), self.p)),
            ("membership", membership),
            ("swap_scatter", scatter),
            ("swap_pairs", (np.array(s_idx, dtype=int), np.array(t_idx, dtype=int))),
        ):
            if isinstance(value, np.ndarray):
                value.setflags(write=False)
            object.__setattr__(self, name, value)


@dataclass(frozen=True)
class OperatorJet:
    """Value and eigen-frame derivatives of F (tilde=False) or F~ (tilde=True)."""
    value_F: Union[float, np.ndarray]
    value_Ft: Union[float, np.ndarray]
    grad_diag: np.ndarray
    hess_diag: np.ndarray
    hess_off: np.ndarray
    tilde: bool


@dataclass(frozen=True)
class ScaledJet:
    """log F and the eigen-frame derivatives of F divided by F; finite for every m."""
    log_F: Union[float, np.ndarray]
    value_Ft: Union[float, np.ndarray]
    grad_diag: np.ndarray
    hess_diag: np.ndarray
    hess_off: np.ndarray


@dataclass(frozen=True)
class MatrixJet:
    value: Union[float, np.ndarray]
    dA: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray


def _as_spectrum(lam: ArrayLike, spec: PSpec) -> np.ndarray:
    arr = np.asarray(lam, dtype=float)
    if arr.ndim == 0 or arr.shape[-1] != spec.n:
        raise ValueError(f"spectrum must have trailing dimension {spec.n}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("spectrum entries must be finite")
    return arr


def _scalar(value: np.ndarray):
    return float(value) if np.ndim(value) == 0 else value


def subset_sums(lam: ArrayLike, spec: PSpec) -> np.ndarray:
    """All m p-subset sums, shape (..., m)."""
    return _as_spectrum(lam, spec) @ spec.membership.T


def default_margin(lam: ArrayLike) -> Union[float, np.ndarray]:
    """Scale-invariant cone tolerance 1e-10 * (1 + |lambda|_inf)."""
    arr = np.asarray(lam, dtype=float)
    return _scalar(1e-10 * (1.0 + np.max(np.abs(arr), axis=-1)))


def min_p_sum(lam: ArrayLike, spec: PSpec):
    """Smallest p-subset sum, i.e. the sum of the p smallest entries."""
    arr = _as_spectrum(lam, spec)
    return _scalar(np.sort(arr, axis=-1)[..., :spec.p].sum(axis=-1))


def in_cone(lam: ArrayLike, spec: PSpec, margin: Optional[float] = None):
    if margin is None:
        margin = default_margin(lam)
    elif np.any(np.asarray(margin) < 0):
        raise ValueError("margin must be non-negative")
    result = np.asarray(min_p_sum(lam, spec)) > margin
    return bool(result) if result.ndim == 0 else result


def _require_cone(sigma: np.ndarray) -> None:
    low = sigma.min(axis=-1)
    bad = low <= 0
    if np.any(bad):
        flat = int(np.flatnonzero(np.ravel(bad))[0])
        margin = float(np.ravel(low)[flat])
        raise NotInConeError(
            f"spectrum not in the p-convex cone (min p-sum {margin:.3e} at sample {flat})",
            index=flat, margin=margin,
        )


def _check_finite(value: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(value)):
        raise OperatorOverflowError(f"{what} overflowed double precision")
    return value


def eval_F(lam: ArrayLike, spec: PSpec):
    """Product of all p-subset sums; log-domain inside the cone, signed product outside."""
    sigma = subset_sums(lam, spec)
    inside = np.all(sigma > 0, axis=-1)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        logs = np.log(np.where(inside[..., None], sigma, 1.0))
        value = np.where(inside, np.exp(logs.sum(axis=-1)), np.prod(sigma, axis=-1))
    return _scalar(_check_finite(value, "F"))


def _log_product(sigma: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(np.maximum(sigma, 0.0)).sum(axis=-1)


def log_F(lam: ArrayLike, spec: PSpec):
    """log F on the closed cone; -inf where a p-sum vanishes."""
    sigma = subset_sums(lam, spec)
    low = sigma.min(axis=-1)
    if np.any(low < 0):
        flat = int(np.flatnonzero(np.ravel(low < 0))[0])
        raise NotInConeError(f"log F needs non-negative p-sums (sample {flat})",
                             index=flat, margin=float(np.ravel(low)[flat]))
    return _scalar(_log_product(sigma))


def eval_Ft(lam: ArrayLike, spec: PSpec):
    sigma = subset_sums(lam, spec)
    _require_cone(sigma)
    return _scalar(np.exp(np.log(sigma).mean(axis=-1)))


def _normalized_blocks(sigma: np.ndarray, spec: PSpec):
    """
    Derivative blocks of F divided by F:
      a_k      = sum_{S ni k} 1/sigma_S                       (F^kk / F)
      B_kl     = sum_{S ni k,l} 1/sigma_S^2                   (a a^T - B = F^kk,ll / F)
      Q_kr     = -sum_{matched (S,T)} 1/(sigma_S sigma_T)     (F^kr,rk / F)
    """
    inv = 1.0 / sigma
    a = inv @ spec.membership
    B = np.einsum("...s,sk,sl->...kl", inv * inv, spec.membership, spec.membership)
    s_idx, t_idx = spec.swap_pairs
    if len(s_idx):
        weights = -(inv[..., s_idx] * inv[..., t_idx])
        Q = (weights @ spec.swap_scatter).reshape(sigma.shape[:-1] + (spec.n, spec.n))
    else:
        Q = np.zeros(sigma.shape[:-1] + (spec.n, spec.n))
    return a, B, Q


def grad_diag(lam: ArrayLike, spec: PSpec) -> np.ndarray:
    """F^kk = sum over subsets containing k of F / sigma_S."""
    sigma = subset_sums(lam, spec)
    _require_cone(sigma)
    F = np.asarray(eval_F(lam, spec))
    return F[..., None] * (1.0 / sigma) @ spec.membership


def hess_blocks(lam: ArrayLike, spec: PSpec) -> Tuple[np.ndarray, np.ndarray]:
    """(F^kk,ll, F^kr,rk) from the division-free subset-pair formulas."""
    jet = operator_jet(lam, spec)
    return jet.hess_diag, jet.hess_off


def scaled_jet(lam: ArrayLike, spec: PSpec) -> ScaledJet:
    """(log F, F~, F^kk / F, F^kk,ll / F, F^kr,rk / F) without ever forming F."""
    sigma = subset_sums(lam, spec)
    _require_cone(sigma)
    logs = np.log(sigma)
    a, B, Q = _normalized_blocks(sigma, spec)
    return ScaledJet(
        log_F=_scalar(logs.sum(axis=-1)),
        value_Ft=_scalar(np.exp(logs.mean(axis=-1))),
        grad_diag=a,
        hess_diag=a[..., :, None] * a[..., None, :] - B,
        hess_off=Q,
    )


def operator_jet(lam: ArrayLike, spec: PSpec) -> OperatorJet:
    sj = scaled_jet(lam, spec)
    with np.errstate(over="ignore"):
        F = _check_finite(np.exp(np.asarray(sj.log_F)), "F")
    Fk = F[..., None]
    Fkl = F[..., None, None]
    return OperatorJet(
        value_F=_scalar(F),
        value_Ft=sj.value_Ft,
        grad_diag=Fk * sj.grad_diag,
        hess_diag=Fkl * sj.hess_diag,
        hess_off=Fkl * sj.hess_off,
        tilde=False,
    )


def tilde_jet(lam: ArrayLike, spec: PSpec) -> OperatorJet:
    """
    Chain rule to F~ = F^(1/m):
      F~^kk    = (1/m) F^(1/m-1) F^kk
      F~^kk,ll = (1/m)(1/m-1) F^(1/m-2) F^kk F^ll + (1/m) F^(1/m-1) F^kk,ll
    evaluated in the normalized form so that F itself never has to be formed.
    """
    sigma = subset_sums(lam, spec)
    _require_cone(sigma)
    Ft = np.exp(np.log(sigma).mean(axis=-1))
    a, B, Q = _normalized_blocks(sigma, spec)
    m = spec.m
    scale = (Ft / m)[..., None]
    scale2 = (Ft / m)[..., None, None]
    with np.errstate(over="ignore"):
        F = np.exp(np.log(sigma).sum(axis=-1))
    return OperatorJet(
        value_F=_scalar(F),
        value_Ft=_scalar(Ft),
        grad_diag=scale * a,
        hess_diag=scale2 * (a[..., :, None] * a[..., None, :] / m - B),
        hess_off=scale2 * Q,
        tilde=True,
    )


def spectral_decomposition(A: ArrayLike) -> Tuple[np.ndarray, np.ndarray]:
    """Eigenvalues sorted descending and matching orthonormal eigenvectors (columns)."""
    mat = np.asarray(A, dtype=float)
    if mat.shape[-1] != mat.shape[-2]:
        raise ValueError(f"matrix must be square, got shape {mat.shape}")
    scale = 1.0 + np.max(np.abs(mat))
    if np.max(np.abs(mat - np.swapaxes(mat, -1, -2))) > 1e-12 * scale:
        raise ValueError("matrix must be symmetric")
    mat = 0.5 * (mat + np.swapaxes(mat, -1, -2))
    try:
        values, vectors = np.linalg.eigh(mat)
    except np.linalg.LinAlgError as e:
        raise EigenSolverError(f"symmetric eigen-decomposition failed: {e}") from e
    return values[..., ::-1], vectors[..., :, ::-1]


def matrix_jet(A: ArrayLike, spec: PSpec) -> MatrixJet:
    """F~ of a symmetric matrix and its gradient F~^ij = b diag(F~_kappa) b^T."""
    values, vectors = spectral_decomposition(A)
    jet = tilde_jet(values, spec)
    dA = np.einsum("...ik,...k,...jk->...ij", vectors, jet.grad_diag, vectors)
    return MatrixJet(value=jet.value_Ft, dA=dA, eigvals=values, eigvecs=vectors)


def growth_radii(C: float, lam: ArrayLike, spec: PSpec, tol: float = 1e-8) -> np.ndarray:
    """
    Batched growth radius: for each spectrum the smallest R >= 0 with
    F(lambda_1, ..., lambda_n + R) >= C, to absolute tolerance tol.

    Requires the p-sums of the first n-1 entries to be positive. The search starts where
    every subset containing the last index has a non-negative sum, so F is monotone
    along the search ray; the returned R is the upper end of the final bracket.
    Comparisons are made on log F, so any m is safe.
    """
    arr = np.atleast_2d(_as_spectrum(lam, spec))
    sigma = arr @ spec.membership.T
    last = spec.membership[:, spec.n - 1] > 0
    free = sigma[:, ~last]
    if free.size and np.any(free <= 0):
        bad = int(np.flatnonzero(np.any(free <= 0, axis=1))[0])
        raise GrowthHypothesisError(
            f"the first n-1 entries must have positive p-sums (sample {bad}, min {free[bad].min():.3e})"
        )
    start = np.maximum(0.0, -sigma[:, last].min(axis=1))
    unit = np.zeros(spec.n)
    unit[-1] = 1.0

    log_C = math.log(C) if C > 0 else -math.inf

    def reaches(R: np.ndarray) -> np.ndarray:
        return _log_product((arr + R[:, None] * unit) @ spec.membership.T) >= log_C

    done = reaches(start)
    lo = start.copy()
    hi = start + np.maximum(1.0, np.max(np.abs(arr), axis=1))
    for _ in range(200):
        short = ~done & ~reaches(hi)
        if not np.any(short):
            break
        lo = np.where(short, hi, lo)
        hi = np.where(short, start + 2.0 * (hi - start), hi)
    else:
        raise GrowthHypothesisError(f"no radius found for C={C}")

    active = ~done & (hi - lo > tol)
    while np.any(active):
        mid = 0.5 * (lo + hi)
        reached = reaches(mid)
        hi = np.where(active & reached, mid, hi)
        lo = np.where(active & ~reached, mid, lo)
        active = ~done & (hi - lo > tol)
    return np.where(done, start, hi)


def growth_radius(C: float, lam: ArrayLike, spec: PSpec, tol: float = 1e-8) -> float:
    """Smallest R >= 0 with F(lambda_1, ..., lambda_{n-1}, lambda_n + R) >= C."""
    arr = _as_spectrum(lam, spec)
    if arr.ndim != 1:
        raise ValueError("growth_radius takes a single spectrum; use growth_radii for batches")
    return float(growth_radii(C, arr, spec, tol)[0])
