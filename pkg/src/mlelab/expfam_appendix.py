"""Location families that are also exponential families, and related checks.

* Ferguson densities ``q_{alpha,gamma}(u) = |gamma| (alpha/e)^alpha / Gamma(alpha)
  exp{-alpha (e^{gamma u} - 1 - gamma u)}`` and their normal limit as
  ``alpha -> infinity`` with ``alpha gamma^2 = 1/sigma2``.
* Whether the MLE is a fixed transform of a sample mean.
* A constructive search for two points whose 2^n mixed vertices all lie in a
  set of positive probability (a product set inside the set).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import gammaln

from .errors import DomainError, NotFound
from .family_core import FamilyDescriptor
from .mle_engine import solve_mle
from .rng import as_stream

SERIES_CUTOFF = 1e-3


@dataclass(frozen=True)
class FergusonParams:
    alpha: float
    gamma: float
    sigma2: float = 1.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise DomainError("alpha must be positive")
        if self.gamma == 0 or not math.isfinite(self.gamma):
            raise DomainError("gamma must be a nonzero real")
        if not self.sigma2 > 0:
            raise DomainError("sigma2 must be positive")

    @classmethod
    def matched(cls, alpha: float, sigma2: float = 1.0) -> "FergusonParams":
        """Parameters with ``alpha gamma^2 = 1/sigma2`` on the path to the normal limit."""
        return cls(alpha, 1.0 / math.sqrt(alpha * sigma2), sigma2)


def _expm1_minus_x(y: np.ndarray) -> np.ndarray:
    """``e^y - 1 - y`` without cancellation near zero."""
    small = np.abs(y) < SERIES_CUTOFF
    ys = np.where(small, y, 0.0)
    series = ys * ys * (0.5 + ys * (1.0 / 6.0 + ys * (1.0 / 24.0 + ys / 120.0)))
    with np.errstate(over="ignore"):
        direct = np.expm1(np.where(small, 0.0, y)) - np.where(small, 0.0, y)
    return np.where(small, series, direct)


def ferguson_log_density(params: FergusonParams, u):
    a, g = params.alpha, params.gamma
    log_norm = math.log(abs(g)) + a * (math.log(a) - 1.0) - gammaln(a)
    u = np.asarray(u, dtype=float)
    out = log_norm - a * _expm1_minus_x(g * u)
    return float(out) if out.ndim == 0 else out


def ferguson_density(params: FergusonParams, u):
    """``q_{alpha,gamma}(u)``, evaluated in log space (underflows to 0)."""
    out = np.exp(ferguson_log_density(params, u))
    return float(out) if np.ndim(out) == 0 else out


def normal_density(sigma2: float, u):
    """``q_{sigma2}``: the centred normal density with variance ``sigma2``."""
    u = np.asarray(u, dtype=float)
    out = np.exp(-0.5 * u * u / sigma2) / math.sqrt(2.0 * math.pi * sigma2)
    return float(out) if out.ndim == 0 else out


def ferguson_limit_gap(alpha: float, sigma2: float = 1.0, u_grid=None) -> float:
    """``sup_u |q_{alpha,gamma} - q_{sigma2}|`` along ``alpha gamma^2 = 1/sigma2``."""
    p = FergusonParams.matched(alpha, sigma2)
    u = np.linspace(-5.0, 5.0, 2001) if u_grid is None else np.asarray(u_grid, dtype=float)
    return float(np.max(np.abs(ferguson_density(p, u) - normal_density(sigma2, u))))


# --------------------------------------------------------------------------
# MLE as a transform of a sample mean

def linear_statistic_residual(family: FamilyDescriptor, q: Callable, g: Callable,
                              samples: Sequence) -> float:
    """``max |q(theta_hat) - mean g(x_i)|`` over the given samples."""
    worst = 0.0
    for s in samples:
        x = np.asarray(s, dtype=float)
        th = solve_mle(family, x).theta_hat
        worst = max(worst, abs(float(q(th)) - float(np.mean(g(x)))))
    return worst


# --------------------------------------------------------------------------
# product subsets

@dataclass
class ProductWitness:
    y1: np.ndarray
    y2: np.ndarray
    box: tuple  # (lower corner, upper corner)
    box_frequency: float
    evaluations: int


def mixed_vertices(y1, y2) -> np.ndarray:
    """All ``2^n`` points taking each coordinate from ``y1`` or ``y2``."""
    y1, y2 = np.asarray(y1, dtype=float), np.asarray(y2, dtype=float)
    pick = np.array(list(product((0, 1), repeat=y1.size)), dtype=bool)
    return np.where(pick, y2[None, :], y1[None, :])


def is_product_witness(set_indicator: Callable, y1, y2) -> bool:
    y1, y2 = np.asarray(y1, dtype=float), np.asarray(y2, dtype=float)
    return bool(np.all(y1 != y2) and all(set_indicator(v) for v in mixed_vertices(y1, y2)))


def _locate_box(pool, inside, threshold, min_points):
    """Breadth-first halving of the pool's bounding box until a cell is dense enough in E."""
    lo, hi = pool.min(axis=0), pool.max(axis=0)
    queue = [(lo, hi, np.arange(pool.shape[0]), 0)]
    d = pool.shape[1]
    while queue:
        lo, hi, idx, depth = queue.pop(0)
        if idx.size < min_points:
            continue
        freq = inside[idx].mean()
        if freq > threshold:
            return lo, hi, float(freq)
        j = depth % d
        mid = 0.5 * (lo[j] + hi[j])
        left = idx[pool[idx, j] <= mid]
        right = idx[pool[idx, j] > mid]
        for sub, (a, b) in ((left, (lo[j], mid)), (right, (mid, hi[j]))):
            nlo, nhi = lo.copy(), hi.copy()
            nlo[j], nhi[j] = a, b
            queue.append((nlo, nhi, sub, depth + 1))
    return None


def _draw_in_box(samplers, lo, hi, rng, max_draws=10_000):
    """One point of the product law conditioned on the box, coordinate by coordinate."""
    y = np.empty(len(samplers))
    for j, s in enumerate(samplers):
        for _ in range(max_draws // 64 + 1):
            c = np.asarray(s(rng, 64), dtype=float)
            ok = c[(c >= lo[j]) & (c <= hi[j])]
            if ok.size:
                y[j] = ok[0]
                break
        else:
            raise NotFound(f"coordinate {j} never landed in the box")
    return y


def find_product_subset(set_indicator: Callable, coordinate_samplers: Sequence[Callable],
                        target_n: int, stream=None, budget: int = 10_000,
                        pair_budget: int = 1_000, min_points: int = 32) -> ProductWitness:
    """Two points ``y1, y2`` with distinct coordinates whose mixed vertices all lie in E.

    ``coordinate_samplers[j](rng, size)`` draws the j-th coordinate.  A pool
    of ``budget`` points locates a box where E has sampled frequency above
    ``1 - 2^-n``; pairs are then drawn from the box until one qualifies.
    """
    if len(coordinate_samplers) != target_n or target_n < 1:
        raise DomainError("need one sampler per coordinate")
    rng = as_stream(stream)
    pool = np.column_stack([np.asarray(s(rng, budget), dtype=float) for s in coordinate_samplers])
    inside = np.array([bool(set_indicator(p)) for p in pool])
    if not inside.any():
        raise NotFound("the set was never hit by the localisation sample")
    found = _locate_box(pool, inside, 1.0 - 2.0 ** (-target_n), min_points)
    if found is None:
        raise NotFound("no box reached the required frequency within the budget")
    lo, hi, freq = found
    evaluations = budget
    for _ in range(pair_budget):
        y1 = _draw_in_box(coordinate_samplers, lo, hi, rng)
        y2 = _draw_in_box(coordinate_samplers, lo, hi, rng)
        evaluations += 2 ** target_n
        if is_product_witness(set_indicator, y1, y2):
            return ProductWitness(y1, y2, (lo, hi), freq, evaluations)
    raise NotFound(f"no qualifying pair in {pair_budget} attempts")
