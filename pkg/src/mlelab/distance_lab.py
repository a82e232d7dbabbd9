"""Hellinger distance, affinity and the distinguishability conditions built on them.

``H(theta, theta0) = int (sqrt p_theta - sqrt p_theta0)^2`` lies in [0, 2] and
the affinity ``J = 1 - H/2 = int sqrt(p_theta p_theta0)``.  Conditions checked
here on finite grids:

* (B)  ``I(theta) <= c1 + c2 |theta - theta0|^alpha``
* (D0) ``H(theta, theta0) / (theta - theta0)^2`` bounded below near theta0
* (D1) ``J(theta, theta0) |theta - theta0|^gamma`` bounded far from theta0
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError, InsufficientGrid, NoClosedForm
from .families import example62_mean_var
from .family_core import (FamilyDescriptor, _check_theta, fisher_information,
                          integrate_against)
from .quadrature import DEFAULT_SPEC, QuadratureSpec


@dataclass
class HellingerReport:
    theta: float
    theta0: float
    h_closed: Optional[float]
    h_quad: float
    affinity_j: float
    abs_gap: float


@dataclass
class ConditionVerdict:
    condition: str  # "B", "D0" or "D1"
    holds_on_grid: bool
    witness_constants: dict
    grid: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = [float(t) for t in self.grid]
        return d


# --------------------------------------------------------------------------
# distance and affinity

def hellinger_closed(family: FamilyDescriptor, theta: float, theta0: float) -> float:
    """Closed-form squared Hellinger distance for the families that have one."""
    if family.hellinger_closed is None:
        raise NoClosedForm(f"no closed-form Hellinger distance for {family.name}")
    _check_theta(family, theta)
    _check_theta(family, theta0)
    return float(family.hellinger_closed(float(theta), float(theta0)))


def _pair_integral(family, theta, theta0, kind, spec):
    _check_theta(family, theta)
    _check_theta(family, theta0)
    theta, theta0 = float(theta), float(theta0)

    def h(x):
        with np.errstate(all="ignore"):
            a = family.log_density(x, theta)
            b = family.log_density(x, theta0)
            if kind == "affinity":
                v = np.exp(0.5 * (a + b))
            else:
                v = (np.exp(0.5 * a) - np.exp(0.5 * b)) ** 2
        return np.where(np.isfinite(v), v, 0.0)

    def mass(k):
        return family.density(k, theta) + family.density(k, theta0)

    return integrate_against(family, h, (theta, theta0), spec, mass=mass)


def hellinger_quadrature(family: FamilyDescriptor, theta: float, theta0: float,
                         spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    """``int (sqrt p_theta - sqrt p_theta0)^2`` by quadrature or summation."""
    return min(max(_pair_integral(family, theta, theta0, "distance", spec), 0.0), 2.0)


def affinity_quadrature(family: FamilyDescriptor, theta: float, theta0: float,
                        spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    """``int sqrt(p_theta p_theta0)`` integrated directly."""
    return min(max(_pair_integral(family, theta, theta0, "affinity", spec), 0.0), 1.0)


def hellinger(family: FamilyDescriptor, theta: float, theta0: float,
              spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    """Closed form when available, quadrature otherwise."""
    if family.hellinger_closed is not None:
        return hellinger_closed(family, theta, theta0)
    return hellinger_quadrature(family, theta, theta0, spec)


def affinity(family: FamilyDescriptor, theta: float, theta0: float,
             spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    if family.hellinger_closed is not None:
        return 1.0 - 0.5 * hellinger_closed(family, theta, theta0)
    return affinity_quadrature(family, theta, theta0, spec)


def hellinger_report(family: FamilyDescriptor, theta: float, theta0: float,
                     spec: QuadratureSpec = DEFAULT_SPEC) -> HellingerReport:
    hq = hellinger_quadrature(family, theta, theta0, spec)
    hc = hellinger_closed(family, theta, theta0) if family.hellinger_closed is not None else None
    h = hc if hc is not None else hq
    return HellingerReport(float(theta), float(theta0), hc, hq, 1.0 - 0.5 * h,
                           abs(hc - hq) if hc is not None else 0.0)


# --------------------------------------------------------------------------
# conditions

def default_neighborhood(family: FamilyDescriptor, theta0: float) -> tuple[float, float]:
    """``theta0 +- 2``, shrunk to 90% of the room left by the parameter space."""
    lo, hi = family.parameter_space
    r = min(2.0, 0.9 * (theta0 - lo), 0.9 * (hi - theta0))
    return theta0 - r, theta0 + r


def _d0_inf(family, theta0, lo, hi, grid_size, spec):
    grid = np.linspace(lo, hi, grid_size)
    grid = grid[np.abs(grid - theta0) >= 1e-3]
    if grid.size == 0:
        raise InsufficientGrid("punctured grid is empty")
    ratios = np.array([hellinger(family, t, theta0, spec) / (t - theta0) ** 2 for t in grid])
    j = int(np.argmin(ratios))
    return float(ratios[j]), float(grid[j]), grid


def check_D0(family: FamilyDescriptor, theta0: float,
             neighborhood: Optional[tuple[float, float]] = None, grid_size: int = 101,
             spec: QuadratureSpec = DEFAULT_SPEC) -> ConditionVerdict:
    """Infimum of ``H / (theta - theta0)^2`` over a grid punctured at radius 1e-3.

    Holds when the infimum is positive on the grid and on its doubling, and
    the doubled-grid infimum has not dropped below half the original.
    """
    if grid_size < 2:
        raise InsufficientGrid("check_D0 needs at least two grid points")
    lo, hi = default_neighborhood(family, theta0) if neighborhood is None else neighborhood
    if not lo < theta0 < hi:
        raise DomainError("theta0 must be interior to the neighborhood")
    inf1, arg1, grid = _d0_inf(family, theta0, lo, hi, grid_size, spec)
    inf2, arg2, _ = _d0_inf(family, theta0, lo, hi, 2 * grid_size, spec)
    holds = inf1 > 0 and inf2 > 0 and inf2 >= 0.5 * inf1
    return ConditionVerdict("D0", bool(holds),
                            {"ratio_inf": inf1, "ratio_inf_doubled": inf2, "argmin": arg2,
                             "neighborhood": [lo, hi]}, list(grid))


def default_far_grid(family: FamilyDescriptor, theta0: float, points: int = 60) -> np.ndarray:
    """Log-spaced offsets from one scale unit to 1e4 scale units on every unbounded side.

    A bounded side contributes offsets between half and 0.999 of its room.
    """
    lo, hi = family.parameter_space
    s = family.scale_hint
    out = []
    for room, sgn in ((hi - theta0, 1.0), (theta0 - lo, -1.0)):
        if math.isinf(room):
            out.append(theta0 + sgn * np.geomspace(s, 1e4 * s, points))
        else:
            out.append(theta0 + sgn * room * np.linspace(0.5, 0.999, points // 4))
    return np.sort(np.concatenate(out))


def check_D1(family: FamilyDescriptor, theta0: float, gamma: float,
             far_grid: Optional[Sequence[float]] = None,
             spec: QuadratureSpec = DEFAULT_SPEC) -> ConditionVerdict:
    """Supremum of ``J(theta, theta0) |theta - theta0|^gamma`` over a far grid.

    A finite grid cannot certify an asymptotic bound, so "holds" means the
    running supremum grows by at most 1% over the outermost decade of
    distances.  On a bounded parameter space with the default grid the
    product is bounded by ``diam^gamma`` and the verdict is immediate.
    """
    if not gamma > 0:
        raise DomainError("gamma must be positive")
    lo, hi = family.parameter_space
    bounded = far_grid is None and math.isfinite(lo) and math.isfinite(hi)
    grid = np.asarray(default_far_grid(family, theta0) if far_grid is None else far_grid, float)
    dist = np.abs(grid - theta0)
    if grid.size < 2 or np.any(dist == 0):
        raise InsufficientGrid("far grid needs two or more points away from theta0")
    vals = np.array([affinity(family, t, theta0, spec) for t in grid]) * dist ** gamma
    if bounded:
        # J <= 1 and the distance is bounded, so the product is bounded outright
        return ConditionVerdict("D1", True,
                                {"gamma": gamma, "sup": float(vals.max()), "bounded_space": True,
                                 "witness_theta": float(grid[int(np.argmax(vals))])}, list(grid))
    inner = dist <= dist.max() / 10.0
    if not inner.any():
        raise InsufficientGrid("far grid must span at least one decade of distances")
    sup_all = float(vals.max())
    sup_inner = float(vals[inner].max())
    holds = sup_all <= 1.01 * sup_inner
    witness = float(grid[int(np.argmax(vals))])
    return ConditionVerdict("D1", bool(holds),
                            {"gamma": gamma, "sup": sup_all, "sup_inner": sup_inner,
                             "witness_theta": witness}, list(grid))


def check_B(family: FamilyDescriptor, theta0: float, c1: float, c2: float, alpha: float,
            grid: Sequence[float], spec: QuadratureSpec = DEFAULT_SPEC) -> ConditionVerdict:
    """Checks ``I(theta) <= c1 + c2 |theta - theta0|^alpha`` at each grid point."""
    if not (c1 > 0 and c2 > 0 and alpha > 0):
        raise DomainError("c1, c2 and alpha must be positive")
    grid = [float(t) for t in grid]
    worst, witness = -math.inf, None
    for t in grid:
        excess = fisher_information(family, t, spec) - (c1 + c2 * abs(t - theta0) ** alpha)
        if excess > worst:
            worst, witness = excess, t
    return ConditionVerdict("B", bool(worst <= 0),
                            {"c1": c1, "c2": c2, "alpha": alpha, "max_excess": worst,
                             "witness_theta": witness}, grid)


def gamma_alpha(alpha: float) -> float:
    """Affinity decay exponent ``min(alpha/2, alpha - 1)`` for location families with tail exponent alpha."""
    if not alpha > 1:
        raise DomainError("alpha must exceed 1")
    return min(alpha / 2.0, alpha - 1.0)


# --------------------------------------------------------------------------
# exponential remainder for log-concave likelihoods

def lambda_bound(family: FamilyDescriptor, theta0: float, h: float,
                 spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    """``E_theta0 sqrt(p_{theta0+h} / p_theta0)``, the affinity at shift ``h``."""
    if not family.log_concave:
        raise DomainError(f"{family.name} is not declared log-concave in theta")
    _check_theta(family, theta0 + h)
    if h == 0:
        return 1.0
    return affinity_quadrature(family, theta0 + h, theta0, spec)


def remainder_envelope(lambda_plus: float, lambda_minus: float, n: int) -> float:
    """``2 max(lambda+, lambda-)^n``, a bound on ``P(|theta_hat - theta0| > delta)``."""
    for lam in (lambda_plus, lambda_minus):
        if not 0.0 <= lam < 1.0:
            raise DomainError(f"lambda must lie in [0, 1), got {lam}")
    return 2.0 * max(lambda_plus, lambda_minus) ** n


def affinity_example62(theta: float, theta0: float = 0.0) -> float:
    """Affinity between two members of the drifting normal family.

    For normals ``J = sqrt(2 s s0 / (s^2 + s0^2)) exp(-(m - m0)^2 / (4 (s^2 + s0^2)))``;
    at ``theta0 = 0`` this is ``sqrt(2 s/(s^2+1)) exp(-m^2/(4 s^2 + 4))``.
    """
    for t in (theta, theta0):
        if not t > -1.0:
            raise DomainError("theta must exceed -1")
    m, v = example62_mean_var(theta)
    m0, v0 = example62_mean_var(theta0)
    s, s0 = math.sqrt(float(v)), math.sqrt(float(v0))
    tot = float(v) + float(v0)
    return math.sqrt(2.0 * s * s0 / tot) * math.exp(-(float(m) - float(m0)) ** 2 / (4.0 * tot))
