"""Smooth-function representation of the bracketing statistics.

With ``V = (Z, U - E U, R* - E R*)`` the statistics ``T-`` and ``T+`` are
``f-(V_bar)`` and ``f+(V_bar)`` for two explicit functions on R^3 whose
common linear part is ``x1 / E U``.  This module evaluates them, selects a
ball around the origin on which they are well defined and estimates the
ray-restricted second-derivative constant ``M*``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from .errors import DomainError, NonFinite
from .family_core import FamilyDescriptor, choose_delta, expected_envelope, fisher_information

EPS_MARGIN = 1.1
NOISE_ULPS = 16.0


def _sign(sign: Union[str, int]) -> int:
    if sign in ("+", 1, "plus"):
        return 1
    if sign in ("-", -1, "minus"):
        return -1
    raise DomainError(f"sign must be '+' or '-', got {sign!r}")


def _sphere_grid26() -> np.ndarray:
    pts = np.array([(i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)
                    if (i, j, k) != (0, 0, 0)], dtype=float)
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def fibonacci_sphere(m: int) -> np.ndarray:
    """``m`` nearly uniform unit vectors in R^3."""
    i = np.arange(m) + 0.5
    z = 1.0 - 2.0 * i / m
    r = np.sqrt(1.0 - z * z)
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def _domain_slack(e_u: float, e_rstar: float, x: np.ndarray, margin: float = 1.0) -> np.ndarray:
    """Positive exactly where x lies in D (with the quadratic inequality scaled by ``margin``)."""
    a = x[..., 1] + e_u
    q = a * a - margin * 2.0 * np.abs(x[..., 0]) * np.abs(x[..., 2] + e_rstar)
    return np.where(a > 0, q, -np.inf)


def select_epsilon(e_u: float, e_rstar: float) -> float:
    """Largest ``2^-k`` radius whose 26-point sphere grid sits in D with a 10% margin."""
    dirs = _sphere_grid26()
    eps = 1.0
    for _ in range(60):
        x = eps * dirs
        if np.all(_domain_slack(e_u, e_rstar, x, EPS_MARGIN) > 0) and np.all(x[:, 1] + e_u > 0):
            return eps
        eps /= 2.0
    raise DomainError("no radius keeps the sphere grid inside D")


def ball_inside_domain(e_u: float, e_rstar: float, epsilon: float, directions: int = 2000,
                       radii: int = 25) -> bool:
    """Dense check of the closed epsilon-ball against D on a Fibonacci sphere times radii."""
    dirs = fibonacci_sphere(directions)
    r = np.linspace(epsilon / radii, epsilon, radii)
    x = r[:, None, None] * dirs[None, :, :]
    return bool(np.all(_domain_slack(e_u, e_rstar, x) > 0))


@dataclass(frozen=True)
class DeltaContext:
    """Constants fixing ``f+``, ``f-`` and their linear part."""

    e_u: float
    e_rstar: float
    epsilon: float
    sigma_tilde: float

    def __post_init__(self):
        if not self.e_u > 0:
            raise DomainError("E U must be positive")
        if not self.e_rstar >= 0:
            raise DomainError("E R* must be non-negative")
        if not self.epsilon > 0:
            raise DomainError("epsilon must be positive")
        if not ball_inside_domain(self.e_u, self.e_rstar, self.epsilon, directions=400, radii=10):
            raise DomainError(f"the {self.epsilon}-ball is not inside D")

    @classmethod
    def build(cls, e_u: float, e_rstar: float, epsilon: Optional[float] = None) -> "DeltaContext":
        eps = select_epsilon(e_u, e_rstar) if epsilon is None else epsilon
        return cls(float(e_u), float(e_rstar), float(eps), 1.0 / math.sqrt(e_u))

    @classmethod
    def from_family(cls, family: FamilyDescriptor, theta0: float,
                    delta: Optional[float] = None) -> "DeltaContext":
        """Context at ``theta0`` with ``E U = I(theta0)`` and ``E R*`` by quadrature."""
        d = choose_delta(family, theta0, delta)
        return cls.build(fisher_information(family, theta0), expected_envelope(family, theta0, d))

    def in_domain(self, x) -> np.ndarray:
        return _domain_slack(self.e_u, self.e_rstar, np.asarray(x, dtype=float)) > 0


def f_pm(ctx: DeltaContext, sign, x):
    """``f+`` or ``f-`` at ``x`` (last axis of length 3); zero outside D."""
    s = _sign(sign)
    x = np.asarray(x, dtype=float)
    a = x[..., 1] + ctx.e_u
    c = 2.0 * np.abs(x[..., 0]) * np.abs(x[..., 2] + ctx.e_rstar)
    inside = _domain_slack(ctx.e_u, ctx.e_rstar, x) > 0
    disc = np.where(inside, a * a - s * c, 1.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        val = 2.0 * x[..., 0] / (a + np.sqrt(disc))
    out = np.where(inside, val, 0.0)
    return float(out) if out.ndim == 0 else out


def linear_part(ctx: DeltaContext, x):
    """Common derivative of ``f+`` and ``f-`` at the origin applied to ``x``."""
    x = np.asarray(x, dtype=float)
    out = x[..., 0] / ctx.e_u
    return float(out) if np.ndim(out) == 0 else out


def standardize(ctx: DeltaContext, theta_dev, n: int):
    """``sqrt(n I(theta0)) * theta_dev``."""
    if n < 1:
        raise DomainError("n must be >= 1")
    scale = math.sqrt(n * ctx.e_u)
    if np.ndim(theta_dev):
        return scale * np.asarray(theta_dev, dtype=float)
    return scale * float(theta_dev)


def quadratic_root(ctx: DeltaContext, x, r):
    """``2 x1 / (a + sqrt(a^2 - 2 x1 r))`` with ``a = x2 + E U``: the near root for a given curvature ``r``."""
    x = np.asarray(x, dtype=float)
    a = x[..., 1] + ctx.e_u
    with np.errstate(invalid="ignore"):
        return 2.0 * x[..., 0] / (a + np.sqrt(a * a - 2.0 * x[..., 0] * r))


# --------------------------------------------------------------------------
# second-derivative constant along rays

def ray_directions(d: int, count: int, seed: int = 0) -> np.ndarray:
    """Unit directions: ``+-1`` on the line, scrambled Sobol points pushed to the sphere otherwise."""
    if d == 1:
        return np.array([[1.0], [-1.0]])
    m = int(2 ** math.ceil(math.log2(max(count, 2))))
    u = qmc.Sobol(d, scramble=True, seed=seed).random(m)[:count]
    g = ndtri(np.clip(u, 1e-12, 1 - 1e-12))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def _ray_second(f: Callable, x: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Central second difference of ``t -> f(x + t x)`` at 0.

    Also returns the stencil magnitude and the first-difference slope per unit
    length, from which the caller builds a rounding-noise floor.
    """
    f0 = np.asarray(f(x), dtype=float)
    fp = np.asarray(f(x * (1.0 + h)), dtype=float)
    fm = np.asarray(f(x * (1.0 - h)), dtype=float)
    if not (np.all(np.isfinite(f0)) and np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
        raise NonFinite("f is not finite inside the ball")
    norm = np.linalg.norm(x, axis=1)
    mag = np.abs(fp) + 2.0 * np.abs(f0) + np.abs(fm)
    return (fp - 2.0 * f0 + fm) / (h * h), mag, np.abs(fp - fm) / (2.0 * h * norm)


def estimate_m_star(f: Callable, epsilon: float, directions: int = 256, d: int = 3,
                    radii: int = 40, step: float = 1e-4, seed: int = 0) -> float:
    """Sup over sampled points ``0 < |x| <= epsilon`` of ``|d^2/dt^2 f(x + t x)| / |x|^2``.

    ``f`` takes an array of points (last axis ``d``) and returns one value per
    point.  The ray derivative is a central difference with step ``step |x|``
    extrapolated once (Richardson), on a geometric radius grid from
    ``1e-3 epsilon`` to ``epsilon``.  Differences below the rounding-noise
    floor of their stencil count as zero.
    """
    if not epsilon > 0:
        raise DomainError("epsilon must be positive")
    dirs = ray_directions(d, directions, seed)
    r = np.geomspace(epsilon * 1e-3, epsilon, radii)
    x = (r[:, None, None] * dirs[None, :, :]).reshape(-1, d)
    d_h, mag_h, slope = _ray_second(f, x, step)
    d_h2, mag_h2, _ = _ray_second(f, x, step / 2.0)
    second = (4.0 * d_h2 - d_h) / 3.0
    # rounding in f scales with its terms, not its value: bound them by |f| + |grad f| |x|
    grad = float(np.max(slope))
    norm = np.sqrt(np.sum(x * x, axis=1))
    ulp = NOISE_ULPS * np.finfo(float).eps
    n_h = ulp * (mag_h + 4.0 * grad * norm) / step ** 2
    n_h2 = ulp * (mag_h2 + 4.0 * grad * norm) / (step / 2.0) ** 2
    floor = (4.0 * n_h2 + n_h) / 3.0
    second = np.where(np.abs(second) <= floor, 0.0, second)
    norm2 = np.sum(x * x, axis=1)
    return float(np.max(np.abs(second) / norm2))


def lipschitz_estimate(f: Callable, radius: float, d: int = 3, probes: int = 2000,
                       seed: int = 0) -> float:
    """Largest difference quotient over random pairs in the ``radius``-ball."""
    rng = np.random.default_rng(seed)

    def ball(m):
        g = rng.standard_normal((m, d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        return g * radius * rng.random((m, 1)) ** (1.0 / d)

    a, b = ball(probes), ball(probes)
    fa, fb = np.asarray(f(a)), np.asarray(f(b))
    if not (np.all(np.isfinite(fa)) and np.all(np.isfinite(fb))):
        raise NonFinite("f is not finite inside the ball")
    return float(np.max(np.abs(fa - fb) / np.linalg.norm(a - b, axis=1)))
