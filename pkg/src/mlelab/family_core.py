"""One-parameter families: log-likelihood derivatives, envelopes, moments, sampling.

A :class:`FamilyDescriptor` bundles the vectorized callables for one family at
fixed nuisance parameters.  The module-level functions are the public
operations; they validate domains and then delegate to the descriptor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from .errors import DomainError, NonPositiveInformation, QuadratureFailure
from .quadrature import DEFAULT_SPEC, QuadratureSpec, integrate_pieces, sum_counting

ArrayFn = Callable[[np.ndarray, np.ndarray], np.ndarray]

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
ENVELOPE_GRID = 101
ENVELOPE_MARGIN = 1e-9


@dataclass(frozen=True)
class FamilyDescriptor:
    """A one-parameter family ``p_theta`` with its log-likelihood derivatives.

    ``log_density``, ``d1``, ``d2`` and ``d3`` take broadcastable arrays
    ``(x, theta)``.  ``envelope_hint(x, lo, hi)`` returns the exact supremum of
    ``|d3(x, .)|`` over ``[lo, hi]`` when the family can supply it.
    ``bulk(theta)`` is an interval holding essentially all of the mass; it is
    used to split integration domains.
    """

    name: str
    params: Mapping[str, float]
    parameter_space: tuple[float, float]
    support: tuple[float, float]
    log_density: ArrayFn = field(repr=False)
    d1: ArrayFn = field(repr=False)
    d2: ArrayFn = field(repr=False)
    d3: ArrayFn = field(repr=False)
    sampler: Callable[[float, int, np.random.Generator], np.ndarray] = field(repr=False)
    bulk: Callable[[float], tuple[float, float]] = field(repr=False)
    initial_guess: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    envelope_hint: Optional[Callable[[np.ndarray, float, float], np.ndarray]] = field(
        default=None, repr=False)
    hellinger_closed: Optional[Callable[[float, float], float]] = field(default=None, repr=False)
    discrete: bool = False
    log_concave: bool = False
    unimodal: bool = False
    location: bool = False
    scale_hint: float = 1.0

    @property
    def transform(self) -> str:
        lo, hi = self.parameter_space
        if lo == -math.inf and hi == math.inf:
            return "identity"
        if hi == math.inf:
            return "log"
        if lo == -math.inf:
            return "neglog"
        return "logit"

    def to_eta(self, theta):
        lo, hi = self.parameter_space
        t = self.transform
        theta = np.asarray(theta, dtype=float)
        if t == "identity":
            return theta
        if t == "log":
            return np.log(theta - lo)
        if t == "neglog":
            return -np.log(hi - theta)
        return np.log(theta - lo) - np.log(hi - theta)

    def from_eta(self, eta):
        lo, hi = self.parameter_space
        t = self.transform
        eta = np.asarray(eta, dtype=float)
        if t == "identity":
            return eta
        if t == "log":
            return lo + np.exp(eta)
        if t == "neglog":
            return hi - np.exp(-eta)
        return lo + (hi - lo) / (1.0 + np.exp(-eta))

    def density(self, x, theta):
        with np.errstate(under="ignore"):
            return np.exp(self.log_density(x, theta))

    def in_parameter_space(self, theta: float) -> bool:
        lo, hi = self.parameter_space
        return lo < theta < hi

    def in_support(self, x) -> np.ndarray:
        lo, hi = self.support
        x = np.asarray(x, dtype=float)
        ok = (x > lo) & (x < hi) if not self.discrete else (x >= lo) & (x < hi)
        if self.discrete:
            ok &= np.floor(x) == x
        return ok


# --------------------------------------------------------------------------
# domain checks

def _check_theta(family: FamilyDescriptor, theta: float) -> None:
    if not family.in_parameter_space(float(theta)):
        raise DomainError(f"theta={theta} outside parameter space {family.parameter_space}")


def _check_x(family: FamilyDescriptor, x) -> None:
    if not np.all(family.in_support(x)):
        raise DomainError(f"x outside support {family.support} of {family.name}")


def check_interval(family: FamilyDescriptor, theta0: float, delta: float) -> None:
    """Require ``[theta0 - delta, theta0 + delta]`` inside the open parameter space."""
    if not delta > 0:
        raise DomainError("delta must be positive")
    lo, hi = family.parameter_space
    if not (lo < theta0 - delta and theta0 + delta < hi):
        raise DomainError(
            f"[{theta0 - delta}, {theta0 + delta}] leaves the parameter space ({lo}, {hi})")


# --------------------------------------------------------------------------
# pointwise operations

def log_density(family: FamilyDescriptor, x, theta: float):
    _check_theta(family, theta)
    _check_x(family, x)
    return family.log_density(np.asarray(x, dtype=float), float(theta))


def score_derivative(family: FamilyDescriptor, x, theta: float, order: int):
    """Derivative of order 1, 2 or 3 of ``theta -> log p_theta(x)``."""
    _check_theta(family, theta)
    _check_x(family, x)
    fn = {1: family.d1, 2: family.d2, 3: family.d3}.get(order)
    if fn is None:
        raise DomainError(f"order must be 1, 2 or 3, got {order}")
    x = np.asarray(x, dtype=float)
    return fn(x, float(theta)) + np.zeros_like(x)


def _abs_d3(family: FamilyDescriptor, x, theta) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    return np.abs(family.d3(x, theta) + np.zeros(np.broadcast(x, theta).shape))


def _grid_envelope(family: FamilyDescriptor, x: np.ndarray, lo: float, hi: float,
                   npts: int = ENVELOPE_GRID, golden_iters: int = 40) -> np.ndarray:
    """Supremum of |d3(x, .)| on [lo, hi]: grid scan plus golden-section refinement."""
    x = np.asarray(x, dtype=float)
    flat = x.reshape(-1)
    grid = np.linspace(lo, hi, npts)
    out = np.empty_like(flat)
    chunk = max(1, 400_000 // npts)
    for s in range(0, flat.size, chunk):
        xs = flat[s:s + chunk]
        vals = _abs_d3(family, xs[:, None], grid[None, :])
        j = np.argmax(vals, axis=1)
        best = vals[np.arange(xs.size), j]
        a = grid[np.maximum(j - 1, 0)]
        b = grid[np.minimum(j + 1, npts - 1)]
        # golden-section search for the local maximum inside the bracketing cell
        c = b - GOLDEN * (b - a)
        d = a + GOLDEN * (b - a)
        fc = _abs_d3(family, xs, c)
        fd = _abs_d3(family, xs, d)
        for _ in range(golden_iters):
            left = fc >= fd
            b = np.where(left, d, b)
            a = np.where(left, a, c)
            c = b - GOLDEN * (b - a)
            d = a + GOLDEN * (b - a)
            fc = _abs_d3(family, xs, c)
            fd = _abs_d3(family, xs, d)
        refined = np.maximum(np.maximum(fc, fd), _abs_d3(family, xs, 0.5 * (a + b)))
        out[s:s + chunk] = np.maximum(best, refined)
    return (out * (1.0 + ENVELOPE_MARGIN)).reshape(x.shape)


def third_derivative_envelope(family: FamilyDescriptor, x, theta0: float, delta: float,
                              use_hint: bool = True):
    """``sup |d3(x, theta)|`` over ``theta`` in ``[theta0 - delta, theta0 + delta]``."""
    check_interval(family, theta0, delta)
    _check_x(family, x)
    return envelope_unchecked(family, np.asarray(x, dtype=float), theta0, delta, use_hint)


def envelope_unchecked(family: FamilyDescriptor, x: np.ndarray, theta0: float, delta: float,
                       use_hint: bool = True) -> np.ndarray:
    lo, hi = theta0 - delta, theta0 + delta
    if use_hint and family.envelope_hint is not None:
        # same relative margin as the grid path, to absorb rounding in the closed form
        return (family.envelope_hint(x, lo, hi) + np.zeros_like(x)) * (1.0 + ENVELOPE_MARGIN)
    return _grid_envelope(family, x, lo, hi)


# --------------------------------------------------------------------------
# integrals against p_theta

def support_breaks(family: FamilyDescriptor, *thetas: float) -> list[float]:
    s_lo, s_hi = family.support
    pts = [s_lo, s_hi]
    for th in thetas:
        b_lo, b_hi = family.bulk(th)
        for p in (b_lo, b_hi):
            if s_lo < p < s_hi:
                pts.append(p)
        if family.location and s_lo < th < s_hi:
            pts.append(th)
    return pts


def integrate_against(family: FamilyDescriptor, h: Callable, thetas: tuple[float, ...],
                      spec: QuadratureSpec = DEFAULT_SPEC,
                      mass: Optional[Callable] = None) -> float:
    """Integrate (or sum) the x-function ``h`` over the support of the family.

    ``thetas`` locate the regions where ``h`` lives; for counting families
    ``mass`` is the pmf sequence that governs truncation.
    """
    if family.discrete:
        if mass is None:
            raise ValueError("counting families need a mass sequence for truncation")
        tail = max(max(family.bulk(th)[1] for th in thetas), 0.0)
        return sum_counting(h, mass, tail, spec)

    def f(x):
        v = h(x)
        return 0.0 if not np.isfinite(v) else float(v)

    val, _ = integrate_pieces(f, support_breaks(family, *thetas), spec)
    return val


def expectation(family: FamilyDescriptor, theta: float, g: Callable,
                spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    """``E_theta g(X)`` by quadrature (continuous) or summation (counting measure)."""
    _check_theta(family, theta)
    theta = float(theta)

    def h(x):
        p = family.density(x, theta)
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            return np.where(p > 0, np.asarray(g(x), dtype=float) * p, 0.0)

    return integrate_against(family, h, (theta,), spec,
                             mass=lambda k: family.density(k, theta))


def fisher_information(family: FamilyDescriptor, theta: float,
                       spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    """``E_theta[score^2]`` by quadrature."""
    val = expectation(family, theta, lambda x: family.d1(x, theta) ** 2, spec)
    if not val > 0:
        raise NonPositiveInformation(f"Fisher information {val} at theta={theta}")
    return val


def _panel_expectation(family: FamilyDescriptor, theta: float, g: Callable, lo: float,
                       hi: float, rtol: float) -> float:
    """Composite Gauss-Legendre for ``int g p_theta`` on ``[lo, hi]`` with vectorized ``g``.

    Panels double until two successive estimates agree to ``rtol``.
    """
    nodes, weights = np.polynomial.legendre.leggauss(20)
    prev = None
    for panels in (32, 64, 128, 256, 512, 1024, 2048, 4096):
        edges = np.linspace(lo, hi, panels + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        x = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
        with np.errstate(all="ignore"):
            p = family.density(x, theta)
            vals = np.where(p > 0, g(x) * p, 0.0)
        est = float(np.sum(vals.reshape(panels, -1) * weights[None, :] * half[:, None]))
        if prev is not None and abs(est - prev) <= rtol * max(abs(est), 1e-300):
            return est
        prev = est
    raise QuadratureFailure(f"panel rule did not settle on [{lo}, {hi}]")


def expected_envelope(family: FamilyDescriptor, theta0: float, delta: float,
                      spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    """``E R*`` where ``R*`` is the third-derivative envelope on the delta-interval.

    The envelope is only piecewise smooth in ``x``, so the tolerance is 1e-7
    (1e-6 for the panel rule).
    Without a closed-form envelope the bulk of the distribution is covered by
    a vectorized panel rule and the tails by adaptive quadrature.
    """
    check_interval(family, theta0, delta)
    loose = QuadratureSpec(spec.scheme, max(spec.abs_tol, 1e-7), max(spec.rel_tol, 1e-7),
                           spec.max_subdivisions)

    def g(x):
        x = np.asarray(x, dtype=float)
        return envelope_unchecked(family, np.atleast_1d(x), theta0, delta).reshape(x.shape)

    if family.discrete or family.envelope_hint is not None:
        return expectation(family, theta0, g, loose)
    s_lo, s_hi = family.support
    b_lo, b_hi = family.bulk(theta0)
    b_lo, b_hi = max(b_lo, s_lo), min(b_hi, s_hi)
    total = _panel_expectation(family, theta0, g, b_lo, b_hi, max(loose.rel_tol, 1e-6))

    def tail(x):
        p = family.density(x, theta0)
        return float(g(x) * p) if p > 0 else 0.0

    for a, b in ((s_lo, b_lo), (b_hi, s_hi)):
        if a < b:
            total += integrate_pieces(tail, [a, b], loose)[0]
    return total


def choose_delta(family: FamilyDescriptor, theta0: float, delta: Optional[float] = None,
                 spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    """Validate ``delta`` (or pick the default) so that ``E(U - delta R*) > 0``.

    The default starts from a quarter of the distance to the nearest boundary
    of the parameter space (0.5 on the whole line) and halves until the
    expected curvature dominates the envelope term.
    """
    _check_theta(family, theta0)
    info = fisher_information(family, theta0, spec)
    if delta is not None:
        check_interval(family, theta0, delta)
        if not info - delta * expected_envelope(family, theta0, delta, spec) > 0:
            raise DomainError(f"E(U - delta R*) <= 0 for delta={delta}")
        return float(delta)
    lo, hi = family.parameter_space
    room = min(theta0 - lo, hi - theta0)
    d = 0.5 * family.scale_hint if math.isinf(room) else room / 4.0
    for _ in range(30):
        if info - d * expected_envelope(family, theta0, d, spec) > 0:
            return d
        d /= 2.0
    raise DomainError(f"no delta makes E(U - delta R*) positive at theta0={theta0}")


# --------------------------------------------------------------------------
# sampling

def draw_sample(family: FamilyDescriptor, theta: float, n: int,
                stream: np.random.Generator) -> np.ndarray:
    """``n`` i.i.d. draws from ``p_theta``; deterministic given the stream state."""
    _check_theta(family, theta)
    if n < 1:
        raise DomainError("n must be >= 1")
    return np.asarray(family.sampler(float(theta), n, stream), dtype=float)


# --------------------------------------------------------------------------
# numerical self-checks

@dataclass
class CheckResult:
    name: str
    value: float
    tolerance: float
    passed: bool


def _fd(g: Callable, theta: float, h: float) -> float:
    """Five-point central difference."""
    return (-g(theta + 2 * h) + 8 * g(theta + h) - 8 * g(theta - h) + g(theta - 2 * h)) / (12 * h)


def derivative_mismatch(family: FamilyDescriptor, x: float, theta: float) -> float:
    """Worst relative gap between d1, d2, d3 and differences of the next lower order.

    ``d1`` is compared with a difference of ``log_density``, ``d2`` with one of
    ``d1`` and ``d3`` with one of ``d2``; gaps are relative to
    ``max(|analytic|, 1e-3)``.
    """
    lo, hi = family.parameter_space
    h = 1e-3 * max(1.0, abs(theta))
    h = min(h, (theta - lo) / 4.0, (hi - theta) / 4.0)
    chain = [family.log_density, family.d1, family.d2, family.d3]
    worst = 0.0
    for k in range(1, 4):
        fd = _fd(lambda t: float(chain[k - 1](x, t)), theta, h)
        exact = float(chain[k](x, theta))
        worst = max(worst, abs(exact - fd) / max(abs(exact), 1e-3))
    return worst


def identity_checks(family: FamilyDescriptor, theta0: float, delta: float, seed: int = 0,
                    probes: int = 50, taus: int = 20,
                    spec: QuadratureSpec = DEFAULT_SPEC) -> list[CheckResult]:
    """Normalization, score mean, information identity, derivative and envelope checks at theta0."""
    check_interval(family, theta0, delta)
    out = []
    one = expectation(family, theta0, lambda x: np.ones_like(np.asarray(x, dtype=float)), spec)
    out.append(CheckResult("normalization", abs(one - 1.0), 1e-7, abs(one - 1.0) <= 1e-7))
    score = expectation(family, theta0, lambda x: family.d1(x, theta0), spec)
    out.append(CheckResult("score_mean", abs(score), 1e-6, abs(score) <= 1e-6))
    info = fisher_information(family, theta0, spec)
    curv = expectation(family, theta0, lambda x: family.d2(x, theta0), spec)
    gap = abs(info + curv)
    out.append(CheckResult("information_identity", gap, 1e-5 * info, gap <= 1e-5 * info))

    rng = np.random.default_rng(seed)
    thetas = rng.uniform(theta0 - delta, theta0 + delta, probes)
    xs = np.array([family.sampler(float(t), 1, rng)[0] for t in thetas])
    worst = max(derivative_mismatch(family, float(x), float(t)) for x, t in zip(xs, thetas))
    out.append(CheckResult("derivative_consistency", worst, 1e-5, worst <= 1e-5))

    env = envelope_unchecked(family, xs, theta0, delta)
    tau = rng.uniform(theta0 - delta, theta0 + delta, taus)
    d3 = _abs_d3(family, xs[:, None], tau[None, :])
    excess = float(np.max(d3 - env[:, None]))
    out.append(CheckResult("envelope_dominance", excess, 0.0, excess <= 0.0))
    return out
