"""Maximum likelihood solver, bracketing statistics and good/bad event classification.

For a sample and a reference value ``theta0`` the quadratic expansion of the
score equation around ``theta0`` traps ``theta_hat - theta0`` between two
computable statistics ``T-`` and ``T+`` built from the sample means of the
score, the negated second derivative and the third-derivative envelope.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DomainError, NonConvergence
from .family_core import FamilyDescriptor, _check_x, check_interval, envelope_unchecked
from .rng import child_stream

SCAN_POINTS = 64
MAX_ITER = 200
SCORE_RTOL = 1e-10
B1_RTOL = 1e-8

OK, LOWER, UPPER, FAILED = 0, 1, 2, 3


@dataclass
class MleResult:
    """Outcome of :func:`solve_mle`.

    When the likelihood supremum is only approached at an end of the
    parameter space, ``boundary`` is ``"lower"`` or ``"upper"``, ``theta_hat``
    holds that endpoint of the closure (possibly infinite) and ``converged``
    is false.
    """

    theta_hat: float
    converged: bool
    iterations: int
    log_likelihood_at_hat: float
    multiroot: bool = False
    boundary: Optional[str] = None


@dataclass
class BracketStats:
    z_bar: float
    u_bar: float
    rstar_bar: float
    t_minus: Optional[float]
    t_plus: Optional[float]
    in_good_event: bool
    in_B1: bool
    in_B2: bool
    discriminant_minus: float
    theta_dev: float  # theta_hat - theta0, infinite for boundary maximizers

    @property
    def brackets(self) -> bool:
        """Whether the replicate lies in G minus B with positive curvature."""
        return self.in_good_event and not self.in_B1 and not self.in_B2 and self.u_bar > 0


# --------------------------------------------------------------------------
# likelihood evaluation helpers

def _loglik(family, x, theta):
    with np.errstate(all="ignore"):
        return float(np.sum(family.log_density(x, theta)))


def _score(family, x, theta):
    return float(np.sum(family.d1(x, theta) + np.zeros_like(x)))


def _dscore(family, x, theta):
    return float(np.sum(family.d2(x, theta) + np.zeros_like(x)))


def _loglik_grid(family, x, grid):
    with np.errstate(all="ignore"):
        v = family.log_density(x[None, :], grid[:, None]) + np.zeros((grid.size, x.size))
    return np.sum(v, axis=1)


def _score_grid(family, x, grid):
    return np.sum(family.d1(x[None, :], grid[:, None]) + np.zeros((grid.size, x.size)), axis=1)


def _scan_window(family: FamilyDescriptor, x: np.ndarray) -> np.ndarray:
    if family.location:
        med = float(np.median(x))
        q75, q25 = np.percentile(x, [75, 25])
        spread = max(float(q75 - q25), 1e-3)
        lo = max(float(x.min()), med - 20.0 * spread) - 1.0
        hi = min(float(x.max()), med + 20.0 * spread) + 1.0
        return np.linspace(lo, hi, SCAN_POINTS)
    g = float(np.asarray(family.initial_guess(x)))
    lo, hi = family.parameter_space
    if not (lo < g < hi) or not math.isfinite(g):
        g = float(family.from_eta(0.0))
    eta = float(family.to_eta(g))
    return family.from_eta(np.linspace(eta - 10.0, eta + 10.0, SCAN_POINTS))


def _polish(family, x, a, b, tol, start=None, max_iter=MAX_ITER):
    """Safeguarded Newton for a root of the total score in (a, b).

    Requires score(a) > 0 >= score(b).  Returns ``(theta, iterations)``.
    """
    t = 0.5 * (a + b) if start is None or not a < start < b else start
    for it in range(1, max_iter + 1):
        s = _score(family, x, t)
        if abs(s) <= tol:
            # one more Newton step, kept only if it improves the score
            ds = _dscore(family, x, t)
            if ds < 0:
                nt = t - s / ds
                if a <= nt <= b and abs(_score(family, x, nt)) < abs(s):
                    t = nt
            return t, it
        if s > 0:
            a = t
        else:
            b = t
        if b - a <= 4.0 * np.spacing(max(abs(a), abs(b))):
            return t, it
        ds = _dscore(family, x, t)
        nt = t - s / ds if ds < 0 else math.nan
        t = nt if a < nt < b else 0.5 * (a + b)
    raise NonConvergence(f"score still {s:.3g} after {max_iter} iterations")


def _extend_to_boundary(family, x, theta_edge, direction):
    """Walk from the scan edge towards the end of the parameter space.

    Returns ``(cell, last_theta)``: ``cell`` is a sign-change bracket if the
    score turns around, otherwise None.
    """
    eta = float(family.to_eta(theta_edge))
    prev = theta_edge
    for k in range(12):
        cand = float(family.from_eta(eta + direction * 2.0 ** k))
        if not family.in_parameter_space(cand) or not math.isfinite(cand) or cand == prev:
            break
        s = _score(family, x, cand)
        if (direction < 0 and s > 0) or (direction > 0 and s <= 0):
            return ((cand, prev) if direction < 0 else (prev, cand)), cand
        prev = cand
    return None, prev


def solve_mle(family: FamilyDescriptor, sample) -> MleResult:
    """Global maximizer of the sample log-likelihood.

    A 64-point scan over a parameter window (plus a second scan around the
    best grid cell) locates every score sign change; each is polished by
    safeguarded Newton and the root with the largest log-likelihood wins.
    """
    x = np.asarray(sample, dtype=float).ravel()
    if x.size == 0:
        raise DomainError("empty sample")
    _check_x(family, x)

    grid = _scan_window(family, x)
    ll = _loglik_grid(family, x, grid)
    sc = _score_grid(family, x, grid)
    j = int(np.nanargmax(ll))
    tol = SCORE_RTOL * (1.0 + abs(sc[j]))

    cells = []
    fine = np.linspace(grid[max(j - 1, 0)], grid[min(j + 1, grid.size - 1)], SCAN_POINTS)
    fine_sc = _score_grid(family, x, fine)
    for g, s in ((grid, sc), (fine, fine_sc)):
        idx = np.nonzero((s[:-1] > 0) & (s[1:] <= 0))[0]
        cells.extend((g[i], g[i + 1]) for i in idx)

    boundary = None
    boundary_ll = -math.inf
    for edge, direction, name in ((0, -1, "lower"), (grid.size - 1, 1, "upper")):
        if j != edge or (direction < 0 and sc[edge] > 0) or (direction > 0 and sc[edge] <= 0):
            continue
        cell, last = _extend_to_boundary(family, x, grid[edge], direction)
        if cell is not None:
            cells.append(cell)
        else:
            boundary, boundary_ll = name, _loglik(family, x, last)

    roots = []
    total_iter = 0
    for a, b in cells:
        t, it = _polish(family, x, a, b, tol)
        total_iter += it
        roots.append((t, _loglik(family, x, t)))
    distinct = []
    for t, v in sorted(roots):
        if not distinct or abs(t - distinct[-1][0]) > 1e-7 * (1.0 + abs(t)):
            distinct.append((t, v))

    if distinct:
        t_best, ll_best = max(distinct, key=lambda r: r[1])
        if boundary is None or ll_best >= boundary_ll:
            return MleResult(t_best, True, total_iter, ll_best, multiroot=len(distinct) > 1)
    if boundary is not None:
        lo, hi = family.parameter_space
        return MleResult(lo if boundary == "lower" else hi, False, total_iter, boundary_ll,
                         multiroot=len(distinct) > 0, boundary=boundary)
    raise NonConvergence("no score sign change found in the scan window")


# --------------------------------------------------------------------------
# vectorized solver for unimodal likelihoods

@dataclass
class BatchMle:
    theta_hat: np.ndarray
    status: np.ndarray  # OK, LOWER, UPPER or FAILED per row
    iterations: int


def _row_score(family, X, t):
    return np.sum(family.d1(X, t[:, None]) + np.zeros_like(X), axis=1)


def _row_dscore(family, X, t):
    return np.sum(family.d2(X, t[:, None]) + np.zeros_like(X), axis=1)


def _solve_unimodal_batch(family: FamilyDescriptor, X: np.ndarray) -> BatchMle:
    R = X.shape[0]
    lo_space, hi_space = family.parameter_space
    start = np.asarray(family.initial_guess(X), dtype=float).reshape(R)
    bad = ~((start > lo_space) & (start < hi_space) & np.isfinite(start))
    start = np.where(bad, float(family.from_eta(0.0)), start)

    s0 = _row_score(family, X, start)
    tol = SCORE_RTOL * (1.0 + np.abs(s0))
    status = np.full(R, OK)
    theta = start.copy()
    lo = start.copy()
    hi = start.copy()
    done = np.abs(s0) <= tol

    # expand a bracket outward from the starting point in the unconstrained coordinate
    unit = np.std(X, axis=1) + 1.0 if family.transform == "identity" else np.ones(R)
    eta0 = family.to_eta(start)
    up = (s0 > 0) & ~done
    down = (s0 < 0) & ~done
    searching_up, searching_down = up.copy(), down.copy()
    for k in range(12):
        step = 0.25 * 2.0 ** k * unit
        for mask, sgn in ((searching_up, 1.0), (searching_down, -1.0)):
            rows = np.nonzero(mask)[0]
            if rows.size == 0:
                continue
            with np.errstate(over="ignore"):
                cand = family.from_eta(eta0[rows] + sgn * step[rows])
            valid = (cand > lo_space) & (cand < hi_space) & np.isfinite(cand)
            s = np.full(rows.size, np.nan)
            if valid.any():
                s[valid] = _row_score(family, X[rows[valid]], cand[valid])
            flipped = valid & ((s <= 0) if sgn > 0 else (s >= 0))
            cont = valid & ~flipped
            if sgn > 0:
                hi[rows[flipped]] = cand[flipped]
                lo[rows[cont]] = cand[cont]
            else:
                lo[rows[flipped]] = cand[flipped]
                hi[rows[cont]] = cand[cont]
            mask[rows[flipped | ~valid]] = False
            ran_out = rows[~valid]
            status[ran_out] = UPPER if sgn > 0 else LOWER
    status[searching_up] = UPPER
    status[searching_down] = LOWER
    done |= status != OK

    active = np.nonzero(~done)[0]
    iters = 0
    while active.size and iters < MAX_ITER:
        iters += 1
        t = theta[active]
        Xa = X[active]
        s = _row_score(family, Xa, t)
        conv = np.abs(s) <= tol[active]
        pos = s > 0
        lo[active] = np.where(pos & ~conv, t, lo[active])
        hi[active] = np.where(~pos & ~conv, t, hi[active])
        a, b = lo[active], hi[active]
        conv |= (b - a) <= 4.0 * np.spacing(np.maximum(np.abs(a), np.abs(b)))
        ds = _row_dscore(family, Xa, t)
        with np.errstate(divide="ignore", invalid="ignore"):
            nt = t - s / ds
        use_newton = (ds < 0) & (nt > a) & (nt < b)
        theta[active] = np.where(conv, t, np.where(use_newton, nt, 0.5 * (a + b)))
        active = active[~conv]
    status[active] = FAILED
    theta = np.where(status == LOWER, lo_space, np.where(status == UPPER, hi_space, theta))
    return BatchMle(theta, status, iters)


def solve_mle_batch(family: FamilyDescriptor, X) -> BatchMle:
    """MLE for each row of ``X``.

    Unimodal families use a vectorized bracketed Newton iteration; the rest go
    through :func:`solve_mle` row by row.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if family.unimodal:
        return _solve_unimodal_batch(family, X)
    theta = np.empty(X.shape[0])
    status = np.full(X.shape[0], OK)
    iters = 0
    for i, row in enumerate(X):
        try:
            r = solve_mle(family, row)
        except NonConvergence:
            theta[i], status[i] = math.nan, FAILED
            continue
        theta[i] = r.theta_hat
        iters = max(iters, r.iterations)
        if r.boundary is not None:
            status[i] = LOWER if r.boundary == "lower" else UPPER
    return BatchMle(theta, status, iters)


# --------------------------------------------------------------------------
# bracketing statistics

def bracket_from_aggregates(z_bar, u_bar, rstar_bar):
    """T- and T+ from the sample aggregates (NaN where undefined).

    Returns ``(t_minus, t_plus, discriminant_minus)`` with the discriminant
    ``u^2 - 2|z| r*`` that governs T+.
    """
    z = np.asarray(z_bar, dtype=float)
    u = np.asarray(u_bar, dtype=float)
    r = np.asarray(rstar_bar, dtype=float)
    disc_plus = u * u + 2.0 * np.abs(z) * r
    disc_minus = u * u - 2.0 * np.abs(z) * r
    with np.errstate(divide="ignore", invalid="ignore"):
        t_minus = np.where(u > 0, 2.0 * z / (u + np.sqrt(disc_plus)), np.nan)
        t_plus = np.where((u > 0) & (disc_minus >= 0),
                          2.0 * z / (u + np.sqrt(np.maximum(disc_minus, 0.0))), np.nan)
    return t_minus, t_plus, disc_minus


def implied_third_mean(z_bar, u_bar, t):
    """The mean third derivative at the intermediate point, recovered from the solution.

    The exact expansion ``0 = z - t u + t^2 r / 2`` fixes ``r`` once the root
    ``t = theta_hat - theta0`` is known.
    """
    z, u, t = (np.asarray(a, dtype=float) for a in (z_bar, u_bar, t))
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(t != 0, 2.0 * (t * u - z) / (t * t), 0.0)


def classify_b1(z_bar, u_bar, t):
    """B1: the solution is the far root ``d+`` of the quadratic, or ``u <= 0``."""
    z, u, t = (np.asarray(a, dtype=float) for a in (z_bar, u_bar, t))
    r = implied_third_mean(z, u, t)
    finite = np.isfinite(t)
    with np.errstate(divide="ignore", invalid="ignore"):
        d_plus = (u + np.sqrt(np.maximum(u * u - 2.0 * z * r, 0.0))) / r
        far = (r != 0) & finite & (np.abs(t - d_plus) <= B1_RTOL * (1.0 + np.abs(d_plus)))
    return far | (u <= 0)


def bracket_arrays(family: FamilyDescriptor, X: np.ndarray, theta0: float, delta: float,
                   theta_hat: np.ndarray, status: np.ndarray) -> dict:
    """Row-wise bracketing statistics for a block of samples."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    z = np.mean(family.d1(X, theta0) + np.zeros_like(X), axis=1)
    u = -np.mean(family.d2(X, theta0) + np.zeros_like(X), axis=1)
    r = np.mean(envelope_unchecked(family, X, theta0, delta), axis=1)
    t_minus, t_plus, disc = bracket_from_aggregates(z, u, r)
    dev = np.where(status == OK, theta_hat - theta0,
                   np.where(status == LOWER, -np.inf, np.where(status == UPPER, np.inf, np.nan)))
    good = (status == OK) & (np.abs(dev) <= delta)
    b1 = classify_b1(z, u, dev)
    b2 = u * u <= 2.0 * np.abs(z) * r
    return dict(z_bar=z, u_bar=u, rstar_bar=r, t_minus=t_minus, t_plus=t_plus,
                discriminant_minus=disc, theta_dev=dev, in_G=good, in_B1=b1, in_B2=b2)


def bracket_stats(family: FamilyDescriptor, sample, theta0: float, delta: float) -> BracketStats:
    check_interval(family, theta0, delta)
    x = np.asarray(sample, dtype=float).ravel()
    res = solve_mle(family, x)
    status = np.array([OK if res.boundary is None else
                       (LOWER if res.boundary == "lower" else UPPER)])
    a = bracket_arrays(family, x[None, :], theta0, delta, np.array([res.theta_hat]), status)

    def opt(v):
        v = float(v[0])
        return None if math.isnan(v) else v

    return BracketStats(
        z_bar=float(a["z_bar"][0]), u_bar=float(a["u_bar"][0]),
        rstar_bar=float(a["rstar_bar"][0]),
        t_minus=opt(a["t_minus"]), t_plus=opt(a["t_plus"]),
        in_good_event=bool(a["in_G"][0]), in_B1=bool(a["in_B1"][0]),
        in_B2=bool(a["in_B2"][0]), discriminant_minus=float(a["discriminant_minus"][0]),
        theta_dev=float(a["theta_dev"][0]),
    )


def bracket_violations(a: dict, atol: float = 1e-9) -> np.ndarray:
    """Rows in G minus B (with positive curvature) where theta_hat escapes [T-, T+].

    For negative ``z_bar`` the two statistics swap order, so the bracket is
    taken as ``[min(T-, T+), max(T-, T+)]``.
    """
    ok = a["in_G"] & ~a["in_B1"] & ~a["in_B2"] & (a["u_bar"] > 0)
    lo = np.fmin(a["t_minus"], a["t_plus"])
    hi = np.fmax(a["t_minus"], a["t_plus"])
    dev = a["theta_dev"]
    return ok & ~((lo - atol <= dev) & (dev <= hi + atol))


# --------------------------------------------------------------------------
# event frequencies

def wilson_interval(count: int, total: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if total <= 0:
        return 0.0, 1.0
    p = count / total
    den = 1.0 + z * z / total
    centre = (p + z * z / (2 * total)) / den
    half = z * math.sqrt(p * (1 - p) / total + z * z / (4 * total * total)) / den
    lo = 0.0 if count == 0 else max(0.0, centre - half)
    hi = 1.0 if count == total else min(1.0, centre + half)
    return lo, hi


def replicate_block(family: FamilyDescriptor, theta: float, n: int, seed: int,
                    indices) -> np.ndarray:
    """Samples for the given replicate indices, each from its own keyed stream."""
    rows = [family.sampler(theta, n, child_stream(seed, n, int(i))) for i in indices]
    return np.asarray(rows, dtype=float).reshape(len(rows), n)


def simulate_brackets(family: FamilyDescriptor, theta0: float, delta: float, n: int,
                      replications: int, seed: int, block: int = 2000) -> dict:
    """Concatenated :func:`bracket_arrays` over ``replications`` seeded replicates."""
    check_interval(family, theta0, delta)
    parts = []
    for s in range(0, replications, block):
        X = replicate_block(family, theta0, n, seed, range(s, min(s + block, replications)))
        mle = solve_mle_batch(family, X)
        a = bracket_arrays(family, X, theta0, delta, mle.theta_hat, mle.status)
        a["status"] = mle.status
        parts.append(a)
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}


def event_rates(family: FamilyDescriptor, theta0: float, delta: float, n: int,
                replications: int, seed: int) -> dict:
    """Monte Carlo frequencies of G, G and B, and B2 with Wilson 95% intervals."""
    if replications < 1:
        raise DomainError("replications must be >= 1")
    a = simulate_brackets(family, theta0, delta, n, replications, seed)
    g = a["in_G"]
    gb = g & (a["in_B1"] | a["in_B2"])
    out = {}
    for key, mask in (("G", g), ("G_and_B", gb), ("B2", a["in_B2"])):
        c = int(mask.sum())
        out[key] = (c / replications, *wilson_interval(c, replications))
    out["violations"] = int(bracket_violations(a).sum())
    return out
