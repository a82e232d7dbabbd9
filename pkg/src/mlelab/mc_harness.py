"""Monte Carlo study of the normal approximation to the standardized MLE.

For every sample size ``n`` the harness simulates ``replications`` samples,
solves each MLE, standardizes ``sqrt(n I(theta0)) (theta_hat - theta0)`` and
compares the empirical CDF with the standard normal: the exact Kolmogorov
distance, a nonuniform profile ``z^3 sqrt(n) |F_hat(z) - Phi(z)|``, and a
log-log rate fit across ``n``.

Every replicate draws from its own stream keyed by ``(master_seed, n, index)``
so results do not depend on how replicates are split across workers.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import ndtr
from scipy.stats import linregress

from .errors import ConfigError, DegenerateFit, DomainError, PropagatedSolverFailure, RangeError
from .families import get_family
from .family_core import choose_delta, fisher_information
from .mle_engine import FAILED, LOWER, OK, UPPER, replicate_block, solve_mle_batch, wilson_interval
from .rng import child_stream

BLOCK = 2000
HARD_FAIL_LIMIT = 0.01
CONFIG_KEYS = ("family", "params", "theta0", "delta", "n_grid", "replications", "master_seed",
               "z_grid", "omega", "workers")


@dataclass
class ExperimentConfig:
    family: str
    theta0: float
    n_grid: list
    master_seed: int
    params: dict = field(default_factory=dict)
    delta: Optional[float] = None
    replications: int = 200_000
    z_grid: Optional[list] = None
    omega: float = 1.0
    workers: int = 1

    def __post_init__(self):
        self.n_grid = [int(n) for n in self.n_grid]
        self.validate()
        if self.z_grid is None:
            top = min(3.0, self.omega * math.sqrt(min(self.n_grid)))
            self.z_grid = [float(z) for z in np.geomspace(0.25, top, 40)]
        else:
            self.z_grid = [float(z) for z in self.z_grid]
            zmax = self.omega * math.sqrt(min(self.n_grid))
            if any(not 0 < z <= zmax for z in self.z_grid):
                raise ConfigError(f"z_grid must lie in (0, {zmax}]")

    def validate(self) -> None:
        if not self.n_grid or any(n < 1 for n in self.n_grid):
            raise ConfigError("n_grid must hold positive sample sizes")
        if any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
            raise ConfigError("n_grid must be strictly increasing")
        if self.replications < 100:
            raise ConfigError("replications must be at least 100")
        if not self.omega > 0:
            raise ConfigError("omega must be positive")
        if not 0 <= int(self.master_seed) < 2 ** 64:
            raise ConfigError("master_seed must be a 64-bit unsigned integer")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = set(d) - set(CONFIG_KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        missing = {"family", "theta0", "n_grid", "master_seed"} - set(d)
        if missing:
            raise ConfigError(f"missing config keys: {sorted(missing)}")
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in CONFIG_KEYS}

    def config_hash(self) -> str:
        """Hash of the canonical config, excluding ``workers`` (which never changes results)."""
        d = self.to_dict()
        d.pop("workers")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class KolmogorovReport:
    n: int
    replications: int
    d_K: float
    dkw_band: float
    nonuniform: list  # (z, |F_hat - Phi|, z^3 sqrt(n) |F_hat - Phi|)
    boundary_rate: float
    fail_rate: float
    non_good_rate: float
    values: np.ndarray = field(repr=False, default=None)  # sorted standardized values

    def to_dict(self) -> dict:
        return {"n": self.n, "replications": self.replications, "d_K": self.d_K,
                "dkw_band": self.dkw_band, "boundary_rate": self.boundary_rate,
                "fail_rate": self.fail_rate, "non_good_rate": self.non_good_rate,
                "nonuniform": [list(map(float, t)) for t in self.nonuniform]}


@dataclass
class RateFit:
    slope: float
    intercept: float
    r_squared: float
    points: list


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    delta: float
    fisher_info: float
    reports: list


# --------------------------------------------------------------------------
# empirical CDF against Phi

def dkw_band(m: int, alpha: float = 0.05) -> float:
    return math.sqrt(math.log(2.0 / alpha) / (2.0 * m))


def kolmogorov_distance(values) -> float:
    """Exact ``sup_z |F_hat(z) - Phi(z)|`` from the order statistics."""
    x = np.sort(np.asarray(values, dtype=float))
    m = x.size
    if m == 0:
        raise DomainError("no values")
    phi = ndtr(x)
    i = np.arange(1, m + 1)
    return float(max(np.max(i / m - phi), np.max(phi - (i - 1) / m)))


def ecdf(sorted_values: np.ndarray, z) -> np.ndarray:
    """Right-continuous empirical CDF of already sorted values."""
    return np.searchsorted(sorted_values, np.asarray(z, dtype=float), side="right") / sorted_values.size


def _profile(sorted_values: np.ndarray, n: int, z_grid) -> list:
    z = np.asarray(z_grid, dtype=float)
    gap = np.abs(ecdf(sorted_values, z) - ndtr(z))
    return [(float(a), float(b), float(a ** 3 * math.sqrt(n) * b)) for a, b in zip(z, gap)]


def build_report(values, n: int, z_grid, boundary: int = 0, failed: int = 0,
                 non_good: int = 0) -> KolmogorovReport:
    """Report for one sample size from its standardized values (failures already removed)."""
    v = np.sort(np.asarray(values, dtype=float))
    total = v.size + failed
    return KolmogorovReport(n=n, replications=total, d_K=kolmogorov_distance(v),
                            dkw_band=dkw_band(v.size), nonuniform=_profile(v, n, z_grid),
                            boundary_rate=boundary / total, fail_rate=failed / total,
                            non_good_rate=non_good / total, values=v)


# --------------------------------------------------------------------------
# simulation

def _simulate_block(args):
    family_id, params, theta0, delta, n, seed, start, stop = args
    family = get_family(family_id, **params)
    X = replicate_block(family, theta0, n, seed, range(start, stop))
    mle = solve_mle_batch(family, X)
    dev = np.where(mle.status == OK, mle.theta_hat - theta0,
                   np.where(mle.status == LOWER, -np.inf,
                            np.where(mle.status == UPPER, np.inf, np.nan)))
    return dev


def simulate_deviations(family_id: str, params: dict, theta0: float, delta: float, n: int,
                        replications: int, seed: int, workers: int = 1) -> np.ndarray:
    """``theta_hat - theta0`` per replicate (infinite for boundary maximizers, NaN for failures)."""
    jobs = [(family_id, params, theta0, delta, n, seed, s, min(s + BLOCK, replications))
            for s in range(0, replications, BLOCK)]
    if workers <= 1 or len(jobs) == 1:
        parts = [_simulate_block(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_simulate_block, jobs))
    return np.concatenate(parts)


def effective_workers(config_workers: int) -> int:
    env = os.environ.get("MLE_LAB_WORKERS")
    if env is None:
        return config_workers
    try:
        w = int(env)
    except ValueError:
        raise ConfigError(f"MLE_LAB_WORKERS must be an integer, got {env!r}")
    if w < 1:
        raise ConfigError("MLE_LAB_WORKERS must be >= 1")
    return w


def run_experiment(config: ExperimentConfig,
                   hook: Optional[Callable[[int, int, np.random.Generator], float]] = None
                   ) -> ExperimentResult:
    """Kolmogorov report per sample size.

    ``hook(n, index, stream)`` replaces the family simulation by directly
    returning a standardized value per replicate (used to test the CDF
    machinery against known laws).
    """
    reports = []
    if hook is not None:
        for n in config.n_grid:
            vals = np.array([hook(n, i, child_stream(config.master_seed, n, i))
                             for i in range(config.replications)], dtype=float)
            reports.append(build_report(vals, n, config.z_grid))
        return ExperimentResult(config, math.nan, math.nan, reports)

    family = get_family(config.family, **config.params)
    delta = choose_delta(family, config.theta0, config.delta)
    info = fisher_information(family, config.theta0)
    workers = effective_workers(config.workers)
    for n in config.n_grid:
        dev = simulate_deviations(config.family, config.params, config.theta0, delta, n,
                                  config.replications, config.master_seed, workers)
        failed = int(np.isnan(dev).sum())
        if failed > HARD_FAIL_LIMIT * dev.size:
            raise PropagatedSolverFailure(f"{failed} of {dev.size} MLE solves failed at n={n}")
        dev = dev[~np.isnan(dev)]
        boundary = int(np.isinf(dev).sum())
        non_good = int((np.abs(dev) > delta).sum())
        z = math.sqrt(n * info) * dev
        reports.append(build_report(z, n, config.z_grid, boundary, failed, non_good))
    return ExperimentResult(config, delta, info, reports)


# --------------------------------------------------------------------------
# summaries

def rate_fit(points: Sequence[tuple[float, float]]) -> RateFit:
    """Least-squares line through ``(ln n, ln d_K)``."""
    pts = [(float(n), float(d)) for n, d in points]
    if len(pts) < 4:
        raise DomainError("rate_fit needs at least four points")
    if any(d <= 0 for _, d in pts):
        raise DomainError("every d_K must be positive")
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    if np.all(x == x[0]):
        raise DegenerateFit("all sample sizes are equal")
    fit = linregress(x, y)
    r2 = float(fit.rvalue ** 2) if np.ptp(y) > 0 else 1.0
    return RateFit(float(fit.slope), float(fit.intercept), r2,
                   [(float(a), float(b)) for a, b in zip(x, y)])


@dataclass
class NonuniformProfile:
    n: int
    points: list  # (z, z^3 sqrt(n) |F_hat - Phi|)
    max_scaled_gap: float
    argmax_z: float


def nonuniform_profile(report: KolmogorovReport, omega: float = 1.0,
                       z_grid: Optional[Sequence[float]] = None) -> NonuniformProfile:
    """Scaled gaps ``z^3 sqrt(n) |F_hat(z) - Phi(z)|`` on ``z_grid`` within ``(0, omega sqrt(n)]``."""
    n = report.n
    if z_grid is None:
        z = np.array([t[0] for t in report.nonuniform])
    else:
        z = np.asarray(z_grid, dtype=float)
    zmax = omega * math.sqrt(n)
    if np.any(z <= 0) or np.any(z > zmax):
        raise RangeError(f"z must lie in (0, {zmax}]")
    prof = _profile(report.values, n, z)
    pts = [(a, c) for a, _, c in prof]
    j = int(np.argmax([c for _, c in pts]))
    return NonuniformProfile(n, pts, pts[j][1], pts[j][0])


@dataclass
class TailRow:
    n: int
    p_hat: float
    ci_low: float
    ci_high: float
    count: int
    replications: int


@dataclass
class TailReport:
    rows: list
    fit_slope: Optional[float] = None  # d ln P_hat / d n
    fit_intercept: Optional[float] = None


def _family_key(family) -> tuple[str, dict]:
    if isinstance(family, str):
        return family, {}
    return family.name, dict(family.params)


def tail_probability(family, theta0: float, delta: float, n_grid: Sequence[int],
                     replications: int, seed: int, workers: int = 1) -> TailReport:
    """Frequency of ``|theta_hat - theta0| > delta`` per n with Wilson 95% intervals.

    Boundary maximizers count as exceedances.  A zero count gets the one-sided
    interval ``[0, 1 - 0.05^(1/m)]``.  When every frequency is positive an
    exponential fit of ``ln P_hat`` on ``n`` is attached.
    """
    family_id, params = _family_key(family)
    rows = []
    for n in n_grid:
        dev = simulate_deviations(family_id, params, theta0, delta, int(n), replications, seed,
                                  workers)
        dev = dev[~np.isnan(dev)]
        m = dev.size
        c = int((np.abs(dev) > delta).sum())
        if c == 0:
            lo, hi = 0.0, 1.0 - 0.05 ** (1.0 / m)
        else:
            lo, hi = wilson_interval(c, m)
        rows.append(TailRow(int(n), c / m, lo, hi, c, m))
    rep = TailReport(rows)
    if len(rows) >= 2 and all(r.p_hat > 0 for r in rows):
        fit = linregress([r.n for r in rows], np.log([r.p_hat for r in rows]))
        rep.fit_slope, rep.fit_intercept = float(fit.slope), float(fit.intercept)
    return rep
