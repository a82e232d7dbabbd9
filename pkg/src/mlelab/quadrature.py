"""Adaptive quadrature over possibly infinite intervals, and series summation.

Integration is delegated to QUADPACK (``scipy.integrate.quad``); infinite
endpoints are mapped onto finite ones by its built-in transform.  The wrapper
enforces the tolerance contract of :class:`QuadratureSpec` and raises
:class:`QuadratureFailure` instead of warning.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import integrate

from .errors import QuadratureFailure


@dataclass(frozen=True)
class QuadratureSpec:
    scheme: str = "quadpack"
    abs_tol: float = 1e-11
    rel_tol: float = 1e-11
    max_subdivisions: int = 500

    def budget(self, estimate: float) -> float:
        return max(self.abs_tol, self.rel_tol * abs(estimate))


DEFAULT_SPEC = QuadratureSpec()


def integrate_interval(f: Callable[[float], float], a: float, b: float,
                       spec: QuadratureSpec = DEFAULT_SPEC) -> tuple[float, float]:
    """Integrate ``f`` over ``[a, b]``; returns ``(estimate, error_bound)``."""
    if a == b:
        return 0.0, 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        val, err, *_ = integrate.quad(
            f, a, b, epsabs=spec.abs_tol, epsrel=spec.rel_tol,
            limit=spec.max_subdivisions, full_output=1)
    if not math.isfinite(val) or not err <= spec.budget(val):
        raise QuadratureFailure(
            f"quadrature on [{a}, {b}] gave {val} +/- {err}, "
            f"tolerance {spec.budget(val):.3g}")
    return float(val), float(err)


def integrate_pieces(f: Callable[[float], float], breaks: Iterable[float],
                     spec: QuadratureSpec = DEFAULT_SPEC) -> tuple[float, float]:
    """Integrate over the consecutive intervals between sorted, deduplicated breaks.

    Each piece gets a share of the absolute tolerance so that the summed error
    bound still honours ``spec``.
    """
    pts = sorted(set(float(p) for p in breaks))
    if len(pts) < 2:
        return 0.0, 0.0
    npieces = len(pts) - 1
    piece_spec = QuadratureSpec(spec.scheme, spec.abs_tol / npieces, spec.rel_tol,
                                spec.max_subdivisions)
    total = 0.0
    err = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        v, e = integrate_interval(f, a, b, piece_spec)
        total += v
        err += e
    if err > spec.budget(total):
        raise QuadratureFailure(f"accumulated error {err} exceeds tolerance")
    return total, err


def sum_counting(term: Callable[[np.ndarray], np.ndarray],
                 mass: Callable[[np.ndarray], np.ndarray],
                 start_tail: float, spec: QuadratureSpec = DEFAULT_SPEC,
                 chunk: int = 256, max_terms: int = 10_000_000) -> float:
    """Sum ``term(k)`` over k = 0, 1, ... for a counting-measure family.

    Summation stops once past ``start_tail`` (typically the mode) and the
    probability mass of the latest chunk, and of its last term, falls below
    ``abs_tol / 10``.  ``mass(k)`` must return the pmf (or a dominating
    sequence) used for that stopping test.
    """
    total = 0.0
    k0 = 0
    tol = spec.abs_tol / 10.0
    while k0 < max_terms:
        k = np.arange(k0, k0 + chunk, dtype=float)
        vals = np.asarray(term(k), dtype=float)
        total += float(math.fsum(vals))
        pm = np.asarray(mass(k), dtype=float)
        if k[-1] > start_tail and pm.sum() < tol and pm[-1] < tol * 1e-3:
            return total
        k0 += chunk
    raise QuadratureFailure("series did not reach its tail tolerance")
