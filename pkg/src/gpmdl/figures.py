"""Tables behind the bound figures: residual integrand, h_C curves, bound comparison."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .bounds import BoundSpec, RiskPair, h_C, residual_emp_diff, thm1_bound, thm2_gen_bound


def default_tv(n: int, C: int) -> float:
    """``sqrt(C / n)``, the order of the label-histogram distance between two splits."""
    return math.sqrt(C / n)


def residual_table(emp_risk: float, gen_errors: Sequence[float], tv: float) -> np.ndarray:
    """Rows ``(gen_error, residual)`` with ghost risk ``emp_risk + gen_error``.

    Grid points that push the ghost risk above 1 are dropped.
    """
    rows = []
    for g in gen_errors:
        test = emp_risk + float(g)
        if test > 1.0:
            continue
        rows.append((float(g), residual_emp_diff(RiskPair(emp_risk, test), tv)))
    return np.asarray(rows, dtype=float).reshape(-1, 2)


def hc_table(pairs: Sequence[Sequence[float]], eps_grid: Sequence[float]) -> np.ndarray:
    """Rows ``(eps, h_C(pair_0, eps), h_C(pair_1, eps), ...)``."""
    return np.asarray(
        [[float(e)] + [h_C(a, b, float(e)) for a, b in pairs] for e in eps_grid], dtype=float
    ).reshape(-1, 1 + len(pairs))


def bound_curves(
    n: int,
    C: int,
    emp_risks: Sequence[float],
    mdl_over_n: Sequence[float],
    tv: float,
    log_base: str = "mixed",
) -> np.ndarray:
    """Rows ``(mdl/n, thm1, thm2_gen(emp_0), thm2_gen(emp_1), ...)``."""
    rows = []
    for r in mdl_over_n:
        spec = BoundSpec(n=n, C=C, mdl=float(r) * n, tv=tv)
        rows.append([float(r), thm1_bound(spec)] + [thm2_gen_bound(spec, e, log_base) for e in emp_risks])
    return np.asarray(rows, dtype=float).reshape(-1, 2 + len(emp_risks))


def crossover(
    n: int,
    C: int,
    emp_risk: float,
    tv: float,
    log_base: str = "mixed",
    hi: float = 0.5,
    grid: int = 201,
) -> float:
    """Smallest ``mdl/n`` beyond which ``thm2_gen_bound`` stays below ``thm1_bound`` on ``[0, hi]``.

    A grid locates the last sign change of ``thm2 - thm1``; Brent's method
    refines it.  Returns 0 when the gap bound is already tighter at ``mdl = 0`` and
    ``inf`` when it is never tighter at ``hi``.
    """

    def diff(r):
        spec = BoundSpec(n=n, C=C, mdl=r * n, tv=tv)
        return thm2_gen_bound(spec, emp_risk, log_base) - thm1_bound(spec)

    xs = np.linspace(0.0, hi, grid)
    vals = np.array([diff(x) for x in xs])
    if vals[-1] >= 0:
        return math.inf
    above = np.flatnonzero(vals >= 0)
    if above.size == 0:
        return 0.0
    i = above[-1]
    return float(brentq(diff, xs[i], xs[i + 1], xtol=1e-12))
