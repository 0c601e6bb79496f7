"""MDL generalization-bound calculus.

Entropy helpers (``h_b``, ``h_D``, ``h_C``), the inverse of ``h_D`` and the
right-hand sides of the in-expectation, tail and lossy bounds.  Binary
entropies are in bits; MDL and KL values are in nats.  How the two are mixed
in :func:`thm2_rhs` is selected with ``log_base``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "RiskPair",
    "BoundSpec",
    "BoundReport",
    "h_b",
    "h_D",
    "h_C",
    "h_D_inverse",
    "thm1_bound",
    "residual_emp_diff",
    "residual_emp_diff_mc",
    "thm2_rhs",
    "thm2_gen_bound",
    "thm4_tail_rhs",
    "thm3_mdl_dist",
    "lossy_bound",
    "evaluate_bounds",
    "LOG_BASES",
]

LOG_BASES = ("mixed", "bits", "nats")
_DOMAIN_TOL = 1e-12
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_LN2 = math.log(2.0)


@dataclass(frozen=True)
class RiskPair:
    """Empirical risks on the training set and on the ghost set."""

    train_risk: float
    test_risk: float

    def __post_init__(self):
        for name in ("train_risk", "test_risk"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1], got {v!r}")

    @property
    def gen(self) -> float:
        return self.test_risk - self.train_risk


@dataclass(frozen=True)
class BoundSpec:
    """Inputs shared by the bound evaluations.

    ``mdl`` is in nats, ``tv`` is the L1 distance between the empirical label
    distributions of the training and ghost sets.
    """

    n: int
    C: int
    mdl: float = 0.0
    tv: float = 0.0
    delta: float = 1.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n!r}")
        if int(self.C) != self.C or self.C < 1:
            raise ValueError(f"C must be a positive integer, got {self.C!r}")
        if not (self.mdl >= 0.0) or not math.isfinite(self.mdl):
            raise ValueError(f"mdl must be finite and nonnegative, got {self.mdl!r}")
        if not (0.0 <= self.tv <= 2.0):
            raise ValueError(f"tv must lie in [0, 2], got {self.tv!r}")
        if not (0.0 < self.delta <= 1.0):
            raise ValueError(f"delta must lie in (0, 1], got {self.delta!r}")


@dataclass(frozen=True)
class BoundReport:
    thm1_bound: float
    thm2_rhs: float
    thm2_gen_bound: float
    residual: float
    tail_bound: float

    def to_dict(self) -> dict:
        return asdict(self)


def _check_unit(x, name="x"):
    if not (-_DOMAIN_TOL <= x <= 1.0 + _DOMAIN_TOL):
        raise ValueError(f"{name} must lie in [0, 1], got {x!r}")
    return min(max(float(x), 0.0), 1.0)


def _hb(x):
    # unchecked, vectorised; 0 log 0 = 0
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(x > 0.0, -x * np.log2(np.where(x > 0.0, x, 1.0)), 0.0)
        y = 1.0 - x
        b = np.where(y > 0.0, -y * np.log2(np.where(y > 0.0, y, 1.0)), 0.0)
    return a + b


def _hbs(x: float) -> float:
    # scalar fast path for the 1-D searches
    if x <= 0.0 or x >= 1.0:
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


def h_b(x: float) -> float:
    """Binary Shannon entropy in bits."""
    return float(_hb(_check_unit(x)))


def h_D(x1: float, x2: float) -> float:
    """``2 h_b((x1+x2)/2) - h_b(x1) - h_b(x2)``; twice the binary JS divergence."""
    x1 = _check_unit(x1, "x1")
    x2 = _check_unit(x2, "x2")
    return _hd(x1, x2)


def _hd(x1, x2):
    return max(2.0 * _hbs(0.5 * (x1 + x2)) - _hbs(x1) - _hbs(x2), 0.0)


def _hc_objective(lo, hi, e):
    return _hbs(lo + e) - _hbs(lo) + _hbs(hi - e) - _hbs(hi)


def h_C(x1: float, x2: float, eps: float, tol: float = 1e-10) -> float:
    """Largest entropy gain from moving the two risks towards each other by at most ``eps``.

    The inner maximisation over the shift is done by golden-section search
    on the feasible interval; both endpoints are also evaluated.
    """
    x1 = _check_unit(x1, "x1")
    x2 = _check_unit(x2, "x2")
    if eps < 0:
        raise ValueError(f"eps must be nonnegative, got {eps!r}")
    lo, hi = min(x1, x2), max(x1, x2)
    right = min(float(eps), 0.5 * (hi - lo))
    if right < 1e-12:
        return 0.0

    a, b = 0.0, right
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc = _hc_objective(lo, hi, c)
    fd = _hc_objective(lo, hi, d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = _hc_objective(lo, hi, c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = _hc_objective(lo, hi, d)
    best = max(
        float(_hc_objective(lo, hi, 0.5 * (a + b))),
        float(_hc_objective(lo, hi, right)),
        0.0,
    )
    return best


def h_D_inverse(y: float, x2: float, tol: float = 1e-10, max_iter: int = 200) -> float:
    """``sup{x1 in [0, 1] : h_D(x1, x2) <= y}`` by bisection on ``[x2, 1]``."""
    x2 = _check_unit(x2, "x2")
    if y < -_DOMAIN_TOL or y > 2.0 + _DOMAIN_TOL:
        raise ValueError(f"y must lie in [0, 2], got {y!r}")
    y = min(max(float(y), 0.0), 2.0)
    if _hd(1.0, x2) <= y:
        return 1.0
    lo, hi = x2, 1.0
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if _hd(mid, x2) <= y:
            lo = mid
        else:
            hi = mid
    return lo


def thm1_bound(spec: BoundSpec) -> float:
    """``sqrt((2 MDL + C + 2) / n)``."""
    return math.sqrt((2.0 * spec.mdl + spec.C + 2.0) / spec.n)


def residual_emp_diff(risks: RiskPair, tv: float) -> float:
    """Deterministic integrand of the empirical-difference residual, ``h_C(train, test; tv/2)``."""
    if not (0.0 <= tv <= 2.0):
        raise ValueError(f"tv must lie in [0, 2], got {tv!r}")
    return h_C(risks.train_risk, risks.test_risk, 0.5 * tv)


def residual_emp_diff_mc(
    risks: RiskPair,
    n: int,
    C: int,
    n_draws: int = 1000,
    seed: int = 0,
    class_probs: Sequence[float] | None = None,
) -> float:
    """Monte-Carlo residual: average the integrand over multinomial label draws.

    Only the label histograms are random here; the risks are held fixed.
    """
    rng = np.random.default_rng(seed)
    p = np.full(C, 1.0 / C) if class_probs is None else np.asarray(class_probs, float)
    a = rng.multinomial(n, p, size=n_draws) / n
    b = rng.multinomial(n, p, size=n_draws) / n
    tvs = np.abs(a - b).sum(axis=1)
    return float(np.mean([residual_emp_diff(risks, float(t)) for t in tvs]))


def thm2_rhs(spec: BoundSpec, risks: RiskPair, log_base: str = "mixed") -> float:
    """Right-hand side bounding ``E[h_D(test, train)]``.

    ``mixed`` adds the nat-valued ``(MDL + log n)/n`` to the bit-valued
    residual as written; ``bits`` converts the first part to bits; ``nats``
    converts the residual to nats (and the result is then in nats).
    """
    if spec.n < 10:
        raise ValueError(f"the h_D bound needs n >= 10, got n={spec.n}")
    if log_base not in LOG_BASES:
        raise ValueError(f"log_base must be one of {LOG_BASES}, got {log_base!r}")
    core = (spec.mdl + math.log(spec.n)) / spec.n
    res = residual_emp_diff(risks, spec.tv)
    if log_base == "bits":
        return core / _LN2 + res
    if log_base == "nats":
        return core + res * _LN2
    return core + res


def thm2_gen_bound(
    spec: BoundSpec,
    emp_risk: float,
    log_base: str = "mixed",
    max_iter: int = 100,
    tol: float = 1e-12,
) -> float:
    """Generalization-gap bound obtained by inverting ``h_D`` at the right-hand side of :func:`thm2_rhs`.

    The residual depends on the (unknown) ghost risk, so the ghost risk is
    found as the least fixed point of ``x = h_D^{-1}(rhs(emp, x) | emp)``,
    iterating upward from ``x = emp``.
    """
    emp_risk = _check_unit(emp_risk, "emp_risk")
    x = emp_risk
    for _ in range(max_iter):
        rhs = thm2_rhs(spec, RiskPair(emp_risk, x), log_base=log_base)
        if log_base == "nats":
            rhs = rhs / _LN2
        x_new = h_D_inverse(min(2.0, rhs), emp_risk)
        if abs(x_new - x) <= tol:
            x = x_new
            break
        x = x_new
    return max(x - emp_risk, 0.0)


def thm4_tail_rhs(
    spec: BoundSpec, kl: float, risks: RiskPair, log_base: str = "mixed"
) -> float:
    """High-probability counterpart of :func:`thm2_rhs` with a per-draw KL."""
    if spec.n < 10:
        raise ValueError(f"the tail bound needs n >= 10, got n={spec.n}")
    if not (0.0 < spec.delta <= 1.0):
        raise ValueError(f"delta must lie in (0, 1], got {spec.delta!r}")
    if kl < 0:
        raise ValueError(f"kl must be nonnegative, got {kl!r}")
    if log_base not in LOG_BASES:
        raise ValueError(f"log_base must be one of {LOG_BASES}, got {log_base!r}")
    core = (kl + math.log(spec.n / spec.delta)) / spec.n
    res = residual_emp_diff(risks, spec.tv)
    if log_base == "bits":
        return core / _LN2 + res
    if log_base == "nats":
        return core + res * _LN2
    return core + res


def thm3_mdl_dist(
    marginal_kls: Sequence[float], joint_term: float, n: int | None = None, C: int | None = None
):
    """Distributed MDL: sum of per-view terms minus the joint coupling term.

    Returns the raw difference.  A negative value means the inputs are
    inconsistent (the coupling term can never exceed the sum) and triggers a
    ``RuntimeWarning``.  When ``n`` and ``C`` are given, returns the pair
    ``(mdl_dist, thm1_bound)`` with the MDL clamped at zero for the bound.
    """
    kls = [float(v) for v in marginal_kls]
    if len(kls) < 1:
        raise ValueError("need at least one view")
    if any(v < 0 for v in kls) or joint_term < 0:
        raise ValueError("KL terms must be nonnegative")
    value = math.fsum(kls) - float(joint_term)
    if value < 0:
        warnings.warn(
            f"distributed MDL is negative ({value:.6g}); coupling term exceeds the marginals",
            RuntimeWarning,
            stacklevel=2,
        )
    if n is None or C is None:
        return value
    return value, thm1_bound(BoundSpec(n=n, C=C, mdl=max(value, 0.0)))


def lossy_bound(spec: BoundSpec, epsilon: float) -> float:
    """Bound of :func:`thm1_bound` for a quantized encoder plus the distortion ``epsilon``."""
    if epsilon < 0:
        raise ValueError(f"epsilon must be nonnegative, got {epsilon!r}")
    return thm1_bound(spec) + float(epsilon)


def evaluate_bounds(
    spec: BoundSpec,
    risks: RiskPair,
    kl: float | None = None,
    log_base: str = "mixed",
) -> BoundReport:
    """Evaluate every bound for one set of inputs."""
    kl = spec.mdl if kl is None else kl
    return BoundReport(
        thm1_bound=thm1_bound(spec),
        thm2_rhs=thm2_rhs(spec, risks, log_base=log_base),
        thm2_gen_bound=thm2_gen_bound(spec, risks.train_risk, log_base=log_base),
        residual=residual_emp_diff(risks, spec.tv),
        tail_bound=thm4_tail_rhs(spec, kl, risks, log_base=log_base),
    )
