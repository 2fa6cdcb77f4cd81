"""Nonasymptotic confidence intervals for the average treatment effect.

Constructions provided:

* ``hoeff_mbcr_ci``: Hoeffding-style interval around the grouped estimator,
  whose width constant depends only on the batching arithmetic and collapses
  to ``1/sqrt(pi)`` when the groups tile the sample exactly.
* ``sub_bernoulli_ci``: intervals built from the two-point (sub-Bernoulli)
  cumulant generating function, under either Bernoulli randomization or the
  grouped design.
* ``studentized_ci``: a cross-fit variance-adaptive interval; each half of
  the groups tunes the exponential-bound parameter used on the other half.
* ``naive_hoeffding_ci``: the classical bounded-range Hoeffding interval
  whose effective sample size degrades with the squared propensity, kept as
  the comparison baseline.
* ``clt_ci``: a plug-in normal interval, asymptotic only, excluded from all
  coverage guarantees.

Every builder records the constants it used in a ``tuning`` mapping, and
``reevaluate`` reproduces the endpoints from that record alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Any

import numpy as np
from scipy.stats import norm

from .design import SCHEME_BERNOULLI, SCHEME_MBCR, MbcrLayout
from .estimator import (
    VARIANT_MIRRORED,
    VARIANT_STANDARD,
    ObservedData,
    groupwise_sums,
    pseudo_outcome,
)

METHOD_HOEFF_MBCR = "hoeff-mbcr"
METHOD_SUB_BERNOULLI_BERN = "sub-bernoulli-bern"
METHOD_SUB_BERNOULLI_MBCR = "sub-bernoulli-mbcr"
METHOD_STUDENTIZED = "studentized"
METHOD_NAIVE_HOEFFDING = "naive-hoeffding"
METHOD_CLT = "clt"

METHODS = (
    METHOD_HOEFF_MBCR,
    METHOD_SUB_BERNOULLI_BERN,
    METHOD_SUB_BERNOULLI_MBCR,
    METHOD_STUDENTIZED,
    METHOD_NAIVE_HOEFFDING,
    METHOD_CLT,
)

# Tuning rule for the grouped sub-Bernoulli lambda: "cgf" matches the CGF's
# own quadratic coefficient 4*T*g^2 + 4*tail^2 (the variance-matched
# optimizer, and the default); "subgaussian" reuses the coarser T*g^2 proxy.
# Both give valid intervals since the underlying bound holds for every
# lambda, but only "cgf" attains the sharp small-propensity width scaling.
LAMBDA_CGF = "cgf"
LAMBDA_SUBGAUSSIAN = "subgaussian"

# Scale constant for the Studentized interval.  "range" (default) sets
# c = 1/(1 - p) + 1 with p the within-group propensity, the magnitude of the
# one-sided range of a centered pseudo-outcome, which is what the
# exponential-bound inequality requires after rescaling.  "alternate" sets
# c = 1/(1 - g) + 1 with g the group size itself; it is provided for
# comparison but is anomalous (nonpositive for groups of two) and is
# rejected whenever it does not yield a positive scale.
C_RANGE = "range"
C_ALTERNATE = "alternate"


class IntervalError(ValueError):
    """Inputs incompatible with an interval construction."""


def _check_alpha(alpha: float) -> float:
    if not (0.0 < alpha < 1.0):
        raise IntervalError(f"alpha must lie in (0, 1), got {alpha}")
    return float(alpha)


@dataclass(frozen=True)
class Interval:
    """A two-sided confidence interval plus the constants that built it."""

    lower: float
    upper: float
    alpha: float
    method: str
    tuning: dict[str, Any]

    def __post_init__(self) -> None:
        if not self.lower <= self.upper:
            raise IntervalError(f"empty interval [{self.lower}, {self.upper}]")

    @property
    def half_width(self) -> float:
        return (self.upper - self.lower) / 2.0

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper

    def clipped(self, lo: float = -1.0, hi: float = 1.0) -> "Interval":
        """Intersect with the estimand's natural range [-1, 1]."""
        tuning = dict(self.tuning)
        tuning["clipped"] = (lo, hi)
        return replace(
            self,
            lower=min(max(self.lower, lo), hi),
            upper=min(max(self.upper, lo), hi),
            tuning=tuning,
        )


def log_half_cosh2(x: float) -> float:
    """log(exp(-x)/2 + exp(x)/2) = log cosh x, stable for large |x|."""
    ax = abs(float(x))
    return ax + math.log1p(math.exp(-2.0 * ax)) - math.log(2.0)


def gamma_b(lam: float, a: float, b: float) -> float:
    """Two-point cumulant generating function for a centered range [a, b].

    Equals ``log(b/(b-a) * e^{lam*a} - a/(b-a) * e^{lam*b})``, evaluated in
    log-sum-exp form.  Zero at ``lam = 0``; for small ``lam`` it behaves as
    ``(-a*b) * lam^2 / 2``.
    """
    a, b = float(a), float(b)
    if not a < 0.0 < b:
        raise IntervalError(f"need a < 0 < b, got a={a}, b={b}")
    if lam == 0.0:
        # the two-point weights sum to one, so the value is log(1) exactly
        return 0.0
    span = b - a
    return float(
        np.logaddexp(math.log(b / span) + lam * a, math.log(-a / span) + lam * b)
    )


def gamma_e(lam: float, c: float) -> float:
    """One-sided sub-exponential CGF-like function ``(-log(1-c*lam)-c*lam)/c^2``.

    Defined for ``0 <= lam < 1/c`` with ``c > 0``; nonnegative, increasing,
    and asymptotically ``lam^2/2`` as ``lam -> 0``.
    """
    c = float(c)
    lam = float(lam)
    if c <= 0.0:
        raise IntervalError(f"scale c must be positive, got {c}")
    if lam < 0.0 or lam >= 1.0 / c:
        raise IntervalError(f"lambda {lam} outside [0, 1/c) for c={c}")
    return (-math.log1p(-c * lam) - c * lam) / (c * c)


# ---------------------------------------------------------------------------
# Hoeffding-style interval under the grouped design


def _hoeff_mbcr_constant(n: int, full: int, g: int, tail: int) -> float:
    return math.sqrt((full * g * g + tail * tail) / n)


def _hoeff_mbcr_halfwidth(n: int, full: int, g: int, tail: int, alpha: float) -> float:
    cn = _hoeff_mbcr_constant(n, full, g, tail)
    return cn * math.sqrt(2.0 * math.log(2.0 / alpha) / n)


def hoeff_mbcr_ci(psi_hat: float, layout: MbcrLayout, alpha: float) -> Interval:
    """Hoeffding-style interval around the grouped estimator.

    Half-width is ``c_n * sqrt(2 log(2/alpha) / n)`` with
    ``c_n = sqrt((T g^2 + tail^2) / n)``; with no tail group this is exactly
    ``sqrt(2 log(2/alpha) / (n pi))``.
    """
    alpha = _check_alpha(alpha)
    half = _hoeff_mbcr_halfwidth(
        layout.n, layout.num_full_groups, layout.group_size, layout.tail_size, alpha
    )
    tuning = {
        "psi_hat": float(psi_hat),
        "n": layout.n,
        "num_full_groups": layout.num_full_groups,
        "group_size": layout.group_size,
        "tail_size": layout.tail_size,
        "cn": _hoeff_mbcr_constant(
            layout.n, layout.num_full_groups, layout.group_size, layout.tail_size
        ),
        "half_width": half,
    }
    return Interval(
        lower=psi_hat - half,
        upper=psi_hat + half,
        alpha=alpha,
        method=METHOD_HOEFF_MBCR,
        tuning=tuning,
    )


def cn_mbcr_bounds(layout: MbcrLayout) -> tuple[float, int]:
    """Propensity-only value or upper bound for the grouped width constant.

    Returns ``(bound, tail_treated)``: the exact ``1/sqrt(pi)`` when the
    groups tile the sample, ``(1 + pi)/sqrt(pi)`` with one spilled treated
    unit, and ``sqrt((1+pi)^2/pi + 2 (1/pi + 1)^2 / n)`` with two.  The bound
    always dominates the exact constant.
    """
    pi = float(layout.pi)
    if layout.tail_treated == 0:
        return 1.0 / math.sqrt(pi), 0
    if layout.tail_treated == 1:
        return (1.0 + pi) / math.sqrt(pi), 1
    bound = math.sqrt(
        (1.0 + pi) ** 2 / pi + 2.0 * (1.0 / pi + 1.0) ** 2 / layout.n
    )
    return bound, 2


# ---------------------------------------------------------------------------
# Sub-Bernoulli intervals


def _sb_bern_range(pi: float) -> tuple[float, float]:
    return -1.0 / (1.0 - pi) - 1.0, 1.0 / pi + 1.0


def _sb_bern_lambda(n: int, pi: float, alpha: float) -> float:
    scale = n * (1.0 / (1.0 - pi) + 1.0) * (1.0 / pi + 1.0)
    return math.sqrt(2.0 * math.log(2.0 / alpha) / scale)


def _sb_bern_halfwidth(n: int, pi: float, alpha: float, lam: float) -> float:
    a, b = _sb_bern_range(pi)
    kappa = n * gamma_b(lam, a, b)
    return (math.log(2.0 / alpha) + kappa) / (n * lam)


def _sb_mbcr_lambda(
    full: int, g: int, tail: int, alpha: float, lambda_rule: str
) -> float:
    log2a = 2.0 * math.log(2.0 / alpha)
    if lambda_rule == LAMBDA_CGF:
        return math.sqrt(log2a / (4.0 * full * g * g + 4.0 * tail * tail))
    if lambda_rule == LAMBDA_SUBGAUSSIAN:
        return math.sqrt(log2a / (full * g * g))
    raise IntervalError(f"unknown lambda rule {lambda_rule!r}")


def _sb_mbcr_halfwidth(
    n: int, full: int, g: int, tail: int, alpha: float, lam: float
) -> float:
    kappa = full * log_half_cosh2(2.0 * g * lam)
    if tail > 0:
        kappa += log_half_cosh2(2.0 * tail * lam)
    return (math.log(2.0 / alpha) + kappa) / (n * lam)


def sub_bernoulli_ci(
    psi_hat: float,
    alpha: float,
    *,
    scheme: str,
    n: int | None = None,
    pi: float | None = None,
    layout: MbcrLayout | None = None,
    lambda_rule: str = LAMBDA_CGF,
) -> Interval:
    """Sub-Bernoulli interval ``psi_hat +/- (log(2/alpha) + kappa)/(n lam)``.

    Under Bernoulli randomization the centered pseudo-outcome range is
    ``[-1/(1-pi) - 1, 1/pi + 1]``, ``kappa = n * gamma_b(lam)``, and ``lam``
    matches the CGF's quadratic coefficient.  Under the grouped design the
    centered group sums have range ``+/- 2g`` (``+/- 2 tail`` for the tail
    group), ``kappa`` is the per-group log-cosh total, and ``lam`` follows
    ``lambda_rule``.
    """
    alpha = _check_alpha(alpha)
    if scheme == SCHEME_BERNOULLI:
        if n is None or pi is None:
            raise IntervalError("Bernoulli form needs n and pi")
        if not (0.0 < pi <= 0.5):
            raise IntervalError(f"propensity {pi} outside (0, 1/2]")
        lam = _sb_bern_lambda(n, pi, alpha)
        half = _sb_bern_halfwidth(n, pi, alpha, lam)
        a, b = _sb_bern_range(pi)
        tuning = {
            "psi_hat": float(psi_hat),
            "n": int(n),
            "pi": float(pi),
            "lam": lam,
            "range_lo": a,
            "range_hi": b,
            "kappa": n * gamma_b(lam, a, b),
            "half_width": half,
        }
        method = METHOD_SUB_BERNOULLI_BERN
    elif scheme == SCHEME_MBCR:
        if layout is None:
            raise IntervalError("grouped form needs the layout")
        lam = _sb_mbcr_lambda(
            layout.num_full_groups,
            layout.group_size,
            layout.tail_size,
            alpha,
            lambda_rule,
        )
        half = _sb_mbcr_halfwidth(
            layout.n,
            layout.num_full_groups,
            layout.group_size,
            layout.tail_size,
            alpha,
            lam,
        )
        tuning = {
            "psi_hat": float(psi_hat),
            "n": layout.n,
            "num_full_groups": layout.num_full_groups,
            "group_size": layout.group_size,
            "tail_size": layout.tail_size,
            "lambda_rule": lambda_rule,
            "lam": lam,
            "half_width": half,
        }
        method = METHOD_SUB_BERNOULLI_MBCR
    else:
        raise IntervalError(f"no sub-Bernoulli form for scheme {scheme!r}")
    return Interval(
        lower=psi_hat - half,
        upper=psi_hat + half,
        alpha=alpha,
        method=method,
        tuning=tuning,
    )


# ---------------------------------------------------------------------------
# Cross-fit Studentized interval


def studentized_scale(data: ObservedData, c_variant: str = C_RANGE) -> float:
    """Scale constant c used by the Studentized interval's CGF.

    The default "range" rule uses ``1/(1 - p) + 1`` where ``p`` is the
    within-group propensity (the marginal propensity under Bernoulli
    randomization), taking the larger value over the full and tail groups.
    See the module notes on ``C_ALTERNATE`` for the comparison variant.
    """
    asg = data.assignment
    if asg.scheme == SCHEME_BERNOULLI:
        props = [asg.pi]
        sizes = [1.0 / asg.pi]
    elif asg.scheme == SCHEME_MBCR and asg.mbcr is not None:
        lay = asg.mbcr.layout
        props = [1.0 / lay.group_size]
        sizes = [float(lay.group_size)]
        if lay.tail_size > 0:
            props.append(lay.tail_treated / lay.tail_size)
            sizes.append(lay.tail_size / lay.tail_treated)
    else:
        raise IntervalError(
            "Studentized interval needs Bernoulli data or a grouped draw "
            "with permutation detail"
        )
    if c_variant == C_RANGE:
        c = max(1.0 / (1.0 - p) + 1.0 for p in props)
    elif c_variant == C_ALTERNATE:
        c = max(1.0 / (1.0 - s) + 1.0 for s in sizes)
    else:
        raise IntervalError(f"unknown c variant {c_variant!r}")
    if c <= 0.0:
        raise IntervalError(
            f"scale variant {c_variant!r} yields nonpositive c={c}; use the "
            "default range-based scale"
        )
    return c


def _split_statistics(theta: np.ndarray) -> tuple[int, int, float, float]:
    """Cross-seeded running-mean sums of squares for the two group splits.

    Split one holds the first ``floor(T/2)`` group sums.  Its running mean
    at step t starts from the full total of the opposite split and then
    folds in this split's first ``t - 1`` values; the returned V is the sum
    of squared deviations of each value from its running mean.
    """
    tbar = theta.shape[0]
    m1 = tbar // 2
    m2 = tbar - m1
    s1, s2 = theta[:m1], theta[m1:]
    tot1, tot2 = float(s1.sum()), float(s2.sum())
    prefix1 = np.concatenate(([0.0], np.cumsum(s1[:-1])))
    mu1 = (tot2 + prefix1) / (m2 + np.arange(m1))
    v1 = float(((s1 - mu1) ** 2).sum())
    prefix2 = np.concatenate(([0.0], np.cumsum(s2[:-1])))
    mu2 = (tot1 + prefix2) / (m1 + np.arange(m2))
    v2 = float(((s2 - mu2) ** 2).sum())
    return m1, m2, v1, v2


def _stud_lambda(v: float, alpha: float, c: float) -> float:
    """min(sqrt(2 log(2/alpha) / V), 1/(2c)); the cap alone when V = 0."""
    cap = 1.0 / (2.0 * c)
    if v <= 0.0:
        return cap
    return min(math.sqrt(2.0 * math.log(2.0 / alpha) / v), cap)


def _stud_penalty(lam: float, v: float, n: int, alpha: float, c: float) -> float:
    return (gamma_e(lam, c) * v + math.log(2.0 / alpha)) / (n * lam)


def studentized_ci(
    data: ObservedData, alpha: float, c_variant: str = C_RANGE
) -> Interval:
    """Cross-fit Studentized variance-adaptive interval.

    The group sums are split in half; each split's empirical variance tunes
    the exponential-bound parameter applied to the other split.  The lower
    endpoint is anchored at the standard pseudo-outcome mean and the upper
    endpoint at the mirrored one.  With parameter ``alpha`` the resulting
    two-sided interval has coverage at least ``1 - 2 alpha`` (each side is a
    one-sided ``1 - alpha`` bound and the two are union bounded).

    Note on the scale constant: this implementation uses
    ``c = 1/(1 - p) + 1`` per group (the one-sided range of a centered
    standard pseudo-outcome at within-group propensity ``p``), which is what
    the exponential-bound inequality requires after rescaling by ``c``.  The
    alternate form ``1/(1 - g) + 1`` written in terms of the raw group size
    ``g`` is selectable via ``c_variant`` for comparison but is degenerate
    for small groups.
    """
    alpha = _check_alpha(alpha)
    th_l = groupwise_sums(data, VARIANT_STANDARD)
    th_u = groupwise_sums(data, VARIANT_MIRRORED)
    tbar = th_l.shape[0]
    if tbar < 4:
        raise IntervalError(
            f"insufficient groups for cross-fitting: need at least 4, got {tbar}"
        )
    c = studentized_scale(data, c_variant)
    n = data.n
    m1, m2 = tbar // 2, tbar - tbar // 2
    sides: dict[str, dict[str, float]] = {}
    for tag, theta in (("l", th_l), ("u", th_u)):
        _, _, v1, v2 = _split_statistics(theta)
        lam1 = _stud_lambda(v1, alpha, c)
        lam2 = _stud_lambda(v2, alpha, c)
        penalty = _stud_penalty(lam2, v1, n, alpha, c) + _stud_penalty(
            lam1, v2, n, alpha, c
        )
        sides[tag] = {
            "mean": float(theta.sum()) / n,
            "v1": v1,
            "v2": v2,
            "lam1": lam1,
            "lam2": lam2,
            "penalty": penalty,
        }
    lower = sides["l"]["mean"] - sides["l"]["penalty"]
    upper = sides["u"]["mean"] + sides["u"]["penalty"]
    tuning = {
        "n": n,
        "num_groups": tbar,
        "m1": m1,
        "m2": m2,
        "c": c,
        "c_variant": c_variant,
        "mean_l": sides["l"]["mean"],
        "mean_u": sides["u"]["mean"],
        "v1_l": sides["l"]["v1"],
        "v2_l": sides["l"]["v2"],
        "v1_u": sides["u"]["v1"],
        "v2_u": sides["u"]["v2"],
        "lam1_l": sides["l"]["lam1"],
        "lam2_l": sides["l"]["lam2"],
        "lam1_u": sides["u"]["lam1"],
        "lam2_u": sides["u"]["lam2"],
    }
    if upper < lower:
        # Adaptive anchors can cross on extreme draws; report the point between.
        mid = 0.5 * (lower + upper)
        lower = upper = mid
        tuning["degenerate_midpoint"] = mid
    return Interval(
        lower=lower,
        upper=upper,
        alpha=alpha,
        method=METHOD_STUDENTIZED,
        tuning=tuning,
    )


# ---------------------------------------------------------------------------
# Baselines


def _naive_halfwidth(n: int, pi: float, alpha: float) -> float:
    return (1.0 / (1.0 - pi) + 1.0 / pi) * math.sqrt(
        math.log(2.0 / alpha) / (2.0 * n)
    )


def naive_hoeffding_ci(psi_hat: float, n: int, pi: float, alpha: float) -> Interval:
    """Classical Hoeffding interval with the full pseudo-outcome range.

    Half-width ``(1/(1-pi) + 1/pi) * sqrt(log(2/alpha) / (2n))``, the
    two-sided union of the textbook one-sided bound.  Valid but loose: its
    effective sample size scales with ``n pi^2``.
    """
    alpha = _check_alpha(alpha)
    if not (0.0 < pi < 1.0):
        raise IntervalError(f"propensity {pi} outside (0, 1)")
    half = _naive_halfwidth(n, pi, alpha)
    tuning = {
        "psi_hat": float(psi_hat),
        "n": int(n),
        "pi": float(pi),
        "half_width": half,
    }
    return Interval(
        lower=psi_hat - half,
        upper=psi_hat + half,
        alpha=alpha,
        method=METHOD_NAIVE_HOEFFDING,
        tuning=tuning,
    )


def clt_ci(data: ObservedData, prop: float, alpha: float) -> Interval:
    """Plug-in normal interval around the standard estimator.

    Asymptotic only; excluded from the coverage guarantees everywhere in
    this package.  Requires both arms to be nonempty.
    """
    alpha = _check_alpha(alpha)
    z = data.assignment.z
    n_treat = int(z.sum())
    if n_treat == 0 or n_treat == data.n:
        raise IntervalError("plug-in normal interval needs both arms nonempty")
    vals = pseudo_outcome(data.y, z, prop)
    psi_hat = float(np.mean(vals))
    vhat = float(np.var(vals, ddof=1))
    zq = float(norm.ppf(1.0 - alpha / 2.0))
    half = zq * math.sqrt(vhat / data.n)
    tuning = {
        "psi_hat": psi_hat,
        "n": data.n,
        "pi": float(prop),
        "vhat": vhat,
        "z_quantile": zq,
        "half_width": half,
    }
    return Interval(
        lower=psi_hat - half,
        upper=psi_hat + half,
        alpha=alpha,
        method=METHOD_CLT,
        tuning=tuning,
    )


# ---------------------------------------------------------------------------
# Re-evaluation from a tuning record


def reevaluate(method: str, alpha: float, tuning: dict[str, Any]) -> tuple[float, float]:
    """Recompute an interval's endpoints from its tuning record.

    Uses the same arithmetic paths as the builders, so the result matches
    the original endpoints exactly.
    """
    t = tuning
    if method == METHOD_HOEFF_MBCR:
        half = _hoeff_mbcr_halfwidth(
            t["n"], t["num_full_groups"], t["group_size"], t["tail_size"], alpha
        )
        lo, hi = t["psi_hat"] - half, t["psi_hat"] + half
    elif method == METHOD_SUB_BERNOULLI_BERN:
        half = _sb_bern_halfwidth(t["n"], t["pi"], alpha, t["lam"])
        lo, hi = t["psi_hat"] - half, t["psi_hat"] + half
    elif method == METHOD_SUB_BERNOULLI_MBCR:
        half = _sb_mbcr_halfwidth(
            t["n"],
            t["num_full_groups"],
            t["group_size"],
            t["tail_size"],
            alpha,
            t["lam"],
        )
        lo, hi = t["psi_hat"] - half, t["psi_hat"] + half
    elif method == METHOD_NAIVE_HOEFFDING:
        half = _naive_halfwidth(t["n"], t["pi"], alpha)
        lo, hi = t["psi_hat"] - half, t["psi_hat"] + half
    elif method == METHOD_CLT:
        zq = float(norm.ppf(1.0 - alpha / 2.0))
        half = zq * math.sqrt(t["vhat"] / t["n"])
        lo, hi = t["psi_hat"] - half, t["psi_hat"] + half
    elif method == METHOD_STUDENTIZED:
        n, c = t["n"], t["c"]
        pen_l = _stud_penalty(t["lam2_l"], t["v1_l"], n, alpha, c) + _stud_penalty(
            t["lam1_l"], t["v2_l"], n, alpha, c
        )
        pen_u = _stud_penalty(t["lam2_u"], t["v1_u"], n, alpha, c) + _stud_penalty(
            t["lam1_u"], t["v2_u"], n, alpha, c
        )
        lo, hi = t["mean_l"] - pen_l, t["mean_u"] + pen_u
        if "degenerate_midpoint" in t:
            lo = hi = t["degenerate_midpoint"]
    else:
        raise IntervalError(f"unknown method {method!r}")
    if "clipped" in t:
        clo, chi = t["clipped"]
        lo = min(max(lo, clo), chi)
        hi = min(max(hi, clo), chi)
    return lo, hi
