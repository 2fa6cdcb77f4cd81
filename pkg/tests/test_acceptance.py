"""Acceptance gate: one test per pinned criterion, each printing a
PASS/FAIL line (run with ``pytest -s`` to see them inline).

Criterion 7 is asserted exactly as pinned and is expected to FAIL: its
thresholds are inconsistent with the closed forms it compares.  The test's
docstring carries the full derivation; everything else must be green.
"""

import math
import time

import numpy as np

from tightci.design import compute_layout, draw_mbcr
from tightci.dgp import fig2c_spec, sample_population
from tightci.estimator import (
    ObservedData,
    PotentialTable,
    conditional_mean_given_eta,
    ht_mbcr,
)
from tightci.harness import (
    child_rng,
    parse_config,
    run_coverage,
    run_equivalence,
    run_rmse,
)
from tightci.intervals import (
    gamma_b,
    gamma_e,
    hoeff_mbcr_ci,
    naive_hoeffding_ci,
    studentized_ci,
    sub_bernoulli_ci,
)

LN40 = math.log(2.0 / 0.05)


def _criterion(num: int, description: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    line = f"[criterion {num:02d}] {status}: {description}"
    if detail:
        line += f" ({detail})"
    print(line)
    assert ok, line


def test_criterion_01_exact_equivalence_6_2():
    """Grouped draws are exactly uniform: 25,920 permutation tuples, every
    one of the 15 assignments counted exactly 1,728 times, in under 5 s."""
    start = time.perf_counter()
    report = run_equivalence(6, 2)
    elapsed = time.perf_counter() - start
    ok = (
        report.summary["total"] == 25_920
        and report.summary["distinct_assignments"] == 15
        and all(row["count"] == 1_728 for row in report.rows)
        and all(row["probability"] == "1/15" for row in report.rows)
        and report.summary["uniform"] is True
        and elapsed < 5.0
    )
    _criterion(1, "exact uniformity of grouped draws at (6, 2)", ok,
               f"{elapsed:.2f}s")


def test_criterion_02_exact_conditional_unbiasedness():
    """20 random tables at (6, 2), 10 random unit shuffles each: the exact
    conditional mean equals the finite-population effect within 1e-12."""
    lay = compute_layout(6, 2)
    rng = np.random.default_rng(20260810)
    worst = 0.0
    for _ in range(20):
        table = PotentialTable(rng.uniform(0, 1, 6), rng.uniform(0, 1, 6))
        for _ in range(10):
            eta = rng.permutation(6)
            err = abs(conditional_mean_given_eta(table, lay, eta) - table.psi_db)
            worst = max(worst, err)
    _criterion(2, "conditional mean equals the sample effect", worst <= 1e-12,
               f"worst error {worst:.2e}")


def test_criterion_03_exact_width_identity():
    """For pi = 1/K, K in 2..1000, n = 1000 K: grouped half-width times
    sqrt(n pi) equals sqrt(2 log 40) within 1e-10."""
    target = math.sqrt(2.0 * LN40)
    worst = 0.0
    for K in range(2, 1001):
        lay = compute_layout(1000 * K, 1000)
        half = hoeff_mbcr_ci(0.0, lay, 0.05).half_width
        worst = max(worst, abs(half * math.sqrt(lay.n / K) - target))
    _criterion(3, "half-width x sqrt(n pi) = sqrt(2 log 40) on the 1/K grid",
               worst <= 1e-10, f"worst deviation {worst:.2e}")


def test_criterion_04_coverage():
    """2000-replication coverage at the three scenario DGPs, (n, pi) in
    {(1000, 1/10), (5000, 1/10)}, alpha 0.05, both design-based and
    superpopulation targets: at least 0.95 for the closed-form intervals and
    at least 0.90 for the Studentized one (its guarantee is 1 - 2 alpha).
    Total runtime under 5 minutes."""
    start = time.perf_counter()
    dgps = {
        "shifted": {"kind": "uniform_shift", "lo": 0.1, "hi": 0.5, "shift": 0.5},
        "null-high": {"kind": "uniform_null", "lo": 0.9, "hi": 1.0},
        "null-low": {"kind": "uniform_null", "lo": 0.0, "hi": 0.1},
    }
    failures = []
    for dgp_name, dgp in dgps.items():
        for setting in ("design_based", "superpopulation"):
            cfg = parse_config({
                "experiment": "coverage",
                "grid": {"n": [1000, 5000], "pi": ["1/10"], "alpha": [0.05]},
                "methods": [
                    "hoeff-mbcr",
                    "sub-bernoulli-mbcr",
                    "sub-bernoulli-bern",
                    "naive-hoeffding",
                    "studentized",
                ],
                "dgp": dgp,
                "replications": 2000,
                "seed": 20260810,
                "setting": setting,
            })
            for row in run_coverage(cfg).rows:
                floor = 0.90 if row["method"] == "studentized" else 0.95
                if row["coverage_rate"] < floor:
                    failures.append(
                        f"{dgp_name}/{setting}/{row['method']}/n={row['n']}: "
                        f"{row['coverage_rate']:.4f} < {floor}"
                    )
    elapsed = time.perf_counter() - start
    ok = not failures and elapsed < 300.0
    _criterion(4, "coverage floors hold at every tested cell", ok,
               f"{elapsed:.1f}s" + ("; " + "; ".join(failures) if failures else ""))


def test_criterion_05_rmse_bounds():
    """Monte Carlo RMSE over 10^4 replications sits below the theoretical
    bounds: 2/sqrt(n pi) for the grouped estimator at (1000, 1/10) and
    sqrt(2/(n pi)) for the Bernoulli one at (10^4, 1/100).  Under 2 min."""
    start = time.perf_counter()
    base = {
        "experiment": "rmse",
        "dgp": {"kind": "uniform_shift", "lo": 0.1, "hi": 0.5, "shift": 0.5},
        "replications": 10_000,
        "seed": 20260810,
        "setting": "design_based",
    }
    cfg_mbcr = parse_config({
        **base,
        "grid": {"n": [1000], "pi": ["1/10"], "alpha": [0.05]},
        "methods": ["ht-mbcr"],
    })
    cfg_bern = parse_config({
        **base,
        "grid": {"n": [10_000], "pi": ["1/100"], "alpha": [0.05]},
        "methods": ["ht-bernoulli"],
    })
    row_m = run_rmse(cfg_mbcr).rows[0]
    row_b = run_rmse(cfg_bern).rows[0]
    elapsed = time.perf_counter() - start
    ok = (
        row_m["rmse"] <= 2.0 / math.sqrt(1000 * 0.1)
        and row_b["rmse"] <= math.sqrt(2.0 / (10_000 * 0.01))
        and elapsed < 120.0
    )
    _criterion(
        5, "estimator RMSE below its theoretical bound", ok,
        f"grouped {row_m['rmse']:.4f} <= {row_m['rmse_bound']:.4f}, "
        f"bernoulli {row_b['rmse']:.4f} <= {row_b['rmse_bound']:.4f}, "
        f"{elapsed:.1f}s",
    )


def test_criterion_06_asymptotic_constants():
    """Closed-form widths at pi = 1e-3, n = 1e7: width x sqrt(n pi) within
    5% of sqrt(4 log 40) for the Bernoulli sub-Bernoulli interval and of
    sqrt(8 log 40) for the grouped one with the CGF-matched lambda."""
    n, pi = 10**7, 1e-3
    scale = math.sqrt(n * pi)
    bern = sub_bernoulli_ci(0.0, 0.05, scheme="bernoulli", n=n, pi=pi).half_width
    lay = compute_layout(n, 10**4)
    grouped = sub_bernoulli_ci(0.0, 0.05, scheme="mbcr", layout=lay).half_width
    r_bern = bern * scale / math.sqrt(4.0 * LN40)
    r_grp = grouped * scale / math.sqrt(8.0 * LN40)
    ok = abs(r_bern - 1.0) <= 0.05 and abs(r_grp - 1.0) <= 0.05
    _criterion(6, "sub-Bernoulli widths match their scaling constants", ok,
               f"ratios {r_bern:.5f}, {r_grp:.5f}")


def test_criterion_07_naive_to_grouped_width_ratios():
    """KNOWN-UNATTAINABLE PINNED THRESHOLDS; expected to fail.

    Pinned criterion: at alpha = 0.05, n = 1e5, pi in {0.1, 0.01, 0.001},
    the naive-to-grouped half-width ratio is at least {4, 15, 45}.

    The ratio of the two closed forms is alpha- and n-free:

        [ (1/(1-pi) + 1/pi) sqrt(log(2/a)/(2n)) ]
        / [ (1/sqrt(pi)) sqrt(2 log(2/a)/n) ]  =  (1/(1-pi) + 1/pi) sqrt(pi)/2

    which evaluates to 1.7568, 5.0505, and 15.8272 at these propensities
    (40-digit arithmetic; pinned in test_intervals.py).  Every threshold is
    about 2.8x the true ratio; the thresholds are met exactly one decade
    lower (ratios 5.05, 15.83, 50.005 at pi = 0.01, 0.001, 0.0001), so they
    appear to come from a shifted propensity grid.  The assertion is kept
    literal rather than weakened; the qualitative claim (grouped beats naive,
    gap widening as pi shrinks) is verified and green in test_cli.py and
    test_intervals.py.
    """
    n = 10**5
    thresholds = {0.1: 4.0, 0.01: 15.0, 0.001: 45.0}
    ratios = {}
    for pi, floor in thresholds.items():
        lay = compute_layout(n, round(n * pi))
        naive = naive_hoeffding_ci(0.0, n, pi, 0.05).half_width
        grouped = hoeff_mbcr_ci(0.0, lay, 0.05).half_width
        ratios[pi] = naive / grouped
    ok = all(ratios[pi] >= thresholds[pi] for pi in thresholds)
    detail = ", ".join(
        f"pi={pi}: ratio {ratios[pi]:.4f} vs floor {thresholds[pi]}"
        for pi in sorted(thresholds, reverse=True)
    )
    _criterion(7, "naive/grouped width ratios meet the pinned floors", ok, detail)


def test_criterion_08_studentized_sharpness():
    """Low-outcome null scenario at n = 5000, pi = 1/10: the Studentized
    upper margin averages at most half the grouped Hoeffding half-width
    over 500 replications."""
    n, n1, reps = 5000, 500, 500
    lay = compute_layout(n, n1)
    spec = fig2c_spec(n)
    hoeff_half = hoeff_mbcr_ci(0.0, lay, 0.05).half_width
    margins = np.zeros(reps)
    for rep in range(reps):
        table = sample_population(spec, child_rng(20260810, 0, rep, 1))
        asg = draw_mbcr(lay, child_rng(20260810, 0, rep, 2))
        data = ObservedData.realize(table, asg)
        ci = studentized_ci(data, 0.05)
        margins[rep] = ci.upper - ht_mbcr(data)
    mean_margin = float(margins.mean())
    ok = mean_margin <= 0.5 * hoeff_half
    _criterion(8, "Studentized upper margin at most half the Hoeffding width",
               ok, f"margin {mean_margin:.5f} vs {0.5 * hoeff_half:.5f}")


def test_criterion_09_cgf_numerics():
    """Both CGFs vanish at zero and match their quadratic approximations to
    1e-3 at a 1e-4 fraction of their natural scales."""
    a, b = -1.0 / 0.9 - 1.0, 1.0 / 0.1 + 1.0
    lam_b = 1e-4 / b
    ratio_b = gamma_b(lam_b, a, b) / (lam_b**2 / 2.0 * (-a * b))
    c = 2.0
    lam_e = 1e-4 / c
    ratio_e = gamma_e(lam_e, c) / (lam_e**2 / 2.0)
    ok = (
        gamma_b(0.0, a, b) == 0.0
        and gamma_e(0.0, c) == 0.0
        and abs(ratio_b - 1.0) <= 1e-3
        and abs(ratio_e - 1.0) <= 1e-3
    )
    _criterion(9, "CGFs vanish at zero and match their quadratic limits", ok,
               f"ratios {ratio_b:.6f}, {ratio_e:.6f}")


def test_criterion_10_worker_determinism():
    """A coverage config rerun with 1 and 8 workers yields byte-identical
    CSV output."""
    cfg = parse_config({
        "experiment": "coverage",
        "grid": {"n": [200], "pi": ["1/10"], "alpha": [0.05]},
        "methods": ["hoeff-mbcr", "sub-bernoulli-bern", "studentized"],
        "dgp": {"kind": "uniform_shift", "lo": 0.1, "hi": 0.5, "shift": 0.5},
        "replications": 48,
        "seed": 20260810,
        "setting": "superpopulation",
    })
    serial = run_coverage(cfg, workers=1).to_csv_bytes()
    parallel = run_coverage(cfg, workers=8).to_csv_bytes()
    ok = serial == parallel
    _criterion(10, "1-worker and 8-worker runs emit identical bytes", ok,
               f"{len(serial)} bytes")
