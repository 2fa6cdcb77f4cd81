"""Config validation, runner determinism, and report serialization."""

import json
import math
from fractions import Fraction

import pytest

from tightci.design import EnumerationBudgetError, LayoutInfeasibleError
from tightci.harness import (
    ConfigError,
    load_config,
    parse_config,
    parse_propensity,
    resolve_workers,
    rmse_bound,
    run_coverage,
    run_equivalence,
    run_experiment,
    run_rmse,
    run_width_scaling,
    write_outputs,
)

LN40 = math.log(2 / 0.05)


def _coverage_raw(**overrides):
    raw = {
        "experiment": "coverage",
        "grid": {"n": [200], "pi": ["1/10"], "alpha": [0.05]},
        "methods": ["hoeff-mbcr", "sub-bernoulli-bern", "studentized"],
        "dgp": {"kind": "uniform_shift", "lo": 0.1, "hi": 0.5, "shift": 0.5},
        "replications": 40,
        "seed": 3,
        "setting": "design_based",
    }
    raw.update(overrides)
    return raw


# ---------------------------------------------------------------------------
# Parsing and validation


def test_parse_propensity_forms():
    assert parse_propensity("1/10") == Fraction(1, 10)
    assert parse_propensity(0.1) == Fraction(1, 10)
    assert parse_propensity("0.25") == Fraction(1, 4)
    assert parse_propensity("3/7") == Fraction(3, 7)
    with pytest.raises(ConfigError, match="outside"):
        parse_propensity(0.6)
    with pytest.raises(ConfigError, match="outside"):
        parse_propensity(0)
    with pytest.raises(ConfigError):
        parse_propensity("not-a-number")


def test_parse_config_validations():
    with pytest.raises(ConfigError, match="config.experiment"):
        parse_config(_coverage_raw(experiment="nope"))
    with pytest.raises(ConfigError, match="missing required field"):
        parse_config({"experiment": "coverage"})
    with pytest.raises(ConfigError, match="config.grid.alpha"):
        parse_config(_coverage_raw(grid={"n": [100], "pi": [0.1], "alpha": [1.5]}))
    with pytest.raises(ConfigError, match=r"config.methods\[0\]"):
        parse_config(_coverage_raw(methods=["ht-mbcr"]))
    with pytest.raises(ConfigError, match="unknown field"):
        parse_config(_coverage_raw(extra_knob=1))
    with pytest.raises(ConfigError, match="config.seed"):
        parse_config(_coverage_raw(seed=-1))
    with pytest.raises(ConfigError, match="config.replications"):
        parse_config(_coverage_raw(replications=0))
    with pytest.raises(ConfigError, match="config.setting"):
        parse_config(_coverage_raw(setting="mixed"))
    with pytest.raises(ConfigError, match="config.dgp"):
        parse_config(_coverage_raw(dgp={"kind": "uniform_shift", "lo": 0.9, "hi": 1.0, "shift": 0.5}))


def test_load_config_reports_json_position(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"experiment": "coverage",\n  "seed": }\n')
    with pytest.raises(ConfigError, match="line 2"):
        load_config(path)


def test_equivalence_config():
    cfg = parse_config({"experiment": "equivalence", "n": 6, "n1": 2, "seed": 0})
    assert cfg.n == 6 and cfg.n1 == 2
    with pytest.raises(ConfigError, match="config.n1"):
        parse_config({"experiment": "equivalence", "n": 6, "n1": 0, "seed": 0})


def test_resolve_workers(monkeypatch):
    monkeypatch.delenv("TIGHTCI_THREADS", raising=False)
    assert resolve_workers(None) == 1
    assert resolve_workers(4) == 4
    with pytest.raises(ConfigError):
        resolve_workers(0)
    monkeypatch.setenv("TIGHTCI_THREADS", "3")
    assert resolve_workers(8) == 3
    monkeypatch.setenv("TIGHTCI_THREADS", "zero")
    with pytest.raises(ConfigError):
        resolve_workers(1)


# ---------------------------------------------------------------------------
# Coverage runner


def test_coverage_deterministic_and_worker_independent():
    cfg = parse_config(_coverage_raw(replications=48))
    first = run_coverage(cfg, workers=1).to_csv_bytes()
    again = run_coverage(cfg, workers=1).to_csv_bytes()
    parallel = run_coverage(cfg, workers=4).to_csv_bytes()
    assert first == again == parallel


def test_coverage_rows_shape():
    cfg = parse_config(_coverage_raw())
    report = run_coverage(cfg)
    assert len(report.rows) == 3
    for row in report.rows:
        assert row["schema_version"] == "1"
        assert 0.0 <= row["coverage_rate"] <= 1.0
        assert row["coverage_se"] == pytest.approx(
            math.sqrt(row["coverage_rate"] * (1 - row["coverage_rate"]) / 40)
        )
        assert row["replications"] == 40
        assert row["mean_halfwidth"] > 0


def test_coverage_superpopulation_target():
    cfg = parse_config(_coverage_raw(setting="superpopulation", replications=60))
    report = run_coverage(cfg)
    # conservative intervals still cover the analytic truth of 0.5
    for row in report.rows:
        if row["method"] != "clt":
            assert row["coverage_rate"] >= 0.9


def test_coverage_skips_infeasible_grouped_cells(caplog):
    raw = _coverage_raw(grid={"n": [100], "pi": ["1/3", "1/10"], "alpha": [0.05]})
    cfg = parse_config(raw)
    with caplog.at_level("WARNING"):
        report = run_coverage(cfg)
    methods_by_pi = {}
    for row in report.rows:
        methods_by_pi.setdefault(row["pi"], []).append(row["method"])
    feasible = methods_by_pi[0.1]
    infeasible = methods_by_pi[1 / 3]
    assert "hoeff-mbcr" in feasible and "studentized" in feasible
    assert "hoeff-mbcr" not in infeasible
    assert "sub-bernoulli-bern" in infeasible
    assert any("non-integer treated count" in rec.message for rec in caplog.records)


def test_coverage_skips_infeasible_layouts(caplog):
    raw = _coverage_raw(grid={"n": [19], "pi": ["8/19"], "alpha": [0.05]},
                        replications=10)
    cfg = parse_config(raw)
    with caplog.at_level("WARNING"):
        report = run_coverage(cfg)
    assert all(row["method"] == "sub-bernoulli-bern" for row in report.rows)


def test_coverage_extreme_alpha_smoke():
    raw = _coverage_raw(grid={"n": [100], "pi": ["1/10"], "alpha": [1 - 1e-9]},
                        replications=8)
    report = run_coverage(parse_config(raw))
    for row in report.rows:
        assert math.isfinite(row["mean_halfwidth"])


# ---------------------------------------------------------------------------
# Width scaling runner


def test_width_scaling_exact_identity():
    raw = {
        "experiment": "width_scaling",
        "grid": {"n": [10**6], "pi": ["1/1000"], "alpha": [0.05]},
        "methods": [
            "hoeff-mbcr",
            "sub-bernoulli-bern",
            "sub-bernoulli-mbcr",
            "naive-hoeffding",
        ],
        "replications": 1,
        "seed": 0,
    }
    report = run_width_scaling(parse_config(raw))
    by_method = {row["method"]: row for row in report.rows}
    assert by_method["hoeff-mbcr"]["width_times_sqrt_npi"] == pytest.approx(
        math.sqrt(2 * LN40), abs=1e-12
    )
    assert by_method["sub-bernoulli-bern"]["width_times_sqrt_npi"] == pytest.approx(
        math.sqrt(4 * LN40), rel=0.05
    )
    assert by_method["sub-bernoulli-mbcr"]["width_times_sqrt_npi"] == pytest.approx(
        math.sqrt(8 * LN40), rel=0.05
    )


def test_width_scaling_naive_diverges():
    raw = {
        "experiment": "width_scaling",
        "grid": {"n": [10**6], "pi": ["1/10", "1/100", "1/1000"], "alpha": [0.05]},
        "methods": ["naive-hoeffding"],
        "replications": 1,
        "seed": 0,
    }
    report = run_width_scaling(parse_config(raw))
    scaled = [row["width_times_sqrt_npi"] for row in report.rows]
    assert scaled[1] / scaled[0] == pytest.approx(math.sqrt(10), rel=0.1)
    assert scaled[2] / scaled[1] == pytest.approx(math.sqrt(10), rel=0.05)


def test_width_scaling_rejects_adaptive_methods():
    raw = {
        "experiment": "width_scaling",
        "grid": {"n": [100], "pi": [0.1], "alpha": [0.05]},
        "methods": ["studentized"],
        "replications": 1,
        "seed": 0,
    }
    with pytest.raises(ConfigError, match="width_scaling"):
        parse_config(raw)


# ---------------------------------------------------------------------------
# RMSE runner


def test_rmse_runner_reports_bounds():
    raw = {
        "experiment": "rmse",
        "grid": {"n": [400], "pi": ["1/10"], "alpha": [0.05]},
        "methods": ["ht-mbcr", "ht-bernoulli"],
        "dgp": {"kind": "uniform_shift", "lo": 0.1, "hi": 0.5, "shift": 0.5},
        "replications": 400,
        "seed": 5,
        "setting": "design_based",
    }
    report = run_rmse(parse_config(raw))
    by_method = {row["method"]: row for row in report.rows}
    assert by_method["ht-mbcr"]["rmse_bound"] == pytest.approx(2 / math.sqrt(40))
    assert by_method["ht-bernoulli"]["rmse_bound"] == pytest.approx(
        math.sqrt(2 / 40)
    )
    for row in report.rows:
        assert 0 <= row["rmse"] <= row["rmse_bound"]


def test_rmse_zero_for_constant_null_table_grouped():
    raw = {
        "experiment": "rmse",
        "grid": {"n": [100], "pi": ["1/10"], "alpha": [0.05]},
        "methods": ["ht-mbcr"],
        "dgp": {"kind": "uniform_null", "lo": 0.3, "hi": 0.30001},
        "replications": 50,
        "seed": 6,
        "setting": "design_based",
    }
    report = run_rmse(parse_config(raw))
    # within-group weights cancel, so the estimate is (near) zero every draw
    assert report.rows[0]["rmse"] == pytest.approx(0.0, abs=1e-5)


def test_rmse_bound_unknown_method():
    with pytest.raises(ConfigError):
        rmse_bound("hoeff-mbcr", 100, 0.1)


# ---------------------------------------------------------------------------
# Equivalence runner


def test_equivalence_exact_6_2():
    report = run_equivalence(6, 2)
    assert report.summary == {
        "exact": True,
        "uniform": True,
        "total": 25920,
        "distinct_assignments": 15,
    }
    assert len(report.rows) == 15
    for row in report.rows:
        assert row["count"] == 1728
        assert row["probability"] == "1/15"
        assert len(row["assignment"]) == 6


def test_equivalence_budget_error_suggests_fallback():
    with pytest.raises(EnumerationBudgetError, match="chi-square"):
        run_equivalence(10, 5)


def test_equivalence_approximate_fallback():
    report = run_equivalence(4, 2, approximate=True, draws=3000, seed=1)
    assert report.summary["approximate"] is True
    assert 0.0 <= report.summary["chi2_pvalue"] <= 1.0
    assert sum(row["count"] for row in report.rows) == 3000
    assert "not a proof" in report.summary["note"]


def test_equivalence_infeasible_layout():
    with pytest.raises(LayoutInfeasibleError):
        run_equivalence(19, 8)


# ---------------------------------------------------------------------------
# Serialization


def test_write_outputs_reproducible(tmp_path):
    cfg = parse_config(_coverage_raw(replications=16))
    report = run_experiment(cfg)
    first = write_outputs(tmp_path / "a", report, cfg)
    second = write_outputs(tmp_path / "b", run_experiment(cfg), cfg)
    assert first["csv"].read_bytes() == second["csv"].read_bytes()
    assert first["manifest"].read_bytes() == second["manifest"].read_bytes()
    manifest = json.loads(first["manifest"].read_text())
    assert manifest["schema_version"] == "1"
    assert manifest["seed"] == 3
    import hashlib

    digest = hashlib.sha256(first["csv"].read_bytes()).hexdigest()
    assert manifest["outputs"]["coverage.csv"] == digest


def test_csv_header_and_quoting(tmp_path):
    cfg = parse_config(_coverage_raw(replications=8))
    report = run_experiment(cfg)
    text = report.to_csv_bytes().decode("utf-8")
    header = text.splitlines()[0]
    assert header.startswith("schema_version,method,n,pi,alpha,coverage_rate")
    from tightci.harness import _csv_field

    assert _csv_field('with,comma') == '"with,comma"'
    assert _csv_field('with"quote') == '"with""quote"'
    assert _csv_field(None) == ""
    assert _csv_field(0.1) == "0.1"
