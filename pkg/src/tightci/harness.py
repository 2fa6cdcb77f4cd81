"""Deterministic Monte Carlo experiment runner.

Experiments are described by a JSON config (grid of sample sizes,
propensities, and levels; method list; data-generating process; replication
count; seed) and produce CSV reports plus a manifest.  Reports are
byte-identical across reruns and across worker counts: replication ``r`` of
cell ``c`` always draws from a generator seeded by the tuple
``(seed, c, r, tag)`` via ``numpy.random.SeedSequence``, and results are
assembled in replication order regardless of how work was chunked.

Propensities in configs may be written as JSON numbers or as fraction
strings like ``"1/10"``; numbers are interpreted through their shortest
decimal representation, so ``0.1`` means exactly one tenth.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any

import numpy as np
from scipy.stats import chisquare

from . import __version__ as TOOL_VERSION
from .design import (
    DEFAULT_ENUMERATION_BUDGET,
    DesignError,
    MbcrLayout,
    compute_layout,
    draw_bernoulli,
    draw_mbcr,
    enumerate_mbcr_distribution,
)
from .dgp import DgpSpec, DgpError, sample_population, true_ate_iid
from .estimator import ObservedData, PotentialTable, ht_mbcr, ht_standard
from .intervals import (
    METHOD_CLT,
    METHOD_HOEFF_MBCR,
    METHOD_NAIVE_HOEFFDING,
    METHOD_STUDENTIZED,
    METHOD_SUB_BERNOULLI_BERN,
    METHOD_SUB_BERNOULLI_MBCR,
    clt_ci,
    hoeff_mbcr_ci,
    naive_hoeffding_ci,
    studentized_ci,
    sub_bernoulli_ci,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1"

EXPERIMENT_COVERAGE = "coverage"
EXPERIMENT_WIDTH_SCALING = "width_scaling"
EXPERIMENT_RMSE = "rmse"
EXPERIMENT_EQUIVALENCE = "equivalence"

EXPERIMENTS = (
    EXPERIMENT_COVERAGE,
    EXPERIMENT_WIDTH_SCALING,
    EXPERIMENT_RMSE,
    EXPERIMENT_EQUIVALENCE,
)

SETTING_DESIGN_BASED = "design_based"
SETTING_SUPERPOPULATION = "superpopulation"

METHOD_STUDENTIZED_BERN = "studentized-bern"
METHOD_HT_MBCR = "ht-mbcr"
METHOD_HT_BERNOULLI = "ht-bernoulli"

MBCR_METHODS = {
    METHOD_HOEFF_MBCR,
    METHOD_SUB_BERNOULLI_MBCR,
    METHOD_STUDENTIZED,
    METHOD_HT_MBCR,
}
BERN_METHODS = {
    METHOD_SUB_BERNOULLI_BERN,
    METHOD_NAIVE_HOEFFDING,
    METHOD_CLT,
    METHOD_STUDENTIZED_BERN,
    METHOD_HT_BERNOULLI,
}
CLOSED_WIDTH_METHODS = {
    METHOD_HOEFF_MBCR,
    METHOD_SUB_BERNOULLI_MBCR,
    METHOD_SUB_BERNOULLI_BERN,
    METHOD_NAIVE_HOEFFDING,
}
COVERAGE_METHODS = CLOSED_WIDTH_METHODS | {
    METHOD_STUDENTIZED,
    METHOD_STUDENTIZED_BERN,
    METHOD_CLT,
}
RMSE_METHODS = {METHOD_HT_MBCR, METHOD_HT_BERNOULLI}

REPORT_COLUMNS = [
    "schema_version",
    "method",
    "n",
    "pi",
    "alpha",
    "coverage_rate",
    "coverage_se",
    "mean_halfwidth",
    "width_times_sqrt_npi",
    "rmse",
    "rmse_bound",
    "replications",
    "seed",
]

EQUIVALENCE_COLUMNS = [
    "schema_version",
    "n",
    "n1",
    "assignment",
    "count",
    "total",
    "probability",
]

# Stream tags for the per-replication seed derivation.
_TAG_CELL_TABLE = 0
_TAG_REP_TABLE = 1
_TAG_MBCR = 2
_TAG_BERN = 3
_TAG_EQUIV = 4


class ConfigError(ValueError):
    """A malformed experiment configuration; message names the field."""


def child_rng(seed: int, *path: int) -> np.random.Generator:
    """Independent generator for one node of the (seed, cell, rep, tag) tree."""
    return np.random.default_rng(np.random.SeedSequence((int(seed), *map(int, path))))


def parse_propensity(value: Any, where: str = "pi") -> Fraction:
    """Parse a config propensity into an exact fraction in (0, 1/2]."""
    try:
        if isinstance(value, str):
            frac = Fraction(value)
        elif isinstance(value, bool):
            raise ValueError("boolean is not a propensity")
        elif isinstance(value, int):
            frac = Fraction(value)
        elif isinstance(value, float):
            frac = Fraction(str(value))
        else:
            raise ValueError(f"unsupported type {type(value).__name__}")
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"{where}: cannot parse propensity {value!r}: {exc}") from exc
    if not (0 < frac <= Fraction(1, 2)):
        raise ConfigError(f"{where}: propensity {value!r} outside (0, 1/2]")
    return frac


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated, immutable description of one experiment."""

    experiment: str
    seed: int
    methods: tuple[str, ...] = ()
    ns: tuple[int, ...] = ()
    pis: tuple[Fraction, ...] = ()
    alphas: tuple[float, ...] = ()
    dgp: DgpSpec | None = None
    replications: int = 1
    setting: str = SETTING_DESIGN_BASED
    # equivalence-only knobs
    n: int | None = None
    n1: int | None = None
    budget: int = DEFAULT_ENUMERATION_BUDGET
    approximate: bool = False
    draws: int = 200_000
    raw: dict = field(default_factory=dict, compare=False)


def _require(mapping: dict, key: str, where: str) -> Any:
    if key not in mapping:
        raise ConfigError(f"{where}: missing required field {key!r}")
    return mapping[key]


def _parse_dgp(obj: Any, n: int, where: str) -> DgpSpec:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object, got {type(obj).__name__}")
    kind = _require(obj, "kind", where)
    known = {"kind", "lo", "hi", "shift", "path"}
    extra = set(obj) - known
    if extra:
        raise ConfigError(f"{where}: unknown field(s) {sorted(extra)}")
    try:
        return DgpSpec(
            kind=kind,
            n=n,
            lo=float(obj.get("lo", 0.0)),
            hi=float(obj.get("hi", 1.0)),
            shift=float(obj.get("shift", 0.0)),
            path=obj.get("path"),
        )
    except (DgpError, TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a parsed JSON object into an :class:`ExperimentConfig`."""
    if not isinstance(raw, dict):
        raise ConfigError(f"config: expected a JSON object, got {type(raw).__name__}")
    experiment = _require(raw, "experiment", "config")
    if experiment not in EXPERIMENTS:
        raise ConfigError(
            f"config.experiment: unknown experiment {experiment!r}; "
            f"choose from {EXPERIMENTS}"
        )
    seed = _require(raw, "seed", "config")
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError(f"config.seed: need a nonnegative integer, got {seed!r}")

    if experiment == EXPERIMENT_EQUIVALENCE:
        n = _require(raw, "n", "config")
        n1 = _require(raw, "n1", "config")
        for name, v in (("n", n), ("n1", n1)):
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"config.{name}: need a positive integer, got {v!r}")
        budget = raw.get("budget", DEFAULT_ENUMERATION_BUDGET)
        if not isinstance(budget, int) or budget < 1:
            raise ConfigError(f"config.budget: need a positive integer, got {budget!r}")
        approx = raw.get("approximate", False)
        if not isinstance(approx, bool):
            raise ConfigError(f"config.approximate: need a boolean, got {approx!r}")
        draws = raw.get("draws", 200_000)
        if not isinstance(draws, int) or draws < 1:
            raise ConfigError(f"config.draws: need a positive integer, got {draws!r}")
        known = {"experiment", "seed", "n", "n1", "budget", "approximate", "draws"}
        extra = set(raw) - known
        if extra:
            raise ConfigError(f"config: unknown field(s) {sorted(extra)}")
        return ExperimentConfig(
            experiment=experiment,
            seed=seed,
            n=n,
            n1=n1,
            budget=budget,
            approximate=approx,
            draws=draws,
            raw=raw,
        )

    known = {"experiment", "seed", "grid", "methods", "dgp", "replications", "setting"}
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"config: unknown field(s) {sorted(extra)}")
    grid = _require(raw, "grid", "config")
    if not isinstance(grid, dict):
        raise ConfigError("config.grid: expected an object")
    grid_extra = set(grid) - {"n", "pi", "alpha"}
    if grid_extra:
        raise ConfigError(f"config.grid: unknown field(s) {sorted(grid_extra)}")
    ns_raw = _require(grid, "n", "config.grid")
    pis_raw = _require(grid, "pi", "config.grid")
    alphas_raw = _require(grid, "alpha", "config.grid")
    for name, lst in (("n", ns_raw), ("pi", pis_raw), ("alpha", alphas_raw)):
        if not isinstance(lst, list) or not lst:
            raise ConfigError(f"config.grid.{name}: need a nonempty list")
    ns = []
    for i, v in enumerate(ns_raw):
        if not isinstance(v, int) or isinstance(v, bool) or v < 2:
            raise ConfigError(f"config.grid.n[{i}]: need an integer >= 2, got {v!r}")
        ns.append(v)
    pis = tuple(
        parse_propensity(v, where=f"config.grid.pi[{i}]") for i, v in enumerate(pis_raw)
    )
    alphas = []
    for i, v in enumerate(alphas_raw):
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not (0 < v < 1):
            raise ConfigError(
                f"config.grid.alpha[{i}]: need a number in (0, 1), got {v!r}"
            )
        alphas.append(float(v))
    methods_raw = _require(raw, "methods", "config")
    if not isinstance(methods_raw, list) or not methods_raw:
        raise ConfigError("config.methods: need a nonempty list")
    allowed = {
        EXPERIMENT_COVERAGE: COVERAGE_METHODS,
        EXPERIMENT_WIDTH_SCALING: CLOSED_WIDTH_METHODS,
        EXPERIMENT_RMSE: RMSE_METHODS,
    }[experiment]
    methods = []
    for i, m in enumerate(methods_raw):
        if m not in allowed:
            raise ConfigError(
                f"config.methods[{i}]: {m!r} not usable in a {experiment} "
                f"experiment; choose from {sorted(allowed)}"
            )
        methods.append(m)
    reps = raw.get("replications", 1)
    if not isinstance(reps, int) or isinstance(reps, bool) or reps < 1:
        raise ConfigError(f"config.replications: need an integer >= 1, got {reps!r}")
    setting = raw.get("setting", SETTING_DESIGN_BASED)
    if setting not in (SETTING_DESIGN_BASED, SETTING_SUPERPOPULATION):
        raise ConfigError(
            f"config.setting: unknown setting {setting!r}; choose "
            f"'{SETTING_DESIGN_BASED}' or '{SETTING_SUPERPOPULATION}'"
        )
    dgp = None
    if experiment in (EXPERIMENT_COVERAGE, EXPERIMENT_RMSE):
        dgp = _parse_dgp(_require(raw, "dgp", "config"), ns[0], "config.dgp")
    elif "dgp" in raw:
        dgp = _parse_dgp(raw["dgp"], ns[0], "config.dgp")
    return ExperimentConfig(
        experiment=experiment,
        seed=seed,
        methods=tuple(methods),
        ns=tuple(ns),
        pis=pis,
        alphas=tuple(alphas),
        dgp=dgp,
        replications=reps,
        setting=setting,
        raw=raw,
    )


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}")
    return parse_config(raw)


@dataclass
class Report:
    """Rows destined for one CSV file, plus free-form summary metadata."""

    experiment: str
    columns: list[str]
    rows: list[dict[str, Any]]
    summary: dict[str, Any] = field(default_factory=dict)

    def to_csv_bytes(self) -> bytes:
        buf = io.StringIO()
        buf.write(",".join(self.columns) + "\n")
        for row in self.rows:
            buf.write(",".join(_csv_field(row.get(col)) for col in self.columns) + "\n")
        return buf.getvalue().encode("utf-8")


def _csv_field(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        text = repr(value)
    else:
        text = str(value)
    if any(ch in text for ch in ',"\r\n'):
        text = '"' + text.replace('"', '""') + '"'
    return text


# ---------------------------------------------------------------------------
# Grid cells


@dataclass(frozen=True)
class _Cell:
    idx: int
    n: int
    pi: Fraction
    alpha: float
    layout: MbcrLayout | None
    mbcr_skip_reason: str | None
    table_y0: np.ndarray | None
    table_y1: np.ndarray | None
    target: float
    needs_mbcr: bool
    needs_bern: bool


def _build_cells(config: ExperimentConfig) -> list[_Cell]:
    wants_mbcr = [m for m in config.methods if m in MBCR_METHODS]
    wants_bern = [m for m in config.methods if m in BERN_METHODS]
    cells = []
    idx = 0
    for n in config.ns:
        for pi in config.pis:
            for alpha in config.alphas:
                layout = None
                reason = None
                if wants_mbcr:
                    n1_frac = pi * n
                    if n1_frac.denominator != 1:
                        reason = f"pi={pi} gives non-integer treated count for n={n}"
                    elif n1_frac.numerator < 1:
                        reason = f"pi={pi} gives no treated units for n={n}"
                    else:
                        try:
                            layout = compute_layout(n, int(n1_frac))
                        except DesignError as exc:
                            reason = str(exc)
                table = None
                if config.dgp is not None and config.setting == SETTING_DESIGN_BASED:
                    table = sample_population(
                        config.dgp.with_n(n), child_rng(config.seed, idx, _TAG_CELL_TABLE)
                    )
                if table is not None:
                    target = table.psi_db
                elif config.dgp is not None:
                    target = true_ate_iid(config.dgp)
                else:
                    target = 0.0
                cells.append(
                    _Cell(
                        idx=idx,
                        n=n,
                        pi=pi,
                        alpha=alpha,
                        layout=layout,
                        mbcr_skip_reason=reason,
                        table_y0=None if table is None else table.y0,
                        table_y1=None if table is None else table.y1,
                        target=target,
                        needs_mbcr=bool(wants_mbcr) and layout is not None,
                        needs_bern=bool(wants_bern),
                    )
                )
                idx += 1
    return cells


def _cell_table(config: ExperimentConfig, cell: _Cell, rep: int) -> PotentialTable:
    if cell.table_y0 is not None:
        return PotentialTable(cell.table_y0, cell.table_y1, provenance="fixed")
    return sample_population(
        config.dgp.with_n(cell.n), child_rng(config.seed, cell.idx, rep, _TAG_REP_TABLE)
    )


def _methods_for_cell(config: ExperimentConfig, cell: _Cell) -> list[str]:
    out = []
    for m in config.methods:
        if m in MBCR_METHODS and not cell.needs_mbcr:
            continue
        out.append(m)
    return out


# ---------------------------------------------------------------------------
# Coverage experiment


def _coverage_chunk(
    config: ExperimentConfig, cell: _Cell, start: int, stop: int
) -> dict[str, dict[str, np.ndarray]]:
    """Per-replication containment, half-width, and point estimates."""
    methods = _methods_for_cell(config, cell)
    count = stop - start
    out = {
        m: {
            "covered": np.zeros(count, dtype=np.uint8),
            "half": np.zeros(count, dtype=np.float64),
            "est": np.zeros(count, dtype=np.float64),
        }
        for m in methods
    }
    pi_f = float(cell.pi)
    for k, rep in enumerate(range(start, stop)):
        table = _cell_table(config, cell, rep)
        target = table.psi_db if config.setting == SETTING_DESIGN_BASED else cell.target
        est_mbcr = data_mbcr = None
        est_bern = data_bern = None
        if cell.needs_mbcr:
            asg = draw_mbcr(cell.layout, child_rng(config.seed, cell.idx, rep, _TAG_MBCR))
            data_mbcr = ObservedData.realize(table, asg)
            est_mbcr = ht_mbcr(data_mbcr)
        if cell.needs_bern:
            asg = draw_bernoulli(
                cell.n, pi_f, child_rng(config.seed, cell.idx, rep, _TAG_BERN)
            )
            data_bern = ObservedData.realize(table, asg)
            est_bern = ht_standard(data_bern, pi_f)
        for m in methods:
            if m == METHOD_HOEFF_MBCR:
                ci = hoeff_mbcr_ci(est_mbcr, cell.layout, cell.alpha)
                est = est_mbcr
            elif m == METHOD_SUB_BERNOULLI_MBCR:
                ci = sub_bernoulli_ci(
                    est_mbcr, cell.alpha, scheme="mbcr", layout=cell.layout
                )
                est = est_mbcr
            elif m == METHOD_STUDENTIZED:
                ci = studentized_ci(data_mbcr, cell.alpha)
                est = est_mbcr
            elif m == METHOD_SUB_BERNOULLI_BERN:
                ci = sub_bernoulli_ci(
                    est_bern, cell.alpha, scheme="bernoulli", n=cell.n, pi=pi_f
                )
                est = est_bern
            elif m == METHOD_NAIVE_HOEFFDING:
                ci = naive_hoeffding_ci(est_bern, cell.n, pi_f, cell.alpha)
                est = est_bern
            elif m == METHOD_STUDENTIZED_BERN:
                ci = studentized_ci(data_bern, cell.alpha)
                est = est_bern
            elif m == METHOD_CLT:
                try:
                    ci = clt_ci(data_bern, pi_f, cell.alpha)
                except ValueError:
                    # Empty arm on this draw; record a miss of width zero.
                    out[m]["est"][k] = est_bern
                    continue
                est = est_bern
            else:
                raise ConfigError(f"method {m!r} not usable in coverage runs")
            out[m]["covered"][k] = 1 if ci.contains(target) else 0
            out[m]["half"][k] = ci.half_width
            out[m]["est"][k] = est
    return out


def _run_cells(config, cells, chunk_fn, workers: int):
    """Run chunk_fn over every (cell, replication range), merging by index.

    Chunk boundaries never influence the results: every replication owns its
    own seed path and lands at its absolute index during the merge, so any
    worker count produces identical reports.
    """
    reps = config.replications
    chunk = max(1, math.ceil(reps / max(1, workers * 4)))
    tasks = [
        (cell, start, min(start + chunk, reps))
        for cell in cells
        for start in range(0, reps, chunk)
    ]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outs = list(
                pool.map(
                    chunk_fn,
                    [config] * len(tasks),
                    [t[0] for t in tasks],
                    [t[1] for t in tasks],
                    [t[2] for t in tasks],
                )
            )
    else:
        outs = [chunk_fn(config, cell, start, stop) for cell, start, stop in tasks]
    merged: dict[int, dict[str, dict[str, np.ndarray]]] = {}
    for (cell, start, stop), out in zip(tasks, outs):
        dest = merged.setdefault(cell.idx, {})
        for m, arrays in out.items():
            slot = dest.setdefault(
                m,
                {
                    key: np.zeros(reps, dtype=arr.dtype)
                    for key, arr in arrays.items()
                },
            )
            for key, arr in arrays.items():
                slot[key][start:stop] = arr
    return merged


def resolve_workers(requested: int | None) -> int:
    env = os.environ.get("TIGHTCI_THREADS")
    if env is not None:
        try:
            value = int(env)
        except ValueError:
            raise ConfigError(f"TIGHTCI_THREADS must be an integer, got {env!r}")
        if value < 1:
            raise ConfigError(f"TIGHTCI_THREADS must be >= 1, got {value}")
        return value
    if requested is None:
        return 1
    if requested < 1:
        raise ConfigError(f"worker count must be >= 1, got {requested}")
    return requested


def run_coverage(config: ExperimentConfig, workers: int = 1) -> Report:
    """Monte Carlo containment rates and widths over the config grid."""
    cells = _build_cells(config)
    for cell in cells:
        if cell.mbcr_skip_reason:
            log.warning(
                "cell (n=%d, pi=%s, alpha=%g): skipping grouped methods: %s",
                cell.n,
                cell.pi,
                cell.alpha,
                cell.mbcr_skip_reason,
            )
    merged = _run_cells(config, cells, _coverage_chunk, workers)
    rows = []
    reps = config.replications
    for cell in cells:
        for m in _methods_for_cell(config, cell):
            arrays = merged[cell.idx][m]
            p = float(arrays["covered"].mean())
            mean_half = float(arrays["half"].mean())
            rmse = float(np.sqrt(np.mean((arrays["est"] - cell.target) ** 2)))
            rows.append(
                {
                    "schema_version": SCHEMA_VERSION,
                    "method": m,
                    "n": cell.n,
                    "pi": float(cell.pi),
                    "alpha": cell.alpha,
                    "coverage_rate": p,
                    "coverage_se": math.sqrt(p * (1.0 - p) / reps),
                    "mean_halfwidth": mean_half,
                    "width_times_sqrt_npi": mean_half
                    * math.sqrt(cell.n * float(cell.pi)),
                    "rmse": rmse,
                    "rmse_bound": None,
                    "replications": reps,
                    "seed": config.seed,
                }
            )
    return Report(EXPERIMENT_COVERAGE, REPORT_COLUMNS, rows)


# ---------------------------------------------------------------------------
# Width-scaling experiment (closed forms, no replication)


def run_width_scaling(config: ExperimentConfig) -> Report:
    """Closed-form half-widths and their sqrt(n pi) scalings per grid cell."""
    cells = _build_cells(config)
    rows = []
    for cell in cells:
        pi_f = float(cell.pi)
        for m in _methods_for_cell(config, cell):
            if m == METHOD_HOEFF_MBCR:
                half = hoeff_mbcr_ci(0.0, cell.layout, cell.alpha).half_width
            elif m == METHOD_SUB_BERNOULLI_MBCR:
                half = sub_bernoulli_ci(
                    0.0, cell.alpha, scheme="mbcr", layout=cell.layout
                ).half_width
            elif m == METHOD_SUB_BERNOULLI_BERN:
                half = sub_bernoulli_ci(
                    0.0, cell.alpha, scheme="bernoulli", n=cell.n, pi=pi_f
                ).half_width
            elif m == METHOD_NAIVE_HOEFFDING:
                half = naive_hoeffding_ci(0.0, cell.n, pi_f, cell.alpha).half_width
            else:
                raise ConfigError(f"method {m!r} has no closed-form width")
            rows.append(
                {
                    "schema_version": SCHEMA_VERSION,
                    "method": m,
                    "n": cell.n,
                    "pi": pi_f,
                    "alpha": cell.alpha,
                    "coverage_rate": None,
                    "coverage_se": None,
                    "mean_halfwidth": half,
                    "width_times_sqrt_npi": half * math.sqrt(cell.n * pi_f),
                    "rmse": None,
                    "rmse_bound": None,
                    "replications": 0,
                    "seed": config.seed,
                }
            )
        if cell.mbcr_skip_reason:
            log.warning(
                "cell (n=%d, pi=%s): skipping grouped methods: %s",
                cell.n,
                cell.pi,
                cell.mbcr_skip_reason,
            )
    return Report(EXPERIMENT_WIDTH_SCALING, REPORT_COLUMNS, rows)


# ---------------------------------------------------------------------------
# RMSE experiment


def _rmse_chunk(
    config: ExperimentConfig, cell: _Cell, start: int, stop: int
) -> dict[str, dict[str, np.ndarray]]:
    methods = _methods_for_cell(config, cell)
    count = stop - start
    out = {m: {"est": np.zeros(count, dtype=np.float64)} for m in methods}
    pi_f = float(cell.pi)
    for k, rep in enumerate(range(start, stop)):
        table = _cell_table(config, cell, rep)
        for m in methods:
            if m == METHOD_HT_MBCR:
                asg = draw_mbcr(
                    cell.layout, child_rng(config.seed, cell.idx, rep, _TAG_MBCR)
                )
                out[m]["est"][k] = ht_mbcr(ObservedData.realize(table, asg))
            else:
                asg = draw_bernoulli(
                    cell.n, pi_f, child_rng(config.seed, cell.idx, rep, _TAG_BERN)
                )
                out[m]["est"][k] = ht_standard(
                    ObservedData.realize(table, asg), pi_f
                )
    return out


def rmse_bound(method: str, n: int, pi: float) -> float:
    """Theoretical root-mean-square-error bound for each estimator."""
    if method == METHOD_HT_MBCR:
        return 2.0 / math.sqrt(n * pi)
    if method == METHOD_HT_BERNOULLI:
        return math.sqrt(2.0 / (n * pi))
    raise ConfigError(f"no RMSE bound for method {method!r}")


def run_rmse(config: ExperimentConfig, workers: int = 1) -> Report:
    """Monte Carlo estimator RMSE next to its theoretical bound."""
    cells = _build_cells(config)
    merged = _run_cells(config, cells, _rmse_chunk, workers)
    rows = []
    for cell in cells:
        if cell.mbcr_skip_reason:
            log.warning(
                "cell (n=%d, pi=%s): skipping grouped methods: %s",
                cell.n,
                cell.pi,
                cell.mbcr_skip_reason,
            )
        for m in _methods_for_cell(config, cell):
            est = merged[cell.idx][m]["est"]
            rmse = float(np.sqrt(np.mean((est - cell.target) ** 2)))
            rows.append(
                {
                    "schema_version": SCHEMA_VERSION,
                    "method": m,
                    "n": cell.n,
                    "pi": float(cell.pi),
                    "alpha": cell.alpha,
                    "coverage_rate": None,
                    "coverage_se": None,
                    "mean_halfwidth": None,
                    "width_times_sqrt_npi": None,
                    "rmse": rmse,
                    "rmse_bound": rmse_bound(m, cell.n, float(cell.pi)),
                    "replications": config.replications,
                    "seed": config.seed,
                }
            )
    return Report(EXPERIMENT_RMSE, REPORT_COLUMNS, rows)


# ---------------------------------------------------------------------------
# Equivalence experiment


def run_equivalence(
    n: int,
    n1: int,
    budget: int = DEFAULT_ENUMERATION_BUDGET,
    approximate: bool = False,
    draws: int = 200_000,
    seed: int = 0,
) -> Report:
    """Exact (or, on request, approximate) check that grouped draws are
    uniform over all arrangements of ``n1`` treated among ``n`` units.

    The exact path enumerates every permutation tuple and requires equality
    of integer counts.  The approximate path is a Monte Carlo chi-square
    goodness-of-fit screen, reported as approximate and never as proof.
    """
    layout = compute_layout(n, n1)
    if not approximate:
        dist = enumerate_mbcr_distribution(layout, budget=budget)
        if not dist.is_uniform():
            raise RuntimeError(
                f"exact enumeration for (n={n}, n1={n1}) is not uniform over "
                "assignments; the grouped sampler violates its distributional "
                "contract"
            )
        rows = []
        for z in sorted(dist.counts):
            prob = dist.probability(z)
            rows.append(
                {
                    "schema_version": SCHEMA_VERSION,
                    "n": n,
                    "n1": n1,
                    "assignment": "".join(str(v) for v in z),
                    "count": dist.counts[z],
                    "total": dist.total,
                    "probability": f"{prob.numerator}/{prob.denominator}",
                }
            )
        report = Report(EXPERIMENT_EQUIVALENCE, EQUIVALENCE_COLUMNS, rows)
        report.summary = {
            "exact": True,
            "uniform": dist.is_uniform(),
            "total": dist.total,
            "distinct_assignments": len(dist.counts),
        }
        return report
    rng = child_rng(seed, 0, 0, _TAG_EQUIV)
    counts: dict[tuple[int, ...], int] = {}
    for _ in range(draws):
        z = tuple(int(v) for v in draw_mbcr(layout, rng).z)
        counts[z] = counts.get(z, 0) + 1
    import itertools as _it

    support = []
    for ones in _it.combinations(range(n), n1):
        z = [0] * n
        for i in ones:
            z[i] = 1
        support.append(tuple(z))
    observed = np.array([counts.get(z, 0) for z in support], dtype=np.float64)
    stat, pvalue = chisquare(observed)
    rows = [
        {
            "schema_version": SCHEMA_VERSION,
            "n": n,
            "n1": n1,
            "assignment": "".join(str(v) for v in z),
            "count": counts.get(z, 0),
            "total": draws,
            "probability": f"{counts.get(z, 0)}/{draws}",
        }
        for z in support
    ]
    report = Report(EXPERIMENT_EQUIVALENCE, EQUIVALENCE_COLUMNS, rows)
    report.summary = {
        "exact": False,
        "approximate": True,
        "chi2_statistic": float(stat),
        "chi2_pvalue": float(pvalue),
        "draws": draws,
        "note": "Monte Carlo screen only, not a proof of equivalence",
    }
    return report


# ---------------------------------------------------------------------------
# Dispatch and serialization


def run_experiment(config: ExperimentConfig, workers: int = 1) -> Report:
    if config.experiment == EXPERIMENT_COVERAGE:
        return run_coverage(config, workers=workers)
    if config.experiment == EXPERIMENT_WIDTH_SCALING:
        return run_width_scaling(config)
    if config.experiment == EXPERIMENT_RMSE:
        return run_rmse(config, workers=workers)
    if config.experiment == EXPERIMENT_EQUIVALENCE:
        return run_equivalence(
            config.n,
            config.n1,
            budget=config.budget,
            approximate=config.approximate,
            draws=config.draws,
            seed=config.seed,
        )
    raise ConfigError(f"unknown experiment {config.experiment!r}")


def config_sha256(raw: dict) -> str:
    canonical = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def write_outputs(out_dir, report: Report, config: ExperimentConfig) -> dict[str, Path]:
    """Write <experiment>.csv and manifest.json; contents are reproducible."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_name = f"{report.experiment}.csv"
    csv_bytes = report.to_csv_bytes()
    csv_path = out / csv_name
    csv_path.write_bytes(csv_bytes)
    manifest = {
        "tool": "tightci",
        "tool_version": TOOL_VERSION,
        "schema_version": SCHEMA_VERSION,
        "experiment": report.experiment,
        "seed": config.seed,
        "config_sha256": config_sha256(config.raw),
        "outputs": {csv_name: hashlib.sha256(csv_bytes).hexdigest()},
        "summary": report.summary,
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return {"csv": csv_path, "manifest": manifest_path}
