"""Command-line front end.

Subcommands: ``ci`` computes one interval from an observed-data CSV;
``simulate`` runs any experiment config; ``scaling``, ``rmse``, and
``equivalence`` are typed wrappers for their experiments.  Exit codes:
0 success, 1 validation error (bad flags, schemas, or incompatible
method/scheme combinations), 2 runtime error.

The ``--alpha`` flag is always the total miscoverage of the printed
interval.  Closed-form methods use it directly; the Studentized interval's
underlying construction is two one-sided bounds, so the CLI halves the
requested miscoverage before building it.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import __version__
from .design import (
    Assignment,
    DesignError,
    MbcrDraw,
    SCHEME_BERNOULLI,
    SCHEME_COMPLETE,
    SCHEME_MBCR,
    compute_layout,
    draw_mbcr,
    inverse_permutation,
)
from .dgp import DgpError
from .estimator import EstimatorError, ObservedData, ht_mbcr, ht_standard
from .harness import (
    SCHEMA_VERSION,
    ConfigError,
    EXPERIMENT_EQUIVALENCE,
    EXPERIMENT_RMSE,
    EXPERIMENT_WIDTH_SCALING,
    load_config,
    parse_config,
    resolve_workers,
    run_experiment,
    write_outputs,
)
from .intervals import (
    Interval,
    IntervalError,
    METHOD_CLT,
    METHOD_HOEFF_MBCR,
    METHOD_NAIVE_HOEFFDING,
    METHOD_STUDENTIZED,
    METHOD_SUB_BERNOULLI_BERN,
    METHOD_SUB_BERNOULLI_MBCR,
    METHODS,
    clt_ci,
    hoeff_mbcr_ci,
    naive_hoeffding_ci,
    studentized_ci,
    sub_bernoulli_ci,
)

_VALIDATION_ERRORS = (
    ConfigError,
    DesignError,
    DgpError,
    EstimatorError,
    IntervalError,
)


class CliError(ValueError):
    """Bad command-line input."""


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors surface as validation failures."""

    def error(self, message):
        raise CliError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tightci", description=__doc__)
    parser.add_argument(
        "--version",
        action="version",
        version=f"tightci {__version__} (report schema {SCHEMA_VERSION})",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_ci = sub.add_parser("ci", help="compute one confidence interval from a data file")
    p_ci.add_argument("--data", required=True, help="CSV with columns y,z (mbcr data may add beta,eta)")
    p_ci.add_argument(
        "--scheme",
        required=True,
        choices=[SCHEME_BERNOULLI, SCHEME_COMPLETE, SCHEME_MBCR],
    )
    p_ci.add_argument("--method", required=True, choices=list(METHODS))
    p_ci.add_argument("--pi", type=float, help="propensity (bernoulli scheme)")
    p_ci.add_argument("--n1", type=int, help="treated count (complete/mbcr schemes)")
    p_ci.add_argument("--alpha", type=float, default=0.05, help="total miscoverage")
    p_ci.add_argument("--clip", action="store_true", help="clip endpoints to [-1, 1]")
    p_ci.add_argument("--assignment", help="CSV with columns beta,eta for mbcr data")
    p_ci.add_argument(
        "--seed", type=int, help="regenerate the mbcr permutations from this seed"
    )
    p_ci.add_argument("--json", action="store_true", help="machine-readable output")

    p_sim = sub.add_parser("simulate", help="run an experiment config")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--out", required=True)
    p_sim.add_argument("--workers", type=int, default=None)

    p_scale = sub.add_parser("scaling", help="run a width-scaling config")
    p_scale.add_argument("--config", required=True)
    p_scale.add_argument("--out", required=True)

    p_rmse = sub.add_parser("rmse", help="run an estimator-RMSE config")
    p_rmse.add_argument("--config", required=True)
    p_rmse.add_argument("--out", required=True)
    p_rmse.add_argument("--workers", type=int, default=None)

    p_eq = sub.add_parser(
        "equivalence", help="verify grouped draws are uniform over assignments"
    )
    p_eq.add_argument("--n", type=int, required=True)
    p_eq.add_argument("--n1", type=int, required=True)
    p_eq.add_argument("--budget", type=int, default=None)
    p_eq.add_argument(
        "--approximate",
        action="store_true",
        help="Monte Carlo chi-square screen instead of exact enumeration",
    )
    p_eq.add_argument("--draws", type=int, default=200_000)
    p_eq.add_argument("--seed", type=int, default=0)
    p_eq.add_argument("--out", required=True)
    return parser


# ---------------------------------------------------------------------------
# ci subcommand


def _read_columns(path, required: tuple[str, ...], optional: tuple[str, ...] = ()):
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot open {path}: {exc}")
    with fh:
        reader = csv.DictReader(fh)
        names = [f.strip() for f in reader.fieldnames or []]
        missing = [c for c in required if c not in names]
        if missing:
            raise CliError(
                f"{path}: missing column(s) {missing}; header was {names}"
            )
        cols: dict[str, list[float]] = {c: [] for c in names}
        for i, row in enumerate(reader):
            for c in names:
                value = row.get(c)
                if value is None or value == "":
                    raise CliError(f"{path}: row {i + 2}: empty field {c!r}")
                try:
                    cols[c].append(float(value))
                except ValueError:
                    raise CliError(f"{path}: row {i + 2}: bad value {value!r} in {c!r}")
    present_optional = [c for c in optional if c in names]
    return cols, present_optional


def _validate_perm(name: str, values: np.ndarray, n: int) -> np.ndarray:
    perm = values.astype(np.int64)
    if not np.array_equal(np.asarray(values, dtype=float), perm.astype(float)):
        raise CliError(f"{name} column must contain integers")
    if not np.array_equal(np.sort(perm), np.arange(n)):
        raise CliError(f"{name} column is not a permutation of 0..{n - 1}")
    return perm


def _mbcr_assignment(args, y: np.ndarray, z: np.ndarray, perm_cols) -> Assignment:
    n = y.shape[0]
    if args.n1 is None:
        raise CliError("scheme mbcr needs --n1")
    layout = compute_layout(n, args.n1)
    if int(z.sum()) != args.n1:
        raise CliError(f"data has {int(z.sum())} treated units but --n1 is {args.n1}")
    have_cols = perm_cols is not None
    if have_cols and args.seed is not None:
        raise CliError(
            "ambiguous mbcr input: both permutation columns and --seed given; "
            "supply exactly one"
        )
    if not have_cols and args.seed is None:
        raise CliError(
            "mbcr data needs its permutation detail: give beta,eta columns "
            "(in --data or --assignment) or a --seed to regenerate the draw"
        )
    if have_cols:
        beta = _validate_perm("beta", perm_cols["beta"], n)
        eta = _validate_perm("eta", perm_cols["eta"], n)
        for block in layout.slot_blocks():
            if not np.array_equal(np.sort(beta[block]), block):
                raise CliError("beta column does not preserve the group blocks")
    else:
        drawn = draw_mbcr(layout, np.random.default_rng(args.seed))
        beta, eta = drawn.mbcr.beta, drawn.mbcr.eta
    expected = layout.allocation_vector()[beta][eta]
    if not np.array_equal(expected, z.astype(np.int8)):
        raise CliError(
            "assignment detail does not reproduce the data's z column; "
            "check the permutations or the --seed"
        )
    inv_eta = inverse_permutation(eta)
    groups = tuple(inv_eta[b] for b in layout.slot_blocks())
    detail = MbcrDraw(layout=layout, beta=beta, eta=eta, groups=groups)
    return Assignment(
        z=z.astype(np.int8),
        scheme=SCHEME_MBCR,
        pi=args.n1 / n,
        n1=args.n1,
        mbcr=detail,
    )


def _compute_ci(args) -> Interval:
    if not (0.0 < args.alpha < 1.0):
        raise CliError(f"--alpha must lie in (0, 1), got {args.alpha}")
    cols, extras = _read_columns(args.data, required=("y", "z"), optional=("beta", "eta"))
    y = np.asarray(cols["y"], dtype=np.float64)
    z_raw = np.asarray(cols["z"], dtype=np.float64)
    if not np.all(np.isin(z_raw, (0.0, 1.0))):
        raise CliError("z column must be 0/1")
    z = z_raw.astype(np.int8)
    if y.size == 0:
        raise CliError(f"{args.data}: no data rows")
    if y.min() < 0.0 or y.max() > 1.0:
        raise CliError("y values must lie in [0, 1]; rescale the outcomes first")
    n = y.shape[0]

    perm_cols = None
    if "beta" in extras and "eta" in extras:
        perm_cols = {"beta": np.asarray(cols["beta"]), "eta": np.asarray(cols["eta"])}
    if args.assignment:
        if perm_cols is not None:
            raise CliError(
                "ambiguous mbcr input: permutation columns appear in both "
                "--data and --assignment"
            )
        acols, _ = _read_columns(args.assignment, required=("beta", "eta"))
        perm_cols = {
            "beta": np.asarray(acols["beta"]),
            "eta": np.asarray(acols["eta"]),
        }

    scheme, method = args.scheme, args.method
    if scheme == SCHEME_BERNOULLI:
        if args.pi is None:
            raise CliError("scheme bernoulli needs --pi")
        if args.n1 is not None:
            raise CliError("--n1 applies to complete/mbcr schemes only")
        if not (0.0 < args.pi <= 0.5):
            raise CliError(
                f"--pi {args.pi} outside (0, 1/2]; relabel arms so the smaller "
                "one is treatment"
            )
        pi = args.pi
    else:
        if args.n1 is None:
            raise CliError(f"scheme {scheme} needs --n1")
        if args.pi is not None:
            raise CliError("--pi applies to the bernoulli scheme only")
        if int(z.sum()) != args.n1:
            raise CliError(
                f"data has {int(z.sum())} treated units but --n1 is {args.n1}"
            )
        pi = args.n1 / n

    if scheme == SCHEME_MBCR:
        if method not in (
            METHOD_HOEFF_MBCR,
            METHOD_SUB_BERNOULLI_MBCR,
            METHOD_STUDENTIZED,
        ):
            raise CliError(
                f"method {method} does not apply to mbcr data; use hoeff-mbcr, "
                "sub-bernoulli-mbcr, or studentized"
            )
        assignment = _mbcr_assignment(args, y, z, perm_cols)
        data = ObservedData(y=y, assignment=assignment)
        if method == METHOD_HOEFF_MBCR:
            return hoeff_mbcr_ci(ht_mbcr(data), assignment.mbcr.layout, args.alpha)
        if method == METHOD_SUB_BERNOULLI_MBCR:
            return sub_bernoulli_ci(
                ht_mbcr(data), args.alpha, scheme=SCHEME_MBCR,
                layout=assignment.mbcr.layout,
            )
        return studentized_ci(data, args.alpha / 2.0)

    if perm_cols is not None:
        raise CliError("beta/eta permutation detail only applies to scheme mbcr")

    assignment = Assignment(z=z, scheme=scheme, pi=pi,
                            n1=args.n1 if scheme == SCHEME_COMPLETE else None)
    data = ObservedData(y=y, assignment=assignment)

    if method == METHOD_HOEFF_MBCR:
        if scheme != SCHEME_COMPLETE:
            raise CliError(
                "hoeff-mbcr does not apply to bernoulli data; use "
                "sub-bernoulli-bern or studentized"
            )
        layout = compute_layout(n, args.n1)
        if layout.tail_treated != 0:
            raise CliError(
                "hoeff-mbcr on plain complete data needs groups that tile the "
                "sample (n1 dividing n); otherwise draw with scheme mbcr and "
                "pass the permutation detail"
            )
        return hoeff_mbcr_ci(ht_standard(data, pi), layout, args.alpha)
    if method == METHOD_SUB_BERNOULLI_MBCR:
        raise CliError("sub-bernoulli-mbcr needs mbcr data with its draw detail")
    if method == METHOD_SUB_BERNOULLI_BERN:
        return sub_bernoulli_ci(
            ht_standard(data, pi), args.alpha, scheme=SCHEME_BERNOULLI, n=n, pi=pi
        )
    if method == METHOD_NAIVE_HOEFFDING:
        return naive_hoeffding_ci(ht_standard(data, pi), n, pi, args.alpha)
    if method == METHOD_CLT:
        return clt_ci(data, pi, args.alpha)
    if method == METHOD_STUDENTIZED:
        if scheme != SCHEME_BERNOULLI:
            raise CliError(
                "studentized under complete randomization needs the grouped "
                "draw detail; rerun with scheme mbcr"
            )
        return studentized_ci(data, args.alpha / 2.0)
    raise CliError(f"unknown method {method!r}")


def _json_ready(value):
    if isinstance(value, dict):
        return {k: _json_ready(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_ready(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    return value


def cmd_ci(args) -> int:
    interval = _compute_ci(args)
    if args.clip:
        interval = interval.clipped()
    payload = {
        "method": interval.method,
        "alpha": interval.alpha,
        "lower": interval.lower,
        "upper": interval.upper,
        "half_width": interval.half_width,
        "tuning": _json_ready(interval.tuning),
    }
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        print(f"method:     {interval.method}")
        print(f"alpha:      {interval.alpha!r}")
        print(f"lower:      {interval.lower!r}")
        print(f"upper:      {interval.upper!r}")
        print(f"half_width: {interval.half_width!r}")
        for key in sorted(interval.tuning):
            print(f"tuning.{key}: {interval.tuning[key]!r}")
    return 0


# ---------------------------------------------------------------------------
# harness subcommands


def _run_config(args, expected_experiment: str | None = None) -> int:
    config = load_config(args.config)
    if expected_experiment and config.experiment != expected_experiment:
        raise CliError(
            f"{args.config}: experiment is {config.experiment!r}, but this "
            f"subcommand runs {expected_experiment!r} configs"
        )
    workers = resolve_workers(getattr(args, "workers", None))
    report = run_experiment(config, workers=workers)
    paths = write_outputs(args.out, report, config)
    print(f"wrote {paths['csv']}")
    print(f"wrote {paths['manifest']}")
    return 0


def cmd_simulate(args) -> int:
    return _run_config(args)


def cmd_scaling(args) -> int:
    return _run_config(args, expected_experiment=EXPERIMENT_WIDTH_SCALING)


def cmd_rmse(args) -> int:
    return _run_config(args, expected_experiment=EXPERIMENT_RMSE)


def cmd_equivalence(args) -> int:
    raw = {
        "experiment": EXPERIMENT_EQUIVALENCE,
        "seed": args.seed,
        "n": args.n,
        "n1": args.n1,
        "approximate": bool(args.approximate),
        "draws": args.draws,
    }
    if args.budget is not None:
        raw["budget"] = args.budget
    config = parse_config(raw)
    report = run_experiment(config)
    paths = write_outputs(args.out, report, config)
    print(f"wrote {paths['csv']}")
    print(f"wrote {paths['manifest']}")
    for key, value in sorted(report.summary.items()):
        print(f"{key}: {value}")
    return 0


COMMANDS = {
    "ci": cmd_ci,
    "simulate": cmd_simulate,
    "scaling": cmd_scaling,
    "rmse": cmd_rmse,
    "equivalence": cmd_equivalence,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --version or --help
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except (CliError, *_VALIDATION_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main_entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    raise SystemExit(main())
