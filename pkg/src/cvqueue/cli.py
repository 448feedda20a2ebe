"""Command-line front end: sweeps, acceptance suites, figure data, oracles.

Exit codes: 0 success, 1 an acceptance criterion failed, 2 usage or
configuration error (argparse uses 2 for bad flags as well).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional

from .core import (
    ConfigError,
    LAMBDA_GRID,
    P_GRID_FULL,
    RunConfig,
    parse_config_text,
)
from .harness import (
    BudgetError,
    DEFAULT_BUDGET,
    DEFAULT_SEED,
    ExperimentSpec,
    FIGURES,
    RHO_GRID,
    SUITES,
    emit_figure_data,
    lam_for_rho,
    run_acceptance,
    run_sweep,
    verdicts_to_json,
)
from .oracle import ORACLE_RUNNERS, run_oracle
from .overflow import OVERFLOW_KINDS, OverflowModel

__all__ = ["main", "build_parser"]


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value run configuration file")
    parser.add_argument("--seed", type=int, default=None, help="master RNG seed")
    parser.add_argument("--out", default=None, help="output directory (or file for accept)")
    parser.add_argument(
        "--budget",
        type=int,
        default=None,
        help="max total simulated cycles; runs that need more are refused",
    )
    parser.add_argument(
        "--workers", type=int, default=1, help="process count (results are identical at any value)"
    )


def _load_config(path: Optional[str]) -> Optional[RunConfig]:
    if path is None:
        return None
    with open(path) as fh:
        return parse_config_text(fh.read())


def _sensor_modes(mode: str) -> tuple:
    return ("on", "off") if mode == "both" else (mode,)


def _cmd_sweep(args: argparse.Namespace) -> int:
    run = _load_config(args.config)
    grid = args.grid or ("cell" if run else "noq")
    estimator = args.estimator or (run.estimator if run else None)
    sensor = args.sensor or (run.sensor if run else "both")
    model_kind = args.overflow_model or (run.overflow_model if run else "akcelik")
    seed = args.seed if args.seed is not None else (run.seed if run else DEFAULT_SEED)

    if grid == "cell":
        if run is None:
            raise ConfigError("--grid cell needs --config to supply the (lambda, p) cell")
        lambdas: tuple = (run.signal.lam,)
        ps: tuple = (run.signal.p,)
        with_overflow = (estimator or run.estimator) != "known_no_q"
        cycles = args.cycles or run.cycles
        replications = args.replications or run.replications
    elif grid == "noq":
        lambdas, ps = LAMBDA_GRID, P_GRID_FULL
        with_overflow = False
        cycles = args.cycles or 100_000
        replications = args.replications or 1
    elif grid == "overflow":
        lambdas = tuple(lam_for_rho(r) for r in RHO_GRID)
        ps = P_GRID_FULL
        with_overflow = True
        cycles = args.cycles or 1100
        replications = args.replications or 3
    else:  # pragma: no cover - argparse choices guard this
        raise ConfigError(f"unknown grid {grid!r}")

    if estimator is None:
        estimator = "known_with_q" if with_overflow else "known_no_q"
    warmup = 100 if with_overflow and cycles > 100 else 0
    spec = ExperimentSpec(
        lambda_values=lambdas,
        p_values=ps,
        estimators=(estimator,),
        sensor_modes=_sensor_modes(sensor),
        overflow_model=OverflowModel(kind=model_kind),
        with_overflow=with_overflow,
        cycles=cycles,
        replications=replications,
        warmup=warmup,
        seed=seed,
        budget=args.budget if args.budget is not None else DEFAULT_BUDGET,
        red=run.signal.red if run else 45.0,
        green=run.signal.green if run else 43.2,
        discharge_headway=run.signal.discharge_headway if run else 1.8,
        emit_records=bool(args.out) and with_overflow,
    )
    result = run_sweep(spec, workers=args.workers)
    if args.out:
        for path in result.write(args.out):
            print(path)
    else:
        sys.stdout.write(result.cells_csv_text())
    return 0


_SUITE_PLANNED_CYCLES = {
    "noq": 42 * 100_000,
    "overflow": 44 * 3 * 1100 + 4 * 1100,
    "identities": 0,
    "oracles": 2 * (2 * 150 + 2 * 20_000),
}
_SUITE_PLANNED_CYCLES["all"] = sum(
    _SUITE_PLANNED_CYCLES[s] for s in ("noq", "overflow", "identities", "oracles")
)


def _cmd_accept(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else DEFAULT_SEED
    planned = _SUITE_PLANNED_CYCLES[args.suite]
    if args.budget is not None and planned > args.budget:
        raise BudgetError(
            f"suite {args.suite!r} needs about {planned} simulated cycles, over "
            f"the budget of {args.budget}"
        )
    verdicts = run_acceptance(args.suite, seed=seed, workers=args.workers)
    for verdict in verdicts:
        print(verdict.line())
    text = verdicts_to_json(verdicts)
    if args.out:
        out_path = args.out
        if os.path.isdir(out_path) or out_path.endswith(os.sep):
            os.makedirs(out_path, exist_ok=True)
            out_path = os.path.join(out_path, "verdicts.json")
        with open(out_path, "w") as fh:
            fh.write(text)
        print(out_path)
    else:
        sys.stdout.write(text)
    return 0 if all(v.passed for v in verdicts) else 1


def _cmd_figure(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else DEFAULT_SEED
    path = emit_figure_data(
        args.figure, args.out or ".", seed=seed, workers=args.workers
    )
    print(path)
    return 0


def _cmd_oracle(args: argparse.Namespace) -> int:
    run = _load_config(args.config)
    cfg = run.signal if run else None
    if cfg is None:
        from .core import SignalDemandConfig

        cfg = SignalDemandConfig(lam=0.239, p=0.3)
    kwargs: dict = {}
    if args.quantity in ("e_t", "e_t_prime", "e_l", "e_l_prime", "p_no_cv",
                         "p_not_last", "v_d_off", "v_d_on", "t_distribution"):
        kwargs["seed"] = args.seed if args.seed is not None else 0
        if args.n:
            kwargs["n"] = args.n
    elif args.quantity in ("overflow_mean", "overflow_variance", "scenario_probs",
                           "approx_e_n", "steady_e_n", "approx_v_d_off", "approx_v_d_on"):
        kwargs["seed"] = args.seed if args.seed is not None else 0
        if args.n:
            kwargs["n_cycles"] = args.n
        if args.overflow_model:
            kwargs["model"] = OverflowModel(kind=args.overflow_model)
    report = run_oracle(args.quantity, cfg, **kwargs)
    text = json.dumps(report.to_json_dict(), indent=2) + "\n"
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, f"oracle_{args.quantity}.json")
        with open(path, "w") as fh:
            fh.write(text)
        print(path)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cvqueue",
        description=(
            "Queue-length estimation at a fixed-time signal from connected "
            "vehicles: sweeps, acceptance suites, figure data, and oracles."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sweep = sub.add_parser("sweep", help="run a (lambda, p) grid and write summaries")
    _add_common(p_sweep)
    p_sweep.add_argument(
        "--grid",
        choices=("noq", "overflow", "cell"),
        default=None,
        help="grid shape; defaults to 'cell' with --config, else 'noq'",
    )
    p_sweep.add_argument("--estimator", default=None, help="estimator name")
    p_sweep.add_argument("--sensor", choices=("on", "off", "both"), default=None)
    p_sweep.add_argument("--overflow-model", choices=OVERFLOW_KINDS, default=None)
    p_sweep.add_argument("--cycles", type=int, default=None)
    p_sweep.add_argument("--replications", type=int, default=None)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_accept = sub.add_parser("accept", help="run an acceptance suite and emit verdicts")
    _add_common(p_accept)
    p_accept.add_argument(
        "--suite", choices=tuple(SUITES), default="all", help="criterion suite to run"
    )
    p_accept.set_defaults(func=_cmd_accept)

    p_fig = sub.add_parser("figure", help="emit one figure's CSV data")
    _add_common(p_fig)
    p_fig.add_argument("--figure", choices=FIGURES, required=True)
    p_fig.set_defaults(func=_cmd_figure)

    p_oracle = sub.add_parser("oracle", help="run one independent oracle and print its report")
    _add_common(p_oracle)
    p_oracle.add_argument("--quantity", choices=tuple(ORACLE_RUNNERS), required=True)
    p_oracle.add_argument("--n", type=int, default=None, help="sample size / cycle count")
    p_oracle.add_argument("--overflow-model", choices=OVERFLOW_KINDS, default=None)
    p_oracle.set_defaults(func=_cmd_oracle)

    return parser


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, BudgetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
