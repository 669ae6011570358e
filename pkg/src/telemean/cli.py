"""Experiment driver: run each estimator, sweep theta or eta for the
scaling laws, cross-check the simulator against the closed-form oracle,
and emit machine-readable reports.

Every command is a pure function of (flags, seed): reruns with the same
arguments produce byte-identical outputs. Exit codes: 0 success, 1 failed
oracle check, 2 validation error, 3 runtime cap (restart cap, step
budget, or unwrap failure).
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from .baseline import classical_mean_estimate
from .datasets import Dataset, load_dataset, parse_gen_spec
from .distributed import run_distributed_estimator, run_epr_mean_protocol
from .errors import RestartCapError, SimulationError, UnwrapError, ValidationError
from .kick import (
    KickParams,
    amplitude_oracle,
    branch_kick_amplitudes,
    estimate_mean_serial,
    run_pipeline,
    theta_schedule,
    wrap_angle,
)
from .reports import render_csv, render_json
from .rng import RandomStream, derive_seed

__all__ = ["main"]

# child indices reserved by the commands; estimators use 0..1+eta internally
_DATASET_CHILD = 10_000
_SCHEDULE_CHILD = 20_000
_ORACLE_CHILD = 30_000

_EXACT_FLOOR = 1e-13  # below this a sweep column is reported as exact


def _add_dataset_flags(parser: argparse.ArgumentParser) -> None:
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--data", help="dataset file: one real per line, or a JSON array")
    source.add_argument(
        "--gen",
        help='generator spec: "uniform:mu=<m>[,n=<N>]", "constant:c=<v>[,n=<N>]", '
        '"zeros[:n=<N>]", or "list:<v1>;<v2>;..."',
    )
    parser.add_argument(
        "--truncate",
        action="store_true",
        help="truncate a loaded dataset to the largest power-of-two prefix",
    )


def _add_output_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    parser.add_argument("--out", help="report path (default: stdout)")
    parser.add_argument(
        "--format", choices=("json", "csv"), default="json", help="report format"
    )


def _resolve_dataset(args: argparse.Namespace, master: RandomStream) -> Dataset:
    if args.data is not None:
        return load_dataset(args.data, truncate=args.truncate)
    return parse_gen_spec(args.gen, master.child(_DATASET_CHILD))


def _emit(payload: dict, args: argparse.Namespace) -> int:
    text = render_json(payload) if args.format == "json" else render_csv(payload)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _write_trace(trace, args: argparse.Namespace) -> None:
    if getattr(args, "trace", None):
        Path(args.trace).write_text(trace.to_jsonl(), encoding="utf-8")


def _require_theta(args: argparse.Namespace) -> float:
    if args.theta is None:
        raise ValidationError("--theta is required for this command")
    return args.theta


def _cmd_estimate_serial(args: argparse.Namespace) -> int:
    master = RandomStream(args.seed)
    dataset = _resolve_dataset(args, master)
    if args.schedule:
        theta0 = args.theta if args.theta is not None else 0.5
        probes = {"count": 0}

        def estimator(theta: float) -> float:
            # ideal readout makes the repetition count cancel, so r=1
            # keeps every probe O(N) even at the smallest theta
            rng = master.child(_SCHEDULE_CHILD + probes["count"])
            probes["count"] += 1
            report = estimate_mean_serial(
                dataset, theta, KickParams(r=1), rng, ideal=True
            )
            return report.mu_e

        schedule = theta_schedule(estimator, theta0=theta0)
        final = estimate_mean_serial(
            dataset,
            schedule.theta,
            KickParams(r=1),
            master.child(_SCHEDULE_CHILD + probes["count"]),
            ideal=True,
        )
        final.extras["schedule"] = {
            "theta": schedule.theta,
            "mu_e": schedule.mu_e,
            "reductions": schedule.reductions,
            "floored": schedule.floored,
            "history": [[t, m] for t, m in schedule.history],
        }
        return _emit(final.to_json_dict(), args)
    theta = _require_theta(args)
    params = KickParams(r=args.r, alpha=args.alpha)
    report = estimate_mean_serial(dataset, theta, params, master, ideal=args.ideal)
    return _emit(report.to_json_dict(), args)


def _cmd_estimate_epr(args: argparse.Namespace) -> int:
    master = RandomStream(args.seed)
    dataset = _resolve_dataset(args, master)
    report, trace = run_epr_mean_protocol(
        dataset, _require_theta(args), args.alpha, master, ideal=args.ideal
    )
    _write_trace(trace, args)
    return _emit(report.to_json_dict(), args)


def _cmd_estimate_distributed(args: argparse.Namespace) -> int:
    master = RandomStream(args.seed)
    dataset = _resolve_dataset(args, master)
    params = KickParams(r=args.r, alpha=args.alpha)
    report, trace = run_distributed_estimator(
        dataset,
        _require_theta(args),
        args.eta,
        params,
        master,
        force=args.force,
        ideal=args.ideal,
    )
    _write_trace(trace, args)
    return _emit(report.to_json_dict(), args)


def _cmd_baseline(args: argparse.Namespace) -> int:
    master = RandomStream(args.seed)
    dataset = _resolve_dataset(args, master)
    report = classical_mean_estimate(
        dataset, args.samples, master, exhaustive=args.exhaustive
    )
    return _emit(report.to_json_dict(), args)


def _parse_float_list(text: str, flag: str) -> list[float]:
    try:
        values = [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as err:
        raise ValidationError(f"{flag} expects comma-separated numbers") from err
    if len(values) < 3:
        raise ValidationError(f"{flag} needs at least 3 sweep points")
    if len(set(values)) != len(values):
        raise ValidationError(f"{flag} has repeated sweep points")
    return values


def _fit_or_exact(xs: list[float], ys: list[float]) -> float | str:
    if max(ys) < _EXACT_FLOOR:
        return "exact"
    floor = 1e-300  # keep log finite if a single point is exactly zero
    slope = np.polyfit(np.log(xs), np.log(np.maximum(ys, floor)), 1)[0]
    return float(slope)


def _cmd_sweep(args: argparse.Namespace) -> int:
    master = RandomStream(args.seed)
    dataset = _resolve_dataset(args, master)
    if (args.thetas is None) == (args.etas is None):
        raise ValidationError("pass exactly one of --thetas or --etas")
    n_sites = dataset.num_sites
    per_iter = 2 * dataset.n + 4 * n_sites + 2
    if args.thetas is not None:
        thetas = _parse_float_list(args.thetas, "--thetas")
        mu = dataset.mean
        points = []
        for theta in thetas:
            b0 = complex(branch_kick_amplitudes(dataset, theta)[0])
            r = KickParams(r=args.r).resolved_r(theta)
            points.append(
                {
                    "theta": theta,
                    "r": r,
                    "phase_error": abs(wrap_angle(float(np.angle(-b0)) - 2 * theta * mu)),
                    "failure_probability": max(0.0, 1.0 - abs(b0) ** 2),
                    "elementary_step_count": 1 + r * per_iter,
                }
            )
        slopes = {
            "phase_error": _fit_or_exact(thetas, [p["phase_error"] for p in points]),
            "failure_probability": _fit_or_exact(
                thetas, [p["failure_probability"] for p in points]
            ),
        }
        payload = {
            "sweep": "theta",
            "seed": args.seed,
            "n": dataset.n,
            "points": points,
            "slopes": slopes,
        }
        return _emit(payload, args)
    etas = [int(e) for e in _parse_float_list(args.etas, "--etas")]
    theta = _require_theta(args)
    points = []
    for index, eta in enumerate(etas):
        rng = RandomStream(derive_seed(args.seed, index))
        params = KickParams(r=args.r if args.r is not None else 1, alpha=args.alpha)
        report, _ = run_distributed_estimator(
            dataset, theta, eta, params, rng, force=args.force, ideal=True
        )
        points.append(
            {
                "eta": eta,
                "r": report.r,
                "mu_e": report.mu_e,
                "signal_phase": report.mu_e * (2.0 * report.r * eta * theta),
                "elementary_step_count": report.elementary_step_count,
                "restarts": report.restarts,
            }
        )
    signals = [abs(p["signal_phase"]) for p in points]
    payload = {
        "sweep": "eta",
        "seed": args.seed,
        "n": dataset.n,
        "points": points,
        "slopes": {"signal_phase": _fit_or_exact([float(e) for e in etas], signals)},
    }
    return _emit(payload, args)


def _cmd_oracle_check(args: argparse.Namespace) -> int:
    master = RandomStream(args.seed)
    dataset = _resolve_dataset(args, master)
    if dataset.n > 256:
        raise ValidationError("oracle check traces dense states; N must be <= 256")
    theta = _require_theta(args)
    oracle_input = dataset
    if args.corrupt_gamma_sign:
        # negative control: flip every rotation sign on the oracle side only
        oracle_input = Dataset(-dataset.values)
    oracle = amplitude_oracle(oracle_input, theta)

    result = run_pipeline(
        dataset,
        theta,
        KickParams(r=1),
        RandomStream(derive_seed(args.seed, _ORACLE_CHILD)),
        method="dense",
        trace=True,
    )
    trace = result.traces[0]
    dev_a = float(np.max(np.abs(np.asarray(trace.a) - oracle.a)))
    dev_w = abs(complex(trace.w[0]) - oracle.w0)  # 0th post-WH amplitude is <e^(i*gamma)>
    dev_b0 = abs(complex(branch_kick_amplitudes(dataset, theta)[0]) - oracle.b0)

    dense = run_pipeline(
        dataset, theta, KickParams(r=2), RandomStream(derive_seed(args.seed, 1)),
        method="dense",
    )
    fast = run_pipeline(
        dataset, theta, KickParams(r=2), RandomStream(derive_seed(args.seed, 1)),
        method="fast",
    )
    dev_engines = float(np.max(np.abs(dense.qubit.amps - fast.qubit.amps)))

    checks = [
        {"name": "step_ii_amplitudes_vs_closed_form", "max_deviation": dev_a},
        {"name": "uniform_component_vs_closed_form", "max_deviation": dev_w},
        {"name": "branch_factor_vs_closed_form", "max_deviation": dev_b0},
        {"name": "dense_vs_fast_engine_qubit", "max_deviation": dev_engines},
    ]
    for check in checks:
        check["pass"] = check["max_deviation"] <= 1e-10
    payload = {
        "seed": args.seed,
        "n": dataset.n,
        "theta": theta,
        "checks": checks,
        "pass": all(check["pass"] for check in checks),
    }
    status = _emit(payload, args)
    if status != 0:
        return status
    return 0 if payload["pass"] else 1


def _cmd_report(args: argparse.Namespace) -> int:
    import json

    from .figures import render_sweep_figure

    table_path = Path(args.table)
    try:
        table = json.loads(table_path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as err:
        raise ValidationError(f"cannot read sweep table {table_path}: {err}") from err
    out_dir = Path(args.out_dir) if args.out_dir else table_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    png = render_sweep_figure(table, out_dir / f"{table_path.stem}.png")
    csv_path = out_dir / f"{table_path.stem}.csv"
    csv_path.write_text(render_csv(table), encoding="utf-8")
    sys.stdout.write(f"{png}\n{csv_path}\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="telemean",
        description="Phase-kick mean estimation: serial, one-shot, and "
        "distributed pipelines with oracle cross-checks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    serial = sub.add_parser("estimate-serial", help="single-register pipeline estimate")
    _add_dataset_flags(serial)
    serial.add_argument("--theta", type=float, help="phase-kick scale in (0, 1]")
    serial.add_argument("--r", type=int, help="iterations per preparation (default: derived)")
    serial.add_argument("--alpha", type=int, default=400, help="readout repetitions")
    serial.add_argument("--ideal", action="store_true", help="noise-free readout")
    serial.add_argument(
        "--schedule",
        action="store_true",
        help="run the theta-reduction schedule from theta (default 0.5) and "
        "report the resolved scale",
    )
    _add_output_flags(serial)
    serial.set_defaults(func=_cmd_estimate_serial)

    epr = sub.add_parser("estimate-epr", help="one-shot shared-state estimate")
    _add_dataset_flags(epr)
    epr.add_argument("--theta", type=float, help="phase-kick scale in (0, 1]")
    epr.add_argument("--alpha", type=int, default=400, help="readout repetitions")
    epr.add_argument("--ideal", action="store_true", help="noise-free readout")
    epr.add_argument("--trace", help="write the classical message log (JSON lines)")
    _add_output_flags(epr)
    epr.set_defaults(func=_cmd_estimate_epr)

    dist = sub.add_parser(
        "estimate-distributed", help="eta-processor pipelined estimate"
    )
    _add_dataset_flags(dist)
    dist.add_argument("--theta", type=float, help="phase-kick scale in (0, 1]")
    dist.add_argument("--eta", type=int, default=2, help="processor count")
    dist.add_argument("--r", type=int, help="iterations per processor (default: derived)")
    dist.add_argument("--alpha", type=int, default=400, help="readout repetitions")
    dist.add_argument("--ideal", action="store_true", help="noise-free readout")
    dist.add_argument("--force", action="store_true", help="override the eta bound")
    dist.add_argument("--trace", help="write the classical message log (JSON lines)")
    _add_output_flags(dist)
    dist.set_defaults(func=_cmd_estimate_distributed)

    base = sub.add_parser("baseline", help="classical Monte Carlo estimate")
    _add_dataset_flags(base)
    base.add_argument("--samples", type=int, default=100, help="samples to draw")
    base.add_argument(
        "--exhaustive", action="store_true", help="read every value exactly once"
    )
    _add_output_flags(base)
    base.set_defaults(func=_cmd_baseline)

    sweep = sub.add_parser("sweep", help="theta or eta scaling table with fitted slopes")
    _add_dataset_flags(sweep)
    sweep.add_argument("--thetas", help="comma-separated theta values (>= 3)")
    sweep.add_argument("--etas", help="comma-separated processor counts (>= 3)")
    sweep.add_argument("--theta", type=float, help="fixed theta for an eta sweep")
    sweep.add_argument("--r", type=int, help="iteration override")
    sweep.add_argument("--alpha", type=int, default=400, help="readout repetitions")
    sweep.add_argument("--force", action="store_true", help="override the eta bound")
    _add_output_flags(sweep)
    sweep.set_defaults(func=_cmd_sweep)

    oracle = sub.add_parser(
        "oracle-check", help="simulator vs closed-form amplitude cross-check"
    )
    _add_dataset_flags(oracle)
    oracle.add_argument("--theta", type=float, help="phase-kick scale in (0, 1]")
    oracle.add_argument(
        "--corrupt-gamma-sign",
        action="store_true",
        help=argparse.SUPPRESS,  # negative-control hook for tests
    )
    _add_output_flags(oracle)
    oracle.set_defaults(func=_cmd_oracle_check)

    report = sub.add_parser("report", help="render a sweep table to PNG and CSV")
    report.add_argument("--table", required=True, help="sweep JSON produced by sweep")
    report.add_argument("--out-dir", help="output directory (default: beside the table)")
    report.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (SimulationError, RestartCapError, UnwrapError) as err:
        print(f"runtime cap: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
