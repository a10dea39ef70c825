import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ValidationError

from constrained_hj.adapters.formats import decode_snapshot
from constrained_hj.domain.enums import ExitCode
from constrained_hj.domain.errors import ConfigurationError, HypothesisError, InvalidArgumentError, NumericalError
from constrained_hj.domain.grid import GridSpec
from constrained_hj.domain.initial import InitialData
from constrained_hj.domain.model import RateModel
from constrained_hj.domain.paths import ResourcePath
from constrained_hj.entrypoints.schemas.lab import FixedPointRequest, LipschitzProbeRequest
from constrained_hj.entrypoints.schemas.model import (
    GridDocument,
    InitialDocument,
    RateModelDocument,
    ValidateModelRequest,
)
from constrained_hj.entrypoints.schemas.run import LimitRunRequest, OracleRunRequest, ParabolicRunRequest
from constrained_hj.entrypoints.schemas.sweep import SweepRequest
from constrained_hj.services.config import settings
from constrained_hj.services.data.unit_of_work import RunUoW
from constrained_hj.services.handlers.fixed_point_lab import (
    contraction_slope,
    lipschitz_probe,
    measure_contraction,
    random_resource_pair,
    transport_cross_check,
    windowed_fixed_point,
)
from constrained_hj.services.handlers.harness import GridPolicy, sweep
from constrained_hj.services.handlers.hj_limit_solver import check_invariants, initial_from_field, initial_from_quadratic, solve_limit
from constrained_hj.services.handlers.parabolic_solver import run_parabolic
from constrained_hj.services.handlers.quadratic_oracle import hj_residual, integrate_oracle, integrate_oracle_adaptive
from constrained_hj.services.handlers.rate_model import load_model, validate_hypotheses, validate_initial_data

logger = logging.getLogger(__name__)

DEFAULT_HALF_WIDTH = 4.0
DEFAULT_NODES = 161


def _document(path: str) -> Dict[str, Any]:
    with open(path, encoding="utf-8") as handle:
        document = json.load(handle)
    if not isinstance(document, dict):
        raise ConfigurationError(f"{path} must hold a JSON object, got {type(document).__name__}")
    return document


def _read(path: str, schema: type[BaseModel]) -> BaseModel:
    return schema.model_validate(_document(path))


def _grid(document: Optional[GridDocument], model: RateModel) -> GridSpec:
    if document is not None:
        return GridSpec(document.lo, document.hi, document.n)
    return GridSpec(model.theta - DEFAULT_HALF_WIDTH, model.theta + DEFAULT_HALF_WIDTH, [DEFAULT_NODES] * model.dimension)


def _initial(model: RateModel, document: InitialDocument, spec: GridSpec) -> InitialData:
    if document.kind == "field":
        field = decode_snapshot(Path(document.snapshot).read_bytes())
        return initial_from_field(model, field, document.r)
    return initial_from_quadratic(model, document.m0, document.A0, document.r, spec, document.offset)


def _trajectory_plots(uow: RunUoW, times: np.ndarray, resources: np.ndarray, traits: np.ndarray, prefix: str) -> None:
    uow.plots.add([times, resources], f"{prefix}_I", comment="t I")
    for axis in range(traits.shape[1]):
        uow.plots.add([times, traits[:, axis]], f"{prefix}_x{axis + 1}", comment=f"t x_{axis + 1}")


def validate_model(args: argparse.Namespace, uow: RunUoW) -> Dict[str, Any]:
    document = _document(args.config)
    request = (
        ValidateModelRequest.model_validate(document)
        if "model" in document
        else ValidateModelRequest(model=RateModelDocument.model_validate(document))
    )
    model = load_model(request.model)
    spec = _grid(request.grid, model)
    box_lo = spec.lo if request.box_lo is None else request.box_lo
    box_hi = spec.hi if request.box_hi is None else request.box_hi
    report = validate_hypotheses(model, box_lo, box_hi, request.I_range, request.probe_points, request.seed)
    if request.initial is not None:
        init = _initial(model, request.initial, spec)
        report = report.merge(validate_initial_data(model, init, spec))
    uow.reports.add(report, "hypotheses")
    if not report.admissible:
        raise HypothesisError(f"Hypotheses fail: {', '.join(report.failures())}", report)
    return {"admissible": True, "I_M": model.resource_ceiling}


def solve_oracle(args: argparse.Namespace, uow: RunUoW) -> Dict[str, Any]:
    request: OracleRunRequest = _read(args.config, OracleRunRequest)
    model = load_model(request.model)
    spec = _grid(request.grid, model)
    init = _initial(model, request.initial, spec)
    if request.adaptive:
        record = integrate_oracle_adaptive(model, init, request.T)
    else:
        record = integrate_oracle(model, init, request.T, request.dt, request.sample_every)
    summary: Dict[str, Any] = {"I_T": record.final.I, "xbar_T": record.final.xbar.tolist()}
    if request.residual and not request.adaptive and request.sample_every == 1:
        summary["hj_residual"] = hj_residual(model, record.ansatz_history, spec)
    uow.trajectories.add(record, "oracle")
    uow.reports.add(record, "oracle_meta")
    if args.emit_plot_data:
        _trajectory_plots(uow, record.times(), record.resources(), record.traits(), "oracle")
    return summary


def solve_limit_command(args: argparse.Namespace, uow: RunUoW) -> Dict[str, Any]:
    request: LimitRunRequest = _read(args.config, LimitRunRequest)
    model = load_model(request.model)
    spec = _grid(request.grid, model)
    init = _initial(model, request.initial, spec)
    record = solve_limit(
        model,
        init,
        request.T,
        spec,
        request.dt,
        request.sample_every,
        request.snapshot_times,
        request.proj_threshold,
        request.scheme,
    )
    uow.trajectories.add(record, "limit")
    uow.snapshots.add_all(record.snapshots, "u")
    uow.reports.add(record, "limit_meta")
    if args.emit_plot_data:
        _trajectory_plots(uow, record.times(), record.resources(), record.traits(), "limit")
    failures = check_invariants(record, strict=request.strict)
    return {"I_T": record.final.I, "xbar_T": record.final.xbar.tolist(), "invariant_failures": failures}


def solve_parabolic(args: argparse.Namespace, uow: RunUoW) -> Dict[str, Any]:
    request: ParabolicRunRequest = _read(args.config, ParabolicRunRequest)
    eps = args.eps if args.eps is not None else request.eps
    if eps is None:
        raise InvalidArgumentError("solve-parabolic needs eps from --eps or the config")
    model = load_model(request.model)
    spec = _grid(request.grid, model)
    init = _initial(model, request.initial, spec)
    result = run_parabolic(
        model,
        init,
        eps,
        request.T,
        spec,
        request.dt,
        request.form,
        request.splitting,
        request.sample_every,
        request.snapshot_times,
        probe_depth=request.probe_depth,
        cross_check=request.cross_check,
        C_bound=request.C_bound,
    )
    name = f"eps_{eps!r}"
    uow.trajectories.add(result, name)
    uow.snapshots.add_all(result.snapshots, f"u_{name}")
    uow.reports.add(result, f"{name}_meta")
    if args.emit_plot_data:
        _trajectory_plots(uow, result.times(), result.resources(), result.traits(), name)
    return {"eps": eps, "I_T": result.samples[-1].I, "I_m": result.diagnostics["I_m"], "C_fit": result.diagnostics["C_fit"]}


def fixed_point(args: argparse.Namespace, uow: RunUoW) -> Dict[str, Any]:
    request: FixedPointRequest = _read(args.config, FixedPointRequest)
    delta = args.delta if args.delta is not None else request.delta
    if delta is None:
        raise InvalidArgumentError("fixed-point needs delta from --delta or the config")
    model = load_model(request.model)
    spec = _grid(request.grid, model)
    init = _initial(model, request.initial, spec)
    results, restarts = windowed_fixed_point(
        model, init, spec, delta, request.n_windows, request.samples, request.k_max, request.tol, request.radius, request.dt
    )
    report: Dict[str, Any] = {
        "delta": delta,
        "windows": [result.to_dict() for result in results],
        "restarts": restarts,
    }
    if request.deltas:
        contraction = [
            measure_contraction(model, init, spec, value, request.n_pairs, request.radius, request.seed, request.samples, request.dt)
            for value in sorted(request.deltas)
        ]
        report["contraction"] = [item.to_dict() for item in contraction]
        if len(contraction) >= 2:
            report["contraction_slope"] = contraction_slope(contraction)
    uow.reports.add(report, "fixed_point")
    if args.emit_plot_data:
        for index, result in enumerate(results):
            uow.plots.add(
                [np.arange(1, result.iterations + 1), result.distances], f"fixed_point_window{index}", comment="k distance"
            )
    return {"delta": delta, "converged": all(result.converged for result in results), "iterations": [r.iterations for r in results]}


def lipschitz(args: argparse.Namespace, uow: RunUoW) -> Dict[str, Any]:
    request: LipschitzProbeRequest = _read(args.config, LipschitzProbeRequest)
    model = load_model(request.model)
    spec = _grid(request.grid, model)
    init = _initial(model, request.initial, spec)
    u0 = init.sample(spec)
    probes: List[Dict[str, Any]] = []
    if request.pairs:
        for index, pair in enumerate(request.pairs):
            first = ResourcePath(pair.first.times, pair.first.values)
            second = ResourcePath(pair.second.times, pair.second.values)
            entry = {"pair": index, "delta": first.delta, "ratio": lipschitz_probe(model, first, second, u0, spec, dt=request.dt)}
            if request.characteristics:
                entry["characteristics"] = transport_cross_check(model, first, second, u0, spec, request.dt)
            probes.append(entry)
    else:
        seed = settings.CONSTRAINED_HJ_SEED if request.seed is None else request.seed
        for delta in sorted(request.deltas, reverse=True):
            for index in range(request.n_pairs):
                generator = np.random.default_rng([seed, index])
                first, second = random_resource_pair(init.I0, model.resource_ceiling, delta, request.samples, generator)
                entry = {"pair": index, "delta": delta, "ratio": lipschitz_probe(model, first, second, u0, spec, dt=request.dt)}
                if request.characteristics:
                    entry["characteristics"] = transport_cross_check(model, first, second, u0, spec, request.dt)
                probes.append(entry)
    spread = _ratio_spread(probes)
    uow.reports.add({"probes": probes, "halving_spread": spread}, "lipschitz_probe")
    return {"probes": len(probes), "max_ratio": max(entry["ratio"] for entry in probes), "halving_spread": spread}


def _ratio_spread(probes: Sequence[Dict[str, Any]]) -> Optional[float]:
    """Largest ratio change factor between consecutive deltas of the same pair index."""
    by_pair: Dict[int, List[float]] = {}
    for entry in probes:
        by_pair.setdefault(entry["pair"], []).append(entry["ratio"])
    factors = [
        max(a, b) / min(a, b)
        for ratios in by_pair.values()
        for a, b in zip(ratios, ratios[1:])
        if min(a, b) > 0
    ]
    return max(factors) if factors else None


def sweep_command(args: argparse.Namespace, uow: RunUoW) -> Dict[str, Any]:
    request: SweepRequest = _read(args.config, SweepRequest)
    model = load_model(request.model)
    spec = _grid(request.grid, model)
    init = _initial(model, request.initial, spec)
    policy = GridPolicy(**request.policy.model_dump())
    report = sweep(
        model,
        init,
        request.ladder,
        request.T,
        request.t_stars,
        policy,
        spec,
        request.dt,
        uow=uow,
        workers=request.workers,
        form=request.form,
        limit_source=request.limit_source,
        cross_check_limit=request.cross_check_limit,
        probe_radius=request.probe_radius,
    )
    uow.reports.add(report, "sweep")
    if args.emit_plot_data:
        for t_star in report.t_stars:
            entries = report.entries_at(t_star)
            log_eps = np.log([entry.eps for entry in entries])
            for key in ("I_error", "x_error", "u_error"):
                errors = np.array([getattr(entry, key) for entry in entries])
                if np.all(errors > 0):
                    uow.plots.add([log_eps, np.log(errors)], f"sweep_{key}_t{t_star!r}", comment=f"log_eps log_{key}")
    return {key: {name: fit[name] for name in ("I_slope", "x_slope", "u_slope")} for key, fit in report.fits.items()}


COMMANDS: Dict[str, Callable[[argparse.Namespace, RunUoW], Dict[str, Any]]] = {
    "validate-model": validate_model,
    "solve-oracle": solve_oracle,
    "solve-limit": solve_limit_command,
    "solve-parabolic": solve_parabolic,
    "fixed-point": fixed_point,
    "lipschitz-probe": lipschitz,
    "sweep": sweep_command,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="constrained-hj", description="Constrained Hamilton-Jacobi solver suite")
    parser.add_argument("--output-dir", default=None, help="run directory (default: $CONSTRAINED_HJ_OUTPUT_ROOT/<command>)")
    parser.add_argument("--emit-plot-data", action="store_true", help="write two-column gnuplot files")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        command = subparsers.add_parser(name)
        command.add_argument("config", nargs="?", default=None, help="JSON config document")
        command.add_argument("--config", dest="config_option", default=None)
        if name == "solve-parabolic":
            command.add_argument("--eps", type=float, default=None)
        if name == "fixed-point":
            command.add_argument("--delta", type=float, default=None)
    return parser


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.config = args.config_option or args.config
    args.eps = getattr(args, "eps", None)
    args.delta = getattr(args, "delta", None)
    if settings.DEBUG:
        logging.getLogger().setLevel(logging.DEBUG)
    if args.config is None:
        logger.error("%s needs a config document", args.command)
        return ExitCode.CONFIG_ERROR
    output_dir = Path(args.output_dir) if args.output_dir else Path(settings.CONSTRAINED_HJ_OUTPUT_ROOT) / args.command
    try:
        with RunUoW(output_dir, args.command) as uow:
            try:
                uow.summary = COMMANDS[args.command](args, uow)
            except (InvalidArgumentError, ValidationError, json.JSONDecodeError):
                raise
            except (KeyError, ValueError, TypeError) as error:
                raise ConfigurationError(f"Malformed {args.command} document: {error!r}") from error
            uow.commit()
    except HypothesisError as error:
        logger.error("Hypothesis validation failed: %s", error)
        print(f"hypothesis failure: {', '.join(error.report.failures())}", file=sys.stderr)
        return ExitCode.HYPOTHESIS_FAILURE
    except NumericalError as error:
        logger.error("Numerical failure [%s]: %s", error.invariant, error)
        print(f"numerical failure: invariant {error.invariant}: {error}", file=sys.stderr)
        return ExitCode.NUMERICAL_FAILURE
    except (InvalidArgumentError, ValidationError, json.JSONDecodeError, OSError) as error:
        logger.error("Configuration error: %s", error)
        print(f"configuration error: {error}", file=sys.stderr)
        return ExitCode.CONFIG_ERROR
    logger.info("%s finished: %s", args.command, output_dir)
    return ExitCode.SUCCESS


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
