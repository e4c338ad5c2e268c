"""
Command line entry point of the time-of-flight beam imaging toolkit.

Subcommands:
  simulate  draw detection events from a mode and write them as CSV
  analyze   reconstruct the column profile from events and fit modes
  couple    coupling efficiency and misalignment tolerance of an active area
  stack     transfer-matrix response of a dielectric stack

Machine-readable results go to standard output as JSON, logs and
errors to standard error. Exit codes: 0 success, 2 invalid input,
3 numerical failure.
"""
import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from analysis import (bin_to_columns, build_histogram, fit_modes, lock_comb,
                      tail_power_curve)
from beams import ModeSpec, divergence_report
from coupling import (CouplingQuery, coupling_efficiency, max_tolerable_offset,
                      min_diameter_for_efficiency, tolerance_curve)
from detector import DetectorGeometry, sample_events
from loading import (RunConfig, dump_json, get_config_data, get_geometry,
                     get_mode_spec, get_run_config, get_stack_spec, read_events, write_events,
                     write_grid, write_histogram, write_json, write_profile)
from stack import (builtin_detector_stack, multipass_path_length,
                   reflectance_spectrum, single_pass_absorption, tmm_response)
from util import ConfigurationError, DbrOrdering, Fiber, NumericalFailure, TofbeamError
from validator import check_json

logger = logging.getLogger("tofbeam")

SPECTRUM_NM = np.linspace(1300.0, 1800.0, 251)
TAIL_STEP_UM = 0.5


def output_path(out, default_name):
    """
    Return where to write an artifact.

    out ending in .csv is the file itself, anything else is a directory.
    """
    if out is None:
        out = "."
    out = Path(out)
    if out.suffix.lower() == ".csv":
        out.parent.mkdir(parents=True, exist_ok=True)
        return out
    out.mkdir(parents=True, exist_ok=True)
    return out / default_name


def output_dir(out):
    if out is None:
        return Path(".")
    out = Path(out)
    if out.suffix.lower() == ".csv":
        out = out.parent
    out.mkdir(parents=True, exist_ok=True)
    return out


def emit(data, kind):
    """
    Check data against its schema and print it as JSON.
    """
    check = check_json(data, kind)
    if check is not True:
        raise NumericalFailure(f"{kind} output failed its schema check: {check}")
    sys.stdout.write(dump_json(data) + "\n")
    return data


def mode_from_args(args):
    """
    Return the ModeSpec given by --fiber, --mfd-um or --config.
    """
    if getattr(args, "mfd_um", None) is not None:
        return ModeSpec.gaussian(args.mfd_um)
    if getattr(args, "fiber", None) is not None:
        return ModeSpec.from_fiber(args.fiber)
    if args.config is not None:
        return get_mode_spec(args.config)
    raise ConfigurationError("no mode given: use --config, --fiber or --mfd-um")


def geometry_from_args(args, default=None):
    if getattr(args, "geometry", None) is not None:
        return get_geometry(args.geometry)
    return default or DetectorGeometry()


def cmd_simulate(args):
    if args.config is not None:
        config = get_run_config(args.config)
    elif args.fiber is not None:
        config = RunConfig(ModeSpec.from_fiber(args.fiber))
    else:
        raise ConfigurationError("simulate needs --config or --fiber")
    overrides = {"geometry": geometry_from_args(args, config.geometry)}
    if args.n is not None:
        overrides["n_events"] = args.n
    if args.seed is not None:
        overrides["seed"] = args.seed
    config = dataclasses.replace(config, **overrides)

    out = args.out if args.out is not None else config.outputs.get("events")
    events_path = output_path(out, "events.csv")
    batch = sample_events(config.mode, config.geometry, config.n_events, config.seed)
    write_events(events_path, batch)
    if args.svg:
        from export_img import export_histogram
        export_histogram(events_path.with_suffix(".svg"), build_histogram(batch, args.bin_width))
    return emit({
        "events": len(batch),
        "acceptance_rate": batch.acceptance_rate,
        "seed": config.seed,
        "out": str(events_path),
    }, "simulate")


def cmd_analyze(args):
    geom = geometry_from_args(args)
    if args.geometry is None and args.config is not None:
        data = get_config_data(args.config)
        geom = DetectorGeometry.from_dict(data.get("geometry", data))
    batch = read_events(args.events)
    hist = build_histogram(batch, args.bin_width)
    comb = lock_comb(hist, geom.pitch_dt)
    profile = bin_to_columns(batch, comb, geom, args.guard)
    fit = fit_modes(profile, geom, args.max_p)

    result = fit.as_dict()
    result["comb"] = comb.as_dict()
    result["rejected_events"] = profile.rejected
    if args.fiber is not None:
        fiber = Fiber(args.fiber)
        report = divergence_report(fiber.mfd, fiber.mfd_sigma, fit.mfd,
                                   fit.mfd_uncertainty, fiber.wavelength)
        result["divergence"] = report.as_dict()

    directory = output_dir(args.out)
    write_profile(directory / "profile.csv", profile, geom)
    write_histogram(directory / "histogram.csv", hist)
    x_values = np.arange(0.0, geom.half_span * geom.column_pitch + TAIL_STEP_UM, TAIL_STEP_UM)
    measured = tail_power_curve(profile, x_values, fit.center_x)
    fitted = tail_power_curve(fit, x_values)
    write_json(directory / "fit.json", result)
    if args.svg:
        from export_img import export_histogram, export_profile, export_tail_power
        export_histogram(directory / "histogram.svg", hist, comb)
        export_profile(directory / "profile.svg", profile, fit, geom)
        export_tail_power(directory / "tail_power.svg", x_values, measured, fitted)
    return emit(result, "fit")


def parse_grid(text):
    try:
        values = [float(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("grid must not be empty")
    return values


def cmd_couple(args):
    spec = mode_from_args(args)
    if args.grid:
        if not (args.diameters and args.offsets):
            raise ConfigurationError("--grid needs --diameters and --offsets")
        curve = tolerance_curve(spec, args.diameters, args.offsets)
        grid_path = output_path(args.out, "coupling_grid.csv")
        write_grid(grid_path, curve)
        if args.svg:
            from export_img import export_coupling
            export_coupling(grid_path.with_suffix(".svg"), curve)
        return emit({"grid_csv": str(grid_path)}, "couple")

    if args.diameter_um is None and args.min_efficiency is None:
        raise ConfigurationError("couple needs --diameter-um")
    if args.min_efficiency is not None:
        diameter = min_diameter_for_efficiency(spec, args.min_efficiency, args.offset_um)
        return emit({"min_diameter_um": diameter}, "couple")
    if args.solve_offset:
        if args.loss_budget is None:
            raise ConfigurationError("--solve-offset needs --loss-budget")
        offset = max_tolerable_offset(spec, args.diameter_um, args.loss_budget)
        return emit({"max_offset_um": offset}, "couple")
    efficiency = coupling_efficiency(CouplingQuery(spec, args.diameter_um, args.offset_um))
    result = {"efficiency": efficiency, "loss": 1.0 - efficiency}
    if args.loss_budget is not None:
        result["within_budget"] = result["loss"] <= args.loss_budget
    return emit(result, "couple")


def cmd_stack(args):
    if args.builtin_paper:
        if args.mosi_n is None or args.mosi_k is None:
            raise ConfigurationError(
                "--builtin-paper needs --mosi-n and --mosi-k: the MoSi index has no default")
        stack = builtin_detector_stack(mosi_n=args.mosi_n, mosi_k=args.mosi_k,
                                    ordering=DbrOrdering(args.ordering))
    elif args.config is not None:
        stack = get_stack_spec(args.config)
    else:
        raise ConfigurationError("stack needs --config or --builtin-paper")

    response = tmm_response(stack)
    result = response.as_dict()
    result["total_thickness_nm"] = stack.total_thickness
    if args.builtin_paper:
        absorber = next(layer for layer in stack.layers if layer.name == "MoSi")
        per_pass = single_pass_absorption(absorber, stack.wavelength)
        result["absorber_single_pass"] = per_pass
        if per_pass > 0:
            # one pass crosses the whole stack once
            result["multipass_path_um"] = multipass_path_length(
                per_pass, stack.total_thickness / 1000)
    if args.out is not None:
        write_json(output_dir(args.out) / "stack_response.json", result)
    if args.svg:
        from export_img import export_stack_spectrum
        responses = reflectance_spectrum(stack, SPECTRUM_NM)
        export_stack_spectrum(output_dir(args.out) / "stack_spectrum.svg", SPECTRUM_NM, responses)
    return emit(result, "stack_response")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or YAML input file")
    common.add_argument("--out", help="output directory, or a .csv file")
    common.add_argument("--seed", type=int, help="random seed (non-negative)")
    common.add_argument("--svg", action="store_true", help="also write SVG figures")
    common.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = argparse.ArgumentParser(
        prog="tofbeam", description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter)
    commands = parser.add_subparsers(dest="command", required=True)
    fibers = [fiber.value for fiber in Fiber]

    simulate = commands.add_parser("simulate", parents=[common], help="simulate events")
    simulate.add_argument("--n", type=int, help="number of detection events")
    simulate.add_argument("--fiber", choices=fibers, help="use a fiber preset as the mode")
    simulate.add_argument("--geometry", help="detector geometry JSON")
    simulate.add_argument("--bin-width", type=float, default=1.0, help="histogram bin (ps) for --svg")
    simulate.set_defaults(handler=cmd_simulate)

    analyze = commands.add_parser("analyze", parents=[common], help="reconstruct and fit")
    analyze.add_argument("events", help="events CSV file")
    analyze.add_argument("--geometry", help="detector geometry JSON")
    analyze.add_argument("--max-p", type=int, default=1, help="highest radial index to try")
    analyze.add_argument("--bin-width", type=float, default=1.0, help="histogram bin (ps)")
    analyze.add_argument("--guard", type=float, default=0.0,
                         help="reject events beyond pitch/2*(1-guard) from a tooth")
    analyze.add_argument("--fiber", choices=fibers, help="compare the fit with a fiber preset")
    analyze.set_defaults(handler=cmd_analyze)

    couple = commands.add_parser("couple", parents=[common], help="coupling analysis")
    couple.add_argument("--mfd-um", type=float, help="pure Gaussian of this MFD")
    couple.add_argument("--fiber", choices=fibers)
    couple.add_argument("--diameter-um", type=float)
    couple.add_argument("--offset-um", type=float, default=0.0)
    couple.add_argument("--loss-budget", type=float)
    couple.add_argument("--solve-offset", action="store_true",
                        help="largest offset within --loss-budget")
    couple.add_argument("--min-efficiency", type=float,
                        help="smallest diameter reaching this efficiency at --offset-um")
    couple.add_argument("--grid", action="store_true", help="write a loss matrix CSV")
    couple.add_argument("--diameters", type=parse_grid, help="comma-separated diameters (um)")
    couple.add_argument("--offsets", type=parse_grid, help="comma-separated offsets (um)")
    couple.set_defaults(handler=cmd_couple)

    stack = commands.add_parser("stack", parents=[common], help="stack optics")
    stack.add_argument("--builtin-paper", action="store_true", help="use the built-in detector stack")
    stack.add_argument("--mosi-n", type=float)
    stack.add_argument("--mosi-k", type=float)
    stack.add_argument("--ordering", choices=[ordering.value for ordering in DbrOrdering],
                       default=DbrOrdering.HIGH_INDEX_FIRST.value,
                       help="which mirror material faces the absorber")
    stack.set_defaults(handler=cmd_stack)
    return parser


def main(argv=None):
    """
    Run the command line and return its exit code.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as error:
        return error.code

    logging.basicConfig(level=args.log_level, stream=sys.stderr, force=True,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.handler(args)
    except TofbeamError as error:
        logger.debug("%s failed", args.command, exc_info=True)
        sys.stderr.write(dump_json({"error": type(error).__name__, "message": str(error)}) + "\n")
        return error.exit_code
    except OSError as error:
        sys.stderr.write(dump_json({"error": "ConfigurationError", "message": str(error)}) + "\n")
        return ConfigurationError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
