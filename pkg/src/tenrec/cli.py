"""
Command line interface.

    tenrec synth   --dims 20,20,20 --rank 2 --corruption 0.05 --output run/demo
    tenrec recover run/demo.input.tnsr --rank 2 --truth run/demo.truth.tnsr
    tenrec certify run/demo.input.pasd.manifest --truth run/demo.truth.tnsr
    tenrec bench   --dims 40,40,40 --rank 4 --corruptions 0.05,0.1 --output table.csv
    tenrec phase   --dims 30,30,30 --ranks 2,6 --corruptions 0.05,0.5 --output phase.pgm
    tenrec timing  --sizes 40,60,80 --rank 10 --corruption 0.05 --output timing.csv

Exit codes: 0 success, 1 usage or argument error, 2 I/O or file format
error, 3 numerical failure, 4 non-convergence (with ``--strict``) or a run
that cannot be certified.
"""
import argparse
import logging as log
import os
import sys

import numpy as np

from tenrec import __version__
from tenrec import constants
from tenrec.baseline_solvers import RpcaConfig
from tenrec.baseline_solvers import rpca_unfold_recover
from tenrec.baseline_solvers import snn_recover
from tenrec.baseline_solvers import SnnConfig
from tenrec.errors import ArgumentError
from tenrec.errors import NumericalFailure
from tenrec.errors import StateError
from tenrec.errors import TensorFormatError
from tenrec.errors import UsageError
from tenrec.logger import logging
from tenrec.logger import setup_logging
from tenrec.options import load_options
from tenrec.pasd_solver import certificate_from_gap
from tenrec.pasd_solver import feasible_point
from tenrec.pasd_solver import PasdConfig
from tenrec.pasd_solver import pasd_recover
from tenrec.pasd_solver import rank_deficit_term
from tenrec.synth_bench import corrupt_sparse
from tenrec.synth_bench import CORRUPTION_KINDS
from tenrec.synth_bench import full_corruption_axis
from tenrec.synth_bench import full_rank_axis
from tenrec.synth_bench import gen_lowrank_tucker
from tenrec.synth_bench import loglog_slope
from tenrec.synth_bench import make_solver
from tenrec.synth_bench import phase_transition_sweep
from tenrec.synth_bench import psnr
from tenrec.synth_bench import rse
from tenrec.synth_bench import run_table_benchmark
from tenrec.synth_bench import SynthSpec
from tenrec.synth_bench import timing_sweep
from tenrec.tensor_io import format_float
from tenrec.tensor_io import format_value
from tenrec.tensor_io import read_manifest
from tenrec.tensor_io import read_tensor
from tenrec.tensor_io import RunManifest
from tenrec.tensor_io import write_manifest
from tenrec.tensor_io import write_metrics_csv
from tenrec.tensor_io import write_phase_pgm
from tenrec.tensor_io import write_tensor
from tenrec.tensor_io import write_timing_csv

SCHEDULE_KEYS = ("mu0", "mu_max", "rho", "eps", "maxiter", "log_every")


class TenrecArgumentParser(argparse.ArgumentParser):
    """Raise instead of exiting so ``main`` owns the exit code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _list_of(kind):
    def parse(text):
        try:
            values = [kind(item) for item in text.split(",") if item.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid {kind.__name__} list: {text!r}")
        if not values:
            raise argparse.ArgumentTypeError("expected at least one value")
        return values

    parse.__name__ = f"{kind.__name__}_list"
    return parse


int_list = _list_of(int)
float_list = _list_of(float)
name_list = _list_of(str)


def _add_schedule_flags(parser):
    group = parser.add_argument_group("solver schedule")
    group.add_argument("--mu0", type=float, help=f"initial penalty (default {constants.MU0})")
    group.add_argument("--mu-max", type=float, help=f"penalty cap (default {constants.MU_MAX})")
    group.add_argument("--rho", type=float, help=f"penalty growth factor (default {constants.RHO})")
    group.add_argument("--eps", type=float, help=f"stopping tolerance (default {constants.EPS})")
    group.add_argument("--maxiter", type=int, help=f"iteration cap (default {constants.MAXITER})")
    group.add_argument("--log-every", type=int, help="debug log period in iterations")
    group.add_argument(
        "--rank-factor",
        type=float,
        help=f"PASD rank bound R = floor(factor * r) (default {constants.RANK_FACTOR})",
    )


def build_parser():
    parser = TenrecArgumentParser(
        prog=constants.APP_NAME,
        description="Tensor robust PCA by parallel active subspace decomposition.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", help=f"INI options file (or ${constants.ENV_CONFIG})")
    parser.add_argument("--log-dir", help=f"directory for rotated log files (or ${constants.ENV_LOG_DIR})")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    commands = parser.add_subparsers(dest="command", metavar="command")
    commands.required = True

    recover = commands.add_parser("recover", help="split a tensor into low-rank and sparse parts")
    recover.add_argument("input", nargs="?", help="TNSR input tensor")
    recover.add_argument("--solver", choices=constants.SOLVER_NAMES, default="pasd")
    recover.add_argument("--rank", type=int_list, help="target Tucker rank r (one value or one per mode)")
    recover.add_argument("--ranks", type=int_list, help="explicit PASD rank bounds R_n")
    recover.add_argument("--lambdas", type=float_list, help="per-mode weights lambda_n")
    recover.add_argument("--output-weights", type=float_list, help="combination weights alpha_n")
    recover.add_argument("--rpca-lambda", type=float, help="l1 weight of matrix RPCA")
    recover.add_argument("--check-invariants", action="store_true")
    recover.add_argument("--output", help="output prefix (default: input path without extension)")
    recover.add_argument("--truth", help="ground-truth TNSR; adds RSE and PSNR to the manifest")
    recover.add_argument("--seed", type=int, help="seed of the input instance, echoed in the manifest")
    recover.add_argument("--from-manifest", help="re-run the solve recorded in a manifest")
    recover.add_argument("--strict", action="store_true", help="exit 4 when the solver does not converge")
    _add_schedule_flags(recover)
    recover.set_defaults(func=cmd_recover)

    synth = commands.add_parser("synth", help="generate a ground-truth and corrupted tensor pair")
    synth.add_argument("--dims", type=int_list, required=True)
    synth.add_argument("--rank", type=int_list, required=True)
    synth.add_argument("--corruption", type=float, default=0.05, help="fraction of corrupted entries")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--trial", type=int, default=0)
    synth.add_argument("--kind", choices=CORRUPTION_KINDS, default="additive")
    synth.add_argument("--low", type=float, default=0.0, help="replacement range start")
    synth.add_argument("--high", type=float, default=constants.PSNR_PEAK, help="replacement range end")
    synth.add_argument("--output", required=True, help="output prefix")
    synth.set_defaults(func=cmd_synth)

    bench = commands.add_parser("bench", help="table of mean RSE and time per solver")
    bench.add_argument("--dims", type=int_list, required=True)
    bench.add_argument("--rank", type=int_list, required=True)
    bench.add_argument("--corruptions", type=float_list, required=True)
    bench.add_argument("--solvers", type=name_list, default=list(constants.SOLVER_NAMES))
    bench.add_argument("--trials", type=int)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--output", required=True, help="metrics CSV path")
    _add_schedule_flags(bench)
    bench.set_defaults(func=cmd_bench)

    phase = commands.add_parser("phase", help="phase-transition success grid")
    phase.add_argument("--dims", type=int_list, required=True)
    phase.add_argument("--ranks", type=int_list)
    phase.add_argument("--corruptions", type=float_list)
    phase.add_argument(
        "--full-grid",
        action="store_true",
        help="ranks 2..50 step 2 and corruptions 2%%..50%% step 2%%",
    )
    phase.add_argument("--solver", choices=constants.SOLVER_NAMES, default="pasd")
    phase.add_argument("--trials", type=int)
    phase.add_argument("--threshold", type=float, help="RSE success threshold")
    phase.add_argument("--seed", type=int, default=0)
    phase.add_argument("--output", required=True, help="PGM path; axes go next to it")
    _add_schedule_flags(phase)
    phase.set_defaults(func=cmd_phase)

    timing = commands.add_parser("timing", help="wall time against tensor size")
    timing.add_argument("--sizes", type=int_list, required=True)
    timing.add_argument("--solvers", type=name_list, default=["pasd", "snn"])
    timing.add_argument("--rank", type=int, required=True)
    timing.add_argument("--corruption", type=float, default=0.05)
    timing.add_argument("--order", type=int, default=3)
    timing.add_argument("--seed", type=int, default=0)
    timing.add_argument("--output", required=True, help="timing CSV path")
    _add_schedule_flags(timing)
    timing.set_defaults(func=cmd_timing)

    certify = commands.add_parser("certify", help="recompute the suboptimality certificate of a PASD run")
    certify.add_argument("manifest")
    certify.add_argument("--truth", help="ground-truth TNSR for the feasible-point check")
    certify.add_argument("--output", help="write the report as a manifest")
    certify.set_defaults(func=cmd_certify)
    return parser


def resolve_schedule(args, options):
    """Solver schedule: command-line flags over the loaded options."""
    solver_options = options["Solver"]
    schedule = {}
    for key in SCHEDULE_KEYS:
        value = getattr(args, key, None)
        schedule[key] = solver_options[key] if value is None else value
    rank_factor = getattr(args, "rank_factor", None)
    if rank_factor is None:
        rank_factor = solver_options["rank_factor"]
    return schedule, rank_factor


def _check_solvers(names):
    unknown = [name for name in names if name not in constants.SOLVER_NAMES]
    if unknown:
        raise UsageError(f"Unknown solver(s) {unknown}, expected {constants.SOLVER_NAMES}")


def _one_or_all(values):
    return values[0] if len(values) == 1 else tuple(values)


def build_config(args, dims, schedule, rank_factor):
    if args.solver == "pasd":
        if args.rank is None and args.ranks is None:
            raise UsageError("recover --solver pasd needs --rank or --ranks")
        extra = {}
        if args.lambdas is not None:
            extra["lambdas"] = args.lambdas
        return PasdConfig.for_tensor(
            dims,
            target_rank=None if args.rank is None else _one_or_all(args.rank),
            ranks=args.ranks,
            rank_factor=rank_factor,
            output_weights=args.output_weights,
            check_invariants=args.check_invariants,
            **extra,
            **schedule,
        )
    if args.solver == "snn":
        extra = {} if args.lambdas is None else {"lambdas": args.lambdas}
        return SnnConfig.for_tensor(dims, output_weights=args.output_weights, **extra, **schedule)
    return RpcaConfig(lam=args.rpca_lambda, **schedule)


def _floats(text):
    return tuple(float(v) for v in text.split(",")) if text else None


def _ints(text):
    return tuple(int(v) for v in text.split(",")) if text else None


_CONFIG_FIELDS = {
    "lambdas": _floats,
    "ranks": _ints,
    "output_weights": _floats,
    "lam": lambda text: float(text) if text else None,
    "mu0": float,
    "mu_max": float,
    "rho": float,
    "eps": float,
    "maxiter": int,
    "log_every": int,
    "check_invariants": lambda text: text == "true",
}
_CONFIG_CLASSES = {"pasd": PasdConfig, "snn": SnnConfig, "rpca": RpcaConfig}


def config_from_manifest(manifest):
    if manifest.solver not in _CONFIG_CLASSES:
        raise TensorFormatError(f"Manifest names unknown solver {manifest.solver!r}")
    values = {}
    for key, text in manifest.config.items():
        if key not in _CONFIG_FIELDS:
            raise TensorFormatError(f"Manifest has unknown config key {key!r}")
        try:
            values[key] = _CONFIG_FIELDS[key](text)
        except ValueError:
            raise TensorFormatError(f"Manifest config {key}={text!r} is malformed")
    return _CONFIG_CLASSES[manifest.solver](**values)


def _solve(solver, t, config, workers):
    if solver == "pasd":
        return pasd_recover(t, config, workers=workers)
    if solver == "snn":
        return snn_recover(t, config, workers=workers)
    return rpca_unfold_recover(t, config, workers=workers)


def _read_checked(path, checksum=None):
    t = read_tensor(path)
    if checksum and t.checksum() != checksum:
        raise TensorFormatError(f"{path} does not match the checksum recorded in the manifest")
    return t


def _print_entries(entries):
    for key, value in entries.items():
        print(f"{key}={format_value(value)}")


def cmd_recover(args, options):
    workers = options["Runtime"]["threads"]
    if args.from_manifest:
        previous = read_manifest(args.from_manifest)
        solver = previous.solver
        config = config_from_manifest(previous)
        input_path = args.input or previous.input_path
        t = _read_checked(input_path, previous.input_checksum)
        truth_path = args.truth or previous.extra.get("truth_path") or None
        seed = previous.seed if args.seed is None else args.seed
    else:
        if not args.input:
            raise UsageError("recover needs an input tensor or --from-manifest")
        solver = args.solver
        input_path = args.input
        t = read_tensor(input_path)
        schedule, rank_factor = resolve_schedule(args, options)
        config = build_config(args, t.dims, schedule, rank_factor)
        truth_path = args.truth
        seed = args.seed

    prefix = args.output or f"{os.path.splitext(input_path)[0]}.{solver}"
    result = _solve(solver, t, config, workers)

    x_path, e_path = f"{prefix}.x.tnsr", f"{prefix}.e.tnsr"
    write_tensor(result.x, x_path)
    write_tensor(result.e, e_path)
    extra = {"dims": t.dims}
    if result.multiplier_gap() is not None:
        extra["gap_path"] = os.path.abspath(f"{prefix}.gap.tnsr")
        write_tensor(result.multiplier_gap(), extra["gap_path"])
    if truth_path:
        truth = read_tensor(truth_path)
        extra["truth_path"] = os.path.abspath(truth_path)
        extra["rse"] = rse(result.x, truth)
        extra["psnr"] = psnr(result.x, truth, options["Bench"]["psnr_peak"])

    manifest = RunManifest(
        solver=solver,
        config=config.as_dict(),
        input_path=os.path.abspath(input_path),
        input_checksum=t.checksum(),
        x_path=os.path.abspath(x_path),
        e_path=os.path.abspath(e_path),
        seed=seed,
        iters=result.iters,
        converged=result.converged,
        final_residual=result.final_residual,
        objective=result.objective,
        wall_time_s=result.wall_time_s,
        certificate=result.certificate,
        extra=extra,
    )
    manifest_path = f"{prefix}.manifest"
    write_manifest(manifest, manifest_path)
    _print_entries({"manifest": manifest_path, **manifest.to_entries()})

    if args.strict and not result.converged:
        logging.error(f"{solver} did not converge within {result.iters} iterations")
        return constants.EXIT_NOT_CONVERGED
    return constants.EXIT_OK


def cmd_synth(args, options):
    spec = SynthSpec(args.dims, _one_or_all(args.rank), args.corruption, args.seed)
    t0 = gen_lowrank_tucker(spec, args.trial)
    t, positions = corrupt_sparse(
        t0, args.corruption, args.seed, args.trial, kind=args.kind, low=args.low, high=args.high
    )
    truth_path, input_path = f"{args.output}.truth.tnsr", f"{args.output}.input.tnsr"
    write_tensor(t0, truth_path)
    write_tensor(t, input_path)
    entries = {
        "dims": spec.dims,
        "ranks": spec.ranks,
        "corruption_fraction": float(spec.corruption_fraction),
        "seed": spec.seed,
        "trial": args.trial,
        "kind": args.kind,
        "corrupted_count": int(positions.size),
        "truth_path": os.path.abspath(truth_path),
        "truth_checksum": t0.checksum(),
        "input_path": os.path.abspath(input_path),
        "input_checksum": t.checksum(),
    }
    write_manifest(entries, f"{args.output}.synth.manifest")
    _print_entries(entries)
    return constants.EXIT_OK


def _bench_solvers(args, options, names):
    _check_solvers(names)
    schedule, rank_factor = resolve_schedule(args, options)
    workers = options["Runtime"]["threads"]
    return {
        name: make_solver(name, workers=workers, rank_factor=rank_factor, **schedule)
        for name in names
    }


def cmd_bench(args, options):
    solvers = _bench_solvers(args, options, args.solvers)
    trials = args.trials or options["Bench"]["trials"]
    rows = run_table_benchmark(
        args.dims, _one_or_all(args.rank), args.corruptions, solvers, trials, args.seed
    )
    write_metrics_csv(rows, args.output)
    for row in rows:
        print(f"{row.solver} rho={row.rho} rse={format_float(row.mean_rse)} time={row.mean_time_s:.3f}s")
    return constants.EXIT_OK


def _phase_axes(args):
    if args.full_grid:
        if args.ranks or args.corruptions:
            raise UsageError("--full-grid replaces --ranks and --corruptions")
        return full_rank_axis(), full_corruption_axis()
    if not args.ranks or not args.corruptions:
        raise UsageError("phase needs --ranks and --corruptions, or --full-grid")
    return args.ranks, args.corruptions


def cmd_phase(args, options):
    rank_axis, corruption_axis = _phase_axes(args)
    solver = _bench_solvers(args, options, [args.solver])[args.solver]
    grid = phase_transition_sweep(
        args.dims,
        rank_axis,
        corruption_axis,
        solver,
        trials=args.trials or options["Bench"]["trials"],
        rse_threshold=(
            options["Bench"]["rse_threshold"] if args.threshold is None else args.threshold
        ),
        seed=args.seed,
        workers=options["Runtime"]["threads"],
    )
    companion = write_phase_pgm(grid, args.output)
    print(f"phase grid written to {args.output} (axes in {companion})")
    return constants.EXIT_OK


def cmd_timing(args, options):
    solvers = _bench_solvers(args, options, args.solvers)
    rows = timing_sweep(args.sizes, solvers, args.rank, args.corruption, args.order, args.seed)
    write_timing_csv(rows, args.output)
    if len(set(args.sizes)) > 1:
        for name in solvers:
            print(f"{name} log-log slope {loglog_slope(rows, name):.3f}")
    return constants.EXIT_OK


def cmd_certify(args, options):
    manifest = read_manifest(args.manifest)
    if manifest.solver != "pasd":
        raise UsageError(f"Only PASD runs carry a certificate, manifest is for {manifest.solver}")
    if not manifest.converged:
        raise StateError("Certificate requires a converged run")
    config = config_from_manifest(manifest)
    t = _read_checked(manifest.input_path, manifest.input_checksum)
    gap = read_tensor(manifest.extra["gap_path"]) if "gap_path" in manifest.extra else None
    if gap is None:
        raise TensorFormatError(f"{args.manifest} has no gap_path entry")
    certificate = certificate_from_gap(gap, t, config, manifest.iters)
    if manifest.certificate is not None and not np.allclose(
        manifest.certificate, certificate, rtol=1e-12, atol=0
    ):
        logging.warning(f"Recomputed certificate {certificate} differs from the recorded one")

    report = {
        "epsilon_hat": certificate.epsilon_hat,
        "c": certificate.c,
        "bound": certificate.bound,
        "objective": manifest.objective,
    }
    truth_path = args.truth or manifest.extra.get("truth_path")
    if truth_path:
        x0 = read_tensor(truth_path)
        deficit = rank_deficit_term(x0, config)
        report["rank_deficit_term"] = deficit
        if deficit == 0:
            *_, f_feasible = feasible_point(x0, t, config)
            report["feasible_objective"] = f_feasible
            report["holds"] = certificate.holds_for(manifest.objective, f_feasible)
        else:
            logging.info("Rank bounds are below the ground-truth ranks; no feasible point")

    entries = {key: format_float(v) if isinstance(v, float) else v for key, v in report.items()}
    if args.output:
        write_manifest(entries, args.output)
    _print_entries(entries)
    return constants.EXIT_OK


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        setup_logging(level=log.DEBUG if args.verbose else log.INFO, log_dir=args.log_dir)
        options = load_options(args.config)
        return args.func(args, options)
    except (UsageError, ArgumentError) as e:
        print(e, file=sys.stderr)
        return constants.EXIT_USAGE
    except (TensorFormatError, OSError) as e:
        logging.error(e)
        return constants.EXIT_IO
    except (NumericalFailure, np.linalg.LinAlgError) as e:
        logging.error(f"Numerical failure: {e}")
        return constants.EXIT_NUMERICAL
    except StateError as e:
        logging.error(e)
        return constants.EXIT_NOT_CONVERGED


def main_exit():
    sys.exit(main())
