""" Entry point for cli """
import argparse
import json
import logging
import sys
from pathlib import Path

from stress_basis import __version__
from stress_basis.basis import (
    EigenSolveConfig,
    cache_path,
    load_basis,
    save_basis,
    solve_basis_annulus,
    solve_basis_rectangle,
    verify_basis,
)
from stress_basis.config import Config
from stress_basis.constitutive import material_from_dict
from stress_basis.experiments import (
    ExperimentConfig,
    build_basis,
    build_mesh,
    build_oracle,
    dump_preset,
    list_presets,
    loading_from_dict,
    run_experiment,
)
from stress_basis.fields import write_field_csv
from stress_basis.meshes import (
    Annulus,
    Rectangle,
    build_radial_grid,
    build_rectangle_mesh,
    domain_from_dict,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_NUMERIC = 1
EXIT_USAGE = 2


def _add_experiment_source(parser):
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("preset", nargs="?", help="Name of an embedded preset")
    source.add_argument("-c", "--config", type=Path, help="Path to an experiment JSON document")
    parser.add_argument(
        "--full",
        action="store_true",
        help="Apply the preset's full-scale overrides (larger N and finer meshes)",
    )


def parse_args(argv=None):
    """Parse arguments from the command line"""
    parser = argparse.ArgumentParser(
        prog="stress-basis",
        description="Planar elastic stresses from residual-stress eigenbases - CLI Tool",
    )
    parser.add_argument(
        "-v",
        "--verbose",
        action="store_true",
        help="Verbose mode, prints debug logs (eigen solves, factorizations, condition numbers)",
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    # basis
    basis = commands.add_parser("basis", help="Build, verify or dump stress bases")
    basis_commands = basis.add_subparsers(dest="basis_command", required=True)
    build = basis_commands.add_parser("build", help="Solve a basis and store it")
    domain = build.add_mutually_exclusive_group(required=True)
    domain.add_argument("--preset", help="Build the basis a preset expands in")
    domain.add_argument(
        "--rectangle", nargs=2, type=float, metavar=("LX", "LY"), help="Rectangle side lengths"
    )
    domain.add_argument(
        "--annulus", nargs=2, type=float, metavar=("R_A", "R_B"), help="Annulus radii"
    )
    build.add_argument("--full", action="store_true", help="Use the preset's full-scale settings")
    build.add_argument("-n", "--modes", type=int, default=None, help="Number of modes")
    build.add_argument("-e", "--elements", type=int, default=None, help="Elements per direction")
    build.add_argument(
        "-m",
        "--wavenumbers",
        type=int,
        nargs="+",
        default=None,
        help="Annulus wavenumbers (default 0..max_wavenumber from the config file)",
    )
    build.add_argument(
        "--parities", nargs="+", choices=("cos", "sin"), default=["cos", "sin"]
    )
    build.add_argument(
        "--feature-line",
        action="append",
        nargs=2,
        metavar=("AXIS", "VALUE"),
        default=[],
        help="Rectangle line x=VALUE or y=VALUE that must lie on element edges",
    )
    build.add_argument("-o", "--out", type=Path, help="Archive path (default: the basis cache)")
    verify = basis_commands.add_parser("verify", help="Check orthogonality and equilibrium")
    verify.add_argument("path", type=Path, help="Basis archive")
    verify.add_argument("--l2-tol", type=float, default=None)
    verify.add_argument("--h1-tol", type=float, default=None)
    dump = basis_commands.add_parser("dump", help="Write the leading modes as field CSVs")
    dump.add_argument("path", type=Path, help="Basis archive")
    dump.add_argument("-k", "--count", type=int, default=3, help="Number of modes to dump")
    dump.add_argument("-o", "--out", type=Path, required=True, help="Output directory")

    # run
    run_parser = commands.add_parser("run", help="Run an experiment")
    _add_experiment_source(run_parser)
    run_parser.add_argument("-o", "--out", type=Path, help="Output directory")
    run_parser.add_argument(
        "--no-cache", action="store_true", help="Always solve the basis, never read the cache"
    )
    run_parser.add_argument(
        "--strict", action="store_true", help="Exit with 1 when an acceptance check fails"
    )

    # preset
    preset = commands.add_parser("preset", help="List or dump embedded presets")
    preset_commands = preset.add_subparsers(dest="preset_command", required=True)
    preset_list = preset_commands.add_parser("list", help="List preset names")
    preset_list.add_argument(
        "--machine", action="store_true", help="One name per line, nothing else"
    )
    preset_dump = preset_commands.add_parser("dump", help="Print a preset as JSON")
    preset_dump.add_argument("name")

    # oracle
    oracle = commands.add_parser("oracle", help="Reference solutions")
    oracle_commands = oracle.add_subparsers(dest="oracle_command", required=True)
    oracle_build = oracle_commands.add_parser("build", help="Compute and cache an oracle")
    _add_experiment_source(oracle_build)

    return parser.parse_args(argv)


def _experiment(args):
    if args.config is not None:
        return ExperimentConfig.from_file(args.config, full=args.full)
    return ExperimentConfig.preset(args.preset, full=args.full)


def _basis_build(args):
    if args.preset:
        config = ExperimentConfig.preset(args.preset, full=args.full)
        material = material_from_dict(config.material)
        loading = loading_from_dict(domain_from_dict(config.domain), config.loading)
        mesh = build_mesh(config, loading, material)
        basis = build_basis(config, mesh, use_cache=args.out is None)
        if args.out is not None:
            save_basis(basis, args.out)
        print(f"{basis.fingerprint} ({basis.digest[:12]}) for preset {args.preset}")
        return EXIT_OK

    lines = [(axis, float(value)) for axis, value in args.feature_line]
    if args.rectangle:
        elements = args.elements or Config.RECTANGLE_ELEMENTS
        mesh = build_rectangle_mesh(Rectangle(*args.rectangle), elements, elements, lines)
        basis = solve_basis_rectangle(mesh, EigenSolveConfig(args.modes or 10))
    else:
        if lines:
            raise ValueError("Feature lines only apply to rectangles")
        elements = args.elements or Config.ANNULUS_ELEMENTS
        mesh = build_radial_grid(Annulus(*args.annulus), elements)
        wavenumbers = args.wavenumbers
        if wavenumbers is None:
            wavenumbers = list(range(Config.MAX_WAVENUMBER + 1))
        cfg = EigenSolveConfig(args.modes or 10, resolution=elements, parities=tuple(args.parities))
        basis = solve_basis_annulus(mesh, wavenumbers, cfg)
    path = args.out or cache_path(mesh, basis.backend, basis.size)
    save_basis(basis, path)
    print(f"{basis.fingerprint} -> {path}")
    print("lowest eigenvalues: " + ", ".join(f"{v:.6g}" for v in basis.eigenvalues[:5]))
    return EXIT_OK


def _basis_verify(args):
    basis = load_basis(args.path)
    report = verify_basis(basis, l2_tol=args.l2_tol, h1_tol=args.h1_tol)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK if report.passed else EXIT_NUMERIC


def _basis_dump(args):
    basis = load_basis(args.path)
    if not 1 <= args.count <= basis.size:
        raise ValueError(f"--count must lie in [1, {basis.size}], got {args.count}")
    for index in range(args.count):
        mode = basis.modes[index]
        path = args.out.joinpath(f"mode_{index + 1}.csv")
        write_field_csv(
            mode,
            path,
            f"{basis.fingerprint} mode {index + 1} eigenvalue {basis.eigenvalues[index]:.17g}",
        )
    logger.info("Wrote %d modes of %s to %s", args.count, basis.fingerprint, args.out)
    return EXIT_OK


def _run(args):
    config = _experiment(args)
    report = run_experiment(config, args.out, use_cache=not args.no_cache)
    for principle, summary in report.principles.items():
        print(
            f"{principle}: N={summary['N']} objective={summary['objective']:.10g} "
            f"E_N={summary['E_N']} slope={summary['slope']}"
        )
    for check in report.checks:
        status = {True: "pass", False: "FAIL", None: "skip"}[check["passed"]]
        print(f"[{status}] {check['kind']} {check.get('principle', '')}".rstrip())
    if args.strict and not report.passed:
        return EXIT_NUMERIC
    return EXIT_OK


def _preset(args):
    if args.preset_command == "list":
        print(list_presets(machine=args.machine))
    else:
        sys.stdout.write(dump_preset(args.name))
    return EXIT_OK


def _oracle(args):
    path = build_oracle(_experiment(args))
    print(path)
    return EXIT_OK


def _basis(args):
    handlers = {"build": _basis_build, "verify": _basis_verify, "dump": _basis_dump}
    return handlers[args.basis_command](args)


HANDLERS = {"basis": _basis, "run": _run, "preset": _preset, "oracle": _oracle}


def main(argv=None):
    """Run one command and return its exit code"""
    args = parse_args(argv)
    Config(verbose=args.verbose)
    try:
        return HANDLERS[args.command](args)
    except ValueError as err:
        logger.error("%s", err)
        return EXIT_USAGE
    except Exception:  # pylint: disable=broad-except
        logger.critical("stress-basis %s failed", args.command, exc_info=True)
        return EXIT_NUMERIC


def run():
    """Entry point"""
    sys.exit(main())


if __name__ == "__main__":
    run()
