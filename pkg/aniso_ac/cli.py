import argparse
import json
import logging
import sys
from pathlib import Path

from pydantic import ValidationError

from .config import AnisotropyConfig, load_config
from .constants import DEFAULT_EPS
from .errors import AnisoACError, ConfigError, DomainError, SolverError
from .fem import build_mesh
from .registry import SHAPE_REGISTRY
from .runner import delta_study, granularity_study, run_scenario
from .shapes import make_field
from .utils import write_csv, write_field, write_vtk
from .wulff import wulff_frame, wulff_shape

logger = logging.getLogger("aniso_ac")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    """Usage errors become ConfigError so they map to exit code 1."""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if verbose else logging.INFO,
        format="[%(asctime)s] %(levelname)s %(name)s: %(message)s",
        datefmt="%H:%M:%S",
        force=True,
    )


def _overrides(args) -> dict:
    return {
        "output_dir": args.out,
        "deterministic": True if args.deterministic else None,
        "threads": args.threads,
        "paper_scale": True if args.paper_scale else None,
    }


def _cmd_run(args) -> int:
    cfg = load_config(args.config, **_overrides(args))
    bundle = run_scenario(cfg, output_dir=args.out)
    logger.info("wrote %d files to %s", len(bundle.files), bundle.output_dir)
    return EXIT_OK


def _cmd_delta_study(args) -> int:
    cfg = load_config(args.config, **_overrides(args))
    out = args.out or Path(cfg.output_dir) / f"{cfg.name}_delta"
    result = delta_study(cfg, args.deltas, args.reference_delta, output_dir=out)
    logger.info("fitted slopes: L2 %.4f, H1 %.4f", result.slope_l2, result.slope_h1)
    return EXIT_OK


def _cmd_granularity_study(args) -> int:
    cfg = load_config(args.config, **_overrides(args))
    out = args.out or Path(cfg.output_dir) / f"{cfg.name}_{args.axis}"
    values = [int(v) for v in args.values] if args.axis == "mesh" else args.values
    table = granularity_study(cfg, args.axis, values, output_dir=out)
    logger.info("granularity table:\n%s", table.to_string())
    return EXIT_OK


def _cmd_wulff(args) -> int:
    try:
        aniso = AnisotropyConfig(name=args.aniso, eps_aniso=args.eps_aniso).build(0.0)
    except ValidationError as err:
        raise ConfigError(str(err)) from err
    points = wulff_shape(aniso, n_angles=args.n)
    out = Path(args.out or ".") / f"wulff_{args.aniso}.csv"
    write_csv(out, wulff_frame(points))
    logger.info("wrote %s", out)
    return EXIT_OK


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _cmd_make_field(args) -> int:
    params = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"expected key=value, got {item!r}")
        params[key] = _parse_value(value)
    try:
        shape = SHAPE_REGISTRY[args.shape](**params)
    except ValidationError as err:
        raise ConfigError(str(err)) from err
    mesh = build_mesh(args.n_div)
    values = make_field(shape, mesh, args.eps)
    out = args.out or Path(".")
    if out.suffix != ".txt":
        out = out / f"{args.shape}.txt"
    write_field(out, values, mesh.n_div, 0.0)
    if args.vtk:
        write_vtk(out.with_suffix(".vtk"), values, mesh.n_div)
    logger.info("wrote %s", out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="aniso-ac",
        description="Optimal control of anisotropic Allen-Cahn equations.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    # flags shared by every subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--out", type=Path, default=None, help="output directory (make-field also takes a .txt file)"
    )
    common.add_argument(
        "--deterministic", action="store_true", help="run every cell in-process, in order"
    )
    common.add_argument(
        "--threads", type=int, default=None, help="worker processes (env ANISO_AC_THREADS)"
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def scenario_command(name: str, help_text: str):
        cmd = sub.add_parser(name, help=help_text, parents=[common])
        cmd.add_argument("config", help="scenario TOML file")
        cmd.add_argument(
            "--paper-scale", action="store_true", help="129 x 129 grid, T=1.625e-2, tau=1.625e-4"
        )
        return cmd

    run = scenario_command("run", "optimize one scenario and write its artifacts")
    run.set_defaults(func=_cmd_run)

    delta = scenario_command("delta-study", "terminal error of uncontrolled runs against delta")
    delta.add_argument("--deltas", type=float, nargs="+", required=True)
    delta.add_argument("--reference-delta", type=float, default=0.0)
    delta.set_defaults(func=_cmd_delta_study)

    gran = scenario_command("granularity-study", "TR and CG counts across meshes or time steps")
    gran.add_argument("--axis", choices=["mesh", "tau"], required=True)
    gran.add_argument("--values", type=float, nargs="+", required=True)
    gran.set_defaults(func=_cmd_granularity_study)

    wulff = sub.add_parser("wulff", help="sample the Wulff shape of an anisotropy", parents=[common])
    wulff.add_argument("aniso", choices=["isotropic", "l1", "hexagon"])
    wulff.add_argument("--n", type=int, default=720, help="number of boundary directions")
    wulff.add_argument("--eps-aniso", type=float, default=0.01)
    wulff.set_defaults(func=_cmd_wulff)

    field = sub.add_parser(
        "make-field", help="write the tanh profile of a shape", parents=[common]
    )
    field.add_argument("shape", choices=sorted(SHAPE_REGISTRY))
    field.add_argument(
        "--set", action="append", metavar="KEY=VALUE", help="shape parameter, JSON value"
    )
    field.add_argument("--n-div", type=int, default=64)
    field.add_argument("--eps", type=float, default=DEFAULT_EPS)
    field.add_argument("--vtk", action="store_true", help="also write a VTK file")
    field.set_defaults(func=_cmd_make_field)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # --help
        return int(exc.code or 0)
    except ConfigError as err:
        print(str(err), file=sys.stderr)
        return EXIT_CONFIG

    _setup_logging(args.verbose)
    try:
        return args.func(args)
    except (ConfigError, DomainError) as err:
        logger.error("%s", err)
        return EXIT_CONFIG
    except SolverError as err:
        logger.error("solver failure: %s", err)
        return EXIT_SOLVER
    except AnisoACError as err:
        logger.error("%s", err)
        return EXIT_SOLVER
    except ValueError as err:
        logger.error("%s", err)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
