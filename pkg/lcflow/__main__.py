import argparse
import logging
import sys
from dataclasses import replace

from .errors import ConfigError, LcflowError, MissingArtifact, StepFailure
from .utils import strings
from .utils.config import ExperimentConfig, config_from_dict, config_to_dict, load_config
from .utils.presets import PRESETS, preset
from .utils.recent import latest_run

EXIT_CONFIG = 2
EXIT_STEP_FAILURE = 3
EXIT_MISSING_ARTIFACT = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lcflow",
        description="Radial lab for the regularized parabolic complex Monge-Ampere flow",
    )
    parser.add_argument(
        "--log-level",
        default="WARNING",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging level (default: WARNING)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", metavar="FILE", help="YAML experiment config")
    common.add_argument(
        "-p", "--preset", choices=sorted(PRESETS),
        help="Named preset; --config sections are merged on top of it",
    )
    common.add_argument("-o", "--out", metavar="DIR", help="Output directory (default: output.dir)")

    p_run = sub.add_parser("run", parents=[common], help="Integrate one flow")
    p_run.add_argument("--plots", action="store_true", help="Also render PNG figures")

    p_cascade = sub.add_parser("cascade", parents=[common], help="Run the limit cascade")
    p_cascade.add_argument("-j", "--threads", type=int, help="Worker threads")

    p_audit = sub.add_parser("audit", parents=[common], help="Audit a finished run")
    p_audit.add_argument(
        "--run-dir", metavar="DIR", help="Run to audit (default: most recent run)"
    )
    p_audit.add_argument(
        "--audits", nargs="+", metavar="NAME", help="Audits to run (default: audit.audits)"
    )
    p_audit.add_argument("--compare-run", metavar="DIR", help="Second run for maximality")

    p_ref = sub.add_parser("reference", parents=[common], help="Tabulate a reference metric")
    p_ref.add_argument("--kind", choices=["cusp-ke", "cone-ke", "flat"], required=True)
    p_ref.add_argument("--beta", type=float, help="Cone angle parameter for cone-ke")
    p_ref.add_argument("--s-min", type=float)
    p_ref.add_argument("--s-max", type=float)
    p_ref.add_argument("--n-nodes", type=int)

    p_plot = sub.add_parser("plot", parents=[common], help="Render figures of a finished run")
    p_plot.add_argument("--run-dir", metavar="DIR", help="Run to plot (default: most recent run)")
    return parser


def _load(args: argparse.Namespace) -> ExperimentConfig:
    base = preset(args.preset) if args.preset else None
    if args.config:
        config = load_config(args.config, base)
    else:
        config = config_from_dict(base or {})

    if getattr(args, "plots", False):
        config = replace(config, output=replace(config.output, plots=True))
    if getattr(args, "audits", None):
        data = config_to_dict(config)
        data["audit"]["audits"] = args.audits
        config = config_from_dict(data)
    if getattr(args, "compare_run", None):
        config = replace(config, audit=replace(config.audit, compare_run=args.compare_run))
    if args.command == "reference":
        grid = config.grid
        config = replace(config, grid=replace(
            grid,
            s_min=grid.s_min if args.s_min is None else args.s_min,
            s_max=grid.s_max if args.s_max is None else args.s_max,
            n_nodes=grid.n_nodes if args.n_nodes is None else args.n_nodes,
        ))
    return config


def _resolve_run_dir(args: argparse.Namespace) -> str:
    if args.run_dir:
        return args.run_dir
    latest = latest_run("run")
    if latest is None:
        raise MissingArtifact(strings.MSG_NO_RECENT_RUN)
    return str(latest)


def _dispatch(args: argparse.Namespace) -> None:
    from .controllers.experiment import ExperimentController
    from .views.plots import plots_available

    config = _load(args)
    controller = ExperimentController(
        config, out_dir=args.out, threads=getattr(args, "threads", None)
    )

    if args.command == "run":
        outcome = controller.run()
        print(strings.status_run_done(
            str(outcome.out_dir), outcome.summary["final_time"], outcome.summary["steps"]
        ))
    elif args.command == "cascade":
        result = controller.cascade()
        for ordering, margin in result.monotonicity_margins.items():
            verdict = "pass" if margin >= -controller.tolerance else "fail"
            print(strings.status_ordering(ordering.value, verdict, margin))
        print(strings.status_cascade_done(str(controller.out_dir), len(result.runs)))
    elif args.command == "audit":
        for report in controller.audit(_resolve_run_dir(args)):
            print(strings.status_audit(report.name, report.verdict, report.min_margin))
    elif args.command == "reference":
        record = controller.reference(args.kind, args.beta)
        print(strings.status_reference_done(record["kind"], record["einstein_residual"]))
    elif args.command == "plot":
        if not plots_available():
            print(strings.MSG_PLOT_EXTRA, file=sys.stderr)
            sys.exit(1)
        for path in controller.plot(_resolve_run_dir(args)):
            print(strings.status_saved(str(path)))


def main(argv: list[str] | None = None) -> None:
    args = _build_parser().parse_args(argv)

    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
    )

    try:
        _dispatch(args)
    except MissingArtifact as err:
        print(strings.msg_missing_artifact(err), file=sys.stderr)
        sys.exit(EXIT_MISSING_ARTIFACT)
    except StepFailure as err:
        print(strings.msg_step_failure(err), file=sys.stderr)
        sys.exit(EXIT_STEP_FAILURE)
    except (ConfigError, ValueError, LcflowError) as err:
        print(strings.msg_config_error(err), file=sys.stderr)
        sys.exit(EXIT_CONFIG)


if __name__ == "__main__":
    main()
