"""
ShellRig Command Line

    python -m app.cli run configs/perturbed_plane.toml --set domain.m_per_side=33
    python -m app.cli check configs/cylinder.toml
    python -m app.cli sweep configs/wrinkle.toml --param k=1..16

Exit status is 0 on success, 1 for configuration, report or evaluation errors and 2 when
an estimate is evaluated outside of its hypotheses.
"""

import argparse
import json
import logging
import sys
from typing import List, Optional, Sequence

from app import settings
from shellrig.config import apply_overrides, load_config, validate_config
from shellrig.errors import ConfigError, HypothesisError, ReportError, ShellRigError
from shellrig.experiments import build_scenario, emit_reports, run_experiment

logger = logging.getLogger("shellrig.cli")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_HYPOTHESIS = 2


def parse_param(text: str):
    """``name=a..b`` for the integers a..b, or ``name=v1,v2,...``"""
    if "=" not in text:
        raise ConfigError("--param", f"expected name=values, got {text!r}")
    name, listing = (part.strip() for part in text.split("=", 1))
    try:
        if ".." in listing:
            start, stop = (int(part) for part in listing.split("..", 1))
            if stop < start:
                raise ValueError("empty range")
            values = [float(v) for v in range(start, stop + 1)]
        else:
            values = [float(v) for v in listing.split(",") if v.strip()]
    except ValueError:
        raise ConfigError("--param", f"cannot read values {listing!r}") from None
    if not name or not values:
        raise ConfigError("--param", f"expected name=values, got {text!r}")
    return name, values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shellrig", description="Rigidity experiments for discrete immersions")
    parser.add_argument("--log-level", default=settings.LOG_LEVEL, help="logging level (default %(default)s)")
    verbs = parser.add_subparsers(dest="verb", required=True)

    def scenario_parser(name: str, help_text: str) -> argparse.ArgumentParser:
        sub = verbs.add_parser(name, help=help_text)
        sub.add_argument("config", help="scenario TOML file")
        sub.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                         help="override a config key, e.g. family.k=8")
        return sub

    run = scenario_parser("run", "run the experiment a scenario describes")
    run.add_argument("--out", default=None, help="output directory (default: $SHELLRIG_OUTPUT_DIR, then [output].dir)")
    run.add_argument("--n-jobs", type=int, default=None)

    scenario_parser("check", "validate a scenario and print the resolved configuration")

    sweep = scenario_parser("sweep", "sweep one family parameter")
    sweep.add_argument("--param", required=True, help="name=a..b or name=v1,v2,...")
    sweep.add_argument("--out", default=None)
    sweep.add_argument("--n-jobs", type=int, default=None)
    return parser


def _run(config, out: Optional[str], n_jobs: Optional[int]) -> int:
    n_jobs = n_jobs if n_jobs is not None else max(config.experiment.n_jobs, settings.N_JOBS)
    result = run_experiment(config, n_jobs)
    directory = out or settings.output_dir(config.output.dir)
    for path in emit_reports(result, directory, config.output.stem, config.output.formats):
        print(path)
    for warning in result.summary.get("warnings", []):
        print(f"warning: {warning}", file=sys.stderr)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    settings.configure_logging(args.log_level)
    try:
        overrides: List[str] = list(args.overrides)
        if args.verb == "sweep":
            name, values = parse_param(args.param)
            config = load_config(args.config, overrides)
            kind = config.experiment.kind if config.experiment.kind in ("rigidity", "convergence") else "rigidity"
            raw = apply_overrides(config.model_dump(mode="json"), [
                f"experiment.kind={json.dumps(kind)}",
                f"experiment.sweep_param={json.dumps(name)}",
                f"experiment.values={json.dumps(values)}",
            ])
            config = validate_config(raw)
            return _run(config, args.out, args.n_jobs)
        config = load_config(args.config, overrides)
        if args.verb == "check":
            build_scenario(config)
            print(json.dumps(config.resolved(), sort_keys=True, indent=2))
            return EXIT_OK
        return _run(config, args.out, args.n_jobs)
    except HypothesisError as exc:
        logger.error("hypothesis violated: %s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except (ConfigError, ReportError) as exc:
        logger.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ShellRigError, ArithmeticError) as exc:
        logger.error("%s failed: %s", args.verb, exc)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
