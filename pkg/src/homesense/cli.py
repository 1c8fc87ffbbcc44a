"""Command line: ``homesense run|provision|verify``.

Exit status is 0 on success, 1 when an invariant is violated (or provisioning
leaves a sensor without credentials) and 2 for configuration or usage errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from importlib import resources
from pathlib import Path

from .config import ScenarioConfig, builtin_scenario, load_config
from .errors import ConfigError, ConservationError
from .report import ReportMissing, verify_report
from .simnet import run_provisioning, run_scenario

OK, VIOLATION, CONFIG_ERROR = 0, 1, 2


def builtin_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("homesense").joinpath("scenarios").iterdir() if p.name.endswith(".yaml"))


def _load(ref: str, seed: int | None) -> ScenarioConfig:
    # a bundled scenario may be named directly, e.g. ``homesense run gateway-loss``
    if not Path(ref).exists() and ref in builtin_names():
        return builtin_scenario(ref, seed)
    return load_config(ref, seed)


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _load(args.config, args.seed)
    try:
        report = run_scenario(cfg)
    except ConservationError as exc:
        print(f"conservation violated: {exc}", file=sys.stderr)
        return VIOLATION
    out = report.write(args.out, cfg.deployment.sink.output)
    s = report.summary
    print(f"generated={s['generated']} sink={s['sink_count']} seed={s['seed']} out={out}")
    return OK


def cmd_provision(args: argparse.Namespace) -> int:
    cfg = _load(args.config, args.seed)
    try:
        result = run_provisioning(cfg)
    except ValueError as exc:
        raise ConfigError("provisioning.enabled", str(exc)) from None
    for line in result.events:
        print(line)
    for sensor, rnd in result.recovered_round.items():
        at = result.recovered_at[sensor]
        print(f"sensor={sensor} round={rnd if rnd is not None else 'none'} t={'-' if at is None else f'{at:.3f}'}")
    print(f"rounds_sent={result.rounds_sent} complete={str(result.complete).lower()}")
    return OK if all(r is not None for r in result.recovered_round.values()) else VIOLATION


def cmd_verify(args: argparse.Namespace) -> int:
    try:
        verdict = verify_report(args.outdir)
    except ReportMissing as exc:
        print(f"error: {exc}", file=sys.stderr)
        return CONFIG_ERROR
    for problem in verdict.violations:
        print(f"violation: {problem}")
    print(
        f"rows={verdict.checked_rows} generated={verdict.generated_rows} sink={verdict.sink_rows} "
        f"result={'ok' if verdict.ok else 'FAILED'}"
    )
    return OK if verdict.ok else VIOLATION


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="homesense", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log debug output to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate a deployment and write a report directory")
    run.add_argument("config", help=f"config file, or a bundled scenario ({', '.join(builtin_names())})")
    run.add_argument("--seed", type=int, help="overrides EPIFI_SEED and the config's seed")
    run.add_argument("--out", default="report", help="output directory (default: ./report)")
    run.set_defaults(func=cmd_run)

    prov = sub.add_parser("provision", help="run only the provisioning phase")
    prov.add_argument("config")
    prov.add_argument("--seed", type=int)
    prov.set_defaults(func=cmd_provision)

    ver = sub.add_parser("verify", help="re-check a report directory")
    ver.add_argument("outdir")
    ver.set_defaults(func=cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return CONFIG_ERROR if exc.code else OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return CONFIG_ERROR
