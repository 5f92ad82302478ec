"""Command-line entry point ``cavity-oat``.

Exit codes: 0 success, 1 embedded assertion failed, 2 config error, 3 engine error.
"""

from __future__ import annotations

import argparse
import sys
from importlib import resources
from pathlib import Path

from .errors import ConfigError, EngineError
from .runner import evaluate_assertions, run_scenario, write_outputs
from .scenario import apply_overrides, load_config, scenario_from_dict

EXIT_OK = 0
EXIT_ASSERTION = 1
EXIT_CONFIG = 2
EXIT_ENGINE = 3


def preset_names() -> list[str]:
    root = resources.files("cavity_oat") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def preset_path(name: str) -> Path:
    if name not in preset_names():
        raise ConfigError(f"unknown preset '{name}'; available: {', '.join(preset_names())}")
    return Path(str(resources.files("cavity_oat") / "presets" / f"{name}.json"))


def _load(args) -> "Scenario":  # noqa: F821
    if (args.config is None) == (getattr(args, "preset", None) is None):
        raise ConfigError("give exactly one of a config path or --preset NAME")
    path = preset_path(args.preset) if getattr(args, "preset", None) else args.config
    return scenario_from_dict(apply_overrides(load_config(path), args.override or []))


def _cmd_run(args) -> int:
    s = _load(args)
    result = run_scenario(s)
    outcomes = evaluate_assertions(result)
    out = Path(args.out) if args.out else Path("runs") / s.name
    files = write_outputs(result, out, outcomes)
    print(f"{s.name}: wrote {len(files)} files to {out}")
    failed = 0
    for o in outcomes:
        print(f"  [{'PASS' if o.passed else 'FAIL'}] assertion {o.index} ({o.kind}): {o.detail}")
        failed += not o.passed
    return EXIT_ASSERTION if failed else EXIT_OK


def _cmd_validate(args) -> int:
    s = _load(args)
    n = len(s.sweep.values) if s.sweep else 1
    print(f"{s.name}: valid ({n} sweep value(s), {s.time_grid.points} time points, engines {', '.join(s.engines)})")
    return EXIT_OK


def _cmd_presets(args) -> int:
    for name in preset_names():
        data = load_config(preset_path(name))
        print(f"{name}\t{data.get('description', '')}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cavity-oat", description="Run cavity-assisted twisting scenarios.")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and write CSV + manifest")
    run.add_argument("config", nargs="?", help="JSON scenario file")
    run.add_argument("--preset", help="run a shipped preset instead of a file")
    run.add_argument("--out", help="output directory (default runs/<name>)")
    run.add_argument("--override", action="append", metavar="KEY=VALUE",
                     help="dotted-key override, value parsed as JSON; repeatable")
    run.set_defaults(func=_cmd_run)

    val = sub.add_parser("validate", help="parse and check a scenario without running it")
    val.add_argument("config", nargs="?", help="JSON scenario file")
    val.add_argument("--preset", help="validate a shipped preset")
    val.add_argument("--override", action="append", metavar="KEY=VALUE")
    val.set_defaults(func=_cmd_validate)

    pre = sub.add_parser("presets", help="preset catalog")
    pre_sub = pre.add_subparsers(dest="action", required=True)
    pre_sub.add_parser("list", help="list shipped presets").set_defaults(func=_cmd_presets)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EngineError as exc:
        where = f" (sweep {exc.sweep_index}, t={exc.t})" if exc.sweep_index is not None else ""
        print(f"engine error{where}: {exc}", file=sys.stderr)
        return EXIT_ENGINE


if __name__ == "__main__":
    sys.exit(main())
