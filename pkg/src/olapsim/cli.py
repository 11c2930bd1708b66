"""Command-line entry point: ``olapsim run|sweep|oracle|dump-config``.

Exit codes: 0 success, 1 failed sweep run or oracle, 2 parse error,
3 validation error, 4 runtime invariant breach.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ParseError, ScenarioConfig, ValidationError, parse
from .engine import SimulationError
from .plan import InvariantViolation
from .routing import PolicyKind
from .runner import output_root, parse_axis, run_oracles, run_scenario, sweep

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_PARSE = 2
EXIT_VALIDATION = 3
EXIT_RUNTIME = 4


def _scenario(path: str | None) -> tuple[ScenarioConfig, str, str]:
    """Config, scenario id and raw text; no path means the built-in defaults."""
    if path is None:
        return parse(""), "reference", ""
    p = Path(path)
    text = p.read_text()
    return parse(text), p.stem, text


def _overrides(args) -> dict[str, object]:
    ov: dict[str, object] = {}
    if getattr(args, "seed", None) is not None:
        ov["run.seed"] = args.seed
    if getattr(args, "max_events", None) is not None:
        ov["run.max_events"] = args.max_events
    if getattr(args, "policy", None) is not None:
        ov["routing.policy"] = args.policy
    return ov


def _print_oracles(backend: str | None, seed: int | None) -> int:
    checks = run_oracles(backend=backend, seed=seed)
    for c in checks:
        print(c.line())
    return EXIT_OK if all(c.passed for c in checks) else EXIT_FAILED


def cmd_run(args) -> int:
    cfg, name, _ = _scenario(args.scenario)
    cfg = cfg.with_overrides(_overrides(args))
    outcome = run_scenario(cfg, name=name, out_dir=args.out, backend=args.backend, svg=not args.no_svg)
    m = outcome.manifest
    s = m["summary"]
    print(f"scenario {name}: {m['total_events']} events, stopped by {m['stopped_by']}, t_end={m['t_end']:g}s")
    print(f"cv={s['cv']:.4g} mean_rate={s['mean_rate']:.4g} q/s mean_processing={s['mean_processing']:.4g}s")
    print(f"wrote {outcome.out_dir}")
    if args.oracle:
        return _print_oracles(args.backend, args.seed)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg, name, text = _scenario(args.scenario)
    base = _overrides(args)
    if base:
        cfg = cfg.with_overrides(base)
    axes = [parse_axis(a) for a in args.axis]
    for key, values in axes:  # fail fast on a bad axis before spawning runs
        for v in values:
            cfg.with_overrides({key: v})
    out = Path(args.out) if args.out else output_root() / f"{name}_sweep"
    rows, table = sweep(
        text, axes, out, base_name=name, parallelism=args.jobs, backend=args.backend,
        svg=not args.no_svg, base_overrides=base,
    )
    failed = [r for r in rows if r["status"] != "ok"]
    print(table.read_text(), end="")
    print(f"{len(rows) - len(failed)}/{len(rows)} runs ok; table at {table}")
    return EXIT_FAILED if failed else EXIT_OK


def cmd_oracle(args) -> int:
    return _print_oracles(args.backend, args.seed)


def cmd_dump_config(args) -> int:
    cfg, _, _ = _scenario(args.scenario)
    cfg = cfg.with_overrides(_overrides(args))
    print(json.dumps(json.loads(cfg.dump()), indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="olapsim", description="Simulate an OLAP serving cluster.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, overrides=True):
        p.add_argument("scenario", nargs="?", help="scenario file (omit for the default scenario)")
        p.add_argument("--backend", choices=["cython", "python"], default=None)
        p.add_argument("--seed", type=int, default=None)
        if overrides:
            p.add_argument("--max-events", type=int, default=None)
            p.add_argument("--policy", choices=[k.value for k in PolicyKind], default=None)

    p = sub.add_parser("run", help="run one scenario")
    common(p)
    p.add_argument("--out", default=None, help="output directory (default $OLAPSIM_OUTPUT_ROOT/<scenario>)")
    p.add_argument("--no-svg", action="store_true")
    p.add_argument("--oracle", action="store_true", help="also run the D/D/1 and M/D/1 checks")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a parameter sweep")
    common(p)
    p.add_argument("--axis", action="append", required=True, metavar="SECTION.KEY=V1;V2")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default=None)
    p.add_argument("--no-svg", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle", help="run the queueing validation scenarios")
    p.add_argument("--backend", choices=["cython", "python"], default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("dump-config", help="print the resolved scenario")
    common(p)
    p.set_defaults(func=cmd_dump_config)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ValidationError as exc:
        print(exc, file=sys.stderr)
        return EXIT_VALIDATION
    except (InvariantViolation, SimulationError) as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
