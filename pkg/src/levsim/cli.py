"""Command-line interface.

Failures exit with status 2 and print one line ``error: <category>: <message>``
to stderr, where category is one of ``usage``, ``config``, ``io``, ``solver``,
``scenario``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError
from .engine import SimulationError, run
from .io import _atomic_dir_write, analyze, emit_run, parse_config, write_json
from .rng import chi_series, load_chi, save_chi
from .scenarios import UnknownScenario, list_scenarios, run_scenario, sweep


class UsageError(ValueError):
    pass


def parse_seeds(text: str) -> list[int]:
    """``"5"`` means seeds 1..5; ``"3,7,9"`` is an explicit list."""
    text = text.strip()
    try:
        if "," in text:
            return [int(x) for x in text.split(",") if x.strip()]
        n = int(text)
    except ValueError:
        raise UsageError(f"bad seed list {text!r}") from None
    if n < 0:
        raise UsageError("seed count must be >= 0")
    return list(range(1, n + 1))


def parse_values(text: str) -> list:
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            out.append(json.loads(item))
        except json.JSONDecodeError:
            out.append(item)
    if not out:
        raise UsageError("--values is empty")
    return out


def _cmd_run(args) -> int:
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    cfg = parse_config(args.config, overrides)
    chi = load_chi(args.chi_in) if args.chi_in else None
    art = run(cfg, chi=chi, backend=args.backend)
    if args.chi_out:
        save_chi(args.chi_out, chi if chi is not None else chi_series(cfg.seed, cfg.T))
    paths = emit_run(art, args.out, compact=args.compact, chi=chi)
    for p in paths:
        print(p)
    return 0


def _cmd_sweep(args) -> int:
    cfg = parse_config(args.config, args.set or [])
    seeds = parse_seeds(args.seeds)
    values = parse_values(args.values)
    try:
        table = sweep(cfg, args.param, values, seeds, jobs=args.jobs)
    except KeyError as exc:
        raise ConfigError(args.param, str(exc.args[0])) from None
    man = {"config": cfg.to_dict(), "param": args.param, "values": values, "seeds": seeds,
           "version": __version__}
    out = Path(args.out)
    _atomic_dir_write(out, {
        "sweep.csv": lambda p: Path(p).write_text(table.rows().to_csv()),
        "aggregate.csv": lambda p: Path(p).write_text(table.aggregate().to_csv()),
        "manifest.json": lambda p: write_json(man, p),
    })
    print(out / "aggregate.csv")
    return 0


def _parse_set(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"override {item!r} must look like key=value")
        k, _, v = item.partition("=")
        try:
            out[k.strip()] = json.loads(v)
        except json.JSONDecodeError:
            out[k.strip()] = v
    return out


def _cmd_scenario(args) -> int:
    seeds = parse_seeds(args.seeds) if args.seeds else None
    try:
        res = run_scenario(args.name, seeds, args.out, jobs=args.jobs, overrides=_parse_set(args.set))
    except KeyError as exc:
        if isinstance(exc, UnknownScenario):
            raise
        raise ConfigError(str(exc.args[0]), "bad override") from None
    for name in sorted(res.tables):
        print(Path(args.out) / res.scenario.name / "tables" / f"{name}.csv")
    return 0


def _cmd_analyze(args) -> int:
    summ = analyze(args.input)
    print(json.dumps(summ.to_dict(), indent=2, sort_keys=True))
    return 0


def _cmd_list(args) -> int:
    for sc in list_scenarios():
        print(f"{sc.name:22s} {sc.description}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="levsim", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one configuration")
    p.add_argument("--config", help="JSON config (missing keys take defaults)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="run-out")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override, repeatable")
    p.add_argument("--compact", action="store_true", help="write summary and manifest only")
    p.add_argument("--chi-in", help="read standard-normal draws from a text file")
    p.add_argument("--chi-out", help="write the draws used to a text file")
    p.add_argument("--backend", choices=("compiled", "python"), default="compiled")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", help="multi-seed sweep over one parameter")
    p.add_argument("--config")
    p.add_argument("--param", required=True)
    p.add_argument("--values", required=True, help="comma separated")
    p.add_argument("--seeds", default="3", help="count n (seeds 1..n) or comma list")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("scenario", help="run a named experiment")
    p.add_argument("name")
    p.add_argument("--seeds", help="count n (seeds 1..n) or comma list")
    p.add_argument("--out", default="scenario-out")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="base config override")
    p.set_defaults(func=_cmd_scenario)

    p = sub.add_parser("analyze", help="recompute summary.json of a run directory")
    p.add_argument("--in", dest="input", required=True)
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("list-scenarios", help="list registered scenarios")
    p.set_defaults(func=_cmd_list)
    return ap


def _fail(category: str, message: str) -> int:
    print(f"error: {category}: {message}".replace("\n", " "), file=sys.stderr)
    return 2


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        return _fail("usage", str(exc))
    except ConfigError as exc:
        return _fail("config", str(exc))
    except UnknownScenario as exc:
        return _fail("scenario", str(exc))
    except SimulationError as exc:
        return _fail("solver", str(exc))
    except (OSError, ValueError) as exc:
        category = "io" if isinstance(exc, OSError) else "config"
        return _fail(category, str(exc))


if __name__ == "__main__":
    sys.exit(main())
