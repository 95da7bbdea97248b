"""Command-line entry point.

::

    oclmon run    --config desk.json --out results/
    oclmon sweep  --config desk.json --axis N --values 25,50,100 --out sweep/
    oclmon replay --data mmse.csv --risks risks.csv --config replay.json --out replay/
    oclmon bound  --config desk.json --constants bound.json

``run``, ``sweep`` and ``replay`` exit with status 1 when any replication
failed and 2 on configuration or input errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import OCLError
from .harness import (
    SWEEP_AXES,
    ExperimentConfig,
    emit_results,
    emit_sweep,
    regret_bound,
    run_experiment,
    sweep,
)

logger = logging.getLogger("oclmon")


def _out_dir(args, cfg, default):
    return Path(args.out or cfg.output_dir or default)


def _report(result, out):
    for label, s in result.summary()["policies"].items():
        mean = s["mean_final_regret"]
        shown = "n/a" if mean is None else f"{mean:.3f}"
        print(f"{label:>14s}  completed={s['completed']}  failed={s['failed']}  "
              f"mean_final_regret={shown}")
    print(f"results written to {out}")
    return 0 if result.ok else 1


def _parse_values(text, axis):
    cast = float if axis in ("M", "sigma2") else int
    try:
        values = [cast(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise OCLError(f"cannot parse sweep values {text!r}: {exc}") from exc
    if not values:
        raise OCLError("no sweep values given")
    # integral capacities stay integers so they are read as absolute counts
    return [int(v) if axis == "M" and v >= 1 and v == int(v) else v for v in values]


def cmd_run(args):
    cfg = ExperimentConfig.from_json(args.config)
    if args.workers:
        cfg = cfg.replace(workers=args.workers)
    result = run_experiment(cfg)
    out = _out_dir(args, cfg, "results")
    emit_results(result, out)
    return _report(result, out)


def cmd_sweep(args):
    cfg = ExperimentConfig.from_json(args.config)
    if args.workers:
        cfg = cfg.replace(workers=args.workers)
    results = sweep(cfg, args.axis, _parse_values(args.values, args.axis))
    out = _out_dir(args, cfg, "sweep")
    path = emit_sweep(results, args.axis, out)
    print(path.read_text(encoding="utf-8"), end="")
    return 0 if all(r.ok for r in results.values()) else 1


def cmd_replay(args):
    data = json.loads(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
    env = dict(data.get("environment", {}))
    if env.get("kind", "replay") != "replay":
        env = {}
    env.update(kind="replay", data=str(args.data))
    if args.risks:
        env["risks"] = str(args.risks)
    data["environment"] = env
    cfg = ExperimentConfig.from_dict(data)
    result = run_experiment(cfg)
    out = _out_dir(args, cfg, "replay")
    emit_results(result, out)
    return _report(result, out)


def cmd_bound(args):
    cfg = ExperimentConfig.from_json(args.config)
    constants = json.loads(Path(args.constants).read_text(encoding="utf-8"))
    print(json.dumps(regret_bound(cfg, constants), indent=2, sort_keys=True))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="oclmon", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--workers", type=int, help="override the number of worker processes")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="repeat an experiment along one axis")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--values", required=True, help="comma-separated values, e.g. 25,50,100")
    p.add_argument("--out", type=Path)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("replay", help="replay a longitudinal outcome file")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--risks", type=Path)
    p.add_argument("--config", type=Path)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("bound", help="evaluate the CL-UCB regret bound")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--constants", required=True, type=Path)
    p.set_defaults(func=cmd_bound)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OCLError, OSError, json.JSONDecodeError) as exc:
        print(f"oclmon: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
