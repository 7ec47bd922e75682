"""Command line entry point: ``ctxzoom run | sweep | oracle | check``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .environments import load_instance, zooming_number
from .harness import ConfigError, ExperimentConfig, audit, output_dir, run_config, sweep, write_rows
from .metric import covering_number, packing_number


def _parse_values(text: str) -> list:
    """``"1e3,1e4,0.5,abc"`` -> ``[1000, 10000, 0.5, "abc"]``."""
    out = []
    for v in text.split(","):
        v = v.strip()
        try:
            f = float(v)
        except ValueError:
            out.append(v)
            continue
        out.append(int(f) if f.is_integer() else f)
    return out


def cmd_run(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.audit:
        cfg.audit = True
    seeds = [args.seed] if args.seed is not None else cfg.seeds
    failed = False
    for seed in seeds:
        res = run_config(cfg, seed, write=True)
        s = res["summary"]
        print(f"seed {seed}: {s['algorithm']} T={s['T']} regret={s['total_regret']:.3f} "
              f"avg={s['average_regret']:.5f} structure={s['final_structure_size']}")
        for check, r in res["audit"].items():
            status = "pass" if r["passed"] else f"FAIL at round {r['first_round']}: {r['detail']}"
            print(f"  {check}: {r['violations']}/{r['events']} {status}")
            failed |= not r["passed"]
    print(f"output written to {output_dir(cfg)}")
    return 1 if failed else 0


def cmd_sweep(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    grid = {}
    for p in args.param:
        if "=" not in p:
            raise ConfigError(f"--param expects KEY=V1,V2,... (got {p!r})")
        key, values = p.split("=", 1)
        grid[key.strip()] = _parse_values(values)
    rows = sweep(cfg, grid, workers=args.workers, write=args.write_logs)
    out = output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "sweep.csv"
    write_rows(rows, path)
    for r in rows:
        keys = " ".join(f"{k}={r[k]}" for k in grid)
        print(f"{keys} seed={r['seed']} regret={r['total_regret']:.3f}")
    print(f"summary written to {path}")
    return 0


def cmd_oracle(args) -> int:
    env = load_instance(args.instance)
    space = env.similarity_space()
    for r in args.r:
        zn = zooming_number(env, r, exact=args.exact)
        cov = covering_number(space, r, exact=args.exact)
        pack = packing_number(space, r, exact=args.exact)
        print(json.dumps({"r": r, "zooming_number": zn, "covering_number": cov,
                          "packing_number": pack, "exact": args.exact}))
    return 0


def cmd_check(args) -> int:
    snap = json.loads(Path(args.snapshot).read_text())
    arrivals = None
    if args.instance:
        env = load_instance(args.instance)
        arrivals = env.arrivals_for(snap.get("round", env.horizon))
    checks = None if args.all or not args.check else args.check
    report = audit(snap, checks, arrivals=arrivals)
    for check, r in report.items():
        print(f"{check}: {'pass' if r['passed'] else 'FAIL ' + r['detail']}")
    return 0 if all(r["passed"] for r in report.values()) else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ctxzoom", description="Contextual bandits with similarity information.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--audit", action="store_true", help="enable per-round invariant audits")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a config over a parameter grid")
    p.add_argument("--config", required=True)
    p.add_argument("--param", action="append", default=[], help="KEY=V1,V2 (repeatable), e.g. T=1e3,1e4")
    p.add_argument("--workers", type=int, help="process count (default: CTXZOOM_WORKERS or 1)")
    p.add_argument("--write-logs", action="store_true", help="also write per-run CSV logs")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle", help="zooming, covering and packing numbers of an instance")
    p.add_argument("--instance", required=True)
    p.add_argument("--r", type=float, nargs="+", required=True)
    p.add_argument("--exact", action="store_true")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("check", help="structural audit of a saved snapshot")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--all", action="store_true")
    p.add_argument("--check", action="append")
    p.add_argument("--instance", help="instance file (meta snapshots: enables the arrival-based checks)")
    p.set_defaults(func=cmd_check)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ConfigError, ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
