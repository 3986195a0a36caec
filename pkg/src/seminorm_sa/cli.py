"""Command-line entry point: ``seminorm-sa <subcommand> [--config cfg.json] [flags]``.

Flags override the matching config fields, so small runs need no config
file. Exit codes: 0 ok, 1 config error, 2 numerical failure, 3 a bound
check or acceptance criterion failed.
"""
from __future__ import annotations

import argparse
import os
import sys

from .harness import (EXIT_CONFIG, KINDS, ConfigError, ExperimentConfig, load_config,
                      run_experiment)


def _parser():
    ap = argparse.ArgumentParser(prog="seminorm-sa", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        sp = sub.add_parser(kind)
        sp.add_argument("--config", help="JSON experiment config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory, or a traces.csv path inside one")
        if kind == "lyapunov":
            sp.add_argument("--mode", choices=["d", "c"])
            sp.add_argument("--A", dest="A", help="matrix A (CSV or JSON)")
            sp.add_argument("--Q", dest="Q", help="matrix Q (CSV or JSON)")
            sp.add_argument("--E", dest="E", help="kernel basis (CSV or JSON), default ker Q")
        if kind in ("fp-iterate", "sa-run", "linear-sa-run", "td-lambda", "q-learn",
                    "verify-bounds"):
            sp.add_argument("--horizon", type=int)
        if kind in ("sa-run", "linear-sa-run", "td-lambda", "q-learn", "verify-bounds"):
            sp.add_argument("--schedule", choices=["const", "constant", "linear", "poly",
                                                   "polynomial"])
            sp.add_argument("--alpha", type=float)
            sp.add_argument("--h", type=float)
            sp.add_argument("--xi", type=float)
            sp.add_argument("--trials", type=int)
        if kind in ("td-lambda", "q-learn"):
            sp.add_argument("--mdp", help="MDP JSON file")
        if kind == "td-lambda":
            sp.add_argument("--lambda", dest="lam", type=float)
        if kind == "q-learn":
            sp.add_argument("--J", dest="J", type=int)
        if kind == "acceptance":
            sp.add_argument("--only", type=int, nargs="+", help="criterion ids to run")
    return ap


def build_config(args):
    if args.config:
        cfg = load_config(args.config)
        if cfg.kind != args.kind:
            raise ConfigError(f"config kind {cfg.kind!r} does not match subcommand {args.kind!r}")
        doc, base = cfg.to_dict(), cfg.base_dir
    else:
        doc, base = {"kind": args.kind}, os.getcwd()
    inst = dict(doc.get("instance", {}))
    params = dict(doc.get("params", {}))
    sched = dict(doc.get("schedule", {"kind": "constant", "alpha": 0.01}))
    get = lambda name: getattr(args, name, None)
    for name in ("seed", "horizon", "trials"):
        if get(name) is not None:
            doc[name] = get(name)
    out = get("out")
    if out is not None:
        doc["out"] = (os.path.dirname(out) or ".") if out.endswith(".csv") else out
    for name in ("mode", "A", "Q", "E", "mdp"):
        if get(name) is not None:
            inst[name] = os.path.abspath(get(name)) if name != "mode" else get(name)
    if get("schedule") is not None:
        sched = {"kind": get("schedule")}
    for name in ("alpha", "h", "xi"):
        if get(name) is not None:
            sched[name] = get(name)
    if get("lam") is not None:
        params["lambda"] = get("lam")
    if get("J") is not None:
        params["J"] = get("J")
    if get("only") is not None:
        params["only"] = get("only")
    if "alpha" not in sched:
        raise ConfigError("schedule needs --alpha")
    doc.update(instance=inst, params=params, schedule=sched)
    return ExperimentConfig.from_dict(doc, base_dir=base)


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        cfg = build_config(args)
    except (ConfigError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    res = run_experiment(cfg)
    for line in res.info.get("lines", []):
        print(line)
    if "error" in res.info:
        print(f"error: {res.info['error']}", file=sys.stderr)
    else:
        print(f"wrote {len(res.files)} files to {res.out_dir}")
    return res.status


if __name__ == "__main__":
    sys.exit(main())
