"""Command-line entry point: ``treepoison <command> [--config FILE] [options]``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config
from .harness import Outputs, attack_only, defend_only, run_experiment, sweep, train_model

DEFAULT_THREADS = 16


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE", help="flat key = value config file (defaults apply if omitted)")
    common.add_argument("--threads", type=int, default=None, metavar="N",
                        help=f"worker threads (default: the config's threads key, else {DEFAULT_THREADS})")
    common.add_argument("--seed", type=int, default=None, help="set every seed key to this value")
    common.add_argument("--out-dir", metavar="DIR", help="output directory (overrides output.dir)")

    p = argparse.ArgumentParser(prog="treepoison", description="Label-flipping attacks and defenses for tree ensembles.")
    p.add_argument("--version", action="version", version=f"treepoison {__version__}")
    sub = p.add_subparsers(dest="command", metavar="command", required=True)
    sub.add_parser("train", parents=[common], help="grid-search and serialize a clean model")
    sub.add_parser("attack", parents=[common], help="run attack.strategy and emit its trace")
    sub.add_parser("defend", parents=[common], help="tune and apply both defenses, emit metrics")
    sub.add_parser("experiment", parents=[common], help="full attack + defense pipeline")
    sub.add_parser("sweep", parents=[common], help="strategy x budget matrix as CSV")
    v = sub.add_parser("verify", parents=[common], help="run the brute-force oracle suites")
    v.add_argument("--cases", type=int, default=None, help="random cases per suite")
    return p


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    over = {}
    if args.threads is not None:
        over["threads"] = args.threads
    if args.out_dir is not None:
        over["output_dir"] = args.out_dir
    cfg = replace(cfg, **over) if over else cfg
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _dump(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def cmd_train(cfg: ExperimentConfig) -> str:
    from .ensemble import forest_to_dict

    g, m, _, _ = train_model(cfg)
    out = Outputs(cfg.output_dir)
    out.add("model.json", json.dumps(forest_to_dict(g.model)) + "\n")
    out.add("metrics.json", _dump({"config": cfg.to_dict(), "model": g.params.to_dict(),
                                   "validation_f1": g.validation_f1, "test": m.to_dict()}))
    out.commit()
    return f"trained {g.params.n_trees} trees of depth {g.params.tree_params.max_depth}; test F1 {m.f1:.4f}"


def cmd_attack(cfg: ExperimentConfig) -> str:
    _, trace = attack_only(cfg)
    out = Outputs(cfg.output_dir)
    out.add("trace.csv", trace.to_csv())
    doc = trace.to_dict(timing=False)
    doc["config"] = cfg.to_dict()
    out.add("trace.json", _dump(doc))
    out.commit()
    last = trace.rounds[-1].f1 if trace.rounds else trace.clean.f1
    return f"{cfg.strategy}: {trace.k} flips, F1 {trace.clean.f1:.4f} -> {last:.4f}"


def cmd_defend(cfg: ExperimentConfig) -> str:
    doc, sanitized, schema = defend_only(cfg)
    doc["config"] = cfg.to_dict()
    out = Outputs(cfg.output_dir)
    out.add("defense.json", _dump(doc))
    if sanitized is not None:
        out.add("knn_sanitized_train.csv", schema.csv(sanitized))
    out.commit()
    parts = [f"{k} F1 {v['f1']:.4f}" for k, v in doc["defenses"].items()]
    return f"undefended F1 {doc['undefended']['f1']:.4f}; " + ", ".join(parts)


def cmd_experiment(cfg: ExperimentConfig) -> str:
    r = run_experiment(cfg)
    parts = [f"{k} {v['f1']:.4f}" for k, v in r.defenses.items()]
    return (f"F1 clean {r.f1_clean:.4f}, poisoned {r.f1_poisoned:.4f}"
            + ("; defended " + ", ".join(parts) if parts else "") + f"; wrote {cfg.output_dir}")


def cmd_sweep(cfg: ExperimentConfig) -> str:
    text, info = sweep(cfg)
    out = Outputs(cfg.output_dir)
    out.add("sweep.csv", text)
    out.add("sweep.json", _dump({"config": cfg.to_dict(), **info}))
    out.commit()
    return f"{text.count(chr(10)) - 1} rows written to {Path(cfg.output_dir) / 'sweep.csv'}"


def cmd_verify(cfg: ExperimentConfig, cases: int | None) -> tuple[str, bool]:
    from .verify import run_all

    results = run_all(seed=cfg.split_seed, cases=cases)
    for r in results:
        print(r.line())
    ok = all(r.ok for r in results)
    passed = sum(r.passed for r in results)
    total = sum(r.total for r in results)
    return f"verify: {passed}/{total} checks passed in {len(results)} suites", ok


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    try:
        cfg = _config(args)
        if args.command == "verify":
            msg, ok = cmd_verify(cfg, args.cases)
            print(msg)
            return 0 if ok else 1
        msg = {"train": cmd_train, "attack": cmd_attack, "defend": cmd_defend,
               "experiment": cmd_experiment, "sweep": cmd_sweep}[args.command](cfg)
    except ConfigError as e:
        print(f"treepoison: config error: {e}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("treepoison: interrupted", file=sys.stderr)
        return 130
    except Exception as e:
        text = " ".join(str(e).split()) or type(e).__name__
        print(f"treepoison: error: {text}", file=sys.stderr)
        return 1
    print(msg)
    return 0


if __name__ == "__main__":
    sys.exit(main())
