"""Command-line entry point: train, search, eval, inspect."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .agent import AgentConfig, load_agent, save_agent, train_corpus, write_metrics
from .environment import EnvironmentConfig
from .pipeline import load_pipeline, save_pipeline, summarize, to_dot
from .search import SearchConfig, SearchError, predict_ensemble, predict_vanilla, search, write_scores
from .tabular import DataError, LearningJob, load_csv, split_train_test

log = logging.getLogger("pipegrid")

EXIT_USAGE = 1
EXIT_DATA = 2
SPLIT_RATIO = 0.8


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _read_config(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise UsageError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file is not valid JSON: {exc}") from exc
    unknown = set(cfg) - {"environment", "agent", "search", "split_seed"}
    if unknown:
        raise UsageError(f"unknown config sections: {sorted(unknown)}")
    return cfg


def _build(cls, overrides: dict):
    try:
        return cls(**overrides)
    except TypeError as exc:
        raise UsageError(f"{cls.__name__}: {exc}") from exc
    except ValueError as exc:
        raise UsageError(f"{cls.__name__}: {exc}") from exc


def load_job(path, target: str, split_seed: int):
    """Load a CSV and split it; returns (train job, train table, test table)."""
    table = load_csv(path, target)
    train, test = split_train_test(table, SPLIT_RATIO, split_seed)
    return LearningJob(train, name=Path(path).stem), train, test


def cmd_train(args) -> int:
    cfg = _read_config(args.config)
    env_cfg = _build(EnvironmentConfig, cfg.get("environment", {}))
    agent_cfg = _build(AgentConfig, cfg.get("agent", {}))
    split_seed = cfg.get("split_seed", 0)
    files = sorted(Path(args.corpus).glob("*.csv"))
    if not files:
        raise DataError(f"no CSV files in {args.corpus}")
    jobs = [load_job(f, args.target, split_seed)[0] for f in files]
    agent, records = train_corpus(jobs, args.episodes, args.seed, env_cfg, agent_cfg, flat=args.flat)
    out = Path(args.out)
    save_agent(agent, out, env_cfg, args.flat)
    (out / "datasets.json").write_text(json.dumps([f.name for f in files], indent=2))
    write_metrics(records, out / "metrics.csv")
    if records:
        mean = sum(r.total_reward for r in records) / len(records)
        print(f"trained {len(records)} episodes; mean episode reward {mean:.4f}")
    print(f"checkpoint written to {out}")
    return 0


def _search_cfg(args, cfg) -> SearchConfig:
    overrides = dict(cfg.get("search", {}))
    for name, attr in (("K", "k"), ("beta", "beta"), ("episodes", "episodes"), ("seed", "seed")):
        value = getattr(args, attr, None)
        if value is not None:
            overrides[name] = value
    return _build(SearchConfig, overrides)


def _run_search(args):
    cfg = _read_config(args.config)
    scfg = _search_cfg(args, cfg)
    if not Path(args.ckpt, "manifest.json").is_file():
        raise UsageError(f"no checkpoint at {args.ckpt}")
    agent, env_cfg, flat = load_agent(args.ckpt, scfg.seed)
    job, train, test = load_job(args.data, args.target, cfg.get("split_seed", 0))
    tops = search(job, agent, scfg, env_cfg, flat)
    return tops, train, test, scfg


def cmd_search(args) -> int:
    tops, _, _, _ = _run_search(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for sp in tops:
        save_pipeline(sp.dag, out / f"pipeline_{sp.rank:02d}.json")
    write_scores(tops, out / "scores.csv")
    for sp in tops:
        print(f"rank {sp.rank}: KScore {sp.kscore:.4f}  Qnorm {sp.q_norm:.4f}  Score {sp.score:.4f}")
    return 0


def cmd_eval(args) -> int:
    tops, train, test, scfg = _run_search(args)
    if args.mode == "vanilla":
        _, acc, _ = predict_vanilla(tops, train, test, scfg.seed)
    else:
        _, acc = predict_ensemble(tops, train, test, scfg.seed)
    print(f"test accuracy ({args.mode}): {acc:.6f}")
    return 0


def cmd_inspect(args) -> int:
    try:
        dag = load_pipeline(args.pipeline)
    except FileNotFoundError as exc:
        raise DataError(f"no such pipeline file: {args.pipeline}") from exc
    except (KeyError, ValueError, AssertionError) as exc:
        raise DataError(f"malformed pipeline file: {exc}") from exc
    print(summarize(dag))
    if args.dot:
        Path(args.dot).write_text(to_dot(dag))
        print(f"DOT written to {args.dot}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pipegrid", description="Grid-world RL search for classification pipelines.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train an agent on a directory of CSV datasets")
    t.add_argument("--corpus", required=True)
    t.add_argument("--target", default="target")
    t.add_argument("--episodes", type=int, required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config")
    t.add_argument("--flat", action="store_true", help="disable the hierarchical plugin")
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_train)

    for name, func in (("search", cmd_search), ("eval", cmd_eval)):
        s = sub.add_parser(name)
        s.add_argument("--data", required=True)
        s.add_argument("--target", required=True)
        s.add_argument("--ckpt", required=True)
        s.add_argument("--k", type=int)
        s.add_argument("--beta", type=float)
        s.add_argument("--episodes", type=int)
        s.add_argument("--seed", type=int)
        s.add_argument("--config")
        if name == "search":
            s.add_argument("--out", required=True)
        else:
            s.add_argument("--mode", choices=("vanilla", "ensemble"), default="vanilla")
        s.set_defaults(func=func)

    i = sub.add_parser("inspect", help="summarize a pipeline JSON")
    i.add_argument("--pipeline", required=True)
    i.add_argument("--dot")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, SearchError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
