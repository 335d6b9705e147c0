"""Command-line entry point: simulate, train, evaluate, query, bench.

Exit codes: 0 success, 2 configuration or query error, 3 data or file error,
4 numerical abort.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import oracles
from .autodiff import NumericalError
from .config import ConfigError, RunConfig, load_config
from .data import DataError, Dataset, Event, Sequence, Vocabulary, load_sequences, save_sequences, split_dataset
from .likelihood import evaluate
from .model import Model
from .queries import QuerySpec, estimate_query, relative_efficiency, run_query_battery
from .training import TrainingAborted, train

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4

log = logging.getLogger("setmtpp")


class QueryError(ValueError):
    pass


def _header(cfg: RunConfig, command: str) -> list[str]:
    return [f"config_hash={cfg.hash()}", f"command={command}"]


def _out_dir(cfg: RunConfig) -> Path:
    d = cfg.require_path("output_dir")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _load_model(path) -> Model:
    try:
        return Model.load(path)
    except FileNotFoundError:
        raise DataError(f"model file not found: {path}") from None
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read model file {path}: {exc}") from None


def _load_data(cfg: RunConfig, vocab: Vocabulary | None = None) -> Dataset:
    path = cfg.require_path("data")
    if vocab is None and cfg.paths.vocab and Path(cfg.paths.vocab).exists():
        vocab = Vocabulary.load(cfg.paths.vocab)
    try:
        return load_sequences(path, vocab, min_events=cfg.data.min_events, max_events=cfg.data.max_events)
    except FileNotFoundError:
        raise DataError(f"data file not found: {path}") from None


def _splits(cfg: RunConfig, data: Dataset):
    d = cfg.data
    try:
        return split_dataset(data, (d.train_frac, d.val_frac, d.test_frac), seed=cfg.seed)
    except ValueError as exc:
        raise DataError(str(exc)) from None


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")
    log.info("wrote %s", path)


# --- subcommands -----------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, args) -> None:
    s = cfg.simulate
    if s.source == "poisson":
        rho = tuple(float(r) for r in s.rho.split(","))
        source = oracles.PoissonStaticSpec(s.rate, rho)
    elif s.source == "planted":
        source = oracles.planted_dynamic_model(K=s.K, seed=cfg.seed)
    else:
        if not args.model:
            raise ConfigError("simulate with source=model needs --model")
        source = _load_model(args.model)
    data = oracles.generate_synthetic(source, s.n_sequences, s.horizon, seed=cfg.seed)
    out = cfg.require_path("data")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_sequences(data, out, cfg.paths.vocab)
    log.info("simulated %d sequences (%d events)", len(data), data.n_events())


def cmd_train(cfg: RunConfig, args) -> None:
    data = _load_data(cfg)
    tr, va, _ = _splits(cfg, data)
    model = Model.init(cfg.model, data.vocab, seed=cfg.training.seed, data=tr)
    result = train(model, tr, va, cfg.training)
    out = _out_dir(cfg)
    model.save(out / "model.json")
    data.vocab.save(out / "vocab.json")
    _write(out / "history.csv", result.history_csv(_header(cfg, "train")))


def cmd_evaluate(cfg: RunConfig, args) -> None:
    model = _load_model(args.model)
    data = _load_data(cfg, model.vocab)
    if data.vocab != model.vocab:
        raise DataError("data vocabulary differs from the model's")
    if args.split != "all":
        data = dict(zip(("train", "val", "test"), _splits(cfg, data)))[args.split]
    report = evaluate(model, data, cfg.training.mc_points, seed=cfg.seed)
    report.header = _header(cfg, "evaluate") + [f"model={report.model}", f"split={args.split}"]
    _write(_out_dir(cfg) / f"eval_{report.model}.csv", report.to_csv())


def _parse_query(obj, model: Model, cfg: RunConfig) -> QuerySpec:
    vocab = model.vocab
    if not isinstance(obj, dict):
        raise QueryError("query must be a JSON object")
    try:
        kind = obj["kind"]
        if kind not in ("hitting", "a_before_b"):
            raise QueryError(f"unknown query kind {kind!r}")
        hist = obj.get("history", [])
        if isinstance(hist, dict):
            seqs = load_sequences(hist["file"], vocab)
            seq = seqs.sequences[int(hist["index"])]
            history = seq.prefix(int(hist.get("n_events", len(seq))))
        else:
            events = sorted((float(e["t"]), e["items"]) for e in hist)
            history = Sequence(tuple(Event(t, vocab.itemset(items)) for t, items in events),
                               float(obj.get("t_start", events[-1][0] if events else 0.0)))
        A = vocab.itemset(obj["A"])
        B = vocab.itemset(obj["B"]) if kind == "a_before_b" else None
        if kind == "a_before_b" and "B" not in obj:
            raise QueryError("a_before_b query needs B")
        return QuerySpec(history, A, float(obj["t"]), B, int(obj.get("n_samples", cfg.query.n_samples)),
                         int(obj.get("n_integration", cfg.query.n_integration)))
    except QueryError:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise QueryError(f"malformed query: {exc}") from None


def cmd_query(cfg: RunConfig, args) -> None:
    model = _load_model(args.model)
    try:
        obj = json.loads(Path(args.query).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"query file not found: {args.query}") from None
    except json.JSONDecodeError as exc:
        raise QueryError(f"query is not valid JSON: {exc}") from None
    q = _parse_query(obj, model, cfg)
    naive = estimate_query(model, q, cfg.seed, "naive", (0,))
    imp = estimate_query(model, q, cfg.seed, "importance", (0,))
    eff = relative_efficiency(naive, imp)
    res = {"config_hash": cfg.hash(), "kind": q.kind, "t": q.t, "n_samples": q.n_samples,
           "n_integration": q.n_integration}
    for name, est in (("naive", naive), ("importance", imp)):
        res[name] = {"estimate": est.estimate, "variance": est.variance, "std_error": est.std_error,
                     "secs_per_sample": est.secs_per_sample}
        if est.scenarios is not None:
            res[name]["scenarios"] = dict(zip(("A_first", "B_first", "both_first", "neither"),
                                              map(float, est.scenarios)))
    res["relative_efficiency"] = None if eff.infinite else eff.ratio
    res["relative_efficiency_infinite"] = eff.infinite
    text = json.dumps(res, indent=2)
    if cfg.paths.output_dir:
        _write(_out_dir(cfg) / "query.json", text)
    print(text)


def cmd_bench(cfg: RunConfig, args) -> None:
    models = [_load_model(p) for p in args.models]
    data = _load_data(cfg, models[0].vocab)
    if args.split != "all":
        data = dict(zip(("train", "val", "test"), _splits(cfg, data)))[args.split]
    out = _out_dir(cfg)
    summaries = []
    for path, model in zip(args.models, models):
        if model.vocab != data.vocab:
            raise DataError(f"vocabulary of {path} differs from the data")
        rep = run_query_battery(model, data, cfg.query)
        _write(out / f"battery_{cfg.query.kind}_{rep.model}.csv", rep.to_csv(_header(cfg, "bench") + [f"model={path}"]))
        summaries.append(rep.summary())
    cols = ["model", "n_queries", "skipped", "median_rel_eff", "mean_qll_is", "se_qll_is", "seconds"]
    lines = [f"# {h}" for h in _header(cfg, "bench")] + [",".join(cols)]
    lines += [",".join(str(s[c]) for c in cols) for s in summaries]
    _write(out / f"bench_summary_{cfg.query.kind}.csv", "\n".join(lines) + "\n")


# --- entry point --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="setmtpp", description="Set-valued marked temporal point processes.")
    p.add_argument("--threads", type=int, default=1, help="BLAS thread limit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True)
        sp.set_defaults(fn=fn)
        return sp

    sp = add("simulate", cmd_simulate, "generate synthetic sequences")
    sp.add_argument("--model")
    add("train", cmd_train, "train a model")
    sp = add("evaluate", cmd_evaluate, "per-sequence likelihood report")
    sp.add_argument("--model", required=True)
    sp.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    sp = add("query", cmd_query, "estimate one query")
    sp.add_argument("--model", required=True)
    sp.add_argument("--query", required=True)
    sp = add("bench", cmd_bench, "query battery for one or more models")
    sp.add_argument("--models", nargs="+", required=True)
    sp.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config)
        with threadpool_limits(limits=args.threads):
            args.fn(cfg, args)
    except (ConfigError, QueryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingAborted, NumericalError, FloatingPointError) as exc:
        print(f"error: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
