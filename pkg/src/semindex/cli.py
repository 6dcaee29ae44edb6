"""``semindex`` command line: synth, build, merge, split, query, eval, sweep.

Every option can also come from a ``--config`` file of ``key = value``
lines (keys are option names without the leading dashes). Explicit flags
override the file, which overrides the built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io as sio
from .eval import STRATEGIES, DatasetBundle, Engine, StrategyConfig, evaluate, reports_to_csv, sweep
from .index import IndexParams, attach_pq, build_index, cooccurrence_matrix, merge_labels, split_index
from .persist import load_index, save_index
from .seeding import sub_seed
from .synth import SyntheticConfig, synth_dataset


def _int_list(text: str) -> list[int]:
    return [int(v) for v in str(text).split(",") if v.strip()]


def _float_list(text: str) -> list[float]:
    return [float(v) for v in str(text).split(",") if v.strip()]


def _flag(text) -> bool:
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# dest -> (flag, type, default, help)
_OPTIONS = {
    "config": ("--config", str, None, "key = value file; explicit flags take precedence"),
    "features": ("--features", str, None, "database feature file"),
    "labels": ("--labels", str, None, "database label file"),
    "queries": ("--queries", str, None, "query feature file"),
    "query_labels": ("--query-labels", str, None, "query label file"),
    "gt": ("--gt", str, None, "ground-truth text file"),
    "index": ("--index", str, None, "index file"),
    "out": ("--out", str, None, "output path"),
    "csv": ("--csv", str, None, "also write CSV to this path"),
    "alpha": ("--alpha", int, 5, "labels each item is stored under"),
    "beta": ("--beta", int, 5, "query labels whose lists are reclaimed"),
    "tau": ("--tau", float, None, "fraction of sub-cells kept per list (default 0.1 when split)"),
    "L": ("--L", int, None, "sub-cells per list; adds a split block"),
    "merge_cells": ("--merge-cells", int, None, "merge labels into this many cells"),
    "pq_m": ("--pq-m", int, 8, "PQ sub-quantizers"),
    "pq_k": ("--pq-k", int, 8, "bits per PQ code"),
    "no_pq": ("--no-pq", _flag, False, "skip the PQ block"),
    "metric": ("--metric", str, "l2", "l2 or cosine"),
    "strategy": ("--strategy", str, "semantic", "|".join(STRATEGIES)),
    "nprobe": ("--nprobe", int, 5, "IVF lists probed"),
    "k_coarse": ("--k-coarse", int, None, "IVF cells (default: number of labels)"),
    "R": ("--R", _int_list, [1, 10, 100], "comma-separated cutoffs"),
    "seed": ("--seed", int, 0, "master seed"),
    "n_db": ("--n-db", int, 20000, "synthetic database size"),
    "n_queries": ("--n-queries", int, 200, "synthetic query count"),
    "dim": ("--dim", int, 64, "synthetic dimension"),
    "n_labels": ("--n-labels", int, 100, "synthetic label vocabulary"),
    "clusters": ("--clusters", int, 50, "synthetic latent groups"),
    "label_noise": ("--label-noise", float, 0.1, "synthetic label corruption rate"),
    "top_k": ("--top-k", int, 10, "labels stored per synthetic row"),
}

# sweep takes comma lists for its grid axes
_SWEEP_LISTS = {"alpha": _int_list, "beta": _int_list, "tau": _float_list, "nprobe": _int_list}

_DATA = ["features", "labels", "queries", "query_labels", "gt"]
_STRATEGY = ["alpha", "beta", "tau", "L", "merge_cells", "pq_m", "pq_k", "metric", "strategy", "nprobe", "k_coarse", "R"]
_COMMANDS = {
    "synth": ("write a synthetic dataset into a directory",
              ["out", "seed", "n_db", "n_queries", "dim", "n_labels", "clusters", "label_noise", "top_k"]),
    "build": ("build an index file", ["features", "labels", "out", "index", "alpha", "merge_cells", "L",
                                      "pq_m", "pq_k", "no_pq", "seed"]),
    "merge": ("rebuild an index over merged label cells", ["index", "labels", "features", "merge_cells", "out", "seed"]),
    "split": ("add k-means sub-cells to an index", ["index", "features", "L", "out", "seed"]),
    "query": ("rank the database for every query", ["index", "features", "labels", "queries", "query_labels", "beta",
                                                   "tau", "R", "metric", "strategy", "nprobe", "k_coarse", "pq_m",
                                                   "pq_k", "seed", "out"]),
    "eval": ("evaluate one strategy", _DATA + ["index"] + _STRATEGY + ["seed", "out", "csv"]),
    "sweep": ("evaluate a grid of settings", _DATA + _STRATEGY + ["seed", "out", "csv"]),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semindex", description="Label-partitioned retrieval index.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (help_text, dests) in _COMMANDS.items():
        p = sub.add_parser(name, help=help_text, argument_default=argparse.SUPPRESS)
        for dest in ["config"] + dests:
            flag, typ, default, hlp = _OPTIONS[dest]
            if name == "sweep" and dest in _SWEEP_LISTS:
                typ, hlp = _SWEEP_LISTS[dest], hlp + " (comma list)"
            if dest == "no_pq":
                p.add_argument(flag, dest=dest, action="store_true", help=hlp)
            else:
                p.add_argument(flag, dest=dest, type=typ, help=hlp + (f" [default {default}]" if default is not None else ""))
    return parser


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment; values may be quoted."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
            value = value[1:-1]
        out[key.lstrip("-").replace("-", "_")] = value
    return out


def resolve(command: str, explicit: dict) -> dict:
    """Defaults, then the config file, then explicit flags."""
    dests = _COMMANDS[command][1]
    opts = {d: _OPTIONS[d][2] for d in dests}
    if explicit.get("config"):
        for key, value in read_config_file(explicit["config"]).items():
            if key not in opts:
                raise ValueError(f"config key {key!r} does not apply to {command}")
            typ = _SWEEP_LISTS.get(key) if command == "sweep" and key in _SWEEP_LISTS else _OPTIONS[key][1]
            opts[key] = typ(value)
    opts.update({k: v for k, v in explicit.items() if k != "config"})
    if command == "sweep":
        for key, typ in _SWEEP_LISTS.items():
            if opts.get(key) is not None and not isinstance(opts[key], list):
                opts[key] = [opts[key]]
    return opts


def _require(opts: dict, *names):
    missing = [_OPTIONS[n][0] for n in names if not opts.get(n)]
    if missing:
        raise ValueError(f"missing required option(s): {', '.join(missing)}")


def _emit(text: str, path: str | None):
    if path:
        sio._atomic_write(path, text.encode())
    else:
        sys.stdout.write(text)


def _summary(index) -> dict:
    lengths = index.list_lengths()
    counts, edges = np.histogram(lengths, bins=min(10, max(1, lengths.size)))
    out = {
        "n": index.n_items,
        "n_labels": index.params.n_labels,
        "alpha": index.params.alpha,
        "cells": index.n_cells,
        "entries": int(lengths.sum()),
        "list_length": {
            "min": int(lengths.min()),
            "max": int(lengths.max()),
            "mean": float(lengths.mean()),
            "histogram": {"edges": edges.tolist(), "counts": counts.tolist()},
        },
    }
    if index.split is not None:
        out["split"] = {"L": index.split.L, "subcells": index.split.n_subcells}
    if index.pq is not None:
        cb = index.pq.quantizer.codebook
        out["pq"] = {"M": cb.M, "K": cb.k_bits}
    return out


def _finish_index(index, opts, features, L=None, pq=None):
    """Optionally split and attach PQ with seeds derived from ``--seed``."""
    if L is not None:
        index = split_index(index, features, L, seed=sub_seed(opts["seed"], "kmeans"))
    if pq is not None:
        index = attach_pq(index, features, pq[0], pq[1], seed=sub_seed(opts["seed"], "pq"))
    return index


def cmd_synth(opts):
    _require(opts, "out")
    cfg = SyntheticConfig(
        n_db=opts["n_db"], n_queries=opts["n_queries"], d=opts["dim"], n_labels=opts["n_labels"],
        clusters=opts["clusters"], label_noise=opts["label_noise"], top_k=opts["top_k"],
        seed=sub_seed(opts["seed"], "synth"),
    )
    ds = synth_dataset(cfg)
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "features": out / "db.fvec",
        "labels": out / "db.lbl",
        "queries": out / "queries.fvec",
        "query_labels": out / "queries.lbl",
        "gt": out / "gt.txt",
    }
    sio.write_features(paths["features"], ds.db)
    sio.write_labels(paths["labels"], ds.db_labels)
    sio.write_features(paths["queries"], ds.queries)
    sio.write_labels(paths["query_labels"], ds.query_labels)
    sio.write_ground_truth(paths["gt"], ds.ground_truth)
    print(json.dumps({k: str(v) for k, v in paths.items()}))


def cmd_build(opts):
    _require(opts, "features", "labels")
    dest = opts.get("out") or opts.get("index")
    if not dest:
        raise ValueError("missing required option: --out (or --index) for the index file")
    features = sio.read_features(opts["features"])
    labels = sio.read_labels(opts["labels"])
    if labels.n != features.n:
        raise ValueError(f"label file has {labels.n} rows, feature file {features.n}")
    mapping = None
    if opts["merge_cells"] is not None and opts["merge_cells"] != labels.n_labels:
        mapping = merge_labels(cooccurrence_matrix(labels), opts["merge_cells"])
    index = build_index(labels, IndexParams(opts["alpha"], labels.n_labels), mapping)
    pq = None if opts["no_pq"] else (opts["pq_m"], opts["pq_k"])
    index = _finish_index(index, opts, features, opts["L"], pq)
    save_index(dest, index)
    print(json.dumps(_summary(index)))


def cmd_merge(opts):
    _require(opts, "index", "labels", "merge_cells", "out")
    old = load_index(opts["index"])
    labels = sio.read_labels(opts["labels"])
    if labels.n != old.n_items or labels.n_labels != old.params.n_labels:
        raise ValueError("label file does not match the index")
    mapping = merge_labels(cooccurrence_matrix(labels), opts["merge_cells"])
    index = build_index(labels, old.params, mapping)
    if old.split is not None or old.pq is not None:
        _require(opts, "features")
        features = sio.read_features(opts["features"])
        pq = None if old.pq is None else (old.pq.quantizer.codebook.M, old.pq.quantizer.codebook.k_bits)
        index = _finish_index(index, opts, features, old.split.L if old.split is not None else None, pq)
    save_index(opts["out"], index)
    print(json.dumps(_summary(index)))


def cmd_split(opts):
    _require(opts, "index", "features", "L", "out")
    index = load_index(opts["index"])
    features = sio.read_features(opts["features"])
    index = _finish_index(index, opts, features, opts["L"])
    save_index(opts["out"], index)
    print(json.dumps(_summary(index)))


def _load_bundle(opts, index=None, needs_gt=True) -> DatasetBundle:
    _require(opts, "queries", *(["gt"] if needs_gt else []))
    db = sio.read_features(opts["features"]) if opts.get("features") else None
    n_db = None if db is not None else (index.n_items if index is not None else None)
    if db is None and n_db is None:
        raise ValueError("missing required option: --features")
    return DatasetBundle(
        db,
        sio.read_features(opts["queries"]),
        sio.read_labels(opts["labels"]) if opts.get("labels") else None,
        sio.read_labels(opts["query_labels"]) if opts.get("query_labels") else None,
        sio.read_ground_truth(opts["gt"]) if needs_gt else sio.GroundTruth(()),
        n_db,
    )


def _strategy_config(opts, index=None, **over) -> StrategyConfig:
    tau = opts.get("tau")
    split_requested = opts.get("L") is not None or (index is not None and index.split is not None)
    if tau is None and opts["strategy"] == "semantic" and split_requested:
        tau = 0.1
    fields = dict(
        strategy=opts["strategy"], alpha=opts.get("alpha", 5), beta=opts["beta"], tau=tau,
        L=opts.get("L") or 10, target_cells=opts.get("merge_cells"), M=opts["pq_m"], K=opts["pq_k"],
        metric=opts["metric"], nprobe=opts["nprobe"], k_coarse=opts["k_coarse"], R=tuple(opts["R"]), seed=opts["seed"],
    )
    if index is not None:
        fields.update(alpha=index.params.alpha, target_cells=index.n_cells if index.mapping is not None else None)
        if index.split is not None:
            fields["L"] = index.split.L
        if index.pq is not None:
            cb = index.pq.quantizer.codebook
            fields.update(M=cb.M, K=cb.k_bits)
    fields.update(over)
    return StrategyConfig(**fields)


def cmd_query(opts):
    index = load_index(opts["index"]) if opts.get("index") else None
    bundle = _load_bundle(opts, index, needs_gt=False)
    cfg = _strategy_config(opts, index)
    engine = Engine(cfg, bundle, index if cfg.strategy.startswith("semantic") else None)
    R = max(cfg.R) if cfg.R else None
    lines = []
    for qi in range(bundle.queries.n):
        ranking = engine.search(qi, R)[1]
        pairs = " ".join(f"{i}:{s:.9g}" for i, s in ranking.pairs())
        lines.append(f"{qi} {pairs}".rstrip() + "\n")
    _emit("".join(lines), opts.get("out"))


def cmd_eval(opts):
    index = load_index(opts["index"]) if opts.get("index") else None
    bundle = _load_bundle(opts, index)
    cfg = _strategy_config(opts, index)
    engine = Engine(cfg, bundle, index if cfg.strategy.startswith("semantic") else None)
    report = evaluate(cfg, bundle, engine)
    _emit(report.to_json(indent=2) + "\n", opts.get("out"))
    if opts.get("csv"):
        sio._atomic_write(opts["csv"], reports_to_csv([report]).encode())


def cmd_sweep(opts):
    bundle = _load_bundle(opts)
    grid = {k: opts[k] for k in ("alpha", "beta", "tau", "nprobe") if opts.get(k) is not None and len(opts[k]) > 1}
    scalar = {k: opts[k][0] for k in ("alpha", "beta", "tau", "nprobe") if opts.get(k) is not None and len(opts[k]) == 1}
    base_opts = dict(opts, **scalar)
    if "tau" in grid:
        base_opts["tau"] = grid["tau"][0]
    reports = sweep(_strategy_config(base_opts), bundle, grid)
    _emit(json.dumps([r.to_dict() for r in reports], indent=2) + "\n", opts.get("out"))
    if opts.get("csv"):
        sio._atomic_write(opts["csv"], reports_to_csv(reports).encode())


_HANDLERS = {
    "synth": cmd_synth,
    "build": cmd_build,
    "merge": cmd_merge,
    "split": cmd_split,
    "query": cmd_query,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    command = args.pop("command")
    try:
        opts = resolve(command, args)
        _HANDLERS[command](opts)
    except (ValueError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"semindex {command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
