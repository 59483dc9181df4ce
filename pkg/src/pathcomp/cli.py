"""Command-line pipeline: ingest, synth, extract, train, predict, eval.

Every subcommand takes a ``--seed`` and derives per-relation and per-pair
streams from it, so reruns (at any ``--workers`` count) produce
byte-identical outputs. Options may also come from a flat ``key=value``
config file given with ``--config``; explicit flags win over the file.
Summary lines are printed prefixed with ``RESULT`` and a tab.
"""

from __future__ import annotations

import argparse
import os
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import baselines, evaluation, extract, kb, model, synth
from .extract import WalkConfig, derive_seed

MODEL_CHOICES = (
    "rnn", "rnn-random", "add", "zero-shot",
    "pra", "pra-b", "cluster-pra", "cluster-pra-b",
)


@dataclass(frozen=True)
class Opt:
    name: str
    type: type = str
    default: object = None
    help: str = ""
    flag: bool = False
    required: bool = False


_COMMON = [Opt("config", str, None, "flat key=value option file"),
           Opt("seed", int, 0, "global random seed")]

_OPTIONS: dict = {
    "ingest": _COMMON + [
        Opt("triples", str, None, "input triple TSV", required=True),
        Opt("out", str, None, "output graph snapshot", required=True),
        Opt("min-textual-freq", int, 50, "drop textual relations seen fewer times"),
    ],
    "synth": _COMMON + [
        Opt("out-dir", str, None, "output directory", required=True),
        Opt("train-ratio", float, 0.7, "train split fraction"),
        Opt("dev-ratio", float, 0.0, "dev split fraction"),
        Opt("test-ratio", float, 0.3, "test split fraction"),
        Opt("entities", int, None, "override entity count"),
        Opt("dim", int, None, "override embedding size"),
        Opt("chains", int, None, "override chains per rule"),
        Opt("neg-ratio", int, None, "override negatives ratio"),
        Opt("distractors", float, None, "override distractor multiplier"),
    ],
    "extract": _COMMON + [
        Opt("graph", str, None, "graph snapshot", required=True),
        Opt("manifest", str, None, "manifest.kv with split records", required=True),
        Opt("split", str, "train", "which split to extract (train/dev/test)"),
        Opt("out-dir", str, None, "dataset output directory", required=True),
        Opt("relation", str, "all", "single relation name, or 'all'"),
        Opt("max-len", int, 4, "maximum path length in relations"),
        Opt("walks", int, 100, "random walks per node"),
        Opt("max-paths-per-pair", int, 200, "path types kept per pair"),
        Opt("exhaustive", flag=True, default=False,
            help="enumerate all walks instead of sampling"),
        Opt("neg-ratio", int, 1, "negatives per positive"),
        Opt("clusters", int, 0, "cluster textual relations into this many ids first"),
        Opt("cluster-vectors", str, None, "embedding file for clustering"),
        Opt("cluster-assignment-out", str, None, "write relation->cluster table here"),
        Opt("clustered-graph-out", str, None,
            "snapshot path for the clusterized graph (default <out-dir>/clustered_graph.bin)"),
        Opt("workers", int, 1, "parallel relations"),
    ],
    "train": _COMMON + [
        Opt("graph", str, None, "graph snapshot", required=True),
        Opt("data-dir", str, None, "dataset directory", required=True),
        Opt("split", str, "train", "dataset split to train on"),
        Opt("model", str, None, f"one of {', '.join(MODEL_CHOICES)}", required=True),
        Opt("out-dir", str, None, "directory for per-relation model files"),
        Opt("out", str, None, "single model file (zero-shot)"),
        Opt("vectors", str, None, "pre-trained relation vector file"),
        Opt("top-paths", int, 0, "restrict to k most frequent path types (0 = all)"),
        Opt("iterations", int, 150, "training epochs"),
        Opt("batch-size", int, 20, "minibatch size"),
        Opt("learning-rate", float, 0.1, "initial AdaGrad learning rate"),
        Opt("lr-halving", int, 60, "halve the learning rate every this many epochs"),
        Opt("l2", float, 0.0001, "L2 regularization strength"),
        Opt("dim", int, 50, "relation vector dimension"),
        Opt("no-shuffle", flag=True, default=False, help="disable per-epoch shuffling"),
        Opt("workers", int, 1, "parallel relations"),
    ],
    "predict": _COMMON + [
        Opt("graph", str, None, "graph snapshot", required=True),
        Opt("data-dir", str, None, "dataset directory", required=True),
        Opt("split", str, "test", "dataset split to score"),
        Opt("model-dir", str, None, "directory of per-relation model files"),
        Opt("model", str, None, "single shared model file (zero-shot)"),
        Opt("out", str, None, "predictions TSV", required=True),
        Opt("workers", int, 1, "parallel relations"),
    ],
    "eval": _COMMON + [
        Opt("graph", str, None, "graph snapshot", required=True),
        Opt("predictions", str, None, "predictions TSV", required=True),
        Opt("out", str, None, "report file", required=True),
        Opt("compare", str, None, "second predictions TSV for significance testing"),
        Opt("permutations", int, 10000, "Monte Carlo permutations when > 20 relations"),
    ],
    "ensemble": _COMMON + [
        Opt("graph", str, None, "graph snapshot", required=True),
        Opt("pred-a", str, None, "first predictions TSV", required=True),
        Opt("pred-b", str, None, "second predictions TSV", required=True),
        Opt("out", str, None, "combined predictions TSV", required=True),
    ],
    "gradcheck": _COMMON + [
        Opt("dim", int, 0, "embedding size (0 cycles 2,4,8)"),
        Opt("count", int, 100, "number of random configurations"),
        Opt("step", float, 1e-5, "central difference step"),
        Opt("tolerance", float, 1e-4, "maximum acceptable relative error"),
    ],
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pathcomp",
        description="KB completion with recurrent relation-path composition",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for command, opts in _OPTIONS.items():
        sp = sub.add_parser(command)
        for o in opts:
            text = o.help or o.name
            if not o.flag and not o.required:
                text += f" (default: {o.default})"
            if o.flag:
                sp.add_argument(f"--{o.name}", action="store_true",
                                default=argparse.SUPPRESS, help=text)
            else:
                sp.add_argument(f"--{o.name}", type=o.type,
                                default=argparse.SUPPRESS, help=text)
    return parser


def _merge_options(command: str, explicit: dict) -> dict:
    """defaults < config file < explicit flags; unknown file keys are errors."""
    table = {o.name: o for o in _OPTIONS[command]}
    merged = {o.name: o.default for o in _OPTIONS[command]}
    config_path = explicit.get("config")
    if config_path and command != "synth":
        with open(config_path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                key, sep, value = line.partition("=")
                key = key.strip()
                if not sep or key not in table:
                    raise UsageError(f"{config_path}:{lineno}: unknown option {key!r}")
                o = table[key]
                merged[key] = (value.strip().lower() in ("1", "true", "yes")
                               if o.flag else o.type(value.strip()))
    merged.update(explicit)
    for o in _OPTIONS[command]:
        if o.required and merged.get(o.name) is None:
            raise UsageError(f"--{o.name} is required")
    return merged


class UsageError(Exception):
    pass


def _result(command: str, **kv) -> None:
    parts = [f"{k}={v}" for k, v in kv.items()]
    print("RESULT\t" + "\t".join([command] + parts))


def _stem(graph: kb.KBGraph, rid: int) -> str:
    san = re.sub(r"[^A-Za-z0-9]+", "_", graph.relation_name(rid)).strip("_")[:40]
    return f"r{rid:04d}__{san}"


def _stem_relation_id(stem: str) -> int:
    m = re.match(r"^r(\d+)__", stem)
    if not m:
        raise UsageError(f"dataset file name {stem!r} does not encode a relation id")
    return int(m.group(1))


def _dataset_files(data_dir: str, split: str) -> list:
    suffix = f".{split}.paths"
    names = sorted(n for n in os.listdir(data_dir) if n.endswith(suffix))
    return [(n[: -len(suffix)], os.path.join(data_dir, n)) for n in names]


def _parallel(tasks, fn, workers: int) -> list:
    """Run fn over tasks, preserving task order in the result list."""
    if workers <= 1:
        return [fn(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_ingest(o: dict) -> int:
    graph = kb.ingest_file(o["triples"], min_textual_freq=o["min-textual-freq"])
    kb.save_graph(graph, o["out"])
    _result("ingest", entities=graph.num_entities, relations=graph.num_relations,
            edges=graph.forward_edges.shape[0], out=o["out"])
    return 0


def _cmd_synth(o: dict) -> int:
    if not o.get("config"):
        raise UsageError("--config is required for synth")
    overrides = {}
    for key, opt_key in (("entities", "entities"), ("dim", "dim"), ("chains", "chains"),
                         ("neg-ratio", "neg-ratio"), ("distractors", "distractors")):
        if o.get(opt_key) is not None:
            overrides[key] = str(o[opt_key])
    if o["seed"] is not None:
        overrides["seed"] = str(o["seed"])
    cfg = synth.load_synth_config(o["config"], overrides)
    manifest = synth.generate_synthetic_kb(cfg)
    synth.split_facts(manifest, (o["train-ratio"], o["dev-ratio"], o["test-ratio"]),
                      seed=cfg.seed)
    paths = synth.write_manifest_files(manifest, o["out-dir"])
    n_facts = sum(len(v) for v in manifest.head_facts.values())
    _result("synth", rules=len(manifest.rules), head_facts=n_facts,
            triples=len(synth.training_graph_triples(manifest)), out_dir=o["out-dir"])
    return 0 if paths else 1


def _cmd_extract(o: dict) -> int:
    graph = kb.load_graph(o["graph"])
    split_records = synth.read_split_records(o["manifest"])
    work_graph = graph

    if o["clusters"] > 0:
        if not o.get("cluster-vectors"):
            raise UsageError("--clusters requires --cluster-vectors")
        names, vecs = model.load_vectors_text(o["cluster-vectors"])
        assignment = baselines.cluster_textual_relations(
            graph, names, vecs, k=o["clusters"], seed=o["seed"]
        )
        work_graph = baselines.clusterize_graph(graph, assignment)
        out_snapshot = o.get("clustered-graph-out") or os.path.join(
            o["out-dir"], "clustered_graph.bin"
        )
        os.makedirs(o["out-dir"], exist_ok=True)
        kb.save_graph(work_graph, out_snapshot)
        if o.get("cluster-assignment-out"):
            baselines.save_cluster_assignment(o["cluster-assignment-out"], graph, assignment)

    wanted = sorted(split_records)
    if o["relation"] != "all":
        if o["relation"] not in split_records:
            raise UsageError(f"relation {o['relation']!r} has no split records")
        wanted = [o["relation"]]
    os.makedirs(o["out-dir"], exist_ok=True)

    def one(rel_name: str):
        rid = work_graph.relation_id(rel_name)
        positives = [
            (work_graph.entity_id(s), work_graph.entity_id(t))
            for s, t in split_records[rel_name].get(o["split"], [])
        ]
        if not positives:
            return rel_name, None
        exclude = {
            (work_graph.entity_id(s), work_graph.entity_id(t))
            for pairs in split_records[rel_name].values()
            for s, t in pairs
        }
        cfg = WalkConfig(
            max_len=o["max-len"],
            walks_per_node=o["walks"],
            max_paths_per_pair=o["max-paths-per-pair"],
            seed=derive_seed(o["seed"], rid),
            exhaustive=o["exhaustive"],
        )
        ds = extract.collect_path_dataset(
            work_graph, rid, positives, cfg, neg_ratio=o["neg-ratio"], exclude=exclude
        )
        return rel_name, ds

    results = _parallel(wanted, one, o["workers"])
    written = 0
    total_instances = 0
    for rel_name, ds in results:
        if ds is None:
            continue
        rid = work_graph.relation_id(rel_name)
        stem = _stem(work_graph, rid)
        base = os.path.join(o["out-dir"], f"{stem}.{o['split']}")
        extract.save_dataset(ds, work_graph, base + ".paths", base + ".vocab")
        written += 1
        total_instances += ds.num_instances()
    _result("extract", split=o["split"], relations=written,
            instances=total_instances, out_dir=o["out-dir"])
    return 0


def _load_graph_vectors(o: dict, graph: kb.KBGraph) -> np.ndarray:
    names, vecs = model.load_vectors_text(o["vectors"])
    return model.vectors_for_graph(names, vecs, graph)


def _train_config(o: dict, seed: int, dim: int | None = None,
                  freeze: bool = False) -> model.TrainConfig:
    return model.TrainConfig(
        iterations=o["iterations"],
        batch_size=o["batch-size"],
        learning_rate=o["learning-rate"],
        lr_halving_period=o["lr-halving"],
        l2=o["l2"],
        dim=dim if dim is not None else o["dim"],
        seed=seed,
        freeze_relation_vectors=freeze,
        shuffle=not o["no-shuffle"],
    )


def _cmd_train(o: dict) -> int:
    if o["model"] not in MODEL_CHOICES:
        raise UsageError(f"unknown model {o['model']!r}; choose from {MODEL_CHOICES}")
    graph = kb.load_graph(o["graph"])
    files = _dataset_files(o["data-dir"], o["split"])
    if not files:
        raise UsageError(f"no *.{o['split']}.paths files in {o['data-dir']}")

    def load_ds(stem: str, path: str) -> extract.PathDataset:
        rid = _stem_relation_id(stem)
        vocab_path = path[: -len(".paths")] + ".vocab"
        ds = extract.load_dataset(path, vocab_path, graph, rid)
        if o["top-paths"] > 0:
            ds = extract.top_k_paths(ds, o["top-paths"])
        return ds

    if o["model"] == "zero-shot":
        if not o.get("out"):
            raise UsageError("zero-shot training writes a single file; use --out")
        if not o.get("vectors"):
            raise UsageError("zero-shot training requires --vectors")
        datasets = [load_ds(stem, path) for stem, path in files]
        pretrained = _load_graph_vectors(o, graph)
        if pretrained.shape[1] != o["dim"]:
            o = dict(o, dim=pretrained.shape[1])
        cfg = _train_config(o, derive_seed(o["seed"], 0x25), freeze=True)
        m = model.train_zero_shot(datasets, pretrained, cfg)
        m.relation_names = [r.name for r in graph.relations]
        model.save_model(m, o["out"])
        _result("train", model=o["model"], relations=len(datasets), out=o["out"])
        return 0

    if not o.get("out-dir"):
        raise UsageError("per-relation training writes a directory; use --out-dir")
    os.makedirs(o["out-dir"], exist_ok=True)
    init_vectors = None
    if o["model"] == "rnn":
        if not o.get("vectors"):
            raise UsageError("model 'rnn' initializes from --vectors "
                             "(use 'rnn-random' for random initialization)")
        init_vectors = _load_graph_vectors(o, graph)
        if init_vectors.shape[1] != o["dim"]:
            o = dict(o, dim=init_vectors.shape[1])

    def one(item):
        stem, path = item
        rid = _stem_relation_id(stem)
        ds = load_ds(stem, path)
        cfg = _train_config(o, derive_seed(o["seed"], rid))
        if o["model"] in ("rnn", "rnn-random"):
            m = model.train_relation_model(
                ds, cfg, composition=model.COMP_PER_RELATION,
                init_vectors=init_vectors, num_relations=graph.num_relations,
            )
        elif o["model"] == "add":
            m = model.train_relation_model(
                ds, cfg, composition=model.COMP_ADD,
                num_relations=graph.num_relations,
            )
        else:  # pra, pra-b, cluster-pra, cluster-pra-b
            bigrams = o["model"].endswith("-b")
            lm = baselines.train_path_classifier(ds, cfg, bigrams=bigrams)
            return stem, lm
        m.relation_names = [r.name for r in graph.relations]
        return stem, m

    results = _parallel(files, one, o["workers"])
    for stem, trained in results:
        out_path = os.path.join(o["out-dir"], f"{stem}.model")
        if isinstance(trained, model.RnnModel):
            model.save_model(trained, out_path)
        else:
            baselines.save_linear_model(out_path, trained, graph)
    _result("train", model=o["model"], relations=len(results), out_dir=o["out-dir"])
    return 0


def _load_any_model(path: str, graph: kb.KBGraph):
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == b"PRNN":
        return model.load_model(path)
    return baselines.load_linear_model(path, graph)


def _cmd_predict(o: dict) -> int:
    graph = kb.load_graph(o["graph"])
    files = _dataset_files(o["data-dir"], o["split"])
    if not files:
        raise UsageError(f"no *.{o['split']}.paths files in {o['data-dir']}")
    shared = None
    if o.get("model"):
        shared = model.load_model(o["model"])
        candidates = tuple(sorted(_stem_relation_id(stem) for stem, _ in files))
        shared.candidates = candidates
    elif not o.get("model-dir"):
        raise UsageError("predict needs --model-dir (per relation) or --model (shared)")

    def one(item):
        stem, path = item
        rid = _stem_relation_id(stem)
        vocab_path = path[: -len(".paths")] + ".vocab"
        ds = extract.load_dataset(path, vocab_path, graph, rid)
        m = shared if shared is not None else _load_any_model(
            os.path.join(o["model-dir"], f"{stem}.model"), graph
        )
        rows = []
        for pair, label, ptypes in ds.labeled_pairs():
            if isinstance(m, model.RnnModel):
                score = model.predict_instance(m, ptypes, rid)
            else:
                score = m.predict_proba(ptypes)
            rows.append((pair[0], pair[1], label, score))
        return rid, rows

    results = _parallel(files, one, o["workers"])
    preds = evaluation.PredictionSet()
    for rid, rows in sorted(results, key=lambda x: x[0]):
        for source, target, label, score in rows:
            preds.add(rid, source, target, label, score)
    evaluation.save_predictions(o["out"], preds, graph)
    n = sum(len(rows) for _, rows in results)
    _result("predict", split=o["split"], facts=n, out=o["out"])
    return 0


def _cmd_eval(o: dict) -> int:
    graph = kb.load_graph(o["graph"])
    preds = evaluation.load_predictions(o["predictions"], graph)
    compare = None
    if o.get("compare"):
        compare = evaluation.load_predictions(o["compare"], graph)
    summary = evaluation.write_report(
        o["out"], preds, graph, compare=compare,
        permutations=o["permutations"], seed=o["seed"],
    )
    kv = {"map": f"{summary['map']:.6f}", "relations": summary["relations"]}
    if "p_value" in summary:
        kv["p"] = f"{summary['p_value']:.6g}"
    _result("eval", **kv, out=o["out"])
    return 0


def _cmd_ensemble(o: dict) -> int:
    graph = kb.load_graph(o["graph"])
    a = evaluation.load_predictions(o["pred-a"], graph)
    b = evaluation.load_predictions(o["pred-b"], graph)
    combined = evaluation.ensemble_predictions(a, b)
    evaluation.save_predictions(o["out"], combined, graph)
    n = sum(len(v) for v in combined.by_relation.values())
    _result("ensemble", facts=n, out=o["out"])
    return 0


def _cmd_gradcheck(o: dict) -> int:
    dims = (o["dim"],) if o["dim"] > 0 else (2, 4, 8)
    err = model.gradient_check_sweep(
        count=o["count"], dims=dims, step=o["step"], seed=o["seed"]
    )
    ok = err < o["tolerance"]
    _result("gradcheck", max_relative_error=f"{err:.3e}",
            tolerance=o["tolerance"], ok=ok)
    return 0 if ok else 1


_DISPATCH = {
    "ingest": _cmd_ingest,
    "synth": _cmd_synth,
    "extract": _cmd_extract,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "eval": _cmd_eval,
    "ensemble": _cmd_ensemble,
    "gradcheck": _cmd_gradcheck,
}


def run(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    ns = vars(args)
    command = ns.pop("command")
    explicit = {key.replace("_", "-"): value for key, value in ns.items()}
    try:
        opts = _merge_options(command, explicit)
        return _DISPATCH[command](opts)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
