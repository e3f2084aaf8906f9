"""``sgmatch`` command-line entry point.

Shared options resolve as: command-line flag, then ``SG_<NAME>`` environment
variable, then the JSON file given by ``--config`` (or ``SG_CONFIG``), then
the built-in default.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import SGMatchError
from .extract import EndpointConfig, HTTPChatClient, extract_llm, extract_rules
from .graph import (DEFAULT_TAU, GraphKind, filter_edges, graphs_from_paths, parse_scene_graph, parse_text_graph,
                    serialize_graph)
from .losses import LossMode
from .model import JointModel, ModelConfig, load_model
from .retrieval import (MatchMode, ModelScorer, Pool, bench, eval_recall, precompute_store, recall_csv,
                        retrieve)
from .store import EmbeddingStore
from .synth import SynthConfig, generate_dataset
from .threedssg import boxes_from_semseg, convert_scan
from .train import TrainConfig, TrainingSet, train, training_set_from_manifest, write_loss_curve
from .vectors import DEFAULT_DIM, WordVectorTable, featurize, load_word_vectors

logger = logging.getLogger("sgmatch")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

# option name -> (type, default); these are the settings that env / config may supply
SHARED = {
    "vectors": (str, None),
    "model": (str, None),
    "store": (str, None),
    "manifest": (str, None),
    "tau": (float, DEFAULT_TAU),
    "mode": (str, MatchMode.COS_SIM.value),
    "k": (str, "1,2,3,5"),
    "seed": (int, 0),
    "llm_endpoint": (str, None),
    "dim": (int, DEFAULT_DIM),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _add_shared(p: argparse.ArgumentParser, *names: str) -> None:
    helps = {
        "vectors": "word2vec text-format vector file (OOV words get seeded fallback vectors)",
        "model": "model checkpoint path",
        "store": "scene embedding store path",
        "manifest": "training manifest JSON",
        "tau": "edge-filter distance threshold in metres (default 1.5)",
        "mode": "matching mode: match-prob, cos-sim or ret-based",
        "k": "comma-separated k values (default 1,2,3,5)",
        "seed": "random seed (default 0)",
        "llm_endpoint": "base URL of a chat-completions endpoint",
        "dim": "feature width when no --vectors file is given (default 300)",
    }
    for name in names:
        p.add_argument("--" + name.replace("_", "-"), dest=name, default=None, help=helps[name])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sgmatch", description="Language-based 3D scene retrieval with scene graphs.")
    parser.add_argument("--config", default=None, help="JSON file of default option values")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--num-scenes", type=int, default=64)
    p.add_argument("--descriptions", type=int, default=4, help="training descriptions per scene")
    p.add_argument("--heldout", type=int, default=0, help="held-out descriptions per scene")
    _add_shared(p, "seed")

    p = sub.add_parser("ingest", help="parse, edge-filter and featurize scene graphs")
    p.add_argument("scenes", nargs="*", help="scene-graph JSON files")
    p.add_argument("--objects", help="3DSSG objects.json (with --relationships and --scan)")
    p.add_argument("--relationships", help="3DSSG relationships.json")
    p.add_argument("--semseg", help="3DSSG semseg.v2.json supplying boxes")
    p.add_argument("--scan", help="3DSSG scan id")
    p.add_argument("--out-dir", help="write filtered scene graphs here")
    _add_shared(p, "vectors", "tau", "dim")

    p = sub.add_parser("extract", help="turn a description into a text-graph")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--rules", action="store_true", help="rule-based extractor (default)")
    src.add_argument("--llm", action="store_true", help="LLM extractor (needs --llm-endpoint)")
    p.add_argument("--text", help="description; read from stdin when omitted")
    p.add_argument("--id", default="query", help="graph id for the result")
    p.add_argument("--out", help="output file (default stdout)")
    _add_shared(p, "llm_endpoint")

    p = sub.add_parser("train", help="train a model on a manifest")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--loss-mode", choices=[m.value for m in LossMode], default=LossMode.BOTH.value)
    p.add_argument("--blocks", type=int, default=1, help="number of self+cross attention blocks")
    p.add_argument("--mlp-hidden", type=int, default=256)
    p.add_argument("--loss-curve", help="write per-step losses as CSV")
    _add_shared(p, "manifest", "vectors", "model", "tau", "seed", "dim")

    p = sub.add_parser("embed", help="precompute scene embeddings against a fixed text-graph")
    p.add_argument("--fixed-text", help="text-graph id from the manifest (default: first listed)")
    _add_shared(p, "manifest", "vectors", "model", "store", "tau")

    p = sub.add_parser("query", help="rank scenes for one description")
    p.add_argument("--text", help="description (rule-extracted)")
    p.add_argument("--text-graph", help="text-graph JSON instead of --text")
    p.add_argument("--top", type=int, default=None, help="how many results to print")
    _add_shared(p, "manifest", "vectors", "model", "store", "tau", "mode")

    p = sub.add_parser("eval", help="top-k recall tables as CSV")
    p.add_argument("--queries", help="manifest whose text-graphs are the queries (default --manifest)")
    p.add_argument("--modes", default=",".join(m.value for m in MatchMode), help="comma-separated modes")
    p.add_argument("--pool", choices=[x.value for x in Pool], default=Pool.TEN.value)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--out", help="CSV output (default stdout)")
    _add_shared(p, "manifest", "vectors", "model", "store", "tau", "k", "seed")

    p = sub.add_parser("bench", help="query latency and store size")
    p.add_argument("--queries", help="manifest whose text-graphs are timed (default --manifest)")
    p.add_argument("--repetitions", type=int, default=5)
    _add_shared(p, "manifest", "vectors", "model", "store", "tau")
    return parser


def resolve(args: argparse.Namespace, environ=None) -> argparse.Namespace:
    """Fill unset shared options from the environment, then the config file, then defaults."""
    environ = os.environ if environ is None else environ
    config_path = args.config or environ.get("SG_CONFIG")
    config: Dict[str, object] = {}
    if config_path:
        try:
            with open(config_path, "r", encoding="utf-8") as fh:
                config = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"--config {config_path}: {exc}") from exc
        if not isinstance(config, dict):
            raise UsageError(f"--config {config_path}: expected a JSON object")
    for name, (kind, default) in SHARED.items():
        if not hasattr(args, name):
            continue
        value = getattr(args, name)
        if value is None:
            value = environ.get("SG_" + name.upper())
        if value is None:
            value = config.get(name, config.get(name.replace("_", "-")))
        if value is None:
            value = default
        if value is not None:
            try:
                value = kind(value)
            except (TypeError, ValueError):
                raise UsageError(f"--{name.replace('_', '-')}: invalid value {value!r}") from None
        setattr(args, name, value)
    if getattr(args, "mode", None) is not None:
        try:
            args.mode = MatchMode(args.mode)
        except ValueError:
            raise UsageError(f"--mode: expected one of {[m.value for m in MatchMode]}") from None
    if getattr(args, "k", None) is not None:
        args.k = parse_ks(args.k)
    return args


def parse_ks(text: str) -> List[int]:
    try:
        ks = [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"--k: expected comma-separated integers, got {text!r}") from None
    if not ks or any(k < 1 for k in ks):
        raise UsageError("--k: values must be positive")
    return sorted(set(ks))


def _need(args, *names) -> None:
    for name in names:
        if getattr(args, name, None) is None:
            raise UsageError(f"{args.command}: --{name.replace('_', '-')} is required")


def _table(args, dim: Optional[int] = None) -> WordVectorTable:
    if args.vectors:
        table = load_word_vectors(args.vectors)
    else:
        table = WordVectorTable(dim if dim is not None else getattr(args, "dim", DEFAULT_DIM))
    if dim is not None and table.dim != dim:
        raise SGMatchError(f"vector width {table.dim} does not match model width {dim}")
    return table


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_synth(args) -> int:
    cfg = SynthConfig(num_scenes=args.num_scenes, descriptions_per_scene=args.descriptions,
                      heldout_per_scene=args.heldout, seed=args.seed)
    manifest = generate_dataset(cfg, args.out)
    print(json.dumps({"manifest": manifest, "scenes": cfg.num_scenes,
                      "texts": cfg.num_scenes * cfg.descriptions_per_scene}))
    return EXIT_OK


def cmd_ingest(args) -> int:
    graphs = list(graphs_from_paths(args.scenes, GraphKind.SCENE)) if args.scenes else []
    if args.objects or args.relationships or args.scan:
        if not (args.objects and args.relationships and args.scan):
            raise UsageError("ingest: --objects, --relationships and --scan go together")
        with open(args.objects, encoding="utf-8") as fh:
            objects = json.load(fh)
        with open(args.relationships, encoding="utf-8") as fh:
            rels = json.load(fh)
        boxes = None
        if args.semseg:
            with open(args.semseg, encoding="utf-8") as fh:
                boxes = boxes_from_semseg(json.load(fh))
        graphs.append(parse_scene_graph(convert_scan(objects, rels, args.scan, boxes)))
    if not graphs:
        raise UsageError("ingest: give scene-graph files or --objects/--relationships/--scan")
    table = _table(args)
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
    for g in graphs:
        kept = filter_edges(g, args.tau)
        feats = featurize(table, kept)
        feats.validate()
        if args.out_dir:
            with open(os.path.join(args.out_dir, f"{g.graph_id}.json"), "wb") as fh:
                fh.write(serialize_graph(kept))
        print(json.dumps({"id": g.graph_id, "nodes": len(g.nodes), "edges": len(g.edges),
                          "edges_kept": len(kept.edges), "dim": feats.dim}))
    return EXIT_OK


def cmd_extract(args) -> int:
    text = args.text if args.text is not None else sys.stdin.read()
    if args.llm:
        _need(args, "llm_endpoint")
        result = extract_llm(text, HTTPChatClient(EndpointConfig(args.llm_endpoint)), args.id)
    else:
        result = extract_rules(text, args.id)
    _emit(serialize_graph(result.graph).decode("utf-8"), args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    _need(args, "manifest", "model")
    table = _table(args)
    dataset = training_set_from_manifest(args.manifest, table, args.tau)
    model = JointModel(ModelConfig(dim=table.dim, num_blocks=args.blocks, mlp_hidden=args.mlp_hidden,
                                   seed=args.seed))
    cfg = TrainConfig(batch_size=args.batch_size, epochs=args.epochs, learning_rate=args.lr,
                      loss_mode=LossMode(args.loss_mode), seed=args.seed)
    result = train(model, dataset, cfg, checkpoint_path=args.model)
    if args.loss_curve:
        write_loss_curve(result.curve, args.loss_curve)
    print(json.dumps({"model": args.model, "steps": len(result.curve),
                      "epoch_losses": [round(x, 6) for x in result.epoch_losses]}))
    return EXIT_OK


def _load_set(args, model: JointModel, manifest: Optional[str] = None) -> TrainingSet:
    return training_set_from_manifest(manifest or args.manifest, _table(args, model.config.dim), args.tau)


def _find_text(dataset: TrainingSet, text_id: str):
    for scene, texts in zip(dataset.scenes, dataset.texts):
        for t in texts:
            if t.graph_id == text_id:
                return scene, t
    raise SGMatchError(f"text-graph {text_id!r} not found in manifest")


def _first_text(dataset: TrainingSet):
    for scene, texts in zip(dataset.scenes, dataset.texts):
        if texts:
            return scene, texts[0]
    raise SGMatchError("manifest lists no text-graphs")


def cmd_embed(args) -> int:
    _need(args, "manifest", "model", "store")
    model = load_model(args.model)
    dataset = _load_set(args, model)
    _, fixed = _find_text(dataset, args.fixed_text) if args.fixed_text else _first_text(dataset)
    store = precompute_store(model, dataset.scenes, fixed)
    size = store.save(args.store)
    print(json.dumps({"store": args.store, "scenes": len(store), "fixed_text": fixed.graph_id, "bytes": size}))
    return EXIT_OK


def cmd_query(args) -> int:
    _need(args, "store", "model", "manifest")
    if (args.text is None) == (args.text_graph is None):
        raise UsageError("query: give exactly one of --text or --text-graph")
    model = load_model(args.model)
    store = EmbeddingStore.load(args.store)
    dataset = _load_set(args, model)
    table = _table(args, model.config.dim)
    if args.text is not None:
        graph = extract_rules(args.text).graph
    else:
        with open(args.text_graph, "rb") as fh:
            graph = parse_text_graph(fh.read())
    query = featurize(table, graph)
    kwargs = {}
    if args.mode == MatchMode.RET_BASED:
        fixed_scene, _ = _find_text(dataset, store.fixed_id)
        kwargs = {"store": store, "fixed_scene": fixed_scene}
    else:
        kwargs = {"scenes": {s.graph_id: s for s in dataset.scenes}}
    k = min(args.top, len(store)) if args.top else None
    result = retrieve(model, query, list(store.ids), args.mode, k, **kwargs)
    print(json.dumps({"query": result.query_id, "mode": result.mode.value,
                      "ranked": [{"scene": sid, "score": round(score, 6)} for sid, score in result.ranked]}))
    return EXIT_OK


def cmd_eval(args) -> int:
    _need(args, "manifest", "model")
    try:
        modes = [MatchMode(m.strip()) for m in args.modes.split(",") if m.strip()]
    except ValueError:
        raise UsageError(f"--modes: expected values from {[m.value for m in MatchMode]}") from None
    model = load_model(args.model)
    dataset = _load_set(args, model)
    queries = _load_set(args, model, args.queries).queries() if args.queries else dataset.queries()
    scenes = {s.graph_id: s for s in dataset.scenes}
    scene_ids = sorted(scenes)
    rows = []
    for mode in modes:
        kwargs = {}
        if mode == MatchMode.RET_BASED:
            _need(args, "store")
            store = EmbeddingStore.load(args.store)
            fixed_scene, _ = _find_text(dataset, store.fixed_id)
            kwargs = {"store": store, "fixed_scene": fixed_scene}
        scorer = ModelScorer(model, [q for q, _ in queries], scenes, mode, **kwargs)
        rng = np.random.default_rng(args.seed)
        rows.append((mode.value, eval_recall(scorer, queries, scene_ids, args.k, Pool(args.pool), args.trials, rng)))
    _emit(recall_csv(rows), args.out)
    return EXIT_OK


def cmd_bench(args) -> int:
    _need(args, "manifest", "model", "store")
    model = load_model(args.model)
    store = EmbeddingStore.load(args.store)
    dataset = _load_set(args, model)
    queries = _load_set(args, model, args.queries).queries() if args.queries else dataset.queries()
    fixed_scene, _ = _find_text(dataset, store.fixed_id)
    report = bench(model, store, [q for q, _ in queries], fixed_scene, args.repetitions, store_path=args.store)
    print(json.dumps({"median_query_seconds": report.median_query_seconds, "store_bytes": report.store_bytes,
                      "scenes": len(store), "queries": len(queries)}))
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth, "ingest": cmd_ingest, "extract": cmd_extract, "train": cmd_train,
    "embed": cmd_embed, "query": cmd_query, "eval": cmd_eval, "bench": cmd_bench,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        resolve(args)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (SGMatchError, OSError, ValueError, KeyError) as exc:
        print(f"sgmatch: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
