"""Synthetic rooms, scene graphs and templated descriptions.

Objects are axis-aligned boxes in a 6 x 6 x 3 m room. Relations are derived
from geometry only, and every derived relation lies within 1.5 m so the
default edge filter keeps all of them. Descriptions are rendered from
sampled subgraphs with templates the rule extractor inverts exactly.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import PlacementFailure
from .graph import BBox, GraphEdge, GraphKind, GraphNode, SemanticGraph, bbox_distance, serialize_graph

ROOM = (6.0, 6.0, 3.0)
TOUCH_EPS = 1e-9
NEXT_TO_DIST = 0.5
NEAR_DIST = 1.5
WALL_Z = (1.4, 2.6)


@dataclass(frozen=True)
class ObjectSpec:
    kind: str  # support | floor | small | wall
    size: Tuple[Tuple[float, float], ...]


@dataclass(frozen=True)
class SynthVocab:
    objects: Dict[str, ObjectSpec]
    colors: Tuple[str, ...]
    materials: Tuple[str, ...]
    relations: Tuple[str, ...]

    @property
    def attributes(self) -> Tuple[str, ...]:
        return self.colors + self.materials


def load_vocab(path=None) -> SynthVocab:
    if path is None:
        text = resources.files("sgmatch").joinpath("data").joinpath("synth_vocab.json").read_text(encoding="utf-8")
    else:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    raw = json.loads(text)
    objects = {label: ObjectSpec(spec["kind"], tuple(tuple(r) for r in spec["size"]))
               for label, spec in raw["objects"].items()}
    return SynthVocab(objects, tuple(raw["colors"]), tuple(raw["materials"]), tuple(raw["relations"]))


@dataclass
class SynthConfig:
    num_scenes: int = 64
    objects_per_scene: Tuple[int, int] = (4, 8)
    descriptions_per_scene: int = 4
    heldout_per_scene: int = 0
    subgraph_size: Tuple[int, int] = (2, 4)
    vocab_path: Optional[str] = None
    seed: int = 0
    max_retries: int = 200

    def __post_init__(self):
        lo, hi = self.objects_per_scene
        if not 1 <= lo <= hi:
            raise ValueError("objects_per_scene must be a non-empty range of positive counts")
        slo, shi = self.subgraph_size
        if not 1 <= slo <= shi:
            raise ValueError("subgraph_size must be a non-empty range")
        if self.num_scenes < 10:
            raise ValueError("num_scenes must be >= 10")


def _overlaps(a: BBox, b: BBox) -> bool:
    """Positive-volume intersection (touching faces do not count)."""
    return all(a.min[k] < b.max[k] - TOUCH_EPS and b.min[k] < a.max[k] - TOUCH_EPS for k in range(3))


def _footprints_overlap(a: BBox, b: BBox) -> bool:
    return all(a.min[k] < b.max[k] and b.min[k] < a.max[k] for k in range(2))


def spatial_relations(boxes: Sequence[BBox]) -> List[Tuple[int, str, int]]:
    """Relation triples (subject index, relation, object index) implied by geometry."""
    triples = []
    for i, a in enumerate(boxes):
        for j, b in enumerate(boxes):
            if i == j:
                continue
            if _footprints_overlap(a, b):
                if abs(a.min[2] - b.max[2]) <= TOUCH_EPS:
                    triples.append((i, "on", j))
                    triples.append((j, "under", i))
                elif a.min[2] > b.max[2] and a.min[2] - b.max[2] <= NEAR_DIST:
                    triples.append((i, "above", j))
                continue
            d = bbox_distance(a, b)
            if d <= NEXT_TO_DIST:
                if i < j:
                    triples.append((i, "next to", j))
            elif d <= NEAR_DIST:
                gx = max(0.0, b.min[0] - a.max[0], a.min[0] - b.max[0])
                gy = max(0.0, b.min[1] - a.max[1], a.min[1] - b.max[1])
                ca, cb = a.center, b.center
                if gx >= gy:
                    rel = "to the left of" if ca[0] < cb[0] else "to the right of"
                else:
                    rel = "in front of" if ca[1] < cb[1] else "behind"
                triples.append((i, rel, j))
    return triples


def _sample_size(spec: ObjectSpec, rng) -> Tuple[float, float, float]:
    w, d, h = (round(float(rng.uniform(lo, hi)), 3) for lo, hi in spec.size)
    if spec.kind in ("support", "floor") and rng.random() < 0.5:
        w, d = d, w
    return w, d, h


def _place(label, spec, size, placed, supports, rng, max_retries) -> Optional[BBox]:
    w, d, h = size
    for _ in range(max_retries):
        if spec.kind == "small":
            fitting = [s for s in supports if s.max[0] - s.min[0] >= w and s.max[1] - s.min[1] >= d]
            if not fitting:
                return None
            s = fitting[int(rng.integers(len(fitting)))]
            x = round(float(rng.uniform(s.min[0], s.max[0] - w)), 3)
            y = round(float(rng.uniform(s.min[1], s.max[1] - d)), 3)
            z = s.max[2]
        elif spec.kind == "wall":
            x = round(float(rng.uniform(0.0, ROOM[0] - w)), 3)
            y = round(float(rng.uniform(0.0, ROOM[1] - d)), 3)
            z = round(float(rng.uniform(WALL_Z[0], min(WALL_Z[1], ROOM[2] - h))), 3)
        else:
            x = round(float(rng.uniform(0.0, ROOM[0] - w)), 3)
            y = round(float(rng.uniform(0.0, ROOM[1] - d)), 3)
            z = 0.0
        box = BBox((x, y, z), (round(x + w, 3), round(y + d, 3), round(z + h, 3)))
        if not any(_overlaps(box, other) for other in placed):
            return box
    return None


def _pick_labels(vocab: SynthVocab, n: int, rng) -> List[str]:
    labels = sorted(vocab.objects)
    chosen = [labels[i] for i in rng.choice(len(labels), size=min(n, len(labels)), replace=False)]
    kinds = [vocab.objects[c].kind for c in chosen]
    if "small" in kinds and "support" not in kinds:
        supports = [lab for lab in labels if vocab.objects[lab].kind == "support"]
        # swap the first small object for a support so the rest have somewhere to sit
        chosen[kinds.index("small")] = supports[int(rng.integers(len(supports)))]
    return chosen


def generate_scene(cfg: SynthConfig, rng: np.random.Generator, scene_id: str = "scene",
                   vocab: Optional[SynthVocab] = None) -> SemanticGraph:
    """One random room as a scene graph with boxes and geometric relations."""
    vocab = vocab or load_vocab(cfg.vocab_path)
    lo, hi = cfg.objects_per_scene
    n = int(rng.integers(lo, hi + 1))
    order = {"support": 0, "floor": 1, "small": 2, "wall": 3}
    for _ in range(cfg.max_retries):
        labels = _pick_labels(vocab, n, rng)
        labels.sort(key=lambda lab: order[vocab.objects[lab].kind])
        placed, supports = [], []
        ok = True
        for lab in labels:
            spec = vocab.objects[lab]
            box = _place(lab, spec, _sample_size(spec, rng), placed, supports, rng, cfg.max_retries)
            if box is None:
                ok = False
                break
            placed.append(box)
            if spec.kind == "support":
                supports.append(box)
        if ok:
            break
    else:
        raise PlacementFailure(f"{scene_id}: could not place {n} objects after {cfg.max_retries} attempts")

    nodes = []
    for idx, (lab, box) in enumerate(zip(labels, placed)):
        attrs = []
        if rng.random() < 0.5:
            attrs.append(vocab.colors[int(rng.integers(len(vocab.colors)))])
        if rng.random() < 0.35:
            attrs.append(vocab.materials[int(rng.integers(len(vocab.materials)))])
        nodes.append(GraphNode(idx, lab, tuple(attrs), box))
    edges = [GraphEdge(i, j, rel) for i, rel, j in spatial_relations(placed)]
    return SemanticGraph(scene_id, GraphKind.SCENE, tuple(nodes), tuple(edges))


def _article(words: Sequence[str]) -> str:
    return "an" if words[0][0] in "aeiou" else "a"


def describe(scene: SemanticGraph, subgraph_size: int, rng: np.random.Generator,
             graph_id: str = "text") -> Tuple[str, SemanticGraph]:
    """Render a connected (when possible) subgraph of ``scene`` as sentences.

    Returns the description and the ground-truth text-graph, whose node order
    and ids follow first mention in the description.
    """
    if subgraph_size > len(scene.nodes) or subgraph_size < 1:
        raise ValueError(f"subgraph_size {subgraph_size} not in [1, {len(scene.nodes)}]")
    ids = [n.node_id for n in scene.nodes]
    neighbors = {i: set() for i in ids}
    for e in scene.edges:
        neighbors[e.source].add(e.target)
        neighbors[e.target].add(e.source)
    chosen = [ids[int(rng.integers(len(ids)))]]
    while len(chosen) < subgraph_size:
        frontier = sorted(set().union(*(neighbors[c] for c in chosen)) - set(chosen))
        pool = frontier or sorted(set(ids) - set(chosen))
        chosen.append(pool[int(rng.integers(len(pool)))])
    chosen_set = set(chosen)
    edges = [e for e in scene.edges if e.source in chosen_set and e.target in chosen_set]

    by_id = {n.node_id: n for n in scene.nodes}
    mentioned: List[int] = []

    def mention(node_id: int) -> str:
        node = by_id[node_id]
        if node_id in mentioned:
            return f"the {node.label}"
        mentioned.append(node_id)
        words = list(node.attributes) + node.label.split()
        return f"{_article(words)} {' '.join(words)}"

    sentences = []
    for e in edges:
        subject = mention(e.source)
        sentences.append(f"{subject} {e.relation} {mention(e.target)}")
    for node_id in chosen:
        if node_id not in mentioned:
            sentences.append(f"there is {mention(node_id)}")
    text = " ".join(s[0].upper() + s[1:] + "." for s in sentences)

    remap = {old: new for new, old in enumerate(mentioned)}
    nodes = tuple(GraphNode(remap[i], by_id[i].label, by_id[i].attributes) for i in mentioned)
    gt_edges = tuple(GraphEdge(remap[e.source], remap[e.target], e.relation) for e in edges)
    return text, SemanticGraph(graph_id, GraphKind.TEXT, nodes, gt_edges, description=text)


@dataclass
class Corpus:
    scenes: List[SemanticGraph]
    texts: List[List[SemanticGraph]]
    heldout: List[List[SemanticGraph]] = field(default_factory=list)


def _describe_many(scene, count, cfg, rng, prefix):
    out = []
    lo, hi = cfg.subgraph_size
    for k in range(count):
        size = min(int(rng.integers(lo, hi + 1)), len(scene.nodes))
        _, g = describe(scene, size, rng, graph_id=f"{prefix}{k}")
        out.append(g)
    return out


def generate_corpus(cfg: SynthConfig) -> Corpus:
    """All scenes and descriptions, fully determined by ``cfg.seed``.

    Each scene has its own RNG stream keyed on (seed, index, attempt), so a
    scene does not depend on how many draws earlier scenes consumed.
    """
    vocab = load_vocab(cfg.vocab_path)
    scenes, texts, heldout = [], [], []
    signatures = set()
    for index in range(cfg.num_scenes):
        scene_id = f"scene{index:04d}"
        for attempt in range(cfg.max_retries):
            rng = np.random.default_rng([cfg.seed, 0, index, attempt])
            scene = generate_scene(cfg, rng, scene_id, vocab)
            signature = tuple(sorted(n.label for n in scene.nodes))
            if signature not in signatures:
                signatures.add(signature)
                break
        else:
            raise PlacementFailure(f"{scene_id}: could not produce a distinguishable scene")
        scenes.append(scene)
        texts.append(_describe_many(scene, cfg.descriptions_per_scene, cfg,
                                    np.random.default_rng([cfg.seed, 1, index]), f"{scene_id}_d"))
        heldout.append(_describe_many(scene, cfg.heldout_per_scene, cfg,
                                      np.random.default_rng([cfg.seed, 2, index]), f"{scene_id}_h"))
    return Corpus(scenes, texts, heldout)


def _write_manifest(path, scenes, groups, subdir, root):
    entries = []
    for scene, group in zip(scenes, groups):
        paths = []
        for g in group:
            rel = f"{subdir}/{g.graph_id}.json"
            with open(os.path.join(root, rel), "wb") as fh:
                fh.write(serialize_graph(g))
            paths.append(rel)
        entries.append({"scene_graph_path": f"scenes/{scene.graph_id}.json", "text_graph_paths": paths})
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(entries, fh, indent=2)
        fh.write("\n")


def generate_dataset(cfg: SynthConfig, out_dir) -> str:
    """Write scene/text JSON files plus ``manifest.json`` (and ``heldout.json``).

    Returns the path of the training manifest.
    """
    corpus = generate_corpus(cfg)
    os.makedirs(os.path.join(out_dir, "scenes"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "texts"), exist_ok=True)
    for scene in corpus.scenes:
        with open(os.path.join(out_dir, "scenes", f"{scene.graph_id}.json"), "wb") as fh:
            fh.write(serialize_graph(scene))
    manifest = os.path.join(out_dir, "manifest.json")
    _write_manifest(manifest, corpus.scenes, corpus.texts, "texts", out_dir)
    if cfg.heldout_per_scene:
        os.makedirs(os.path.join(out_dir, "texts_heldout"), exist_ok=True)
        _write_manifest(os.path.join(out_dir, "heldout.json"), corpus.scenes, corpus.heldout,
                        "texts_heldout", out_dir)
    return manifest
