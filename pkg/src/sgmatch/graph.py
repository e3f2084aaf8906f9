"""Graph data model shared by scene graphs and text-graphs.

Scene-graph JSON layout::

    {"id": "scene0",
     "objects": [{"id": 1, "label": "chair", "attributes": ["wooden"],
                  "bbox": {"min": [0, 0, 0], "max": [1, 1, 1]}}],
     "relations": [[1, "next to", 2]]}

Text-graphs use the same layout without ``bbox`` and may carry an optional
``description`` string.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Optional, Sequence, Tuple

from .errors import DanglingEdge, InvalidThreshold, MalformedDocument

logger = logging.getLogger(__name__)

DEFAULT_TAU = 1.5


class GraphKind(str, Enum):
    SCENE = "scene"
    TEXT = "text"


def normalize_label(text: str) -> str:
    """Lowercase and collapse internal whitespace."""
    return " ".join(str(text).lower().split())


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in meters."""

    min: Tuple[float, float, float]
    max: Tuple[float, float, float]

    def __post_init__(self):
        if len(self.min) != 3 or len(self.max) != 3:
            raise ValueError("bbox corners must be 3-vectors")
        if any(lo > hi for lo, hi in zip(self.min, self.max)):
            raise ValueError(f"bbox min {self.min} exceeds max {self.max}")

    @property
    def center(self) -> Tuple[float, float, float]:
        return tuple((lo + hi) / 2.0 for lo, hi in zip(self.min, self.max))

    def to_dict(self) -> dict:
        return {"min": list(self.min), "max": list(self.max)}


@dataclass(frozen=True)
class GraphNode:
    node_id: int
    label: str
    attributes: Tuple[str, ...] = ()
    bbox: Optional[BBox] = None

    def __post_init__(self):
        if not self.label:
            raise ValueError("node label must be non-empty")


@dataclass(frozen=True)
class GraphEdge:
    source: int
    target: int
    relation: str

    def __post_init__(self):
        if not self.relation:
            raise ValueError("edge relation must be non-empty")

    @property
    def triple(self) -> Tuple[int, str, int]:
        return (self.source, self.relation, self.target)


@dataclass(frozen=True)
class SemanticGraph:
    graph_id: str
    kind: GraphKind
    nodes: Tuple[GraphNode, ...]
    edges: Tuple[GraphEdge, ...] = ()
    description: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))
        if not self.nodes:
            raise ValueError("a graph needs at least one node")
        ids = [n.node_id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate node id")
        known = set(ids)
        seen = set()
        for e in self.edges:
            if e.source not in known or e.target not in known:
                raise DanglingEdge(f"edge {e.triple} references an unknown node")
            if e.source == e.target:
                raise ValueError(f"self-loop edge {e.triple}")
            if e.triple in seen:
                raise ValueError(f"duplicate edge {e.triple}")
            seen.add(e.triple)
        if self.kind == GraphKind.TEXT and any(n.bbox is not None for n in self.nodes):
            raise ValueError("text graphs never carry bounding boxes")

    def node_index(self) -> dict:
        return {n.node_id: i for i, n in enumerate(self.nodes)}

    def node(self, node_id: int) -> GraphNode:
        for n in self.nodes:
            if n.node_id == node_id:
                return n
        raise KeyError(node_id)

    def with_edges(self, edges: Iterable[GraphEdge]) -> "SemanticGraph":
        return replace(self, edges=tuple(edges))


# -- JSON ---------------------------------------------------------------------


def _vec3(value, what):
    if not isinstance(value, list) or len(value) != 3:
        raise MalformedDocument(f"{what} must be a list of 3 numbers")
    out = []
    for v in value:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise MalformedDocument(f"{what} must contain finite numbers")
        out.append(float(v))
    return tuple(out)


def _int_id(value, what):
    if isinstance(value, bool) or not isinstance(value, int):
        raise MalformedDocument(f"{what} must be an integer, got {value!r}")
    return value


def _load_json(document):
    if isinstance(document, (bytes, bytearray)):
        try:
            document = document.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedDocument(f"document is not UTF-8: {exc}") from exc
    if isinstance(document, str):
        try:
            return json.loads(document)
        except json.JSONDecodeError as exc:
            raise MalformedDocument(f"invalid JSON: {exc}") from exc
    return document


def graph_from_dict(doc, kind: GraphKind, graph_id: Optional[str] = None) -> SemanticGraph:
    """Validate a decoded JSON document and build a graph of the given kind."""
    if not isinstance(doc, dict):
        raise MalformedDocument("top level must be an object")
    gid = doc.get("id", graph_id)
    if gid is None:
        raise MalformedDocument("missing 'id'")
    if not isinstance(gid, str):
        gid = str(gid)
    objects = doc.get("objects")
    if not isinstance(objects, list) or not objects:
        raise MalformedDocument("'objects' must be a non-empty list")
    relations = doc.get("relations", [])
    if not isinstance(relations, list):
        raise MalformedDocument("'relations' must be a list")
    description = doc.get("description")
    if description is not None and not isinstance(description, str):
        raise MalformedDocument("'description' must be a string")

    nodes = []
    seen_ids = set()
    for obj in objects:
        if not isinstance(obj, dict):
            raise MalformedDocument("each object must be a JSON object")
        oid = _int_id(obj.get("id"), "object id")
        if oid in seen_ids:
            raise MalformedDocument(f"duplicate object id {oid}")
        seen_ids.add(oid)
        label = obj.get("label")
        if not isinstance(label, str) or not normalize_label(label):
            raise MalformedDocument(f"object {oid} needs a non-empty string label")
        attrs = obj.get("attributes", [])
        if not isinstance(attrs, list) or not all(isinstance(a, str) for a in attrs):
            raise MalformedDocument(f"object {oid} attributes must be a list of strings")
        attrs = tuple(a for a in (normalize_label(a) for a in attrs) if a)
        bbox = None
        if "bbox" in obj and obj["bbox"] is not None:
            if kind == GraphKind.TEXT:
                raise MalformedDocument(f"text-graph object {oid} carries a bbox")
            box = obj["bbox"]
            if not isinstance(box, dict):
                raise MalformedDocument(f"object {oid} bbox must be an object")
            try:
                bbox = BBox(_vec3(box.get("min"), "bbox.min"), _vec3(box.get("max"), "bbox.max"))
            except ValueError as exc:
                if isinstance(exc, MalformedDocument):
                    raise
                raise MalformedDocument(f"object {oid}: {exc}") from exc
        nodes.append(GraphNode(oid, normalize_label(label), attrs, bbox))

    edges = []
    seen = set()
    for rel in relations:
        if not isinstance(rel, list) or len(rel) != 3:
            raise MalformedDocument("each relation must be [source, relation, target]")
        src, name, dst = rel
        src = _int_id(src, "relation source")
        dst = _int_id(dst, "relation target")
        if not isinstance(name, str) or not normalize_label(name):
            raise MalformedDocument("relation name must be a non-empty string")
        if src not in seen_ids or dst not in seen_ids:
            missing = src if src not in seen_ids else dst
            raise DanglingEdge(f"relation {rel!r} references unknown object id {missing}")
        if src == dst:
            logger.warning("dropping self-loop relation %r in %s", rel, gid)
            continue
        edge = GraphEdge(src, dst, normalize_label(name))
        if edge.triple in seen:
            continue
        seen.add(edge.triple)
        edges.append(edge)

    return SemanticGraph(gid, kind, tuple(nodes), tuple(edges), description=description)


def parse_scene_graph(document) -> SemanticGraph:
    """Parse a scene-graph JSON document (bytes, str or decoded dict)."""
    return graph_from_dict(_load_json(document), GraphKind.SCENE)


def parse_text_graph(document) -> SemanticGraph:
    """Parse a text-graph JSON document; bounding boxes are rejected."""
    return graph_from_dict(_load_json(document), GraphKind.TEXT)


def graph_to_dict(g: SemanticGraph) -> dict:
    objects = []
    for n in g.nodes:
        obj = {"id": n.node_id, "label": n.label, "attributes": list(n.attributes)}
        if n.bbox is not None:
            obj["bbox"] = n.bbox.to_dict()
        objects.append(obj)
    doc = {"id": g.graph_id}
    if g.description is not None:
        doc["description"] = g.description
    doc["objects"] = objects
    doc["relations"] = [[e.source, e.relation, e.target] for e in g.edges]
    return doc


def serialize_graph(g: SemanticGraph) -> bytes:
    """Canonical UTF-8 JSON encoding (2-space indent, trailing newline)."""
    return (json.dumps(graph_to_dict(g), indent=2, ensure_ascii=False) + "\n").encode("utf-8")


# -- geometry -----------------------------------------------------------------


def bbox_distance(a: BBox, b: BBox) -> float:
    """Euclidean distance between the closest points of two boxes (0 if they touch)."""
    total = 0.0
    for amin, amax, bmin, bmax in zip(a.min, a.max, b.min, b.max):
        gap = max(0.0, bmin - amax, amin - bmax)
        total += gap * gap
    return math.sqrt(total)


def filter_edges(g: SemanticGraph, tau: float = DEFAULT_TAU) -> SemanticGraph:
    """Keep the edges whose endpoint boxes lie within ``tau`` meters.

    Edges touching a node without a bbox are dropped. Nodes are never removed.
    """
    if g.kind != GraphKind.SCENE:
        raise ValueError("filter_edges applies to scene graphs only")
    if math.isnan(tau) or tau < 0:
        raise InvalidThreshold(f"tau must be >= 0, got {tau}")
    boxes = {n.node_id: n.bbox for n in g.nodes}
    kept = []
    missing = 0
    for e in g.edges:
        a, b = boxes[e.source], boxes[e.target]
        if a is None or b is None:
            missing += 1
            continue
        if bbox_distance(a, b) <= tau:
            kept.append(e)
    if missing:
        logger.warning("%s: dropped %d edge(s) with bbox-less endpoints", g.graph_id, missing)
    return g.with_edges(kept)


def label_signature(g: SemanticGraph) -> Tuple[tuple, tuple]:
    """Order-free summary used to compare graphs up to node renumbering.

    Returns the sorted (label, sorted attributes) multiset and the sorted
    relation triples expressed with labels instead of ids.
    """
    labels = {n.node_id: n.label for n in g.nodes}
    nodes = tuple(sorted((n.label, tuple(sorted(n.attributes))) for n in g.nodes))
    triples = tuple(sorted((labels[e.source], e.relation, labels[e.target]) for e in g.edges))
    return nodes, triples


def graphs_from_paths(paths: Sequence, kind: GraphKind) -> list:
    parse = parse_scene_graph if kind == GraphKind.SCENE else parse_text_graph
    out = []
    for p in paths:
        with open(p, "rb") as fh:
            out.append(parse(fh.read()))
    return out
