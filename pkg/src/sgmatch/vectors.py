"""Word-vector lookup and graph featurization."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict

import numpy as np

from .errors import DimensionMismatch, MalformedVectorFile
from .graph import GraphKind, SemanticGraph

DEFAULT_DIM = 300
DEFAULT_FALLBACK_SEED = 0


@lru_cache(maxsize=65536)
def _fallback_vector(word: str, seed: int, dim: int) -> np.ndarray:
    digest = hashlib.blake2b(word.encode("utf-8"), digest_size=8).digest()
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, int.from_bytes(digest, "little")])
    vec = rng.standard_normal(dim)
    vec /= np.linalg.norm(vec)
    vec.setflags(write=False)
    return vec


@dataclass(frozen=True)
class WordVectorTable:
    dim: int = DEFAULT_DIM
    entries: Dict[str, np.ndarray] = field(default_factory=dict)
    fallback_seed: int = DEFAULT_FALLBACK_SEED

    def __post_init__(self):
        if self.dim <= 0:
            raise ValueError("dim must be positive")
        for tok, vec in self.entries.items():
            if vec.shape != (self.dim,):
                raise DimensionMismatch(f"vector for {tok!r} has shape {vec.shape}, expected ({self.dim},)")

    def __contains__(self, token):
        return token in self.entries

    def __len__(self):
        return len(self.entries)


def load_word_vectors(path, fallback_seed: int = DEFAULT_FALLBACK_SEED) -> WordVectorTable:
    """Read a text-format word-vector file (``count dim`` header, then one token per line)."""
    entries = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise MalformedVectorFile(f"{path}: header must be '<count> <dim>'")
        try:
            count, dim = int(header[0]), int(header[1])
        except ValueError as exc:
            raise MalformedVectorFile(f"{path}: non-integer header") from exc
        if count < 0 or dim <= 0:
            raise MalformedVectorFile(f"{path}: bad header values {count} {dim}")
        lineno = 1
        for line in fh:
            lineno += 1
            parts = line.rstrip("\n").split(" ")
            parts = [p for p in parts if p]
            if not parts:
                continue
            if len(parts) - 1 != dim:
                raise DimensionMismatch(
                    f"{path}:{lineno}: expected {dim} values for {parts[0]!r}, got {len(parts) - 1}"
                )
            try:
                vec = np.array([float(v) for v in parts[1:]], dtype=np.float64)
            except ValueError as exc:
                raise MalformedVectorFile(f"{path}:{lineno}: {exc}") from exc
            entries[parts[0]] = vec
    if len(entries) != count:
        raise MalformedVectorFile(f"{path}: header announces {count} vectors, found {len(entries)}")
    return WordVectorTable(dim=dim, entries=entries, fallback_seed=fallback_seed)


def token_vector(table: WordVectorTable, token: str) -> np.ndarray:
    """Vector for a label, attribute or relation string.

    Whole-token hits are returned verbatim; otherwise the whitespace-separated
    words are averaged, each word falling back to a seeded unit vector when it
    is out of vocabulary.
    """
    if not token:
        raise ValueError("token must be non-empty")
    hit = table.entries.get(token)
    if hit is not None:
        return hit
    words = token.split()
    if len(words) == 1:
        return _fallback_vector(words[0], table.fallback_seed, table.dim)
    vecs = [table.entries.get(w) for w in words]
    vecs = [v if v is not None else _fallback_vector(w, table.fallback_seed, table.dim)
            for v, w in zip(vecs, words)]
    return np.mean(vecs, axis=0)


@dataclass
class FeaturizedGraph:
    graph_id: str
    kind: GraphKind
    node_features: np.ndarray  # (N, dim)
    edge_index: np.ndarray  # (E, 2) int, columns = (src, dst)
    edge_features: np.ndarray  # (E, dim)

    @property
    def num_nodes(self) -> int:
        return self.node_features.shape[0]

    @property
    def dim(self) -> int:
        return self.node_features.shape[1]

    def validate(self) -> None:
        n, d = self.node_features.shape
        if self.edge_index.shape != (self.edge_features.shape[0], 2):
            raise ValueError("edge_index / edge_features row mismatch")
        if self.edge_features.shape[0] and self.edge_features.shape[1] != d:
            raise ValueError("edge feature width differs from node feature width")
        if self.edge_index.size and (self.edge_index.min() < 0 or self.edge_index.max() >= n):
            raise ValueError("edge index out of range")
        if not (np.isfinite(self.node_features).all() and np.isfinite(self.edge_features).all()):
            raise ValueError("non-finite features")

    def permuted(self, perm) -> "FeaturizedGraph":
        """Reorder nodes so that new row ``i`` is old row ``perm[i]``."""
        perm = np.asarray(perm)
        inverse = np.empty_like(perm)
        inverse[perm] = np.arange(len(perm))
        return FeaturizedGraph(
            self.graph_id, self.kind, self.node_features[perm],
            inverse[self.edge_index] if self.edge_index.size else self.edge_index.copy(),
            self.edge_features.copy(),
        )


def featurize(table: WordVectorTable, g: SemanticGraph) -> FeaturizedGraph:
    dim = table.dim
    nodes = np.zeros((len(g.nodes), dim))
    for i, node in enumerate(g.nodes):
        nodes[i] = token_vector(table, node.label)
        if node.attributes:
            nodes[i] += np.mean([token_vector(table, a) for a in node.attributes], axis=0)
    index = g.node_index()
    edge_index = np.array([[index[e.source], index[e.target]] for e in g.edges], dtype=np.int64).reshape(-1, 2)
    edges = np.zeros((len(g.edges), dim))
    for i, e in enumerate(g.edges):
        edges[i] = token_vector(table, e.relation)
    return FeaturizedGraph(g.graph_id, g.kind, nodes, edge_index, edges)
