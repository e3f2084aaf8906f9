"""Matching scores, ranking, top-k recall and query benchmarking."""

from __future__ import annotations

import csv
import io
import os
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import DuplicateSceneId, EmptyQuerySet, InsufficientScenes, UnknownSceneId
from .losses import cosine
from .model import JointModel, embed_pair, encode_self, forward_pair
from .store import EmbeddingStore
from .vectors import FeaturizedGraph


class MatchMode(str, Enum):
    MATCH_PROB = "match-prob"
    COS_SIM = "cos-sim"
    RET_BASED = "ret-based"


class Pool(str, Enum):
    TEN = "ten"
    ALL = "all"


def score_pair(model: JointModel, text: FeaturizedGraph, scene: FeaturizedGraph, mode: MatchMode) -> float:
    mode = MatchMode(mode)
    if mode == MatchMode.RET_BASED:
        raise ValueError("ret-based scores need a precomputed store; use retrieve()")
    pair = embed_pair(model, text, scene)
    if mode == MatchMode.MATCH_PROB:
        return pair.match_prob
    return cosine(pair.s_text, pair.s_scene)


def precompute_store(model: JointModel, scenes: Sequence[FeaturizedGraph], fixed_text: FeaturizedGraph) -> EmbeddingStore:
    """Embed every scene against one fixed text-graph and keep the scene vectors."""
    ids = [s.graph_id for s in scenes]
    seen = set()
    for sid in ids:
        if sid in seen:
            raise DuplicateSceneId(f"scene id {sid!r} given twice")
        seen.add(sid)
    vectors = np.zeros((len(scenes), model.config.dim), dtype=np.float32)
    text_enc = encode_self(model, fixed_text)[0]
    for r, scene in enumerate(scenes):
        pair, _ = forward_pair(model, fixed_text, scene, pre=(text_enc, encode_self(model, scene)[0]))
        vectors[r] = pair.s_scene
    return EmbeddingStore(model.config.dim, fixed_text.graph_id, ids, vectors)


def query_embedding(model: JointModel, text: FeaturizedGraph, fixed_scene: FeaturizedGraph) -> np.ndarray:
    return embed_pair(model, text, fixed_scene).s_text


def cosine_rows(query: np.ndarray, rows: np.ndarray) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    norms = np.maximum(np.linalg.norm(rows, axis=1) * np.linalg.norm(query), 1e-12)
    return rows @ query / norms


@dataclass
class RetrievalResult:
    query_id: str
    ranked: List[Tuple[str, float]]
    mode: MatchMode


def rank(scene_ids: Sequence[str], scores) -> List[Tuple[str, float]]:
    """Descending score; ties go to the lexicographically smaller id."""
    return sorted(zip(scene_ids, (float(s) for s in scores)), key=lambda p: (-p[1], p[0]))


def retrieve(model: JointModel, text: FeaturizedGraph, candidate_ids: Sequence[str], mode: MatchMode,
             k: Optional[int] = None, *, scenes: Optional[Mapping[str, FeaturizedGraph]] = None,
             store: Optional[EmbeddingStore] = None, fixed_scene: Optional[FeaturizedGraph] = None) -> RetrievalResult:
    """Rank candidate scenes for one text-graph.

    Pairwise modes look candidates up in ``scenes``; ret-based mode embeds the
    query against ``fixed_scene`` and compares with the vectors in ``store``.
    """
    mode = MatchMode(mode)
    candidate_ids = list(candidate_ids)
    if k is None:
        k = len(candidate_ids)
    if not 1 <= k <= len(candidate_ids):
        raise ValueError(f"k={k} outside [1, {len(candidate_ids)}]")
    if mode == MatchMode.RET_BASED:
        if store is None or fixed_scene is None:
            raise ValueError("ret-based retrieval needs store and fixed_scene")
        scores = cosine_rows(query_embedding(model, text, fixed_scene), store.rows(candidate_ids))
    else:
        scenes = scenes or {}
        missing = [c for c in candidate_ids if c not in scenes]
        if missing:
            raise UnknownSceneId(f"unknown scene id(s): {missing[:5]}")
        scores = [score_pair(model, text, scenes[c], mode) for c in candidate_ids]
    return RetrievalResult(text.graph_id, rank(candidate_ids, scores)[:k], mode)


# -- recall -------------------------------------------------------------------

Scorer = Callable[[int, Sequence[str]], np.ndarray]


class ModelScorer:
    """Caches per-graph work so repeated trials over the same pairs stay cheap."""

    def __init__(self, model: JointModel, queries: Sequence[FeaturizedGraph], scenes: Mapping[str, FeaturizedGraph],
                 mode: MatchMode, store: Optional[EmbeddingStore] = None,
                 fixed_scene: Optional[FeaturizedGraph] = None):
        self.model = model
        self.queries = list(queries)
        self.scenes = scenes
        self.mode = MatchMode(mode)
        self.store = store
        self.fixed_scene = fixed_scene
        if self.mode == MatchMode.RET_BASED and (store is None or fixed_scene is None):
            raise ValueError("ret-based scoring needs store and fixed_scene")
        self._enc: Dict[tuple, np.ndarray] = {}
        self._pair: Dict[tuple, float] = {}
        self._qvec: Dict[int, np.ndarray] = {}

    def _encoded(self, key, graph):
        if key not in self._enc:
            self._enc[key] = encode_self(self.model, graph)[0]
        return self._enc[key]

    def _pair_score(self, q: int, sid: str) -> float:
        key = (q, sid)
        if key not in self._pair:
            text, scene = self.queries[q], self.scenes[sid]
            pre = (self._encoded(("q", q), text), self._encoded(("s", sid), scene))
            pair, _ = forward_pair(self.model, text, scene, pre=pre)
            if self.mode == MatchMode.MATCH_PROB:
                self._pair[key] = pair.match_prob
            else:
                self._pair[key] = cosine(pair.s_text, pair.s_scene)
        return self._pair[key]

    def __call__(self, q: int, candidate_ids: Sequence[str]) -> np.ndarray:
        if self.mode == MatchMode.RET_BASED:
            if q not in self._qvec:
                self._qvec[q] = query_embedding(self.model, self.queries[q], self.fixed_scene)
            return cosine_rows(self._qvec[q], self.store.rows(candidate_ids))
        return np.array([self._pair_score(q, sid) for sid in candidate_ids])


@dataclass
class RecallTable:
    ks: Tuple[int, ...]
    mean: Dict[int, float]
    std: Dict[int, float]
    trials: int
    hits: Dict[int, np.ndarray] = field(repr=False, default_factory=dict)


def truth_rank(candidate_ids: Sequence[str], scores, truth: str) -> int:
    """1-based rank of ``truth`` under the same ordering as :func:`rank`."""
    scores = np.asarray(scores, dtype=np.float64)
    idx = list(candidate_ids).index(truth)
    t = scores[idx]
    better = sum(1 for c, s in zip(candidate_ids, scores) if s > t or (s == t and c < truth))
    return better + 1


def eval_recall(scorer: Scorer, queries: Sequence[Tuple[object, str]], scene_ids: Sequence[str],
                ks: Sequence[int], pool: Pool, trials: int, rng: np.random.Generator,
                resamples: int = 10) -> RecallTable:
    """Top-k recall over random trials.

    ``queries`` is a list of ``(anything, true_scene_id)``; the scorer receives
    the query's index. With ``Pool.TEN`` each trial ranks the true scene among
    9 random distractors, with ``Pool.ALL`` among every scene. The spread is the
    standard deviation of the recall across ``resamples`` equal blocks of trials.
    """
    pool = Pool(pool)
    scene_ids = list(scene_ids)
    ks = tuple(int(k) for k in ks)
    if not queries:
        raise EmptyQuerySet("no queries to evaluate")
    size = 10 if pool == Pool.TEN else len(scene_ids)
    if len(scene_ids) < size or (pool == Pool.TEN and len(scene_ids) < 10):
        raise InsufficientScenes(f"need at least 10 scenes, have {len(scene_ids)}")
    if any(k < 1 or k > size for k in ks):
        raise ValueError(f"k values must lie in [1, {size}]")
    hits = {k: np.zeros(trials, dtype=bool) for k in ks}
    for t in range(trials):
        q = int(rng.integers(len(queries)))
        truth = queries[q][1]
        if pool == Pool.TEN:
            others = [s for s in scene_ids if s != truth]
            picks = rng.choice(len(others), size=9, replace=False)
            candidates = [truth] + [others[i] for i in picks]
        else:
            candidates = scene_ids
        r = truth_rank(candidates, scorer(q, candidates), truth)
        for k in ks:
            hits[k][t] = r <= k
    blocks = max(1, min(resamples, trials))
    mean, std = {}, {}
    for k in ks:
        mean[k] = float(hits[k].mean()) if trials else 0.0
        parts = [b.mean() for b in np.array_split(hits[k], blocks) if len(b)]
        std[k] = float(np.std(parts, ddof=1)) if len(parts) > 1 else 0.0
    return RecallTable(ks, mean, std, trials, hits)


def recall_csv(rows: Sequence[Tuple[str, RecallTable]]) -> str:
    """Table-style CSV: one row per method, one ``mean ± std`` column (percent) per k."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    ks = rows[0][1].ks if rows else ()
    writer.writerow(["Top k"] + [str(k) for k in ks])
    for label, table in rows:
        writer.writerow([label] + [f"{100 * table.mean[k]:.2f} ± {100 * table.std[k]:.2f}" for k in ks])
    return buf.getvalue()


# -- timing -------------------------------------------------------------------


@dataclass
class BenchReport:
    median_query_seconds: float
    store_bytes: int
    timings: List[float] = field(repr=False, default_factory=list)


def bench(model: JointModel, store: EmbeddingStore, queries: Sequence[FeaturizedGraph],
          fixed_scene: FeaturizedGraph, repetitions: int = 5, store_path=None) -> BenchReport:
    """Median wall time to embed one query and rank it against the whole store.

    Protocol: one untimed warm-up pass over all queries, then ``repetitions``
    timed passes; the store's rows are already in memory.
    """
    if not queries:
        raise EmptyQuerySet("bench needs at least one query")
    ids = list(store.ids)

    def run(q):
        vec = query_embedding(model, q, fixed_scene)
        scores = cosine_rows(vec, store.vectors)
        return rank(ids, scores)[:1]

    for q in queries:
        run(q)
    timings = []
    for _ in range(repetitions):
        for q in queries:
            t0 = time.perf_counter()
            run(q)
            timings.append(time.perf_counter() - t0)
    size = os.path.getsize(store_path) if store_path is not None else len(store.to_bytes())
    return BenchReport(float(np.median(timings)), size, timings)
