"""Batch construction, per-step gradients and the Adam training loop."""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DivergedLoss, InsufficientScenes
from .graph import filter_edges, graphs_from_paths, GraphKind, DEFAULT_TAU
from .losses import BatchScores, LossMode, cosine, cosine_grads, evaluate_loss
from .model import JointModel, backward_pair, backward_self, encode_self, forward_pair, save_model
from .vectors import FeaturizedGraph, WordVectorTable, featurize

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 8
    epochs: int = 30
    learning_rate: float = 1e-3
    loss_mode: LossMode = LossMode.BOTH
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    checkpoint_every: int = 0  # steps; 0 = only at the end

    def __post_init__(self):
        self.loss_mode = LossMode(self.loss_mode)
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 for in-batch negatives")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")


@dataclass
class TrainingSet:
    """Featurized scenes and, per scene, the featurized text-graphs describing it."""

    scenes: List[FeaturizedGraph]
    texts: List[List[FeaturizedGraph]]

    def __post_init__(self):
        if len(self.scenes) != len(self.texts):
            raise ValueError("scenes and texts must align")
        ids = [s.graph_id for s in self.scenes]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate scene id in training set")

    @property
    def num_pairs(self) -> int:
        return sum(len(t) for t in self.texts)

    def queries(self) -> List[Tuple[FeaturizedGraph, str]]:
        """All (text, true scene id) pairs in scene order."""
        return [(t, s.graph_id) for s, ts in zip(self.scenes, self.texts) for t in ts]


def load_manifest(path) -> List[dict]:
    """Read a manifest and resolve its paths relative to the manifest's directory."""
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "r", encoding="utf-8") as fh:
        entries = json.load(fh)
    if not isinstance(entries, list):
        raise ValueError(f"{path}: manifest must be a JSON list")
    out = []
    for entry in entries:
        out.append({
            "scene_graph_path": os.path.join(base, entry["scene_graph_path"]),
            "text_graph_paths": [os.path.join(base, p) for p in entry["text_graph_paths"]],
        })
    return out


def training_set_from_manifest(path, table: WordVectorTable, tau: float = DEFAULT_TAU) -> TrainingSet:
    scenes, texts = [], []
    for entry in load_manifest(path):
        (scene,) = graphs_from_paths([entry["scene_graph_path"]], GraphKind.SCENE)
        scenes.append(featurize(table, filter_edges(scene, tau)))
        texts.append([featurize(table, g) for g in graphs_from_paths(entry["text_graph_paths"], GraphKind.TEXT)])
    return TrainingSet(scenes, texts)


def build_batch(dataset: TrainingSet, batch_size: int, rng: np.random.Generator):
    """Sample ``batch_size`` matched (scene, text) pairs with distinct scenes."""
    eligible = [i for i, ts in enumerate(dataset.texts) if ts]
    if len(eligible) < batch_size:
        raise InsufficientScenes(f"need {batch_size} scenes with descriptions, have {len(eligible)}")
    picks = rng.choice(len(eligible), size=batch_size, replace=False)
    batch = []
    for p in picks:
        i = eligible[p]
        k = int(rng.integers(len(dataset.texts[i])))
        batch.append((dataset.scenes[i], dataset.texts[i][k]))
    return batch


@dataclass
class StepResult:
    cossim: float
    match: float
    total: float
    grads: dict
    scores: BatchScores


def batch_gradients(model: JointModel, batch: Sequence[Tuple[FeaturizedGraph, FeaturizedGraph]],
                    mode: LossMode = LossMode.BOTH) -> StepResult:
    """Forward all B x B pairings of a batch, then backprop the combined loss.

    First-block self-attention is computed once per graph and its gradient is
    accumulated across the pairings before a single backward pass.
    """
    scenes = [s for s, _ in batch]
    texts = [t for _, t in batch]
    B = len(batch)
    enc_s = [encode_self(model, g) for g in scenes]
    enc_t = [encode_self(model, g) for g in texts]
    cos = np.zeros((B, B))
    match = np.zeros((B, B))
    caches = {}
    for i in range(B):
        for k in range(B):
            pair, cache = forward_pair(model, texts[k], scenes[i], pre=(enc_t[k][0], enc_s[i][0]))
            cos[i, k] = cosine(pair.s_scene, pair.s_text)
            match[i, k] = pair.match_prob
            caches[i, k] = (pair, cache)
    scores = BatchScores.aligned(cos, match)
    parts = evaluate_loss(scores, mode)

    grads = model.zero_grads()
    d_scene_nodes = [np.zeros_like(e[0]) for e in enc_s]
    d_text_nodes = [np.zeros_like(e[0]) for e in enc_t]
    for (i, k), (pair, cache) in caches.items():
        g_scene, g_text = cosine_grads(pair.s_scene, pair.s_text)
        dc = parts.d_cos[i, k]
        ig = backward_pair(model, cache, dc * g_text, dc * g_scene, parts.d_match[i, k], grads)
        d_text_nodes[k] += ig["text_nodes"]
        d_scene_nodes[i] += ig["scene_nodes"]
    for enc, dn in zip(enc_s + enc_t, d_scene_nodes + d_text_nodes):
        backward_self(model, enc[1], dn, grads)
    return StepResult(parts.cossim, parts.match, parts.total, grads, scores)


class Adam:
    def __init__(self, params: dict, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, p in params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            p -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class TrainResult:
    model: JointModel
    curve: List[Tuple[int, float, float, float]] = field(default_factory=list)
    epoch_losses: List[float] = field(default_factory=list)


def steps_per_epoch(dataset: TrainingSet, batch_size: int) -> int:
    return max(1, dataset.num_pairs // batch_size)


def train(model: JointModel, dataset: TrainingSet, cfg: TrainConfig,
          checkpoint_path=None, on_step: Optional[Callable] = None) -> TrainResult:
    """Optimize a copy of ``model``; the input model is left untouched.

    One epoch is ``num_pairs // batch_size`` steps of freshly sampled batches.
    On a non-finite loss or gradient the last good parameters are written to
    ``checkpoint_path`` (when given) and :class:`DivergedLoss` is raised.
    """
    if not dataset.scenes:
        raise ValueError("empty training set")
    model = model.copy()
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    result = TrainResult(model)
    per_epoch = steps_per_epoch(dataset, cfg.batch_size)
    step = 0
    for epoch in range(cfg.epochs):
        running = 0.0
        for _ in range(per_epoch):
            batch = build_batch(dataset, cfg.batch_size, rng)
            res = batch_gradients(model, batch, cfg.loss_mode)
            finite = np.isfinite(res.total) and all(np.isfinite(g).all() for g in res.grads.values())
            if not finite:
                if checkpoint_path is not None:
                    save_model(model, checkpoint_path)
                raise DivergedLoss(f"non-finite loss at step {step}", step=step, last_good=model.copy())
            opt.step(model.params, res.grads)
            step += 1
            running += res.total
            result.curve.append((step, res.cossim, res.match, res.total))
            if on_step is not None:
                on_step(step, res)
            if checkpoint_path is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                save_model(model, checkpoint_path)
        result.epoch_losses.append(running / per_epoch)
        logger.info("epoch %d/%d loss %.5f", epoch + 1, cfg.epochs, result.epoch_losses[-1])
    if checkpoint_path is not None:
        save_model(model, checkpoint_path)
    return result


def write_loss_curve(curve, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "L_cossim", "L_match", "L"])
        for step, lc, lm, lt in curve:
            writer.writerow([step, repr(lc), repr(lm), repr(lt)])
