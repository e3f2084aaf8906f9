"""Contrastive objectives over a B x B grid of (scene, text) pairings.

Row ``i`` indexes scenes, column ``k`` indexes texts; the softmax in both
terms runs across the text index within a scene row.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import log_softmax, softmax

INFONCE_TEMPERATURE = 0.1


class LossMode(str, Enum):
    COSSIM = "cos"
    MATCH = "match"
    BOTH = "both"
    # conventional InfoNCE on cosine logits in place of the cosine term; not the reference objective
    INFONCE = "infonce"


@dataclass
class BatchScores:
    cos_matrix: np.ndarray
    match_matrix: np.ndarray
    targets: np.ndarray
    weights: np.ndarray

    @classmethod
    def aligned(cls, cos_matrix, match_matrix) -> "BatchScores":
        """Scores for a batch of matched pairs: ``y = I`` and ``w = 1 - y``.

        Target cosine is 1 on matches and 0 elsewhere, so the cosine-term
        weight (1 - target cosine) vanishes on the diagonal.
        """
        cos_matrix = np.asarray(cos_matrix, dtype=np.float64)
        B = cos_matrix.shape[0]
        y = np.eye(B)
        return cls(cos_matrix, np.asarray(match_matrix, dtype=np.float64), y, 1.0 - y)

    @property
    def batch_size(self) -> int:
        return self.cos_matrix.shape[0]


def loss_cossim(scores: BatchScores) -> float:
    x = 1.0 - scores.cos_matrix
    B = scores.batch_size
    return float(-(scores.weights * log_softmax(x, axis=1)).sum() / B**2)


def loss_cossim_grad(scores: BatchScores) -> np.ndarray:
    """d loss_cossim / d cos_matrix."""
    x = 1.0 - scores.cos_matrix
    B = scores.batch_size
    p = softmax(x, axis=1)
    dx = (scores.weights.sum(axis=1, keepdims=True) * p - scores.weights) / B**2
    return -dx


def loss_match(scores: BatchScores) -> float:
    B = scores.batch_size
    return float(-(scores.targets * log_softmax(scores.match_matrix, axis=1)).sum() / B**2)


def loss_match_grad(scores: BatchScores) -> np.ndarray:
    B = scores.batch_size
    p = softmax(scores.match_matrix, axis=1)
    return (scores.targets.sum(axis=1, keepdims=True) * p - scores.targets) / B**2


def loss_infonce(scores: BatchScores, temperature: float = INFONCE_TEMPERATURE) -> float:
    B = scores.batch_size
    logits = scores.cos_matrix / temperature
    return float(-(scores.targets * log_softmax(logits, axis=1)).sum() / B)


def loss_infonce_grad(scores: BatchScores, temperature: float = INFONCE_TEMPERATURE) -> np.ndarray:
    B = scores.batch_size
    p = softmax(scores.cos_matrix / temperature, axis=1)
    return (scores.targets.sum(axis=1, keepdims=True) * p - scores.targets) / (B * temperature)


def combine(l_cos: float, l_match: float, mode: LossMode) -> float:
    mode = LossMode(mode)
    if mode == LossMode.COSSIM:
        return l_cos
    if mode == LossMode.MATCH:
        return l_match
    return 0.5 * (l_match + l_cos)


def loss_total(scores: BatchScores, mode: LossMode = LossMode.BOTH) -> float:
    mode = LossMode(mode)
    l_cos = loss_infonce(scores) if mode == LossMode.INFONCE else loss_cossim(scores)
    return combine(l_cos, loss_match(scores), mode)


@dataclass
class LossParts:
    cossim: float
    match: float
    total: float
    d_cos: np.ndarray
    d_match: np.ndarray


def evaluate_loss(scores: BatchScores, mode: LossMode = LossMode.BOTH) -> LossParts:
    """Both loss terms, the combined value and its gradients w.r.t. the score grids."""
    mode = LossMode(mode)
    if mode == LossMode.INFONCE:
        l_cos, g_cos = loss_infonce(scores), loss_infonce_grad(scores)
    else:
        l_cos, g_cos = loss_cossim(scores), loss_cossim_grad(scores)
    l_match, g_match = loss_match(scores), loss_match_grad(scores)
    total = combine(l_cos, l_match, mode)
    a_cos = {LossMode.COSSIM: 1.0, LossMode.MATCH: 0.0}.get(mode, 0.5)
    a_match = {LossMode.COSSIM: 0.0, LossMode.MATCH: 1.0}.get(mode, 0.5)
    return LossParts(l_cos, l_match, total, a_cos * g_cos, a_match * g_match)


def cosine(a: np.ndarray, b: np.ndarray, eps: float = 1e-12) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    return float(a @ b / max(na * nb, eps))


def cosine_grads(a: np.ndarray, b: np.ndarray, eps: float = 1e-12):
    """(d cos/d a, d cos/d b)."""
    na, nb = max(np.linalg.norm(a), eps), max(np.linalg.norm(b), eps)
    c = a @ b / (na * nb)
    return b / (na * nb) - c * a / na**2, a / (na * nb) - c * b / nb**2

