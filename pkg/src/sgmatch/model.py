"""Joint text/scene graph embedding network.

Each block runs graph self-attention on both inputs, then bipartite
cross-attention between them. Node rows are mean-pooled into one embedding
per graph and the concatenated pair goes through a 3-layer MLP whose sigmoid
output is the matching probability.

Everything is plain numpy with hand-written backward passes. Row-vector
convention throughout: ``q = h @ Wq + bq``.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import FormatError
from .vectors import DEFAULT_DIM, FeaturizedGraph

MODEL_MAGIC = b"T2SGMDL1"
_CONFIG_STRUCT = struct.Struct("<IIIQB")

SELF_PARAMS = ("Wq", "bq", "Wk", "bk", "Wv", "bv", "We")
CROSS_PARAMS = ("Wq", "bq", "Wk", "bk", "Wv", "bv")
HEAD_PARAMS = ("W1", "b1", "W2", "b2", "W3", "b3")


@dataclass(frozen=True)
class ModelConfig:
    dim: int = DEFAULT_DIM
    num_blocks: int = 1
    mlp_hidden: int = 256
    seed: int = 0
    # attend over in- and out-neighbors instead of in-neighbors only
    symmetric: bool = False

    def __post_init__(self):
        if self.dim <= 0 or self.num_blocks < 1 or self.mlp_hidden <= 0:
            raise ValueError(f"invalid model config {self}")


@dataclass(frozen=True)
class EmbeddingPair:
    s_scene: np.ndarray
    s_text: np.ndarray
    match_prob: float


def param_shapes(cfg: ModelConfig) -> "OrderedDict[str, tuple]":
    """Parameter names and shapes in declaration (checkpoint) order."""
    d, h = cfg.dim, cfg.mlp_hidden
    shapes = OrderedDict()
    for b in range(cfg.num_blocks):
        for name in SELF_PARAMS:
            shapes[f"blocks.{b}.self.{name}"] = (d, d) if name[0] == "W" else (d,)
        for name in CROSS_PARAMS:
            shapes[f"blocks.{b}.cross.{name}"] = (d, d) if name[0] == "W" else (d,)
    shapes["head.W1"] = (2 * d, h)
    shapes["head.b1"] = (h,)
    shapes["head.W2"] = (h, h)
    shapes["head.b2"] = (h,)
    shapes["head.W3"] = (h, 1)
    shapes["head.b3"] = (1,)
    return shapes


class JointModel:
    """Parameter container; ``params`` preserves declaration order."""

    def __init__(self, config: ModelConfig, params: Optional[Dict[str, np.ndarray]] = None):
        self.config = config
        shapes = param_shapes(config)
        if params is None:
            params = _init_params(config, shapes)
        else:
            missing = set(shapes) ^ set(params)
            if missing:
                raise ValueError(f"parameter names do not match config: {sorted(missing)}")
            params = OrderedDict((k, np.asarray(params[k], dtype=np.float64)) for k in shapes)
            for k, shape in shapes.items():
                if params[k].shape != shape:
                    raise ValueError(f"{k}: shape {params[k].shape} != {shape}")
        self.params = params

    @classmethod
    def zeros(cls, config: ModelConfig) -> "JointModel":
        return cls(config, OrderedDict((k, np.zeros(s)) for k, s in param_shapes(config).items()))

    def copy(self) -> "JointModel":
        return JointModel(self.config, OrderedDict((k, v.copy()) for k, v in self.params.items()))

    def zero_grads(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, np.zeros_like(v)) for k, v in self.params.items())

    def num_parameters(self) -> int:
        return sum(v.size for v in self.params.values())

    def is_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.params.values())


def _init_params(cfg: ModelConfig, shapes) -> "OrderedDict[str, np.ndarray]":
    rng = np.random.default_rng(cfg.seed)
    params = OrderedDict()
    for name, shape in shapes.items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf.startswith("W"):
            bound = 1.0 / np.sqrt(shape[0])
            # float32-representable so a fresh model survives a checkpoint round trip exactly
            w = rng.uniform(-bound, bound, size=shape).astype(np.float32).astype(np.float64)
        else:
            w = np.zeros(shape)
        params[name] = w
    return params


# -- attention primitives ----------------------------------------------------


def _self_forward(P, prefix, H, edge_index, edge_feats, symmetric):
    n, d = H.shape
    src, dst = edge_index[:, 0], edge_index[:, 1]
    ef = edge_feats
    if symmetric and len(src):
        src, dst = np.concatenate([src, dst]), np.concatenate([dst, src])
        ef = np.vstack([ef, ef])
    loops = np.arange(n)
    src_all = np.concatenate([src, loops]).astype(np.int64)
    dst_all = np.concatenate([dst, loops]).astype(np.int64)
    ef_all = np.vstack([ef.reshape(-1, d), np.zeros((n, d))])
    m = len(dst_all)
    to_dst = np.zeros((n, m))
    to_dst[dst_all, np.arange(m)] = 1.0
    from_src = np.zeros((n, m))
    from_src[src_all, np.arange(m)] = 1.0

    Wq, bq = P[prefix + "Wq"], P[prefix + "bq"]
    Wk, bk = P[prefix + "Wk"], P[prefix + "bk"]
    Wv, bv = P[prefix + "Wv"], P[prefix + "bv"]
    We = P[prefix + "We"]
    Q = H @ Wq + bq
    K0 = H @ Wk + bk
    V0 = H @ Wv + bv
    EE = ef_all @ We
    k = K0[src_all] + EE
    v = V0[src_all] + EE
    scale = 1.0 / np.sqrt(d)
    s = np.einsum("md,md->m", Q[dst_all], k) * scale
    top = np.full(n, -np.inf)
    np.maximum.at(top, dst_all, s)
    ex = np.exp(s - top[dst_all])
    alpha = ex / (to_dst @ ex)[dst_all]
    out = H + to_dst @ (alpha[:, None] * v)
    cache = (prefix, H, ef_all, src_all, dst_all, to_dst, from_src, Q, k, v, alpha, scale, len(edge_feats), symmetric)
    return out, cache


def _self_backward(P, G, cache, dout):
    prefix, H, ef_all, src_all, dst_all, to_dst, from_src, Q, k, v, alpha, scale, n_edges, symmetric = cache
    g = dout[dst_all]
    dalpha = np.einsum("md,md->m", g, v)
    dv = alpha[:, None] * g
    seg = (to_dst @ (alpha * dalpha))[dst_all]
    ds = alpha * (dalpha - seg) * scale
    dQ = to_dst @ (ds[:, None] * k)
    dk = ds[:, None] * Q[dst_all]
    dEE = dk + dv
    dK0 = from_src @ dk
    dV0 = from_src @ dv

    Wq, Wk, Wv, We = (P[prefix + n] for n in ("Wq", "Wk", "Wv", "We"))
    G[prefix + "Wq"] += H.T @ dQ
    G[prefix + "bq"] += dQ.sum(axis=0)
    G[prefix + "Wk"] += H.T @ dK0
    G[prefix + "bk"] += dK0.sum(axis=0)
    G[prefix + "Wv"] += H.T @ dV0
    G[prefix + "bv"] += dV0.sum(axis=0)
    G[prefix + "We"] += ef_all.T @ dEE
    dH = dout + dQ @ Wq.T + dK0 @ Wk.T + dV0 @ Wv.T
    dE = dEE[: len(dst_all) - H.shape[0]] @ We.T
    if symmetric and n_edges:
        dE = dE[:n_edges] + dE[n_edges:]
    return dH, dE


def _attend_forward(P, prefix, A, B):
    """Every row of A attends over all rows of B."""
    d = A.shape[1]
    scale = 1.0 / np.sqrt(d)
    Q = A @ P[prefix + "Wq"] + P[prefix + "bq"]
    K = B @ P[prefix + "Wk"] + P[prefix + "bk"]
    V = B @ P[prefix + "Wv"] + P[prefix + "bv"]
    S = (Q @ K.T) * scale
    S -= S.max(axis=1, keepdims=True)
    E = np.exp(S)
    Pm = E / E.sum(axis=1, keepdims=True)
    return A + Pm @ V, (A, B, Q, K, V, Pm, scale)


def _attend_backward(P, G, prefix, cache, dout):
    A, B, Q, K, V, Pm, scale = cache
    dP = dout @ V.T
    dV = Pm.T @ dout
    dS = Pm * (dP - np.sum(dP * Pm, axis=1, keepdims=True)) * scale
    dQ = dS @ K
    dK = dS.T @ Q
    G[prefix + "Wq"] += A.T @ dQ
    G[prefix + "bq"] += dQ.sum(axis=0)
    G[prefix + "Wk"] += B.T @ dK
    G[prefix + "bk"] += dK.sum(axis=0)
    G[prefix + "Wv"] += B.T @ dV
    G[prefix + "bv"] += dV.sum(axis=0)
    dA = dout + dQ @ P[prefix + "Wq"].T
    dB = dK @ P[prefix + "Wk"].T + dV @ P[prefix + "Wv"].T
    return dA, dB


def self_attention(model: JointModel, g: FeaturizedGraph, block: int = 0) -> np.ndarray:
    """Updated node matrix after one self-attention layer."""
    out, _ = _self_forward(model.params, f"blocks.{block}.self.", g.node_features,
                           g.edge_index, g.edge_features, model.config.symmetric)
    return out


def cross_attention(model: JointModel, a_nodes, b_nodes, block: int = 0):
    """Symmetric bipartite update; both directions read the pre-update values."""
    prefix = f"blocks.{block}.cross."
    a_new, _ = _attend_forward(model.params, prefix, a_nodes, b_nodes)
    b_new, _ = _attend_forward(model.params, prefix, b_nodes, a_nodes)
    return a_new, b_new


# -- full pair ----------------------------------------------------------------


def encode_self(model: JointModel, g: FeaturizedGraph):
    """First-block self-attention, which depends on one graph only.

    Returns ``(nodes, cache)``; the cache can be handed to
    :func:`forward_pair` and :func:`backward_self` to share the work across
    many pairings of the same graph.
    """
    return _self_forward(model.params, "blocks.0.self.", g.node_features,
                         g.edge_index, g.edge_features, model.config.symmetric)


def backward_self(model: JointModel, cache, dnodes, grads):
    """Backprop through :func:`encode_self`; returns (d node features, d edge features)."""
    return _self_backward(model.params, grads, cache, dnodes)


@dataclass
class _PairCache:
    text: FeaturizedGraph
    scene: FeaturizedGraph
    blocks: list
    n_text: int
    n_scene: int
    z: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    m: float
    pre: bool


def forward_pair(model: JointModel, text: FeaturizedGraph, scene: FeaturizedGraph, pre=None):
    """Run the network on one (text, scene) pair.

    ``pre`` optionally supplies ``(text_nodes, scene_nodes)`` already passed
    through first-block self-attention (see :func:`encode_self`).
    Returns ``(EmbeddingPair, cache)``.
    """
    P = model.params
    cfg = model.config
    T, S = text.node_features, scene.node_features
    blocks = []
    for b in range(cfg.num_blocks):
        if b == 0 and pre is not None:
            T, S = pre
            tc = sc = None
        else:
            T, tc = _self_forward(P, f"blocks.{b}.self.", T, text.edge_index, text.edge_features, cfg.symmetric)
            S, sc = _self_forward(P, f"blocks.{b}.self.", S, scene.edge_index, scene.edge_features, cfg.symmetric)
        prefix = f"blocks.{b}.cross."
        T_new, c_ts = _attend_forward(P, prefix, T, S)
        S_new, c_st = _attend_forward(P, prefix, S, T)
        T, S = T_new, S_new
        blocks.append((tc, sc, c_ts, c_st))

    s_text = T.mean(axis=0)
    s_scene = S.mean(axis=0)
    z = np.concatenate([s_text, s_scene])
    a1 = np.maximum(z @ P["head.W1"] + P["head.b1"], 0.0)
    a2 = np.maximum(a1 @ P["head.W2"] + P["head.b2"], 0.0)
    logit = float((a2 @ P["head.W3"] + P["head.b3"])[0])
    m = _sigmoid(logit)
    cache = _PairCache(text, scene, blocks, T.shape[0], S.shape[0], z, a1, a2, m, pre is not None)
    return EmbeddingPair(s_scene=s_scene, s_text=s_text, match_prob=m), cache


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


def backward_pair(model: JointModel, cache: _PairCache, d_s_text, d_s_scene, d_m: float, grads):
    """Accumulate parameter gradients into ``grads``.

    Returns a dict of input gradients: ``text_nodes``, ``text_edges``,
    ``scene_nodes``, ``scene_edges``. When the forward pass used ``pre``, the
    node entries are gradients w.r.t. the first-block self-attention outputs
    and the edge entries omit the first block's contribution.
    """
    P = model.params
    dlogit = d_m * cache.m * (1.0 - cache.m)
    grads["head.W3"] += np.outer(cache.a2, [dlogit])
    grads["head.b3"] += dlogit
    da2 = P["head.W3"][:, 0] * dlogit * (cache.a2 > 0)
    grads["head.W2"] += np.outer(cache.a1, da2)
    grads["head.b2"] += da2
    da1 = (P["head.W2"] @ da2) * (cache.a1 > 0)
    grads["head.W1"] += np.outer(cache.z, da1)
    grads["head.b1"] += da1
    dz = P["head.W1"] @ da1
    d = model.config.dim
    dst = dz[:d] + (0.0 if d_s_text is None else d_s_text)
    dss = dz[d:] + (0.0 if d_s_scene is None else d_s_scene)
    dT = np.tile(dst / cache.n_text, (cache.n_text, 1))
    dS = np.tile(dss / cache.n_scene, (cache.n_scene, 1))

    text_edges = np.zeros_like(cache.text.edge_features)
    scene_edges = np.zeros_like(cache.scene.edge_features)
    for b in reversed(range(model.config.num_blocks)):
        tc, sc, c_ts, c_st = cache.blocks[b]
        prefix = f"blocks.{b}.cross."
        dT_a, dS_b = _attend_backward(P, grads, prefix, c_ts, dT)
        dS_a, dT_b = _attend_backward(P, grads, prefix, c_st, dS)
        dT = dT_a + dT_b
        dS = dS_a + dS_b
        if b == 0 and cache.pre:
            break
        dT, dTe = _self_backward(P, grads, tc, dT)
        dS, dSe = _self_backward(P, grads, sc, dS)
        text_edges += dTe
        scene_edges += dSe
    return {"text_nodes": dT, "text_edges": text_edges, "scene_nodes": dS, "scene_edges": scene_edges}


def embed_pair(model: JointModel, text: FeaturizedGraph, scene: FeaturizedGraph) -> EmbeddingPair:
    return forward_pair(model, text, scene)[0]


def node_states(model: JointModel, text: FeaturizedGraph, scene: FeaturizedGraph) -> Tuple[np.ndarray, np.ndarray]:
    """Node matrices after all blocks (before pooling); used for smoothing diagnostics."""
    P = model.params
    cfg = model.config
    T, S = text.node_features, scene.node_features
    for b in range(cfg.num_blocks):
        T, _ = _self_forward(P, f"blocks.{b}.self.", T, text.edge_index, text.edge_features, cfg.symmetric)
        S, _ = _self_forward(P, f"blocks.{b}.self.", S, scene.edge_index, scene.edge_features, cfg.symmetric)
        T, S = cross_attention(model, T, S, block=b)
    return T, S


# -- checkpoints --------------------------------------------------------------


def save_model(model: JointModel, path) -> None:
    cfg = model.config
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(_CONFIG_STRUCT.pack(cfg.dim, cfg.num_blocks, cfg.mlp_hidden,
                                     cfg.seed & 0xFFFFFFFFFFFFFFFF, int(cfg.symmetric)))
        for value in model.params.values():
            fh.write(np.ascontiguousarray(value, dtype="<f4").tobytes())


def load_model(path) -> JointModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MODEL_MAGIC:
        raise FormatError(f"{path}: not a model checkpoint (bad magic)")
    head = 8 + _CONFIG_STRUCT.size
    if len(blob) < head:
        raise FormatError(f"{path}: truncated header")
    dim, blocks, hidden, seed, symmetric = _CONFIG_STRUCT.unpack_from(blob, 8)
    try:
        cfg = ModelConfig(dim=dim, num_blocks=blocks, mlp_hidden=hidden, seed=seed, symmetric=bool(symmetric))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    shapes = param_shapes(cfg)
    expected = head + 4 * sum(int(np.prod(s)) for s in shapes.values())
    if len(blob) != expected:
        raise FormatError(f"{path}: size {len(blob)} does not match config (expected {expected})")
    params = OrderedDict()
    offset = head
    for name, shape in shapes.items():
        count = int(np.prod(shape))
        params[name] = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).astype(np.float64).reshape(shape)
        offset += 4 * count
    return JointModel(cfg, params)
