"""Slow, independent reference implementations used as test oracles.

Nothing here imports the package's numerical code; loops are written out
element by element so that a bug would have to be made twice to go unseen.
"""

import math
import struct

import numpy as np


# -- geometry -----------------------------------------------------------------


def sampled_box_distance(amin, amax, bmin, bmax, steps=21):
    """Minimum distance over a grid of points on the surfaces of two boxes."""

    def surface(lo, hi):
        axes = [np.linspace(lo[k], hi[k], steps) for k in range(3)]
        pts = []
        for k in range(3):
            for face in (lo[k], hi[k]):
                others = [axes[j] for j in range(3) if j != k]
                g0, g1 = np.meshgrid(*others, indexing="ij")
                block = np.empty((g0.size, 3))
                block[:, k] = face
                rest = [j for j in range(3) if j != k]
                block[:, rest[0]] = g0.ravel()
                block[:, rest[1]] = g1.ravel()
                pts.append(block)
        return np.vstack(pts)

    pa, pb = surface(amin, amax), surface(bmin, bmax)
    best = math.inf
    for p in pa:
        best = min(best, float(np.sqrt(((pb - p) ** 2).sum(axis=1)).min()))
    return best


def center_gap_distance(amin, amax, bmin, bmax):
    """Box distance from centres and half-extents: per-axis gap = |dc| - (ha + hb)."""
    total = 0.0
    for k in range(3):
        ca, cb = (amin[k] + amax[k]) / 2, (bmin[k] + bmax[k]) / 2
        ha, hb = (amax[k] - amin[k]) / 2, (bmax[k] - bmin[k]) / 2
        gap = abs(ca - cb) - (ha + hb)
        if gap > 0:
            total += gap * gap
    return math.sqrt(total)


def filter_oracle(doc, tau):
    """Triples kept by the edge filter, computed straight from a JSON document."""
    boxes = {o["id"]: o.get("bbox") for o in doc["objects"]}
    kept = set()
    for s, r, t in doc["relations"]:
        a, b = boxes[s], boxes[t]
        if a is None or b is None:
            continue
        if center_gap_distance(a["min"], a["max"], b["min"], b["max"]) <= tau:
            kept.add((s, r, t))
    return kept


def relation_recheck(boxes):
    """Independent statement of the synthetic relation rules.

    boxes: list of (min, max) tuples. Returns a set of (i, relation, j).
    """
    eps = 1e-9
    out = set()
    n = len(boxes)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            (a0, a1), (b0, b1) = boxes[i], boxes[j]
            shared_x = a0[0] < b1[0] and b0[0] < a1[0]
            shared_y = a0[1] < b1[1] and b0[1] < a1[1]
            if shared_x and shared_y:
                lift = a0[2] - b1[2]
                if abs(lift) <= eps:
                    out.add((i, "on", j))
                    out.add((j, "under", i))
                elif 0 < lift <= 1.5:
                    out.add((i, "above", j))
                continue
            dist = center_gap_distance(a0, a1, b0, b1)
            if dist <= 0.5:
                out.add((min(i, j), "next to", max(i, j)))
            elif dist <= 1.5:
                gaps = [max(0.0, b0[k] - a1[k], a0[k] - b1[k]) for k in range(2)]
                ca = [(a0[k] + a1[k]) / 2 for k in range(2)]
                cb = [(b0[k] + b1[k]) / 2 for k in range(2)]
                if gaps[0] >= gaps[1]:
                    out.add((i, "to the left of" if ca[0] < cb[0] else "to the right of", j))
                else:
                    out.add((i, "in front of" if ca[1] < cb[1] else "behind", j))
    return out


# -- word vectors -------------------------------------------------------------


def read_vector_lines(path):
    """Token -> list of floats, reading the file one line at a time."""
    table = {}
    with open(path, encoding="utf-8") as fh:
        fh.readline()
        for line in fh:
            bits = line.split()
            if bits:
                table[bits[0]] = [float(x) for x in bits[1:]]
    return table


def naive_featurize(lookup, doc, dim):
    """Node rows and edge rows from a graph document with scalar loops."""
    rows = []
    for obj in doc["objects"]:
        label = lookup(obj["label"])
        attrs = obj.get("attributes", [])
        row = []
        for c in range(dim):
            value = label[c]
            if attrs:
                value += sum(lookup(a)[c] for a in attrs) / len(attrs)
            row.append(value)
        rows.append(row)
    edges = [list(lookup(r)) for _, r, _ in doc["relations"]]
    return rows, edges


# -- network ------------------------------------------------------------------


def _vecmat(x, W):
    rows, cols = len(W), len(W[0])
    return [sum(x[r] * W[r][c] for r in range(rows)) for c in range(cols)]


def _add(a, b):
    return [x + y for x, y in zip(a, b)]


def _dot(a, b):
    return sum(x * y for x, y in zip(a, b))


def loop_self_attention(P, prefix, H, edge_index, edge_feats, symmetric=False):
    """Per-node attention over in-neighbours plus an implicit self-edge with a zero edge feature."""
    H = [list(map(float, h)) for h in H]
    n, d = len(H), len(H[0])
    W = {k: np.asarray(P[prefix + k]).tolist() for k in ("Wq", "Wk", "Wv", "We")}
    b = {k: np.asarray(P[prefix + k]).tolist() for k in ("bq", "bk", "bv")}
    incoming = {i: [(i, [0.0] * d)] for i in range(n)}
    for (s, t), e in zip(np.asarray(edge_index).tolist(), np.asarray(edge_feats).tolist()):
        incoming[t].append((s, e))
        if symmetric:
            incoming[s].append((t, e))
    out = []
    for i in range(n):
        q = _add(_vecmat(H[i], W["Wq"]), b["bq"])
        logits, values = [], []
        for j, e in incoming[i]:
            ee = _vecmat(e, W["We"])
            k = _add(_add(_vecmat(H[j], W["Wk"]), b["bk"]), ee)
            v = _add(_add(_vecmat(H[j], W["Wv"]), b["bv"]), ee)
            logits.append(_dot(q, k) / math.sqrt(d))
            values.append(v)
        top = max(logits)
        weights = [math.exp(s - top) for s in logits]
        z = sum(weights)
        row = list(H[i])
        for w, v in zip(weights, values):
            for c in range(d):
                row[c] += w / z * v[c]
        out.append(row)
    return np.array(out)


def loop_cross_attention(P, prefix, A, B):
    """Each row of A attends over every row of B (dense bipartite)."""
    A = [list(map(float, a)) for a in A]
    B = [list(map(float, x)) for x in B]
    d = len(A[0])
    W = {k: np.asarray(P[prefix + k]).tolist() for k in ("Wq", "Wk", "Wv")}
    b = {k: np.asarray(P[prefix + k]).tolist() for k in ("bq", "bk", "bv")}
    out = []
    for a in A:
        q = _add(_vecmat(a, W["Wq"]), b["bq"])
        logits = [_dot(q, _add(_vecmat(x, W["Wk"]), b["bk"])) / math.sqrt(d) for x in B]
        top = max(logits)
        weights = [math.exp(s - top) for s in logits]
        z = sum(weights)
        row = list(a)
        for w, x in zip(weights, B):
            v = _add(_vecmat(x, W["Wv"]), b["bv"])
            for c in range(d):
                row[c] += w / z * v[c]
        out.append(row)
    return np.array(out)


def loop_forward(P, num_blocks, text, scene, symmetric=False):
    """(s_text, s_scene, m) for one pair, built from the loop primitives."""
    T, S = text.node_features, scene.node_features
    for blk in range(num_blocks):
        pre = f"blocks.{blk}.self."
        T = loop_self_attention(P, pre, T, text.edge_index, text.edge_features, symmetric)
        S = loop_self_attention(P, pre, S, scene.edge_index, scene.edge_features, symmetric)
        cp = f"blocks.{blk}.cross."
        T, S = loop_cross_attention(P, cp, T, S), loop_cross_attention(P, cp, S, T)
    s_text = T.mean(axis=0)
    s_scene = S.mean(axis=0)
    z = list(s_text) + list(s_scene)
    h1 = [max(0.0, v) for v in _add(_vecmat(z, P["head.W1"].tolist()), P["head.b1"].tolist())]
    h2 = [max(0.0, v) for v in _add(_vecmat(h1, P["head.W2"].tolist()), P["head.b2"].tolist())]
    logit = _vecmat(h2, P["head.W3"].tolist())[0] + float(P["head.b3"][0])
    return s_text, s_scene, 1.0 / (1.0 + math.exp(-logit))


# -- losses -------------------------------------------------------------------


def _row_log_softmax(row, j):
    top = max(row)
    return row[j] - top - math.log(sum(math.exp(v - top) for v in row))


def naive_loss_cossim(cos, w):
    B = len(cos)
    total = 0.0
    for i in range(B):
        x = [1.0 - cos[i][k] for k in range(B)]
        for j in range(B):
            total += w[i][j] * _row_log_softmax(x, j)
    return -total / (B * B)


def naive_loss_match(m, y):
    B = len(m)
    total = 0.0
    for i in range(B):
        for j in range(B):
            total += y[i][j] * _row_log_softmax(list(m[i]), j)
    return -total / (B * B)


def naive_cosine(a, b):
    return _dot(a, b) / math.sqrt(_dot(a, a) * _dot(b, b))


# -- optimizer / formats ------------------------------------------------------


def adam_scalar(p, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Run Adam on one scalar for a sequence of gradients."""
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
    return p


def store_size(dim, fixed_id, ids):
    """Byte size of an embedding store file from its documented layout."""
    header = 8 + 4 + 4 + 8 + 2 + len(fixed_id.encode("utf-8"))
    return header + sum(2 + len(s.encode("utf-8")) for s in ids) + len(ids) * dim * 4


def parse_store(blob):
    """Hand-rolled reader for the store layout, returns (dim, fixed_id, {id: floats})."""
    assert blob[:8] == b"T2SGEMB1"
    version, dim, count = struct.unpack("<IIQ", blob[8:24])
    assert version == 1
    pos = 24
    (n,) = struct.unpack("<H", blob[pos:pos + 2])
    fixed = blob[pos + 2:pos + 2 + n].decode()
    pos += 2 + n
    rows = {}
    for _ in range(count):
        (n,) = struct.unpack("<H", blob[pos:pos + 2])
        sid = blob[pos + 2:pos + 2 + n].decode()
        pos += 2 + n
        rows[sid] = struct.unpack(f"<{dim}f", blob[pos:pos + 4 * dim])
        pos += 4 * dim
    assert pos == len(blob)
    return dim, fixed, rows
