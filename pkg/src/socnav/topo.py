"""Topological memory graph and the instruction-conditioned waypoint scorer.

Nodes carry a static sector embedding, a human summary (mean of geometric +
semantic features of assigned humans), and their fusion. Scoring runs
instruction cross-attention, one round of distance-biased graph
self-attention, and a small FFN head; STOP is scored by the same head applied
to the current node's feature shifted by a learned stop embedding, so a
zero-initialized head yields a uniform distribution. The forward pass has a
matching hand-written backward used by policy training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from heapq import heappop, heappush

import numpy as np

from .util import fnv1a_64

STATIC_DIM = 64
HUMAN_DIM = 128
FUSED_DIM = 64
MERGE_RADIUS = 0.5   # m
VOCAB_SIZE = 1024
MAX_TOKENS = 40
EMBED_DIM = 64
_SCALE = math.sqrt(FUSED_DIM)
UNREACHABLE = 1e6    # geodesic placeholder for disconnected pairs


@dataclass
class TopoNode:
    node_id: int
    position: np.ndarray        # (2,) m world frame
    kind: str                   # "current", "candidate", or "visited"
    static: np.ndarray          # (64,)
    human_summary: np.ndarray   # (128,)
    fused: np.ndarray           # (64,)
    last_updated: int


@dataclass
class FusionParams:
    W1: np.ndarray  # (128, 192)
    b1: np.ndarray  # (128,)
    W2: np.ndarray  # (64, 128)
    b2: np.ndarray  # (64,)


@dataclass
class ScorerParams:
    Wq: np.ndarray      # (64, 64) shared by cross- and graph-attention
    Wk: np.ndarray
    Wv: np.ndarray
    alpha: np.ndarray   # (1,) geodesic bias scale
    ffn_W1: np.ndarray  # (64, 64)
    ffn_b1: np.ndarray  # (64,)
    ffn_w2: np.ndarray  # (64,)
    ffn_b2: np.ndarray  # (1,)
    stop: np.ndarray    # (64,)


@dataclass
class PolicyParams:
    embed: np.ndarray   # (1024, 64) instruction token table
    fusion: FusionParams
    scorer: ScorerParams


def init_policy(seed: int) -> PolicyParams:
    """Uniform +-1/sqrt(dim) init; the FFN output layer starts at zero so the
    initial action distribution is uniform."""
    gen = np.random.default_rng(seed)
    s64 = 1.0 / math.sqrt(64.0)
    u = gen.uniform
    return PolicyParams(
        embed=u(-s64, s64, (VOCAB_SIZE, EMBED_DIM)),
        fusion=FusionParams(
            W1=u(-1.0 / math.sqrt(192.0), 1.0 / math.sqrt(192.0), (128, 192)),
            b1=np.zeros(128),
            W2=u(-1.0 / math.sqrt(128.0), 1.0 / math.sqrt(128.0), (64, 128)),
            b2=np.zeros(64)),
        scorer=ScorerParams(
            Wq=u(-s64, s64, (64, 64)),
            Wk=u(-s64, s64, (64, 64)),
            Wv=u(-s64, s64, (64, 64)),
            alpha=np.array([0.5]),
            ffn_W1=u(-s64, s64, (64, 64)),
            ffn_b1=np.zeros(64),
            ffn_w2=np.zeros(64),
            ffn_b2=np.zeros(1),
            stop=u(-s64, s64, 64)))


@dataclass(frozen=True)
class InstructionTokens:
    ids: tuple

    @classmethod
    def from_text(cls, text: str) -> "InstructionTokens":
        import re
        toks = re.findall(r"[a-z0-9]+", text.lower())[:MAX_TOKENS]
        ids = tuple(fnv1a_64(t) % VOCAB_SIZE for t in toks)
        if not ids:
            ids = (0,)
        return cls(ids=ids)


# ---------------------------------------------------------------------------
# fusion


def fuse_summary(static: np.ndarray, summary: np.ndarray, p: FusionParams) -> np.ndarray:
    x = np.concatenate([static, summary])
    z1 = p.W1 @ x + p.b1
    return p.W2 @ np.maximum(z1, 0.0) + p.b2


def fuse(static: np.ndarray, humans, p: FusionParams) -> np.ndarray:
    """Fused node feature from the static embedding and per-human features.

    humans is a list of 128-d vectors in ascending human-id order; the empty
    list contributes a zero summary.
    """
    if humans:
        summary = np.mean(np.stack(humans), axis=0)
    else:
        summary = np.zeros(HUMAN_DIM)
    return fuse_summary(static, summary, p)


# ---------------------------------------------------------------------------
# graph


class TopoGraph:
    def __init__(self):
        self.nodes: dict[int, TopoNode] = {}
        self.edges: dict[tuple, float] = {}
        self._adj: dict[int, list] = {}
        self.current_id: int | None = None
        self._next_id = 0

    def add_node(self, position, kind: str, static, step: int) -> TopoNode:
        node = TopoNode(
            node_id=self._next_id,
            position=np.asarray(position, dtype=float).copy(),
            kind=kind,
            static=np.asarray(static, dtype=float).copy(),
            human_summary=np.zeros(HUMAN_DIM),
            fused=np.zeros(FUSED_DIM),
            last_updated=step)
        self.nodes[node.node_id] = node
        self._adj[node.node_id] = []
        self._next_id += 1
        return node

    def add_edge(self, a: int, b: int) -> None:
        if a == b:
            raise ValueError("self edge")
        key = (a, b) if a < b else (b, a)
        if key not in self.edges:
            length = float(np.linalg.norm(
                self.nodes[a].position - self.nodes[b].position))
            if length <= 0.0:
                raise ValueError(f"zero-length edge {key}")
            self.edges[key] = length
            self._adj[a].append((b, length))
            self._adj[b].append((a, length))

    def set_current(self, node_id: int) -> None:
        """Move the agent's anchor; the departed node becomes visited."""
        if self.current_id is not None and self.current_id != node_id:
            self.nodes[self.current_id].kind = "visited"
        self.nodes[node_id].kind = "current"
        self.current_id = node_id

    def neighbors(self, node_id: int):
        return list(self._adj[node_id])

    def geodesics_from(self, source: int) -> dict:
        dist = {source: 0.0}
        heap = [(0.0, source)]
        while heap:
            d, nid = heappop(heap)
            if d > dist.get(nid, math.inf):
                continue
            for other, length in self._adj[nid]:
                nd = d + length
                if nd < dist.get(other, math.inf):
                    dist[other] = nd
                    heappush(heap, (nd, other))
        return dist

    def geodesic_matrix(self, node_ids) -> np.ndarray:
        """All-pairs geodesics over the requested nodes (graph edge lengths)."""
        from scipy.sparse import csr_matrix
        from scipy.sparse.csgraph import dijkstra as _dijkstra
        all_ids = sorted(self.nodes)
        pos = {nid: i for i, nid in enumerate(all_ids)}
        n = len(all_ids)
        if self.edges:
            keys = list(self.edges)
            rows = np.array([pos[a] for a, _ in keys], dtype=int)
            cols = np.array([pos[b] for _, b in keys], dtype=int)
            data = np.array([self.edges[k] for k in keys])
            adj = csr_matrix((data, (rows, cols)), shape=(n, n))
        else:
            adj = csr_matrix((n, n))
        want = np.array([pos[nid] for nid in node_ids], dtype=int)
        full = _dijkstra(adj, directed=False, indices=want)
        out = full[:, want]
        out[~np.isfinite(out)] = UNREACHABLE
        return out

    def positions_of(self, node_ids) -> np.ndarray:
        return np.stack([self.nodes[n].position for n in node_ids])

    def nearest_node(self, position, radius: float, node_ids=None):
        """Closest node within radius; ties broken by lower node id."""
        ids = sorted(self.nodes) if node_ids is None else list(node_ids)
        if not ids:
            return None
        pts = self.positions_of(ids)
        d = np.linalg.norm(pts - np.asarray(position, dtype=float)[None, :], axis=1)
        within = d <= radius
        if not within.any():
            return None
        # argmin on (distance, id) pairs keeps the tie-break deterministic
        best = min((float(d[i]), ids[i]) for i in np.flatnonzero(within))
        return self.nodes[best[1]]


def _refresh_fused(node: TopoNode, fusion: FusionParams) -> None:
    node.fused = fuse_summary(node.static, node.human_summary, fusion)


def update_graph(graph: TopoGraph, pose, candidates, static_feats,
                 current_static, fusion: FusionParams, step: int) -> list:
    """Fold the current pose and proposed waypoints into the graph.

    Proposals within 0.5 m of an existing node merge into it (features
    refreshed, position kept); new positions become candidate nodes. Every
    active candidate gets an edge to the current node. Returns the active
    candidate node ids, sector order. Re-running with identical inputs leaves
    the graph unchanged.
    """
    pos = np.asarray(pose[:2], dtype=float)
    if graph.current_id is None:
        node = graph.add_node(pos, "current", current_static, step)
        graph.current_id = node.node_id
    else:
        cur = graph.nodes[graph.current_id]
        if float(np.linalg.norm(cur.position - pos)) > MERGE_RADIUS:
            # arriving near a known node re-anchors there instead of
            # spawning a duplicate on top of it
            node = graph.nearest_node(pos, MERGE_RADIUS)
            if node is None:
                node = graph.add_node(pos, "candidate", current_static, step)
            prev = cur.node_id
            graph.set_current(node.node_id)
            graph.add_edge(prev, node.node_id)
    cur = graph.nodes[graph.current_id]
    cur.static = np.asarray(current_static, dtype=float).copy()
    cur.last_updated = step
    _refresh_fused(cur, fusion)

    active = []
    for cand, feat in zip(candidates, static_feats):
        node = graph.nearest_node(cand.position, MERGE_RADIUS)
        if node is None:
            node = graph.add_node(cand.position, "candidate", feat, step)
        elif node.node_id != cur.node_id:
            # merged proposals refresh the node; the current node keeps the
            # feature just taken from the agent's own observation
            node.static = np.asarray(feat, dtype=float).copy()
            node.last_updated = step
        if node.node_id != cur.node_id:
            graph.add_edge(cur.node_id, node.node_id)
        _refresh_fused(node, fusion)
        if node.node_id not in active and node.node_id != cur.node_id:
            active.append(node.node_id)
    return active


def assign_humans(graph: TopoGraph, humans, fusion: FusionParams,
                  node_ids=None) -> dict:
    """Attach humans to their nearest candidate-or-current node.

    humans: list of (human_id, world position, geo 128, sem 128), processed
    in ascending human id. Each touched node's summary becomes the mean of
    geo + sem over its assigned humans (ascending id order); untouched nodes
    keep their previous summaries. Returns node_id -> [human ids].
    """
    if node_ids is None:
        node_ids = [nid for nid, n in sorted(graph.nodes.items())
                    if n.kind in ("current", "candidate")]
    groups: dict[int, list] = {}
    assignment: dict[int, list] = {}
    for hid, wpos, geo, sem in sorted(humans, key=lambda h: h[0]):
        node = graph.nearest_node(wpos, math.inf, node_ids)
        if node is None:
            continue
        groups.setdefault(node.node_id, []).append(geo + sem)
        assignment.setdefault(node.node_id, []).append(hid)
    for nid, feats in groups.items():
        node = graph.nodes[nid]
        node.human_summary = np.mean(np.stack(feats), axis=0)
        _refresh_fused(node, fusion)
    return assignment


# ---------------------------------------------------------------------------
# scorer


@dataclass
class PolicyInputs:
    static: np.ndarray     # (N, 64)
    summary: np.ndarray    # (N, 128)
    dist: np.ndarray       # (N, N) geodesic
    cand_idx: np.ndarray   # (K,) rows that receive logits, scored order
    cur_idx: int
    token_ids: tuple


def _softmax_rows(s: np.ndarray) -> np.ndarray:
    z = s - s.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def policy_forward(inputs: PolicyInputs, params: PolicyParams):
    """Probabilities over candidates + STOP, plus the cache for backward."""
    sc = params.scorer
    xs = np.concatenate([inputs.static, inputs.summary], axis=1)   # (N, 192)
    z1 = xs @ params.fusion.W1.T + params.fusion.b1
    r1 = np.maximum(z1, 0.0)
    F = r1 @ params.fusion.W2.T + params.fusion.b2                  # (N, 64)

    E = params.embed[list(inputs.token_ids)]                        # (L, 64)
    Q = F @ sc.Wq.T
    K = E @ sc.Wk.T
    V = E @ sc.Wv.T
    S = Q @ K.T / _SCALE
    A = _softmax_rows(S)
    U = A @ V                                                       # (N, 64)

    Q2 = U @ sc.Wq.T
    K2 = U @ sc.Wk.T
    V2 = U @ sc.Wv.T
    S2 = Q2 @ K2.T / _SCALE - sc.alpha[0] * inputs.dist
    B2 = _softmax_rows(S2)
    G = B2 @ V2                                                     # (N, 64)

    cand_feats = G[inputs.cand_idx]
    stop_feat = G[inputs.cur_idx] + sc.stop
    H = np.vstack([cand_feats, stop_feat[None, :]])                 # (K+1, 64)
    Zpre = H @ sc.ffn_W1.T + sc.ffn_b1
    Z = np.maximum(Zpre, 0.0)
    logits = Z @ sc.ffn_w2 + sc.ffn_b2[0]
    probs = _softmax_rows(logits[None, :])[0]
    cache = (inputs, xs, z1, F, E, Q, K, V, A, U, Q2, K2, V2, B2, G, H, Zpre, Z,
             logits)
    return probs, cache


def policy_backward(cache, dlogits: np.ndarray, params: PolicyParams) -> PolicyParams:
    """Gradients of a scalar loss given d(loss)/d(logits)."""
    (inputs, xs, z1, F, E, Q, K, V, A, U, Q2, K2, V2, B2, G, H, Zpre, Z,
     _logits) = cache
    sc = params.scorer
    g = PolicyParams(
        embed=np.zeros_like(params.embed),
        fusion=FusionParams(*(np.zeros_like(a) for a in
                              (params.fusion.W1, params.fusion.b1,
                               params.fusion.W2, params.fusion.b2))),
        scorer=ScorerParams(*(np.zeros_like(a) for a in
                              (sc.Wq, sc.Wk, sc.Wv, sc.alpha, sc.ffn_W1,
                               sc.ffn_b1, sc.ffn_w2, sc.ffn_b2, sc.stop))))

    g.scorer.ffn_b2[0] = dlogits.sum()
    g.scorer.ffn_w2 += Z.T @ dlogits
    dZ = np.outer(dlogits, sc.ffn_w2)
    dZpre = dZ * (Zpre > 0.0)
    g.scorer.ffn_W1 += dZpre.T @ H
    g.scorer.ffn_b1 += dZpre.sum(axis=0)
    dH = dZpre @ sc.ffn_W1

    K_c = len(inputs.cand_idx)
    dG = np.zeros_like(G)
    for row, idx in enumerate(inputs.cand_idx):
        dG[idx] += dH[row]
    dG[inputs.cur_idx] += dH[K_c]
    g.scorer.stop += dH[K_c]

    # graph self-attention
    dB2 = dG @ V2.T
    dV2 = B2.T @ dG
    dS2 = B2 * (dB2 - np.sum(dB2 * B2, axis=1, keepdims=True))
    g.scorer.alpha[0] = -float(np.sum(dS2 * inputs.dist))
    dQ2 = dS2 @ K2 / _SCALE
    dK2 = dS2.T @ Q2 / _SCALE
    g.scorer.Wq += dQ2.T @ U
    g.scorer.Wk += dK2.T @ U
    g.scorer.Wv += dV2.T @ U
    dU = dQ2 @ sc.Wq + dK2 @ sc.Wk + dV2 @ sc.Wv

    # instruction cross-attention
    dA = dU @ V.T
    dV = A.T @ dU
    dS = A * (dA - np.sum(dA * A, axis=1, keepdims=True))
    dQ = dS @ K / _SCALE
    dK = dS.T @ Q / _SCALE
    g.scorer.Wq += dQ.T @ F
    g.scorer.Wk += dK.T @ E
    g.scorer.Wv += dV.T @ E
    dF = dQ @ sc.Wq
    dE = dK @ sc.Wk + dV @ sc.Wv
    for row, tok in enumerate(inputs.token_ids):
        g.embed[tok] += dE[row]

    # fusion perceptron
    dR = dF @ params.fusion.W2
    g.fusion.W2 += dF.T @ np.maximum(z1, 0.0)
    g.fusion.b2 += dF.sum(axis=0)
    dZ1 = dR * (z1 > 0.0)
    g.fusion.W1 += dZ1.T @ xs
    g.fusion.b1 += dZ1.sum(axis=0)
    return g


def graph_inputs(graph: TopoGraph, active_ids, tokens: InstructionTokens) -> PolicyInputs:
    """Assemble scorer inputs from the live graph (sorted node order)."""
    node_ids = sorted(graph.nodes)
    index = {nid: i for i, nid in enumerate(node_ids)}
    static = np.stack([graph.nodes[n].static for n in node_ids])
    summary = np.stack([graph.nodes[n].human_summary for n in node_ids])
    dist = graph.geodesic_matrix(node_ids)
    cand_idx = np.array([index[n] for n in active_ids], dtype=int)
    return PolicyInputs(
        static=static, summary=summary, dist=dist, cand_idx=cand_idx,
        cur_idx=index[graph.current_id], token_ids=tokens.ids)


def score(graph: TopoGraph, active_ids, tokens: InstructionTokens,
          params: PolicyParams):
    """Distribution over active candidates + STOP.

    Returns (probs, actions) where actions lists the candidate node ids
    followed by the "stop" sentinel; probs aligns with it and sums to 1.
    """
    inputs = graph_inputs(graph, active_ids, tokens)
    probs, _ = policy_forward(inputs, params)
    actions = list(active_ids) + ["stop"]
    return probs, actions


def graph_snapshot(graph: TopoGraph) -> dict:
    """JSON-ready view of the graph (positions, kinds, feature norms)."""
    return {
        "current": graph.current_id,
        "nodes": [{
            "id": nid,
            "position": [round(float(v), 9) for v in node.position],
            "kind": node.kind,
            "static_norm": round(float(np.linalg.norm(node.static)), 9),
            "summary_norm": round(float(np.linalg.norm(node.human_summary)), 9),
            "fused_norm": round(float(np.linalg.norm(node.fused)), 9),
            "last_updated": node.last_updated,
        } for nid, node in sorted(graph.nodes.items())],
        "edges": [[a, b, round(float(length), 9)]
                  for (a, b), length in sorted(graph.edges.items())],
    }
