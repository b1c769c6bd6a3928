"""Relation-aware graph self-attention embeddings trained by link prediction,
plus the one-hot path-feature baseline.

For a target node ``i`` with neighbour tuples ``(h_j, r_ij)``::

    h_j'  = W_a [h_j ; r_ij]
    h_j'' = tanh(W_b [h_i ; h_j'])
    e_ij  = a . h_j''
    alpha = softmax_j(e_ij)
    h_i'  = tanh(W_c LayerNorm(sum_j alpha_ij [h_i ; h_j'']))

A linear classifier over ``[h_i' ; h_j']`` predicts one of ``S`` relations or
"no relation" (class ``S``), trained with the focal loss.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import checkpoint
from .errors import DataError, DimensionError, TrainingError
from .kernel import (
    FocalLossConfig,
    LayerNormCache,
    ParamSet,
    SGD,
    class_weights,
    focal_loss,
    layer_norm_backward,
    layer_norm_forward,
    softmax,
    softmax_backward,
)
from .kg import KnowledgeGraph

log = logging.getLogger(__name__)

GAT_PARAMS = ("gat.W_a", "gat.self_rel", "gat.W_b", "gat.W_c", "gat.a", "gat.ln_g", "gat.ln_b")


@dataclass
class EmbedConfig:
    F: int = 16
    epochs: int = 200
    lr: float = 0.2
    negatives_per_positive: int = 1
    seed: int = 0
    lam: float = 2.0
    init_scale: float = 0.1


class EmbeddingModel:
    """Node table, attention-layer weights and link classifier.

    ``gat.self_rel`` is the column of ``W_a`` for the synthetic self-loop
    relation used by isolated nodes; it is kept apart so ``gat.W_a`` retains
    its ``F x (F+S)`` shape and the classifier still sees ``S + 1`` classes.
    """

    def __init__(self, num_nodes: int, num_relations: int, F: int, seed: int = 0, init_scale: float = 0.1):
        if F <= 0:
            raise DimensionError("embedding size F must be positive")
        self.N, self.S, self.F, self.seed = num_nodes, num_relations, F, seed
        rng = np.random.default_rng(seed)
        u = lambda *shape: rng.uniform(-init_scale, init_scale, shape)  # noqa: E731
        self.params = ParamSet()
        self.params.add("node_table", u(num_nodes, F))
        self.params.add("gat.W_a", u(F, F + num_relations))
        self.params.add("gat.self_rel", u(F))
        self.params.add("gat.W_b", u(F, 2 * F))
        self.params.add("gat.W_c", u(F, 2 * F))
        self.params.add("gat.a", u(1, F))
        self.params.add("gat.ln_g", np.ones(2 * F))
        self.params.add("gat.ln_b", np.zeros(2 * F))
        self.params.add("link_classifier", u(num_relations + 1, 2 * F))
        self.graph: KnowledgeGraph | None = None

    @property
    def hyper(self):
        return {"F": self.F, "S": self.S, "N": self.N, "seed": self.seed}

    def bind(self, graph: KnowledgeGraph) -> "EmbeddingModel":
        if graph.num_entities != self.N or graph.num_relations != self.S:
            raise DimensionError(
                f"model built for N={self.N}, S={self.S}; graph has "
                f"N={graph.num_entities}, S={graph.num_relations}"
            )
        self.graph = graph
        return self


# ---------------------------------------------------------------------------
# single-step operations
# ---------------------------------------------------------------------------


def relation_embed(h_j, r_ij, params: ParamSet) -> np.ndarray:
    W_a = params.v("gat.W_a")
    x = np.concatenate([np.asarray(h_j, float), np.asarray(r_ij, float)])
    if x.shape[0] != W_a.shape[1]:
        raise DimensionError(f"[h_j; r_ij] has length {x.shape[0]}, W_a expects {W_a.shape[1]}")
    return W_a @ x


def pair_combine(h_i, h_j_prime, params: ParamSet) -> np.ndarray:
    W_b = params.v("gat.W_b")
    x = np.concatenate([np.asarray(h_i, float), np.asarray(h_j_prime, float)])
    if x.shape[0] != W_b.shape[1]:
        raise DimensionError(f"[h_i; h_j'] has length {x.shape[0]}, W_b expects {W_b.shape[1]}")
    return np.tanh(W_b @ x)


@dataclass
class AttendCache:
    h_i: np.ndarray
    nb: np.ndarray | None  # neighbour node ids, None for the self-loop case
    x: np.ndarray  # rows [h_j ; r_ij]
    hp: np.ndarray
    hpp: np.ndarray
    alpha: np.ndarray
    ln: LayerNormCache
    z: np.ndarray
    out: np.ndarray


def _attend_rows(h_i, X, params: ParamSet, self_loop: bool):
    """Attention over prepared neighbour rows ``X`` (n x (F+S))."""
    p = params.v
    F = h_i.shape[0]
    W_a = p("gat.W_a")
    if self_loop:
        hp = (W_a[:, :F] @ h_i + p("gat.self_rel"))[None, :]
    else:
        hp = X @ W_a.T
    U = np.concatenate([np.broadcast_to(h_i, hp.shape), hp], axis=1)
    hpp = np.tanh(U @ p("gat.W_b").T)
    e = hpp @ p("gat.a")[0]
    alpha = softmax(e)
    c = np.concatenate([alpha.sum() * h_i, alpha @ hpp])
    z, ln = layer_norm_forward(c, p("gat.ln_g"), p("gat.ln_b"))
    out = np.tanh(p("gat.W_c") @ z)
    return out, AttendCache(h_i, None, X, hp, hpp, alpha, ln, z, out)


def attend(h_i, neighbours, params: ParamSet):
    """Attention step for one node given ``(h_j, r_ij)`` tuples.

    With no neighbours the node attends to itself through the reserved self
    relation.  Returns ``(h_i', alphas)``.
    """
    h_i = np.asarray(h_i, float)
    if len(neighbours) == 0:
        out, cache = _attend_rows(h_i, None, params, self_loop=True)
    else:
        X = np.stack([np.concatenate([np.asarray(h, float), np.asarray(r, float)]) for h, r in neighbours])
        out, cache = _attend_rows(h_i, X, params, self_loop=False)
    return out, cache.alpha


def _attend_backward(d_out, cache: AttendCache, params: ParamSet, self_loop: bool):
    """Accumulate GAT parameter gradients; return (d h_i, d neighbour rows h_j)."""
    p, g = params.v, params.g
    F = cache.h_i.shape[0]
    dpre = d_out * (1.0 - cache.out**2)
    g("gat.W_c")[...] += np.outer(dpre, cache.z)
    dz = p("gat.W_c").T @ dpre
    dc, dlg, dlb = layer_norm_backward(dz, cache.ln)
    g("gat.ln_g")[...] += dlg
    g("gat.ln_b")[...] += dlb

    alpha, hpp = cache.alpha, cache.hpp
    dh_i = alpha.sum() * dc[:F]
    dalpha = hpp @ dc[F:] + cache.h_i @ dc[:F]
    dhpp = np.outer(alpha, dc[F:])
    de = softmax_backward(alpha, dalpha)
    g("gat.a")[0] += de @ hpp
    dhpp += np.outer(de, p("gat.a")[0])
    du = dhpp * (1.0 - hpp**2)
    U = np.concatenate([np.broadcast_to(cache.h_i, cache.hp.shape), cache.hp], axis=1)
    g("gat.W_b")[...] += du.T @ U
    dU = du @ p("gat.W_b")
    dh_i += dU[:, :F].sum(axis=0)
    dhp = dU[:, F:]
    W_a = p("gat.W_a")
    if self_loop:
        g("gat.W_a")[:, :F] += np.outer(dhp[0], cache.h_i)
        g("gat.self_rel")[...] += dhp[0]
        dh_i += W_a[:, :F].T @ dhp[0]
        return dh_i, None
    g("gat.W_a")[...] += dhp.T @ cache.x
    dh_j = dhp @ W_a[:, :F]
    return dh_i, dh_j


# ---------------------------------------------------------------------------
# whole-graph forward / loss
# ---------------------------------------------------------------------------


class _Adjacency:
    """Per-node neighbour ids and relation one-hots, precomputed once per graph."""

    def __init__(self, graph: KnowledgeGraph):
        S = graph.num_relations
        self.nodes = []
        self.onehots = []
        for i in range(graph.num_entities):
            nbs = graph.neighbors(i)
            self.nodes.append(np.array([nb.node for nb in nbs], dtype=np.int64))
            oh = np.zeros((len(nbs), S))
            for row, nb in enumerate(nbs):
                oh[row, nb.relation] = 1.0
            self.onehots.append(oh)


def _adjacency(model: EmbeddingModel, graph: KnowledgeGraph) -> _Adjacency:
    cached = getattr(graph, "_embed_adjacency", None)
    if cached is None:
        cached = _Adjacency(graph)
        graph._embed_adjacency = cached
    return cached


def forward_nodes(model: EmbeddingModel, graph: KnowledgeGraph, nodes=None):
    """Post-attention embeddings for ``nodes`` (default: all); returns (array, caches)."""
    adj = _adjacency(model, graph)
    H = model.params.v("node_table")
    nodes = range(graph.num_entities) if nodes is None else nodes
    outs, caches = [], []
    for i in nodes:
        nb = adj.nodes[i]
        if nb.size == 0:
            out, cache = _attend_rows(H[i], None, model.params, self_loop=True)
        else:
            X = np.concatenate([H[nb], adj.onehots[i]], axis=1)
            out, cache = _attend_rows(H[i], X, model.params, self_loop=False)
            cache.nb = nb
        outs.append(out)
        caches.append(cache)
    return np.array(outs).reshape(len(outs), model.F), caches


def backward_nodes(model: EmbeddingModel, d_out: np.ndarray, caches, nodes=None):
    g_table = model.params.g("node_table")
    nodes = range(len(caches)) if nodes is None else nodes
    for row, (i, cache) in enumerate(zip(nodes, caches)):
        if not np.any(d_out[row]):
            continue
        self_loop = cache.nb is None
        dh_i, dh_j = _attend_backward(d_out[row], cache, model.params, self_loop)
        g_table[i] += dh_i
        if dh_j is not None:
            np.add.at(g_table, cache.nb, dh_j)


def predict_relation(h_i, h_j, model: EmbeddingModel) -> np.ndarray:
    x = np.concatenate([np.asarray(h_i, float), np.asarray(h_j, float)])
    return softmax(model.params.v("link_classifier") @ x)


def link_loss(model: EmbeddingModel, graph: KnowledgeGraph, examples: np.ndarray, focal: FocalLossConfig):
    """Mean focal loss over ``examples`` rows ``(head, tail, label)``; accumulates gradients."""
    if len(examples) == 0:
        return 0.0
    H, caches = forward_nodes(model, graph)
    Wl = model.params.v("link_classifier")
    heads, tails, labels = examples[:, 0], examples[:, 1], examples[:, 2]
    X = np.concatenate([H[heads], H[tails]], axis=1)
    probs = softmax(X @ Wl.T)
    m = len(examples)
    total = 0.0
    dlogits = np.empty_like(probs)
    for row in range(m):
        loss, grad = focal_loss(probs[row], int(labels[row]), focal)
        total += loss
        dlogits[row] = grad
    dlogits /= m
    model.params.g("link_classifier")[...] += dlogits.T @ X
    dX = dlogits @ Wl
    F = model.F
    dH = np.zeros_like(H)
    np.add.at(dH, heads, dX[:, :F])
    np.add.at(dH, tails, dX[:, F:])
    backward_nodes(model, dH, caches)
    return total / m


def sample_negatives(graph: KnowledgeGraph, count: int, rng: np.random.Generator, exclude=None) -> list[tuple]:
    """Uniformly sampled ordered pairs (i, j), i != j, with no triple i -> j."""
    n = graph.num_entities
    linked = {(t.head, t.tail) for t in graph.triples}
    if exclude:
        linked |= set(exclude)
    capacity = n * (n - 1) - len(linked)
    count = min(count, max(capacity, 0))
    out, seen = [], set()
    while len(out) < count:
        i, j = (int(x) for x in rng.integers(0, n, size=2))
        if i == j or (i, j) in linked or (i, j) in seen:
            continue
        seen.add((i, j))
        out.append((i, j, graph.num_relations))
    return out


def focal_config_for(graph: KnowledgeGraph, negatives: int, lam: float) -> FocalLossConfig:
    """Weights over observed relations plus the negative class.

    A relation with no training triple is never the true class, so it gets
    weight 0 instead of draining the softmax through a clamped count of 1.
    """
    counts = list(graph.relation_counts().values()) + [max(negatives, 1)]
    present = [i for i, c in enumerate(counts) if c > 0]
    alpha = np.zeros(len(counts))
    alpha[present] = class_weights([counts[i] for i in present])
    return FocalLossConfig(lam=lam, alpha=tuple(alpha))


def train_link_prediction(graph: KnowledgeGraph, cfg: EmbedConfig | None = None, negative_exclude=None):
    """Full-batch gradient descent on the focal link-prediction loss.

    Negatives are resampled each epoch from a generator seeded with
    ``cfg.seed``.  Returns ``(model, per-epoch loss trace)``.
    """
    cfg = cfg or EmbedConfig()
    if graph.num_entities == 0:
        raise DataError("cannot train embeddings on an empty graph")
    model = EmbeddingModel(graph.num_entities, graph.num_relations, cfg.F, cfg.seed, cfg.init_scale).bind(graph)
    positives = np.array([(t.head, t.tail, t.relation) for t in graph.triples], dtype=np.int64).reshape(-1, 3)
    n_neg = cfg.negatives_per_positive * len(positives)
    focal = focal_config_for(graph, n_neg, cfg.lam)
    rng = np.random.default_rng(cfg.seed + 1)
    opt = SGD(model.params, cfg.lr)
    trace = []
    for epoch in range(cfg.epochs):
        negatives = sample_negatives(graph, n_neg, rng, negative_exclude)
        examples = np.concatenate([positives, np.array(negatives, dtype=np.int64).reshape(-1, 3)])
        model.params.zero_grad()
        loss = link_loss(model, graph, examples, focal)
        if not math.isfinite(loss) or not all(np.all(np.isfinite(p.grad)) for p in model.params):
            raise TrainingError("link-prediction loss diverged", epoch)
        opt.step()
        trace.append(loss)
        log.debug("epoch %d loss %.6f", epoch, loss)
    model.params.zero_grad()
    return model, trace


def edge_accuracy(model: EmbeddingModel, triples, graph: KnowledgeGraph | None = None) -> float:
    """Fraction of ``triples`` whose relation is the argmax over the ``S`` relation classes."""
    triples = list(triples)
    if not triples:
        return float("nan")
    H = export_embeddings(model, graph)
    correct = 0
    for h, r, t in triples:
        probs = predict_relation(H[h], H[t], model)
        correct += int(np.argmax(probs[: model.S]) == r)
    return correct / len(triples)


def export_embeddings(model: EmbeddingModel, graph: KnowledgeGraph | None = None) -> np.ndarray:
    """Post-attention vector ``h_i'`` for every entity, indexed by entity id."""
    graph = graph or model.graph
    if graph is None:
        raise DataError("model is not bound to a graph")
    H, _ = forward_nodes(model, graph)
    return H


# ---------------------------------------------------------------------------
# one-hot path features
# ---------------------------------------------------------------------------


def encode_pair_onehot(graph: KnowledgeGraph, a: int, b: int, k: int = 3, max_len: int = 4) -> np.ndarray:
    """``k`` blocks of length ``S``: relation histogram of each of the ``k``
    shortest paths between ``a`` and ``b``; missing paths are all ``-1``."""
    S = graph.num_relations
    feature = -np.ones(k * S)
    for slot, path in enumerate(graph.k_shortest_paths(a, b, k, max_len)):
        block = np.zeros(S)
        for triple in path.triples:
            block[triple.relation] += 1.0
        feature[slot * S:(slot + 1) * S] = block
    return feature


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def save_model(path, model: EmbeddingModel, extra_meta: dict | None = None):
    meta = {"kind": "graph-embed", **model.hyper, **(extra_meta or {})}
    checkpoint.save(path, model.params.state(), meta)


def load_model(path, graph: KnowledgeGraph | None = None) -> EmbeddingModel:
    meta, arrays = checkpoint.load(path)
    if meta.get("kind") != "graph-embed":
        raise DataError(f"{path} is not a graph-embedding checkpoint")
    model = EmbeddingModel(meta["N"], meta["S"], meta["F"], meta["seed"])
    model.params.load_state(arrays)
    if graph is not None:
        model.bind(graph)
    return model


def write_embeddings(path, vectors: np.ndarray):
    """``entity_id<TAB>v1,v2,...,vF`` with round-trip float formatting."""
    with open(path, "w", encoding="utf-8") as fh:
        for i, row in enumerate(vectors):
            fh.write(f"{i}\t{','.join(repr(float(x)) for x in row)}\n")


def read_embeddings(path) -> dict[int, np.ndarray]:
    table = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                eid, values = line.split("\t")
                table[int(eid)] = np.array([float(v) for v in values.split(",")])
            except ValueError:
                raise DataError(f"{path}:{lineno}: expected entity_id<TAB>v1,v2,...") from None
    return table
