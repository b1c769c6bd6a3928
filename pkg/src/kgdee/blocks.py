"""Single-head self-attention block with hand-written backward pass.

One block maps ``X (..., n, d)`` to ``Y (..., n, d)``::

    A  = softmax(X Wq (X Wk)^T / sqrt(d))
    Y1 = LayerNorm(X + A X Wv)
    Y  = LayerNorm(Y1 + tanh(Y1 W1 + b1) W2 + b2)

Leading axes are treated as independent batches.  No positional signal is
added, so the block is permutation-equivariant along ``n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kernel import (
    LayerNormCache,
    ParamSet,
    layer_norm_backward,
    layer_norm_forward,
    softmax,
    softmax_backward,
)

BLOCK_PARAMS = ("Wq", "Wk", "Wv", "ln1_g", "ln1_b", "W1", "b1", "W2", "b2", "ln2_g", "ln2_b")


def init_block(params: ParamSet, prefix: str, d: int, d_ff: int, rng: np.random.Generator, scale=None,
               tie_qk=False):
    """``tie_qk`` starts with ``Wk = Wq`` so initial attention favours similar rows."""
    scale = scale if scale is not None else 1.0 / math.sqrt(d)
    wq = rng.uniform(-scale, scale, (d, d))
    wk = rng.uniform(-scale, scale, (d, d))
    params.add(f"{prefix}.Wq", wq)
    params.add(f"{prefix}.Wk", wq.copy() if tie_qk else wk)
    params.add(f"{prefix}.Wv", rng.uniform(-scale, scale, (d, d)))
    params.add(f"{prefix}.ln1_g", np.ones(d))
    params.add(f"{prefix}.ln1_b", np.zeros(d))
    params.add(f"{prefix}.W1", rng.uniform(-scale, scale, (d, d_ff)))
    params.add(f"{prefix}.b1", np.zeros(d_ff))
    params.add(f"{prefix}.W2", rng.uniform(-1.0 / math.sqrt(d_ff), 1.0 / math.sqrt(d_ff), (d_ff, d)))
    params.add(f"{prefix}.b2", np.zeros(d))
    params.add(f"{prefix}.ln2_g", np.ones(d))
    params.add(f"{prefix}.ln2_b", np.zeros(d))


@dataclass
class BlockCache:
    x: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    attn: np.ndarray
    ln1: LayerNormCache
    y1: np.ndarray
    hidden: np.ndarray
    ln2: LayerNormCache


def _sum_lead(a: np.ndarray, keep: int) -> np.ndarray:
    """Sum over all axes except the trailing ``keep`` ones."""
    lead = a.ndim - keep
    return a.sum(axis=tuple(range(lead))) if lead > 0 else a


def block_forward(params: ParamSet, prefix: str, x: np.ndarray, eps=1e-5):
    p = params.v
    d = x.shape[-1]
    q = x @ p(f"{prefix}.Wq")
    k = x @ p(f"{prefix}.Wk")
    v = x @ p(f"{prefix}.Wv")
    scores = q @ np.swapaxes(k, -1, -2) / math.sqrt(d)
    attn = softmax(scores)
    r1 = x + attn @ v
    y1, ln1 = layer_norm_forward(r1, p(f"{prefix}.ln1_g"), p(f"{prefix}.ln1_b"), eps)
    hidden = np.tanh(y1 @ p(f"{prefix}.W1") + p(f"{prefix}.b1"))
    r2 = y1 + hidden @ p(f"{prefix}.W2") + p(f"{prefix}.b2")
    y, ln2 = layer_norm_forward(r2, p(f"{prefix}.ln2_g"), p(f"{prefix}.ln2_b"), eps)
    return y, BlockCache(x, q, k, v, attn, ln1, y1, hidden, ln2)


def block_backward(params: ParamSet, prefix: str, grad_y: np.ndarray, cache: BlockCache) -> np.ndarray:
    """Accumulate parameter gradients; return d loss / d x."""
    p = params.v
    g = params.g
    d = cache.x.shape[-1]
    swap = lambda a: np.swapaxes(a, -1, -2)  # noqa: E731

    dr2, dg2, db2_ln = layer_norm_backward(grad_y, cache.ln2)
    g(f"{prefix}.ln2_g")[...] += dg2
    g(f"{prefix}.ln2_b")[...] += db2_ln

    dy1 = dr2.copy()
    g(f"{prefix}.W2")[...] += _sum_lead(swap(cache.hidden) @ dr2, 2)
    g(f"{prefix}.b2")[...] += _sum_lead(dr2, 1)
    dpre = (dr2 @ p(f"{prefix}.W2").T) * (1.0 - cache.hidden**2)
    g(f"{prefix}.W1")[...] += _sum_lead(swap(cache.y1) @ dpre, 2)
    g(f"{prefix}.b1")[...] += _sum_lead(dpre, 1)
    dy1 += dpre @ p(f"{prefix}.W1").T

    dr1, dg1, db1_ln = layer_norm_backward(dy1, cache.ln1)
    g(f"{prefix}.ln1_g")[...] += dg1
    g(f"{prefix}.ln1_b")[...] += db1_ln

    dx = dr1.copy()
    dattn = dr1 @ swap(cache.v)
    dv = swap(cache.attn) @ dr1
    dscores = softmax_backward(cache.attn, dattn) / math.sqrt(d)
    dq = dscores @ cache.k
    dk = swap(dscores) @ cache.q

    x = cache.x
    g(f"{prefix}.Wq")[...] += _sum_lead(swap(x) @ dq, 2)
    g(f"{prefix}.Wk")[...] += _sum_lead(swap(x) @ dk, 2)
    g(f"{prefix}.Wv")[...] += _sum_lead(swap(x) @ dv, 2)
    dx += dq @ p(f"{prefix}.Wq").T + dk @ p(f"{prefix}.Wk").T + dv @ p(f"{prefix}.Wv").T
    return dx


def stack_forward(params: ParamSet, prefix: str, depth: int, x: np.ndarray):
    caches = []
    for layer in range(depth):
        x, cache = block_forward(params, f"{prefix}.{layer}", x)
        caches.append(cache)
    return x, caches


def stack_backward(params: ParamSet, prefix: str, grad: np.ndarray, caches) -> np.ndarray:
    for layer in reversed(range(len(caches))):
        grad = block_backward(params, f"{prefix}.{layer}", grad, caches[layer])
    return grad
