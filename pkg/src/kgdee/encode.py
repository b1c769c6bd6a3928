"""Document-level representations of entities and sentences.

Pipeline for one document::

    token rows  --per-sentence self-attention-->  contextual token rows
    contextual token rows  --max-pool-->  mention e_l, sentence s_l
    e_l' = LayerNorm(e_l + W_l onehot(label))
    [e' ; s'] + segment embedding + sentence-index embedding  --self-attention stack-->  contextualised rows
    mentions grouped by normalised name --max-pool--> e^d;  sentences --> s^d
    t = max-pool(s^d)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .blocks import init_block, stack_backward, stack_forward
from .docs import LABEL_TYPES, Mention
from .errors import DimensionError, DomainError
from .kernel import LayerNormCache, ParamSet, layer_norm_backward, layer_norm_forward
from .names import WhitespaceFold, normalize_name

OOV = "<unk>"


@dataclass
class EncoderConfig:
    d_w: int = 32
    depth: int = 1
    token_depth: int = 1
    d_ff: int | None = None
    N_s: int = 64
    N_w: int = 128
    seed: int = 0
    labels: tuple = LABEL_TYPES

    @property
    def ff(self) -> int:
        return self.d_ff or 2 * self.d_w


class TokenTable:
    """Character vocabulary; row 0 is the out-of-vocabulary row."""

    def __init__(self, chars):
        self.chars = [OOV] + sorted(set(chars) - {OOV})
        self.index = {c: i for i, c in enumerate(self.chars)}

    def __len__(self):
        return len(self.chars)

    def ids(self, text: str) -> np.ndarray:
        return np.array([self.index.get(c, 0) for c in text], dtype=np.int64)

    @classmethod
    def from_documents(cls, docs) -> "TokenTable":
        return cls({c for d in docs for s in d.sentences for c in s})


# ---------------------------------------------------------------------------
# primitive operations
# ---------------------------------------------------------------------------


def pool_span(rows) -> np.ndarray:
    rows = np.asarray(rows, float)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise DomainError("cannot max-pool an empty span")
    return rows.max(axis=0)


def encode_label(e, label_onehot, W_l, gain=None, bias=None) -> np.ndarray:
    e = np.asarray(e, float)
    W_l = np.asarray(W_l, float)
    label_onehot = np.asarray(label_onehot, float)
    if W_l.shape != (e.shape[0], label_onehot.shape[0]):
        raise DimensionError(f"W_l shape {W_l.shape} does not match d_w={e.shape[0]}, N_l={label_onehot.shape[0]}")
    gain = np.ones_like(e) if gain is None else gain
    bias = np.zeros_like(e) if bias is None else bias
    return layer_norm_forward(e + W_l @ label_onehot, gain, bias)[0]


def doc_attend(x, params: ParamSet, depth: int = 1, prefix: str = "doc") -> np.ndarray:
    x = np.asarray(x, float)
    if x.shape[0] == 0:
        raise DomainError("document sequence is empty")
    return stack_forward(params, prefix, depth, x)[0]


def group_by_name(names, normalize=None) -> tuple[list[str], list[list[int]]]:
    """Groups of indices sharing a normalised name, ordered by first occurrence."""
    normalize = normalize or default_entity_key
    keys: list[str] = []
    groups: dict[str, list[int]] = {}
    for i, name in enumerate(names):
        key = normalize(name)
        if key not in groups:
            groups[key] = []
            keys.append(key)
        groups[key].append(i)
    return keys, [groups[k] for k in keys]


def merge_mentions(embeddings, names, normalize=None):
    """Coordinate-wise max over mentions sharing a normalised name; returns (e^d, groups)."""
    embeddings = np.asarray(embeddings, float)
    _, groups = group_by_name(names, normalize)
    merged = np.array([embeddings[g].max(axis=0) for g in groups]).reshape(len(groups), embeddings.shape[1])
    return merged, groups


def doc_summary(sentence_rows) -> np.ndarray:
    rows = np.asarray(sentence_rows, float)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise DomainError("document has no sentences")
    return rows.max(axis=0)


_FOLD = [WhitespaceFold()]


def default_entity_key(name: str) -> str:
    return normalize_name(name, _FOLD)


# ---------------------------------------------------------------------------
# differentiable encoder
# ---------------------------------------------------------------------------


@dataclass
class DocContext:
    entities: np.ndarray  # N_e x d_w   (e^d)
    entity_names: list[str]
    entity_mentions: list[list[Mention]]
    sentences: np.ndarray  # N_s x d_w  (s^d)
    summary: np.ndarray  # d_w        (t)
    doc_id: str = ""
    dropped_mentions: list[Mention] = field(default_factory=list)

    @property
    def num_entities(self) -> int:
        return self.entities.shape[0]


@dataclass
class _EncodeCache:
    sent_ids: list[np.ndarray]
    token_caches: list
    mention_tok: list[tuple]  # (sentence, winning token position per coordinate)
    sent_tok: list[np.ndarray]  # winning token position per coordinate
    labels: list[int]
    ln: LayerNormCache | None
    stack: list
    M: int
    group_arg: list[np.ndarray]  # winning mention row per coordinate
    summary_arg: np.ndarray
    row_sent: np.ndarray  # sentence index of every row of the document sequence


def init_encoder_params(params: ParamSet, vocab_size: int, cfg: EncoderConfig, rng: np.random.Generator):
    d = cfg.d_w
    params.add("tok.emb", rng.normal(0.0, 1.0, (vocab_size, d)))
    params.add("label.W_l", rng.normal(0.0, 0.5, (d, len(cfg.labels))))
    params.add("label.ln_g", np.ones(d))
    params.add("label.ln_b", np.zeros(d))
    params.add("seg.emb", rng.normal(0.0, 0.5, (2, d)))
    params.add("pos.sent", rng.normal(0.0, 0.5, (cfg.N_s, d)))
    for layer in range(cfg.depth):
        init_block(params, f"doc.{layer}", d, cfg.ff, rng)
    for layer in range(cfg.token_depth):
        init_block(params, f"sent.{layer}", d, cfg.ff, rng)


def _argmax_rows(rows: np.ndarray) -> np.ndarray:
    return np.argmax(rows, axis=0)


def encode_document(params: ParamSet, vocab: TokenTable, cfg: EncoderConfig, sentences, mentions,
                    normalize=None, doc_id=""):
    """Forward pass; returns ``(DocContext, cache)`` for :func:`encode_backward`."""
    emb = params.v("tok.emb")
    sentences = [s[: cfg.N_w] for s in list(sentences)[: cfg.N_s]]
    if not sentences:
        raise DomainError(f"document {doc_id!r} has no sentences")
    sent_ids = [vocab.ids(s) if s else np.zeros(1, dtype=np.int64) for s in sentences]

    token_rows, token_caches = [], []
    for ids in sent_ids:
        rows, c = stack_forward(params, "sent", cfg.token_depth, emb[ids])
        token_rows.append(rows)
        token_caches.append(c)

    kept, dropped = [], []
    for m in mentions:
        (kept if m.sent < len(sentences) and m.end <= len(sentences[m.sent]) else dropped).append(m)
    label_index = {l: i for i, l in enumerate(cfg.labels)}

    mention_rows, mention_tok, labels = [], [], []
    for m in kept:
        rows = token_rows[m.sent][m.start:m.end]
        arg = _argmax_rows(rows)
        mention_tok.append((m.sent, m.start + arg))
        mention_rows.append(rows[arg, np.arange(rows.shape[1])])
        labels.append(label_index[m.label])
    sent_rows, sent_tok = [], []
    for rows in token_rows:
        arg = _argmax_rows(rows)
        sent_tok.append(arg)
        sent_rows.append(rows[arg, np.arange(rows.shape[1])])

    d = cfg.d_w
    M = len(kept)
    ln = None
    if M:
        pre = np.array(mention_rows) + params.v("label.W_l")[:, labels].T
        e_prime, ln = layer_norm_forward(pre, params.v("label.ln_g"), params.v("label.ln_b"))
    else:
        e_prime = np.zeros((0, d))
    seg = params.v("seg.emb")
    row_sent = np.array([m.sent for m in kept] + list(range(len(sentences))), dtype=np.int64)
    x = np.concatenate([e_prime + seg[0], np.array(sent_rows) + seg[1]]) + params.v("pos.sent")[row_sent]
    y, stack = stack_forward(params, "doc", cfg.depth, x)

    _, groups = group_by_name([m.text for m in kept], normalize)
    group_arg, entities = [], []
    for g in groups:
        rows = y[g]
        arg = _argmax_rows(rows)
        group_arg.append(np.asarray(g)[arg])
        entities.append(rows[arg, np.arange(d)])
    sent_out = y[M:]
    summary_arg = _argmax_rows(sent_out)
    ctx = DocContext(
        entities=np.array(entities).reshape(len(groups), d),
        entity_names=[kept[g[0]].text for g in groups],
        entity_mentions=[[kept[i] for i in g] for g in groups],
        sentences=sent_out,
        summary=sent_out[summary_arg, np.arange(d)],
        doc_id=doc_id,
        dropped_mentions=dropped,
    )
    return ctx, _EncodeCache(sent_ids, token_caches, mention_tok, sent_tok, labels, ln, stack, M, group_arg,
                             summary_arg, row_sent)


def encode_backward(params: ParamSet, cache: _EncodeCache, d_entities, d_sentences=None, d_summary=None):
    """Accumulate encoder gradients from gradients on e^d, s^d and t."""
    M = cache.M
    n_sent = len(cache.sent_ids)
    d = params.v("tok.emb").shape[1]
    cols = np.arange(d)
    dy = np.zeros((M + n_sent, d))
    if d_sentences is not None:
        dy[M:] += d_sentences
    if d_summary is not None:
        np.add.at(dy, (M + cache.summary_arg, cols), d_summary)
    if d_entities is not None:
        for g, arg in enumerate(cache.group_arg):
            np.add.at(dy, (arg, cols), d_entities[g])
    dx = stack_backward(params, "doc", dy, cache.stack)

    g_seg = params.g("seg.emb")
    g_seg[0] += dx[:M].sum(axis=0)
    g_seg[1] += dx[M:].sum(axis=0)
    np.add.at(params.g("pos.sent"), cache.row_sent, dx)
    d_tokens = [np.zeros((len(ids), d)) for ids in cache.sent_ids]
    if M:
        dpre, dg, db = layer_norm_backward(dx[:M], cache.ln)
        params.g("label.ln_g")[...] += dg
        params.g("label.ln_b")[...] += db
        np.add.at(params.g("label.W_l").T, cache.labels, dpre)
        for row, (sent, pos) in enumerate(cache.mention_tok):
            np.add.at(d_tokens[sent], (pos, cols), dpre[row])
    for k, pos in enumerate(cache.sent_tok):
        np.add.at(d_tokens[k], (pos, cols), dx[M + k])
    g_emb = params.g("tok.emb")
    for ids, d_tok, c in zip(cache.sent_ids, d_tokens, cache.token_caches):
        np.add.at(g_emb, ids, stack_backward(params, "sent", d_tok, c))
