"""Event typing and EDAG path-expansion decoding fused with graph embeddings.

For every predicted event type the roles of its schema are filled in order.
At role ``r`` along a path prefix, every merged entity of the document is a
candidate; a candidate's input row is::

    e^d_c + role_emb[r] + P_g g_c,    g_c = fuse(kg(c), [kg(p) for chosen p in prefix])

and the memory contributes one row per completed role (the chosen entity's
e^d, or zeros for a null choice, plus a memory-segment and role embedding).
One self-attention block runs over ``[candidates ; memory]`` and a shared
logistic classifier selects candidates.  No selection leaves the role null;
several selections branch the path.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import checkpoint
from .blocks import block_backward, block_forward, init_block, stack_backward, stack_forward
from .docs import Argument, Document, EventRecord, Mention
from .encode import (
    DocContext,
    EncoderConfig,
    TokenTable,
    default_entity_key,
    encode_backward,
    encode_document,
    group_by_name,
    init_encoder_params,
)
from .errors import DataError, DecodeError, TrainingError
from .kernel import Adam, ParamSet, bce_with_logits, sigmoid
from .schema import DEFAULT_SCHEMAS, EventSchema, format_schemas, parse_schemas

log = logging.getLogger(__name__)

FUSION_VARIANTS = ("attention_maxpool", "linear_maxpool")


@dataclass
class DecoderConfig:
    fusion: str = "attention_maxpool"
    type_threshold: float = 0.5
    select_threshold: float = 0.5
    branch_cap: int = 64
    epochs: int = 500
    lr: float = 0.003
    lr_decay: bool = True  # linear decay to zero over ``epochs``
    clip: float | None = 1.0
    expand_depth: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.fusion not in FUSION_VARIANTS:
            raise ValueError(f"unknown fusion variant {self.fusion!r}; choose from {FUSION_VARIANTS}")


# ---------------------------------------------------------------------------
# model container
# ---------------------------------------------------------------------------


class DeeModel:
    """Encoder and decoder parameters plus the vocabulary and schemas they were built for."""

    def __init__(self, vocab: TokenTable, schemas=DEFAULT_SCHEMAS, enc: EncoderConfig | None = None,
                 dec: DecoderConfig | None = None, F: int = 16):
        self.vocab = vocab
        self.schemas = list(schemas)
        self.type_order = [s.event_type for s in self.schemas]
        self.schema_by_type = {s.event_type: s for s in self.schemas}
        self.enc = enc or EncoderConfig()
        self.dec = dec or DecoderConfig()
        self.F = F
        rng = np.random.default_rng(self.enc.seed)
        self.params = ParamSet()
        init_encoder_params(self.params, len(vocab), self.enc, rng)
        self._init_decoder(rng)

    def _init_decoder(self, rng):
        d, F = self.enc.d_w, self.F
        p = self.params
        p.add("type.W", rng.normal(0.0, 1.0 / math.sqrt(d), (len(self.schemas), d)))
        p.add("type.b", np.zeros(len(self.schemas)))
        for s in self.schemas:
            p.add(f"role.{s.event_type}", rng.normal(0.0, 0.5, (len(s.roles), d)))
        p.add("mem.seg", rng.normal(0.0, 0.5, d))
        p.add("kg.proj", rng.normal(0.0, 1.0 / math.sqrt(F), (d, F)))
        p.add("fuse.lin.W", rng.normal(0.0, 1.0 / math.sqrt(F), (F, F)))
        p.add("fuse.lin.b", np.zeros(F))
        init_block(p, "fuse.att.0", F, 2 * F, rng)
        for layer in range(self.dec.expand_depth):
            init_block(p, f"expand.{layer}", d, self.enc.ff, rng, tie_qk=True)
        p.add("sel.w", rng.normal(0.0, 1.0 / math.sqrt(d), d))
        p.add("sel.b", np.zeros(1))

    def encode(self, doc: Document, mentions=None):
        mentions = doc.mentions if mentions is None else mentions
        return encode_document(self.params, self.vocab, self.enc, doc.sentences, mentions or [],
                               doc_id=doc.doc_id)

    # -- persistence ----------------------------------------------------------

    def save(self, path, extra_meta: dict | None = None):
        meta = {
            "kind": "dee",
            "vocab": self.vocab.chars[1:],
            "schemas": format_schemas(self.schemas),
            "encoder": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self.enc).items()},
            "decoder": asdict(self.dec),
            "F": self.F,
            **(extra_meta or {}),
        }
        checkpoint.save(path, self.params.state(), meta)

    @classmethod
    def load(cls, path) -> "DeeModel":
        meta, arrays = checkpoint.load(path)
        if meta.get("kind") != "dee":
            raise DataError(f"{path} is not an event-extraction checkpoint")
        enc_kw = dict(meta["encoder"])
        enc_kw["labels"] = tuple(enc_kw["labels"])
        model = cls(TokenTable(meta["vocab"]), parse_schemas(meta["schemas"]), EncoderConfig(**enc_kw),
                    DecoderConfig(**meta["decoder"]), meta["F"])
        model.params.load_state(arrays)
        return model


# ---------------------------------------------------------------------------
# graph-embedding lookup
# ---------------------------------------------------------------------------


class KgLookup:
    """Maps entity names to graph embeddings; unknown names map to the zero vector."""

    def __init__(self, F: int, graph=None, table: dict | None = None):
        self.F = F
        self.graph = graph
        self.table = table or {}

    def vector(self, name: str) -> np.ndarray:
        if self.graph is not None:
            eid = self.graph.resolve(name)
            if eid is not None and eid in self.table:
                return np.asarray(self.table[eid], float)
        return np.zeros(self.F)

    def matrix(self, names) -> np.ndarray:
        return np.array([self.vector(n) for n in names]).reshape(len(names), self.F)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def classify_event_types(t, params: ParamSet) -> np.ndarray:
    """Independent sigmoid probability per event type."""
    return sigmoid(params.v("type.W") @ t + params.v("type.b"))


@dataclass
class _FuseCache:
    variant: str
    x: np.ndarray
    arg: np.ndarray
    block: object = None


def _fuse_forward(params: ParamSet, variant: str, cand: np.ndarray, prior: np.ndarray):
    """Batched fusion: ``cand`` (C x F), shared ``prior`` (p x F) -> g (C x F)."""
    C, F = cand.shape
    x = np.concatenate([cand[:, None, :], np.broadcast_to(prior, (C,) + prior.shape)], axis=1)
    if variant == "linear_maxpool":
        z = x @ params.v("fuse.lin.W").T + params.v("fuse.lin.b")
        block = None
    elif variant == "attention_maxpool":
        z, block = block_forward(params, "fuse.att.0", x)
    else:
        raise ValueError(f"unknown fusion variant {variant!r}")
    arg = np.argmax(z, axis=1)
    g = np.take_along_axis(z, arg[:, None, :], axis=1)[:, 0, :]
    return g, _FuseCache(variant, x, arg, block)


def _fuse_backward(params: ParamSet, d_g: np.ndarray, cache: _FuseCache):
    C, n, F = cache.x.shape
    dz = np.zeros((C, n, F))
    np.put_along_axis(dz, cache.arg[:, None, :], d_g[:, None, :], axis=1)
    if cache.variant == "linear_maxpool":
        params.g("fuse.lin.W")[...] += np.einsum("cnf,cng->fg", dz, cache.x)
        params.g("fuse.lin.b")[...] += dz.sum(axis=(0, 1))
    else:
        block_backward(params, "fuse.att.0", dz, cache.block)


def kg_fuse(candidate, prior, params: ParamSet, variant: str = "attention_maxpool") -> np.ndarray:
    """Fuse one candidate's graph embedding with those of previously chosen entities."""
    candidate = np.asarray(candidate, float)
    prior = np.asarray(prior, float).reshape(-1, candidate.shape[0])
    return _fuse_forward(params, variant, candidate[None, :], prior)[0][0]


@dataclass
class _ExpandCache:
    event_type: str
    role: int
    prefix: tuple
    g: np.ndarray
    y: np.ndarray
    block: object
    n_cand: int


def _memory_rows(params: ParamSet, entities, event_type, prefix) -> np.ndarray:
    role_emb = params.v(f"role.{event_type}")
    d = entities.shape[1]
    rows = np.zeros((len(prefix), d))
    for i, choice in enumerate(prefix):
        if choice is not None:
            rows[i] += entities[choice]
    return rows + params.v("mem.seg") + role_emb[: len(prefix)]


def expand_field(params: ParamSet, entities, event_type: str, prefix: tuple, g, depth: int = 1):
    """Selection logits for every candidate at role ``len(prefix)``; returns (logits, cache)."""
    r = len(prefix)
    n = entities.shape[0]
    if n == 0:
        return np.zeros(0), None
    cand = entities + params.v(f"role.{event_type}")[r] + g @ params.v("kg.proj").T
    x = np.concatenate([cand, _memory_rows(params, entities, event_type, prefix)])
    y, block = stack_forward(params, "expand", depth, x)
    logits = y[:n] @ params.v("sel.w") + params.v("sel.b")[0]
    return logits, _ExpandCache(event_type, r, prefix, g, y, block, n)


def _expand_backward(params: ParamSet, d_logits, cache: _ExpandCache):
    """Returns (d entities, d g)."""
    n = cache.n_cand
    y_c = cache.y[:n]
    params.g("sel.w")[...] += y_c.T @ d_logits
    params.g("sel.b")[0] += d_logits.sum()
    dy = np.zeros_like(cache.y)
    dy[:n] = np.outer(d_logits, params.v("sel.w"))
    dx = stack_backward(params, "expand", dy, cache.block)
    d_cand, d_mem = dx[:n], dx[n:]
    g_role = params.g(f"role.{cache.event_type}")
    g_role[cache.role] += d_cand.sum(axis=0)
    params.g("kg.proj")[...] += d_cand.T @ cache.g
    d_g = d_cand @ params.v("kg.proj")
    d_entities = d_cand.copy()
    params.g("mem.seg")[...] += d_mem.sum(axis=0)
    g_role[: len(cache.prefix)] += d_mem
    for i, choice in enumerate(cache.prefix):
        if choice is not None:
            d_entities[choice] += d_mem[i]
    return d_entities, d_g


def _prior(kg_rows: np.ndarray, prefix: tuple) -> np.ndarray:
    chosen = [c for c in prefix if c is not None]
    return kg_rows[chosen] if chosen else np.zeros((0, kg_rows.shape[1]))


# ---------------------------------------------------------------------------
# gold EDAG and scorers
# ---------------------------------------------------------------------------


@dataclass
class GoldEdag:
    """Target selections keyed by ``(event_type, prefix)``, in construction order."""

    types: list[str]
    targets: dict = field(default_factory=dict)
    mixed_null: list = field(default_factory=list)


def entity_index(mentions, normalize=None) -> dict[str, int]:
    keys, _ = group_by_name([m.text for m in mentions], normalize)
    return {k: i for i, k in enumerate(keys)}


def build_gold_edag(events, mentions, schemas, normalize=None, doc_id="") -> GoldEdag:
    """Merge gold events of each type into a prefix tree over role choices."""
    normalize = normalize or default_entity_key
    index = entity_index(mentions, normalize)
    by_type = {s.event_type: s for s in schemas}
    present = []
    targets: dict[tuple, list] = {}
    nulls: dict[tuple, bool] = {}
    for ev in events:
        schema = by_type.get(ev.event_type)
        if schema is None:
            raise DataError(f"{doc_id}: event type {ev.event_type!r} is not in the schema")
        path = []
        for role in schema.roles:
            arg = ev.arguments.get(role)
            if arg is None:
                path.append(None)
                continue
            idx = index.get(normalize(arg.text))
            if idx is None:
                raise DataError(
                    f"{doc_id}: argument {arg.text!r} of {ev.event_type}.{role} is not among the "
                    f"document mentions (event {ev.texts()})"
                )
            path.append(idx)
        if ev.event_type not in present:
            present.append(ev.event_type)
        for r, choice in enumerate(path):
            key = (ev.event_type, tuple(path[:r]))
            sel = targets.setdefault(key, [])
            if choice is None:
                nulls[key] = True
            elif choice not in sel:
                sel.append(choice)
    gold = GoldEdag([t for t in by_type if t in present])
    for key, sel in targets.items():
        gold.targets[key] = tuple(sorted(sel))
        if sel and nulls.get(key):
            gold.mixed_null.append(key)
            log.warning("%s: %s prefix %s mixes null and non-null children; null branch is dropped",
                        doc_id, key[0], key[1])
    return gold


class OracleScorer:
    """Reads decisions off a gold EDAG."""

    def __init__(self, gold: GoldEdag):
        self.gold = gold

    def event_types(self) -> list[str]:
        return list(self.gold.types)

    def select(self, event_type: str, prefix: tuple) -> list[int]:
        return list(self.gold.targets.get((event_type, prefix), ()))


class ModelScorer:
    def __init__(self, model: DeeModel, ctx: DocContext, kg_rows: np.ndarray):
        self.model = model
        self.ctx = ctx
        self.kg_rows = kg_rows

    def event_types(self) -> list[str]:
        probs = classify_event_types(self.ctx.summary, self.model.params)
        return [t for t, p in zip(self.model.type_order, probs) if p > self.model.dec.type_threshold]

    def logits(self, event_type: str, prefix: tuple) -> np.ndarray:
        params = self.model.params
        g, _ = _fuse_forward(params, self.model.dec.fusion, self.kg_rows, _prior(self.kg_rows, prefix))
        return expand_field(params, self.ctx.entities, event_type, prefix, g, self.model.dec.expand_depth)[0]

    def select(self, event_type: str, prefix: tuple) -> list[int]:
        if self.ctx.num_entities == 0:
            return []
        probs = sigmoid(self.logits(event_type, prefix))
        return [int(c) for c in np.flatnonzero(probs > self.model.dec.select_threshold)]


# ---------------------------------------------------------------------------
# decoding
# ---------------------------------------------------------------------------


def _argument(ctx: DocContext, idx: int) -> Argument:
    m = ctx.entity_mentions[idx][0]
    return Argument(ctx.entity_names[idx], (m.sent, m.start, m.end), idx)


def expand_paths(schema: EventSchema, scorer, branch_cap: int = 64, doc_id: str = "") -> list[tuple]:
    """All root-to-leaf role assignments for one event type, in candidate order."""
    prefixes = [()]
    for _role in schema.roles:
        nxt = []
        for prefix in prefixes:
            chosen = scorer.select(schema.event_type, prefix)
            for c in chosen or [None]:
                nxt.append(prefix + (c,))
        if len(nxt) > branch_cap:
            raise DecodeError(
                f"document {doc_id!r}: {schema.event_type} expansion exceeds {branch_cap} paths"
            )
        prefixes = nxt
    return prefixes


def decode_document(ctx: DocContext, schemas, scorer, branch_cap: int = 64) -> list[EventRecord]:
    by_type = {s.event_type: s for s in schemas}
    records = []
    for event_type in scorer.event_types():
        schema = by_type[event_type]
        for path in expand_paths(schema, scorer, branch_cap, ctx.doc_id):
            args = {
                role: (_argument(ctx, c) if c is not None else None) for role, c in zip(schema.roles, path)
            }
            records.append(EventRecord(event_type, args))
    return records


def extract(model: DeeModel, doc: Document, mentions, kg: KgLookup | None = None) -> list[EventRecord]:
    ctx, _ = model.encode(doc, mentions)
    kg = kg or KgLookup(model.F)
    scorer = ModelScorer(model, ctx, kg.matrix(ctx.entity_names))
    return decode_document(ctx, model.schemas, scorer, model.dec.branch_cap)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def document_loss(model: DeeModel, doc: Document, gold: GoldEdag, kg_rows: np.ndarray, mentions=None) -> float:
    """Teacher-forced loss of one document; accumulates gradients into ``model.params``."""
    params = model.params
    ctx, enc_cache = model.encode(doc, mentions)
    type_targets = np.array([1.0 if t in gold.types else 0.0 for t in model.type_order])
    type_logits = params.v("type.W") @ ctx.summary + params.v("type.b")
    loss, d_type = bce_with_logits(type_logits, type_targets)
    params.g("type.W")[...] += np.outer(d_type, ctx.summary)
    params.g("type.b")[...] += d_type
    d_summary = params.v("type.W").T @ d_type

    d_entities = np.zeros_like(ctx.entities)
    if ctx.num_entities:
        for (event_type, prefix), selected in gold.targets.items():
            g, fuse_cache = _fuse_forward(params, model.dec.fusion, kg_rows, _prior(kg_rows, prefix))
            logits, cache = expand_field(params, ctx.entities, event_type, prefix, g, model.dec.expand_depth)
            target = np.zeros(ctx.num_entities)
            target[list(selected)] = 1.0
            field_loss, d_logits = bce_with_logits(logits, target)
            loss += field_loss
            d_e, d_g = _expand_backward(params, d_logits, cache)
            _fuse_backward(params, d_g, fuse_cache)
            d_entities += d_e
    encode_backward(params, enc_cache, d_entities, None, d_summary)
    return loss


@dataclass
class TrainingExample:
    doc: Document
    gold: GoldEdag
    kg_rows: np.ndarray


def prepare_examples(model: DeeModel, docs, kg: KgLookup | None = None) -> list[TrainingExample]:
    kg = kg or KgLookup(model.F)
    examples = []
    for doc in docs:
        if doc.mentions is None or doc.events is None:
            raise DataError(f"{doc.doc_id}: training documents need gold mentions and events")
        ctx, _ = model.encode(doc)
        kept = [m for group in ctx.entity_mentions for m in group]
        gold = build_gold_edag(doc.events, kept, model.schemas, doc_id=doc.doc_id)
        examples.append(TrainingExample(doc, gold, kg.matrix(ctx.entity_names)))
    return examples


def train_decoder(model: DeeModel, docs, kg: KgLookup | None = None, cfg: DecoderConfig | None = None,
                  callback=None):
    """Adam on per-document teacher-forced losses, documents visited in a seeded order.

    ``callback(epoch, loss)`` may return True to stop early.  Returns the
    per-epoch loss trace.
    """
    cfg = cfg or model.dec
    examples = prepare_examples(model, docs, kg)
    opt = Adam(model.params, lr=cfg.lr, clip=cfg.clip)
    rng = np.random.default_rng(cfg.seed)
    trace = []
    for epoch in range(cfg.epochs):
        if cfg.lr_decay:
            opt.lr = cfg.lr * (1.0 - epoch / cfg.epochs)
        total = 0.0
        for i in rng.permutation(len(examples)):
            ex = examples[i]
            model.params.zero_grad()
            loss = document_loss(model, ex.doc, ex.gold, ex.kg_rows)
            if not math.isfinite(loss):
                raise TrainingError(f"decoder loss diverged on {ex.doc.doc_id}", epoch)
            opt.step()
            total += loss
        trace.append(total)
        if callback is not None and callback(epoch, total):
            break
    model.params.zero_grad()
    return trace
