"""Character-level mention tagging.

A linear-chain CRF over hashed character-window features stands in for a
neural encoder; a longest-match gazetteer and a gold passthrough are the
other strategies.  The CRF score of a tag path ``y`` is::

    score(y) = sum_t U[t, y_t] + sum_{t>0} A[y_{t-1}, y_t],
    U[t, y]  = sum_{f in feats(t)} W[f, y]
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from .docs import LABEL_TYPES, Document, Mention
from .errors import DataError, TrainingError
from .kernel import logsumexp

log = logging.getLogger(__name__)

DEFAULT_D = 2**16
FNV_OFFSET = 0x811C9DC5
FNV_PRIME = 0x01000193
BOS, EOS = "<s>", "</s>"


def bio_tags(labels=LABEL_TYPES) -> list[str]:
    tags = ["O"]
    for label in labels:
        tags += [f"B-{label}", f"I-{label}"]
    return tags


# ---------------------------------------------------------------------------
# features
# ---------------------------------------------------------------------------


def fnv1a(text: str) -> int:
    """32-bit FNV-1a over the UTF-8 bytes of ``text``."""
    h = FNV_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * FNV_PRIME) & 0xFFFFFFFF
    return h


def feature_strings(sentence: str, position: int) -> list[str]:
    """Bias, character unigrams at offsets -2..2 and bigrams inside that window."""
    if not 0 <= position < len(sentence):
        raise IndexError(f"position {position} outside sentence of length {len(sentence)}")

    def char(i):
        if i < 0:
            return BOS
        if i >= len(sentence):
            return EOS
        return sentence[i]

    window = [char(position + o) for o in range(-2, 3)]
    feats = ["bias"]
    feats += [f"u{o}={window[o + 2]}" for o in range(-2, 3)]
    feats += [f"b{o}={window[o + 2]}|{window[o + 3]}" for o in range(-2, 2)]
    return feats


def featurize(sentence: str, position: int, D: int = DEFAULT_D) -> tuple[int, ...]:
    return tuple(sorted({fnv1a(f) % D for f in feature_strings(sentence, position)}))


# ---------------------------------------------------------------------------
# generic linear-chain CRF on an emission matrix
# ---------------------------------------------------------------------------


def path_score(emissions: np.ndarray, trans: np.ndarray, tags) -> float:
    score = 0.0
    prev = None
    for t, y in enumerate(tags):
        score += emissions[t, y]
        if prev is not None:
            score += trans[prev, y]
        prev = y
    return float(score)


def forward_logspace(emissions, trans):
    """Log forward table ``alpha[t, y]`` and ``log Z``."""
    L, T = emissions.shape
    alpha = np.empty((L, T))
    alpha[0] = emissions[0]
    for t in range(1, L):
        alpha[t] = logsumexp(alpha[t - 1][:, None] + trans, axis=0) + emissions[t]
    return alpha, float(logsumexp(alpha[-1]))


def backward_logspace(emissions, trans):
    L, T = emissions.shape
    beta = np.zeros((L, T))
    for t in range(L - 2, -1, -1):
        beta[t] = logsumexp(trans + (emissions[t + 1] + beta[t + 1])[None, :], axis=1)
    return beta


def crf_nll(emissions, trans, tags):
    """Negative log-likelihood of ``tags`` with gradients w.r.t. emissions and transitions."""
    emissions = np.asarray(emissions, float)
    L, T = emissions.shape
    if len(tags) != L:
        raise DataError(f"{len(tags)} tags for a sequence of length {L}")
    alpha, log_z = forward_logspace(emissions, trans)
    beta = backward_logspace(emissions, trans)
    unary = np.exp(alpha + beta - log_z)
    d_em = unary.copy()
    d_tr = np.zeros_like(trans)
    for t in range(1, L):
        pair = alpha[t - 1][:, None] + trans + (emissions[t] + beta[t])[None, :] - log_z
        d_tr += np.exp(pair)
    prev = None
    for t, y in enumerate(tags):
        d_em[t, y] -= 1.0
        if prev is not None:
            d_tr[prev, y] -= 1.0
        prev = y
    return log_z - path_score(emissions, trans, tags), d_em, d_tr


def viterbi(emissions, trans) -> list[int]:
    """Highest-scoring path; among equal scores the lexicographically smallest.

    Suffix scores are computed right to left, then the path is read greedily
    left to right taking the lowest tag index that attains the optimum.
    """
    emissions = np.asarray(emissions, float)
    L, T = emissions.shape
    suffix = np.empty((L, T))
    suffix[-1] = emissions[-1]
    for t in range(L - 2, -1, -1):
        suffix[t] = emissions[t] + (trans + suffix[t + 1][None, :]).max(axis=1)
    path = [int(np.argmax(suffix[0]))]
    for t in range(1, L):
        path.append(int(np.argmax(trans[path[-1]] + suffix[t])))
    return path


# ---------------------------------------------------------------------------
# BIO helpers
# ---------------------------------------------------------------------------


def validate_bio(tags: list[str]):
    prev = "O"
    for i, tag in enumerate(tags):
        if tag.startswith("I-"):
            label = tag[2:]
            if prev not in (f"B-{label}", f"I-{label}"):
                raise DataError(f"invalid BIO sequence: {tag} at position {i} follows {prev}")
        elif tag != "O" and not tag.startswith("B-"):
            raise DataError(f"unknown tag {tag!r} at position {i}")
        prev = tag


def bio_to_spans(tags: list[str]) -> list[tuple[str, int, int]]:
    """(label, start, end) spans; a stray ``I-`` opens a new span."""
    spans = []
    label, start = None, None
    for i, tag in enumerate(list(tags) + ["O"]):
        continues = label is not None and tag == f"I-{label}"
        if continues:
            continue
        if label is not None:
            spans.append((label, start, i))
            label = None
        if tag.startswith("B-") or tag.startswith("I-"):
            label, start = tag[2:], i
    return spans


def spans_to_bio(spans, length: int) -> list[str]:
    tags = ["O"] * length
    for label, start, end in spans:
        tags[start] = f"B-{label}"
        for i in range(start + 1, end):
            tags[i] = f"I-{label}"
    return tags


def mentions_from_tags(sent_idx: int, sentence: str, tags: list[str]) -> list[Mention]:
    return [Mention(sent_idx, s, e, sentence[s:e], label) for label, s, e in bio_to_spans(tags)]


def mentions_to_tags(sentence: str, mentions) -> list[str]:
    return spans_to_bio([(m.label, m.start, m.end) for m in mentions], len(sentence))


# ---------------------------------------------------------------------------
# hashed-feature CRF
# ---------------------------------------------------------------------------


@dataclass
class CrfConfig:
    D: int = DEFAULT_D
    epochs: int = 300
    lr: float = 0.05
    seed: int = 0
    labels: tuple = LABEL_TYPES


@dataclass
class CrfParams:
    tags: list[str]
    D: int
    W: np.ndarray
    trans: np.ndarray
    _feat_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def zeros(cls, tags, D=DEFAULT_D):
        T = len(tags)
        return cls(list(tags), D, np.zeros((D, T)), np.zeros((T, T)))

    @property
    def T(self):
        return len(self.tags)

    def tag_index(self, tag: str) -> int:
        return self.tags.index(tag)

    def features(self, sentence: str) -> list[tuple[int, ...]]:
        feats = self._feat_cache.get(sentence)
        if feats is None:
            feats = [featurize(sentence, i, self.D) for i in range(len(sentence))]
            self._feat_cache[sentence] = feats
        return feats

    def emissions(self, sentence: str) -> np.ndarray:
        return np.array([self.W[list(f)].sum(axis=0) for f in self.features(sentence)]).reshape(-1, self.T)


def crf_log_likelihood(sentence: str, gold_tags, params: CrfParams):
    """Returns ``(nll, grads)``; ``grads["W"]`` maps feature id -> gradient row."""
    tags = list(gold_tags)
    if tags and isinstance(tags[0], str):
        validate_bio(tags)
        tags = [params.tag_index(t) for t in tags]
    if len(tags) != len(sentence):
        raise DataError(f"{len(tags)} tags for a sentence of length {len(sentence)}")
    nll, d_em, d_tr = crf_nll(params.emissions(sentence), params.trans, tags)
    d_w: dict[int, np.ndarray] = {}
    for t, feats in enumerate(params.features(sentence)):
        for f in feats:
            if f in d_w:
                d_w[f] = d_w[f] + d_em[t]
            else:
                d_w[f] = d_em[t].copy()
    return nll, {"W": d_w, "trans": d_tr}


def viterbi_decode(sentence: str, params: CrfParams) -> list[str]:
    if not sentence:
        return []
    return [params.tags[i] for i in viterbi(params.emissions(sentence), params.trans)]


def train_crf(corpus, cfg: CrfConfig | None = None):
    """Full-batch gradient descent on the summed NLL of ``(sentence, tags)`` pairs.

    Returns ``(params, loss trace)``; weights start at zero so training is
    deterministic.
    """
    cfg = cfg or CrfConfig()
    corpus = [(s, list(t)) for s, t in corpus if s]
    if not corpus:
        raise DataError("CRF training corpus is empty")
    tags = bio_tags(cfg.labels)
    params = CrfParams.zeros(tags, cfg.D)
    encoded = []
    for sentence, seq in corpus:
        validate_bio(seq)
        try:
            encoded.append((sentence, [params.tag_index(t) for t in seq]))
        except ValueError:
            raise DataError(f"tag outside label set in {sentence!r}") from None
    trace = []
    for epoch in range(cfg.epochs):
        total = 0.0
        grad_w: dict[int, np.ndarray] = {}
        grad_t = np.zeros_like(params.trans)
        for sentence, seq in encoded:
            nll, grads = crf_log_likelihood(sentence, seq, params)
            total += nll
            grad_t += grads["trans"]
            for f, row in grads["W"].items():
                if f in grad_w:
                    grad_w[f] += row
                else:
                    grad_w[f] = row.copy()
        if not math.isfinite(total):
            raise TrainingError("CRF loss diverged", epoch)
        for f in sorted(grad_w):
            params.W[f] -= cfg.lr * grad_w[f]
        params.trans -= cfg.lr * grad_t
        trace.append(total)
    return params, trace


def tag_accuracy(params: CrfParams, corpus) -> float:
    correct = total = 0
    for sentence, gold in corpus:
        pred = viterbi_decode(sentence, params)
        correct += sum(p == g for p, g in zip(pred, gold))
        total += len(gold)
    return correct / total if total else float("nan")


def save_crf(path, params: CrfParams):
    meta = {"kind": "crf", "tags": params.tags, "D": params.D}
    checkpoint.save(path, {"crf.W": params.W, "crf.trans": params.trans}, meta)


def load_crf(path) -> CrfParams:
    meta, arrays = checkpoint.load(path)
    if meta.get("kind") != "crf":
        raise DataError(f"{path} is not a CRF checkpoint")
    return CrfParams(meta["tags"], meta["D"], arrays["crf.W"], arrays["crf.trans"])


# ---------------------------------------------------------------------------
# gazetteer and tagging front end
# ---------------------------------------------------------------------------


class Gazetteer:
    def __init__(self, entries: dict[str, str] | None = None):
        self.entries = dict(entries or {})
        self.max_len = max((len(k) for k in self.entries), default=0)

    def match(self, sent_idx: int, sentence: str) -> list[Mention]:
        """Leftmost-longest, non-overlapping matches."""
        out = []
        i = 0
        while i < len(sentence):
            for length in range(min(self.max_len, len(sentence) - i), 0, -1):
                surface = sentence[i:i + length]
                if surface in self.entries:
                    out.append(Mention(sent_idx, i, i + length, surface, self.entries[surface]))
                    i += length
                    break
            else:
                i += 1
        return out

    @classmethod
    def read(cls, path) -> "Gazetteer":
        """``surface<TAB>label_type`` per line."""
        entries = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                parts = line.split("\t")
                if len(parts) != 2 or not parts[0]:
                    raise DataError(f"{path}:{lineno}: expected surface<TAB>label_type")
                entries[parts[0]] = parts[1]
        return cls(entries)

    def write(self, path):
        Path(path).write_text("".join(f"{s}\t{l}\n" for s, l in self.entries.items()), encoding="utf-8")


def tag(sentence: str, strategy: str, sent_idx: int = 0, crf: CrfParams | None = None,
        gazetteer: Gazetteer | None = None, gold=None) -> list[Mention]:
    """Mentions in one sentence using ``strategy`` in {crf, gazetteer, gold}."""
    if strategy == "crf":
        if crf is None:
            raise DataError("crf strategy needs trained CRF parameters")
        return mentions_from_tags(sent_idx, sentence, viterbi_decode(sentence, crf))
    if strategy == "gazetteer":
        return (gazetteer or Gazetteer()).match(sent_idx, sentence)
    if strategy == "gold":
        mentions = list(gold or ())
        padded = [""] * sent_idx + [sentence]
        for m in mentions:
            if m.sent != sent_idx:
                raise DataError(f"gold mention {m.text!r} belongs to sentence {m.sent}, not {sent_idx}")
            m.validate(padded)
        return mentions
    raise ValueError(f"unknown tagging strategy {strategy!r}")


def tag_document(doc: Document, strategy: str, crf=None, gazetteer=None) -> list[Mention]:
    if strategy == "gold":
        if doc.mentions is None:
            raise DataError(f"{doc.doc_id}: gold strategy requires mentions")
        for m in doc.mentions:
            m.validate(doc.sentences)
        return list(doc.mentions)
    out = []
    for i, sentence in enumerate(doc.sentences):
        out += tag(sentence, strategy, i, crf=crf, gazetteer=gazetteer)
    return out


def corpus_from_documents(docs) -> list[tuple[str, list[str]]]:
    """Sentence/BIO pairs from documents carrying gold mentions."""
    corpus = []
    for doc in docs:
        if doc.mentions is None:
            raise DataError(f"{doc.doc_id}: CRF training needs gold mentions")
        for i, sentence in enumerate(doc.sentences):
            corpus.append((sentence, mentions_to_tags(sentence, [m for m in doc.mentions if m.sent == i])))
    return corpus
