import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kgdee.docs import Mention
from kgdee.encode import (
    EncoderConfig,
    TokenTable,
    doc_attend,
    doc_summary,
    encode_backward,
    encode_document,
    encode_label,
    group_by_name,
    init_encoder_params,
    merge_mentions,
    pool_span,
)
from kgdee.errors import DimensionError, DomainError
from kgdee.kernel import ParamSet, finite_diff_check


def test_pool_span_examples():
    assert pool_span([[1.0, 5.0], [3.0, -2.0]]).tolist() == [3.0, 5.0]
    assert pool_span([[0.5, 0.25]]).tolist() == [0.5, 0.25]
    with pytest.raises(DomainError):
        pool_span(np.zeros((0, 3)))


def test_encode_label_examples():
    e = np.array([1.0, 2.0, 3.0])
    out = encode_label(e, [1.0, 0.0], np.zeros((3, 2)))
    centred = e - e.mean()
    assert np.allclose(out, centred / np.sqrt(centred.var() + 1e-5))
    W = np.array([[1.0, 0.0], [0.0, 0.0], [-1.0, 0.0]])
    assert np.allclose(encode_label(e, [0.0, 1.0], W), out)  # the second label has a zero column
    with pytest.raises(DimensionError):
        encode_label(e, [1.0, 0.0, 0.0], np.zeros((3, 2)))


def block_params(d=3, depth=1, seed=0):
    from kgdee.blocks import init_block

    p = ParamSet()
    rng = np.random.default_rng(seed)
    for layer in range(depth):
        init_block(p, f"doc.{layer}", d, 2 * d, rng, scale=0.8)
    return p


@given(st.integers(1, 6), st.integers(0, 1000))
def test_doc_attend_is_permutation_equivariant(n, seed):
    rng = np.random.default_rng(seed)
    p = block_params(depth=2, seed=seed % 7)
    x = rng.normal(size=(n, 3))
    perm = rng.permutation(n)
    assert np.allclose(doc_attend(x, p, 2)[perm], doc_attend(x[perm], p, 2), atol=1e-12)


def test_doc_attend_rejects_empty():
    with pytest.raises(DomainError):
        doc_attend(np.zeros((0, 3)), block_params())


def test_group_and_merge():
    keys, groups = group_by_name(["甲公司", "乙", " 甲公司  ", "乙"])
    assert keys == ["甲公司", "乙"] and groups == [[0, 2], [1, 3]]
    emb = np.array([[1.0, 0.0], [2.0, 2.0], [0.0, 4.0], [3.0, 1.0]])
    merged, _ = merge_mentions(emb, ["甲公司", "乙", " 甲公司  ", "乙"])
    assert merged.tolist() == [[1.0, 4.0], [3.0, 2.0]]
    merged, groups = merge_mentions(emb, ["a", "b", "c", "d"], normalize=lambda s: "x")
    assert groups == [[0, 1, 2, 3]] and merged.tolist() == [[3.0, 4.0]]
    assert merge_mentions(np.zeros((0, 2)), [])[0].shape == (0, 2)


def test_doc_summary():
    assert doc_summary([[1.0, -1.0], [0.0, 2.0]]).tolist() == [1.0, 2.0]
    with pytest.raises(DomainError):
        doc_summary(np.zeros((0, 2)))


def test_token_table():
    from kgdee.docs import Document

    vocab = TokenTable.from_documents([Document("a", ["乙甲", "甲"])])
    assert len(vocab) == 3 and vocab.chars[0] == "<unk>"
    assert vocab.ids("甲乙丙").tolist() == [vocab.index["甲"], vocab.index["乙"], 0]


SENTENCES = ["甲公司质押乙", "丙与甲公司"]
MENTIONS = [Mention(0, 0, 3, "甲公司", "company"), Mention(0, 5, 6, "乙", "company"),
            Mention(1, 0, 1, "丙", "person"), Mention(1, 2, 5, "甲公司", "company")]


def encoder(d_w=4, depth=1, token_depth=1):
    cfg = EncoderConfig(d_w=d_w, depth=depth, token_depth=token_depth)
    vocab = TokenTable(set("".join(SENTENCES)))
    params = ParamSet()
    init_encoder_params(params, len(vocab), cfg, np.random.default_rng(0))
    return params, vocab, cfg


def test_encode_document_shapes_and_merging():
    params, vocab, cfg = encoder()
    ctx, _ = encode_document(params, vocab, cfg, SENTENCES, MENTIONS + [Mention(5, 0, 1, "x", "company")])
    assert ctx.entity_names == ["甲公司", "乙", "丙"]
    assert [len(m) for m in ctx.entity_mentions] == [2, 1, 1]
    assert ctx.entities.shape == (3, 4) and ctx.sentences.shape == (2, 4)
    assert np.array_equal(ctx.summary, ctx.sentences.max(axis=0))
    assert len(ctx.dropped_mentions) == 1


def test_encode_truncates_long_documents():
    params, vocab, _ = encoder()
    cfg = EncoderConfig(d_w=4, N_s=1, N_w=3)
    ctx, _ = encode_document(params, vocab, cfg, SENTENCES, MENTIONS)
    assert ctx.sentences.shape[0] == 1
    assert ctx.entity_names == ["甲公司"]
    with pytest.raises(DomainError):
        encode_document(params, vocab, cfg, [], [])


def test_encode_is_deterministic():
    params, vocab, cfg = encoder()
    a, _ = encode_document(params, vocab, cfg, SENTENCES, MENTIONS)
    b, _ = encode_document(params, vocab, cfg, SENTENCES, MENTIONS)
    assert np.array_equal(a.entities, b.entities) and np.array_equal(a.summary, b.summary)


@pytest.mark.parametrize("depth,token_depth", [(1, 1), (2, 0)])
def test_encoder_gradients_match_differences(depth, token_depth):
    params, vocab, cfg = encoder(depth=depth, token_depth=token_depth)
    rng = np.random.default_rng(5)
    w_e, w_s, w_t = rng.normal(size=(3, 4)), rng.normal(size=(2, 4)), rng.normal(size=4)

    def loss(p):
        ctx, cache = encode_document(p, vocab, cfg, SENTENCES, MENTIONS)
        encode_backward(p, cache, w_e, w_s, w_t)
        return float((ctx.entities * w_e).sum() + (ctx.sentences * w_s).sum() + ctx.summary @ w_t)

    report = finite_diff_check(loss, params)
    assert report.passed, str(report)


def test_encoder_without_mentions():
    params, vocab, cfg = encoder()
    ctx, cache = encode_document(params, vocab, cfg, SENTENCES, [])
    assert ctx.num_entities == 0
    encode_backward(params, cache, np.zeros((0, 4)), None, np.ones(4))
    assert params.g("tok.emb").any() and not params.g("label.W_l").any()
