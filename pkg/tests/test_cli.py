import json

import pytest

from kgdee.cli import main
from kgdee.docs import Document, read_jsonl, write_jsonl
from kgdee.fixtures import write_fixture_bundle

FAST = ["--set", "decode.epochs=3", "--set", "encode.d_w=8", "--set", "embed.F=4"]


@pytest.fixture(scope="module")
def bundle(tmp_path_factory):
    return write_fixture_bundle(tmp_path_factory.mktemp("fx"))


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_usage_errors(capsys):
    assert run(capsys)[0] == 1
    assert run(capsys, "kg", "frobnicate")[0] == 1
    assert run(capsys, "--version")[0] == 0
    code, _, err = run(capsys, "--set", "embed.F=0", "fixtures", "--out", "/tmp/unused")
    assert code == 2 and "positive integer" in err


def test_kg_build_and_paths(bundle, capsys, tmp_path):
    cache = tmp_path / "kg.json"
    code, out, _ = run(capsys, "--config", bundle["config.json"], "kg", "build", "--cache", cache)
    assert code == 0 and cache.exists() and "ShareHolder" in out
    code, out, _ = run(capsys, "--config", bundle["config.json"], "kg", "paths", "--from", 0, "--to", 1)
    assert code == 0 and len(out.splitlines()[0].split()) == 3 * 7
    code, _, err = run(capsys, "--config", bundle["config.json"], "kg", "paths", "--from", 0, "--to", 10_000)
    assert code == 2 and "not in the graph" in err


def test_embed_train_and_export(bundle, capsys, tmp_path):
    ckpt, vec = tmp_path / "e.ckpt", tmp_path / "e.tsv"
    graph = ["--entities", bundle["separable_entities.tsv"], "--triples", bundle["separable_triples.tsv"]]
    code, out, _ = run(capsys, "--set", "embed.epochs=40", "embed", "train", *graph, "--out", ckpt,
                       "--heldout", bundle["separable_heldout.tsv"])
    assert code == 0 and "held-out accuracy" in out and out.startswith("epoch 0 loss")
    code, out, _ = run(capsys, "embed", "export", *graph, "--checkpoint", ckpt, "--out", vec)
    assert code == 0 and len(vec.read_text().splitlines()) == 30


def test_label_modes(bundle, capsys, tmp_path):
    out_t, out_d = tmp_path / "t.jsonl", tmp_path / "d.jsonl"
    code, out, _ = run(capsys, "label", "template", "--corpus", bundle["ds_target.jsonl"], "--out", out_t,
                       "--templates", bundle["templates.txt"])
    assert code == 0 and "precision 1.0000" in out
    code, out, _ = run(capsys, "label", "ds", "--corpus", bundle["ds_target.jsonl"], "--out", out_d,
                       "--templates", bundle["templates.txt"], "--source", bundle["ds_source.jsonl"])
    assert code == 0 and all(e.source == "ds" for d in read_jsonl(out_d) for e in d.events)
    code, _, err = run(capsys, "label", "ds", "--corpus", bundle["ds_target.jsonl"], "--out", out_d,
                       "--templates", bundle["templates.txt"], "--source", bundle["ds_target.jsonl"])
    assert code == 2 and "share documents" in err
    assert run(capsys, "label", "template", "--corpus", bundle["ds_target.jsonl"], "--out", out_t)[0] == 1


def test_dee_train_extract_evaluate(bundle, capsys, tmp_path):
    model, pred, report = tmp_path / "m.ckpt", tmp_path / "p.jsonl", tmp_path / "r.json"
    code, out, _ = run(capsys, *FAST, "dee", "train", "--corpus", bundle["dee_train.jsonl"], "--out", model)
    assert code == 0 and "training f1" in out and model.exists()
    code, out, _ = run(capsys, *FAST, "dee", "extract", "--model", model, "--corpus", bundle["dee_train.jsonl"],
                       "--out", pred)
    assert code == 0 and "extracted" in out
    ids = [d.doc_id for d in read_jsonl(pred)]
    assert ids == sorted(ids)
    code, out, _ = run(capsys, "evaluate", "--pred", pred, "--gold", bundle["dee_train.jsonl"], "--json", report)
    assert code == 0 and "[multi-event]" in out
    assert set(json.loads(report.read_text())) == {"total", "single", "multi"}


def test_training_is_deterministic(bundle, capsys, tmp_path):
    outs = []
    for name in ("a", "b"):
        code, out, _ = run(capsys, *FAST, "dee", "train", "--corpus", bundle["dee_train.jsonl"],
                           "--out", tmp_path / f"{name}.ckpt")
        assert code == 0
        outs.append(out)
    assert outs[0] == outs[1]
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_gold_against_gold_scores_one(bundle, capsys):
    code, out, _ = run(capsys, "evaluate", "--pred", bundle["dee_train.jsonl"], "--gold", bundle["dee_train.jsonl"])
    assert code == 0
    total = [l for l in out.splitlines() if l.strip().startswith("total")][0]
    assert total.split()[1:4] == ["1.0000"] * 3


def test_empty_corpus(capsys, tmp_path):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    code, _, err = run(capsys, "dee", "train", "--corpus", empty, "--out", tmp_path / "m.ckpt")
    assert code == 2 and "empty" in err
    code, out, _ = run(capsys, "evaluate", "--pred", empty, "--gold", empty)
    assert code == 0 and "N/A" in out


def test_gold_without_events_is_a_data_error(capsys, tmp_path):
    path = tmp_path / "g.jsonl"
    write_jsonl(path, [Document("x", ["s"])])
    code, _, err = run(capsys, "evaluate", "--pred", path, "--gold", path)
    assert code == 2 and "without events" in err


def test_branch_cap_is_a_numeric_error(bundle, capsys, tmp_path):
    loose = ["--set", "decode.branch_cap=1", "--set", "decode.type_threshold=0.001",
             "--set", "decode.select_threshold=0.001", "--set", "decode.epochs=0"]
    code, _, err = run(capsys, *loose, "dee", "train", "--corpus", bundle["dee_train.jsonl"],
                       "--out", tmp_path / "m.ckpt")
    assert code == 3 and "exceeds 1 paths" in err


def test_extract_on_empty_corpus(bundle, capsys, tmp_path):
    model, empty, out = tmp_path / "m.ckpt", tmp_path / "empty.jsonl", tmp_path / "p.jsonl"
    empty.write_text("")
    assert run(capsys, *FAST, "dee", "train", "--corpus", bundle["dee_train.jsonl"], "--out", model)[0] == 0
    code, _, _ = run(capsys, "dee", "extract", "--model", model, "--corpus", empty, "--out", out)
    assert code == 0 and out.read_text() == ""


def test_kg_cache_and_embedding_checkpoint_are_reproducible(bundle, capsys, tmp_path):
    for name in ("a", "b"):
        assert run(capsys, "--config", bundle["config.json"], "kg", "build", "--cache", tmp_path / f"{name}.json")[0] == 0
        assert run(capsys, "--config", bundle["config.json"], "--set", "embed.epochs=3", "embed", "train",
                   "--out", tmp_path / f"{name}.ckpt")[0] == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_disconnected_pair_prints_padding(capsys, tmp_path):
    (tmp_path / "e.tsv").write_text("".join(f"{i}\tn{i}\tcompany\n" for i in range(4)), encoding="utf-8")
    (tmp_path / "t.tsv").write_text("0\tBranch\t1\n", encoding="utf-8")
    code, out, _ = run(capsys, "kg", "paths", "--entities", tmp_path / "e.tsv", "--triples", tmp_path / "t.tsv",
                       "--from", 0, "--to", 3, "--k", 2)
    assert code == 0 and out.split() == ["-1"] * 14
