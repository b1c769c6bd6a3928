import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kgdee.errors import DataError, IngestError
from kgdee.fixtures import random_graph, reference_graph
from kgdee.kg import MAIN_RELATIONS, REFERENCE_COUNTS, EntityRecord, KnowledgeGraph, ingest, resolve


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


@pytest.fixture
def entity_file(tmp_path):
    rows = ["0\t华泰证券股份有限公司\tcompany\t华泰|华泰证券", "1\t张伟\tperson\t", "2\t上海甲银行\tcompany\t",
            "3\t乙集团\tcompany\t", "4\t孤立公司\tcompany\t"]
    return write(tmp_path / "e.tsv", "\n".join(rows) + "\n")


def test_empty_triple_file(entity_file, tmp_path):
    g = ingest(entity_file, write(tmp_path / "t.tsv", ""))
    assert g.num_entities == 5 and g.triples == []
    assert g.num_relations == len(MAIN_RELATIONS)


def test_histogram_matches_hand_count(tmp_path):
    entities = write(tmp_path / "e.tsv", "".join(f"{i}\tE{i}\tcompany\t\n" for i in range(10)))
    # 20 triples: Branch 5, Creditor 1, ShareHolder 4, Invest 2, LegalPerson 3, Pledge 3, ManagingMember 2
    plan = ["Branch"] * 5 + ["Creditor"] + ["ShareHolder"] * 4 + ["Invest"] * 2 + ["LegalPerson"] * 3 \
        + ["Pledge"] * 3 + ["ManagingMember"] * 2
    pairs = [(h, t) for h in range(10) for t in range(10) if h != t]
    lines = [f"{h}\t{rel}\t{t}\n" for (h, t), rel in zip(pairs, plan)]
    g = ingest(entities, write(tmp_path / "t.tsv", "".join(lines)))
    assert g.relation_counts() == {"Branch": 5, "Creditor": 1, "ShareHolder": 4, "Invest": 2,
                                   "LegalPerson": 3, "Pledge": 3, "ManagingMember": 2}
    report = g.report()
    assert report.triple_count == 20 and report.entity_count == 10
    assert "Branch" in report.histogram() and "25.00%" in report.histogram()


def test_dangling_id_names_the_line(entity_file, tmp_path):
    triples = write(tmp_path / "t.tsv", "0\tBranch\t1\n0\tPledge\t9\n")
    with pytest.raises(IngestError) as exc:
        ingest(entity_file, triples)
    assert exc.value.line == 2 and ":2:" in str(exc.value)


def test_duplicates_are_dropped_with_warning(entity_file, tmp_path, caplog):
    triples = write(tmp_path / "t.tsv", "0\tBranch\t1\n0\tBranch\t1\n1\tPledge\t2\n")
    g = ingest(entity_file, triples)
    assert len(g.triples) == 2 and g.duplicates == 1
    assert "duplicate" in caplog.text


def test_self_relations_rejected_by_default(entity_file, tmp_path):
    triples = write(tmp_path / "t.tsv", "1\tBranch\t1\n")
    with pytest.raises(IngestError):
        ingest(entity_file, triples)
    assert len(ingest(entity_file, triples, allow_self_relations=True).triples) == 1


@pytest.mark.parametrize("row", ["x\tA\tcompany\t", "0\t\tcompany\t", "0\tA\tplanet\t", "0\tA"])
def test_malformed_entity_rows(tmp_path, row):
    with pytest.raises(IngestError):
        ingest(write(tmp_path / "e.tsv", row + "\n"), write(tmp_path / "t.tsv", ""))


def test_resolve_canonical_alias_and_unknown(entity_file, tmp_path):
    aliases = write(tmp_path / "a.tsv", "甲行\t上海甲银行\n")
    g = ingest(entity_file, write(tmp_path / "t.tsv", ""), alias_file=aliases)
    assert resolve("华泰证券股份有限公司", g) == 0
    assert resolve("华泰", g) == 0 and resolve("华泰证券", g) == 0
    assert resolve("甲行", g) == 2 and resolve("甲银行", g) == 2
    assert resolve("不存在", g) is None


def test_export_and_reingest_round_trip(entity_file, tmp_path):
    g = ingest(entity_file, write(tmp_path / "t.tsv", "0\tBranch\t1\n3\tPledge\t2\n1\tInvest\t3\n"))
    g.export(tmp_path / "e2.tsv", tmp_path / "t2.tsv")
    again = ingest(tmp_path / "e2.tsv", tmp_path / "t2.tsv")
    assert set(again.triples) == set(g.triples)
    assert [e.aliases for e in again.entities] == [e.aliases for e in g.entities]


def test_json_cache_is_deterministic_and_round_trips(entity_file, tmp_path):
    triples = write(tmp_path / "t.tsv", "0\tBranch\t1\n3\tPledge\t2\n")
    g = ingest(entity_file, triples)
    assert g.to_json() == ingest(entity_file, triples).to_json()
    again = KnowledgeGraph.from_json(g.to_json())
    assert again.triples == g.triples and again.to_json() == g.to_json()


def test_neighbors(entity_file, tmp_path):
    g = ingest(entity_file, write(tmp_path / "t.tsv", "0\tBranch\t1\n2\tPledge\t0\n"))
    assert g.neighbors(4) == []
    nb = g.neighbors(0)
    assert [(n.node, n.relation, n.outgoing) for n in nb] == [(1, 0, True), (2, 5, False)]
    with pytest.raises(DataError):
        g.neighbors(99)


def test_degree_equals_adjacency_row_sum():
    g = random_graph(9, 20, 3, np.random.default_rng(0))
    adj = np.zeros((9, 9))
    for h, _, t in g.triples:
        adj[h, t] += 1
    sym = adj + adj.T
    for i in range(9):
        assert len(g.neighbors(i)) == sym[i].sum()


def five_node_graph():
    # routes 0->4: direct Pledge, 0-1-4, 0-2-3-4
    triples = [(0, 5, 4), (0, 0, 1), (1, 2, 4), (0, 3, 2), (2, 3, 3), (3, 1, 4)]
    return KnowledgeGraph([EntityRecord(i, f"n{i}") for i in range(5)], triples)


def test_k_shortest_examples():
    g = five_node_graph()
    paths = g.k_shortest_paths(0, 4, k=3)
    assert [len(p) for p in paths] == [1, 2, 3]
    assert paths[0].nodes == (0, 4)
    two = g.k_shortest_paths(0, 4, k=2)
    assert [p.nodes for p in two] == [(0, 4), (0, 1, 4)]
    assert g.k_shortest_paths(0, 0) == []
    lonely = KnowledgeGraph([EntityRecord(i, f"n{i}") for i in range(3)], [(0, 0, 1)])
    assert lonely.k_shortest_paths(0, 2) == []
    with pytest.raises(ValueError):
        g.k_shortest_paths(0, 4, k=0)


def brute_force_paths(g, a, b, max_len):
    edges = [(t.head, t.tail, t) for t in g.triples] + [(t.tail, t.head, t) for t in g.triples]
    out = []
    for length in range(1, max_len + 1):
        for seq in itertools.product(edges, repeat=length):
            nodes = [a]
            ok = True
            for u, v, _ in seq:
                if u != nodes[-1] or v in nodes:
                    ok = False
                    break
                nodes.append(v)
            if ok and nodes[-1] == b:
                out.append((tuple(nodes), tuple(t for _, _, t in seq)))
    return sorted(set(out), key=lambda p: (len(p[1]), p[0], p[1]))


def test_k_shortest_matches_product_enumeration():
    g = five_node_graph()
    expected = brute_force_paths(g, 0, 4, 3)[:2]
    assert [(p.nodes, p.triples) for p in g.k_shortest_paths(0, 4, k=2, max_len=3)] == expected


@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 5))
def test_paths_are_simple_bounded_and_sorted(seed, k, max_len):
    rng = np.random.default_rng(seed)
    g = random_graph(8, 14, 3, rng)
    a, b = (int(x) for x in rng.integers(0, 8, 2))
    paths = g.k_shortest_paths(a, b, k, max_len)
    assert len(paths) <= k
    lengths = [len(p) for p in paths]
    assert lengths == sorted(lengths) and all(1 <= n <= max_len for n in lengths)
    for p in paths:
        assert len(set(p.nodes)) == len(p.nodes) and p.nodes[0] == a and p.nodes[-1] == b
        for (u, v), t in zip(zip(p.nodes, p.nodes[1:]), p.triples):
            assert {t.head, t.tail} == {u, v} and g.has_triple(*t)


def test_reference_fixture_histogram_matches_declared_counts():
    g = reference_graph(scale=1000)
    expected = {name: max(1, round(REFERENCE_COUNTS[name] / 1000)) for name in MAIN_RELATIONS}
    assert g.relation_counts() == expected
    assert sum(REFERENCE_COUNTS.values()) == 433_890
