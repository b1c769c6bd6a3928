"""Synthetic graphs, documents and templates with known ground truth."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .docs import Argument, Document, EventRecord, Mention, write_jsonl
from .dslabel import parse_templates
from .kg import MAIN_RELATIONS, REFERENCE_COUNTS, EntityRecord, KnowledgeGraph, write_entities
from .schema import DEFAULT_SCHEMAS, schema_map, write_schemas

# ---------------------------------------------------------------------------
# graphs
# ---------------------------------------------------------------------------


def random_graph(n: int, m: int, S: int, rng: np.random.Generator, self_loops=False) -> KnowledgeGraph:
    entities = [EntityRecord(i, f"n{i}") for i in range(n)]
    triples = set()
    for _ in range(m):
        h, t = (int(x) for x in rng.integers(0, n, 2))
        if h == t and not self_loops:
            continue
        triples.add((h, int(rng.integers(0, S)), t))
    return KnowledgeGraph(entities, sorted(triples), [f"r{i}" for i in range(S)],
                          allow_self_relations=self_loops)


def reference_graph(scale: int = 1000, n_entities: int = 200, seed: int = 0) -> KnowledgeGraph:
    """Relation frequencies proportional to ``REFERENCE_COUNTS``."""
    rng = np.random.default_rng(seed)
    entities = [EntityRecord(i, f"实体{i}") for i in range(n_entities)]
    triples = set()
    for r, name in enumerate(MAIN_RELATIONS):
        want = max(1, round(REFERENCE_COUNTS[name] / scale))
        while sum(1 for t in triples if t[1] == r) < want:
            h, t = (int(x) for x in rng.integers(0, n_entities, 2))
            if h != t:
                triples.add((h, r, t))
    return KnowledgeGraph(entities, sorted(triples))


def separable_graph(seed: int = 0, holdout: float = 0.2):
    """30 nodes: companies 0-14 link by Branch, persons 15-29 hold shares in companies.

    The relation is determined by the node kinds, so a model that separates
    the two kinds classifies held-out edges perfectly.  Returns
    ``(training graph, held-out triples)``.
    """
    rng = np.random.default_rng(seed)
    companies, persons = list(range(15)), list(range(15, 30))
    triples = set()
    for c in companies:
        for d in rng.choice([x for x in companies if x != c], 2, replace=False):
            triples.add((c, 0, int(d)))
    for p in persons:
        for c in rng.choice(companies, 2, replace=False):
            triples.add((p, 1, int(c)))
    triples = sorted(triples)
    rng.shuffle(triples)
    cut = int(len(triples) * holdout)
    held, train = triples[:cut], triples[cut:]
    entities = [EntityRecord(i, f"公司{i}" if i < 15 else f"股东{i}", "company" if i < 15 else "person")
                for i in range(30)]
    return KnowledgeGraph(entities, train, ["Branch", "ShareHolder"]), [tuple(t) for t in held]


# ---------------------------------------------------------------------------
# document builder
# ---------------------------------------------------------------------------


def build_document(doc_id: str, sentences, events, schemas=DEFAULT_SCHEMAS) -> Document:
    """``sentences``: lists of literal strings and ``(text, label)`` mentions.

    ``events``: ``(type, {role: text})``; an argument's span is the first
    mention carrying that text.
    """
    texts, mentions = [], []
    for s_idx, parts in enumerate(sentences):
        buf = ""
        for part in parts:
            if isinstance(part, tuple):
                text, label = part
                mentions.append(Mention(s_idx, len(buf), len(buf) + len(text), text, label))
                buf += text
            else:
                buf += part
        texts.append(buf)
    first = {}
    for m in mentions:
        first.setdefault(m.text, (m.sent, m.start, m.end))
    by_type = schema_map(schemas)
    records = []
    for event_type, values in events:
        args = dict.fromkeys(by_type[event_type].roles)
        for role, text in values.items():
            if role not in args:
                raise KeyError(f"{role} is not a role of {event_type}")
            args[role] = Argument(text, first.get(text))
        records.append(EventRecord(event_type, args))
    doc = Document(doc_id, texts, mentions, records)
    doc.validate()
    return doc


P, C, I, D, SH, R, A = "person", "company", "institution", "date", "shares", "ratio", "amount"


def dee_fixture() -> list[Document]:
    """Fifteen announcements covering all six types, with multi-event and multi-type documents."""
    docs = []
    add = lambda *a: docs.append(build_document(*a))  # noqa: E731

    add("d01", [
        [("李明", P), "将其持有的", ("800万股", SH), "质押给", ("中信证券", C), "。"],
        [("李明", P), "共持有", ("2000万股", SH), "，占总股本", ("5%", R), "。"],
        ["质押日期为", ("2019年3月1日", D), "。"],
    ], [("EP", {"Pledger": "李明", "PledgedShares": "800万股", "Pledgee": "中信证券",
                "TotalHoldingShares": "2000万股", "TotalHoldingRatio": "5%", "Date": "2019年3月1日"})])
    # one pledger, two pledges: the path branches at the second field
    add("d02", [
        [("张伟", P), "将其持有的", ("1000万股", SH), "质押给", ("甲银行", C), "。"],
        [("张伟", P), "将其持有的", ("500万股", SH), "质押给", ("乙银行", C), "。"],
        [("张伟", P), "共持有", ("3000万股", SH), "，占总股本", ("10%", R), "，累计质押", ("1500万股", SH), "。"],
        ["上述质押日期为", ("2019年5月8日", D), "。"],
    ], [
        ("EP", {"Pledger": "张伟", "PledgedShares": "1000万股", "Pledgee": "甲银行", "TotalHoldingShares": "3000万股",
                "TotalHoldingRatio": "10%", "TotalPledgedShares": "1500万股", "Date": "2019年5月8日"}),
        ("EP", {"Pledger": "张伟", "PledgedShares": "500万股", "Pledgee": "乙银行", "TotalHoldingShares": "3000万股",
                "TotalHoldingRatio": "10%", "TotalPledgedShares": "1500万股", "Date": "2019年5月8日"}),
    ])
    add("d03", [
        [("王芳", P), "持有的", ("600万股", SH), "被", ("上海市第一中级人民法院", I), "冻结。"],
        [("王芳", P), "共持有", ("1200万股", SH), "，占总股本", ("3%", R), "。"],
        ["冻结起始日为", ("2018年7月2日", D), "，解冻日为", ("2019年7月1日", D), "。"],
    ], [("EF", {"EquityHolder": "王芳", "FrozeShares": "600万股", "LegalInstitution": "上海市第一中级人民法院",
                "TotalHoldingShares": "1200万股", "TotalHoldingRatio": "3%", "Date": "2018年7月2日",
                "UnfrozeDate": "2019年7月1日"})])
    add("d04", [
        [("东方电气", C), "以集中竞价方式回购股份", ("300万股", SH), "。"],
        ["最高成交价为", ("12.5元", A), "，最低成交价为", ("10.2元", A), "。"],
        ["回购总金额为", ("3500万元", A), "，截至", ("2019年6月30日", D), "。"],
    ], [("ER", {"CompanyName": "东方电气", "HighestTradingPrice": "12.5元", "LowestTradingPrice": "10.2元",
                "RepurchasedShares": "300万股", "ClosingDate": "2019年6月30日", "RepurchaseAmount": "3500万元"})])
    add("d05", [
        [("赵强", P), "于", ("2019年4月10日", D), "增持公司股份", ("50万股", SH), "。"],
        ["增持均价为", ("8.3元", A), "，增持后持有", ("450万股", SH), "。"],
    ], [("EO", {"EquityHolder": "赵强", "TradingShares": "50万股", "Date": "2019年4月10日",
                "LaterHoldingShares": "450万股", "AveragePrice": "8.3元"})])
    add("d06", [
        [("孙丽", P), "于", ("2019年2月20日", D), "减持公司股份", ("120万股", SH), "。"],
        ["减持均价为", ("15.6元", A), "，减持后持有", ("880万股", SH), "。"],
    ], [("EU", {"EquityHolder": "孙丽", "TradingShares": "120万股", "Date": "2019年2月20日",
                "LaterHoldingShares": "880万股", "AveragePrice": "15.6元"})])
    add("d07", [
        [("甲科技", C), "起诉", ("乙实业", C), "，案件由", ("北京市海淀区人民法院", I), "受理。"],
        ["立案日期为", ("2018年11月5日", D), "。"],
    ], [("LA", {"Plaintiff": "甲科技", "Defendant": "乙实业", "LegalInstitution": "北京市海淀区人民法院",
                "Date": "2018年11月5日"})])
    add("d08", [
        [("丙化工", C), "分别起诉", ("丁贸易", C), "和", ("戊物流", C), "。"],
        ["两案均由", ("深圳市中级人民法院", I), "受理，日期为", ("2019年1月15日", D), "。"],
    ], [
        ("LA", {"Plaintiff": "丙化工", "Defendant": "丁贸易", "LegalInstitution": "深圳市中级人民法院",
                "Date": "2019年1月15日"}),
        ("LA", {"Plaintiff": "丙化工", "Defendant": "戊物流", "LegalInstitution": "深圳市中级人民法院",
                "Date": "2019年1月15日"}),
    ])
    add("d09", [
        [("钱进", P), "于", ("2019年8月1日", D), "增持", ("30万股", SH), "，均价", ("6.1元", A), "。"],
        [("周敏", P), "于", ("2019年8月2日", D), "减持", ("40万股", SH), "，均价", ("6.4元", A), "。"],
    ], [
        ("EO", {"EquityHolder": "钱进", "TradingShares": "30万股", "Date": "2019年8月1日", "AveragePrice": "6.1元"}),
        ("EU", {"EquityHolder": "周敏", "TradingShares": "40万股", "Date": "2019年8月2日", "AveragePrice": "6.4元"}),
    ])
    add("d10", [
        [("刘洋", P), "将其持有的", ("200万股", SH), "质押给", ("招商银行", C), "。"],
        ["公司控股股东为", ("华远集团", C), "，质押日期为", ("2019年9月9日", D), "。"],
    ], [("EP", {"Pledger": "刘洋", "PledgedShares": "200万股", "Pledgee": "招商银行", "Date": "2019年9月9日"})])
    add("d11", [
        [("陈刚", P), "所持", ("900万股", SH), "被", ("杭州市中级人民法院", I), "司法冻结。"],
        ["冻结日期为", ("2018年12月3日", D), "。"],
    ], [("EF", {"EquityHolder": "陈刚", "FrozeShares": "900万股", "LegalInstitution": "杭州市中级人民法院",
                "Date": "2018年12月3日"})])
    add("d12", [
        [("南方航空", C), "累计回购", ("150万股", SH), "，最高价", ("7.7元", A), "，最低价", ("7.1元", A), "。"],
        ["截至", ("2019年10月31日", D), "，支付总金额", ("1100万元", A), "。"],
    ], [("ER", {"CompanyName": "南方航空", "HighestTradingPrice": "7.7元", "LowestTradingPrice": "7.1元",
                "RepurchasedShares": "150万股", "ClosingDate": "2019年10月31日", "RepurchaseAmount": "1100万元"})])
    add("d13", [
        [("黄磊", P), "将", ("100万股", SH), "质押给", ("兴业证券", C), "。"],
        [("黄磊", P), "另有", ("60万股", SH), "被", ("南京市中级人民法院", I), "冻结。"],
        ["日期为", ("2019年11月11日", D), "。"],
    ], [
        ("EF", {"EquityHolder": "黄磊", "FrozeShares": "60万股", "LegalInstitution": "南京市中级人民法院",
                "Date": "2019年11月11日"}),
        ("EP", {"Pledger": "黄磊", "PledgedShares": "100万股", "Pledgee": "兴业证券", "Date": "2019年11月11日"}),
    ])
    add("d14", [
        [("吴昊", P), "于", ("2019年3月5日", D), "减持", ("100万股", SH), "，均价", ("9.1元", A), "，减持后持有",
         ("500万股", SH), "。"],
        [("吴昊", P), "于", ("2019年3月9日", D), "减持", ("80万股", SH), "，均价", ("9.5元", A), "，减持后持有",
         ("420万股", SH), "。"],
    ], [
        ("EU", {"EquityHolder": "吴昊", "TradingShares": "100万股", "Date": "2019年3月5日",
                "LaterHoldingShares": "500万股", "AveragePrice": "9.1元"}),
        ("EU", {"EquityHolder": "吴昊", "TradingShares": "80万股", "Date": "2019年3月9日",
                "LaterHoldingShares": "420万股", "AveragePrice": "9.5元"}),
    ])
    add("d15", [
        [("己地产", C), "起诉", ("庚建设", C), "，由", ("广州市中级人民法院", I), "受理。"],
    ], [("LA", {"Plaintiff": "己地产", "Defendant": "庚建设", "LegalInstitution": "广州市中级人民法院"})])
    return docs


TYPE_MARKERS = {"EF": "冻结", "ER": "回购", "EO": "增持", "EU": "减持", "EP": "质押", "LA": "起诉"}


def type_marker_fixture(n: int = 20, seed: int = 0) -> list[Document]:
    """Documents whose event types are signalled only by marker words in filler text."""
    rng = np.random.default_rng(seed)
    filler = "公司董事会近日收到通知本次事项不影响经营"
    types = list(TYPE_MARKERS)
    by_type = schema_map()
    docs = []
    for i in range(n):
        k = 1 + int(i % 4 == 3)
        chosen = sorted(rng.choice(len(types), k, replace=False))
        sentences = []
        for t in chosen:
            cut = int(rng.integers(2, len(filler) - 2))
            sentences.append(filler[:cut] + TYPE_MARKERS[types[t]] + filler[cut:] + "。")
        events = [EventRecord(types[t], dict.fromkeys(by_type[types[t]].roles)) for t in chosen]
        docs.append(Document(f"t{i:02d}", sentences, [], events))
    return docs


# ---------------------------------------------------------------------------
# distant-supervision corpus
# ---------------------------------------------------------------------------

DS_TEMPLATES = (
    "LA\t{Plaintiff:name}起诉{Defendant:name}，由{LegalInstitution:name}受理，日期为{Date:date}。\n"
    "EP\t{Pledger:name}将其持有的{PledgedShares:number}股质押给{Pledgee:name}，质押日期为{Date:date}。\n"
)

_STEMS = ["恒信", "华泰", "中原", "东海", "新城", "远航", "天成", "金桥", "博远", "宏达", "万通", "瑞丰",
          "嘉禾", "同舟", "启明", "弘毅", "安和", "永盛", "德润", "锦程", "海川", "泰和", "长青", "鼎新",
          "凯旋", "盛世", "华瑞", "信达", "广源", "立诚", "晨光", "星河", "正通", "汇丰", "明德", "春晖"]
_CITIES = ["上海", "北京", "深圳", "杭州", "南京", "广州"]
_INDUSTRY = ["科技", "实业", "化工", "物流", "电子", "能源"]
_COURTS = ["浦东新区", "海淀区", "南山区", "西湖区", "鼓楼区", "天河区"]
_PERSONS = ["张伟", "王芳", "李娜", "刘洋", "陈静", "杨帆", "赵磊", "黄敏", "周杰", "吴昊", "徐丽", "孙涛"]
_BANKS = ["招商银行", "兴业银行", "光大银行", "中信银行", "浦发银行", "民生银行"]


def _date(rng) -> str:
    return f"20{int(rng.integers(15, 20))}年{int(rng.integers(1, 13))}月{int(rng.integers(1, 29))}日"


def _ds_events(rng, n: int):
    """Ground-truth events as role -> (full surface, short surface)."""
    stems = list(rng.permutation(_STEMS))
    out = []
    for i in range(n):
        if i % 2 == 0:
            city, city2 = rng.choice(_CITIES, 2)
            p, d = stems.pop(), stems.pop()
            court = str(rng.choice(_COURTS))
            plaintiff = (f"{city}{p}{rng.choice(_INDUSTRY)}有限公司", None)
            plaintiff = (plaintiff[0], plaintiff[0][len(city):-4])
            defendant_full = f"{city2}{d}{rng.choice(_INDUSTRY)}股份有限公司"
            defendant = (defendant_full, defendant_full[len(city2):-6])
            cfull = f"{_court_city(court)}{court}人民法院"
            out.append(("LA", {"Plaintiff": plaintiff, "Defendant": defendant,
                               "LegalInstitution": (cfull, court), "Date": (_date(rng),) * 2}))
        else:
            person = str(rng.choice(_PERSONS))
            shares = str(int(rng.integers(10, 900)) * 10000)
            bank = str(rng.choice(_BANKS))
            city = str(rng.choice(_CITIES))
            pledgee = (f"{city}{bank}", bank)
            out.append(("EP", {"Pledger": (person, person), "PledgedShares": (shares, shares),
                               "Pledgee": pledgee, "Date": (_date(rng),) * 2}))
    return out


def _court_city(court: str) -> str:
    return {"浦东新区": "上海市", "海淀区": "北京市", "南山区": "深圳市", "西湖区": "杭州市",
            "鼓楼区": "南京市", "天河区": "广州市"}[court]


def _templated(event_type, args, which=0) -> str:
    v = {r: a[which] for r, a in args.items()}
    if event_type == "LA":
        return f"{v['Plaintiff']}起诉{v['Defendant']}，由{v['LegalInstitution']}受理，日期为{v['Date']}。"
    return f"{v['Pledger']}将其持有的{v['PledgedShares']}股质押给{v['Pledgee']}，质押日期为{v['Date']}。"


def _free_form(event_type, args) -> str:
    v = {r: a[1] for r, a in args.items()}
    if event_type == "LA":
        return f"据悉，{v['Plaintiff']}与{v['Defendant']}的合同纠纷已由{v['LegalInstitution']}立案，时间为{v['Date']}。"
    return f"{v['Pledger']}近日办理了股权质押，数量为{v['PledgedShares']}股，质权人为{v['Pledgee']}，办理时间{v['Date']}。"


def _gold_record(doc_sentences, event_type, args, which) -> EventRecord:
    by_type = schema_map()
    record = dict.fromkeys(by_type[event_type].roles)
    for role, surfaces in args.items():
        text = surfaces[which]
        for s_idx, s in enumerate(doc_sentences):
            pos = s.find(text)
            if pos >= 0:
                record[role] = Argument(text, (s_idx, pos, pos + len(text)))
                break
    return EventRecord(event_type, record)


def ds_corpus(seed: int = 0, n_events: int = 24, n_unseen: int = 4):
    """Returns ``(templates, source_docs, target_docs)``.

    Source documents restate every known event through a template with full
    names; they seed the DS graph.  Target documents re-report the known
    events, half through templates with full names and half in free text
    with short names, plus ``n_unseen`` templated events absent from the
    source set.  Target documents carry gold events.
    """
    rng = np.random.default_rng(seed)
    templates = parse_templates(DS_TEMPLATES)
    known = _ds_events(rng, n_events + n_unseen)
    unseen, known = known[n_events:], known[:n_events]
    source = [Document(f"a{i:02d}", [_templated(t, a)], None, None) for i, (t, a) in enumerate(known)]
    target = []
    filler = "公司将根据进展及时履行信息披露义务。"
    for i, (t, a) in enumerate(known):
        if i % 2 == 0:
            sentences, which = [_templated(t, a), filler], 0
        else:
            sentences, which = [filler, _free_form(t, a)], 1
        target.append(Document(f"b{i:02d}", sentences, None, [_gold_record(sentences, t, a, which)]))
    for j, (t, a) in enumerate(unseen):
        sentences = [_templated(t, a)]
        target.append(Document(f"c{j:02d}", sentences, None, [_gold_record(sentences, t, a, 0)]))
    return templates, source, target


# ---------------------------------------------------------------------------
# on-disk bundle
# ---------------------------------------------------------------------------


def fixture_graph() -> KnowledgeGraph:
    """Small main graph covering some parties of :func:`dee_fixture`."""
    names = [("中信证券", "company"), ("甲银行", "company"), ("乙银行", "company"), ("招商银行", "company"),
             ("兴业证券", "company"), ("华远集团", "company"), ("东方电气", "company"), ("南方航空", "company"),
             ("甲科技", "company"), ("乙实业", "company"), ("丙化工", "company"), ("丁贸易", "company"),
             ("戊物流", "company"), ("李明", "person"), ("张伟", "person"), ("刘洋", "person"), ("黄磊", "person")]
    entities = [EntityRecord(i, n, k) for i, (n, k) in enumerate(names)]
    idx = {n: i for i, (n, _) in enumerate(names)}
    rel = {r: i for i, r in enumerate(MAIN_RELATIONS)}
    triples = [
        (idx["李明"], rel["Pledge"], idx["中信证券"]), (idx["张伟"], rel["Pledge"], idx["甲银行"]),
        (idx["张伟"], rel["Pledge"], idx["乙银行"]), (idx["刘洋"], rel["Pledge"], idx["招商银行"]),
        (idx["黄磊"], rel["Pledge"], idx["兴业证券"]), (idx["刘洋"], rel["ShareHolder"], idx["华远集团"]),
        (idx["甲科技"], rel["Creditor"], idx["乙实业"]), (idx["丙化工"], rel["Creditor"], idx["丁贸易"]),
        (idx["丙化工"], rel["Creditor"], idx["戊物流"]), (idx["华远集团"], rel["Invest"], idx["东方电气"]),
        (idx["东方电气"], rel["Branch"], idx["南方航空"]), (idx["李明"], rel["LegalPerson"], idx["东方电气"]),
        (idx["张伟"], rel["ManagingMember"], idx["南方航空"]), (idx["甲银行"], rel["Branch"], idx["乙银行"]),
    ]
    return KnowledgeGraph(entities, triples)


def write_fixture_bundle(outdir) -> dict[str, str]:
    """Write every fixture to ``outdir``; returns name -> path."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}

    def p(name):
        paths[name] = str(out / name)
        return out / name

    g = fixture_graph()
    write_entities(p("entities.tsv"), g.entities)
    p("triples.tsv").write_text(
        "".join(f"{t.head}\t{g.relations[t.relation].name}\t{t.tail}\n" for t in g.triples), encoding="utf-8"
    )
    sep, held = separable_graph()
    write_entities(p("separable_entities.tsv"), sep.entities)
    p("separable_triples.tsv").write_text(
        "".join(f"{t.head}\t{sep.relations[t.relation].name}\t{t.tail}\n" for t in sep.triples), encoding="utf-8"
    )
    p("separable_heldout.tsv").write_text(
        "".join(f"{h}\t{sep.relations[r].name}\t{t}\n" for h, r, t in held), encoding="utf-8"
    )
    docs = dee_fixture()
    write_jsonl(p("dee_train.jsonl"), docs)
    write_schemas(p("schemas.txt"), DEFAULT_SCHEMAS)
    p("gazetteer.tsv").write_text(
        "".join(f"{m.text}\t{m.label}\n" for m in sorted({m for d in docs for m in d.mentions},
                                                          key=lambda m: (m.text, m.label))),
        encoding="utf-8",
    )
    templates, source, target = ds_corpus()
    p("templates.txt").write_text(DS_TEMPLATES, encoding="utf-8")
    write_jsonl(p("ds_source.jsonl"), source)
    write_jsonl(p("ds_target.jsonl"), target)
    p("aliases.tsv").write_text("中信\t中信证券\n", encoding="utf-8")
    p("config.json").write_text(json.dumps({
        "kg": {"entities": paths["entities.tsv"], "triples": paths["triples.tsv"],
               "aliases": paths["aliases.tsv"]},
        "ds": {"templates": paths["templates.txt"]},
        "decode": {"schemas": paths["schemas.txt"]},
        "ner": {"gazetteer": paths["gazetteer.tsv"]},
    }, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return paths
