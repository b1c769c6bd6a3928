"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric or training error.
``KGDEE_WORKERS`` sets the number of threads used for per-document stages.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .config import load_config
from .docs import Document, read_jsonl, write_jsonl
from .dslabel import LabelingConfig, build_ds_graph, label_documents, match_templates, read_templates
from .edag import DecoderConfig, DeeModel, KgLookup, extract, train_decoder
from .embed import (
    EmbedConfig,
    edge_accuracy,
    encode_pair_onehot,
    export_embeddings,
    load_model,
    read_embeddings,
    save_model,
    train_link_prediction,
    write_embeddings,
)
from .encode import EncoderConfig, TokenTable
from .errors import DataError, DecodeError, GradientCheckError, KgdeeError, TrainingError
from .evaluate import evaluate_documents
from .fixtures import write_fixture_bundle
from .kg import KnowledgeGraph, ingest
from .ner import CrfConfig, Gazetteer, corpus_from_documents, load_crf, save_crf, tag_document, train_crf
from .schema import DEFAULT_SCHEMAS, EventSchema, read_schemas

log = logging.getLogger("kgdee")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def workers() -> int:
    raw = os.environ.get("KGDEE_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise DataError(f"KGDEE_WORKERS must be an integer, got {raw!r}") from None
    return max(1, n)


def map_documents(fn, docs):
    """Apply ``fn`` to every document, possibly in threads; results sorted by doc_id."""
    n = workers()
    if n == 1:
        results = [fn(d) for d in docs]
    else:
        with ThreadPoolExecutor(max_workers=n) as pool:
            results = list(pool.map(fn, docs))
    return [r for _, r in sorted(zip((d.doc_id for d in docs), results), key=lambda x: x[0])]


# ---------------------------------------------------------------------------
# shared loaders
# ---------------------------------------------------------------------------


def _graph(args, cfg) -> KnowledgeGraph:
    cache = getattr(args, "cache", None) or cfg["kg"]["cache"]
    entities = getattr(args, "entities", None) or cfg["kg"]["entities"]
    triples = getattr(args, "triples", None) or cfg["kg"]["triples"]
    if entities and triples:
        return ingest(entities, triples, alias_file=getattr(args, "aliases", None) or cfg["kg"]["aliases"],
                      allow_self_relations=cfg["kg"]["allow_self_relations"])
    if cache:
        try:
            return KnowledgeGraph.from_json(Path(cache).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise DataError(f"graph cache {cache} does not exist") from None
    raise UsageError("a graph is required: pass --cache or --entities and --triples")


def _schemas(cfg) -> list[EventSchema]:
    schemas = read_schemas(cfg["decode"]["schemas"]) if cfg["decode"]["schemas"] else list(DEFAULT_SCHEMAS)
    overrides = cfg["decode"]["key_roles"] or {}
    out = []
    for s in schemas:
        if s.event_type in overrides:
            s = EventSchema(s.event_type, s.roles, frozenset(overrides[s.event_type]))
        out.append(s)
    return out


def _read_docs(path) -> list[Document]:
    try:
        docs = read_jsonl(path)
    except FileNotFoundError:
        raise DataError(f"corpus {path} does not exist") from None
    for d in docs:
        try:
            d.validate()
        except DataError as exc:
            raise DataError(f"{d.doc_id}: {exc}") from None
    return docs


def _kg_lookup(args, cfg, F: int) -> KgLookup:
    if not getattr(args, "embeddings", None):
        return KgLookup(F)
    graph = _graph(args, cfg)
    table = read_embeddings(args.embeddings)
    width = len(next(iter(table.values()))) if table else F
    if width != F:
        raise DataError(f"embedding width {width} does not match the model's F={F}")
    return KgLookup(F, graph, table)


def _embedding_width(args) -> int | None:
    if not getattr(args, "embeddings", None):
        return None
    table = read_embeddings(args.embeddings)
    return len(next(iter(table.values()))) if table else None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_kg_build(args, cfg):
    graph = _graph(args, cfg)
    out = args.cache or cfg["kg"]["cache"]
    if out:
        Path(out).write_text(graph.to_json(), encoding="utf-8")
    print(graph.report().histogram())
    if graph.duplicates:
        print(f"duplicates dropped: {graph.duplicates}")


def cmd_kg_paths(args, cfg):
    graph = _graph(args, cfg)
    k = args.k or cfg["kg"]["k"]
    max_len = args.max_len or cfg["kg"]["max_len"]
    for node in (args.source, args.target):
        if not 0 <= node < graph.num_entities:
            raise DataError(f"entity {node} is not in the graph")
    feature = encode_pair_onehot(graph, args.source, args.target, k, max_len)
    print(" ".join(f"{int(x)}" for x in feature))
    for path in graph.k_shortest_paths(args.source, args.target, k, max_len):
        print(" ".join(f"{h}-{graph.relations[r].name}->{t}" for h, r, t in path.triples))


def cmd_embed_train(args, cfg):
    graph = _graph(args, cfg)
    e = cfg["embed"]
    ecfg = EmbedConfig(F=e["F"], epochs=e["epochs"], lr=e["lr"], negatives_per_positive=e["negatives"],
                       seed=e["seed"], lam=e["lam"], init_scale=e["init_scale"])
    held = _read_heldout(args.heldout, graph) if args.heldout else []
    model, trace = train_link_prediction(graph, ecfg, negative_exclude=[(h, t) for h, _, t in held])
    for epoch, loss in enumerate(trace):
        print(f"epoch {epoch} loss {loss:.6f}")
    save_model(args.out, model)
    if held:
        print(f"held-out accuracy {edge_accuracy(model, held, graph):.4f}")


def _read_heldout(path, graph):
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3 or parts[1] not in graph.relation_ids:
                raise DataError(f"{path}:{lineno}: expected head<TAB>known relation<TAB>tail")
            out.append((int(parts[0]), graph.relation_ids[parts[1]], int(parts[2])))
    return out


def cmd_embed_export(args, cfg):
    graph = _graph(args, cfg)
    model = load_model(args.checkpoint, graph)
    if model.N != graph.num_entities:
        raise DataError(f"checkpoint has {model.N} nodes but the graph has {graph.num_entities}")
    vectors = export_embeddings(model, graph)
    write_embeddings(args.out, vectors)
    print(f"wrote {len(vectors)} vectors of width {vectors.shape[1]}")


def _label_summary(labelled, gold_docs):
    if not any(d.events is not None for d in gold_docs):
        return
    total = evaluate_documents(labelled, gold_docs).total.total
    print(f"precision {total.precision:.4f} recall {total.recall:.4f} f1 {total.f1:.4f}")


def cmd_label(args, cfg):
    schemas = _schemas(cfg)
    template_path = args.templates or cfg["ds"]["templates"]
    if not template_path:
        raise UsageError("a template file is required (--templates or ds.templates)")
    templates = read_templates(template_path, schemas)
    docs = _read_docs(args.corpus)
    if args.mode == "template":
        labelled = label_documents(docs, "template", templates, schemas=schemas)
    else:
        if not args.source:
            raise UsageError("label ds needs --source, the corpus the DS graph is built from")
        source = _read_docs(args.source)
        overlap = {d.doc_id for d in source} & {d.doc_id for d in docs}
        if overlap:
            raise DataError(f"source and target corpora share documents: {sorted(overlap)[:5]}")
        records = [r for d in source for r in match_templates(d, templates, schemas)]
        graph = build_ds_graph(records)
        theta = args.theta if args.theta is not None else cfg["ds"]["theta"]
        labelled = label_documents(docs, "ds", graph=graph, cfg=LabelingConfig(theta, cfg["decode"]["key_roles"]),
                                   schemas=schemas)
    write_jsonl(args.out, labelled)
    print(f"labelled {sum(len(d.events) for d in labelled)} events in {len(labelled)} documents")
    _label_summary(labelled, docs)


def _model_configs(cfg):
    c, d = cfg["encode"], cfg["decode"]
    enc = EncoderConfig(d_w=c["d_w"], depth=c["depth"], token_depth=c["token_depth"], N_s=c["N_s"], N_w=c["N_w"],
                        seed=c["seed"])
    dec = DecoderConfig(fusion=d["fusion"], type_threshold=d["type_threshold"],
                        select_threshold=d["select_threshold"], branch_cap=d["branch_cap"], epochs=d["epochs"],
                        lr=d["lr"], lr_decay=d["lr_decay"], clip=d["clip"], expand_depth=d["expand_depth"],
                        seed=d["seed"])
    return enc, dec


def _mentions_fn(strategy, crf=None, gazetteer=None):
    return lambda doc: tag_document(doc, strategy, crf=crf, gazetteer=gazetteer)


def _extract_all(model, docs, kg, mentions_fn):
    def one(doc):
        events = extract(model, doc, mentions_fn(doc), kg)
        out = Document(doc.doc_id, list(doc.sentences), doc.mentions, events, None, dict(doc.extra),
                       list(doc.key_order))
        return out
    return map_documents(one, docs)


def cmd_dee_train(args, cfg):
    docs = _read_docs(args.corpus)
    if not docs:
        raise DataError(f"training corpus {args.corpus} is empty")
    schemas = _schemas(cfg)
    enc, dec = _model_configs(cfg)
    F = _embedding_width(args) or cfg["embed"]["F"]
    model = DeeModel(TokenTable.from_documents(docs), schemas, enc, dec, F)
    kg = _kg_lookup(args, cfg, F)

    strategy = cfg["ner"]["strategy"]
    crf = None
    if strategy == "crf":
        n = cfg["ner"]
        crf, trace = train_crf(corpus_from_documents(docs), CrfConfig(D=n["D"], epochs=n["epochs"], lr=n["lr"],
                                                                      seed=n["seed"]))
        save_crf(args.out + ".crf", crf)
        print(f"crf final loss {trace[-1] if trace else float('nan'):.6f}")
    gazetteer = Gazetteer.read(cfg["ner"]["gazetteer"]) if cfg["ner"]["gazetteer"] else None

    def callback(epoch, loss):
        print(f"epoch {epoch} loss {loss:.6f}", flush=True)
        if args.eval_every and (epoch + 1) % args.eval_every == 0:
            f1 = evaluate_documents(_extract_all(model, docs, kg, lambda d: d.mentions), docs).total.total.f1
            print(f"epoch {epoch} training f1 {f1:.4f}", flush=True)
            return f1 == 1.0
        return False

    train_decoder(model, docs, kg, callback=callback)
    model.save(args.out)
    mentions_fn = _mentions_fn(strategy, crf, gazetteer)
    report = evaluate_documents(_extract_all(model, docs, kg, mentions_fn), docs)
    print(report.to_text(), end="")
    print(f"training f1 {report.total.total.f1:.4f}")


def cmd_dee_extract(args, cfg):
    model = DeeModel.load(args.model)
    docs = _read_docs(args.corpus)
    kg = _kg_lookup(args, cfg, model.F)
    strategy = cfg["ner"]["strategy"]
    crf = load_crf(args.crf or args.model + ".crf") if strategy == "crf" else None
    gazetteer = Gazetteer.read(cfg["ner"]["gazetteer"]) if cfg["ner"]["gazetteer"] else None
    out = _extract_all(model, docs, kg, _mentions_fn(strategy, crf, gazetteer))
    write_jsonl(args.out, out)
    print(f"extracted {sum(len(d.events) for d in out)} events from {len(out)} documents")


def cmd_evaluate(args, cfg):
    pred, gold = _read_docs(args.pred), _read_docs(args.gold)
    missing = [d.doc_id for d in gold if d.events is None]
    if missing:
        raise DataError(f"gold documents without events: {missing[:5]}")
    report = evaluate_documents(pred, gold)
    json_path = args.json or cfg["eval"]["report"]
    if json_path:
        Path(json_path).write_text(report.to_json(), encoding="utf-8")
    text = report.to_text()
    if cfg["eval"]["text"]:
        Path(cfg["eval"]["text"]).write_text(text, encoding="utf-8")
    print(text, end="")


def cmd_fixtures(args, cfg):
    paths = write_fixture_bundle(args.out)
    for name in sorted(paths):
        print(paths[name])


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kgdee", description="Knowledge-graph-enhanced document-level event extraction.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--config", help="JSON configuration file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one configuration value (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def graph_args(sp):
        sp.add_argument("--entities")
        sp.add_argument("--triples")
        sp.add_argument("--aliases")
        sp.add_argument("--cache")

    kg = sub.add_parser("kg", help="knowledge-graph store").add_subparsers(dest="action", required=True,
                                                                            parser_class=_Parser)
    sp = kg.add_parser("build", help="ingest TSV files, write the cache, print the relation histogram")
    graph_args(sp)
    sp.set_defaults(fn=cmd_kg_build)
    sp = kg.add_parser("paths", help="print the path feature of an entity pair")
    graph_args(sp)
    sp.add_argument("--from", dest="source", type=int, required=True)
    sp.add_argument("--to", dest="target", type=int, required=True)
    sp.add_argument("--k", type=int)
    sp.add_argument("--max-len", type=int)
    sp.set_defaults(fn=cmd_kg_paths)

    emb = sub.add_parser("embed", help="graph embeddings").add_subparsers(dest="action", required=True,
                                                                          parser_class=_Parser)
    sp = emb.add_parser("train", help="train link prediction and write a checkpoint")
    graph_args(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--heldout", help="held-out triples TSV to score after training")
    sp.set_defaults(fn=cmd_embed_train)
    sp = emb.add_parser("export", help="write node embeddings as TSV")
    graph_args(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_embed_export)

    lab = sub.add_parser("label", help="distant-supervision labelling").add_subparsers(dest="mode", required=True,
                                                                                      parser_class=_Parser)
    for mode in ("template", "ds"):
        sp = lab.add_parser(mode)
        sp.add_argument("--corpus", required=True)
        sp.add_argument("--out", required=True)
        sp.add_argument("--templates")
        if mode == "ds":
            sp.add_argument("--source", help="corpus the DS graph is built from")
            sp.add_argument("--theta", type=float)
        sp.set_defaults(fn=cmd_label)

    dee = sub.add_parser("dee", help="event extraction model").add_subparsers(dest="action", required=True,
                                                                              parser_class=_Parser)
    sp = dee.add_parser("train")
    graph_args(sp)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--embeddings", help="graph embedding TSV from 'embed export'")
    sp.add_argument("--eval-every", type=int, default=0,
                    help="score the training set every N epochs and stop once F1 reaches 1.0")
    sp.set_defaults(fn=cmd_dee_train)
    sp = dee.add_parser("extract")
    graph_args(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--embeddings")
    sp.add_argument("--crf")
    sp.set_defaults(fn=cmd_dee_extract)

    sp = sub.add_parser("evaluate", help="score predictions against gold events")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gold", required=True)
    sp.add_argument("--json")
    sp.set_defaults(fn=cmd_evaluate)

    sp = sub.add_parser("fixtures", help="write the synthetic fixture bundle")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_fixtures)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.overrides)
        args.fn(args, cfg)
    except UsageError as exc:
        print(f"kgdee: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingError, GradientCheckError, DecodeError) as exc:
        print(f"kgdee: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, KgdeeError, OSError) as exc:
        print(f"kgdee: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
