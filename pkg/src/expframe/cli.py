"""Command-line surface: convert, stats, train, predict, evaluate, agreement, kfold.

Every command is reproducible: inputs, flags and the seed fully determine all
outputs, and files are written atomically (temp file + rename). Exit codes:
0 success, 1 validation or data error, 2 usage error. Logging verbosity comes
from the EXPFRAME_LOG environment variable (error, warn, info, debug).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile

from . import __version__
from . import crf as crf_mod
from . import evaluation as eval_mod
from . import features as feat_mod
from . import linear as linear_mod
from .corpus import (Corpus, CorpusError, EntityMention, Sentence, SlotLink,
                     SOFC_SCHEMA, Token, bio_to_spans, document_from_record,
                     make_document, parse_corpus, select_experiment_sentences,
                     serialize_corpus, document_to_record)

log = logging.getLogger("expframe")

_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING,
               "info": logging.INFO, "debug": logging.DEBUG}


def setup_logging() -> None:
    raw = os.environ.get("EXPFRAME_LOG", "warn").strip().lower()
    level = _LOG_LEVELS.get(raw)
    logging.basicConfig(level=level if level is not None else logging.WARNING,
                        stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if level is None and raw:
        log.warning("unknown EXPFRAME_LOG value %r, using 'warn'", raw)


def atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".expframe-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit(text: str, output: str | None) -> None:
    if output and output != "-":
        atomic_write(output, text if text.endswith("\n") else text + "\n")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def load_tables(args) -> list:
    tables = []
    for i, path in enumerate(getattr(args, "embeddings", None) or []):
        tag = f"static{i}" if i else "static"
        tables.append(feat_mod.load_embedding_table(path, tag=tag))
    if getattr(args, "contextual", None):
        tables.append(feat_mod.load_contextual_table(args.contextual))
    return tables


# ---------------------------------------------------------------------------
# convert: simple column layout -> canonical JSONL

_SLOT_TO_MENTION = {
    "anode_material": "MATERIAL", "cathode_material": "MATERIAL",
    "electrolyte_material": "MATERIAL", "fuel_used": "MATERIAL",
    "interlayer_material": "MATERIAL", "support_material": "MATERIAL",
    "device": "DEVICE",
    "conductivity": "VALUE", "current_density": "VALUE",
    "degradation_rate": "VALUE", "open_circuit_voltage": "VALUE",
    "power_density": "VALUE", "resistance": "VALUE",
    "time_of_operation": "VALUE", "voltage": "VALUE",
    "working_temperature": "VALUE", "thickness": "VALUE",
    "experiment_evoking_word": "EXPERIMENT",
}


def _finish_sentence(rows) -> Sentence:
    tokens = []
    offset = 0
    for surface, lemma, pos, _, _ in rows:
        tokens.append(Token(surface=surface, begin=offset,
                            end=offset + len(surface), lemma=lemma, pos=pos))
        offset += len(surface) + 1
    text = " ".join(r[0] for r in rows)
    entity_spans = bio_to_spans([r[3] for r in rows])
    slot_spans = bio_to_spans([r[4] for r in rows])
    return Sentence(text=text, tokens=tokens), entity_spans, slot_spans


def convert_column_file(lines) -> list:
    """Parse the column layout into validated documents.

    Layout: ``#doc <id>`` starts a document, a blank line ends a sentence,
    token rows carry whitespace-separated columns surface, lemma, pos,
    entity BIO label, slot BIO label; "-" marks a missing lemma/pos and
    missing label columns default to O. Slot spans become slot links anchored
    at the sentence's first EXPERIMENT mention.
    """
    documents = []
    doc_id = None
    raw_sentences: list = []
    rows: list = []

    def flush_sentence():
        if rows:
            raw_sentences.append(_finish_sentence(rows))
            rows.clear()

    def flush_document():
        nonlocal raw_sentences
        flush_sentence()
        if doc_id is None:
            if raw_sentences:
                raise CorpusError("token rows before any '#doc' header")
            return
        sentences = []
        counter = 0
        for text_sent, entity_spans, slot_spans in raw_sentences:
            mentions = []
            by_span = {}
            for b, e, typ in entity_spans:
                mid = f"m{counter}"
                counter += 1
                mentions.append(EntityMention(id=mid, type=typ, begin=b, end=e))
                by_span[(b, e)] = mentions[-1]
            slots = []
            for b, e, styp in slot_spans:
                mention = by_span.get((b, e))
                if mention is None:
                    mtype = _SLOT_TO_MENTION.get(styp)
                    if mtype is None:
                        raise CorpusError(f"doc '{doc_id}': unknown slot type '{styp}'")
                    mention = EntityMention(id=f"m{counter}", type=mtype, begin=b, end=e)
                    counter += 1
                    mentions.append(mention)
                    by_span[(b, e)] = mention
                if styp == "experiment_evoking_word":
                    continue  # derived from the EXPERIMENT mention itself
                slots.append((mention.id, styp))
            anchor = next((m for m in mentions if m.type == "EXPERIMENT"), None)
            slot_links = []
            for filler_id, styp in slots:
                if anchor is None:
                    log.warning("doc '%s': slot '%s' dropped, sentence has no "
                                "EXPERIMENT mention", doc_id, styp)
                    continue
                slot_links.append(SlotLink(anchor=anchor.id, filler=filler_id,
                                           type=styp))
            sentences.append(Sentence(text=text_sent.text, tokens=text_sent.tokens,
                                      mentions=mentions, slot_links=slot_links))
        documents.append(make_document(doc_id, sentences))
        raw_sentences = []

    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\n")
        if line.startswith("#doc"):
            flush_document()
            doc_id = line[len("#doc"):].strip()
            if not doc_id:
                raise CorpusError(f"line {lineno}: empty doc id")
            continue
        if not line.strip():
            flush_sentence()
            continue
        cols = line.split()
        surface = cols[0]
        lemma = cols[1] if len(cols) > 1 and cols[1] != "-" else None
        pos = cols[2] if len(cols) > 2 and cols[2] != "-" else None
        entity = cols[3] if len(cols) > 3 and cols[3] != "-" else "O"
        slot = cols[4] if len(cols) > 4 and cols[4] != "-" else "O"
        rows.append((surface, lemma, pos, entity, slot))
    flush_document()
    return documents


def cmd_convert(args) -> int:
    with open(args.input, "r", encoding="utf-8") as fh:
        documents = convert_column_file(fh)
    corpus = Corpus(documents=documents)
    emit(serialize_corpus(corpus), args.output)
    log.info("converted %d documents, %d sentences",
             corpus.num_documents, corpus.num_sentences)
    return 0


# ---------------------------------------------------------------------------
# stats / agreement


def cmd_stats(args) -> int:
    corpus = parse_corpus(args.corpus)
    stats = eval_mod.corpus_stats(corpus)
    if args.format == "json":
        text = json.dumps(eval_mod.stats_dict(stats), ensure_ascii=False, indent=2)
    elif args.format == "csv":
        header, rows = ["statistic", "value"], []
        for key, value in eval_mod.stats_dict(stats).items():
            if isinstance(value, dict):
                rows += [[f"{key}:{k}", str(v)] for k, v in value.items()]
            else:
                rows.append([key, str(value)])
        text = _csv(header, rows)
    else:
        text = eval_mod.stats_table(stats)
    emit(text, args.output)
    return 0


def cmd_agreement(args) -> int:
    corpus_a = parse_corpus(args.annotator_a)
    corpus_b = parse_corpus(args.annotator_b)
    report = eval_mod.agreement_report(corpus_a, corpus_b)
    if args.format == "json":
        text = json.dumps(eval_mod.agreement_dict(report), ensure_ascii=False, indent=2)
    elif args.format == "csv":
        rows = [["sentence", "kappa", f"{report.sentence.kappa:.2f}"],
                ["sentence", "p_o", eval_mod.pct(report.sentence.p_o)],
                ["sentence", "p_e", eval_mod.pct(report.sentence.p_e)]]
        for section, rep in (("mention", report.mention), ("slot", report.slot)):
            for t, s in rep.per_type.items():
                rows.append([section, t, f"{eval_mod.pct(s.precision)},"
                             f"{eval_mod.pct(s.recall)},{eval_mod.pct(s.f1)}"])
        text = _csv(["section", "item", "value"], rows)
    else:
        text = eval_mod.agreement_table(report)
    emit(text, args.output)
    return 0


def _csv(header, rows) -> str:
    import csv
    import io
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# train / predict / evaluate / kfold


def _linear_config(args) -> linear_mod.LinearConfig:
    return linear_mod.LinearConfig(
        kind=args.kind, lam=args.lam, max_iter=args.max_iter,
        n_max=args.n_max, keep_rate=args.keep_rate, seed=args.seed)


def _crf_config(args, task: str) -> crf_mod.CrfConfig:
    return crf_mod.CrfConfig(
        task=task, lam=args.lam, max_iter=args.max_iter, window=args.window,
        bio_mask=args.bio_mask, standardize=args.standardize, seed=args.seed)


def cmd_train(args) -> int:
    corpus = parse_corpus(args.corpus)
    tables = load_tables(args)
    if args.task == "sentence":
        model = linear_mod.train_sentence_model(
            list(corpus.sentences()), _linear_config(args))
        text = linear_mod.model_to_json(model)
    else:
        sentences = select_experiment_sentences(corpus)
        model = crf_mod.train_crf(sentences, _crf_config(args, args.task),
                                  corpus.schema, tables)
        text = crf_mod.model_to_json(model)
    atomic_write(args.model, text + "\n")
    log.info("trained %s model on %s, wrote %s", args.task, args.corpus, args.model)
    return 0


def _load_model(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        kind = json.loads(text).get("format")
    except json.JSONDecodeError as exc:
        raise ValueError(f"model file {path} is not JSON: {exc}") from None
    if kind == linear_mod.MODEL_FORMAT:
        return "sentence", linear_mod.model_from_json(text)
    if kind == crf_mod.MODEL_FORMAT:
        model = crf_mod.model_from_json(text)
        return model.config.task, model
    raise ValueError(f"model file {path} has unknown format {kind!r}")


def _predict_record(task: str, model, doc, tables) -> list[dict]:
    out = []
    for sent in doc.sentences:
        if task == "sentence":
            label, score = linear_mod.classify_sentence(model, sent)
            out.append({"is_experiment": bool(label), "score": score})
        elif task == "entity":
            spans = crf_mod.tag(model, sent, tables)
            out.append({"mentions": [{"type": t, "begin_tok": b, "end_tok": e}
                                     for b, e, t in spans]})
        else:
            spans = crf_mod.tag(model, sent, tables)
            out.append({"slots": [{"type": t, "begin_tok": b, "end_tok": e}
                                  for b, e, t in spans]})
    return out


def cmd_predict(args) -> int:
    task, model = _load_model(args.model)
    if args.task and args.task != task:
        raise ValueError(f"model is for task '{task}', requested '{args.task}'")
    tables = load_tables(args)
    if args.input and args.input != "-":
        infile = open(args.input, "r", encoding="utf-8")
    else:
        infile = sys.stdin
    had_errors = False
    out_lines = []
    try:
        for lineno, line in enumerate(infile, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                doc = document_from_record(record)
            except (json.JSONDecodeError, CorpusError) as exc:
                log.error("input line %d: %s", lineno, exc)
                print(f"error: input line {lineno}: {exc}", file=sys.stderr)
                had_errors = True
                continue
            preds = _predict_record(task, model, doc, tables)
            for sent_rec, pred in zip(record["sentences"], preds):
                sent_rec["predicted"] = pred
            out_lines.append(json.dumps(record, ensure_ascii=False,
                                        separators=(",", ":")))
    finally:
        if infile is not sys.stdin:
            infile.close()
    text = "\n".join(out_lines) + ("\n" if out_lines else "")
    if args.output and args.output != "-":
        atomic_write(args.output, text)
    else:
        sys.stdout.write(text)
    return 1 if had_errors else 0


def _predicted_of(record: dict) -> list[dict]:
    return [s.get("predicted") or {} for s in record.get("sentences", [])]


def cmd_evaluate(args) -> int:
    gold = parse_corpus(args.gold)
    pred_records: dict[str, dict] = {}
    with open(args.pred, "r", encoding="utf-8") as fh:
        pred_text = fh.read()
    parse_corpus(pred_text)  # schema validation of the prediction file
    for line in pred_text.splitlines():
        if line.strip():
            rec = json.loads(line)
            pred_records[rec["doc_id"]] = rec
    missing = [d.doc_id for d in gold.documents if d.doc_id not in pred_records]
    if missing:
        raise ValueError(f"prediction file lacks documents: {missing}")
    task = args.task
    if task == "sentence":
        gold_flags, pred_flags = [], []
        for doc in gold.documents:
            preds = _predicted_of(pred_records[doc.doc_id])
            if len(preds) != len(doc.sentences):
                raise ValueError(f"doc '{doc.doc_id}': sentence count mismatch")
            for sent, pred in zip(doc.sentences, preds):
                gold_flags.append(sent.is_experiment)
                pred_flags.append(bool(pred.get("is_experiment", False)))
        report = eval_mod.binary_prf(gold_flags, pred_flags)
    else:
        key = "mentions" if task == "entity" else "slots"
        gold_seqs, pred_seqs = [], []
        for doc in gold.documents:
            preds = _predicted_of(pred_records[doc.doc_id])
            if len(preds) != len(doc.sentences):
                raise ValueError(f"doc '{doc.doc_id}': sentence count mismatch")
            for sent, pred in zip(doc.sentences, preds):
                if not sent.is_experiment:
                    continue  # tagging tasks are scored on experiment sentences
                gold_seqs.append(eval_mod.gold_tagging_spans(sent, task))
                pred_seqs.append([(p["begin_tok"], p["end_tok"], p["type"])
                                  for p in pred.get(key, [])])
        report = eval_mod.span_prf(gold_seqs, pred_seqs,
                                   eval_mod.tagging_eval_types(task))
    if args.format == "json":
        text = json.dumps(eval_mod.eval_report_dict(report), ensure_ascii=False,
                          indent=2)
    elif args.format == "csv":
        header, rows = eval_mod.eval_report_rows(report)
        text = _csv(header, rows)
    else:
        text = eval_mod.eval_report_table(report)
    emit(text, args.output)
    return 0


def cmd_kfold(args) -> int:
    corpus = parse_corpus(args.corpus)
    test_corpus = parse_corpus(args.test) if args.test else None
    tables = load_tables(args)
    if args.task == "sentence":
        config = _linear_config(args)
    else:
        config = _crf_config(args, args.task)
    result = eval_mod.crossval(args.task, corpus, k=args.k, config=config,
                               test_corpus=test_corpus, tables=tables,
                               threads=args.threads)
    report = eval_mod.cv_dict(result)
    if args.format == "json":
        text = json.dumps(report, ensure_ascii=False, indent=2)
    elif args.format == "csv":
        rows = [[t, repr(ms["mean"]), repr(ms["std"])]
                for t, ms in report["dev_mean_std"].items()]
        text = _csv(["type", "dev_mean", "dev_std"], rows)
    else:
        text = eval_mod.cv_table(result)
    emit(text, None)
    if args.output:
        atomic_write(args.output,
                     json.dumps(report, ensure_ascii=False,
                                separators=(",", ":")) + "\n")
    return 0


# ---------------------------------------------------------------------------
# Parser


def _add_format(p, default="table"):
    p.add_argument("--format", choices=("table", "json", "csv"), default=default)
    p.add_argument("--output", help="write the report here instead of stdout")


def _add_embeddings(p):
    p.add_argument("--embeddings", action="append",
                   help="static embedding table (word2vec text), repeatable")
    p.add_argument("--contextual", help="contextual per-token vector file (JSONL)")


def _add_train_hypers(p, task_choices):
    p.add_argument("--task", choices=task_choices, required=True)
    p.add_argument("--seed", type=int, required=True,
                   help="RNG seed; runs are reproducible given the same seed")
    p.add_argument("--lam", type=float, default=None,
                   help="regularization strength (default per task)")
    p.add_argument("--max-iter", type=int, default=None)
    p.add_argument("--kind", choices=("logistic", "hinge"), default="logistic",
                   help="sentence-task model kind")
    p.add_argument("--n-max", type=int, default=4, help="n-gram order")
    p.add_argument("--keep-rate", type=float, default=1.0,
                   help="fraction of non-experiment sentences kept for training")
    p.add_argument("--window", type=int, default=1, help="token feature window")
    p.add_argument("--bio-mask", action=argparse.BooleanOptionalAction,
                   default=True, help="constrain decoding to BIO-valid sequences")
    p.add_argument("--standardize", action=argparse.BooleanOptionalAction,
                   default=True, help="standardize dense embedding features")
    _add_embeddings(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="expframe",
        description="Pipeline for extracting experiment frames from "
                    "scientific text: sentence detection, entity and slot "
                    "tagging, agreement and evaluation tooling.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="convert column-format annotation to JSONL")
    p.add_argument("--input", required=True, help="column-format file (#doc headers)")
    p.add_argument("--output", help="JSONL output path (default stdout)")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("stats", help="corpus statistics report")
    p.add_argument("corpus", help="corpus JSONL file")
    _add_format(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="train a model and write it as JSON")
    _add_train_hypers(p, ("sentence", "entity", "slot"))
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True, help="output model path")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="annotate a JSONL stream with predictions")
    p.add_argument("--task", choices=("sentence", "entity", "slot"),
                   help="optional check that the model matches this task")
    p.add_argument("--model", required=True)
    p.add_argument("--input", help="input JSONL (default stdin)")
    p.add_argument("--output", help="output JSONL (default stdout)")
    _add_embeddings(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score a prediction file against gold")
    p.add_argument("--task", choices=("sentence", "entity", "slot"), required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    _add_format(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("agreement", help="inter-annotator agreement report")
    p.add_argument("annotator_a", help="corpus JSONL annotated by A (treated as gold)")
    p.add_argument("annotator_b", help="corpus JSONL annotated by B")
    _add_format(p)
    p.set_defaults(func=cmd_agreement)

    p = sub.add_parser("kfold", help="k-fold cross-validation by document")
    _add_train_hypers(p, ("sentence", "entity", "slot"))
    p.add_argument("--corpus", required=True)
    p.add_argument("--test", help="held-out test corpus scored with each fold model")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--output", help="write the JSON report here as well")
    p.add_argument("--threads", type=int, default=1,
                   help="folds trained concurrently")
    p.add_argument("--format", choices=("table", "json", "csv"), default="table")
    p.set_defaults(func=cmd_kfold)
    return parser


def _apply_hyper_defaults(args) -> None:
    if getattr(args, "lam", None) is None:
        args.lam = 1e-4 if getattr(args, "task", None) == "sentence" else 1.0
    if getattr(args, "max_iter", None) is None:
        args.max_iter = 500 if getattr(args, "task", None) == "sentence" else 300


def main(argv=None) -> int:
    setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    _apply_hyper_defaults(args)
    try:
        return args.func(args)
    except (CorpusError, feat_mod.FeatureFormatError, ValueError, OSError,
            json.JSONDecodeError) as exc:
        log.debug("command failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
