"""Metrics and protocols: P/R/F1, span scoring, kappa agreement, CV, statistics.

Conventions: precision/recall are defined as 0 when their denominator is 0;
F1 is 0 when P+R is 0. Macro-F1 is the unweighted mean over the evaluated
type set. Slot tagging is evaluated over the 16 content slot types only; the
auxiliary training-only types are excluded. Percentages render to 1 decimal
and kappa to 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import crf as crf_mod
from . import linear as linear_mod
from .corpus import (Corpus, LabelSchema, SOFC_SCHEMA, Sentence,
                     select_experiment_sentences, split_kfold)


@dataclass(frozen=True)
class PrfScore:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float


def prf(tp: int, fp: int, fn: int) -> PrfScore:
    if min(tp, fp, fn) < 0:
        raise ValueError("counts must be non-negative")
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return PrfScore(tp=tp, fp=fp, fn=fn, precision=p, recall=r, f1=f1)


@dataclass
class EvalReport:
    per_type: dict[str, PrfScore]  # insertion order = report order
    macro_f1: float

    @property
    def micro(self) -> PrfScore:
        return prf(sum(s.tp for s in self.per_type.values()),
                   sum(s.fp for s in self.per_type.values()),
                   sum(s.fn for s in self.per_type.values()))


def make_report(per_type: dict[str, PrfScore]) -> EvalReport:
    macro = (sum(s.f1 for s in per_type.values()) / len(per_type)
             if per_type else 0.0)
    return EvalReport(per_type=per_type, macro_f1=macro)


def span_prf(gold_seqs, pred_seqs, types) -> EvalReport:
    """Strict span scoring: a prediction is tp iff (begin, end, type) match.

    ``gold_seqs`` and ``pred_seqs`` are parallel sequences holding, per unit
    (usually per sentence), a collection of (begin, end, type) spans. Spans
    whose type is outside ``types`` are dropped from both sides.
    """
    gold_seqs, pred_seqs = list(gold_seqs), list(pred_seqs)
    if len(gold_seqs) != len(pred_seqs):
        raise ValueError(f"{len(gold_seqs)} gold units vs {len(pred_seqs)} predicted")
    types = list(types)
    type_set = set(types)
    tp = {t: 0 for t in types}
    fp = {t: 0 for t in types}
    fn = {t: 0 for t in types}
    for gold, pred in zip(gold_seqs, pred_seqs):
        gold = {s for s in set(map(tuple, gold)) if s[2] in type_set}
        pred = {s for s in set(map(tuple, pred)) if s[2] in type_set}
        for b, e, t in gold & pred:
            tp[t] += 1
        for b, e, t in pred - gold:
            fp[t] += 1
        for b, e, t in gold - pred:
            fn[t] += 1
    return make_report({t: prf(tp[t], fp[t], fn[t]) for t in types})


def binary_prf(gold_flags, pred_flags) -> EvalReport:
    """Experiment-class and non-experiment-class scores for binary flags."""
    gold_flags, pred_flags = list(gold_flags), list(pred_flags)
    if len(gold_flags) != len(pred_flags):
        raise ValueError("flag sequences differ in length")
    per_type = {}
    for name, positive in (("experiment", True), ("non-experiment", False)):
        tp = sum(1 for g, p in zip(gold_flags, pred_flags)
                 if bool(g) == positive and bool(p) == positive)
        fp = sum(1 for g, p in zip(gold_flags, pred_flags)
                 if bool(g) != positive and bool(p) == positive)
        fn = sum(1 for g, p in zip(gold_flags, pred_flags)
                 if bool(g) == positive and bool(p) != positive)
        per_type[name] = prf(tp, fp, fn)
    # The headline score for sentence detection is the experiment-class F1.
    return EvalReport(per_type=per_type, macro_f1=per_type["experiment"].f1)


# ---------------------------------------------------------------------------
# Cohen's kappa and annotator agreement


@dataclass
class AgreementResult:
    n: int
    p_o: float
    p_e: float
    kappa: float
    per_class: dict[str, PrfScore]  # annotator A treated as gold


def cohens_kappa(labels_a, labels_b) -> AgreementResult:
    a, b = list(labels_a), list(labels_b)
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    if not a:
        raise ValueError("empty label sequences")
    n = len(a)
    p_o = sum(1 for x, y in zip(a, b) if x == y) / n
    counts_a: dict = {}
    counts_b: dict = {}
    for x in a:
        counts_a[x] = counts_a.get(x, 0) + 1
    for y in b:
        counts_b[y] = counts_b.get(y, 0) + 1
    p_e = sum(counts_a[c] * counts_b.get(c, 0) for c in counts_a) / (n * n)
    if p_e >= 1.0:
        kappa = 1.0  # both marginals degenerate on one class forces p_o = 1
    else:
        kappa = (p_o - p_e) / (1.0 - p_e)
    classes = sorted({str(c) for c in counts_a} | {str(c) for c in counts_b})
    per_class = {}
    for cls in classes:
        tp = sum(1 for x, y in zip(a, b) if str(x) == cls and str(y) == cls)
        fp = sum(1 for x, y in zip(a, b) if str(x) != cls and str(y) == cls)
        fn = sum(1 for x, y in zip(a, b) if str(x) == cls and str(y) != cls)
        per_class[cls] = prf(tp, fp, fn)
    return AgreementResult(n=n, p_o=p_o, p_e=p_e, kappa=kappa, per_class=per_class)


@dataclass
class AgreementReport:
    n_sentences: int
    n_both_experiment: int
    sentence: AgreementResult
    mention: EvalReport  # on sentences both marked experiment-describing
    slot: EvalReport


def agreement_report(corpus_a: Corpus, corpus_b: Corpus,
                     schema: LabelSchema = SOFC_SCHEMA) -> AgreementReport:
    """Dual-annotation agreement, annotator A treated as the gold standard."""
    docs_a = {d.doc_id: d for d in corpus_a.documents}
    docs_b = {d.doc_id: d for d in corpus_b.documents}
    if set(docs_a) != set(docs_b):
        only_a = sorted(set(docs_a) - set(docs_b))
        only_b = sorted(set(docs_b) - set(docs_a))
        raise ValueError(f"document sets differ: only A has {only_a}, only B has {only_b}")
    pairs: list[tuple[Sentence, Sentence]] = []
    for doc_id in sorted(docs_a):
        sa, sb = docs_a[doc_id].sentences, docs_b[doc_id].sentences
        if len(sa) != len(sb):
            raise ValueError(f"doc '{doc_id}': sentence counts differ ({len(sa)} vs {len(sb)})")
        pairs.extend(zip(sa, sb))
    flags_a = ["experiment" if a.is_experiment else "other" for a, _ in pairs]
    flags_b = ["experiment" if b.is_experiment else "other" for _, b in pairs]
    sentence = cohens_kappa(flags_a, flags_b)
    sentence.per_class = {
        "experiment": sentence.per_class.get("experiment", prf(0, 0, 0)),
        "non-experiment": sentence.per_class.get("other", prf(0, 0, 0)),
    }
    both = [(a, b) for a, b in pairs if a.is_experiment and b.is_experiment]
    mention = span_prf(
        [[(m.begin, m.end, m.type) for m in a.mentions] for a, _ in both],
        [[(m.begin, m.end, m.type) for m in b.mentions] for _, b in both],
        schema.mention_types)
    slot_types = schema.slot_types + ("thickness",)
    slot = span_prf([a.slot_filler_spans for a, _ in both],
                    [b.slot_filler_spans for _, b in both],
                    slot_types)
    # keep the headline macro over the 16 content slots only
    slot.macro_f1 = (sum(slot.per_type[t].f1 for t in schema.slot_types)
                     / len(schema.slot_types))
    return AgreementReport(n_sentences=len(pairs), n_both_experiment=len(both),
                           sentence=sentence, mention=mention, slot=slot)


# ---------------------------------------------------------------------------
# Model evaluation and cross-validation


def evaluate_sentence_model(model, sentences) -> EvalReport:
    sentences = list(sentences)
    pred = linear_mod.classify_corpus(model, sentences)
    return binary_prf([s.is_experiment for s in sentences], [bool(p) for p in pred])


def tagging_eval_types(task: str, schema: LabelSchema = SOFC_SCHEMA):
    if task == "entity":
        return schema.mention_types
    if task == "slot":
        return schema.slot_types
    raise ValueError(f"unknown tagging task '{task}'")


def gold_tagging_spans(sentence: Sentence, task: str) -> list[tuple[int, int, str]]:
    if task == "entity":
        return [(m.begin, m.end, m.type) for m in sentence.mentions]
    return list(sentence.slot_filler_spans)


def evaluate_tagger(model, sentences, schema: LabelSchema = SOFC_SCHEMA,
                    tables=()) -> EvalReport:
    sentences = list(sentences)
    task = model.config.task
    gold = [gold_tagging_spans(s, task) for s in sentences]
    pred = [crf_mod.tag(model, s, tables) for s in sentences]
    return span_prf(gold, pred, tagging_eval_types(task, schema))


@dataclass
class CvResult:
    task: str
    k: int
    seed: int
    dev_reports: list[EvalReport]
    test_reports: list[EvalReport]  # empty when no test corpus was given

    def _rows(self, reports) -> dict[str, list[float]]:
        rows: dict[str, list[float]] = {}
        for rep in reports:
            for t, score in rep.per_type.items():
                rows.setdefault(t, []).append(score.f1)
            rows.setdefault("macro", []).append(rep.macro_f1)
        return rows

    def dev_mean_std(self) -> dict[str, tuple[float, float]]:
        """Per-type and macro F1: (mean, population std) over the k folds."""
        return {t: (float(np.mean(v)), float(np.std(v)))
                for t, v in self._rows(self.dev_reports).items()}

    def test_mean(self) -> dict[str, dict[str, float]]:
        """Per-type P/R/F1 and macro-F1, each averaged over the k models."""
        if not self.test_reports:
            return {}
        out: dict[str, dict[str, float]] = {}
        for t in self.test_reports[0].per_type:
            out[t] = {
                "precision": float(np.mean([r.per_type[t].precision
                                            for r in self.test_reports])),
                "recall": float(np.mean([r.per_type[t].recall
                                         for r in self.test_reports])),
                "f1": float(np.mean([r.per_type[t].f1 for r in self.test_reports])),
            }
        out["macro"] = {"f1": float(np.mean([r.macro_f1 for r in self.test_reports]))}
        return out


def crossval(task: str, corpus: Corpus, k: int = 5, config=None,
             test_corpus: Corpus | None = None,
             schema: LabelSchema = SOFC_SCHEMA, tables=(),
             threads: int = 1) -> CvResult:
    """k-fold CV by document; dev scored per fold, test scored per fold model.

    Folds may train concurrently (``threads`` > 1); reports are collected in
    fold order, so the result is identical either way.
    """
    if task == "sentence":
        cfg = config if config is not None else linear_mod.LinearConfig()

        def run_fold(fold):
            train_c, dev_c = fold
            model = linear_mod.train_sentence_model(list(train_c.sentences()), cfg)
            dev = evaluate_sentence_model(model, dev_c.sentences())
            test = (evaluate_sentence_model(model, test_corpus.sentences())
                    if test_corpus else None)
            return dev, test
    elif task in ("entity", "slot"):
        cfg = config if config is not None else crf_mod.CrfConfig()
        cfg = replace(cfg, task=task)

        def run_fold(fold):
            train_c, dev_c = fold
            model = crf_mod.train_crf(
                select_experiment_sentences(train_c), cfg, schema, tables)
            dev = evaluate_tagger(
                model, select_experiment_sentences(dev_c), schema, tables)
            test = (evaluate_tagger(model, select_experiment_sentences(test_corpus),
                                    schema, tables)
                    if test_corpus else None)
            return dev, test
    else:
        raise ValueError(f"unknown task '{task}'")
    folds = split_kfold(corpus, k, cfg.seed)
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run_fold, folds))
    else:
        outcomes = [run_fold(f) for f in folds]
    dev_reports = [dev for dev, _ in outcomes]
    test_reports = [test for _, test in outcomes if test is not None]
    return CvResult(task=task, k=k, seed=cfg.seed,
                    dev_reports=dev_reports, test_reports=test_reports)


# ---------------------------------------------------------------------------
# Corpus statistics


@dataclass
class CorpusStats:
    documents: int = 0
    sentences: int = 0
    tokens: int = 0
    avg_tokens: float = 0.0
    experiment_sentences: int = 0
    experiment_pct: float = 0.0
    sentences_with_mentions: int = 0
    mention_counts: dict[str, int] = field(default_factory=dict)
    slot_counts: dict[str, int] = field(default_factory=dict)
    experiment_histogram: dict[int, int] = field(default_factory=dict)
    link_counts: dict[str, int] = field(default_factory=dict)
    cross_sentence_link_counts: dict[str, int] = field(default_factory=dict)
    slot_links: int = 0
    cross_sentence_slot_links: int = 0


def corpus_stats(corpus: Corpus) -> CorpusStats:
    schema = corpus.schema
    stats = CorpusStats(
        mention_counts={t: 0 for t in schema.mention_types},
        slot_counts={t: 0 for t in schema.all_slot_types},
        link_counts={k: 0 for k in schema.link_kinds},
        cross_sentence_link_counts={k: 0 for k in schema.link_kinds},
    )
    stats.documents = len(corpus.documents)
    for doc in corpus.documents:
        for sent in doc.sentences:
            stats.sentences += 1
            stats.tokens += len(sent.tokens)
            if sent.mentions:
                stats.sentences_with_mentions += 1
            n_exp = 0
            for m in sent.mentions:
                stats.mention_counts[m.type] += 1
                if m.type == schema.experiment_type:
                    n_exp += 1
            if n_exp:
                stats.experiment_sentences += 1
                stats.experiment_histogram[n_exp] = (
                    stats.experiment_histogram.get(n_exp, 0) + 1)
            for link in sent.slot_links:
                stats.slot_links += 1
                stats.slot_counts[link.type] += 1
                anchor_sent = doc.mention_index[link.anchor][0]
                filler_sent = doc.mention_index[link.filler][0]
                if anchor_sent != filler_sent:
                    stats.cross_sentence_slot_links += 1
            for link in sent.experiment_links:
                stats.link_counts[link.kind] += 1
                src_sent = doc.mention_index[link.source][0]
                tgt_sent = doc.mention_index[link.target][0]
                if src_sent != tgt_sent:
                    stats.cross_sentence_link_counts[link.kind] += 1
    if stats.sentences:
        stats.avg_tokens = stats.tokens / stats.sentences
        stats.experiment_pct = 100.0 * stats.experiment_sentences / stats.sentences
    stats.experiment_histogram = dict(sorted(stats.experiment_histogram.items()))
    return stats


# ---------------------------------------------------------------------------
# Rendering: aligned tables, JSON-ready dicts, CSV rows


def pct(x: float) -> str:
    return f"{100.0 * x:.1f}"


def _score_row(name: str, s: PrfScore) -> list[str]:
    return [name, pct(s.precision), pct(s.recall), pct(s.f1),
            str(s.tp), str(s.fp), str(s.fn)]


def format_table(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(header[i]), *(len(r[i]) for r in rows)) if rows else len(header[i])
              for i in range(len(header))]
    def fmt(row):
        return "  ".join(cell.rjust(widths[i]) if i else cell.ljust(widths[i])
                         for i, cell in enumerate(row))
    line = "  ".join("-" * w for w in widths)
    return "\n".join([fmt(header), line] + [fmt(r) for r in rows])


def eval_report_table(report: EvalReport) -> str:
    rows = [_score_row(t, s) for t, s in report.per_type.items()]
    rows.append(["macro", "", "", pct(report.macro_f1), "", "", ""])
    return format_table(["type", "P", "R", "F1", "tp", "fp", "fn"], rows)


def eval_report_dict(report: EvalReport) -> dict:
    return {
        "per_type": {t: {"precision": s.precision, "recall": s.recall, "f1": s.f1,
                         "tp": s.tp, "fp": s.fp, "fn": s.fn}
                     for t, s in report.per_type.items()},
        "macro_f1": report.macro_f1,
    }


def eval_report_rows(report: EvalReport) -> tuple[list[str], list[list[str]]]:
    header = ["type", "precision", "recall", "f1", "tp", "fp", "fn"]
    rows = [[t, repr(s.precision), repr(s.recall), repr(s.f1),
             str(s.tp), str(s.fp), str(s.fn)]
            for t, s in report.per_type.items()]
    rows.append(["macro", "", "", repr(report.macro_f1), "", "", ""])
    return header, rows


def agreement_table(rep: AgreementReport) -> str:
    s = rep.sentence
    lines = [
        f"sentences compared: {rep.n_sentences}",
        f"observed agreement: {pct(s.p_o)}%",
        f"expected agreement: {pct(s.p_e)}%",
        f"cohen kappa: {s.kappa:.2f}",
        "",
        "sentence level (A as gold)",
        format_table(["class", "P", "R", "F1", "tp", "fp", "fn"],
                     [_score_row(name, score) for name, score in s.per_class.items()]),
        "",
        f"both marked experiment-describing: {rep.n_both_experiment}",
        "",
        "entity mention types (A as gold)",
        eval_report_table(rep.mention),
        "",
        "slot types (A as gold)",
        eval_report_table(rep.slot),
    ]
    return "\n".join(lines)


def agreement_dict(rep: AgreementReport) -> dict:
    return {
        "n_sentences": rep.n_sentences,
        "n_both_experiment": rep.n_both_experiment,
        "sentence": {
            "p_o": rep.sentence.p_o,
            "p_e": rep.sentence.p_e,
            "kappa": rep.sentence.kappa,
            "per_class": eval_report_dict(
                EvalReport(rep.sentence.per_class, 0.0))["per_type"],
        },
        "mention": eval_report_dict(rep.mention),
        "slot": eval_report_dict(rep.slot),
    }


def stats_table(stats: CorpusStats) -> str:
    rows = [
        ["documents", str(stats.documents)],
        ["sentences", str(stats.sentences)],
        ["tokens", str(stats.tokens)],
        ["avg tokens/sentence", f"{stats.avg_tokens:.1f}"],
        ["experiment sentences", str(stats.experiment_sentences)],
        ["experiment sentences %", f"{stats.experiment_pct:.1f}"],
        ["sentences w/ mentions", str(stats.sentences_with_mentions)],
    ]
    for t, c in stats.mention_counts.items():
        rows.append([f"mentions: {t}", str(c)])
    for t, c in stats.slot_counts.items():
        rows.append([f"slots: {t}", str(c)])
    for n, c in stats.experiment_histogram.items():
        rows.append([f"sentences w/ {n} experiment mention(s)", str(c)])
    for kind, c in stats.link_counts.items():
        rows.append([f"links: {kind}", str(c)])
        rows.append([f"links: {kind} cross-sentence",
                     str(stats.cross_sentence_link_counts[kind])])
    rows.append(["slot links", str(stats.slot_links)])
    rows.append(["slot links cross-sentence", str(stats.cross_sentence_slot_links)])
    return format_table(["statistic", "value"], rows)


def stats_dict(stats: CorpusStats) -> dict:
    return {
        "documents": stats.documents,
        "sentences": stats.sentences,
        "tokens": stats.tokens,
        "avg_tokens": stats.avg_tokens,
        "experiment_sentences": stats.experiment_sentences,
        "experiment_pct": stats.experiment_pct,
        "sentences_with_mentions": stats.sentences_with_mentions,
        "mention_counts": dict(stats.mention_counts),
        "slot_counts": dict(stats.slot_counts),
        "experiment_histogram": {str(k): v
                                 for k, v in stats.experiment_histogram.items()},
        "link_counts": dict(stats.link_counts),
        "cross_sentence_link_counts": dict(stats.cross_sentence_link_counts),
        "slot_links": stats.slot_links,
        "cross_sentence_slot_links": stats.cross_sentence_slot_links,
    }


def cv_dict(result: CvResult) -> dict:
    return {
        "task": result.task,
        "k": result.k,
        "seed": result.seed,
        "dev_folds": [eval_report_dict(r) for r in result.dev_reports],
        "dev_mean_std": {t: {"mean": m, "std": s}
                         for t, (m, s) in result.dev_mean_std().items()},
        "test_mean": result.test_mean(),
    }


def cv_table(result: CvResult) -> str:
    rows = []
    for t, (m, s) in result.dev_mean_std().items():
        rows.append([t, f"{pct(m)} +/- {pct(s)}"])
    out = ["dev F1 over folds (mean +/- std)",
           format_table(["type", "dev F1"], rows)]
    test = result.test_mean()
    if test:
        trows = []
        for t, scores in test.items():
            if "precision" in scores:
                trows.append([t, pct(scores["precision"]), pct(scores["recall"]),
                              pct(scores["f1"])])
            else:
                trows.append([t, "", "", pct(scores["f1"])])
        out += ["", "test (averaged over fold models)",
                format_table(["type", "P", "R", "F1"], trows)]
    return "\n".join(out)
