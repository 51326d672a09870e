"""Corpus data model, canonical JSONL interchange, BIO codec and split utilities.

The interchange format is JSON Lines, one document per line:

    {"doc_id": ..., "sentences": [
        {"text": ...,
         "tokens":   [{"surface", "begin", "end", "lemma"?, "pos"?}, ...],
         "mentions": [{"id", "type", "begin_tok", "end_tok", "coref"?}, ...],
         "slots":    [{"anchor", "filler", "type"}, ...],
         "links":    [{"from", "to", "kind"}, ...]}]}

Token ``begin``/``end`` are character offsets into the sentence text; mention
spans are token-index ranges with exclusive end. All annotation is stand-off:
the text itself is never altered. Mention ids are unique per document, and
slot/experiment links may point at mentions in other sentences of the same
document (rare but present in real data). Unknown keys are ignored, so files
augmented with a ``"predicted"`` key still parse.
"""

from __future__ import annotations

import io
import json
import math
import os
import random
import re
from dataclasses import dataclass, field

MENTION_TYPES = ("EXPERIMENT", "MATERIAL", "VALUE", "DEVICE")

SLOT_TYPES = (
    "anode_material",
    "cathode_material",
    "conductivity",
    "current_density",
    "degradation_rate",
    "device",
    "electrolyte_material",
    "fuel_used",
    "interlayer_material",
    "open_circuit_voltage",
    "power_density",
    "resistance",
    "support_material",
    "time_of_operation",
    "voltage",
    "working_temperature",
)

# Present in the data and used when training the slot tagger, but excluded
# from slot evaluation.
AUX_SLOT_TYPES = ("experiment_evoking_word", "thickness")

EVOKING_WORD_TYPE = "experiment_evoking_word"

LINK_KINDS = ("SAME_EXP", "VARIATION")


class CorpusError(ValueError):
    """Raised for malformed or inconsistent corpus data."""


@dataclass(frozen=True)
class LabelSchema:
    """Label inventory a corpus is annotated with.

    The tagger and codec are parameterized by this, so the same machinery can
    run on corpora with different slot inventories.
    """

    mention_types: tuple[str, ...] = MENTION_TYPES
    slot_types: tuple[str, ...] = SLOT_TYPES
    aux_slot_types: tuple[str, ...] = AUX_SLOT_TYPES
    experiment_type: str = "EXPERIMENT"
    link_kinds: tuple[str, ...] = LINK_KINDS

    @property
    def all_slot_types(self) -> tuple[str, ...]:
        return self.slot_types + self.aux_slot_types


SOFC_SCHEMA = LabelSchema()


@dataclass(frozen=True)
class Token:
    surface: str
    begin: int
    end: int
    lemma: str | None = None
    pos: str | None = None


@dataclass(frozen=True)
class EntityMention:
    id: str
    type: str
    begin: int
    end: int
    coref: str | None = None  # antecedent mention id; stored, never modeled


@dataclass(frozen=True)
class SlotLink:
    anchor: str  # id of an EXPERIMENT mention
    filler: str  # id of the filling mention
    type: str


@dataclass(frozen=True)
class ExperimentLink:
    source: str
    target: str
    kind: str


@dataclass
class Sentence:
    """One sentence with its stand-off annotation layers.

    Treat as immutable after construction. ``doc_id``/``index`` and
    ``slot_filler_spans`` are derived by :func:`make_document`.
    """

    text: str
    tokens: list[Token]
    mentions: list[EntityMention] = field(default_factory=list)
    slot_links: list[SlotLink] = field(default_factory=list)
    experiment_links: list[ExperimentLink] = field(default_factory=list)
    doc_id: str = ""
    index: int = 0
    # (begin, end, slot_type) for mentions located in this sentence that fill
    # a slot anywhere in the document; first link in document order wins.
    slot_filler_spans: list[tuple[int, int, str]] = field(default_factory=list)

    @property
    def is_experiment(self) -> bool:
        return any(m.type == "EXPERIMENT" for m in self.mentions)

    def experiment_flag(self, schema: LabelSchema = SOFC_SCHEMA) -> bool:
        return any(m.type == schema.experiment_type for m in self.mentions)


@dataclass
class Document:
    doc_id: str
    sentences: list[Sentence]
    mention_index: dict[str, tuple[int, EntityMention]] = field(default_factory=dict)


@dataclass
class Corpus:
    documents: list[Document]
    schema: LabelSchema = SOFC_SCHEMA

    def sentences(self):
        for doc in self.documents:
            yield from doc.sentences

    @property
    def num_documents(self) -> int:
        return len(self.documents)

    @property
    def num_sentences(self) -> int:
        return sum(len(d.sentences) for d in self.documents)


def make_document(doc_id: str, sentences: list[Sentence],
                  schema: LabelSchema = SOFC_SCHEMA) -> Document:
    """Validate sentences, resolve document-wide references, derive slot spans."""
    mention_index: dict[str, tuple[int, EntityMention]] = {}
    for si, sent in enumerate(sentences):
        _validate_tokens(sent, si)
        _validate_mentions(sent, si, schema)
        for m in sent.mentions:
            if m.id in mention_index:
                raise CorpusError(f"sentence {si}: duplicate mention id '{m.id}'")
            mention_index[m.id] = (si, m)

    for si, sent in enumerate(sentences):
        for link in sent.slot_links:
            _require_mention(mention_index, link.anchor, si, "slot anchor")
            _require_mention(mention_index, link.filler, si, "slot filler")
            anchor = mention_index[link.anchor][1]
            if anchor.type != schema.experiment_type:
                raise CorpusError(
                    f"sentence {si}: slot anchor '{link.anchor}' has type "
                    f"{anchor.type}, expected {schema.experiment_type}")
            if link.filler == link.anchor:
                raise CorpusError(
                    f"sentence {si}: slot link anchor and filler are both '{link.anchor}'")
            if link.type not in schema.all_slot_types:
                raise CorpusError(f"sentence {si}: unknown slot type '{link.type}'")
        for link in sent.experiment_links:
            for mid in (link.source, link.target):
                _require_mention(mention_index, mid, si, "experiment link endpoint")
                if mention_index[mid][1].type != schema.experiment_type:
                    raise CorpusError(
                        f"sentence {si}: experiment link endpoint '{mid}' is not "
                        f"a {schema.experiment_type} mention")
            if link.kind not in schema.link_kinds:
                raise CorpusError(f"sentence {si}: unknown link kind '{link.kind}'")
        for m in sent.mentions:
            if m.coref is not None:
                _require_mention(mention_index, m.coref, si, "coref antecedent")

    # One slot label per filler mention: the first link in document order wins.
    filler_slot: dict[str, str] = {}
    for sent in sentences:
        for link in sent.slot_links:
            filler_slot.setdefault(link.filler, link.type)

    for si, sent in enumerate(sentences):
        sent.doc_id = doc_id
        sent.index = si
        spans = [(m.begin, m.end, filler_slot[m.id])
                 for m in sent.mentions if m.id in filler_slot]
        sent.slot_filler_spans = sorted(spans)

    return Document(doc_id=doc_id, sentences=sentences, mention_index=mention_index)


def _require_mention(index, mention_id, si, role):
    if mention_id not in index:
        raise CorpusError(f"sentence {si}: {role} references unknown mention id '{mention_id}'")


def _validate_tokens(sent: Sentence, si: int) -> None:
    prev_end = -1
    for t in sent.tokens:
        if t.begin < 0 or t.begin >= t.end:
            raise CorpusError(f"sentence {si}: bad token offsets [{t.begin}, {t.end})")
        if t.end > len(sent.text):
            raise CorpusError(
                f"sentence {si}: token [{t.begin}, {t.end}) exceeds text length {len(sent.text)}")
        if t.begin < prev_end:
            raise CorpusError(f"sentence {si}: tokens overlap or are unsorted at offset {t.begin}")
        if sent.text[t.begin:t.end] != t.surface:
            raise CorpusError(
                f"sentence {si}: token surface {t.surface!r} does not match text "
                f"slice {sent.text[t.begin:t.end]!r}")
        prev_end = t.end


def _validate_mentions(sent: Sentence, si: int, schema: LabelSchema) -> None:
    n = len(sent.tokens)
    for m in sent.mentions:
        if m.type not in schema.mention_types:
            raise CorpusError(f"sentence {si}: unknown mention type '{m.type}'")
        if not (0 <= m.begin < m.end <= n):
            raise CorpusError(
                f"sentence {si}: mention '{m.id}' span [{m.begin}, {m.end}) outside "
                f"sentence of length {n}")
    prev_end = 0
    for m in sorted(sent.mentions, key=lambda m: (m.begin, m.end)):
        if m.begin < prev_end:
            raise CorpusError(f"sentence {si}: mention '{m.id}' overlaps a previous mention")
        prev_end = m.end


# ---------------------------------------------------------------------------
# JSONL parsing and canonical serialization


def parse_corpus(source, schema: LabelSchema = SOFC_SCHEMA) -> Corpus:
    """Parse the canonical JSONL format into a validated :class:`Corpus`."""
    documents = []
    seen_ids: set[str] = set()
    for lineno, line in enumerate(_iter_lines(source), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"line {lineno}: invalid JSON: {exc}") from None
        try:
            doc = document_from_record(record, schema)
        except CorpusError as exc:
            raise CorpusError(f"line {lineno}: {exc}") from None
        if doc.doc_id in seen_ids:
            raise CorpusError(f"line {lineno}: duplicate doc_id '{doc.doc_id}'")
        seen_ids.add(doc.doc_id)
        documents.append(doc)
    return Corpus(documents=documents, schema=schema)


def document_from_record(record: dict, schema: LabelSchema = SOFC_SCHEMA) -> Document:
    if not isinstance(record, dict):
        raise CorpusError("record is not a JSON object")
    doc_id = record.get("doc_id")
    if not isinstance(doc_id, str) or not doc_id:
        raise CorpusError("missing or empty 'doc_id'")
    raw_sentences = record.get("sentences")
    if not isinstance(raw_sentences, list):
        raise CorpusError(f"doc '{doc_id}': missing 'sentences' list")
    sentences = []
    for si, raw in enumerate(raw_sentences):
        try:
            sentences.append(_sentence_from_record(raw))
        except CorpusError as exc:
            raise CorpusError(f"doc '{doc_id}': sentence {si}: {exc}") from None
    try:
        return make_document(doc_id, sentences, schema)
    except CorpusError as exc:
        raise CorpusError(f"doc '{doc_id}': {exc}") from None


def _sentence_from_record(raw: dict) -> Sentence:
    if not isinstance(raw, dict):
        raise CorpusError("sentence is not a JSON object")
    text = raw.get("text")
    if not isinstance(text, str):
        raise CorpusError("missing 'text'")
    tokens = [Token(surface=_req(t, "surface", str),
                    begin=_req(t, "begin", int),
                    end=_req(t, "end", int),
                    lemma=_opt(t, "lemma"),
                    pos=_opt(t, "pos"))
              for t in _req_list(raw, "tokens")]
    mentions = [EntityMention(id=str(_req(m, "id", (str, int))),
                              type=_req(m, "type", str),
                              begin=_req(m, "begin_tok", int),
                              end=_req(m, "end_tok", int),
                              coref=None if m.get("coref") is None else str(m["coref"]))
                for m in _req_list(raw, "mentions", optional=True)]
    slots = [SlotLink(anchor=str(_req(s, "anchor", (str, int))),
                      filler=str(_req(s, "filler", (str, int))),
                      type=_req(s, "type", str))
             for s in _req_list(raw, "slots", optional=True)]
    links = [ExperimentLink(source=str(_req(l, "from", (str, int))),
                            target=str(_req(l, "to", (str, int))),
                            kind=_req(l, "kind", str))
             for l in _req_list(raw, "links", optional=True)]
    return Sentence(text=text, tokens=tokens, mentions=mentions,
                    slot_links=slots, experiment_links=links)


def _req(obj, key, types):
    if not isinstance(obj, dict) or key not in obj:
        raise CorpusError(f"missing '{key}'")
    val = obj[key]
    if not isinstance(val, types) or isinstance(val, bool):
        raise CorpusError(f"field '{key}' has wrong type")
    return val


def _opt(obj, key):
    val = obj.get(key)
    if val is not None and not isinstance(val, str):
        raise CorpusError(f"field '{key}' must be a string")
    return val


def _req_list(obj, key, optional=False):
    val = obj.get(key)
    if val is None and optional:
        return []
    if not isinstance(val, list):
        raise CorpusError(f"missing '{key}' list")
    return val


def _iter_lines(source):
    # A str is a filesystem path only when it cannot be inline content:
    # single-line, not JSON-like, and not empty.
    if isinstance(source, os.PathLike) or (
            isinstance(source, str) and source != "" and "\n" not in source
            and not source.lstrip().startswith("{")):
        with open(source, "rb") as fh:
            yield from (ln.decode("utf-8") for ln in fh)
        return
    if isinstance(source, bytes):
        yield from io.StringIO(source.decode("utf-8"))
        return
    if isinstance(source, str):
        yield from io.StringIO(source)
        return
    for ln in source:
        yield ln.decode("utf-8") if isinstance(ln, bytes) else ln


def token_to_record(t: Token) -> dict:
    rec = {"surface": t.surface, "begin": t.begin, "end": t.end}
    if t.lemma is not None:
        rec["lemma"] = t.lemma
    if t.pos is not None:
        rec["pos"] = t.pos
    return rec


def sentence_to_record(sent: Sentence) -> dict:
    mentions = []
    for m in sent.mentions:
        rec = {"id": m.id, "type": m.type, "begin_tok": m.begin, "end_tok": m.end}
        if m.coref is not None:
            rec["coref"] = m.coref
        mentions.append(rec)
    return {
        "text": sent.text,
        "tokens": [token_to_record(t) for t in sent.tokens],
        "mentions": mentions,
        "slots": [{"anchor": s.anchor, "filler": s.filler, "type": s.type}
                  for s in sent.slot_links],
        "links": [{"from": l.source, "to": l.target, "kind": l.kind}
                  for l in sent.experiment_links],
    }


def document_to_record(doc: Document) -> dict:
    return {"doc_id": doc.doc_id,
            "sentences": [sentence_to_record(s) for s in doc.sentences]}


def serialize_corpus(corpus: Corpus) -> str:
    """Canonical serialization: fixed key order, compact separators, one doc per line."""
    lines = [json.dumps(document_to_record(d), ensure_ascii=False, separators=(",", ":"))
             for d in corpus.documents]
    return "\n".join(lines) + ("\n" if lines else "")


# ---------------------------------------------------------------------------
# BIO codec


def encode_bio(spans, length: int) -> list[str]:
    """Encode (begin, end, type) spans over ``length`` tokens as BIO labels."""
    labels = ["O"] * length
    prev_end = 0
    for begin, end, typ in sorted(spans):
        if begin < prev_end:
            raise CorpusError(f"overlapping spans at token {begin}")
        if not (0 <= begin < end <= length):
            raise CorpusError(f"span [{begin}, {end}) outside sequence of length {length}")
        labels[begin] = f"B-{typ}"
        for i in range(begin + 1, end):
            labels[i] = f"I-{typ}"
        prev_end = end
    return labels


def spans_to_bio(sentence: Sentence, layer: str, include_aux: bool = True) -> list[str]:
    """BIO labels for one annotation layer of a sentence.

    ``layer`` is ``"mention"`` (entity types) or ``"slot"`` (slot types in
    context). For the slot layer, EXPERIMENT mentions that do not themselves
    fill a slot are labeled with the auxiliary evoking-word type when
    ``include_aux`` is set.
    """
    if layer == "mention":
        spans = [(m.begin, m.end, m.type) for m in sentence.mentions]
    elif layer == "slot":
        spans = list(sentence.slot_filler_spans)
        if include_aux:
            covered = {(b, e) for b, e, _ in spans}
            for m in sentence.mentions:
                if m.type == "EXPERIMENT" and (m.begin, m.end) not in covered:
                    spans.append((m.begin, m.end, EVOKING_WORD_TYPE))
    else:
        raise ValueError(f"unknown layer '{layer}'")
    return encode_bio(spans, len(sentence.tokens))


def bio_to_spans(labels) -> list[tuple[int, int, str]]:
    """Decode BIO labels to sorted, non-overlapping (begin, end, type) spans.

    Accepts arbitrary sequences: a stray ``I-t`` (after O, at the start, or
    after a different type) opens a new span, and labels that are neither
    ``O`` nor ``B-``/``I-`` prefixed with a non-empty type are treated as
    ``O``. Valid input round-trips exactly, and every emitted span carries a
    non-empty type.
    """
    spans = []
    start = None
    cur = None

    def close(end):
        nonlocal start, cur
        if cur is not None:
            spans.append((start, end, cur))
        start = cur = None

    for i, lab in enumerate(labels):
        if lab.startswith("B-") and len(lab) > 2:
            close(i)
            start, cur = i, lab[2:]
        elif lab.startswith("I-") and len(lab) > 2:
            typ = lab[2:]
            if typ != cur:
                close(i)
                start, cur = i, typ
        else:
            close(i)
    close(len(labels))
    return spans


def bio_is_valid(labels) -> bool:
    prev = "O"
    for lab in labels:
        if lab != "O" and not (lab.startswith("B-") or lab.startswith("I-")):
            return False
        if lab.startswith("I-") and not (prev == "B-" + lab[2:] or prev == lab):
            return False
        prev = lab
    return True


# ---------------------------------------------------------------------------
# Splits and sampling


def split_kfold(corpus: Corpus, k: int, seed: int) -> list[tuple[Corpus, Corpus]]:
    """Partition documents into k folds; returns (train, dev) corpora per fold.

    Fold sizes differ by at most one; every document is in exactly one dev
    fold. Deterministic given the seed.
    """
    n = len(corpus.documents)
    if k < 2:
        raise ValueError(f"k must be at least 2, got {k}")
    if k > n:
        raise ValueError(f"k={k} exceeds document count {n}")
    order = list(range(n))
    random.Random(seed).shuffle(order)
    base, extra = divmod(n, k)
    folds = []
    pos = 0
    for fi in range(k):
        size = base + (1 if fi < extra else 0)
        dev_idx = set(order[pos:pos + size])
        pos += size
        dev_docs = [d for i, d in enumerate(corpus.documents) if i in dev_idx]
        train_docs = [d for i, d in enumerate(corpus.documents) if i not in dev_idx]
        folds.append((Corpus(train_docs, corpus.schema), Corpus(dev_docs, corpus.schema)))
    return folds


def downsample_negatives(sentences, keep_rate: float, seed: int) -> list[Sentence]:
    """Keep all experiment sentences; keep round(keep_rate * n) of the rest.

    Sampling is without replacement and deterministic given the seed; the
    original sentence order is preserved.
    """
    if not 0 < keep_rate <= 1:
        raise ValueError(f"keep_rate must be in (0, 1], got {keep_rate}")
    sentences = list(sentences)
    if keep_rate == 1.0:
        return sentences
    neg_idx = [i for i, s in enumerate(sentences) if not s.is_experiment]
    n_keep = int(math.floor(keep_rate * len(neg_idx) + 0.5))
    kept = set(random.Random(seed).sample(neg_idx, n_keep))
    return [s for i, s in enumerate(sentences)
            if s.is_experiment or i in kept]


def select_experiment_sentences(corpus: Corpus) -> list[Sentence]:
    return [s for s in corpus.sentences() if s.is_experiment]


# ---------------------------------------------------------------------------
# Tokenization and morphology fallbacks

_TOKEN_RE = re.compile(r"""
    \d+(?:[.,]\d+)*            # numbers, incl. decimals like 0.027
  | [^\W\d_]+(?:[-/][^\W\d_]+)*  # words, incl. hyphenated/slashed compounds
  | \S                         # any other single non-space character
""", re.VERBOSE | re.UNICODE)


def regex_tokenize(text: str) -> list[Token]:
    """Crude whitespace/punctuation tokenizer for raw text without tokens.

    A fallback only; chemistry-aware tokenization is expected upstream.
    """
    return [Token(surface=m.group(), begin=m.start(), end=m.end())
            for m in _TOKEN_RE.finditer(text)]


_NUM_RE = re.compile(r"[+-]?\d[\d.,]*")


def fallback_pos(surface: str) -> str:
    """Suffix-heuristic part-of-speech guess for tokens lacking a POS column."""
    if _NUM_RE.fullmatch(surface):
        return "CD"
    if not any(c.isalnum() for c in surface):
        return "PUNCT"
    low = surface.lower()
    if low.endswith("ly"):
        return "RB"
    if low.endswith("ing") and len(low) > 4:
        return "VBG"
    if low.endswith("ed") and len(low) > 3:
        return "VBD"
    if low.endswith(("al", "ic", "ous", "ive", "able")):
        return "JJ"
    if low.endswith(("s", "es")) and len(low) > 3:
        return "NNS"
    if surface[0].isupper():
        return "NNP"
    return "NN"


def fallback_lemma(surface: str) -> str:
    low = surface.lower()
    for suffix in ("ing", "ed", "es", "s"):
        if low.endswith(suffix) and len(low) - len(suffix) >= 3:
            return low[:-len(suffix)]
    return low


def ensure_morphology(corpus: Corpus) -> tuple[Corpus, int]:
    """Fill missing lemma/pos via the rule-based fallback.

    Returns the corpus (tokens replaced where needed) and the number of
    tokens that received fallback values, so callers can flag it.
    """
    filled = 0
    for doc in corpus.documents:
        for sent in doc.sentences:
            new_tokens = []
            for t in sent.tokens:
                if t.lemma is None or t.pos is None:
                    filled += 1
                    new_tokens.append(Token(
                        surface=t.surface, begin=t.begin, end=t.end,
                        lemma=t.lemma if t.lemma is not None else fallback_lemma(t.surface),
                        pos=t.pos if t.pos is not None else fallback_pos(t.surface)))
                else:
                    new_tokens.append(t)
            sent.tokens = new_tokens
    return corpus, filled
