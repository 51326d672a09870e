"""Export routines: static word2vec text tables and contextual JSONL files.

Output formats mirror the consumer's loaders exactly: a ``count dim`` header
with space-separated rows for static tables, and one JSON record per sentence
with keys doc_id, sent_idx, dim, vectors for contextual files. Floats are
written with ``repr`` so a read-back reproduces them bit for bit.
"""

import json
import logging
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .vectors import ExportError, split_pieces

log = logging.getLogger("embed_exporter")


@dataclass(frozen=True)
class ExportResult:
    total: int  # lookups attempted (tokens for both modes)
    covered: int

    @property
    def coverage(self) -> float:
        return self.covered / self.total if self.total else 1.0


def atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".embed-export-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _parse_record(lineno: int, line: str) -> dict:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ExportError(f"line {lineno}: invalid JSON: {exc}") from None
    if not isinstance(rec, dict):
        raise ExportError(f"line {lineno}: expected a JSON object")
    return rec


def iter_corpus_sentences(path: str):
    """Yield (doc_id, sent_idx, surfaces) from a canonical corpus JSONL file."""
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            rec = _parse_record(lineno, line)
            doc_id = rec.get("doc_id")
            sentences = rec.get("sentences")
            if not isinstance(doc_id, str) or not isinstance(sentences, list):
                raise ExportError(f"line {lineno}: expected doc_id string and "
                                  f"sentences list")
            if doc_id in seen:
                raise ExportError(f"line {lineno}: duplicate doc id {doc_id!r}")
            seen.add(doc_id)
            for idx, sent in enumerate(sentences):
                tokens = sent.get("tokens") if isinstance(sent, dict) else None
                if not isinstance(tokens, list):
                    raise ExportError(f"line {lineno}: sentence {idx} has no "
                                      f"tokens list")
                surfaces = []
                for tok in tokens:
                    surface = tok.get("surface") if isinstance(tok, dict) else None
                    if not isinstance(surface, str):
                        raise ExportError(f"line {lineno}: sentence {idx} has "
                                          f"a token without a surface string")
                    surfaces.append(surface)
                yield doc_id, idx, surfaces


def read_vocabulary(path: str) -> list[str]:
    """Tokens to export, first-seen order, deduplicated.

    A corpus JSONL file contributes every distinct token surface; any other
    file is read as one token per line.
    """
    with open(path, "r", encoding="utf-8") as handle:
        first = ""
        for line in handle:
            if line.strip():
                first = line.strip()
                break
    if first.startswith("{"):
        seen: dict[str, None] = {}
        for _, _, surfaces in iter_corpus_sentences(path):
            for surface in surfaces:
                seen.setdefault(surface, None)
        return list(seen)
    vocab: dict[str, None] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            token = line.strip()
            if token:
                vocab.setdefault(token, None)
    return list(vocab)


def _fmt_row(token: str, vec: np.ndarray) -> str:
    return " ".join([token] + [repr(float(x)) for x in vec])


def export_static(model, vocabulary, output: str) -> ExportResult:
    """Write a word2vec text table; tokens without a vector are omitted."""
    rows = []
    total = 0
    for token in vocabulary:
        total += 1
        if not token or any(ch.isspace() for ch in token):
            log.warning("token %r cannot be written to the table format, "
                        "skipped", token)
            continue
        vec = model.lookup(token)
        if vec is None:
            continue
        rows.append(_fmt_row(token, vec))
    text = "\n".join([f"{len(rows)} {model.dim}"] + rows) + "\n"
    atomic_write(output, text)
    return ExportResult(total=total, covered=len(rows))


def _pool(model, pieces: list[str], pooling: str):
    """Token vector from piece vectors; None marks an uncovered token."""
    if pooling == "first":
        return model.lookup(pieces[0]) if pieces else None
    found = [v for v in (model.lookup(p) for p in pieces) if v is not None]
    if not found:
        return None
    return np.mean(found, axis=0)


def export_contextual(model, corpus_path: str, output: str,
                      pooling: str = "first") -> ExportResult:
    """Write one record per sentence, vectors positionally aligned to tokens.

    Multi-piece tokens are pooled to exactly one vector (first piece by
    default); a fully uncovered token keeps its position as a zero vector.
    """
    if pooling not in ("first", "mean"):
        raise ExportError(f"unknown pooling {pooling!r}")
    lines = []
    total = 0
    covered = 0
    for doc_id, idx, surfaces in iter_corpus_sentences(corpus_path):
        vectors = []
        for surface in surfaces:
            total += 1
            vec = _pool(model, split_pieces(surface), pooling)
            if vec is None:
                vec = np.zeros(model.dim)
            else:
                covered += 1
            vectors.append([float(x) for x in vec])
        lines.append(json.dumps(
            {"doc_id": doc_id, "sent_idx": idx, "dim": model.dim,
             "vectors": vectors},
            ensure_ascii=False, separators=(",", ":")))
    atomic_write(output, "\n".join(lines) + "\n" if lines else "")
    return ExportResult(total=total, covered=covered)
