"""Sparse and dense feature extraction for the classifiers and the tagger.

Feature maps are plain ``{name: value}`` dicts. A :class:`FeatureIndex` fixed
on training data turns them into :class:`SparseVector` columns; features never
seen in training are silently dropped at predict time. Dense embedding
dimensions ride along as real-valued features named ``emb:{tag}:{k}``.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse as sp

from .corpus import Sentence, _iter_lines, fallback_lemma, fallback_pos

NGRAM_JOINER = "▸"  # n-gram parts joined as w:the▸SOFC
BOS = "<s>"
EOS = "</s>"


class FeatureFormatError(ValueError):
    """Raised for malformed embedding-table files."""


# ---------------------------------------------------------------------------
# Sparse plumbing


@dataclass(frozen=True)
class SparseVector:
    """Sorted (column id, value) pairs; ids strictly increasing, values finite."""

    ids: np.ndarray
    values: np.ndarray

    def dot(self, weights: np.ndarray) -> float:
        if self.ids.size == 0:
            return 0.0
        return float(weights[self.ids] @ self.values)

    @property
    def nnz(self) -> int:
        return int(self.ids.size)


class FeatureIndex:
    """Injective feature-name to column-id map, frozen after fitting."""

    def __init__(self):
        self._ids: dict[str, int] = {}
        self._frozen = False

    @classmethod
    def fit(cls, feature_maps) -> "FeatureIndex":
        index = cls()
        for feats in feature_maps:
            for name in feats:
                index.add(name)
        index.freeze()
        return index

    @classmethod
    def from_names(cls, names) -> "FeatureIndex":
        index = cls()
        for name in names:
            index.add(name)
        index.freeze()
        return index

    def add(self, name: str) -> int:
        if self._frozen:
            raise RuntimeError("FeatureIndex is frozen")
        col = self._ids.get(name)
        if col is None:
            col = len(self._ids)
            self._ids[name] = col
        return col

    def freeze(self) -> None:
        self._frozen = True

    @property
    def frozen(self) -> bool:
        return self._frozen

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, name: str) -> bool:
        return name in self._ids

    def get(self, name: str) -> int | None:
        return self._ids.get(name)

    def names(self) -> list[str]:
        """Feature names ordered by column id."""
        out = [""] * len(self._ids)
        for name, col in self._ids.items():
            out[col] = name
        return out

    def transform(self, feats: dict[str, float]) -> SparseVector:
        pairs = sorted((self._ids[name], float(val))
                       for name, val in feats.items() if name in self._ids)
        ids = np.fromiter((p[0] for p in pairs), dtype=np.int64, count=len(pairs))
        values = np.fromiter((p[1] for p in pairs), dtype=np.float64, count=len(pairs))
        return SparseVector(ids=ids, values=values)


def build_matrix(vectors, n_cols: int) -> sp.csr_matrix:
    """Stack SparseVectors into one CSR matrix (rows in input order)."""
    vectors = list(vectors)
    indptr = np.zeros(len(vectors) + 1, dtype=np.int64)
    for i, v in enumerate(vectors):
        indptr[i + 1] = indptr[i] + v.ids.size
    total = int(indptr[-1])
    indices = np.empty(total, dtype=np.int64)
    data = np.empty(total, dtype=np.float64)
    for i, v in enumerate(vectors):
        indices[indptr[i]:indptr[i + 1]] = v.ids
        data[indptr[i]:indptr[i + 1]] = v.values
    return sp.csr_matrix((data, indices, indptr), shape=(len(vectors), n_cols))


# ---------------------------------------------------------------------------
# Sentence-level features (experiment detection)


def extract_sentence_features(sentence: Sentence, n_max: int = 4) -> dict[str, float]:
    """Binary indicators for all surface and POS n-grams, n = 1..n_max."""
    words = [t.surface for t in sentence.tokens]
    tags = [t.pos if t.pos is not None else fallback_pos(t.surface)
            for t in sentence.tokens]
    feats: dict[str, float] = {}
    for prefix, seq in (("w:", words), ("p:", tags)):
        for n in range(1, n_max + 1):
            for i in range(len(seq) - n + 1):
                feats[prefix + NGRAM_JOINER.join(seq[i:i + n])] = 1.0
    return feats


# ---------------------------------------------------------------------------
# Token-level features (sequence tagging)


def word_shape(surface: str) -> str:
    """Character-class sketch with runs collapsed: Gd0.1 → Xxd.d"""
    out: list[str] = []
    for ch in surface:
        if ch.isupper():
            cls = "X"
        elif ch.islower():
            cls = "x"
        elif ch.isdigit():
            cls = "d"
        else:
            cls = ch
        if not out or out[-1] != cls:
            out.append(cls)
    return "".join(out)


_NUMERIC_RE = re.compile(r"[+-]?\d+(?:[.,]\d+)*(?:[eE][+-]?\d+)?")
_NUMERIC_PREFIX_RE = re.compile(r"[+-]?\d[\d.,]*")

# Case-sensitive so the article "a" does not read as ampere.
_UNIT_ATOMS = {
    "°C", "C", "K", "V", "mV", "kV", "A", "mA", "W", "mW", "kW",
    "Ω", "ohm", "Ohm", "S", "h", "hr", "hrs", "min", "s",
    "Pa", "kPa", "MPa", "GPa", "bar", "atm",
    "m", "cm", "mm", "µm", "μm", "um", "nm", "%",
    "mol", "sccm", "mL", "ml", "L", "g", "mg", "kg", "Hz", "kHz",
}


def is_numeric(surface: str) -> bool:
    return bool(_NUMERIC_RE.fullmatch(surface))


def _is_unit_word(word: str) -> bool:
    # strip exponents: cm2, cm-2, cm−2, cm⁻²
    word = word.rstrip("0123456789⁻¹²³-−")
    return word in _UNIT_ATOMS


def has_unit_suffix(surface: str) -> bool:
    """True for measurement units, bare (``S/cm``) or glued (``750°C``)."""
    m = _NUMERIC_PREFIX_RE.match(surface)
    rest = surface[m.end():] if m else surface
    if not rest:
        return False
    parts = [p for p in re.split(r"[/·*]", rest) if p]
    return bool(parts) and all(_is_unit_word(p) for p in parts)


def extract_token_features(sentence: Sentence, position: int,
                           tables=(), window: int = 1) -> dict[str, float]:
    """Discrete window features plus dense embedding dims for the current token.

    Out-of-range window positions contribute a begin/end-of-sentence sentinel.
    A token missing from a table yields that table's dims as explicit zeros
    plus an ``emb:{tag}:unk`` indicator.
    """
    tokens = sentence.tokens
    if not 0 <= position < len(tokens):
        raise IndexError(f"position {position} outside sentence of length {len(tokens)}")
    feats: dict[str, float] = {}
    for off in range(-window, window + 1):
        i = position + off
        if 0 <= i < len(tokens):
            t = tokens[i]
            lemma = t.lemma if t.lemma is not None else fallback_lemma(t.surface)
            pos_tag = t.pos if t.pos is not None else fallback_pos(t.surface)
            feats[f"w[{off}]={t.surface}"] = 1.0
            feats[f"low[{off}]={t.surface.lower()}"] = 1.0
            feats[f"lem[{off}]={lemma}"] = 1.0
            feats[f"pos[{off}]={pos_tag}"] = 1.0
            feats[f"shape[{off}]={word_shape(t.surface)}"] = 1.0
            if is_numeric(t.surface):
                feats[f"num[{off}]"] = 1.0
            if has_unit_suffix(t.surface):
                feats[f"unit[{off}]"] = 1.0
        else:
            feats[f"w[{off}]={BOS if i < 0 else EOS}"] = 1.0
    for table in tables:
        vec = table.vector(sentence, position)
        if vec is None:
            for k in range(table.dim):
                feats[f"emb:{table.tag}:{k}"] = 0.0
            feats[f"emb:{table.tag}:unk"] = 1.0
        else:
            for k in range(table.dim):
                feats[f"emb:{table.tag}:{k}"] = float(vec[k])
    return feats


# ---------------------------------------------------------------------------
# Embedding tables


@dataclass
class EmbeddingTable:
    """Static token-to-vector table (word2vec text format on disk)."""

    dim: int
    vectors: dict[str, np.ndarray]
    tag: str = "static"

    def __post_init__(self):
        if self.dim <= 0:
            raise FeatureFormatError(f"dimension must be positive, got {self.dim}")
        for token, vec in self.vectors.items():
            if vec.shape != (self.dim,):
                raise FeatureFormatError(
                    f"vector for {token!r} has shape {vec.shape}, expected ({self.dim},)")

    def lookup(self, surface: str) -> np.ndarray | None:
        vec = self.vectors.get(surface)
        if vec is None and surface.lower() != surface:
            vec = self.vectors.get(surface.lower())
        return vec

    def vector(self, sentence: Sentence, position: int) -> np.ndarray | None:
        return self.lookup(sentence.tokens[position].surface)

    def __len__(self) -> int:
        return len(self.vectors)


@dataclass
class ContextualTable:
    """Per-token vectors keyed by (doc_id, sentence index), consumed positionally."""

    dim: int
    sentences: dict[tuple[str, int], np.ndarray]
    tag: str = "contextual"

    def vector(self, sentence: Sentence, position: int) -> np.ndarray | None:
        arr = self.sentences.get((sentence.doc_id, sentence.index))
        if arr is None or not 0 <= position < arr.shape[0]:
            return None
        return arr[position]

    def __len__(self) -> int:
        return len(self.sentences)


def load_embedding_table(source, tag: str = "static") -> EmbeddingTable:
    """Read word2vec text format: header "count dim", rows "token v1 … vd"."""
    lines = _iter_lines(source)
    try:
        header = next(lines)
    except StopIteration:
        raise FeatureFormatError("empty embedding file") from None
    parts = header.split()
    if len(parts) != 2:
        raise FeatureFormatError(f"malformed header {header.strip()!r}, expected 'count dim'")
    try:
        count, dim = int(parts[0]), int(parts[1])
    except ValueError:
        raise FeatureFormatError(f"malformed header {header.strip()!r}") from None
    if dim <= 0:
        raise FeatureFormatError(f"dimension must be positive, got {dim}")
    vectors: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(lines, start=2):
        if not line.strip():
            continue
        fields = line.rstrip("\n").split(" ")
        if len(fields) != dim + 1:
            raise FeatureFormatError(
                f"line {lineno}: expected 1 token + {dim} values, got {len(fields)} fields")
        try:
            vec = np.array([float(x) for x in fields[1:]], dtype=np.float64)
        except ValueError:
            raise FeatureFormatError(f"line {lineno}: non-numeric vector component") from None
        if not np.all(np.isfinite(vec)):
            raise FeatureFormatError(f"line {lineno}: non-finite vector component")
        vectors[fields[0]] = vec
    if len(vectors) != count:
        raise FeatureFormatError(
            f"header declares {count} entries but file has {len(vectors)}")
    return EmbeddingTable(dim=dim, vectors=vectors, tag=tag)


def load_contextual_table(source, tag: str = "contextual") -> ContextualTable:
    """Read the contextual JSONL format: {doc_id, sent_idx, dim, vectors}."""
    sentences: dict[tuple[str, int], np.ndarray] = {}
    dim: int | None = None
    for lineno, line in enumerate(_iter_lines(source), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FeatureFormatError(f"line {lineno}: invalid JSON: {exc}") from None
        try:
            key = (str(rec["doc_id"]), int(rec["sent_idx"]))
            rec_dim = int(rec["dim"])
            rows = rec["vectors"]
        except (KeyError, TypeError, ValueError):
            raise FeatureFormatError(f"line {lineno}: missing or malformed fields") from None
        if dim is None:
            dim = rec_dim
        elif rec_dim != dim:
            raise FeatureFormatError(f"line {lineno}: dim {rec_dim} != file dim {dim}")
        if key in sentences:
            raise FeatureFormatError(f"line {lineno}: duplicate sentence key {key}")
        arr = np.array(rows, dtype=np.float64)
        if arr.size == 0:
            arr = arr.reshape(0, dim)
        if arr.ndim != 2 or arr.shape[1] != dim:
            raise FeatureFormatError(f"line {lineno}: vector rows do not all have {dim} floats")
        sentences[key] = arr
    if dim is None:
        raise FeatureFormatError("empty contextual file")
    return ContextualTable(dim=dim, sentences=sentences, tag=tag)


# ---------------------------------------------------------------------------
# Standardization of dense features


def _emb_tag(name: str) -> str | None:
    if not name.startswith("emb:"):
        return None
    parts = name.split(":", 2)
    return parts[1] if len(parts) == 3 else None


@dataclass
class DenseScaler:
    """Per-feature standardization for dense dims, fit on covered train tokens.

    Tokens flagged unk keep their zeros untouched, both at fit and transform
    time, so "unknown" stays a neutral value instead of drifting with the
    train mean.
    """

    mean: dict[str, float] = field(default_factory=dict)
    scale: dict[str, float] = field(default_factory=dict)

    @classmethod
    def fit(cls, feature_maps) -> "DenseScaler":
        sums: dict[str, float] = {}
        sqs: dict[str, float] = {}
        counts: dict[str, int] = {}
        for feats in feature_maps:
            unk_tags = {_emb_tag(n) for n in feats if n.endswith(":unk") and _emb_tag(n)}
            for name, val in feats.items():
                tag = _emb_tag(name)
                if tag is None or name.endswith(":unk") or tag in unk_tags:
                    continue
                sums[name] = sums.get(name, 0.0) + val
                sqs[name] = sqs.get(name, 0.0) + val * val
                counts[name] = counts.get(name, 0) + 1
        mean = {}
        scale = {}
        for name, n in counts.items():
            mu = sums[name] / n
            var = max(sqs[name] / n - mu * mu, 0.0)
            std = math.sqrt(var)
            mean[name] = mu
            scale[name] = std if std > 1e-12 else 1.0
        return cls(mean=mean, scale=scale)

    def transform(self, feats: dict[str, float]) -> dict[str, float]:
        if not self.mean:
            return feats
        unk_tags = {_emb_tag(n) for n in feats if n.endswith(":unk") and _emb_tag(n)}
        out = dict(feats)
        for name, val in feats.items():
            if name not in self.mean:
                continue
            if _emb_tag(name) in unk_tags:
                continue
            out[name] = (val - self.mean[name]) / self.scale[name]
        return out

    def to_dict(self) -> dict:
        names = sorted(self.mean)
        return {"names": names,
                "mean": [self.mean[n] for n in names],
                "scale": [self.scale[n] for n in names]}

    @classmethod
    def from_dict(cls, data: dict) -> "DenseScaler":
        names = data["names"]
        return cls(mean=dict(zip(names, data["mean"])),
                   scale=dict(zip(names, data["scale"])))
