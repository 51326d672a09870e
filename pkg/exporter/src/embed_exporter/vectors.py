"""Vector sources and the subword piece splitter.

Two model identifiers are supported. ``hash`` derives a deterministic vector
from each key's bytes, so it covers any vocabulary and needs no model file;
``table:<path>`` serves vectors from an existing word2vec text file and
reports tokens outside it as uncovered.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np

DEFAULT_DIM = 64


class ExportError(Exception):
    """Invalid input file, model identifier, or request."""


def split_pieces(token: str) -> list[str]:
    """Split a token into subword pieces at character-class boundaries.

    Runs of letters, runs of digits, and runs of any other characters each
    form one piece, so a chemical formula like "Gd0.1Ce0.9O2" yields several
    pieces while a plain word stays whole.
    """
    pieces: list[str] = []
    cur_class = None
    for ch in token:
        cls = "a" if ch.isalpha() else "d" if ch.isdigit() else "o"
        if cls == cur_class:
            pieces[-1] += ch
        else:
            pieces.append(ch)
            cur_class = cls
    return pieces


@dataclass
class HashModel:
    """Deterministic pseudo-random vectors keyed by the token bytes.

    The seed comes from a BLAKE2 digest, not the process hash, so repeated
    runs and separate processes produce identical files.
    """

    dim: int = DEFAULT_DIM
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.dim <= 0:
            raise ExportError(f"dimension must be positive, got {self.dim}")

    def lookup(self, key: str) -> np.ndarray:
        vec = self._cache.get(key)
        if vec is None:
            digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "big"))
            vec = rng.standard_normal(self.dim) / np.sqrt(self.dim)
            self._cache[key] = vec
        return vec


@dataclass
class TableModel:
    """Vectors read from a word2vec text file; lookups outside it miss."""

    dim: int
    vectors: dict[str, np.ndarray]

    def lookup(self, key: str) -> np.ndarray | None:
        return self.vectors.get(key)


def load_table_model(path: str) -> TableModel:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            lines = handle.read().splitlines()
    except OSError as exc:
        raise ExportError(f"missing model file: {exc}") from None
    if not lines:
        raise ExportError(f"{path}: empty embedding file")
    parts = lines[0].split()
    if len(parts) != 2 or not all(p.lstrip("-").isdigit() for p in parts):
        raise ExportError(f"{path}: malformed header {lines[0]!r}, "
                          f"expected 'count dim'")
    dim = int(parts[1])
    if dim <= 0:
        raise ExportError(f"{path}: dimension must be positive, got {dim}")
    vectors: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(" ")
        if len(fields) != dim + 1:
            raise ExportError(f"{path}: line {lineno}: expected 1 token + "
                              f"{dim} values, got {len(fields)} fields")
        try:
            vectors[fields[0]] = np.array([float(x) for x in fields[1:]])
        except ValueError:
            raise ExportError(f"{path}: line {lineno}: non-numeric vector "
                              f"component") from None
    return TableModel(dim=dim, vectors=vectors)


def load_model(spec: str, dim: int | None):
    """Resolve a model identifier: ``hash`` or ``table:<path>``."""
    if spec == "hash":
        return HashModel(dim=dim if dim is not None else DEFAULT_DIM)
    if spec.startswith("table:"):
        model = load_table_model(spec[len("table:"):])
        if dim is not None and dim != model.dim:
            raise ExportError(f"--dim {dim} does not match the table "
                              f"dimension {model.dim}")
        return model
    raise ExportError(f"unknown model identifier {spec!r}; expected 'hash' "
                      f"or 'table:<path>'")
