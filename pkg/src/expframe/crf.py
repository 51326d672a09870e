"""Linear-chain CRF for BIO tagging with exact inference and ML training.

All inference runs in log-space. The transition matrix T has shape
(K+2, K) for K labels: rows 0..K-1 hold label-to-label scores T[from, to],
row K holds begin-to-label scores and row K+1 holds label-to-end scores
(indexed by the label the sequence ends on).

Training maximizes sum over sentences of [score(gold) - logZ] minus
lambda * ||theta||^2 / 2 with a quasi-Newton optimizer; transitions are
learned soft (no mask), while decoding applies a BIO-validity mask by
default. Ties in decoding always break toward the lowest label index.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy import sparse as sp
from scipy.special import logsumexp

from .corpus import LabelSchema, SOFC_SCHEMA, Sentence, bio_to_spans, spans_to_bio
from .features import (DenseScaler, FeatureIndex, build_matrix,
                       extract_token_features)

MODEL_FORMAT = "expframe-crf"
MODEL_VERSION = 1

# Large finite penalty instead of -inf so masked lattices never produce NaN.
MASK_PENALTY = -1e30


@dataclass(frozen=True)
class CrfConfig:
    task: str = "entity"  # "entity" (mention types) or "slot" (slot types)
    lam: float = 1.0  # divided by #train sentences to give the effective lambda
    max_iter: int = 300
    tol: float = 1e-4  # projected-gradient tolerance
    window: int = 1
    bio_mask: bool = True  # constrain decoding to BIO-valid sequences
    standardize: bool = True  # standardize dense dims on train statistics
    include_aux: bool = True  # slot task: label spare EXPERIMENT words as evoking words
    seed: int = 0


def bio_label_set(types) -> list[str]:
    """O first (ties on an all-zero model decode to O), then B/I per type."""
    labels = ["O"]
    for t in types:
        labels.append(f"B-{t}")
        labels.append(f"I-{t}")
    return labels


def task_types(task: str, schema: LabelSchema, include_aux: bool) -> tuple[str, ...]:
    if task == "entity":
        return schema.mention_types
    if task == "slot":
        return schema.slot_types + (schema.aux_slot_types if include_aux else ())
    raise ValueError(f"unknown task '{task}'")


def bio_transition_mask(labels) -> np.ndarray:
    """(K+2, K) additive mask: MASK_PENALTY on transitions into an invalid I-."""
    K = len(labels)
    mask = np.zeros((K + 2, K))
    for j, to in enumerate(labels):
        if not to.startswith("I-"):
            continue
        t = to[2:]
        for i, frm in enumerate(labels):
            if frm not in (f"B-{t}", f"I-{t}"):
                mask[i, j] = MASK_PENALTY
        mask[K, j] = MASK_PENALTY  # cannot start a sentence inside a span
    return mask


# ---------------------------------------------------------------------------
# Exact inference on one lattice (reference implementations)


def score_sequence(unary: np.ndarray, T: np.ndarray, labels) -> float:
    """Unnormalized path score including begin and end transitions."""
    n, K = unary.shape
    labels = list(labels)
    if len(labels) != n:
        raise ValueError(f"got {len(labels)} labels for a lattice of length {n}")
    total = T[K, labels[0]] + unary[0, labels[0]]
    for i in range(1, n):
        total += T[labels[i - 1], labels[i]] + unary[i, labels[i]]
    total += T[K + 1, labels[-1]]
    return float(total)


def forward_backward(unary: np.ndarray, T: np.ndarray):
    """Log-space forward-backward.

    Returns (logZ, node log-marginals (n, K), edge log-marginals (n-1, K, K)).
    exp(node[i]) sums to 1 at every position; edges marginalize to nodes.
    """
    n, K = unary.shape
    if n < 1:
        raise ValueError("lattice must have length >= 1")
    trans = T[:K]
    alpha = np.empty((n, K))
    beta = np.empty((n, K))
    alpha[0] = T[K] + unary[0]
    for i in range(1, n):
        alpha[i] = unary[i] + logsumexp(alpha[i - 1][:, None] + trans, axis=0)
    log_z = float(logsumexp(alpha[n - 1] + T[K + 1]))
    beta[n - 1] = T[K + 1]
    for i in range(n - 2, -1, -1):
        beta[i] = logsumexp(trans + (unary[i + 1] + beta[i + 1])[None, :], axis=1)
    node = alpha + beta - log_z
    edge = np.empty((max(n - 1, 0), K, K))
    for i in range(n - 1):
        edge[i] = (alpha[i][:, None] + trans
                   + (unary[i + 1] + beta[i + 1])[None, :] - log_z)
    return log_z, node, edge


def backward_log_z(unary: np.ndarray, T: np.ndarray) -> float:
    """logZ computed from the backward recursion alone (cross-check path)."""
    n, K = unary.shape
    trans = T[:K]
    beta = T[K + 1].astype(np.float64, copy=True)
    for i in range(n - 2, -1, -1):
        beta = logsumexp(trans + (unary[i + 1] + beta)[None, :], axis=1)
    return float(logsumexp(T[K] + unary[0] + beta))


def viterbi(unary: np.ndarray, T: np.ndarray,
            mask: np.ndarray | None = None) -> tuple[list[int], float]:
    """Best label sequence and its score; ties break to the lowest label index."""
    n, K = unary.shape
    if n < 1:
        raise ValueError("lattice must have length >= 1")
    trans = T[:K] + (mask[:K] if mask is not None else 0.0)
    begin = T[K] + (mask[K] if mask is not None else 0.0)
    delta = begin + unary[0]
    back = np.empty((n, K), dtype=np.int64)
    for i in range(1, n):
        cand = delta[:, None] + trans
        back[i] = np.argmax(cand, axis=0)  # first max = lowest from-index
        delta = unary[i] + cand[back[i], np.arange(K)]
    final = delta + T[K + 1]
    last = int(np.argmax(final))
    path = [0] * n
    path[n - 1] = last
    for i in range(n - 1, 0, -1):
        path[i - 1] = int(back[i, path[i]])
    return path, float(final[last])


# ---------------------------------------------------------------------------
# Packed datasets and the batched training objective


@dataclass
class PackedDataset:
    """Token-major view of a tagging dataset for vectorized training.

    Sentences are grouped into equal-length buckets; ``token_rows`` maps each
    bucket to the rows of ``X_all`` for its sentences. Bucket order and
    in-bucket sentence order are fixed, so reductions are bit-reproducible.
    """

    X_all: sp.csr_matrix  # (total tokens, d)
    y_all: np.ndarray  # (total tokens,) gold label ids
    offsets: np.ndarray  # (S+1,) sentence boundaries in token rows
    buckets: list[tuple[int, np.ndarray]]  # (length, (B, length) row indices)
    n_labels: int

    @property
    def n_sentences(self) -> int:
        return len(self.offsets) - 1

    @property
    def n_tokens(self) -> int:
        return int(self.offsets[-1])


def pack_dataset(X_list, y_list, n_cols: int, n_labels: int) -> PackedDataset:
    if len(X_list) != len(y_list):
        raise ValueError("X and y have different lengths")
    keep = [(X, np.asarray(y, dtype=np.int64)) for X, y in zip(X_list, y_list)
            if X.shape[0] > 0]
    if not keep:
        raise ValueError("empty dataset")
    for X, y in keep:
        if X.shape[0] != y.size:
            raise ValueError("feature rows and label count differ within a sentence")
        if y.size and (y.min() < 0 or y.max() >= n_labels):
            raise ValueError("gold label id outside the label set")
    offsets = np.zeros(len(keep) + 1, dtype=np.int64)
    for i, (X, _) in enumerate(keep):
        offsets[i + 1] = offsets[i] + X.shape[0]
    X_all = sp.vstack([X for X, _ in keep], format="csr")
    y_all = np.concatenate([y for _, y in keep])
    by_length: dict[int, list[int]] = {}
    for i, (X, _) in enumerate(keep):
        by_length.setdefault(X.shape[0], []).append(i)
    buckets = []
    for length in sorted(by_length):
        sents = by_length[length]
        rows = np.empty((len(sents), length), dtype=np.int64)
        for bi, si in enumerate(sents):
            rows[bi] = np.arange(offsets[si], offsets[si + 1])
        buckets.append((length, rows))
    return PackedDataset(X_all=X_all, y_all=y_all, offsets=offsets,
                         buckets=buckets, n_labels=n_labels)


def empirical_counts(data: PackedDataset) -> tuple[sp.csr_matrix, np.ndarray]:
    """One-hot gold matrix (tokens, K) and gold transition counts (K+2, K)."""
    N, K = data.n_tokens, data.n_labels
    Y = sp.csr_matrix((np.ones(N), (np.arange(N), data.y_all)), shape=(N, K))
    emp_T = np.zeros((K + 2, K))
    for s in range(data.n_sentences):
        lo, hi = data.offsets[s], data.offsets[s + 1]
        seq = data.y_all[lo:hi]
        emp_T[K, seq[0]] += 1.0
        for a, b in zip(seq[:-1], seq[1:]):
            emp_T[a, b] += 1.0
        emp_T[K + 1, seq[-1]] += 1.0
    return Y, emp_T


def _forward_backward_batch(lat: np.ndarray, T: np.ndarray):
    """Vectorized forward-backward over a (B, n, K) bucket."""
    B, n, K = lat.shape
    trans = T[:K]
    alpha = np.empty((B, n, K))
    beta = np.empty((B, n, K))
    alpha[:, 0] = lat[:, 0] + T[K]
    for i in range(1, n):
        alpha[:, i] = lat[:, i] + logsumexp(
            alpha[:, i - 1][:, :, None] + trans[None], axis=1)
    log_z = logsumexp(alpha[:, n - 1] + T[K + 1][None], axis=1)
    beta[:, n - 1] = T[K + 1]
    for i in range(n - 2, -1, -1):
        beta[:, i] = logsumexp(
            trans[None] + (lat[:, i + 1] + beta[:, i + 1])[:, None, :], axis=2)
    return alpha, beta, log_z


def loglik_and_gradient(data: PackedDataset, W: np.ndarray, T: np.ndarray,
                        lam: float):
    """Regularized log-likelihood and its gradient (maximization orientation).

    value    = sum_s [score(gold_s) - logZ_s] - lam * ||theta||^2 / 2
    gradient = empirical counts - expected counts - lam * theta
    Returns (value, grad_W, grad_T).
    """
    N, K = data.n_tokens, data.n_labels
    trans = T[:K]
    lattice_all = np.asarray(data.X_all @ W)
    Y, emp_T = empirical_counts(data)
    P_all = np.empty((N, K))
    E_T = np.zeros((K + 2, K))
    total_log_z = 0.0
    for length, rows in data.buckets:
        lat = lattice_all[rows]
        alpha, beta, log_z = _forward_backward_batch(lat, T)
        total_log_z += float(np.sum(log_z))
        node = alpha + beta - log_z[:, None, None]
        P = np.exp(node)
        P_all[rows.reshape(-1)] = P.reshape(-1, K)
        E_T[K] += P[:, 0].sum(axis=0)
        E_T[K + 1] += P[:, -1].sum(axis=0)
        for i in range(length - 1):
            edge = np.exp(alpha[:, i][:, :, None] + trans[None]
                          + (lat[:, i + 1] + beta[:, i + 1])[:, None, :]
                          - log_z[:, None, None])
            E_T[:K] += edge.sum(axis=0)
    gold_unary = float(lattice_all[np.arange(N), data.y_all].sum())
    gold_trans = float((T * emp_T).sum())
    value = (gold_unary + gold_trans - total_log_z
             - 0.5 * lam * (float((W * W).sum()) + float((T * T).sum())))
    emp_W = np.asarray((data.X_all.T @ Y).todense())
    exp_W = data.X_all.T @ P_all
    grad_W = emp_W - exp_W - lam * W
    grad_T = emp_T - E_T - lam * T
    return value, grad_W, grad_T


# ---------------------------------------------------------------------------
# Model and training


@dataclass
class CrfModel:
    config: CrfConfig
    labels: list[str]
    W: np.ndarray  # (d, K) unary weights
    T: np.ndarray  # (K+2, K) transitions
    index: FeatureIndex
    lam: float  # effective regularization used in training
    scaler: DenseScaler | None = None

    def __post_init__(self):
        K = len(self.labels)
        if self.W.shape != (len(self.index), K):
            raise ValueError(f"W shape {self.W.shape} does not match "
                             f"({len(self.index)}, {K})")
        if self.T.shape != (K + 2, K):
            raise ValueError(f"T shape {self.T.shape} does not match ({K + 2}, {K})")
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.T))):
            raise ValueError("model parameters must be finite")

    @property
    def mask(self) -> np.ndarray | None:
        return bio_transition_mask(self.labels) if self.config.bio_mask else None


def _gold_layer(task: str) -> str:
    return "mention" if task == "entity" else "slot"


def sentence_feature_maps(sentence: Sentence, tables, window: int,
                          scaler: DenseScaler | None = None) -> list[dict]:
    maps = [extract_token_features(sentence, i, tables, window)
            for i in range(len(sentence.tokens))]
    if scaler is not None:
        maps = [scaler.transform(m) for m in maps]
    return maps


def prepare_training_data(sentences, config: CrfConfig,
                          schema: LabelSchema = SOFC_SCHEMA, tables=()):
    """Extract features and gold label ids; fit scaler and feature index."""
    sentences = [s for s in sentences if s.tokens]
    if not sentences:
        raise ValueError("empty dataset")
    labels = bio_label_set(task_types(config.task, schema, config.include_aux))
    label_id = {lab: i for i, lab in enumerate(labels)}
    raw_maps = [sentence_feature_maps(s, tables, config.window) for s in sentences]
    scaler = None
    if config.standardize and tables:
        scaler = DenseScaler.fit(m for maps in raw_maps for m in maps)
        raw_maps = [[scaler.transform(m) for m in maps] for maps in raw_maps]
    index = FeatureIndex.fit(m for maps in raw_maps for m in maps)
    X_list = [build_matrix([index.transform(m) for m in maps], len(index))
              for maps in raw_maps]
    y_list = []
    for s in sentences:
        gold = spans_to_bio(s, _gold_layer(config.task), config.include_aux)
        try:
            y_list.append(np.array([label_id[g] for g in gold], dtype=np.int64))
        except KeyError as exc:
            raise ValueError(f"gold label {exc} outside the task label set") from None
    data = pack_dataset(X_list, y_list, len(index), len(labels))
    return data, labels, index, scaler


def train_crf(sentences, config: CrfConfig = CrfConfig(),
              schema: LabelSchema = SOFC_SCHEMA, tables=()) -> CrfModel:
    """Train to (local) optimum of the regularized log-likelihood.

    Deterministic: quasi-Newton full-batch optimization from a zero start,
    fixed reduction order, no randomness anywhere.
    """
    data, labels, index, scaler = prepare_training_data(
        sentences, config, schema, tables)
    d, K = len(index), len(labels)
    lam_eff = config.lam / data.n_sentences
    n_w = d * K

    def objective(theta: np.ndarray):
        W = theta[:n_w].reshape(d, K)
        T = theta[n_w:].reshape(K + 2, K)
        value, grad_W, grad_T = loglik_and_gradient(data, W, T, lam_eff)
        return -value, -np.concatenate([grad_W.ravel(), grad_T.ravel()])

    theta0 = np.zeros(n_w + (K + 2) * K)
    result = optimize.minimize(
        objective, theta0, method="L-BFGS-B", jac=True,
        options={"maxiter": config.max_iter, "gtol": config.tol,
                 "ftol": 1e-16, "maxcor": 8})
    theta = result.x
    return CrfModel(config=config, labels=labels,
                    W=theta[:n_w].reshape(d, K).copy(),
                    T=theta[n_w:].reshape(K + 2, K).copy(),
                    index=index, lam=lam_eff, scaler=scaler)


def sentence_lattice(model: CrfModel, sentence: Sentence, tables=()) -> np.ndarray:
    maps = sentence_feature_maps(sentence, tables, model.config.window, model.scaler)
    X = build_matrix([model.index.transform(m) for m in maps], len(model.index))
    return np.asarray(X @ model.W)


def tag(model: CrfModel, sentence: Sentence, tables=()) -> list[tuple[int, int, str]]:
    """Predicted (begin, end, type) spans for one sentence."""
    if not sentence.tokens:
        return []
    unary = sentence_lattice(model, sentence, tables)
    path, _ = viterbi(unary, model.T, model.mask)
    return bio_to_spans([model.labels[i] for i in path])


def tag_labels(model: CrfModel, sentence: Sentence, tables=()) -> list[str]:
    if not sentence.tokens:
        return []
    unary = sentence_lattice(model, sentence, tables)
    path, _ = viterbi(unary, model.T, model.mask)
    return [model.labels[i] for i in path]


# ---------------------------------------------------------------------------
# Serialization


def model_to_json(model: CrfModel) -> str:
    names = model.index.names()
    weights = []
    for col, name in enumerate(names):
        row = model.W[col]
        for k in np.nonzero(row)[0]:
            weights.append((name, model.labels[int(k)], float(row[k])))
    weights.sort(key=lambda t: (t[0], t[1]))
    cfg = model.config
    record = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "task": cfg.task,
        "labels": model.labels,
        "lambda": model.lam,
        "window": cfg.window,
        "bio_mask": cfg.bio_mask,
        "standardize": cfg.standardize,
        "include_aux": cfg.include_aux,
        "scaler": model.scaler.to_dict() if model.scaler is not None else None,
        "transitions": [float(v) for v in model.T.ravel()],
        "weights": [[n, l, v] for n, l, v in weights],
    }
    return json.dumps(record, ensure_ascii=False, separators=(",", ":"))


def model_from_json(text: str) -> CrfModel:
    record = json.loads(text)
    if record.get("format") != MODEL_FORMAT:
        raise ValueError(f"not a {MODEL_FORMAT} file")
    if record.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model version {record.get('version')}")
    labels = list(record["labels"])
    label_id = {lab: i for i, lab in enumerate(labels)}
    K = len(labels)
    names: list[str] = []
    seen: dict[str, int] = {}
    triples = []
    for name, lab, value in record["weights"]:
        if name not in seen:
            seen[name] = len(names)
            names.append(name)
        triples.append((seen[name], label_id[lab], float(value)))
    index = FeatureIndex.from_names(names)
    W = np.zeros((len(names), K))
    for col, k, value in triples:
        W[col, k] = value
    T = np.array(record["transitions"], dtype=np.float64).reshape(K + 2, K)
    config = CrfConfig(task=record["task"], window=int(record["window"]),
                       bio_mask=bool(record["bio_mask"]),
                       standardize=bool(record["standardize"]),
                       include_aux=bool(record["include_aux"]))
    scaler = (DenseScaler.from_dict(record["scaler"])
              if record.get("scaler") is not None else None)
    return CrfModel(config=config, labels=labels, W=W, T=T, index=index,
                    lam=float(record["lambda"]), scaler=scaler)
