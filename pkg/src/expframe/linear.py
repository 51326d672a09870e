"""Binary sentence classifiers: L2-regularized logistic regression and linear SVM.

Both minimize ``mean(loss) + lambda * ||w||^2 / 2`` (bias unregularized) over
sparse feature vectors. Logistic uses a quasi-Newton full-batch optimizer with
line search; the SVM uses a deterministic Pegasos-style subgradient schedule
with best-iterate tracking, so its final objective never exceeds the zero
vector's. Training is deterministic given the config.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize
from scipy import sparse as sp
from scipy.special import expit

from .corpus import Sentence, downsample_negatives
from .features import (FeatureIndex, SparseVector, build_matrix,
                       extract_sentence_features)

MODEL_FORMAT = "expframe-linear"
MODEL_VERSION = 1


@dataclass(frozen=True)
class LinearConfig:
    kind: str = "logistic"  # "logistic" or "hinge"
    lam: float = 1e-4
    max_iter: int = 500
    tol: float = 1e-6  # gradient-norm tolerance
    n_max: int = 4  # n-gram order for sentence features
    keep_rate: float = 1.0  # negative-sentence downsampling for corpus training
    seed: int = 0


@dataclass
class LinearModel:
    kind: str
    lam: float
    weights: np.ndarray  # aligned with index columns
    bias: float
    index: FeatureIndex
    n_max: int = 4

    def __post_init__(self):
        if len(self.weights) != len(self.index):
            raise ValueError(
                f"weight dimension {len(self.weights)} does not match feature "
                f"index size {len(self.index)}")
        if not np.all(np.isfinite(self.weights)) or not np.isfinite(self.bias):
            raise ValueError("model parameters must be finite")


def _as_csr(X, n_cols: int | None = None) -> sp.csr_matrix:
    if sp.issparse(X):
        return X.tocsr()
    vectors = list(X)
    if n_cols is None:
        n_cols = max((int(v.ids[-1]) + 1 for v in vectors if v.ids.size), default=0)
    return build_matrix(vectors, n_cols)


def _check_labels(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.size == 0:
        raise ValueError("empty training set")
    classes = np.unique(y)
    if not np.all(np.isin(classes, (0.0, 1.0))):
        raise ValueError(f"labels must be 0/1, got {classes}")
    if classes.size < 2:
        raise ValueError("single-class input: both classes must be present")
    return y


def logistic_objective(theta: np.ndarray, X: sp.csr_matrix, y: np.ndarray,
                       lam: float) -> tuple[float, np.ndarray]:
    """Average logistic loss + lam*||w||^2/2 and its analytic gradient."""
    n = X.shape[0]
    w, b = theta[:-1], theta[-1]
    signs = 2.0 * y - 1.0
    margins = signs * (X @ w + b)
    value = float(np.mean(np.logaddexp(0.0, -margins))) + 0.5 * lam * float(w @ w)
    dz = -(signs * expit(-margins)) / n
    grad = np.empty_like(theta)
    grad[:-1] = X.T @ dz + lam * w
    grad[-1] = dz.sum()
    return value, grad


def train_logistic(X, y, config: LinearConfig = LinearConfig(),
                   n_cols: int | None = None) -> tuple[np.ndarray, float]:
    """Fit logistic weights; returns (weights, bias)."""
    X = _as_csr(X, n_cols)
    y = _check_labels(y)
    if X.shape[0] != y.size:
        raise ValueError(f"{X.shape[0]} rows but {y.size} labels")
    theta0 = np.zeros(X.shape[1] + 1)
    result = optimize.minimize(
        logistic_objective, theta0, args=(X, y, config.lam),
        method="L-BFGS-B", jac=True,
        options={"maxiter": config.max_iter, "gtol": config.tol, "ftol": 1e-16})
    theta = result.x
    return theta[:-1], float(theta[-1])


def hinge_objective(w: np.ndarray, b: float, X: sp.csr_matrix, y: np.ndarray,
                    lam: float) -> float:
    signs = 2.0 * y - 1.0
    margins = signs * (X @ w + b)
    return float(np.mean(np.maximum(0.0, 1.0 - margins))) + 0.5 * lam * float(w @ w)


def train_linear_svm(X, y, config: LinearConfig = LinearConfig(),
                     n_cols: int | None = None) -> tuple[np.ndarray, float]:
    """Fit hinge-loss weights by full-batch Pegasos; returns (weights, bias).

    Iterates are projected onto the ball ||w|| <= sqrt(2/lam), which contains
    the optimum since its objective is at most hinge(0) = 1. The best iterate
    seen, including the zero start, is returned.
    """
    X = _as_csr(X, n_cols)
    y = _check_labels(y)
    if X.shape[0] != y.size:
        raise ValueError(f"{X.shape[0]} rows but {y.size} labels")
    lam = config.lam
    n = X.shape[0]
    signs = 2.0 * y - 1.0
    w = np.zeros(X.shape[1])
    b = 0.0
    radius = np.sqrt(2.0 / lam)
    best_w, best_b = w.copy(), b
    best_obj = hinge_objective(w, b, X, y, lam)
    for t in range(1, config.max_iter + 1):
        margins = signs * (X @ w + b)
        violating = margins < 1.0
        scale = signs * violating / n
        grad_w = lam * w - X.T @ scale
        grad_b = -float(scale.sum())
        gnorm = np.sqrt(float(grad_w @ grad_w) + grad_b * grad_b)
        if gnorm < config.tol:
            break
        eta = 1.0 / (lam * t)
        w = w - eta * grad_w
        b = b - eta * grad_b
        norm = np.sqrt(float(w @ w))
        if norm > radius:
            w *= radius / norm
        obj = hinge_objective(w, b, X, y, lam)
        if obj < best_obj:
            best_obj = obj
            best_w, best_b = w.copy(), b
    return best_w, best_b


def predict(model: LinearModel, x: SparseVector) -> tuple[int, float]:
    """Label and raw score w.x + b. Score 0 ties break to label 0."""
    score = x.dot(model.weights) + model.bias
    return (1 if score > 0.0 else 0), score


def predict_proba(model: LinearModel, x: SparseVector) -> float:
    if model.kind != "logistic":
        raise ValueError("probabilities are only defined for logistic models")
    return float(expit(x.dot(model.weights) + model.bias))


def predict_matrix(model: LinearModel, X: sp.csr_matrix) -> tuple[np.ndarray, np.ndarray]:
    scores = X @ model.weights + model.bias
    return (scores > 0.0).astype(np.int64), scores


# ---------------------------------------------------------------------------
# Corpus-level pipeline


def train_sentence_model(sentences, config: LinearConfig = LinearConfig()) -> LinearModel:
    """Train an experiment-sentence detector on labeled sentences.

    Applies negative downsampling at config.keep_rate, extracts n-gram
    features, fits the feature index on the (sampled) training data and
    trains the configured model kind.
    """
    sampled = downsample_negatives(sentences, config.keep_rate, config.seed)
    if not sampled:
        raise ValueError("empty training set")
    maps = [extract_sentence_features(s, config.n_max) for s in sampled]
    index = FeatureIndex.fit(maps)
    X = build_matrix([index.transform(m) for m in maps], len(index))
    y = np.array([1.0 if s.is_experiment else 0.0 for s in sampled])
    if config.kind == "logistic":
        weights, bias = train_logistic(X, y, config)
    elif config.kind == "hinge":
        weights, bias = train_linear_svm(X, y, config)
    else:
        raise ValueError(f"unknown model kind '{config.kind}'")
    return LinearModel(kind=config.kind, lam=config.lam, weights=weights,
                       bias=bias, index=index, n_max=config.n_max)


def classify_sentence(model: LinearModel, sentence: Sentence) -> tuple[int, float]:
    feats = extract_sentence_features(sentence, model.n_max)
    return predict(model, model.index.transform(feats))


def classify_corpus(model: LinearModel, sentences) -> list[int]:
    return [classify_sentence(model, s)[0] for s in sentences]


# ---------------------------------------------------------------------------
# Serialization (weights keyed by feature name, robust to re-indexing)


def model_to_json(model: LinearModel) -> str:
    names = model.index.names()
    weights = sorted((names[i], float(v))
                     for i, v in enumerate(model.weights) if v != 0.0)
    record = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "kind": model.kind,
        "lambda": model.lam,
        "n_max": model.n_max,
        "bias": float(model.bias),
        "weights": weights,
    }
    return json.dumps(record, ensure_ascii=False, separators=(",", ":"))


def model_from_json(text: str) -> LinearModel:
    record = json.loads(text)
    if record.get("format") != MODEL_FORMAT:
        raise ValueError(f"not a {MODEL_FORMAT} file")
    if record.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model version {record.get('version')}")
    names = [name for name, _ in record["weights"]]
    index = FeatureIndex.from_names(names)
    weights = np.array([value for _, value in record["weights"]], dtype=np.float64)
    return LinearModel(kind=record["kind"], lam=record["lambda"],
                       weights=weights, bias=float(record["bias"]),
                       index=index, n_max=int(record["n_max"]))
