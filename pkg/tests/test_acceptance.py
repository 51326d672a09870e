"""Acceptance gate: one test per headline requirement.

Each test asserts the stated numbers at the stated tolerance and prints an
explicit ACCEPTANCE PASS line; pytest's PASSED/FAILED output is authoritative.
Checks that need the released annotation data look for the environment
variable EXPFRAME_SOFC_DATA (a directory holding train.jsonl and test.jsonl
in the canonical format, e.g. produced by ``expframe convert``). This sandbox
has no network access, so those checks skip with a reason when it is unset;
the synthetic twin corpora reproduce the released corpus statistics exactly
and keep the same code paths under test.
"""

import itertools
import json
import os
import time

import numpy as np
import pytest
import scipy.sparse as sp

import synth
from expframe import cli
from expframe import crf as crf_mod
from expframe import evaluation as eval_mod
from expframe import linear as linear_mod
from expframe.corpus import (Corpus, bio_is_valid, bio_to_spans, encode_bio,
                             parse_corpus, select_experiment_sentences,
                             serialize_corpus, spans_to_bio)
from test_crf import brute_best, brute_log_z, random_dataset, random_model
from test_linear import fd_gradient

DATA_ENV = "EXPFRAME_SOFC_DATA"


def _ok(line: str) -> None:
    print(f"ACCEPTANCE PASS: {line}")


def _released_split(name: str) -> Corpus:
    root = os.environ.get(DATA_ENV)
    if not root:
        pytest.skip(f"released corpus unavailable offline; set {DATA_ENV} to "
                    f"a directory holding train.jsonl and test.jsonl to run "
                    f"this check against the real data")
    return parse_corpus(os.path.join(root, f"{name}.jsonl"))


def _pct(x: float, digits: int = 1) -> float:
    return round(100.0 * x, digits)


# ---------------------------------------------------------------------------
# 1. agreement arithmetic, exact, < 1 s


def test_agreement_arithmetic_exact(iaa_corpora):
    start = time.perf_counter()
    # counts route: n=973 aligned sentences, A marks 119, B marks 111, 90 shared
    a = [1] * 90 + [1] * 29 + [0] * 21 + [0] * 833
    b = [1] * 90 + [0] * 29 + [1] * 21 + [0] * 833
    res = eval_mod.cohens_kappa(a, b)
    assert res.n == 973
    assert _pct(res.p_o) == 94.9
    assert _pct(res.p_e) == 79.2
    assert round(res.kappa, 2) == 0.75
    exp = eval_mod.binary_prf([bool(x) for x in a], [bool(x) for x in b])
    score = exp.per_type["experiment"]
    assert (_pct(score.precision), _pct(score.recall), _pct(score.f1)) == \
        (81.1, 75.6, 78.3)

    # corpus route: the dual-annotated twin reproduces the same report
    rep = eval_mod.agreement_report(*iaa_corpora)
    assert rep.n_sentences == 973
    assert rep.n_both_experiment == 90
    assert _pct(rep.sentence.p_o) == 94.9
    assert _pct(rep.sentence.p_e) == 79.2
    assert round(rep.sentence.kappa, 2) == 0.75
    sent = rep.sentence.per_class["experiment"]
    assert (_pct(sent.precision), _pct(sent.recall), _pct(sent.f1)) == \
        (81.1, 75.6, 78.3)

    elapsed = time.perf_counter() - start
    assert elapsed < 1.0
    _ok(f"agreement arithmetic exact (p_o 94.9, p_e 79.2, kappa 0.75, "
        f"PRF 81.1/75.6/78.3) in {elapsed:.3f}s")


# ---------------------------------------------------------------------------
# 2. corpus statistics, exact, < 10 s


def _assert_reference_train_stats(stats: eval_mod.CorpusStats) -> None:
    assert stats.documents == 34
    assert stats.sentences == 7630
    assert stats.experiment_sentences == 703
    assert _pct(stats.experiment_sentences / stats.sentences) == 9.2
    assert stats.mention_counts["MATERIAL"] == 1530
    assert stats.mention_counts["VALUE"] == 1177
    assert stats.mention_counts["DEVICE"] == 468
    assert stats.mention_counts["EXPERIMENT"] == 862
    assert stats.link_counts["SAME_EXP"] == 256
    assert stats.link_counts["VARIATION"] == 93
    assert stats.experiment_histogram[2] == 114
    assert stats.experiment_histogram[3] == 18
    assert stats.experiment_histogram[4] == 3


def test_corpus_statistics_exact_on_twin(train_twin):
    start = time.perf_counter()
    _assert_reference_train_stats(eval_mod.corpus_stats(train_twin))
    elapsed = time.perf_counter() - start
    assert elapsed < 10.0
    _ok(f"corpus statistics exact on the twin train split in {elapsed:.3f}s")


def test_corpus_statistics_exact_on_released_train_split():
    corpus = _released_split("train")
    start = time.perf_counter()
    _assert_reference_train_stats(eval_mod.corpus_stats(corpus))
    elapsed = time.perf_counter() - start
    assert elapsed < 10.0
    _ok(f"corpus statistics exact on the released train split in {elapsed:.3f}s")


# ---------------------------------------------------------------------------
# 3. CRF oracle equivalence on 200 random models, < 30 s


def test_crf_oracle_equivalence_200_models():
    start = time.perf_counter()
    rng = np.random.default_rng(814)
    for _ in range(200):
        n = int(rng.integers(1, 7))
        K = int(rng.integers(2, 5))
        unary, T = random_model(rng, n, K)
        log_z, _, _ = crf_mod.forward_backward(unary, T)
        assert abs(log_z - brute_log_z(unary, T)) < 1e-9
        path, score = crf_mod.viterbi(unary, T)
        best_seq, best_score, _ = brute_best(unary, T)
        assert path == best_seq
        assert abs(score - best_score) < 1e-9
    elapsed = time.perf_counter() - start
    assert elapsed < 30.0
    _ok(f"CRF Viterbi and logZ match enumeration on 200 random models "
        f"within 1e-9 in {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 4. gradient correctness on 50 random instances each, < 1 min


def test_gradient_correctness_50_instances():
    start = time.perf_counter()
    rng = np.random.default_rng(4050)
    worst_logistic = 0.0
    for _ in range(50):
        n, d = int(rng.integers(2, 9)), int(rng.integers(1, 7))
        X = sp.csr_matrix(rng.normal(size=(n, d)))
        y = rng.integers(0, 2, size=n).astype(float)
        y[0], y[1] = 0.0, 1.0
        theta = rng.normal(size=d + 1)
        lam = float(rng.uniform(0.01, 1.0))
        _, grad = linear_mod.logistic_objective(theta, X, y, lam)
        approx = fd_gradient(
            lambda t: linear_mod.logistic_objective(t, X, y, lam)[0], theta)
        scale = np.maximum(np.abs(approx), 1.0)
        worst_logistic = max(worst_logistic,
                             float(np.max(np.abs(grad - approx) / scale)))
    assert worst_logistic < 1e-6

    worst_crf = 0.0
    for _ in range(50):
        d, K = int(rng.integers(3, 8)), int(rng.integers(2, 4))
        data = random_dataset(rng, n_sentences=int(rng.integers(1, 4)),
                              d=d, K=K, max_len=6)
        W = rng.normal(size=(d, K))
        T = rng.normal(size=(K + 2, K))
        lam = float(rng.uniform(0.01, 1.0))
        _, grad_w, grad_t = crf_mod.loglik_and_gradient(data, W, T, lam)
        grad = np.concatenate([grad_w.ravel(), grad_t.ravel()])

        def value(flat):
            w = flat[:d * K].reshape(d, K)
            t = flat[d * K:].reshape(K + 2, K)
            return crf_mod.loglik_and_gradient(data, w, t, lam)[0]

        approx = fd_gradient(value, np.concatenate([W.ravel(), T.ravel()]))
        scale = np.maximum(np.abs(approx), 1.0)
        worst_crf = max(worst_crf,
                        float(np.max(np.abs(grad - approx) / scale)))
    assert worst_crf < 1e-5

    elapsed = time.perf_counter() - start
    assert elapsed < 60.0
    _ok(f"gradients match central differences (logistic {worst_logistic:.2e} "
        f"< 1e-6, CRF {worst_crf:.2e} < 1e-5) in {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 5. BIO codec round trip over all gold layers; decoder safe on anything


def test_bio_codec_round_trip_and_safety(train_twin, test_twin):
    mismatches = 0
    checked = 0
    for corpus in (train_twin, test_twin):
        for sent in corpus.sentences():
            for layer in ("mention", "slot"):
                labels = spans_to_bio(sent, layer)
                spans = bio_to_spans(labels)
                if encode_bio(spans, len(sent.tokens)) != labels:
                    mismatches += 1
                checked += 1
    assert checked > 15000
    assert mismatches == 0

    alphabet = ["O", "B-A", "I-A", "B-B", "I-B", "I-C", "", "junk", "B-",
                "I-", "b-A", "O ", "B-A-B"]
    rng = np.random.default_rng(505)
    for _ in range(300):
        n = int(rng.integers(0, 13))
        labels = [alphabet[int(i)] for i in rng.integers(0, len(alphabet),
                                                         size=n)]
        spans = bio_to_spans(labels)
        last_end = 0
        for b, e, typ in spans:
            assert 0 <= b < e <= n
            assert b >= last_end  # non-overlapping, in order
            assert typ
            last_end = e
        assert bio_is_valid(encode_bio(spans, n))
    _ok(f"BIO codec round trip clean on {checked} gold layers; decoder safe "
        f"on arbitrary input")


# ---------------------------------------------------------------------------
# 6. baseline reproduction at +/-5.0 absolute F1, CPU only, < 15 min


def _baseline_procedure(train: Corpus, test: Corpus, k: int,
                        sent_cfg: linear_mod.LinearConfig,
                        ent_cfg: crf_mod.CrfConfig,
                        slot_cfg: crf_mod.CrfConfig) -> dict:
    """Full reference pipeline: three models trained on the train split and
    scored on the test split, plus k-fold dev means on the train split."""
    out: dict = {}
    train_sents = list(train.sentences())
    test_sents = list(test.sentences())

    model = linear_mod.train_sentence_model(train_sents, sent_cfg)
    out["sentence_test_f1"] = eval_mod.evaluate_sentence_model(
        model, test_sents).per_type["experiment"].f1

    train_exp = select_experiment_sentences(train)
    test_exp = select_experiment_sentences(test)
    entity = crf_mod.train_crf(train_exp, ent_cfg)
    rep = eval_mod.evaluate_tagger(entity, test_exp)
    out["entity_test_macro"] = rep.macro_f1
    out["entity_test_per_type"] = {t: s.f1 for t, s in rep.per_type.items()}

    slot = crf_mod.train_crf(train_exp, slot_cfg)
    out["slot_test_macro"] = eval_mod.evaluate_tagger(slot, test_exp).macro_f1

    out["sentence_dev_mean"] = eval_mod.crossval(
        "sentence", train, k=k, config=sent_cfg).dev_mean_std()["experiment"][0]
    out["entity_dev_mean"] = eval_mod.crossval(
        "entity", train, k=k, config=ent_cfg).dev_mean_std()["macro"][0]
    out["slot_dev_mean"] = eval_mod.crossval(
        "slot", train, k=k, config=slot_cfg).dev_mean_std()["macro"][0]
    return out


def test_baseline_procedure_runs_end_to_end_on_twin(train_twin, test_twin):
    """Smoke run of the full procedure on twin subsets; score targets apply
    only to the released data, so here we check shape and sanity."""
    train = Corpus(documents=train_twin.documents[:6])
    test = Corpus(documents=test_twin.documents[:3])
    got = _baseline_procedure(
        train, test, k=2,
        sent_cfg=linear_mod.LinearConfig(n_max=2, keep_rate=0.4, max_iter=80),
        ent_cfg=crf_mod.CrfConfig(task="entity", max_iter=40),
        slot_cfg=crf_mod.CrfConfig(task="slot", max_iter=40))
    assert set(got) == {"sentence_test_f1", "entity_test_macro",
                        "entity_test_per_type", "slot_test_macro",
                        "sentence_dev_mean", "entity_dev_mean",
                        "slot_dev_mean"}
    assert set(got["entity_test_per_type"]) == {"EXPERIMENT", "MATERIAL",
                                                "VALUE", "DEVICE"}
    for key, value in got.items():
        if key == "entity_test_per_type":
            continue
        assert 0.0 <= value <= 1.0, key
    assert got["sentence_test_f1"] > 0.5  # the twin carries learnable signal
    _ok("baseline procedure runs end to end on the twin")


def test_baseline_reproduction_at_tolerance():
    train = _released_split("train")
    test = _released_split("test")
    start = time.perf_counter()
    got = _baseline_procedure(
        train, test, k=5,
        sent_cfg=linear_mod.LinearConfig(),
        ent_cfg=crf_mod.CrfConfig(task="entity"),
        slot_cfg=crf_mod.CrfConfig(task="slot"))

    tol = 0.05  # +/- 5.0 absolute F1 on the percent scale
    assert abs(got["sentence_test_f1"] - 0.583) <= tol
    assert abs(got["entity_test_macro"] - 0.603) <= tol
    per_type = got["entity_test_per_type"]
    assert abs(per_type["EXPERIMENT"] - 0.614) <= tol
    assert abs(per_type["MATERIAL"] - 0.423) <= tol
    assert abs(per_type["VALUE"] - 0.736) <= tol
    assert abs(per_type["DEVICE"] - 0.641) <= tol
    assert abs(got["slot_test_macro"] - 0.413) <= tol

    assert abs(got["sentence_dev_mean"] - 0.530) <= 0.042 + tol
    assert abs(got["entity_dev_mean"] - 0.607) <= 0.045 + tol
    assert abs(got["slot_dev_mean"] - 0.453) <= 0.056 + tol

    elapsed = time.perf_counter() - start
    assert elapsed < 900.0
    _ok(f"baseline scores within +/-5.0 absolute F1 of the reference in "
        f"{elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 7. determinism: reruns with the same seed are byte identical


def test_determinism_byte_identical_reruns(train_twin, tmp_path):
    corpus_path = tmp_path / "corpus.jsonl"
    corpus_path.write_text(
        serialize_corpus(Corpus(documents=train_twin.documents[:2])),
        encoding="utf-8")

    outputs: dict[str, list[bytes]] = {"sentence": [], "entity": [], "kfold": []}
    for round_no in ("a", "b"):
        path = tmp_path / f"sentence-{round_no}.json"
        assert cli.main(["train", "--task", "sentence",
                         "--corpus", str(corpus_path), "--model", str(path),
                         "--seed", "3", "--max-iter", "60", "--n-max", "2",
                         "--keep-rate", "0.5"]) == 0
        outputs["sentence"].append(path.read_bytes())

        path = tmp_path / f"entity-{round_no}.json"
        assert cli.main(["train", "--task", "entity",
                         "--corpus", str(corpus_path), "--model", str(path),
                         "--seed", "3", "--max-iter", "30"]) == 0
        outputs["entity"].append(path.read_bytes())

        path = tmp_path / f"kfold-{round_no}.json"
        assert cli.main(["kfold", "--task", "sentence",
                         "--corpus", str(corpus_path), "--k", "2",
                         "--seed", "3", "--max-iter", "40", "--n-max", "2",
                         "--keep-rate", "0.5", "--output", str(path)]) == 0
        outputs["kfold"].append(path.read_bytes())

    for name, (first, second) in outputs.items():
        assert first == second, name
        assert first  # non-empty artifact
    _ok("train and kfold reruns with the same seed are byte identical")
