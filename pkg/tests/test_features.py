import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_sent
from expframe import features as F
from expframe.corpus import Token


def sent_with_pos(rows):
    """rows: (surface, pos) pairs."""
    s = make_sent([w for w, _ in rows])
    s.tokens = [Token(surface=t.surface, begin=t.begin, end=t.end,
                      lemma=t.surface.lower(), pos=pos)
                for t, (_, pos) in zip(s.tokens, rows)]
    return s


def test_sentence_ngrams_exact():
    s = sent_with_pos([("the", "DT"), ("SOFC", "NN")])
    feats = F.extract_sentence_features(s, n_max=2)
    assert feats == {
        "w:the": 1.0, "w:SOFC": 1.0, "w:the▸SOFC": 1.0,
        "p:DT": 1.0, "p:NN": 1.0, "p:DT▸NN": 1.0,
    }


def test_sentence_ngrams_single_token():
    s = sent_with_pos([("SOFC", "NN")])
    assert F.extract_sentence_features(s, n_max=4) == {"w:SOFC": 1.0, "p:NN": 1.0}


def test_sentence_ngrams_are_indicators_not_counts():
    s = sent_with_pos([("a", "DT"), ("a", "DT")])
    feats = F.extract_sentence_features(s, n_max=1)
    assert feats == {"w:a": 1.0, "p:DT": 1.0}


def test_sentence_ngrams_empty_sentence():
    s = make_sent([])
    assert F.extract_sentence_features(s) == {}


def test_token_features_center_exact():
    s = sent_with_pos([("The", "DT"), ("anode", "NN"), ("750°C", "CD")])
    feats = F.extract_token_features(s, 1)
    assert feats == {
        "w[-1]=The": 1.0, "low[-1]=the": 1.0, "lem[-1]=the": 1.0,
        "pos[-1]=DT": 1.0, "shape[-1]=Xx": 1.0,
        "w[0]=anode": 1.0, "low[0]=anode": 1.0, "lem[0]=anode": 1.0,
        "pos[0]=NN": 1.0, "shape[0]=x": 1.0,
        "w[1]=750°C": 1.0, "low[1]=750°c": 1.0, "lem[1]=750°c": 1.0,
        "pos[1]=CD": 1.0, "shape[1]=d°X": 1.0, "unit[1]": 1.0,
    }


def test_token_features_sentinels():
    s = sent_with_pos([("one", "CD"), ("two", "CD")])
    first = F.extract_token_features(s, 0)
    last = F.extract_token_features(s, 1)
    assert first["w[-1]=<s>"] == 1.0
    assert "w[1]=two" in first
    assert last["w[1]=</s>"] == 1.0


def test_token_features_numeric_and_unit_flags():
    s = sent_with_pos([("750", "CD"), ("750°C", "CD"), ("YSZ", "NNP")])
    f0 = F.extract_token_features(s, 0)
    assert "num[0]" in f0 and "unit[0]" not in f0
    f1 = F.extract_token_features(s, 1)
    assert "unit[0]" in f1 and "num[0]" not in f1
    f2 = F.extract_token_features(s, 2)
    assert "num[0]" not in f2 and "unit[0]" not in f2


def test_token_features_bad_position():
    s = sent_with_pos([("x", "NN")])
    with pytest.raises(IndexError):
        F.extract_token_features(s, 1)
    with pytest.raises(IndexError):
        F.extract_token_features(s, -1)


def test_word_shape():
    assert F.word_shape("Gd0.1") == "Xxd.d"
    assert F.word_shape("SOFC") == "X"
    assert F.word_shape("Ni-YSZ") == "Xx-X"
    assert F.word_shape("750") == "d"
    assert F.word_shape("anode") == "x"
    assert F.word_shape("") == ""


def test_is_numeric():
    assert F.is_numeric("750")
    assert F.is_numeric("0.5")
    assert F.is_numeric("1,5")
    assert F.is_numeric("-3e4")
    assert not F.is_numeric("750°C")
    assert not F.is_numeric("YSZ")
    assert not F.is_numeric("")


def test_has_unit_suffix():
    assert F.has_unit_suffix("750°C")
    assert F.has_unit_suffix("°C")
    assert F.has_unit_suffix("cm-2")
    assert F.has_unit_suffix("cm⁻²")
    assert F.has_unit_suffix("cm2")
    assert F.has_unit_suffix("S/cm")
    assert F.has_unit_suffix("mW")
    assert F.has_unit_suffix("10µm")
    assert F.has_unit_suffix("A")  # ampere
    assert not F.has_unit_suffix("a")  # article, case matters
    assert not F.has_unit_suffix("YSZ")
    assert not F.has_unit_suffix("750")
    assert not F.has_unit_suffix("")


# ---------------------------------------------------------------------------
# feature index


def test_feature_index_fit_transform():
    maps = [{"a": 1.0, "b": 2.0}, {"b": 1.0, "c": 3.0}]
    index = F.FeatureIndex.fit(maps)
    assert len(index) == 3
    assert index.names() == ["a", "b", "c"]
    vec = index.transform({"c": 3.0, "a": 1.0, "zzz": 9.0})
    assert vec.ids.tolist() == [0, 2]
    assert vec.values.tolist() == [1.0, 3.0]
    assert vec.nnz == 2


def test_feature_index_frozen_rejects_add():
    index = F.FeatureIndex.fit([{"a": 1.0}])
    assert index.frozen
    with pytest.raises(RuntimeError):
        index.add("new")


def test_feature_index_from_names_round_trip():
    index = F.FeatureIndex.from_names(["x", "y"])
    again = F.FeatureIndex.from_names(index.names())
    assert again.names() == ["x", "y"]
    assert again.get("y") == 1
    assert "x" in again and "q" not in again


def test_sparse_vector_dot():
    index = F.FeatureIndex.from_names(["a", "b", "c"])
    vec = index.transform({"a": 2.0, "c": 3.0})
    assert vec.dot(np.array([1.0, 10.0, 100.0])) == 302.0
    empty = index.transform({})
    assert empty.dot(np.array([1.0, 1.0, 1.0])) == 0.0


def test_build_matrix():
    index = F.FeatureIndex.from_names(["a", "b", "c"])
    X = F.build_matrix([index.transform({"a": 1.0}),
                        index.transform({"b": 2.0, "c": 3.0})], len(index))
    assert X.shape == (2, 3)
    assert X.toarray().tolist() == [[1.0, 0.0, 0.0], [0.0, 2.0, 3.0]]


# ---------------------------------------------------------------------------
# embedding tables


WORD2VEC_TEXT = """3 2
SOFC 0.5 -1.0
anode 0.25 0.125
ysz 1.0 2.0
"""


def test_load_embedding_table_and_lookup(tmp_path):
    p = tmp_path / "vec.txt"
    p.write_text(WORD2VEC_TEXT, encoding="utf-8")
    table = F.load_embedding_table(p, tag="static")
    assert table.dim == 2 and len(table) == 3
    assert np.allclose(table.lookup("SOFC"), [0.5, -1.0])
    assert np.allclose(table.lookup("YSZ"), [1.0, 2.0])  # lowercase fallback
    assert table.lookup("missing") is None


def test_load_embedding_table_errors():
    with pytest.raises(F.FeatureFormatError, match="empty"):
        F.load_embedding_table("")
    with pytest.raises(F.FeatureFormatError, match="header"):
        F.load_embedding_table("not a header\n")
    with pytest.raises(F.FeatureFormatError, match="line 2"):
        F.load_embedding_table("1 3\nSOFC 0.5 1.0\n")
    with pytest.raises(F.FeatureFormatError, match="line 2"):
        F.load_embedding_table("1 2\nSOFC 0.5 nan\n")
    with pytest.raises(F.FeatureFormatError, match="declares 1 entries"):
        F.load_embedding_table("1 2\nSOFC 0.5 1.0\nextra 1.0 2.0\n")


def test_token_features_with_embedding_table():
    table = F.EmbeddingTable(dim=2, vectors={"anode": np.array([3.0, 4.0])},
                             tag="static")
    s = sent_with_pos([("anode", "NN"), ("OOVWORD", "NN")])
    covered = F.extract_token_features(s, 0, tables=(table,))
    assert covered["emb:static:0"] == 3.0
    assert covered["emb:static:1"] == 4.0
    assert "emb:static:unk" not in covered
    missing = F.extract_token_features(s, 1, tables=(table,))
    assert missing["emb:static:0"] == 0.0
    assert missing["emb:static:1"] == 0.0
    assert missing["emb:static:unk"] == 1.0


def test_contextual_table_positional_lookup():
    arr = np.array([[1.0, 2.0], [3.0, 4.0]])
    table = F.ContextualTable(dim=2, sentences={("docA", 0): arr})
    s = sent_with_pos([("a", "NN"), ("b", "NN")])
    s.doc_id, s.index = "docA", 0
    assert np.allclose(table.vector(s, 1), [3.0, 4.0])
    s2 = sent_with_pos([("a", "NN")])
    s2.doc_id, s2.index = "docA", 5
    assert table.vector(s2, 0) is None


def test_load_contextual_table(tmp_path):
    lines = [
        '{"doc_id":"d","sent_idx":0,"dim":2,"vectors":[[1.0,2.0],[3.0,4.0]]}',
        '{"doc_id":"d","sent_idx":1,"dim":2,"vectors":[]}',
    ]
    table = F.load_contextual_table("\n".join(lines) + "\n")
    assert table.dim == 2
    assert table.sentences[("d", 1)].shape == (0, 2)


def test_load_contextual_table_errors():
    good = '{"doc_id":"d","sent_idx":0,"dim":2,"vectors":[[1.0,2.0]]}'
    with pytest.raises(F.FeatureFormatError, match="duplicate"):
        F.load_contextual_table(good + "\n" + good + "\n")
    other_dim = '{"doc_id":"d","sent_idx":1,"dim":3,"vectors":[[1.0,2.0,3.0]]}'
    with pytest.raises(F.FeatureFormatError, match="dim"):
        F.load_contextual_table(good + "\n" + other_dim + "\n")
    with pytest.raises(F.FeatureFormatError, match="line 1"):
        F.load_contextual_table("{broken\n")
    with pytest.raises(F.FeatureFormatError, match="empty"):
        F.load_contextual_table("")


# ---------------------------------------------------------------------------
# dense standardization


def test_dense_scaler_fit_and_transform():
    maps = [
        {"emb:static:0": 1.0, "emb:static:1": 10.0, "w[0]=a": 1.0},
        {"emb:static:0": 3.0, "emb:static:1": 10.0},
        {"emb:static:0": 0.0, "emb:static:1": 0.0, "emb:static:unk": 1.0},
    ]
    scaler = F.DenseScaler.fit(maps)
    # unk row excluded: mean of (1, 3) is 2, std 1; constant dim scale -> 1
    assert scaler.mean["emb:static:0"] == 2.0
    assert scaler.scale["emb:static:0"] == 1.0
    assert scaler.mean["emb:static:1"] == 10.0
    assert scaler.scale["emb:static:1"] == 1.0

    out = scaler.transform({"emb:static:0": 3.0, "w[0]=a": 1.0})
    assert out["emb:static:0"] == 1.0
    assert out["w[0]=a"] == 1.0  # discrete features untouched
    unk = scaler.transform({"emb:static:0": 0.0, "emb:static:unk": 1.0})
    assert unk["emb:static:0"] == 0.0  # unk zeros stay neutral


def test_dense_scaler_round_trip():
    scaler = F.DenseScaler(mean={"emb:s:0": 1.5}, scale={"emb:s:0": 2.0})
    again = F.DenseScaler.from_dict(scaler.to_dict())
    assert again.mean == scaler.mean and again.scale == scaler.scale


def test_dense_scaler_empty_is_identity():
    scaler = F.DenseScaler.fit([])
    feats = {"emb:x:0": 5.0}
    assert scaler.transform(feats) == feats


@given(st.lists(st.floats(min_value=-100, max_value=100), min_size=2, max_size=20))
@settings(max_examples=50, deadline=None)
def test_dense_scaler_standardizes_to_unit_stats(values):
    maps = [{"emb:t:0": v} for v in values]
    scaler = F.DenseScaler.fit(maps)
    transformed = [scaler.transform(m)["emb:t:0"] for m in maps]
    mean = sum(transformed) / len(transformed)
    assert abs(mean) < 1e-9
    var = sum(t * t for t in transformed) / len(transformed) - mean * mean
    spread = max(values) - min(values)
    if spread > 1e-6:
        assert abs(var - 1.0) < 1e-6
