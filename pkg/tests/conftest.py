import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

import synth  # noqa: E402
from expframe.corpus import (Corpus, EntityMention, ExperimentLink, Sentence,
                             SlotLink, Token, make_document)  # noqa: E402


def make_sent(words, mentions=(), slots=(), links=()):
    """Build a Sentence from surfaces plus (id, type, begin, end) mentions."""
    tokens = []
    offset = 0
    for w in words:
        tokens.append(Token(surface=w, begin=offset, end=offset + len(w)))
        offset += len(w) + 1
    return Sentence(
        text=" ".join(words),
        tokens=tokens,
        mentions=[EntityMention(id=i, type=t, begin=b, end=e)
                  for i, t, b, e in mentions],
        slot_links=[SlotLink(anchor=a, filler=f, type=t) for a, f, t in slots],
        experiment_links=[ExperimentLink(source=s, target=t, kind=k)
                          for s, t, k in links],
    )


def tiny_documents():
    s0 = make_sent(
        ["The", "anode", "was", "tested", "at", "750°C", "."],
        mentions=[("m1", "EXPERIMENT", 3, 4), ("m2", "VALUE", 5, 6)],
        slots=[("m1", "m2", "working_temperature"),
               ("m1", "m3", "anode_material")],
        links=[("m1", "m4", "SAME_EXP")],
    )
    s1 = make_sent(
        ["Ni-YSZ", "was", "used", "."],
        mentions=[("m3", "MATERIAL", 0, 1)],
    )
    s2 = make_sent(
        ["It", "was", "tested", "and", "measured", "."],
        mentions=[("m4", "EXPERIMENT", 2, 3), ("m5", "EXPERIMENT", 4, 5)],
        links=[("m4", "m5", "SAME_EXP")],
    )
    s3 = make_sent(["No", "mentions", "here", "."])
    return [make_document("docA", [s0, s1, s2]),
            make_document("docB", [s3])]


@pytest.fixture()
def tiny_corpus():
    return Corpus(documents=tiny_documents())


@pytest.fixture(scope="session")
def train_twin():
    return synth.train_twin()


@pytest.fixture(scope="session")
def test_twin():
    return synth.test_twin()


@pytest.fixture(scope="session")
def iaa_corpora():
    return synth.iaa_pair()
