from __future__ import annotations

from pathlib import Path

import pytest

from radlabel.rules import Lexicon, LexiconEntry, NegationRule

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture(scope="session")
def tiny_lexicon() -> Lexicon:
    return Lexicon(
        entries=[
            LexiconEntry("pleural_effusion", ("pleural", "effusion"), "abnormality"),
            LexiconEntry("effusion", ("effusion",), "abnormality"),
            LexiconEntry("fracture", ("fracture",), "abnormality"),
            LexiconEntry("edema", ("edema",), "abnormality"),
            LexiconEntry("clear", ("clear",), "normal_marker"),
        ]
    )


@pytest.fixture(scope="session")
def tiny_rules() -> list[NegationRule]:
    terminators = frozenset({"but", "however", "although", ";"})
    return [
        NegationRule(("no",), "pre", 5, terminators),
        NegationRule(("without",), "pre", 6, terminators),
        NegationRule(("not", "seen"), "post", 6, terminators),
    ]
