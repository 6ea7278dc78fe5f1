from __future__ import annotations

import json
from pathlib import Path

import pytest

from stegocoupler import ChannelSpec

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def corpus_path() -> Path:
    return FIXTURES / "corpus.txt"


@pytest.fixture(scope="session")
def uniform40_spec() -> ChannelSpec:
    return ChannelSpec("uniform", {"k": 40})


@pytest.fixture(scope="session")
def markov2_spec(corpus_path) -> ChannelSpec:
    return ChannelSpec("markov", {"order": 2, "path": str(corpus_path)})


@pytest.fixture(scope="session")
def binary_scripted_spec(tmp_path_factory) -> ChannelSpec:
    path = tmp_path_factory.mktemp("scripted") / "binary.json"
    path.write_text(json.dumps(
        {"steps": [{"ids": [0, 1], "probs": [0.5, 0.5]}]}
    ))
    return ChannelSpec("scripted", {"path": str(path)})


@pytest.fixture(scope="session")
def pointmass_scripted_spec(tmp_path_factory) -> ChannelSpec:
    path = tmp_path_factory.mktemp("scripted") / "point.json"
    path.write_text(json.dumps({"steps": [{"ids": [3], "probs": [1.0]}]}))
    return ChannelSpec("scripted", {"path": str(path)})


@pytest.fixture(scope="session")
def skewed_scripted_spec(tmp_path_factory) -> ChannelSpec:
    # 40-symbol dist with geometric-ish decay, cycled over three steps.
    weights = [[0.9 ** i for i in range(40)],
               [1.0] * 40,
               [(i % 7) + 1 for i in range(40)]]
    steps = [{"ids": list(range(40)), "probs": w} for w in weights]
    path = tmp_path_factory.mktemp("scripted") / "skewed.json"
    path.write_text(json.dumps({"steps": steps}))
    return ChannelSpec("scripted", {"path": str(path)})
