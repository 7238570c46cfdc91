"""Shared fixtures: the synthetic corpus (in memory and file-backed) and
discovery of real TUDataset corpora for the acceptance tests.

Real datasets are looked up under $GRAPHBACK_DATA_ROOT (default: ./data at
the repo root); acceptance cells that need them skip with a pointer to the
README when the files are absent.
"""

from __future__ import annotations

import os

import pytest

from graphback.datasets import Dataset, parse_tudataset
from synth import make_synthetic_corpus, write_tudataset

DATA_ROOT = os.environ.get(
    "GRAPHBACK_DATA_ROOT",
    os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "data"),
)

_real_cache: dict = {}


def real_dataset_dir(name: str) -> str | None:
    for candidate in (os.path.join(DATA_ROOT, name), os.path.join(DATA_ROOT, name, name)):
        if os.path.exists(os.path.join(candidate, f"{name}_graph_indicator.txt")):
            return candidate
    return None


def real_dataset_or_skip(name: str) -> Dataset:
    directory = real_dataset_dir(name)
    if directory is None:
        pytest.skip(f"real dataset {name} not found under {DATA_ROOT}; "
                    f"set GRAPHBACK_DATA_ROOT or fetch it (see README, 'Getting the data')")
    if name not in _real_cache:
        _real_cache[name] = parse_tudataset(directory, name)
    return _real_cache[name]


@pytest.fixture(scope="session")
def synth_dataset() -> Dataset:
    return make_synthetic_corpus()


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory, synth_dataset) -> str:
    """File-backed copy of the synthetic corpus with shifted raw label
    values, so every CLI test also exercises the parser's remapping."""
    directory = tmp_path_factory.mktemp("data") / "synth"
    write_tudataset(synth_dataset, str(directory), node_label_shift=3,
                    graph_label_values={0: 2, 1: 5})
    return str(directory)
