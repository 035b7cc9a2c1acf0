import json
import warnings
from importlib import resources

import numpy as np
import pytest

from carex.artifacts import fit_pipeline
from carex.config import PipelineConfig
from carex.knowledge import load_corpus
from carex.signal_io import RecordStore
from carex.synthetic import default_spec, generate_dataset


@pytest.fixture(scope="session")
def demo_corpus():
    return load_corpus(resources.files("carex.data") / "demo_corpus.jsonl")


@pytest.fixture(scope="session")
def descriptor_map():
    return json.loads((resources.files("carex.data") / "descriptor_map.json").read_text())


@pytest.fixture(scope="session")
def synthetic_spec():
    return default_spec()


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory, synthetic_spec):
    """60 synthetic cases: enough to fit a small but non-degenerate pipeline."""
    root = tmp_path_factory.mktemp("smallds")
    rows = generate_dataset(synthetic_spec, 60, seed=7,
                            store_dir=root / "store",
                            manifest_path=root / "manifest.jsonl")
    return {"root": root, "rows": rows, "store_dir": root / "store"}


@pytest.fixture(scope="session")
def small_handle(small_dataset, demo_corpus, descriptor_map):
    store = RecordStore(small_dataset["store_dir"], create=False)
    config = PipelineConfig(store_path=str(small_dataset["store_dir"]))
    labels = {r["record_id"]: r["gold_outcome"] for r in small_dataset["rows"]}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        handle = fit_pipeline(store, labels, config, corpus_docs=demo_corpus,
                              descriptor_map=descriptor_map)
    return handle


def make_pulse_train(fs=500, seconds=10, period_s=1.0, width_s=0.08, amp=1.0):
    """Triangular pulse train on a flat baseline; apices at 0.5 s + k*period."""
    t = np.arange(int(seconds * fs)) / fs
    x = np.zeros_like(t)
    apices = np.arange(0.5, seconds, period_s)
    half = width_s / 2
    for a in apices:
        m = np.abs(t - a) <= half
        x[m] = amp * (1 - np.abs(t[m] - a) / half)
    return x, [int(round(a * fs)) for a in apices]
