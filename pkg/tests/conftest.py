"""Shared fixtures: a small generated world and a ready-to-train model."""

import numpy as np
import pytest

from vdrp.classifier import build_model
from vdrp.concepts import load_concepts
from vdrp.config import build_settings, default_config
from vdrp.data import load_dataset
from vdrp.evaluate import build_split
from vdrp.synthetic import generate_world


@pytest.fixture(scope="session")
def tiny_world(tmp_path_factory):
    """A 5-verb, 8-object world small enough for per-test training runs."""
    root = tmp_path_factory.mktemp("tiny") / "world"
    cfg = default_config()
    cfg["synth.verbs"] = 5
    cfg["synth.objects"] = 8
    cfg["synth.triplets_per_verb"] = 3
    cfg["synth.train_images"] = 12
    cfg["synth.test_coverage"] = 1
    cfg["synth.holdout_count"] = 3
    generate_world(root, cfg, seed=77)
    return root, cfg


@pytest.fixture(scope="session")
def tiny_dataset(tiny_world):
    root, _ = tiny_world
    return load_dataset(root)


@pytest.fixture(scope="session")
def tiny_split(tiny_world, tiny_dataset):
    _, cfg = tiny_world
    ds = tiny_dataset
    return build_split("nf_uc", ds.triplets, ds.frequencies, ds.n_verbs,
                       ds.n_objects, n_unseen=cfg["synth.holdout_count"])


@pytest.fixture(scope="session")
def tiny_bank(tiny_dataset):
    return load_concepts(tiny_dataset.concepts_path(), tiny_dataset.n_verbs, 32)


@pytest.fixture()
def tiny_model(tiny_dataset, tiny_bank, tiny_split):
    cfg = default_config()
    settings = build_settings(cfg)
    return build_model(tiny_dataset, tiny_bank, settings, seed=5,
                       exclude_triplets=tiny_split.unseen)
