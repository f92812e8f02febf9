"""Shared fixtures: one default-recipe training run cached across the suite.

The trained models are expensive (a few minutes cold), so they are trained
once into tests/_cache keyed by the training recipe and reloaded from the
checkpoint on every session. Loading instead of reusing the in-memory result
keeps warm and cold runs bitwise identical (checkpoints round to float32).
"""

import hashlib
import json
import os
from dataclasses import replace

import pytest

from wav2vid.training import (TrainingConfig, has_checkpoints, load_models,
                              train_all)

CACHE_ROOT = os.path.join(os.path.dirname(__file__), "_cache")


def _recipe_key(cfg: TrainingConfig) -> str:
    canon = repr(replace(cfg, out_dir=None))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


@pytest.fixture(scope="session")
def default_recipe() -> TrainingConfig:
    return TrainingConfig()


@pytest.fixture(scope="session")
def models_dir(default_recipe) -> str:
    d = os.path.join(CACHE_ROOT, _recipe_key(default_recipe))
    if not has_checkpoints(d):
        train_all(replace(default_recipe, out_dir=d))
    return d


@pytest.fixture(scope="session")
def models(models_dir, default_recipe):
    return load_models(models_dir, seed=default_recipe.seed,
                       eta_y=default_recipe.eta_y, eta_x=default_recipe.eta_x)


@pytest.fixture(scope="session")
def training_summary(models_dir) -> dict:
    with open(os.path.join(models_dir, "training_summary.json")) as f:
        return json.load(f)


# one line per end-to-end acceptance check, printed after the test table
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
