"""Test configuration for ensuring project imports succeed."""
from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

# Add the project root to sys.path so ``import gkt`` works when tests run via pytest.
PROJECT_ROOT = Path(__file__).resolve().parents[1]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture(autouse=True)
def isolated_hash_cache(tmp_path, monkeypatch):
    monkeypatch.setenv("GKT_HASH_CACHE", str(tmp_path / "hash-cache.json"))


@pytest.fixture(autouse=True)
def isolated_run_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("GKT_RUN_DIR", str(tmp_path / "runs"))
    return tmp_path / "runs"
