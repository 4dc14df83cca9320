"""Named random substreams derived from one run seed."""
from __future__ import annotations

import hashlib

import numpy as np


def _stream_key(name: str) -> int:
    return int.from_bytes(hashlib.sha1(name.encode("utf-8")).digest()[:4], "little")


def seed_sequence(seed: int, name: str, *keys: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(seed), spawn_key=(_stream_key(name),) + tuple(int(k) for k in keys))


def substream(seed: int, name: str, *keys: int) -> np.random.Generator:
    """Generator for stream ``name`` (e.g. "datagen", "init", "shuffle", "noise")
    at integer coordinates ``keys``; distinct names or keys never collide."""
    return np.random.default_rng(seed_sequence(seed, name, *keys))


__all__ = ["substream", "seed_sequence"]
