"""Seed derivation and a deterministic worker pool.

Every random stream in the toolkit is a ``random.Random`` derived from one
base seed plus string labels, hashed with sha256 so streams are stable
across processes and independent of PYTHONHASHSEED. Parallel work assigns
one derived stream per item, which makes results independent of thread
scheduling; the pool returns results in submission order.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from random import Random
from typing import Callable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def derive_seed(base_seed: int, *parts: int | str) -> int:
    blob = repr((base_seed,) + parts).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "big")


def derive_rng(base_seed: int, *parts: int | str) -> Random:
    return Random(derive_seed(base_seed, *parts))


def parallel_map(fn: Callable[[T], R], items: Sequence[T], jobs: int = 1) -> list[R]:
    """Apply fn to every item, preserving input order in the result list."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))
