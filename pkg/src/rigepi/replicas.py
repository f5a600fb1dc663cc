"""Reproducible random streams and replica-level parallelism.

Every stream is ``SeedSequence(base_seed, spawn_key=(experiment, replica))``:
the generator for a replica depends only on the base seed, the experiment
key and the replica index, never on how replicas are spread over workers.
"""
from __future__ import annotations

import os
import zlib
from concurrent.futures import ProcessPoolExecutor

import numpy as np


def stream_key(name: str) -> int:
    return zlib.crc32(name.encode())


def replica_rng(base_seed: int, experiment: str, replica: int) -> np.random.Generator:
    ss = np.random.SeedSequence(base_seed, spawn_key=(stream_key(experiment), replica))
    return np.random.default_rng(ss)


def default_workers() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1


def run_replicas(fn, tasks, workers: int = 1) -> list:
    """``[fn(t) for t in tasks]``, optionally in worker processes; order is preserved."""
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
