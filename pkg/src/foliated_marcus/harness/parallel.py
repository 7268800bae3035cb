"""Replica-parallel execution with a deterministic, index-ordered merge.

Work is split into contiguous chunks of replica indices. Every replica
draws from its own counter-based streams, and results are concatenated in
chunk order, so the output never depends on the number of workers.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, List, Sequence

WORKERS_ENV = "FOLIATED_MARCUS_WORKERS"


def resolve_workers(cli_value=None, config_value: int = 1) -> int:
    """``--workers`` wins, then the environment variable, then the config."""
    if cli_value is not None:
        n = int(cli_value)
    elif os.environ.get(WORKERS_ENV):
        n = int(os.environ[WORKERS_ENV])
    else:
        n = int(config_value)
    if n < 1:
        raise ValueError("worker count must be at least 1")
    return n


def chunk_indices(n: int, chunks: int) -> List[range]:
    """Split ``range(n)`` into at most ``chunks`` contiguous pieces."""
    chunks = max(1, min(chunks, n))
    bounds = [round(i * n / chunks) for i in range(chunks + 1)]
    return [range(a, b) for a, b in zip(bounds, bounds[1:]) if b > a]


class Pool:
    """Thin wrapper that runs in-process for a single worker."""

    def __init__(self, workers: int):
        self.workers = workers
        self._executor = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        if self._executor is not None:
            self._executor.shutdown()

    def map_chunks(self, fn: Callable, n: int, *args) -> list:
        """Apply ``fn(*args, indices)`` to chunks of ``range(n)``; concatenate in order."""
        pieces = chunk_indices(n, 4 * self.workers)
        if self._executor is None:
            parts = [fn(*args, list(r)) for r in pieces]
        else:
            futures = [self._executor.submit(fn, *args, list(r)) for r in pieces]
            parts = [f.result() for f in futures]
        out = []
        for part in parts:
            out.extend(part)
        return out
