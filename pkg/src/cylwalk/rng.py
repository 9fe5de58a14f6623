"""Replica random streams.

Replica ``r`` of a run seeded with ``seed`` always draws from the same
PCG64 stream, whatever worker executes it, so results do not depend on the
thread count.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")

THREADS_ENV = "CYLWALK_THREADS"


def replica_seedseq(seed: int, replica: int, *tags: int) -> np.random.SeedSequence:
    # spawn_key makes this identical to SeedSequence(seed).spawn(...)[replica]
    return np.random.SeedSequence(int(seed), spawn_key=(int(replica), *map(int, tags)))


def replica_rng(seed: int, replica: int, *tags: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(replica_seedseq(seed, replica, *tags)))


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def map_replicas(fn: Callable[[int], T], replicas: Sequence[int] | int, threads: int | None = None) -> list[T]:
    """Evaluate ``fn(r)`` for each replica index, returned in index order.

    ``fn`` must derive all of its randomness from ``r``; the numba kernels
    release the GIL so threads do run concurrently on multi-core machines.
    """
    idx = list(range(replicas)) if isinstance(replicas, int) else list(replicas)
    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1 or len(idx) < 2:
        return [fn(r) for r in idx]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, idx))


class WordStream:
    """Buffered 32-bit words from a generator, consumed sequentially by kernels.

    Kernels receive ``(buf, idx)`` and return the new index.  Unused words are
    carried over on refill, so the realised path never depends on how a run
    is chunked.
    """

    def __init__(self, rng: np.random.Generator, block: int = 1 << 17):
        self.bitgen = rng.bit_generator
        self.block = block
        self.buf = np.zeros(0, np.uint32)
        self.idx = 0

    def ensure(self, n: int) -> tuple[np.ndarray, int]:
        """Make at least ``n`` unread words available."""
        left = self.buf.shape[0] - self.idx
        if left < n:
            need = max(n - left, self.block)
            fresh = self.bitgen.random_raw((need + 1) // 2).view(np.uint32)
            self.buf = np.concatenate([self.buf[self.idx:], fresh])
            self.idx = 0
        return self.buf, self.idx


def derive_seed(seed: int, *tags: int) -> int:
    """A 63-bit seed for a sub-experiment, e.g. one rung of a ladder."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(t) for t in tags))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))
