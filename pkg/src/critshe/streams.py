"""Counter-based random streams and order-independent parallel execution.

Every random draw in the package comes from a Philox generator whose key is
derived from ``(root seed, estimator keys..., chunk index)``. Work is cut
into fixed-size chunks before any parallel dispatch, so the numbers a
chunk sees never depend on which worker ran it, and results are gathered
back in chunk order.
"""
from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

import numpy as np

DEFAULT_CHUNK = 4096


def _key_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError("stream keys must be non-negative")
        return int(key)
    return zlib.crc32(str(key).encode("utf-8"))


def stream_key(*keys) -> str:
    return "/".join(str(k) for k in keys)


def rng_stream(seed: int, *keys) -> np.random.Generator:
    """Generator for the stream named by ``keys`` under ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key_int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def chunk_sizes(n_total: int, chunk: int = DEFAULT_CHUNK) -> list[int]:
    full, rest = divmod(int(n_total), int(chunk))
    return [chunk] * full + ([rest] if rest else [])


def run_chunked(work: Callable[[np.random.Generator, int, int], object],
                n_total: int, seed: int, keys: Sequence, chunk: int = DEFAULT_CHUNK,
                parallelism: int = 1) -> list:
    """Run ``work(rng, size, chunk_index)`` over fixed chunks; results in chunk order."""
    sizes = chunk_sizes(n_total, chunk)
    keys = tuple(keys)

    def task(i):
        return work(rng_stream(seed, *keys, i), sizes[i], i)

    if parallelism <= 1 or len(sizes) <= 1:
        return [task(i) for i in range(len(sizes))]
    with ThreadPoolExecutor(max_workers=int(parallelism)) as pool:
        return list(pool.map(task, range(len(sizes))))


def tree_sum(values: Sequence[float]) -> float:
    """Pairwise summation in a fixed tree order."""
    vals = [float(v) for v in values]
    if not vals:
        return 0.0
    while len(vals) > 1:
        nxt = [vals[i] + vals[i + 1] for i in range(0, len(vals) - 1, 2)]
        if len(vals) % 2:
            nxt.append(vals[-1])
        vals = nxt
    return vals[0]


def mean_and_stderr(samples: np.ndarray) -> tuple[float, float]:
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    mean = float(np.mean(samples))
    if n < 2:
        return mean, 0.0
    return mean, float(np.std(samples, ddof=1) / np.sqrt(n))


def jackknife_stderr(samples: np.ndarray, n_blocks: int = 100) -> float:
    """Delete-one-block jackknife standard error of the sample mean."""
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    k = min(n_blocks, n)
    if k < 2:
        return 0.0
    blocks = np.array_split(samples, k)
    sums = np.array([b.sum() for b in blocks])
    counts = np.array([b.size for b in blocks])
    loo = (sums.sum() - sums) / (n - counts)
    return float(np.sqrt((k - 1) / k * np.sum((loo - loo.mean()) ** 2)))
