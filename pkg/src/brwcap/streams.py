"""Counter-based RNG streams and the deterministic parallel runner.

Every Monte Carlo replicate draws from its own Philox4x64-10 stream keyed by
``(task_key, replicate_index)``.  ``task_key`` is a 64-bit hash of the master
seed and a task tag (plus optional sub-indices, e.g. the point index of a
per-point equilibrium run), so distinct tasks never share streams and results
are a pure function of (config, master seed), independent of worker count.

Replicates are executed in fixed-size chunks and partial statistics are merged
in chunk order, which keeps floating-point reductions bit-identical no matter
how the chunks were scheduled across workers.
"""

from __future__ import annotations

import multiprocessing
import os

MASK64 = (1 << 64) - 1

# Default number of replicates per scheduling chunk.  Must not depend on the
# worker count, otherwise float reductions could reassociate.
CHUNK_SIZE = 8192


def splitmix64(z: int) -> int:
    """One SplitMix64 step; the common 64-bit mixing finalizer."""
    z = (z + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def task_key(master_seed: int, tag: str, *indices: int) -> int:
    """Derive the 64-bit task key feeding the first Philox key word."""
    h = splitmix64(master_seed & MASK64)
    for ch in tag.encode():
        h = splitmix64(h ^ ch)
    for ix in indices:
        h = splitmix64(h ^ (ix & MASK64))
    return h


def worker_count(explicit=None) -> int:
    if explicit is not None and explicit > 0:
        return int(explicit)
    env = os.environ.get("BRWCAP_WORKERS")
    if env:
        return max(1, int(env))
    return min(8, multiprocessing.cpu_count())


def _run_task(args):
    fn, k0, rep0, nreps, extra = args
    return fn(k0, rep0, nreps, *extra)


def _call_task(task):
    fn, args = task
    return fn(*args)


def map_ordered(tasks, workers=None):
    """Run ``fn(*args)`` for each (fn, args) task; results in task order."""
    nw = worker_count(workers)
    if nw <= 1 or len(tasks) <= 1:
        return [_call_task(t) for t in tasks]
    ctx = multiprocessing.get_context("fork")
    with ctx.Pool(processes=min(nw, len(tasks))) as pool:
        return pool.map(_call_task, tasks, chunksize=1)


def run_chunked(fn, k0: int, n: int, extra=(), workers=None, chunk=None):
    """Run ``fn(k0, rep0, nreps, *extra)`` over replicates [0, n) in chunks.

    Returns the list of per-chunk results in chunk order; the caller reduces.
    Chunk boundaries depend only on ``n`` (never on the worker count), which
    keeps reductions bit-identical across schedules.
    """
    if chunk is None:
        chunk = max(1, min(CHUNK_SIZE, -(-n // 8)))
    tasks = [(fn, k0, r0, min(chunk, n - r0), extra) for r0 in range(0, n, chunk)]
    nw = worker_count(workers)
    if nw <= 1 or len(tasks) <= 1:
        return [_run_task(t) for t in tasks]
    ctx = multiprocessing.get_context("fork")
    with ctx.Pool(processes=min(nw, len(tasks))) as pool:
        out = pool.map(_run_task, tasks, chunksize=1)
    return out
