"""Monte Carlo ensemble driver: masks -> fields -> intensities -> chunk sums.

Chunks are pure functions of (seed, chunk index), so they can be computed
by any worker in any order; the driver folds them in ascending order.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from multiprocessing import get_context
from typing import Callable

import numpy as np

from hocorr.correlator import BUCKET, CorrelationPlan, MomentAccumulator, chunk_sums
from hocorr.geometry import OpticalLayout, build_source_grid
from hocorr.masks import MaskMode, RngPolicy, base_phases
from hocorr.optics import arm_phasor, intensity, kernel_matrix, unit_phasors

log = logging.getLogger(__name__)

TARGET_BATCHES = 64


@dataclass
class EnsembleJob:
    layout: OpticalLayout
    mode: MaskMode
    plan: CorrelationPlan
    samples: int
    seed: int
    chunk_size: int = 256
    alphabet: int | None = None

    @property
    def chunk_count(self) -> int:
        return -(-self.samples // self.chunk_size)

    def default_batch_chunks(self) -> int:
        return max(1, math.ceil(self.chunk_count / TARGET_BATCHES))


class _ChunkKernel:
    """Precomputed propagation matrices for the detector points a plan needs."""

    def __init__(self, job: EnsembleJob):
        self.job = job
        lay = job.layout
        source = build_source_grid(lay)
        self.rng = RngPolicy(job.seed)
        self.mixing = job.mode.mixing_matrix(lay.arm_count)
        self.kernels = {
            arm: kernel_matrix(pos, source, lay.wavelength, lay.distances[arm - 1]).T.copy()
            for arm, pos in job.plan.arm_positions.items()
        }
        bucket = job.plan.bucket
        self.bucket_kernel = None
        if bucket is not None:
            self.bucket_kernel = kernel_matrix(bucket.positions, source, lay.wavelength, lay.distances[0]).T.copy()
            self.bucket_weights = bucket.weights

    def block(self, first: int, count: int) -> dict[int, np.ndarray]:
        job = self.job
        base = base_phases(job.layout, job.mode, self.rng, first, count, job.alphabet)
        base_z = unit_phasors(base)
        phasors = {}

        def z(arm):
            if arm not in phasors:
                phasors[arm] = arm_phasor(base_z, self.mixing[arm - 1])
            return phasors[arm]

        out = {arm: intensity(z(arm) @ kern) for arm, kern in self.kernels.items()}
        if self.bucket_kernel is not None:
            out[BUCKET] = intensity(z(1) @ self.bucket_kernel) @ self.bucket_weights
        return out

    def chunk(self, index: int) -> list[np.ndarray]:
        job = self.job
        first = index * job.chunk_size
        count = min(job.chunk_size, job.samples - first)
        return chunk_sums(job.plan.gather(self.block(first, count)))


_worker_kernel: _ChunkKernel | None = None


def _init_worker(job: EnsembleJob) -> None:
    global _worker_kernel
    _worker_kernel = _ChunkKernel(job)


def _run_range(bounds: tuple[int, int]) -> list[list[np.ndarray]]:
    lo, hi = bounds
    return [_worker_kernel.chunk(c) for c in range(lo, hi)]


def run_ensemble(
    job: EnsembleJob,
    workers: int = 1,
    accumulator: MomentAccumulator | None = None,
    batch_chunks: int | None = None,
    stop_after_chunk: int | None = None,
    on_chunk: Callable[[MomentAccumulator], None] | None = None,
) -> MomentAccumulator:
    """Accumulate the ensemble, continuing ``accumulator`` if given.

    ``stop_after_chunk`` ends the run once that many chunks are complete;
    ``on_chunk`` is called after every folded chunk (checkpointing, progress).
    """
    if job.samples < 1:
        raise ValueError("samples must be at least 1")
    if accumulator is None:
        accumulator = MomentAccumulator(
            job.plan, job.chunk_size, batch_chunks or job.default_batch_chunks(), chunk_start=0
        )
    elif accumulator.chunk_size != job.chunk_size:
        raise ValueError("accumulator chunk size differs from the job's")
    start = accumulator.chunk_end
    stop = job.chunk_count if stop_after_chunk is None else min(job.chunk_count, stop_after_chunk)
    if start >= stop:
        return accumulator
    if workers <= 1:
        kernel = _ChunkKernel(job)
        for c in range(start, stop):
            accumulator.add_chunk(c, kernel.chunk(c))
            if on_chunk:
                on_chunk(accumulator)
        return accumulator
    ranges = _split(start, stop, 4 * workers)
    ctx = get_context("fork")
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx, initializer=_init_worker, initargs=(job,)) as pool:
        for (lo, _), results in zip(ranges, pool.map(_run_range, ranges)):
            for offset, sums in enumerate(results):
                accumulator.add_chunk(lo + offset, sums)
                if on_chunk:
                    on_chunk(accumulator)
    log.debug("folded chunks %d..%d with %d workers", start, stop, workers)
    return accumulator


def _split(lo: int, hi: int, parts: int) -> list[tuple[int, int]]:
    edges = np.linspace(lo, hi, min(parts, hi - lo) + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]
