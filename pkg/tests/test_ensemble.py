import numpy as np
import pytest

from hocorr.correlator import MomentAccumulator, merge, normalized_g
from hocorr.ensemble import EnsembleJob, _ChunkKernel, run_ensemble
from hocorr.experiments import ghz_plan
from hocorr.geometry import OpticalLayout, build_source_grid
from hocorr.masks import MaskMode, RngPolicy, generate_phases
from hocorr.optics import propagate


def small_job(samples=2000, chunk=128, mode=None, seed=5):
    lay = OpticalLayout(532e-9, 2e-3, (0.10, 0.20, 0.20), pixel_count=16)
    return EnsembleJob(lay, mode or MaskMode.ghz(), ghz_plan(lay), samples, seed, chunk)


def same(a, b):
    assert a.sample_count == b.sample_count
    for x, y in zip(a.totals(), b.totals()):
        assert np.array_equal(x, y)
    for x, y in zip(a.batch_sums(), b.batch_sums()):
        for u, v in zip(x, y):
            assert np.array_equal(u, v)


def test_sample_count_and_partial_last_chunk():
    job = small_job(samples=1000, chunk=128)
    acc = run_ensemble(job)
    assert acc.sample_count == 1000
    assert acc.chunk_end == job.chunk_count == 8


def test_workers_give_identical_sums():
    job = small_job()
    same(run_ensemble(job, workers=1), run_ensemble(job, workers=2))


def test_stop_and_continue_equals_full_run():
    job = small_job()
    part = run_ensemble(job, stop_after_chunk=7)
    assert part.chunk_end == 7
    same(run_ensemble(job, accumulator=part), run_ensemble(job))


def test_independent_chunk_ranges_merge_to_full_run():
    job = small_job(samples=16 * 128)
    full = run_ensemble(job, batch_chunks=4)
    kernel = _ChunkKernel(job)
    a = MomentAccumulator(job.plan, job.chunk_size, 4)
    b = MomentAccumulator(job.plan, job.chunk_size, 4, chunk_start=6)
    for c in range(6):
        a.add_chunk(c, kernel.chunk(c))
    for c in range(6, 16):
        b.add_chunk(c, kernel.chunk(c))
    same(merge(a, b), full)


def test_block_matches_explicit_propagation():
    job = small_job(mode=MaskMode.ghz())
    kernel = _ChunkKernel(job)
    block = kernel.block(37, 3)
    lay = job.layout
    src = build_source_grid(lay)
    phases = generate_phases(lay, job.mode, RngPolicy(job.seed), 37, 3)
    for arm, cols in job.plan.arm_columns.items():
        x = job.plan.arm_positions[arm]
        for row in range(3):
            f = propagate(phases[row, arm - 1], src, x, lay.wavelength, lay.distances[arm - 1])
            np.testing.assert_allclose(block[arm][row], np.abs(f.amplitudes) ** 2, rtol=1e-10, atol=1e-12)


def test_seed_changes_results():
    a = normalized_g(run_ensemble(small_job(seed=1)))
    b = normalized_g(run_ensemble(small_job(seed=2)))
    assert not np.array_equal(a["g3_slice"].g, b["g3_slice"].g)


def test_job_validation():
    with pytest.raises(ValueError):
        run_ensemble(small_job(samples=0))
    job = small_job()
    acc = MomentAccumulator(job.plan, chunk_size=64)
    with pytest.raises(ValueError):
        run_ensemble(job, accumulator=acc)
