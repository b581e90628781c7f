import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hocorr.correlator import (
    BUCKET,
    Bucket,
    BucketScan,
    CorrelationPlan,
    DegenerateDenominatorError,
    DiagonalScan,
    FixedPoint,
    MergeError,
    MomentAccumulator,
    PlanError,
    Scan,
    Target,
    chunk_sums,
    cumulant3,
    flatness_statistic,
    merge,
    normalized_g,
    set_partitions,
)
from hocorr.ensemble import EnsembleJob, run_ensemble
from hocorr.geometry import DetectorGrid, OpticalLayout
from hocorr.masks import MaskMode
from hocorr.optics import IntensitySample


def grids(n=3, points=5):
    return [DetectorGrid(a, 0.0, float(points - 1), 1.0) for a in range(1, n + 1)]


def simple_plan(n=3):
    targets = [
        Target("triple", (1, 2, 3), FixedPoint({1: 0.0, 2: 0.0, 3: 0.0})),
        Target("scan", (1, 2, 3), Scan(3)),
        Target("pair", (2, 3), DiagonalScan((2, 3))),
    ]
    return CorrelationPlan(targets, grids(n), pixel_count=4)


def random_block(plan, k, rng):
    return {arm: rng.exponential(size=(k, len(cols))) for arm, cols in plan.arm_columns.items()}


def sample_from_block(plan, block, row, index):
    full = {}
    for arm, cols in plan.arm_columns.items():
        vals = np.ones(len(plan.grids[arm - 1]))
        vals[cols] = block[arm][row]
        full[arm] = vals
    return IntensitySample(index, full)


def accumulate_blocks(plan, blocks, chunk_size, batch_chunks=1):
    acc = MomentAccumulator(plan, chunk_size, batch_chunks)
    for b in blocks:
        acc.accumulate_block(b)
    return acc


def assert_same_sums(a, b):
    for x, y in zip(a.totals(), b.totals()):
        assert np.array_equal(x, y)
    assert a.sample_count == b.sample_count


# -- plans ------------------------------------------------------------------


@pytest.mark.parametrize(
    "target",
    [
        Target("t", (1, 1), Scan(1)),
        Target("t", (1,), Scan(1)),
        Target("t", (1, 4), Scan(1)),
        Target("t", (1, 2), Scan(3)),
        Target("t", (1, 2), FixedPoint({3: 0.0})),
        Target("t", (1, 2), FixedPoint({1: 0.5})),
        Target("t", (1, 2), DiagonalScan((1, 2), {1: 0.0})),
        Target("t", (1, 2), BucketScan((2,))),
    ],
)
def test_plan_errors(target):
    with pytest.raises(PlanError):
        CorrelationPlan([target], grids(), pixel_count=4)


def test_plan_rejects_empty_and_duplicates():
    with pytest.raises(PlanError):
        CorrelationPlan([], grids(), pixel_count=4)
    t = Target("t", (1, 2), Scan(2))
    with pytest.raises(PlanError):
        CorrelationPlan([t, t], grids(), pixel_count=4)


def test_bucket_scan_resolves_bucket_channel():
    bucket = Bucket(np.array([0.0, 1.0]), np.array([1.0, 0.5]))
    plan = CorrelationPlan([Target("b", (1, 2, 3), BucketScan((2, 3)))], grids(), 4, bucket=bucket)
    r = plan["b"]
    assert r.channels == (BUCKET, 2, 3)
    assert r.coordinate_label == "x2_m"
    np.testing.assert_array_equal(r.coordinates, plan.grids[1].positions)


# -- accumulate ----------------------------------------------------------------


def test_all_ones_sum_equals_sample_count():
    plan = simple_plan()
    acc = MomentAccumulator(plan, chunk_size=4)
    for k in range(10):
        full = {a: np.ones(len(g)) for a, g in zip(range(1, 4), plan.grids)}
        acc.accumulate(IntensitySample(k, full))
    acc.flush()
    for t, r in zip(acc.totals(), plan.resolved):
        full_mask = (1 << r.order) - 1
        np.testing.assert_array_equal(t[full_mask], 10.0)
    assert acc.sample_count == 10


def test_single_sample_product():
    plan = simple_plan()
    full = {1: np.full(5, 2.0), 2: np.full(5, 3.0), 3: np.full(5, 5.0)}
    acc = MomentAccumulator(plan, chunk_size=1).accumulate(IntensitySample(0, full))
    assert acc.totals()[0][7, 0] == 30.0
    assert acc.totals()[0][-1, 0] == 900.0


def test_sample_indices_must_increase():
    plan = simple_plan()
    full = {a: np.ones(5) for a in (1, 2, 3)}
    acc = MomentAccumulator(plan, chunk_size=8).accumulate(IntensitySample(3, full))
    with pytest.raises(ValueError):
        acc.accumulate(IntensitySample(3, full))


def test_sample_must_match_plan():
    plan = simple_plan()
    acc = MomentAccumulator(plan, chunk_size=8)
    with pytest.raises(PlanError):
        acc.accumulate(IntensitySample(0, {1: np.ones(5), 2: np.ones(5)}))
    with pytest.raises(PlanError):
        acc.accumulate(IntensitySample(0, {1: np.ones(5), 2: np.ones(5), 3: np.ones(4)}))
    with pytest.raises(PlanError):
        acc.add_chunk(0, [np.zeros((3, 1))])


def test_per_sample_equals_block():
    plan = simple_plan()
    rng = np.random.default_rng(0)
    blocks = [random_block(plan, 8, rng) for _ in range(3)]
    by_block = accumulate_blocks(plan, blocks, 8)
    by_sample = MomentAccumulator(plan, chunk_size=8)
    idx = 0
    for b in blocks:
        for row in range(8):
            by_sample.accumulate(sample_from_block(plan, b, row, idx))
            idx += 1
    assert_same_sums(by_block, by_sample)


def test_independent_pair_is_uncorrelated():
    plan = CorrelationPlan([Target("p", (1, 2), Scan(2))], grids(2), 4)
    rng = np.random.default_rng(5)
    blocks = [random_block(plan, 500, rng) for _ in range(20)]
    est = normalized_g(accumulate_blocks(plan, blocks, 500))
    t = est["p"]
    assert np.all(np.abs(t.g - 1) < 5 * t.stderr)


# -- merge -------------------------------------------------------------------


def test_merge_identity():
    plan = simple_plan()
    rng = np.random.default_rng(1)
    acc = accumulate_blocks(plan, [random_block(plan, 4, rng)], 4)
    empty = MomentAccumulator(plan, 4)
    assert_same_sums(merge(empty, acc), acc)
    assert_same_sums(merge(acc, MomentAccumulator(plan, 4, chunk_start=1)), acc)


def test_two_chunk_merge_matches_sequential():
    plan = simple_plan()
    rng = np.random.default_rng(2)
    blocks = [random_block(plan, 256, rng) for _ in range(2)]
    seq = accumulate_blocks(plan, blocks, 256)
    a = accumulate_blocks(plan, blocks[:1], 256)
    b = MomentAccumulator(plan, 256, chunk_start=1).accumulate_block(blocks[1])
    assert_same_sums(merge(a, b), seq)


def test_three_way_merge():
    plan = simple_plan()
    rng = np.random.default_rng(3)
    blocks = [random_block(plan, 16, rng) for _ in range(3)]
    seq = accumulate_blocks(plan, blocks, 16)
    parts = [MomentAccumulator(plan, 16, chunk_start=i).accumulate_block(b) for i, b in enumerate(blocks)]
    assert_same_sums(merge(merge(parts[0], parts[1]), parts[2]), seq)


@given(st.integers(1, 11), st.integers(1, 4), st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_split_merge_bit_identity(split, batch_chunks, seed):
    plan = simple_plan()
    rng = np.random.default_rng(seed)
    blocks = [random_block(plan, 3, rng) for _ in range(12)]
    seq = accumulate_blocks(plan, blocks, 3, batch_chunks)
    a = accumulate_blocks(plan, blocks[:split], 3, batch_chunks)
    b = MomentAccumulator(plan, 3, batch_chunks, chunk_start=split)
    for blk in blocks[split:]:
        b.accumulate_block(blk)
    m = merge(a, b)
    assert_same_sums(m, seq)
    for x, y in zip(m.batch_sums(), seq.batch_sums()):
        for u, v in zip(x, y):
            assert np.array_equal(u, v)


def test_merge_rejects_gaps_and_disorder():
    plan = simple_plan()
    rng = np.random.default_rng(4)
    a = MomentAccumulator(plan, 4).accumulate_block(random_block(plan, 4, rng))
    c = MomentAccumulator(plan, 4, chunk_start=2).accumulate_block(random_block(plan, 4, rng))
    with pytest.raises(MergeError):
        merge(a, c)
    with pytest.raises(MergeError):
        merge(c, a)
    with pytest.raises(MergeError):
        merge(a, MomentAccumulator(plan, 8, chunk_start=1).accumulate_block(random_block(plan, 8, rng)))


def test_merge_rejects_different_plans():
    rng = np.random.default_rng(6)
    p1, p2 = simple_plan(), CorrelationPlan([Target("p", (1, 2), Scan(2))], grids(), 4)
    a = MomentAccumulator(p1, 4).accumulate_block(random_block(p1, 4, rng))
    b = MomentAccumulator(p2, 4, chunk_start=1).accumulate_block(random_block(p2, 4, rng))
    with pytest.raises(MergeError):
        merge(a, b)


# -- estimates -----------------------------------------------------------------


def test_constant_intensities_give_unit_g_and_zero_error():
    plan = simple_plan()
    block = {arm: np.full((50, len(cols)), 2.5) for arm, cols in plan.arm_columns.items()}
    est = normalized_g(accumulate_blocks(plan, [block], 50))
    for t in est.targets.values():
        np.testing.assert_allclose(t.g, 1.0, atol=1e-14)
        np.testing.assert_allclose(t.stderr, 0.0, atol=1e-7)
        assert np.all(t.stderr >= 0)


def test_scale_invariance():
    plan = simple_plan()
    rng = np.random.default_rng(7)
    blocks = [random_block(plan, 64, rng) for _ in range(25)]
    scaled = [{a: 37.5 * v for a, v in b.items()} for b in blocks]
    e1 = normalized_g(accumulate_blocks(plan, blocks, 64))
    e2 = normalized_g(accumulate_blocks(plan, scaled, 64))
    for name in e1.targets:
        np.testing.assert_allclose(e1[name].g, e2[name].g, rtol=0, atol=1e-12)
        np.testing.assert_allclose(e1[name].cumulant, e2[name].cumulant, rtol=0, atol=1e-12)


def test_cumulant_of_independent_arms_vanishes():
    plan = simple_plan()
    rng = np.random.default_rng(8)
    blocks = [random_block(plan, 1000, rng) for _ in range(25)]
    est = normalized_g(accumulate_blocks(plan, blocks, 1000))
    kappa = cumulant3(accumulate_blocks(plan, blocks, 1000))
    for name, k in kappa.items():
        assert np.all(np.abs(k) < 5 * est[name].cumulant_stderr)


def test_cumulant_formula():
    plan = CorrelationPlan([Target("t", (1, 2, 3), FixedPoint({}))], grids(), 4)
    rng = np.random.default_rng(9)
    common = rng.exponential(size=(400, 1))
    block = {a: common * rng.exponential(size=(400, 1)) for a in (1, 2, 3)}
    k = cumulant3(accumulate_blocks(plan, [block], 400))["t"][0]
    i1, i2, i3 = (block[a][:, 0] for a in (1, 2, 3))
    m = np.mean
    direct = (
        m(i1 * i2 * i3) - m(i1 * i2) * m(i3) - m(i1 * i3) * m(i2) - m(i2 * i3) * m(i1) + 2 * m(i1) * m(i2) * m(i3)
    ) / (m(i1) * m(i2) * m(i3))
    assert k == pytest.approx(direct, rel=1e-10)


def test_cumulant_needs_third_order_target():
    plan = CorrelationPlan([Target("p", (1, 2), Scan(2))], grids(), 4)
    acc = accumulate_blocks(plan, [random_block(plan, 10, np.random.default_rng(0))], 10)
    with pytest.raises(PlanError):
        cumulant3(acc)


def test_degenerate_denominator():
    plan = simple_plan()
    block = {arm: np.zeros((10, len(cols))) for arm, cols in plan.arm_columns.items()}
    with pytest.raises(DegenerateDenominatorError):
        normalized_g(accumulate_blocks(plan, [block], 10))


def test_needs_two_samples():
    plan = simple_plan()
    acc = accumulate_blocks(plan, [random_block(plan, 1, np.random.default_rng(0))], 1)
    with pytest.raises(ValueError):
        normalized_g(acc)


@pytest.mark.parametrize("n,bell", [(0, 1), (1, 1), (2, 2), (3, 5), (4, 15), (5, 52)])
def test_set_partition_counts(n, bell):
    parts = list(set_partitions(range(n)))
    assert len(parts) == bell
    for p in parts:
        assert sorted(x for block in p for x in block) == list(range(n))


def test_flatness_of_unit_g_is_zero():
    plan = simple_plan()
    block = {arm: np.ones((10, len(cols))) for arm, cols in plan.arm_columns.items()}
    est = normalized_g(accumulate_blocks(plan, [block], 10))
    f = flatness_statistic(est, "scan")
    assert f.value == pytest.approx(0.0, abs=1e-14)
    assert f.position in plan["scan"].coordinates


def test_flatness_reports_argmax():
    plan = simple_plan()
    est = normalized_g(accumulate_blocks(plan, [random_block(plan, 10, np.random.default_rng(1))], 10))
    values = np.array([1.0, 1.1, 0.7, 1.0, 1.2])
    f = flatness_statistic(est, "scan", values)
    assert f.value == pytest.approx(0.3)
    assert f.position == plan["scan"].coordinates[2]


def test_batch_means_standard_error_used():
    plan = simple_plan()
    rng = np.random.default_rng(10)
    blocks = [random_block(plan, 20, rng) for _ in range(40)]
    est = normalized_g(accumulate_blocks(plan, blocks, 20, batch_chunks=2))
    assert est.batch_count == 20
    assert np.all(est["triple"].stderr > 0)


# -- ensemble-backed properties ------------------------------------------------------


def small_layout():
    return OpticalLayout(532e-9, 2e-3, (0.10, 0.20, 0.20), pixel_count=16)


def scan_plan(lay, arms=(1, 2, 3)):
    w = lay.correlation_width(2)
    gs = [DetectorGrid(a, 0.0, 4 * w, w / 2) for a in range(1, 4)]
    return CorrelationPlan([Target("s", arms, Scan(arms[-1]))], gs, lay.pixel_count)


def test_estimator_consistency_k_vs_4k():
    lay = small_layout()
    plan = scan_plan(lay)
    for seed in (11, 12):
        small = normalized_g(run_ensemble(EnsembleJob(lay, MaskMode.identical(), plan, 5120, seed, 256)))
        large = normalized_g(run_ensemble(EnsembleJob(lay, MaskMode.identical(), plan, 20480, seed + 100, 256)))
        assert np.all(np.abs(small["s"].g - large["s"].g) < 3 * small["s"].stderr + 3 * large["s"].stderr)


def test_ghz_pairs_flat():
    lay = small_layout()
    plan = scan_plan(lay, (1, 2))
    est = normalized_g(run_ensemble(EnsembleJob(lay, MaskMode.ghz(), plan, 10240, 3, 256)))
    t = est["s"]
    assert np.all(np.abs(t.g - 1) < 5 * t.stderr)


def test_identical_mode_arm_exchange_symmetry():
    lay = OpticalLayout(532e-9, 2e-3, (0.20, 0.20, 0.20), pixel_count=16)
    w = lay.correlation_width(2)
    gs = [DetectorGrid(a, 0.0, 4 * w, w / 2) for a in range(1, 4)]
    targets = [Target("a", (1, 2, 3), Scan(3, {2: w})), Target("b", (1, 2, 3), Scan(2, {3: w}))]
    plan = CorrelationPlan(targets, gs, lay.pixel_count)
    est = normalized_g(run_ensemble(EnsembleJob(lay, MaskMode.identical(), plan, 10240, 4, 256)))
    a, b = est["a"], est["b"]
    assert np.all(np.abs(a.g - b.g) < 5 * np.hypot(a.stderr, b.stderr))


def test_chunk_sums_rows():
    x = np.array([[1.0], [2.0]])
    y = np.array([[3.0], [4.0]])
    rows = chunk_sums([[x, y]])[0]
    np.testing.assert_array_equal(rows[:, 0], [2, 3, 7, 11, 73])
