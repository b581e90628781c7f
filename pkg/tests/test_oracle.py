import numpy as np
import pytest

from hocorr import analytic
from hocorr.correlator import CorrelationPlan, FixedPoint, Scan, Target, normalized_g
from hocorr.ensemble import EnsembleJob, run_ensemble
from hocorr.experiments import ghz_plan, w_plan
from hocorr.geometry import DetectorGrid, OpticalLayout
from hocorr.masks import MaskMode
from hocorr.oracle import (
    AlphabetTooSmallError,
    DiscreteAlphabet,
    InstanceTooLargeError,
    alphabet_moment_check,
    assignment_count,
    exact_correlation,
)

TOL = 1e-12


def lay(m=2, d=(0.10, 0.20, 0.20)):
    return OpticalLayout(532e-9, 2e-3, d, pixel_count=m)


def grids(layout, points=3):
    out = []
    for arm in range(1, layout.arm_count + 1):
        step = layout.correlation_width(arm) / 4
        out.append(DetectorGrid(arm, 0.0, (points - 1) * step, step))
    return out


@pytest.mark.parametrize("m,expected", [(1, 0), (8, 1), (7, 0), (16, 1), (-3, 0)])
def test_alphabet_moments(m, expected):
    assert alphabet_moment_check(DiscreteAlphabet(8), m) == pytest.approx(expected, abs=1e-12)


def test_alphabet_validation():
    with pytest.raises(ValueError):
        DiscreteAlphabet(1)
    with pytest.raises(AlphabetTooSmallError):
        DiscreteAlphabet(7).check_for(MaskMode.ghz(), 3)
    DiscreteAlphabet(8).check_for(MaskMode.ghz(), 3)
    with pytest.raises(AlphabetTooSmallError):
        DiscreteAlphabet(8).check_for(MaskMode.custom([[8], [1], [1]]), 3)


def test_instance_too_large():
    layout = lay(m=8)
    with pytest.raises(InstanceTooLargeError):
        exact_correlation(MaskMode.ghz(), layout, DiscreteAlphabet(8), ghz_plan(layout, grids(layout)))


def test_assignment_count():
    layout = lay()
    assert assignment_count(MaskMode.ghz(), layout, DiscreteAlphabet(8)) == 8**4
    assert assignment_count(MaskMode.identical(), layout, DiscreteAlphabet(8)) == 8**2
    assert assignment_count(MaskMode.independent(), layout, DiscreteAlphabet(8)) == 8**6


@pytest.mark.parametrize("mode", [MaskMode.ghz(), MaskMode.identical(), MaskMode.independent()])
def test_single_pixel_gives_unit_g(mode):
    layout = lay(m=1)
    plan = ghz_plan(layout, grids(layout))
    res = exact_correlation(mode, layout, DiscreteAlphabet(8), plan)
    for t in res.estimate.targets.values():
        np.testing.assert_allclose(t.g, 1.0, atol=TOL)


@pytest.fixture(scope="module")
def ghz_exact():
    layout = lay()
    return layout, exact_correlation(MaskMode.ghz(), layout, DiscreteAlphabet(8), ghz_plan(layout, grids(layout)))


def test_ghz_enumeration_count(ghz_exact):
    assert ghz_exact[1].enumeration_count == 4096


def test_ghz_pairs_exactly_flat(ghz_exact):
    _, res = ghz_exact
    for name in ("g2_12", "g2_13", "g2_23"):
        np.testing.assert_allclose(res.g(name), 1.0, atol=TOL)


def test_ghz_triple_matches_closed_forms(ghz_exact):
    layout, res = ghz_exact
    t = res["g3_slice"]
    z = np.zeros_like(t.coordinates)
    xs = [z, z, t.coordinates]
    np.testing.assert_allclose(t.g, analytic.ensemble_g_ghz(xs, layout), atol=TOL)
    cell, _ = t.cell_normalized(layout.pixel_count)
    np.testing.assert_allclose(cell, analytic.quadrature_g3_ghz(xs, layout), atol=TOL)
    centre = len(z) // 2
    assert cell[centre] == pytest.approx(2 - 1 / layout.pixel_count, abs=TOL)


def test_ghz_off_balance_matches_quadrature():
    layout = lay(d=(0.1, 0.2, 0.3))
    res = exact_correlation(MaskMode.ghz(), layout, DiscreteAlphabet(8), ghz_plan(layout, grids(layout)))
    t = res["g3_slice"]
    z = np.zeros_like(t.coordinates)
    np.testing.assert_allclose(
        t.g, analytic.ensemble_g_ghz([z, z, t.coordinates], layout), atol=TOL
    )


def test_identical_matches_discrete_forms():
    layout = lay(d=(0.2, 0.2, 0.2))
    res = exact_correlation(MaskMode.identical(), layout, DiscreteAlphabet(8), w_plan(layout, grids(layout)))
    d = layout.distances
    diag = res["g2_23_diagonal"]
    x = diag.coordinates
    np.testing.assert_allclose(diag.g, analytic.predicted_g2_w(x, x, d[1], d[2], layout, discrete=True), atol=TOL)
    scan = res["g2_23_scan"]
    np.testing.assert_allclose(
        scan.g, analytic.predicted_g2_w(0.0, scan.coordinates, d[1], d[2], layout, discrete=True), atol=TOL
    )
    g3 = res["g3_coincidence"].g[0]
    assert g3 == pytest.approx(analytic.predicted_g3_w([0.0, 0.0, 0.0], layout, discrete=True), abs=TOL)


def test_identical_off_coincidence_triple():
    layout = lay(d=(0.1, 0.2, 0.2))
    g = grids(layout)
    w2 = g[1].step
    plan = CorrelationPlan([Target("t", (1, 2, 3), Scan(1, {2: w2, 3: -w2}))], g, layout.pixel_count)
    res = exact_correlation(MaskMode.identical(), layout, DiscreteAlphabet(8), plan)
    t = res["t"]
    expected = analytic.predicted_g3_w([t.coordinates, w2, -w2], layout, discrete=True)
    np.testing.assert_allclose(t.g, expected, atol=TOL)


@pytest.mark.parametrize("mode", [MaskMode.ghz(), MaskMode.identical()])
def test_alphabet_sufficiency(mode):
    layout = lay()
    plan = ghz_plan(layout, grids(layout))
    a = exact_correlation(mode, layout, DiscreteAlphabet(8), plan)
    b = exact_correlation(mode, layout, DiscreteAlphabet(9), plan)
    for name in a.estimate.targets:
        np.testing.assert_allclose(a.g(name), b.g(name), atol=TOL)


def test_ghz_four_arms():
    layout = lay(d=(0.1, 0.3, 0.3, 0.3))
    g = grids(layout)
    targets = [Target("g4", (1, 2, 3, 4), FixedPoint({})), Target("g3", (1, 2, 3), FixedPoint({}))]
    plan = CorrelationPlan(targets, g, layout.pixel_count)
    res = exact_correlation(MaskMode.ghz(), layout, DiscreteAlphabet(10), plan)
    assert res.enumeration_count == 10**6
    assert res.g("g4")[0] == pytest.approx(analytic.ensemble_g_ghz([0.0] * 4, layout), abs=TOL)
    assert res.g("g3")[0] == pytest.approx(1.0, abs=TOL)


@pytest.mark.parametrize("mode", [MaskMode.ghz(), MaskMode.identical()])
def test_monte_carlo_within_three_sigma(mode):
    layout = lay()
    plan = ghz_plan(layout, grids(layout))
    exact = exact_correlation(mode, layout, DiscreteAlphabet(8), plan)
    mc = normalized_g(run_ensemble(EnsembleJob(layout, mode, plan, 50000, 7, alphabet=8)))
    for name, t in mc.targets.items():
        dev = np.abs(t.g - exact.g(name))
        assert np.all(dev <= 3 * np.maximum(t.stderr, TOL)), name
