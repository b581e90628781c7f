import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hocorr.geometry import DetectorGrid, OpticalLayout, build_source_grid
from hocorr.masks import MaskMode, RngPolicy, base_phases, mix_phases
from hocorr.optics import (
    ComplexField,
    arm_phasor,
    fresnel_kernel,
    intensities,
    intensity,
    kernel_matrix,
    propagate,
    unit_phasors,
)

LAM = 532e-9
D = 0.2


def test_kernel_at_source_point_is_one():
    assert fresnel_kernel(1e-4, 1e-4, LAM, D) == 1


def test_kernel_phase_pi():
    dx = np.sqrt(LAM * D)
    assert fresnel_kernel(dx, 0.0, LAM, D) == pytest.approx(-1, abs=1e-12)


def test_kernel_phase_value():
    k = fresnel_kernel(53.2e-6, 0.0, LAM, D)
    assert np.angle(k) == pytest.approx(np.pi * 53.2e-6**2 / (LAM * D), rel=1e-12)
    assert np.angle(k) == pytest.approx(0.0836, abs=1e-4)


@given(st.floats(-1e-3, 1e-3), st.floats(-1e-3, 1e-3), st.floats(0.01, 2.0))
def test_kernel_unit_modulus(x, xi, d):
    assert abs(fresnel_kernel(x, xi, LAM, d)) == pytest.approx(1.0, abs=1e-12)


def test_kernel_rejects_nonpositive_distance():
    with pytest.raises(ValueError):
        fresnel_kernel(0.0, 0.0, LAM, 0.0)


def layout(m):
    return OpticalLayout(LAM, 2e-3, (0.1, D, D), pixel_count=m)


def test_single_pixel_unit_amplitude():
    src = build_source_grid(layout(1))
    grid = DetectorGrid(3, 0.0, 3e-4, 5e-6)
    f = propagate([1.234], src, grid, LAM, D)
    np.testing.assert_allclose(np.abs(f.amplitudes), 1.0, atol=1e-12)
    np.testing.assert_allclose(intensities([f]).intensities[3], 1.0, atol=1e-12)


def test_two_pixel_interference():
    src = build_source_grid(layout(2))
    x = np.linspace(-2e-4, 2e-4, 41)
    f = propagate([0.0, 0.0], src, x, LAM, D)
    expected = 2 + 2 * np.cos(4 * np.pi * x * 0.5e-3 / (LAM * D))
    np.testing.assert_allclose(intensity(f.amplitudes), expected, atol=1e-9)
    assert intensity(propagate([0.0, 0.0], src, np.array([0.0]), LAM, D).amplitudes)[0] == pytest.approx(4.0)
    # period lambda d / (1 mm)
    assert LAM * D / 1e-3 == pytest.approx(106.4e-6)


def test_global_phase_invariance():
    src = build_source_grid(layout(8))
    rng = np.random.default_rng(0)
    ph = rng.uniform(0, 2 * np.pi, 8)
    x = np.linspace(-1e-4, 1e-4, 11)
    a = propagate(ph, src, x, LAM, D).amplitudes
    b = propagate(ph + 0.7, src, x, LAM, D).amplitudes
    np.testing.assert_allclose(b, a * np.exp(0.7j), atol=1e-12)
    np.testing.assert_allclose(intensity(b), intensity(a), rtol=1e-12)


def test_linearity_disjoint_support():
    src = build_source_grid(layout(6))
    rng = np.random.default_rng(1)
    ph = rng.uniform(0, 2 * np.pi, 6)
    x = np.linspace(-1e-4, 1e-4, 7)
    h = kernel_matrix(x, src, LAM, D)
    za, zb = np.exp(1j * ph), np.exp(1j * ph)
    za[3:] = 0
    zb[:3] = 0
    np.testing.assert_allclose(h @ za + h @ zb, propagate(ph, src, x, LAM, D).amplitudes, atol=1e-12)


def test_mirror_symmetry():
    """Reversing the mask on a symmetric source grid mirrors the field."""
    src = build_source_grid(layout(10))
    rng = np.random.default_rng(2)
    ph = rng.uniform(0, 2 * np.pi, 10)
    x = np.linspace(-1e-4, 1e-4, 9)
    a = propagate(ph, src, x, LAM, D).amplitudes
    mirrored = propagate(ph[::-1], src, -x, LAM, D).amplitudes
    np.testing.assert_allclose(mirrored, a, atol=1e-10)


def test_negated_phases_conjugate_through_conjugate_kernel():
    src = build_source_grid(layout(10))
    rng = np.random.default_rng(3)
    ph = rng.uniform(0, 2 * np.pi, 10)
    x = np.linspace(-1e-4, 1e-4, 9)
    a = propagate(ph, src, x, LAM, D).amplitudes
    h = kernel_matrix(x, src, LAM, D)
    np.testing.assert_allclose(np.conj(h) @ np.exp(-1j * ph), np.conj(a), atol=1e-10)


def test_mask_length_mismatch():
    with pytest.raises(ValueError):
        propagate([0.0, 1.0], build_source_grid(layout(3)), np.zeros(2), LAM, D)


def test_fast_phasors_match_exp():
    lay = layout(16)
    mode = MaskMode.custom([[1, 0], [2, -1], [0, -3]])
    base = base_phases(lay, mode, RngPolicy(3), 0, 50)
    mixed = mix_phases(base, mode.mixing_matrix(3))
    z = unit_phasors(base)
    for arm in range(3):
        np.testing.assert_allclose(arm_phasor(z, mode.mixing_matrix(3)[arm]), np.exp(1j * mixed[:, arm]), atol=1e-13)


def test_mean_intensity_is_m():
    m, k = 16, 4000
    lay = layout(m)
    src = build_source_grid(lay)
    x = np.linspace(-1e-4, 1e-4, 21)
    for mode in (MaskMode.independent(), MaskMode.ghz(), MaskMode.identical()):
        base = base_phases(lay, mode, RngPolicy(7), 0, k)
        ph = mix_phases(base, mode.mixing_matrix(3))
        h = kernel_matrix(x, src, LAM, lay.distances[0])
        mean = intensity(np.exp(1j * ph[:, 0]) @ h.T).mean()
        assert abs(mean - m) <= 5 * m / np.sqrt(x.size * k)


def test_intensities_requires_fields():
    with pytest.raises(ValueError):
        intensities([])
    f = ComplexField(2, np.zeros(1), np.array([1 + 0j]))
    assert intensities([f]).intensities[2][0] == 1.0
