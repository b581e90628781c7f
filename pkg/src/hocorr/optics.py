"""Paraxial propagation of masked fields to the detection planes.

Fields are direct sums over modulator pixels of unit-modulus Fresnel
kernels; the usual ``1/(i lambda d)`` prefactor is dropped because every
reported correlation is normalized.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from hocorr.geometry import DetectorGrid, SourceGrid

TWO_PI = 2.0 * np.pi


def fresnel_kernel(x, xi, wavelength: float, distance: float):
    """exp(i pi (x - xi)^2 / (lambda d)); broadcasts over ``x`` and ``xi``."""
    if not distance > 0:
        raise ValueError(f"propagation distance must be positive, got {distance!r}")
    if not wavelength > 0:
        raise ValueError(f"wavelength must be positive, got {wavelength!r}")
    dx = np.subtract(x, xi)
    phase = np.mod(np.pi * dx * dx / (wavelength * distance), TWO_PI)
    out = np.exp(1j * phase)
    return complex(out) if np.ndim(out) == 0 else out


def kernel_matrix(positions, source: SourceGrid, wavelength: float, distance: float) -> np.ndarray:
    """Propagation matrix of shape (len(positions), M)."""
    x = np.asarray(positions, dtype=float)[:, None]
    return fresnel_kernel(x, source.positions[None, :], wavelength, distance)


@dataclass(frozen=True)
class ComplexField:
    arm_index: int
    positions: np.ndarray
    amplitudes: np.ndarray


@dataclass(frozen=True)
class IntensitySample:
    """Per-arm detector intensities for one ensemble draw.

    ``intensities`` maps the 1-based arm index to intensities over that
    arm's detector positions; ``bucket`` is the optional single-pixel value.
    """

    sample_index: int
    intensities: Mapping[int, np.ndarray]
    bucket: float | None = None


def propagate(
    mask_phases: Sequence[float],
    source: SourceGrid,
    grid: DetectorGrid | np.ndarray,
    wavelength: float,
    distance: float,
    arm_index: int | None = None,
) -> ComplexField:
    phases = np.asarray(mask_phases, dtype=float)
    if phases.shape != (len(source),):
        raise ValueError(f"mask has {phases.size} pixels but the source grid has {len(source)}")
    if isinstance(grid, DetectorGrid):
        positions, arm = grid.positions, grid.arm_index
    else:
        positions, arm = np.asarray(grid, dtype=float), arm_index
    h = kernel_matrix(positions, source, wavelength, distance)
    amplitudes = h @ np.exp(1j * np.mod(phases, TWO_PI))
    return ComplexField(arm_index=arm if arm is not None else 0, positions=positions, amplitudes=amplitudes)


def unit_phasors(phases: np.ndarray) -> np.ndarray:
    """exp(i phi) via separate cos/sin (faster than complex exp)."""
    z = np.empty(phases.shape, dtype=complex)
    np.cos(phases, out=z.real)
    np.sin(phases, out=z.imag)
    return z


def arm_phasor(base_phasors: np.ndarray, coefficients: np.ndarray) -> np.ndarray:
    """prod_j z_j^c_j for one arm; base_phasors (K, S, M) -> (K, M).

    Equals exp(i sum_j c_j psi_j) up to rounding, without exponentiating
    every arm separately.
    """
    out = None
    for j, c in enumerate(coefficients):
        c = int(c)
        if c == 0:
            continue
        zj = base_phasors[:, j, :] if c > 0 else np.conj(base_phasors[:, j, :])
        for _ in range(abs(c)):
            out = zj if out is None else out * zj
    if out is None:
        return np.ones(base_phasors[:, 0, :].shape, dtype=complex)
    return out


def propagate_batch(phasors: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Fields for a batch of masks: phasors (K, M), kernel (P, M) -> (K, P)."""
    return phasors @ kernel.T


def intensity(amplitudes: np.ndarray) -> np.ndarray:
    return amplitudes.real * amplitudes.real + amplitudes.imag * amplitudes.imag


def intensities(fields: Sequence[ComplexField], sample_index: int = 0, bucket: float | None = None) -> IntensitySample:
    if not fields:
        raise ValueError("no fields given")
    return IntensitySample(
        sample_index=sample_index,
        intensities={f.arm_index: intensity(f.amplitudes) for f in fields},
        bucket=bucket,
    )
