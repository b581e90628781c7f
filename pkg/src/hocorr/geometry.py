"""One-dimensional optical layout: aperture discretization, detector grids, balance condition.

All lengths are in meters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DEFAULT_PIXEL_COUNT = 64
DEFAULT_BALANCE_TOLERANCE = 1e-9
# default detector grids: half-span in correlation widths, and steps per width
GRID_HALF_SPAN_WIDTHS = 6
GRID_STEPS_PER_WIDTH = 10


class InvalidLayoutError(ValueError):
    """Raised when an optical layout violates its invariants."""


@dataclass(frozen=True)
class OpticalLayout:
    wavelength: float
    aperture: float
    distances: tuple[float, ...]
    pixel_count: int = DEFAULT_PIXEL_COUNT
    arm_count: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "distances", tuple(float(d) for d in self.distances))
        if self.arm_count is None:
            object.__setattr__(self, "arm_count", len(self.distances))
        self.validate()

    def validate(self) -> None:
        if not (self.wavelength > 0 and math.isfinite(self.wavelength)):
            raise InvalidLayoutError(f"wavelength must be positive, got {self.wavelength!r}")
        if not (self.aperture > 0 and math.isfinite(self.aperture)):
            raise InvalidLayoutError(f"aperture must be positive, got {self.aperture!r}")
        if int(self.pixel_count) != self.pixel_count or self.pixel_count < 1:
            raise InvalidLayoutError(f"pixel_count must be a positive integer, got {self.pixel_count!r}")
        if self.arm_count < 2:
            raise InvalidLayoutError(f"arm_count must be at least 2, got {self.arm_count!r}")
        if len(self.distances) != self.arm_count:
            raise InvalidLayoutError(
                f"distances has {len(self.distances)} entries but arm_count is {self.arm_count}"
            )
        for n, d in enumerate(self.distances, start=1):
            if not (d > 0 and math.isfinite(d)):
                raise InvalidLayoutError(f"distance of arm {n} must be positive, got {d!r}")

    @property
    def pitch(self) -> float:
        return self.aperture / self.pixel_count

    def correlation_width(self, arm: int) -> float:
        """Transverse speckle scale lambda*d/D at arm ``arm`` (1-based)."""
        return self.wavelength * self.distances[arm - 1] / self.aperture

    def with_distances(self, distances: Sequence[float]) -> "OpticalLayout":
        return OpticalLayout(self.wavelength, self.aperture, tuple(distances), self.pixel_count)

    def with_pixel_count(self, pixel_count: int) -> "OpticalLayout":
        return OpticalLayout(self.wavelength, self.aperture, self.distances, pixel_count)


@dataclass(frozen=True)
class SourceGrid:
    positions: np.ndarray
    pitch: float

    def __len__(self):
        return len(self.positions)


def build_source_grid(layout: OpticalLayout) -> SourceGrid:
    """Pixel centers of the modulator, uniformly spaced and symmetric about 0."""
    m = layout.pixel_count
    pitch = layout.aperture / m
    # (2j - (m-1)) / 2 is exact in binary, so mirrored pixels cancel exactly
    positions = (2.0 * np.arange(m) - (m - 1)) * (pitch / 2.0)
    positions.setflags(write=False)
    return SourceGrid(positions=positions, pitch=pitch)


@dataclass(frozen=True)
class DetectorGrid:
    """Uniform scan grid on one arm's detection plane.

    The grid always has an odd number of points and contains ``center``.
    """

    arm_index: int
    center: float
    span: float
    step: float
    positions: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.step > 0:
            raise InvalidLayoutError(f"detector step must be positive, got {self.step!r}")
        if self.span < self.step:
            raise InvalidLayoutError(f"detector span {self.span!r} is smaller than its step {self.step!r}")
        half = int(math.floor(self.span / 2.0 / self.step + 1e-9))
        positions = self.center + self.step * np.arange(-half, half + 1, dtype=float)
        positions.setflags(write=False)
        object.__setattr__(self, "positions", positions)

    def __len__(self):
        return len(self.positions)

    def index_of(self, x: float) -> int:
        """Index of grid point ``x``; raises if ``x`` is not on the grid."""
        j = int(round((x - self.positions[0]) / self.step))
        if 0 <= j < len(self.positions) and abs(self.positions[j] - x) <= 1e-6 * self.step:
            return j
        raise ValueError(f"position {x!r} m is not on the detector grid of arm {self.arm_index}")


def default_detector_grids(layout: OpticalLayout) -> list[DetectorGrid]:
    """Per-arm grids spanning +-6 correlation widths at a tenth-of-a-width step."""
    grids = []
    for arm in range(1, layout.arm_count + 1):
        width = layout.correlation_width(arm)
        step = width / GRID_STEPS_PER_WIDTH
        span = 2 * GRID_HALF_SPAN_WIDTHS * width
        grids.append(DetectorGrid(arm_index=arm, center=0.0, span=span, step=step))
    return grids


@dataclass(frozen=True)
class BalanceReport:
    residual: float  # 1/m
    satisfied: bool


def check_balance_condition(layout: OpticalLayout, tolerance: float = DEFAULT_BALANCE_TOLERANCE) -> BalanceReport:
    """Check 1/d_1 - sum_{n>=2} 1/d_n = 0, relative to 1/d_1."""
    if any(not d > 0 for d in layout.distances):
        raise InvalidLayoutError("all distances must be positive")
    d1, rest = layout.distances[0], layout.distances[1:]
    residual = 1.0 / d1 - math.fsum(1.0 / d for d in rest)
    return BalanceReport(residual=residual, satisfied=abs(residual) * d1 <= tolerance)
