"""Exact correlation moments by enumerating every phase-mask assignment.

Phases are drawn from a discrete alphabet ``{2 pi l / L}``. When L exceeds
every net phase coefficient the moment algebra can produce, the alphabet
reproduces all cancellations of continuous uniform phases, so the
enumerated averages equal the continuous-phase expectations exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from hocorr.correlator import BUCKET, CorrelationEstimate, CorrelationPlan, MomentAccumulator, chunk_sums, normalized_g
from hocorr.geometry import OpticalLayout, build_source_grid
from hocorr.masks import MaskMode, mix_phases
from hocorr.optics import intensity, kernel_matrix

MAX_ASSIGNMENTS = 10**7
BLOCK = 4096


class InstanceTooLargeError(ValueError):
    """Raised when exhaustive enumeration would exceed the assignment budget."""


class AlphabetTooSmallError(ValueError):
    """Raised when the alphabet cannot reproduce the continuous-phase moment algebra."""


@dataclass(frozen=True)
class DiscreteAlphabet:
    size: int

    def __post_init__(self):
        if self.size < 2:
            raise ValueError("alphabet size must be at least 2")

    @property
    def values(self) -> np.ndarray:
        return 2.0 * math.pi * np.arange(self.size) / self.size

    def check_for(self, mode: MaskMode, arm_count: int) -> None:
        need = 2 * arm_count + 2
        if self.size < need:
            raise AlphabetTooSmallError(f"alphabet size {self.size} < 2N+2 = {need} for {arm_count} arms")
        mixing = mode.mixing_matrix(arm_count)
        worst = int(np.abs(mixing).sum(axis=0).max())
        if self.size <= worst:
            raise AlphabetTooSmallError(f"alphabet size {self.size} does not exceed coefficient bound {worst}")


def alphabet_moment_check(alphabet: DiscreteAlphabet, m: int) -> complex:
    """(1/L) sum_l exp(i m 2 pi l / L): 1 when L divides m, else 0."""
    return complex(np.exp(1j * m * alphabet.values).mean())


@dataclass
class ExactCorrelationResult:
    estimate: CorrelationEstimate
    enumeration_count: int

    def g(self, target: str) -> np.ndarray:
        return self.estimate[target].g

    def __getitem__(self, target: str):
        return self.estimate[target]


def assignment_count(mode: MaskMode, layout: OpticalLayout, alphabet: DiscreteAlphabet) -> int:
    return alphabet.size ** (layout.pixel_count * mode.base_count(layout.arm_count))


def exact_correlation(
    mode: MaskMode, layout: OpticalLayout, alphabet: DiscreteAlphabet, plan: CorrelationPlan
) -> ExactCorrelationResult:
    """Average the planned intensity products over all equiprobable phase assignments."""
    n_arms = layout.arm_count
    alphabet.check_for(mode, n_arms)
    mixing = mode.mixing_matrix(n_arms)
    s, m, L = mixing.shape[1], layout.pixel_count, alphabet.size
    digits = s * m
    total = L**digits
    if total > MAX_ASSIGNMENTS:
        raise InstanceTooLargeError(f"{L}^{digits} = {total} assignments exceeds {MAX_ASSIGNMENTS}")
    source = build_source_grid(layout)
    kernels = {
        arm: kernel_matrix(pos, source, layout.wavelength, layout.distances[arm - 1]).T
        for arm, pos in plan.arm_positions.items()
    }
    bucket_kernel = None
    if plan.bucket is not None:
        bucket_kernel = kernel_matrix(plan.bucket.positions, source, layout.wavelength, layout.distances[0]).T
    acc = MomentAccumulator(plan, chunk_size=BLOCK, batch_chunks=10**9)
    powers = L ** np.arange(digits - 1, -1, -1, dtype=np.int64)
    step = 2.0 * math.pi / L
    for c, lo in enumerate(range(0, total, BLOCK)):
        idx = np.arange(lo, min(total, lo + BLOCK), dtype=np.int64)
        dig = (idx[:, None] // powers[None, :]) % L
        base = (dig * step).reshape(len(idx), s, m)
        phases = mix_phases(base, mixing)
        block = {}
        for arm, kern in kernels.items():
            block[arm] = intensity(np.exp(1j * phases[:, arm - 1, :]) @ kern)
        if bucket_kernel is not None:
            block[BUCKET] = intensity(np.exp(1j * phases[:, 0, :]) @ bucket_kernel) @ plan.bucket.weights
        acc.add_chunk(c, chunk_sums(plan.gather(block)))
    est = normalized_g(acc)
    for t in est.targets.values():
        t.stderr = np.zeros_like(t.g)
        t.cumulant_stderr = np.zeros_like(t.g)
    return ExactCorrelationResult(estimate=est, enumeration_count=total)
