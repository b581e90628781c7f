"""Random phase-mask ensembles for the N modulated laser arms.

Every mode is expressed as an integer mixing matrix ``C`` of shape (N, S):
arm ``n`` carries ``phi_n = sum_j C[n, j] * psi_j (mod 2 pi)`` where the
``psi_j`` are S statistically independent, uniformly distributed base masks.

* ``ghz``         arm ``c`` carries the sum of all other arms' masks
* ``identical``   one base mask copied to every arm
* ``independent`` one base mask per arm
* ``custom``      any integer matrix
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from hocorr.geometry import OpticalLayout

TWO_PI = 2.0 * math.pi
CONSTRAINT_TOLERANCE = 1e-12
_U53 = 2.0**-53

MODE_KINDS = ("ghz", "identical", "independent", "custom")


class MaskConfigError(ValueError):
    """Raised for an inconsistent mask mode."""


@dataclass(frozen=True)
class MaskMode:
    """Phase-mask mode.

    Parameters
    ----------
    kind : str
        One of ``ghz``, ``identical``, ``independent`` or ``custom``.
    constrained_arm : int
        For ``ghz``: the 1-based arm whose mask is the sum of the others.
    coefficients : tuple of tuples
        For ``custom``: per-arm integer coefficient rows over the base masks.
    """

    kind: str
    constrained_arm: int = 1
    coefficients: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self):
        if self.kind not in MODE_KINDS:
            raise MaskConfigError(f"unknown mask mode {self.kind!r}; expected one of {MODE_KINDS}")
        if self.kind == "custom":
            if not self.coefficients:
                raise MaskConfigError("custom mask mode needs a coefficient row per arm")
            rows = tuple(tuple(int(c) for c in row) for row in self.coefficients)
            for row, orig in zip(rows, self.coefficients):
                if any(int(c) != c for c in orig):
                    raise MaskConfigError("custom mask coefficients must be integers")
            if len({len(r) for r in rows}) != 1:
                raise MaskConfigError("custom mask coefficient rows must have equal length")
            if all(c == 0 for r in rows for c in r):
                raise MaskConfigError("custom mask coefficients must not all be zero")
            object.__setattr__(self, "coefficients", rows)

    @classmethod
    def ghz(cls, constrained_arm: int = 1) -> "MaskMode":
        return cls("ghz", constrained_arm=constrained_arm)

    @classmethod
    def identical(cls) -> "MaskMode":
        return cls("identical")

    @classmethod
    def independent(cls) -> "MaskMode":
        return cls("independent")

    @classmethod
    def custom(cls, coefficients: Sequence[Sequence[int]]) -> "MaskMode":
        return cls("custom", coefficients=tuple(tuple(r) for r in coefficients))

    def mixing_matrix(self, arm_count: int) -> np.ndarray:
        """Integer matrix mapping base masks to arm masks, shape (N, S)."""
        n = arm_count
        if self.kind == "identical":
            return np.ones((n, 1), dtype=np.int64)
        if self.kind == "independent":
            return np.eye(n, dtype=np.int64)
        if self.kind == "ghz":
            c = self.constrained_arm
            if not 1 <= c <= n:
                raise MaskConfigError(f"constrained_arm {c} out of range [1, {n}]")
            free = [a for a in range(n) if a != c - 1]
            mat = np.zeros((n, n - 1), dtype=np.int64)
            for j, a in enumerate(free):
                mat[a, j] = 1
                mat[c - 1, j] = 1
            return mat
        mat = np.array(self.coefficients, dtype=np.int64)
        if mat.shape[0] != n:
            raise MaskConfigError(f"custom mode has {mat.shape[0]} coefficient rows for {n} arms")
        return mat

    def base_count(self, arm_count: int) -> int:
        return self.mixing_matrix(arm_count).shape[1]

    def relations(self, arm_count: int) -> list[np.ndarray]:
        """Integer vectors ``r`` with ``sum_n r_n phi_n = 0 (mod 2 pi)`` for every sample."""
        return _integer_left_null_space(self.mixing_matrix(arm_count))

    def describe(self) -> str:
        if self.kind == "ghz":
            return f"ghz(constrained_arm={self.constrained_arm})"
        if self.kind == "custom":
            return f"custom({[list(r) for r in self.coefficients]})"
        return self.kind


def _integer_left_null_space(mat: np.ndarray) -> list[np.ndarray]:
    import sympy

    basis = sympy.Matrix(mat.T.tolist()).nullspace()
    out = []
    for vec in basis:
        denom = sympy.ilcm(*[sympy.fraction(v)[1] for v in vec])
        ints = [int(v * denom) for v in vec]
        g = math.gcd(*ints)
        out.append(np.array([v // g for v in ints], dtype=np.int64))
    return out


@dataclass(frozen=True)
class RngPolicy:
    """Counter-based phase streams.

    The uniform for base mask ``j`` at pixel ``xi`` of sample ``k`` is word
    ``k * stride + j * M + xi`` of the Philox4x64 stream keyed by
    ``master_seed``, where ``stride`` rounds ``S * M`` up to a whole Philox
    block. Any sample can therefore be regenerated on its own.
    """

    master_seed: int

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.master_seed!r}")

    def uniforms(self, first_sample: int, count: int, words_per_sample: int) -> np.ndarray:
        """Uniform doubles in [0, 1), shape (count, words_per_sample)."""
        blocks = -(-words_per_sample // 4)
        stride = 4 * blocks
        bitgen = np.random.Philox(key=int(self.master_seed), counter=int(first_sample) * blocks)
        raw = bitgen.random_raw(count * stride).reshape(count, stride)[:, :words_per_sample]
        return (raw >> np.uint64(11)).astype(np.float64) * _U53


@dataclass(frozen=True)
class PhaseMaskSample:
    sample_index: int
    phases: np.ndarray  # (N, M), radians in [0, 2 pi)

    @property
    def arm_count(self) -> int:
        return self.phases.shape[0]


def base_phases(
    layout: OpticalLayout,
    mode: MaskMode,
    rng: RngPolicy,
    first_sample: int,
    count: int,
    alphabet: int | None = None,
) -> np.ndarray:
    """Base mask phases for ``count`` consecutive samples, shape (count, S, M).

    With ``alphabet=L`` the phases are drawn uniformly from ``{2 pi l / L}``.
    """
    if first_sample < 0:
        raise ValueError("sample index must be non-negative")
    s = mode.base_count(layout.arm_count)
    m = layout.pixel_count
    u = rng.uniforms(first_sample, count, s * m).reshape(count, s, m)
    if alphabet is None:
        return u * TWO_PI
    return np.floor(u * alphabet) * (TWO_PI / alphabet)


def mix_phases(base: np.ndarray, mixing: np.ndarray) -> np.ndarray:
    """Arm phases from base phases: (K, S, M) -> (K, N, M), reduced into [0, 2 pi)."""
    k, s, m = base.shape
    n = mixing.shape[0]
    out = np.empty((k, n, m))
    for a in range(n):
        terms = [(int(c), j) for j, c in enumerate(mixing[a]) if c != 0]
        if not terms:
            out[:, a, :] = 0.0
            continue
        c0, j0 = terms[0]
        acc = base[:, j0, :] if c0 == 1 else c0 * base[:, j0, :]
        for c, j in terms[1:]:
            acc = acc + (base[:, j, :] if c == 1 else c * base[:, j, :])
        out[:, a, :] = acc
    np.mod(out, TWO_PI, out=out)
    out[out >= TWO_PI] = 0.0
    return out


def generate_phases(
    layout: OpticalLayout,
    mode: MaskMode,
    rng: RngPolicy,
    first_sample: int,
    count: int,
    alphabet: int | None = None,
) -> np.ndarray:
    """Arm phases for consecutive samples, shape (count, N, M)."""
    mixing = mode.mixing_matrix(layout.arm_count)
    return mix_phases(base_phases(layout, mode, rng, first_sample, count, alphabet), mixing)


def generate_sample(
    mode: MaskMode, layout: OpticalLayout, rng: RngPolicy, k: int, alphabet: int | None = None
) -> PhaseMaskSample:
    phases = generate_phases(layout, mode, rng, k, 1, alphabet)[0]
    return PhaseMaskSample(sample_index=k, phases=phases)


def _mod_distance(x: np.ndarray) -> np.ndarray:
    r = np.mod(x, TWO_PI)
    return np.minimum(r, TWO_PI - r)


def verify_mode(sample: PhaseMaskSample, mode: MaskMode, tolerance: float = CONSTRAINT_TOLERANCE) -> bool:
    """True iff every linear phase relation implied by ``mode`` holds on every pixel."""
    phases = np.asarray(sample.phases, dtype=float)
    for r in mode.relations(phases.shape[0]):
        combo = np.tensordot(r.astype(float), phases, axes=(0, 0))
        if np.any(_mod_distance(combo) > tolerance):
            return False
    return True


def empirical_phase_moments(samples: Sequence[PhaseMaskSample], m: int, arm: int, pixel: int) -> complex:
    """Sample mean of exp(i m phi) for one arm (1-based) and pixel (0-based)."""
    if m == 0:
        raise ValueError("moment order m must be non-zero")
    if len(samples) == 0:
        raise ValueError("empty sample set")
    phi = np.array([s.phases[arm - 1, pixel] for s in samples])
    return complex(np.mean(np.exp(1j * m * phi)))
