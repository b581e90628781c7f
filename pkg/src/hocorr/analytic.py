"""Closed-form and discrete-sum correlation predictions.

Two normalizations appear for the sum-constrained (GHZ-type) mode:

* the *interference* form ``1 + |mu|^2 - 1/M`` counts only the source-pixel
  pairings in which the constrained arm interferes with the others (the
  discrete two-amplitude integral); at the balance condition it tends to
  ``1 + sinc^2(u)``;
* the *ensemble* form is what ``<prod I> / prod <I>`` converges to. Only M of
  the M^2 pairings are phase-locked, so the interference term enters with
  weight ``M^-(N-2)``.

For identical masks the pairwise and triple forms carry O(1) weight; the
``discrete=True`` variants add the exact finite-M corrections for
unit-modulus phasors.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from hocorr.geometry import DEFAULT_BALANCE_TOLERANCE, OpticalLayout, build_source_grid, check_balance_condition
from hocorr.masks import MaskMode

SINC_SERIES_CUTOFF = 1e-4


class BalanceConditionError(ValueError):
    """Raised when the closed form is requested off the balance condition."""


def sinc(u):
    """sin(u)/u with a series branch near 0."""
    u = np.asarray(u, dtype=float)
    small = np.abs(u) < SINC_SERIES_CUTOFF
    safe = np.where(small, 1.0, u)
    out = np.where(small, 1.0 - u * u / 6.0, np.sin(safe) / safe)
    return float(out) if out.ndim == 0 else out


def mu_overlap(
    layout: OpticalLayout,
    positions: Sequence,
    signs: Sequence[int],
    arms: Sequence[int] | None = None,
):
    """Normalized kernel overlap (1/M) sum_xi prod_n k_n(x_n, xi).

    ``k_n`` is the Fresnel kernel of arm ``arms[i]`` for sign +1 and its
    conjugate for sign -1. ``positions`` may hold arrays, which broadcast.
    """
    arms = list(range(1, len(positions) + 1)) if arms is None else list(arms)
    if not len(arms) == len(positions) == len(signs):
        raise ValueError("positions, signs and arms must have equal length")
    xi = build_source_grid(layout).positions
    xs = [np.asarray(x, dtype=float) for x in positions]
    shape = np.broadcast_shapes(*(x.shape for x in xs))
    phase = np.zeros(shape + (len(xi),))
    for x, s, a in zip(xs, signs, arms):
        if s not in (1, -1):
            raise ValueError(f"signs must be +1 or -1, got {s!r}")
        d = layout.distances[a - 1]
        dx = np.expand_dims(x, -1) - xi
        phase = phase + s * np.mod(np.pi * dx * dx / (layout.wavelength * d), 2 * np.pi)
    mu = np.exp(1j * phase).mean(axis=-1)
    return complex(mu) if mu.ndim == 0 else mu


def _ghz_signs(n: int, constrained_arm: int) -> list[int]:
    return [1 if a == constrained_arm else -1 for a in range(1, n + 1)]


def ghz_argument(positions: Sequence, layout: OpticalLayout):
    """u = (pi D / lambda) (x_1/d_1 - sum_{n>=2} x_n/d_n)."""
    d = layout.distances
    v = np.asarray(positions[0], dtype=float) / d[0]
    for x, dn in zip(positions[1:], d[1:]):
        v = v - np.asarray(x, dtype=float) / dn
    return math.pi * layout.aperture / layout.wavelength * v


def predicted_g3_ghz(positions: Sequence, layout: OpticalLayout, tolerance: float = DEFAULT_BALANCE_TOLERANCE):
    """Continuum law 1 + sinc^2(u) at the balance condition."""
    if len(positions) != layout.arm_count:
        raise ValueError("one position per arm is required")
    report = check_balance_condition(layout, tolerance)
    if not report.satisfied:
        raise BalanceConditionError(
            f"distances violate the balance condition (residual {report.residual:.6g} 1/m); use quadrature_g3_ghz"
        )
    return 1.0 + sinc(ghz_argument(positions, layout)) ** 2


def quadrature_g3_ghz(positions: Sequence, layout: OpticalLayout, constrained_arm: int = 1):
    """Discrete interference sum 1 + |mu|^2 - 1/M, valid on or off the balance condition."""
    signs = _ghz_signs(layout.arm_count, constrained_arm)
    mu = mu_overlap(layout, positions, signs)
    return 1.0 + np.abs(mu) ** 2 - 1.0 / layout.pixel_count


def ensemble_g_ghz(positions: Sequence, layout: OpticalLayout, constrained_arm: int = 1):
    """Exact ensemble value of <prod_n I_n> / prod_n <I_n> over all N arms of a GHZ-type ensemble."""
    m = layout.pixel_count
    n = layout.arm_count
    interference = quadrature_g3_ghz(positions, layout, constrained_arm) - 1.0
    return 1.0 + interference / float(m) ** (n - 2)


def predicted_g2_w(x_i, x_j, d_i: float, d_j: float, layout: OpticalLayout, discrete: bool = False):
    """Pairwise correlation of two identically masked arms: 1 + |mu_ij|^2 (- 1/M if discrete)."""
    lay = layout.with_distances([d_i, d_j])
    mu = mu_overlap(lay, [x_i, x_j], [1, -1])
    g = 1.0 + np.abs(mu) ** 2
    return g - 1.0 / layout.pixel_count if discrete else g


def predicted_g3_w(positions: Sequence, layout: OpticalLayout, discrete: bool = False, arms: Sequence[int] = (1, 2, 3)):
    """Triple correlation of three identically masked arms.

    Gaussian (large-M) form: 1 + sum |mu_ij|^2 + 2 Re(mu_12 mu_23 mu_31).
    The discrete form is exact for unit-modulus phasors on M pixels:
    1 - 3/M + 4/M^2 + (1 - 2/M) sum |mu_ij|^2 + 2 Re(mu_12 mu_23 mu_31).
    """
    x1, x2, x3 = positions
    a1, a2, a3 = arms
    mu12 = mu_overlap(layout, [x1, x2], [1, -1], [a1, a2])
    mu13 = mu_overlap(layout, [x1, x3], [1, -1], [a1, a3])
    mu23 = mu_overlap(layout, [x2, x3], [1, -1], [a2, a3])
    pair = np.abs(mu12) ** 2 + np.abs(mu13) ** 2 + np.abs(mu23) ** 2
    cyclic = 2.0 * np.real(mu12 * mu23 * np.conj(mu13))
    if not discrete:
        return 1.0 + pair + cyclic
    m = float(layout.pixel_count)
    return 1.0 - 3.0 / m + 4.0 / m**2 + (1.0 - 2.0 / m) * pair + cyclic


@dataclass(frozen=True)
class StructurePrediction:
    mode: MaskMode
    arm_count: int
    surviving_orders: frozenset[int]
    peaked: dict[int, bool]  # per order 2..N: does some subset of that order correlate
    correlated_subsets: tuple[tuple[int, ...], ...]


def subset_correlates(mixing: np.ndarray, subset: Sequence[int]) -> bool:
    """Whether <prod_{n in subset} I_n> has phase-locked pairings beyond the trivial ones.

    Each arm contributes a ``+C[n]`` slot (field) and a ``-C[n]`` slot
    (conjugate field). A pairing survives the ensemble average when the
    slots sharing a pixel have zero net coefficient on every base mask; it
    is non-trivial when some arm's two slots sit on different pixels. Such a
    pairing exists iff some zero-sum set of slots separates an arm's pair
    (its complement is then zero-sum too).
    """
    vecs = []
    for a in subset:
        vecs.append((a, mixing[a - 1]))
        vecs.append((a, -mixing[a - 1]))
    k = len(vecs)
    for bits in range(1, 1 << k):
        total = np.zeros(mixing.shape[1], dtype=np.int64)
        split = False
        for i in range(0, k, 2):
            plus, minus = bits >> i & 1, bits >> (i + 1) & 1
            if plus:
                total += vecs[i][1]
            if minus:
                total += vecs[i + 1][1]
            if plus != minus:
                split = True
        if split and not total.any():
            return True
    return False


def classify_structure(mode: MaskMode, arm_count: int) -> StructurePrediction:
    mixing = mode.mixing_matrix(arm_count)
    subsets = []
    for order in range(2, arm_count + 1):
        for subset in itertools.combinations(range(1, arm_count + 1), order):
            if subset_correlates(mixing, subset):
                subsets.append(subset)
    orders = frozenset(len(s) for s in subsets)
    return StructurePrediction(
        mode=mode,
        arm_count=arm_count,
        surviving_orders=orders,
        peaked={o: o in orders for o in range(2, arm_count + 1)},
        correlated_subsets=tuple(subsets),
    )
