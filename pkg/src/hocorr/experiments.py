"""Packaged scenarios: GHZ scan, W scan, N-order generalization and ghost imaging."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from hocorr import analytic
from hocorr.correlator import (
    Bucket,
    BucketScan,
    CorrelationEstimate,
    CorrelationPlan,
    DiagonalScan,
    FixedPoint,
    Scan,
    Target,
    flatness_statistic,
    normalized_g,
)
from hocorr.ensemble import EnsembleJob, run_ensemble
from hocorr.geometry import DetectorGrid, OpticalLayout, check_balance_condition, default_detector_grids
from hocorr.masks import MaskMode

UM = 1e-6
DEFAULT_OBJECT_POINTS = ((-120 * UM, 1.0), (-30 * UM, 0.85), (90 * UM, 0.7))
BUCKET_MAX_STEP = 2 * UM
PEAK_THRESHOLD = 0.5

GHOST_MODES = ("FixedX2ScanX3", "DiagonalX2EqX3", "SecondOrderControl")


class ScenarioError(ValueError):
    """Raised when a scenario's preconditions fail."""


def reference_layout(pixel_count: int = 64) -> OpticalLayout:
    """lambda = 532 nm, D = 2 mm, d = (10, 20, 20) cm."""
    return OpticalLayout(532e-9, 2e-3, (0.10, 0.20, 0.20), pixel_count)


def _rms(a: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(a))))


def _ensemble(layout, mode, plan, samples, seed, chunk_size, workers, alphabet=None) -> CorrelationEstimate:
    job = EnsembleJob(layout, mode, plan, samples, seed, chunk_size, alphabet)
    return normalized_g(run_ensemble(job, workers=workers))


def first_zero(coords: np.ndarray, profile: np.ndarray, peak_index: int, width: float) -> float:
    """|x| of the first minimum of ``profile`` within 1.5 correlation widths either side of the peak.

    Returns the mean of the two sides' distances from the peak.
    """
    x0 = coords[peak_index]
    dists = []
    for side in (1, -1):
        sel = np.where((side * (coords - x0) > 0) & (np.abs(coords - x0) <= 1.5 * width))[0]
        if sel.size:
            j = sel[np.argmin(profile[sel])]
            dists.append(abs(coords[j] - x0))
    return float(np.mean(dists)) if dists else float("nan")


# -- GHZ ----------------------------------------------------------------------


@dataclass
class GhzReport:
    coordinates: np.ndarray
    g3: np.ndarray
    g3_stderr: np.ndarray
    g3_cell: np.ndarray  # interference-normalized Monte Carlo estimate
    g3_cell_stderr: np.ndarray
    predicted: np.ndarray  # closed-form 1 + sinc^2
    predicted_ensemble: np.ndarray  # exact raw expectation at finite M
    predicted_interference: np.ndarray  # discrete 1 + |mu|^2 - 1/M
    peak_value: float
    peak_position: float
    cell_peak_value: float
    cell_peak_position: float
    first_zero: float
    cell_first_zero: float
    rms_residual: float  # raw g3 vs closed form
    rms_residual_ensemble: float  # raw g3 vs finite-M ensemble expectation
    rms_residual_cell: float  # cell-normalized vs closed form
    pair_flatness: dict[str, float]
    grid_step: float
    estimate: CorrelationEstimate = field(repr=False)


def ghz_plan(layout: OpticalLayout, grids: list[DetectorGrid] | None = None) -> CorrelationPlan:
    grids = grids or default_detector_grids(layout)
    targets = [
        Target("g3_slice", (1, 2, 3), Scan(3, {1: 0.0, 2: 0.0})),
        Target("g2_12", (1, 2), Scan(2, {1: 0.0})),
        Target("g2_13", (1, 3), Scan(3, {1: 0.0})),
        Target("g2_23", (2, 3), Scan(3, {2: 0.0})),
    ]
    return CorrelationPlan(targets, grids, layout.pixel_count)


def run_ghz_scenario(
    layout: OpticalLayout,
    samples: int,
    seed: int,
    chunk_size: int = 256,
    workers: int = 1,
    grids: list[DetectorGrid] | None = None,
) -> GhzReport:
    if layout.arm_count != 3:
        raise ScenarioError("the GHZ scenario needs three arms")
    if not check_balance_condition(layout).satisfied:
        raise ScenarioError("the GHZ scenario needs distances satisfying the balance condition")
    plan = ghz_plan(layout, grids)
    est = _ensemble(layout, MaskMode.ghz(), plan, samples, seed, chunk_size, workers)
    t = est["g3_slice"]
    x3 = t.coordinates
    zeros = np.zeros_like(x3)
    pts = [zeros, zeros, x3]
    predicted = analytic.predicted_g3_ghz(pts, layout)
    ens = analytic.ensemble_g_ghz(pts, layout)
    inter = analytic.quadrature_g3_ghz(pts, layout)
    cell, cell_se = t.cell_normalized(layout.pixel_count)
    j = int(np.argmax(t.g))
    jc = int(np.argmax(cell))
    width = layout.correlation_width(3)
    return GhzReport(
        coordinates=x3,
        g3=t.g,
        g3_stderr=t.stderr,
        g3_cell=cell,
        g3_cell_stderr=cell_se,
        predicted=predicted,
        predicted_ensemble=ens,
        predicted_interference=inter,
        peak_value=float(t.g[j]),
        peak_position=float(x3[j]),
        cell_peak_value=float(cell[jc]),
        cell_peak_position=float(x3[jc]),
        first_zero=first_zero(x3, t.g, j, width),
        cell_first_zero=first_zero(x3, cell, jc, width),
        rms_residual=_rms(t.g - predicted),
        rms_residual_ensemble=_rms(t.g - ens),
        rms_residual_cell=_rms(cell - predicted),
        pair_flatness={name: flatness_statistic(est, name).value for name in ("g2_12", "g2_13", "g2_23")},
        grid_step=float(x3[1] - x3[0]),
        estimate=est,
    )


# -- W ----------------------------------------------------------------------


@dataclass
class WReport:
    diagonal_coordinates: np.ndarray
    g2_diagonal: np.ndarray
    scan_coordinates: np.ndarray
    g2_scan: np.ndarray
    g2_scan_predicted: np.ndarray
    g2_coincidence: float
    g2_coincidence_stderr: float
    g2_predicted: float
    g2_predicted_discrete: float
    g3_coincidence: float
    g3_coincidence_stderr: float
    g3_predicted: float
    g3_predicted_discrete: float
    rms_residual_g2_scan: float
    surviving_orders: frozenset[int]
    estimate: CorrelationEstimate = field(repr=False)


def w_plan(layout: OpticalLayout, grids: list[DetectorGrid] | None = None) -> CorrelationPlan:
    grids = grids or default_detector_grids(layout)
    targets = [
        Target("g2_23_diagonal", (2, 3), DiagonalScan((2, 3))),
        Target("g2_23_scan", (2, 3), Scan(3, {2: 0.0})),
        Target("g3_coincidence", (1, 2, 3), FixedPoint({1: 0.0, 2: 0.0, 3: 0.0})),
    ]
    return CorrelationPlan(targets, grids, layout.pixel_count)


def run_w_scenario(
    layout: OpticalLayout,
    samples: int,
    seed: int,
    chunk_size: int = 256,
    workers: int = 1,
    grids: list[DetectorGrid] | None = None,
) -> WReport:
    if layout.arm_count != 3:
        raise ScenarioError("the W scenario needs three arms")
    d = layout.distances
    if d[1] != d[2]:
        raise ScenarioError("the W scenario's diagonal scan needs d_2 = d_3")
    plan = w_plan(layout, grids)
    est = _ensemble(layout, MaskMode.identical(), plan, samples, seed, chunk_size, workers)
    diag = est["g2_23_diagonal"]
    scan = est["g2_23_scan"]
    g3 = est["g3_coincidence"]
    centre = int(np.argmin(np.abs(scan.coordinates)))
    predicted_scan = analytic.predicted_g2_w(0.0, scan.coordinates, d[1], d[2], layout, discrete=True)
    zero3 = [0.0, 0.0, 0.0]
    return WReport(
        diagonal_coordinates=diag.coordinates,
        g2_diagonal=diag.g,
        scan_coordinates=scan.coordinates,
        g2_scan=scan.g,
        g2_scan_predicted=predicted_scan,
        g2_coincidence=float(scan.g[centre]),
        g2_coincidence_stderr=float(scan.stderr[centre]),
        g2_predicted=float(analytic.predicted_g2_w(0.0, 0.0, d[1], d[2], layout)),
        g2_predicted_discrete=float(analytic.predicted_g2_w(0.0, 0.0, d[1], d[2], layout, discrete=True)),
        g3_coincidence=float(g3.g[0]),
        g3_coincidence_stderr=float(g3.stderr[0]),
        g3_predicted=float(analytic.predicted_g3_w(zero3, layout)),
        g3_predicted_discrete=float(analytic.predicted_g3_w(zero3, layout, discrete=True)),
        rms_residual_g2_scan=_rms(scan.g - predicted_scan),
        surviving_orders=analytic.classify_structure(MaskMode.identical(), 3).surviving_orders,
        estimate=est,
    )


# -- N-order ------------------------------------------------------------------


@dataclass
class NOrderReport:
    coordinates: np.ndarray
    g_full: np.ndarray
    g_full_stderr: np.ndarray
    g_full_cell: np.ndarray
    g_full_cell_stderr: np.ndarray
    peak_value: float
    peak_position: float
    cell_peak_value: float
    predicted_ensemble_peak: float
    predicted_interference_peak: float
    subset_flatness: dict[tuple[int, ...], float]
    surviving_orders: frozenset[int]
    estimate: CorrelationEstimate = field(repr=False)


def _proper_subsets(n: int) -> list[tuple[int, ...]]:
    arms = range(1, n + 1)
    return [s for order in range(2, n) for s in itertools.combinations(arms, order)]


def norder_plan(layout: OpticalLayout, grids: list[DetectorGrid] | None = None) -> CorrelationPlan:
    """Full-order scan of the last arm plus every proper subset of order >= 2."""
    n = layout.arm_count
    grids = grids or default_detector_grids(layout)
    arms = tuple(range(1, n + 1))
    targets = [Target("g_full", arms, Scan(n, {a: 0.0 for a in arms[:-1]}))]
    for s in _proper_subsets(n):
        name = "g_" + "".join(map(str, s))
        targets.append(Target(name, s, Scan(s[-1], {a: 0.0 for a in s[:-1]})))
    return CorrelationPlan(targets, grids, layout.pixel_count)


def run_norder_scenario(
    layout: OpticalLayout,
    samples: int,
    seed: int,
    chunk_size: int = 256,
    workers: int = 1,
    grids: list[DetectorGrid] | None = None,
) -> NOrderReport:
    n = layout.arm_count
    if not check_balance_condition(layout).satisfied:
        raise ScenarioError("the N-order scenario needs 1/d_1 = sum_n 1/d_n")
    plan = norder_plan(layout, grids)
    subsets = _proper_subsets(n)
    est = _ensemble(layout, MaskMode.ghz(), plan, samples, seed, chunk_size, workers)
    t = est["g_full"]
    cell, cell_se = t.cell_normalized(layout.pixel_count)
    zeros = [0.0] * n
    j = int(np.argmax(t.g))
    return NOrderReport(
        coordinates=t.coordinates,
        g_full=t.g,
        g_full_stderr=t.stderr,
        g_full_cell=cell,
        g_full_cell_stderr=cell_se,
        peak_value=float(t.g[j]),
        peak_position=float(t.coordinates[j]),
        cell_peak_value=float(cell[int(np.argmin(np.abs(t.coordinates)))]),
        predicted_ensemble_peak=float(analytic.ensemble_g_ghz(zeros, layout)),
        predicted_interference_peak=float(analytic.quadrature_g3_ghz(zeros, layout)),
        subset_flatness={s: flatness_statistic(est, "g_" + "".join(map(str, s))).value for s in subsets},
        surviving_orders=analytic.classify_structure(MaskMode.ghz(), n).surviving_orders,
        estimate=est,
    )


# -- ghost imaging ------------------------------------------------------------


@dataclass(frozen=True)
class ObjectSpec:
    """Object on arm 1's detection plane: point transmissions and/or a sampled profile."""

    points: tuple[tuple[float, float], ...] = DEFAULT_OBJECT_POINTS
    profile: tuple[tuple[float, ...], tuple[float, ...]] | None = None  # (positions, transmissions)

    def validate(self, grid: DetectorGrid) -> None:
        lo, hi = grid.positions[0], grid.positions[-1]
        pts = list(self.points)
        if self.profile is not None:
            pts += list(zip(*self.profile))
        if not pts:
            raise ScenarioError("object is empty")
        for x, t in pts:
            if not lo <= x <= hi:
                raise ScenarioError(f"object point {x!r} m lies outside arm 1's grid [{lo:.3g}, {hi:.3g}] m")
            if not 0.0 <= t <= 1.0:
                raise ScenarioError(f"object transmission {t!r} is outside [0, 1]")
        if all(t == 0 for _, t in pts):
            raise ScenarioError("object transmits no light")

    def bucket(self) -> Bucket:
        pos = [x for x, _ in self.points]
        w = [t for _, t in self.points]
        if self.profile is not None:
            px, pt = (np.asarray(v, dtype=float) for v in self.profile)
            if px.size > 1:
                steps = np.diff(px)
                if np.any(steps <= 0) or steps.max() > BUCKET_MAX_STEP * (1 + 1e-9):
                    raise ScenarioError("object profile must be increasing with step <= 2 um")
                dx = np.gradient(px)
            else:
                dx = np.ones(1)
            pos += list(px)
            w += list(pt * dx / dx.mean())
        return Bucket(np.array(pos), np.array(w))

    @property
    def point_positions(self) -> np.ndarray:
        return np.array(sorted(x for x, _ in self.points))


@dataclass(frozen=True)
class Peak:
    position: float
    height: float


def locate_peaks(
    profile: np.ndarray,
    positions: np.ndarray,
    threshold_fraction: float = PEAK_THRESHOLD,
    absolute_threshold: float | None = None,
) -> list[Peak]:
    """Strict interior local maxima above ``threshold_fraction * max`` with parabolic refinement."""
    if not 0.0 < threshold_fraction < 1.0:
        raise ValueError("threshold_fraction must lie in (0, 1)")
    p = np.asarray(profile, dtype=float)
    x = np.asarray(positions, dtype=float)
    if p.size < 3 or np.ptp(p) == 0.0:
        return []
    thr = threshold_fraction * p.max() if absolute_threshold is None else absolute_threshold
    peaks = []
    for i in range(1, p.size - 1):
        if p[i] > p[i - 1] and p[i] > p[i + 1] and p[i] > thr:
            curv = p[i - 1] - 2.0 * p[i] + p[i + 1]
            delta = 0.5 * (p[i - 1] - p[i + 1]) / curv if curv != 0 else 0.0
            step = 0.5 * (x[i + 1] - x[i - 1])
            peaks.append(Peak(float(x[i] + delta * step), float(p[i] - 0.25 * (p[i - 1] - p[i + 1]) * delta)))
    return peaks


def estimate_magnification(object_positions: np.ndarray, peaks: list[Peak]) -> float:
    """Least-squares slope through the origin; tries both orientations of the image."""
    p = np.sort(np.asarray(object_positions, dtype=float))
    q = np.array(sorted(pk.position for pk in peaks))
    if p.size == 0 or p.size != q.size:
        return float("nan")
    best = None
    for order in (p, p[::-1]):
        m = float(np.dot(order, q) / np.dot(order, order))
        resid = float(np.sum((q - m * order) ** 2))
        if best is None or resid < best[1]:
            best = (m, resid)
    return best[0]


@dataclass
class GhostImageResult:
    mode: str
    scan_positions: np.ndarray
    profile: np.ndarray  # 1 + normalized cumulant (or raw g)
    stderr: np.ndarray
    peaks: list[Peak]
    contrast: float
    magnification: float
    threshold: float  # absolute peak threshold on (profile - background)

    @property
    def peak_positions(self) -> np.ndarray:
        return np.array([p.position for p in self.peaks])


GHOST_TARGETS = {
    "FixedX2ScanX3": Target("third_fixed_x2", (1, 2, 3), BucketScan((3,), {2: 0.0})),
    "DiagonalX2EqX3": Target("third_diagonal", (1, 2, 3), BucketScan((2, 3))),
    "SecondOrderControl": Target("second_order", (1, 2), BucketScan((2,))),
}


def ghost_plan(layout: OpticalLayout, obj: ObjectSpec, grids: list[DetectorGrid] | None = None) -> CorrelationPlan:
    grids = grids or default_detector_grids(layout)
    obj.validate(grids[0])
    return CorrelationPlan(list(GHOST_TARGETS.values()), grids, layout.pixel_count, bucket=obj.bucket())


def _contrast(profile: np.ndarray) -> tuple[float, float]:
    background = float(np.median(profile))
    return (float(profile.max()) - background) / background, background


def reconstruct(
    est: CorrelationEstimate,
    obj: ObjectSpec,
    mode: str,
    layout: OpticalLayout,
    estimator: str = "cumulant",
    absolute_threshold: float | None = None,
) -> GhostImageResult:
    if mode not in GHOST_TARGETS:
        raise ScenarioError(f"unknown ghost-imaging mode {mode!r}; expected one of {GHOST_MODES}")
    t = est[GHOST_TARGETS[mode].name]
    if estimator == "cumulant":
        profile, se = 1.0 + t.cumulant, t.cumulant_stderr
    elif estimator == "raw":
        profile, se = t.g, t.stderr
    else:
        raise ValueError(f"unknown estimator {estimator!r}")
    contrast, background = _contrast(profile)
    excess = profile - background
    thr = PEAK_THRESHOLD * float(excess.max()) if absolute_threshold is None else absolute_threshold
    peaks = locate_peaks(excess, t.coordinates, PEAK_THRESHOLD, absolute_threshold=thr)
    return GhostImageResult(
        mode=mode,
        scan_positions=t.coordinates,
        profile=profile,
        stderr=se,
        peaks=peaks,
        contrast=contrast,
        magnification=estimate_magnification(obj.point_positions, peaks) if mode != "SecondOrderControl" else float("nan"),
        threshold=thr,
    )


def ghost_imaging_ensemble(
    layout: OpticalLayout,
    obj: ObjectSpec,
    samples: int,
    seed: int,
    chunk_size: int = 256,
    workers: int = 1,
    grids: list[DetectorGrid] | None = None,
) -> CorrelationEstimate:
    if layout.arm_count != 3:
        raise ScenarioError("ghost imaging needs three arms")
    if not check_balance_condition(layout).satisfied:
        raise ScenarioError("ghost imaging needs distances satisfying the balance condition")
    plan = ghost_plan(layout, obj, grids)
    return _ensemble(layout, MaskMode.ghz(), plan, samples, seed, chunk_size, workers)


def run_ghost_imaging(
    layout: OpticalLayout,
    obj: ObjectSpec,
    mode: str,
    samples: int,
    seed: int,
    chunk_size: int = 256,
    workers: int = 1,
    estimator: str = "cumulant",
) -> GhostImageResult:
    est = ghost_imaging_ensemble(layout, obj, samples, seed, chunk_size, workers)
    return reconstruct(est, obj, mode, layout, estimator)


def ghost_imaging_all_modes(
    layout: OpticalLayout,
    obj: ObjectSpec,
    samples: int,
    seed: int,
    chunk_size: int = 256,
    workers: int = 1,
    estimator: str = "cumulant",
) -> dict[str, GhostImageResult]:
    """All three measurement modes from one ensemble; the control uses the fixed-x2 run's threshold."""
    est = ghost_imaging_ensemble(layout, obj, samples, seed, chunk_size, workers)
    out = {m: reconstruct(est, obj, m, layout, estimator) for m in GHOST_MODES[:2]}
    out["SecondOrderControl"] = reconstruct(
        est, obj, "SecondOrderControl", layout, estimator, absolute_threshold=out["FixedX2ScanX3"].threshold
    )
    return out
