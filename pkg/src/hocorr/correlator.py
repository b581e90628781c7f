"""Streaming moment accumulation and normalized correlation estimates.

Only planned slices are accumulated. Each target keeps, per slice point,
the sums of the products over every subset of its channels (so pairwise
and lower-order quantities come for free), plus the sum of the squared
full product.

Reduction order is canonical: samples are summed per chunk, chunks are
folded left-to-right into batches, and batches are folded left-to-right
into totals. Accumulators covering contiguous chunk ranges therefore merge
bit-identically to a sequential run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

from hocorr.geometry import DetectorGrid
from hocorr.optics import IntensitySample

BUCKET = 0  # channel key of the single-pixel bucket detector
DENOMINATOR_FLOOR = 1e-12
MIN_BATCHES = 20
DEFAULT_CHUNK_SIZE = 256


class PlanError(ValueError):
    """Raised for inconsistent correlation plans or plan mismatches."""


class MergeError(ValueError):
    """Raised when accumulators cannot be merged in canonical order."""


class DegenerateDenominatorError(ArithmeticError):
    """Raised when a mean intensity is too small to normalize by."""


def _fixed(fixed) -> tuple[tuple[int, float], ...]:
    items = fixed.items() if isinstance(fixed, Mapping) else fixed
    return tuple(sorted((int(a), float(x)) for a, x in items))


@dataclass(frozen=True)
class FixedPoint:
    positions: tuple[tuple[int, float], ...]

    def __init__(self, positions):
        object.__setattr__(self, "positions", _fixed(positions))


@dataclass(frozen=True)
class Scan:
    """Scan one arm over its grid; other arms sit at fixed positions (default: grid center)."""

    scan_arm: int
    fixed: tuple[tuple[int, float], ...] = ()

    def __init__(self, scan_arm: int, fixed=()):
        object.__setattr__(self, "scan_arm", int(scan_arm))
        object.__setattr__(self, "fixed", _fixed(fixed))


@dataclass(frozen=True)
class DiagonalScan:
    """Two arms locked at equal positions and scanned together."""

    locked: tuple[int, int]
    fixed: tuple[tuple[int, float], ...] = ()

    def __init__(self, locked, fixed=()):
        object.__setattr__(self, "locked", tuple(int(a) for a in locked))
        object.__setattr__(self, "fixed", _fixed(fixed))


@dataclass(frozen=True)
class BucketScan:
    """Arm 1 replaced by the bucket value; one arm scanned, or two locked and scanned together."""

    scan_arms: tuple[int, ...]
    fixed: tuple[tuple[int, float], ...] = ()

    def __init__(self, scan_arms, fixed=()):
        object.__setattr__(self, "scan_arms", tuple(int(a) for a in scan_arms))
        object.__setattr__(self, "fixed", _fixed(fixed))


SliceSpec = FixedPoint | Scan | DiagonalScan | BucketScan


@dataclass(frozen=True)
class Target:
    name: str
    arms: tuple[int, ...]
    slice: SliceSpec

    def __init__(self, name: str, arms: Sequence[int], slice: SliceSpec):
        object.__setattr__(self, "name", str(name))
        object.__setattr__(self, "arms", tuple(int(a) for a in arms))
        object.__setattr__(self, "slice", slice)

    @property
    def order(self) -> int:
        return len(self.arms)


@dataclass(frozen=True)
class Bucket:
    """Single-pixel detector behind the object on arm 1: B = sum_i weight_i * I_1(x_i)."""

    positions: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "positions", np.asarray(self.positions, dtype=float).ravel())
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float).ravel())
        if self.positions.size == 0:
            raise PlanError("bucket has no object points")
        if self.positions.shape != self.weights.shape:
            raise PlanError("bucket positions and weights differ in length")


@dataclass
class ResolvedTarget:
    target: Target
    channels: tuple[int, ...]  # arm index per channel, BUCKET for the bucket
    indices: tuple[np.ndarray, ...]  # per channel: columns into the compact per-arm block
    coordinates: np.ndarray  # scan coordinate per slice point (m)
    coordinate_label: str

    def __post_init__(self):
        self.constant = tuple(bool(np.all(i == i[0])) for i in self.indices)
        self.contiguous = tuple(bool(np.array_equal(i, i[0] + np.arange(len(i)))) for i in self.indices)

    @property
    def name(self) -> str:
        return self.target.name

    @property
    def order(self) -> int:
        return len(self.channels)

    @property
    def size(self) -> int:
        return len(self.coordinates)


class CorrelationPlan:
    """Declared correlation targets resolved against per-arm detector grids."""

    def __init__(
        self,
        targets: Sequence[Target],
        grids: Sequence[DetectorGrid],
        pixel_count: int,
        bucket: Bucket | None = None,
    ):
        self.targets = tuple(targets)
        self.grids = tuple(grids)
        self.pixel_count = int(pixel_count)
        self.bucket = bucket
        if not self.targets:
            raise PlanError("plan has no targets")
        names = [t.name for t in self.targets]
        if len(set(names)) != len(names):
            raise PlanError(f"duplicate target names in {names}")
        self.arm_count = len(self.grids)
        grid_idx = [self._grid_indices(t) for t in self.targets]
        needed: dict[int, set[int]] = {}
        for per_channel, _ in grid_idx:
            for arm, idx in per_channel:
                if arm != BUCKET:
                    needed.setdefault(arm, set()).update(int(i) for i in idx)
        self.arm_columns = {arm: np.array(sorted(ix), dtype=np.int64) for arm, ix in sorted(needed.items())}
        self.arm_positions = {arm: self.grids[arm - 1].positions[cols] for arm, cols in self.arm_columns.items()}
        lookup = {arm: {int(g): c for c, g in enumerate(cols)} for arm, cols in self.arm_columns.items()}
        resolved = []
        for t, (per_channel, (coords, label)) in zip(self.targets, grid_idx):
            channels, indices = [], []
            for arm, idx in per_channel:
                channels.append(arm)
                if arm == BUCKET:
                    indices.append(np.zeros(len(coords), dtype=np.int64))
                else:
                    indices.append(np.array([lookup[arm][int(i)] for i in idx], dtype=np.int64))
            resolved.append(ResolvedTarget(t, tuple(channels), tuple(indices), coords, label))
        self.resolved = tuple(resolved)

    def __getitem__(self, name: str) -> ResolvedTarget:
        for r in self.resolved:
            if r.name == name:
                return r
        raise KeyError(name)

    def _grid(self, arm: int, target: Target) -> DetectorGrid:
        if not 1 <= arm <= self.arm_count:
            raise PlanError(f"target {target.name!r} references unknown arm {arm}")
        return self.grids[arm - 1]

    def _grid_indices(self, t: Target):
        arms = t.arms
        if len(arms) < 2:
            raise PlanError(f"target {t.name!r} must correlate at least two arms")
        if len(set(arms)) != len(arms):
            raise PlanError(f"target {t.name!r} repeats an arm")
        if len(arms) > self.arm_count:
            raise PlanError(f"target {t.name!r} has order above the arm count")
        for a in arms:
            self._grid(a, t)
        sl = t.slice
        fixed = dict(getattr(sl, "positions", None) or getattr(sl, "fixed", ()))
        for a in fixed:
            if a not in arms:
                raise PlanError(f"target {t.name!r} fixes arm {a} which it does not correlate")

        def fixed_index(a):
            g = self._grid(a, t)
            x = fixed.get(a, g.center)
            try:
                return g.index_of(x)
            except ValueError as exc:
                raise PlanError(f"target {t.name!r}: {exc}") from None

        if isinstance(sl, FixedPoint):
            scanned, bucket = (), False
        elif isinstance(sl, Scan):
            scanned, bucket = (sl.scan_arm,), False
        elif isinstance(sl, DiagonalScan):
            scanned, bucket = sl.locked, False
            if len(scanned) != 2:
                raise PlanError(f"target {t.name!r}: a diagonal scan locks exactly two arms")
        elif isinstance(sl, BucketScan):
            scanned, bucket = sl.scan_arms, True
            if not 1 <= len(scanned) <= 2:
                raise PlanError(f"target {t.name!r}: a bucket scan has one or two scanned arms")
            if 1 not in arms or 1 in scanned:
                raise PlanError(f"target {t.name!r}: a bucket scan replaces arm 1, which must not be scanned")
            if self.bucket is None:
                raise PlanError(f"target {t.name!r} needs a bucket (object) definition")
        else:
            raise PlanError(f"target {t.name!r} has unknown slice type {type(sl).__name__}")
        for a in scanned:
            if a not in arms:
                raise PlanError(f"target {t.name!r} scans arm {a} which it does not correlate")
            if a in fixed:
                raise PlanError(f"target {t.name!r} both fixes and scans arm {a}")

        if scanned:
            lead = self._grid(scanned[0], t)
            coords = lead.positions
            label = "".join(f"x{a}" for a in scanned) + "_m" if len(scanned) == 1 else f"x{scanned[0]}_m"
            scan_idx = {scanned[0]: np.arange(len(coords))}
            for a in scanned[1:]:
                g = self._grid(a, t)
                try:
                    scan_idx[a] = np.array([g.index_of(x) for x in coords])
                except ValueError as exc:
                    raise PlanError(f"target {t.name!r}: locked arms need coincident grids ({exc})") from None
        else:
            coords = np.array([self._grid(arms[-1], t).positions[fixed_index(arms[-1])]])
            label = f"x{arms[-1]}_m"
            scan_idx = {}
        n = len(coords)
        per_channel = []
        for a in arms:
            if bucket and a == 1:
                per_channel.append((BUCKET, None))
            elif a in scan_idx:
                per_channel.append((a, scan_idx[a]))
            else:
                per_channel.append((a, np.full(n, fixed_index(a))))
        return per_channel, (np.array(coords, dtype=float), label)

    def gather(self, block: Mapping[int, np.ndarray]) -> list[list[np.ndarray]]:
        """Per target, per channel arrays of shape (K, P_t) from a compact intensity block.

        ``block`` maps arm -> (K, len(arm_columns[arm])) and BUCKET -> (K,).
        """
        out = []
        for r in self.resolved:
            values = []
            for ch, idx in zip(r.channels, r.indices):
                if ch == BUCKET:
                    b = np.asarray(block[BUCKET], dtype=float).reshape(-1, 1)
                    values.append(np.broadcast_to(b, (b.shape[0], r.size)))
                elif r.constant[len(values)]:
                    col = block[ch][:, idx[0] : idx[0] + 1]
                    values.append(np.broadcast_to(col, (col.shape[0], r.size)))
                elif r.contiguous[len(values)]:
                    values.append(block[ch][:, idx[0] : idx[0] + r.size])
                else:
                    values.append(block[ch][:, idx])
            out.append(values)
        return out

    def compact_from_sample(self, sample: IntensitySample) -> dict[int, np.ndarray]:
        """Compact one-row block from a full-grid intensity sample."""
        block = {}
        for arm, cols in self.arm_columns.items():
            if arm not in sample.intensities:
                raise PlanError(f"intensity sample lacks arm {arm}")
            vals = np.asarray(sample.intensities[arm], dtype=float)
            if vals.shape != (len(self.grids[arm - 1]),):
                raise PlanError(f"intensity sample for arm {arm} does not match its grid")
            block[arm] = vals[cols][None, :]
        if any(BUCKET in r.channels for r in self.resolved):
            if sample.bucket is None:
                raise PlanError("intensity sample lacks the bucket value")
            block[BUCKET] = np.array([float(sample.bucket)])
        return block

    def signature(self) -> tuple:
        """Hashable description used to check plan identity on merge and resume."""
        sig = [self.pixel_count]
        for g in self.grids:
            sig.append((g.arm_index, g.center, g.span, g.step))
        for t in self.targets:
            sig.append((t.name, t.arms, repr(t.slice)))
        if self.bucket is not None:
            sig.append((tuple(self.bucket.positions), tuple(self.bucket.weights)))
        return tuple(sig)

    def sums_shapes(self) -> list[tuple[int, int]]:
        return [((1 << r.order) + 1, r.size) for r in self.resolved]


def chunk_sums(values: list[list[np.ndarray]]) -> list[np.ndarray]:
    """Subset-product sums for one chunk.

    Row 0 holds the sample count, row ``mask`` the sum of the product over
    the channels in ``mask``, and the last row the sum of the squared full
    product.
    """
    out = []
    for channels in values:
        n = len(channels)
        k, p = channels[0].shape
        rows = np.empty(((1 << n) + 1, p))
        rows[0] = k
        prods: list[np.ndarray | None] = [None] * (1 << n)
        for mask in range(1, 1 << n):
            low = (mask & -mask).bit_length() - 1
            rest = mask & (mask - 1)
            prods[mask] = channels[low] if rest == 0 else prods[rest] * channels[low]
            rows[mask] = prods[mask].sum(axis=0)
        full = prods[(1 << n) - 1]
        rows[-1] = (full * full).sum(axis=0)
        out.append(rows)
    return out


def _fold(acc: list[np.ndarray] | None, sums: list[np.ndarray]) -> list[np.ndarray]:
    if acc is None:
        return [s.copy() for s in sums]
    return [a + s for a, s in zip(acc, sums)]


@dataclass
class _Batch:
    index: int
    sums: list[np.ndarray]


class MomentAccumulator:
    """Streaming sums for a :class:`CorrelationPlan` over a contiguous chunk range.

    ``batch_chunks`` chunks form one batch for batch-means standard errors;
    it must be identical for accumulators that are merged.
    """

    def __init__(
        self,
        plan: CorrelationPlan,
        chunk_size: int = DEFAULT_CHUNK_SIZE,
        batch_chunks: int = 1,
        chunk_start: int = 0,
    ):
        if chunk_size < 1 or batch_chunks < 1 or chunk_start < 0:
            raise ValueError("chunk_size and batch_chunks must be positive, chunk_start non-negative")
        self.plan = plan
        self.chunk_size = int(chunk_size)
        self.batch_chunks = int(batch_chunks)
        self.chunk_start = int(chunk_start)
        self.chunk_end = int(chunk_start)
        self.sample_count = 0
        self.head: list[list[np.ndarray]] = []  # unfolded chunks of a batch entered mid-way
        self.batches: list[_Batch] = []
        self._pending: list[list[list[np.ndarray]]] = []
        self._last_index: int | None = None

    # -- construction -----------------------------------------------------

    def _batch_of(self, chunk: int) -> int:
        return chunk // self.batch_chunks

    def add_chunk(self, chunk_index: int, sums: list[np.ndarray]) -> None:
        """Fold one chunk's sums (from :func:`chunk_sums`) into the accumulator."""
        if self._pending:
            raise MergeError("cannot add a chunk while a partial chunk is pending; call flush()")
        if chunk_index != self.chunk_end:
            raise MergeError(f"expected chunk {self.chunk_end}, got {chunk_index}")
        shapes = self.plan.sums_shapes()
        if len(sums) != len(shapes) or any(s.shape != sh for s, sh in zip(sums, shapes)):
            raise PlanError("chunk sums do not match the plan")
        b = self._batch_of(chunk_index)
        head_batch = self._batch_of(self.chunk_start)
        unaligned = self.chunk_start % self.batch_chunks != 0
        if unaligned and b == head_batch:
            self.head.append([s.copy() for s in sums])
        elif self.batches and self.batches[-1].index == b:
            self.batches[-1].sums = _fold(self.batches[-1].sums, sums)
        else:
            self.batches.append(_Batch(b, _fold(None, sums)))
        self.chunk_end += 1
        self.sample_count += int(sums[0][0, 0]) if sums else 0

    def accumulate(self, sample: IntensitySample) -> "MomentAccumulator":
        """Add one intensity sample; a chunk is committed once ``chunk_size`` samples are buffered."""
        if self._last_index is not None and sample.sample_index <= self._last_index:
            raise ValueError("sample indices must strictly increase")
        block = self.plan.compact_from_sample(sample)
        self._pending.append(self.plan.gather(block))
        self._last_index = sample.sample_index
        if len(self._pending) == self.chunk_size:
            self._commit_pending()
        return self

    def accumulate_block(self, block: Mapping[int, np.ndarray]) -> "MomentAccumulator":
        """Add a whole chunk given as a compact intensity block."""
        self.add_chunk(self.chunk_end, chunk_sums(self.plan.gather(block)))
        return self

    def _commit_pending(self) -> None:
        pending, self._pending = self._pending, []
        stacked = [
            [np.concatenate([p[t][c] for p in pending], axis=0) for c in range(len(pending[0][t]))]
            for t in range(len(pending[0]))
        ]
        self.add_chunk(self.chunk_end, chunk_sums(stacked))

    def flush(self) -> "MomentAccumulator":
        """Commit a partially filled chunk (the tail of a run)."""
        if self._pending:
            self._commit_pending()
        return self

    @property
    def pending_samples(self) -> int:
        return len(self._pending)

    # -- reduction ----------------------------------------------------------

    def batch_sums(self) -> list[list[np.ndarray]]:
        """Folded sums per batch in chunk order (a leading partial batch first)."""
        out = []
        if self.head:
            acc = None
            for chunk in self.head:
                acc = _fold(acc, chunk)
            out.append(acc)
        out.extend(b.sums for b in self.batches)
        return out

    def totals(self) -> list[np.ndarray]:
        acc = None
        for sums in self.batch_sums():
            acc = _fold(acc, sums)
        if acc is None:
            return [np.zeros(sh) for sh in self.plan.sums_shapes()]
        return acc

    def copy(self) -> "MomentAccumulator":
        new = MomentAccumulator(self.plan, self.chunk_size, self.batch_chunks, self.chunk_start)
        new.chunk_end = self.chunk_end
        new.sample_count = self.sample_count
        new.head = [[s.copy() for s in c] for c in self.head]
        new.batches = [_Batch(b.index, [s.copy() for s in b.sums]) for b in self.batches]
        return new


def merge(a: MomentAccumulator, b: MomentAccumulator) -> MomentAccumulator:
    """Combine ``a`` with ``b``, whose chunk range must immediately follow ``a``'s."""
    if a.plan is not b.plan and a.plan.signature() != b.plan.signature():
        raise MergeError("accumulators were built for different plans")
    if (a.chunk_size, a.batch_chunks) != (b.chunk_size, b.batch_chunks):
        raise MergeError("accumulators differ in chunk_size or batch_chunks")
    if a.pending_samples or b.pending_samples:
        raise MergeError("flush accumulators before merging")
    if b.chunk_end == b.chunk_start:
        return a.copy()
    if a.chunk_end == a.chunk_start:
        out = b.copy()
        out.plan = a.plan
        return out
    if b.chunk_start != a.chunk_end:
        raise MergeError(
            f"chunk ranges [{a.chunk_start}, {a.chunk_end}) and [{b.chunk_start}, {b.chunk_end}) "
            "are not contiguous and ascending"
        )
    out = a.copy()
    for chunk in b.head:
        out.add_chunk(out.chunk_end, chunk)
    for batch in b.batches:
        if out.batches and out.batches[-1].index == batch.index:
            raise MergeError("batch split across accumulators without its leading chunks")
        if out.head and out._batch_of(out.chunk_start) == batch.index:
            raise MergeError("batch split across accumulators without its leading chunks")
        out.batches.append(_Batch(batch.index, [s.copy() for s in batch.sums]))
    out.chunk_end = b.chunk_end
    out.sample_count = a.sample_count + b.sample_count
    return out


# -- estimates -----------------------------------------------------------------


def set_partitions(items: Sequence[int]) -> Iterator[list[list[int]]]:
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        yield [[first]] + part
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1 :]


def _moments(sums: np.ndarray) -> np.ndarray:
    count = sums[0]
    return sums[:-1] / count


def _check_means(means: np.ndarray, floor: float) -> None:
    if np.any(~(means >= floor)):
        raise DegenerateDenominatorError(f"mean intensity below the floor {floor:.3g}")


def _g_and_cumulant(moments: np.ndarray, n: int, floor: float, members: Sequence[int] | None = None):
    members = list(range(n)) if members is None else list(members)
    singles = np.array([moments[1 << i] for i in members])
    _check_means(singles, floor)
    denom = np.prod(singles, axis=0)
    full_mask = sum(1 << i for i in members)
    g = moments[full_mask] / denom
    kappa = np.zeros_like(g)
    for part in set_partitions(members):
        blocks = len(part)
        coef = (-1) ** (blocks - 1) * math.factorial(blocks - 1)
        term = np.ones_like(g)
        for block in part:
            term = term * moments[sum(1 << i for i in block)]
        kappa = kappa + coef * term
    return g, kappa / denom


@dataclass
class TargetEstimate:
    name: str
    arms: tuple[int, ...]
    channels: tuple[int, ...]
    coordinates: np.ndarray
    coordinate_label: str
    g: np.ndarray
    stderr: np.ndarray
    cumulant: np.ndarray
    cumulant_stderr: np.ndarray
    means: np.ndarray  # (n, P)
    mean_product: np.ndarray
    moments: np.ndarray = field(repr=False)  # (2^n, P) subset means
    sample_count: int = 0

    @property
    def order(self) -> int:
        return len(self.arms)

    def subset_g(self, arms: Sequence[int]) -> np.ndarray:
        """Normalized correlation of a subset of this target's arms at the same slice points."""
        members = [self.arms.index(a) for a in arms]
        mask = sum(1 << i for i in members)
        denom = np.prod([self.moments[1 << i] for i in members], axis=0)
        return self.moments[mask] / denom

    def cell_normalized(self, pixel_count: int) -> tuple[np.ndarray, np.ndarray]:
        """Connected correlation rescaled by M^(n-2), with its standard error.

        For a sum-constrained (GHZ-type) ensemble only M of the M^2 source-pixel
        pairings of the n-fold product are phase-locked, so the raw connected
        correlation carries a weight M^-(n-2). Rescaling restores unit weight and
        gives ``1 + |mu|^2 - 1/M``, the discrete two-amplitude interference sum.
        """
        scale = float(pixel_count) ** (self.order - 2)
        return 1.0 + scale * self.cumulant, scale * self.cumulant_stderr


@dataclass
class CorrelationEstimate:
    sample_count: int
    batch_count: int
    targets: dict[str, TargetEstimate]

    def __getitem__(self, name: str) -> TargetEstimate:
        return self.targets[name]


def _batch_se(estimates: list[np.ndarray], counts: list[float], overall: np.ndarray) -> np.ndarray:
    b = len(estimates)
    total = float(sum(counts))
    acc = np.zeros_like(overall)
    for est, n in zip(estimates, counts):
        acc = acc + (n / total) ** 2 * (est - overall) ** 2
    return np.sqrt(acc * b / (b - 1))


def normalized_g(acc: MomentAccumulator) -> CorrelationEstimate:
    """Normalized correlations g = <prod I> / prod <I> with batch-means standard errors.

    Standard errors use batch means when at least ``MIN_BATCHES`` batches
    exist, otherwise the per-sample variance of the full product (which
    neglects the noise of the normalizing means).
    """
    if acc.pending_samples:
        acc.flush()
    if acc.sample_count < 2:
        raise ValueError("at least two samples are needed for an estimate")
    floor = DENOMINATOR_FLOOR * acc.plan.pixel_count
    totals = acc.totals()
    batches = acc.batch_sums()
    use_batches = len(batches) >= MIN_BATCHES
    out = {}
    for t, r in enumerate(acc.plan.resolved):
        n = r.order
        mom = _moments(totals[t])
        g, kappa = _g_and_cumulant(mom, n, floor)
        singles = np.array([mom[1 << i] for i in range(n)])
        if use_batches:
            gs, ks, counts = [], [], []
            for bs in batches:
                bg, bk = _g_and_cumulant(_moments(bs[t]), n, floor)
                gs.append(bg)
                ks.append(bk)
                counts.append(bs[t][0, 0])
            se = _batch_se(gs, counts, g)
            kse = _batch_se(ks, counts, kappa)
        else:
            k = totals[t][0]
            var = np.maximum(totals[t][-1] / k - mom[(1 << n) - 1] ** 2, 0.0)
            se = np.sqrt(var / k) / np.prod(singles, axis=0)
            kse = se.copy()
        out[r.name] = TargetEstimate(
            name=r.name,
            arms=r.target.arms,
            channels=r.channels,
            coordinates=r.coordinates,
            coordinate_label=r.coordinate_label,
            g=g,
            stderr=se,
            cumulant=kappa,
            cumulant_stderr=kse,
            means=singles,
            mean_product=mom[(1 << n) - 1],
            moments=mom,
            sample_count=acc.sample_count,
        )
    return CorrelationEstimate(acc.sample_count, len(batches), out)


def cumulant3(acc: MomentAccumulator) -> dict[str, np.ndarray]:
    """Normalized third joint cumulant <dI1 dI2 dI3> / prod <I> for every order-3 target."""
    est = normalized_g(acc)
    out = {name: t.cumulant for name, t in est.targets.items() if t.order == 3}
    if not out:
        raise PlanError("plan has no third-order targets")
    return out


@dataclass(frozen=True)
class Flatness:
    value: float
    position: float


def flatness_statistic(estimate: CorrelationEstimate, target: str, values: np.ndarray | None = None) -> Flatness:
    """max |g - 1| over a target's slice points and where it occurs."""
    t = estimate[target]
    g = t.g if values is None else values
    dev = np.abs(g - 1.0)
    j = int(np.argmax(dev))
    return Flatness(value=float(dev[j]), position=float(t.coordinates[j]))
