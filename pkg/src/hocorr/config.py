"""Run configuration: YAML documents with explicit length units.

Every length in a document carries a unit suffix (``532 nm``, ``2 mm``,
``0.2 m``); bare numbers are rejected so unit slips cannot pass silently.
Serialized configs write lengths as ``<repr> m`` so a parse/serialize round
trip is exact.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any

import yaml

from hocorr.correlator import (
    DEFAULT_CHUNK_SIZE,
    BucketScan,
    CorrelationPlan,
    DiagonalScan,
    FixedPoint,
    PlanError,
    Scan,
    Target,
)
from hocorr.experiments import ObjectSpec, ScenarioError, ghost_plan, ghz_plan, norder_plan, w_plan
from hocorr.geometry import DetectorGrid, InvalidLayoutError, OpticalLayout, default_detector_grids
from hocorr.masks import MaskConfigError, MaskMode

UNITS = {"nm": 1e-9, "um": 1e-6, "mm": 1e-3, "cm": 1e-2, "m": 1.0}
_LENGTH = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(nm|um|mm|cm|m)\s*$")
SEED_MAX = 2**64 - 1

# fields that determine the numbers a run produces (workers and output do not)
RESULT_KEYS = ("layout", "mode", "samples", "seed", "chunk_size", "alphabet", "grids", "plan", "object")


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending key."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class RunConfig:
    layout: OpticalLayout
    mode: MaskMode
    samples: int
    seed: int
    chunk_size: int = DEFAULT_CHUNK_SIZE
    grids: tuple[DetectorGrid, ...] = ()
    targets: tuple[Target, ...] = ()
    object: ObjectSpec | None = None
    output: str = "out"
    workers: int = 1
    alphabet: int | None = None
    plan: CorrelationPlan = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.samples < 1:
            raise ConfigError("samples", f"must be at least 1, got {self.samples}")
        if self.chunk_size < 1:
            raise ConfigError("chunk_size", f"must be at least 1, got {self.chunk_size}")
        if self.workers < 1:
            raise ConfigError("workers", f"must be at least 1, got {self.workers}")
        if not 0 <= self.seed <= SEED_MAX:
            raise ConfigError("seed", "must be an unsigned 64-bit integer")
        grids = self.grids or tuple(default_detector_grids(self.layout))
        if len(grids) != self.layout.arm_count:
            raise ConfigError("grids", f"expected {self.layout.arm_count} grids, got {len(grids)}")
        object.__setattr__(self, "grids", tuple(grids))
        bucket = None
        if self.object is not None:
            try:
                self.object.validate(self.grids[0])
                bucket = self.object.bucket()
            except ScenarioError as exc:
                raise ConfigError("object", str(exc)) from None
        if not self.targets:
            object.__setattr__(self, "targets", default_targets(self))
        try:
            plan = CorrelationPlan(self.targets, self.grids, self.layout.pixel_count, bucket=bucket)
        except PlanError as exc:
            raise ConfigError("plan", str(exc)) from None
        object.__setattr__(self, "plan", plan)

    def with_overrides(self, **changes) -> "RunConfig":
        doc = to_document(self)
        doc.update(to_document_fields(changes))
        return from_document(doc)


def default_targets(cfg: RunConfig) -> tuple[Target, ...]:
    lay, grids = cfg.layout, list(cfg.grids)
    if cfg.object is not None:
        plan = ghost_plan(lay, cfg.object, grids)
    elif cfg.mode.kind == "ghz" and lay.arm_count == 3:
        plan = ghz_plan(lay, grids)
    elif cfg.mode.kind == "identical" and lay.arm_count == 3:
        plan = w_plan(lay, grids)
    else:
        plan = norder_plan(lay, grids)
    return plan.targets


# -- parsing --------------------------------------------------------------------


def parse_length(value: Any, path: str) -> float:
    if isinstance(value, bool) or isinstance(value, (int, float)):
        raise ConfigError(path, f"length {value!r} has no unit; add one of nm, um, mm, cm, m")
    if not isinstance(value, str):
        raise ConfigError(path, f"expected a length string, got {type(value).__name__}")
    m = _LENGTH.match(value)
    if not m:
        raise ConfigError(path, f"cannot parse length {value!r}; expected '<number> <nm|um|mm|cm|m>'")
    number, unit = m.groups()
    return float(number) if unit == "m" else float(number) * UNITS[unit]


def _int(value: Any, path: str, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(path, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(path, f"must be at least {minimum}, got {value}")
    return value


def _mapping(value: Any, path: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(path, f"expected a mapping, got {type(value).__name__}")
    return value


def _require(doc: dict, key: str, path: str):
    if key not in doc:
        raise ConfigError(f"{path}{key}", "missing required key")
    return doc[key]


def _check_keys(doc: dict, allowed: set[str], path: str) -> None:
    for k in doc:
        if k not in allowed:
            raise ConfigError(f"{path}{k}", f"unknown key; expected one of {sorted(allowed)}")


def _parse_layout(doc: Any) -> OpticalLayout:
    doc = _mapping(doc, "layout")
    _check_keys(doc, {"wavelength", "aperture", "distances", "pixel_count", "arm_count"}, "layout.")
    wavelength = parse_length(_require(doc, "wavelength", "layout."), "layout.wavelength")
    aperture = parse_length(_require(doc, "aperture", "layout."), "layout.aperture")
    raw = _require(doc, "distances", "layout.")
    if not isinstance(raw, list):
        raise ConfigError("layout.distances", "expected a list of lengths")
    distances = tuple(parse_length(v, f"layout.distances[{i}]") for i, v in enumerate(raw))
    pixels = _int(doc.get("pixel_count", 64), "layout.pixel_count", 1)
    arms = doc.get("arm_count")
    if arms is not None:
        arms = _int(arms, "layout.arm_count", 2)
        if arms != len(distances):
            raise ConfigError("layout.distances", f"has {len(distances)} entries but arm_count is {arms}")
    try:
        return OpticalLayout(wavelength, aperture, distances, pixel_count=pixels, arm_count=arms)
    except InvalidLayoutError as exc:
        msg = str(exc)
        key = next((k for k in ("wavelength", "aperture", "pixel_count", "arm_count") if msg.startswith(k)), "distances")
        raise ConfigError(f"layout.{key}", msg) from None


def _parse_mode(doc: Any, arm_count: int) -> MaskMode:
    if isinstance(doc, str):
        doc = {"kind": doc}
    doc = _mapping(doc, "mode")
    _check_keys(doc, {"kind", "constrained_arm", "coefficients"}, "mode.")
    kind = _require(doc, "kind", "mode.")
    try:
        if kind == "ghz":
            mode = MaskMode.ghz(_int(doc.get("constrained_arm", 1), "mode.constrained_arm", 1))
        elif kind == "custom":
            rows = _require(doc, "coefficients", "mode.")
            if not isinstance(rows, list) or not all(isinstance(r, list) for r in rows):
                raise ConfigError("mode.coefficients", "expected a list of integer rows, one per arm")
            mode = MaskMode.custom(rows)
        else:
            mode = MaskMode(str(kind))
        mode.mixing_matrix(arm_count)
    except MaskConfigError as exc:
        raise ConfigError("mode", str(exc)) from None
    return mode


def _parse_grids(doc: Any, layout: OpticalLayout) -> tuple[DetectorGrid, ...]:
    if doc is None:
        return ()
    if not isinstance(doc, list):
        raise ConfigError("grids", "expected a list with one grid per arm")
    if len(doc) != layout.arm_count:
        raise ConfigError("grids", f"expected {layout.arm_count} grids, got {len(doc)}")
    defaults = default_detector_grids(layout)
    out = []
    for i, g in enumerate(doc):
        path = f"grids[{i}]."
        g = _mapping(g or {}, f"grids[{i}]")
        _check_keys(g, {"center", "span", "step"}, path)
        d = defaults[i]
        vals = {k: parse_length(g[k], path + k) if k in g else getattr(d, k) for k in ("center", "span", "step")}
        try:
            out.append(DetectorGrid(i + 1, **vals))
        except InvalidLayoutError as exc:
            raise ConfigError(f"grids[{i}]", str(exc)) from None
    return tuple(out)


def _parse_fixed(doc: Any, path: str, arm_count: int) -> dict[int, float]:
    if doc is None:
        return {}
    doc = _mapping(doc, path)
    out = {}
    for k, v in doc.items():
        arm = _arm(k, f"{path}.{k}", arm_count)
        out[arm] = parse_length(v, f"{path}.{k}")
    return out


def _arm(value: Any, path: str, arm_count: int) -> int:
    try:
        arm = int(value)
    except (TypeError, ValueError):
        raise ConfigError(path, f"arm {value!r} is not an integer") from None
    if not 1 <= arm <= arm_count:
        raise ConfigError(path, f"unknown arm {arm}; arms are 1..{arm_count}")
    return arm


def _parse_target(doc: Any, i: int, arm_count: int) -> Target:
    path = f"plan[{i}]"
    doc = _mapping(doc, path)
    _check_keys(doc, {"name", "arms", "slice"}, path + ".")
    name = str(_require(doc, "name", path + "."))
    arms_raw = _require(doc, "arms", path + ".")
    if not isinstance(arms_raw, list):
        raise ConfigError(f"{path}.arms", "expected a list of arm indices")
    arms = [_arm(a, f"{path}.arms[{j}]", arm_count) for j, a in enumerate(arms_raw)]
    sl = _mapping(_require(doc, "slice", path + "."), f"{path}.slice")
    spath = f"{path}.slice"
    _check_keys(sl, {"kind", "arm", "arms", "fixed"}, spath + ".")
    kind = _require(sl, "kind", spath + ".")
    fixed = _parse_fixed(sl.get("fixed"), f"{spath}.fixed", arm_count)
    if kind == "fixed":
        spec = FixedPoint(fixed)
    elif kind == "scan":
        spec = Scan(_arm(_require(sl, "arm", spath + "."), f"{spath}.arm", arm_count), fixed)
    elif kind in ("diagonal", "bucket"):
        locked = _require(sl, "arms", spath + ".")
        if not isinstance(locked, list):
            raise ConfigError(f"{spath}.arms", "expected a list of arm indices")
        locked = [_arm(a, f"{spath}.arms[{j}]", arm_count) for j, a in enumerate(locked)]
        spec = DiagonalScan(locked, fixed) if kind == "diagonal" else BucketScan(locked, fixed)
    else:
        raise ConfigError(f"{spath}.kind", f"unknown slice kind {kind!r}; expected fixed, scan, diagonal or bucket")
    return Target(name, arms, spec)


def _parse_object(doc: Any) -> ObjectSpec | None:
    if doc is None:
        return None
    if doc == "default":
        return ObjectSpec()
    doc = _mapping(doc, "object")
    _check_keys(doc, {"points", "profile"}, "object.")
    points = []
    for i, p in enumerate(doc.get("points") or []):
        p = _mapping(p, f"object.points[{i}]")
        x = parse_length(_require(p, "position", f"object.points[{i}]."), f"object.points[{i}].position")
        t = _require(p, "transmission", f"object.points[{i}].")
        if isinstance(t, bool) or not isinstance(t, (int, float)):
            raise ConfigError(f"object.points[{i}].transmission", f"expected a number, got {t!r}")
        points.append((x, float(t)))
    profile = None
    if doc.get("profile") is not None:
        prof = _mapping(doc["profile"], "object.profile")
        xs = [parse_length(v, f"object.profile.positions[{j}]") for j, v in enumerate(prof.get("positions") or [])]
        ts = [float(v) for v in prof.get("transmissions") or []]
        if len(xs) != len(ts):
            raise ConfigError("object.profile", "positions and transmissions differ in length")
        profile = (tuple(xs), tuple(ts))
    if not points and profile is None:
        raise ConfigError("object", "needs points or a profile")
    return ObjectSpec(points=tuple(points), profile=profile)


_TOP_KEYS = set(RESULT_KEYS) | {"output", "workers"}


def from_document(doc: Any) -> RunConfig:
    """Validated RunConfig from an already-loaded document tree."""
    doc = _mapping(doc, "<document>")
    _check_keys(doc, _TOP_KEYS, "")
    layout = _parse_layout(_require(doc, "layout", ""))
    mode = _parse_mode(_require(doc, "mode", ""), layout.arm_count)
    samples = _int(_require(doc, "samples", ""), "samples", 1)
    seed = _int(_require(doc, "seed", ""), "seed", 0)
    if seed > SEED_MAX:
        raise ConfigError("seed", "must fit in 64 bits")
    chunk = _int(doc.get("chunk_size", DEFAULT_CHUNK_SIZE), "chunk_size", 1)
    workers = _int(doc.get("workers", 1), "workers", 1)
    alphabet = doc.get("alphabet")
    if alphabet is not None:
        alphabet = _int(alphabet, "alphabet", 2)
    grids = _parse_grids(doc.get("grids"), layout)
    plan = doc.get("plan")
    if plan is not None and not isinstance(plan, list):
        raise ConfigError("plan", "expected a list of targets")
    targets = tuple(_parse_target(t, i, layout.arm_count) for i, t in enumerate(plan or []))
    obj = _parse_object(doc.get("object"))
    output = doc.get("output", "out")
    if not isinstance(output, str):
        raise ConfigError("output", "expected a path string")
    return RunConfig(
        layout=layout,
        mode=mode,
        samples=samples,
        seed=seed,
        chunk_size=chunk,
        grids=grids,
        targets=targets,
        object=obj,
        output=output,
        workers=workers,
        alphabet=alphabet,
    )


def parse_config(text: str) -> RunConfig:
    """Parse a YAML document into a validated RunConfig."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}" if mark is not None else "<document>"
        raise ConfigError(where, f"malformed document: {exc}") from None
    return from_document(doc)


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


# -- serialization ---------------------------------------------------------------


def _len(x: float) -> str:
    return f"{float(x)!r} m"


def _fixed_doc(fixed) -> dict:
    return {int(a): _len(x) for a, x in fixed}


def _target_doc(t: Target) -> dict:
    s = t.slice
    if isinstance(s, FixedPoint):
        sl = {"kind": "fixed", "fixed": _fixed_doc(s.positions)}
    elif isinstance(s, Scan):
        sl = {"kind": "scan", "arm": s.scan_arm, "fixed": _fixed_doc(s.fixed)}
    elif isinstance(s, DiagonalScan):
        sl = {"kind": "diagonal", "arms": list(s.locked), "fixed": _fixed_doc(s.fixed)}
    else:
        sl = {"kind": "bucket", "arms": list(s.scan_arms), "fixed": _fixed_doc(s.fixed)}
    return {"name": t.name, "arms": list(t.arms), "slice": sl}


def _mode_doc(mode: MaskMode) -> dict:
    doc: dict = {"kind": mode.kind}
    if mode.kind == "ghz":
        doc["constrained_arm"] = mode.constrained_arm
    if mode.kind == "custom":
        doc["coefficients"] = [list(r) for r in mode.coefficients]
    return doc


def to_document(cfg: RunConfig) -> dict:
    lay = cfg.layout
    doc = {
        "layout": {
            "wavelength": _len(lay.wavelength),
            "aperture": _len(lay.aperture),
            "distances": [_len(d) for d in lay.distances],
            "pixel_count": lay.pixel_count,
        },
        "mode": _mode_doc(cfg.mode),
        "samples": cfg.samples,
        "seed": cfg.seed,
        "chunk_size": cfg.chunk_size,
        "alphabet": cfg.alphabet,
        "grids": [{"center": _len(g.center), "span": _len(g.span), "step": _len(g.step)} for g in cfg.grids],
        "plan": [_target_doc(t) for t in cfg.targets],
        "object": None,
        "output": cfg.output,
        "workers": cfg.workers,
    }
    if cfg.object is not None:
        obj: dict = {"points": [{"position": _len(x), "transmission": t} for x, t in cfg.object.points]}
        if cfg.object.profile is not None:
            xs, ts = cfg.object.profile
            obj["profile"] = {"positions": [_len(x) for x in xs], "transmissions": list(ts)}
        doc["object"] = obj
    return doc


def to_document_fields(changes: dict) -> dict:
    """Document fragments for the scalar fields that can be overridden."""
    allowed = {"samples", "seed", "chunk_size", "workers", "output", "alphabet"}
    bad = set(changes) - allowed
    if bad:
        raise ConfigError(sorted(bad)[0], "cannot be overridden")
    return dict(changes)


def serialize_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(to_document(cfg), sort_keys=False)


def result_signature(cfg: RunConfig) -> str:
    """Canonical JSON of the result-determining fields, used to match caches."""
    doc = to_document(cfg)
    return json.dumps({k: doc[k] for k in RESULT_KEYS}, sort_keys=True, separators=(",", ":"))
