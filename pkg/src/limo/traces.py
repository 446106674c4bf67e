"""Vehicular mobility traces: CSV parsing, serialization, interpolation and
seeded synthetic generators."""

from __future__ import annotations

import csv
import gzip
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, TextIO, Tuple

import numpy as np

log = logging.getLogger(__name__)

Point = Tuple[float, float]
BBox = Tuple[float, float, float, float]

FIELDS = ("time", "vehicle_id", "x", "y", "speed", "angle", "lane", "vehicle_type")
DEFAULT_SCHEMA: Dict[str, Optional[str]] = {
    "time": "time",
    "vehicle_id": "id",
    "x": "x",
    "y": "y",
    "speed": "speed",
    "angle": "angle",
    "lane": "lane",
    "vehicle_type": "type",
}
REQUIRED = ("time", "vehicle_id", "x", "y")
VEHICLE_TYPES = ("vehicle", "bus")


class SchemaError(ValueError):
    pass


class MalformedRow(ValueError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line


class UnknownVehicle(KeyError):
    pass


class InvalidParams(ValueError):
    pass


@dataclass(frozen=True)
class TraceRecord:
    time: float
    vehicle_id: str
    x: float
    y: float
    speed: float = 0.0
    angle: float = 0.0
    lane: str = ""
    vehicle_type: str = "vehicle"


@dataclass
class VehicleTrack:
    """Column storage for one vehicle, sorted by strictly increasing time."""

    times: np.ndarray
    xs: np.ndarray
    ys: np.ndarray
    speeds: np.ndarray
    angles: np.ndarray
    lanes: Tuple[str, ...]
    types: Tuple[str, ...]

    def __len__(self):
        return len(self.times)

    def __eq__(self, other):
        if not isinstance(other, VehicleTrack):
            return NotImplemented
        return (
            all(np.array_equal(getattr(self, a), getattr(other, a)) for a in ("times", "xs", "ys", "speeds", "angles"))
            and self.lanes == other.lanes
            and self.types == other.types
        )

    def positions(self) -> np.ndarray:
        return np.column_stack([self.xs, self.ys])


@dataclass
class TraceSet:
    tracks: Dict[str, VehicleTrack]
    malformed: Tuple[int, ...] = field(default=(), compare=False)

    @property
    def vehicle_ids(self) -> List[str]:
        return sorted(self.tracks)

    @property
    def record_count(self) -> int:
        return sum(len(t) for t in self.tracks.values())

    @property
    def time_span(self) -> Tuple[float, float]:
        if not self.tracks:
            return (0.0, 0.0)
        return (
            min(float(t.times[0]) for t in self.tracks.values()),
            max(float(t.times[-1]) for t in self.tracks.values()),
        )

    @property
    def bounding_box(self) -> BBox:
        if not self.tracks:
            return (0.0, 0.0, 0.0, 0.0)
        xs = np.concatenate([t.xs for t in self.tracks.values()])
        ys = np.concatenate([t.ys for t in self.tracks.values()])
        return (float(xs.min()), float(ys.min()), float(xs.max()), float(ys.max()))

    def records(self, vehicle_id: Optional[str] = None) -> Iterator[TraceRecord]:
        ids = [vehicle_id] if vehicle_id is not None else self.vehicle_ids
        for vid in ids:
            tr = self._track(vid)
            for k in range(len(tr)):
                yield TraceRecord(
                    float(tr.times[k]), vid, float(tr.xs[k]), float(tr.ys[k]),
                    float(tr.speeds[k]), float(tr.angles[k]), tr.lanes[k], tr.types[k],
                )

    def _track(self, vehicle_id: str) -> VehicleTrack:
        try:
            return self.tracks[vehicle_id]
        except KeyError:
            raise UnknownVehicle(vehicle_id) from None


def from_records(records: Iterable[TraceRecord], malformed: Sequence[int] = ()) -> TraceSet:
    """Group records per vehicle; a repeated (vehicle, time) keeps the last record."""
    groups: Dict[str, Dict[float, TraceRecord]] = {}
    for r in records:
        groups.setdefault(r.vehicle_id, {})[r.time] = r
    tracks = {}
    for vid, by_time in groups.items():
        recs = [by_time[t] for t in sorted(by_time)]
        tracks[vid] = VehicleTrack(
            times=np.array([r.time for r in recs], dtype=float),
            xs=np.array([r.x for r in recs], dtype=float),
            ys=np.array([r.y for r in recs], dtype=float),
            speeds=np.array([r.speed for r in recs], dtype=float),
            angles=np.array([r.angle for r in recs], dtype=float),
            lanes=tuple(r.lane for r in recs),
            types=tuple(r.vehicle_type for r in recs),
        )
    return TraceSet(tracks, tuple(malformed))


def _resolve_schema(schema: Optional[Mapping[str, Optional[str]]]) -> Dict[str, Optional[str]]:
    resolved = dict(DEFAULT_SCHEMA)
    if schema:
        unknown = set(schema) - set(FIELDS)
        if unknown:
            raise SchemaError(f"unknown trace fields in schema: {sorted(unknown)}")
        resolved.update(schema)
    for name in REQUIRED:
        if not resolved.get(name):
            raise SchemaError(f"field {name!r} must be mapped to a column")
    return resolved


def _parse_row(row: Dict[str, str], cols: Dict[str, Optional[str]], line: int) -> TraceRecord:
    def get(name):
        col = cols.get(name)
        if col is None:
            return None
        value = row.get(col)
        if value is None:
            raise MalformedRow(line, f"missing value for {col!r}")
        return value.strip()

    try:
        time = float(get("time"))
        x = float(get("x"))
        y = float(get("y"))
        speed = float(get("speed")) if cols.get("speed") else 0.0
        angle = float(get("angle")) if cols.get("angle") else 0.0
    except ValueError as exc:
        raise MalformedRow(line, str(exc)) from None
    if not all(math.isfinite(v) for v in (time, x, y, speed, angle)):
        raise MalformedRow(line, "non-finite numeric field")
    if time < 0:
        raise MalformedRow(line, f"negative time {time}")
    if speed < 0:
        raise MalformedRow(line, f"negative speed {speed}")
    vid = get("vehicle_id")
    if not vid:
        raise MalformedRow(line, "empty vehicle id")
    lane = get("lane") or ""
    vtype = (get("vehicle_type") or "vehicle").lower()
    return TraceRecord(time, vid, x, y, speed, angle % 360.0, lane, "bus" if vtype == "bus" else "vehicle")


def parse_trace(source: TextIO, schema: Optional[Mapping[str, Optional[str]]] = None, delimiter: str = ",") -> TraceSet:
    """Parse delimited text with a header row into a :class:`TraceSet`.

    ``schema`` maps trace field names (see ``FIELDS``) to column names; a
    field mapped to ``None`` is not read. Unparseable rows are skipped and
    their line numbers kept in ``TraceSet.malformed``.

    Raises:
        SchemaError: a mapped column is missing from the header.
    """
    cols = _resolve_schema(schema)
    reader = csv.DictReader(source, delimiter=delimiter)
    header = reader.fieldnames or []
    missing = [c for c in cols.values() if c is not None and c not in header]
    if missing:
        raise SchemaError(f"columns absent from header: {missing}")
    records, bad = [], []
    for row in reader:
        line = reader.line_num
        try:
            records.append(_parse_row(row, cols, line))
        except MalformedRow as exc:
            log.debug("skipping %s", exc)
            bad.append(exc.line)
    if bad:
        log.warning("skipped %d malformed trace rows", len(bad))
    return from_records(records, bad)


def serialize(trace: TraceSet, sink: TextIO, schema: Optional[Mapping[str, Optional[str]]] = None, delimiter: str = ",") -> None:
    cols = _resolve_schema(schema)
    fields = [f for f in FIELDS if cols.get(f)]
    writer = csv.writer(sink, delimiter=delimiter, lineterminator="\n")
    writer.writerow([cols[f] for f in fields])
    for r in trace.records():
        values = {
            "time": repr(r.time), "vehicle_id": r.vehicle_id, "x": repr(r.x), "y": repr(r.y),
            "speed": repr(r.speed), "angle": repr(r.angle), "lane": r.lane, "vehicle_type": r.vehicle_type,
        }
        writer.writerow([values[f] for f in fields])


def _open_text(path: Path, mode: str):
    if path.suffix == ".gz":
        return io.TextIOWrapper(gzip.open(path, mode + "b"), encoding="utf-8", newline="")
    return open(path, mode, encoding="utf-8", newline="")


def read_trace(path, schema=None, delimiter=",") -> TraceSet:
    with _open_text(Path(path), "r") as fh:
        return parse_trace(fh, schema, delimiter)


def write_trace(trace: TraceSet, path, schema=None, delimiter=",") -> None:
    with _open_text(Path(path), "w") as fh:
        serialize(trace, fh, schema, delimiter)


def sample_position(trace: TraceSet, vehicle_id: str, t: float) -> Optional[Point]:
    """Linearly interpolated position at ``t``; None outside the vehicle's time span."""
    tr = trace._track(vehicle_id)
    times = tr.times
    if t < times[0] or t > times[-1]:
        return None
    k = int(np.searchsorted(times, t, side="left"))
    if times[k] == t:
        return (float(tr.xs[k]), float(tr.ys[k]))
    t0, t1 = times[k - 1], times[k]
    f = (t - t0) / (t1 - t0)
    return (
        float(tr.xs[k - 1] + f * (tr.xs[k] - tr.xs[k - 1])),
        float(tr.ys[k - 1] + f * (tr.ys[k] - tr.ys[k - 1])),
    )


def _check_params(n_vehicles, duration, area, speed_range):
    if n_vehicles < 1:
        raise InvalidParams("n_vehicles must be >= 1")
    if duration < 1:
        raise InvalidParams("duration must be >= 1 second")
    x0, y0, x1, y1 = area
    if not (x1 > x0 and y1 > y0):
        raise InvalidParams(f"empty area {area}")
    lo, hi = speed_range
    if lo < 0 or hi < lo:
        raise InvalidParams(f"invalid speed range {speed_range}")


def _walk(start, goals, speeds, dwell_at_goal, area, duration, rng) -> TraceSet:
    """Advance every vehicle once per second toward its goal.

    A vehicle never covers more than its speed in one step; on reaching its
    goal it either parks (``dwell_at_goal``) or draws a new uniform waypoint.
    """
    x0, y0, x1, y1 = area
    n = len(start)
    pos = start.copy()
    goal = goals.copy()
    steps = int(duration) + 1
    xs = np.empty((steps, n))
    ys = np.empty((steps, n))
    sp = np.zeros((steps, n))
    ang = np.zeros((steps, n))
    xs[0], ys[0] = pos[:, 0], pos[:, 1]
    for k in range(1, steps):
        delta = goal - pos
        dist = np.hypot(delta[:, 0], delta[:, 1])
        step = np.minimum(speeds, dist)
        arrived = step >= dist
        safe = np.where(dist > 0, dist, 1.0)
        new = pos + delta * (step / safe)[:, None]
        new[arrived] = goal[arrived]
        moved = new - pos
        sp[k] = np.hypot(moved[:, 0], moved[:, 1])
        ang[k] = np.where(sp[k] > 0, np.degrees(np.arctan2(moved[:, 1], moved[:, 0])) % 360.0, ang[k - 1])
        pos = new
        roam = arrived & ~dwell_at_goal
        if roam.any():
            goal[roam, 0] = rng.uniform(x0, x1, roam.sum())
            goal[roam, 1] = rng.uniform(y0, y1, roam.sum())
        xs[k], ys[k] = pos[:, 0], pos[:, 1]
    times = np.arange(steps, dtype=float)
    kinds = np.where(rng.random(n) < 0.1, "bus", "vehicle")
    tracks = {}
    for i in range(n):
        tracks[f"v{i:05d}"] = VehicleTrack(
            times=times.copy(), xs=xs[:, i].copy(), ys=ys[:, i].copy(),
            speeds=sp[:, i].copy(), angles=ang[:, i] % 360.0,
            lanes=(f"L{i % 3}",) * steps, types=(str(kinds[i]),) * steps,
        )
    return TraceSet(tracks)


def generate_synthetic_trace(n_vehicles: int, duration: int, area: BBox = (0.0, 0.0, 3000.0, 1800.0),
                             speed_range: Tuple[float, float] = (5.0, 15.0), seed: int = 0) -> TraceSet:
    """Seeded random-waypoint traces sampled once per second."""
    _check_params(n_vehicles, duration, area, speed_range)
    rng = np.random.default_rng(seed)
    x0, y0, x1, y1 = area
    start = np.column_stack([rng.uniform(x0, x1, n_vehicles), rng.uniform(y0, y1, n_vehicles)])
    goals = np.column_stack([rng.uniform(x0, x1, n_vehicles), rng.uniform(y0, y1, n_vehicles)])
    speeds = rng.uniform(*speed_range, n_vehicles)
    return _walk(start, goals, speeds, np.zeros(n_vehicles, dtype=bool), area, duration, rng)


def generate_clustered_trace(n_vehicles: int, duration: int, area: BBox, hotspots: Sequence[Point],
                             hotspot_share: float = 0.7, spread: float = 200.0,
                             speed_range: Tuple[float, float] = (5.0, 15.0), seed: int = 0) -> TraceSet:
    """Traces where most vehicles drive to, and park near, a few popular spots.

    A ``hotspot_share`` fraction picks one of ``hotspots`` uniformly and parks
    at a Gaussian offset of scale ``spread`` around it; the rest roam as in
    :func:`generate_synthetic_trace`.
    """
    _check_params(n_vehicles, duration, area, speed_range)
    if not hotspots:
        raise InvalidParams("at least one hotspot is required")
    if not 0.0 <= hotspot_share <= 1.0:
        raise InvalidParams("hotspot_share must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    x0, y0, x1, y1 = area
    start = np.column_stack([rng.uniform(x0, x1, n_vehicles), rng.uniform(y0, y1, n_vehicles)])
    goals = np.column_stack([rng.uniform(x0, x1, n_vehicles), rng.uniform(y0, y1, n_vehicles)])
    parks = rng.random(n_vehicles) < hotspot_share
    spots = np.asarray(hotspots, dtype=float)[rng.integers(0, len(hotspots), n_vehicles)]
    offsets = rng.normal(0.0, spread, (n_vehicles, 2))
    goals[parks] = spots[parks] + offsets[parks]
    goals[:, 0] = np.clip(goals[:, 0], x0, x1)
    goals[:, 1] = np.clip(goals[:, 1], y0, y1)
    speeds = rng.uniform(*speed_range, n_vehicles)
    return _walk(start, goals, speeds, parks, area, duration, rng)
