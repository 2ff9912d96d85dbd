"""Loading of HighD-style trajectory CSVs into normalized datasets.

Recordings ship one row per vehicle per frame with bounding-box positions
and per-lane driving directions. Everything downstream assumes a single
convention - driving direction +x, front-bumper positions - so loading
mirrors negative-direction lanes (x, v, a all negated) and shifts
bounding-box corners to front bumpers. Pairing produces one follower-leader
pair per vehicle with a leader, preferring the dataset's own preceding-id
adjacency and falling back to positional chaining when that column is
absent.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .kinematics import PairState, VehicleState

logger = logging.getLogger(__name__)

V_MAX_PLAUSIBLE = 70.0  # m/s; beyond this a sample is flagged as suspect


class IngestError(Exception):
    pass


class MissingColumn(IngestError):
    def __init__(self, column: str, path: str) -> None:
        super().__init__(f"column {column!r} missing from {path}")
        self.column = column


class NonMonotoneFrames(IngestError):
    def __init__(self, vehicle_id: int) -> None:
        super().__init__(f"vehicle {vehicle_id} has duplicate frames")
        self.vehicle_id = vehicle_id


class EmptyDataset(IngestError):
    pass


class PositionReference(Enum):
    FRONT_BUMPER = "front"
    BOUNDING_BOX_CORNER = "corner"


@dataclass(frozen=True)
class IngestSchema:
    """Column mapping plus recording metadata; defaults match HighD tracks
    files. ``preceding`` may be None for recordings without leader ids, in
    which case pairing falls back to positional chaining."""

    frame: str = "frame"
    vehicle_id: str = "id"
    x: str = "x"
    v: str = "xVelocity"
    a: str = "xAcceleration"
    length: str = "width"
    lane: str = "laneId"
    preceding: str | None = "precedingId"
    frame_rate: float = 25.0
    position_reference: PositionReference = PositionReference.BOUNDING_BOX_CORNER

    def __post_init__(self) -> None:
        if self.frame_rate <= 0:
            raise ValueError(f"frame_rate must be positive, got {self.frame_rate}")
        names = [self.frame, self.vehicle_id, self.x, self.v, self.a, self.length, self.lane]
        if self.preceding is not None:
            names.append(self.preceding)
        if len(set(names)) != len(names):
            raise ValueError(f"mapped column names must be distinct, got {names}")

    def required_columns(self) -> tuple[str, ...]:
        return (self.frame, self.vehicle_id, self.x, self.v, self.a, self.length, self.lane)


@dataclass
class Track:
    """One vehicle's time-ordered samples as flat arrays."""

    vehicle_id: int
    frames: np.ndarray  # int64
    x: np.ndarray
    v: np.ndarray
    a: np.ndarray
    lane: np.ndarray  # int64
    length: np.ndarray
    preceding: np.ndarray | None  # int64, 0 = no leader

    def state_at(self, idx: int, frame_rate: float) -> VehicleState:
        frame = int(self.frames[idx])
        return VehicleState(
            vehicle_id=self.vehicle_id,
            frame=frame,
            t=frame / frame_rate,
            x=float(self.x[idx]),
            v=float(self.v[idx]),
            a=float(self.a[idx]),
            length=float(self.length[idx]),
            lane=int(self.lane[idx]),
        )


@dataclass(frozen=True)
class Provenance:
    sources: tuple[str, ...]
    mirrored_lanes: tuple[int, ...]
    front_bumper_shift: bool
    warnings: tuple[str, ...]


@dataclass
class TrajectoryDataset:
    tracks: dict[int, Track]
    lanes: frozenset[int]
    frame_rate: float
    provenance: Provenance

    @property
    def frame_range(self) -> tuple[int, int]:
        """(min, max + 1) over all track frames."""
        lo = min(int(t.frames[0]) for t in self.tracks.values())
        hi = max(int(t.frames[-1]) for t in self.tracks.values())
        return lo, hi + 1

    @property
    def has_preceding(self) -> bool:
        return all(t.preceding is not None for t in self.tracks.values())


def _read_rows(path: Path, schema: IngestSchema, accum: dict[int, dict[str, list]]) -> bool:
    """Stream one CSV into per-vehicle accumulators; returns whether the
    preceding column was available."""
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        fields = reader.fieldnames or []
        for column in schema.required_columns():
            if column not in fields:
                raise MissingColumn(column, str(path))
        has_preceding = schema.preceding is not None and schema.preceding in fields
        if schema.preceding is not None and not has_preceding:
            logger.warning(
                "%s: no %r column; pairing will fall back to positional chaining",
                path,
                schema.preceding,
            )
        for line, row in enumerate(reader, start=2):
            try:
                vid = int(float(row[schema.vehicle_id]))
                bucket = accum.setdefault(
                    vid,
                    {"frame": [], "x": [], "v": [], "a": [], "lane": [], "length": [], "prec": []},
                )
                bucket["frame"].append(int(float(row[schema.frame])))
                bucket["x"].append(float(row[schema.x]))
                bucket["v"].append(float(row[schema.v]))
                bucket["a"].append(float(row[schema.a]))
                bucket["lane"].append(int(float(row[schema.lane])))
                bucket["length"].append(float(row[schema.length]))
                bucket["prec"].append(int(float(row[schema.preceding])) if has_preceding else 0)
            except (TypeError, ValueError) as exc:
                raise IngestError(f"{path}:{line}: malformed row: {exc}") from exc
    return has_preceding


def load_dataset(
    paths: str | Path | Iterable[str | Path], schema: IngestSchema | None = None
) -> TrajectoryDataset:
    """Load and normalize one or more trajectory CSVs.

    Rows are grouped by vehicle and sorted by frame; lanes whose mean raw
    x-velocity is negative are mirrored (x, v, a negated) so driving
    direction is +x everywhere; bounding-box corners are shifted to front
    bumpers. Implausible speeds produce warnings, never failures.
    """
    if schema is None:
        schema = IngestSchema()
    if isinstance(paths, (str, Path)):
        paths = [paths]
    path_list = [Path(p) for p in paths]

    accum: dict[int, dict[str, list]] = {}
    preceding_available = True
    for path in path_list:
        preceding_available &= _read_rows(path, schema, accum)
    if not accum:
        raise EmptyDataset(f"no data rows in {[str(p) for p in path_list]}")

    tracks: dict[int, Track] = {}
    for vid, bucket in accum.items():
        frames = np.asarray(bucket["frame"], dtype=np.int64)
        order = np.argsort(frames, kind="stable")
        frames = frames[order]
        if np.any(np.diff(frames) <= 0):
            raise NonMonotoneFrames(vid)
        tracks[vid] = Track(
            vehicle_id=vid,
            frames=frames,
            x=np.asarray(bucket["x"])[order],
            v=np.asarray(bucket["v"])[order],
            a=np.asarray(bucket["a"])[order],
            lane=np.asarray(bucket["lane"], dtype=np.int64)[order],
            length=np.asarray(bucket["length"])[order],
            preceding=np.asarray(bucket["prec"], dtype=np.int64)[order]
            if preceding_available
            else None,
        )

    warnings: list[str] = []
    mirrored = mirror_negative_lanes(tracks, warnings)

    shift = schema.position_reference is PositionReference.BOUNDING_BOX_CORNER
    if shift:
        for track in tracks.values():
            if int(track.lane[0]) in mirrored:
                # after mirroring, the negated corner already is the front bumper
                continue
            track.x = track.x + track.length

    for track in tracks.values():
        bad = np.count_nonzero((track.v < 0.0) | (track.v > V_MAX_PLAUSIBLE))
        if bad:
            message = (
                f"vehicle {track.vehicle_id}: {bad} samples with implausible "
                f"speed outside [0, {V_MAX_PLAUSIBLE}] m/s"
            )
            warnings.append(message)
            logger.warning("%s", message)

    lanes = frozenset(int(lane) for track in tracks.values() for lane in np.unique(track.lane))
    return TrajectoryDataset(
        tracks=tracks,
        lanes=lanes,
        frame_rate=schema.frame_rate,
        provenance=Provenance(
            sources=tuple(str(p) for p in path_list),
            mirrored_lanes=tuple(sorted(mirrored)),
            front_bumper_shift=shift,
            warnings=tuple(warnings),
        ),
    )


def mirror_negative_lanes(tracks: dict[int, Track], warnings: list[str]) -> set[int]:
    """Negate x, v, a for tracks in lanes whose mean raw velocity is
    negative. Idempotent: a second application finds no negative lanes."""
    lane_sum: dict[int, float] = {}
    lane_count: dict[int, int] = {}
    for track in tracks.values():
        for lane in np.unique(track.lane):
            mask = track.lane == lane
            lane_sum[int(lane)] = lane_sum.get(int(lane), 0.0) + float(track.v[mask].sum())
            lane_count[int(lane)] = lane_count.get(int(lane), 0) + int(mask.sum())
    mirrored = {lane for lane in lane_sum if lane_sum[lane] / lane_count[lane] < 0.0}
    for track in tracks.values():
        track_lanes = {int(lane) for lane in np.unique(track.lane)}
        hit = track_lanes & mirrored
        if not hit:
            continue
        if track_lanes - mirrored:
            message = (
                f"vehicle {track.vehicle_id} straddles lanes with opposite "
                f"driving directions; mirroring by its first lane"
            )
            warnings.append(message)
            logger.warning("%s", message)
            if int(track.lane[0]) not in mirrored:
                continue
        track.x = -track.x
        track.v = -track.v
        track.a = -track.a
    return mirrored


@dataclass
class PairingDiagnostics:
    """Tallies of pairing irregularities; all are skip-or-warn, not errors."""

    dangling_preceding: int = 0
    cross_lane_preceding: int = 0
    order_contradictions: int = 0
    dangling_ids: list[int] = field(default_factory=list)


@dataclass
class PairTable:
    """Flat per-(pair, frame) arrays for the whole scan window."""

    frame: np.ndarray
    lane: np.ndarray
    follower: np.ndarray
    leader: np.ndarray
    x_follower: np.ndarray
    x_leader: np.ndarray
    v_follower: np.ndarray
    v_leader: np.ndarray
    a_follower: np.ndarray
    a_leader: np.ndarray
    leader_length: np.ndarray
    gap: np.ndarray
    closing: np.ndarray
    diagnostics: PairingDiagnostics

    def __len__(self) -> int:
        return len(self.frame)


_COLUMNS = ("frame", "vehicle", "lane", "x", "v", "a", "length", "preceding")


def _flatten(dataset: TrajectoryDataset, window: tuple[int, int] | None) -> dict[str, np.ndarray]:
    parts: dict[str, list[np.ndarray]] = {name: [] for name in _COLUMNS}
    for track in dataset.tracks.values():
        mask = None
        if window is not None:
            mask = (track.frames >= window[0]) & (track.frames < window[1])
            if not mask.any():
                continue
        sel = slice(None) if mask is None else mask
        n = int(mask.sum()) if mask is not None else len(track.frames)
        parts["frame"].append(track.frames[sel])
        parts["vehicle"].append(np.full(n, track.vehicle_id, dtype=np.int64))
        parts["lane"].append(track.lane[sel])
        parts["x"].append(track.x[sel])
        parts["v"].append(track.v[sel])
        parts["a"].append(track.a[sel])
        parts["length"].append(track.length[sel])
        prec = (
            track.preceding[sel]
            if track.preceding is not None
            else np.zeros(n, dtype=np.int64)
        )
        parts["preceding"].append(prec)
    if not parts["frame"]:
        return {name: np.empty(0) for name in _COLUMNS}
    return {name: np.concatenate(arrs) for name, arrs in parts.items()}


def build_pair_table(
    dataset: TrajectoryDataset, window: tuple[int, int] | None = None
) -> PairTable:
    """Follower-leader rows for every frame in the window.

    Preceding-id adjacency wins when the dataset carries it; a leader id
    absent from the frame is skipped and tallied, a cross-lane leader is
    skipped and tallied, and a leader behind its follower is kept (it will
    classify as a collision) but tallied as an order contradiction.
    """
    flat = _flatten(dataset, window)
    diags = PairingDiagnostics()
    n = len(flat["frame"])
    if n == 0:
        empty_f = np.empty(0)
        empty_i = np.empty(0, dtype=np.int64)
        return PairTable(
            empty_i, empty_i, empty_i, empty_i,
            empty_f, empty_f, empty_f, empty_f, empty_f, empty_f, empty_f,
            empty_f, empty_f, diags,
        )

    frame = flat["frame"].astype(np.int64)
    vehicle = flat["vehicle"].astype(np.int64)
    if dataset.has_preceding:
        follower_rows, leader_rows = _pair_by_preceding(flat, frame, vehicle, diags)
    else:
        follower_rows, leader_rows = _pair_by_position(flat, frame)

    f, l = follower_rows, leader_rows
    lane = flat["lane"].astype(np.int64)
    contradictions = flat["x"][l] <= flat["x"][f]
    diags.order_contradictions = int(np.count_nonzero(contradictions))
    if diags.order_contradictions:
        logger.warning(
            "%d pair rows have the referenced leader at or behind the follower; "
            "kept and classified by their (non-positive) gap",
            diags.order_contradictions,
        )

    gap = flat["x"][l] - flat["x"][f] - flat["length"][l]
    closing = flat["v"][f] - flat["v"][l]
    return PairTable(
        frame=frame[f],
        lane=lane[f],
        follower=vehicle[f],
        leader=vehicle[l],
        x_follower=flat["x"][f],
        x_leader=flat["x"][l],
        v_follower=flat["v"][f],
        v_leader=flat["v"][l],
        a_follower=flat["a"][f],
        a_leader=flat["a"][l],
        leader_length=flat["length"][l],
        gap=gap,
        closing=closing,
        diagnostics=diags,
    )


_KEY_SHIFT = np.int64(1) << 24  # frame keys above any plausible vehicle id


def _pair_by_preceding(flat, frame, vehicle, diags):
    keys = frame * _KEY_SHIFT + vehicle
    order = np.argsort(keys)
    sorted_keys = keys[order]
    preceding = flat["preceding"].astype(np.int64)
    lane = flat["lane"].astype(np.int64)

    candidates = np.nonzero(preceding > 0)[0]
    want = frame[candidates] * _KEY_SHIFT + preceding[candidates]
    pos = np.searchsorted(sorted_keys, want)
    pos_clipped = np.minimum(pos, len(sorted_keys) - 1)
    found = sorted_keys[pos_clipped] == want

    missing = candidates[~found]
    diags.dangling_preceding = int(missing.size)
    if missing.size:
        ids = sorted(set(int(v) for v in preceding[missing]))
        diags.dangling_ids.extend(ids)
        logger.warning(
            "%d pair rows reference a leader absent from the frame (ids %s); skipped",
            missing.size,
            ids,
        )

    followers = candidates[found]
    leaders = order[pos_clipped[found]]
    same_lane = lane[followers] == lane[leaders]
    diags.cross_lane_preceding = int(np.count_nonzero(~same_lane))
    if diags.cross_lane_preceding:
        logger.warning(
            "%d pair rows reference a leader in another lane; skipped",
            diags.cross_lane_preceding,
        )
    return followers[same_lane], leaders[same_lane]


def _pair_by_position(flat, frame):
    lane = flat["lane"].astype(np.int64)
    # sort by (frame, lane, x descending); consecutive rows in a group chain up
    order = np.lexsort((-flat["x"], lane, frame))
    same_group = (frame[order][1:] == frame[order][:-1]) & (
        lane[order][1:] == lane[order][:-1]
    )
    followers = order[1:][same_group]
    leaders = order[:-1][same_group]
    return followers, leaders


def pair_frames(
    dataset: TrajectoryDataset, window: tuple[int, int] | None = None
) -> Iterator[tuple[int, list[PairState]]]:
    """Per-frame follower-leader pairs as typed states, in frame order."""
    table = build_pair_table(dataset, window)
    if len(table) == 0:
        return
    order = np.argsort(table.frame, kind="stable")
    rate = dataset.frame_rate
    current_frame = None
    bucket: list[PairState] = []
    for row in order:
        f = int(table.frame[row])
        if current_frame is not None and f != current_frame:
            yield current_frame, bucket
            bucket = []
        current_frame = f
        bucket.append(_pair_at(dataset, table, int(row), rate))
    if current_frame is not None:
        yield current_frame, bucket


def _pair_at(dataset: TrajectoryDataset, table: PairTable, row: int, rate: float) -> PairState:
    frame = int(table.frame[row])
    follower_track = dataset.tracks[int(table.follower[row])]
    leader_track = dataset.tracks[int(table.leader[row])]
    f_idx = int(np.searchsorted(follower_track.frames, frame))
    l_idx = int(np.searchsorted(leader_track.frames, frame))
    return PairState(
        follower=follower_track.state_at(f_idx, rate),
        leader=leader_track.state_at(l_idx, rate),
    )
