"""Conflict scanning, speed adjustment and closed-loop rollouts.

A conflict frame-instance is one (pair, frame) sample whose TTC is finite
and below t_safe; consecutive flagged frames of the same pair merge into
conflict events. Adjustment reduces the follower's velocity at flagged
frames, either independently per frame (TTC recomputed in place for
counting) or propagated forward (the rewritten velocity re-integrates the
follower's positions before a full re-scan). Collisions (non-positive gap)
are counted separately throughout and are never touched by adjustment:
braking cannot un-overlap bounding boxes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ._backend import kernels
from .ingest import PairTable, TrajectoryDataset, Track, build_pair_table
from .kinematics import (
    BarrierKind,
    BarrierParams,
    PairState,
    SafetyClass,
    barrier_value,
    classify,
)

HIST_RANGE = (0.0, 10.0)
HIST_BIN_WIDTH = 0.25

Window = tuple[int, int]  # half-open frame range [start, stop)


class EmptyWindow(ValueError):
    pass


class WindowMismatch(ValueError):
    pass


class InvalidProfile(ValueError):
    pass


class AdjustmentMode(Enum):
    PER_FRAME = "per_frame"
    PROPAGATED = "propagated"


@dataclass(frozen=True)
class Instantaneous:
    """Set the follower's velocity so the recomputed TTC meets t_target."""

    t_target: float = 3.0

    def __post_init__(self) -> None:
        if self.t_target <= 0:
            raise ValueError(f"t_target must be positive, got {self.t_target}")


@dataclass(frozen=True)
class DecelLimited:
    """One braking step toward the instantaneous target, capped at a_min*dt."""

    t_target: float = 3.0
    a_min: float = -6.0
    dt: float = 0.04

    def __post_init__(self) -> None:
        if self.t_target <= 0:
            raise ValueError(f"t_target must be positive, got {self.t_target}")
        if self.a_min >= 0:
            raise ValueError(f"a_min must be negative, got {self.a_min}")
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")


AdjustmentStrategy = Instantaneous | DecelLimited


@dataclass(frozen=True)
class ConflictEvent:
    """A maximal run of consecutive conflict frames for one pair."""

    follower: int
    leader: int
    lane: int
    first_frame: int
    last_frame: int
    min_ttc: float
    frames: int


@dataclass(frozen=True)
class CollisionSpan:
    """A maximal run of consecutive collision frames for one pair."""

    follower: int
    leader: int
    lane: int
    first_frame: int
    last_frame: int
    frames: int


@dataclass
class ScanResult:
    """Per-row TTC/classification over a window plus merged events."""

    window: Window
    t_safe: float
    table: PairTable
    ttc: np.ndarray
    classes: np.ndarray
    flags: np.ndarray
    events: list[ConflictEvent]
    collisions: list[CollisionSpan]

    def lane_counts(self, mask: np.ndarray) -> dict[int, int]:
        lanes, counts = np.unique(self.table.lane[mask], return_counts=True)
        return {int(lane): int(count) for lane, count in zip(lanes, counts)}

    @property
    def conflict_counts(self) -> dict[int, int]:
        return self.lane_counts(self.flags)

    @property
    def collision_counts(self) -> dict[int, int]:
        return self.lane_counts(self.classes == kernels.CLASS_COLLISION)

    @property
    def total_conflicts(self) -> int:
        return int(np.count_nonzero(self.flags))


def resolve_window(dataset: TrajectoryDataset, window: Window | None) -> Window:
    lo, hi = dataset.frame_range
    if window is None:
        return lo, hi
    start, stop = window
    if stop <= start or stop <= lo or start >= hi:
        raise EmptyWindow(f"window [{start}, {stop}) holds no dataset frames of [{lo}, {hi})")
    return start, stop


def scan_conflicts(
    dataset: TrajectoryDataset,
    params: BarrierParams | None = None,
    window: Window | None = None,
) -> ScanResult:
    """Flag conflict frame-instances and merge them into events."""
    if params is None:
        params = BarrierParams()
    window = resolve_window(dataset, window)
    table = build_pair_table(dataset, window)
    return _scan_table(table, params, window)


def _scan_table(table: PairTable, params: BarrierParams, window: Window) -> ScanResult:
    ttc = kernels.ttc_pairs(table.gap, table.closing)
    classes = kernels.classify_pairs(table.gap, table.closing, params.t_safe)
    flags = classes == kernels.CLASS_CONFLICT
    events = _merge_events(table, ttc, flags)
    collisions = _merge_collisions(table, classes == kernels.CLASS_COLLISION)
    return ScanResult(window, params.t_safe, table, ttc, classes, flags, events, collisions)


def _pair_runs(table: PairTable, mask: np.ndarray):
    """Yield (follower, leader, lane, frames, row_indices) for each maximal
    run of consecutive flagged frames of one pair."""
    rows = np.nonzero(mask)[0]
    if rows.size == 0:
        return
    keys = table.follower[rows].astype(np.int64)
    leaders = table.leader[rows].astype(np.int64)
    frames = table.frame[rows]
    order = np.lexsort((frames, leaders, keys))
    rows = rows[order]
    prev = None
    run: list[int] = []
    for row in rows:
        ident = (int(table.follower[row]), int(table.leader[row]))
        frame = int(table.frame[row])
        if prev is not None and ident == prev[0] and frame == prev[1] + 1:
            run.append(int(row))
        else:
            if run:
                yield run
            run = [int(row)]
        prev = (ident, frame)
    if run:
        yield run


def _merge_events(table: PairTable, ttc: np.ndarray, flags: np.ndarray) -> list[ConflictEvent]:
    events = []
    for run in _pair_runs(table, flags):
        first, last = run[0], run[-1]
        events.append(
            ConflictEvent(
                follower=int(table.follower[first]),
                leader=int(table.leader[first]),
                lane=int(table.lane[first]),
                first_frame=int(table.frame[first]),
                last_frame=int(table.frame[last]),
                min_ttc=float(np.min(ttc[run])),
                frames=len(run),
            )
        )
    events.sort(key=lambda e: (e.first_frame, e.follower, e.leader))
    return events


def _merge_collisions(table: PairTable, mask: np.ndarray) -> list[CollisionSpan]:
    spans = []
    for run in _pair_runs(table, mask):
        first, last = run[0], run[-1]
        spans.append(
            CollisionSpan(
                follower=int(table.follower[first]),
                leader=int(table.leader[first]),
                lane=int(table.lane[first]),
                first_frame=int(table.frame[first]),
                last_frame=int(table.frame[last]),
                frames=len(run),
            )
        )
    spans.sort(key=lambda s: (s.first_frame, s.follower, s.leader))
    return spans


# Relative shave on the target closing speed. Recomputing TTC from an
# adjusted velocity goes through v_l + gap/t - v_l, whose rounding can land
# a hair below t_target; the margin keeps the recomputed TTC at or above
# the target under float arithmetic, far below physical significance.
TARGET_MARGIN = 1e-9


def _target_velocity(v_f, v_l, gap, t_target):
    """Instantaneous-rule velocity: never higher than current, puts the
    recomputed TTC at t_target (or leaves the pair non-closing)."""
    return np.minimum(v_f, v_l + (gap / t_target) * (1.0 - TARGET_MARGIN))


def adjust_instantaneous(
    pair: PairState, strategy: Instantaneous, params: BarrierParams | None = None
) -> float:
    """Adjusted follower velocity for one conflicting pair.

    Guarded: a pair that is not a conflict under ``params`` is returned
    unchanged.
    """
    if classify(pair, params or BarrierParams()) is not SafetyClass.CONFLICT:
        return pair.follower.v
    return float(
        _target_velocity(pair.follower.v, pair.leader.v, pair.gap, strategy.t_target)
    )


def adjust_decel_limited(
    pair: PairState, strategy: DecelLimited, params: BarrierParams | None = None
) -> float:
    """One braking step toward the instantaneous target.

    The step is capped at a_min * dt, so a single step may leave residual
    conflict; repeated application converges to the target.
    """
    if classify(pair, params or BarrierParams()) is not SafetyClass.CONFLICT:
        return pair.follower.v
    target = _target_velocity(pair.follower.v, pair.leader.v, pair.gap, strategy.t_target)
    return float(max(target, pair.follower.v + strategy.a_min * strategy.dt))


def _adjust_rows(v_f, v_l, gap, strategy: AdjustmentStrategy) -> np.ndarray:
    target = _target_velocity(v_f, v_l, gap, strategy.t_target)
    if isinstance(strategy, Instantaneous):
        return target
    return np.maximum(target, v_f + strategy.a_min * strategy.dt)


@dataclass
class AdjustmentResult:
    adjusted: TrajectoryDataset
    before: ScanResult
    after: ScanResult
    report: "ConflictReport"


def apply_adjustment(
    dataset: TrajectoryDataset,
    strategy: AdjustmentStrategy,
    params: BarrierParams | None = None,
    window: Window | None = None,
    mode: AdjustmentMode = AdjustmentMode.PER_FRAME,
) -> AdjustmentResult:
    """Scan, adjust violating followers, re-scan, and report before/after.

    Per-frame mode treats every flagged frame independently: the follower's
    velocity is lowered at that frame and the TTC recomputed in place for
    counting. Propagated mode walks frames forward, adjusting any pair that
    is in conflict under the rewritten state and re-integrating follower
    positions, so an intervention persists into later frames.
    """
    if params is None:
        params = BarrierParams()
    window = resolve_window(dataset, window)
    before = scan_conflicts(dataset, params, window)
    if mode is AdjustmentMode.PER_FRAME:
        adjusted, after = _apply_per_frame(dataset, before, strategy, params)
    else:
        adjusted, after = _apply_propagated(dataset, strategy, params, window, before)
    report = summarize(before, after, check_alignment=mode is AdjustmentMode.PER_FRAME)
    return AdjustmentResult(adjusted, before, after, report)


def _apply_per_frame(
    dataset: TrajectoryDataset,
    before: ScanResult,
    strategy: AdjustmentStrategy,
    params: BarrierParams,
):
    table = before.table
    flags = before.flags
    v_adj = table.v_follower.copy()
    v_adj[flags] = _adjust_rows(
        table.v_follower[flags], table.v_leader[flags], table.gap[flags], strategy
    )
    closing_adj = v_adj - table.v_leader

    after_table = PairTable(
        frame=table.frame,
        lane=table.lane,
        follower=table.follower,
        leader=table.leader,
        x_follower=table.x_follower,
        x_leader=table.x_leader,
        v_follower=v_adj,
        v_leader=table.v_leader,
        a_follower=table.a_follower,
        a_leader=table.a_leader,
        leader_length=table.leader_length,
        gap=table.gap,
        closing=closing_adj,
        diagnostics=table.diagnostics,
    )
    after = _scan_table(after_table, params, before.window)
    adjusted = _dataset_with_velocities(dataset, table, v_adj, flags)
    return adjusted, after


def _dataset_with_velocities(
    dataset: TrajectoryDataset, table: PairTable, v_adj: np.ndarray, flags: np.ndarray
) -> TrajectoryDataset:
    tracks = {vid: _copy_track(track) for vid, track in dataset.tracks.items()}
    for row in np.nonzero(flags)[0]:
        track = tracks[int(table.follower[row])]
        idx = int(np.searchsorted(track.frames, int(table.frame[row])))
        track.v[idx] = v_adj[row]
    return TrajectoryDataset(
        tracks=tracks,
        lanes=dataset.lanes,
        frame_rate=dataset.frame_rate,
        provenance=dataset.provenance,
    )


def _copy_track(track: Track) -> Track:
    return Track(
        vehicle_id=track.vehicle_id,
        frames=track.frames.copy(),
        x=track.x.copy(),
        v=track.v.copy(),
        a=track.a.copy(),
        lane=track.lane.copy(),
        length=track.length.copy(),
        preceding=None if track.preceding is None else track.preceding.copy(),
    )


def _apply_propagated(
    dataset: TrajectoryDataset,
    strategy: AdjustmentStrategy,
    params: BarrierParams,
    window: Window,
    before: ScanResult,
):
    """Walk frames forward with the intervention active.

    Within a frame, pairs are processed front of platoon first so a rear
    pair sees its leader's just-adjusted velocity. Once a vehicle has been
    adjusted, its positions are re-integrated from recorded velocities at
    the dataset frame rate.
    """
    tracks = {vid: _copy_track(track) for vid, track in dataset.tracks.items()}
    dt = 1.0 / dataset.frame_rate
    table = before.table

    # group table rows by frame once; adjacency is held fixed during the walk
    frame_order = np.argsort(table.frame, kind="stable")
    frames = np.unique(table.frame)
    rows_by_frame = {
        int(f): frame_order[table.frame[frame_order] == f] for f in frames
    }

    # vehicle -> last track index whose position is current under the rewrite
    cursors: dict[int, int] = {}

    def catch_up(frame: int) -> None:
        for vid, cur in cursors.items():
            track = tracks[vid]
            while cur + 1 < len(track.frames) and track.frames[cur + 1] <= frame:
                step = (track.frames[cur + 1] - track.frames[cur]) * dt
                track.x[cur + 1] = track.x[cur] + track.v[cur] * step
                cur += 1
            cursors[vid] = cur

    for f in frames:
        f = int(f)
        catch_up(f)
        rows = rows_by_frame[f]
        # front of the platoon first: leaders before their followers
        rows = rows[np.argsort(-table.x_leader[rows], kind="stable")]
        for row in rows:
            follower_id = int(table.follower[row])
            leader_id = int(table.leader[row])
            f_track = tracks[follower_id]
            l_track = tracks[leader_id]
            f_idx = int(np.searchsorted(f_track.frames, f))
            l_idx = int(np.searchsorted(l_track.frames, f))
            gap = l_track.x[l_idx] - f_track.x[f_idx] - l_track.length[l_idx]
            closing = f_track.v[f_idx] - l_track.v[l_idx]
            if gap <= 0.0 or closing <= 0.0 or gap / closing >= params.t_safe:
                continue
            v_new = _adjust_rows(
                np.float64(f_track.v[f_idx]), np.float64(l_track.v[l_idx]),
                np.float64(gap), strategy,
            )
            f_track.v[f_idx] = float(v_new)
            cursors.setdefault(follower_id, f_idx)

    adjusted = TrajectoryDataset(
        tracks=tracks,
        lanes=dataset.lanes,
        frame_rate=dataset.frame_rate,
        provenance=dataset.provenance,
    )
    after = scan_conflicts(adjusted, params, window)
    return adjusted, after


@dataclass(frozen=True)
class LaneStats:
    lane: int
    before: int
    after: int
    reduction_pct: float
    events_before: int
    events_after: int
    collisions_before: int
    collisions_after: int


@dataclass
class ConflictReport:
    """Before/after conflict statistics over one window."""

    schema_version: int
    window: Window
    t_safe: float
    per_lane: list[LaneStats]
    total_before: int
    total_after: int
    total_reduction_pct: float
    events_before: int
    events_after: int
    collisions_before: int
    collisions_after: int
    no_conflicts: bool
    hist_edges: np.ndarray = field(repr=False)
    hist_before: np.ndarray = field(repr=False)
    hist_after: np.ndarray = field(repr=False)


def _reduction(before: int, after: int) -> float:
    if before <= 0:
        return 0.0
    return 100.0 * (before - after) / before


def _ttc_histogram(ttc: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    edges = np.arange(
        HIST_RANGE[0], HIST_RANGE[1] + HIST_BIN_WIDTH / 2, HIST_BIN_WIDTH
    )
    finite = ttc[np.isfinite(ttc)]
    counts, _ = np.histogram(finite, bins=edges)
    return edges, counts


def summarize(
    before: ScanResult, after: ScanResult, check_alignment: bool = True
) -> ConflictReport:
    """Build the before/after report; scans must cover the same window and,
    when aligned row-for-row, the same pairs."""
    if before.window != after.window:
        raise WindowMismatch(
            f"scan windows differ: {before.window} vs {after.window}"
        )
    if check_alignment and (
        len(before.table) != len(after.table)
        or not np.array_equal(before.table.frame, after.table.frame)
        or not np.array_equal(before.table.follower, after.table.follower)
        or not np.array_equal(before.table.leader, after.table.leader)
    ):
        raise WindowMismatch("scans cover different pair rows")

    lanes = sorted(
        set(before.conflict_counts)
        | set(after.conflict_counts)
        | set(before.collision_counts)
        | set(after.collision_counts)
    )
    events_before_by_lane: dict[int, int] = {}
    for event in before.events:
        events_before_by_lane[event.lane] = events_before_by_lane.get(event.lane, 0) + 1
    events_after_by_lane: dict[int, int] = {}
    for event in after.events:
        events_after_by_lane[event.lane] = events_after_by_lane.get(event.lane, 0) + 1

    per_lane = []
    for lane in lanes:
        b = before.conflict_counts.get(lane, 0)
        a = after.conflict_counts.get(lane, 0)
        per_lane.append(
            LaneStats(
                lane=lane,
                before=b,
                after=a,
                reduction_pct=_reduction(b, a),
                events_before=events_before_by_lane.get(lane, 0),
                events_after=events_after_by_lane.get(lane, 0),
                collisions_before=before.collision_counts.get(lane, 0),
                collisions_after=after.collision_counts.get(lane, 0),
            )
        )

    total_before = before.total_conflicts
    total_after = after.total_conflicts
    edges, hist_before = _ttc_histogram(before.ttc)
    _, hist_after = _ttc_histogram(after.ttc)
    return ConflictReport(
        schema_version=1,
        window=before.window,
        t_safe=before.t_safe,
        per_lane=per_lane,
        total_before=total_before,
        total_after=total_after,
        total_reduction_pct=_reduction(total_before, total_after),
        events_before=len(before.events),
        events_after=len(after.events),
        collisions_before=int(np.count_nonzero(before.classes == kernels.CLASS_COLLISION)),
        collisions_after=int(np.count_nonzero(after.classes == kernels.CLASS_COLLISION)),
        no_conflicts=total_before == 0 and total_after == 0,
        hist_edges=edges,
        hist_before=hist_before,
        hist_after=hist_after,
    )


@dataclass
class RolloutTrace:
    """Time series from a filtered rollout; arrays have horizon+1 rows, the
    final row carrying state and barrier values only."""

    t: np.ndarray
    x_follower: np.ndarray
    v_follower: np.ndarray
    x_leader: np.ndarray
    v_leader: np.ndarray
    a_follower: np.ndarray
    a_leader: np.ndarray
    b_kind: np.ndarray
    b: np.ndarray
    b_dot: np.ndarray
    engaged: np.ndarray
    infeasible: np.ndarray

    @property
    def min_barrier(self) -> float:
        """Smallest defined barrier value along the trace (+inf if the
        barrier was never defined)."""
        defined = self.b[self.b_kind == 0]
        return float(defined.min()) if defined.size else float("inf")

    @property
    def ever_engaged(self) -> bool:
        return bool(self.engaged.any())

    @property
    def ever_infeasible(self) -> bool:
        return bool(self.infeasible.any())

    @property
    def ever_violated(self) -> bool:
        return bool((self.b_kind == 2).any())

    def arrays(self) -> tuple[np.ndarray, ...]:
        return (
            self.t, self.x_follower, self.v_follower, self.x_leader, self.v_leader,
            self.a_follower, self.a_leader, self.b_kind, self.b, self.b_dot,
            self.engaged, self.infeasible,
        )


def rollout(
    pair: PairState,
    leader_profile,
    params: BarrierParams | None = None,
    dt: float = 0.04,
    horizon: int | None = None,
    follower_command=0.0,
    engage_margin: float = 0.5,
    filter_enabled: bool = True,
) -> RolloutTrace:
    """Euler rollout of one pair under the acceleration safety filter.

    The follower's commanded acceleration is clamped to the safe bound
    whenever the barrier is defined and at most engage_margin; steps where
    that bound falls below a_min are flagged infeasible (the guarantee is
    not actuatable there) and braking saturates at a_min.
    """
    if params is None:
        params = BarrierParams()
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")

    lead = np.asarray(leader_profile, dtype=np.float64)
    if lead.ndim == 0:
        if horizon is None:
            raise ValueError("scalar leader profile needs an explicit horizon")
        lead = np.full(horizon, float(lead))
    if horizon is None:
        horizon = len(lead)
    if len(lead) != horizon:
        raise ValueError(f"leader profile has {len(lead)} steps, horizon is {horizon}")
    if lead.size and (lead.min() < params.a_min or lead.max() > params.a_max):
        raise InvalidProfile(
            f"leader accelerations must stay within [{params.a_min}, {params.a_max}]"
        )
    cmd = np.asarray(follower_command, dtype=np.float64)
    if cmd.ndim == 0:
        cmd = np.full(horizon, float(cmd))
    if len(cmd) != horizon:
        raise ValueError(f"follower command has {len(cmd)} steps, horizon is {horizon}")

    # Overlapping starts are rejected; conflicted (B < 0) starts are allowed
    # so emergency scenarios can be traced, but the invariance guarantee
    # only covers rollouts that begin inside the safe set.
    initial = barrier_value(pair, params)
    if initial.kind is BarrierKind.VIOLATED:
        raise ValueError("rollout needs a non-overlapping initial pair")

    raw = kernels.rollout_steps(
        pair.follower.x,
        pair.follower.v,
        pair.leader.x,
        pair.leader.v,
        pair.leader.length,
        cmd,
        lead,
        params.t_safe,
        engage_margin,
        params.a_min,
        params.a_max,
        params.eps,
        dt,
        filter_enabled,
    )
    return RolloutTrace(**raw)
