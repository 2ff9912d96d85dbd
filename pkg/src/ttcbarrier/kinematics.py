"""Longitudinal kinematics for follower-leader vehicle pairs.

Time-to-collision, the TTC barrier function B = TTC - t_safe, its time
derivative, the acceleration bound that keeps the derivative non-negative,
and the Safe/Conflict/Collision classification.

All functions are pure and total: degenerate geometry (separating vehicles,
overlapping bounding boxes) is represented with tagged results instead of
division results, so no infinities or NaNs enter the data model.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum


class DegenerateClosing(ValueError):
    """A quantity that needs positive closing speed was asked of a pair
    that is not closing (or has no positive gap)."""


@dataclass(frozen=True)
class VehicleState:
    """One vehicle's longitudinal sample at a single frame.

    Positions are front-bumper referenced and increase in the driving
    direction. Velocities are non-negative once ingestion normalization has
    run; raw recordings may carry negated values for the opposite driving
    direction, so no sign constraint is enforced here.
    """

    vehicle_id: int
    frame: int
    t: float
    x: float
    v: float
    a: float
    length: float
    lane: int

    def __post_init__(self) -> None:
        if self.length <= 0:
            raise ValueError(
                f"vehicle {self.vehicle_id}: length must be positive, got {self.length}"
            )


@dataclass(frozen=True)
class PairState:
    """A follower-leader pair at one instant.

    ``gap`` is the free distance from the follower's front bumper to the
    leader's rear bumper (leader length is the one that matters for a
    rear-end conflict). ``closing_speed`` is positive when the follower
    gains on the leader.

    Both vehicles must share frame and lane. The leader-ahead ordering is
    deliberately not enforced: recorded data can contain pairs whose leader
    reference contradicts position order, and those must still classify
    (as Collision, since their gap is non-positive).
    """

    follower: VehicleState
    leader: VehicleState

    def __post_init__(self) -> None:
        if self.follower.frame != self.leader.frame:
            raise ValueError(
                f"pair ({self.follower.vehicle_id}, {self.leader.vehicle_id}): "
                f"frames differ ({self.follower.frame} vs {self.leader.frame})"
            )
        if self.follower.lane != self.leader.lane:
            raise ValueError(
                f"pair ({self.follower.vehicle_id}, {self.leader.vehicle_id}): "
                f"lanes differ ({self.follower.lane} vs {self.leader.lane})"
            )

    @property
    def gap(self) -> float:
        return self.leader.x - self.follower.x - self.leader.length

    @property
    def closing_speed(self) -> float:
        return self.follower.v - self.leader.v


@dataclass(frozen=True)
class BarrierParams:
    """Threshold and actuation constants shared across the toolkit.

    ``t_target`` is the post-adjustment TTC target; it defaults to
    ``t_safe`` (the conflict threshold itself).
    """

    t_safe: float = 3.0
    a_min: float = -6.0
    a_max: float = 3.0
    eps: float = 1e-9
    t_target: float | None = None

    def __post_init__(self) -> None:
        if self.t_safe <= 0:
            raise ValueError(f"t_safe must be positive, got {self.t_safe}")
        if not (self.a_min < 0 < self.a_max):
            raise ValueError(
                f"acceleration envelope must satisfy a_min < 0 < a_max, "
                f"got [{self.a_min}, {self.a_max}]"
            )
        if self.eps <= 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if self.t_target is None:
            object.__setattr__(self, "t_target", self.t_safe)
        elif self.t_target < self.t_safe:
            raise ValueError(
                f"t_target ({self.t_target}) must not be below t_safe ({self.t_safe})"
            )


class TtcKind(Enum):
    FINITE = "finite"
    NOT_CLOSING = "not_closing"
    OVERLAP = "overlap"


@dataclass(frozen=True)
class TtcValue:
    """Tagged time-to-collision: finite seconds, not closing, or overlap."""

    kind: TtcKind
    seconds: float | None = None

    @classmethod
    def finite(cls, seconds: float) -> "TtcValue":
        return cls(TtcKind.FINITE, seconds)

    @classmethod
    def not_closing(cls) -> "TtcValue":
        return cls(TtcKind.NOT_CLOSING)

    @classmethod
    def overlap(cls) -> "TtcValue":
        return cls(TtcKind.OVERLAP)

    @property
    def is_finite(self) -> bool:
        return self.kind is TtcKind.FINITE


class BarrierKind(Enum):
    DEFINED = "defined"
    STRUCTURALLY_SAFE = "structurally_safe"
    VIOLATED = "violated"


@dataclass(frozen=True)
class BarrierValue:
    """Tagged barrier evaluation: a number when TTC is finite, otherwise a
    structural verdict (separating pairs are safe, overlapping ones are not).
    """

    kind: BarrierKind
    value: float | None = None

    @property
    def is_defined(self) -> bool:
        return self.kind is BarrierKind.DEFINED


class SafetyClass(Enum):
    SAFE = "safe"
    CONFLICT = "conflict"
    COLLISION = "collision"


def ttc(pair: PairState) -> TtcValue:
    """Time-to-collision of a pair: gap divided by closing speed.

    Finite only when the gap is positive and the follower is closing;
    separating pairs are NotClosing, non-positive gaps are Overlap.
    """
    gap = pair.gap
    if gap <= 0.0:
        return TtcValue.overlap()
    dv = pair.closing_speed
    if dv <= 0.0:
        return TtcValue.not_closing()
    return TtcValue.finite(gap / dv)


def barrier_value(pair: PairState, params: BarrierParams) -> BarrierValue:
    """Barrier B = TTC - t_safe, defined when TTC is finite.

    Non-closing pairs are structurally safe (no collision course exists);
    overlapping pairs are violated outright.
    """
    t = ttc(pair)
    if t.kind is TtcKind.OVERLAP:
        return BarrierValue(BarrierKind.VIOLATED)
    if t.kind is TtcKind.NOT_CLOSING:
        return BarrierValue(BarrierKind.STRUCTURALLY_SAFE)
    return BarrierValue(BarrierKind.DEFINED, t.seconds - params.t_safe)


def barrier_derivative(pair: PairState, params: BarrierParams) -> float:
    """Time derivative of the barrier under current accelerations.

    With g the gap, d the closing speed and da = a_follower - a_leader,
    the quotient rule gives dB/dt = -1 - g*da/d^2 (g shrinks at rate d,
    d changes at rate da). Only applicable while the pair is closing:
    requires gap > 0 and closing speed > eps.
    """
    gap = pair.gap
    dv = pair.closing_speed
    if dv <= params.eps:
        raise DegenerateClosing(
            f"barrier derivative needs closing speed > {params.eps}, got {dv}"
        )
    if gap <= 0.0:
        raise DegenerateClosing(f"barrier derivative needs a positive gap, got {gap}")
    return -1.0 - gap * (pair.follower.a - pair.leader.a) / (dv * dv)


def safe_accel_bound(pair: PairState) -> float:
    """Largest follower acceleration that keeps the barrier non-decreasing.

    Solving -1 - g*(a_f - a_l)/d^2 >= 0 for a_f gives a_f <= a_l - d^2/g.
    The bound can fall below any physical braking limit; callers must flag
    that case as an infeasible guarantee.
    """
    gap = pair.gap
    dv = pair.closing_speed
    if gap <= 0.0 or dv <= 0.0:
        raise DegenerateClosing(
            f"safe acceleration bound needs gap > 0 and closing speed > 0, "
            f"got gap={gap}, closing={dv}"
        )
    return pair.leader.a - dv * dv / gap


def classify(pair: PairState, params: BarrierParams) -> SafetyClass:
    """Safe / Conflict / Collision classification of a pair.

    Collision when bounding boxes touch or overlap, Conflict when a finite
    TTC falls below t_safe, Safe otherwise (including non-closing pairs).
    """
    t = ttc(pair)
    if t.kind is TtcKind.OVERLAP:
        return SafetyClass.COLLISION
    if t.is_finite and t.seconds < params.t_safe:
        return SafetyClass.CONFLICT
    return SafetyClass.SAFE


def pair_from_gap(
    gap: float,
    closing_speed: float,
    *,
    leader_speed: float = 20.0,
    follower_accel: float = 0.0,
    leader_accel: float = 0.0,
    leader_length: float = 5.0,
    follower_length: float = 4.5,
    lane: int = 1,
    frame: int = 0,
    t: float = 0.0,
) -> PairState:
    """Build a pair directly from reduced coordinates (gap, closing speed).

    The barrier quantities depend only on gap, closing speed and the two
    accelerations, so tests and the grid oracle construct pairs this way;
    the follower is anchored at x = 0.
    """
    follower = VehicleState(
        vehicle_id=1,
        frame=frame,
        t=t,
        x=0.0,
        v=leader_speed + closing_speed,
        a=follower_accel,
        length=follower_length,
        lane=lane,
    )
    leader = VehicleState(
        vehicle_id=0,
        frame=frame,
        t=t,
        x=gap + leader_length,
        v=leader_speed,
        a=leader_accel,
        length=leader_length,
        lane=lane,
    )
    return PairState(follower=follower, leader=leader)
