"""Center-point trajectories and discrete motion summaries for a clip.

A clip yields up to five trajectories (left/right hand, left/right
contact object, jointly-held object) plus the original narration; the
jointly-held category absorbs frames where the two contact-object boxes
nearly coincide.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

from .errors import DataError
from .geometry import (
    BBox,
    ClipDetections,
    Point,
    center,
    giou,
    interpolate_missing,
    union_box,
)

DEFAULT_GIOU_THRESHOLD = 0.9
DEFAULT_MOTION_EPS = 0.05


class Entity(str, enum.Enum):
    LEFT_HAND = "left_hand"
    RIGHT_HAND = "right_hand"
    LEFT_OBJ = "left_hand_object"
    RIGHT_OBJ = "right_hand_object"
    BOTH_OBJ = "two_hand_object"


class Direction(str, enum.Enum):
    UP = "up"
    DOWN = "down"
    LEFT = "left"
    RIGHT = "right"
    STATIONARY = "stationary"


class Contact(str, enum.Enum):
    IN_CONTACT = "in_contact"
    NO_CONTACT = "no_contact"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class Trajectory:
    entity: Entity
    points: tuple[Optional[Point], ...]

    @property
    def present(self) -> list[Point]:
        return [p for p in self.points if p is not None]


@dataclass(frozen=True)
class TrajectoryBundle:
    clip_id: str
    trajectories: dict[Entity, Trajectory]
    original_narration: str


@dataclass(frozen=True)
class MotionSummary:
    entity: Entity
    direction: Direction
    net_displacement: float
    contact: Contact = Contact.UNKNOWN


def _centers(track) -> list[Optional[Point]]:
    return [None if b is None else center(b) for b in track]


def _near_identical(lo: BBox, ro: BBox, threshold: float) -> bool:
    """Whether two contact-object boxes describe one jointly-held object."""
    try:
        return giou(lo, ro) > threshold
    except DataError:
        # Two zero-area boxes: overlap undefined, keep them separate.
        return False


def build_bundle(
    d: ClipDetections,
    narration: str = "",
    giou_threshold: float = DEFAULT_GIOU_THRESHOLD,
) -> TrajectoryBundle:
    """Turn clip detections into per-entity center trajectories.

    Hand tracks get single-frame gaps interpolated before center
    extraction. Per frame, if both contact-object boxes are present and
    their generalized IoU exceeds ``giou_threshold``, the frame's object
    center goes to the jointly-held category (center of the union box)
    and the per-hand object slots stay empty for that frame; otherwise
    each present object box contributes its own center. Entities with no
    present points are omitted from the bundle.
    """
    if not 0.0 < giou_threshold <= 1.0:
        raise DataError(f"giou_threshold must be in (0, 1], got {giou_threshold}")

    lh = _centers(interpolate_missing([f.left_hand for f in d.frames]))
    rh = _centers(interpolate_missing([f.right_hand for f in d.frames]))

    lo_pts: list[Optional[Point]] = []
    ro_pts: list[Optional[Point]] = []
    both_pts: list[Optional[Point]] = []
    for f in d.frames:
        lo, ro = f.left_obj, f.right_obj
        if lo is not None and ro is not None and _near_identical(lo, ro, giou_threshold):
            both_pts.append(center(union_box(lo, ro)))
            lo_pts.append(None)
            ro_pts.append(None)
        else:
            lo_pts.append(None if lo is None else center(lo))
            ro_pts.append(None if ro is None else center(ro))
            both_pts.append(None)

    tracks = {
        Entity.LEFT_HAND: lh,
        Entity.RIGHT_HAND: rh,
        Entity.LEFT_OBJ: lo_pts,
        Entity.RIGHT_OBJ: ro_pts,
        Entity.BOTH_OBJ: both_pts,
    }
    trajectories = {
        entity: Trajectory(entity=entity, points=tuple(pts))
        for entity, pts in tracks.items()
        if any(p is not None for p in pts)
    }
    return TrajectoryBundle(
        clip_id=d.clip_id, trajectories=trajectories, original_narration=narration
    )


def summarize_motion(
    t: Trajectory,
    motion_eps: float = DEFAULT_MOTION_EPS,
    contact: Contact = Contact.UNKNOWN,
) -> MotionSummary:
    """Reduce a trajectory to a five-way direction and net displacement.

    The net vector runs from the first to the last present point. Below
    ``motion_eps`` in L2 norm the motion counts as stationary; otherwise
    the dominant axis wins, with |dx| = |dy| ties resolved to the
    vertical axis. The y axis points downward, so negative dy means up.
    """
    present = t.present
    if len(present) < 2:
        raise DataError(
            f"trajectory {t.entity.value}: need at least 2 present points, "
            f"got {len(present)}"
        )
    dx = present[-1].x - present[0].x
    dy = present[-1].y - present[0].y
    norm = math.hypot(dx, dy)
    if norm < motion_eps:
        direction = Direction.STATIONARY
    elif abs(dy) >= abs(dx):
        direction = Direction.UP if dy < 0 else Direction.DOWN
    else:
        direction = Direction.LEFT if dx < 0 else Direction.RIGHT
    return MotionSummary(
        entity=t.entity, direction=direction, net_displacement=norm, contact=contact
    )


def _hand_contact(bundle: TrajectoryBundle, hand: Entity, obj: Entity) -> Contact:
    """Majority per-frame contact state for a hand trajectory.

    A hand counts as in contact at frame t when an object center exists
    at t in its own object category or the jointly-held one.
    """
    hand_traj = bundle.trajectories.get(hand)
    if hand_traj is None:
        return Contact.UNKNOWN
    obj_traj = bundle.trajectories.get(obj)
    both_traj = bundle.trajectories.get(Entity.BOTH_OBJ)
    in_contact = 0
    total = 0
    for i, p in enumerate(hand_traj.points):
        if p is None:
            continue
        total += 1
        touching = (obj_traj is not None and obj_traj.points[i] is not None) or (
            both_traj is not None and both_traj.points[i] is not None
        )
        in_contact += int(touching)
    if total == 0:
        return Contact.UNKNOWN
    return Contact.IN_CONTACT if in_contact * 2 >= total else Contact.NO_CONTACT


def summarize_bundle(
    bundle: TrajectoryBundle, motion_eps: float = DEFAULT_MOTION_EPS
) -> dict[Entity, MotionSummary]:
    """Per-entity motion summaries with contact states filled in.

    Trajectories with fewer than two present points are skipped. Object
    categories are in contact by construction (contact-object boxes exist
    only while held); hand contact is the majority state over frames
    where the hand is present.
    """
    summaries: dict[Entity, MotionSummary] = {}
    contact_for = {
        Entity.LEFT_HAND: _hand_contact(bundle, Entity.LEFT_HAND, Entity.LEFT_OBJ),
        Entity.RIGHT_HAND: _hand_contact(bundle, Entity.RIGHT_HAND, Entity.RIGHT_OBJ),
        Entity.LEFT_OBJ: Contact.IN_CONTACT,
        Entity.RIGHT_OBJ: Contact.IN_CONTACT,
        Entity.BOTH_OBJ: Contact.IN_CONTACT,
    }
    for entity in Entity:
        traj = bundle.trajectories.get(entity)
        if traj is None:
            continue
        try:
            summaries[entity] = summarize_motion(
                traj, motion_eps=motion_eps, contact=contact_for[entity]
            )
        except DataError:
            continue
    return summaries


def bundle_to_json(bundle: TrajectoryBundle) -> dict:
    """Serialize a bundle: trajectory arrays keyed by category name."""
    return {
        "clip_id": bundle.clip_id,
        "narration": bundle.original_narration,
        "trajectories": {
            entity.value: [None if p is None else [p.x, p.y] for p in traj.points]
            for entity, traj in bundle.trajectories.items()
        },
    }


def bundle_from_json(obj: dict) -> TrajectoryBundle:
    trajectories = {}
    for key, pts in obj.get("trajectories", {}).items():
        entity = Entity(key)
        points = tuple(None if p is None else Point(p[0], p[1]) for p in pts)
        trajectories[entity] = Trajectory(entity=entity, points=points)
    return TrajectoryBundle(
        clip_id=obj["clip_id"],
        trajectories=trajectories,
        original_narration=obj.get("narration", ""),
    )
