"""Bounding-box arithmetic for hand/object detections.

Boxes use normalized frame coordinates in [0, 1] with the origin at the
top-left corner and y increasing downward. A clip carries exactly
``CLIP_FRAME_COUNT`` sampled frames.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

from .errors import DataError

CLIP_FRAME_COUNT = 16

# Keys used for detection slots in the JSONL wire format.
_SLOT_KEYS = ("lh", "rh", "lo", "ro")


class Point(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box with normalized corners (x1, y1) top-left, (x2, y2) bottom-right."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise DataError(f"box coordinates must be finite, got {coords}")
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise DataError(f"box corners are inverted: {coords}")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)


@dataclass(frozen=True)
class DetectionFrame:
    """Per-frame detector output: up to four box slots, any of which may be absent."""

    frame_index: int
    left_hand: Optional[BBox] = None
    right_hand: Optional[BBox] = None
    left_obj: Optional[BBox] = None
    right_obj: Optional[BBox] = None

    def __post_init__(self) -> None:
        if self.frame_index < 0:
            raise DataError(f"frame_index must be >= 0, got {self.frame_index}")


@dataclass(frozen=True)
class ClipDetections:
    """Detections for one clip: exactly CLIP_FRAME_COUNT frames in ascending order."""

    clip_id: str
    frame_width: int
    frame_height: int
    frames: tuple[DetectionFrame, ...]

    def __post_init__(self) -> None:
        if self.frame_width <= 0 or self.frame_height <= 0:
            raise DataError(
                f"clip {self.clip_id!r}: frame dimensions must be positive, "
                f"got {self.frame_width}x{self.frame_height}"
            )
        if len(self.frames) != CLIP_FRAME_COUNT:
            raise DataError(
                f"clip {self.clip_id!r}: expected {CLIP_FRAME_COUNT} frames, "
                f"got {len(self.frames)}"
            )
        indices = [f.frame_index for f in self.frames]
        if sorted(set(indices)) != indices:
            raise DataError(
                f"clip {self.clip_id!r}: frame indices must be unique and ascending"
            )


def center(b: BBox) -> Point:
    """Central point of a box."""
    return Point((b.x1 + b.x2) / 2.0, (b.y1 + b.y2) / 2.0)


def union_box(a: BBox, b: BBox) -> BBox:
    """Smallest box enclosing both inputs."""
    return BBox(min(a.x1, b.x1), min(a.y1, b.y1), max(a.x2, b.x2), max(a.y2, b.y2))


def normalize_box(
    pixel_box: Sequence[float], frame_width: float, frame_height: float
) -> BBox:
    """Convert a pixel-space (x1, y1, x2, y2) box to normalized coordinates.

    Out-of-frame pixel coordinates are clamped to the frame bounds before
    division; detectors routinely emit slightly out-of-range boxes.
    """
    if frame_width <= 0 or frame_height <= 0:
        raise DataError(
            f"invalid frame dimensions {frame_width}x{frame_height}"
        )
    x1, y1, x2, y2 = pixel_box
    x1 = min(max(x1, 0.0), frame_width)
    x2 = min(max(x2, 0.0), frame_width)
    y1 = min(max(y1, 0.0), frame_height)
    y2 = min(max(y2, 0.0), frame_height)
    return BBox(x1 / frame_width, y1 / frame_height, x2 / frame_width, y2 / frame_height)


def giou(a: BBox, b: BBox) -> float:
    """Generalized IoU in (-1, 1]: IoU minus the normalized empty enclosing area.

    Undefined when both boxes have zero area.
    """
    if a.area == 0.0 and b.area == 0.0:
        raise DataError("generalized IoU is undefined for two zero-area boxes")
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    inter = iw * ih if iw > 0.0 and ih > 0.0 else 0.0
    union = a.area + b.area - inter
    enclose = union_box(a, b).area
    iou = inter / union
    return iou - (enclose - union) / enclose


def interpolate_missing(
    track: Sequence[Optional[BBox]],
) -> list[Optional[BBox]]:
    """Fill single-frame gaps in a box track by coordinate-wise midpoints.

    A missing box at index t is filled only when both immediate neighbors
    are present. Gaps at either end and runs of two or more missing frames
    are left absent; present boxes are never modified.
    """
    out = list(track)
    for t in range(1, len(track) - 1):
        if track[t] is None and track[t - 1] is not None and track[t + 1] is not None:
            p, n = track[t - 1], track[t + 1]
            out[t] = BBox(
                (p.x1 + n.x1) / 2.0,
                (p.y1 + n.y1) / 2.0,
                (p.x2 + n.x2) / 2.0,
                (p.y2 + n.y2) / 2.0,
            )
    return out


def sample_frame_indices(total_frames: int, n: int) -> list[int]:
    """Endpoint-inclusive uniform sampling of n frame indices, round-half-up."""
    if total_frames < 1:
        raise DataError(f"cannot sample from an empty clip (total_frames={total_frames})")
    if n < 1:
        raise DataError(f"sample count must be >= 1, got {n}")
    if n == 1:
        return [0]
    span = total_frames - 1
    return [math.floor(i * span / (n - 1) + 0.5) for i in range(n)]


def _box_from_json(value, clip_id: str, pixels: bool, w: int, h: int) -> Optional[BBox]:
    if value is None:
        return None
    if not isinstance(value, (list, tuple)) or len(value) != 4:
        raise DataError(f"clip {clip_id!r}: box must be [x1, y1, x2, y2] or null, got {value!r}")
    if pixels:
        return normalize_box(value, w, h)
    # Pre-normalized input: clamp small detector drift, reject inverted boxes.
    clamped = [min(max(float(c), 0.0), 1.0) for c in value]
    return BBox(*clamped)


def clip_from_json(obj: dict, pixels: bool = False) -> ClipDetections:
    """Parse one JSONL record of the detections wire format.

    Expected shape: ``{"clip_id", "w", "h", "frames": [{"i", "lh", "rh",
    "lo", "ro"} x 16]}`` where each box is ``[x1, y1, x2, y2]`` or null.
    With ``pixels=True`` box coordinates are pixel-space and are normalized
    (and clamped) on load.
    """
    try:
        clip_id = obj["clip_id"]
        w = int(obj["w"])
        h = int(obj["h"])
        raw_frames = obj["frames"]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed detections record: {exc}") from exc
    frames = []
    for rf in raw_frames:
        if "i" not in rf:
            raise DataError(f"clip {clip_id!r}: frame record missing index key 'i'")
        boxes = {
            key: _box_from_json(rf.get(key), clip_id, pixels, w, h) for key in _SLOT_KEYS
        }
        frames.append(
            DetectionFrame(
                frame_index=int(rf["i"]),
                left_hand=boxes["lh"],
                right_hand=boxes["rh"],
                left_obj=boxes["lo"],
                right_obj=boxes["ro"],
            )
        )
    return ClipDetections(clip_id=clip_id, frame_width=w, frame_height=h, frames=tuple(frames))


def clip_to_json(clip: ClipDetections) -> dict:
    """Serialize a clip back to the JSONL wire format (normalized coordinates)."""

    def box(b: Optional[BBox]):
        return None if b is None else [b.x1, b.y1, b.x2, b.y2]

    return {
        "clip_id": clip.clip_id,
        "w": clip.frame_width,
        "h": clip.frame_height,
        "frames": [
            {
                "i": f.frame_index,
                "lh": box(f.left_hand),
                "rh": box(f.right_hand),
                "lo": box(f.left_obj),
                "ro": box(f.right_obj),
            }
            for f in clip.frames
        ],
    }
