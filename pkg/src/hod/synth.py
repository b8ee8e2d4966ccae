"""Synthetic clip generator: moving bright squares with grounded captions.

Each clip is a single bright square translating across a dark frame.
The square doubles as the detected "hand": its per-frame bounding boxes
go into the detections file, and the paired caption contains the true
direction word, so narration enrichment and contrastive training are
verifiable end to end. Pair records store the square's geometry, not
raw pixels; frames re-render deterministically from the record.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .geometry import (
    CLIP_FRAME_COUNT,
    BBox,
    ClipDetections,
    DetectionFrame,
    clip_to_json,
    sample_frame_indices,
)

DIRECTIONS = ("up", "down", "left", "right")

_OBJECTS = (
    "cup", "pan", "lid", "jar", "tray", "bowl", "fork", "mug",
    "plate", "knife", "spoon", "pot", "brush", "cloth", "board", "whisk",
    "glass", "kettle", "ladle", "peeler", "sieve", "tongs", "grater", "timer",
)

# Direction geometry: the moving axis runs between these normalized bounds.
_SPAN = (0.22, 0.78)


@dataclass(frozen=True)
class SynthClip:
    clip_id: str
    caption: str
    direction: str
    image_size: int
    start: tuple[float, float]
    end: tuple[float, float]
    half: float
    rgb: tuple[float, float, float]

    def to_json(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "caption": self.caption,
            "direction": self.direction,
            "image_size": self.image_size,
            "start": list(self.start),
            "end": list(self.end),
            "half": self.half,
            "rgb": list(self.rgb),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SynthClip":
        return cls(
            clip_id=obj["clip_id"],
            caption=obj["caption"],
            direction=obj["direction"],
            image_size=int(obj["image_size"]),
            start=tuple(obj["start"]),
            end=tuple(obj["end"]),
            half=float(obj["half"]),
            rgb=tuple(obj["rgb"]),
        )


def synth_clips(seed: int, n_clips: int, image_size: int = 16) -> list[SynthClip]:
    """Generate clip specs; deterministic per seed."""
    if n_clips < 1:
        raise DataError(f"n_clips must be >= 1, got {n_clips}")
    if image_size < 8:
        raise DataError(f"image_size must be >= 8, got {image_size}")
    rng = np.random.default_rng(seed)
    clips = []
    lo, hi = _SPAN
    for i in range(n_clips):
        direction = DIRECTIONS[(i // len(_OBJECTS)) % len(DIRECTIONS)]
        obj = _OBJECTS[i % len(_OBJECTS)]
        cross = float(rng.uniform(0.3, 0.7))
        if direction == "up":
            start, end = (cross, hi), (cross, lo)
        elif direction == "down":
            start, end = (cross, lo), (cross, hi)
        elif direction == "left":
            start, end = (hi, cross), (lo, cross)
        else:
            start, end = (lo, cross), (hi, cross)
        caption = f"C moves the {obj} {direction}"
        if i >= len(_OBJECTS) * len(DIRECTIONS):
            caption = f"{caption} variant {i}"
        clips.append(
            SynthClip(
                clip_id=f"synth-{seed}-{i:04d}",
                caption=caption,
                direction=direction,
                image_size=image_size,
                start=start,
                end=end,
                half=float(rng.uniform(0.10, 0.16)),
                rgb=tuple(rng.uniform(0.4, 1.0, 3).tolist()),
            )
        )
    return clips


def _pixel_box(clip: SynthClip, frame: int, n_frames: int = CLIP_FRAME_COUNT):
    f = frame / (n_frames - 1)
    cx = clip.start[0] + f * (clip.end[0] - clip.start[0])
    cy = clip.start[1] + f * (clip.end[1] - clip.start[1])
    s = clip.image_size
    x1 = max(int(round((cx - clip.half) * s)), 0)
    x2 = min(int(round((cx + clip.half) * s)), s)
    y1 = max(int(round((cy - clip.half) * s)), 0)
    y2 = min(int(round((cy + clip.half) * s)), s)
    return x1, y1, x2, y2


def render_frames(clip: SynthClip, frame_indices: list[int]) -> np.ndarray:
    """Render selected master frames as float [n, 3, S, S] in [0, 1]."""
    s = clip.image_size
    out = np.zeros((len(frame_indices), 3, s, s))
    for row, frame in enumerate(frame_indices):
        x1, y1, x2, y2 = _pixel_box(clip, frame)
        for ch in range(3):
            out[row, ch, y1:y2, x1:x2] = clip.rgb[ch]
    return out


def clip_detections(clip: SynthClip) -> ClipDetections:
    """The square's per-frame box as a right-hand detection track."""
    s = clip.image_size
    frames = []
    for i in range(CLIP_FRAME_COUNT):
        x1, y1, x2, y2 = _pixel_box(clip, i)
        frames.append(
            DetectionFrame(
                frame_index=i,
                right_hand=BBox(x1 / s, y1 / s, x2 / s, y2 / s),
            )
        )
    return ClipDetections(
        clip_id=clip.clip_id, frame_width=s, frame_height=s, frames=tuple(frames)
    )


def synth_data(
    seed: int, n_clips: int, image_size: int = 16
) -> tuple[list[dict], list[dict]]:
    """Paired (detections, pairs) JSON records for n synthetic clips."""
    clips = synth_clips(seed, n_clips, image_size)
    detections = [clip_to_json(clip_detections(c)) for c in clips]
    pairs = [c.to_json() for c in clips]
    return detections, pairs


def load_pairs(path: str) -> list[SynthClip]:
    clips = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                clips.append(SynthClip.from_json(json.loads(line)))
            except (KeyError, ValueError) as exc:
                raise DataError(f"{path}:{line_no}: malformed pair record: {exc}") from exc
    if not clips:
        raise DataError(f"{path}: no pair records found")
    return clips


def clip_frame_stacks(
    clip: SynthClip, frames_low: int, frames_high: int
) -> tuple[np.ndarray, np.ndarray]:
    """Low- and high-rate frame stacks sampled uniformly from the master track."""
    idx_low = sample_frame_indices(CLIP_FRAME_COUNT, frames_low)
    idx_high = sample_frame_indices(CLIP_FRAME_COUNT, frames_high)
    return render_frames(clip, idx_low), render_frames(clip, idx_high)
