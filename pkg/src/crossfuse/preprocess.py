"""Temporal alignment and skeleton normalization.

Both modalities of a clip are sampled with the same segment-based index
vector (N segments, k frames each, T = N*k), so frame t in the visual
stream and frame t in the skeleton stream always come from the same video
frame. Skeletons are made root-relative per frame and flattened.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .feature_io import ClipRecord, read_sequence


class SampleMode(Enum):
    DETERMINISTIC = "deterministic"  # center of each within-segment slot
    RANDOM = "random"  # k sorted uniform draws per segment


@dataclass
class TsnPlan:
    n_segments: int = 8
    frames_per_segment: int = 8
    mode: SampleMode = SampleMode.DETERMINISTIC

    @property
    def total(self) -> int:
        return self.n_segments * self.frames_per_segment

    def validate(self) -> None:
        if self.n_segments < 1 or self.frames_per_segment < 1:
            raise ValueError(f"bad plan: {self.n_segments} segments x {self.frames_per_segment}")


def tsn_sample(t_clip: int, plan: TsnPlan, rng_seed: int = 0) -> np.ndarray:
    """Return plan.total frame indices in [0, t_clip), non-decreasing.

    Segment s spans [floor(s*t_clip/N), floor((s+1)*t_clip/N)). Empty segments
    (t_clip < N) fall back to the single frame at the segment start, clamped.
    Deterministic mode picks floor((j+0.5)*seg_len/k) inside the segment;
    random mode draws k sorted uniform indices, seeded by rng_seed only.
    """
    plan.validate()
    if t_clip < 1:
        raise ValueError(f"t_clip {t_clip}")
    n, k = plan.n_segments, plan.frames_per_segment
    rng = np.random.default_rng(rng_seed) if plan.mode is SampleMode.RANDOM else None
    out = np.empty(n * k, dtype=np.int64)
    for s in range(n):
        start = (s * t_clip) // n
        end = ((s + 1) * t_clip) // n
        if end <= start:
            out[s * k : (s + 1) * k] = min(start, t_clip - 1)
            continue
        if rng is None:
            seg_len = end - start
            picks = start + ((2 * np.arange(k) + 1) * seg_len) // (2 * k)
        else:
            picks = np.sort(rng.integers(start, end, size=k))
        out[s * k : (s + 1) * k] = picks
    return out


def normalize_skeleton(joints: np.ndarray) -> np.ndarray:
    """[T, J, 3] joints -> [T, 3J] root-relative flat coordinates.

    Joint 0 (pelvis) is subtracted from every joint of its frame, so the
    output is invariant to per-frame global translation and its first three
    columns are exactly zero.
    """
    if joints.ndim != 3 or joints.shape[2] != 3:
        raise ValueError(f"joints shape {joints.shape}, expected (T, J, 3)")
    if not np.isfinite(joints).all():
        raise ValueError("non-finite joint coordinates")
    rel = joints - joints[:, :1, :]
    return rel.reshape(joints.shape[0], -1)


@dataclass
class AlignedClip:
    clip_id: str
    label_id: int
    visual: np.ndarray  # [T, 1408] float32
    skeleton: np.ndarray  # [T, 3J] float32
    indices: np.ndarray  # [T] int64, the shared frame indices


def align_clip(record: ClipRecord, plan: TsnPlan, rng_seed: int = 0) -> AlignedClip:
    """Load both modalities of a clip and sample them with one index vector."""
    vis = read_sequence(record.visual_path)
    ske = read_sequence(record.skeleton_path)
    if vis.t != ske.t:
        raise ValueError(
            f"{record.clip_id}: visual has {vis.t} frames, skeleton {ske.t}; streams must align"
        )
    idx = tsn_sample(vis.t, plan, rng_seed=rng_seed)
    flat = normalize_skeleton(ske.data[idx])
    return AlignedClip(
        clip_id=record.clip_id,
        label_id=record.label_id,
        visual=vis.data[idx],
        skeleton=flat,
        indices=idx,
    )
