"""Synthetic datasets with controllable class signal placement.

Three generators, all deterministic in their seed:

- unimodal task: the label is readable from exactly one modality (visual:
  class mean direction inside a random low-dim subspace; skeleton: the
  oscillation period of one limb joint). The other modality is pure noise.
- xor task: a visual bit (mean-direction sign) and a skeleton bit
  (oscillation phase) drawn independently; label = XOR. Neither modality
  alone carries label information.
- occlusion variant: rewrites an existing dataset, zeroing whole skeleton
  frames and replacing visual rows with the dataset mean row.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .feature_io import (
    NUM_JOINTS,
    VISUAL_DIM,
    ClipRecord,
    DatasetManifest,
    FeatureSequence,
    Modality,
    Split,
    load_manifest,
    read_sequence,
    save_manifest,
    write_sequence,
)

SIGNAL_JOINT = 20  # the oscillating "limb" joint
BASE_PERIOD = 8  # class c oscillates with period BASE_PERIOD * (c + 1) frames


@dataclass
class SynthSpec:
    n_clips: int
    t_clip: int
    num_classes: int
    seed: int
    signal_scale: float = 1.5
    noise_scale: float = 1.0
    subspace_dim: int = 8
    signal_density: float = 1.0  # fraction of frames carrying the visual signal
    osc_amplitude: float = 0.5
    joint_jitter: float = 0.05


def _neutral_pose(rng: np.random.Generator) -> np.ndarray:
    """A fixed standing-ish pose: root at origin, joints spread within ~1m."""
    pose = rng.normal(0.0, 0.3, size=(NUM_JOINTS, 3))
    pose[0] = 0.0
    return pose


def _split_assign(labels: np.ndarray, seed: int) -> list[Split]:
    """Stratified 80/20 split, deterministic in seed."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5711)))
    split = [Split.TRAIN] * len(labels)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = rng.permutation(idx)
        n_val = max(1, round(0.2 * len(idx)))
        for i in idx[:n_val]:
            split[int(i)] = Split.VAL
    return split


def _write_clip(out_dir: Path, clip_id: str, visual: np.ndarray, joints: np.ndarray) -> tuple[str, str]:
    vpath = f"{clip_id}_v.fseq"
    spath = f"{clip_id}_s.fseq"
    write_sequence(FeatureSequence(clip_id, Modality.VISUAL, visual.astype(np.float32)), out_dir / vpath)
    write_sequence(FeatureSequence(clip_id, Modality.SKELETON, joints.astype(np.float32)), out_dir / spath)
    return vpath, spath


def _visual_noise(rng: np.random.Generator, t: int, scale: float) -> np.ndarray:
    return rng.normal(0.0, scale, size=(t, VISUAL_DIM))


def _skeleton_frames(rng: np.random.Generator, pose: np.ndarray, t: int, jitter: float) -> np.ndarray:
    frames = pose[None, :, :] + rng.normal(0.0, jitter, size=(t, NUM_JOINTS, 3))
    # per-clip global drift; root-relative normalization must remove it
    frames += rng.normal(0.0, 2.0, size=(1, 1, 3))
    return frames


def _oscillate(frames: np.ndarray, period: float, amplitude: float, phase: float = 0.0) -> None:
    t = np.arange(frames.shape[0], dtype=np.float64)
    wave = amplitude * np.sin(2.0 * np.pi * t / period + phase)
    frames[:, SIGNAL_JOINT, 1] += wave


def gen_unimodal_task(
    modality: str,
    spec: SynthSpec,
    out_dir: str | Path,
    class_names: list[str] | None = None,
) -> DatasetManifest:
    """Dataset whose label is carried by `modality` only ("visual"/"skeleton")."""
    if modality not in ("visual", "skeleton"):
        raise ValueError(f"modality {modality!r}")
    if spec.num_classes < 2 or spec.n_clips < spec.num_classes:
        raise ValueError(f"{spec.n_clips} clips / {spec.num_classes} classes")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    root = np.random.SeedSequence((spec.seed, 0xD47A))
    rng_global = np.random.default_rng(root.spawn(1)[0])

    # class directions live in a low-dim random subspace of the visual space
    basis = rng_global.normal(size=(spec.subspace_dim, VISUAL_DIM))
    basis /= np.linalg.norm(basis, axis=1, keepdims=True)
    coeffs = rng_global.normal(size=(spec.num_classes, spec.subspace_dim))
    directions = coeffs @ basis
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    pose = _neutral_pose(rng_global)

    names = class_names or [f"act_{c}" for c in range(spec.num_classes)]
    labels = np.arange(spec.n_clips) % spec.num_classes
    splits = _split_assign(labels, spec.seed)
    records = []
    for i in range(spec.n_clips):
        rng = np.random.default_rng(np.random.SeedSequence((spec.seed, 0xC11B, i)))
        c = int(labels[i])
        visual = _visual_noise(rng, spec.t_clip, spec.noise_scale)
        joints = _skeleton_frames(rng, pose, spec.t_clip, spec.joint_jitter)
        if modality == "visual":
            carries = rng.random(spec.t_clip) < spec.signal_density
            if not carries.any():
                carries[rng.integers(spec.t_clip)] = True
            visual[carries] += spec.signal_scale * directions[c]
        else:
            _oscillate(joints, BASE_PERIOD * (c + 1), spec.osc_amplitude)
        clip_id = f"uni_{modality[0]}_{spec.seed}_{i:05d}"
        vpath, spath = _write_clip(out_dir, clip_id, visual, joints)
        records.append(
            ClipRecord(clip_id, c, names[c], splits[i], spec.t_clip, vpath, spath)
        )
    manifest = DatasetManifest(num_classes=spec.num_classes, class_names=names, records=records)
    save_manifest(manifest, out_dir / "manifest.jsonl")
    return load_manifest(out_dir / "manifest.jsonl")


def gen_xor_task(spec: SynthSpec, out_dir: str | Path) -> DatasetManifest:
    """Label = visual bit XOR skeleton bit; each marginal is uninformative.

    Visual bit flips the sign of a fixed mean direction; skeleton bit flips
    the oscillation phase (0 vs pi) at a fixed period.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    root = np.random.SeedSequence((spec.seed, 0x804))
    rng_global = np.random.default_rng(root.spawn(1)[0])
    direction = rng_global.normal(size=VISUAL_DIM)
    direction /= np.linalg.norm(direction)
    pose = _neutral_pose(rng_global)
    period = 2 * BASE_PERIOD

    bits = np.random.default_rng(np.random.SeedSequence((spec.seed, 0xB175))).integers(
        0, 2, size=(spec.n_clips, 2)
    )
    labels = bits[:, 0] ^ bits[:, 1]
    # stratify the split by bit combination so val keeps all four cells
    combo = bits[:, 0] * 2 + bits[:, 1]
    splits = _split_assign(combo, spec.seed)
    names = ["xor_0", "xor_1"]
    records = []
    for i in range(spec.n_clips):
        rng = np.random.default_rng(np.random.SeedSequence((spec.seed, 0xC11B, i)))
        bv, bs = int(bits[i, 0]), int(bits[i, 1])
        visual = _visual_noise(rng, spec.t_clip, spec.noise_scale)
        visual += (1.0 if bv else -1.0) * spec.signal_scale * direction
        joints = _skeleton_frames(rng, pose, spec.t_clip, spec.joint_jitter)
        _oscillate(joints, period, spec.osc_amplitude, phase=np.pi if bs else 0.0)
        clip_id = f"xor_{spec.seed}_{i:05d}"
        vpath, spath = _write_clip(out_dir, clip_id, visual, joints)
        records.append(
            ClipRecord(clip_id, int(labels[i]), names[labels[i]], splits[i], spec.t_clip, vpath, spath)
        )
    manifest = DatasetManifest(num_classes=2, class_names=names, records=records)
    save_manifest(manifest, out_dir / "manifest.jsonl")
    return load_manifest(out_dir / "manifest.jsonl")


def gen_occlusion_variant(
    manifest_path: str | Path,
    drop_rate: float,
    seed: int,
    out_dir: str | Path,
    modalities: tuple[str, ...] = ("visual", "skeleton"),
) -> DatasetManifest:
    """Corrupted copy of a dataset: skeleton frames zeroed, visual rows masked.

    Masked visual rows are replaced with the dataset mean row (over every
    frame of every clip in the source manifest). drop_rate=0 reproduces the
    input files byte for byte. Labels and splits are unchanged.
    """
    if not 0.0 <= drop_rate <= 1.0:
        raise ValueError(f"drop_rate {drop_rate}")
    bad = set(modalities) - {"visual", "skeleton"}
    if bad:
        raise ValueError(f"unknown modalities {sorted(bad)}")
    src = load_manifest(manifest_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    mean_row = np.zeros(VISUAL_DIM, dtype=np.float64)
    n_rows = 0
    if "visual" in modalities and drop_rate > 0:
        for r in src.records:
            d = read_sequence(r.visual_path).data
            mean_row += d.sum(axis=0, dtype=np.float64)
            n_rows += d.shape[0]
        mean_row = (mean_row / max(n_rows, 1)).astype(np.float32)

    records = []
    for i, r in enumerate(src.records):
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0x0CC1, i)))
        vis = read_sequence(r.visual_path).data.copy()
        ske = read_sequence(r.skeleton_path).data.copy()
        if drop_rate > 0:
            vis_mask = rng.random(vis.shape[0]) < drop_rate
            ske_mask = rng.random(ske.shape[0]) < drop_rate
            if "visual" in modalities:
                vis[vis_mask] = mean_row
            if "skeleton" in modalities:
                ske[ske_mask] = 0.0
        vpath = f"{r.clip_id}_v.fseq"
        spath = f"{r.clip_id}_s.fseq"
        write_sequence(FeatureSequence(r.clip_id, Modality.VISUAL, vis), out_dir / vpath)
        write_sequence(FeatureSequence(r.clip_id, Modality.SKELETON, ske), out_dir / spath)
        records.append(
            ClipRecord(r.clip_id, r.label_id, r.label_name, r.split, r.t_clip, vpath, spath)
        )
    out = DatasetManifest(num_classes=src.num_classes, class_names=src.class_names, records=records)
    save_manifest(out, out_dir / "manifest.jsonl")
    return load_manifest(out_dir / "manifest.jsonl")
