"""Binary feature sequences and dataset manifests.

One .fseq file holds one modality of one clip:

    magic b"FSEQ" | version u32 | modality u8 | ndim u8 | dims ndim*u32 | dtype u8 | payload

All integers little-endian. dtype 1 = float32, payload row-major, length
prod(dims)*4 bytes. Visual sequences are [T, 1408], skeletons [T, 24, 3].
Bytes after the payload are an opaque trailer and are ignored on read.
The clip id is not stored in the file; it travels in the filename and the
manifest (read_sequence uses the path stem).

A manifest is JSONL: a header line {"num_classes": N, "class_names": [...]}
followed by one record per clip.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

MAGIC = b"FSEQ"
VERSION = 1
DTYPE_F32 = 1

VISUAL_DIM = 1408
NUM_JOINTS = 24

_HEADER_PREFIX = struct.Struct("<4sIBB")  # magic, version, modality, ndim


class FeatureIOError(Exception):
    """Base for all feature file / manifest failures."""


class BadMagicError(FeatureIOError):
    pass


class UnsupportedVersionError(FeatureIOError):
    pass


class UnsupportedDtypeError(FeatureIOError):
    pass


class TruncatedFileError(FeatureIOError):
    """Header or payload shorter than the dims announce."""


class DimMismatchError(FeatureIOError):
    """Dims do not match the declared modality's layout."""


class InvalidValueError(FeatureIOError):
    """NaN/Inf payload, on read or before write."""


class ManifestError(FeatureIOError):
    pass


class Modality(Enum):
    VISUAL = 0
    SKELETON = 1


class Split(Enum):
    TRAIN = "train"
    VAL = "val"


@dataclass
class FeatureSequence:
    clip_id: str
    modality: Modality
    data: np.ndarray  # float32; visual [T, 1408], skeleton [T, 24, 3]

    def validate(self) -> None:
        d = self.data
        if d.dtype != np.float32:
            raise InvalidValueError(f"{self.clip_id}: dtype {d.dtype}, expected float32")
        if self.modality is Modality.VISUAL:
            if d.ndim != 2 or d.shape[1] != VISUAL_DIM:
                raise DimMismatchError(
                    f"{self.clip_id}: visual dims {d.shape}, expected (T, {VISUAL_DIM})"
                )
        else:
            if d.ndim != 3 or d.shape[1:] != (NUM_JOINTS, 3):
                raise DimMismatchError(
                    f"{self.clip_id}: skeleton dims {d.shape}, expected (T, {NUM_JOINTS}, 3)"
                )
        if d.shape[0] < 1:
            raise DimMismatchError(f"{self.clip_id}: empty sequence")
        if not np.isfinite(d).all():
            raise InvalidValueError(f"{self.clip_id}: non-finite values in payload")

    @property
    def t(self) -> int:
        return int(self.data.shape[0])


def write_sequence(seq: FeatureSequence, path: str | Path) -> None:
    """Serialize one sequence. Validates first; on failure no file is created."""
    seq.validate()
    d = np.ascontiguousarray(seq.data, dtype=np.float32)
    header = _HEADER_PREFIX.pack(MAGIC, VERSION, seq.modality.value, d.ndim)
    dims = struct.pack(f"<{d.ndim}I", *d.shape)
    payload = d.astype("<f4", copy=False).tobytes()
    with open(path, "wb") as f:
        f.write(header)
        f.write(dims)
        f.write(struct.pack("<B", DTYPE_F32))
        f.write(payload)


def read_sequence(path: str | Path) -> FeatureSequence:
    """Parse one .fseq file, rejecting anything malformed with a typed error."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER_PREFIX.size:
        raise TruncatedFileError(f"{path}: {len(raw)} bytes, header needs {_HEADER_PREFIX.size}")
    magic, version, modality_code, ndim = _HEADER_PREFIX.unpack_from(raw, 0)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: version {version}, supported {VERSION}")
    try:
        modality = Modality(modality_code)
    except ValueError:
        raise DimMismatchError(f"{path}: unknown modality code {modality_code}") from None
    off = _HEADER_PREFIX.size
    if len(raw) < off + 4 * ndim + 1:
        raise TruncatedFileError(f"{path}: header truncated before dims/dtype")
    dims = struct.unpack_from(f"<{ndim}I", raw, off)
    off += 4 * ndim
    (dtype_code,) = struct.unpack_from("<B", raw, off)
    off += 1
    if dtype_code != DTYPE_F32:
        raise UnsupportedDtypeError(f"{path}: dtype code {dtype_code}, supported {DTYPE_F32}")
    if any(d == 0 for d in dims):
        raise DimMismatchError(f"{path}: zero-sized dim in {dims}")
    n = int(np.prod(dims))
    nbytes = 4 * n
    if len(raw) < off + nbytes:
        raise TruncatedFileError(f"{path}: payload {len(raw) - off} bytes, dims need {nbytes}")
    data = np.frombuffer(raw, dtype="<f4", count=n, offset=off).reshape(dims).copy()
    seq = FeatureSequence(clip_id=path.stem, modality=modality, data=data)
    seq.validate()  # also enforces the per-modality dim layout and finiteness
    return seq


@dataclass
class ClipRecord:
    clip_id: str
    label_id: int
    label_name: str
    split: Split
    t_clip: int
    visual_path: str
    skeleton_path: str


@dataclass
class DatasetManifest:
    num_classes: int
    class_names: list[str]
    records: list[ClipRecord] = field(default_factory=list)

    def split(self, which: Split) -> list[ClipRecord]:
        return [r for r in self.records if r.split is which]

    def validate(self) -> None:
        if self.num_classes < 1 or len(self.class_names) != self.num_classes:
            raise ManifestError(
                f"num_classes {self.num_classes} vs {len(self.class_names)} class names"
            )
        seen: set[str] = set()
        for r in self.records:
            if not 0 <= r.label_id < self.num_classes:
                raise ManifestError(f"{r.clip_id}: label_id {r.label_id} outside [0, {self.num_classes})")
            if r.label_name != self.class_names[r.label_id]:
                raise ManifestError(
                    f"{r.clip_id}: label_name {r.label_name!r} != class_names[{r.label_id}]"
                )
            if r.clip_id in seen:
                raise ManifestError(f"duplicate clip_id {r.clip_id}")
            seen.add(r.clip_id)
            if r.t_clip < 1:
                raise ManifestError(f"{r.clip_id}: t_clip {r.t_clip}")


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    manifest.validate()
    lines = [json.dumps({"num_classes": manifest.num_classes, "class_names": manifest.class_names})]
    for r in manifest.records:
        lines.append(
            json.dumps(
                {
                    "clip_id": r.clip_id,
                    "label_id": r.label_id,
                    "label_name": r.label_name,
                    "split": r.split.value,
                    "t_clip": r.t_clip,
                    "visual_path": r.visual_path,
                    "skeleton_path": r.skeleton_path,
                },
                sort_keys=True,
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


def load_manifest(path: str | Path, verify: bool = False) -> DatasetManifest:
    """Load a manifest; relative file paths are resolved against its directory.

    With verify=True every referenced file is opened and its frame count is
    cross-checked against t_clip.
    """
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as e:
        raise FileNotFoundError(f"manifest {path}: {e}") from e
    if not lines:
        raise ManifestError(f"{path}: empty manifest")
    try:
        head = json.loads(lines[0])
        manifest = DatasetManifest(
            num_classes=int(head["num_classes"]),
            class_names=list(head["class_names"]),
        )
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise ManifestError(f"{path}: bad header line: {e}") from e
    base = path.parent
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            record = ClipRecord(
                clip_id=str(rec["clip_id"]),
                label_id=int(rec["label_id"]),
                label_name=str(rec["label_name"]),
                split=Split(rec["split"]),
                t_clip=int(rec["t_clip"]),
                visual_path=str((base / rec["visual_path"]).resolve()),
                skeleton_path=str((base / rec["skeleton_path"]).resolve()),
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise ManifestError(f"{path}:{i}: bad record: {e}") from e
        manifest.records.append(record)
    manifest.validate()
    if verify:
        for r in manifest.records:
            for p, modality in ((r.visual_path, Modality.VISUAL), (r.skeleton_path, Modality.SKELETON)):
                if not Path(p).exists():
                    raise FileNotFoundError(f"{r.clip_id}: missing {p}")
                seq = read_sequence(p)
                if seq.modality is not modality:
                    raise ManifestError(f"{r.clip_id}: {p} holds {seq.modality.name}, expected {modality.name}")
                if seq.t != r.t_clip:
                    raise ManifestError(f"{r.clip_id}: {p} has {seq.t} frames, manifest says {r.t_clip}")
    return manifest
