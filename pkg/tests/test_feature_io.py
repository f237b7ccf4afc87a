import struct

import numpy as np
import pytest

from crossfuse.feature_io import (
    MAGIC,
    NUM_JOINTS,
    VISUAL_DIM,
    BadMagicError,
    ClipRecord,
    DatasetManifest,
    DimMismatchError,
    FeatureSequence,
    InvalidValueError,
    ManifestError,
    Modality,
    Split,
    TruncatedFileError,
    UnsupportedDtypeError,
    UnsupportedVersionError,
    load_manifest,
    read_sequence,
    save_manifest,
    write_sequence,
)
from conftest import make_skeleton, make_visual


def test_round_trip_visual_bit_exact(tmp_path, rng):
    seq = make_visual(rng, t=5)
    path = tmp_path / f"{seq.clip_id}.fseq"
    write_sequence(seq, path)
    back = read_sequence(path)
    assert back.clip_id == seq.clip_id
    assert back.modality is Modality.VISUAL
    assert back.data.shape == (5, VISUAL_DIM)
    assert np.array_equal(back.data, seq.data)
    assert back.data.tobytes() == seq.data.tobytes()


def test_round_trip_skeleton_ramp(tmp_path):
    # known ramp payload: exact float32 values must come back bit for bit
    t = 3
    ramp = (np.arange(t * NUM_JOINTS * 3, dtype=np.float64) * 0.001).astype(np.float32)
    seq = FeatureSequence("ramp", Modality.SKELETON, ramp.reshape(t, NUM_JOINTS, 3))
    path = tmp_path / "ramp.fseq"
    write_sequence(seq, path)
    back = read_sequence(path)
    assert back.modality is Modality.SKELETON
    assert back.data.shape == (t, NUM_JOINTS, 3)
    assert back.data.tobytes() == seq.data.tobytes()


def test_header_layout_is_what_the_docs_say(tmp_path, rng):
    seq = make_visual(rng, t=2)
    path = tmp_path / "h.fseq"
    write_sequence(seq, path)
    raw = path.read_bytes()
    assert raw[:4] == MAGIC
    version, modality, ndim = struct.unpack_from("<IBB", raw, 4)
    assert (version, modality, ndim) == (1, 0, 2)
    dims = struct.unpack_from("<2I", raw, 10)
    assert dims == (2, VISUAL_DIM)
    (dtype_code,) = struct.unpack_from("<B", raw, 18)
    assert dtype_code == 1
    assert len(raw) == 19 + 2 * VISUAL_DIM * 4


def test_bad_magic(tmp_path, rng):
    path = tmp_path / "x.fseq"
    write_sequence(make_visual(rng), path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"NOPE"
    path.write_bytes(bytes(raw))
    with pytest.raises(BadMagicError):
        read_sequence(path)


def test_unsupported_version(tmp_path, rng):
    path = tmp_path / "x.fseq"
    write_sequence(make_visual(rng), path)
    raw = bytearray(path.read_bytes())
    struct.pack_into("<I", raw, 4, 9)
    path.write_bytes(bytes(raw))
    with pytest.raises(UnsupportedVersionError):
        read_sequence(path)


def test_unsupported_dtype(tmp_path, rng):
    path = tmp_path / "x.fseq"
    write_sequence(make_visual(rng, t=2), path)
    raw = bytearray(path.read_bytes())
    raw[18] = 7  # dtype byte for a 2-dim visual header
    path.write_bytes(bytes(raw))
    with pytest.raises(UnsupportedDtypeError):
        read_sequence(path)


def test_truncated_payload(tmp_path, rng):
    path = tmp_path / "x.fseq"
    write_sequence(make_visual(rng, t=3), path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-10])
    with pytest.raises(TruncatedFileError):
        read_sequence(path)


def test_truncated_header(tmp_path):
    path = tmp_path / "x.fseq"
    path.write_bytes(MAGIC + b"\x01")
    with pytest.raises(TruncatedFileError):
        read_sequence(path)


def test_trailing_bytes_are_ignored(tmp_path, rng):
    # files may carry an opaque trailer after the payload
    seq = make_visual(rng, t=2)
    path = tmp_path / "t.fseq"
    write_sequence(seq, path)
    with open(path, "ab") as f:
        f.write(b"raw-pose-params-blob")
    back = read_sequence(path)
    assert np.array_equal(back.data, seq.data)


def test_dim_mismatch_visual_width(tmp_path, rng):
    seq = make_visual(rng, t=2)
    path = tmp_path / "x.fseq"
    write_sequence(seq, path)
    raw = bytearray(path.read_bytes())
    struct.pack_into("<I", raw, 14, VISUAL_DIM + 1)  # second dim of the header
    path.write_bytes(bytes(raw))
    with pytest.raises((DimMismatchError, TruncatedFileError)):
        read_sequence(path)


def test_wrong_shape_rejected_on_write(rng, tmp_path):
    bad = FeatureSequence("bad", Modality.VISUAL, rng.normal(size=(4, 100)).astype(np.float32))
    with pytest.raises(DimMismatchError):
        write_sequence(bad, tmp_path / "bad.fseq")
    assert not (tmp_path / "bad.fseq").exists()


def test_nan_rejected_on_write_no_file(rng, tmp_path):
    seq = make_visual(rng, t=2)
    seq.data[1, 3] = np.nan
    with pytest.raises(InvalidValueError):
        write_sequence(seq, tmp_path / "nan.fseq")
    assert not (tmp_path / "nan.fseq").exists()


def test_nan_rejected_on_read(rng, tmp_path):
    seq = make_visual(rng, t=2)
    path = tmp_path / "x.fseq"
    write_sequence(seq, path)
    raw = bytearray(path.read_bytes())
    struct.pack_into("<f", raw, 19, float("inf"))
    path.write_bytes(bytes(raw))
    with pytest.raises(InvalidValueError):
        read_sequence(path)


def _toy_manifest(tmp_path, rng, n=4, num_classes=2):
    names = [f"c{k}" for k in range(num_classes)]
    records = []
    for i in range(n):
        cid = f"clip_{i}"
        v = make_visual(rng, t=3, clip_id=cid)
        s = make_skeleton(rng, t=3, clip_id=cid)
        write_sequence(v, tmp_path / f"{cid}_v.fseq")
        write_sequence(s, tmp_path / f"{cid}_s.fseq")
        records.append(
            ClipRecord(cid, i % num_classes, names[i % num_classes],
                       Split.TRAIN if i % 2 == 0 else Split.VAL, 3,
                       f"{cid}_v.fseq", f"{cid}_s.fseq")
        )
    return DatasetManifest(num_classes=num_classes, class_names=names, records=records)


def test_manifest_round_trip(tmp_path, rng):
    manifest = _toy_manifest(tmp_path, rng)
    path = tmp_path / "manifest.jsonl"
    save_manifest(manifest, path)
    back = load_manifest(path, verify=True)
    assert back.num_classes == manifest.num_classes
    assert back.class_names == manifest.class_names
    assert len(back.records) == len(manifest.records)
    assert [r.clip_id for r in back.records] == [r.clip_id for r in manifest.records]
    assert all(r.visual_path.startswith(str(tmp_path)) for r in back.records)


def test_manifest_duplicate_clip_id(tmp_path, rng):
    manifest = _toy_manifest(tmp_path, rng)
    manifest.records[1].clip_id = manifest.records[0].clip_id
    with pytest.raises(ManifestError, match="duplicate"):
        manifest.validate()


def test_manifest_unknown_label(tmp_path, rng):
    manifest = _toy_manifest(tmp_path, rng)
    manifest.records[0].label_id = 5
    with pytest.raises(ManifestError, match="label_id"):
        manifest.validate()


def test_manifest_verify_missing_file(tmp_path, rng):
    manifest = _toy_manifest(tmp_path, rng)
    path = tmp_path / "manifest.jsonl"
    save_manifest(manifest, path)
    (tmp_path / "clip_0_v.fseq").unlink()
    load_manifest(path)  # lazy load is fine
    with pytest.raises(FileNotFoundError):
        load_manifest(path, verify=True)


def test_manifest_verify_t_clip_mismatch(tmp_path, rng):
    manifest = _toy_manifest(tmp_path, rng)
    manifest.records[0].t_clip = 99
    path = tmp_path / "manifest.jsonl"
    save_manifest(manifest, path)
    with pytest.raises(ManifestError, match="frames"):
        load_manifest(path, verify=True)
