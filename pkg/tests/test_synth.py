"""Structural checks on the synthetic datasets.

The generators are the ground for every training claim in the suite, so these
tests recover the planted signal from the written files alone: spectra for
oscillation periods, projections for visual directions, correlation signs for
phase bits.
"""
import numpy as np
import pytest

from crossfuse.feature_io import Split, load_manifest, read_sequence
from crossfuse.synth import (
    BASE_PERIOD,
    SIGNAL_JOINT,
    SynthSpec,
    gen_occlusion_variant,
    gen_unimodal_task,
    gen_xor_task,
)


def _files_equal(dir_a, dir_b, names):
    for n in names:
        if (dir_a / n).read_bytes() != (dir_b / n).read_bytes():
            return False
    return True


def _mean_rows(manifest):
    return np.stack([read_sequence(r.visual_path).data.mean(axis=0) for r in manifest.records])


def _split_half_separation(manifest):
    """Estimate a discriminant on even clips, score odd clips along it.

    Returns (gap between class means, pooled std) of the held-out projections.
    Pure-noise features give gap ~ std; a planted direction gives gap >> std.
    """
    rows = _mean_rows(manifest)
    labels = np.array([r.label_id for r in manifest.records])
    est = (np.arange(len(labels)) // 2) % 2 == 0  # labels alternate, so split by pairs
    d = rows[est & (labels == 0)].mean(axis=0) - rows[est & (labels == 1)].mean(axis=0)
    d /= np.linalg.norm(d)
    proj = rows[~est] @ d
    lab = labels[~est]
    gap = abs(proj[lab == 0].mean() - proj[lab == 1].mean())
    pooled = np.sqrt(0.5 * (proj[lab == 0].var(ddof=1) + proj[lab == 1].var(ddof=1)))
    return gap, pooled


def _y_trace(record):
    joints = read_sequence(record.skeleton_path).data
    trace = joints[:, SIGNAL_JOINT, 1].astype(np.float64)
    return trace - trace.mean()


class TestDeterminism:
    def test_unimodal_rerun_is_byte_identical(self, tmp_path):
        spec = SynthSpec(n_clips=10, t_clip=12, num_classes=2, seed=3)
        a = gen_unimodal_task("visual", spec, tmp_path / "a")
        gen_unimodal_task("visual", spec, tmp_path / "b")
        names = [f"{r.clip_id}_v.fseq" for r in a.records]
        names += [f"{r.clip_id}_s.fseq" for r in a.records]
        names.append("manifest.jsonl")
        assert _files_equal(tmp_path / "a", tmp_path / "b", names)

    def test_xor_rerun_is_byte_identical(self, tmp_path):
        spec = SynthSpec(n_clips=10, t_clip=16, num_classes=2, seed=1)
        a = gen_xor_task(spec, tmp_path / "a")
        gen_xor_task(spec, tmp_path / "b")
        names = [f"{r.clip_id}_v.fseq" for r in a.records] + ["manifest.jsonl"]
        assert _files_equal(tmp_path / "a", tmp_path / "b", names)

    def test_different_seeds_differ(self, tmp_path):
        a = gen_unimodal_task("visual", SynthSpec(8, 8, 2, seed=0), tmp_path / "a")
        gen_unimodal_task("visual", SynthSpec(8, 8, 2, seed=1), tmp_path / "b")
        n = f"{a.records[0].clip_id}_v.fseq"
        m = n.replace("uni_v_0", "uni_v_1")
        assert (tmp_path / "a" / n).read_bytes() != (tmp_path / "b" / m).read_bytes()


class TestLayout:
    def test_labels_balanced_within_one(self, tmp_path):
        m = gen_unimodal_task("skeleton", SynthSpec(22, 8, 4, seed=0), tmp_path / "d")
        counts = np.bincount([r.label_id for r in m.records], minlength=4)
        assert counts.max() - counts.min() <= 1

    def test_split_is_stratified(self, tmp_path):
        m = gen_unimodal_task("skeleton", SynthSpec(40, 8, 4, seed=0), tmp_path / "d")
        for c in range(4):
            val = [r for r in m.records if r.label_id == c and r.split is Split.VAL]
            total = [r for r in m.records if r.label_id == c]
            assert len(val) == max(1, round(0.2 * len(total)))

    def test_manifest_loadable_and_verifiable(self, tmp_path):
        gen_unimodal_task("visual", SynthSpec(6, 8, 2, seed=0), tmp_path / "d")
        m = load_manifest(tmp_path / "d" / "manifest.jsonl", verify=True)
        assert len(m.records) == 6

    def test_rejects_bad_modality(self, tmp_path):
        with pytest.raises(ValueError):
            gen_unimodal_task("audio", SynthSpec(6, 8, 2, seed=0), tmp_path / "d")

    def test_rejects_fewer_clips_than_classes(self, tmp_path):
        with pytest.raises(ValueError):
            gen_unimodal_task("visual", SynthSpec(2, 8, 3, seed=0), tmp_path / "d")


class TestSkeletonTask:
    def test_oscillation_peaks_at_class_period(self, tmp_path):
        spec = SynthSpec(n_clips=8, t_clip=48, num_classes=2, seed=5, osc_amplitude=0.8)
        m = gen_unimodal_task("skeleton", spec, tmp_path / "d")
        for r in m.records:
            period = BASE_PERIOD * (r.label_id + 1)
            spectrum = np.abs(np.fft.rfft(_y_trace(r)))
            assert int(np.argmax(spectrum[1:])) + 1 == 48 // period

    def test_visual_stream_is_uninformative(self, tmp_path):
        spec = SynthSpec(n_clips=32, t_clip=32, num_classes=2, seed=5)
        m = gen_unimodal_task("skeleton", spec, tmp_path / "d")
        gap, std = _split_half_separation(m)
        # held-out projections of pure noise: class gap stays at noise level
        assert gap < 2.0 * std


class TestVisualTask:
    def test_class_directions_separate_centroids(self, tmp_path):
        spec = SynthSpec(n_clips=32, t_clip=32, num_classes=2, seed=2)
        m = gen_unimodal_task("visual", spec, tmp_path / "d")
        gap, std = _split_half_separation(m)
        assert gap > 3.0 * std

    def test_skeleton_has_no_oscillation(self, tmp_path):
        spec = SynthSpec(n_clips=6, t_clip=48, num_classes=2, seed=2, osc_amplitude=0.8)
        m = gen_unimodal_task("visual", spec, tmp_path / "d")
        for r in m.records:
            spectrum = np.abs(np.fft.rfft(_y_trace(r)))
            # jitter-only trace: no bin should dominate the way a wave does
            assert spectrum[1:].max() < 0.5 * 48 * 0.8 / 2

    def test_signal_density_controls_carrier_fraction(self, tmp_path):
        spec = SynthSpec(n_clips=16, t_clip=32, num_classes=2, seed=9,
                         signal_scale=6.0, noise_scale=0.01, signal_density=0.25)
        m = gen_unimodal_task("visual", spec, tmp_path / "d")
        labels = np.array([r.label_id for r in m.records])
        rows = _mean_rows(m)
        carriers = 0
        total = 0
        for c in (0, 1):
            d_est = rows[labels == c].mean(axis=0)
            d_est /= np.linalg.norm(d_est)
            for r in np.array(m.records)[labels == c]:
                dots = read_sequence(r.visual_path).data @ d_est
                carriers += int((dots > 3.0).sum())
                total += dots.size
        frac = carriers / total
        assert 0.15 < frac < 0.35

    def test_zero_density_still_plants_one_carrier_per_clip(self, tmp_path):
        spec = SynthSpec(n_clips=8, t_clip=16, num_classes=2, seed=9,
                         signal_scale=6.0, noise_scale=0.01, signal_density=0.0)
        m = gen_unimodal_task("visual", spec, tmp_path / "d")
        labels = np.array([r.label_id for r in m.records])
        rows = _mean_rows(m)
        for c in (0, 1):
            d_est = rows[labels == c].mean(axis=0)
            d_est /= np.linalg.norm(d_est)
            for r in np.array(m.records)[labels == c]:
                dots = read_sequence(r.visual_path).data @ d_est
                assert int((dots > 3.0).sum()) == 1


class TestXorTask:
    def _estimate_bits(self, manifest):
        rows = _mean_rows(manifest)
        d_est = rows[0] / np.linalg.norm(rows[0])  # one clip anchors the sign
        vbits = (rows @ d_est > 0).astype(int)
        period = 2 * BASE_PERIOD
        sbits = []
        for r in manifest.records:
            trace = _y_trace(r)
            t = np.arange(trace.size)
            corr = float(trace @ np.sin(2.0 * np.pi * t / period))
            sbits.append(int(corr < 0))
        return vbits, np.array(sbits)

    def test_label_is_exactly_xor_of_recovered_bits(self, tmp_path):
        spec = SynthSpec(n_clips=64, t_clip=32, num_classes=2, seed=4,
                         signal_scale=6.0, osc_amplitude=1.0)
        m = gen_xor_task(spec, tmp_path / "d")
        labels = np.array([r.label_id for r in m.records])
        vbits, sbits = self._estimate_bits(m)
        k = labels[0] ^ vbits[0] ^ sbits[0]  # visual anchor has unknown polarity
        assert np.array_equal(labels, vbits ^ sbits ^ k)

    def test_marginals_are_balanced(self, tmp_path):
        spec = SynthSpec(n_clips=128, t_clip=32, num_classes=2, seed=4,
                         signal_scale=6.0, osc_amplitude=1.0)
        m = gen_xor_task(spec, tmp_path / "d")
        labels = np.array([r.label_id for r in m.records])
        vbits, sbits = self._estimate_bits(m)
        for bits in (vbits, sbits):
            for b in (0, 1):
                frac = labels[bits == b].mean()
                assert abs(frac - 0.5) < 0.2, "a single modality must not predict the label"

    def test_val_split_covers_all_bit_cells(self, tmp_path):
        spec = SynthSpec(n_clips=64, t_clip=32, num_classes=2, seed=4,
                         signal_scale=6.0, osc_amplitude=1.0)
        m = gen_xor_task(spec, tmp_path / "d")
        vbits, sbits = self._estimate_bits(m)
        val = [i for i, r in enumerate(m.records) if r.split is Split.VAL]
        cells = {(int(vbits[i]), int(sbits[i])) for i in val}
        assert cells == {(0, 0), (0, 1), (1, 0), (1, 1)}


class TestOcclusion:
    def _source(self, tmp_path, n=10, t=16):
        spec = SynthSpec(n_clips=n, t_clip=t, num_classes=2, seed=6, signal_scale=6.0)
        return gen_unimodal_task("visual", spec, tmp_path / "src")

    def test_zero_rate_copies_bytes(self, tmp_path):
        m = self._source(tmp_path)
        gen_occlusion_variant(tmp_path / "src" / "manifest.jsonl", 0.0, seed=0,
                              out_dir=tmp_path / "occ")
        names = [f"{r.clip_id}_{s}.fseq" for r in m.records for s in ("v", "s")]
        assert _files_equal(tmp_path / "src", tmp_path / "occ", names)

    def test_masked_rows_are_mean_or_original(self, tmp_path):
        m = self._source(tmp_path)
        occ = gen_occlusion_variant(tmp_path / "src" / "manifest.jsonl", 0.5, seed=0,
                                    out_dir=tmp_path / "occ")
        all_rows = np.concatenate([read_sequence(r.visual_path).data for r in m.records])
        mean_row = all_rows.mean(axis=0, dtype=np.float64).astype(np.float32)
        masked = 0
        total = 0
        for src_r, occ_r in zip(m.records, occ.records):
            a = read_sequence(src_r.visual_path).data
            b = read_sequence(occ_r.visual_path).data
            for i in range(a.shape[0]):
                if np.array_equal(a[i], b[i]):
                    continue
                assert np.array_equal(b[i], mean_row)
                masked += 1
            total += a.shape[0]
        assert 0.3 < masked / total < 0.7

    def test_skeleton_frames_zeroed(self, tmp_path):
        self._source(tmp_path)
        occ = gen_occlusion_variant(tmp_path / "src" / "manifest.jsonl", 0.5, seed=0,
                                    out_dir=tmp_path / "occ")
        zeroed = 0
        total = 0
        for r in occ.records:
            joints = read_sequence(r.skeleton_path).data
            zeroed += int((np.abs(joints).reshape(joints.shape[0], -1).max(axis=1) == 0).sum())
            total += joints.shape[0]
        assert 0.3 < zeroed / total < 0.7

    def test_visual_only_mode_keeps_skeleton(self, tmp_path):
        m = self._source(tmp_path)
        gen_occlusion_variant(tmp_path / "src" / "manifest.jsonl", 0.5, seed=0,
                              out_dir=tmp_path / "occ", modalities=("visual",))
        names = [f"{r.clip_id}_s.fseq" for r in m.records]
        assert _files_equal(tmp_path / "src", tmp_path / "occ", names)
        vnames = [f"{r.clip_id}_v.fseq" for r in m.records]
        assert not _files_equal(tmp_path / "src", tmp_path / "occ", vnames)

    def test_skeleton_only_mode_keeps_visual(self, tmp_path):
        m = self._source(tmp_path)
        gen_occlusion_variant(tmp_path / "src" / "manifest.jsonl", 0.5, seed=0,
                              out_dir=tmp_path / "occ", modalities=("skeleton",))
        names = [f"{r.clip_id}_v.fseq" for r in m.records]
        assert _files_equal(tmp_path / "src", tmp_path / "occ", names)

    def test_same_seed_reproduces_masks(self, tmp_path):
        m = self._source(tmp_path)
        gen_occlusion_variant(tmp_path / "src" / "manifest.jsonl", 0.5, seed=3,
                              out_dir=tmp_path / "a")
        gen_occlusion_variant(tmp_path / "src" / "manifest.jsonl", 0.5, seed=3,
                              out_dir=tmp_path / "b")
        names = [f"{r.clip_id}_{s}.fseq" for r in m.records for s in ("v", "s")]
        assert _files_equal(tmp_path / "a", tmp_path / "b", names)

    def test_labels_and_splits_preserved(self, tmp_path):
        m = self._source(tmp_path)
        occ = gen_occlusion_variant(tmp_path / "src" / "manifest.jsonl", 0.5, seed=0,
                                    out_dir=tmp_path / "occ")
        for a, b in zip(m.records, occ.records):
            assert (a.clip_id, a.label_id, a.split) == (b.clip_id, b.label_id, b.split)

    def test_rejects_bad_rate_and_modalities(self, tmp_path):
        self._source(tmp_path)
        with pytest.raises(ValueError):
            gen_occlusion_variant(tmp_path / "src" / "manifest.jsonl", 1.5, seed=0,
                                  out_dir=tmp_path / "occ")
        with pytest.raises(ValueError):
            gen_occlusion_variant(tmp_path / "src" / "manifest.jsonl", 0.5, seed=0,
                                  out_dir=tmp_path / "occ", modalities=("audio",))
