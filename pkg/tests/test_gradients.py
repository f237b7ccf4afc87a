"""Finite-difference checks of every trained parameter's gradient."""
import numpy as np
import pytest
import torch

from crossfuse.model import ModelConfig, build_model, classification_loss, loss_and_gradients
from gradcheck import entry_indices, finite_difference_report

torch.set_num_threads(1)


def _inputs(cfg, batch, t, seed=7):
    rng = np.random.default_rng(seed)
    visual = torch.from_numpy(rng.normal(size=(batch, t, cfg.d_v)))
    skeleton = torch.from_numpy(rng.normal(size=(batch, t, cfg.d_s)))
    labels = torch.from_numpy(rng.integers(0, cfg.num_classes, size=batch))
    return visual, skeleton, labels


def _check(variant, cfg, batch=2, tol=1e-3):
    model = build_model(variant, cfg, seed=3).double()
    visual, skeleton, labels = _inputs(cfg, batch, cfg.seq_len)
    worst, rows = finite_difference_report(model, visual, skeleton, labels)
    bad = [r for r in rows if r[4] >= tol]
    assert not bad, f"{variant}: worst rel err {worst:.2e}, first offender {bad[0]}"
    return worst, len(rows)


class TestEntrySampling:
    def test_small_tensor_fully_covered(self):
        rng = np.random.default_rng(0)
        idx = entry_indices((8, 8), rng)
        assert len(idx) == 64
        assert len(set(idx)) == 64

    def test_large_tensor_sampled_without_replacement(self):
        rng = np.random.default_rng(0)
        idx = entry_indices((9, 8), rng)
        assert len(idx) == 32
        assert len(set(idx)) == 32
        assert all(0 <= i < 9 and 0 <= j < 8 for i, j in idx)

    def test_sampling_is_seeded(self):
        a = entry_indices((20, 20), np.random.default_rng(5))
        b = entry_indices((20, 20), np.random.default_rng(5))
        assert a == b


class TestLossSurface:
    def test_loss_matches_manual_cross_entropy(self):
        cfg = ModelConfig(num_classes=4, d_v=6, d_s=5, d_model=8, n_layers=1,
                          n_heads=2, ffn_dim=12, dropout=0.0, seq_len=4, probe_layers=1)
        model = build_model("cross", cfg, seed=0).double()
        visual, skeleton, labels = _inputs(cfg, 3, cfg.seq_len)
        with torch.no_grad():
            logits = model(visual, skeleton)
        z = logits.numpy()
        z = z - z.max(axis=1, keepdims=True)
        p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        want = -np.mean([np.log(p[i, labels[i]]) for i in range(3)])
        got = float(classification_loss(logits, labels))
        assert got == pytest.approx(want, rel=1e-12)

    def test_every_parameter_receives_gradient(self):
        cfg = ModelConfig(num_classes=3, d_v=6, d_s=5, d_model=8, n_layers=1,
                          n_heads=2, ffn_dim=12, dropout=0.0, seq_len=4, probe_layers=1)
        model = build_model("cross", cfg, seed=0).double()
        visual, skeleton, labels = _inputs(cfg, 2, cfg.seq_len)
        _, grads = loss_and_gradients(model, visual, skeleton, labels)
        names = {n for n, _ in model.named_parameters()}
        assert set(grads) == names
        dead = [n for n, g in grads.items() if float(g.abs().max()) == 0.0]
        assert not dead, f"parameters with identically zero gradient: {dead}"


class TestFiniteDifference:
    # scaled down from the trained sizes so autograd is checked through every
    # module type without hours of perturbation
    def test_cross_attention_model(self):
        cfg = ModelConfig(num_classes=3, d_v=9, d_s=6, d_model=8, n_layers=1,
                          n_heads=2, ffn_dim=12, dropout=0.0, seq_len=5, probe_layers=1)
        worst, n = _check("cross", cfg)
        assert n > 300

    def test_early_fusion_model(self):
        cfg = ModelConfig(num_classes=3, d_v=9, d_s=6, d_model=8, n_layers=1,
                          n_heads=2, ffn_dim=12, dropout=0.0, seq_len=5, probe_layers=1)
        _check("early", cfg)

    def test_visual_probe(self):
        cfg = ModelConfig(num_classes=3, d_v=9, d_s=6, d_model=8, n_layers=1,
                          n_heads=2, ffn_dim=12, dropout=0.0, seq_len=5, probe_layers=1)
        _check("vprobe", cfg)

    def test_skeleton_probe(self):
        cfg = ModelConfig(num_classes=3, d_v=9, d_s=6, d_model=8, n_layers=1,
                          n_heads=2, ffn_dim=12, dropout=0.0, seq_len=5, probe_layers=1)
        _check("sprobe", cfg)

    def test_two_fusion_layers(self):
        # depth >1 exercises the cross-stream dependency between layers
        cfg = ModelConfig(num_classes=3, d_v=7, d_s=5, d_model=8, n_layers=2,
                          n_heads=2, ffn_dim=10, dropout=0.0, seq_len=4, probe_layers=1)
        _check("cross", cfg)
