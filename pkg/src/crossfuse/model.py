"""Fusion transformer over a visual token stream and a skeleton token stream.

Each stream is linearly projected to d_model, gets its own learnable class
token at position 0 and sinusoidal position encodings, and runs through
n_layers fusion layers. A fusion layer does, per stream: cross-attention
into the other stream (both directions computed from the previous layer's
outputs, so the update is simultaneous), an FFN, self-attention, another
FFN, every sublayer post-norm residual: x = LN(x + sublayer(x)).
Classification reads the two class tokens, concatenated, through a small
MLP head. Logits everywhere; softmax only happens in the loss or when
probabilities are requested.

Variants sharing the same pieces: an early-fusion model (per-frame concat
into one stream, plain self-attention trunk), unimodal probes (one stream,
shallow trunk), and late fusion (mean of two probes' softmax outputs).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import torch
import torch.nn as nn
import torch.nn.functional as F


class NonFiniteActivationError(RuntimeError):
    """NaN/Inf appeared in a named sub-layer's output."""


class ShapeError(ValueError):
    pass


@dataclass
class ModelConfig:
    num_classes: int
    d_v: int = 1408  # per-frame visual embedding width
    d_s: int = 72  # flattened skeleton width (24 joints x 3)
    d_model: int = 512
    n_layers: int = 4
    n_heads: int = 8
    ffn_dim: int = 2048
    dropout: float = 0.1
    seq_len: int = 64  # frames after temporal sampling; +1 class token inside
    probe_layers: int = 2

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ValueError(f"num_classes {self.num_classes}")
        for name in ("d_v", "d_s", "d_model", "n_layers", "n_heads", "ffn_dim", "seq_len", "probe_layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} = {getattr(self, name)}")
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout {self.dropout}")

    def to_dict(self) -> dict:
        return asdict(self)


def sinusoidal_positions(n_positions: int, d_model: int, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """[n_positions, d_model] with pe[p, 2i] = sin(p / 10000^(2i/d)), pe[p, 2i+1] = cos(same)."""
    pos = torch.arange(n_positions, dtype=torch.float64).unsqueeze(1)
    i2 = torch.arange(0, d_model, 2, dtype=torch.float64)
    angles = pos / torch.pow(10000.0, i2 / d_model)
    pe = torch.zeros(n_positions, d_model, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(angles)
    pe[:, 1::2] = torch.cos(angles[:, : d_model // 2])
    return pe.to(dtype)


def _check_finite(x: torch.Tensor, name: str) -> torch.Tensor:
    if not torch.isfinite(x).all():
        raise NonFiniteActivationError(f"non-finite activation in {name}")
    return x


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention; K and V always come from the same stream."""

    def __init__(self, d_model: int, n_heads: int, dropout: float):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.out_proj = nn.Linear(d_model, d_model)
        self.attn_drop = nn.Dropout(dropout)

    def forward(self, query: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        b, tq, d = query.shape
        tc = context.shape[1]
        q = self.q_proj(query).view(b, tq, self.n_heads, self.d_head).transpose(1, 2)
        k = self.k_proj(context).view(b, tc, self.n_heads, self.d_head).transpose(1, 2)
        v = self.v_proj(context).view(b, tc, self.n_heads, self.d_head).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_head)
        attn = self.attn_drop(torch.softmax(scores, dim=-1))
        ctx = (attn @ v).transpose(1, 2).reshape(b, tq, d)
        return self.out_proj(ctx)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, ffn_dim: int, dropout: float):
        super().__init__()
        self.fc1 = nn.Linear(d_model, ffn_dim)
        self.fc2 = nn.Linear(ffn_dim, d_model)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.drop(self.fc2(self.drop(F.gelu(self.fc1(x)))))


class AttentionBlock(nn.Module):
    """attention + FFN, each post-norm residual. context=None means self-attention."""

    def __init__(self, d_model: int, n_heads: int, ffn_dim: int, dropout: float):
        super().__init__()
        self.attn = MultiHeadAttention(d_model, n_heads, dropout)
        self.norm_attn = nn.LayerNorm(d_model)
        self.ffn = FeedForward(d_model, ffn_dim, dropout)
        self.norm_ffn = nn.LayerNorm(d_model)

    def forward(self, x: torch.Tensor, context: torch.Tensor | None = None) -> torch.Tensor:
        c = x if context is None else context
        x = self.norm_attn(x + self.attn(x, c))
        x = self.norm_ffn(x + self.ffn(x))
        return x


class FusionLayer(nn.Module):
    """One bidirectional fusion step over (visual, skeleton) token streams."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cross_v = AttentionBlock(cfg.d_model, cfg.n_heads, cfg.ffn_dim, cfg.dropout)
        self.cross_s = AttentionBlock(cfg.d_model, cfg.n_heads, cfg.ffn_dim, cfg.dropout)
        self.self_v = AttentionBlock(cfg.d_model, cfg.n_heads, cfg.ffn_dim, cfg.dropout)
        self.self_s = AttentionBlock(cfg.d_model, cfg.n_heads, cfg.ffn_dim, cfg.dropout)
        self.name = "fusion_layer"

    def forward(self, z_v: torch.Tensor, z_s: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        # both cross updates read the previous layer's outputs (simultaneous update)
        v = _check_finite(self.cross_v(z_v, z_s), f"{self.name}.cross_v")
        s = _check_finite(self.cross_s(z_s, z_v), f"{self.name}.cross_s")
        v = _check_finite(self.self_v(v), f"{self.name}.self_v")
        s = _check_finite(self.self_s(s), f"{self.name}.self_s")
        return v, s


class ClassifierHead(nn.Module):
    def __init__(self, d_in: int, d_hidden: int, num_classes: int, dropout: float):
        super().__init__()
        self.fc1 = nn.Linear(d_in, d_hidden)
        self.drop = nn.Dropout(dropout)
        self.fc2 = nn.Linear(d_hidden, num_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.drop(F.gelu(self.fc1(x))))


def _embed(x: torch.Tensor, proj: nn.Linear, cls: torch.Tensor, pe: torch.Tensor,
           drop: nn.Dropout, name: str) -> torch.Tensor:
    """Project, prepend the class token, add position encodings, dropout (train only)."""
    b, t, _ = x.shape
    if t + 1 != pe.shape[0]:
        raise ShapeError(f"{name}: {t} frames but position table holds {pe.shape[0]} rows (expected {pe.shape[0] - 1} frames)")
    z = proj(x)
    z = torch.cat([cls.to(z.dtype).expand(b, 1, -1), z], dim=1)
    z = z + pe.to(z.dtype).unsqueeze(0)
    return drop(z)


class CrossAttentionFusionModel(nn.Module):
    """The main two-stream model; forward(visual, skeleton) -> logits."""

    variant = "cross"

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.visual_proj = nn.Linear(cfg.d_v, cfg.d_model)
        self.skeleton_proj = nn.Linear(cfg.d_s, cfg.d_model)
        self.cls_visual = nn.Parameter(torch.zeros(cfg.d_model))
        self.cls_skeleton = nn.Parameter(torch.zeros(cfg.d_model))
        self.register_buffer("pe", sinusoidal_positions(cfg.seq_len + 1, cfg.d_model, dtype=torch.float64))
        self.embed_drop = nn.Dropout(cfg.dropout)
        self.layers = nn.ModuleList(FusionLayer(cfg) for _ in range(cfg.n_layers))
        for i, layer in enumerate(self.layers):
            layer.name = f"fusion_layer[{i}]"
        self.head = ClassifierHead(2 * cfg.d_model, cfg.d_model, cfg.num_classes, cfg.dropout)
        init_parameters(self)

    def embed_streams(self, visual: torch.Tensor, skeleton: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        _check_inputs(visual, skeleton, self.cfg)
        z_v = _embed(visual, self.visual_proj, self.cls_visual, self.pe, self.embed_drop, "visual")
        z_s = _embed(skeleton, self.skeleton_proj, self.cls_skeleton, self.pe, self.embed_drop, "skeleton")
        return z_v, z_s

    def forward(self, visual: torch.Tensor, skeleton: torch.Tensor) -> torch.Tensor:
        z_v, z_s = self.embed_streams(visual, skeleton)
        for layer in self.layers:
            z_v, z_s = layer(z_v, z_s)
        pooled = torch.cat([z_v[:, 0], z_s[:, 0]], dim=-1)
        return _check_finite(self.head(pooled), "head")


class EarlyFusionModel(nn.Module):
    """Per-frame concat of the two projected streams into one token stream."""

    variant = "early"

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.visual_proj = nn.Linear(cfg.d_v, cfg.d_model)
        self.skeleton_proj = nn.Linear(cfg.d_s, cfg.d_model)
        self.fuse_proj = nn.Linear(2 * cfg.d_model, cfg.d_model)
        self.cls = nn.Parameter(torch.zeros(cfg.d_model))
        self.register_buffer("pe", sinusoidal_positions(cfg.seq_len + 1, cfg.d_model, dtype=torch.float64))
        self.embed_drop = nn.Dropout(cfg.dropout)
        self.layers = nn.ModuleList(
            AttentionBlock(cfg.d_model, cfg.n_heads, cfg.ffn_dim, cfg.dropout) for _ in range(cfg.n_layers)
        )
        self.head = ClassifierHead(cfg.d_model, cfg.d_model, cfg.num_classes, cfg.dropout)
        init_parameters(self)

    def forward(self, visual: torch.Tensor, skeleton: torch.Tensor) -> torch.Tensor:
        _check_inputs(visual, skeleton, self.cfg)
        fused = torch.cat([self.visual_proj(visual), self.skeleton_proj(skeleton)], dim=-1)
        z = _embed(fused, self.fuse_proj, self.cls, self.pe, self.embed_drop, "early")
        for i, layer in enumerate(self.layers):
            z = _check_finite(layer(z), f"early_layer[{i}]")
        return _check_finite(self.head(z[:, 0]), "head")


class UnimodalProbe(nn.Module):
    """Single-stream transformer classifier; the other modality is ignored."""

    def __init__(self, cfg: ModelConfig, modality: str):
        super().__init__()
        cfg.validate()
        if modality not in ("visual", "skeleton"):
            raise ValueError(f"modality {modality!r}")
        self.cfg = cfg
        self.modality = modality
        self.variant = "vprobe" if modality == "visual" else "sprobe"
        d_in = cfg.d_v if modality == "visual" else cfg.d_s
        self.proj = nn.Linear(d_in, cfg.d_model)
        self.cls = nn.Parameter(torch.zeros(cfg.d_model))
        self.register_buffer("pe", sinusoidal_positions(cfg.seq_len + 1, cfg.d_model, dtype=torch.float64))
        self.embed_drop = nn.Dropout(cfg.dropout)
        self.layers = nn.ModuleList(
            AttentionBlock(cfg.d_model, cfg.n_heads, cfg.ffn_dim, cfg.dropout) for _ in range(cfg.probe_layers)
        )
        self.head = ClassifierHead(cfg.d_model, cfg.d_model, cfg.num_classes, cfg.dropout)
        init_parameters(self)

    def forward(self, visual: torch.Tensor, skeleton: torch.Tensor) -> torch.Tensor:
        _check_inputs(visual, skeleton, self.cfg)
        x = visual if self.modality == "visual" else skeleton
        z = _embed(x, self.proj, self.cls, self.pe, self.embed_drop, self.variant)
        for i, layer in enumerate(self.layers):
            z = _check_finite(layer(z), f"{self.variant}_layer[{i}]")
        return _check_finite(self.head(z[:, 0]), "head")


class LateFusionPair:
    """Mean of two trained probes' softmax outputs. Nothing is trained jointly."""

    variant = "late"

    def __init__(self, visual_probe: UnimodalProbe, skeleton_probe: UnimodalProbe):
        self.visual_probe = visual_probe
        self.skeleton_probe = skeleton_probe

    def eval(self) -> "LateFusionPair":
        self.visual_probe.eval()
        self.skeleton_probe.eval()
        return self

    def probabilities(self, visual: torch.Tensor, skeleton: torch.Tensor) -> torch.Tensor:
        p_v = torch.softmax(self.visual_probe(visual, skeleton), dim=-1)
        p_s = torch.softmax(self.skeleton_probe(visual, skeleton), dim=-1)
        return average_probabilities(p_v, p_s)


def average_probabilities(p_a: torch.Tensor, p_b: torch.Tensor) -> torch.Tensor:
    return (p_a + p_b) / 2


def _check_inputs(visual: torch.Tensor, skeleton: torch.Tensor, cfg: ModelConfig) -> None:
    if visual.ndim != 3 or visual.shape[2] != cfg.d_v:
        raise ShapeError(f"visual batch {tuple(visual.shape)}, expected (B, T, {cfg.d_v})")
    if skeleton.ndim != 3 or skeleton.shape[2] != cfg.d_s:
        raise ShapeError(f"skeleton batch {tuple(skeleton.shape)}, expected (B, T, {cfg.d_s})")
    if visual.shape[:2] != skeleton.shape[:2]:
        raise ShapeError(
            f"stream shapes disagree: visual {tuple(visual.shape[:2])} vs skeleton {tuple(skeleton.shape[:2])}"
        )


def init_parameters(model: nn.Module) -> None:
    """Xavier-uniform linear weights, zero biases, N(0, 0.02) truncated class tokens."""
    for m in model.modules():
        if isinstance(m, nn.Linear):
            nn.init.xavier_uniform_(m.weight)
            nn.init.zeros_(m.bias)
        elif isinstance(m, nn.LayerNorm):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)
    for name, p in model.named_parameters():
        if name in ("cls", "cls_visual", "cls_skeleton"):
            nn.init.trunc_normal_(p, std=0.02)


VARIANTS = ("cross", "early", "late", "vprobe", "sprobe")


def build_model(variant: str, cfg: ModelConfig, seed: int = 0) -> nn.Module:
    """Deterministically construct and initialize one trainable variant."""
    torch.manual_seed(seed)
    if variant == "cross":
        return CrossAttentionFusionModel(cfg)
    if variant == "early":
        return EarlyFusionModel(cfg)
    if variant == "vprobe":
        return UnimodalProbe(cfg, "visual")
    if variant == "sprobe":
        return UnimodalProbe(cfg, "skeleton")
    raise ValueError(f"unknown variant {variant!r} (late fusion is built from trained probes)")


def classification_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy over the batch; log-softmax happens inside (stable)."""
    return F.cross_entropy(logits, labels)


def loss_and_gradients(
    model: nn.Module, visual: torch.Tensor, skeleton: torch.Tensor, labels: torch.Tensor
) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """One forward/backward; returns the loss and per-parameter gradients."""
    model.zero_grad(set_to_none=True)
    loss = classification_loss(model(visual, skeleton), labels)
    loss.backward()
    grads: dict[str, torch.Tensor] = {}
    for name, p in model.named_parameters():
        g = p.grad if p.grad is not None else torch.zeros_like(p)
        if not torch.isfinite(g).all():
            raise NonFiniteActivationError(f"non-finite gradient for {name}")
        grads[name] = g
    return loss, grads
