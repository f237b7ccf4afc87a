"""Training loop: AdamW with decoupled decay, warmup+cosine schedule, gradient
clipping, per-epoch validation, best-checkpoint selection by macro mAP, JSONL
logging, and multi-seed aggregation.

All randomness (init, batch order, temporal jitter, dropout) is a pure
function of the seed, so a repeated run reproduces the same log.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch

from . import metrics as M
from .checkpoint import Checkpoint, load_checkpoint, load_state_into, save_checkpoint, state_dict_to_tensors
from .feature_io import DatasetManifest, Split, read_sequence
from .model import (
    LateFusionPair,
    ModelConfig,
    NonFiniteActivationError,
    UnimodalProbe,
    build_model,
    loss_and_gradients,
)
from .preprocess import SampleMode, TsnPlan, normalize_skeleton, tsn_sample


class TrainingDiverged(RuntimeError):
    """Loss went non-finite; the last saved checkpoint is left in place."""


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    base_lr: float = 3e-4
    weight_decay: float = 0.05
    warmup_fraction: float = 0.05
    clip_max_norm: float = 1.0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    dropout: float = 0.1
    seeds: tuple[int, ...] = (0, 1, 2)

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError(f"epochs {self.epochs}, batch_size {self.batch_size}")
        if self.base_lr <= 0 or not 0 <= self.warmup_fraction <= 1:
            raise ValueError(f"base_lr {self.base_lr}, warmup_fraction {self.warmup_fraction}")
        if self.clip_max_norm <= 0 or self.weight_decay < 0:
            raise ValueError(f"clip_max_norm {self.clip_max_norm}, weight_decay {self.weight_decay}")
        if not self.seeds:
            raise ValueError("need at least one seed")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        d["seeds"] = list(self.seeds)
        return d


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear warmup to base_lr, then cosine decay to exactly 0 at total_steps."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    warmup = int(round(cfg.warmup_fraction * total_steps))
    warmup = min(warmup, total_steps - 1)  # keep a non-empty cosine tail
    if step < warmup:
        return cfg.base_lr * (step + 1) / warmup
    progress = (step - warmup) / (total_steps - warmup)
    return cfg.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def clip_gradients(grads: dict[str, torch.Tensor], max_norm: float) -> tuple[dict[str, torch.Tensor], float]:
    """Scale all gradients by max_norm/norm when the global L2 norm exceeds max_norm.

    Returns (possibly scaled gradients, pre-clip norm).
    """
    sq = 0.0
    for g in grads.values():
        sq += float(torch.sum(g.double() * g.double()))
    if not math.isfinite(sq):
        raise ValueError("non-finite gradient norm")
    norm = math.sqrt(sq)
    if norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


class AdamW:
    """AdamW with bias correction and decay decoupled from the adaptive step.

    param -= lr * wd * param  (decay of the pre-step value, decayed params only)
    param -= lr * m_hat / (sqrt(v_hat) + eps)
    """

    def __init__(self, params: dict[str, torch.Tensor], cfg: TrainConfig, decay_params: set[str] | None = None):
        self.params = params
        self.cfg = cfg
        # weight matrices decay; biases, norms, and class tokens (all 1-D) do not
        self.decay_params = (
            decay_params if decay_params is not None else {n for n, p in params.items() if p.ndim >= 2}
        )
        self.m = {n: torch.zeros_like(p) for n, p in params.items()}
        self.v = {n: torch.zeros_like(p) for n, p in params.items()}
        self.t = 0

    @torch.no_grad()
    def step(self, grads: dict[str, torch.Tensor], lr: float) -> None:
        self.t += 1
        b1, b2 = self.cfg.betas
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for name, p in self.params.items():
            g = grads[name]
            if name in self.decay_params and self.cfg.weight_decay > 0:
                p.mul_(1.0 - lr * self.cfg.weight_decay)
            m = self.m[name]
            v = self.v[name]
            m.mul_(b1).add_(g, alpha=1.0 - b1)
            v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
            p -= lr * (m / bc1) / ((v / bc2).sqrt() + self.cfg.eps)


@dataclass
class LoadedSplit:
    """Raw per-clip arrays held in memory so epochs only re-sample indices."""

    clip_ids: list[str]
    labels: np.ndarray  # [N] int64
    visual: list[np.ndarray]  # each [t_clip, 1408] float32
    joints: list[np.ndarray]  # each [t_clip, 24, 3] float32
    t_clips: np.ndarray


def load_split(manifest: DatasetManifest, which: Split) -> LoadedSplit:
    records = manifest.split(which)
    if not records:
        raise ValueError(f"manifest has no {which.value} records")
    visual, joints, labels, ids, ts = [], [], [], [], []
    for r in records:
        v = read_sequence(r.visual_path)
        s = read_sequence(r.skeleton_path)
        if v.t != s.t:
            raise ValueError(f"{r.clip_id}: visual {v.t} frames vs skeleton {s.t}")
        visual.append(v.data)
        joints.append(s.data)
        labels.append(r.label_id)
        ids.append(r.clip_id)
        ts.append(v.t)
    return LoadedSplit(
        clip_ids=ids,
        labels=np.array(labels, dtype=np.int64),
        visual=visual,
        joints=joints,
        t_clips=np.array(ts, dtype=np.int64),
    )


def _clip_seed(seed: int, epoch: int, clip_index: int) -> int:
    return int(np.random.SeedSequence((seed, epoch, clip_index)).generate_state(1)[0])


def gather_batch(
    split: LoadedSplit, idx: np.ndarray, plan: TsnPlan, seed: int = 0, epoch: int = 0
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Sample + normalize the chosen clips into model-ready tensors."""
    vis = np.empty((len(idx), plan.total, split.visual[0].shape[1]), dtype=np.float32)
    ske = np.empty((len(idx), plan.total, split.joints[0].shape[1] * 3), dtype=np.float32)
    for row, i in enumerate(idx):
        frames = tsn_sample(int(split.t_clips[i]), plan, rng_seed=_clip_seed(seed, epoch, int(i)))
        vis[row] = split.visual[i][frames]
        ske[row] = normalize_skeleton(split.joints[i][frames])
    return (
        torch.from_numpy(vis),
        torch.from_numpy(ske),
        torch.from_numpy(split.labels[idx].copy()),
    )


@torch.no_grad()
def predict_probabilities(model, visual: torch.Tensor, skeleton: torch.Tensor, batch_size: int = 256) -> np.ndarray:
    """Eval-mode softmax probabilities, batched."""
    outs = []
    for i in range(0, visual.shape[0], batch_size):
        v, s = visual[i : i + batch_size], skeleton[i : i + batch_size]
        if isinstance(model, LateFusionPair):
            p = model.probabilities(v, s)
        else:
            p = torch.softmax(model(v, s), dim=-1)
        outs.append(p.double().cpu().numpy())
    return np.concatenate(outs, axis=0)


def evaluate_model(
    model,
    split: LoadedSplit,
    plan: TsnPlan,
    class_names: list[str],
    restrict: bool = True,
    batch_size: int = 256,
) -> M.SplitReport:
    """Deterministic-sampling evaluation of one model on one split."""
    was_training = getattr(model, "training", False)
    if hasattr(model, "eval"):
        model.eval()
    det = TsnPlan(plan.n_segments, plan.frames_per_segment, SampleMode.DETERMINISTIC)
    idx = np.arange(len(split.clip_ids))
    visual, skeleton, _ = gather_batch(split, idx, det)
    probs = predict_probabilities(model, visual, skeleton, batch_size)
    report = M.evaluate_predictions(
        M.PredictionSet(scores=probs, labels=split.labels.copy()), class_names, restrict=restrict
    )
    if was_training and hasattr(model, "train"):
        model.train()
    return report


@dataclass
class SeedResult:
    seed: int
    checkpoint_path: str
    log_path: str
    best: M.SplitReport
    stopped_epoch: int


@dataclass
class TrainResult:
    variant: str
    out_dir: str
    per_seed: list[SeedResult]
    report: M.EvalReport
    report_path: str


def _rng_snapshot() -> dict:
    return {"torch": torch.get_rng_state().numpy().tobytes().hex()}


def _log(fh, record: dict) -> None:
    fh.write(json.dumps(record, sort_keys=True) + "\n")
    fh.flush()


def train_single(
    variant: str,
    manifest: DatasetManifest,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    plan: TsnPlan,
    out_dir: Path,
    seed: int,
    train_split: LoadedSplit | None = None,
    val_split: LoadedSplit | None = None,
    restrict: bool = True,
    stop_train_top1: float | None = None,
    max_epochs: int | None = None,
) -> SeedResult:
    """Train one variant with one seed; writes checkpoint.bin and train_log.jsonl."""
    model_cfg.validate()
    train_cfg.validate()
    out_dir.mkdir(parents=True, exist_ok=True)
    tr = train_split or load_split(manifest, Split.TRAIN)
    va = val_split or load_split(manifest, Split.VAL)
    epochs = max_epochs or train_cfg.epochs
    n_train = len(tr.clip_ids)
    steps_per_epoch = math.ceil(n_train / train_cfg.batch_size)
    total_steps = steps_per_epoch * epochs

    model = build_model(variant, model_cfg, seed=seed)
    model.train()
    params = dict(model.named_parameters())
    opt = AdamW({n: p.data for n, p in params.items()}, train_cfg)
    jitter = TsnPlan(plan.n_segments, plan.frames_per_segment, SampleMode.RANDOM)

    ckpt_path = out_dir / "checkpoint.bin"
    log_path = out_dir / "train_log.jsonl"
    best_map = -1.0
    best_report: M.SplitReport | None = None
    best_epoch = -1
    step = 0
    t0 = time.time()
    with open(log_path, "w") as log:
        _log(
            log,
            {
                "type": "config",
                "variant": variant,
                "seed": seed,
                "model": model_cfg.to_dict(),
                "train": train_cfg.to_dict(),
                "plan": {"n_segments": plan.n_segments, "frames_per_segment": plan.frames_per_segment},
                "n_train": n_train,
                "n_val": len(va.clip_ids),
                "total_steps": total_steps,
                "class_names": manifest.class_names,
            },
        )
        stopped = epochs - 1
        for epoch in range(epochs):
            order = np.random.default_rng(np.random.SeedSequence((seed, epoch, 0x0BA7C4))).permutation(n_train)
            epoch_losses = []
            for b in range(steps_per_epoch):
                idx = order[b * train_cfg.batch_size : (b + 1) * train_cfg.batch_size]
                visual, skeleton, labels = gather_batch(tr, idx, jitter, seed=seed, epoch=epoch)
                try:
                    loss, grads = loss_and_gradients(model, visual, skeleton, labels)
                except NonFiniteActivationError as exc:
                    _log(log, {"type": "diverged", "epoch": epoch, "step": step, "loss": None,
                               "detail": str(exc)})
                    raise TrainingDiverged(
                        f"{variant} seed {seed}: non-finite activation at step {step}; "
                        "last checkpoint kept"
                    ) from exc
                loss_val = float(loss.detach())
                if not math.isfinite(loss_val):
                    _log(log, {"type": "diverged", "epoch": epoch, "step": step, "loss": loss_val})
                    raise TrainingDiverged(
                        f"{variant} seed {seed}: non-finite loss at step {step}; last checkpoint kept"
                    )
                grads, grad_norm = clip_gradients(grads, train_cfg.clip_max_norm)
                lr = lr_at(step, total_steps, train_cfg)
                opt.step(grads, lr)
                step += 1
                epoch_losses.append(loss_val)
                _log(
                    log,
                    {"type": "step", "step": step, "epoch": epoch, "loss": loss_val,
                     "lr": lr, "grad_norm": grad_norm},
                )
            val_report = evaluate_model(model, va, plan, manifest.class_names, restrict=restrict)
            saved = val_report.macro_map > best_map
            if saved:
                best_map = val_report.macro_map
                best_report = val_report
                best_epoch = epoch
                save_checkpoint(_to_checkpoint(model, opt, variant, model_cfg, train_cfg, manifest,
                                               step, epoch, best_map, val_report, seed, plan), ckpt_path)
            record = {
                "type": "epoch",
                "epoch": epoch,
                "train_loss_mean": float(np.mean(epoch_losses)),
                "val": val_report.headline(),
                "best_val_map": best_map,
                "checkpoint_saved": saved,
                "elapsed_s": round(time.time() - t0, 3),
            }
            if stop_train_top1 is not None:
                train_report = evaluate_model(model, tr, plan, manifest.class_names, restrict=restrict)
                record["train_top1"] = train_report.top1
                if train_report.top1 >= stop_train_top1:
                    record["early_stop"] = True
                    _log(log, record)
                    stopped = epoch
                    break
            _log(log, record)
    assert best_report is not None
    return SeedResult(
        seed=seed,
        checkpoint_path=str(ckpt_path),
        log_path=str(log_path),
        best=best_report,
        stopped_epoch=stopped,
    )


def _plan_dict(plan: TsnPlan) -> dict:
    return {"n_segments": plan.n_segments, "frames_per_segment": plan.frames_per_segment}


def _to_checkpoint(model, opt: AdamW, variant, model_cfg, train_cfg, manifest, step, epoch,
                   best_map, val_report, seed, plan) -> Checkpoint:
    tensors = state_dict_to_tensors(model)
    for n, m in opt.m.items():
        tensors[f"opt.m.{n}"] = m.cpu().numpy()
    for n, v in opt.v.items():
        tensors[f"opt.v.{n}"] = v.cpu().numpy()
    return Checkpoint(
        variant=variant,
        model_config=model_cfg.to_dict(),
        train_config=train_cfg.to_dict(),
        step=step,
        epoch=epoch,
        best_val_map=best_map,
        metrics=val_report.headline(),
        class_names=manifest.class_names,
        tensors=tensors,
        rng=_rng_snapshot(),
        extra={"seed": seed, "opt_t": opt.t, "plan": _plan_dict(plan)},
    )


def _train_late(
    manifest, model_cfg, train_cfg, plan, out_dir: Path, seed: int, tr, va, restrict
) -> SeedResult:
    """Late fusion: train the two probes independently, then combine their best checkpoints."""
    rv = train_single("vprobe", manifest, model_cfg, train_cfg, plan, out_dir / "vprobe", seed,
                      train_split=tr, val_split=va, restrict=restrict)
    rs = train_single("sprobe", manifest, model_cfg, train_cfg, plan, out_dir / "sprobe", seed,
                      train_split=tr, val_split=va, restrict=restrict)
    pair = load_late_pair(rv.checkpoint_path, rs.checkpoint_path)
    val_report = evaluate_model(pair, va, plan, manifest.class_names, restrict=restrict)
    ckpt_path = out_dir / "checkpoint.bin"
    tensors = {}
    for prefix, path in (("vprobe.", rv.checkpoint_path), ("sprobe.", rs.checkpoint_path)):
        sub = load_checkpoint(path)
        for n, t in sub.tensors.items():
            if not n.startswith("opt."):
                tensors[prefix + n] = t
    save_checkpoint(
        Checkpoint(
            variant="late",
            model_config=model_cfg.to_dict(),
            train_config=train_cfg.to_dict(),
            step=0,
            epoch=0,
            best_val_map=val_report.macro_map,
            metrics=val_report.headline(),
            class_names=manifest.class_names,
            tensors=tensors,
            rng=_rng_snapshot(),
            extra={"seed": seed, "plan": _plan_dict(plan)},
        ),
        ckpt_path,
    )
    log_path = out_dir / "train_log.jsonl"
    with open(log_path, "w") as log:
        _log(log, {"type": "config", "variant": "late", "seed": seed,
                   "probes": [rv.log_path, rs.log_path]})
        _log(log, {"type": "epoch", "epoch": 0, "val": val_report.headline(),
                   "best_val_map": val_report.macro_map, "checkpoint_saved": True})
    return SeedResult(seed=seed, checkpoint_path=str(ckpt_path), log_path=str(log_path),
                      best=val_report, stopped_epoch=0)


def train(
    variant: str,
    manifest: DatasetManifest,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    plan: TsnPlan,
    out_dir: str | Path,
    restrict: bool = True,
    stop_train_top1: float | None = None,
) -> TrainResult:
    """Run every seed in train_cfg.seeds and aggregate the best-val metrics.

    Single-seed runs write checkpoint.bin / train_log.jsonl directly under
    out_dir; multi-seed runs use seed_<k>/ subdirectories. eval_report.txt is
    always written at out_dir.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tr = load_split(manifest, Split.TRAIN)
    va = load_split(manifest, Split.VAL)
    results = []
    for seed in train_cfg.seeds:
        seed_dir = out_dir if len(train_cfg.seeds) == 1 else out_dir / f"seed_{seed}"
        if variant == "late":
            results.append(_train_late(manifest, model_cfg, train_cfg, plan, seed_dir, seed, tr, va, restrict))
        else:
            results.append(
                train_single(variant, manifest, model_cfg, train_cfg, plan, seed_dir, seed,
                             train_split=tr, val_split=va, restrict=restrict,
                             stop_train_top1=stop_train_top1)
            )
    report = M.aggregate_seeds([r.best.headline() for r in results])
    report_path = out_dir / "eval_report.txt"
    text = M.format_report(
        f"{variant} validation metrics over seeds {list(train_cfg.seeds)}",
        report,
        per_seed_details=[r.best for r in results],
    )
    text += "\nconfig:\n" + json.dumps(
        {"model": model_cfg.to_dict(), "train": train_cfg.to_dict(),
         "plan": {"n_segments": plan.n_segments, "frames_per_segment": plan.frames_per_segment}},
        indent=2, sort_keys=True,
    ) + "\n"
    report_path.write_text(text)
    return TrainResult(variant=variant, out_dir=str(out_dir), per_seed=results,
                       report=report, report_path=str(report_path))


def load_model_from_checkpoint(path: str | Path):
    """Rebuild the variant a checkpoint describes and restore its parameters."""
    ck = load_checkpoint(path)
    cfg = ModelConfig(**ck.model_config)
    if ck.variant == "late":
        pair = LateFusionPair(UnimodalProbe(cfg, "visual"), UnimodalProbe(cfg, "skeleton"))
        load_state_into(pair.visual_probe, ck.tensors, prefix="vprobe.")
        load_state_into(pair.skeleton_probe, ck.tensors, prefix="sprobe.")
        return pair.eval(), ck
    model = build_model(ck.variant, cfg, seed=0)
    load_state_into(model, {n: t for n, t in ck.tensors.items() if not n.startswith("opt.")})
    return model.eval(), ck


def load_late_pair(vprobe_ckpt: str | Path, sprobe_ckpt: str | Path) -> LateFusionPair:
    mv, _ = load_model_from_checkpoint(vprobe_ckpt)
    ms, _ = load_model_from_checkpoint(sprobe_ckpt)
    return LateFusionPair(mv, ms).eval()
