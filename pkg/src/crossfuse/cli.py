"""Command line entry points.

    crossfuse synth unimodal|xor|occlude ...   make synthetic datasets
    crossfuse inspect PATH [--verify]          describe a feature file / manifest / checkpoint
    crossfuse train --config C --out DIR       train one variant, all seeds
    crossfuse eval --checkpoint F --manifest M re-evaluate a checkpoint
    crossfuse ablate --config C --out DIR      early vs late vs cross-attention table

Exit codes: 0 ok, 2 usage, 3 missing file, 4 config/schema mismatch,
5 invalid data file, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch

from . import metrics as M
from .checkpoint import CheckpointError, load_checkpoint
from .feature_io import (
    FeatureIOError,
    ManifestError,
    Split,
    load_manifest,
    read_sequence,
)
from .model import VARIANTS, ModelConfig
from .preprocess import TsnPlan
from .synth import SynthSpec, gen_occlusion_variant, gen_unimodal_task, gen_xor_task
from .train import (
    TrainConfig,
    TrainingDiverged,
    evaluate_model,
    load_model_from_checkpoint,
    load_split,
    train,
)

EXIT_MISSING_FILE = 3
EXIT_CONFIG = 4
EXIT_BAD_DATA = 5


class ConfigError(Exception):
    pass


_MODEL_KEYS = {"d_model", "n_layers", "n_heads", "ffn_dim", "dropout", "probe_layers"}
_TRAIN_KEYS = {"epochs", "batch_size", "base_lr", "weight_decay", "warmup_fraction",
               "clip_max_norm", "betas", "eps", "dropout", "seeds"}
_PLAN_KEYS = {"n_segments", "frames_per_segment"}


def load_config(path: str | Path) -> dict:
    try:
        raw = Path(path).read_text()
    except FileNotFoundError:
        raise
    try:
        cfg = json.loads(raw)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON: {e}") from e
    if not isinstance(cfg, dict) or "manifest" not in cfg:
        raise ConfigError(f"{path}: config must be an object with a 'manifest' key")
    unknown = set(cfg) - {"manifest", "model", "plan", "train", "restrict_classes"}
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    for section, allowed in (("model", _MODEL_KEYS), ("train", _TRAIN_KEYS), ("plan", _PLAN_KEYS)):
        extra = set(cfg.get(section, {})) - allowed
        if extra:
            raise ConfigError(f"{path}: unknown {section} keys {sorted(extra)}")
    # manifest path is relative to the config file
    cfg["manifest"] = str((Path(path).parent / cfg["manifest"]).resolve())
    return cfg


def build_run(cfg: dict, seed_override: int | None) -> tuple[str, ModelConfig, TrainConfig, TsnPlan, bool]:
    plan = TsnPlan(**cfg.get("plan", {}))
    train_section = dict(cfg.get("train", {}))
    if "betas" in train_section:
        train_section["betas"] = tuple(train_section["betas"])
    if "seeds" in train_section:
        train_section["seeds"] = tuple(int(s) for s in train_section["seeds"])
    if seed_override is not None:
        train_section["seeds"] = (seed_override,)
    try:
        train_cfg = TrainConfig(**train_section)
        train_cfg.validate()
    except (TypeError, ValueError) as e:
        raise ConfigError(f"train section: {e}") from e
    manifest = load_manifest(cfg["manifest"])
    try:
        model_cfg = ModelConfig(
            num_classes=manifest.num_classes,
            seq_len=plan.total,
            **cfg.get("model", {}),
        )
        model_cfg.validate()
    except (TypeError, ValueError) as e:
        raise ConfigError(f"model section: {e}") from e
    return cfg["manifest"], model_cfg, train_cfg, plan, bool(cfg.get("restrict_classes", True))


def cmd_synth(args) -> int:
    out = Path(args.out)
    if args.kind == "unimodal":
        spec = SynthSpec(n_clips=args.clips, t_clip=args.frames, num_classes=args.classes,
                         seed=args.seed, signal_scale=args.signal_scale,
                         noise_scale=args.noise_scale, signal_density=args.signal_density,
                         osc_amplitude=args.osc_amplitude)
        manifest = gen_unimodal_task(args.modality, spec, out)
    elif args.kind == "xor":
        spec = SynthSpec(n_clips=args.clips, t_clip=args.frames, num_classes=2, seed=args.seed,
                         signal_scale=args.signal_scale, noise_scale=args.noise_scale,
                         osc_amplitude=args.osc_amplitude)
        manifest = gen_xor_task(spec, out)
    else:
        manifest = gen_occlusion_variant(args.manifest, args.drop_rate, args.seed, out,
                                         modalities=tuple(args.modalities))
    print(f"wrote {len(manifest.records)} clips, {manifest.num_classes} classes -> {out / 'manifest.jsonl'}")
    return 0


def cmd_inspect(args) -> int:
    path = Path(args.path)
    if not path.exists():
        raise FileNotFoundError(path)
    with path.open("rb") as f:
        head = f.read(4)
    if head == b"FSEQ":
        seq = read_sequence(path)
        d = seq.data
        print(f"feature file  {path}")
        print(f"clip_id       {seq.clip_id}")
        print(f"modality      {seq.modality.name.lower()}")
        print(f"dims          {tuple(d.shape)}")
        print(f"dtype         float32")
        print(f"stats         min={d.min():.6g} max={d.max():.6g} mean={d.mean():.6g}")
        return 0
    if head == b"FCKP":
        ck = load_checkpoint(path)
        n_params = sum(int(np.prod(t.shape)) for n, t in ck.tensors.items() if not n.startswith("opt."))
        print(f"checkpoint    {path}")
        print(f"variant       {ck.variant}")
        print(f"step          {ck.step}  (epoch {ck.epoch})")
        print(f"best_val_map  {ck.best_val_map:.6f}")
        print(f"metrics       {json.dumps(ck.metrics, sort_keys=True)}")
        print(f"classes       {len(ck.class_names)}")
        print(f"tensor values {n_params}")
        return 0
    manifest = load_manifest(path, verify=args.verify)
    counts = {s.value: len(manifest.split(s)) for s in Split}
    print(f"manifest      {path}")
    print(f"num_classes   {manifest.num_classes}")
    print(f"class_names   {', '.join(manifest.class_names)}")
    print(f"records       {len(manifest.records)}  (train={counts['train']} val={counts['val']})")
    if args.verify:
        print("verify        ok: all files present, modalities and frame counts match")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    manifest_path, model_cfg, train_cfg, plan, restrict_default = build_run(cfg, args.seed)
    restrict = restrict_default if args.restrict_classes is None else args.restrict_classes
    manifest = load_manifest(manifest_path, verify=args.verify)
    result = train(args.variant, manifest, model_cfg, train_cfg, plan, args.out, restrict=restrict)
    for r in result.per_seed:
        print(f"seed {r.seed}: best val macro_map {r.best.macro_map:.4f} "
              f"top1 {r.best.top1:.4f} (checkpoint {r.checkpoint_path})")
    for k, m in result.report.metrics.items():
        print(f"{k}: {m.mean:.4f} +/- {m.std:.4f}")
    print(f"report: {result.report_path}")
    return 0


def cmd_eval(args) -> int:
    model, ck = load_model_from_checkpoint(args.checkpoint)
    manifest = load_manifest(args.manifest, verify=args.verify)
    if manifest.class_names != ck.class_names:
        raise ConfigError(
            f"checkpoint classes {ck.class_names} do not match manifest classes {manifest.class_names}"
        )
    plan_dict = ck.extra.get("plan")
    if plan_dict is None:
        raise ConfigError("checkpoint carries no sampling plan")
    plan = TsnPlan(**plan_dict)
    split = Split(args.split)
    data = load_split(manifest, split)
    report = evaluate_model(model, data, plan, manifest.class_names, restrict=args.restrict_classes)
    agg = M.aggregate_seeds([report.headline()])
    text = M.format_report(
        f"{ck.variant} checkpoint on {split.value} ({Path(args.manifest).name})", agg, [report]
    )
    text += "\ncheckpoint config:\n" + json.dumps(
        {"model": ck.model_config, "train": ck.train_config, "plan": plan_dict}, indent=2, sort_keys=True
    ) + "\n"
    print(text, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval_report.txt").write_text(text)
        print(f"report: {out / 'eval_report.txt'}")
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    manifest_path, model_cfg, train_cfg, plan, restrict_default = build_run(cfg, args.seed)
    restrict = restrict_default if args.restrict_classes is None else args.restrict_classes
    manifest = load_manifest(manifest_path, verify=args.verify)
    out = Path(args.out)
    rows = []
    for variant in ("early", "late", "cross"):
        result = train(variant, manifest, model_cfg, train_cfg, plan, out / variant, restrict=restrict)
        rows.append((variant, result.report))
        print(f"{variant}: done")
    lines = [f"{'variant':10s} {'top1':>20s} {'macro_map':>20s} {'macro_f1':>20s}"]
    for variant, rep in rows:
        cells = [f"{rep.metrics[k].mean:.4f} +/- {rep.metrics[k].std:.4f}"
                 for k in ("top1", "macro_map", "macro_f1")]
        lines.append(f"{variant:10s} {cells[0]:>20s} {cells[1]:>20s} {cells[2]:>20s}")
    lines.append("")
    lines.append(f"seeds: {list(train_cfg.seeds)}")
    table = "\n".join(lines) + "\n"
    (out / "ablation_report.txt").write_text(table)
    print(table, end="")
    return 0


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crossfuse",
                                description="cross-attention fusion of visual and skeleton streams")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate synthetic datasets")
    kinds = sp.add_subparsers(dest="kind", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", required=True)
    gen = argparse.ArgumentParser(add_help=False, parents=[common])
    gen.add_argument("--clips", type=int, default=256)
    gen.add_argument("--frames", type=int, default=32, help="frames per clip before sampling")
    gen.add_argument("--signal-scale", type=float, default=1.5)
    gen.add_argument("--noise-scale", type=float, default=1.0)
    gen.add_argument("--osc-amplitude", type=float, default=0.5)
    uni = kinds.add_parser("unimodal", parents=[gen], help="label readable from one modality")
    uni.add_argument("--modality", choices=["visual", "skeleton"], required=True)
    uni.add_argument("--classes", type=int, default=2)
    uni.add_argument("--signal-density", type=float, default=1.0)
    kinds.add_parser("xor", parents=[gen], help="label = visual bit xor skeleton bit")
    occ = kinds.add_parser("occlude", parents=[common], help="masked copy of a dataset")
    occ.add_argument("--manifest", required=True)
    occ.add_argument("--drop-rate", type=float, required=True)
    occ.add_argument("--modalities", nargs="+", default=["visual", "skeleton"],
                     choices=["visual", "skeleton"])

    ip = sub.add_parser("inspect", help="describe a feature file, manifest, or checkpoint")
    ip.add_argument("path")
    ip.add_argument("--verify", action="store_true",
                    help="for manifests: open every file and cross-check frame counts")

    tp = sub.add_parser("train", help="train one variant on a manifest")
    tp.add_argument("--config", required=True)
    tp.add_argument("--out", required=True)
    tp.add_argument("--variant", choices=list(VARIANTS), default="cross")
    tp.add_argument("--seed", type=int, default=None, help="override the config's seed list")
    tp.add_argument("--restrict-classes", action=argparse.BooleanOptionalAction, default=None,
                    help="score only over classes present in the eval split")
    tp.add_argument("--verify", action="store_true")
    tp.add_argument("--device-threads", type=int, default=None)

    ep = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    ep.add_argument("--checkpoint", required=True)
    ep.add_argument("--manifest", required=True)
    ep.add_argument("--split", choices=[s.value for s in Split], default="val")
    ep.add_argument("--out", default=None)
    ep.add_argument("--restrict-classes", action=argparse.BooleanOptionalAction, default=True)
    ep.add_argument("--verify", action="store_true")
    ep.add_argument("--device-threads", type=int, default=None)

    ap = sub.add_parser("ablate", help="train early/late/cross on one config and tabulate")
    ap.add_argument("--config", required=True)
    ap.add_argument("--out", required=True)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--restrict-classes", action=argparse.BooleanOptionalAction, default=None)
    ap.add_argument("--verify", action="store_true")
    ap.add_argument("--device-threads", type=int, default=None)
    return p


_COMMANDS = {
    "synth": cmd_synth,
    "inspect": cmd_inspect,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    if getattr(args, "device_threads", None):
        torch.set_num_threads(args.device_threads)
    try:
        return _COMMANDS[args.command](args)
    except FileNotFoundError as e:
        print(f"error: missing file: {e}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except (ConfigError, ManifestError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except FeatureIOError as e:
        print(f"error: bad data file: {e}", file=sys.stderr)
        return EXIT_BAD_DATA
    except (ValueError, TrainingDiverged) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
