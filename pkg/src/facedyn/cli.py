"""Command-line driver for the full pipeline.

Every command works inside a run directory: `generate-data` seeds it
with a dataset and the resolved configuration, `train-backbone` runs
the two backbone stages, `encode` writes per-video descriptor and
heatmap files, `train-head` fits the spectral multitask head from the
heatmap files, `evaluate` reports ACC rows, and `ablate` runs the full
2x2x2 grid. Commands exit 0 on success and 1 with a diagnostic on any
contract violation.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from facedyn import config as config_mod
from facedyn import data as data_mod
from facedyn.ablation import run_ablations
from facedyn.engine import Tensor, no_grad
from facedyn.engine.checkpoint import load_state
from facedyn.engine.rng import derive_seed
from facedyn.fileio import (
    load_heatmap,
    load_labels,
    save_labels,
    write_manifest,
    write_metrics_csv,
)
from facedyn.metrics import acc_metric
from facedyn.pipeline import encode_to_dir, evaluate_split
from facedyn.spectral import stack_two_channel
from facedyn.training import (
    STAGE2_CHECKPOINT,
    STAGE3_CHECKPOINT,
    BackboneWithDS,
    build_head,
    train_stage1,
    train_stage2,
    train_stage3,
)

SPLITS = ("train", "val", "test")
DATASET_FILE = "dataset.npz"


def _load_config(args):
    if args.config is not None:
        return config_mod.from_json(args.config)
    stored = Path(args.run_dir) / "config.json"
    if stored.exists():
        return config_mod.from_json(stored)
    return config_mod.RunConfig()


def _load_dataset(run_dir):
    path = Path(run_dir) / DATASET_FILE
    if not path.exists():
        raise ValueError(f"missing dataset {path}; run generate-data first")
    return data_mod.load_dataset(path)


def _spectral_rows(cfg):
    if cfg.ds.spectral_input == "ds_personality":
        return 5 * cfg.ds.dim
    return cfg.model.descriptor_dim


def _load_backbone(cfg, run_dir):
    path = Path(run_dir) / STAGE2_CHECKPOINT
    if not path.exists():
        raise ValueError(f"missing checkpoint {path}; run train-backbone first")
    model = BackboneWithDS(cfg)
    model.initialize(derive_seed(cfg.train.seed, "stage2/init"))
    model.load_state_dict(load_state(path))
    model.eval()
    return model


def _load_head(cfg, run_dir):
    path = Path(run_dir) / STAGE3_CHECKPOINT
    if not path.exists():
        raise ValueError(f"missing checkpoint {path}; run train-head first")
    head = build_head(cfg, _spectral_rows(cfg))
    head.initialize(derive_seed(cfg.train.seed, "stage3/init"))
    head.load_state_dict(load_state(path))
    head.eval()
    return head


def _load_encoded_split(run_dir, split):
    """Heatmap batch + labels for one split, from the encoded files."""
    enc_dir = Path(run_dir) / "encoded" / split
    labels_path = Path(run_dir) / f"labels_{split}.csv"
    if not enc_dir.is_dir():
        raise ValueError(f"missing encoded directory {enc_dir}; run encode first")
    if not labels_path.exists():
        raise ValueError(f"missing label file {labels_path}; run generate-data first")
    table = load_labels(labels_path)
    stacks, labels = [], []
    for path in sorted(enc_dir.glob("*.heat")):
        heatmap = load_heatmap(path)
        if heatmap.video_id not in table:
            raise ValueError(f"{path}: video {heatmap.video_id} not in {labels_path}")
        stacks.append(stack_two_channel(heatmap).astype(np.float32))
        labels.append(table[heatmap.video_id][1])
    if not stacks:
        raise ValueError(f"no heatmap files in {enc_dir}")
    return np.stack(stacks), np.stack(labels)


# ------------------------------------------------------------------ commands

def cmd_generate_data(args):
    cfg = _load_config(args)
    run_dir = Path(args.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    dataset = data_mod.generate_dataset(cfg.data, cfg.model.segment_length)
    data_mod.save_dataset(run_dir / DATASET_FILE, dataset)
    for split in SPLITS:
        save_labels(run_dir / f"labels_{split}.csv", dataset.split(split))
    config_mod.to_json(cfg, run_dir / "config.json")
    write_manifest(run_dir, "data", {
        "seed": cfg.data.seed,
        "config_hash": config_mod.config_hash(cfg),
        "data_hash": data_mod.dataset_hash(dataset),
        "sizes": {s: len(dataset.split(s)) for s in SPLITS},
    })
    print(f"wrote {run_dir / DATASET_FILE} "
          f"({sum(len(dataset.split(s)) for s in SPLITS)} videos)")


def cmd_train_backbone(args):
    cfg = _load_config(args)
    dataset = _load_dataset(args.run_dir)
    stage1, h1 = train_stage1(dataset, cfg, run_dir=args.run_dir)
    print(f"stage1: {len(h1['epoch_losses'])} epochs, "
          f"best val ACC {h1['best_val_acc']:.4f}")
    _, h2 = train_stage2(dataset, cfg, run_dir=args.run_dir, stage1_model=stage1)
    print(f"stage2: {len(h2['epoch_losses'])} epochs, "
          f"best val ACC {h2['best_val_acc']:.4f}")


def cmd_encode(args):
    cfg = _load_config(args)
    dataset = _load_dataset(args.run_dir)
    model = _load_backbone(cfg, args.run_dir)
    splits = SPLITS if args.split == "all" else (args.split,)
    for split in splits:
        out_dir = Path(args.run_dir) / "encoded" / split
        paths = encode_to_dir(model, dataset.split(split), out_dir, cfg, csv=args.csv)
        print(f"encoded {len(paths)} videos -> {out_dir}")


def cmd_train_head(args):
    cfg = _load_config(args)
    train_h, train_y = _load_encoded_split(args.run_dir, "train")
    val_h, val_y = _load_encoded_split(args.run_dir, "val")
    _, h3 = train_stage3(train_h, train_y, val_h, val_y, cfg, run_dir=args.run_dir)
    print(f"stage3: {len(h3['epoch_losses'])} epochs, "
          f"best val ACC {h3['best_val_acc']:.4f}")


def cmd_evaluate(args):
    cfg = _load_config(args)
    head = _load_head(cfg, args.run_dir)
    model = _load_backbone(cfg, args.run_dir)
    dataset = _load_dataset(args.run_dir)
    rows = []
    for split in ("val", "test"):
        heatmaps, labels = _load_encoded_split(args.run_dir, split)
        with no_grad():
            preds = head.predict(Tensor(heatmaps)).data
        rows.append((
            f"{split}/spectral_head",
            acc_metric(np.asarray(preds, dtype=np.float64), labels),
        ))
        rows.append((
            f"{split}/segment_average",
            evaluate_split(model, None, dataset.split(split), cfg,
                           mode="segment_average"),
        ))
    out = Path(args.run_dir) / "metrics.csv"
    write_metrics_csv(out, rows)
    for label, metrics in rows:
        print(f"{label}: Avg {metrics['Avg']:.4f}")
    print(f"wrote {out}")


def cmd_ablate(args):
    cfg = _load_config(args)
    dataset = _load_dataset(args.run_dir)
    out_dir = Path(args.run_dir) / "ablation"
    rows, probes = run_ablations(dataset, cfg, run_dir=out_dir)
    for label, metrics in rows:
        print(f"{label}: Avg {metrics['Avg']:.4f}")
    for label, p in probes.items():
        print(f"probe[{label}]: personality {p['personality_accuracy']:.4f} "
              f"noise {p['noise_accuracy']:.4f} gap {p['gap']:+.4f}")
    print(f"wrote {out_dir / 'ablation.csv'}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="facedyn",
        description="Apparent-personality pipeline on synthetic video",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--run-dir", required=True, help="working directory for this run")
        p.add_argument("--config", default=None,
                       help="JSON config file (default: run dir's config.json, else defaults)")
        p.set_defaults(func=func)
        return p

    add("generate-data", cmd_generate_data, "create the synthetic dataset")
    add("train-backbone", cmd_train_backbone, "run training stages 1 and 2")
    enc = add("encode", cmd_encode, "write descriptor and heatmap files per video")
    enc.add_argument("--split", default="all", choices=("all",) + SPLITS)
    enc.add_argument("--csv", action="store_true", help="also dump heatmaps as CSV")
    add("train-head", cmd_train_head, "train the spectral multitask head (stage 3)")
    add("evaluate", cmd_evaluate, "report ACC for both prediction modes and splits")
    add("ablate", cmd_ablate, "run the 2x2x2 ablation grid")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
