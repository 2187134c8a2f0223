"""Ablation grid: {disentangled, plain} backbones x {spectral,
segment-average} video predictions x {multi-task, single-task} heads.

The backbone axis needs two trainings (shared warm-up); the head axis
needs four. Segment-average rows never touch the head, so the head axis
is degenerate there: both rows repeat the same numbers, kept so the
report is the full 2x2x2 grid.
"""

import csv
import dataclasses
from pathlib import Path

import numpy as np

from facedyn.engine import Tensor, no_grad
from facedyn.fileio import write_metrics_csv
from facedyn.metrics import acc_metric
from facedyn.pipeline import encode_split, evaluate_split
from facedyn.probe import identity_probe
from facedyn.training import train_stage1, train_stage2, train_stage3

GRID_ROWS = 8


def _with_ds(config, enabled):
    return dataclasses.replace(
        config, ds=dataclasses.replace(config.ds, enabled=enabled)
    )


def _with_head(config, include_multi):
    return dataclasses.replace(
        config, head=dataclasses.replace(config.head, include_multi=include_multi)
    )


def _head_metrics(head, heatmaps, labels):
    head.eval()
    with no_grad():
        preds = head.predict(Tensor(heatmaps)).data
    return acc_metric(np.asarray(preds, dtype=np.float64), labels)


def run_ablations(dataset, config, run_dir=None, probe_seed=0):
    """-> (rows, probes): the 8 grid rows in report order and the
    per-backbone identity-probe results. Writes ablation.csv and
    probe.csv when run_dir is given."""
    segment_length = config.model.segment_length
    stage1, _ = train_stage1(dataset, config)
    held_out = list(dataset.val) + list(dataset.test)

    rows, probes = [], {}
    for enabled, label in ((True, "ds"), (False, "nonds")):
        cfg = _with_ds(config, enabled)
        cell_dir = None if run_dir is None else str(Path(run_dir) / label)
        backbone, _ = train_stage2(dataset, cfg, run_dir=cell_dir, stage1_model=stage1)

        train_h, train_y = encode_split(backbone, dataset.train, cfg)
        val_h, val_y = encode_split(backbone, dataset.val, cfg)
        test_h, test_y = encode_split(backbone, dataset.test, cfg)

        spectral = {}
        for head_label, include_multi in (("multi", True), ("single", False)):
            hcfg = _with_head(cfg, include_multi)
            head_dir = None if cell_dir is None else f"{cell_dir}/head_{head_label}"
            head, _ = train_stage3(train_h, train_y, val_h, val_y, hcfg, run_dir=head_dir)
            spectral[head_label] = _head_metrics(head, test_h, test_y)

        segment = evaluate_split(backbone, None, dataset.test, cfg, mode="segment_average")
        for head_label in ("multi", "single"):
            rows.append((f"{label}/spectral/{head_label}", spectral[head_label]))
        for head_label in ("multi", "single"):
            rows.append((f"{label}/segment_average/{head_label}", segment))

        probes[label] = identity_probe(backbone, held_out, segment_length, seed=probe_seed)

    assert len(rows) == GRID_ROWS
    if run_dir is not None:
        Path(run_dir).mkdir(parents=True, exist_ok=True)
        write_metrics_csv(Path(run_dir) / "ablation.csv", rows)
        write_probe_csv(Path(run_dir) / "probe.csv", probes)
    return rows, probes


def write_probe_csv(path, probes):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["configuration", "personality_accuracy", "noise_accuracy", "gap"])
        for label, p in probes.items():
            writer.writerow([
                label,
                f"{p['personality_accuracy']:.6f}",
                f"{p['noise_accuracy']:.6f}",
                f"{p['gap']:.6f}",
            ])
