"""Video-level pipeline: descriptor extraction, spectral encoding,
prediction modes, and split evaluation."""

from pathlib import Path

import numpy as np

from facedyn.data import video_segments
from facedyn.engine import Tensor, concat, no_grad
from facedyn.fileio import heatmap_csv, save_descriptors, save_heatmap
from facedyn.metrics import acc_metric
from facedyn.spectral import build_heatmap, stack_two_channel


def descriptor_matrix(model, video, segment_length):
    """[N, descriptor_dim] float32: one backbone descriptor per segment."""
    model.eval()
    segs = Tensor(video_segments(video, segment_length))
    with no_grad():
        desc = model.descriptors(segs)
    return np.asarray(desc.data, dtype=np.float32)


def personality_matrix(model, video, segment_length):
    """[N, 5 * d_ds] float32: concatenated per-trait personality
    features per segment (the disentangled spectral-input variant)."""
    model.eval()
    segs = Tensor(video_segments(video, segment_length))
    with no_grad():
        _, rep = model.representation(segs)
        pairs = model.ds.encode_all(rep)
        features = concat([p for p, _ in pairs], axis=-1)
    return np.asarray(features.data, dtype=np.float32)


def spectral_matrix(model, video, config):
    """The per-segment feature rows the spectral encoder consumes."""
    if config.ds.spectral_input == "ds_personality":
        return personality_matrix(model, video, config.model.segment_length)
    return descriptor_matrix(model, video, config.model.segment_length)


def encode_video(model, video, config):
    """Video -> two-channel spectral heatmap of its feature sequence."""
    matrix = spectral_matrix(model, video, config)
    heatmap = build_heatmap(
        matrix.astype(np.float64).T, config.spectral.m, video_id=video.video_id
    )
    return matrix, heatmap


def encode_split(model, videos, config):
    """-> (heatmap batch [n, 2, D, M] float32, labels [n, 5])."""
    stacks, labels = [], []
    for v in videos:
        _, heatmap = encode_video(model, v, config)
        stacks.append(stack_two_channel(heatmap).astype(np.float32))
        labels.append(v.traits)
    return np.stack(stacks), np.stack(labels)


def encode_to_dir(model, videos, out_dir, config, csv=False):
    """One descriptor file and one heatmap file per video."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for v in videos:
        matrix, heatmap = encode_video(model, v, config)
        stem = out_dir / f"video_{v.video_id:05d}"
        save_descriptors(f"{stem}.desc", v.video_id, matrix)
        save_heatmap(f"{stem}.heat", heatmap)
        if csv:
            Path(f"{stem}.heat.csv").write_text(heatmap_csv(heatmap))
        paths.append(stem)
    return paths


def predict_video(model, head, video, config, mode=None):
    """[5] trait prediction for one video.

    segment_average: mean of the disentanglement-head predictions over
    all segments. spectral_head: heatmap through the multitask head.
    """
    mode = mode or config.video_prediction
    if mode == "segment_average":
        model.eval()
        segs = Tensor(video_segments(video, config.model.segment_length))
        with no_grad():
            preds = model.predict_segments(segs)
        return np.asarray(preds.data, dtype=np.float64).mean(axis=0)
    if mode == "spectral_head":
        if head is None:
            raise ValueError("spectral_head prediction requires a trained head")
        _, heatmap = encode_video(model, video, config)
        head.eval()
        with no_grad():
            pred = head.predict(Tensor(stack_two_channel(heatmap)[None].astype(np.float32)))
        return np.asarray(pred.data, dtype=np.float64).reshape(-1)
    raise ValueError(f"unknown prediction mode {mode!r}")


def evaluate_split(model, head, videos, config, mode=None):
    """ACC metrics of the chosen prediction mode over a video list."""
    preds = np.stack([predict_video(model, head, v, config, mode) for v in videos])
    labels = np.stack([v.traits for v in videos])
    return acc_metric(np.clip(preds, 0.0, 1.0), labels)


def mean_baseline_metrics(train_videos, eval_videos):
    """Predict-the-training-mean baseline for a split."""
    mean = np.stack([v.traits for v in train_videos]).mean(axis=0)
    preds = np.tile(mean, (len(eval_videos), 1))
    labels = np.stack([v.traits for v in eval_videos])
    return acc_metric(preds, labels)
