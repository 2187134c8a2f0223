"""Three-stage training: C3D warm-up, full backbone with the
disentanglement objective, then the spectral multitask head.

Every stage is a plain sequential loop with per-epoch validation,
early stopping on validation accuracy (best weights retained), a
divergence guard, and a JSON manifest recording how it ran.
"""

from pathlib import Path

import numpy as np

from facedyn import N_TRAITS
from facedyn.backbone import C3D_CHANNELS, C3DBackbone, C3DTransformer
from facedyn.config import config_hash
from facedyn.data import dataset_hash, video_segments
from facedyn.disentangle import (
    DisentanglementModule,
    DSLossWeights,
    PerScaleDisentanglement,
    loss_overall,
)
from facedyn.engine import Module, Tensor, no_grad
from facedyn.engine import functional as F
from facedyn.engine.checkpoint import save_state
from facedyn.engine.nn import Linear
from facedyn.engine.optim import Adam
from facedyn.engine.rng import derive_seed, stream
from facedyn.fileio import write_manifest
from facedyn.head import MultiTaskHead, head_loss
from facedyn.metrics import acc_metric

STAGE1_CHECKPOINT = "stage1_c3d.fct"
STAGE2_CHECKPOINT = "backbone.fct"
STAGE3_CHECKPOINT = "head.fct"


def ds_weights(config):
    """Loss weights for the configured run; disabling the
    disentanglement strategy keeps only the supervision term."""
    ds = config.ds
    if ds.enabled:
        return DSLossWeights(ds.alpha, ds.beta, ds.gamma)
    return DSLossWeights(ds.alpha, 0.0, 0.0)


class Stage1Regressor(Module):
    """Throwaway segment-level head used only to warm up the C3D block:
    global average pooling of the feature volume into a linear sigmoid
    regressor over the five traits."""

    def __init__(self, in_channels=3):
        super().__init__()
        self.c3d = C3DBackbone(in_channels)
        self.fc = Linear(C3D_CHANNELS[-1], N_TRAITS)

    def forward(self, clips):
        volume = self.c3d(clips)             # [B, C, T, W, H]
        pooled = volume.mean(axis=(2, 3, 4))  # [B, C]
        return F.sigmoid(self.fc(pooled))


class BackboneWithDS(Module):
    """Backbone plus the disentanglement module it is trained with."""

    def __init__(self, config):
        super().__init__()
        mc, dc, data = config.model, config.ds, config.data
        self.encoder = C3DTransformer(
            in_channels=data.channels,
            frame_size=(data.frame_size, data.frame_size),
            rates=mc.rates,
            d_model=mc.d_model,
            heads=mc.heads,
            d_ff=mc.d_ff,
            descriptor_dim=mc.descriptor_dim,
            share_scale_transformers=mc.share_scale_transformers,
            use_positional=mc.use_positional,
        )
        self.per_scale = dc.per_scale
        kwargs = dict(
            in_dim=mc.descriptor_dim, d_ds=dc.dim, hidden=dc.hidden,
            dropout=dc.dropout, orthogonality=dc.orthogonality,
            decoder_combine=dc.decoder_combine,
        )
        if dc.per_scale:
            self.ds = PerScaleDisentanglement(len(mc.rates), **kwargs)
        else:
            self.ds = DisentanglementModule(**kwargs)

    def representation(self, clips):
        descriptor, scales = self.encoder.forward_with_scales(clips)
        return descriptor, (scales if self.per_scale else descriptor)

    def losses(self, clips, labels, weights):
        """(overall loss, (loss1, loss2-or-None, loss3-or-None))."""
        _, rep = self.representation(clips)
        l1, l2, l3 = self.ds.losses(rep, labels, weights)
        return loss_overall(l1, l2, l3, weights), (l1, l2, l3)

    def descriptors(self, clips):
        return self.encoder(clips)

    def predict_segments(self, clips):
        """[B, C, T, H, W] -> [B, 5] trait predictions."""
        _, rep = self.representation(clips)
        return self.ds.predict(rep)


# -------------------------------------------------------------- loop helpers

class EarlyStopper:
    """Tracks validation accuracy; keeps the best weights seen."""

    def __init__(self, patience):
        self.patience = patience
        self.best_score = -np.inf
        self.best_state = None
        self.bad_epochs = 0

    def update(self, score, module):
        if score > self.best_score:
            self.best_score = score
            self.best_state = {k: v.copy() for k, v in module.state_dict().items()}
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience


def _guard_finite(value, stage):
    if not np.isfinite(value):
        raise RuntimeError(f"{stage}: training diverged (non-finite loss)")


class _divergence_guard:
    """Rewrites the engine's non-finite activation errors as a
    divergence abort, so exploding runs fail with one clear message."""

    def __init__(self, stage):
        self.stage = stage

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is ValueError and "non-finite" in str(exc):
            raise RuntimeError(
                f"{self.stage}: training diverged (non-finite activations)"
            ) from exc
        return False


def _batches(n, batch_size, gen):
    order = gen.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _segment_table(videos, segment_length):
    """All (segment, video label) pairs of a split, plus per-video slices."""
    clips, labels, slices = [], [], []
    cursor = 0
    for v in videos:
        segs = video_segments(v, segment_length)
        clips.append(segs)
        labels.append(np.tile(v.traits, (segs.shape[0], 1)))
        slices.append((cursor, cursor + segs.shape[0]))
        cursor += segs.shape[0]
    return (
        np.concatenate(clips).astype(np.float32),
        np.concatenate(labels).astype(np.float32),
        slices,
    )


def _eval_regression_loss(model, clips, labels, chunk=64):
    """Eval-mode mean squared error of a segment regressor."""
    model.eval()
    total, count = 0.0, 0
    with no_grad():
        for start in range(0, len(clips), chunk):
            preds = model(Tensor(clips[start:start + chunk]))
            diff = np.asarray(preds.data, dtype=np.float64) - labels[start:start + chunk]
            total += float((diff * diff).sum())
            count += diff.size
    return total / count


def _eval_orthogonality(model, clips, labels, weights, chunk=64):
    """Eval-mode per-segment average of the orthogonality objective."""
    model.eval()
    total = 0.0
    with no_grad():
        for start in range(0, len(clips), chunk):
            _, (_, l2, _) = model.losses(
                Tensor(clips[start:start + chunk]), labels[start:start + chunk], weights
            )
            total += float(l2.data)
    return total / len(clips)


def _video_level_acc(predict_batch, videos, segment_length):
    """ACC of per-video mean segment predictions against the labels."""
    preds, labels = [], []
    with no_grad():
        for v in videos:
            segs = Tensor(video_segments(v, segment_length))
            p = predict_batch(segs)
            preds.append(np.asarray(p.data, dtype=np.float64).mean(axis=0))
            labels.append(v.traits)
    return acc_metric(np.clip(np.stack(preds), 0.0, 1.0), np.stack(labels))


def _finish(model, stopper, run_dir, checkpoint_name, stage, manifest):
    if stopper.best_state is not None:
        model.load_state_dict(stopper.best_state)
    if run_dir is not None:
        Path(run_dir).mkdir(parents=True, exist_ok=True)
        save_state(str(Path(run_dir) / checkpoint_name), model.state_dict())
        write_manifest(run_dir, stage, manifest)
    return model


# -------------------------------------------------------------------- stages

def train_stage1(dataset, config, run_dir=None):
    """C3D warm-up: plain MSE from pooled segment features to the
    video-level labels. Returns (model, history)."""
    tc = config.train
    model = Stage1Regressor(config.data.channels)
    model.initialize(derive_seed(tc.seed, "stage1/init"))
    opt = Adam(model.parameters(), lr=tc.stage1_lr)
    clips, labels, _ = _segment_table(dataset.train, config.model.segment_length)
    shuffle = stream(tc.seed, "stage1/shuffle")
    stopper = EarlyStopper(tc.patience)
    # train_loss[0] is the loss at step 0; train_loss[e] the loss after epoch e.
    history = {
        "train_loss": [_eval_regression_loss(model, clips, labels)],
        "epoch_losses": [],
        "val_acc": [],
    }

    for epoch in range(tc.stage1_epochs):
        model.train()
        epoch_losses = []
        for idx in _batches(len(clips), tc.stage1_batch, shuffle):
            opt.zero_grad()
            with _divergence_guard("stage1"):
                preds = model(Tensor(clips[idx]))
                loss = F.mse_loss(preds, Tensor(labels[idx]), reduction="mean")
            value = float(loss.data)
            _guard_finite(value, "stage1")
            loss.backward()
            opt.step()
            epoch_losses.append(value)
        history["epoch_losses"].append(float(np.mean(epoch_losses)))
        history["train_loss"].append(_eval_regression_loss(model, clips, labels))
        acc = _video_level_acc(model, dataset.val, config.model.segment_length)
        history["val_acc"].append(acc["Avg"])
        if stopper.update(acc["Avg"], model):
            break

    history["best_val_acc"] = stopper.best_score
    manifest = {
        "seed": tc.seed,
        "learning_rate": tc.stage1_lr,
        "batch_size": tc.stage1_batch,
        "optimizer": "adam",
        "epochs_run": len(history["epoch_losses"]),
        "config_hash": config_hash(config),
        "data_hash": dataset_hash(dataset),
        "best_val_acc": stopper.best_score,
    }
    model = _finish(model, stopper, run_dir, STAGE1_CHECKPOINT, "stage1", manifest)
    return model, history


def train_stage2(dataset, config, run_dir=None, stage1_model=None):
    """Full backbone + disentanglement training on the weighted
    objective (supervision term alone when the strategy is disabled)."""
    tc = config.train
    weights = ds_weights(config)
    model = BackboneWithDS(config)
    model.initialize(derive_seed(tc.seed, "stage2/init"))
    if stage1_model is not None:
        model.encoder.c3d.load_state_dict(stage1_model.c3d.state_dict())
    opt = Adam(model.parameters(), lr=tc.stage2_lr)
    clips, labels, _ = _segment_table(dataset.train, config.model.segment_length)
    shuffle = stream(tc.seed, "stage2/shuffle")
    stopper = EarlyStopper(tc.patience)
    track_ortho = weights.beta > 0
    # loss2[0] is the value at step 0; loss2[e] the value after epoch e.
    history = {"epoch_losses": [], "val_acc": []}
    if track_ortho:
        history["loss2"] = [_eval_orthogonality(model, clips, labels, weights)]

    for epoch in range(tc.stage2_epochs):
        model.train()
        totals = []
        for idx in _batches(len(clips), tc.stage2_batch, shuffle):
            opt.zero_grad()
            with _divergence_guard("stage2"):
                loss, _ = model.losses(Tensor(clips[idx]), labels[idx], weights)
            value = float(loss.data)
            _guard_finite(value, "stage2")
            loss.backward()
            opt.step()
            totals.append(value)
        history["epoch_losses"].append(float(np.mean(totals)))
        if track_ortho:
            history["loss2"].append(_eval_orthogonality(model, clips, labels, weights))
        model.eval()
        acc = _video_level_acc(
            model.predict_segments, dataset.val, config.model.segment_length
        )
        history["val_acc"].append(acc["Avg"])
        if stopper.update(acc["Avg"], model):
            break

    history["best_val_acc"] = stopper.best_score
    manifest = {
        "seed": tc.seed,
        "learning_rate": tc.stage2_lr,
        "batch_size": tc.stage2_batch,
        "optimizer": "adam",
        "epochs_run": len(history["epoch_losses"]),
        "loss_weights": [weights.alpha, weights.beta, weights.gamma],
        "ds_enabled": config.ds.enabled,
        "config_hash": config_hash(config),
        "data_hash": dataset_hash(dataset),
        "best_val_acc": stopper.best_score,
    }
    model = _finish(model, stopper, run_dir, STAGE2_CHECKPOINT, "stage2", manifest)
    return model, history


def build_head(config, heatmap_channels):
    return MultiTaskHead(
        d=heatmap_channels,
        m=config.spectral.m,
        branch_channels=config.head.branch_channels,
        single_hidden=config.head.single_hidden,
        res_channels=config.head.res_channels,
        fc_dims=config.head.fc_dims,
        dropout=config.head.dropout,
        include_multi=config.head.include_multi,
    )


def train_stage3(train_heatmaps, train_labels, val_heatmaps, val_labels,
                 config, run_dir=None):
    """Multitask head on spectral heatmaps. Heatmap batches are
    [n, 2, D, M] arrays; labels are [n, 5]."""
    tc = config.train
    train_heatmaps = np.asarray(train_heatmaps, dtype=np.float32)
    val_heatmaps = np.asarray(val_heatmaps, dtype=np.float32)
    head = build_head(config, train_heatmaps.shape[2])
    head.initialize(derive_seed(tc.seed, "stage3/init"))
    head.fit_input_scaling(train_heatmaps)
    opt = Adam(head.parameters(), lr=tc.stage3_lr)
    shuffle = stream(tc.seed, "stage3/shuffle")
    stopper = EarlyStopper(tc.patience)
    history = {"epoch_losses": [], "val_acc": []}

    for epoch in range(tc.stage3_epochs):
        head.train()
        epoch_losses = []
        for idx in _batches(len(train_heatmaps), tc.stage3_batch, shuffle):
            opt.zero_grad()
            with _divergence_guard("stage3"):
                singles, multi = head(Tensor(train_heatmaps[idx]))
                loss = head_loss(singles, multi, Tensor(train_labels[idx]))
            value = float(loss.data)
            _guard_finite(value, "stage3")
            loss.backward()
            opt.step()
            epoch_losses.append(value)
        history["epoch_losses"].append(float(np.mean(epoch_losses)))
        head.eval()
        with no_grad():
            preds = head.predict(Tensor(val_heatmaps)).data
        acc = acc_metric(np.asarray(preds, dtype=np.float64), val_labels)
        history["val_acc"].append(acc["Avg"])
        if stopper.update(acc["Avg"], head):
            break

    history["best_val_acc"] = stopper.best_score
    manifest = {
        "seed": tc.seed,
        "learning_rate": tc.stage3_lr,
        "batch_size": tc.stage3_batch,
        "optimizer": "adam",
        "epochs_run": len(history["epoch_losses"]),
        "include_multi": config.head.include_multi,
        "config_hash": config_hash(config),
        "best_val_acc": stopper.best_score,
    }
    head = _finish(head, stopper, run_dir, STAGE3_CHECKPOINT, "stage3", manifest)
    return head, history
