"""Disentanglement of segment descriptors into personality-related and
personality-unrelated (noise) features.

Five encoder pairs split the 64-d descriptor per trait; per-trait
classifier heads supervise the personality features; an orthogonality
penalty pushes each pair apart; five decoders reconstruct the original
descriptor from each pair so the noise channel keeps real information
instead of collapsing to zero.
"""

from dataclasses import dataclass

import numpy as np

from facedyn import N_TRAITS
from facedyn.engine import Module, ModuleList, Tensor, concat
from facedyn.engine import functional as F
from facedyn.engine.nn import Dropout, Linear


@dataclass(frozen=True)
class DSLossWeights:
    alpha: float = 1.0
    beta: float = 0.05
    gamma: float = 0.5

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.gamma < 0:
            raise ValueError(
                f"loss weights must be non-negative, got "
                f"({self.alpha}, {self.beta}, {self.gamma})"
            )
        if self.alpha == 0:
            raise ValueError("alpha must be positive: supervision cannot be disabled")


class FeatureEncoder(Module):
    """linear -> ReLU -> dropout -> linear."""

    def __init__(self, in_dim, hidden, out_dim, dropout=0.5):
        super().__init__()
        self.fc1 = Linear(in_dim, hidden)
        self.drop = Dropout(dropout)
        self.fc2 = Linear(hidden, out_dim)

    def forward(self, x):
        return self.fc2(self.drop(F.relu(self.fc1(x))))


class DisentanglementModule(Module):
    """Five personality/noise encoder pairs over one representation."""

    def __init__(self, in_dim=64, d_ds=32, hidden=64, dropout=0.5,
                 orthogonality="per_sample", decoder_combine="concat"):
        super().__init__()
        if orthogonality not in ("per_sample", "batch_matrix"):
            raise ValueError(f"unknown orthogonality mode {orthogonality!r}")
        if decoder_combine not in ("concat", "sum"):
            raise ValueError(f"unknown decoder_combine mode {decoder_combine!r}")
        self.in_dim = in_dim
        self.d_ds = d_ds
        self.orthogonality = orthogonality
        self.decoder_combine = decoder_combine
        self.personality_encoders = ModuleList(
            FeatureEncoder(in_dim, hidden, d_ds, dropout) for _ in range(N_TRAITS)
        )
        self.noise_encoders = ModuleList(
            FeatureEncoder(in_dim, hidden, d_ds, dropout) for _ in range(N_TRAITS)
        )
        dec_in = 2 * d_ds if decoder_combine == "concat" else d_ds
        self.decoders = ModuleList(
            FeatureEncoder(dec_in, hidden, in_dim, dropout) for _ in range(N_TRAITS)
        )
        self.classifiers = ModuleList(Linear(d_ds, 1) for _ in range(N_TRAITS))

    # -- encoding ---------------------------------------------------------

    def encode(self, x, trait_index):
        """(personality, noise) features for one trait; trait_index is 1-based."""
        if not 1 <= trait_index <= N_TRAITS:
            raise ValueError(f"trait index must be in 1..{N_TRAITS}, got {trait_index}")
        i = trait_index - 1
        return self.personality_encoders[i](x), self.noise_encoders[i](x)

    def encode_all(self, x):
        """All five (personality, noise) pairs for a [B, in_dim] batch."""
        return [self.encode(x, i) for i in range(1, N_TRAITS + 1)]

    # -- losses -----------------------------------------------------------

    def trait_predictions(self, pairs):
        """[B, 5] sigmoid predictions, one column per trait head."""
        cols = [
            F.sigmoid(self.classifiers[i](p)) for i, (p, _) in enumerate(pairs)
        ]
        return concat(cols, axis=1)

    def loss_supervision(self, pairs, labels):
        """Sum over batch and traits of squared prediction error."""
        label_data = labels.data if isinstance(labels, Tensor) else np.asarray(labels)
        if label_data.min() < 0.0 or label_data.max() > 1.0:
            raise ValueError("labels must lie in [0, 1]")
        preds = self.trait_predictions(pairs)
        target = labels if isinstance(labels, Tensor) else Tensor(label_data)
        return F.mse_loss(preds, target, reduction="sum")

    def loss_orthogonality(self, pairs):
        """Pushes each (personality, noise) pair toward orthogonality.

        per_sample: sum over traits and batch of squared per-sample inner
        products. batch_matrix: squared Frobenius norm of P^T N per trait.
        """
        total = None
        for p, n in pairs:
            if p.shape != n.shape:
                raise ValueError(
                    f"orthogonality: pair shapes differ: {p.shape} vs {n.shape}"
                )
            if self.orthogonality == "per_sample":
                dots = (p * n).sum(axis=1)
                term = (dots * dots).sum()
            else:
                gram = p.transpose(1, 0) @ n
                term = (gram * gram).sum()
            total = term if total is None else total + term
        return total

    def reconstruction_loss(self, pairs, original):
        """Mean over traits, batch, and feature dims of squared error."""
        total = None
        for i, (p, n) in enumerate(pairs):
            combined = concat([p, n], axis=1) if self.decoder_combine == "concat" else p + n
            rec = self.decoders[i](combined)
            if rec.shape[-1] != original.shape[-1]:
                raise ValueError(
                    f"decoder output dimension {rec.shape[-1]} != {original.shape[-1]}"
                )
            term = F.mse_loss(rec, original, reduction="sum")
            total = term if total is None else total + term
        B, D = original.shape
        return total / float(len(pairs) * B * D)

    def losses(self, x, labels, weights):
        """(loss1, loss2, loss3) on a [B, in_dim] batch.

        Orthogonality and reconstruction terms are skipped (returned as
        None) when their weights are zero, so a (α, 0, 0) run never even
        builds those graphs.
        """
        pairs = self.encode_all(x)
        l1 = self.loss_supervision(pairs, labels)
        l2 = self.loss_orthogonality(pairs) if weights.beta > 0 else None
        l3 = self.reconstruction_loss(pairs, x) if weights.gamma > 0 else None
        return l1, l2, l3

    # -- inference ----------------------------------------------------------

    def predict(self, x):
        """[B, in_dim] -> [B, 5] trait predictions in [0, 1] (or [in_dim] -> [5])."""
        single = len(x.shape) == 1
        if single:
            x = x.reshape(1, x.shape[0])
        preds = self.trait_predictions(self.encode_all(x))
        return preds.reshape(N_TRAITS) if single else preds


def loss_overall(l1, l2, l3, weights):
    """alpha*loss1 + beta*loss2 + gamma*loss3 with zero-weight terms skipped."""
    total = weights.alpha * l1
    if weights.beta > 0:
        if l2 is None:
            raise ValueError("beta > 0 but no orthogonality loss was computed")
        total = total + weights.beta * l2
    if weights.gamma > 0:
        if l3 is None:
            raise ValueError("gamma > 0 but no reconstruction loss was computed")
        total = total + weights.gamma * l3
    return total


class PerScaleDisentanglement(Module):
    """One DisentanglementModule per temporal scale.

    Losses are averaged over scales; predictions are the mean of the
    per-scale heads. With a single scale this reduces exactly to the
    plain module.
    """

    def __init__(self, n_scales, **kwargs):
        super().__init__()
        if n_scales < 1:
            raise ValueError("need at least one scale")
        self.modules_per_scale = ModuleList(
            DisentanglementModule(**kwargs) for _ in range(n_scales)
        )

    def losses(self, xs, labels, weights):
        if len(xs) != len(self.modules_per_scale):
            raise ValueError(
                f"expected {len(self.modules_per_scale)} representations, got {len(xs)}"
            )
        k = float(len(xs))
        l1 = l2 = l3 = None
        for m, x in zip(self.modules_per_scale, xs):
            a, b, c = m.losses(x, labels, weights)
            l1 = a if l1 is None else l1 + a
            if b is not None:
                l2 = b if l2 is None else l2 + b
            if c is not None:
                l3 = c if l3 is None else l3 + c
        l1 = l1 / k
        l2 = None if l2 is None else l2 / k
        l3 = None if l3 is None else l3 / k
        return l1, l2, l3

    def predict(self, xs):
        total = None
        for m, x in zip(self.modules_per_scale, xs):
            p = m.predict(x)
            total = p if total is None else total + p
        return total / float(len(xs))
