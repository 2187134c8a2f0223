"""Multi-task prediction head over spectral heatmaps: five single-trait
convolutional branches with intermediate supervision, plus a residual
multi-trait module that models inter-trait relationships and emits the
final five predictions.
"""

import numpy as np

from facedyn import N_TRAITS
from facedyn.engine import Module, ModuleList, Tensor, concat
from facedyn.engine import functional as F
from facedyn.engine.nn import Conv1d, Dropout, Linear


class TraitBranch(Module):
    """Three (conv1d -> dropout -> ReLU) blocks, 2D channels down to 64."""

    def __init__(self, in_channels, branch_channels=64, dropout=0.5):
        super().__init__()
        chans = (in_channels, branch_channels, branch_channels, branch_channels)
        self.convs = ModuleList(
            Conv1d(chans[i], chans[i + 1], kernel=3, stride=1, padding=1)
            for i in range(3)
        )
        self.drops = ModuleList(Dropout(dropout) for _ in range(3))
        self.out_channels = branch_channels

    def forward(self, x):
        for conv, drop in zip(self.convs, self.drops):
            x = F.relu(drop(conv(x)))
        return x


class SingleTraitHead(Module):
    """flatten -> linear -> ReLU -> linear -> sigmoid scalar."""

    def __init__(self, in_dim, hidden=64):
        super().__init__()
        self.in_dim = in_dim
        self.fc1 = Linear(in_dim, hidden)
        self.fc2 = Linear(hidden, 1)

    def forward(self, feature):
        flat = feature.reshape(feature.shape[0], self.in_dim)
        return F.sigmoid(self.fc2(F.relu(self.fc1(flat))))


class ResidualBlock1d(Module):
    """conv1d-k3-p1 -> ReLU -> conv1d-k3-p1, plus a skip connection.

    The skip is a 1x1 projection when channel counts differ, identity
    otherwise; a ReLU follows the addition.
    """

    def __init__(self, c_in, c_out):
        super().__init__()
        self.conv1 = Conv1d(c_in, c_out, kernel=3, stride=1, padding=1)
        self.conv2 = Conv1d(c_out, c_out, kernel=3, stride=1, padding=1)
        self.skip = Conv1d(c_in, c_out, kernel=1) if c_in != c_out else None

    def forward(self, x):
        main = self.conv2(F.relu(self.conv1(x)))
        shortcut = self.skip(x) if self.skip is not None else x
        return F.relu(main + shortcut)


class MultiTraitModule(Module):
    """Concatenated branch features -> residual blocks -> GAP -> 3 FC -> sigmoid."""

    def __init__(self, in_channels, res_channels=128, fc_dims=(64, 32)):
        super().__init__()
        self.block1 = ResidualBlock1d(in_channels, res_channels)
        self.block2 = ResidualBlock1d(res_channels, res_channels)
        self.fc1 = Linear(res_channels, fc_dims[0])
        self.fc2 = Linear(fc_dims[0], fc_dims[1])
        self.fc3 = Linear(fc_dims[1], N_TRAITS)

    def forward(self, features):
        """Five same-shape [B, C, M] branch features -> [B, 5] predictions."""
        if len(features) != N_TRAITS:
            raise ValueError(f"expected {N_TRAITS} branch features, got {len(features)}")
        x = concat(features, axis=1)  # [B, 5*C, M]
        x = self.block2(self.block1(x))
        pooled = F.global_avg_pool(x)  # [B, res_channels]
        h = F.relu(self.fc2(F.relu(self.fc1(pooled))))
        return F.sigmoid(self.fc3(h))


class MultiTaskHead(Module):
    """The full prediction model over [B, 2, D, M] heatmap batches."""

    def __init__(self, d=64, m=32, branch_channels=64, single_hidden=64,
                 res_channels=128, fc_dims=(64, 32), dropout=0.5,
                 include_multi=True):
        super().__init__()
        self.d = d
        self.m = m
        self.include_multi = include_multi
        in_channels = 2 * d
        self.branches = ModuleList(
            TraitBranch(in_channels, branch_channels, dropout) for _ in range(N_TRAITS)
        )
        self.single_heads = ModuleList(
            SingleTraitHead(branch_channels * m, single_hidden) for _ in range(N_TRAITS)
        )
        self.multi = (
            MultiTraitModule(N_TRAITS * branch_channels, res_channels, fc_dims)
            if include_multi else None
        )
        self.register_buffer("input_shift", np.zeros((2, d, m), dtype=np.float32))
        self.register_buffer("input_scale", np.ones((2, d, m), dtype=np.float32))

    def reset_buffers(self):
        self.input_shift[...] = 0.0
        self.input_scale[...] = 1.0

    @staticmethod
    def _cartesian(raw):
        """[..., 2, D, M] amplitude/phase -> same-shape (real, imaginary).

        Every spectral coefficient — the signed per-channel mean at k=0
        included — is then a linear function of the descriptor sequence,
        and coefficient magnitudes stay comparable across frequencies.
        """
        amp = raw[..., 0, :, :]
        phase = raw[..., 1, :, :]
        return np.stack([amp * np.cos(phase), amp * np.sin(phase)], axis=-3)

    def fit_input_scaling(self, heatmaps):
        """Standardize each Cartesian input cell from training statistics.

        The shift/scale pair lives in checkpoint buffers, so a reloaded
        head reproduces predictions bit-exactly.
        """
        cart = self._cartesian(np.asarray(heatmaps, dtype=np.float32))
        if cart.ndim != 4:
            raise ValueError("input scaling expects a [n, 2, D, M] heatmap batch")
        self.input_shift[...] = cart.mean(axis=0)
        self.input_scale[...] = np.maximum(cart.std(axis=0), 1e-6)
        return self

    def _to_sequence(self, heatmaps):
        """[B, 2, D, M] amplitude/phase -> [B, 2*D, M] convolution input.

        Heatmaps are stored input features, never differentiated through,
        so the Cartesian conversion and standardization run on the raw
        array and re-enter the graph as a constant.
        """
        if len(heatmaps.shape) == 3:
            heatmaps = heatmaps.reshape(1, *heatmaps.shape)
        B, two, D, M = heatmaps.shape
        if two != 2 or D != self.d or M != self.m:
            raise ValueError(
                f"heatmap shape mismatch: got [{two}, {D}, {M}], "
                f"expected [2, {self.d}, {self.m}]"
            )
        cart = self._cartesian(np.asarray(heatmaps.data, dtype=np.float32))
        cart = (cart - self.input_shift) / self.input_scale
        return Tensor(cart).reshape(B, 2 * D, M)

    def branch_forward(self, heatmaps, trait_index):
        """Trait-specific [B, C, M] feature; trait_index is 1-based."""
        if not 1 <= trait_index <= N_TRAITS:
            raise ValueError(f"trait index must be in 1..{N_TRAITS}, got {trait_index}")
        return self.branches[trait_index - 1](self._to_sequence(heatmaps))

    def forward(self, heatmaps):
        """-> (single predictions [B, 5], multi predictions [B, 5] or None)."""
        x = self._to_sequence(heatmaps)
        features = [branch(x) for branch in self.branches]
        singles = concat(
            [head(feat) for head, feat in zip(self.single_heads, features)], axis=1
        )
        multi = self.multi(features) if self.multi is not None else None
        return singles, multi

    def predict(self, heatmaps):
        """Final [B, 5] prediction: the multi-trait output, or the five
        single-trait heads when the multi module is ablated."""
        singles, multi = self.forward(heatmaps)
        return multi if multi is not None else singles


def head_loss(singles, multi, labels):
    """Sum of the five single-branch losses plus the multi loss, batch mean.

    With the multi module ablated, pass multi=None and only the single
    terms contribute.
    """
    B = labels.shape[0]
    total = F.mse_loss(singles, labels, reduction="sum")
    if multi is not None:
        total = total + F.mse_loss(multi, labels, reduction="sum")
    return total / float(B)
