"""Short-term backbone: C3D feature extractor, multi-scale temporal
down-sampling, per-scale transformers, and fusion into a 64-d segment
descriptor.

Feature volumes use [C, T, W, H] axis order (batched: [B, C, T, W, H]);
time series use [channels, time] (batched: [B, channels, time]).
"""

import numpy as np

from facedyn.engine import Module, ModuleList, concat
from facedyn.engine import functional as F
from facedyn.engine.nn import BatchNorm3d, Conv3d, Linear, MultiHeadSelfAttention

C3D_CHANNELS = (16, 32, 64)
SPATIAL_REDUCTION = 8  # three blocks of spatial stride 2


class C3DBackbone(Module):
    """Three (conv3d -> batchnorm3d -> relu) blocks.

    Channels in_channels -> 16 -> 32 -> 64; temporal stride 1 so T is
    preserved; spatial stride 2 per block so H and W shrink by 8 total.
    """

    def __init__(self, in_channels=3):
        super().__init__()
        self.in_channels = in_channels
        chans = (in_channels,) + C3D_CHANNELS
        self.convs = ModuleList(
            Conv3d(chans[i], chans[i + 1], kernel=(3, 3, 3), stride=(1, 2, 2), padding=(1, 1, 1))
            for i in range(3)
        )
        self.norms = ModuleList(BatchNorm3d(c) for c in C3D_CHANNELS)
        self.out_channels = C3D_CHANNELS[-1]

    def forward(self, clips):
        """[B, C_in, T, H, W] -> feature volumes [B, 64, T, W', H']."""
        B, C, T, H, W = clips.shape
        if C != self.in_channels:
            raise ValueError(f"c3d: expected {self.in_channels} input channels, got {C}")
        if H % SPATIAL_REDUCTION or W % SPATIAL_REDUCTION:
            raise ValueError(
                f"c3d: spatial size {H}x{W} not divisible by {SPATIAL_REDUCTION}"
            )
        x = clips
        for conv, norm in zip(self.convs, self.norms):
            x = F.relu(norm(conv(x)))
        # conv layout [B, C, T, H, W] -> volume layout [B, C, T, W, H]
        return x.transpose(0, 1, 2, 4, 3)


def aggregate_maps(volume):
    """Feature volume [C, T, W, H] -> multi-channel time series [CWH, T].

    Element (c*W*H + w*H + h, t) equals volume(c, t, w, h). A leading
    batch axis is passed through.
    """
    if len(volume.shape) == 4:
        C, T, W, H = volume.shape
        return volume.transpose(0, 2, 3, 1).reshape(C * W * H, T)
    B, C, T, W, H = volume.shape
    return volume.transpose(0, 1, 3, 4, 2).reshape(B, C * W * H, T)


def restore_volume(series, C, W, H):
    """Inverse of aggregate_maps: [CWH, T] -> [C, T, W, H]."""
    if len(series.shape) == 2:
        T = series.shape[1]
        return series.reshape(C, W, H, T).transpose(0, 3, 1, 2)
    B, _, T = series.shape
    return series.reshape(B, C, W, H, T).transpose(0, 1, 4, 2, 3)


def temporal_downsample(series, rates):
    """Keep columns {0, rate, 2*rate, ...} of the time axis per rate.

    Returns one series per rate with lengths ceil(T / rate).
    """
    rates = list(rates)
    if not rates:
        raise ValueError("temporal_downsample: empty rate list")
    if any(r < 1 for r in rates):
        raise ValueError(f"temporal_downsample: rates must be >= 1, got {rates}")
    if 1 not in rates:
        raise ValueError("temporal_downsample: rate 1 (the original scale) must be present")
    out = []
    for rate in rates:
        if rate == 1:
            out.append(series)
        elif len(series.shape) == 2:
            out.append(series[:, ::rate])
        else:
            out.append(series[:, :, ::rate])
    return out


def sinusoidal_encoding(length, d_model, dtype=np.float32):
    """Standard sin/cos positional table of shape [length, d_model]."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    dim = np.arange(0, d_model, 2, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, dim / d_model)
    table = np.zeros((length, d_model), dtype=np.float64)
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles[:, : d_model // 2])
    return table.astype(dtype)


class FeedForward(Module):
    def __init__(self, d_model, d_ff):
        super().__init__()
        self.fc1 = Linear(d_model, d_ff)
        self.fc2 = Linear(d_ff, d_model)

    def forward(self, x):
        return self.fc2(F.relu(self.fc1(x)))


class ScaleTransformer(Module):
    """One temporal scale: project time steps to d_model tokens, add
    sinusoidal positions, run two attention + feed-forward layers with
    residual connections, mean-pool over time, emit a 64-d vector.
    """

    def __init__(self, in_dim, d_model=96, heads=6, d_ff=192, out_dim=64,
                 use_positional=True):
        super().__init__()
        self.d_model = d_model
        self.use_positional = use_positional
        self.input_proj = Linear(in_dim, d_model)
        self.attn1 = MultiHeadSelfAttention(d_model, heads)
        self.ff1 = FeedForward(d_model, d_ff)
        self.attn2 = MultiHeadSelfAttention(d_model, heads)
        self.ff2 = FeedForward(d_model, d_ff)
        self.out_proj = Linear(d_model, out_dim)

    def forward(self, series):
        """[B, CWH, T_k] (or [CWH, T_k]) -> [B, out_dim] (or [out_dim])."""
        single = len(series.shape) == 2
        if single:
            series = series.reshape(1, *series.shape)
        tokens = series.transpose(0, 2, 1)  # [B, T_k, CWH]
        x = self.input_proj(tokens)
        if self.use_positional:
            x = x + sinusoidal_encoding(x.shape[1], self.d_model, dtype=x.data.dtype)
        x = x + self.attn1(x)
        x = x + self.ff1(x)
        x = x + self.attn2(x)
        x = x + self.ff2(x)
        pooled = x.mean(axis=1)  # [B, d_model]
        out = self.out_proj(pooled)
        return out.reshape(out.shape[1]) if single else out


class C3DTransformer(Module):
    """Full short-term backbone: clip -> 64-d segment descriptor."""

    def __init__(self, in_channels=3, frame_size=(32, 32), rates=(1, 2, 5),
                 d_model=96, heads=6, d_ff=192, descriptor_dim=64,
                 share_scale_transformers=False, use_positional=True):
        super().__init__()
        H, W = frame_size
        if H % SPATIAL_REDUCTION or W % SPATIAL_REDUCTION:
            raise ValueError(
                f"c3d: spatial size {H}x{W} not divisible by {SPATIAL_REDUCTION}"
            )
        self.rates = tuple(rates)
        if not self.rates:
            raise ValueError("temporal_downsample: empty rate list")
        self.descriptor_dim = descriptor_dim
        self.share_scale_transformers = share_scale_transformers
        self.c3d = C3DBackbone(in_channels)
        cwh = C3D_CHANNELS[-1] * (W // SPATIAL_REDUCTION) * (H // SPATIAL_REDUCTION)
        self.series_channels = cwh
        n_transformers = 1 if share_scale_transformers else len(self.rates)
        self.scale_transformers = ModuleList(
            ScaleTransformer(cwh, d_model, heads, d_ff, descriptor_dim, use_positional)
            for _ in range(n_transformers)
        )
        self.fusion = Linear(len(self.rates) * descriptor_dim, descriptor_dim)

    def scale_transformer_for(self, k):
        return self.scale_transformers[0 if self.share_scale_transformers else k]

    def fuse_scales(self, per_scale):
        """K per-scale [B, 64] tensors -> [B, 64] segment descriptor."""
        if len(per_scale) != len(self.rates):
            raise ValueError(
                f"fuse_scales: expected {len(self.rates)} scale inputs, got {len(per_scale)}"
            )
        return self.fusion(concat(per_scale, axis=-1))

    def forward_with_scales(self, clips):
        """[B, C_in, T, H, W] -> (descriptor [B, descriptor_dim],
        per-scale [B, descriptor_dim] list, one entry per rate)."""
        volume = self.c3d(clips)
        series = aggregate_maps(volume)
        scales = temporal_downsample(series, self.rates)
        per_scale = [self.scale_transformer_for(k)(s) for k, s in enumerate(scales)]
        return self.fuse_scales(per_scale), per_scale

    def forward(self, clips):
        """[B, C_in, T, H, W] -> descriptors [B, descriptor_dim]."""
        descriptor, _ = self.forward_with_scales(clips)
        return descriptor
