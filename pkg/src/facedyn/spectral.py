"""Video-level spectral encoding: per-channel discrete Fourier transform
of the segment-descriptor sequence, keeping the M lowest frequencies
(DC included) as a two-channel amplitude/phase heatmap.
"""

from dataclasses import dataclass

import numpy as np

EPS_PHASE = 1e-9  # amplitudes below this get phase 0 (deterministic across platforms)


@dataclass
class SpectralHeatmap:
    amplitude: np.ndarray  # [D, M], non-negative
    phase: np.ndarray      # [D, M], values in (-pi, pi]
    video_id: int = -1

    @property
    def channels(self):
        return self.amplitude.shape[0]

    @property
    def frequencies(self):
        return self.amplitude.shape[1]


def _amplitude_phase(spectrum):
    amplitude = np.abs(spectrum)
    phase = np.angle(spectrum)
    phase[amplitude < EPS_PHASE] = 0.0
    phase[phase == -np.pi] = np.pi  # keep phase in (-pi, pi]
    return amplitude, phase


def dft_channel(signal):
    """(amplitude, phase) of one real channel, all N frequency bins.

    X[k] = sum_n x[n] * exp(-2i*pi*k*n/N); amplitude[k] = |X[k]| and
    phase[k] = atan2(Im, Re), forced to 0 where the amplitude is
    negligible.
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError(f"dft_channel expects a non-empty 1-D signal, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("dft_channel: non-finite input")
    return _amplitude_phase(np.fft.fft(x))


def build_heatmap(matrix, M, video_id=-1, dtype=np.float32):
    """[D, N] descriptor sequence -> D x M amplitude and phase maps.

    Keeps frequency indices 0..M-1 (the M lowest, DC included). When
    N < M the signal is zero-padded to length M first, so every heatmap
    is exactly D x M.
    """
    seq = np.asarray(matrix, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[0] == 0 or seq.shape[1] == 0:
        raise ValueError(f"build_heatmap expects a non-empty [D, N] matrix, got shape {seq.shape}")
    if M < 1:
        raise ValueError(f"build_heatmap: M must be >= 1, got {M}")
    if not np.all(np.isfinite(seq)):
        raise ValueError("build_heatmap: non-finite input")
    D, N = seq.shape
    if N < M:
        seq = np.pad(seq, ((0, 0), (0, M - N)))
    spectrum = np.fft.fft(seq, axis=1)[:, :M]
    amplitude, phase = _amplitude_phase(spectrum)
    return SpectralHeatmap(amplitude.astype(dtype), phase.astype(dtype), video_id)


def stack_two_channel(heatmap):
    """[2, D, M] array: channel 0 = amplitude, channel 1 = phase.

    This ordering is part of the file and model contract.
    """
    return np.stack([heatmap.amplitude, heatmap.phase], axis=0)


def split_two_channel(stacked, video_id=-1):
    """Inverse of stack_two_channel."""
    if stacked.shape[0] != 2:
        raise ValueError(f"expected leading axis 2 (amplitude, phase), got {stacked.shape}")
    return SpectralHeatmap(stacked[0], stacked[1], video_id)
