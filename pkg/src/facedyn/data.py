"""Synthetic identity-confounded video generator.

Every identity owns a fixed random color texture (the static confound)
and a base trait vector; each of its videos jitters those traits
slightly, so appearance correlates with labels inside a split. A white
Gaussian blob moves over the texture with motion statistics driven by
the five traits:

  z1 within-segment oscillation frequency of the horizontal sweep
  z2 sweep amplitude
  z3 blob radius
  z4 brightness-flicker depth
  z5 amplitude of the slow vertical drift spanning the whole video
     (one segment sees only the current offset at a random phase of the
     drift cycle; the full swing is a video-level cue)

Splits are identity-disjoint so a probe can ask whether features
memorize the texture. Frames are quantized to 1/255 steps and stored as
uint8, which is lossless for the stored values.
"""

import hashlib
from dataclasses import dataclass

import numpy as np

from facedyn import N_TRAITS
from facedyn.engine.rng import stream

TRAIT_JITTER = 0.12
DRIFT_CYCLES_PER_VIDEO = 0.75


@dataclass
class SyntheticVideo:
    video_id: int
    identity: int
    traits: np.ndarray            # [5] in [0, 1]
    frames: np.ndarray            # uint8 [T, C, H, W]

    @property
    def duration(self):
        return self.frames.shape[0]


@dataclass
class Dataset:
    train: list
    val: list
    test: list

    def split(self, name):
        return getattr(self, name)

    @property
    def splits(self):
        return {"train": self.train, "val": self.val, "test": self.test}


def identity_texture(data_seed, identity, channels, size):
    """Smooth per-identity color pattern in [0, 1]: a random 4x4 grid
    upsampled by separable linear interpolation."""
    gen = stream(data_seed, f"texture/{identity}")
    coarse = gen.uniform(size=(channels, 4, 4))
    grid = np.arange(4, dtype=np.float64)
    x = np.linspace(0.0, 3.0, size)
    rows = np.empty((channels, size, 4))
    for c in range(channels):
        for j in range(4):
            rows[c, :, j] = np.interp(x, grid, coarse[c, :, j])
    texture = np.empty((channels, size, size))
    for c in range(channels):
        for i in range(size):
            texture[c, i, :] = np.interp(x, grid, rows[c, i, :])
    return texture


def render_video(traits, texture, frames, segment_length, pixel_noise,
                 texture_weight, blob_weight, gen):
    """uint8 [T, C, H, W] clip for one video.

    `gen` drives the per-video nuisance randomness (motion phases and
    pixel noise); pass a zeroed generator substitute for the canonical
    noise-free rendering.
    """
    z1, z2, z3, z4, z5 = (float(v) for v in traits)
    C, H, W = texture.shape
    t = np.arange(frames, dtype=np.float64)

    if gen is None:
        phases = np.zeros(4)
        noise = 0.0
    else:
        phases = gen.uniform(0.0, 2.0 * np.pi, size=4)
        noise = gen.normal(0.0, pixel_noise, size=(frames, C, H, W))

    osc_cycles_per_segment = 0.3 + 1.7 * z1
    theta_osc = 2.0 * np.pi * osc_cycles_per_segment * t / segment_length + phases[0]
    amplitude = (0.10 + 0.30 * z2) * W
    x_center = 0.5 * W + amplitude * np.sin(theta_osc)

    theta_drift = 2.0 * np.pi * DRIFT_CYCLES_PER_VIDEO * t / frames + phases[1]
    drift_amplitude = (0.06 + 0.30 * z5) * H
    y_center = 0.5 * H + drift_amplitude * np.sin(theta_drift)

    radius = (0.10 + 0.22 * z3) * H
    flicker = 1.0 - 0.4 * z4 * (0.5 + 0.5 * np.sin(2.0 * np.pi * 0.45 * t + phases[2]))

    yy = np.arange(H, dtype=np.float64)[None, :, None]
    xx = np.arange(W, dtype=np.float64)[None, None, :]
    dist2 = (xx - x_center[:, None, None]) ** 2 + (yy - y_center[:, None, None]) ** 2
    blob = flicker[:, None, None] * np.exp(-dist2 / (2.0 * radius * radius))  # [T, H, W]

    clip = texture_weight * texture[None] + blob_weight * blob[:, None] + noise
    return np.round(np.clip(clip, 0.0, 1.0) * 255.0).astype(np.uint8)


def _split_identities(n_identities, sizes, gen):
    """Disjoint identity pools proportional to the split video counts."""
    ids = gen.permutation(n_identities)
    total = sum(sizes)
    n_val = max(1, round(n_identities * sizes[1] / total))
    n_test = max(1, round(n_identities * sizes[2] / total))
    n_train = n_identities - n_val - n_test
    if n_train < 1:
        raise ValueError(
            f"infeasible split: {n_identities} identities cannot cover "
            f"train/val/test sizes {sizes}"
        )
    return (
        ids[:n_train],
        ids[n_train:n_train + n_val],
        ids[n_train + n_val:],
    )


def _base_traits(seed, n_identities):
    """Per-identity base trait vectors: each trait is a stratified uniform
    sample over the identity set (one value per 1/n bin, randomly paired),
    so labels cover [0, 1] evenly even with few identities."""
    gen = stream(seed, "identity_traits")
    values = np.empty((n_identities, N_TRAITS))
    for j in range(N_TRAITS):
        bins = gen.permutation(n_identities)
        values[:, j] = (bins + gen.uniform(size=n_identities)) / n_identities
    return {i: values[i] for i in range(n_identities)}


def generate_dataset(data_config, segment_length):
    """Identity-disjoint train/val/test splits of synthetic videos."""
    cfg = data_config
    sizes = (cfg.n_train, cfg.n_val, cfg.n_test)
    pools = _split_identities(cfg.n_identities, sizes, stream(cfg.seed, "identity_split"))

    textures = {
        int(i): identity_texture(cfg.seed, int(i), cfg.channels, cfg.frame_size)
        for pool in pools for i in pool
    }
    base_traits = _base_traits(cfg.seed, cfg.n_identities)

    splits = []
    video_id = 0
    for pool, size in zip(pools, sizes):
        videos = []
        for j in range(size):
            identity = int(pool[j % len(pool)])
            gen = stream(cfg.seed, f"video/{video_id}")
            traits = np.clip(
                base_traits[identity] + gen.uniform(-TRAIT_JITTER, TRAIT_JITTER, N_TRAITS),
                0.0, 1.0,
            )
            frames = render_video(
                traits, textures[identity], cfg.frames_per_video, segment_length,
                cfg.pixel_noise, cfg.texture_weight, cfg.blob_weight, gen,
            )
            videos.append(SyntheticVideo(video_id, identity, traits, frames))
            video_id += 1
        splits.append(videos)

    dataset = Dataset(*splits)
    assert_split_hygiene(dataset)
    return dataset


def assert_split_hygiene(dataset):
    """No identity may appear in more than one split."""
    seen = {}
    for name, videos in dataset.splits.items():
        for v in videos:
            if v.identity in seen and seen[v.identity] != name:
                raise ValueError(
                    f"identity {v.identity} appears in both "
                    f"{seen[v.identity]} and {name}"
                )
            seen[v.identity] = name


def video_segments(video, segment_length):
    """float32 [N, C, T, H, W] segment batch in [0, 1] from one video."""
    T = video.frames.shape[0]
    n = T // segment_length
    if n < 1:
        raise ValueError(
            f"video {video.video_id}: {T} frames shorter than one "
            f"segment of {segment_length}"
        )
    frames = video.frames[: n * segment_length].astype(np.float32) / np.float32(255.0)
    C = frames.shape[1]
    H, W = frames.shape[2], frames.shape[3]
    segs = frames.reshape(n, segment_length, C, H, W)
    return segs.transpose(0, 2, 1, 3, 4)


def save_dataset(path, dataset):
    arrays = {}
    for name, videos in dataset.splits.items():
        if not videos:
            continue
        arrays[f"{name}_frames"] = np.stack([v.frames for v in videos])
        arrays[f"{name}_traits"] = np.stack([v.traits for v in videos])
        arrays[f"{name}_identities"] = np.array([v.identity for v in videos])
        arrays[f"{name}_video_ids"] = np.array([v.video_id for v in videos])
    np.savez_compressed(path, **arrays)


def load_dataset(path):
    with np.load(path) as data:
        splits = {}
        for name in ("train", "val", "test"):
            videos = []
            if f"{name}_frames" in data:
                frames = data[f"{name}_frames"]
                traits = data[f"{name}_traits"]
                identities = data[f"{name}_identities"]
                video_ids = data[f"{name}_video_ids"]
                for k in range(frames.shape[0]):
                    videos.append(SyntheticVideo(
                        int(video_ids[k]), int(identities[k]), traits[k], frames[k],
                    ))
            splits[name] = videos
    dataset = Dataset(splits["train"], splits["val"], splits["test"])
    assert_split_hygiene(dataset)
    return dataset


def dataset_hash(dataset):
    """Content hash over every split's frames and labels."""
    h = hashlib.sha256()
    for name, videos in sorted(dataset.splits.items()):
        h.update(name.encode())
        for v in videos:
            h.update(np.int64(v.video_id).tobytes())
            h.update(np.int64(v.identity).tobytes())
            h.update(np.asarray(v.traits, dtype=np.float64).tobytes())
            h.update(v.frames.tobytes())
    return h.hexdigest()[:16]
