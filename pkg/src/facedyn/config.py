"""Run configuration: nested dataclasses, JSON round-trip, and hashing."""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field


@dataclass
class DataConfig:
    seed: int = 2024
    n_train: int = 300
    n_val: int = 60
    n_test: int = 60
    n_identities: int = 60
    frames_per_video: int = 90
    frame_size: int = 16
    channels: int = 3
    texture_weight: float = 0.45
    blob_weight: float = 0.5
    pixel_noise: float = 0.015


@dataclass
class ModelConfig:
    segment_length: int = 10
    rates: tuple = (1, 2, 5)
    d_model: int = 96
    heads: int = 6
    d_ff: int = 192
    descriptor_dim: int = 64
    share_scale_transformers: bool = False
    use_positional: bool = True


@dataclass
class DSConfig:
    enabled: bool = True
    alpha: float = 1.0
    beta: float = 0.05
    gamma: float = 0.5
    dim: int = 32
    hidden: int = 64
    dropout: float = 0.5
    per_scale: bool = False
    orthogonality: str = "per_sample"   # or "batch_matrix"
    decoder_combine: str = "concat"     # or "sum"
    spectral_input: str = "descriptor"  # or "ds_personality"


@dataclass
class SpectralConfig:
    m: int = 32


@dataclass
class HeadConfig:
    branch_channels: int = 64
    single_hidden: int = 64
    res_channels: int = 128
    fc_dims: tuple = (64, 32)
    dropout: float = 0.5
    include_multi: bool = True


@dataclass
class TrainConfig:
    seed: int = 7
    stage1_lr: float = 0.005
    stage1_batch: int = 3
    stage1_epochs: int = 2
    stage2_lr: float = 0.001
    stage2_batch: int = 3
    stage2_epochs: int = 8
    stage3_lr: float = 0.003
    stage3_batch: int = 64
    stage3_epochs: int = 40
    patience: int = 5


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    ds: DSConfig = field(default_factory=DSConfig)
    spectral: SpectralConfig = field(default_factory=SpectralConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    video_prediction: str = "spectral_head"  # or "segment_average"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if any(r < 1 for r in self.model.rates):
            raise ValueError(f"all rates must be >= 1, got {self.model.rates}")
        if 1 not in self.model.rates:
            raise ValueError("rate 1 (the original scale) must be present")
        if self.spectral.m < 1:
            raise ValueError(f"spectral.m must be >= 1, got {self.spectral.m}")
        for name in ("stage1_batch", "stage2_batch", "stage3_batch"):
            if getattr(self.train, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.data.frames_per_video < self.model.segment_length:
            raise ValueError(
                f"frames_per_video {self.data.frames_per_video} shorter than "
                f"segment_length {self.model.segment_length}"
            )
        if self.data.frame_size % 8:
            raise ValueError(f"frame_size {self.data.frame_size} not divisible by 8")
        if self.ds.orthogonality not in ("per_sample", "batch_matrix"):
            raise ValueError(f"unknown ds.orthogonality {self.ds.orthogonality!r}")
        if self.ds.decoder_combine not in ("concat", "sum"):
            raise ValueError(f"unknown ds.decoder_combine {self.ds.decoder_combine!r}")
        if self.ds.spectral_input not in ("descriptor", "ds_personality"):
            raise ValueError(f"unknown ds.spectral_input {self.ds.spectral_input!r}")
        if self.video_prediction not in ("spectral_head", "segment_average"):
            raise ValueError(f"unknown video_prediction {self.video_prediction!r}")
        if min(self.data.n_train, self.data.n_val, self.data.n_test) < 1:
            raise ValueError("every split needs at least one video")
        if self.data.n_identities < 3:
            raise ValueError("need at least 3 identities (one per split)")
        return self


def to_dict(config):
    return dataclasses.asdict(config)


def _build(cls, values):
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in values:
            continue
        v = values[f.name]
        if dataclasses.is_dataclass(f.type) and isinstance(v, dict):
            v = _build(f.type, v)
        elif f.name in ("rates", "fc_dims") and isinstance(v, list):
            v = tuple(v)
        kwargs[f.name] = v
    unknown = set(values) - {f.name for f in dataclasses.fields(cls)}
    if unknown:
        raise ValueError(f"unknown config keys for {cls.__name__}: {sorted(unknown)}")
    return cls(**kwargs)


def from_dict(values):
    return _build(RunConfig, values)


def to_json(config, path=None):
    text = json.dumps(to_dict(config), indent=2, sort_keys=True)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return text


def from_json(path):
    with open(path) as fh:
        return from_dict(json.load(fh))


def config_hash(config):
    """Stable content hash of the full configuration."""
    canonical = json.dumps(to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]
