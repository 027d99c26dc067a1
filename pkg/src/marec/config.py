"""Declarative experiment configuration: serializable, hash-stable, defaulted
so `run --preset desk` works out of the box."""

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigurationError

REGIMES = ("oaon", "maon", "mapn")


@dataclass
class ExperimentConfig:
    # model
    model: str = "dccnn"              # dccnn | unet
    pn_kind: str = "pn0"              # pn0..pn4, pn4_shared
    cascades: int = 2
    blocks_per_subcnn: int = 3
    channels: int = 16
    residual: bool = True
    dc_mode: str = "hard"             # hard | soft (learnable weight)
    unet_levels: int = 4
    unet_base_channels: int = 8
    # regime and schedule
    regime: str = "maon"              # oaon | maon | mapn
    epochs: int = 30
    warmup_epochs: int = 0            # mapn: shared 3x3 convs frozen this long
    warm_start: str = ""              # mapn: checkpoint path of a maon run
    cold_start: bool = False          # mapn without a warm-start checkpoint
    reset_adam_after_warmup: bool = False
    batch_size: int = 4
    lr: float = 0.01
    # data
    anatomies: tuple = ("knee", "brain", "cardiac")
    extent: int = 64
    slices_per_anatomy: int = 32
    val_fraction: float = 0.25
    ingest_dir: str = ""              # optional external grayscale directory
    # sampling
    acceleration: int = 4
    center_fraction: float = -1.0     # -1: default per acceleration (0.08/0.06)
    mask_resample_per_epoch: bool = False
    # seeds (named streams)
    data_seed: int = 100
    init_seed: int = 200
    mask_seed: int = 300
    shuffle_seed: int = 400
    # bookkeeping
    eval_every: int = 1
    output_root: str = "runs"

    def __post_init__(self):
        self.anatomies = tuple(self.anatomies)
        if self.regime not in REGIMES:
            raise ConfigurationError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.regime == "oaon" and len(self.anatomies) != 1:
            raise ConfigurationError("oaon trains exactly one anatomy")
        if self.regime == "mapn" and not self.cold_start and not self.warm_start:
            raise ConfigurationError(
                "mapn needs --warm-start CHECKPOINT (a maon run) or --cold-start"
            )
        if self.warmup_epochs >= self.epochs and self.epochs > 0:
            raise ConfigurationError("warmup_epochs must be smaller than epochs")
        if self.center_fraction < 0:
            self.center_fraction = {4: 0.08, 6: 0.06}.get(self.acceleration, 0.08)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        try:
            with open(path) as f:
                d = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"{path}:{e.lineno}: invalid JSON: {e.msg}")
        return cls.from_dict(d)

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1, sort_keys=True)
            f.write("\n")

    def hash(self):
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


def desk_preset(**overrides):
    """Tiny networks on 64x64 phantoms; the full suite runs on a laptop CPU."""
    return ExperimentConfig(**overrides)


def paper_preset(**overrides):
    """Published-scale widths (320x320, 5x5x64 cascades). Used for parameter
    accounting; training at this scale is outside desk scope."""
    base = dict(
        cascades=5, blocks_per_subcnn=5, channels=64,
        unet_base_channels=32, extent=320, epochs=150, warmup_epochs=30,
        slices_per_anatomy=800,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


PRESETS = {"desk": desk_preset, "paper": paper_preset}
