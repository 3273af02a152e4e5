"""Model and training configuration plus the flat JSON config format."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError

ATTENTION_VARIANTS = ("MDTA", "MTA")
FFN_VARIANTS = ("GDFN", "GFN", "DFN", "FN")


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 3
    base_dim: int = 48
    num_blocks: tuple[int, ...] = (4, 6, 6, 8)
    heads: tuple[int, ...] = (1, 2, 4, 8)
    refinement_blocks: int = 4
    ffn_gamma: float = 2.66
    bias_free: bool = True
    attention_variant: str = "MDTA"
    ffn_variant: str = "GDFN"
    qk_l2_normalize: bool = False

    def __post_init__(self):
        object.__setattr__(self, "num_blocks", tuple(int(b) for b in self.num_blocks))
        object.__setattr__(self, "heads", tuple(int(h) for h in self.heads))
        self.validate()

    def validate(self) -> None:
        if self.in_channels not in (1, 3):
            raise ConfigError(f"in_channels must be 1 or 3, got {self.in_channels}")
        if self.base_dim < 1:
            raise ConfigError("base_dim must be positive")
        if len(self.num_blocks) != 4 or len(self.heads) != 4:
            raise ConfigError("exactly 4 levels are supported")
        if any(b < 0 for b in self.num_blocks) or self.refinement_blocks < 0:
            raise ConfigError("block counts must be non-negative")
        for level, h in enumerate(self.heads):
            width = self.width(level + 1)
            if h < 1 or width % h:
                raise ConfigError(f"heads[{level}]={h} does not divide level width {width}")
        if 2 * self.base_dim % self.heads[0]:
            raise ConfigError("heads[0] must divide the level-1 decoder width 2C")
        if self.ffn_gamma <= 0:
            raise ConfigError("ffn_gamma must be positive")
        if self.attention_variant not in ATTENTION_VARIANTS:
            raise ConfigError(f"unknown attention_variant {self.attention_variant!r}")
        if self.ffn_variant not in FFN_VARIANTS:
            raise ConfigError(f"unknown ffn_variant {self.ffn_variant!r}")

    def width(self, level: int) -> int:
        """Encoder channel width at level 1..4."""
        return self.base_dim * 2 ** (level - 1)

    def hidden(self, dim: int) -> int:
        return max(1, round(self.ffn_gamma * dim))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["num_blocks"] = list(self.num_blocks)
        d["heads"] = list(self.heads)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


PAPER_CONFIG = ModelConfig()


@dataclass(frozen=True)
class ScheduleEntry:
    start_iter: int
    patch_size: int
    batch_size: int

    def __post_init__(self):
        if self.patch_size < 8 or self.patch_size % 8:
            raise ConfigError(f"patch size {self.patch_size} must be a positive multiple of 8")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if self.start_iter < 0:
            raise ConfigError("schedule start_iter must be >= 0")


PAPER_SCHEDULE = (
    ScheduleEntry(0, 128, 64),
    ScheduleEntry(92_000, 160, 40),
    ScheduleEntry(156_000, 192, 32),
    ScheduleEntry(204_000, 256, 16),
    ScheduleEntry(240_000, 320, 8),
    ScheduleEntry(276_000, 384, 8),
)


@dataclass(frozen=True)
class TrainConfig:
    total_iters: int = 300_000
    lr_max: float = 3e-4
    lr_min: float = 1e-6
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 1e-4
    schedule: tuple[ScheduleEntry, ...] = PAPER_SCHEDULE
    seed: int = 0
    noise_sigma: float = 25.0
    eval_every: int = 1000
    dataset: str = "synthetic"
    checkpoint_every: int = 0
    eval_patch: int = 0  # 0: use the first scheduled patch size

    def __post_init__(self):
        sched = tuple(e if isinstance(e, ScheduleEntry) else ScheduleEntry(*e) for e in self.schedule)
        object.__setattr__(self, "schedule", sched)
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if not sched:
            raise ConfigError("schedule must not be empty")
        if sched[0].start_iter != 0:
            raise ConfigError("schedule must start at iteration 0")
        if any(b.start_iter <= a.start_iter for a, b in zip(sched, sched[1:])):
            raise ConfigError("schedule thresholds must be strictly increasing")
        if not self.lr_min < self.lr_max:
            raise ConfigError("lr_min must be below lr_max")
        if self.total_iters < 0:
            raise ConfigError("total_iters must be >= 0")
        if self.eval_patch and self.eval_patch % 8:
            raise ConfigError("eval_patch must be a multiple of 8")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        d["schedule"] = [[e.start_iter, e.patch_size, e.batch_size] for e in self.schedule]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


MODEL_KEYS = frozenset(f.name for f in fields(ModelConfig))
TRAIN_KEYS = frozenset(f.name for f in fields(TrainConfig))


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


def parse_config(d: dict) -> RunConfig:
    """Split a flat config mapping into model and train parts; unknown keys are errors."""
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(d) - MODEL_KEYS - TRAIN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        model = ModelConfig(**{k: v for k, v in d.items() if k in MODEL_KEYS})
        train = TrainConfig(**{k: v for k, v in d.items() if k in TRAIN_KEYS})
    except TypeError as e:
        raise ConfigError(str(e)) from None
    return RunConfig(model, train)


def load_config(path: str | Path) -> RunConfig:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from None
    return parse_config(d)


def dump_config(run: RunConfig) -> str:
    d = {**run.model.to_dict(), **run.train.to_dict()}
    return json.dumps(d, sort_keys=True, indent=2)
