"""Flat key=value model/training configuration with named presets."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from . import ConfigError


@dataclass(frozen=True)
class ModelConfig:
    # feature geometry
    frame_len: int = 320
    n_bins: int = 161
    # stage I time-feature extractor (Conv1..Conv4) and fusion layer
    time_channels: int = 320
    time_out: int = 161
    fusion_channels: int = 644
    # stage I branches; the RI branch is twice as wide so one IRM gate covers real and imaginary halves
    branch_channels: int = 161
    irm_groups: int = 4
    ri_groups: int = 4
    unit_dilations: tuple[int, ...] = (1, 3, 5)
    # stage II
    s2_wide: int = 322
    s2_narrow: int = 161
    s2_groups: int = 4
    s2_blocks: int = 8
    s2_dilation_cycle: tuple[int, ...] = (1, 2, 4, 8, 16)
    s2_log_floor: float = 1e-3
    # regularization / normalization
    dropout: float = 0.2
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5
    # training
    lr: float = 1e-3
    alpha: float = 1.0
    beta: float = 1.0
    detach_stage2: bool = False
    batch_frames: int = 10000
    patience: int = 5
    # inference wiring
    prisnr_noisy_only: bool = False

    def __post_init__(self):
        for name in ("frame_len", "n_bins", "time_channels", "time_out", "fusion_channels",
                     "branch_channels", "irm_groups", "ri_groups", "s2_wide", "s2_narrow",
                     "s2_groups", "s2_blocks", "batch_frames"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.irm_groups > self.branch_channels or self.ri_groups > 2 * self.branch_channels:
            raise ConfigError("more groups than branch channels")
        if self.s2_groups > self.s2_wide:
            raise ConfigError("more stage-II groups than wide channels")
        if not self.unit_dilations or not self.s2_dilation_cycle:
            raise ConfigError("dilation lists must be non-empty")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def block_dilations(self) -> tuple[int, ...]:
        cyc = self.s2_dilation_cycle
        return tuple(cyc[i % len(cyc)] for i in range(self.s2_blocks))

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            else:
                v = repr(v) if isinstance(v, float) else str(v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    def digest(self) -> bytes:
        return hashlib.sha256(self.to_text().encode()).digest()

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        known = {f.name: f for f in fields(cls)}
        base = asdict(cls())
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key == "preset":
                base = asdict(preset(val))
                continue
            if key not in known:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            values[key] = _parse_value(base[key], val, key)
        base.update(values)
        return cls(**base)


def _parse_value(default, text: str, key: str):
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(default, tuple):
            return tuple(int(x) for x in text.split(",") if x.strip())
        return type(default)(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r}") from exc


DEFAULT = ModelConfig()

PRESETS: dict[str, ModelConfig] = {
    "default": DEFAULT,
    # default layout with every hidden width halved
    "half": replace(DEFAULT, time_channels=160, time_out=80, fusion_channels=322,
                    branch_channels=80, s2_wide=161, s2_narrow=80),
    # gradient-check scale: tiny frames/bins, a few thousand parameters
    "micro": replace(DEFAULT, frame_len=16, n_bins=8, time_channels=4, time_out=4,
                     fusion_channels=6, branch_channels=4, irm_groups=2, ri_groups=2,
                     s2_wide=6, s2_narrow=4, s2_groups=2, s2_blocks=3, dropout=0.0,
                     batch_frames=8),
    # desk-scale training on real 161-bin features
    "toy": replace(DEFAULT, time_channels=16, time_out=16, fusion_channels=96,
                   branch_channels=48, s2_wide=32, s2_narrow=24, s2_blocks=4,
                   dropout=0.1, lr=3e-3, batch_frames=2000),
}


def preset(name: str) -> ModelConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def load_config(arg: str | Path) -> ModelConfig:
    """Preset name or path to a key=value file (which may start from ``preset=<name>``)."""
    if isinstance(arg, str) and arg in PRESETS:
        return PRESETS[arg]
    path = Path(arg)
    if not path.is_file():
        raise ConfigError(f"config {str(arg)!r} is neither a preset nor a readable file")
    return ModelConfig.from_text(path.read_text())
