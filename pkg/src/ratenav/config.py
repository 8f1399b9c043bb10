"""Run configuration: typed INI sections with defaults, strict key checking,
and named random substreams derived from one master seed."""
from __future__ import annotations

import configparser
import dataclasses
import io
import math
import typing
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    pass


@dataclass
class WorldSection:
    map: str = "builtin:empty"
    room_width: float = 8.0
    room_height: float = 8.0
    dt: float = 0.2
    t_max: int = 200
    footprint_radius: float = 0.2
    v_max: float = 0.5
    w_max: float = math.pi / 2
    goal_tolerance: float = 0.3
    min_separation: float = 1.0


@dataclass
class LidarSection:
    fov_deg: float = 270.0
    beam_count: int = 1080
    max_range: float = 30.0
    mount_x: float = 0.0
    mount_y: float = 0.0
    mount_theta: float = 0.0


@dataclass
class SensingSection:
    pool_window: int = 36
    rate_c1: float = 1.0
    rate_c2: float = 10.0
    rate_range: str = "full"
    ip_eps: float = 0.01
    ip_beta_init: float = 0.0


@dataclass
class RewardSection:
    mode: str = "nsuo"
    r_reach: float = 20.0
    r_crash: float = -20.0
    progress_scale: float = 10.0
    k1: float = 2.0
    k2: float = 1.9
    speed_beta: float = 0.5


@dataclass
class CurriculumSection:
    c_init: float = 1.5
    c_step: float = 0.5
    c_max: float = 4.0
    threshold: float = 0.9
    window: int = 100


@dataclass
class SacSection:
    gamma: float = 0.99
    tau: float = 0.005
    alpha: float = 0.2
    auto_alpha: bool = False
    target_entropy: float = -2.0
    batch_size: int = 256
    buffer_size: int = 1_000_000
    lr: float = 3e-4
    warmup_steps: int = 2000
    updates_per_step: int = 1
    hidden_width: int = 64
    hidden_layers: int = 3
    policy_dropout: float = 0.1
    log_std_min: float = -20.0
    log_std_max: float = 2.0
    dtype: str = "float32"


@dataclass
class RunSection:
    seed: int = 0
    total_steps: int = 200_000
    checkpoint_interval: int = 10_000
    resume_interval: int = 5_000
    output_dir: str = "runs"


@dataclass
class EvalSection:
    timeout_factor: float = 8.0
    timeout_margin: float = 10.0
    astar_cell: float = 0.05


@dataclass
class RunConfig:
    world: WorldSection = field(default_factory=WorldSection)
    lidar: LidarSection = field(default_factory=LidarSection)
    sensing: SensingSection = field(default_factory=SensingSection)
    reward: RewardSection = field(default_factory=RewardSection)
    curriculum: CurriculumSection = field(default_factory=CurriculumSection)
    sac: SacSection = field(default_factory=SacSection)
    run: RunSection = field(default_factory=RunSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def sections(self) -> dict[str, object]:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}

    def validate(self) -> "RunConfig":
        if self.reward.mode not in ("nsuo", "distance-only"):
            raise ConfigError(f"reward.mode must be 'nsuo' or 'distance-only', got '{self.reward.mode}'")
        if self.lidar.beam_count % self.sensing.pool_window:
            raise ConfigError("lidar.beam_count must be divisible by sensing.pool_window")
        if self.run.total_steps < 0:
            raise ConfigError("run.total_steps must be >= 0")
        if self.sac.dtype not in ("float32", "float64"):
            raise ConfigError("sac.dtype must be float32 or float64")
        if self.sac.hidden_layers < 1 or self.sac.hidden_width < 1:
            raise ConfigError("sac.hidden_layers and sac.hidden_width must be positive")
        return self


def _coerce(raw: str, typ, where: str):
    try:
        if typ is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw.replace("_", ""))
        if typ is float:
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{where}: cannot read '{raw}' as {typ.__name__}") from None


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse INI text on top of defaults. Unknown sections or keys are errors."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    src = base or RunConfig()
    cfg = RunConfig(**{k: dataclasses.replace(v) for k, v in src.sections().items()})
    sections = cfg.sections()
    for name in cp.sections():
        if name not in sections:
            raise ConfigError(f"unknown section [{name}]")
        sec = sections[name]
        hints = typing.get_type_hints(type(sec))
        for key, raw in cp.items(name):
            if key not in hints:
                raise ConfigError(f"unknown key '{name}.{key}'")
            setattr(sec, key, _coerce(raw, hints[key], f"{name}.{key}"))
    return cfg.validate()


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text())


def format_config(cfg: RunConfig) -> str:
    """Fully resolved INI text; ``repr`` keeps floats bit-exact on re-read."""
    out = io.StringIO()
    for name, sec in cfg.sections().items():
        out.write(f"[{name}]\n")
        for f in dataclasses.fields(sec):
            val = getattr(sec, f.name)
            if isinstance(val, bool):
                text = "true" if val else "false"
            elif isinstance(val, float):
                text = repr(val)
            else:
                text = str(val)
            out.write(f"{f.name} = {text}\n")
        out.write("\n")
    return out.getvalue()


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named consumer of randomness."""
    key = zlib.crc32(name.encode())
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(key,)))
