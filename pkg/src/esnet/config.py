"""Run configuration: defaults, experiment presets, key=value files and flag overrides.

Resolution order (later wins): defaults, ``preset``, config file, explicit flags.
The seed falls back to ``$ESNET_SEED`` when no layer sets it.
"""
import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .model import DEFAULT_CHANNELS, INIT_SCHEMES, KINDS


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # grid / PDE
    dims: int = 1
    n: int = 256
    epsilon: float = 0.01
    t_end: float = 5.0
    # model
    kind: str = "estable-g"
    blocks: int = 4
    kernel: int = 21
    channels: str = "-".join(map(str, DEFAULT_CHANNELS))
    C: float = 0.0
    init: str = "xavier-uniform"
    # solver
    rtol: float = 1e-3
    atol: float = 1e-6
    dealias: bool = True
    # data
    count: int = 1120
    train_fraction: float = 0.7
    # training
    lr0: float = 1e-3
    weight_decay: float = 1e-6
    batch_size: int = 16
    epochs: int = 1000
    halve_every: int = 50
    restart_every: int = 200
    beta: float = 0.0
    seed: int = 0
    eval_every: int = 1
    # diagnostics
    samples: int = 256
    # paths / execution
    out_dir: str = "runs/default"
    dataset: str = ""
    checkpoint: str = ""
    workers: int = 1
    deterministic: bool = False

    def channel_tuple(self):
        try:
            return tuple(int(c) for c in self.channels.split("-"))
        except ValueError as exc:
            raise ConfigError(f"channels must look like 1-16-1-16-1, got {self.channels!r}") from exc

    def dataset_path(self):
        return Path(self.dataset) if self.dataset else Path(self.out_dir) / "dataset.bin"

    def checkpoint_path(self):
        return Path(self.checkpoint) if self.checkpoint else Path(self.out_dir) / "checkpoint.bin"

    def effective_workers(self):
        return 1 if self.deterministic else max(1, self.workers)

    def validate(self):
        if self.dims not in (1, 2):
            raise ConfigError("dims must be 1 or 2")
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}")
        if self.init not in INIT_SCHEMES:
            raise ConfigError(f"init must be one of {INIT_SCHEMES}")
        if self.count < 1:
            raise ConfigError("count must be >= 1")
        if self.blocks < 1:
            raise ConfigError("blocks must be >= 1")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigError("kernel must be a positive odd integer")
        if self.samples < 1:
            raise ConfigError("samples must be >= 1")
        if self.n < 8 or self.n % 2:
            raise ConfigError("n must be even and >= 8")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ConfigError("train_fraction must be in (0, 1]")
        self.channel_tuple()
        return self

    def dump(self):
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))


PRESETS = {
    "ac1d": dict(dims=1, n=256, epsilon=0.01, t_end=5.0, blocks=4, kernel=21, init="xavier-uniform",
                 batch_size=16, lr0=1e-3, weight_decay=1e-6, halve_every=50, restart_every=200,
                 epochs=1000, count=1120, train_fraction=784 / 1120),
    "ac2d": dict(dims=2, n=128, epsilon=0.02, t_end=5.0, blocks=5, kernel=13, init="framework-default",
                 batch_size=32, lr0=1e-3, weight_decay=1e-7, halve_every=100, restart_every=800,
                 epochs=4000, count=2528, train_fraction=2048 / 2528),
}

_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(name, raw):
    ftype = _FIELDS[name].type
    if isinstance(raw, str):
        raw = raw.strip()
        if ftype in (bool, "bool"):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
        try:
            if ftype in (int, "int"):
                return int(raw)
            if ftype in (float, "float"):
                return float(raw)
        except ValueError as exc:
            raise ConfigError(f"{name}: cannot parse {raw!r}") from exc
        return raw
    return raw


def parse_config_text(text, source="<config>"):
    """Parse ``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def resolve(preset=None, config_file=None, overrides=None, env=None) -> RunConfig:
    env = os.environ if env is None else env
    values = {}
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        values.update(PRESETS[preset])
    if config_file:
        path = Path(config_file)
        if not path.exists():
            raise ConfigError(f"config file {path} not found")
        values.update(parse_config_text(path.read_text(), str(path)))
    for key, value in (overrides or {}).items():
        key = key.replace("-", "_")
        if key not in _FIELDS:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = _coerce(key, value)
    if "seed" not in values and env.get("ESNET_SEED"):
        values["seed"] = _coerce("seed", env["ESNET_SEED"])
    return dataclasses.replace(RunConfig(), **values).validate()
