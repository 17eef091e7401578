"""Run configuration and the plain-text ``key = value`` config format.

Nested settings use dotted keys: ``loss.lambda_dssim = 0.2``,
``optim.curve_lr = 1e-3``, ``refine.interval = 500``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from ..losses import LossConfig
from ..optim import OptimConfig
from ..refine import RefineConfig

# Which parts of the enhancement path are trainable for each named method.
# "identity" freezes everything at identity and drops the enhancement losses,
# i.e. plain splatting fit directly to the captured images.
METHODS = {
    "full": dict(enhance=True, use_global_curve=True, use_curve_bias=True, use_color_matrix=True),
    "global_bias": dict(enhance=True, use_global_curve=True, use_curve_bias=True, use_color_matrix=False),
    "bias_only": dict(enhance=True, use_global_curve=False, use_curve_bias=True, use_color_matrix=False),
    "global_only": dict(enhance=True, use_global_curve=True, use_curve_bias=False, use_color_matrix=False),
    "identity": dict(enhance=False, use_global_curve=False, use_curve_bias=False, use_color_matrix=False),
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    total_iterations: int = 10000
    seed: int = 0
    method: str = "full"
    init_gaussians: int = 300  # random init, used when the dataset has no points3d.txt
    init_from_points: bool = True
    checkpoint_every: int = 1000
    threads: int = 1
    compose_prior: bool = False  # prior as power(S(x)) instead of power(x) * S(x)
    background: tuple = (0.0, 0.0, 0.0)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {sorted(METHODS)}")
        if self.total_iterations < 1 or self.init_gaussians < 1:
            raise ConfigError("total_iterations and init_gaussians must be >= 1")

    @property
    def flags(self) -> dict:
        return METHODS[self.method]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def _coerce(value: str, like):
    if isinstance(like, bool):
        v = value.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {value!r}")
    if isinstance(like, int):
        return int(float(value)) if "e" in value.lower() else int(value)
    if isinstance(like, float):
        return float(value)
    if isinstance(like, tuple):
        return tuple(float(v) for v in value.replace(",", " ").split())
    return value.strip()


def apply_overrides(cfg: RunConfig, pairs: dict[str, str]) -> RunConfig:
    top: dict = {}
    nested: dict[str, dict] = {"loss": {}, "optim": {}, "refine": {}}
    for key, raw in pairs.items():
        section, _, name = key.rpartition(".")
        if section and section not in nested:
            raise ConfigError(f"unknown config key {key!r}")
        target = getattr(cfg, section) if section else cfg
        if not hasattr(target, name) or (not section and name in nested):
            raise ConfigError(f"unknown config key {key!r}")
        try:
            value = _coerce(raw, getattr(target, name))
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from exc
        (nested[section] if section else top)[name] = value
    try:
        for section, changes in nested.items():
            if changes:
                top[section] = dataclasses.replace(getattr(cfg, section), **changes)
        return dataclasses.replace(cfg, **top)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def parse_config_text(text: str) -> dict[str, str]:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    return apply_overrides(base or RunConfig(), parse_config_text(Path(path).read_text()))


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value):
            for sub in dataclasses.fields(value):
                lines.append(f"{f.name}.{sub.name} = {_fmt(getattr(value, sub.name))}")
        else:
            lines.append(f"{f.name} = {_fmt(value)}")
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return " ".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)
