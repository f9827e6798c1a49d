"""Training configuration and its TOML file form.

File schema (``config_version = 1``)::

    config_version = 1
    seed = 0
    mode = "uda"                 # or "dg"

    [loss]      mu1 mu2 mu3 mu4 tau margin
    [schedule]  epochs iters_per_epoch batch_n instances lr weight_decay
                lr_drop_epochs beta1 beta2
    [network]   widths kernel reduction stage_m stage_l
    [ablation]  use_bridge_pred use_bridge_feat use_div use_cons use_xbm
                mix_mode ("idm" | "random_beta:ALPHA" | "fixed:A_S")
                mirrors_in_reid inter_in_triplet
    [cluster]   eps min_pts
    [memory]    capacity          # 0 = size of the training set

Every key is optional; unknown keys are rejected.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigurationError

CONFIG_VERSION = 1

SECTIONS = {
    "loss": ("mu1", "mu2", "mu3", "mu4", "tau", "margin"),
    "schedule": ("epochs", "iters_per_epoch", "batch_n", "instances", "lr",
                 "weight_decay", "lr_drop_epochs", "beta1", "beta2"),
    "network": ("widths", "kernel", "reduction", "stage_m", "stage_l"),
    "ablation": ("use_bridge_pred", "use_bridge_feat", "use_div", "use_cons", "use_xbm",
                 "mix_mode", "mirrors_in_reid", "inter_in_triplet"),
    "cluster": ("eps", "min_pts"),
    "memory": ("capacity",),
}
TOP_LEVEL = ("seed", "mode")


@dataclass
class TrainConfig:
    mu1: float = 0.7
    mu2: float = 0.1
    mu3: float = 1.0
    mu4: float = 1.0
    tau: float = 0.5
    margin: float = 0.3

    epochs: int = 15
    iters_per_epoch: int = 50
    batch_n: int = 16
    instances: int = 2
    lr: float = 3.5e-3
    weight_decay: float = 5e-4
    lr_drop_epochs: tuple = (6, 12)
    beta1: float = 0.9
    beta2: float = 0.999

    widths: tuple = (8, 16, 16, 32, 32)
    kernel: int = 3
    reduction: int = 2
    stage_m: int = 0
    stage_l: int = 3

    use_bridge_pred: bool = True
    use_bridge_feat: bool = True
    use_div: bool = True
    use_cons: bool = True
    use_xbm: bool = True
    mix_mode: str = "idm"
    mirrors_in_reid: bool = False
    inter_in_triplet: bool = False

    eps: float = 0.3
    min_pts: int = 4
    capacity: int = 0

    seed: int = 0
    mode: str = "uda"

    def __post_init__(self):
        self.lr_drop_epochs = tuple(int(e) for e in self.lr_drop_epochs)
        self.widths = tuple(int(w) for w in self.widths)
        self.validate()

    def validate(self):
        for name in ("mu1", "mu2", "mu3", "mu4"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be non-negative")
        if self.mu1 > 1:
            raise ConfigurationError("mu1 must lie in [0, 1]")
        if self.tau <= 0:
            raise ConfigurationError("tau must be positive")
        if self.mode not in ("uda", "dg"):
            raise ConfigurationError(f"mode must be 'uda' or 'dg', not {self.mode!r}")
        last = len(self.widths) - 1
        if last < 2:
            raise ConfigurationError("need at least three stages")
        if not 0 <= self.stage_m <= self.stage_l <= last:
            raise ConfigurationError(
                f"need 0 <= stage_m <= stage_l <= {last}, got {self.stage_m}, {self.stage_l}"
            )
        if self.instances < 2 or self.batch_n % self.instances:
            raise ConfigurationError("batch_n must be a multiple of instances >= 2")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigurationError("kernel must be a positive odd integer")
        if self.widths[self.stage_m] % self.reduction:
            raise ConfigurationError("reduction must divide the stage_m width")
        if self.epochs < 1 or self.iters_per_epoch < 1:
            raise ConfigurationError("epochs and iters_per_epoch must be positive")
        parse_mix_mode(self.mix_mode)

    @property
    def identities_per_batch(self):
        return self.batch_n // self.instances

    @property
    def uses_mixing(self):
        return self.use_bridge_pred or self.use_bridge_feat or self.use_div or self.use_cons

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        d = dataclasses.asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def parse_mix_mode(mode):
    """``("idm", None)``, ``("random_beta", alpha)`` or ``("fixed", a_s)``."""
    if mode == "idm":
        return "idm", None
    kind, _, arg = mode.replace("-", "_").partition(":")
    if kind in ("random_beta", "fixed") and arg:
        try:
            value = float(arg)
        except ValueError:
            value = None
        if value is not None:
            if kind == "random_beta" and value > 0:
                return kind, value
            if kind == "fixed" and 0.0 <= value <= 1.0:
                return kind, value
    raise ConfigurationError(f"bad mix mode {mode!r}")


def from_mapping(data, base=None):
    """Build a config from the nested TOML mapping."""
    data = dict(data)
    version = data.pop("config_version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigurationError(f"unsupported config_version {version}")
    values = {}
    for key in TOP_LEVEL:
        if key in data:
            values[key] = data.pop(key)
    for section, keys in SECTIONS.items():
        table = data.pop(section, {})
        if not isinstance(table, dict):
            raise ConfigurationError(f"[{section}] must be a table")
        for key, value in table.items():
            if key not in keys:
                raise ConfigurationError(f"unknown key {section}.{key}")
            values[key] = value
    if data:
        raise ConfigurationError(f"unknown keys: {sorted(data)}")
    base = base or TrainConfig()
    try:
        return base.replace(**values)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc


def load_config(path):
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"{path}: {exc}") from exc
    return from_mapping(data)


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return repr(v)


def dump_config(config):
    """TOML text that :func:`load_config` reads back to an equal config."""
    d = config.to_dict()
    lines = [f"config_version = {CONFIG_VERSION}"]
    lines += [f"{k} = {_toml_value(d[k])}" for k in TOP_LEVEL]
    for section, keys in SECTIONS.items():
        lines.append("")
        lines.append(f"[{section}]")
        lines += [f"{k} = {_toml_value(d[k])}" for k in keys]
    return "\n".join(lines) + "\n"
