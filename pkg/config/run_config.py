"""
Run Configuration Module
Typed settings for one search/evaluation run.

A run config is stored as a flat text file of `key=value` lines. Dotted
keys address sections, `#` starts a comment and blank lines are ignored:

    seed=0
    supernet.cells=4
    supernet.operator_space=O2
    ess.c1=1.05
    ess.h_min=none

Precedence: command-line flags > config file > defaults below. The bare
EssConfig() defaults are the full-scale search settings; RunConfig() uses
a desk-scale schedule (2 rounds of 8 epochs, 2 of them warm-up) on a tiny
network.
"""

import logging
import typing
from dataclasses import dataclass, field, fields, is_dataclass, replace
from typing import Any, Dict, List, Optional

from src.errors import ConfigError
from src.search_space.operators import OPERATOR_SPACES

logger = logging.getLogger(__name__)

DATASETS = ("synthetic-blobs", "synthetic-textures", "downsampled-digits", "image-folder")

# Short spellings accepted when reading config files
KEY_ALIASES = {
    "supernet.L": "supernet.cells",
    "supernet.N": "supernet.nodes",
    "ess.T_search": "ess.t_search",
    "ess.T_warm": "ess.t_warm",
    "ess.R_init": "ess.r_init",
    "ess.deltaE": "ess.delta_e",
}


@dataclass
class EssConfig:
    """
    Shrinking-controller settings.

    Attributes:
        c1: λ growth factor when entropy fell short of ΔE (> 1)
        c2: λ decay factor otherwise (in (0, 1))
        lambda_init: Initial λ for every cell
        t_search: Epochs per round
        t_warm: Warm-up epochs per round; None means t_search // 2 (at least 1)
        r_init: Number of rounds (cyclic θ reinitializations)
        eta_theta, wd_theta: Adam lr / weight decay for model parameters
        eta_alpha, wd_alpha: Adam lr / weight decay for architectural parameters
        epsilon: Pruning threshold
        delta_e: Per-step entropy budget; None means computed from the initial entropy
        h_min: Optional early stop once every cell entropy is at most this
        batch_size: Search mini-batch size
        warmup_updates_alpha: Whether α also trains (CE only) during warm-up
        archopt_updates_theta: Whether θ also trains during the arch-opt phase
        ce_weight: Weight of the CE term in the arch-opt loss
    """
    c1: float = 1.05
    c2: float = 0.95
    lambda_init: float = 1e-4
    t_search: int = 16
    t_warm: Optional[int] = None
    r_init: int = 5
    eta_theta: float = 1e-3
    wd_theta: float = 1e-4
    eta_alpha: float = 1e-2
    wd_alpha: float = 0.0
    epsilon: float = 0.02
    delta_e: Optional[float] = None
    h_min: Optional[float] = None
    batch_size: int = 128
    warmup_updates_alpha: bool = True
    archopt_updates_theta: bool = False
    ce_weight: float = 1.0

    @property
    def warm_epochs(self) -> int:
        return self.t_warm if self.t_warm is not None else max(1, self.t_search // 2)

    def validate(self, op_count: Optional[int] = None) -> "EssConfig":
        """
        Raises:
            ConfigError: Naming the first offending key
        """
        if not self.c1 > 1:
            raise ConfigError(f"ess.c1 must be > 1, got {self.c1}")
        if not 0 < self.c2 < 1:
            raise ConfigError(f"ess.c2 must lie in (0, 1), got {self.c2}")
        if not self.lambda_init > 0:
            raise ConfigError(f"ess.lambda_init must be positive, got {self.lambda_init}")
        if self.t_search < 1:
            raise ConfigError(f"ess.t_search must be at least 1, got {self.t_search}")
        if not 0 < self.warm_epochs <= self.t_search:
            raise ConfigError(f"ess.t_warm must lie in [1, t_search={self.t_search}], got {self.warm_epochs}")
        if self.r_init < 1:
            raise ConfigError(f"ess.r_init must be at least 1, got {self.r_init}")
        if self.eta_theta <= 0 or self.eta_alpha <= 0:
            raise ConfigError("ess.eta_theta and ess.eta_alpha must be positive")
        if self.wd_theta < 0 or self.wd_alpha < 0:
            raise ConfigError("ess.wd_theta and ess.wd_alpha cannot be negative")
        upper = 1.0 / op_count if op_count else 1.0
        if not 0 < self.epsilon < upper:
            raise ConfigError(f"ess.epsilon must lie in (0, {upper:g}), got {self.epsilon}")
        if self.delta_e is not None and self.delta_e <= 0:
            raise ConfigError(f"ess.delta_e must be positive when set, got {self.delta_e}")
        if self.h_min is not None and self.h_min < 0:
            raise ConfigError(f"ess.h_min cannot be negative, got {self.h_min}")
        if self.batch_size < 1:
            raise ConfigError(f"ess.batch_size must be at least 1, got {self.batch_size}")
        if self.ce_weight < 0:
            raise ConfigError(f"ess.ce_weight cannot be negative, got {self.ce_weight}")
        return self


@dataclass
class SupernetConfig:
    cells: int = 4
    nodes: int = 5
    channels: int = 4
    operator_space: str = "O2"
    normalization: str = "node"

    def validate(self) -> "SupernetConfig":
        if self.cells < 3:
            raise ConfigError(f"supernet.cells must be at least 3, got {self.cells}")
        if self.nodes < 4:
            raise ConfigError(f"supernet.nodes must be at least 4, got {self.nodes}")
        if self.channels < 1:
            raise ConfigError(f"supernet.channels must be positive, got {self.channels}")
        if self.operator_space.upper() not in OPERATOR_SPACES:
            raise ConfigError(
                f"supernet.operator_space must be one of {', '.join(OPERATOR_SPACES)}, got {self.operator_space}"
            )
        if self.normalization not in ("node", "edge"):
            raise ConfigError(f"supernet.normalization must be node or edge, got {self.normalization}")
        return self


@dataclass
class DatasetConfig:
    """
    Attributes:
        name: One of DATASETS
        resolution: Square image side after resampling
        classes: Number of classes (ignored by downsampled-digits and image-folder)
        samples: Number of generated samples (synthetic datasets)
        train_fraction: Share of samples in the training split
        noise: Pixel noise standard deviation of synthetic datasets
        path: Root folder for image-folder, relative to the data directory
        augment: Random crop with padding + horizontal flip on training batches
    """
    name: str = "synthetic-blobs"
    resolution: int = 8
    classes: int = 4
    samples: int = 400
    train_fraction: float = 0.9
    noise: float = 0.35
    path: Optional[str] = None
    augment: bool = False

    def validate(self) -> "DatasetConfig":
        if self.name not in DATASETS:
            raise ConfigError(f"dataset.name must be one of {', '.join(DATASETS)}, got {self.name}")
        if self.resolution < 4:
            raise ConfigError(f"dataset.resolution must be at least 4, got {self.resolution}")
        if self.classes < 2:
            raise ConfigError(f"dataset.classes must be at least 2, got {self.classes}")
        if self.samples < self.classes:
            raise ConfigError(f"dataset.samples ({self.samples}) must be at least dataset.classes ({self.classes})")
        if not 0 < self.train_fraction <= 1:
            raise ConfigError(f"dataset.train_fraction must lie in (0, 1], got {self.train_fraction}")
        if self.noise < 0:
            raise ConfigError(f"dataset.noise cannot be negative, got {self.noise}")
        if self.name == "image-folder" and not self.path:
            raise ConfigError("dataset.path is required for the image-folder dataset")
        return self


@dataclass
class EvalConfig:
    epochs: int = 30
    batch_size: int = 128
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 3e-4
    grad_clip: float = 5.0
    label_smoothing: float = 0.0
    warmup_epochs: int = 0
    channels: Optional[int] = None

    def validate(self) -> "EvalConfig":
        if self.epochs < 1:
            raise ConfigError(f"evaluation.epochs must be at least 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"evaluation.batch_size must be at least 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"evaluation.lr must be positive, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"evaluation.momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"evaluation.weight_decay cannot be negative, got {self.weight_decay}")
        if self.grad_clip <= 0:
            raise ConfigError(f"evaluation.grad_clip must be positive, got {self.grad_clip}")
        if not 0 <= self.label_smoothing < 1:
            raise ConfigError(f"evaluation.label_smoothing must lie in [0, 1), got {self.label_smoothing}")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ConfigError(f"evaluation.warmup_epochs must lie in [0, epochs), got {self.warmup_epochs}")
        if self.channels is not None and self.channels < 1:
            raise ConfigError(f"evaluation.channels must be positive when set, got {self.channels}")
        return self


def _desk_scale_ess() -> EssConfig:
    return EssConfig(t_search=8, t_warm=2, r_init=2, batch_size=32)


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: Optional[str] = None
    ess: EssConfig = field(default_factory=_desk_scale_ess)
    supernet: SupernetConfig = field(default_factory=SupernetConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> "RunConfig":
        """
        Validate every section.

        Raises:
            ConfigError: Naming the offending key
        """
        if self.seed < 0:
            raise ConfigError(f"seed cannot be negative, got {self.seed}")
        self.supernet.validate()
        self.ess.validate(op_count=len(OPERATOR_SPACES[self.supernet.operator_space.upper()].kinds))
        self.dataset.validate()
        self.evaluation.validate()
        return self

    # ==================== Text format ====================

    def to_text(self) -> str:
        lines = ["# FX-DARTS run configuration"]
        for key, value in _flatten(self):
            lines.append(f"{key}={_format_value(value)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, base: Optional["RunConfig"] = None) -> "RunConfig":
        """
        Parse a config file body on top of `base` (defaults when None).

        Raises:
            ConfigError: On malformed lines, unknown keys or bad values
        """
        overrides = {}
        for number, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {number}: expected key=value, got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            overrides[KEY_ALIASES.get(key, key)] = value
        return (base or cls()).with_overrides(overrides)

    def with_overrides(self, overrides: Dict[str, Any]) -> "RunConfig":
        """
        Copy of this config with dotted keys replaced. String values are
        parsed according to the field type; other values are used as given.
        Overrides whose value is None are ignored (unset CLI flags).

        Raises:
            ConfigError: For unknown keys or unparsable values
        """
        sections = {f.name: getattr(self, f.name) for f in fields(self)}
        top_level = {}
        nested: Dict[str, Dict[str, Any]] = {}
        for key, value in overrides.items():
            if value is None:
                continue
            head, _, tail = key.partition(".")
            if head not in sections:
                raise ConfigError(f"unknown config key {key!r}")
            section = sections[head]
            if tail:
                if not is_dataclass(section):
                    raise ConfigError(f"unknown config key {key!r}")
                nested.setdefault(head, {})[tail] = _coerce(type(section), tail, value, key)
            else:
                if is_dataclass(section):
                    raise ConfigError(f"config key {key!r} names a section, not a setting")
                top_level[head] = _coerce(type(self), head, value, key)
        for head, changes in nested.items():
            top_level[head] = replace(sections[head], **changes)
        return replace(self, **top_level)


# ==================== Helpers ====================

def _flatten(config) -> List[tuple]:
    items = []
    for f in fields(config):
        value = getattr(config, f.name)
        if is_dataclass(value):
            items.extend((f"{f.name}.{name}", inner) for name, inner in _flatten(value))
        else:
            items.append((f.name, value))
    return items


def _format_value(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(owner: type, name: str, value: Any, key: str) -> Any:
    hints = typing.get_type_hints(owner)
    if name not in hints:
        raise ConfigError(f"unknown config key {key!r}")
    target = hints[name]
    optional = False
    if typing.get_origin(target) is typing.Union:
        args = [arg for arg in typing.get_args(target) if arg is not type(None)]
        optional = len(args) < len(typing.get_args(target))
        target = args[0]
    if not isinstance(value, str):
        return value
    text = value.strip()
    if optional and text.lower() in ("none", "null", ""):
        return None
    try:
        if target is bool:
            lowered = text.lower()
            if lowered in ("true", "yes", "1", "on"):
                return True
            if lowered in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if target is int:
            return int(text)
        if target is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot read {text!r} as {target.__name__}") from None
