"""Run configuration: one nested schema, JSON on disk, dotted overrides.

Every run is fully described by a RunConfig; the manifest written next to the
metrics embeds its dict form so any run can be re-launched from its output
directory alone. Loading is strict: unknown keys are rejected by name instead
of being silently ignored.
"""

import dataclasses
import json
from dataclasses import dataclass, field

from .augment import AugmentSpec
from .errors import ConfigError
from .policy import PolicyConfig
from .tasks import VOCAB_SIZE, EnvConfig
from .vogue import ShapingConfig

ALGORITHMS = ("grpo", "vogue")


@dataclass
class GrpoConfig:
    group_size: int = 8
    clip_eps: float = 0.2
    std_mode: str = "population"
    old_update_period: int = 1

    def validate(self):
        if self.group_size < 2:
            raise ConfigError("group_size must be >= 2: single rollouts have no group baseline")
        if not (0.0 < self.clip_eps < 1.0):
            raise ConfigError(f"clip_eps must lie in (0, 1), got {self.clip_eps}")
        if self.std_mode not in ("population", "sample"):
            raise ConfigError(f"std_mode must be 'population' or 'sample', got {self.std_mode!r}")
        if self.old_update_period < 1:
            raise ConfigError("old_update_period must be >= 1")
        return self


@dataclass
class OptimConfig:
    lr: float = 1e-3
    weight_decay: float = 0.0
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8

    def validate(self):
        if not (self.lr >= 0.0):
            raise ConfigError("lr must be >= 0")
        if self.weight_decay < 0.0:
            raise ConfigError("weight_decay must be >= 0")
        b = tuple(self.betas)
        if len(b) != 2 or not all(0.0 <= x < 1.0 for x in b):
            raise ConfigError(f"betas must be two values in [0, 1), got {self.betas}")
        if self.eps <= 0.0:
            raise ConfigError("eps must be > 0")
        return self


@dataclass
class EvalConfig:
    suite_size: int = 48
    n: int = 8
    ks: tuple = (4,)
    every: int = 0  # 0 disables scheduled evals during training
    temperature: float = 1.0

    def validate(self):
        if self.suite_size < 1:
            raise ConfigError("suite_size must be >= 1")
        if self.n < 1:
            raise ConfigError("eval n must be >= 1")
        ks = tuple(self.ks)
        if not ks or any(int(k) < 1 for k in ks):
            raise ConfigError("ks must be a nonempty tuple of positive ints")
        if any(int(k) > self.n for k in ks):
            raise ConfigError(f"every k in {ks} must be <= n={self.n}")
        if self.every < 0:
            raise ConfigError("eval every must be >= 0")
        if not (self.temperature > 0.0):
            raise ConfigError("eval temperature must be > 0")
        return self


@dataclass
class RunConfig:
    seed: int = 0
    algorithm: str = "vogue"
    steps: int = 200
    batch_inputs: int = 16
    out_dir: str = None
    checkpoint_every: int = 0  # 0 means final checkpoint only
    metrics_flush_every: int = 1
    policy: PolicyConfig = field(default_factory=lambda: PolicyConfig(vocab_size=VOCAB_SIZE))
    env: EnvConfig = field(default_factory=EnvConfig)
    augment: AugmentSpec = field(default_factory=AugmentSpec)
    grpo: GrpoConfig = field(default_factory=GrpoConfig)
    vogue: ShapingConfig = field(default_factory=ShapingConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.batch_inputs < 1:
            raise ConfigError("batch_inputs must be >= 1")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")
        if self.metrics_flush_every < 1:
            raise ConfigError("metrics_flush_every must be >= 1")
        self.policy.validate()
        self.env.validate()
        self.augment.validate()
        self.grpo.validate()
        self.vogue.validate()
        self.optim.validate()
        self.eval.validate()
        if self.policy.vocab_size != VOCAB_SIZE:
            raise ConfigError(
                f"policy.vocab_size {self.policy.vocab_size} != task vocabulary {VOCAB_SIZE}")
        if self.policy.image_hw != self.env.image_hw:
            raise ConfigError(
                f"policy.image_hw {self.policy.image_hw} != env image size "
                f"{self.env.image_hw} (grid_n * cell_px)")
        return self


_SECTIONS = {
    "policy": PolicyConfig,
    "env": EnvConfig,
    "augment": AugmentSpec,
    "grpo": GrpoConfig,
    "vogue": ShapingConfig,
    "optim": OptimConfig,
    "eval": EvalConfig,
}


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        if key not in fields:
            raise ConfigError(f"unknown config key {where!r}")
        if key in _SECTIONS and cls is RunConfig:
            kwargs[key] = _build(_SECTIONS[key], value, where)
        elif isinstance(fields[key].default, tuple):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    if cls is PolicyConfig:
        kwargs.setdefault("vocab_size", VOCAB_SIZE)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def config_from_dict(data):
    """Build and validate a RunConfig from its nested dict form."""
    return _build(RunConfig, data, "").validate()


def config_to_dict(cfg):
    """JSON-serializable nested dict; inverse of config_from_dict."""
    d = dataclasses.asdict(cfg)
    for key, value in list(d.items()):
        if isinstance(value, tuple):
            d[key] = list(value)
    for section in _SECTIONS:
        for key, value in list(d[section].items()):
            if isinstance(value, tuple):
                d[section][key] = list(value)
    return d


def load_config(path, overrides=()):
    """Read a JSON config file and apply dotted key=value overrides."""
    try:
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    apply_overrides(data, overrides)
    return config_from_dict(data)


def default_config(**top_level):
    """A validated default RunConfig with optional top-level replacements."""
    cfg = RunConfig(**top_level)
    return cfg.validate()


def apply_overrides(data, overrides):
    """Apply 'a.b.c=value' strings onto the nested dict in place.

    Values parse as JSON when possible and fall back to plain strings, so
    --set optim.lr=0.01 and --set algorithm=grpo both do the obvious thing.
    Unknown keys surface later in config_from_dict with the full path.
    """
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key.path=value")
        key, _, raw = item.partition("=")
        parts = key.strip().split(".")
        if not all(parts):
            raise ConfigError(f"override {item!r} has an empty key segment")
        node = data
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r} descends into non-mapping {part!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node[parts[-1]] = value
    return data
