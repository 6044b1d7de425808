"""Configuration dataclasses and TOML loading.

Precedence when the CLI resolves a run: dataclass defaults < config file < flags.
"""
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .errors import ConfigError

ABLATIONS = ("full", "no_fde", "no_second_block", "no_weighted_comb")


@dataclass
class ModelConfig:
    L: int = 32
    K: int = 8
    n_fde: int = 2
    n_gta: int = 4
    d_model: int = 64
    heads: int = 8
    d_emb: int = 128
    d_ff: int = 128
    T: int = 50
    schedule: str = "quadratic"
    beta_min: float = 1e-4
    beta_max: float = 0.5
    ablation: str = "full"
    x0_clip: float = 5.0

    def validate(self):
        if min(self.L, self.K, self.d_model, self.heads, self.d_emb, self.T) < 1:
            raise ConfigError("L, K, d_model, heads, d_emb and T must be positive")
        if self.d_model % self.heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        if self.d_emb % 2:
            raise ConfigError("d_emb must be even")
        if self.n_fde < 0 or self.n_gta < 1:
            raise ConfigError("n_fde must be >= 0 and n_gta >= 1")
        if self.n_fde >= self.L:
            raise ConfigError(f"n_fde={self.n_fde} gives a dilation that does not fit L={self.L}")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}; expected one of {ABLATIONS}")
        if self.x0_clip <= 0:
            raise ConfigError("x0_clip must be positive")
        return self


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    strategy: str = "RM"
    rm_fraction: float = 0.2
    pb_prob: float = 0.5
    lr: float = 1e-3
    grad_clip: float = 1.0
    seed: int = 0
    val_every: int = 25
    val_samples: int = 4
    val_windows: int = 8
    rm_epochs: int = 200      # RM phase run before MPB epochs; 0 needs a warm start
    checkpoint: str = ""

    def validate(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.strategy not in ("RM", "MPB"):
            raise ConfigError(f"strategy must be RM or MPB, got {self.strategy!r}")
        if not 0 < self.rm_fraction < 1:
            raise ConfigError("rm_fraction must lie in (0, 1)")
        if not 0 <= self.pb_prob <= 1:
            raise ConfigError("pb_prob must lie in [0, 1]")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.rm_epochs < 0 or self.val_every < 0 or self.val_samples < 1:
            raise ConfigError("rm_epochs, val_every must be >= 0 and val_samples >= 1")
        return self


@dataclass
class SynthSpec:
    K: int = 8
    L: int = 32
    count: int = 540
    coupling: list = field(default_factory=list)   # K x K; empty -> default ring coupling
    rho: float = 0.95
    noise_std: float = 1.0
    seed: int = 0
    burn_in: int = 200


@dataclass
class DataConfig:
    path: str = ""
    val_fraction: float = 0.04
    test_fraction: float = 0.04
    synth: SynthSpec = field(default_factory=SynthSpec)


@dataclass
class EvalConfig:
    n_features: int = 4
    block_len: int = 8
    n_blocks: int = 2
    n_trials: int = 20
    samples: int = 50
    windows: int = 0          # test windows scored per trial; 0 = all
    point: str = "mean"
    max_batch: int = 512


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0
    workers: int = 1

    def to_dict(self):
        return asdict(self)

    def hash(self):
        return config_hash(self.to_dict())


def config_hash(obj):
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _build(cls, raw, where):
    if not isinstance(raw, dict):
        raise ConfigError(f"[{where}] must be a table")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"unknown keys in [{where}]: {', '.join(unknown)}")
    kwargs = {}
    for name, value in raw.items():
        default = known[name].default_factory() if callable(known[name].default_factory) \
            else known[name].default
        if hasattr(default, "__dataclass_fields__"):
            kwargs[name] = _build(type(default), value, f"{where}.{name}")
        elif isinstance(default, bool) or default is None:
            kwargs[name] = value
        elif isinstance(default, (int, float)) and not isinstance(value, (int, float)):
            raise ConfigError(f"[{where}] {name} must be numeric, got {value!r}")
        elif isinstance(default, int) and isinstance(value, float):
            raise ConfigError(f"[{where}] {name} must be an integer, got {value!r}")
        else:
            kwargs[name] = type(default)(value) if isinstance(default, (int, float, str)) else value
    return cls(**kwargs)


def run_config_from_dict(raw):
    cfg = _build(RunConfig, raw, "root")
    cfg.model.validate()
    cfg.train.validate()
    return cfg


def load_config(path):
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    return run_config_from_dict(raw)
