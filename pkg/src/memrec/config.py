"""Plain-text key=value training configuration with typed coercion.

Files hold one ``key = value`` pair per line; ``#`` starts a comment. CLI
flags override file values, which override defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .encoder import DEFAULT_HASH_SEED, EncoderConfig
from .errors import ConfigError
from .schemes import SCHEME_NAMES


@dataclass
class TrainConfig:
    embedding_scheme: str = "memrec"
    k: int = 2
    k_prime: int = 2
    d: int = 4096
    d_prime: int = 4096
    l: int = 16
    hash_seed: int = DEFAULT_HASH_SEED
    hashtrick_rows: int = 65536
    qr_buckets: int = 64
    freeze_alpha: bool = False
    mlp_bot: str = ""  # full chain "13-64-32-16"; empty derives num_dense-64-32-l
    mlp_top: str = "128-64-1"  # layers after the interaction
    lr: float = 0.25
    batch_size: int = 32
    epochs: int = 3
    init_seed: int = 0
    shuffle_seed: int = 0
    num_dense: int = 13
    train_frac: float = 0.85
    val_frac: float = 0.05
    train_path: str = ""
    checkpoint_out: str = "model.ckpt"
    metrics_out: str = "metrics.log"

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            k=self.k,
            k_prime=self.k_prime,
            d=self.d,
            d_prime=self.d_prime,
            l=self.l,
            hash_seed=self.hash_seed,
        )

    def bot_sizes(self) -> tuple[int, ...]:
        if not self.mlp_bot:
            return (self.num_dense, 64, 32, self.l)
        sizes = parse_layer_sizes("mlp_bot", self.mlp_bot)
        if sizes[0] != self.num_dense:
            raise ConfigError(
                f"mlp_bot must start at num_dense ({self.num_dense}), "
                f"got {sizes[0]}"
            )
        if sizes[-1] != self.l:
            raise ConfigError(
                f"mlp_bot must end at l ({self.l}), got {sizes[-1]}"
            )
        return sizes

    def top_sizes(self) -> tuple[int, ...]:
        sizes = parse_layer_sizes("mlp_top", self.mlp_top)
        if sizes[-1] != 1:
            raise ConfigError(f"mlp_top must end at 1, got {sizes[-1]}")
        return sizes

    def validate(self) -> "TrainConfig":
        if self.embedding_scheme not in SCHEME_NAMES:
            raise ConfigError(
                f"embedding_scheme must be one of {SCHEME_NAMES}, "
                f"got {self.embedding_scheme!r}"
            )
        self.encoder_config()
        self.bot_sizes()
        self.top_sizes()
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        return self


def parse_layer_sizes(name: str, text: str) -> tuple[int, ...]:
    try:
        sizes = tuple(int(p) for p in str(text).replace(",", "-").split("-") if p)
    except ValueError:
        raise ConfigError(f"{name} must look like '64-32-1', got {text!r}") from None
    if len(sizes) < 1 or any(s < 1 for s in sizes):
        raise ConfigError(f"{name} must list positive layer sizes, got {text!r}")
    return sizes


def read_config_file(path) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, val = line.split("=", 1)
        values[key.strip()] = val.strip()
    return values


_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _coerce(key: str, value):
    ftype = _FIELD_TYPES.get(key)
    if ftype is None:
        raise ConfigError(f"unknown config key {key!r}")
    if isinstance(value, str):
        text = value.strip()
        if ftype == "bool" or ftype is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ConfigError(f"{key} must be a boolean, got {value!r}")
        if ftype == "int" or ftype is int:
            try:
                return int(text)
            except ValueError:
                raise ConfigError(f"{key} must be an integer, got {value!r}") from None
        if ftype == "float" or ftype is float:
            try:
                return float(text)
            except ValueError:
                raise ConfigError(f"{key} must be a number, got {value!r}") from None
        return text
    return value


def build_train_config(
    file_values: dict | None = None, overrides: dict | None = None
) -> TrainConfig:
    """Defaults, then file values, then overrides (None overrides skipped)."""
    merged = {}
    for source in (file_values or {}, overrides or {}):
        for key, value in source.items():
            if value is None:
                continue
            merged[key] = _coerce(key, value)
    return TrainConfig(**merged).validate()
