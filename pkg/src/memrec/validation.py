"""Small input-validation helpers used at API boundaries."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError

_U64_MAX = (1 << 64) - 1


def check_positive_int(name: str, value) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if value < 1:
        raise ConfigError(f"{name} must be >= 1, got {value}")
    return value


def check_seed64(name: str, value) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if not 0 <= value <= _U64_MAX:
        raise ConfigError(f"{name} must fit in 64 bits, got {value}")
    return value


def check_fraction(name: str, value) -> float:
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number, got {value!r}") from None
    if not 0.0 <= value <= 1.0:
        raise ConfigError(f"{name} must lie in [0, 1], got {value}")
    return value


def check_token(token) -> bytes:
    """Coerce a categorical token to bytes; str is encoded as UTF-8."""
    if isinstance(token, bytes):
        return token
    if isinstance(token, bytearray):
        return bytes(token)
    if isinstance(token, str):
        return token.encode("utf-8")
    raise TypeError(f"token must be bytes or str, got {type(token).__name__}")


def check_finite(name: str, arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr
