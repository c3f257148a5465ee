"""Fourier positional encoding of normalized coordinates.

    PE(x) = [x, cos(2^0 pi x), sin(2^0 pi x), ..., cos(2^(L-1) pi x), sin(2^(L-1) pi x)]

Each cos/sin block carries all input coordinates in order, so a 3-D input
with L = 8 maps to 3 * (1 + 2 * 8) = 51 features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EncodingConfig:
    n_freqs: int = 8
    include_raw: bool = True
    input_dim: int = 3

    def __post_init__(self):
        if self.n_freqs < 0 or self.input_dim < 1:
            raise ValueError("n_freqs must be >= 0 and input_dim >= 1")

    @property
    def output_dim(self) -> int:
        return self.input_dim * (int(self.include_raw) + 2 * self.n_freqs)


def positional_encode(x, cfg: EncodingConfig = EncodingConfig()) -> np.ndarray:
    """Encode ``(..., input_dim)`` coordinates to ``(..., cfg.output_dim)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != cfg.input_dim:
        raise ValueError(f"expected last axis {cfg.input_dim}, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("positional_encode: non-finite coordinate")
    parts = [x] if cfg.include_raw else []
    for i in range(cfg.n_freqs):
        arg = (2.0**i * np.pi) * x
        parts.append(np.cos(arg))
        parts.append(np.sin(arg))
    if not parts:
        return np.zeros(x.shape[:-1] + (0,))
    return np.concatenate(parts, axis=-1)
