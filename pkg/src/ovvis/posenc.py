"""Sinusoidal spatial and temporal positional encodings.

Spatial layout (C x 1 x H x W): the first C/2 channels encode the row
coordinate, the last C/2 the column coordinate.  Inside each half, channel
2i holds sin(pos / 10000**(2i/d)) and channel 2i+1 the matching cosine,
with d = C/2 and positions normalized to (0, 2*pi] as (index + 1) / extent.

Temporal layout (C x T x 1 x 1) uses the same frequency scheme over all C
channels with the raw frame index (0-based) as position.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError

BASE = 10000.0


def _sincos(positions: np.ndarray, channels: int) -> np.ndarray:
    """channels x len(positions) sine/cosine table."""
    i = np.arange(channels // 2)
    freq = BASE ** (2.0 * i / channels)
    angles = positions[None, :] / freq[:, None]
    out = np.empty((channels, positions.size))
    out[0::2] = np.sin(angles)
    out[1::2] = np.cos(angles)
    return out


def spatial_encoding(channels: int, height: int, width: int) -> np.ndarray:
    if channels <= 0 or channels % 4:
        raise ConfigError(f"spatial encoding needs channels divisible by 4, got {channels}")
    half = channels // 2
    ys = (np.arange(height) + 1.0) / height * 2 * np.pi
    xs = (np.arange(width) + 1.0) / width * 2 * np.pi
    ey = _sincos(ys, half)  # half x H
    ex = _sincos(xs, half)  # half x W
    out = np.empty((channels, 1, height, width))
    out[:half, 0] = ey[:, :, None]
    out[half:, 0] = ex[:, None, :]
    return out


def temporal_encoding(channels: int, frames: int) -> np.ndarray:
    if channels <= 0 or channels % 2:
        raise ConfigError(f"temporal encoding needs an even channel count, got {channels}")
    table = _sincos(np.arange(frames, dtype=np.float64), channels)
    return table[:, :, None, None]


def combine(spatial: np.ndarray, temporal: np.ndarray) -> np.ndarray:
    if spatial.shape[0] != temporal.shape[0]:
        raise ShapeError(f"channel mismatch: spatial {spatial.shape} vs temporal {temporal.shape}")
    if spatial.shape[1] != 1 or temporal.shape[2:] != (1, 1):
        raise ShapeError("expected spatial C x 1 x H x W and temporal C x T x 1 x 1")
    return spatial + temporal


@dataclass(frozen=True)
class PositionalEncoding:
    spatial: np.ndarray
    temporal: np.ndarray
    combined: np.ndarray

    @classmethod
    def build(cls, channels: int, frames: int, height: int, width: int) -> "PositionalEncoding":
        s = spatial_encoding(channels, height, width)
        t = temporal_encoding(channels, frames)
        return cls(s, t, combine(s, t))

    def tokens(self) -> np.ndarray:
        """(T*H*W) x C rows in (t, y, x) order, matching encoder tokens."""
        c = self.combined.shape[0]
        return np.ascontiguousarray(self.combined.reshape(c, -1).T)
