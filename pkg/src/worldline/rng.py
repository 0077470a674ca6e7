"""Per-path random streams compiled with numba.

Each path owns an independent xoshiro256** generator whose 256-bit state is
derived from ``(seed, stream_id, substream)`` by SplitMix64 hashing, so a
stream's deviates never depend on how paths are scheduled. Normal deviates
come from a 256-layer ziggurat.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

_U64 = np.uint64
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    """Identifier of an independent deviate stream.

    Parameters
    ----------
    seed : int
        Run-level 64-bit seed.
    stream_id : int
        Stream index, one per path.
    substream : int, optional
        Extra index separating independent uses of one path's stream.
    """

    seed: int
    stream_id: int
    substream: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id", "substream"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 0 or value > _MASK64:
                raise ValueError(f"{name} must be an unsigned 64-bit integer, got {value!r}")

    def child(self, substream: int) -> "RngStream":
        """Return the stream with the same path index and another substream."""
        return RngStream(self.seed, self.stream_id, substream)

    def state(self) -> np.ndarray:
        """Initial generator state for this stream."""
        return seed_state(_U64(self.seed), _U64(self.stream_id), _U64(self.substream))


@njit(cache=True, inline="always")
def _splitmix_next(x):
    x = x + _U64(0x9E3779B97F4A7C15)
    z = x
    z = (z ^ (z >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> _U64(27))) * _U64(0x94D049BB133111EB)
    return x, z ^ (z >> _U64(31))


@njit(cache=True)
def seed_state(seed, stream_id, substream):
    """Hash ``(seed, stream_id, substream)`` into a xoshiro256** state."""
    x, h = _splitmix_next(seed)
    x, h2 = _splitmix_next(h ^ stream_id)
    x, h3 = _splitmix_next(h2 ^ (substream * _U64(0xD1B54A32D192ED03)))
    state = np.empty(4, dtype=np.uint64)
    x = h3
    for i in range(4):
        x, state[i] = _splitmix_next(x)
    return state


@njit(cache=True, inline="always")
def _rotl(x, k):
    return (x << _U64(k)) | (x >> _U64(64 - k))


@njit(cache=True, inline="always")
def next_u64(s):
    """Advance a xoshiro256** state and return 64 random bits."""
    result = _rotl(s[1] * _U64(5), 7) * _U64(9)
    t = s[1] << _U64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


@njit(cache=True, inline="always")
def next_double(s):
    """Uniform deviate on [0, 1) with 53 random bits."""
    return float(next_u64(s) >> _U64(11)) * (1.0 / 9007199254740992.0)


def _ziggurat_tables():
    r = 3.6541528853610088
    v = 0.00492867323399
    two52 = 4503599627370496.0
    ki = np.zeros(256, dtype=np.uint64)
    wi = np.zeros(256)
    fi = np.zeros(256)
    dn = tn = r
    q = v / np.exp(-0.5 * dn * dn)
    ki[0] = np.uint64((dn / q) * two52)
    ki[1] = 0
    wi[0] = q / two52
    wi[255] = dn / two52
    fi[0] = 1.0
    fi[255] = np.exp(-0.5 * dn * dn)
    for i in range(254, 0, -1):
        dn = np.sqrt(-2.0 * np.log(v / dn + np.exp(-0.5 * dn * dn)))
        ki[i + 1] = np.uint64((dn / tn) * two52)
        tn = dn
        fi[i] = np.exp(-0.5 * dn * dn)
        wi[i] = dn / two52
    return r, ki, wi, fi


_ZIG_R, _ZIG_KI, _ZIG_WI, _ZIG_FI = _ziggurat_tables()


@njit(cache=True, inline="always")
def xoshiro_step(s0, s1, s2, s3):
    """Register form of :func:`next_u64`: returns the bits and the new state."""
    result = _rotl(s1 * _U64(5), 7) * _U64(9)
    t = s1 << _U64(17)
    s2 ^= s0
    s3 ^= s1
    s1 ^= s2
    s0 ^= s3
    s2 ^= t
    s3 = _rotl(s3, 45)
    return result, s0, s1, s2, s3


@njit(cache=True, inline="always")
def zig_fast(raw):
    """Fast-path ziggurat test on ``raw``: returns ``(accepted, x)``."""
    r = raw >> _U64(8)
    rabs = (r >> _U64(1)) & _U64(0x000FFFFFFFFFFFFF)
    idx = np.int64(raw & _U64(0xFF))
    x = float(rabs) * _ZIG_WI[idx]
    if r & _U64(1):
        x = -x
    return rabs < _ZIG_KI[idx], x




@njit(cache=True)
def normal_after_reject(s, raw):
    """Finish a ziggurat draw whose fast-path test failed for ``raw``.

    Consumes from ``s`` exactly what :func:`next_normal` would after the
    same rejected draw, so callers that inline the fast path stay
    bitwise identical to it.
    """
    fi = _ZIG_FI
    while True:
        idx = np.int64(raw & _U64(0xFF))
        r = raw >> _U64(8)
        rabs = (r >> _U64(1)) & _U64(0x000FFFFFFFFFFFFF)
        x = float(rabs) * _ZIG_WI[idx]
        if r & _U64(1):
            x = -x
        if rabs < _ZIG_KI[idx]:
            return x
        if idx == 0:
            while True:
                xx = -np.log1p(-next_double(s)) / _ZIG_R
                yy = -np.log1p(-next_double(s))
                if yy + yy > xx * xx:
                    if (rabs >> _U64(8)) & _U64(1):
                        return -(_ZIG_R + xx)
                    return _ZIG_R + xx
        else:
            if (fi[idx - 1] - fi[idx]) * next_double(s) + fi[idx] < np.exp(-0.5 * x * x):
                return x
        raw = next_u64(s)


@njit(cache=True, inline="always")
def next_normal(s):
    """Standard normal deviate by the ziggurat method."""
    raw = next_u64(s)
    r = raw >> _U64(8)
    rabs = (r >> _U64(1)) & _U64(0x000FFFFFFFFFFFFF)
    idx = np.int64(raw & _U64(0xFF))
    if rabs < _ZIG_KI[idx]:
        x = float(rabs) * _ZIG_WI[idx]
        return -x if r & _U64(1) else x
    return normal_after_reject(s, raw)


@njit(cache=True)
def fill_normals(s, out):
    for i in range(out.shape[0]):
        out[i] = next_normal(s)


@njit(cache=True)
def fill_uniforms(s, out):
    for i in range(out.shape[0]):
        out[i] = next_double(s)


def normals(stream: RngStream, size: int) -> np.ndarray:
    """Draw ``size`` standard normals from the start of ``stream``."""
    out = np.empty(int(size))
    fill_normals(stream.state(), out)
    return out


def uniforms(stream: RngStream, size: int) -> np.ndarray:
    """Draw ``size`` uniforms on [0, 1) from the start of ``stream``."""
    out = np.empty(int(size))
    fill_uniforms(stream.state(), out)
    return out
