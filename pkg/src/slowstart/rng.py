"""Deterministic, splittable random streams.

Every random object in the package is a pure function of a master seed and a
:class:`StreamTag`.  Sequential streams are numpy generators seeded through
``SeedSequence`` with the tag as spawn key.  Per-site departure clocks and the
continuum increments need random access by (site, index), so they use a keyed
counter hash evaluated inside the numba kernels (see ``_kernels``).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ParameterError

MASK64 = (1 << 64) - 1

# Sampled reals are rounded up to multiples of this dyadic step.  Sums and
# differences of such values stay exact in float64 while |x| < 2**22.
GRID = 2.0 ** -30

_KIND_CODES = {
    "positions-left": 1,
    "positions-right": 2,
    "clocks": 3,
    "oracle-increments": 4,
    "replica": 5,
    "naive": 6,
    "mm1": 7,
}

_CHUNK = 256


@dataclass(frozen=True)
class StreamTag:
    kind: str
    index: int = 0

    def __post_init__(self):
        if self.kind not in _KIND_CODES:
            raise ParameterError(
                f"unknown stream kind {self.kind!r}; expected one of {sorted(_KIND_CODES)}"
            )

    @classmethod
    def clocks(cls, site: int = 0) -> StreamTag:
        return cls("clocks", site)

    @classmethod
    def replica(cls, r: int) -> StreamTag:
        return cls("replica", r)

    @classmethod
    def oracle(cls, path: int = 0) -> StreamTag:
        return cls("oracle-increments", path)

    def words(self) -> tuple[int, int]:
        i = self.index
        zigzag = ((i << 1) ^ (i >> 63)) & MASK64
        return (_KIND_CODES[self.kind], zigzag)


def _check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed <= MASK64:
        raise ParameterError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def stream_key(seed: int, tag: StreamTag) -> int:
    """64-bit key for ``(seed, tag)``; used to key the counter-hash streams."""
    ss = np.random.SeedSequence(_check_seed(seed), spawn_key=tag.words())
    return int(ss.generate_state(1, np.uint64)[0])


def replica_seed(seed: int, replica: int) -> int:
    """Master seed of replica ``replica``; each replica gets its own tag namespace."""
    return stream_key(seed, StreamTag.replica(replica))


class RngStream:
    """Single-consumer random stream bound to ``(seed, tag)``."""

    def __init__(self, seed: int, tag: StreamTag):
        self.seed = _check_seed(seed)
        self.tag = tag
        ss = np.random.SeedSequence(self.seed, spawn_key=tag.words())
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, tag={self.tag})"

    def standard_exponential(self, size=None):
        return self.generator.standard_exponential(size)

    def standard_normal(self, size=None):
        return self.generator.standard_normal(size)

    def uniform(self, size=None):
        return self.generator.random(size)


def derive_stream(seed: int, tag: StreamTag) -> RngStream:
    return RngStream(seed, tag)


def quantize(x):
    """Round up to the dyadic grid; keeps draws strictly positive."""
    return np.ceil(np.asarray(x, dtype=np.float64) / GRID) * GRID


def sample_exponential(stream: RngStream, rate: float) -> float:
    if not rate > 0:
        raise ParameterError(f"rate must be positive, got {rate}")
    return float(quantize(stream.standard_exponential() / rate))


def sample_poisson_points(stream: RngStream, interval: tuple[float, float], rate: float) -> np.ndarray:
    """Poisson points on ``[a, b]`` built from cumulative exponential spacings from ``a``.

    Spacings are drawn in fixed-size chunks, so enlarging ``b`` only appends
    points to the output.
    """
    a, b = float(interval[0]), float(interval[1])
    if not a < b:
        raise ParameterError(f"interval must satisfy a < b, got [{a}, {b}]")
    if not rate > 0:
        raise ParameterError(f"rate must be positive, got {rate}")
    pieces = []
    last = a
    while True:
        steps = quantize(stream.standard_exponential(_CHUNK) / rate)
        pts = last + np.cumsum(steps)
        inside = pts[pts <= b]
        pieces.append(inside)
        if inside.size < _CHUNK:
            break
        last = pts[-1]
    return np.concatenate(pieces)


def one_sided_points(stream: RngStream, length: float, rate: float) -> np.ndarray:
    """Distances from the origin of Poisson points within ``length``, ascending."""
    if length <= 0:
        return np.empty(0)
    return sample_poisson_points(stream, (0.0, length), rate)


def counter_exponentials(key: int, site: int, n: int) -> np.ndarray:
    """First ``n`` quantized Exponential(1) draws of the keyed site stream."""
    return _kernels.site_exponentials(np.uint64(key), site, n)
