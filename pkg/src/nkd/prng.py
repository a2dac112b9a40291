"""Splittable, counter-based random streams.

Every stream is a SplitMix64 sequence keyed by a 64-bit value that is
derived by hashing a master seed together with a path of ``(tag, index)``
pairs.  Derivation never touches generator state, so streams for runs,
landscapes, genes or generations can be created in any order (or lazily
inside a compiled kernel) and always produce the same numbers.

The primitives operating on a raw ``state`` array (``[key, counter]`` as
``uint64``) are jitted so that the Python-level :class:`RandomStream` and the
numba walk kernels share one implementation bit for bit.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from numba import njit

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_TAG_MUL = np.uint64(0xD1B54A32D192ED03)
_ROOT_SALT = np.uint64(0x6A09E667F3BCC909)
_U64_MASK = (1 << 64) - 1
_TO_UNIT = 1.0 / 9007199254740992.0  # 2**-53


class Tag(IntEnum):
    """Purpose tags used in seed paths."""

    CELL = 1
    LANDSCAPE = 2
    START = 3
    CONTROL = 4
    GENERATION = 5
    GENE = 6
    SPECIES = 7
    INIT = 8
    PROPOSAL = 9
    SUBSET = 10
    DYNAMIC = 11
    PARTNER = 12


@njit(cache=True, nogil=True)
def mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@njit(cache=True, nogil=True)
def root_key(master_seed):
    return mix64(master_seed ^ _ROOT_SALT)


@njit(cache=True, nogil=True)
def child_key(key, tag, index):
    h = mix64(index + tag * _TAG_MUL)
    return mix64((key ^ h) + _GAMMA)


@njit(cache=True, nogil=True)
def next_u64(state):
    state[1] += np.uint64(1)
    return mix64(state[0] + state[1] * _GAMMA)


@njit(cache=True, nogil=True)
def next_uniform(state):
    return np.float64(next_u64(state) >> np.uint64(11)) * _TO_UNIT


@njit(cache=True, nogil=True)
def next_below(state, bound):
    # unbiased modulo with rejection of the short final interval
    m = np.uint64(bound)
    threshold = (np.uint64(0) - m) % m
    while True:
        r = next_u64(state)
        if r >= threshold:
            return np.int64(r % m)


@njit(cache=True, nogil=True)
def sample_into(state, k, m, scratch, out):
    """Partial Fisher-Yates: write k distinct values from range(m) into out."""
    for i in range(m):
        scratch[i] = i
    for i in range(k):
        j = i + next_below(state, m - i)
        tmp = scratch[i]
        scratch[i] = scratch[j]
        scratch[j] = tmp
        out[i] = scratch[i]


@njit(cache=True, nogil=True)
def sample_other_into(state, k, n, exclude, scratch, out):
    """k distinct values from range(n) without ``exclude``, in draw order."""
    sample_into(state, k, n - 1, scratch, out)
    for i in range(k):
        if out[i] >= exclude:
            out[i] += 1


@njit(cache=True, nogil=True)
def fill_uniform(state, out):
    for i in range(out.shape[0]):
        out[i] = next_uniform(state)


@njit(cache=True, nogil=True)
def fill_bits(state, out):
    for i in range(out.shape[0]):
        out[i] = np.uint8(next_u64(state) >> np.uint64(63))


def _u64(x: int) -> np.uint64:
    return np.uint64(int(x) & _U64_MASK)


def stable_index(*parts: object) -> int:
    """64-bit index for a path component, stable across runs and platforms."""
    text = "|".join(repr(p) for p in parts).encode()
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "little")


@dataclass(frozen=True)
class SeedPath:
    """A master seed plus a path of (tag, index) pairs naming one stream."""

    master_seed: int
    path: tuple[tuple[int, int], ...] = ()

    def child(self, tag: int, index: int) -> SeedPath:
        return SeedPath(self.master_seed, self.path + ((int(tag), int(index)),))

    @property
    def key(self) -> int:
        key = root_key(_u64(self.master_seed))
        for tag, index in self.path:
            key = child_key(_u64(key), _u64(tag), _u64(index))
        return int(key)

    def stream(self) -> RandomStream:
        return derive_stream(self)

    def __str__(self) -> str:
        parts = []
        for tag, index in self.path:
            name = Tag(tag).name.lower() if tag in Tag._value2member_map_ else str(tag)
            parts.append(f"{name}:{index}")
        return f"{self.master_seed}/" + "/".join(parts)


def derive_stream(seed_path: SeedPath) -> RandomStream:
    """Return the stream named by ``seed_path`` (positioned at its start)."""
    if len(seed_path.path) < 1:
        raise ValueError("seed path must contain at least one (tag, index) component")
    return RandomStream(seed_path.key)


class RandomStream:
    """One SplitMix64 sequence.  Not thread safe; give each worker its own."""

    def __init__(self, key: int, counter: int = 0):
        self.state = np.array([_u64(key), _u64(counter)], dtype=np.uint64)

    @property
    def key(self) -> int:
        return int(self.state[0])

    @property
    def counter(self) -> int:
        return int(self.state[1])

    def child(self, tag: int, index: int) -> RandomStream:
        """Independent sub-stream; does not advance this stream."""
        return RandomStream(int(child_key(self.state[0], _u64(tag), _u64(index))))

    def copy(self) -> RandomStream:
        return RandomStream(self.key, self.counter)

    def next_u64(self) -> int:
        return int(next_u64(self.state))

    def random(self) -> float:
        """Uniform real in [0, 1) with 53 bits of precision."""
        return float(next_uniform(self.state))

    def random_array(self, size: int) -> np.ndarray:
        out = np.empty(size, dtype=np.float64)
        fill_uniform(self.state, out)
        return out

    def integers(self, bound: int) -> int:
        """Uniform integer in [0, bound)."""
        if bound < 1:
            raise ValueError(f"bound must be >= 1, got {bound}")
        return int(next_below(self.state, bound))

    def sample(self, k: int, m: int) -> np.ndarray:
        """k distinct integers from range(m), in draw order."""
        if not 0 <= k <= m:
            raise ValueError(f"cannot sample {k} distinct values from range({m})")
        out = np.empty(k, dtype=np.int64)
        sample_into(self.state, k, m, np.empty(max(m, 1), dtype=np.int64), out)
        return out

    def sample_other(self, k: int, n: int, exclude: int) -> np.ndarray:
        """k distinct integers from range(n) excluding ``exclude``."""
        if not 0 <= k <= n - 1:
            raise ValueError(f"cannot sample {k} distinct values from {n - 1} candidates")
        out = np.empty(k, dtype=np.int64)
        sample_other_into(self.state, k, n, exclude, np.empty(max(n, 1), dtype=np.int64), out)
        return out

    def bits(self, n: int) -> np.ndarray:
        out = np.empty(n, dtype=np.uint8)
        fill_bits(self.state, out)
        return out

    def __repr__(self) -> str:
        return f"RandomStream(key={self.key:#018x}, counter={self.counter})"
