"""Seed derivation and counter-based random access.

Every random quantity in a run flows from one master seed. Sequential
consumers get a :class:`numpy.random.Generator` from :func:`substream`,
keyed by names such as ``("receiver", "darks", block)``. Per-slot
attributes that must be looked up at arbitrary slot indices (basis, bit,
intensity of slot 4e8 without generating the 4e8 slots before it) use the
stateless hash in :func:`hash_uniform`.
"""
from __future__ import annotations

import hashlib

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def name_key(*names) -> int:
    """Stable 64-bit integer for a tuple of names (str or int)."""
    h = hashlib.blake2b(digest_size=8)
    for n in names:
        h.update(repr(n).encode())
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


def derive_seed(master: int, *names) -> int:
    """Derive a child seed from ``master`` and a path of names."""
    return name_key(int(master), *names) & 0x7FFF_FFFF_FFFF_FFFF


def substream(master: int, *names) -> np.random.Generator:
    """Independent PCG64 generator for the named consumer."""
    ss = np.random.SeedSequence(entropy=int(master) & (2**64 - 1), spawn_key=(name_key(*names),))
    return np.random.default_rng(ss)


def _mix(z: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer; uint64 arithmetic wraps
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def hash_u64(key: int, index) -> np.ndarray:
    idx = np.asarray(index, dtype=np.int64).astype(np.uint64)
    k = _mix(np.asarray([key & (2**64 - 1)], dtype=np.uint64))[0]
    with np.errstate(over="ignore"):
        return _mix(k ^ (idx * _GOLDEN + k))


def hash_uniform(key: int, index) -> np.ndarray:
    """Uniform doubles in [0, 1), a pure function of ``(key, index)``."""
    return (hash_u64(key, index) >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def hash_bits(key: int, index) -> np.ndarray:
    return (hash_u64(key, index) >> np.uint64(63)).astype(np.int8)
