"""Counter-based random numbers (Philox4x32-10) keyed on (seed, step, particle).

Every Gaussian increment is a pure function of its coordinates, so runs are
reproducible independently of scheduling, batching or thread count.
"""

from __future__ import annotations

import numpy as np
from numba import njit
from scipy.special import ndtri

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint32(0x9E3779B9)
_W1 = np.uint32(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)


def philox4x32(counter, key, rounds: int = 10):
    """Philox4x32 block function.

    counter: uint32 array (..., 4); key: uint32 array broadcastable to (..., 2).
    Returns uint32 array (..., 4).
    """
    c = np.asarray(counter, dtype=np.uint32)
    k = np.asarray(key, dtype=np.uint32)
    c0, c1, c2, c3 = (c[..., i].astype(np.uint64) for i in range(4))
    k0 = np.broadcast_to(k[..., 0], c0.shape).astype(np.uint32)
    k1 = np.broadcast_to(k[..., 1], c0.shape).astype(np.uint32)
    for r in range(rounds):
        if r:
            with np.errstate(over="ignore"):
                k0 = k0 + _W0
                k1 = k1 + _W1
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0, lo0 = p0 >> _S32, p0 & _MASK
        hi1, lo1 = p1 >> _S32, p1 & _MASK
        c0 = hi1 ^ c1 ^ k0.astype(np.uint64)
        c1 = lo1
        c2 = hi0 ^ c3 ^ k1.astype(np.uint64)
        c3 = lo0
    return np.stack([c0, c1, c2, c3], axis=-1).astype(np.uint32)


def split_seed(seed: int) -> np.ndarray:
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return np.array([seed & 0xFFFFFFFF, seed >> 32], dtype=np.uint32)


def replica_seed(seed: int, replica: int) -> int:
    """Independent 64-bit seed for a replica, derived from the top-level seed."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(replica)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _words_to_uniform(a, b):
    # 53-bit uniform strictly inside (0, 1)
    a = (a >> np.uint32(5)).astype(np.float64)
    b = (b >> np.uint32(6)).astype(np.float64)
    return (a * 67108864.0 + b + 0.5) / 9007199254740992.0


def uniforms(seeds, step: int, particles, count: int, stream: int = 0):
    """Uniforms in (0, 1) with shape (len(seeds), len(particles), count)."""
    keys = np.stack([split_seed(s) for s in np.atleast_1d(seeds)])
    particles = np.asarray(particles, dtype=np.uint64)
    blocks = (count + 1) // 2
    ctr = np.zeros((keys.shape[0], particles.size, blocks, 4), dtype=np.uint32)
    ctr[..., 0] = np.uint32(step & 0xFFFFFFFF)
    ctr[..., 1] = (particles & _MASK).astype(np.uint32)[None, :, None]
    ctr[..., 2] = np.arange(blocks, dtype=np.uint32)[None, None, :]
    ctr[..., 3] = np.uint32(stream)
    out = philox4x32(ctr, keys[:, None, None, :])
    u = np.concatenate(
        [_words_to_uniform(out[..., 0], out[..., 1])[..., None], _words_to_uniform(out[..., 2], out[..., 3])[..., None]],
        axis=-1,
    )
    return u.reshape(keys.shape[0], particles.size, 2 * blocks)[..., :count]


def normals(seeds, step: int, particles, d: int, stream: int = 0):
    """Standard normals (len(seeds), len(particles), d) by inverse CDF."""
    return ndtri(uniforms(seeds, step, particles, d, stream))


class CounterRNG:
    """Convenience wrapper holding a single seed."""

    def __init__(self, seed: int):
        self.seed = int(seed)

    def uniforms(self, step, particles, count, stream=0):
        return uniforms([self.seed], step, particles, count, stream)[0]

    def normals(self, step, particles, d, stream=0):
        return normals([self.seed], step, particles, d, stream)[0]


@njit(cache=True)
def _philox_uniforms(keys, step, ids, count, stream, out):
    blocks = (count + 1) // 2
    m32 = np.uint64(0xFFFFFFFF)
    for r in range(keys.shape[0]):
        for p in range(ids.size):
            for b in range(blocks):
                c0 = np.uint64(step) & m32
                c1 = np.uint64(ids[p]) & m32
                c2 = np.uint64(b)
                c3 = np.uint64(stream)
                k0 = np.uint64(keys[r, 0])
                k1 = np.uint64(keys[r, 1])
                for rd in range(10):
                    if rd:
                        k0 = (k0 + np.uint64(0x9E3779B9)) & m32
                        k1 = (k1 + np.uint64(0xBB67AE85)) & m32
                    p0 = np.uint64(0xD2511F53) * c0
                    p1 = np.uint64(0xCD9E8D57) * c2
                    n0 = (p1 >> np.uint64(32)) ^ c1 ^ k0
                    n2 = (p0 >> np.uint64(32)) ^ c3 ^ k1
                    c1 = p1 & m32
                    c3 = p0 & m32
                    c0 = n0
                    c2 = n2
                u0 = ((c0 >> np.uint64(5)) * np.uint64(67108864) + (c1 >> np.uint64(6)))
                u1 = ((c2 >> np.uint64(5)) * np.uint64(67108864) + (c3 >> np.uint64(6)))
                j = 2 * b
                out[r, p, j] = (float(u0) + 0.5) / 9007199254740992.0
                if j + 1 < count:
                    out[r, p, j + 1] = (float(u1) + 0.5) / 9007199254740992.0


def fast_normals(seeds, step: int, particles, d: int, stream: int = 0):
    """Compiled equivalent of ``normals``; identical output."""
    keys = np.stack([split_seed(s) for s in np.atleast_1d(seeds)]).astype(np.uint64)
    ids = np.ascontiguousarray(particles, dtype=np.uint64)
    out = np.empty((keys.shape[0], ids.size, d))
    _philox_uniforms(keys, int(step), ids, int(d), int(stream), out)
    return ndtri(out)
