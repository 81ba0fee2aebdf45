"""Counter-based random streams.

Every random number in the package is a pure function of
``(seed, tag, replicate, entity, index)``, computed with the Philox4x32-10
block cipher.  A stream has no hidden state, so a particle keeps the same
noise whatever the ensemble size, the chunking of replicates or the number
of worker threads.

Counter layout (four 32-bit words)::

    c0 = block index within the stream (two variates per block)
    c1 = entity (particle index; 0 for path-level streams)
    c2 = stream tag (see the ``TAG_*`` constants)
    c3 = replicate (outer Monte Carlo path)

The 64-bit seed is split into the two key words.  Variate ``i`` of a stream
is lane ``i % 2`` of block ``i // 2``.
"""

from __future__ import annotations

import numpy as np
from numba import njit

TAG_V = 1
TAG_W = 2
TAG_JUMP = 3
TAG_INIT = 4

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_TWO_PI = 2.0 * np.pi
_INV_2_53 = 1.0 / 9007199254740992.0


@njit(cache=True, inline="always", nogil=True)
def _philox_block(c0, c1, c2, c3, k0, k1):
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0 = p0 >> np.uint64(32)
        lo0 = p0 & _MASK32
        hi1 = p1 >> np.uint64(32)
        lo1 = p1 & _MASK32
        n0 = (hi1 ^ c1 ^ k0) & _MASK32
        n2 = (hi0 ^ c3 ^ k1) & _MASK32
        c0, c1, c2, c3 = n0, lo1, n2, lo0
        k0 = (k0 + _W0) & _MASK32
        k1 = (k1 + _W1) & _MASK32
    return c0, c1, c2, c3


@njit(cache=True, inline="always", nogil=True)
def _block_uniforms(blk, ent, tag, rep, k0, k1):
    r0, r1, r2, r3 = _philox_block(np.uint64(blk), np.uint64(ent), np.uint64(tag),
                                   np.uint64(rep), np.uint64(k0), np.uint64(k1))
    u1 = float(((r0 >> np.uint64(5)) << np.uint64(26)) | (r1 >> np.uint64(6))) * _INV_2_53
    u2 = float(((r2 >> np.uint64(5)) << np.uint64(26)) | (r3 >> np.uint64(6))) * _INV_2_53
    return u1, u2


@njit(cache=True, inline="always", nogil=True)
def _block_normals(blk, ent, tag, rep, k0, k1):
    u1, u2 = _block_uniforms(blk, ent, tag, rep, k0, k1)
    rad = np.sqrt(-2.0 * np.log(1.0 - u1))
    return rad * np.cos(_TWO_PI * u2), rad * np.sin(_TWO_PI * u2)


@njit(cache=True, nogil=True)
def _philox_raw(ctr, k0, k1):
    out = np.empty_like(ctr)
    for i in range(ctr.shape[0]):
        r = _philox_block(np.uint64(ctr[i, 0]), np.uint64(ctr[i, 1]),
                          np.uint64(ctr[i, 2]), np.uint64(ctr[i, 3]),
                          np.uint64(k0), np.uint64(k1))
        for j in range(4):
            out[i, j] = r[j]
    return out


@njit(cache=True, nogil=True)
def _stream(k0, k1, tag, reps, ents, start, count, gaussian):
    out = np.empty((reps.shape[0], ents.shape[0], count))
    first = start // 2
    last = (start + count - 1) // 2
    for r in range(reps.shape[0]):
        for e in range(ents.shape[0]):
            for b in range(first, last + 1):
                if gaussian:
                    z0, z1 = _block_normals(b, ents[e], tag, reps[r], k0, k1)
                else:
                    z0, z1 = _block_uniforms(b, ents[e], tag, reps[r], k0, k1)
                i0 = 2 * b - start
                if 0 <= i0 < count:
                    out[r, e, i0] = z0
                if 0 <= i0 + 1 < count:
                    out[r, e, i0 + 1] = z1
    return out


def split_seed(seed: int) -> tuple[int, int]:
    """Split a 64-bit seed into the two 32-bit Philox key words."""
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
    return seed & 0xFFFFFFFF, seed >> 32


def philox4x32(counters, key) -> np.ndarray:
    """Raw Philox4x32-10 output for an array of 4-word counters."""
    ctr = np.ascontiguousarray(np.atleast_2d(counters), dtype=np.uint64)
    k = np.asarray(key, dtype=np.uint64)
    return _philox_raw(ctr, k[0], k[1]).astype(np.uint32)


def _ids(x) -> np.ndarray:
    return np.ascontiguousarray(np.atleast_1d(np.asarray(x, dtype=np.int64)))


def normals(seed, tag, replicates, entities, start, count) -> np.ndarray:
    """Standard normals, shape ``(len(replicates), len(entities), count)``.

    Entry ``[r, e, i]`` is variate ``start + i`` of the stream
    ``(seed, tag, replicates[r], entities[e])``.
    """
    k0, k1 = split_seed(seed)
    reps, ents = _ids(replicates), _ids(entities)
    if count <= 0:
        return np.zeros((reps.size, ents.size, 0))
    return _stream(k0, k1, int(tag), reps, ents, int(start), int(count), True)


def uniforms(seed, tag, replicates, entities, start, count) -> np.ndarray:
    """Uniforms on [0, 1) with the same indexing as :func:`normals`."""
    k0, k1 = split_seed(seed)
    reps, ents = _ids(replicates), _ids(entities)
    if count <= 0:
        return np.zeros((reps.size, ents.size, 0))
    return _stream(k0, k1, int(tag), reps, ents, int(start), int(count), False)


def derive_seed(seed: int, *salt: int) -> int:
    """Deterministically derive a sub-seed from ``seed`` and integer salts."""
    k0, k1 = split_seed(seed)
    ctr = np.array([[s & 0xFFFFFFFF for s in (list(salt) + [0, 0, 0, 0])[:4]]],
                   dtype=np.uint64)
    out = _philox_raw(ctr, k0, k1)[0]
    return int(out[0]) | (int(out[1]) << 32)
