"""Counter-based uniforms (Philox4x32-10) addressed by (path, event, slot).

Every random number in a simulation is a pure function of the master seed and
its address, so results do not depend on how paths are batched or scheduled.
numpy's bit generators are sequential streams; here whole arrays of counters
are hashed at once, which is what the lockstep simulator needs.
"""

from __future__ import annotations

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_SHIFT = np.uint64(32)
ROUNDS = 10


def philox4x32(counter, key, rounds=ROUNDS):
    """Philox4x32 block function.

    ``counter`` has shape (..., 4) and ``key`` shape (2,) (or broadcastable to
    (..., 2)); words are 32-bit values held in any integer dtype.  Returns
    uint64 words of shape (..., 4), each below 2^32.
    """
    c = np.asarray(counter, dtype=np.uint64) & _MASK
    k = np.asarray(key, dtype=np.uint64) & _MASK
    c0, c1, c2, c3 = (c[..., i] for i in range(4))
    k0, k1 = k[..., 0], k[..., 1]
    for i in range(rounds):
        if i:
            k0 = (k0 + _W0) & _MASK
            k1 = (k1 + _W1) & _MASK
        p0 = _M0 * c0
        p1 = _M1 * c2
        c0, c1, c2, c3 = (
            (p1 >> _SHIFT) ^ c1 ^ k0,
            p1 & _MASK,
            (p0 >> _SHIFT) ^ c3 ^ k1,
            p0 & _MASK,
        )
    return np.stack(np.broadcast_arrays(c0, c1, c2, c3), axis=-1)


def seed_key(seed):
    """Split a 64-bit seed into the two key words."""
    s = int(seed)
    if not 0 <= s < 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    return np.array([s & 0xFFFFFFFF, s >> 32], dtype=np.uint64)


def _to_double(a, b):
    # 53-bit uniform in [0, 1) from two 32-bit words
    return ((a >> np.uint64(5)).astype(np.float64) * 67108864.0
            + (b >> np.uint64(6)).astype(np.float64)) / 9007199254740992.0


class CounterRNG:
    """Uniforms addressed by ``(path, event, slot)`` under a fixed seed.

    ``stream`` separates independent uses of the same seed (for instance the
    two samples of a two-sample test).
    """

    def __init__(self, seed, stream=0):
        self.seed = int(seed)
        self.stream = int(stream)
        if not 0 <= self.stream < 2**24:
            raise ValueError("stream must lie in [0, 2^24)")
        self._key = seed_key(seed)

    def uniforms(self, paths, events, n_slots):
        """Uniforms of shape ``(len(paths), n_slots)`` for the given event indices."""
        paths = np.asarray(paths, dtype=np.uint64).reshape(-1)
        events = np.broadcast_to(np.asarray(events, dtype=np.uint64), paths.shape)
        n_blocks = (n_slots + 1) // 2
        if n_blocks > 256:
            raise ValueError("at most 512 slots per event")
        if events.size and int(events.max()) >= 2**32:
            raise ValueError("event index exceeds 32 bits")
        ctr = np.empty((paths.size, n_blocks, 4), dtype=np.uint64)
        ctr[..., 0] = (paths & _MASK)[:, None]
        ctr[..., 1] = (paths >> _SHIFT)[:, None]
        ctr[..., 2] = (events & _MASK)[:, None]
        blocks = np.arange(n_blocks, dtype=np.uint64)
        ctr[..., 3] = (np.uint64(self.stream) << np.uint64(8)) | blocks[None, :]
        w = philox4x32(ctr, self._key)
        u = np.empty((paths.size, 2 * n_blocks))
        u[:, 0::2] = _to_double(w[..., 0], w[..., 1])
        u[:, 1::2] = _to_double(w[..., 2], w[..., 3])
        return u[:, :n_slots]
