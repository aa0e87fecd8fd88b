"""Counter-based random streams.

Every draw made by the simulator is addressed by
``(master_seed, tag, step, position)``.  The Philox key holds the master seed
and the purpose tag, the counter holds the step index, so a stream can be
rebuilt for any step without replaying earlier ones.  Within one step the
draws for device ``k`` occupy positions ``k * per_device .. (k+1) * per_device - 1``,
which keeps a device's draws independent of every other device and of the
order in which devices are processed.
"""

from __future__ import annotations

import numpy as np

BATCH = 1
PARTICIPANTS = 2
PROBE = 3
CELL = 4

_MASK64 = (1 << 64) - 1


def stream(master_seed: int, tag: int, step: int) -> np.random.Generator:
    """Generator for one ``(master_seed, tag, step)`` address."""
    key = np.array([int(master_seed) & _MASK64, int(tag) & _MASK64], dtype=np.uint64)
    counter = np.array([0, 0, int(step) & _MASK64, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def uniforms(master_seed: int, tag: int, step: int, count: int) -> np.ndarray:
    return stream(master_seed, tag, step).random(count)


def batch_offsets(master_seed: int, step: int, sizes: np.ndarray, batch_size: int) -> np.ndarray:
    """Local sample positions, shape ``(len(sizes), batch_size)``, drawn uniformly with replacement."""
    sizes = np.asarray(sizes)
    u = uniforms(master_seed, BATCH, step, sizes.size * batch_size).reshape(sizes.size, batch_size)
    local = (u * sizes[:, None]).astype(np.int64)
    # u < 1 always, but guard against rounding up at the top of the range.
    return np.minimum(local, sizes[:, None] - 1)


def derive_seed(master_seed: int, *path: int) -> int:
    """Deterministic 64-bit child seed for a sweep cell or sub-experiment."""
    ss = np.random.SeedSequence([int(master_seed) & _MASK64, *[int(p) for p in path]])
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return (int(hi) << 32) | int(lo)
