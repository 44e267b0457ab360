"""Counter-based, splittable random streams.

Every stochastic consumer gets its own Philox stream keyed by
``(seed, *stream)``. Keys are pure functions of their coordinates, so a
stream for training step ``k`` can be rebuilt after a restart without
replaying steps ``0..k-1``.
"""

from __future__ import annotations

import numpy as np

# stream tags; kept stable because they are part of the reproducibility contract
INIT = 1
STEP = 2
SHUFFLE = 3
SAMPLER = 4
DATA = 5
FEATURES = 6


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))


def rng_state(rng: np.random.Generator) -> dict:
    """JSON-safe snapshot of a generator's state."""
    st = rng.bit_generator.state
    inner = st["state"]
    return {
        "bit_generator": st["bit_generator"],
        "counter": [int(v) for v in inner["counter"]],
        "key": [int(v) for v in inner["key"]],
        "buffer_pos": int(st["buffer_pos"]),
        "buffer": [int(v) for v in st["buffer"]],
        "has_uint32": int(st["has_uint32"]),
        "uinteger": int(st["uinteger"]),
    }


def restore_rng(snapshot: dict) -> np.random.Generator:
    bg = np.random.Philox()
    bg.state = {
        "bit_generator": snapshot["bit_generator"],
        "state": {
            "counter": np.array(snapshot["counter"], dtype=np.uint64),
            "key": np.array(snapshot["key"], dtype=np.uint64),
        },
        "buffer": np.array(snapshot["buffer"], dtype=np.uint64),
        "buffer_pos": snapshot["buffer_pos"],
        "has_uint32": snapshot["has_uint32"],
        "uinteger": snapshot["uinteger"],
    }
    return np.random.Generator(bg)
