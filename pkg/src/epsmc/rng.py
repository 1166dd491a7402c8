"""Counter-based splittable random streams.

Every history h of a run with seed s gets its own splitmix64 stream whose
start state depends only on (s, h).  Histories can therefore be sharded over
any number of workers, in any order, and reproduce bit-identically.

All arithmetic is uint64 with wraparound.  The same expressions run under
numba (scalars) and vectorized numpy (arrays), giving identical bits, so the
numba and numpy Monte Carlo engines are interchangeable.
"""

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
SPLIT = np.uint64(0xC2B2AE3D27D4EB4F)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)
ONE = np.uint64(1)
R30 = np.uint64(30)
R27 = np.uint64(27)
R31 = np.uint64(31)
R11 = np.uint64(11)
INV53 = 1.0 / 9007199254740992.0  # 2**-53


def mix64(z):
    """splitmix64 finalizer; works on uint64 scalars and arrays alike."""
    z = (z ^ (z >> R30)) * MIX1
    z = (z ^ (z >> R27)) * MIX2
    return z ^ (z >> R31)


def stream_state(seed, history):
    """Initial stream state for (seed, history index)."""
    base = mix64(np.uint64(seed) * GOLDEN + ONE)
    return mix64(base + np.uint64(history) * SPLIT)


def next_uniform(state):
    """Advance one draw: returns (new_state, uniform in [0, 1))."""
    state = state + GOLDEN
    z = mix64(state)
    return state, float(z >> R11) * INV53


def uniforms(states):
    """Vectorized draw: advances every stream once.

    Returns (new_states, u) where u is float64 in [0, 1), matching
    next_uniform bit for bit per element.
    """
    states = states + GOLDEN
    z = mix64(states)
    return states, (z >> R11).astype(np.float64) * INV53
