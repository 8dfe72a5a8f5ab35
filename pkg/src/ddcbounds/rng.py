"""Counter-based random streams.

Every random quantity in the package is a pure function of (seed, identifiers)
through a Philox keyed generator: the stream for a given purpose does not
depend on how many other streams were drawn before it, which makes results
identical across process counts and evaluation order.
"""

from __future__ import annotations

import numpy as np

# Second key word, fixed so that streams differ from a bare Philox(seed).
_KEY_PAD = 0x9E3779B97F4A7C15

# Stream tags (counter word 3).  One tag per independent purpose.
STREAM_DRAWS = 1  # next-state uniforms for Bellman integration
STREAM_SHOCKS = 2  # utility shocks along a simulated path
STREAM_TRANSITIONS = 3  # transition uniforms along a simulated path
STREAM_REPLICATION = 4  # per-replication seed derivation

_U64 = np.uint64
_MASK = (1 << 64) - 1


def _float_bits(x: float) -> int:
    """Bit pattern of a float64, with -0.0 canonicalised to +0.0."""
    x = float(x)
    if x == 0.0:
        x = 0.0
    return int(np.float64(x).view(np.uint64))


def stream(seed: int, w1: int = 0, w2: int = 0, tag: int = 0) -> np.random.Generator:
    """A generator whose output depends only on (seed, w1, w2, tag).

    The identifiers sit in the high counter words; the low word is left free
    for the draw index, so streams never collide however many values are
    drawn from each.
    """
    key = np.array([int(seed) & _MASK, _KEY_PAD], dtype=_U64)
    counter = np.array([0, int(w1) & _MASK, int(w2) & _MASK, int(tag) & _MASK], dtype=_U64)
    return np.random.Generator(np.random.Philox(counter=counter, key=key))


def state_uniforms(seed: int, state: float, choice: int, n: int) -> np.ndarray:
    """The n uniforms attached to one (state, choice) pair.

    Keyed by the state's bit pattern rather than a grid index, so the same
    state receives the same draws on any grid and in any evaluation order.
    """
    return stream(seed, _float_bits(state), choice, STREAM_DRAWS).random(n)


def path_stream(seed: int, tag: int) -> np.random.Generator:
    """Sequential stream for an inherently ordered simulation path."""
    return stream(seed, 0, 0, tag)


def replication_seed(master_seed: int, rep_index: int) -> int:
    """Derive an independent child seed for one Monte Carlo replication."""
    g = stream(master_seed, rep_index, 0, STREAM_REPLICATION)
    return int(g.integers(0, 2**63, dtype=np.int64))
