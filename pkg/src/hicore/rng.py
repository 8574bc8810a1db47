"""Deterministic splitmix64 streams.

Both kernel backends implement the identical integer recurrence, so any
stream state can be handed to either backend and advance the same way.
"""
from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """splitmix64 finalizer; maps 64-bit ints to well-scrambled 64-bit ints."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(*parts: int | str) -> int:
    """Fold integers/strings into one 64-bit seed, order-sensitive."""
    h = 0x243F6A8885A308D3
    for p in parts:
        if isinstance(p, str):
            for b in p.encode("utf-8"):
                h = mix64(h ^ b)
        else:
            h = mix64(h ^ (int(p) & _MASK))
    return h


class SplitMix64:
    """Tiny deterministic generator over a shareable uint64 state cell.

    The state lives in a 1-element uint64 array so compiled kernels can
    advance the same stream in place.
    """

    def __init__(self, seed: int):
        self.state = np.array([seed & _MASK], dtype=np.uint64)

    def next_u64(self) -> int:
        s = (int(self.state[0]) + _GAMMA) & _MASK
        self.state[0] = s
        return mix64(s)

    def uniform(self) -> float:
        """Uniform double in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def randrange(self, n: int) -> int:
        if n <= 0:
            raise ValueError("randrange needs n >= 1")
        return self.next_u64() % n

    def choice(self, seq):
        return seq[self.randrange(len(seq))]

    def shuffle(self, seq: list) -> None:
        for i in range(len(seq) - 1, 0, -1):
            j = self.randrange(i + 1)
            seq[i], seq[j] = seq[j], seq[i]
