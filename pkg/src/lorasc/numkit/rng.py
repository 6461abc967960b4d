"""Seeded, checkpointable random streams.

Built on numpy's Philox generator, a counter-based design: a stream is fully
described by (seed, stream id, counter position), so independent substreams
derive from one run seed without shared mutable state, and a stream can be
serialized mid-run and resumed bit-exactly.
"""

from __future__ import annotations

import numpy as np

from ..errors import ArgumentError

# Fixed substream ids. Every consumer of a run seed draws from its own
# stream, so e.g. noise sampling never shifts the batch-order stream.
STREAMS = {
    "root": 0,
    "model-init": 1,
    "pretrain": 2,
    "adapter-init": 3,
    "noise": 4,
    "batch-order": 5,
    "datagen": 6,
    "corrupt": 7,
    "teacher": 8,
    "examples": 9,
    "label-noise": 10,
}

_MASK64 = (1 << 64) - 1
# Philox serialized layout: counter[4], key[2], buffer[4], buffer_pos,
# has_uint32, uinteger -> 13 words of uint64.
STATE_WORDS = 13


def substream_id(stream: str, index: int) -> int:
    """Indexed substream id; the +1 offset keeps every substream id above
    the named-stream range."""
    if index < 0 or index >= (1 << 32):
        raise ArgumentError(f"substream index {index} outside [0, 2^32)")
    return ((STREAMS[stream] + 1) << 32) | index


class RngState:
    """One deterministic random stream.

    Identical seed + identical call sequence yields identical bits on every
    platform; numpy pins the Philox output and the uniform/normal mappings.
    """

    def __init__(self, seed: int, stream="root"):
        self.seed = int(seed)
        self.stream = stream
        sid = STREAMS[stream] if isinstance(stream, str) else int(stream)
        key = np.array([self.seed & _MASK64, sid & _MASK64], dtype=np.uint64)
        self._bitgen = np.random.Philox(key=key)
        self._gen = np.random.Generator(self._bitgen)

    def split(self, stream) -> "RngState":
        """Independent substream of the same seed."""
        return RngState(self.seed, stream)

    @property
    def position(self) -> tuple[int, ...]:
        """Current 256-bit Philox counter, for diagnostics."""
        return tuple(int(w) for w in self._bitgen.state["state"]["counter"])

    # -- sampling ------------------------------------------------------

    def uniform(self, size, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        """Raw float64 draws in [lo, hi)."""
        if lo > hi:
            raise ArgumentError(f"uniform bounds reversed: lo={lo} > hi={hi}")
        return self._gen.uniform(lo, hi, size=size)

    def normal(self, size, std: float = 1.0) -> np.ndarray:
        return self._gen.standard_normal(size=size) * std

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, lo: int, hi: int, size) -> np.ndarray:
        return self._gen.integers(lo, hi, size=size)

    # -- checkpointing -------------------------------------------------

    def state_array(self) -> np.ndarray:
        """Full generator state as 13 uint64 words (bit-exact resume)."""
        st = self._bitgen.state
        words = np.empty(STATE_WORDS, dtype=np.uint64)
        words[0:4] = st["state"]["counter"]
        words[4:6] = st["state"]["key"]
        words[6:10] = st["buffer"]
        words[10] = st["buffer_pos"]
        words[11] = st["has_uint32"]
        words[12] = st["uinteger"]
        return words

    def set_state_array(self, words: np.ndarray) -> None:
        words = np.asarray(words, dtype=np.uint64)
        if words.shape != (STATE_WORDS,):
            raise ArgumentError(f"rng state needs {STATE_WORDS} words, got shape {words.shape}")
        st = self._bitgen.state
        st["state"]["counter"] = words[0:4].copy()
        st["state"]["key"] = words[4:6].copy()
        st["buffer"] = words[6:10].copy()
        st["buffer_pos"] = int(words[10])
        st["has_uint32"] = int(words[11])
        st["uinteger"] = int(words[12])
        self._bitgen.state = st
