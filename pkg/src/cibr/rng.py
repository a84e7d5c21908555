"""Deterministic, label-addressed random streams.

All randomness in the package flows through two primitives:

* `stream(seed, *labels)` maps a root seed plus a tuple of purpose labels
  ("init", "data", "perm", ...) to an independent counter-based Philox
  generator. Streams are pure functions of their arguments, so draw order
  elsewhere in the program can never shift what a given stream produces.
* `SampleStreams(seed, *labels)` carves one keyed Philox cipher into
  per-index streams by giving index i the counter block starting at
  i * 2**128. Sample i's draws are a pure function of (seed, labels, i),
  which is what lets dataset generation parallelize across samples while
  staying identical to sequential generation.
"""

import hashlib

import numpy as np


def _label_entropy(label) -> int:
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError(f"stream labels must be non-negative, got {label}")
        return int(label)
    digest = hashlib.sha256(str(label).encode("utf-8")).digest()
    return int.from_bytes(digest[:16], "little")


def _check_seed(seed: int) -> int:
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return int(seed)


def stream(seed: int, *labels) -> np.random.Generator:
    """Return the Philox generator addressed by (seed, labels)."""
    entropy = [_check_seed(seed)] + [_label_entropy(lb) for lb in labels]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, *labels) -> int:
    """Collapse (seed, labels) to a fresh 63-bit root seed for sub-specs."""
    h = hashlib.sha256(repr((_check_seed(seed),) + tuple(str(lb) for lb in labels)).encode())
    return int.from_bytes(h.digest()[:8], "little") >> 1


class SampleStreams:
    """Per-index generators sharing one cipher key.

    generator(i) re-aims the underlying bit generator at block i, so the
    handle it returns is only valid until the next generator() call; draw
    from it immediately.
    """

    def __init__(self, seed: int, *labels):
        payload = repr((_check_seed(seed),) + tuple(str(lb) for lb in labels)).encode()
        key = int.from_bytes(hashlib.sha256(payload).digest()[:16], "little")
        self._bitgen = np.random.Philox(key=key)
        self._template = self._bitgen.state

    def generator(self, index: int) -> np.random.Generator:
        if index < 0:
            raise ValueError(f"sample index must be non-negative, got {index}")
        state = dict(self._template)
        counter = np.zeros(4, dtype=np.uint64)
        counter[2] = index
        state["state"] = {"counter": counter, "key": self._template["state"]["key"]}
        self._bitgen.state = state
        return np.random.Generator(self._bitgen)
