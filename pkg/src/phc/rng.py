"""Counter-based random streams.

Every random draw in the library comes from a Philox generator keyed by a
hash of a structured label, e.g. ``(seed, "contrib", layer, i)``. Streams
are therefore reproducible and independent of construction or execution
order, and resuming a run never requires serializing generator state.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_rng(*key_parts) -> np.random.Generator:
    """Return a fresh generator keyed by the given label parts."""
    label = "\x1f".join(str(p) for p in key_parts)
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    key = int.from_bytes(digest[:16], "little")
    return np.random.Generator(np.random.Philox(key=key))
