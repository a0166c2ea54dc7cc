"""Named random substreams derived from one global seed.

Each consumer (parameter init, per-epoch shuffle, synthetic vocab) gets its
own generator keyed by a string name hashed with sha256, so adding or
removing one parameter never reorders anyone else's draws.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    words = struct.unpack("<4I", digest[:16])
    return np.random.default_rng(np.random.SeedSequence([int(seed)] + list(words)))
