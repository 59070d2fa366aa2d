"""Counter-based uniforms: draw ``i`` of block ``b`` depends only on (seed, b, i)."""
from __future__ import annotations

import numpy as np


def uniforms(seed: int, block: int, n: int) -> np.ndarray:
    """``n`` uniforms on [0, 1) from the Philox stream of ``seed`` at counter block ``block``.

    Element ``i`` is the same whatever ``n`` is, so path ``i`` of an ensemble
    does not depend on how many paths are drawn.
    """
    bg = np.random.Philox(key=int(seed) & ((1 << 64) - 1), counter=[0, int(block), 0, 0])
    return np.random.Generator(bg).random(n)
