"""Deterministic standard-normal draws.

The noise path of a run is a pure function of its seed:

* uniforms come from numpy's Philox4x32-10 counter-based generator keyed by the
  seed, taken as 53-bit integers ``k`` and mapped to ``(k + 0.5) / 2**53``
  (never exactly 0 or 1);
* each uniform is turned into a normal by the inverse normal CDF
  (``scipy.special.ndtri``).

One draw is consumed per timestep, independent of the number of funds.  Draw
sequences can be dumped to / loaded from text files (one float per line) so
that other implementations can replay exactly the same noise.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from scipy.special import ndtri

_SCALE = 2.0**-53


def uniforms(seed: int, n: int) -> np.ndarray:
    gen = np.random.Generator(np.random.Philox(key=seed))
    k = gen.integers(0, 2**53, size=n, dtype=np.uint64)
    return (k.astype(np.float64) + 0.5) * _SCALE


def chi_series(seed: int, n: int) -> np.ndarray:
    """The first ``n`` standard-normal draws for ``seed``."""
    return ndtri(uniforms(seed, n))


def save_chi(path: str | os.PathLike, chi: np.ndarray) -> None:
    with open(path, "w") as fh:
        for x in chi:
            fh.write(f"{float(x):.17g}\n")


def load_chi(path: str | os.PathLike) -> np.ndarray:
    text = Path(path).read_text().split()
    chi = np.array([float(x) for x in text], dtype=np.float64)
    if not np.all(np.isfinite(chi)):
        raise ValueError(f"{path}: non-finite draw")
    return chi
