"""Dense numeric kernels shared by every other module.

Tensors are float32 numpy arrays in row-major (C) order; statistics and
reductions accumulate in float64.  All randomness flows through PCG64
(`numpy.random.Generator`), whose stream is documented and identical
across platforms for a given seed.  A per-run master seed is fanned out
to per-purpose child seeds so that dropout, shuffling and initialization
are independently reproducible.
"""

from __future__ import annotations

import zlib

import numpy as np

DTYPE = np.float32


class NonFiniteError(ValueError):
    """An array that must be finite contains NaN or Inf."""


class EmptyInputError(ValueError):
    """A reduction was asked to run over an empty input."""


def require_finite(a: np.ndarray, name: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"{name} contains non-finite values")
    return a


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and convert to a finite 2-D float32 array."""
    m = np.ascontiguousarray(a, dtype=DTYPE)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    require_finite(m, name)
    return m


def as_vector(a, name: str = "vector") -> np.ndarray:
    v = np.ascontiguousarray(a, dtype=DTYPE)
    if v.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {v.shape}")
    require_finite(v, name)
    return v


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Row-wise softmax with max-subtraction for stability.

    Returns float32 probabilities that are nonnegative and sum to 1
    (within float32 rounding) along `axis`.
    """
    z = np.asarray(logits, dtype=DTYPE)
    if z.size == 0:
        raise EmptyInputError("softmax over empty input")
    require_finite(z, "logits")
    shifted = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(shifted, dtype=DTYPE)
    return e / np.sum(e, axis=axis, keepdims=True, dtype=DTYPE)


# --- seeded randomness -------------------------------------------------

def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; identical seed gives an identical stream everywhere."""
    return np.random.Generator(np.random.PCG64(seed))


def child_seed(master: int, purpose: str, index: int = 0) -> int:
    """Derive a stable 64-bit child seed from (master, purpose, index).

    Uses SeedSequence so children with different purposes or indices are
    statistically independent.  The purpose string is hashed with CRC-32,
    which is stable across platforms and Python versions.
    """
    tag = zlib.crc32(purpose.encode("utf-8"))
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=(tag, int(index)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def child_rng(master: int, purpose: str, index: int = 0) -> np.random.Generator:
    return make_rng(child_seed(master, purpose, index))


def seeded_shuffle(n: int, rng: np.random.Generator) -> np.ndarray:
    """Deterministic permutation of 0..n-1 drawn from `rng`."""
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    return rng.permutation(n)
