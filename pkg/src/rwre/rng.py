"""Counter-based random numbers keyed by integer words.

Every draw is a pure function of ``(key, word_1, ..., word_k)``, so site
values, resamples and per-path streams do not depend on evaluation order
or batching.  The mixer is the SplitMix64 finalizer applied to a chained
combination of the words.
"""
import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / float(1 << 53)

MASK64 = (1 << 64) - 1


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _as_u64(w):
    w = np.asarray(w)
    if w.dtype == np.uint64:
        return w
    if np.issubdtype(w.dtype, np.integer):
        return w.astype(np.int64).view(np.uint64)
    raise TypeError(f"counter words must be integers, got {w.dtype}")


def hash_words(key, *words):
    """Return uint64 hashes of ``key`` chained with broadcastable integer words."""
    with np.errstate(over="ignore"):
        h = _mix(np.atleast_1d(np.uint64(int(key) & MASK64)) + _GOLDEN)
        for w in words:
            h = _mix(h ^ _mix(_as_u64(w) + _GOLDEN))
    return h


def uniform(key, *words):
    """Uniform doubles in the open interval (0, 1), one per broadcast element."""
    h = hash_words(key, *words)
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * _INV53


def derive_key(key, *labels):
    """Derive a child key from a parent key and integer labels (scalar)."""
    return int(hash_words(key, *[np.int64(l) for l in labels])[0])


def string_label(text: str) -> int:
    """Stable 63-bit integer label for a string (used to separate streams)."""
    h = 1469598103934665603
    for ch in text.encode():
        h = ((h ^ ch) * 1099511628211) & MASK64
    return h >> 1
