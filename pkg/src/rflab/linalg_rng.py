"""Deterministic randomness and the small vector utilities everything else shares.

Randomness is addressed, never ambient: every consumer receives an RngStream
built from (base_seed, stream_id). Philox is counter-based, so distinct ids give
independent streams and reconstructing any stream is O(1). Two RngStream objects
constructed with the same pair replay bit-identical sequences, which is what the
end-to-end determinism guarantees (fixed seeds => byte-identical outputs,
independent of worker count) rest on.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One splitmix64 step: bijective 64-bit finalizer, used to derive stream ids."""
    x = (x + _GOLDEN) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


class RngStream:
    """A named, replayable randomness source keyed by (base_seed, stream_id).

    The key goes straight into the Philox counter-based generator, so streams
    with distinct ids never overlap and creation order is irrelevant.
    """

    def __init__(self, base_seed: int, stream_id: int = 0):
        base_seed = int(base_seed)
        stream_id = int(stream_id)
        if not (0 <= base_seed <= _MASK64 and 0 <= stream_id <= _MASK64):
            raise ValueError("base_seed and stream_id must fit in unsigned 64 bits")
        self.base_seed = base_seed
        self.stream_id = stream_id
        key = np.array([base_seed, stream_id], dtype=np.uint64)
        self.gen = np.random.Generator(np.random.Philox(key=key))

    def derive(self, tag: int) -> "RngStream":
        """Fresh child stream; a pure function of (stream_id, tag), never of draw state."""
        return RngStream(self.base_seed, splitmix64(self.stream_id ^ splitmix64(int(tag))))

    def __repr__(self) -> str:  # pragma: no cover
        return f"RngStream(base_seed={self.base_seed}, stream_id={self.stream_id})"


def gaussian_sample(rng: RngStream, mean, std: float, n: int | None = None) -> np.ndarray:
    """Draw N(mean, std^2 I). Returns (d,) when n is None, else (n, d).

    std = 0 is the degenerate case and returns copies of mean without touching
    the stream state beyond the normal draw it skips.
    """
    mean = np.asarray(mean, dtype=np.float64)
    if mean.ndim != 1:
        raise ValueError("mean must be a 1-D vector")
    if not np.isfinite(mean).all():
        raise ValueError("mean has non-finite entries")
    if not (std >= 0 and np.isfinite(std)):
        raise ValueError("std must be nonnegative and finite")
    shape = (mean.size,) if n is None else (int(n), mean.size)
    if std == 0:
        return np.broadcast_to(mean, shape).copy()
    return mean + std * rng.gen.standard_normal(shape)


def l1_project_row(w, radius: float) -> np.ndarray:
    """Euclidean projection of w onto the l1 ball of the given radius.

    Sort-and-threshold, O(m log m): find the largest rho with
    u_rho - (cumsum(u)_rho - radius)/rho > 0 over the sorted magnitudes u,
    then soft-threshold at tau = (cumsum(u)_rho - radius)/rho. Vectors already
    inside the ball come back unchanged (as a copy). Deterministic under ties.
    """
    if not (radius > 0 and np.isfinite(radius)):
        raise ValueError("radius must be positive and finite")
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1:
        raise ValueError("l1_project_row expects a 1-D vector")
    if not np.isfinite(w).all():
        raise ValueError("cannot project a vector with non-finite entries")
    a = np.abs(w)
    if a.sum() <= radius:
        return w.copy()
    u = np.sort(a)[::-1]
    css = np.cumsum(u)
    ks = np.arange(1, u.size + 1, dtype=np.float64)
    rho = np.nonzero(u - (css - radius) / ks > 0)[0][-1]
    tau = (css[rho] - radius) / (rho + 1.0)
    return np.sign(w) * np.maximum(a - tau, 0.0)


def project_rows(mat, radius: float) -> np.ndarray:
    """Row-wise l1 projection of a matrix; returns a new array."""
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2:
        raise ValueError("project_rows expects a matrix")
    out = np.empty_like(mat)
    for i in range(mat.shape[0]):
        out[i] = l1_project_row(mat[i], radius)
    return out


def assert_all_finite(name: str, arr) -> np.ndarray:
    """Validation helper: reject NaN/Inf early instead of letting them propagate."""
    arr = np.asarray(arr, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite entries")
    return arr
