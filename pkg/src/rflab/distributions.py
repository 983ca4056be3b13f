"""Source/target distributions, independent couplings along the linear path,
and the displacement-truncation accounting.

The coupling is always the independent product pi0 x pi1 with t ~ Uniform[0,1];
batches are stored column-wise (arrays over the batch index) because all
consumers are vectorized, but they behave like sequences of coupled samples.
Each DistributionSpec counts how many samples it has handed out; reflow's
data-isolation guarantee is checked against that counter.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .linalg_rng import RngStream, assert_all_finite


@dataclasses.dataclass
class DistributionSpec:
    """Declarative distribution: gaussian | gaussian_mixture | empirical.

    subgaussian_sigma is the directional tail parameter used by the truncation
    machinery; when omitted a conservative default is derived from the declared
    parameters (exact for a single Gaussian, a documented heuristic otherwise).
    """

    kind: str
    dim: int
    mean: np.ndarray | None = None
    std: float | None = None
    components: list[tuple[float, np.ndarray, float]] | None = None
    points: np.ndarray | None = None
    subgaussian_sigma: float | None = None
    draws: int = dataclasses.field(default=0, compare=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.kind == "gaussian":
            if self.mean is None or self.std is None:
                raise ValueError("gaussian spec needs mean and std")
            self.mean = assert_all_finite("mean", self.mean).reshape(self.dim)
            if not (self.std > 0):
                raise ValueError("std must be > 0")
            if self.subgaussian_sigma is None:
                self.subgaussian_sigma = float(self.std)
        elif self.kind == "gaussian_mixture":
            if not self.components:
                raise ValueError("gaussian_mixture spec needs components")
            comps = []
            for w, m, s in self.components:
                m = assert_all_finite("component mean", m).reshape(self.dim)
                if not (w > 0):
                    raise ValueError("mixture weights must be positive")
                if not (s > 0):
                    raise ValueError("component std must be > 0")
                comps.append((float(w), m, float(s)))
            total = sum(w for w, _, _ in comps)
            if abs(total - 1.0) > 1e-12:
                raise ValueError("mixture weights must sum to 1 within 1e-12")
            self.components = comps
            if self.subgaussian_sigma is None:
                # bounded mean shift + per-component gaussian tail; conservative
                mix_mean = self.mean_vector()
                dev = max(float(np.linalg.norm(m - mix_mean)) for _, m, _ in comps)
                smax = max(s for _, _, s in comps)
                self.subgaussian_sigma = math.sqrt(smax * smax + dev * dev)
        elif self.kind == "empirical":
            if self.points is None:
                raise ValueError("empirical spec needs points")
            pts = assert_all_finite("points", self.points)
            pts = pts.reshape(-1, self.dim)
            if pts.shape[0] < 1:
                raise ValueError("empirical spec needs at least one point")
            self.points = pts
            if self.subgaussian_sigma is None:
                center = pts.mean(axis=0)
                dev = float(np.max(np.linalg.norm(pts - center, axis=1)))
                self.subgaussian_sigma = max(dev, 1e-12)
        else:
            raise ValueError(f"unknown distribution kind: {self.kind!r}")
        if not (self.subgaussian_sigma > 0):
            raise ValueError("subgaussian_sigma must be > 0")

    def mean_vector(self) -> np.ndarray:
        if self.kind == "gaussian":
            return self.mean.copy()
        if self.kind == "gaussian_mixture":
            out = np.zeros(self.dim)
            for w, m, _ in self.components:
                out += w * m
            return out
        return self.points.mean(axis=0)

    def sample(self, rng: RngStream, n: int) -> np.ndarray:
        """Draw n i.i.d. points, shape (n, dim); advances the draw counter."""
        if n < 1:
            raise ValueError("n must be >= 1")
        n = int(n)
        if self.kind == "gaussian":
            out = self.mean + self.std * rng.gen.standard_normal((n, self.dim))
        elif self.kind == "gaussian_mixture":
            weights = np.array([w for w, _, _ in self.components])
            idx = rng.gen.choice(len(self.components), size=n, p=weights)
            z = rng.gen.standard_normal((n, self.dim))
            means = np.stack([m for _, m, _ in self.components])
            stds = np.array([s for _, _, s in self.components])
            out = means[idx] + stds[idx, None] * z
        else:
            idx = rng.gen.integers(0, self.points.shape[0], size=n)
            out = self.points[idx].copy()
        self.draws += n
        return out

    def to_json(self) -> dict:
        if self.kind == "gaussian":
            body = {"kind": "gaussian", "mean": self.mean.tolist(), "std": self.std}
        elif self.kind == "gaussian_mixture":
            body = {
                "kind": "gaussian_mixture",
                "components": [
                    {"weight": w, "mean": m.tolist(), "std": s}
                    for w, m, s in self.components
                ],
            }
        else:
            body = {"kind": "empirical", "points": self.points.tolist()}
        body["subgaussian_sigma"] = self.subgaussian_sigma
        return body

    @classmethod
    def from_json(cls, obj: dict) -> "DistributionSpec":
        kind = obj.get("kind")
        sigma = obj.get("subgaussian_sigma")
        if kind == "gaussian":
            mean = np.asarray(obj["mean"], dtype=np.float64).reshape(-1)
            return cls(kind, mean.size, mean=mean, std=float(obj["std"]),
                       subgaussian_sigma=sigma)
        if kind == "gaussian_mixture":
            comps = [
                (float(c["weight"]), np.asarray(c["mean"], dtype=np.float64).reshape(-1),
                 float(c["std"]))
                for c in obj["components"]
            ]
            return cls(kind, comps[0][1].size, components=comps, subgaussian_sigma=sigma)
        if kind == "empirical":
            pts = np.asarray(obj["points"], dtype=np.float64)
            pts = pts.reshape(pts.shape[0], -1)
            return cls(kind, pts.shape[1], points=pts, subgaussian_sigma=sigma)
        raise ValueError(f"unknown distribution kind: {kind!r}")


def interpolate(x0: np.ndarray, x1: np.ndarray, t) -> np.ndarray:
    """Linear path point (1-t)*x0 + t*x1; exact at the endpoints t=0 and t=1."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0:
        return (1.0 - t) * x0 + t * x1
    return (1.0 - t)[:, None] * x0 + t[:, None] * x1


@dataclasses.dataclass
class CoupledBatch:
    """Batch of coupled samples: arrays indexed by sample.

    Invariants: xt = (1-t) x0 + t x1 and disp = x1 - x0, row by row.
    """

    x0: np.ndarray
    x1: np.ndarray
    t: np.ndarray
    xt: np.ndarray
    disp: np.ndarray

    def __len__(self) -> int:
        return self.x0.shape[0]

    @property
    def dim(self) -> int:
        return self.x0.shape[1]

    def take(self, idx) -> "CoupledBatch":
        return CoupledBatch(self.x0[idx], self.x1[idx], self.t[idx],
                            self.xt[idx], self.disp[idx])

    @classmethod
    def from_pairs(cls, x0: np.ndarray, x1: np.ndarray, t: np.ndarray) -> "CoupledBatch":
        x0 = np.asarray(x0, dtype=np.float64)
        x1 = np.asarray(x1, dtype=np.float64)
        t = np.asarray(t, dtype=np.float64).reshape(-1)
        if x0.shape != x1.shape or x0.shape[0] != t.size:
            raise ValueError("x0, x1, t shapes disagree")
        return cls(x0, x1, t, interpolate(x0, x1, t), x1 - x0)


def draw_coupled(rng: RngStream, pi0: DistributionSpec, pi1: DistributionSpec,
                 n: int) -> CoupledBatch:
    """n independent triples: x0 ~ pi0, x1 ~ pi1 (independent), t ~ Uniform[0,1]."""
    if n < 1:
        raise ValueError("n must be >= 1")
    x0 = pi0.sample(rng, n)
    x1 = pi1.sample(rng, n)
    t = rng.gen.uniform(0.0, 1.0, size=n)
    return CoupledBatch.from_pairs(x0, x1, t)


def couple_given(rng: RngStream, x0: np.ndarray, x1: np.ndarray) -> CoupledBatch:
    """Coupled batch from pre-paired endpoints (reflow's synthetic coupling)."""
    x0 = np.asarray(x0, dtype=np.float64)
    t = rng.gen.uniform(0.0, 1.0, size=x0.shape[0])
    return CoupledBatch.from_pairs(x0, x1, t)


def truncation_level(sigma: float, n: int, C: float = 2.0, c: float = 0.5) -> float:
    """Displacement cutoff M = sigma * sqrt((1/c) * log(2*C*n^2)).

    By construction C*exp(-c*M^2/sigma^2) = 1/(2 n^2) regardless of (C, c).
    """
    if not (sigma > 0):
        raise ValueError("sigma must be > 0")
    if n < 2:
        raise ValueError("n must be >= 2")
    if not (C > 0 and c > 0):
        raise ValueError("C and c must be > 0")
    return sigma * math.sqrt(math.log(2.0 * C * n * n) / c)


def pair_subgaussian_sigma(pi0: DistributionSpec, pi1: DistributionSpec) -> float:
    """Tail parameter for the displacement X1 - X0 of an independent coupling."""
    return math.sqrt(pi0.subgaussian_sigma ** 2 + pi1.subgaussian_sigma ** 2)


def tail_mass_outside(pi0: DistributionSpec, pi1: DistributionSpec, M: float,
                      n_mc: int, rng: RngStream) -> tuple[float, float]:
    """Monte-Carlo estimate of P(||X1 - X0|| > M) with its standard error."""
    if not (M > 0):
        raise ValueError("M must be > 0")
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    x0 = pi0.sample(rng, n_mc)
    x1 = pi1.sample(rng, n_mc)
    hits = (np.linalg.norm(x1 - x0, axis=1) > M).astype(np.float64)
    p = float(hits.mean())
    stderr = math.sqrt(max(p * (1.0 - p), 0.0) / n_mc)
    return p, stderr
