"""Ground-truth velocity fields and the two-hypothesis hardness construction.

For independent Gaussian endpoints with equal variances the optimal velocity
is an exact joint-Gaussian regression; for everything else a binned Monte-Carlo
conditional mean serves as the fallback estimator. The hardness side builds the
contaminated-target pair, its t=1/2 posterior velocities (in log-density space,
so the R/sigma >= 8 regime does not underflow), total variation by adaptive
quadrature, and the m-sample testing budget.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
from scipy import integrate

from .linalg_rng import RngStream

_LOG_2PI = math.log(2.0 * math.pi)


@dataclasses.dataclass(frozen=True)
class GaussianPairSpec:
    """Independent endpoints X0 ~ N(mu0, std0^2 I), X1 ~ N(mu1, std1^2 I)."""

    mu0: np.ndarray
    mu1: np.ndarray
    std0: float
    std1: float

    def __post_init__(self):
        mu0 = np.asarray(self.mu0, dtype=np.float64).reshape(-1)
        mu1 = np.asarray(self.mu1, dtype=np.float64).reshape(-1)
        if mu0.size != mu1.size:
            raise ValueError("mu0 and mu1 must have equal dimension")
        if not (self.std0 > 0 and self.std1 > 0):
            raise ValueError("std0 and std1 must be > 0")
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "mu1", mu1)

    @property
    def dim(self) -> int:
        return self.mu0.size

    @property
    def equal_variance(self) -> bool:
        return abs(self.std0 - self.std1) <= 1e-12 * max(self.std0, self.std1)


def vstar_gaussian(spec: GaussianPairSpec, x, t):
    """Exact optimal velocity E[X1 - X0 | X_t = x] for equal variances:

        (mu1 - mu0) + ((2t - 1) / ((1-t)^2 + t^2)) (x - ((1-t) mu0 + t mu1)).

    The variance cancels from the regression coefficient. x may be (d,) or
    (n, d); t a scalar in [0,1] or (n,).
    """
    if not spec.equal_variance:
        raise ValueError("closed form needs std0 = std1; use conditional_mean_mc")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    tb = np.asarray(t, dtype=np.float64)
    if tb.ndim == 0:
        tb = np.full(xb.shape[0], float(tb))
    if np.any(tb < 0.0) or np.any(tb > 1.0):
        raise ValueError("t must lie in [0, 1]")
    coef = (2.0 * tb - 1.0) / ((1.0 - tb) ** 2 + tb ** 2)
    center = (1.0 - tb)[:, None] * spec.mu0 + tb[:, None] * spec.mu1
    out = (spec.mu1 - spec.mu0) + coef[:, None] * (xb - center)
    return out[0] if single else out


def vstar_field(spec: GaussianPairSpec):
    """The closed-form optimum as a field callable(x, t)."""
    return lambda x, t: vstar_gaussian(spec, x, t)


def sample_pair(spec: GaussianPairSpec, rng: RngStream, n: int):
    x0 = spec.mu0 + spec.std0 * rng.gen.standard_normal((n, spec.dim))
    x1 = spec.mu1 + spec.std1 * rng.gen.standard_normal((n, spec.dim))
    return x0, x1


def conditional_mean_mc(spec: GaussianPairSpec, t: float, grid: np.ndarray,
                        n_mc: int, rng: RngStream):
    """Binned Monte-Carlo estimate of E[X1 - X0 | X_t = x] on a 1-D grid.

    Returns (estimates, stderrs, counts) per grid cell. Cells are the nearest-
    grid-point partition, bounded by half a cell beyond the span; draws outside
    are discarded so edge cells do not swallow the tails. The general-variance
    fallback and the test oracle for the closed form.
    """
    if spec.dim != 1:
        raise ValueError("binned estimator is 1-D only")
    grid = np.asarray(grid, dtype=np.float64).reshape(-1)
    if grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be increasing with >= 2 points")
    x0, x1 = sample_pair(spec, rng, n_mc)
    xt = ((1.0 - t) * x0 + t * x1).reshape(-1)
    disp = (x1 - x0).reshape(-1)
    lo = grid[0] - 0.5 * (grid[1] - grid[0])
    hi = grid[-1] + 0.5 * (grid[-1] - grid[-2])
    keep = (xt >= lo) & (xt <= hi)
    xt, disp = xt[keep], disp[keep]
    edges = 0.5 * (grid[1:] + grid[:-1])
    cell = np.searchsorted(edges, xt)
    counts = np.bincount(cell, minlength=grid.size)
    sums = np.bincount(cell, weights=disp, minlength=grid.size)
    sq = np.bincount(cell, weights=disp * disp, minlength=grid.size)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = sums / counts
        var = sq / counts - means ** 2
        stderr = np.sqrt(np.maximum(var, 0.0) / np.maximum(counts, 1))
    return means, stderr, counts


def velocity_l2_error(net, spec: GaussianPairSpec, n_mc: int,
                      rng: RngStream) -> tuple[float, float]:
    """Monte-Carlo estimate (with standard error) of the integrated squared
    velocity error int_0^1 E||net(X_t, t) - v*(X_t, t)||^2 dt."""
    if n_mc < 2:
        raise ValueError("n_mc must be >= 2")
    x0, x1 = sample_pair(spec, rng, n_mc)
    t = rng.gen.uniform(0.0, 1.0, size=n_mc)
    xt = (1.0 - t)[:, None] * x0 + t[:, None] * x1
    gap = np.asarray(net(xt, t)) - vstar_gaussian(spec, xt, t)
    vals = np.sum(gap * gap, axis=1)
    est = float(vals.mean())
    stderr = float(vals.std(ddof=1) / math.sqrt(n_mc))
    return est, stderr


# -- two-hypothesis construction ----------------------------------------------


@dataclasses.dataclass(frozen=True)
class LowerBoundInstance:
    """Source N(0, sigma^2); targets (1-eta) N(0, sigma^2) + eta N(-+R, sigma^2)
    under hypotheses 1/2, with contamination eta = eps^2 sigma^2 / R^2."""

    sigma: float
    R: float
    epsilon: float
    c_interval: float = 1.0

    def __post_init__(self):
        if not (self.sigma > 0):
            raise ValueError("sigma must be > 0")
        if not (self.R >= 8.0 * self.sigma):
            raise ValueError("construction validity range requires R >= 8 sigma")
        if not (0.0 < self.epsilon < 1.0):
            raise ValueError("epsilon must lie in (0, 1)")
        if not (self.c_interval > 0):
            raise ValueError("c_interval must be > 0")
        if not (0.0 < self.eta < 1.0):
            raise ValueError("eta must lie in (0, 1)")

    @property
    def eta(self) -> float:
        return self.epsilon ** 2 * self.sigma ** 2 / self.R ** 2

    def signal_mean(self, hypothesis: int) -> float:
        if hypothesis == 1:
            return -self.R
        if hypothesis == 2:
            return self.R
        raise ValueError("hypothesis must be 1 or 2")

    @property
    def interval(self) -> tuple[float, float]:
        half = self.c_interval * self.sigma
        return (self.R / 2.0 - half, self.R / 2.0 + half)


def _norm_logpdf(x, mean, var):
    return -0.5 * ((x - mean) ** 2 / var + np.log(var) + _LOG_2PI)


def target_pdf(inst: LowerBoundInstance, hypothesis: int, x):
    """Density of the contaminated target pi_1 under the given hypothesis."""
    x = np.asarray(x, dtype=np.float64)
    var = inst.sigma ** 2
    bg = np.exp(_norm_logpdf(x, 0.0, var))
    sig = np.exp(_norm_logpdf(x, inst.signal_mean(hypothesis), var))
    return (1.0 - inst.eta) * bg + inst.eta * sig


def midpoint_pdf(inst: LowerBoundInstance, hypothesis: int, x):
    """Density of Z = X_{1/2} = (X0 + X1)/2: component means halve, variance
    sigma^2/2 either way."""
    x = np.asarray(x, dtype=np.float64)
    var = 0.5 * inst.sigma ** 2
    bg = np.exp(_norm_logpdf(x, 0.0, var))
    sig = np.exp(_norm_logpdf(x, 0.5 * inst.signal_mean(hypothesis), var))
    return (1.0 - inst.eta) * bg + inst.eta * sig


def pi_star_pdf(inst: LowerBoundInstance, x):
    """Reference midpoint density: the even mixture of the two hypotheses."""
    return 0.5 * (midpoint_pdf(inst, 1, x) + midpoint_pdf(inst, 2, x))


def posterior_weights(inst: LowerBoundInstance, hypothesis: int, x):
    """P(component | Z = x) for (background, signal), computed in log space."""
    x = np.asarray(x, dtype=np.float64)
    var = 0.5 * inst.sigma ** 2
    log_bg = math.log1p(-inst.eta) + _norm_logpdf(x, 0.0, var)
    log_sig = math.log(inst.eta) + _norm_logpdf(
        x, 0.5 * inst.signal_mean(hypothesis), var)
    norm = np.logaddexp(log_bg, log_sig)
    return np.exp(log_bg - norm), np.exp(log_sig - norm)


def conditional_x0_mean(inst: LowerBoundInstance, hypothesis: int, x):
    """E[X0 | Z = x]: within each component the regression coefficient is 1 and
    E[X0 | Z = x, comp] = x + (mu0 - mu1)/2; the posterior mixes the shifts."""
    x = np.asarray(x, dtype=np.float64)
    _, w_sig = posterior_weights(inst, hypothesis, x)
    return x - 0.5 * w_sig * inst.signal_mean(hypothesis)


def mixture_posterior_velocity(inst: LowerBoundInstance, hypothesis: int, x):
    """v_i(x, 1/2) = 2 (x - E^{(i)}[X0 | Z = x]) = w_signal(x) * (signal mean)."""
    return 2.0 * (np.asarray(x, dtype=np.float64)
                  - conditional_x0_mean(inst, hypothesis, x))


def tv_distance_mixtures(inst: LowerBoundInstance,
                         abs_tol: float = 1e-8) -> float:
    """TV(pi_1^(1), pi_1^(2)) = 1/2 int |p1 - p2|, by adaptive quadrature.

    The result must not exceed eta (the backgrounds cancel exactly); violation
    beyond quadrature tolerance is raised as an error.
    """
    lo = -inst.R - 12.0 * inst.sigma
    hi = inst.R + 12.0 * inst.sigma
    val, err = integrate.quad(
        lambda x: abs(target_pdf(inst, 1, x) - target_pdf(inst, 2, x)),
        lo, hi, epsabs=abs_tol, limit=400,
        points=[-inst.R, -inst.R / 2, 0.0, inst.R / 2, inst.R])
    if err > 10.0 * abs_tol + 1e-12:
        raise FloatingPointError(f"TV quadrature did not converge (err = {err:.2e})")
    tv = 0.5 * val
    if tv > inst.eta + 1e-8:
        raise FloatingPointError(f"computed TV {tv:.3e} exceeds eta {inst.eta:.3e}")
    return tv


@dataclasses.dataclass(frozen=True)
class SeparationReport:
    interval: tuple[float, float]
    pointwise_min: float      # min |v1 - v2| over the interval grid
    pointwise_max: float
    interval_rms: float       # sqrt of the pi_*-weighted mean of |v1-v2|^2 on I_R
    l2_separation_sq: float   # int |v1 - v2|^2 d pi_{*,1/2} over the whole line


def velocity_separation(inst: LowerBoundInstance, n_grid: int = 2001) -> SeparationReport:
    """Pointwise and pi_*-weighted separation of the two posterior velocities."""
    lo, hi = inst.interval
    grid = np.linspace(lo, hi, n_grid)
    diff = np.abs(mixture_posterior_velocity(inst, 1, grid)
                  - mixture_posterior_velocity(inst, 2, grid))

    def sq_diff(x):
        d = (mixture_posterior_velocity(inst, 1, x)
             - mixture_posterior_velocity(inst, 2, x))
        return d * d

    num, _ = integrate.quad(lambda x: sq_diff(x) * pi_star_pdf(inst, x),
                            lo, hi, epsabs=1e-10, limit=400)
    den, _ = integrate.quad(lambda x: pi_star_pdf(inst, x),
                            lo, hi, epsabs=1e-12, limit=400)
    wide_lo = -inst.R - 12.0 * inst.sigma
    wide_hi = inst.R + 12.0 * inst.sigma
    total, _ = integrate.quad(lambda x: sq_diff(x) * pi_star_pdf(inst, x),
                              wide_lo, wide_hi, epsabs=1e-12, limit=800,
                              points=[-inst.R / 2, 0.0, inst.R / 2])
    return SeparationReport(
        interval=(lo, hi),
        pointwise_min=float(diff.min()),
        pointwise_max=float(diff.max()),
        interval_rms=float(math.sqrt(num / den)),
        l2_separation_sq=float(total),
    )


@dataclasses.dataclass(frozen=True)
class LeCamReport:
    m: int
    eta: float
    tv_pair: float            # quadrature TV between the two targets
    tv_budget_m: float        # min(1, m * eta): product-measure TV budget
    separation_sq: float      # ||v1 - v2||^2 in L2(pi_{*,1/2})
    risk_floor: float         # (separation/4) * (1 - budget), two-point reduction
    floor_ratio: float        # risk_floor / (eps^2 sigma^2)


def lecam_budget(inst: LowerBoundInstance, m: int) -> LeCamReport:
    """m-sample testing budget and the implied two-point risk floor.

    With m samples the product TV is at most m*eta; the two-point argument
    yields inf-sup risk >= (separation/4)(1 - TV_m), which is of order
    eps^2 sigma^2 whenever m*eta <= 1/2.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    tv = tv_distance_mixtures(inst)
    budget = min(1.0, m * inst.eta)
    sep = velocity_separation(inst).l2_separation_sq
    floor = 0.25 * sep * (1.0 - budget)
    scale = inst.epsilon ** 2 * inst.sigma ** 2
    return LeCamReport(m, inst.eta, tv, budget, sep, floor, floor / scale)


def lowerbound_grid(inst: LowerBoundInstance, lo: float, hi: float, n: int):
    """Arrays for the CSV export: x, v1, v2, diff, density_pi_star."""
    if n < 2 or not (hi > lo):
        raise ValueError("need an increasing grid with >= 2 points")
    x = np.linspace(lo, hi, n)
    v1 = mixture_posterior_velocity(inst, 1, x)
    v2 = mixture_posterior_velocity(inst, 2, x)
    return {
        "x": x,
        "v1": v1,
        "v2": v2,
        "diff": np.abs(v1 - v2),
        "density_pi_star": pi_star_pdf(inst, x),
    }
