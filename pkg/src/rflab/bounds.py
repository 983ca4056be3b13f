"""Generalization-bound formulas and their numerical consistency checks.

Every closed-form quantity used by the sample-complexity analysis lives here:
the Bernstein constant, metric-entropy counts in log domain, the localized
Dudley integral bound, the sub-root fixed point (closed form and bisection
root), the excess-risk and statistical-error bounds, the sample-size search,
and the truncation bias budget. A Monte-Carlo lower estimator for the
empirical Rademacher complexity of the localized loss class provides the
matching sanity check from below.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .linalg_rng import RngStream
from .network import lipschitz_report

_SQRT_PI_HALF = math.sqrt(math.pi) / 2.0


class VacuousRegimeError(ValueError):
    """A bound was evaluated where its logarithm argument drops below 1."""


@dataclasses.dataclass(frozen=True)
class BoundInputs:
    """Constants feeding the bound formulas.

    x_conf defaults to log(2/delta); pass a value to override the confidence
    exponent directly.
    """

    P: int
    n: int
    B: float
    L_ell: float
    mu: float
    L_theta: float
    b: float = 1.0
    V: float = 4.0
    L_phi: float = 1.0
    D: int = 2
    C_univ: float = 1.0
    epsilon: float = 0.3
    delta: float = 0.1
    x_conf: float | None = None

    def __post_init__(self):
        for name in ("P", "n", "B", "L_ell", "mu", "L_theta", "b", "V",
                     "L_phi", "C_univ", "epsilon"):
            if not (getattr(self, name) > 0):
                raise ValueError(f"{name} must be > 0")
        if self.D < 2:
            raise ValueError("D must be >= 2")
        if not (0.0 < self.delta < 1.0):
            raise ValueError("delta must lie in (0, 1)")
        if self.x_conf is None:
            object.__setattr__(self, "x_conf", math.log(2.0 / self.delta))
        if not (self.x_conf > 0):
            raise ValueError("x_conf must be > 0")

    @classmethod
    def from_architecture(cls, arch, mu: float, n: int, m_disp: float = 0.0,
                          **kw) -> "BoundInputs":
        rep = lipschitz_report(arch, m_disp=m_disp)
        return cls(
            P=arch.param_count, n=n,
            B=bernstein_B(rep.param_lipschitz, mu),
            L_ell=rep.loss_lipschitz, mu=mu, L_theta=rep.param_lipschitz,
            b=arch.act_bound, V=arch.l1_budget,
            L_phi=arch.act().lipschitz, D=arch.depth, **kw)

    def with_n(self, n: int) -> "BoundInputs":
        return dataclasses.replace(self, n=n)

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


def bernstein_B(L_theta: float, mu: float) -> float:
    """Variance-to-mean constant of the curvature argument: B = 2 L^2 / mu."""
    if not (mu > 0):
        raise ValueError("mu must be > 0")
    return 2.0 * L_theta ** 2 / mu


def amplitude_A(P: int, b: float, V: float, L_phi: float, D: int) -> float:
    """Entropy amplitude A = 4 e b P (L_phi V)^D / (L_phi V - 1)."""
    q = L_phi * V
    if q <= 1.0:
        raise ValueError("need L_phi * V > 1")
    return 4.0 * math.e * b * P * q ** D / (q - 1.0)


def log_covering(P: int, m: int, eps: float, b: float, V: float,
                 L_phi: float, D: int) -> float:
    """log of the sup-norm covering count at scale eps over m points:

        P * log(4 e m b P (L_phi V)^D / (eps (L_phi V - 1))).

    Valid for 0 < eps <= 2b (the class has sup norm b, so wider scales
    trivialize the cover).
    """
    if not (P >= 1 and m >= 1):
        raise ValueError("P and m must be >= 1")
    if not (0.0 < eps <= 2.0 * b):
        raise ValueError("eps must lie in (0, 2b]")
    q = L_phi * V
    if q <= 1.0:
        raise ValueError("need L_phi * V > 1")
    return P * (math.log(4.0 * math.e * m * b * P) + D * math.log(q)
                - math.log(eps) - math.log(q - 1.0))


def dudley_local_rad(inputs: BoundInputs, r: float) -> float:
    """Dudley chaining bound on the Rademacher complexity of the localized
    class at radius r:

        (12 sqrt(P r) / (L_ell sqrt(n))) (sqrt(log(A n L_ell / sqrt(r))) + sqrt(pi)/2).
    """
    if not (r > 0):
        raise ValueError("r must be > 0")
    A = amplitude_A(inputs.P, inputs.b, inputs.V, inputs.L_phi, inputs.D)
    arg = A * inputs.n * inputs.L_ell / math.sqrt(r)
    if arg <= 1.0:
        raise VacuousRegimeError(
            f"log argument {arg:.3e} <= 1: bound vacuous at r = {r:.3e}")
    pref = 12.0 * math.sqrt(inputs.P * r) / (inputs.L_ell * math.sqrt(inputs.n))
    return pref * (math.sqrt(math.log(arg)) + _SQRT_PI_HALF)


def r_star_closed(inputs: BoundInputs) -> float:
    """Closed-form sub-root fixed point:

        r* = (288 B^2 P / n) (log(C n L_ell^2 / P) + 1).
    """
    arg = inputs.C_univ * inputs.n * inputs.L_ell ** 2 / inputs.P
    if arg <= 1.0:
        raise VacuousRegimeError(
            f"log argument {arg:.3e} <= 1: closed-form fixed point vacuous")
    return (288.0 * inputs.B ** 2 * inputs.P / inputs.n) * (math.log(arg) + 1.0)


def psi_and_fixed_point(inputs: BoundInputs, rel_tol: float = 1e-10):
    """The sub-root function psi(r) = B L_ell * dudley_local_rad(r), its
    closed-form fixed point, and a bisection root of r = psi(r).

    Returns (psi, r_star, r_root). The closed form absorbs an unnamed
    universal constant, so the two roots agree only up to a modest factor.
    """

    def psi(r: float) -> float:
        return inputs.B * inputs.L_ell * dudley_local_rad(inputs, r)

    r_star = r_star_closed(inputs)

    # psi(r)/sqrt(r) decreasing: r < psi(r) below the root, r > psi(r) above.
    lo = r_star
    while psi(lo) <= lo:
        lo /= 2.0
        if lo < 1e-300:
            raise FloatingPointError("bisection bracket failure from below")
    hi = max(r_star, lo * 2.0)
    while psi(hi) >= hi:
        hi *= 2.0
        if hi > 1e300:
            raise FloatingPointError("bisection bracket failure from above")
    while hi - lo > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if psi(mid) >= mid:
            lo = mid
        else:
            hi = mid
    return psi, r_star, 0.5 * (lo + hi)


def excess_risk_bound(inputs: BoundInputs, r_star: float,
                      x: float | None = None) -> float:
    """Localized excess-risk bound 705 r*/B + (11 L_ell + 2B) x / n.

    Substituting the closed-form r* must reproduce the 203040 B P / n leading
    term exactly; the identity is asserted to relative error 1e-10.
    """
    if x is None:
        x = inputs.x_conf
    if x < 0:
        raise ValueError("x must be >= 0")
    lead = 705.0 * r_star / inputs.B
    if abs(r_star - r_star_closed(inputs)) <= 1e-12 * r_star:
        arg = inputs.C_univ * inputs.n * inputs.L_ell ** 2 / inputs.P
        direct = (203040.0 * inputs.B * inputs.P / inputs.n) * (math.log(arg) + 1.0)
        if abs(lead - direct) > 1e-10 * direct:
            raise FloatingPointError("705 r*/B != 203040 B P (log+1) / n")
    return lead + (11.0 * inputs.L_ell + 2.0 * inputs.B) * x / inputs.n


def stat_bound(inputs: BoundInputs, x: float | None = None) -> float:
    """Statistical term B * excess_risk_bound with x = log(2/delta).

    The concentration step needs 2n > e^x; violations are rejected.
    """
    if x is None:
        x = inputs.x_conf
    if 2.0 * inputs.n <= math.exp(x):
        raise ValueError(
            f"confidence precondition 2n > e^x fails: n = {inputs.n}, x = {x:.4g}")
    return inputs.B * excess_risk_bound(inputs, r_star_closed(inputs), x=x)


def _min_valid_n(inputs: BoundInputs, x: float) -> int:
    n_conf = int(math.floor(math.exp(x) / 2.0)) + 1
    n_log = int(math.floor(inputs.P / (inputs.C_univ * inputs.L_ell ** 2))) + 1
    return max(2, n_conf, n_log)


def sample_size(inputs: BoundInputs) -> int:
    """Smallest n with stat_bound(n) <= epsilon^2 / 9, by doubling then
    bisection. The confidence exponent uses the three-way union bound, so
    x = log(6/delta) here rather than the single-event log(2/delta).
    """
    budget = inputs.epsilon ** 2 / 9.0
    x = math.log(6.0 / inputs.delta)
    lo = _min_valid_n(inputs, x)
    if stat_bound(inputs.with_n(lo), x=x) <= budget:
        return lo
    hi = lo
    while stat_bound(inputs.with_n(hi), x=x) > budget:
        hi *= 2
        if hi > 2 ** 62:
            raise OverflowError(
                "sample-size budget unsatisfiable below overflow guard")
    # invariant: stat(lo) > budget >= stat(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if stat_bound(inputs.with_n(mid), x=x) > budget:
            lo = mid
        else:
            hi = mid
    return hi


def stat_bound_and_sample_size(inputs: BoundInputs) -> tuple[float, int]:
    return stat_bound(inputs), sample_size(inputs)


# -- empirical Rademacher lower estimate ---------------------------------------


@dataclasses.dataclass(frozen=True)
class RademacherReport:
    """Mean of per-sign maxima; an explicit lower estimate of the empirical
    Rademacher complexity (the inner sup is non-concave, ascent only finds
    local maxima)."""

    value: float
    per_sign: np.ndarray
    r: float
    n_signs: int
    n_restarts: int
    best_thetas: list

    @property
    def spread(self) -> float:
        if self.per_sign.size < 2:
            return 0.0
        return float(self.per_sign.std(ddof=1))


def _per_sample_loss(net, batch) -> np.ndarray:
    res = net(batch.xt, batch.t) - batch.disp
    return np.sum(res * res, axis=1)


def _localization_sq(net, ref_loss: np.ndarray, batch, l_ell: float) -> float:
    gap = _per_sample_loss(net, batch) - ref_loss
    return l_ell ** 2 * float(np.mean(gap * gap))


def _pull_to_ball(net, theta_ref: np.ndarray, ref_loss: np.ndarray, batch,
                  r: float, l_ell: float) -> None:
    # both endpoints satisfy the row constraints, so every blend does too
    if _localization_sq(net, ref_loss, batch, l_ell) <= r:
        return
    theta = net.get_theta()
    lo, hi = 0.0, 1.0
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        net.set_theta(theta_ref + mid * (theta - theta_ref))
        if _localization_sq(net, ref_loss, batch, l_ell) <= r:
            lo = mid
        else:
            hi = mid
    net.set_theta(theta_ref + lo * (theta - theta_ref))


def empirical_local_rademacher(sampler, net_ref, data, r: float,
                               n_signs: int, n_restarts: int, rng: RngStream,
                               l_ell: float, ascent_steps: int = 60,
                               step_size: float = 0.05,
                               init_thetas: list | None = None) -> RademacherReport:
    """Monte-Carlo lower estimate of the empirical Rademacher complexity of
    the localized loss-gap class {z -> loss(theta, z) - loss(ref, z) :
    L_ell^2 mean_gap_sq <= r}.

    For each Rademacher sign vector the sign correlation is maximized by
    projected gradient ascent over theta (restarted), pulling back to the
    localization boundary along the segment to the reference whenever the
    ball is left. init_thetas seeds extra restarts, letting callers chain
    warm starts across an increasing r grid.

    Small instances only: the ascent is dense in P and n.
    """
    if r < 0:
        raise ValueError("r must be >= 0")
    if net_ref.arch.param_count > 200 or len(data) > 512:
        raise ValueError("estimator restricted to P <= 200 and n <= 512")
    if n_signs < 1 or n_restarts < 1:
        raise ValueError("n_signs and n_restarts must be >= 1")
    n = len(data)
    theta_ref = net_ref.get_theta()
    ref_loss = _per_sample_loss(net_ref, data)
    sign_gen = rng.derive(1)
    per_sign = np.empty(n_signs)
    best_thetas = []
    for s in range(n_signs):
        signs = sign_gen.gen.integers(0, 2, size=n) * 2.0 - 1.0
        best = 0.0  # the reference itself attains 0
        best_theta = theta_ref.copy()
        seeds = list(init_thetas or [])
        while len(seeds) < n_restarts:
            seeds.append(None)
        for j, seed_theta in enumerate(seeds):
            net = net_ref.copy()
            if seed_theta is not None:
                net.set_theta(np.asarray(seed_theta, dtype=np.float64))
                net.project_constraints()
            else:
                net = sampler(rng.derive(10 + 31 * s + j))
            _pull_to_ball(net, theta_ref, ref_loss, data, r, l_ell)
            for _ in range(ascent_steps):
                _, g = net.loss_and_grad(data, sample_weights=signs)
                net.set_theta(net.get_theta() + step_size * g)
                net.project_constraints()
                _pull_to_ball(net, theta_ref, ref_loss, data, r, l_ell)
            val = float(np.mean(signs * (_per_sample_loss(net, data) - ref_loss)))
            if val > best:
                best = val
                best_theta = net.get_theta()
        per_sign[s] = best
        best_thetas.append(best_theta)
    return RademacherReport(
        value=float(per_sign.mean()), per_sign=per_sign, r=r,
        n_signs=n_signs, n_restarts=n_restarts, best_thetas=best_thetas)


# -- truncation budget ----------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class TruncationReport:
    M: float
    delta_n: float
    bias_budget: float
    bad_event_budget: float


def truncation_bias_report(inputs: BoundInputs, sigma: float,
                           C: float = 2.0, c: float = 0.5) -> TruncationReport:
    """Truncation level M, tail weight delta_n = C e^{-c M^2/sigma^2} = 1/(2n^2)
    exactly by the choice of M, the loss bias budget (M^2 + sigma^2) delta_n,
    and the n-sample bad-event budget n delta_n = 1/(2n)."""
    from .distributions import truncation_level

    n = inputs.n
    M = truncation_level(sigma, n, C=C, c=c)
    delta_n = 1.0 / (2.0 * n * n)
    return TruncationReport(
        M=M, delta_n=delta_n,
        bias_budget=(M * M + sigma * sigma) * delta_n,
        bad_event_budget=n * delta_n)


# -- aggregate report ------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class BoundReport:
    inputs: BoundInputs
    covering_eps: float
    log_covering: float
    dudley_at_r_star: float
    psi_at_r_star: float
    r_star: float
    r_root: float
    excess_bound: float
    stat_bound: float
    n_required: int
    truncation: TruncationReport

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["inputs"] = self.inputs.to_json()
        d["truncation"] = dataclasses.asdict(self.truncation)
        return d


def full_report(inputs: BoundInputs, sigma: float = 1.0,
                covering_eps: float | None = None) -> BoundReport:
    """Evaluate the whole bound chain at the given inputs."""
    if covering_eps is None:
        covering_eps = min(1.0 / math.sqrt(inputs.n), 2.0 * inputs.b)
    psi, r_star, r_root = psi_and_fixed_point(inputs)
    return BoundReport(
        inputs=inputs,
        covering_eps=covering_eps,
        log_covering=log_covering(inputs.P, inputs.n, covering_eps, inputs.b,
                                  inputs.V, inputs.L_phi, inputs.D),
        dudley_at_r_star=dudley_local_rad(inputs, r_star),
        psi_at_r_star=psi(r_star),
        r_star=r_star,
        r_root=r_root,
        excess_bound=excess_risk_bound(inputs, r_star),
        stat_bound=stat_bound(inputs),
        n_required=sample_size(inputs),
        truncation=truncation_bias_report(inputs, sigma))
