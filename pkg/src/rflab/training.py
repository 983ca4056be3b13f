"""Projected SGD on the displacement-regression loss, with the diminishing
step schedule, divergence guard, PL diagnostics, and the synthetic-quadratic
rate check whose envelope comes from iterating
delta_{k+1} <= (1 - mu eta_k) delta_k + kappa sigma^2 eta_k^2 / 2.

Minibatches are epoch-shuffled without replacement (documented deviation from
the per-i.i.d.-draw analysis). The feasibility projection runs after every
step so the derived network constants stay valid throughout training.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .distributions import CoupledBatch
from .linalg_rng import RngStream
from .network import VelocityNet

_SHUFFLE_TAG = 0x5347440A  # stream tag for minibatch shuffling
_PROBE_TAG = 0x50524F42    # stream tag for curvature probes


class DivergenceError(RuntimeError):
    """Training loss exceeded the divergence threshold."""


@dataclasses.dataclass
class TrainConfig:
    n_samples: int
    batch_size: int
    steps: int
    schedule: str = "diminishing"      # "constant" | "diminishing"
    eta: float = 0.05                  # constant schedule step
    c: float = 4.0                     # diminishing: eta_k = c / (k + gamma)
    gamma: float = 40.0
    mu_hat: float | None = None        # assumed PL constant; validates c > 1/mu_hat
    kappa_hat: float | None = None     # assumed smoothness; validates gamma >= kappa_hat*c
    seed: int = 0
    divergence_factor: float = 1e3
    record_every: int = 1              # cadence of full-data loss records

    def __post_init__(self):
        if self.schedule not in ("constant", "diminishing"):
            raise ValueError(f"unknown schedule: {self.schedule!r}")
        if self.batch_size < 1 or self.steps < 1:
            raise ValueError("batch_size and steps must be >= 1")
        if self.n_samples and self.batch_size > self.n_samples:
            raise ValueError("batch_size must not exceed n_samples")
        if self.schedule == "constant":
            if not (self.eta > 0):
                raise ValueError("constant schedule needs eta > 0")
            if self.kappa_hat is not None and self.eta > 1.0 / self.kappa_hat:
                raise ValueError("constant schedule requires eta <= 1/kappa_hat")
        else:
            if not (self.c > 0 and self.gamma > 0):
                raise ValueError("diminishing schedule needs c > 0 and gamma > 0")
            if self.mu_hat is not None and not (self.c > 1.0 / self.mu_hat):
                raise ValueError("diminishing schedule requires c > 1/mu_hat")
            if self.kappa_hat is not None and not (self.gamma >= self.kappa_hat * self.c):
                raise ValueError("diminishing schedule requires gamma >= kappa_hat*c")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")


def step_size(cfg: TrainConfig, k: int) -> float:
    """eta_k for step index k (0-based)."""
    if cfg.schedule == "constant":
        return cfg.eta
    return cfg.c / (k + cfg.gamma)


@dataclasses.dataclass
class TrainTrace:
    """Recorded at steps k = 0, record_every, 2*record_every, ..., and the last.

    loss is the full-data empirical loss; grad_norm is the norm of that step's
    minibatch gradient (exact gradient when batch_size = n)."""

    step: np.ndarray
    loss: np.ndarray
    grad_norm: np.ndarray
    eta: np.ndarray
    max_row_l1: np.ndarray
    initial_loss: float
    final_loss: float

    def to_csv_rows(self):
        for k in range(self.step.size):
            yield (int(self.step[k]), float(self.loss[k]), float(self.grad_norm[k]),
                   float(self.eta[k]), float(self.max_row_l1[k]))


def empirical_loss(net: VelocityNet, data: CoupledBatch) -> float:
    """(1/n) sum ||v_theta(x_t, t) - (x1 - x0)||^2."""
    if len(data) == 0:
        raise ValueError("empty data")
    return net.loss(data)


def estimate_kappa(net: VelocityNet, data: CoupledBatch, seed: int,
                   probes: int = 100, scale: float = 1e-3) -> float:
    """Curvature probe: max gradient-difference ratio over random directions.

    Only used to cap constant step sizes; not a certified smoothness constant.
    """
    rng = RngStream(seed, _PROBE_TAG)
    theta = net.get_theta()
    probe = net.copy()
    _, g0 = probe.loss_and_grad(data)
    best = 0.0
    for _ in range(probes):
        d = rng.gen.standard_normal(theta.size)
        d *= scale / np.linalg.norm(d)
        probe.set_theta(theta + d)
        _, g1 = probe.loss_and_grad(data)
        best = max(best, float(np.linalg.norm(g1 - g0) / scale))
    probe.set_theta(theta)
    return best


def train(net: VelocityNet, data: CoupledBatch, cfg: TrainConfig) -> TrainTrace:
    """Projected SGD in place; returns the trace. Raises DivergenceError when the
    full-data loss exceeds divergence_factor x (initial loss, floored at 1e-12)."""
    n = len(data)
    if n == 0:
        raise ValueError("empty data")
    if cfg.n_samples and cfg.n_samples != n:
        raise ValueError(f"cfg.n_samples = {cfg.n_samples} but data has {n} rows")
    shuffle = RngStream(cfg.seed, _SHUFFLE_TAG)
    loss0 = net.loss(data)
    ceiling = cfg.divergence_factor * max(loss0, 1e-12)

    rec_step, rec_loss, rec_gnorm, rec_eta, rec_row = [], [], [], [], []
    order = shuffle.gen.permutation(n)
    pos = 0
    for k in range(cfg.steps):
        if pos + cfg.batch_size > n:
            order = shuffle.gen.permutation(n)
            pos = 0
        idx = order[pos:pos + cfg.batch_size]
        pos += cfg.batch_size
        _, g = net.loss_and_grad(data.take(idx))
        eta = step_size(cfg, k)
        net.set_theta(net.get_theta() - eta * g)
        net.project_constraints()
        if k % cfg.record_every == 0 or k == cfg.steps - 1:
            full = net.loss(data)
            rec_step.append(k)
            rec_loss.append(full)
            rec_gnorm.append(float(np.linalg.norm(g)))
            rec_eta.append(eta)
            rec_row.append(net.max_row_l1())
            if not math.isfinite(full) or full > ceiling:
                raise DivergenceError(
                    f"loss {full:.3e} exceeded {cfg.divergence_factor:.0e} x initial "
                    f"{loss0:.3e} at step {k}")
    return TrainTrace(
        step=np.array(rec_step, dtype=np.int64),
        loss=np.array(rec_loss),
        grad_norm=np.array(rec_gnorm),
        eta=np.array(rec_eta),
        max_row_l1=np.array(rec_row),
        initial_loss=loss0,
        final_loss=rec_loss[-1],
    )


@dataclasses.dataclass
class PLReport:
    steps: np.ndarray
    ratios: np.ndarray          # ||grad||^2 / (2 (loss - loss_star)); NaN where degenerate
    degenerate: np.ndarray      # True where loss - loss_star < 1e-12
    min_ratio: float            # min over non-degenerate steps
    mu_hat: float
    satisfied: bool             # min_ratio >= mu_hat


def pl_diagnostic(trace: TrainTrace, mu_hat: float, loss_star: float) -> PLReport:
    """Empirical PL ratio per recorded step; a lower estimate of the PL constant."""
    gap = trace.loss - loss_star
    if np.min(gap) < -1e-9:
        raise ValueError("loss_star exceeds the observed minimum loss")
    degenerate = gap < 1e-12
    ratios = np.full(gap.shape, np.nan)
    ok = ~degenerate
    ratios[ok] = trace.grad_norm[ok] ** 2 / (2.0 * gap[ok])
    min_ratio = float(np.min(ratios[ok])) if ok.any() else float("nan")
    return PLReport(trace.step.copy(), ratios, degenerate, min_ratio, mu_hat,
                    bool(ok.any() and min_ratio >= mu_hat))


@dataclasses.dataclass
class QuadraticProblem:
    """L(theta) = 0.5 sum_i lambda_i theta_i^2; PL constant mu = min lambda,
    smoothness kappa = max lambda, minimum 0 at the origin. Gradient noise is
    isotropic with E||xi||^2 = noise_var."""

    lambdas: np.ndarray
    theta0: np.ndarray
    noise_var: float = 0.0

    def __post_init__(self):
        self.lambdas = np.asarray(self.lambdas, dtype=np.float64)
        self.theta0 = np.asarray(self.theta0, dtype=np.float64)
        if self.lambdas.ndim != 1 or self.lambdas.size != self.theta0.size:
            raise ValueError("lambdas and theta0 must be vectors of equal length")
        if np.min(self.lambdas) <= 0:
            raise ValueError("lambdas must be positive")
        if self.noise_var < 0:
            raise ValueError("noise_var must be >= 0")

    @property
    def mu(self) -> float:
        return float(np.min(self.lambdas))

    @property
    def kappa(self) -> float:
        return float(np.max(self.lambdas))

    def loss(self, theta: np.ndarray) -> float:
        return 0.5 * float(np.dot(self.lambdas, theta * theta))

    def grad(self, theta: np.ndarray) -> np.ndarray:
        return self.lambdas * theta

    def noisy_grad(self, theta: np.ndarray, rng: RngStream) -> np.ndarray:
        g = self.grad(theta)
        if self.noise_var == 0:
            return g
        d = theta.size
        return g + math.sqrt(self.noise_var / d) * rng.gen.standard_normal(d)


def recursion_envelope(problem: QuadraticProblem, cfg: TrainConfig, steps: int) -> np.ndarray:
    """Numerically iterated upper envelope for E[L(theta_k) - L*], k = 0..steps."""
    mu, kappa = problem.mu, problem.kappa
    env = np.empty(steps + 1)
    env[0] = problem.loss(problem.theta0)
    for k in range(steps):
        eta = step_size(cfg, k)
        env[k + 1] = (1.0 - mu * eta) * env[k] + 0.5 * kappa * problem.noise_var * eta * eta
    return env


def closed_envelope_constant(problem: QuadraticProblem, cfg: TrainConfig,
                             delta0: float) -> float:
    """C = max(gamma*delta_0, kappa sigma^2 c^2 / (2 (mu c - 1))) for the
    C/(k+gamma) closed form; requires the diminishing schedule with c > 1/mu."""
    if cfg.schedule != "diminishing":
        raise ValueError("closed envelope applies to the diminishing schedule")
    if not (cfg.c > 1.0 / problem.mu):
        raise ValueError("closed envelope requires c > 1/mu")
    return max(cfg.gamma * delta0,
               problem.kappa * problem.noise_var * cfg.c ** 2
               / (2.0 * (problem.mu * cfg.c - 1.0)))


@dataclasses.dataclass
class SgdRateReport:
    steps: np.ndarray            # 1..K
    mean_delta: np.ndarray       # E[L(theta_k) - L*] over seeds, k = 0..K
    envelope: np.ndarray         # iterated recursion envelope
    slope: float                 # log-log fit over the final decade
    slope_stderr: float
    envelope_ok: bool            # mean <= 1.5 x envelope for all k >= 10
    closed_constant: float | None
    closed_ok: bool | None
    n_seeds: int


def sgd_rate_check(problem: QuadraticProblem, cfg: TrainConfig, n_seeds: int = 20,
                   slack: float = 1.5) -> SgdRateReport:
    """Run SGD on the quadratic across seeds; fit the decay exponent of the mean
    optimality gap over the final decade of steps and compare against the
    iterated recursion envelope."""
    from .metrics import fit_rate

    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    K = cfg.steps
    deltas = np.zeros(K + 1)
    for s in range(n_seeds):
        rng = RngStream(cfg.seed, 0).derive(1000 + s)
        theta = problem.theta0.copy()
        deltas[0] += problem.loss(theta)
        for k in range(K):
            theta = theta - step_size(cfg, k) * problem.noisy_grad(theta, rng)
            deltas[k + 1] += problem.loss(theta)
    deltas /= n_seeds

    env = recursion_envelope(problem, cfg, K)
    ks = np.arange(K + 1)
    tail = ks >= 10
    envelope_ok = bool(np.all(deltas[tail] <= slack * env[tail]))

    lo = max(10, K // 10)
    window = np.arange(lo, K + 1)
    fit = fit_rate(window.astype(float), np.maximum(deltas[window], 1e-300))

    closed_c = None
    closed_ok = None
    if cfg.schedule == "diminishing" and problem.mu * cfg.c > 1.0:
        closed_c = closed_envelope_constant(problem, cfg, deltas[0])
        bound = closed_c / (ks + cfg.gamma)
        closed_ok = bool(np.all(deltas[tail] <= slack * bound[tail]))
    return SgdRateReport(ks[1:], deltas, env, fit.slope, fit.stderr,
                         envelope_ok, closed_c, closed_ok, n_seeds)
