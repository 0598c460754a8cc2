"""Boltzmann models, the entropic barrier, hit-and-run sampling and the short-step entropic IPM.

The density on a convex body ``K`` is ``p_theta(x) = exp(-theta^T x - A(theta))``.
On an axis-aligned box everything factorizes into one-dimensional closed forms.
In terms of ``t = theta_i (b_i - a_i)`` the scaled coordinate ``y`` has

    mean  m(t) = 1/t - 1/(e^t - 1)
    var   v(t) = 1/t^2 - 1/(4 sinh^2(t/2))

and both are replaced by their Taylor series near ``t = 0``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq

from .cert import GateError, newton_step_params
from .funcs import Box, DomainError, FunctionOracle

SERIES_CUTOFF = 1e-2


# ---------------------------------------------------------------------------
# one-dimensional closed forms on [0, 1]


def _log_z1(t):
    """``ln((1 - e^{-t}) / t)``, the log partition of the unit interval."""
    t = np.asarray(t, float)
    out = np.empty_like(t)
    small = np.abs(t) < SERIES_CUTOFF
    ts = t[small]
    out[small] = -ts / 2 + ts**2 / 24 - ts**4 / 2880
    tp = t[~small & (t > 0)]
    out[~small & (t > 0)] = np.log(-np.expm1(-tp) / tp)
    tn = t[~small & (t < 0)]
    out[~small & (t < 0)] = -tn + np.log(np.expm1(tn) / tn)
    return out


def _mean1(t):
    t = np.asarray(t, float)
    out = np.empty_like(t)
    small = np.abs(t) < SERIES_CUTOFF
    ts = t[small]
    out[small] = 0.5 - ts / 12 + ts**3 / 720
    tl = t[~small]
    with np.errstate(over="ignore"):
        out[~small] = 1 / tl - 1 / np.expm1(tl)
    return out


def _var1(t):
    t = np.asarray(t, float)
    out = np.empty_like(t)
    small = np.abs(t) < SERIES_CUTOFF
    ts = t[small]
    out[small] = 1 / 12 - ts**2 / 240 + ts**4 / 6048
    tl = t[~small]
    with np.errstate(over="ignore"):
        out[~small] = 1 / tl**2 - 1 / (4 * np.sinh(tl / 2) ** 2)
    return out


def _invert_mean1(y, tol=1e-15):
    """The ``t`` with ``m(t) = y`` for ``y`` in ``(0, 1)``; ``m`` is decreasing."""
    if not (0 < y < 1):
        raise DomainError(f"mean {y} outside the open unit interval")
    if abs(y - 0.5) < 1e-15:
        return 0.0
    lo, hi = -1 / (1 - y) - 1, 1 / y + 1
    t = brentq(lambda s: float(_mean1(s)) - y, lo, hi, xtol=1e-300, rtol=1e-15, maxiter=500)
    for _ in range(3):
        v = float(_var1(t))
        if v <= 0:
            break
        step = (float(_mean1(t)) - y) / v
        if abs(step) < tol * (1 + abs(t)):
            break
        t += step
    return t


# ---------------------------------------------------------------------------
# domains and models


@dataclass(frozen=True)
class Polytope:
    """``{x : A x <= b}``; must be bounded with nonempty interior."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A, b = np.atleast_2d(np.asarray(self.A, float)), np.asarray(self.b, float)
        if A.shape[0] != b.size:
            raise ValueError("A and b disagree")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @classmethod
    def from_box(cls, box: Box) -> "Polytope":
        n = box.dim
        return cls(np.vstack([np.eye(n), -np.eye(n)]), np.concatenate([box.hi, -box.lo]))

    def contains(self, x) -> bool:
        return bool(np.all(self.A @ np.asarray(x) < self.b))

    def chords(self, X, U):
        """Chord parameters ``[t_lo, t_hi]`` of lines ``X + t U`` (row-wise)."""
        slack = self.b[None, :] - X @ self.A.T
        rate = U @ self.A.T
        with np.errstate(divide="ignore", invalid="ignore"):
            t = slack / rate
        t_hi = np.where(rate > 0, t, np.inf).min(axis=1)
        t_lo = np.where(rate < 0, t, -np.inf).max(axis=1)
        if not (np.all(np.isfinite(t_hi)) and np.all(np.isfinite(t_lo))):
            raise ValueError("polytope is unbounded along a sampled direction")
        return t_lo, t_hi


@dataclass
class BoltzmannModel:
    domain: Box | Polytope
    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, float)
        if self.theta.size != self.domain.dim:
            raise ValueError("theta has the wrong dimension")


class LogPartition(NamedTuple):
    A: float
    gradA: np.ndarray
    hessA: np.ndarray


def log_partition_box(model: BoltzmannModel) -> LogPartition:
    """``A``, ``grad A = -E[X]`` and the diagonal ``hess A = Cov X`` in closed form."""
    if not isinstance(model.domain, Box):
        raise ValueError("closed forms need a box domain")
    a, b, th = model.domain.lo, model.domain.hi, model.theta
    w = b - a
    t = th * w
    A = float(np.sum(-th * a + np.log(w) + _log_z1(t)))
    mean = a + w * _mean1(t)
    var = w**2 * _var1(t)
    return LogPartition(A, -mean, np.diag(var))


def boltzmann_mean(domain: Box, theta) -> np.ndarray:
    return -log_partition_box(BoltzmannModel(domain, theta)).gradA


def boltzmann_cov(domain: Box, theta) -> np.ndarray:
    return log_partition_box(BoltzmannModel(domain, theta)).hessA


def natural_parameter(domain: Box, x) -> np.ndarray:
    """``theta*(x)``: the parameter whose Boltzmann mean is ``x`` (coordinatewise inversion)."""
    x = np.asarray(x, float)
    if not domain.contains(x):
        raise DomainError(f"{x} is not strictly inside the box")
    w = domain.hi - domain.lo
    y = (x - domain.lo) / w
    return np.array([_invert_mean1(yi) for yi in y]) / w


# ---------------------------------------------------------------------------
# the entropic barrier and the central path


class EntropicBarrierBox(FunctionOracle):
    """``A*_-(x) = sup_theta -theta^T x - A(theta)`` on a box, plus an optional linear term ``c^T x``.

    Its gradient is ``c - theta*(x)`` and its Hessian ``Cov_{theta*(x)}(X)^{-1}``.
    """

    def __init__(self, lo, hi, c=None, theta_param=None):
        self.domain = Box(lo, hi)
        self.dim = self.domain.dim
        self.c = np.zeros(self.dim) if c is None else np.asarray(c, float)
        self.theta = float(self.dim if theta_param is None else theta_param)

    def _nat(self, x):
        return natural_parameter(self.domain, x)

    def value(self, x) -> float:
        x = np.asarray(x, float)
        if not self.domain.contains(x):
            return math.inf
        th = self._nat(x)
        return float(self.c @ x - th @ x - log_partition_box(BoltzmannModel(self.domain, th)).A)

    def grad(self, x) -> np.ndarray:
        return self.c - self._nat(x)

    def hess(self, x) -> np.ndarray:
        cov = np.diag(boltzmann_cov(self.domain, self._nat(x)))
        return np.diag(1 / cov)


def conjugate_by_sup(domain: Box, x, theta0=None, tol=1e-13, max_iter=100) -> tuple[float, np.ndarray]:
    """``A*_-(x)`` by damped Newton on the concave problem ``max_theta -theta^T x - A(theta)``.

    Independent of the closed-form inversion; used as an oracle in tests.
    """
    x = np.asarray(x, float)
    th = np.zeros_like(x) if theta0 is None else np.asarray(theta0, float).copy()

    def obj(t):
        return float(-t @ x - log_partition_box(BoltzmannModel(domain, t)).A)

    for _ in range(max_iter):
        lp = log_partition_box(BoltzmannModel(domain, th))
        r = -x - lp.gradA
        step = np.linalg.solve(lp.hessA, r)
        dec = math.sqrt(max(float(r @ step), 0.0))
        if dec < tol:
            break
        s = 1.0 if dec < 0.25 else 1 / (1 + dec)
        th = th + s * step
    return obj(th), th


def central_path_point(domain: Box, theta_hat, eta: float) -> np.ndarray:
    """``x(eta) = -grad A(eta theta_hat)``, the central point for ``min theta_hat^T x``."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    return boltzmann_mean(domain, eta * np.asarray(theta_hat, float))


def entropic_gradient(x0, eta: float, theta_hat, domain: Box) -> np.ndarray:
    """Gradient of ``f(x) = eta theta_hat^T x + A*_-(x)``, namely ``eta theta_hat - theta*(x0)``."""
    return eta * np.asarray(theta_hat, float) - natural_parameter(domain, x0)


def approx_entropic_gradient(x0, eta, theta_hat, domain: Box, sigma_hat, eps_prime, theta0=None, max_iter=100):
    """``g~(x0)`` from an inexact inner Newton solve with a decrement-based stopping rule.

    The inner solve stops once the Newton decrement is at most ``eps_prime / 4``
    times the current estimate of ``||g~||`` in the ``sigma_hat`` metric.
    """
    x0 = np.asarray(x0, float)
    if not domain.contains(x0):
        raise DomainError(f"{x0} is not strictly inside the box")
    base = eta * np.asarray(theta_hat, float)
    th = np.zeros_like(x0) if theta0 is None else np.asarray(theta0, float).copy()
    for _ in range(max_iter):
        lp = log_partition_box(BoltzmannModel(domain, th))
        r = -x0 - lp.gradA
        step = np.linalg.solve(lp.hessA, r)
        dec = math.sqrt(max(float(r @ step), 0.0))
        g = base - th
        if dec <= 0.25 * eps_prime * math.sqrt(max(float(g @ sigma_hat @ g), 0.0)):
            break
        th = th + (1.0 if dec < 0.25 else 1 / (1 + dec)) * step
    return base - th, th


def hessian_conjugacy_check(domain: Box, theta_hat, eta: float, h: float = 1e-5) -> float:
    """Relative gap between ``hess f(x*)^{-1}`` (central differences of the gradient) and ``hess A(eta theta_hat)``."""
    xs = central_path_point(domain, theta_hat, eta)
    n = xs.size
    H = np.empty((n, n))
    w = domain.hi - domain.lo
    for j in range(n):
        e = np.zeros(n)
        e[j] = h * w[j]
        H[:, j] = (entropic_gradient(xs + e, eta, theta_hat, domain) - entropic_gradient(xs - e, eta, theta_hat, domain)) / (
            2 * e[j]
        )
    H = 0.5 * (H + H.T)
    S = boltzmann_cov(domain, eta * np.asarray(theta_hat, float))
    return float(np.linalg.norm(np.linalg.inv(H) - S, 2) / np.linalg.norm(S, 2))


def central_path_gap(domain: Box, theta_hat, eta: float) -> float:
    """``theta_hat^T x(eta) - min_K theta_hat^T x``."""
    th = np.asarray(theta_hat, float)
    vmin = float(np.sum(np.where(th > 0, th * domain.lo, th * domain.hi)))
    return float(th @ central_path_point(domain, th, eta)) - vmin


# ---------------------------------------------------------------------------
# hit-and-run


@dataclass
class HitAndRun:
    """Independent hit-and-run chains advanced in lockstep.

    Directions are ``T z / ||T z||`` with ``z`` standard normal.  ``T = I`` is classical
    hit-and-run; any fixed ``T`` is hit-and-run in the coordinates ``T^{-1} x``, so a
    covariance square root can be used to round an elongated target.
    """

    domain: Box | Polytope
    theta: np.ndarray
    states: np.ndarray
    rng: np.random.Generator
    shape: np.ndarray | None = None

    @classmethod
    def start(cls, model: BoltzmannModel, x_start, n_chains: int, seed) -> "HitAndRun":
        x_start = np.asarray(x_start, float)
        if not model.domain.contains(x_start):
            raise DomainError(f"start {x_start} is not strictly interior")
        states = np.tile(x_start, (n_chains, 1))
        return cls(model.domain, np.asarray(model.theta, float), states, np.random.default_rng(seed))

    def step(self, k: int = 1) -> None:
        X = self.states
        m = X.shape[0]
        box = isinstance(self.domain, Box)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            for _ in range(k):
                U = self.rng.standard_normal(X.shape)
                if self.shape is not None:
                    U = U @ self.shape.T
                U /= np.sqrt(np.einsum("ij,ij->i", U, U))[:, None]
                if box:
                    inv = 1 / U
                    r1, r2 = (self.domain.hi - X) * inv, (self.domain.lo - X) * inv
                    t_lo, t_hi = np.fmin(r1, r2).max(axis=1), np.fmax(r1, r2).min(axis=1)
                else:
                    t_lo, t_hi = self.domain.chords(X, U)
                w = t_hi - t_lo
                if w.min() < 1e-14:
                    raise RuntimeError("degenerate chord")
                s = U @ self.theta
                a = np.abs(s)
                u = self.rng.random(m)
                tau = -np.log1p(u * np.expm1(-a * w)) / a
                tau = np.where(a * w < 1e-12, u * w, np.minimum(np.maximum(tau, 0.0), w))
                t = np.where(s >= 0, t_lo + tau, t_hi - tau)
                X = X + t[:, None] * U
        self.states = X

    def draw(self, count: int, thin: int = 10) -> np.ndarray:
        """``count`` samples collected round-robin from all chains (``thin`` steps apart)."""
        rounds = -(-count // len(self.states))
        out = []
        for _ in range(rounds):
            self.step(thin)
            out.append(self.states.copy())
        return np.concatenate(out)[:count]


def hit_and_run(model: BoltzmannModel, x_start, burn_in: int | None = None, count: int = 1000, seed=0,
                n_chains: int = 1, thin: int = 10) -> np.ndarray:
    """Samples from the Boltzmann density on a box or polytope; deterministic under ``seed``."""
    n = model.domain.dim
    burn_in = 50 * n if burn_in is None else burn_in
    chains = HitAndRun.start(model, x_start, n_chains, seed)
    chains.step(burn_in)
    return chains.draw(count, thin)


def chain_mean_band(samples: np.ndarray, n_chains: int) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and its standard error from per-chain batch means.

    Samples from :meth:`HitAndRun.draw` interleave chains, so row ``i`` belongs to chain ``i % n_chains``.
    """
    m = len(samples) // n_chains * n_chains
    per_chain = samples[:m].reshape(-1, n_chains, samples.shape[1]).mean(axis=0)
    return samples.mean(axis=0), per_chain.std(axis=0, ddof=1) / math.sqrt(n_chains)


# ---------------------------------------------------------------------------
# covariance estimates


@dataclass
class CovarianceEstimate:
    sigma: np.ndarray
    N: int
    eps_hat: float | None = None


def empirical_covariance(samples, eps_hat: float | None = None) -> CovarianceEstimate:
    """``(1/N) sum (X_i - Xbar)(X_i - Xbar)^T`` (divisor ``N``)."""
    X = np.atleast_2d(np.asarray(samples, float))
    N = X.shape[0]
    if N < 2:
        raise ValueError("need at least two samples")
    Y = X - X.mean(axis=0)
    return CovarianceEstimate(Y.T @ Y / N, N, eps_hat)


def _relative_eigs(S, S_hat):
    w, V = np.linalg.eigh(S_hat)
    if w[0] <= 0:
        raise np.linalg.LinAlgError("empirical covariance is singular")
    R = V / np.sqrt(w)
    return np.linalg.eigvalsh(R.T @ S @ R)


def sandwich_check(S, S_hat, eps_hat: float) -> bool:
    """Both ``(1-e) S_hat <= S <= (1+e) S_hat`` and the same for the inverses."""
    lam = _relative_eigs(np.asarray(S, float), np.asarray(S_hat, float))
    forward = lam[0] >= 1 - eps_hat and lam[-1] <= 1 + eps_hat
    inv = 1 / lam
    backward = inv.min() >= 1 - eps_hat and inv.max() <= 1 + eps_hat
    return bool(forward and backward)


def sandwich_level(S, S_hat) -> float:
    """Smallest ``eps_hat`` for which :func:`sandwich_check` passes."""
    lam = _relative_eigs(np.asarray(S, float), np.asarray(S_hat, float))
    return float(max(1 - lam[0], lam[-1] - 1, 1 - 1 / lam[-1], 1 / lam[0] - 1))


def effective_eps(eps_hat: float, eps_prime: float) -> float:
    """Certified direction error ``eps' sqrt((1+e)/(1-e)) + sqrt(2e/(1-e))``."""
    if not (0 <= eps_hat < 1) or eps_prime < 0:
        raise ValueError("need 0 <= eps_hat < 1 and eps_prime >= 0")
    return eps_prime * math.sqrt((1 + eps_hat) / (1 - eps_hat)) + math.sqrt(2 * eps_hat / (1 - eps_hat))


def approx_direction(sigma_hat, g_tilde, eps_hat: float = 0.0, eps_prime: float = 0.0) -> tuple[np.ndarray, float]:
    """``d~ = sigma_hat g~`` together with its certified error ``eps_effective``."""
    return np.asarray(sigma_hat, float) @ np.asarray(g_tilde, float), effective_eps(eps_hat, eps_prime)


def direction_error(d, g, sigma) -> float:
    """``||d - Sigma g||_* / ||Sigma g||_*`` in the norm ``u^T Sigma^{-1} u``."""
    target = sigma @ g
    r = d - target
    return math.sqrt(float(r @ np.linalg.solve(sigma, r)) / float(g @ target))


# ---------------------------------------------------------------------------
# the short-step interior point method


class ProximityError(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class ExactOracle:
    pass


@dataclass(frozen=True)
class Sampled:
    N: int | None = None  # None: auto-tune
    seed: int = 0
    n_chains: int = 1000
    thin: int = 5
    tune_level: float = 1 / 32
    N_start: int = 2000
    N_max: int = 32000


@dataclass
class IpmConfig:
    theta_hat: np.ndarray
    domain: Box
    eta0: float
    x0: np.ndarray | None = None  # defaults to x(eta0)
    delta: float = 0.25
    eps_hat: float = 0.0
    eps_prime: float = 0.0
    eps_bar: float = 1e-3
    vartheta: float | None = None  # defaults to n
    mode: ExactOracle | Sampled = field(default_factory=ExactOracle)
    strict: bool = True

    def __post_init__(self):
        self.theta_hat = np.asarray(self.theta_hat, float)
        if self.vartheta is None:
            self.vartheta = float(self.domain.dim)
        if not (0 < self.delta < 1):
            raise ValueError("delta must lie in (0, 1)")
        if self.eta0 <= 0:
            raise ValueError("eta0 must be positive")

    @property
    def eps(self) -> float:
        return effective_eps(self.eps_hat, self.eps_prime)


def iteration_ceiling(vartheta: float, eta0: float, eps_bar: float) -> int:
    return math.ceil(20 * math.sqrt(vartheta) * math.log(vartheta / (eta0 * eps_bar)))


def iterations_needed(vartheta: float, eta0: float, eps_bar: float) -> int:
    """Smallest ``k`` with ``(1 + 1/(16 sqrt(vartheta)))^k >= vartheta / (eta0 eps_bar)``."""
    r = vartheta / (eta0 * eps_bar)
    if r <= 1:
        return 0
    k = math.ceil(math.log(r) / math.log1p(1 / (16 * math.sqrt(vartheta))))
    while (1 + 1 / (16 * math.sqrt(vartheta))) ** k < r:
        k += 1
    return k


@dataclass
class IpmRecord:
    k: int
    eta: float
    x: np.ndarray
    x_central: np.ndarray
    proximity: float  # ||x_k - x(eta_k)||_{x(eta_k)}
    direction_error: float
    eps_effective: float
    gap_bound: float
    N: int | None = None
    tuned: bool | None = None
    path_shift: float = float("nan")  # ||x(eta_{k+1}) - x(eta_k)||_{x(eta_k)}
    next_in_old_metric: float = float("nan")  # ||x_{k+1} - x(eta_{k+1})||_{x(eta_k)}


@dataclass
class IpmTrace:
    records: list = field(default_factory=list)
    x_final: np.ndarray | None = None
    eta_final: float | None = None
    final_proximity: float | None = None
    gap: float | None = None
    ceiling: int | None = None
    gamma: float | None = None
    delta: float | None = None
    gap_bound: float | None = None  # (vartheta + sqrt(vartheta) proximity) / eta at exit

    @property
    def iterations(self) -> int:
        return len(self.records)

    def max_proximity(self) -> float:
        vals = [r.proximity for r in self.records]
        if self.final_proximity is not None:
            vals.append(self.final_proximity)
        return max(vals) if vals else float("nan")

    def violations(self) -> list[int]:
        """Iterations whose proximity exceeded ``delta/2``."""
        return [r.k for r in self.records if r.proximity > self.delta / 2]

    def conversion_holds(self, tol: float = 1e-12) -> bool:
        """The self-concordance metric conversion on every logged step."""
        recs = self.records
        for r, nxt in zip(recs, recs[1:] + [None]):
            new = nxt.proximity if nxt is not None else self.final_proximity
            if new is None or not r.path_shift < 1:
                continue
            if new > r.next_in_old_metric / (1 - r.path_shift) + tol:
                return False
        return True

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for r in self.records:
                row = {
                    "k": r.k,
                    "eta": r.eta,
                    "x": r.x.tolist(),
                    "x_central": r.x_central.tolist(),
                    "proximity": r.proximity,
                    "direction_error": r.direction_error,
                    "eps_effective": r.eps_effective,
                    "gap_bound": r.gap_bound,
                    "N": r.N,
                    "tuned": r.tuned,
                }
                fh.write(json.dumps(row) + "\n")


def _local_norm(v, sigma) -> float:
    return math.sqrt(float(v @ np.linalg.solve(sigma, v)))


def autotune_covariance(chains: HitAndRun, mode: Sampled, N_prev: int | None = None):
    """Double ``N`` until two independent batches agree to ``mode.tune_level``; returns the pooled estimate."""
    N = max(mode.N_start, N_prev or 0)
    while True:
        first, second = chains.draw(N, mode.thin), chains.draw(N, mode.thin)
        ok = sandwich_check(empirical_covariance(second).sigma, empirical_covariance(first).sigma, mode.tune_level)
        if ok or N >= mode.N_max:
            return empirical_covariance(np.concatenate([first, second])), N, ok
        N *= 2


def ipm_run(config: IpmConfig) -> IpmTrace:
    """Run the short-step method, auditing proximity to the exact central path every iteration.

    Raises :class:`ProximityError` (with the trace) when proximity exceeds ``delta/2``
    and ``config.strict`` is set, and :class:`DomainError` on leaving the interior.
    """
    dom, th = config.domain, config.theta_hat
    n = dom.dim
    if th.size != n:
        raise ValueError("theta_hat has the wrong dimension")
    if config.eps > 1 / 32:
        raise GateError("eps_effective <= 1/32", config.eps)
    sampled = isinstance(config.mode, Sampled)
    gamma = newton_step_params(config.delta, config.eps).gamma
    vt = config.vartheta
    half = config.delta / 2
    eta = config.eta0
    x = central_path_point(dom, th, eta) if config.x0 is None else np.asarray(config.x0, float)
    trace = IpmTrace(ceiling=iteration_ceiling(vt, config.eta0, config.eps_bar), gamma=gamma, delta=config.delta)

    xc = central_path_point(dom, th, eta)
    sigma = boltzmann_cov(dom, eta * th)
    prox = _local_norm(x - xc, sigma)
    if prox > half + 1e-12:
        raise ValueError(f"start proximity {prox} exceeds delta/2")

    chains = None
    N = tuned = None
    if sampled:
        m = config.mode
        chains = HitAndRun.start(BoltzmannModel(dom, eta * th), x, m.n_chains, m.seed)
        chains.step(50 * n)
    theta_warm = sigma_prev = None
    k = 0
    while vt / eta > config.eps_bar:
        g_exact = entropic_gradient(x, eta, th, dom)
        if sampled:
            chains.theta = eta * th
            if sigma_prev is not None:
                chains.shape = np.linalg.cholesky(sigma_prev)
            chains.step(50 * n)
            if config.mode.N is None:
                est, N, tuned = autotune_covariance(chains, config.mode, N)
            else:
                N, tuned = config.mode.N, None
                est = empirical_covariance(chains.draw(N, config.mode.thin))
            sigma_hat = sigma_prev = est.sigma
            if config.eps_prime > 0:
                g, theta_warm = approx_entropic_gradient(x, eta, th, dom, sigma_hat, config.eps_prime, theta_warm)
            else:
                g = g_exact
        else:
            sigma_hat = sigma
            g = g_exact
        eps_eff = config.eps
        d = sigma_hat @ g
        err = direction_error(d, g_exact, sigma) if float(g_exact @ sigma @ g_exact) > 1e-24 else float("nan")
        x_next = x - gamma * d
        if not dom.contains(x_next):
            raise DomainError(f"iterate {k + 1} left the interior at {x_next}")
        eta_next = (1 + 1 / (16 * math.sqrt(vt))) * eta
        xc_next = central_path_point(dom, th, eta_next)
        rec = IpmRecord(
            k, eta, x.copy(), xc.copy(), prox, err, eps_eff, vt / eta, N, tuned,
            path_shift=_local_norm(xc_next - xc, sigma),
            next_in_old_metric=_local_norm(x_next - xc_next, sigma),
        )
        trace.records.append(rec)
        x, eta, xc = x_next, eta_next, xc_next
        sigma = boltzmann_cov(dom, eta * th)
        prox = _local_norm(x - xc, sigma)
        k += 1
        if prox > half and config.strict:
            trace.final_proximity = prox
            trace.x_final, trace.eta_final = x, eta
            raise ProximityError(f"proximity {prox:.4g} > {half} at iteration {k}", trace)
    trace.x_final, trace.eta_final, trace.final_proximity = x, eta, prox
    vmin = float(np.sum(np.where(th > 0, th * dom.lo, th * dom.hi)))
    trace.gap = float(th @ x) - vmin
    trace.gap_bound = (vt + math.sqrt(vt) * prox) / eta
    return trace
