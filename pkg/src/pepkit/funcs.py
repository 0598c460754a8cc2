"""Function oracles and sampled membership checks for smooth strongly convex and self-concordant classes.

All checks are falsification tests: they evaluate an inequality at given points
and return ``lhs - rhs``, so a negative value beyond rounding disproves membership.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import MetricOperator, as_sym

KAPPA_MAX = 1 - 1e-8


class DomainError(ValueError):
    pass


# ---------------------------------------------------------------------------
# domains


class AllSpace:
    def contains(self, x) -> bool:
        return bool(np.all(np.isfinite(x)))

    def max_step(self, x, d) -> float:
        """Supremum of ``t >= 0`` with ``x + t d`` in the domain."""
        return np.inf


@dataclass(frozen=True)
class Ball:
    center: np.ndarray
    radius: float

    def contains(self, x) -> bool:
        return bool(np.linalg.norm(np.asarray(x) - self.center) < self.radius)

    def max_step(self, x, d) -> float:
        u = np.asarray(x) - self.center
        a, b, c = d @ d, 2 * u @ d, u @ u - self.radius**2
        if a == 0:
            return np.inf
        return float((-b + np.sqrt(max(b * b - 4 * a * c, 0.0))) / (2 * a))


@dataclass(frozen=True)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo, hi = np.asarray(self.lo, float), np.asarray(self.hi, float)
        if lo.shape != hi.shape or np.any(lo >= hi):
            raise ValueError("box needs lo < hi componentwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def contains(self, x) -> bool:
        x = np.asarray(x)
        return bool(np.all(x > self.lo) and np.all(x < self.hi))

    def max_step(self, x, d) -> float:
        x, d = np.asarray(x), np.asarray(d)
        t = np.inf
        pos, neg = d > 0, d < 0
        if np.any(pos):
            t = min(t, float(np.min((self.hi[pos] - x[pos]) / d[pos])))
        if np.any(neg):
            t = min(t, float(np.min((self.lo[neg] - x[neg]) / d[neg])))
        return t


# ---------------------------------------------------------------------------
# oracles


class FunctionOracle:
    """Value, gradient and Hessian in the Euclidean reference inner product.

    Subclasses set ``dim`` and ``domain`` and may declare ``mu``/``L`` or a barrier
    parameter ``theta``.
    """

    dim: int
    domain = AllSpace()
    mu: float | None = None
    L: float | None = None
    theta: float | None = None

    def value(self, x) -> float:
        raise NotImplementedError

    def grad(self, x) -> np.ndarray:
        raise NotImplementedError

    def hess(self, x) -> np.ndarray:
        raise NotImplementedError

    @property
    def self_concordant(self) -> bool:
        return self.theta is not None

    def require(self, *points) -> None:
        for x in points:
            if not self.domain.contains(x):
                raise DomainError(f"point {np.asarray(x)} outside the domain")


class QuadraticFunction(FunctionOracle):
    """``f(x) = x^T Q x / 2 + c^T x`` with ``Q`` positive definite."""

    def __init__(self, Q, c=None):
        self.Q = as_sym(Q)
        self.dim = self.Q.shape[0]
        self.c = np.zeros(self.dim) if c is None else np.asarray(c, float)
        w = np.linalg.eigvalsh(self.Q)
        if w[0] <= 0:
            raise ValueError("Q must be positive definite")
        self.mu, self.L = float(w[0]), float(w[-1])

    @classmethod
    def with_spectrum(cls, eigs, rng: np.random.Generator | None = None, c=None) -> "QuadraticFunction":
        """Random rotation of ``diag(eigs)`` (identity rotation without ``rng``)."""
        eigs = np.asarray(eigs, float)
        if rng is None:
            return cls(np.diag(eigs), c)
        U, _ = np.linalg.qr(rng.normal(size=(eigs.size, eigs.size)))
        return cls((U * eigs) @ U.T, c)

    @property
    def minimizer(self) -> np.ndarray:
        return -np.linalg.solve(self.Q, self.c)

    @property
    def min_value(self) -> float:
        return self.value(self.minimizer)

    def value(self, x) -> float:
        x = np.asarray(x, float)
        return float(0.5 * x @ self.Q @ x + self.c @ x)

    def grad(self, x) -> np.ndarray:
        return self.Q @ np.asarray(x, float) + self.c

    def hess(self, x) -> np.ndarray:
        return self.Q.copy()


class LogBarrierBox(FunctionOracle):
    """``-sum log(x - a) - sum log(b - x)`` on the open box ``(a, b)``; a ``2n``-barrier."""

    def __init__(self, a, b):
        self.domain = Box(a, b)
        self.a, self.b = self.domain.lo, self.domain.hi
        self.dim = self.a.size
        self.theta = 2.0 * self.dim

    def value(self, x) -> float:
        x = np.asarray(x, float)
        if not self.domain.contains(x):
            return np.inf
        return float(-np.sum(np.log(x - self.a)) - np.sum(np.log(self.b - x)))

    def grad(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        self.require(x)
        return -1.0 / (x - self.a) + 1.0 / (self.b - x)

    def hess(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        self.require(x)
        return np.diag(1.0 / (x - self.a) ** 2 + 1.0 / (self.b - x) ** 2)


def fd_gradient_error(oracle: FunctionOracle, x, h: float | None = None) -> float:
    """Relative error between ``grad`` and central differences of ``value``."""
    x = np.asarray(x, float)
    h = 1e-6 * (1 + np.linalg.norm(x)) if h is None else h
    g = oracle.grad(x)
    fd = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        fd[i] = (oracle.value(x + e) - oracle.value(x - e)) / (2 * h)
    return float(np.linalg.norm(fd - g) / max(1.0, np.linalg.norm(g)))


# ---------------------------------------------------------------------------
# membership inequalities


def _gradients(oracle, x, y, metric):
    oracle.require(x, y)
    gx, gy = oracle.grad(x), oracle.grad(y)
    if metric is not None:
        gx, gy = metric.solve(gx), metric.solve(gy)
    return np.asarray(x, float), np.asarray(y, float), gx, gy


def _ip(metric, u, v) -> float:
    return float(u @ v) if metric is None else metric.inner(u, v)


def _check_kappa(mu, L):
    if not (0 < mu < L):
        raise ValueError("need 0 < mu < L")
    if mu / L >= KAPPA_MAX:
        raise ValueError("mu/L too close to 1; use quadratic_limit_residual")


def _interp_rhs(dg, dx, mu, L, metric) -> float:
    # dg = g(x) - g(y), dx = x - y
    return (_ip(metric, dg, dg) / L + mu * _ip(metric, dx, dx) - 2 * mu / L * _ip(metric, dg, dx)) / (1 - mu / L)


def check_condition_d(oracle, x, y, mu, L, metric: MetricOperator | None = None) -> float:
    """Gradient form of the two-sided smooth strongly convex inequality, ``lhs - rhs``."""
    _check_kappa(mu, L)
    x, y, gx, gy = _gradients(oracle, x, y, metric)
    return _ip(metric, gx - gy, x - y) - _interp_rhs(gx - gy, x - y, mu, L, metric)


def check_condition_f(oracle, x, y, mu, L, metric: MetricOperator | None = None) -> float:
    """Function-value form, valid when the domain is the whole space, ``lhs - rhs``."""
    _check_kappa(mu, L)
    if not isinstance(oracle.domain, AllSpace):
        raise DomainError("the function-value condition is only claimed on the whole space")
    x, y, gx, gy = _gradients(oracle, x, y, metric)
    lhs = oracle.value(y) - oracle.value(x) - _ip(metric, gx, y - x)
    return lhs - 0.5 * _interp_rhs(gx - gy, x - y, mu, L, metric)


def check_smoothness_c(oracle, x, y, L, metric: MetricOperator | None = None) -> float:
    """Co-coercivity ``<g(y)-g(x), y-x> - ||g(y)-g(x)||^2 / L``."""
    x, y, gx, gy = _gradients(oracle, x, y, metric)
    return _ip(metric, gy - gx, y - x) - _ip(metric, gy - gx, gy - gx) / L


def quadratic_limit_residual(oracle, x, y, mu, metric: MetricOperator | None = None) -> float:
    """``<g(x)-g(y), x-y> - mu ||x-y||^2``, the exact identity for ``f = mu ||x||^2 / 2`` when ``mu = L``."""
    x, y, gx, gy = _gradients(oracle, x, y, metric)
    return _ip(metric, gx - gy, x - y) - mu * _ip(metric, x - y, x - y)


# ---------------------------------------------------------------------------
# self-concordance


def intrinsic_metric(oracle: FunctionOracle, x) -> MetricOperator:
    oracle.require(x)
    try:
        return MetricOperator(oracle.hess(x))
    except ValueError as exc:
        raise ValueError(f"Hessian is not positive definite at {x}") from exc


def intrinsic_norm(oracle: FunctionOracle, x, u, reference: MetricOperator | None = None) -> float:
    """``||u||_x`` computed from the Hessian expressed in ``reference``.

    In reference ``B`` the Hessian operator is ``B^{-1} H`` and the norm is
    ``sqrt(<u, B^{-1} H u>_B)``, which does not depend on ``B``.
    """
    H = oracle.hess(x)
    u = np.asarray(u, float)
    if reference is None:
        return float(np.sqrt(u @ H @ u))
    return float(np.sqrt(max(reference.inner(u, reference.solve(H @ u)), 0.0)))


def sc_mu_L(delta: float) -> tuple[float, float]:
    """Strong convexity and smoothness constants of a self-concordant function on an intrinsic ball of radius ``delta``."""
    if not (0 < delta < 1):
        raise ValueError("need 0 < delta < 1")
    return (1 - delta) ** 2, 1 / (1 - delta) ** 2


def relative_hessian_eigs(oracle: FunctionOracle, x, y) -> np.ndarray:
    """Eigenvalues of ``H(x)^{-1/2} H(y) H(x)^{-1/2}``."""
    S = intrinsic_metric(oracle, x).inv_sqrt
    return np.linalg.eigvalsh(S @ oracle.hess(y) @ S)


def sample_intrinsic_ball(oracle: FunctionOracle, x, delta, n, rng: np.random.Generator) -> np.ndarray:
    """Points ``y`` with ``||y - x||_x < delta``: uniform intrinsic direction, radius uniform on ``[0, delta)``."""
    S = intrinsic_metric(oracle, x).inv_sqrt
    u = rng.normal(size=(n, len(x)))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    r = rng.uniform(0, delta, size=(n, 1))
    return np.asarray(x) + (r * u) @ S


@dataclass
class SandwichResult:
    mu: float
    L: float
    verified: bool
    min_eig: float
    max_eig: float
    n_points: int


def sc_sandwich(oracle, x, delta, n_samples=200, rng=None, tol=1e-8) -> SandwichResult:
    """Check the relative-Hessian bounds ``[(1-delta)^2, (1-delta)^-2]`` on sampled intrinsic-ball points."""
    mu, L = sc_mu_L(delta)
    oracle.require(x)
    rng = np.random.default_rng(0) if rng is None else rng
    lo, hi = np.inf, -np.inf
    for y in sample_intrinsic_ball(oracle, x, delta, n_samples, rng):
        w = relative_hessian_eigs(oracle, x, y)
        lo, hi = min(lo, w[0]), max(hi, w[-1])
    return SandwichResult(mu, L, bool(lo >= mu - tol and hi <= L + tol), float(lo), float(hi), n_samples)


def barrier_parameter_check(oracle: FunctionOracle, points) -> float:
    """``max g^T H^{-1} g`` over the points, a lower estimate of the barrier parameter."""
    best = 0.0
    for x in points:
        g = oracle.grad(x)
        best = max(best, float(g @ np.linalg.solve(oracle.hess(x), g)))
    return best


class _WhitenedDomain:
    def __init__(self, domain, T):
        self.domain, self.T = domain, T

    def contains(self, u) -> bool:
        return self.domain.contains(self.T @ np.asarray(u))

    def max_step(self, u, d) -> float:
        return self.domain.max_step(self.T @ np.asarray(u), self.T @ np.asarray(d))


class WhitenedOracle(FunctionOracle):
    """``u -> f(T u)``; with ``T = H(xbar)^{-1/2}`` the Euclidean geometry of ``u`` is the intrinsic geometry at ``xbar``."""

    def __init__(self, oracle: FunctionOracle, T):
        self.base, self.T = oracle, np.asarray(T, float)
        self.dim = self.T.shape[1]
        self.domain = oracle.domain if isinstance(oracle.domain, AllSpace) else _WhitenedDomain(oracle.domain, self.T)
        self.theta = oracle.theta

    def value(self, u) -> float:
        return self.base.value(self.T @ np.asarray(u))

    def grad(self, u) -> np.ndarray:
        return self.T.T @ self.base.grad(self.T @ np.asarray(u))

    def hess(self, u) -> np.ndarray:
        return self.T.T @ self.base.hess(self.T @ np.asarray(u)) @ self.T


def whiten(oracle: FunctionOracle, xbar) -> WhitenedOracle:
    return WhitenedOracle(oracle, intrinsic_metric(oracle, xbar).inv_sqrt)
