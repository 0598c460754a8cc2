"""The inexact gradient method ``x+ = x - gamma d`` with ``||d - g|| <= eps ||g||``, with per-step auditing.

Norms, gradients and directions live in a chosen inner product ``<u, v>_B``: the
gradient is ``B^{-1} grad f``.  With ``B`` the Hessian at the current point the
method is an inexact damped Newton method.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .core import MetricOperator
from .funcs import DomainError, FunctionOracle, QuadraticFunction
from .pep import ExactLineSearch, FixedStep

GOLDEN = (math.sqrt(5) - 1) / 2


# metric choices
@dataclass(frozen=True)
class Reference:
    pass


@dataclass(frozen=True)
class IntrinsicAt:
    point: tuple


@dataclass(frozen=True)
class IntrinsicAtMinimizer:
    pass


@dataclass(frozen=True)
class IntrinsicAtIterate:
    pass


# direction modes
@dataclass(frozen=True)
class Exact:
    pass


@dataclass(frozen=True)
class RandomCone:
    seed: int = 0


@dataclass(frozen=True)
class AdversarialWorst:
    target: str = "gradient"  # "gradient", "distance" or "f_gap"
    n_angles: int = 72


@dataclass
class DescentConfig:
    step_rule: ExactLineSearch | FixedStep = field(default_factory=ExactLineSearch)
    eps: float = 0.0
    direction_mode: Exact | RandomCone | AdversarialWorst = field(default_factory=Exact)
    metric: Reference | IntrinsicAt | IntrinsicAtMinimizer | IntrinsicAtIterate = field(default_factory=Reference)
    max_iter: int = 100
    stop: float = 1e-12

    def __post_init__(self):
        if not (0 <= self.eps < 1):
            raise ValueError("eps must lie in [0, 1)")


class DomainExitError(DomainError):
    def __init__(self, iteration: int, point):
        self.iteration = iteration
        self.point = np.asarray(point)
        super().__init__(f"iterate {iteration} left the domain at {self.point}")


# ---------------------------------------------------------------------------
# directions


def _norm(metric: MetricOperator | None, v) -> float:
    return float(np.linalg.norm(v)) if metric is None else metric.norm(v)


def cone_error(d, g, metric: MetricOperator | None = None) -> float:
    """``||d - g|| / ||g||`` in the metric."""
    return _norm(metric, np.asarray(d) - g) / _norm(metric, g)


def _orthonormal_partner(g, v, metric):
    """Unit vector in ``span{g, v}`` orthogonal to ``g`` (any orthogonal unit vector if ``v`` is parallel)."""
    ip = (lambda a, b: float(a @ b)) if metric is None else metric.inner
    gh = g / math.sqrt(ip(g, g))
    cands = [v] if v is not None else []
    cands += list(np.eye(len(g)))
    for c in cands:
        w = c - ip(c, gh) * gh
        nw = math.sqrt(max(ip(w, w), 0.0))
        if nw > 1e-8 * max(1.0, math.sqrt(ip(c, c))):
            return gh, w / nw
    raise ValueError("dimension 1 has no orthogonal direction")


def _golden_max(fun, a, b, tol=1e-10, max_iter=200):
    c, d = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(max_iter):
        if abs(b - a) <= tol * (1 + abs(a) + abs(b)):
            break
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = fun(d)
    return (c, fc) if fc > fd else (d, fd)


def adversarial_direction(g, eps, score, metric=None, partner=None, n_angles=72):
    """Maximize ``score(d)`` over ``d = g + r ||g|| (cos a e1 + sin a e2)``, ``0 <= r <= eps``.

    ``e1`` is ``g`` normalized and ``e2`` completes ``span{g, partner}``.  A grid over
    the angle on the boundary and a few interior radii is refined by golden-section
    search on the angle and then on the radius.
    """
    if eps == 0:
        return np.array(g, float)
    e1, e2 = _orthonormal_partner(np.asarray(g, float), partner, metric)
    gn = _norm(metric, g)

    def make(r, a):
        return g + r * gn * (math.cos(a) * e1 + math.sin(a) * e2)

    def safe(r, a):
        val = score(make(r, a))
        return val if np.isfinite(val) else -np.inf

    step = 2 * math.pi / n_angles
    best = max(((safe(r, a), r, a) for r in (eps, 0.75 * eps, 0.5 * eps) for a in np.arange(n_angles) * step))
    _, r, a = best
    a, _ = _golden_max(lambda t: safe(r, t), a - step, a + step)
    r, _ = _golden_max(lambda t: safe(t, a), max(0.0, r - 0.25 * eps), min(eps, r + 0.25 * eps))
    a, _ = _golden_max(lambda t: safe(r, t), a - step / 4, a + step / 4)
    return make(r, a)


def direction(g, eps, mode=Exact(), metric=None, rng=None, score=None, partner=None):
    """A direction ``d`` with ``||d - g|| <= eps ||g||`` in the metric."""
    g = np.asarray(g, float)
    gn = _norm(metric, g)
    if gn == 0:
        raise ValueError("zero gradient: the method has converged")
    if eps == 0 or isinstance(mode, Exact):
        return g.copy()
    if isinstance(mode, RandomCone):
        rng = np.random.default_rng(mode.seed) if rng is None else rng
        u = rng.normal(size=g.size)
        if metric is not None:
            u = metric.inv_sqrt @ u
        u /= _norm(metric, u)
        r = eps * gn * rng.uniform() ** (1 / g.size)
        return g + r * u
    if isinstance(mode, AdversarialWorst):
        if score is None:
            raise ValueError("adversarial directions need a score function")
        return adversarial_direction(g, eps, score, metric, partner, mode.n_angles)
    raise TypeError(f"unknown direction mode {mode!r}")


# ---------------------------------------------------------------------------
# steps


def exact_line_search(oracle: FunctionOracle, x, d, rtol: float = 1e-10) -> float:
    """``argmin_{gamma >= 0} f(x - gamma d)``.

    Quadratics use the closed form; otherwise the root of the directional
    derivative is bracketed by doubling (inside the domain) and found with Brent's method.
    """
    x, d = np.asarray(x, float), np.asarray(d, float)
    slope = float(oracle.grad(x) @ d)
    if slope <= 0:
        raise ValueError("d is not a descent direction")
    if isinstance(oracle, QuadraticFunction):
        return slope / float(d @ oracle.Q @ d)

    def phi(t):
        return float(oracle.grad(x - t * d) @ d)

    t_max = oracle.domain.max_step(x, -d)
    hi = min(slope / max(float(d @ oracle.hess(x) @ d), 1e-300), 0.5 * t_max)
    lo = 0.0
    for _ in range(200):
        if phi(hi) < 0:
            break
        lo, hi = hi, (min(2 * hi, 0.5 * (hi + t_max)) if np.isfinite(t_max) else 2 * hi)
    else:
        raise RuntimeError("line search failed to bracket a minimizer")
    return brentq(phi, lo, hi, xtol=1e-300, rtol=max(rtol, 1e-15), maxiter=500)


def orthogonality_residual(oracle, x1, d) -> float:
    g1 = oracle.grad(x1)
    return abs(float(g1 @ d)) / max(np.linalg.norm(g1) * np.linalg.norm(d), 1e-300)


# ---------------------------------------------------------------------------
# runs


@dataclass
class StepRecord:
    k: int
    x: np.ndarray
    f: float
    grad_norm: float
    d: np.ndarray
    gamma: float
    cone_error: float
    ratio_f: float
    ratio_g: float
    ratio_x: float
    orthogonality: float


@dataclass
class DescentTrace:
    steps: list = field(default_factory=list)
    x_final: np.ndarray | None = None
    converged: bool = False

    def max_ratio(self, kind: str) -> float:
        vals = [getattr(s, f"ratio_{kind}") for s in self.steps]
        vals = [v for v in vals if np.isfinite(v)]
        return max(vals) if vals else float("nan")

    def rows(self) -> list[dict]:
        return [
            {
                "k": s.k,
                "f": s.f,
                "grad_norm": s.grad_norm,
                "gamma": s.gamma,
                "cone_error": s.cone_error,
                "ratio_f": s.ratio_f,
                "ratio_g": s.ratio_g,
                "ratio_x": s.ratio_x,
                "orthogonality": s.orthogonality,
            }
            for s in self.steps
        ]

    def to_csv(self, path) -> None:
        rows = self.rows()
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["k"], lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            for s, r in zip(self.steps, self.rows()):
                fh.write(json.dumps(dict(r, x=s.x.tolist(), d=s.d.tolist())) + "\n")


def _metric_for(config: DescentConfig, oracle, x, x_star):
    m = config.metric
    if isinstance(m, Reference):
        return None
    if isinstance(m, IntrinsicAt):
        return MetricOperator(oracle.hess(np.asarray(m.point, float)))
    if isinstance(m, IntrinsicAtMinimizer):
        if x_star is None:
            raise ValueError("IntrinsicAtMinimizer needs the minimizer")
        return MetricOperator(oracle.hess(x_star))
    if isinstance(m, IntrinsicAtIterate):
        return MetricOperator(oracle.hess(x))
    raise TypeError(f"unknown metric {m!r}")


def _take_step(oracle, x, d, step_rule):
    if isinstance(step_rule, ExactLineSearch):
        gamma = exact_line_search(oracle, x, d)
    else:
        gamma = step_rule.gamma
    return gamma, x - gamma * d


def _ratios(oracle, x0, x1, metric, x_star, f_star):
    g0, g1 = oracle.grad(x0), oracle.grad(x1)
    if metric is not None:
        g0, g1 = metric.solve(g0), metric.solve(g1)
    rg = _norm(metric, g1) / _norm(metric, g0)
    rx = rf = float("nan")
    if x_star is not None:
        den = _norm(metric, x0 - x_star)
        rx = _norm(metric, x1 - x_star) / den if den > 0 else float("nan")
    if f_star is not None:
        if isinstance(oracle, QuadraticFunction) and f_star == oracle.min_value:
            # the quadratic form avoids cancellation in f - f_star
            e0, e1 = x0 - oracle.minimizer, x1 - oracle.minimizer
            den, num, floor = e0 @ oracle.Q @ e0, e1 @ oracle.Q @ e1, 0.0
        else:
            den, num = oracle.value(x0) - f_star, oracle.value(x1) - f_star
            # below this floor the gap is rounding noise in f
            floor = 64 * np.finfo(float).eps * max(1.0, abs(f_star))
        rf = float(num / den) if den > floor else float("nan")
    return rf, rg, rx


def _score(oracle, x, metric, step_rule, target, x_star, f_star):
    def score(d):
        try:
            _, x1 = _take_step(oracle, x, d, step_rule)
        except (ValueError, RuntimeError):
            return -np.inf
        if not oracle.domain.contains(x1):
            return -np.inf
        rf, rg, rx = _ratios(oracle, x, x1, metric, x_star, f_star)
        return {"gradient": rg, "distance": rx, "f_gap": rf}[target]

    return score


def run(oracle: FunctionOracle, x0, config: DescentConfig, x_star=None, f_star=None) -> DescentTrace:
    """Iterate until the gradient norm drops below ``config.stop`` or ``max_iter`` steps.

    For quadratics ``x_star``/``f_star`` default to the exact minimizer and value.
    Leaving the domain raises :class:`DomainExitError`.
    """
    x = np.asarray(x0, float)
    oracle.require(x)
    if isinstance(oracle, QuadraticFunction):
        x_star = oracle.minimizer if x_star is None else x_star
        f_star = oracle.min_value if f_star is None else f_star
    rng = np.random.default_rng(config.direction_mode.seed) if isinstance(config.direction_mode, RandomCone) else None
    trace = DescentTrace()
    for k in range(config.max_iter):
        metric = _metric_for(config, oracle, x, x_star)
        g = oracle.grad(x)
        if metric is not None:
            g = metric.solve(g)
        gn = _norm(metric, g)
        if gn <= config.stop:
            trace.converged = True
            break
        score = None
        partner = None
        if isinstance(config.direction_mode, AdversarialWorst):
            score = _score(oracle, x, metric, config.step_rule, config.direction_mode.target, x_star, f_star)
            H = oracle.hess(x)
            partner = H @ g if metric is None else metric.solve(H @ g)
        d = direction(g, config.eps, config.direction_mode, metric, rng, score, partner)
        gamma, x1 = _take_step(oracle, x, d, config.step_rule)
        if not oracle.domain.contains(x1):
            raise DomainExitError(k + 1, x1)
        rf, rg, rx = _ratios(oracle, x, x1, metric, x_star, f_star)
        orth = orthogonality_residual(oracle, x1, d) if isinstance(config.step_rule, ExactLineSearch) else float("nan")
        trace.steps.append(
            StepRecord(k, x.copy(), oracle.value(x), gn, d, gamma, cone_error(d, g, metric), rf, rg, rx, orth)
        )
        x = x1
    else:
        g = oracle.grad(x)
        metric = _metric_for(config, oracle, x, x_star)
        trace.converged = _norm(metric, g if metric is None else metric.solve(g)) <= config.stop
    trace.x_final = x
    return trace


# ---------------------------------------------------------------------------
# one-step sharpness on two-dimensional quadratics


def worst_case_one_step(mu, L, eps, step_rule, target="gradient", n_starts=90) -> tuple[float, np.ndarray]:
    """Largest one-step ratio found on ``diag(mu, L)`` over starting angle and adversarial direction.

    The starting point is ``(cos t, sin t)``; ratios are scale invariant, so the angle
    is the only free start parameter.  A grid over ``t`` is refined by golden section.
    """
    q = QuadraticFunction(np.diag([mu, L]))
    mode = AdversarialWorst(target)
    x_star, f_star = np.zeros(2), 0.0

    def one(t):
        x = np.array([math.cos(t), math.sin(t)])
        score = _score(q, x, None, step_rule, target, x_star, f_star)
        g = q.grad(x)
        d = direction(g, eps, mode, None, None, score, q.Q @ g)
        return score(d)

    grid = np.linspace(0, math.pi / 2, n_starts + 1)[1:-1]
    vals = [one(t) for t in grid]
    i = int(np.argmax(vals))
    h = grid[1] - grid[0]
    t, v = _golden_max(one, max(grid[i] - h, 1e-9), min(grid[i] + h, math.pi / 2 - 1e-9), tol=1e-8)
    if v < vals[i]:
        t, v = grid[i], vals[i]
    return float(v), np.array([math.cos(t), math.sin(t)])
