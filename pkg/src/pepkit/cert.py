"""Closed-form worst-case rates and the multiplier certificates behind them.

A certificate is a set of nonnegative multipliers such that the weighted sum of
the method's constraints equals ``(rate * budget) - (progress measure)`` minus a
sum of squares.  Verification evaluates the difference of both sides at
arbitrary points; because the reformulation is a polynomial identity in the
Gram entries, the residual must vanish everywhere, feasible or not.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .core import DEFAULT_TOL, Tolerances, is_psd

FAMILIES = ("els_gradient", "els_distance", "fixed_gradient", "fixed_distance", "fixed_function_value")


class GateError(ValueError):
    """A parameter lies outside the region where a rate or certificate is valid."""

    def __init__(self, condition: str, value: float | None = None):
        self.condition = condition
        self.value = value
        msg = condition if value is None else f"{condition} (value {value:.6g})"
        super().__init__(msg)


class Rates(NamedTuple):
    f_rate: float  # ratio of function-value gaps
    g_rate: float  # ratio of gradient norms
    x_rate: float  # ratio of distances to the minimizer


@dataclass(frozen=True)
class RateQuery:
    kappa: float
    eps: float = 0.0
    gamma: float | None = None
    delta: float | None = None
    L: float = 1.0

    @property
    def mu(self) -> float:
        return self.kappa * self.L


def _check_kappa(kappa: float, allow_one: bool = True) -> None:
    if not (0 < kappa <= 1):
        raise GateError("0 < kappa <= 1", kappa)
    if not allow_one and kappa >= 1 - 1e-8:
        raise GateError("kappa < 1 (the certificate divides by 1 - kappa)", kappa)


def els_eps_max(kappa: float) -> float:
    return 2 * math.sqrt(kappa) / (1 + kappa)


def rate_els(kappa: float, eps: float) -> Rates:
    """One-step rates of the eps-inexact gradient method with exact line search."""
    _check_kappa(kappa)
    if not (0 <= eps <= els_eps_max(kappa)):
        raise GateError("0 <= eps <= 2 sqrt(kappa)/(1+kappa)", eps)
    g = eps + math.sqrt(1 - eps**2) * (1 - kappa) / (2 * math.sqrt(kappa))
    f = ((1 - kappa + eps * (1 + kappa)) / (1 + kappa + eps * (1 - kappa))) ** 2
    return Rates(f, g, g)


def fixed_gamma_max(mu: float, L: float, eps: float) -> float:
    return (2 * mu - eps * (L + mu)) / ((1 - eps) * mu * (L + mu))


def rho_fixed(mu: float, L: float, eps: float, gamma: float) -> float:
    return 1 - (1 - eps) * mu * gamma


def rate_fixed(mu: float, L: float, eps: float, gamma: float) -> Rates:
    """One-step rates of the eps-inexact gradient method with fixed step ``gamma``."""
    if not (0 < mu <= L):
        raise GateError("0 < mu <= L")
    if not (0 <= eps <= 2 * mu / (L + mu)):
        raise GateError("0 <= eps <= 2 mu/(L+mu)", eps)
    gmax = fixed_gamma_max(mu, L, eps)
    if not (0 <= gamma <= gmax * (1 + 1e-12)):
        raise GateError("0 <= gamma <= (2mu - eps(L+mu))/((1-eps) mu (L+mu))", gamma)
    rho = rho_fixed(mu, L, eps, gamma)
    return Rates(rho**2, rho, rho)


class NewtonStep(NamedTuple):
    gamma: float
    kappa_delta: float
    rate: float


def newton_step_params(delta: float, eps: float) -> NewtonStep:
    """Step length and contraction of an inexact Newton step inside the intrinsic ball of radius ``delta``."""
    if not (0 < delta < 1):
        raise GateError("0 < delta < 1", delta)
    k = (1 - delta) ** 4
    if not (0 <= eps <= 2 * k / (1 + k)):
        raise GateError("0 <= eps <= 2(1-delta)^4/(1+(1-delta)^4)", eps)
    gamma = (2 * k - eps * (1 + k)) / ((1 - eps) * (1 - delta) ** 2 * (k + 1))
    return NewtonStep(gamma, k, (1 - k) / (1 + k) + eps)


NEWTON_KAPPA_MIN = (6 - math.sqrt(32)) / 2  # where (1-k)/(1+k) = 1/sqrt(2)


def newton_delta_max() -> float:
    """Largest ``delta`` with ``kappa_delta >= (6 - sqrt(32))/2`` (about 0.3564)."""
    return 1 - NEWTON_KAPPA_MIN**0.25


# ---------------------------------------------------------------------------
# certificates


@dataclass
class Certificate:
    family: str
    params: dict
    multipliers: dict
    rate: float
    S: np.ndarray | None = None
    dropped: list = field(default_factory=list)

    def check(self, tol: float = DEFAULT_TOL.identity_tol) -> None:
        """Raise unless all multipliers are nonnegative and S is PSD (singular for ELS families)."""
        for name, value in self.multipliers.items():
            if value < -tol:
                raise GateError(f"multiplier {name} >= 0", value)
        if self.S is not None:
            if not is_psd(self.S, tol):
                raise GateError("S is PSD", float(np.linalg.eigvalsh(self.S)[0]))
            if self.family.startswith("els") and abs(np.linalg.det(self.S)) > tol:
                raise GateError("det S = 0", float(np.linalg.det(self.S)))


def els_sign_conditions(kappa: float, eps: float) -> dict:
    """Quantities that must be nonnegative for the exact-line-search certificates.

    Evaluated without any admissibility gate, so the boundaries can be probed.
    """
    r = math.sqrt(kappa * (1 - eps**2))
    s22 = (2 * r - eps * (1 - kappa)) / ((1 - eps**2) * (1 - kappa) + 2 * eps * r)
    lam0 = (1 - kappa) * (
        1 - 2 * eps**2 + eps * math.sqrt(1 - eps**2) / (2 * math.sqrt(kappa) * (1 - kappa)) * (-1 - kappa**2 + 6 * kappa)
    )
    return {"s22": s22, "lambda0_distance": lam0}


def _els_S(kappa: float, eps: float) -> np.ndarray:
    r = math.sqrt(kappa * (1 - eps**2))
    s11 = 1.5 * eps - eps * (kappa + 1 / kappa) / 4 + (1 - kappa) / (2 * r) - eps**2 * (1 - kappa) / r
    s22 = (2 * r - eps * (1 - kappa)) / ((1 - eps**2) * (1 - kappa) + 2 * eps * r)
    s21 = eps * (1 - kappa) / (2 * r) - 1
    return np.array([[s11, s21], [s21, s22]])


def _els_gate(kappa: float, eps: float) -> None:
    _check_kappa(kappa, allow_one=False)
    if not (0 <= eps <= els_eps_max(kappa)):
        raise GateError("0 <= eps <= 2 sqrt(kappa)/(1+kappa)", eps)


def els_gradient_certificate(kappa: float, eps: float, L: float = 1.0) -> Certificate:
    _els_gate(kappa, eps)
    mu = kappa * L
    lam = 2 * eps * math.sqrt(kappa) / (math.sqrt(1 - eps**2) * (1 - kappa)) + 1
    S = np.zeros((2, 2)) if eps == els_eps_max(kappa) else _els_S(kappa, eps)
    return Certificate(
        family="els_gradient",
        params={"kappa": kappa, "eps": eps, "L": L, "mu": mu},
        multipliers={"lambda": lam, "interp": (L - mu) * lam, "linesearch": L + mu},
        rate=rate_els(kappa, eps).g_rate,
        S=S,
    )


def els_distance_certificate(kappa: float, eps: float, L: float = 1.0) -> Certificate:
    _els_gate(kappa, eps)
    mu = kappa * L
    lam0 = els_sign_conditions(kappa, eps)["lambda0_distance"] / mu
    S = np.zeros((2, 2)) if eps == els_eps_max(kappa) else _els_S(kappa, eps) / (L * mu)
    return Certificate(
        family="els_distance",
        params={"kappa": kappa, "eps": eps, "L": L, "mu": mu},
        multipliers={"lambda0": lam0, "lambda1": 1 / mu - 1 / L, "lambda2": 1 / mu + 1 / L},
        rate=rate_els(kappa, eps).x_rate,
        S=S,
    )


def fixed_sign_conditions(family: str, mu: float, L: float, eps: float, gamma: float) -> dict:
    """Coefficient signs required by a fixed-step certificate, without gating."""
    rho = rho_fixed(mu, L, eps, gamma)
    span = 2 - (1 - eps) * gamma * (L + mu)
    budget = 2 * mu - eps * (L + mu) - (1 - eps) * gamma * mu * (L + mu)
    if family == "fixed_gradient":
        return {"rho": rho, "coef_interp": span, "coef_inexact": budget}
    if family == "fixed_distance":
        return {"rho": rho, "coef_interp": span, "coef_inexact": budget}
    if family == "fixed_function_value":
        return {
            "rho": rho,
            "one_minus_rho": 1 - rho,
            "term1": 2 - gamma * ((1 + eps) * L + (1 - eps) * mu),
            "term1_den": span,
            "term3": rho * (L + mu) - (L - mu),
        }
    raise ValueError(f"unknown fixed-step family {family!r}")


def fixed_gate_boundaries(family: str, mu: float, L: float, eps: float) -> dict:
    """Value of ``gamma`` at which each sign condition changes sign."""
    out = {
        "rho": 1 / ((1 - eps) * mu),
        "coef_interp": 2 / ((1 - eps) * (L + mu)),
        "coef_inexact": fixed_gamma_max(mu, L, eps),
    }
    if family == "fixed_function_value":
        return {
            "rho": out["rho"],
            "term1": 2 / ((1 + eps) * L + (1 - eps) * mu),
            "term1_den": out["coef_interp"],
            "term3": 2 / ((1 - eps) * (L + mu)),
        }
    return out


def fixed_step_certificate(family: str, mu: float, L: float, eps: float, gamma: float) -> Certificate:
    """Multipliers of a fixed-step certificate.

    At ``eps = 0`` the inexactness constraint pins ``d = g0``; its multiplier is
    dropped and identities are evaluated on that face.
    """
    if family not in FAMILIES[2:]:
        raise ValueError(f"unknown fixed-step family {family!r}")
    if not (0 < mu < L):
        raise GateError("0 < mu < L")
    rates = rate_fixed(mu, L, eps, gamma)
    rho = rho_fixed(mu, L, eps, gamma)
    for name, value in fixed_sign_conditions(family, mu, L, eps, gamma).items():
        if value < -1e-12:
            raise GateError(f"{family}: {name} >= 0", value)
    dropped = []
    if family == "fixed_gradient":
        if gamma <= 0:
            raise GateError("gamma > 0 (the gradient certificate divides by gamma)", gamma)
        mult = {"lambda0": 2 * rho / (gamma * (1 - eps)), "lambda1": gamma * mu * rho / eps if eps > 0 else None}
        rate = rates.g_rate
    elif family == "fixed_distance":
        mult = {"lambda0": 2 * gamma * (1 - eps) * rho, "lambda1": gamma * rho / (mu * eps) if eps > 0 else None}
        rate = rates.x_rate
    else:
        mult = {
            "lambda01": rho,
            "lambda_star0": rho * (1 - rho),
            "lambda_star1": 1 - rho,
            "lambda2": gamma * rho / (2 * eps) if eps > 0 else None,
        }
        rate = rates.f_rate
    for k in [k for k, v in mult.items() if v is None]:
        del mult[k]
        dropped.append(k)
    return Certificate(family, {"mu": mu, "L": L, "eps": eps, "gamma": gamma}, mult, rate, None, dropped)


def certificate(family: str, **params) -> Certificate:
    if family == "els_gradient":
        return els_gradient_certificate(params["kappa"], params["eps"], params.get("L", 1.0))
    if family == "els_distance":
        return els_distance_certificate(params["kappa"], params["eps"], params.get("L", 1.0))
    return fixed_step_certificate(family, params["mu"], params["L"], params["eps"], params["gamma"])


# ---------------------------------------------------------------------------
# identity verification


@dataclass
class GramPoint:
    """Concrete vectors standing for the abstract Gram labels (minimizer at the origin)."""

    x0: np.ndarray
    g0: np.ndarray
    g1: np.ndarray
    x1: np.ndarray | None = None
    d: np.ndarray | None = None
    f0: float = 0.0
    f1: float = 0.0

    @staticmethod
    def random(rng: np.random.Generator, dim: int = 5, scale: float = 1.0) -> "GramPoint":
        v = rng.normal(scale=scale, size=(5, dim))
        f = rng.normal(scale=scale, size=2)
        return GramPoint(x0=v[0], g0=v[1], g1=v[2], x1=v[3], d=v[4], f0=f[0], f1=f[1])


def _ip(a, b) -> float:
    return float(np.dot(a, b))


def _sq(a) -> float:
    return float(np.dot(a, a))


def _grad_cond(dg, dx, mu, L):
    """``Q/(1-kappa) - <dg, dx>``, nonpositive on feasible points."""
    k = mu / L
    return (_sq(dg) / L + mu * _sq(dx) - 2 * mu / L * _ip(dg, dx)) / (1 - k) - _ip(dg, dx)


def _func_cond(fi, fj, xi, xj, gi, gj, mu, L):
    """Right side minus left side of the one-sided condition, nonpositive on feasible points."""
    k = mu / L
    q = (_sq(gi - gj) / L + mu * _sq(xi - xj) - 2 * mu / L * _ip(gj - gi, xj - xi)) / (2 * (1 - k))
    return q - (fi - fj - _ip(gj, xi - xj))


class IdentityTerms(NamedTuple):
    weighted: float  # multiplier-weighted constraint values (nonpositive on feasible points)
    progress: float  # measure after the step minus rate^2 times measure before
    squares: float  # completed-square remainder, nonnegative


def verify_identity(cert: Certificate, point: GramPoint) -> float:
    """Defect of the weighted-sum reformulation at ``point``.

    Returns ``weighted_sum - (progress - rate^2 * budget + sum of squares)``, which
    vanishes identically when the certificate is right.
    """
    t = identity_terms(cert, point)
    return t.weighted - (t.progress + t.squares)


def identity_terms(cert: Certificate, point: GramPoint) -> IdentityTerms:
    fam, p, m = cert.family, cert.params, cert.multipliers
    if fam.startswith("els"):
        return _els_terms(cert, point)
    mu, L, eps, gamma = p["mu"], p["L"], p["eps"], p["gamma"]
    rho = rho_fixed(mu, L, eps, gamma)
    x0, g0, g1 = point.x0, point.g0, point.g1
    d = point.d if eps > 0 else g0
    x1 = x0 - gamma * d
    C1 = _sq(d - g0) - eps**2 * _sq(g0)
    span = 2 - (1 - eps) * gamma * (L + mu)
    budget = 2 * mu - eps * (L + mu) - (1 - eps) * gamma * mu * (L + mu)

    if fam == "fixed_gradient":
        W = m["lambda0"] * _grad_cond(g0 - g1, x0 - x1, mu, L) + m.get("lambda1", 0.0) * C1
        if eps == 0:
            # d = g0 cancels the 1/span in the vector, which matters at gamma = 2/(L+mu)
            squares = span * _sq(g1 - rho * g0) / (gamma * (L - mu))
        else:
            a = gamma * (L + mu) * rho / span
            b = 2 * rho / span
            c1 = span / ((1 - eps) * gamma * (L - mu))
            squares = c1 * _sq(a * d - b * g0 + g1)
        if eps > 0:
            c2 = (1 - eps) * gamma * rho * budget / (eps * span)
            squares += c2 * _sq(d / (eps - 1) + g0)
        return IdentityTerms(W, _sq(g1) - rho**2 * _sq(g0), squares)

    if fam == "fixed_distance":
        W = m["lambda0"] * _grad_cond(g0, x0, mu, L) + m.get("lambda1", 0.0) * C1
        c1 = gamma * mu**2 * (1 - eps) * span / (L - mu)
        if eps == 0:
            v = x0 - g0 / mu
        else:
            v = (L - mu) / ((1 - eps) * mu**2 * span) * d - (L + mu) * rho / (mu**2 * span) * g0 + x0
        squares = c1 * _sq(v)
        if eps > 0:
            c2 = gamma * rho * budget / (eps * mu**2 * (1 - eps) * span)
            squares += c2 * _sq(d - (1 - eps) * g0)
        return IdentityTerms(W, _sq(x1) - rho**2 * _sq(x0), squares)

    # function values, minimizer normalized to x = g = f = 0
    z = np.zeros_like(x0)
    f0, f1 = point.f0, point.f1
    W = (
        m["lambda01"] * _func_cond(f0, f1, x0, x1, g0, g1, mu, L)
        + m["lambda_star0"] * _func_cond(0.0, f0, z, x0, z, g0, mu, L)
        + m["lambda_star1"] * _func_cond(0.0, f1, z, x1, z, g1, mu, L)
        + m.get("lambda2", 0.0) * C1
    )
    squares = 0.0
    if eps > 0:
        t1 = gamma * rho * (2 - gamma * ((1 + eps) * L + (1 - eps) * mu)) / (2 * eps * span)
        squares += t1 * _sq(d - (1 - eps) * g0)
    t2 = L * mu * (1 - rho**2) / (2 * (L - mu))
    v2 = x0 - gamma / (rho + 1) * d - rho / (mu * (rho + 1)) * g0 - g1 / (mu * (rho + 1))
    squares += t2 * _sq(v2)
    if eps == 0:
        # same cancellation as the gradient family, removable at gamma = 2/(L+mu)
        squares += span * _sq(g1 - rho * g0) / (2 * (rho + 1) * (L - mu))
    else:
        t3 = (rho * (L + mu) - (L - mu)) / (2 * mu * (rho + 1) * (L - mu))
        den = L * (rho - 1) + mu * (rho + 1)
        v3 = 2 * gamma * L * mu * rho / den * d + rho * (L * (rho - 1) - mu * (rho + 1)) / den * g0 + g1
        squares += t3 * _sq(v3)
    return IdentityTerms(W, f1 - rho**2 * f0, squares)


def _els_terms(cert: Certificate, point: GramPoint) -> IdentityTerms:
    p, m, S = cert.params, cert.multipliers, cert.S
    kappa, eps, L, mu = p["kappa"], p["eps"], p["L"], p["mu"]
    x0, x1, g0, g1 = point.x0, point.x1, point.g0, point.g1
    M = np.array([[eps * _sq(g0), _ip(g0, g1)], [_ip(g0, g1), eps * _sq(g1)]])
    rate = cert.rate
    root = math.sqrt(1 - eps**2)
    if cert.family == "els_gradient":
        W = m["interp"] * _grad_cond(g0 - g1, x0 - x1, mu, L) + m["linesearch"] * _ip(g1, x1 - x0) - np.trace(S @ M)
        c = kappa * (2 * eps * math.sqrt(kappa) + (1 - kappa) * root) / ((1 - kappa) * root)
        v = (
            eps * (1 + kappa) / (math.sqrt(kappa) * (root * (1 - kappa) + 2 * eps * math.sqrt(kappa))) * g1
            - (1 + kappa) / (2 * kappa) * g0
            + L * (x0 - x1)
        )
        return IdentityTerms(W, _sq(g1) - rate**2 * _sq(g0), c * _sq(v))
    W = (
        m["lambda0"] * _grad_cond(g0, x0, mu, L)
        + m["lambda1"] * _grad_cond(g1, x1, mu, L)
        + m["lambda2"] * _ip(g1, x1 - x0)
        - np.trace(S @ M)
    )
    q = 2 * eps * math.sqrt((1 - eps**2) * kappa) + (1 - eps**2) * (1 - kappa)
    c = q / (kappa * (1 - kappa))
    v = (1 - eps * (1 - kappa) / (2 * math.sqrt((1 - eps**2) * kappa))) * g0 / L - (1 + kappa) / 2 * x0 + (1 - kappa) / q * g1 / L
    return IdentityTerms(W, _sq(x1) - rate**2 * _sq(x0), c * _sq(v))


def max_identity_residual(cert: Certificate, n_points: int, rng: np.random.Generator, dim: int = 5) -> float:
    return max(abs(verify_identity(cert, GramPoint.random(rng, dim))) for _ in range(n_points))


def random_parameters(family: str, rng: np.random.Generator, kappa_range=(0.05, 0.9)) -> dict:
    """Draw an admissible parameter point for ``family`` (with ``L = 1``)."""
    kappa = float(rng.uniform(*kappa_range))
    if family.startswith("els"):
        return {"kappa": kappa, "eps": float(rng.uniform(0, els_eps_max(kappa))), "L": 1.0}
    mu, L = kappa, 1.0
    eps = float(rng.uniform(0, 2 * mu / (L + mu)))
    gamma = float(rng.uniform(0, fixed_gamma_max(mu, L, eps)))
    return {"mu": mu, "L": L, "eps": eps, "gamma": gamma}


# ---------------------------------------------------------------------------
# sweep tables


SWEEP_COLUMNS = ("kappa", "eps", "gamma", "family", "rate", "max_residual")


def certificate_sweep(n_draws: int, n_points: int, seed: int, families=FAMILIES) -> list[dict]:
    rng = np.random.default_rng(seed)
    rows = []
    for fam in families:
        for _ in range(n_draws):
            params = random_parameters(fam, rng)
            cert = certificate(fam, **params)
            kappa = params.get("kappa", params.get("mu", 0) / params.get("L", 1))
            rows.append(
                {
                    "kappa": kappa,
                    "eps": params["eps"],
                    "gamma": params.get("gamma", float("nan")),
                    "family": fam,
                    "rate": cert.rate,
                    "max_residual": max_identity_residual(cert, n_points, rng),
                }
            )
    return rows


def write_csv(rows: list[dict], path, columns=None) -> None:
    columns = list(columns or rows[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items() if k in columns})


# ---------------------------------------------------------------------------
# comparison with solver duals

# certificate multiplier -> (constraint name, sign applied to the solver dual)
SUPPORT = {
    "els_gradient": {"interp": ("interp[0,1]", 1.0), "linesearch": ("linesearch", -1.0)},
    "els_distance": {
        "lambda0": ("interp[*,0]", 1.0),
        "lambda1": ("interp[*,1]", 1.0),
        "lambda2": ("linesearch", -1.0),
    },
    "fixed_gradient": {"lambda0": ("interp[0,1]", 1.0), "lambda1": ("inexact", 1.0)},
    "fixed_distance": {"lambda0": ("interp[*,0]", 1.0), "lambda1": ("inexact", 1.0)},
    "fixed_function_value": {
        "lambda01": ("interp[0,1]", 1.0),
        "lambda_star0": ("interp[*,0]", 1.0),
        "lambda_star1": ("interp[*,1]", 1.0),
        "lambda2": ("inexact", 1.0),
    },
}


def budget_multiplier(cert: Certificate) -> float:
    """Dual of the budget constraint implied by the certificate (the SDP optimum for R = 1)."""
    return cert.rate if cert.family == "fixed_function_value" else cert.rate**2


def support_constraints(cert: Certificate) -> list[str]:
    names = [SUPPORT[cert.family][k][0] for k in cert.multipliers if k in SUPPORT[cert.family]]
    return names + ["budget"]


def pep_instance_for(cert: Certificate):
    """The PEP whose optimal dual the certificate describes."""
    from .pep import ExactLineSearch, FixedStep, PepInstance, Variant

    p = cert.params
    variant = {
        "els_gradient": Variant.GRADIENT_NORM,
        "els_distance": Variant.DISTANCE,
        "fixed_gradient": Variant.GRADIENT_NORM,
        "fixed_distance": Variant.DISTANCE,
        "fixed_function_value": Variant.FUNCTION_VALUE,
    }[cert.family]
    if cert.family.startswith("els"):
        return PepInstance(variant, ExactLineSearch(), p["mu"], p["L"], p["eps"])
    return PepInstance(variant, FixedStep(p["gamma"]), p["mu"], p["L"], p["eps"])


def dual_report(solution, cert: Certificate) -> dict:
    """Solver duals mapped onto the certificate's multipliers, rescaled so the budget duals agree.

    Returns ``{name: (from_solver, closed_form)}``; S entries appear as ``S[i,j]``.
    Diagonal entries of S are omitted at ``eps = 0`` because the cone block then
    has a zero diagonal and they do not enter the Lagrangian.
    """
    scale = budget_multiplier(cert) / solution.duals["budget"]
    out = {}
    for key, value in cert.multipliers.items():
        if key not in SUPPORT[cert.family]:
            continue
        name, sign = SUPPORT[cert.family][key]
        out[key] = (sign * solution.duals.get(name, 0.0) * scale, value)
    if cert.S is not None:
        Z = solution.block_duals["cone"] * scale
        for i, j in [(0, 0), (1, 0), (1, 1)]:
            if i == j and cert.params["eps"] == 0:
                continue
            out[f"S[{i},{j}]"] = (float(Z[i, j]), float(cert.S[i, j]))
    return out


DUAL_TOL = Tolerances(sdp_rel_tol=1e-9)


def dual_agreement(cert: Certificate, restrict: bool = True, tol: Tolerances = DUAL_TOL) -> tuple[float, dict]:
    """Largest relative mismatch between solver duals and the certificate.

    With ``restrict`` the PEP keeps only the constraints the certificate uses,
    which leaves the optimal value unchanged and removes degenerate dual faces.
    """
    from .pep import build
    from .sdpsolve import solve

    problem = build(pep_instance_for(cert))
    if restrict:
        problem = problem.restricted(support_constraints(cert))
    report = dual_report(solve(problem, tol=tol), cert)
    worst = max(abs(a - b) / max(1.0, abs(b)) for a, b in report.values())
    return worst, report


# ---------------------------------------------------------------------------
# proximity chain of the short-step entropic method


class ProximityChain(NamedTuple):
    path_shift: float  # ||x(eta1) - x(eta0)||_{x(eta0)} bound
    contraction: float  # per-step factor (1 - kappa)/(1 + kappa) + eps
    step: float  # contraction * delta / 2
    triangle: float  # step + path_shift
    converted: float  # triangle / (1 - path_shift)
    closes: bool  # converted < delta / 2


def proximity_chain(delta=0.25, k=1 / 16, eps=1 / 32, contraction_delta=None) -> ProximityChain:
    """Evaluate the one-iteration proximity bounds of the short-step method.

    ``contraction_delta`` is the radius used in the Newton contraction factor; it
    defaults to ``delta``.  Passing ``1/16`` gives the factor 0.1596.
    """
    shift = k + 3 * k**2 / (1 - k) ** 3
    kd = (1 - (delta if contraction_delta is None else contraction_delta)) ** 4
    contraction = (1 - kd) / (1 + kd) + eps
    step = contraction * delta / 2
    tri = step + shift
    conv = tri / (1 - shift)
    return ProximityChain(shift, contraction, step, tri, conv, conv < delta / 2)
