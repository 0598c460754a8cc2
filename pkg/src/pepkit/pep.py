"""One-step performance-estimation problems in Gram form.

A problem is described by a few abstract vectors (iterates, gradients and an
inexact direction) together with scalar function values.  Every constraint is
an affine functional of the Gram matrix of those vectors and of the scalars,
so the worst case of one step of the method over the whole function class is
the optimal value of a small semidefinite program.

The minimizer is normalized to ``x_* = 0, g_* = 0, f_* = 0``.
"""

from __future__ import annotations

import enum
import itertools
import json
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

STAR = "*"
SCHEMA = "pepkit.gram-sdp/1"


class Variant(enum.Enum):
    FUNCTION_VALUE = "function_value"
    GRADIENT_NORM = "gradient_norm"
    DISTANCE = "distance"


@dataclass(frozen=True)
class ExactLineSearch:
    pass


@dataclass(frozen=True)
class FixedStep:
    gamma: float

    def __post_init__(self):
        if not (np.isfinite(self.gamma) and self.gamma >= 0):
            raise ValueError(f"step length must be nonnegative, got {self.gamma}")


StepRule = ExactLineSearch | FixedStep


# ---------------------------------------------------------------------------
# expression algebra


class Affine:
    """Affine functional ``const + sum coef * var`` over Gram entries and scalars.

    Variables are keyed ``("G", a, b)`` with labels sorted so that ``a <= b`` in
    label order, or ``("s", name)`` for scalars.  The Gram coefficient of an
    off-diagonal key multiplies the single entry ``G[a, b]`` (which appears twice
    in the symmetric matrix).
    """

    __slots__ = ("terms", "const")

    def __init__(self, terms: Mapping | None = None, const: float = 0.0):
        self.terms = {k: float(v) for k, v in (terms or {}).items() if v != 0.0}
        self.const = float(const)

    @staticmethod
    def scalar(name: str) -> "Affine":
        return Affine({("s", name): 1.0})

    @staticmethod
    def constant(value: float) -> "Affine":
        return Affine({}, value)

    def __add__(self, other):
        other = _lift(other)
        terms = dict(self.terms)
        for k, v in other.terms.items():
            terms[k] = terms.get(k, 0.0) + v
        return Affine(terms, self.const + other.const)

    __radd__ = __add__

    def __neg__(self):
        return Affine({k: -v for k, v in self.terms.items()}, -self.const)

    def __sub__(self, other):
        return self + (-_lift(other))

    def __rsub__(self, other):
        return _lift(other) - self

    def __mul__(self, c):
        c = float(c)
        return Affine({k: c * v for k, v in self.terms.items()}, c * self.const)

    __rmul__ = __mul__

    def __truediv__(self, c):
        return self * (1.0 / float(c))

    def variables(self):
        return set(self.terms)

    def evaluate(self, gram: np.ndarray, labels, scalars: Mapping[str, float]) -> float:
        index = {lab: i for i, lab in enumerate(labels)}
        total = self.const
        for key, coef in self.terms.items():
            if key[0] == "G":
                total += coef * gram[index[key[1]], index[key[2]]]
            else:
                total += coef * scalars[key[1]]
        return float(total)

    def to_json(self) -> dict:
        terms = []
        for key, coef in sorted(self.terms.items(), key=lambda kv: repr(kv[0])):
            if key[0] == "G":
                terms.append({"gram": [key[1], key[2]], "coef": coef})
            else:
                terms.append({"scalar": key[1], "coef": coef})
        return {"terms": terms, "const": self.const}

    @staticmethod
    def from_json(obj: Mapping, labels) -> "Affine":
        order = {lab: i for i, lab in enumerate(labels)}
        terms = {}
        for t in obj["terms"]:
            if "gram" in t:
                a, b = sorted(t["gram"], key=order.__getitem__)
                key = ("G", a, b)
            else:
                key = ("s", t["scalar"])
            terms[key] = terms.get(key, 0.0) + float(t["coef"])
        return Affine(terms, float(obj.get("const", 0.0)))

    def __repr__(self):
        return f"Affine({self.terms!r}, const={self.const!r})"


def _lift(x) -> Affine:
    return x if isinstance(x, Affine) else Affine.constant(float(x))


class Vec:
    """Formal linear combination of abstract vector labels (``0`` is the empty combination)."""

    __slots__ = ("coefs", "order")

    def __init__(self, coefs: Mapping[str, float], order: Mapping[str, int]):
        self.coefs = {k: float(v) for k, v in coefs.items() if v != 0.0}
        self.order = order

    def __add__(self, other: "Vec") -> "Vec":
        c = dict(self.coefs)
        for k, v in other.coefs.items():
            c[k] = c.get(k, 0.0) + v
        return Vec(c, self.order)

    def __neg__(self):
        return Vec({k: -v for k, v in self.coefs.items()}, self.order)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, c):
        return Vec({k: float(c) * v for k, v in self.coefs.items()}, self.order)

    __rmul__ = __mul__

    def dot(self, other: "Vec") -> Affine:
        terms: dict = {}
        for a, ca in self.coefs.items():
            for b, cb in other.coefs.items():
                lo, hi = sorted((a, b), key=self.order.__getitem__)
                key = ("G", lo, hi)
                terms[key] = terms.get(key, 0.0) + ca * cb
        return Affine(terms)

    def sq(self) -> Affine:
        return self.dot(self)


class VectorSpace:
    """Factory of :class:`Vec` objects over a fixed ordered label set."""

    def __init__(self, labels):
        self.labels = tuple(labels)
        self.order = {lab: i for i, lab in enumerate(self.labels)}

    def __getitem__(self, label: str) -> Vec:
        if label not in self.order:
            raise KeyError(f"undeclared label {label!r}")
        return Vec({label: 1.0}, self.order)

    def zero(self) -> Vec:
        return Vec({}, self.order)


# ---------------------------------------------------------------------------
# problem container


@dataclass(frozen=True)
class Constraint:
    name: str
    kind: str  # "ge" means expr >= 0, "eq" means expr == 0
    expr: Affine

    def __post_init__(self):
        if self.kind not in ("ge", "eq"):
            raise ValueError(f"unknown constraint kind {self.kind!r}")


@dataclass(frozen=True)
class PsdBlock:
    name: str
    entries: tuple  # 2x2 nested tuple of Affine, symmetric


@dataclass
class GramSdpProblem:
    """Maximize an affine objective subject to affine and PSD constraints on a Gram matrix."""

    labels: tuple
    scalars: tuple
    objective: Affine
    constraints: list
    psd_blocks: list = field(default_factory=list)
    gram_psd: bool = True
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.labels = tuple(self.labels)
        self.scalars = tuple(self.scalars)
        self.validate()

    def all_expressions(self):
        yield "objective", self.objective
        for c in self.constraints:
            yield c.name, c.expr
        for b in self.psd_blocks:
            for r in range(2):
                for s in range(2):
                    yield f"{b.name}[{r},{s}]", b.entries[r][s]

    def validate(self) -> None:
        """Check that every expression is affine over declared labels and scalars."""
        labels, scalars = set(self.labels), set(self.scalars)
        names = [c.name for c in self.constraints] + [b.name for b in self.psd_blocks]
        if len(set(names)) != len(names):
            raise ValueError("constraint names must be unique")
        for where, expr in self.all_expressions():
            if not isinstance(expr, Affine):
                raise TypeError(f"{where}: expression is not affine")
            for key in expr.variables():
                if key[0] == "G":
                    if key[1] not in labels or key[2] not in labels:
                        raise ValueError(f"{where}: undeclared label in {key}")
                elif key[0] == "s":
                    if key[1] not in scalars:
                        raise ValueError(f"{where}: undeclared scalar {key[1]!r}")
                else:
                    raise ValueError(f"{where}: malformed variable key {key}")
        for b in self.psd_blocks:
            e = b.entries
            if len(e) != 2 or len(e[0]) != 2 or len(e[1]) != 2:
                raise ValueError(f"{b.name}: PSD blocks must be 2x2")
            diff = e[0][1] - e[1][0]
            if diff.terms or diff.const:
                raise ValueError(f"{b.name}: PSD block is not symmetric")

    def constraint(self, name: str) -> Constraint:
        for c in self.constraints:
            if c.name == name:
                return c
        raise KeyError(name)

    def evaluate(self, gram, scalars: Mapping[str, float]) -> dict:
        """Values of the objective, constraints and blocks at a given Gram point."""
        out = {"objective": self.objective.evaluate(gram, self.labels, scalars)}
        for c in self.constraints:
            out[c.name] = c.expr.evaluate(gram, self.labels, scalars)
        for b in self.psd_blocks:
            out[b.name] = np.array(
                [[b.entries[r][s].evaluate(gram, self.labels, scalars) for s in range(2)] for r in range(2)]
            )
        return out

    def relabel(self, permutation) -> "GramSdpProblem":
        """The same problem with labels stored in a different order."""
        labels = tuple(permutation)
        if sorted(labels) != sorted(self.labels):
            raise ValueError("permutation must reorder the existing labels")
        return GramSdpProblem.from_json(self.to_json(), labels=labels)

    def restricted(self, keep) -> "GramSdpProblem":
        """Copy keeping only the named scalar constraints (PSD blocks are always kept)."""
        keep = set(keep)
        missing = keep - {c.name for c in self.constraints}
        if missing:
            raise KeyError(f"unknown constraints {sorted(missing)}")
        return GramSdpProblem(
            self.labels,
            self.scalars,
            self.objective,
            [c for c in self.constraints if c.name in keep],
            list(self.psd_blocks),
            self.gram_psd,
            dict(self.meta, restricted_to=sorted(keep)),
        )

    def to_json(self) -> dict:
        return {
            "schema": SCHEMA,
            "sense": "maximize",
            "labels": list(self.labels),
            "scalars": list(self.scalars),
            "objective": self.objective.to_json(),
            "constraints": [{"name": c.name, "kind": c.kind, "expr": c.expr.to_json()} for c in self.constraints],
            "psd_blocks": [
                {"name": b.name, "entries": [[b.entries[r][s].to_json() for s in range(2)] for r in range(2)]}
                for b in self.psd_blocks
            ],
            "gram_psd": self.gram_psd,
            "meta": self.meta,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True)

    @staticmethod
    def from_json(obj, labels=None) -> "GramSdpProblem":
        if isinstance(obj, str):
            obj = json.loads(obj)
        if obj.get("schema") != SCHEMA:
            raise ValueError(f"unsupported schema {obj.get('schema')!r}")
        if obj.get("sense", "maximize") != "maximize":
            raise ValueError("only maximization problems are supported")
        labels = tuple(labels) if labels is not None else tuple(obj["labels"])

        def aff(e):
            return Affine.from_json(e, labels)

        return GramSdpProblem(
            labels=labels,
            scalars=tuple(obj["scalars"]),
            objective=aff(obj["objective"]),
            constraints=[Constraint(c["name"], c["kind"], aff(c["expr"])) for c in obj["constraints"]],
            psd_blocks=[
                PsdBlock(b["name"], tuple(tuple(aff(e) for e in row) for row in b["entries"]))
                for b in obj["psd_blocks"]
            ],
            gram_psd=bool(obj.get("gram_psd", True)),
            meta=dict(obj.get("meta", {})),
        )


# ---------------------------------------------------------------------------
# instances and builders


@dataclass(frozen=True)
class PepInstance:
    variant: Variant
    step_rule: StepRule
    mu: float
    L: float
    eps: float = 0.0
    R: float = 1.0

    def __post_init__(self):
        if not isinstance(self.variant, Variant):
            object.__setattr__(self, "variant", Variant(self.variant))
        if not (self.mu > 0 and self.L >= self.mu and np.isfinite(self.L)):
            raise ValueError(f"need 0 < mu <= L, got mu={self.mu}, L={self.L}")
        if not (0 <= self.eps < 1):
            raise ValueError(f"eps must lie in [0, 1), got {self.eps}")
        if not (self.R > 0):
            raise ValueError(f"budget R must be positive, got {self.R}")
        if not isinstance(self.step_rule, (ExactLineSearch, FixedStep)):
            raise TypeError("step_rule must be ExactLineSearch or FixedStep")

    @property
    def kappa(self) -> float:
        return self.mu / self.L

    def meta(self) -> dict:
        m = {"variant": self.variant.value, "mu": self.mu, "L": self.L, "eps": self.eps, "R": self.R}
        if isinstance(self.step_rule, FixedStep):
            m.update(step_rule="fixed", gamma=self.step_rule.gamma)
        else:
            m.update(step_rule="els")
        return m


def enumerate_interpolation_pairs(points=(STAR, "0", "1"), symmetric: bool = False):
    """Ordered pairs ``(i, j)`` with ``i != j`` in a fixed order.

    The order groups each pair with its reverse, starting from the minimizer.
    With ``symmetric=True`` only the first pair of each group is kept.
    """
    points = list(points)
    pairs = []
    for a, b in itertools.combinations(points, 2):
        pairs.append((a, b))
        if not symmetric:
            pairs.append((b, a))
    return pairs


def _pair_name(i, j) -> str:
    return f"interp[{i},{j}]"


def _gradient_inequality(xi: Vec, xj: Vec, gi: Vec, gj: Vec, mu: float, L: float) -> Affine:
    """Symmetric condition: <gi-gj, xi-xj> - (|gi-gj|^2/L + mu|xi-xj|^2 - 2mu/L <gi-gj, xi-xj>)/(1-kappa) >= 0."""
    kappa = mu / L
    dg, dx = gi - gj, xi - xj
    return dg.dot(dx) - (dg.sq() / L + mu * dx.sq() - (2 * mu / L) * dg.dot(dx)) / (1 - kappa)


def _function_inequality(fi, fj, xi: Vec, xj: Vec, gi: Vec, gj: Vec, mu: float, L: float) -> Affine:
    """One-sided condition: fi - fj - <gj, xi-xj> - Q/(2(1-kappa)) >= 0."""
    kappa = mu / L
    dg, dx = gi - gj, xi - xj
    q = dg.sq() / L + mu * dx.sq() - (2 * mu / L) * (gj - gi).dot(xj - xi)
    return fi - fj - gj.dot(dx) - q / (2 * (1 - kappa))


def _interpolation(variant: Variant, x, g, f, mu, L):
    if mu / L >= 1 - 1e-12:
        raise ValueError("interpolation conditions need kappa < 1")
    out = []
    if variant is Variant.FUNCTION_VALUE:
        for i, j in enumerate_interpolation_pairs():
            out.append(Constraint(_pair_name(i, j), "ge", _function_inequality(f[i], f[j], x[i], x[j], g[i], g[j], mu, L)))
    else:
        for i, j in enumerate_interpolation_pairs(symmetric=True):
            out.append(Constraint(_pair_name(i, j), "ge", _gradient_inequality(x[i], x[j], g[i], g[j], mu, L)))
    return out


def _budget_and_objective(variant: Variant, x, g, f, R):
    if variant is Variant.FUNCTION_VALUE:
        return Constraint("budget", "ge", R - f["0"]), f["1"]
    if variant is Variant.GRADIENT_NORM:
        return Constraint("budget", "ge", R - g["0"].sq()), g["1"].sq()
    return Constraint("budget", "ge", R - x["0"].sq()), x["1"].sq()


def _scalars(variant: Variant):
    if variant is Variant.FUNCTION_VALUE:
        return ("f0", "f1"), {STAR: Affine.constant(0.0), "0": Affine.scalar("f0"), "1": Affine.scalar("f1")}
    return (), {STAR: None, "0": None, "1": None}


def build_els(instance: PepInstance) -> GramSdpProblem:
    """Worst case of one exact-line-search step along an eps-inexact direction."""
    if not isinstance(instance.step_rule, ExactLineSearch):
        raise ValueError("build_els needs an ExactLineSearch instance")
    V = VectorSpace(("x0", "x1", "g0", "g1"))
    x = {STAR: V.zero(), "0": V["x0"], "1": V["x1"]}
    g = {STAR: V.zero(), "0": V["g0"], "1": V["g1"]}
    scalars, f = _scalars(instance.variant)
    mu, L, eps = instance.mu, instance.L, instance.eps

    constraints = _interpolation(instance.variant, x, g, f, mu, L)
    constraints.append(Constraint("linesearch", "eq", (x["1"] - x["0"]).dot(g["1"])))
    budget, objective = _budget_and_objective(instance.variant, x, g, f, instance.R)
    constraints.append(budget)

    g01 = g["0"].dot(g["1"])
    cone = PsdBlock("cone", ((eps * g["0"].sq(), g01), (g01, eps * g["1"].sq())))
    return GramSdpProblem(V.labels, scalars, objective, constraints, [cone], meta=instance.meta())


def build_fixed(instance: PepInstance) -> GramSdpProblem:
    """Worst case of one fixed step ``x1 = x0 - gamma d`` with ``|d - g0| <= eps |g0|``."""
    if not isinstance(instance.step_rule, FixedStep):
        raise ValueError("build_fixed needs a FixedStep instance")
    gamma = instance.step_rule.gamma
    V = VectorSpace(("x0", "g0", "g1", "d"))
    x = {STAR: V.zero(), "0": V["x0"], "1": V["x0"] - gamma * V["d"]}
    g = {STAR: V.zero(), "0": V["g0"], "1": V["g1"]}
    scalars, f = _scalars(instance.variant)
    mu, L, eps = instance.mu, instance.L, instance.eps

    constraints = _interpolation(instance.variant, x, g, f, mu, L)
    constraints.append(Constraint("inexact", "ge", eps**2 * g["0"].sq() - (V["d"] - g["0"]).sq()))
    budget, objective = _budget_and_objective(instance.variant, x, g, f, instance.R)
    constraints.append(budget)
    return GramSdpProblem(V.labels, scalars, objective, constraints, [], meta=instance.meta())


def build(instance: PepInstance) -> GramSdpProblem:
    if isinstance(instance.step_rule, ExactLineSearch):
        return build_els(instance)
    return build_fixed(instance)
