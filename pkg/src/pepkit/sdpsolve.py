"""Small dense conic solver for Gram-form performance-estimation problems.

The problem is converted to the standard conic form

    minimize  c^T x   subject to  G x + s = h,  A x = b,  s in K,

where ``K`` is a product of a nonnegative orthant and PSD cones (stored as
``svec`` vectors).  It is solved by a primal-dual interior-point method on the
homogeneous self-dual embedding, with Nesterov-Todd scaling and a Mehrotra
predictor-corrector step.  The embedding gives clean infeasibility and
unboundedness certificates.  All linear algebra is dense.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np

from .core import DEFAULT_TOL, Tolerances, smat, svec
from .pep import GramSdpProblem


class Status(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    MAX_ITER = "max_iter"


@dataclass(frozen=True)
class SolverOptions:
    max_iter: int = 200
    step_fraction: float = 0.98
    refine_steps: int = 2


# ---------------------------------------------------------------------------
# cone bookkeeping


class Cone:
    """Product of an ``l``-dimensional orthant and PSD cones of the given orders."""

    def __init__(self, l: int, s: list[int]):
        self.l = int(l)
        self.s = [int(n) for n in s]
        self.slices = []
        start = self.l
        for n in self.s:
            size = n * (n + 1) // 2
            self.slices.append(slice(start, start + size))
            start += size
        self.size = start
        self.degree = self.l + sum(self.s)

    def identity(self) -> np.ndarray:
        e = np.zeros(self.size)
        e[: self.l] = 1.0
        for n, sl in zip(self.s, self.slices):
            e[sl] = svec(np.eye(n))
        return e

    def min_eig(self, v) -> float:
        vals = [np.min(v[: self.l])] if self.l else []
        for sl in self.slices:
            vals.append(np.linalg.eigvalsh(smat(v[sl]))[0])
        return float(min(vals))

    def max_step(self, v, dv) -> float:
        """Largest ``alpha`` with ``v + alpha dv`` in the cone (``inf`` if unbounded)."""
        alpha = np.inf
        if self.l:
            neg = dv[: self.l] < 0
            if np.any(neg):
                alpha = min(alpha, float(np.min(-v[: self.l][neg] / dv[: self.l][neg])))
        for sl in self.slices:
            Lc = np.linalg.cholesky(smat(v[sl]))
            Li = np.linalg.inv(Lc)
            M = Li @ smat(dv[sl]) @ Li.T
            lmin = np.linalg.eigvalsh(0.5 * (M + M.T))[0]
            if lmin < 0:
                alpha = min(alpha, -1.0 / lmin)
        return alpha


class NtScaling:
    """Nesterov-Todd scaling point for a strictly feasible pair ``(s, z)``.

    ``W(z) = lambda = W^{-T}(s)``; on PSD blocks ``W(z) = R^T Z R`` and
    ``W^T(u) = R u R^T``, on the orthant ``W`` is diagonal with ``sqrt(s / z)``.
    """

    def __init__(self, cone: Cone, s, z):
        self.cone = cone
        l = cone.l
        self.w = np.sqrt(s[:l] / z[:l])
        self.lam_l = np.sqrt(s[:l] * z[:l])
        self.R, self.Rinv, self.lam_s = [], [], []
        for sl in cone.slices:
            Ls = np.linalg.cholesky(smat(s[sl]))
            Lz = np.linalg.cholesky(smat(z[sl]))
            U, lam, Vt = np.linalg.svd(Lz.T @ Ls)
            R = Ls @ Vt.T / np.sqrt(lam)
            self.R.append(R)
            self.Rinv.append(np.linalg.inv(R))
            self.lam_s.append(lam)

    def lam(self) -> np.ndarray:
        out = np.zeros(self.cone.size)
        out[: self.cone.l] = self.lam_l
        for sl, lam in zip(self.cone.slices, self.lam_s):
            out[sl] = svec(np.diag(lam))
        return out

    def apply_W(self, z) -> np.ndarray:
        out = np.empty_like(z)
        out[: self.cone.l] = z[: self.cone.l] * self.w
        for sl, R in zip(self.cone.slices, self.R):
            out[sl] = svec(R.T @ smat(z[sl]) @ R)
        return out

    def apply_Winv_T(self, s) -> np.ndarray:
        out = np.empty_like(s)
        out[: self.cone.l] = s[: self.cone.l] / self.w
        for sl, Ri in zip(self.cone.slices, self.Rinv):
            out[sl] = svec(Ri @ smat(s[sl]) @ Ri.T)
        return out

    def apply_Winv(self, v) -> np.ndarray:
        out = np.empty_like(v)
        out[: self.cone.l] = v[: self.cone.l] / self.w
        for sl, Ri in zip(self.cone.slices, self.Rinv):
            out[sl] = svec(Ri.T @ smat(v[sl]) @ Ri)
        return out

    def apply_WT(self, u) -> np.ndarray:
        out = np.empty_like(u)
        out[: self.cone.l] = u[: self.cone.l] * self.w
        for sl, R in zip(self.cone.slices, self.R):
            out[sl] = svec(R @ smat(u[sl]) @ R.T)
        return out

    def lam_prod(self, u) -> np.ndarray:
        """Symmetrized product ``lambda o u``."""
        out = np.empty_like(u)
        out[: self.cone.l] = self.lam_l * u[: self.cone.l]
        for sl, lam in zip(self.cone.slices, self.lam_s):
            U = smat(u[sl])
            out[sl] = svec(0.5 * (lam[:, None] * U + U * lam[None, :]))
        return out

    def lam_div(self, r) -> np.ndarray:
        """Solve ``lambda o u = r`` for ``u``."""
        out = np.empty_like(r)
        out[: self.cone.l] = r[: self.cone.l] / self.lam_l
        for sl, lam in zip(self.cone.slices, self.lam_s):
            out[sl] = svec(2.0 * smat(r[sl]) / (lam[:, None] + lam[None, :]))
        return out


def cone_prod(cone: Cone, u, v) -> np.ndarray:
    """Jordan product ``u o v`` (elementwise on the orthant, ``(UV + VU)/2`` on PSD blocks)."""
    out = np.empty_like(u)
    out[: cone.l] = u[: cone.l] * v[: cone.l]
    for sl in cone.slices:
        U, V = smat(u[sl]), smat(v[sl])
        out[sl] = svec(0.5 * (U @ V + V @ U))
    return out


# ---------------------------------------------------------------------------
# conversion from Gram form


@dataclass
class ConeProgram:
    c: np.ndarray
    G: np.ndarray
    h: np.ndarray
    A: np.ndarray
    b: np.ndarray
    cone: Cone
    offset: float = 0.0  # maximized objective = -c^T x + offset
    face: np.ndarray | None = None  # Gram = face @ X @ face.T with X the reduced Gram variable
    scalar_names: list = field(default_factory=list)
    ineq_names: list = field(default_factory=list)
    eq_names: list = field(default_factory=list)
    block_names: list = field(default_factory=list)
    dropped: list = field(default_factory=list)


def _as_matrix(expr, labels, scalars):
    """Split an affine expression into ``(C, q, const)`` with value ``<C, G> + q.s + const``."""
    index = {lab: i for i, lab in enumerate(labels)}
    sidx = {name: i for i, name in enumerate(scalars)}
    C = np.zeros((len(labels), len(labels)))
    q = np.zeros(len(scalars))
    for key, coef in expr.terms.items():
        if key[0] == "G":
            i, j = index[key[1]], index[key[2]]
            if i == j:
                C[i, i] += coef
            else:
                C[i, j] += coef / 2
                C[j, i] += coef / 2
        else:
            q[sidx[key[1]]] += coef
    return C, q, expr.const


def _reduce_face(parts, names, kinds, n, tol=1e-10):
    """Restrict the Gram matrix to the face cut out by constraints ``-<Q, G> >= 0`` with ``Q`` PSD.

    Such a constraint together with ``G`` PSD forces ``G Q = 0``.  Returns the face
    basis and the names of constraints that vanish identically on the face.
    """
    V = np.eye(n)
    dropped = []
    changed = True
    while changed:
        changed = False
        for name, kind, (C, q, const) in zip(names, kinds, parts):
            if name in dropped:
                continue
            Cf = V.T @ C @ V
            scale = max(1.0, np.max(np.abs(C)))
            if np.any(q != 0) or abs(const) > tol * scale:
                continue
            w, U = np.linalg.eigh(Cf)
            if np.all(np.abs(w) <= tol * scale):
                dropped.append(name)
                continue
            if kind == "ge" and w[-1] <= tol * scale:
                V = V @ U[:, np.abs(w) <= tol * scale]
                dropped.append(name)
                changed = True
    return V, dropped


def _drop_unused_directions(V, mats, tol=1e-10):
    """Remove face directions annihilated by every coefficient matrix.

    Such directions do not affect any expression, so projecting them out leaves
    every value unchanged while making the primal optimal set bounded.
    """
    if not mats or V.shape[1] == 0:
        return V
    stack = np.vstack([V.T @ C @ V for C in mats])
    scale = max(1.0, float(np.max(np.abs(stack))))
    _, sv, Vt = np.linalg.svd(stack)
    rank = int(np.sum(sv > tol * scale))
    if rank == V.shape[1]:
        return V
    return V @ Vt[:rank].T


def to_cone_program(problem: GramSdpProblem, reduce: bool = True) -> ConeProgram:
    """Convert to standard conic form over the (possibly facially reduced) Gram variable."""
    labels, scalars = problem.labels, problem.scalars
    n = len(labels)
    cons = list(problem.constraints)
    parts = [_as_matrix(c.expr, labels, scalars) for c in cons]
    if reduce and problem.gram_psd:
        V, dropped = _reduce_face(parts, [c.name for c in cons], [c.kind for c in cons], n)
        mats = [_as_matrix(problem.objective, labels, scalars)[0]]
        mats += [C for c, (C, _, _) in zip(cons, parts) if c.name not in dropped]
        mats += [_as_matrix(e, labels, scalars)[0] for b in problem.psd_blocks for row in b.entries for e in row]
        V = _drop_unused_directions(V, mats)
    else:
        V, dropped = np.eye(n), []
    k = V.shape[1]
    tri = [(i, j) for j in range(k) for i in range(j, k)]  # svec order
    nvar = len(tri) + len(scalars)

    def row(expr):
        C, q, _ = _as_matrix(expr, labels, scalars)
        Cf = V.T @ C @ V
        r = np.zeros(nvar)
        r[: len(tri)] = [Cf[i, j] * (1.0 if i == j else 2.0) for i, j in tri]
        r[len(tri) :] = q
        return r

    kept = [c for c in cons if c.name not in dropped]
    ineqs = [c for c in kept if c.kind == "ge"]
    eqs = [c for c in kept if c.kind == "eq"]
    gram_block = problem.gram_psd and k > 0
    block_orders = ([k] if gram_block else []) + [2] * len(problem.psd_blocks)
    cone = Cone(len(ineqs), block_orders)

    G = np.zeros((cone.size, nvar))
    h = np.zeros(cone.size)
    for i, c in enumerate(ineqs):
        G[i] = -row(c.expr)
        h[i] = c.expr.const
    slices = list(cone.slices)
    if gram_block:
        sl = slices.pop(0)
        for r, (i, j) in enumerate(tri):
            G[sl.start + r, r] = -1.0 if i == j else -np.sqrt(2.0)
    for blk, sl in zip(problem.psd_blocks, slices):
        r = sl.start
        for j in range(2):
            for i in range(j, 2):
                scale = 1.0 if i == j else np.sqrt(2.0)
                expr = blk.entries[i][j]
                G[r] = -scale * row(expr)
                h[r] = scale * expr.const
                r += 1

    A = np.array([row(c.expr) for c in eqs]).reshape(len(eqs), nvar)
    b = np.array([-c.expr.const for c in eqs])
    return ConeProgram(
        c=-row(problem.objective),
        G=G,
        h=h,
        A=A,
        b=b,
        cone=cone,
        offset=problem.objective.const,
        face=V,
        scalar_names=list(scalars),
        ineq_names=[c.name for c in ineqs],
        eq_names=[c.name for c in eqs],
        block_names=(["gram"] if gram_block else []) + [b_.name for b_ in problem.psd_blocks],
        dropped=dropped,
    )


# ---------------------------------------------------------------------------
# interior-point method on the homogeneous self-dual embedding


@dataclass
class ConicResult:
    status: Status
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    z: np.ndarray
    pcost: float
    dcost: float
    residuals: dict
    iterations: int
    history: list


def _initial_point(prog: ConeProgram):
    n, p, m = prog.c.size, prog.b.size, prog.h.size
    K = np.zeros((n + p + m, n + p + m))
    K[:n, n : n + p] = prog.A.T
    K[:n, n + p :] = prog.G.T
    K[n : n + p, :n] = prog.A
    K[n + p :, :n] = prog.G
    K[n + p :, n + p :] = -np.eye(m)
    sol = np.linalg.lstsq(K, np.concatenate([np.zeros(n), prog.b, prog.h]), rcond=None)[0]
    x, s = sol[:n], -sol[n + p :]
    sol = np.linalg.lstsq(K, np.concatenate([-prog.c, np.zeros(p + m)]), rcond=None)[0]
    y, z = sol[n : n + p], sol[n + p :]
    e = prog.cone.identity()
    for v in (s, z):
        shift = prog.cone.min_eig(v)
        if shift <= 0:
            v += (1.0 - shift) * e
    return x, y, s, z


def solve_cone(prog: ConeProgram, tol: float = DEFAULT_TOL.sdp_rel_tol, options: SolverOptions = SolverOptions()) -> ConicResult:
    c, G, h, A, b, cone = prog.c, prog.G, prog.h, prog.A, prog.b, prog.cone
    n, p, m = c.size, b.size, h.size
    x, y, s, z = _initial_point(prog)
    tau, kap = 1.0, 1.0
    e = cone.identity()
    resx0 = max(1.0, np.linalg.norm(c))
    resz0 = max(1.0, np.linalg.norm(np.concatenate([b, h])))
    history = []
    status = Status.MAX_ITER
    residuals = {}

    for it in range(options.max_iter + 1):
        rx = A.T @ y + G.T @ z + c * tau
        ry = A @ x - b * tau
        rz = G @ x + s - h * tau
        rt = kap + c @ x + b @ y + h @ z
        gap = float(s @ z)
        mu = (gap + tau * kap) / (cone.degree + 1)
        pcost = float(c @ x) / tau
        dcost = -float(b @ y + h @ z) / tau
        pres = max(np.linalg.norm(rz), np.linalg.norm(ry)) / tau / resz0
        dres = np.linalg.norm(rx) / tau / resx0
        rel_gap = gap / tau**2
        residuals = {"primal_feas": pres, "dual_feas": dres, "gap": rel_gap}
        history.append(
            {"iter": it, "pcost": pcost + 0.0, "dcost": dcost, "pres": pres, "dres": dres, "gap": rel_gap, "tau": tau, "kappa": kap, "mu": mu}
        )
        scale = 1.0 + abs(pcost)
        if pres <= tol * scale and dres <= tol * scale and rel_gap <= tol * scale:
            status = Status.OPTIMAL
            break
        hz_by = float(h @ z + b @ y)
        if hz_by < 0 and np.linalg.norm(A.T @ y + G.T @ z) / -hz_by <= tol:
            status = Status.INFEASIBLE
            residuals["certificate"] = float(np.linalg.norm(A.T @ y + G.T @ z) / -hz_by)
            break
        cx = float(c @ x)
        if cx < 0 and max(np.linalg.norm(G @ x + s), np.linalg.norm(A @ x)) / -cx <= tol:
            status = Status.UNBOUNDED
            residuals["certificate"] = float(max(np.linalg.norm(G @ x + s), np.linalg.norm(A @ x)) / -cx)
            break
        if it == options.max_iter:
            break

        try:
            W = NtScaling(cone, s, z)
        except np.linalg.LinAlgError:
            history[-1]["stalled"] = True
            break
        lam = W.lam()
        # scaled system in dz~ = W dz, which avoids forming W^T W
        Gs = np.column_stack([W.apply_Winv_T(G[:, j]) for j in range(n)]) if n else np.zeros((m, 0))
        hs = W.apply_Winv_T(h)
        N = n + p + m + 1
        K = np.zeros((N, N))
        K[:n, n : n + p] = A.T
        K[:n, n + p : n + p + m] = Gs.T
        K[:n, -1] = c
        K[n : n + p, :n] = A
        K[n : n + p, -1] = -b
        K[n + p : n + p + m, :n] = Gs
        K[n + p : n + p + m, n + p : n + p + m] = -np.eye(m)
        K[n + p : n + p + m, -1] = -hs
        K[-1, :n] = c
        K[-1, n : n + p] = b
        K[-1, n + p : n + p + m] = hs
        K[-1, -1] = -kap / tau
        try:
            lu = _Factor(K)
        except np.linalg.LinAlgError:
            break

        def newton(eta, rc, rk):
            u = W.lam_div(rc)
            rhs = np.concatenate([-eta * rx, -eta * ry, -eta * W.apply_Winv_T(rz) - u, [-eta * rt - rk / tau]])
            sol = lu.solve(rhs, options.refine_steps)
            dx, dy, dzs, dt = sol[:n], sol[n : n + p], sol[n + p : n + p + m], sol[-1]
            dz = W.apply_Winv(dzs)
            ds = W.apply_WT(u - dzs)
            dk = (rk - kap * dt) / tau
            return dx, dy, dz, dt, ds, dk

        def step_length(ds, dz, dt, dk):
            alpha = min(cone.max_step(s, ds), cone.max_step(z, dz))
            if dt < 0:
                alpha = min(alpha, -tau / dt)
            if dk < 0:
                alpha = min(alpha, -kap / dk)
            return alpha

        # predictor
        aff = newton(1.0, -cone_prod(cone, lam, lam), -tau * kap)
        alpha_aff = min(1.0, step_length(aff[4], aff[2], aff[3], aff[5]))
        sigma = (1.0 - alpha_aff) ** 3
        # corrector
        corr = cone_prod(cone, W.apply_Winv_T(aff[4]), W.apply_W(aff[2]))
        rc = sigma * mu * e - cone_prod(cone, lam, lam) - corr
        rk = sigma * mu - tau * kap - aff[3] * aff[5]
        dx, dy, dz, dt, ds, dk = newton(1.0 - sigma, rc, rk)
        alpha = min(1.0, options.step_fraction * step_length(ds, dz, dt, dk))
        history[-1].update(step=alpha, sigma=sigma)

        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        s = s + alpha * ds
        tau += alpha * dt
        kap += alpha * dk

    return ConicResult(status, x, y, s, z, float(c @ x) / tau, -float(b @ y + h @ z) / tau, residuals, it, history)._normalize(tau)


class _Factor:
    """LU factorization with iterative refinement."""

    def __init__(self, K):
        import scipy.linalg

        self.K = K
        self._lu = scipy.linalg.lu_factor(K, check_finite=True)
        self._solve = scipy.linalg.lu_solve

    def solve(self, rhs, refine: int):
        sol = self._solve(self._lu, rhs)
        for _ in range(refine):
            sol = sol + self._solve(self._lu, rhs - self.K @ sol)
        return sol


def _normalize(self: ConicResult, tau: float) -> ConicResult:
    if self.status in (Status.OPTIMAL, Status.MAX_ITER):
        self.x, self.y, self.s, self.z = self.x / tau, self.y / tau, self.s / tau, self.z / tau
    return self


ConicResult._normalize = _normalize


# ---------------------------------------------------------------------------
# Gram-level interface


@dataclass
class SdpSolution:
    problem: GramSdpProblem
    gram: np.ndarray
    scalars: dict
    objective_value: float
    duals: dict
    block_duals: dict
    status: Status
    residuals: dict
    iterations: int
    history: list = field(default_factory=list, repr=False)
    dropped: list = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL

    def realize(self, tol: float = DEFAULT_TOL.eig_tol) -> dict:
        """Concrete vectors whose Gram matrix is the optimal one.

        Returns a map label -> vector of dimension ``rank(G)`` (at most the number of labels).
        """
        w, V = np.linalg.eigh(self.gram)
        keep = w > tol * max(1.0, w[-1])
        if not np.any(keep):
            keep = np.zeros_like(w, dtype=bool)
            keep[-1] = True
        F = V[:, keep] * np.sqrt(np.clip(w[keep], 0.0, None))
        return {lab: F[i] for i, lab in enumerate(self.problem.labels)}

    def dump_history(self, path) -> None:
        with open(path, "w") as fh:
            for row in self.history:
                fh.write(json.dumps(row) + "\n")


def solve(
    problem: GramSdpProblem,
    tol: Tolerances = DEFAULT_TOL,
    options: SolverOptions = SolverOptions(),
    reduce: bool = True,
) -> SdpSolution:
    """Maximize a Gram-form problem.

    With ``reduce=True`` inequalities that force the Gram matrix onto a proper face
    (``-<Q, G> >= 0`` with ``Q`` PSD) are eliminated first; they are listed in
    ``dropped`` and carry no multiplier.

    Dual values follow the Lagrangian ``objective + sum lambda_i e_i + sum nu_j q_j + <Z, M>``
    for inequalities ``e_i >= 0``, equalities ``q_j = 0`` and PSD blocks ``M``, so the
    inequality multipliers and block duals are nonnegative/PSD.
    """
    if isinstance(problem, (dict, str)):
        problem = GramSdpProblem.from_json(problem)
    prog = to_cone_program(problem, reduce=reduce)
    res = solve_cone(prog, tol.sdp_rel_tol, options)

    k = prog.face.shape[1]
    X = np.zeros((k, k))
    r = 0
    for j in range(k):
        for i in range(j, k):
            X[i, j] = X[j, i] = res.x[r]
            r += 1
    gram = prog.face @ X @ prog.face.T
    scalars = {name: float(v) for name, v in zip(prog.scalar_names, res.x[r:])}

    duals = {name: float(v) for name, v in zip(prog.ineq_names, res.z[: prog.cone.l])}
    duals.update({name: float(-v) for name, v in zip(prog.eq_names, res.y)})
    block_duals = {name: smat(res.z[sl]) for name, sl in zip(prog.block_names, prog.cone.slices)}
    if problem.gram_psd:
        Z = block_duals.get("gram", np.zeros((0, 0)))
        block_duals["gram"] = prog.face @ Z @ prog.face.T

    return SdpSolution(
        problem=problem,
        gram=gram,
        scalars=scalars,
        objective_value=-res.pcost + prog.offset,
        duals=duals,
        block_duals=block_duals,
        status=res.status,
        residuals=res.residuals,
        iterations=res.iterations,
        history=res.history,
        dropped=list(prog.dropped),
    )
