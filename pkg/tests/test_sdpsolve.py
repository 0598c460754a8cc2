import math

import numpy as np
import pytest

from pepkit.cert import DUAL_TOL, certificate, dual_report, pep_instance_for, support_constraints
from pepkit.core import smat, svec
from pepkit.pep import Affine, Constraint, ExactLineSearch, FixedStep, GramSdpProblem, PepInstance, Variant, build, build_els
from pepkit.sdpsolve import SolverOptions, Status, solve, solve_cone, to_cone_program

F1 = Affine.scalar("f1")


def scalar_problem(*constraints):
    return GramSdpProblem(("a",), ("f1",), F1, list(constraints))


def test_trivial_upper_bound():
    sol = solve(scalar_problem(Constraint("c", "ge", 3 - F1)))
    assert sol.status is Status.OPTIMAL
    assert sol.objective_value == pytest.approx(3.0, abs=1e-7)
    assert sol.duals["c"] == pytest.approx(1.0, abs=1e-7)


def test_unbounded_detected():
    sol = solve(scalar_problem(Constraint("c", "ge", F1 - 3)))
    assert sol.status is Status.UNBOUNDED
    assert sol.residuals["certificate"] <= 1e-8


def test_infeasible_detected():
    sol = solve(scalar_problem(Constraint("c", "ge", 3 - F1), Constraint("d", "ge", F1 - 4)))
    assert sol.status is Status.INFEASIBLE


def test_max_iter_status():
    p = build_els(PepInstance(Variant.GRADIENT_NORM, ExactLineSearch(), 0.25, 1.0, 0.1))
    assert solve(p, options=SolverOptions(max_iter=2)).status is Status.MAX_ITER


def test_els_function_value_eps_zero():
    sol = solve(build(PepInstance(Variant.FUNCTION_VALUE, ExactLineSearch(), 0.25, 1.0, 0.0)))
    assert sol.objective_value == pytest.approx(0.36, abs=1e-4)


def test_els_gradient_at_eps_boundary():
    kappa = 0.25
    eps = 2 * math.sqrt(kappa) / (1 + kappa)
    expected = (eps + math.sqrt(1 - eps**2) * (1 - kappa) / (2 * math.sqrt(kappa))) ** 2
    assert expected == pytest.approx(1.5625, abs=1e-12)
    sol = solve(build(PepInstance(Variant.GRADIENT_NORM, ExactLineSearch(), kappa, 1.0, eps)))
    assert sol.objective_value == pytest.approx(expected, rel=1e-4)


@pytest.mark.parametrize("variant", list(Variant))
@pytest.mark.parametrize("kappa,eps", [(0.1, 0.0), (0.25, 0.2), (0.5, 0.3)])
def test_optimum_scales_with_budget(variant, kappa, eps):
    base = solve(build(PepInstance(variant, ExactLineSearch(), kappa, 1.0, eps))).objective_value
    big = solve(build(PepInstance(variant, ExactLineSearch(), kappa, 1.0, eps, R=3.0))).objective_value
    assert big == pytest.approx(3.0 * base, rel=1e-5)


def els_gradient_report(eps):
    cert = certificate("els_gradient", kappa=0.25, eps=eps)
    problem = build(pep_instance_for(cert)).restricted(support_constraints(cert))
    return cert, dual_report(solve(problem, tol=DUAL_TOL), cert)


def test_dual_s21_at_eps_zero():
    _, rep = els_gradient_report(0.0)
    assert rep["S[1,0]"][0] == pytest.approx(-1.0, abs=1e-5)


def test_dual_linesearch_multiplier():
    cert, rep = els_gradient_report(0.1)
    mu, L = cert.params["mu"], cert.params["L"]
    assert rep["linesearch"][0] == pytest.approx(L + mu, rel=1e-5)


def test_dual_lambda_at_eps_zero():
    cert, rep = els_gradient_report(0.0)
    L, mu = cert.params["L"], cert.params["mu"]
    assert rep["interp"][0] / (L - mu) == pytest.approx(1.0, abs=1e-5)


@pytest.mark.parametrize("variant", list(Variant))
@pytest.mark.parametrize("rule", [ExactLineSearch(), FixedStep(0.3)])
def test_kkt_and_realization(variant, rule):
    p = build(PepInstance(variant, rule, 0.25, 1.0, 0.15))
    sol = solve(p)
    assert sol.status is Status.OPTIMAL
    assert all(v >= -1e-7 for k, v in sol.duals.items() if p.constraint(k).kind == "ge")
    assert np.linalg.eigvalsh(sol.gram)[0] >= -1e-8
    vecs = sol.realize()
    assert all(v.size <= 4 for v in vecs.values())
    rebuilt = np.array([[vecs[a] @ vecs[b] for b in p.labels] for a in p.labels])
    assert np.max(np.abs(rebuilt - sol.gram)) <= 1e-8 * max(1.0, np.abs(sol.gram).max())
    last = sol.history[-1]
    assert abs(last["pcost"] - last["dcost"]) <= 1e-6 * (1 + abs(last["pcost"]))


def test_deterministic_history():
    p = build(PepInstance(Variant.DISTANCE, ExactLineSearch(), 0.3, 1.0, 0.2))
    a, b = solve(p), solve(p)
    assert a.history == b.history
    assert np.array_equal(a.gram, b.gram)


def test_json_problem_accepted():
    p = build(PepInstance(Variant.GRADIENT_NORM, FixedStep(0.4), 0.25, 1.0, 0.0))
    assert solve(p.dumps()).objective_value == pytest.approx(solve(p).objective_value, abs=1e-10)


def test_reduction_does_not_change_value():
    p = build(PepInstance(Variant.GRADIENT_NORM, ExactLineSearch(), 0.25, 1.0, 0.0))
    assert solve(p, reduce=False).objective_value == pytest.approx(solve(p).objective_value, abs=1e-6)


def _cvxpy_value(prog):
    cp = pytest.importorskip("cvxpy")
    x = cp.Variable(prog.c.size)
    s = prog.h - prog.G @ x
    cons = [s[: prog.cone.l] >= 0] if prog.cone.l else []
    for n, sl in zip(prog.cone.s, prog.cone.slices):
        k = sl.start
        entries = {}
        for j in range(n):
            for i in range(j, n):
                entries[i, j] = s[k] if i == j else s[k] / math.sqrt(2)
                k += 1
        rows = [[entries[max(i, j), min(i, j)] for j in range(n)] for i in range(n)]
        M = cp.bmat(rows)
        cons.append((M + M.T) / 2 >> 0)
    if prog.b.size:
        cons.append(prog.A @ x == prog.b)
    problem = cp.Problem(cp.Minimize(prog.c @ x), cons)
    problem.solve(solver="CLARABEL")
    return problem.value


@pytest.mark.parametrize("variant", list(Variant))
@pytest.mark.parametrize("kappa,eps", [(0.2, 0.1), (0.6, 0.05)])
def test_matches_reference_solver(variant, kappa, eps):
    prog = to_cone_program(build(PepInstance(variant, FixedStep(0.5), kappa, 1.0, eps)))
    ref = _cvxpy_value(prog)
    res = solve_cone(prog)
    assert res.status is Status.OPTIMAL
    assert res.pcost == pytest.approx(ref, rel=1e-5, abs=1e-7)


def test_svec_inner_product(rng):
    A = rng.normal(size=(4, 4))
    B = rng.normal(size=(4, 4))
    A, B = A + A.T, B + B.T
    assert svec(A) @ svec(B) == pytest.approx(np.trace(A @ B))
    assert np.allclose(smat(svec(A)), A)
