import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from pepkit.cert import GateError
from pepkit.entropic import (
    SERIES_CUTOFF,
    BoltzmannModel,
    EntropicBarrierBox,
    ExactOracle,
    IpmConfig,
    Polytope,
    ProximityError,
    Sampled,
    approx_direction,
    approx_entropic_gradient,
    boltzmann_cov,
    boltzmann_mean,
    central_path_gap,
    central_path_point,
    chain_mean_band,
    conjugate_by_sup,
    direction_error,
    effective_eps,
    empirical_covariance,
    entropic_gradient,
    hessian_conjugacy_check,
    hit_and_run,
    ipm_run,
    iteration_ceiling,
    iterations_needed,
    log_partition_box,
    natural_parameter,
    sandwich_check,
    sandwich_level,
)
from pepkit.funcs import Box, DomainError, barrier_parameter_check, sc_sandwich

UNIT2 = Box(np.zeros(2), np.ones(2))


def unit(n):
    return Box(np.zeros(n), np.ones(n))


def quad_moments(t, a=0.0, b=1.0):
    """Log partition, mean and variance of ``exp(-t x)`` on ``[a, b]`` by adaptive quadrature."""
    w = b - a
    # the mass sits within a few 1/|t| of one end; help quad find it
    scale = min(w, 1 / abs(t)) if t else w
    pts = [u for u in (scale, 5 * scale, w - 5 * scale, w - scale) if 0 < u < w]
    top = 0.0 if t >= 0 else -t * w  # shift the exponent to avoid overflow

    def integral(h):
        return quad(lambda u: h(u) * math.exp(-t * u - top), 0, w, points=pts or None, limit=200, epsabs=0, epsrel=1e-13)[0]

    z = integral(lambda u: 1.0)
    m = integral(lambda u: u) / z
    v = integral(lambda u: (u - m) ** 2) / z
    return math.log(z) + top - t * a, a + m, v


def test_uniform_log_partition():
    lp = log_partition_box(BoltzmannModel(unit(3), np.zeros(3)))
    assert lp.A == pytest.approx(0.0, abs=1e-15)
    assert np.allclose(lp.gradA, -0.5)
    assert np.allclose(lp.hessA, np.eye(3) / 12)


def test_tilted_gradient_example():
    lp = log_partition_box(BoltzmannModel(UNIT2, np.array([1.0, 0.0])))
    expected = -(1 - math.exp(-1) / (1 - math.exp(-1)))
    assert lp.gradA[0] == pytest.approx(expected, abs=1e-14)
    assert round(lp.gradA[0], 4) == -0.4180
    _, m, _ = quad_moments(1.0)
    assert lp.gradA[0] == pytest.approx(-m, abs=1e-10)


@given(st.floats(-40, 40), st.floats(-3, 3), st.floats(0.1, 4))
def test_one_dimensional_moments_match_quadrature(t, a, w):
    box = Box(np.array([a]), np.array([a + w]))
    lp = log_partition_box(BoltzmannModel(box, np.array([t])))
    logz, m, v = quad_moments(t, a, a + w)
    assert lp.A == pytest.approx(logz, rel=1e-9, abs=1e-9)
    assert -lp.gradA[0] == pytest.approx(m, rel=1e-8, abs=1e-9 * w)
    assert lp.hessA[0, 0] == pytest.approx(v, rel=1e-6, abs=1e-12)


@pytest.mark.parametrize("side", [-1, 1])
@pytest.mark.parametrize("shift", [1 - 1e-9, 1 + 1e-9])
def test_series_switch_is_accurate(side, shift):
    t = side * SERIES_CUTOFF * shift
    lp = log_partition_box(BoltzmannModel(unit(1), np.array([t])))
    logz, m, v = quad_moments(t)
    assert lp.A == pytest.approx(logz, abs=1e-14)
    assert -lp.gradA[0] == pytest.approx(m, abs=1e-14)
    assert lp.hessA[0, 0] == pytest.approx(v, abs=1e-11)


def test_hessian_matches_finite_differences(rng):
    box = Box(np.array([-1.0, 0.0, 2.0]), np.array([1.0, 0.5, 5.0]))
    for _ in range(5):
        th = rng.normal(scale=3, size=3)
        h = 1e-5
        H = np.column_stack([
            (log_partition_box(BoltzmannModel(box, th + h * e)).gradA - log_partition_box(BoltzmannModel(box, th - h * e)).gradA) / (2 * h)
            for e in np.eye(3)
        ])
        assert np.allclose(H, log_partition_box(BoltzmannModel(box, th)).hessA, atol=1e-6)


@given(st.floats(-50, 50))
def test_natural_parameter_inverts_mean(t):
    box = unit(1)
    x = boltzmann_mean(box, np.array([t]))
    assert natural_parameter(box, x)[0] == pytest.approx(t, rel=1e-6, abs=1e-6)


def test_central_path_center_for_zero_objective():
    assert np.allclose(central_path_point(UNIT2, np.zeros(2), 3.0), 0.5)


def test_central_path_example():
    x = central_path_point(UNIT2, np.array([1.0, 0.0]), 1.0)
    assert round(x[0], 4) == 0.4180 and x[1] == pytest.approx(0.5)


def test_central_path_concentrates():
    x = central_path_point(UNIT2, np.array([1.0, -1.0]), 1e3)
    assert np.allclose(x, [0.0, 1.0], atol=1e-2)


def test_central_path_rejects_nonpositive_eta():
    with pytest.raises(ValueError):
        central_path_point(UNIT2, np.ones(2), 0.0)


@pytest.mark.parametrize("eta", [0.5, 1.0, 5.0, 40.0])
def test_central_path_stationary(eta):
    th = np.array([1.0, -0.3])
    x = central_path_point(UNIT2, th, eta)
    assert np.max(np.abs(entropic_gradient(x, eta, th, UNIT2))) <= 1e-10


@pytest.mark.parametrize("eta", [0.5, 2.0, 20.0])
def test_central_path_gap_bound(eta):
    th = np.array([0.7, -1.2])
    assert 0 < central_path_gap(UNIT2, th, eta) <= 2 / eta


def test_symmetric_point_gradient_zero():
    assert entropic_gradient(np.array([0.5]), 1.0, np.zeros(1), unit(1))[0] == pytest.approx(0.0, abs=1e-12)


def test_gradient_matches_sup_definition(rng):
    th, eta = np.array([0.4, -1.1]), 2.0
    x0 = np.array([0.3, 0.65])
    h = 1e-5

    def f(x):
        return eta * th @ x + conjugate_by_sup(UNIT2, x)[0]

    fd = np.array([(f(x0 + h * e) - f(x0 - h * e)) / (2 * h) for e in np.eye(2)])
    assert np.allclose(fd, entropic_gradient(x0, eta, th, UNIT2), atol=1e-5)


def test_barrier_value_matches_sup(rng):
    b = EntropicBarrierBox(np.zeros(3), np.ones(3))
    x = rng.uniform(0.05, 0.95, size=3)
    assert b.value(x) == pytest.approx(conjugate_by_sup(unit(3), x)[0], abs=1e-10)
    assert b.value(np.array([1.0, 0.5, 0.5])) == math.inf


def test_approx_gradient_accuracy(rng):
    th, eta = np.array([1.0, 0.5]), 3.0
    for _ in range(10):
        x0 = rng.uniform(0.1, 0.9, size=2)
        sigma = boltzmann_cov(UNIT2, natural_parameter(UNIT2, x0))
        g = entropic_gradient(x0, eta, th, UNIT2)
        gt, _ = approx_entropic_gradient(x0, eta, th, UNIT2, sigma, 0.01)
        r = gt - g
        assert math.sqrt(r @ sigma @ r) <= 0.01 * math.sqrt(g @ sigma @ g) + 1e-14


def test_approx_gradient_rejects_boundary():
    with pytest.raises(DomainError):
        approx_entropic_gradient(np.array([0.0, 0.5]), 1.0, np.ones(2), UNIT2, np.eye(2), 0.01)


@pytest.mark.parametrize("n", [1, 2, 5])
@pytest.mark.parametrize("eta", [0.5, 1.0, 5.0])
def test_hessian_conjugacy(n, eta):
    th = np.linspace(1.0, -1.0, n) + 0.3
    assert hessian_conjugacy_check(unit(n), th, eta) <= 1e-6


def test_conjugacy_uniform_case():
    assert hessian_conjugacy_check(UNIT2, np.zeros(2), 2.0) <= 1e-6
    b = EntropicBarrierBox(np.zeros(2), np.ones(2))
    assert np.allclose(b.hess(np.full(2, 0.5)), 12 * np.eye(2))


@pytest.mark.parametrize("delta", [0.1, 0.25, 0.3564])
def test_entropic_barrier_sandwich(delta, rng):
    b = EntropicBarrierBox(np.zeros(2), np.ones(2))
    for x in (np.full(2, 0.5), np.array([0.05, 0.8]), np.array([0.3, 0.97])):
        assert sc_sandwich(b, x, delta, 200, rng).verified


def test_entropic_barrier_parameter():
    b = EntropicBarrierBox(np.zeros(2), np.ones(2))
    grid = [np.array([u, v]) for u in np.linspace(0.01, 0.99, 25) for v in np.linspace(0.01, 0.99, 25)]
    assert barrier_parameter_check(b, grid) <= 2 + 1e-9


def test_uniform_sampler_mean():
    s = hit_and_run(BoltzmannModel(UNIT2, np.zeros(2)), np.full(2, 0.3), count=10_000, seed=1, n_chains=100)
    mean, se = chain_mean_band(s, 100)
    assert np.all(np.abs(mean - 0.5) <= 3 * se)


def test_interval_sampler_mean():
    s = hit_and_run(BoltzmannModel(unit(1), np.ones(1)), np.full(1, 0.5), count=10_000, seed=2, n_chains=100)
    mean, se = chain_mean_band(s, 100)
    assert abs(mean[0] - 0.4180) <= 3 * se[0] + 1e-4


def test_sampler_variance():
    th = np.array([2.0, -1.0])
    s = hit_and_run(BoltzmannModel(UNIT2, th), np.full(2, 0.5), count=20_000, seed=3, n_chains=200)
    assert np.allclose(s.var(axis=0), np.diag(boltzmann_cov(UNIT2, th)), rtol=0.05)


def test_polytope_triangle_centroid():
    tri = Polytope(np.array([[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]]), np.array([0.0, 0.0, 1.0]))
    s = hit_and_run(BoltzmannModel(tri, np.zeros(2)), np.array([0.2, 0.2]), count=10_000, seed=4, n_chains=100)
    mean, se = chain_mean_band(s, 100)
    assert np.all(np.abs(mean - 1 / 3) <= 3 * se)


def test_polytope_box_matches_box():
    model = BoltzmannModel(Polytope.from_box(UNIT2), np.array([1.0, 0.0]))
    s = hit_and_run(model, np.full(2, 0.5), count=10_000, seed=5, n_chains=100)
    mean, se = chain_mean_band(s, 100)
    assert np.all(np.abs(mean - boltzmann_mean(UNIT2, model.theta)) <= 3 * se)


def test_sampler_deterministic():
    model = BoltzmannModel(UNIT2, np.array([0.5, 1.0]))
    a = hit_and_run(model, np.full(2, 0.5), count=200, seed=9)
    b = hit_and_run(model, np.full(2, 0.5), count=200, seed=9)
    assert np.array_equal(a, b)


def test_sampler_rejects_infeasible_start():
    with pytest.raises(ValueError):
        hit_and_run(BoltzmannModel(UNIT2, np.zeros(2)), np.array([1.5, 0.5]), count=10)


def test_empirical_covariance_examples():
    assert np.array_equal(empirical_covariance([[1.0, 2.0], [1.0, 2.0]]).sigma, np.zeros((2, 2)))
    est = empirical_covariance([[0.0, 0.0], [1.0, 0.0]])
    assert np.allclose(est.sigma, [[0.25, 0.0], [0.0, 0.0]])
    assert est.N == 2
    with pytest.raises(ValueError):
        empirical_covariance([[0.0, 0.0]])


def sandwich_rate(C, trials=100):
    n = 2
    exact = np.eye(n) / 12
    hits = 0
    for seed in range(trials):
        s = hit_and_run(BoltzmannModel(UNIT2, np.zeros(n)), np.full(n, 0.5), count=C * n, seed=seed, n_chains=C * n, thin=1)
        hits += sandwich_check(exact, empirical_covariance(s).sigma, 0.1)
    return hits / trials


def test_sandwich_rate_c400():
    assert sandwich_rate(400) >= 0.95


def test_sandwich_rate_c800():
    assert sandwich_rate(800) >= 0.95


def test_sandwich_examples():
    S = np.array([[2.0, 0.3], [0.3, 1.0]])
    assert sandwich_check(S, S, 1e-9)
    assert not sandwich_check((1 + 2 * 0.1) * S, S, 0.1)
    with pytest.raises(np.linalg.LinAlgError):
        sandwich_check(S, np.diag([1.0, 0.0]), 0.1)


def test_sandwich_matches_quadratic_form_sweep(rng):
    for _ in range(20):
        A = rng.normal(size=(3, 3))
        S = A @ A.T + np.eye(3)
        E = rng.normal(scale=0.03, size=(3, 3))
        S_hat = S + (E + E.T) / 2
        eps = 0.05
        Y = rng.normal(size=(1000, 3))
        q = np.einsum("ij,jk,ik->i", Y, S, Y)
        qh = np.einsum("ij,jk,ik->i", Y, S_hat, Y)
        Si, Shi = np.linalg.inv(S), np.linalg.inv(S_hat)
        qi = np.einsum("ij,jk,ik->i", Y, Si, Y)
        qhi = np.einsum("ij,jk,ik->i", Y, Shi, Y)
        sweep = np.all((1 - eps) * qh <= q) and np.all(q <= (1 + eps) * qh)
        sweep &= np.all((1 - eps) * qhi <= qi) and np.all(qi <= (1 + eps) * qhi)
        if sandwich_check(S, S_hat, eps):
            assert sweep
        assert sandwich_check(S, S_hat, sandwich_level(S, S_hat) + 1e-12)


def test_effective_eps_examples():
    assert effective_eps(0.0, 0.0) == 0.0
    e = effective_eps(0.0002, 0.01)
    assert round(e, 4) == 0.0300 and e <= 1 / 32


def test_exact_direction():
    S = np.diag([0.1, 0.2])
    g = np.array([1.0, -1.0])
    d, e = approx_direction(S, g)
    assert e == 0 and np.allclose(d, S @ g)
    assert direction_error(d, g, S) == 0


def boundary_sigma_hat(S, eps_hat, rng):
    """A covariance estimate whose relative eigenvalues sit on both ends of the sandwich."""
    n = S.shape[0]
    w, V = np.linalg.eigh(S)
    R = V * np.sqrt(w) @ V.T
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    lam = np.where(np.arange(n) % 2 == 0, 1 + eps_hat, 1 / (1 + eps_hat))
    return R @ Q @ np.diag(1 / lam) @ Q.T @ R


@pytest.mark.parametrize("eps_hat", [0.0002, 0.01, 0.05])
def test_direction_error_on_sandwich_boundary(eps_hat, rng):
    bound = math.sqrt(2 * eps_hat / (1 - eps_hat))
    for _ in range(100):
        n = int(rng.integers(1, 6))
        box = unit(n)
        S = boltzmann_cov(box, rng.normal(scale=3, size=n))
        S_hat = boundary_sigma_hat(S, eps_hat, rng)
        assert sandwich_check(S, S_hat, eps_hat * (1 + 1e-9))
        g = rng.normal(size=n)
        d, e = approx_direction(S_hat, g, eps_hat)
        assert direction_error(d, g, S) <= bound + 1e-12
        assert e == pytest.approx(bound)


def test_direction_error_with_gradient_error(rng):
    eps_hat, eps_prime = 0.0002, 0.01
    for _ in range(100):
        n = int(rng.integers(1, 6))
        S = boltzmann_cov(unit(n), rng.normal(scale=3, size=n))
        S_hat = boundary_sigma_hat(S, eps_hat, rng)
        g = rng.normal(size=n)
        u = rng.normal(size=n)
        u *= eps_prime * math.sqrt(g @ S @ g) / math.sqrt(u @ S @ u)
        d, e = approx_direction(S_hat, g + u, eps_hat, eps_prime)
        assert direction_error(d, g, S) <= e + 1e-12


def test_iteration_ceiling_covers_update():
    for n in (1, 2, 5, 20):
        for eta0 in (0.1, 1.0, 10.0):
            assert iterations_needed(n, eta0, 1e-3) <= iteration_ceiling(n, eta0, 1e-3)


@pytest.mark.parametrize("n", [2, 5])
def test_ipm_exact(n):
    th = np.zeros(n)
    th[0] = 1.0
    cfg = IpmConfig(th, unit(n), eta0=1.0)
    tr = ipm_run(cfg)
    assert tr.max_proximity() <= 0.125
    assert tr.iterations <= tr.ceiling
    assert tr.iterations == iterations_needed(n, 1.0, 1e-3)
    assert tr.gap <= 1e-3
    assert tr.conversion_holds()
    assert not tr.violations()


def test_ipm_dense_objective_gap_bound():
    th = np.array([1.0, -0.5])
    tr = ipm_run(IpmConfig(th, UNIT2, eta0=1.0))
    assert tr.max_proximity() <= 0.125
    assert tr.gap <= tr.gap_bound


def test_ipm_perturbed_start():
    th = np.array([1.0, 0.0])
    xc = central_path_point(UNIT2, th, 1.0)
    S = boltzmann_cov(UNIT2, th)
    u = np.array([1.0, 1.0])
    x0 = xc + 0.124 * u / math.sqrt(u @ np.linalg.solve(S, u))
    tr = ipm_run(IpmConfig(th, UNIT2, eta0=1.0, x0=x0))
    assert tr.max_proximity() <= 0.125


def test_ipm_rejects_far_start():
    with pytest.raises(ValueError, match="start proximity"):
        ipm_run(IpmConfig(np.array([1.0, 0.0]), UNIT2, eta0=1.0, x0=np.array([0.1, 0.1])))


def test_ipm_gate():
    with pytest.raises(GateError):
        ipm_run(IpmConfig(np.array([1.0, 0.0]), UNIT2, eta0=1.0, eps_hat=0.01))


def test_ipm_proximity_failure_is_loud():
    # an oversized step breaks the invariant and must be reported with the trace
    with pytest.raises(ProximityError) as info:
        ipm_run(IpmConfig(np.array([1.0, 0.0]), UNIT2, eta0=1.0, vartheta=1e-6, eps_bar=1e-9))
    assert info.value.trace.records


def test_ipm_trace_export(tmp_path):
    tr = ipm_run(IpmConfig(np.array([1.0, 0.0]), UNIT2, eta0=1.0, eps_bar=0.5))
    tr.to_jsonl(tmp_path / "t.jsonl")
    assert len((tmp_path / "t.jsonl").read_text().splitlines()) == tr.iterations


def test_ipm_sampled_short_run():
    mode = Sampled(seed=3, n_chains=200, N_start=1000, N_max=4000)
    tr = ipm_run(IpmConfig(np.array([1.0, 0.0]), UNIT2, eta0=1.0, eps_bar=0.5, mode=mode, strict=False))
    assert tr.iterations == iterations_needed(2, 1.0, 0.5)
    assert all(r.N is not None for r in tr.records)
    assert tr.max_proximity() <= 0.125


def test_ipm_config_validation():
    with pytest.raises(ValueError):
        IpmConfig(np.ones(2), UNIT2, eta0=0.0)
    with pytest.raises(ValueError):
        IpmConfig(np.ones(2), UNIT2, eta0=1.0, delta=1.0)
    assert IpmConfig(np.ones(2), UNIT2, eta0=1.0).vartheta == 2.0
    assert isinstance(IpmConfig(np.ones(2), UNIT2, eta0=1.0).mode, ExactOracle)
