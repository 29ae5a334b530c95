import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fdeminv.errors import LineSearchFailed, SolverAbort
from fdeminv.forward import Geometry, device_preset, forward_batch, forward_image
from fdeminv.harness import oracle_dense_xi
from fdeminv.regops import Lap2D, dct_spectrum, unvec, vec
from fdeminv.solvers import (
    SolverParams,
    alternating_invert,
    armijo_positive,
    decoupled_invert,
    gn_column_solve,
    mm_majorant,
    mm_u_update,
    mm_xi_solve,
    smoothed_lq,
    splicing,
    xi_objective,
)

DEV = device_preset("gem2")


# --- line search --------------------------------------------------------------


def test_armijo_accepts_newton_step_on_quadratic():
    sigma = np.array([0.5, 2.0])
    alpha, new, res2 = armijo_positive(sigma, -sigma, lambda s: s, float(sigma @ sigma))
    assert alpha == 1.0 and np.array_equal(new, [0, 0]) and res2 == 0


def test_armijo_respects_positivity():
    target = np.array([-3.0, 0.0])
    sigma = np.array([1.0, 1.0])
    q = target - sigma
    alpha, new, _ = armijo_positive(sigma, q, lambda s: s - target, float(q @ q))
    assert alpha == 0.25 and np.all(new >= 0)


def test_armijo_projected_variant_clips():
    target = np.array([-3.0, 0.0])
    sigma = np.array([1.0, 1.0])
    q = target - sigma
    alpha, new, res2 = armijo_positive(sigma, q, lambda s: s - target, float(q @ q), jacobian=np.eye(2))
    # the clipped step (-1, -1) gains 17 - 9 = 8 >= ||J q_eff||^2 / 2 = 1
    assert alpha == 1.0 and np.array_equal(new, [0.0, 0.0]) and res2 == 9.0


def test_armijo_projected_bound_uses_step_taken():
    target = np.array([-3.0, 0.0])
    sigma = np.array([1.0, 1.0])
    q = 10 * (target - sigma)
    # ||J q||^2 / 2 = 850 could never be met, the clipped step (-1, -1) needs only 1
    alpha, new, _ = armijo_positive(sigma, q, lambda s: s - target, float(q @ q), jacobian=np.eye(2))
    assert alpha == 1.0 and np.array_equal(new, [0.0, 0.0])
    with pytest.raises(LineSearchFailed):
        armijo_positive(sigma, q, lambda s: s - target, float(q @ q), alpha_min=0.1)


def test_armijo_reports_exhaustion():
    with pytest.raises(LineSearchFailed):
        armijo_positive(np.ones(2), np.ones(2), lambda s: np.ones(3), 1.0, alpha_min=1e-10)
    with pytest.raises(LineSearchFailed):
        armijo_positive(np.ones(2), np.array([np.nan, 0.0]), lambda s: s, 1.0)


# --- smoothing and MM -----------------------------------------------------------


def test_smoothed_lq_values():
    assert smoothed_lq(np.zeros(4), 0.5, 0.1) == pytest.approx(4 * 0.1**0.5)
    x = np.array([1.0, -2.0, 0.5])
    assert smoothed_lq(x, 2, 0.3) == pytest.approx(x @ x + 3 * 0.09)
    assert abs(smoothed_lq(np.array([3.0, 4.0]), 1, 1e-6) - 7) < 1e-5
    with pytest.raises(ValueError):
        smoothed_lq(x, 1, 0.0)


def test_mm_u_update_values():
    assert np.array_equal(mm_u_update(np.zeros(3), 0.1, 0.01), np.zeros(3))
    assert np.array_equal(mm_u_update(np.array([0.3, -2.0]), 2, 0.1), np.zeros(2))
    assert mm_u_update(np.array([1.0]), 1, 1.0)[0] == pytest.approx(1 - 2**-0.5, abs=1e-12)


def test_mm_without_regularisation_returns_data():
    rng = np.random.default_rng(0)
    s = rng.uniform(size=12)
    xi, hist = mm_xi_solve(s, SolverParams(gamma=0.0), dct_spectrum(3, 4), maxit=1)
    assert np.allclose(xi, s, atol=1e-14)


def test_mm_constant_image_is_fixed():
    s = np.full(30, 0.7)
    xi, _ = mm_xi_solve(s, SolverParams(), dct_spectrum(5, 6))
    assert np.allclose(xi, s, atol=1e-13, rtol=0)


def test_mm_quadratic_case_matches_dense_solve():
    n, N = 10, 20
    rng = np.random.default_rng(1)
    s = rng.uniform(size=n * N)
    params = SolverParams(q=2.0, gamma=0.3, beta=1.0, epsilon=1e-8)
    xi, _ = mm_xi_solve(s, params, dct_spectrum(n, N), maxit=1)
    D = Lap2D(n, N).dense()
    ref = np.linalg.solve(np.eye(n * N) + 0.3 * D.T @ D, s)
    assert np.allclose(xi, ref, atol=1e-10, rtol=0)


def test_mm_single_step_matches_dense_oracle():
    from fdeminv.harness import mm_rhs

    n, N = 10, 20
    rng = np.random.default_rng(2)
    s = rng.uniform(size=n * N)
    params = SolverParams(q=0.5, gamma=1e-3, epsilon=0.05)
    xi, _ = mm_xi_solve(s, params, dct_spectrum(n, N), maxit=1)
    assert np.allclose(xi, oracle_dense_xi(mm_rhs(s, s, params, n, N), params, n, N), atol=1e-10, rtol=0)


@settings(max_examples=20, deadline=None)
@given(
    q=st.sampled_from([0.1, 0.5, 1.0, 2.0]),
    seed=st.integers(0, 2**32 - 1),
)
def test_majorant_dominates_and_touches(q, seed):
    rng = np.random.default_rng(seed)
    n, N = 4, 5
    params = SolverParams(q=q, gamma=10 ** rng.uniform(-4, -1), epsilon=10 ** rng.uniform(-2, 0))
    s = rng.uniform(0, 1, n * N)
    anchor = rng.uniform(0, 1, n * N)
    j0 = xi_objective(anchor, s, params, n, N)
    assert abs(mm_majorant(anchor, anchor, s, params, n, N) - j0) <= 1e-10 * max(1, abs(j0))
    for _ in range(100):
        probe = anchor + rng.standard_normal(n * N) * 10 ** rng.uniform(-3, 0)
        Q = mm_majorant(probe, anchor, s, params, n, N)
        J = xi_objective(probe, s, params, n, N)
        assert Q >= J - 1e-12 * max(1, abs(J))


@settings(max_examples=25, deadline=None)
@given(q=st.sampled_from([0.1, 0.5, 1.0, 2.0]), seed=st.integers(0, 2**32 - 1))
def test_mm_objective_never_increases(q, seed):
    rng = np.random.default_rng(seed)
    n, N = rng.integers(2, 9, size=2)
    params = SolverParams(q=q, gamma=10 ** rng.uniform(-5, -1), epsilon=10 ** rng.uniform(-3, -1), mm_maxit=40)
    s = np.where(rng.uniform(size=n * N) > 0.5, 1.0, 0.0) + 0.05 * rng.standard_normal(n * N)
    _, hist = mm_xi_solve(s, params, dct_spectrum(n, N))
    h = np.array(hist)
    assert np.all(np.diff(h) <= 1e-12 * np.abs(h[:-1]))


# --- column solver ---------------------------------------------------------------


def test_column_at_stationary_point():
    g = Geometry(n=10, depth=3.0)
    p = SolverParams(beta=1e-4)
    b = forward_batch(np.full(g.n, p.sigma0), g.mu, g.d, DEV)[0]
    res = gn_column_solve(b, np.full(g.n, p.sigma0), p, DEV, g)
    assert res.iterations <= 2
    assert np.allclose(res.sigma, p.sigma0, atol=1e-8)


def test_coupling_pulls_towards_xi():
    g = Geometry(n=10, depth=3.0)
    truth = np.r_[np.full(4, 0.05), np.full(6, 0.6)]
    b = forward_batch(truth, g.mu, g.d, DEV)[0]
    xi = np.full(g.n, 0.3)
    gaps = []
    for beta in (1.0, 1e2, 1e4):
        res = gn_column_solve(b, xi, SolverParams(beta=beta, ell=8), DEV, g)
        gaps.append(np.linalg.norm(res.sigma - xi))
    assert gaps[0] > gaps[1] > gaps[2]


def test_noiseless_three_layer_fit():
    g = Geometry(n=3, thicknesses=(0.5, 0.7))
    truth = np.array([0.2, 0.8, 0.3])
    b = forward_batch(truth, g.mu, g.d, DEV)[0]
    res = gn_column_solve(b, None, SolverParams(ell=1, gn_maxit=50, rel_tol=1e-8), DEV, g, beta=0.0)
    fit = forward_batch(res.sigma, g.mu, g.d, DEV)[0]
    assert np.linalg.norm(fit - b) / np.linalg.norm(b) < 1e-3
    assert np.all(res.sigma >= 0)


def test_column_solve_checks_dimensions():
    g = Geometry(n=5)
    with pytest.raises(ValueError):
        gn_column_solve(np.zeros(3), None, SolverParams(), DEV, g)
    with pytest.raises(ValueError):
        gn_column_solve(np.zeros(DEV.m), np.zeros(4), SolverParams(), DEV, g)


# --- drivers ---------------------------------------------------------------------


def small_problem():
    g = Geometry(n=8, depth=3.0)
    S = np.full((8, 3), 0.1)
    S[4:] = [0.4, 0.5, 0.6]
    return g, S, forward_image(S, DEV, g.mu, g.d)


def test_alternating_constant_truth_is_fixed_point():
    g = Geometry(n=6, depth=2.0)
    p = SolverParams(beta=1e-4, outer_maxit=3)
    S = np.full((6, 3), p.sigma0)
    res = alternating_invert(forward_image(S, DEV, g.mu, g.d), p, DEV, g)
    assert len(res.trace.outer) == 1
    assert np.allclose(res.Sigma, S, atol=1e-8)


def test_alternating_single_sounding_and_nonnegativity():
    g, S, B = small_problem()
    p = SolverParams(beta=1e-4, outer_maxit=2, gn_maxit=4)
    res = alternating_invert(B[:, :1], p, DEV, g)
    assert res.Sigma.shape == (8, 1) and res.Sigma.min() >= 0
    total, bad = res.trace.certificates_ok()
    assert total > 0 and bad == 0


def test_trace_records_every_outer_iteration():
    g, S, B = small_problem()
    p = SolverParams(beta=1e-4, outer_maxit=2, gn_maxit=3)
    res = alternating_invert(B, p, DEV, g, threads=2)
    assert 1 <= len(res.trace.outer) <= 2
    rec = res.trace.outer[0]
    assert len(rec.gn_iterations) == 3 and np.isfinite(rec.data_fit)
    assert np.all(np.diff(rec.mm_objective) <= 1e-12 * np.abs(rec.mm_objective[:-1]))
    assert res.Sigma.min() >= 0


def test_thread_count_does_not_change_results(monkeypatch):
    g, S, B = small_problem()
    p = SolverParams(beta=1e-4, outer_maxit=2, gn_maxit=3)
    a = alternating_invert(B, p, DEV, g, threads=1)
    monkeypatch.setenv("FDEM_THREADS", "3")
    b = alternating_invert(B, p, DEV, g)
    assert np.array_equal(a.Sigma, b.Sigma)


def test_decoupled_single_column_equals_column_solve():
    g, S, B = small_problem()
    p = SolverParams(outer_maxit=5)
    res = decoupled_invert(B[:, :1], p, DEV, g)
    col = gn_column_solve(B[:, 0], None, p, DEV, g, beta=0.0, maxit=5, ell=p.ell_decoupled)
    assert np.array_equal(res.Sigma[:, 0], col.sigma)


def test_abort_when_every_column_fails(monkeypatch):
    import fdeminv.solvers as solvers
    from fdeminv.errors import NonFinite

    def broken(*a, **k):
        raise NonFinite("boom")

    monkeypatch.setattr(solvers, "gn_column_solve", broken)
    g, S, B = small_problem()
    with pytest.raises(SolverAbort):
        alternating_invert(B, SolverParams(outer_maxit=1), DEV, g)


def test_partial_failures_are_recorded(monkeypatch):
    import fdeminv.solvers as solvers
    from fdeminv.errors import NonFinite

    real = solvers.gn_column_solve

    def flaky(b, *a, **k):
        if b[0] == flaky.bad:
            raise NonFinite("boom")
        return real(b, *a, **k)

    g, S, B = small_problem()
    flaky.bad = B[0, 1]
    monkeypatch.setattr(solvers, "gn_column_solve", flaky)
    res = alternating_invert(B, SolverParams(beta=1e-4, outer_maxit=1, gn_maxit=2), DEV, g)
    assert list(res.trace.outer[0].failures) == [1]


def test_splicing_metric():
    assert splicing(np.ones((3, 4))) == 0
    S = np.zeros((2, 3))
    S[:, 1] = [3.0, 4.0]
    assert splicing(S) == pytest.approx(5.0)
    assert splicing(np.ones((3, 1))) == 0


def test_params_validation():
    with pytest.raises(ValueError):
        SolverParams(q=2.5)
    with pytest.raises(ValueError):
        SolverParams(beta=0)
    with pytest.raises(ValueError):
        SolverParams(ell=0)
    with pytest.raises(ValueError):
        SolverParams(p=3)
    p = SolverParams(q=0.5, gamma=2e-4, epsilon=0.1, beta=2.0)
    assert p.eta == pytest.approx(2e-4 * 0.1**-1.5 / 2)


def test_layers_pinned_at_zero_are_frozen():
    from fdeminv.gsvd import gsvd, tgsvd_step
    from fdeminv.regops import build_deriv
    from fdeminv.solvers import _free_step

    rng = np.random.default_rng(3)
    n = 6
    J = np.vstack([rng.standard_normal((4, n)), 0.1 * np.eye(n)])
    L = build_deriv(2, n)
    sigma = np.array([0.0, 0.3, 0.0, 0.2, 0.5, 0.0])
    r = J @ np.array([1.0, 0.0, 1.0, 0.0, 0.0, -1.0])  # pushes layers 0 and 2 negative
    free_q = tgsvd_step(gsvd(J, L), r, 4)
    assert free_q[0] < 0 and free_q[2] < 0
    q = _free_step(J, L, r, sigma, 4, clip=True)
    pinned = (sigma == 0) & (q == 0)
    assert pinned[0] and pinned[2]
    assert np.all(q[sigma == 0] >= 0)
    keep = ~pinned
    f = gsvd(J[:, keep], L[:, keep])
    assert np.allclose(q[keep], tgsvd_step(f, r, min(4, f.max_truncation)))
    assert np.array_equal(_free_step(J, L, r, sigma, 4, clip=False), free_q)


def test_projected_column_solve_certificates():
    g = Geometry(n=10, depth=3.0)
    truth = np.r_[np.zeros(4), np.ones(6)]
    b = forward_batch(truth, g.mu, g.d, DEV)[0]
    res = gn_column_solve(b, truth, SolverParams(beta=1e-4, gn_maxit=20), DEV, g)
    assert res.steps and all(s.satisfied() for s in res.steps)
    assert res.sigma.min() >= 0
    assert np.linalg.norm(res.sigma - truth) < 1e-3


@pytest.mark.slow
def test_truncation_index_barely_matters():
    from fdeminv.harness import NoiseSpec, add_noise, phantom_interface, rre

    g = Geometry()
    X = phantom_interface(g.n, 20).Sigma
    Bd = add_noise(forward_image(X, DEV, g.mu, g.d), NoiseSpec(1e-2, 1))
    errs = [rre(alternating_invert(Bd, SolverParams(ell=ell), DEV, g).Sigma, X) for ell in (10, 15, 20)]
    assert max(errs) - min(errs) < 0.05, errs
