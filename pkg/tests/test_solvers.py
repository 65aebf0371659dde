import dataclasses
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from valleyfill import EvSpec, Horizon, assemble_problem
from valleyfill.errors import DomainError, NumericError
from valleyfill.fleet import Baseline, scenario_from_evs
from valleyfill.proj import project_box_hyperplane_rows, project_nonneg_ball
from valleyfill.qp import constraint_values, lagrangian, objective
from valleyfill.solvers import (
    IterationState,
    SpdsConfig,
    certificate_constants,
    certify,
    dual_bound_from_slater,
    kkt_residuals,
    objective_lower_bound,
    study_config,
    run_centralized,
    run_pds,
    run_rpds,
    run_spds,
    slater_point,
    spds_dual_step,
    spds_primal_step,
)
from valleyfill.solvers.spds import dual_update, primal_update

from conftest import chain
from oracles import box_hyperplane_bruteforce, nonneg_ball_kkt


def rel_gap(report, ref):
    return abs(report.final_objective - ref.final_objective) / abs(ref.final_objective)


# ---- single steps -------------------------------------------------------


def test_primal_step_hand_instance():
    u = np.array([[0.5, 0.5]])
    g = np.array([[1.0, -1.0]])
    got = primal_update(u, g, np.array([1.0]), 0.1, 0.9)[0]
    inner = box_hyperplane_bruteforce(0.9 * u[0] - 0.1 * g[0], 1.0)
    expected = box_hyperplane_bruteforce(inner / 0.9, 1.0)
    assert_allclose(0.9 * u[0] - 0.1 * g[0], [0.35, 0.55])
    assert_allclose(got, expected, atol=1e-12)


def test_dual_step_scalar_hand_instance():
    got = dual_update(np.array([[1.0]]), np.array([[3.0]]), beta=1.0, tau_lambda=0.5, d_lambda=10.0)
    assert got[0, 0] == pytest.approx(7.0, abs=1e-15)
    inner = nonneg_ball_kkt([0.5 * 1.0 + 3.0], 10.0)
    assert_allclose(got.ravel(), nonneg_ball_kkt(inner / 0.5, 10.0))


def test_dual_step_stays_zero_when_slack(tiny_problem, tiny_case):
    state = IterationState(tiny_problem.zeros_primal(), tiny_problem.zeros_dual())
    assert np.all(constraint_values(tiny_problem, state.u) < 0)
    assert_array_equal(spds_dual_step(tiny_problem, state, tiny_case.spds), 0.0)


def test_dual_step_lands_in_ball(tiny_problem, rng):
    cfg = SpdsConfig(alpha=0.1, beta=1e4, d_lambda=2.0)
    state = IterationState(rng.uniform(0, 1, (2, 3)), rng.uniform(0, 5, (3, 2)))
    lam = spds_dual_step(tiny_problem, state, cfg)
    assert np.all(lam >= 0) and np.linalg.norm(lam) <= 2.0 * (1 + 1e-12)


def test_unit_shrink_is_classic_step(rng):
    U = rng.normal(0.5, 1, (20, 6))
    g = rng.normal(size=(20, 6))
    e = rng.uniform(0, 6, 20)
    assert_array_equal(primal_update(U, g, e, 0.3, 1.0), project_box_hyperplane_rows(U - 0.3 * g, e))
    lam = rng.uniform(0, 1, (6, 3))
    d = rng.normal(size=(6, 3))
    classic = project_nonneg_ball((lam + 0.7 * d).ravel(), 5.0).reshape(6, 3)
    assert_array_equal(dual_update(lam, d, 0.7, 1.0, 5.0), classic)


def test_one_step_bit_matches_pds_at_unit_shrink(tiny_problem, tiny_case, rng):
    cfg = dataclasses.replace(tiny_case.spds, max_iters=1)
    state = IterationState(
        project_box_hyperplane_rows(rng.uniform(0, 1, (2, 3)), tiny_problem.e), rng.uniform(0, 1, (3, 2))
    )
    pds = run_pds(tiny_problem, cfg, state=state)
    # SPDS step with both shrink factors at one, assembled by hand
    from valleyfill.solvers.spds import _all_gradients

    g = _all_gradients(tiny_problem, state.u, state.lam)
    U1 = primal_update(state.u, g, tiny_problem.e, cfg.alpha, 1.0)
    lam1 = dual_update(state.lam, constraint_values(tiny_problem, state.u), cfg.beta, 1.0, cfg.d_lambda)
    assert_array_equal(U1, pds.u)
    assert_array_equal(lam1, pds.lam)


def test_per_ev_step_matches_batch(tiny_problem, tiny_case, rng):
    state = IterationState(rng.uniform(0, 1, (2, 3)), rng.uniform(0, 1, (3, 2)))
    cfg = tiny_case.spds
    from valleyfill.solvers.spds import _all_gradients

    batch = primal_update(state.u, _all_gradients(tiny_problem, state.u, state.lam), tiny_problem.e, cfg.alpha, cfg.tau_u)
    for i in range(2):
        assert_array_equal(spds_primal_step(tiny_problem, state, cfg, i), batch[i])


def test_saddle_point_is_fixed(tiny_problem, tiny_case, tiny_reference):
    state = IterationState(tiny_reference.u, tiny_reference.lam)
    cfg = tiny_case.spds
    U1 = np.stack([spds_primal_step(tiny_problem, state, cfg, i) for i in range(2)])
    lam1 = spds_dual_step(tiny_problem, state, cfg)
    assert np.linalg.norm(U1 - state.u) < cfg.tol
    assert np.linalg.norm(lam1 - state.lam) < 1e-6


# ---- config -------------------------------------------------------------


@pytest.mark.parametrize(
    "kw",
    [dict(alpha=0.0), dict(beta=-1.0), dict(tau_u=1.0), dict(tau_lambda=0.0), dict(d_lambda=0.0), dict(max_iters=0)],
)
def test_config_invariants(kw):
    base = dict(alpha=1.0, beta=1.0)
    base.update(kw)
    with pytest.raises(DomainError):
        SpdsConfig(**base)


def test_study_config_rescaling():
    cfg = study_config(v_base_volts=1000.0)
    assert cfg.alpha == pytest.approx(2.8e-4)
    assert cfg.beta == pytest.approx(1.8 * 1e12 / 1e6)
    assert cfg.d_lambda == pytest.approx(5e5 * 1e6 / 1e6)
    assert (cfg.tau_u, cfg.tau_lambda, cfg.max_iters, cfg.tol) == (0.974, 0.974, 25, 1e-4)


# ---- full runs ----------------------------------------------------------


def test_spds_matches_reference_on_tiny(tiny_problem, tiny_case, tiny_reference):
    rep = run_spds(tiny_problem, tiny_case.spds)
    assert rep.termination == "converged"
    assert rel_gap(rep, tiny_reference) <= 1e-4
    assert len(rep.objective) == len(rep.eps) == len(rep.seconds) == rep.iterations
    assert np.all(rep.lam >= 0)


def test_tiny_has_binding_constraints(tiny_reference):
    assert tiny_reference.lam.max() > 0.1


def test_rpds_bias_shrinks_with_regularisation(tiny_problem, tiny_case, tiny_reference):
    gaps = []
    for reg in (0.1, 0.01, 0.001):
        rep = run_rpds(tiny_problem, dataclasses.replace(tiny_case.spds, rpds_dual_reg=reg))
        gaps.append(rel_gap(rep, tiny_reference))
    assert gaps[0] > gaps[1] > gaps[2]


def test_rpds_without_regulariser_is_pds(tiny_problem, tiny_case):
    cfg = dataclasses.replace(tiny_case.spds, rpds_dual_reg=0.0, max_iters=50)
    assert_array_equal(run_rpds(tiny_problem, cfg).objective, run_pds(tiny_problem, cfg).objective)


def test_rpds_unbiased_when_constraints_slack(tiny_case):
    prob = tiny_case.problem(nu_lower=0.5)
    ref = run_centralized(prob)
    assert np.all(ref.lam == 0)
    rep = run_rpds(prob, tiny_case.spds)
    assert rep.lam.max() == 0.0
    assert rel_gap(rep, ref) <= 1e-8


def test_spds_rejects_violating_baseline(tiny_case):
    prob = tiny_case.problem(nu_lower=0.99, on_violation="warn")
    with pytest.raises(DomainError):
        run_spds(prob, tiny_case.spds)


def test_non_finite_iterate_reports_iteration(tiny_problem, tiny_case):
    lam = np.full((3, 2), np.nan)
    with pytest.raises(NumericError) as info:
        run_spds(tiny_problem, tiny_case.spds, state=IterationState(tiny_problem.zeros_primal(), lam))
    assert info.value.iteration == 1


def test_overflowing_step_reports_iteration(tiny_problem):
    cfg = SpdsConfig(alpha=1e308, beta=1.0, max_iters=5)
    with pytest.raises(NumericError) as info:
        run_spds(tiny_problem, cfg)
    assert info.value.iteration == 1


def test_callback_sees_every_iteration(tiny_problem, tiny_case):
    seen = []
    cfg = dataclasses.replace(tiny_case.spds, max_iters=7, tol=0.0)
    rep = run_spds(tiny_problem, cfg, callback=lambda s: seen.append(s.iter))
    assert seen == list(range(1, 8)) and rep.termination == "max_iters"


def test_report_serialisation(tiny_problem, tiny_case, tmp_path):
    import csv
    import json

    rep = run_spds(tiny_problem, dataclasses.replace(tiny_case.spds, max_iters=5))
    d = json.loads(rep.to_json())
    assert d["iterations"] == 5 and len(d["eps"]) == 5
    path = tmp_path / "it.csv"
    rep.write_iterations_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["iter", "objective", "max_violation", "eps", "dual_norm"] and len(rows) == 6


# ---- centralized reference ----------------------------------------------


def test_reference_kkt_on_tiny(tiny_reference):
    assert tiny_reference.termination == "converged"
    assert max(tiny_reference.kkt.values()) <= 1e-8


def test_reference_complementary_slackness(tiny_problem, tiny_reference):
    d = constraint_values(tiny_problem, tiny_reference.u)
    assert np.max(np.abs(tiny_reference.lam * d)) <= 1e-6


def test_saddle_point_inequalities(tiny_problem, tiny_reference, rng):
    u_s, lam_s = tiny_reference.u, tiny_reference.lam
    mid = lagrangian(tiny_problem, u_s, lam_s)
    for _ in range(100):
        u = project_box_hyperplane_rows(rng.uniform(-0.5, 1.5, u_s.shape), tiny_problem.e)
        lam = rng.uniform(0, 10, lam_s.shape)
        assert lagrangian(tiny_problem, u_s, lam) <= mid + 1e-6
        assert mid <= lagrangian(tiny_problem, u, lam_s) + 1e-6


def _one_ev(p_b, rho, K=2, e=1.0):
    f = chain(0.01, base_kva=1000.0)
    spec = EvSpec(0, 1, 1.0, 1.0, 10.0, 0.0, e / 10.0)
    p = np.array([p_b], dtype=float)
    sc = scenario_from_evs([spec], Horizon("00:00", K, 1.0), Baseline(p, 0 * p))
    return assemble_problem(f, sc, rho=rho, nu_lower=0.5)


def test_reference_matches_grid_search_without_coupling():
    prob = _one_ev([1.0, 0.4], rho=0.3, e=1.0)
    ref = run_centralized(prob)
    # feasible set is the segment u = (t, 1 - t)
    t = np.linspace(0, 1, 200001)
    vals = [objective(prob, np.array([[a, 1 - a]])) for a in t]
    best = t[int(np.argmin(vals))]
    assert_allclose(ref.u[0], [best, 1 - best], atol=1e-5)
    assert ref.final_objective <= min(vals) + 1e-12


def test_flat_baseline_gives_flat_charging():
    f = chain(0.01, 0.01, base_kva=1000.0)
    evs = [EvSpec(i, 1 + i % 2, 1.0, 1.0 + i, 10.0, 0.0, 0.1 * (i + 1)) for i in range(3)]
    p = np.full((2, 5), 2.0)
    sc = scenario_from_evs(evs, Horizon("00:00", 5, 1.0), Baseline(p, 0 * p))
    prob = assemble_problem(f, sc, rho=0.0, nu_lower=0.5)
    ref = run_centralized(prob)
    # any schedule with a flat aggregate is optimal; its objective is the flat one
    flat = np.tile((prob.e / 5)[:, None], (1, 5))
    assert ref.final_objective == pytest.approx(objective(prob, flat), abs=1e-9)
    assert np.ptp(prob.p_b + prob.p_bar @ ref.u) <= 1e-6


def test_kkt_residuals_detect_nonstationary_point(tiny_problem):
    U = project_box_hyperplane_rows(np.ones((2, 3)), tiny_problem.e)
    res = kkt_residuals(tiny_problem, U, tiny_problem.zeros_dual())
    assert set(res) == {"stationarity", "primal_feasibility", "complementarity", "dual_feasibility"}
    assert res["stationarity"] > 1e-3


def test_slater_point_and_dual_bound(tiny_problem, tiny_reference):
    sp = slater_point(tiny_problem)
    assert sp.gamma > 0
    assert np.max(constraint_values(tiny_problem, sp.u)) == pytest.approx(-sp.gamma, abs=1e-9)
    lb = objective_lower_bound(tiny_problem)
    assert lb <= tiny_reference.final_objective + 1e-9
    bound = dual_bound_from_slater(tiny_problem)
    assert np.sum(tiny_reference.lam) <= bound


# ---- certificate --------------------------------------------------------


def test_certificate_hand_values():
    n, h, K, pbar, dnorm = 1, 1, 1, 2.0, 0.5
    rho, a, b, tu, tl = 1.0, 0.1, 0.2, 0.9, 0.8
    c = certificate_constants(n, h, K, pbar, dnorm, rho, a, b, tu, tl)
    # spreadsheet arithmetic
    lgg, ld = 4.0, 0.5
    prim, dual = 1.0 + 0.1 / 0.1, 0.2 / 0.2
    cc = min(prim, dual)
    lu, ll = prim + lgg + ld, dual + ld
    lphi = math.sqrt(lu**2 + ll**2)
    ah, bh = 0.1 / 0.81, 0.2 / 0.64
    th = ah - bh  # negative, so the dual step sets delta
    phi = max(ld**2, 1.0 - 2.0 * dual)
    varrho = max(1 / 0.81, 1 / 0.64) + 0.2 * bh * lphi**2 - 2 * cc * ah + abs(th) * phi
    for got, want in [
        (c.l_grad_g, lgg),
        (c.l_d, ld),
        (c.c, cc),
        (c.l_u, lu),
        (c.l_lambda, ll),
        (c.l_phi, lphi),
        (c.tau_hat, th),
        (c.delta, 0.2),
        (c.phi, phi),
        (c.varrho, varrho),
    ]:
        assert got == pytest.approx(want, abs=1e-12)
    assert not c.condition_28_holds


def test_certificate_shrink_near_one_fails():
    c = certificate_constants(2, 2, 3, 1.0, 0.01, 0.0, 1e-3, 1e-3, 0.999999, 0.999999)
    assert c.c < 1e-2
    assert not c.condition_28_holds


def test_certificate_symmetric_tuple_has_no_tau_hat_term():
    c = certificate_constants(2, 2, 3, 0.1, 0.01, 1.0, 1e-3, 1e-3, 0.99, 0.99)
    assert c.tau_hat == 0.0
    without = max(c.alpha_hat / 1e-3, c.beta_hat / 1e-3) + c.delta * c.alpha_hat * c.l_phi**2 - 2 * c.c * c.alpha_hat
    assert c.varrho == pytest.approx(without, rel=1e-14)


def test_certificate_deterministic_under_rescaling(tiny_problem):
    cfg = SpdsConfig(alpha=0.05, beta=15.0)
    small = dataclasses.replace(cfg, alpha=cfg.alpha / 100, beta=cfg.beta / 100)
    a, b = certify(tiny_problem, small), certify(tiny_problem, small)
    assert a == b and a != certify(tiny_problem, cfg)


def test_certificate_report_output(tiny_problem, tiny_case):
    c = certify(tiny_problem, tiny_case.spds)
    d = c.to_dict()
    assert d["contraction_factor"] == pytest.approx(math.sqrt(c.varrho))
    assert all(v >= 0 for k, v in d.items() if k in ("c", "l_grad_g", "l_d", "l_phi"))
    assert any("condition" in line for line in c.lines())


def test_default_primal_step_exceeds_stability_limit(paper_case, paper_problem):
    # the aggregate-load direction has curvature sum(pbar^2) + rho; a gradient
    # step on it is stable only when alpha times that curvature is below 2
    from valleyfill.qp import objective_hessian_bound

    curv = objective_hessian_bound(paper_problem)
    assert paper_case.spds.alpha * curv > 2.0
    assert 5e-5 * curv < 2.0
    # rescaling units leaves the product unchanged
    assert study_config(v_base_volts=1.0).alpha == paper_case.spds.alpha
