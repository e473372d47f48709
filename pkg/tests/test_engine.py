import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special, stats
from toy_models import BetaModel, CubedModel, NanModel

from srdvi.basis import build_uniform_basis, transport_basis
from srdvi.engine import (
    EnergySettings,
    FactorizedApprox,
    NonFiniteEnergyError,
    conditional_means,
    fit,
    gradient_coordinate,
    grid_log_marginal,
    grid_posterior,
    kld_joint,
    kld_objective,
    line_search,
    load_checkpoint,
    log_energy_alpha,
    log_energy_joint,
    marginal_bounds,
    save_checkpoint,
)
from srdvi.geometry_check import random_srd
from srdvi.grid import DomainMap, grid_nodes, trapezoid_weights
from srdvi.models import NormalGammaModel, kld_vb_normal_gamma
from srdvi.sphere import Srd, exp_map

M = 1023
EXACT = EnergySettings(integral_method="exact")


@pytest.fixture(scope="module")
def ng_model():
    x = np.random.default_rng(1).standard_normal(100)
    return NormalGammaModel(x)


def hellinger_unit(p, q):
    w = trapezoid_weights(p.size)
    return math.sqrt(max(0.0, 1 - float(np.dot(w, np.sqrt(p * q)))))


@pytest.mark.parametrize("kw", [
    dict(alpha=1.0), dict(alpha=-0.5), dict(n_basis=10), dict(n_basis=1), dict(objective="elbo"),
    dict(step_c1=0.95), dict(integral_method="mc"), dict(stall_window=0), dict(orthant="reflect"),
    dict(stopping="mean"), dict(tol_delta=0.0),
])
def test_settings_validation(kw):
    with pytest.raises(ValueError):
        EnergySettings(**kw)


def test_kld_settings_ignore_alpha():
    assert EnergySettings(objective="kld", alpha=1.0).ascent_sign == 1.0
    assert EnergySettings(alpha=1.1).ascent_sign == -1.0


def test_conditional_means():
    u = FactorizedApprox.uniform([DomainMap(0, 1), DomainMap(-3, 3)], M)
    np.testing.assert_allclose(conditional_means(u), [0.5, 0.0], atol=1e-12)
    q = FactorizedApprox.from_native_pdfs([stats.beta(2, 5).pdf], [DomainMap(0, 1)], M)
    assert conditional_means(q)[0] == pytest.approx(2 / 7, abs=1e-6)


@pytest.mark.parametrize("alpha", [0.5, 1.1, 1.5])
def test_beta_fit_recovers_posterior(alpha):
    model = BetaModel(2, 5)
    q, rep = fit(model, EXACT.with_(alpha=alpha, max_iter=300))
    truth = stats.beta(2, 5).pdf(grid_nodes(M))
    assert hellinger_unit(q.psi(0) ** 2, truth) < 0.02
    assert rep.converged and rep.stop_reason in ("gradient", "stagnation")
    diffs = np.diff(rep.energy_trace)
    # ln E is raised for alpha < 1 and lowered for alpha > 1
    assert np.all(np.sign(1 - alpha) * diffs >= -1e-12)
    assert rep.energy_trace[-1] / alpha == pytest.approx(model.exact_log_marginal(), abs=1e-4)


def test_zero_gradient_at_posterior():
    model = BetaModel(3, 4)
    p = grid_posterior(model, M)
    q = FactorizedApprox.from_unit_densities([p], model.domains)
    basis = build_uniform_basis(99, M)
    for alpha in (0.5, 0.9, 1.1):
        g = gradient_coordinate(model, q, 0, transport_basis(basis, q.coords[0][0]), EXACT.with_(alpha=alpha))
        assert g.norm() < 1e-8


def _energy_after(model, q, i, s, vec, h):
    moved = exp_map(q.coords[i][0], vec * h)
    return log_energy_alpha(model, q.replace_coord(i, moved), s)


@pytest.mark.parametrize("alpha", [0.5, 0.9, 1.1])
def test_gradient_matches_central_differences(ng_model, alpha):
    s = EXACT.with_(alpha=alpha)
    rng = np.random.default_rng(4)
    q = FactorizedApprox(tuple((random_srd(rng, M, scale=0.5), dm) for dm in ng_model.domains))
    basis0 = build_uniform_basis(99, M)
    h = 1e-5
    for i in range(2):
        basis = transport_basis(basis0, q.coords[i][0])
        grad = gradient_coordinate(ng_model, q, i, basis, s)
        w = trapezoid_weights(M)
        for k in (0, 1, 2, 17, 48, 98):
            b = basis.elems[k]
            analytic = s.ascent_sign * float(np.dot(w, grad.v.values * b.v.values))
            fd = (_energy_after(ng_model, q, i, s, b, h) - _energy_after(ng_model, q, i, s, b, -h)) / (2 * h)
            assert abs(fd - analytic) <= 1e-4 * abs(analytic)


def test_taylor_direction_agrees_with_exact_on_sharp_q(ng_model):
    vb = kld_vb_normal_gamma(ng_model)
    # a slightly perturbed, still sharp, factorization
    q = vb.approx([DomainMap(dm.lo + 0.02 * dm.width, dm.hi + 0.02 * dm.width) for dm in ng_model.domains], M)
    q = FactorizedApprox(tuple((psi, dm) for (psi, _), dm in zip(q.coords, ng_model.domains)))
    basis0 = build_uniform_basis(99, M)
    for i in range(2):
        basis = transport_basis(basis0, q.coords[i][0])
        a = gradient_coordinate(ng_model, q, i, basis, EXACT).v.values
        b = gradient_coordinate(ng_model, q, i, basis, EnergySettings()).v.values
        w = trapezoid_weights(M)
        cos = np.dot(w, a * b) / math.sqrt(np.dot(w, a * a) * np.dot(w, b * b))
        assert cos > 0.99


@pytest.mark.parametrize("alpha", [0.5, 0.9, 1.1])
def test_tightness_at_grid_posterior(ng_model, alpha):
    p = grid_posterior(ng_model, M)
    ln_m = grid_log_marginal(ng_model, M)
    assert log_energy_joint(ng_model, p, alpha, M) / alpha == pytest.approx(ln_m, abs=1e-10)
    assert kld_joint(ng_model, p, M) == pytest.approx(ln_m, abs=1e-8)
    assert abs(ln_m - ng_model.exact_log_marginal()) < 1e-4


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_bound_ordering_for_any_q(seed):
    model = BetaModel(3, 4, domain=DomainMap(0.0, 1.0))
    q = FactorizedApprox(((random_srd(np.random.default_rng(seed), M), model.domains[0]),))
    ln_m = grid_log_marginal(model, M)
    b = marginal_bounds(model, q, q, 0.5, 1.5, EXACT)
    assert b.kld_lb <= b.lb + 1e-12
    assert b.lb <= ln_m + 1e-12
    assert ln_m <= b.ub + 1e-12


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_bound_ordering_two_dims(ng_model, seed):
    rng = np.random.default_rng(seed)
    q = FactorizedApprox(tuple((random_srd(rng, M, scale=0.3), dm) for dm in ng_model.domains))
    ln_m = grid_log_marginal(ng_model, M)
    b = marginal_bounds(ng_model, q, q, 0.9, 1.1, EXACT)
    assert b.kld_lb <= b.lb <= ln_m <= b.ub


def test_half_energy_invariant_under_cubing():
    # both densities vanish to second order at the ends, so the grid error is far below the tolerance
    qd = stats.beta(3, 3)
    theta_model = BetaModel(4, 5)
    q_theta = FactorizedApprox.from_native_pdfs([qd.pdf], theta_model.domains, M)
    phi_model = CubedModel(lambda t: theta_model.log_joint(t[..., None]))
    q_phi = FactorizedApprox.from_native_pdfs([lambda p: qd.pdf(p ** 3) * 3 * p * p], phi_model.domains, M)
    s = EXACT.with_(alpha=0.5)
    e_theta = log_energy_alpha(theta_model, q_theta, s)
    assert log_energy_alpha(phi_model, q_phi, s) == pytest.approx(e_theta, abs=1e-6)
    closed = float(special.betaln(3.5, 4) - 0.5 * special.betaln(3, 3))
    assert e_theta == pytest.approx(closed, abs=1e-6)


def test_line_search_gives_sufficient_increase(ng_model):
    s = EXACT.with_(alpha=0.5)
    q = FactorizedApprox.uniform(ng_model.domains, M)
    basis = build_uniform_basis(99, M)
    for i in range(2):
        d = gradient_coordinate(ng_model, q, i, transport_basis(basis, q.coords[i][0]), s)
        eps = line_search(ng_model, q, i, d, s)
        assert eps > 0
        before = log_energy_alpha(ng_model, q, s)
        after = log_energy_alpha(ng_model, q.replace_coord(i, exp_map(q.coords[i][0], d * eps)), s)
        assert after > before


def test_line_search_rejects_descent_direction(ng_model):
    s = EXACT.with_(alpha=0.5)
    q = FactorizedApprox.uniform(ng_model.domains, M)
    basis = build_uniform_basis(99, M)
    d = gradient_coordinate(ng_model, q, 0, basis, s)
    with pytest.raises(ValueError):
        line_search(ng_model, q, 0, d * -1.0, s)


def test_long_run_steps_positive_and_trace_monotone(ng_model):
    q, rep = fit(ng_model, EXACT.with_(alpha=0.5, max_iter=200, tol_delta=1e-12, stall_tol=0))
    assert rep.iterations == 200 and rep.stop_reason == "max_iter"
    assert all(e > 0 for e in rep.step_sizes)
    assert np.all(np.diff(rep.energy_trace) >= -1e-12)


def test_stagnation_stop():
    q, rep = fit(BetaModel(2, 5), EXACT.with_(tol_delta=1e-14, max_iter=300))
    assert rep.stop_reason == "stagnation" and rep.converged and rep.iterations < 300


def test_kld_fit_matches_vb_bound(ng_model):
    s = EXACT.with_(objective="kld", max_iter=300)
    q, rep = fit(ng_model, s)
    vb = kld_vb_normal_gamma(ng_model).approx(ng_model.domains, M)
    assert np.all(np.diff(rep.energy_trace) >= -1e-12)
    assert kld_objective(ng_model, q, s) >= kld_objective(ng_model, vb, s) - 1e-4


def test_checkpoint_round_trip(tmp_path):
    model = BetaModel(2, 5)
    q, rep = fit(model, EXACT.with_(max_iter=5))
    b = marginal_bounds(model, q, q, 0.5, 1.5, EXACT)
    save_checkpoint(q, rep, tmp_path, bounds=b)
    q2, payload = load_checkpoint(tmp_path)
    # loading renormalizes, which may move the last bit
    np.testing.assert_allclose(q2.psi(0), q.psi(0), rtol=1e-15, atol=0)
    assert q2.domains[0].lo == 0.0 and q2.domains[0].hi == 1.0
    assert payload["energy_trace"] == rep.energy_trace
    assert payload["bounds"]["lb"] == b.lb


def test_non_finite_log_joint_raises():
    with pytest.raises(NonFiniteEnergyError):
        fit(NanModel(), EXACT.with_(max_iter=2))
    with pytest.raises(NonFiniteEnergyError):
        fit(NanModel(), EnergySettings(max_iter=2))


def test_init_shape_checked(ng_model):
    with pytest.raises(ValueError):
        fit(ng_model, EXACT, init=FactorizedApprox.uniform(ng_model.domains[:1], M))
    with pytest.raises(ValueError):
        fit(ng_model, EXACT, init=FactorizedApprox.uniform(ng_model.domains, 101))


def test_bounds_need_bracketing_alphas(ng_model):
    q = FactorizedApprox.uniform(ng_model.domains, M)
    with pytest.raises(ValueError):
        marginal_bounds(ng_model, q, q, 1.1, 0.9, EXACT)


def test_exact_method_refuses_three_dims():
    from srdvi.models import LinRegModel

    rng = np.random.default_rng(0)
    model = LinRegModel(rng.normal(size=(10, 3)), rng.normal(size=10))
    with pytest.raises(ValueError):
        fit(model, EXACT.with_(max_iter=1))


def test_uniform_srd_has_unit_energy_for_uniform_target():
    model = BetaModel(1, 1)
    q = FactorizedApprox((((Srd.uniform(M)), model.domains[0]),))
    for alpha in (0.3, 0.5, 2.0):
        assert log_energy_alpha(model, q, EXACT.with_(alpha=alpha)) == pytest.approx(0.0, abs=1e-12)
