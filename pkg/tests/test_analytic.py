import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fairrobust import analytic
from fairrobust.analytic import (DomainError, classwise_rob_error_robust, classwise_std_error_natural,
                                 classwise_std_error_robust, closed_form_terms, linear_classwise_errors,
                                 natural_intercept, q_factor, robust_intercept, std_normal_cdf, theorem3_errors)
from fairrobust.distributions import MixtureSpec
from fairrobust.evaluation import mc_classwise_errors
from oracles import errors_hp, intercept_root, phi_hp

SCENE = MixtureSpec(d=2, eta=2.0, sigma=1.0, k_ratio=math.sqrt(2.0))
REF = MixtureSpec(d=10, eta=0.5, sigma=1.0, k_ratio=2.0)

specs = st.builds(
    MixtureSpec,
    d=st.integers(1, 60),
    eta=st.floats(0.05, 3.0),
    sigma=st.floats(0.3, 3.0),
    k_ratio=st.floats(1.05, 5.0),
)


# --- oracle values, frozen from the bracketing root and 40-digit erfc ---------------

FROZEN = [
    # (spec, eps, b_nat, b_rob, natural pair, robust std pair, robust rob pair)
    (SCENE, 0.5, 0.5644156807687545, 0.35288552624378655,
     (0.0075634834526450799, 0.011238536215824426),
     (0.0049557826739787693, 0.014761084572314925),
     (0.03061765157220782, 0.046825749312500794)),
    (REF, 0.2, 0.4005929960112851, -0.8723014921691372,
     (0.072909379827116813, 0.19657778127516959),
     (0.031656659585435485, 0.25699211988902397),
     (0.11037631948746009, 0.3682775851401579)),
    (MixtureSpec(d=2, eta=1.0, k_ratio=3.0), 0.4, -0.18211768925348534, -0.8986986678210528,
     (0.061416574987001112, 0.3341512207151731),
     (0.020197370900184923, 0.39759418607614359),
     (0.068903921793775944, 0.47169195161750895)),
]


@pytest.mark.parametrize("spec,eps,b_nat,b_rob,nat,rstd,rrob", FROZEN)
def test_frozen_oracle_values(spec, eps, b_nat, b_rob, nat, rstd, rrob):
    assert natural_intercept(spec) == pytest.approx(b_nat, abs=1e-11)
    assert robust_intercept(spec, eps) == pytest.approx(b_rob, abs=1e-11)
    assert classwise_std_error_natural(spec).as_tuple() == pytest.approx(nat, abs=1e-11)
    assert classwise_std_error_robust(spec, eps).as_tuple() == pytest.approx(rstd, abs=1e-11)
    assert classwise_rob_error_robust(spec, eps).as_tuple() == pytest.approx(rrob, abs=1e-11)


@given(specs, st.floats(0.0, 0.95))
def test_intercepts_match_root_bracketing(spec, frac):
    eps = frac * spec.eta
    b_nat = intercept_root(spec.d, spec.eta, spec.sigma, spec.k_ratio)
    b_rob = intercept_root(spec.d, spec.eta, spec.sigma, spec.k_ratio, eps)
    scale = spec.d * spec.eta
    assert natural_intercept(spec) == pytest.approx(b_nat, abs=1e-9 * max(1.0, scale))
    assert robust_intercept(spec, eps) == pytest.approx(b_rob, abs=1e-9 * max(1.0, scale))


@given(specs, st.floats(0.01, 0.95))
def test_classwise_errors_match_high_precision(spec, frac):
    eps = frac * spec.eta
    args = (spec.d, spec.eta, spec.sigma, spec.k_ratio)
    b_nat, b_rob = natural_intercept(spec), robust_intercept(spec, eps)
    assert classwise_std_error_natural(spec).as_tuple() == pytest.approx(errors_hp(b_nat, *args), abs=1e-10)
    assert classwise_std_error_robust(spec, eps).as_tuple() == pytest.approx(errors_hp(b_rob, *args), abs=1e-10)
    assert classwise_rob_error_robust(spec, eps).as_tuple() == pytest.approx(errors_hp(b_rob, *args, eps), abs=1e-10)


# --- q(K) and the normal cdf ----------------------------------------------------------

def test_q_factor_values():
    assert q_factor(2.0) == pytest.approx(2 * math.log(2) / 3, abs=1e-15)
    assert q_factor(2.0) == pytest.approx(0.462098, abs=1e-6)
    assert q_factor(3.0) == pytest.approx(0.274653, abs=1e-6)
    assert abs(q_factor(1.000001) - 1.0) < 1e-5


@pytest.mark.parametrize("k", [1.0, 0.5, -2.0])
def test_q_factor_rejects_k_at_most_one(k):
    with pytest.raises(DomainError):
        q_factor(k)


@given(st.floats(1.0 + 1e-9, 50.0))
def test_q_factor_positive_and_below_one(k):
    q = q_factor(k)
    assert 0 < q <= 1.0


def test_std_normal_cdf_examples():
    assert std_normal_cdf(0.0) == 0.5
    assert std_normal_cdf(1.959963985) == pytest.approx(0.975, abs=1e-9)
    grid = np.linspace(-8, 8, 100)
    assert np.max(np.abs(std_normal_cdf(grid) + std_normal_cdf(-grid) - 1.0)) <= 1e-12


@given(st.floats(-37.0, 8.0))
def test_std_normal_cdf_against_mpmath(z):
    exact = phi_hp(z)
    assert abs(std_normal_cdf(z) - exact) <= 1e-12
    assert abs(float(std_normal_cdf(np.array([z]))[0]) - exact) <= 1e-12


@pytest.mark.parametrize("z", [math.inf, -math.inf, math.nan])
def test_std_normal_cdf_rejects_non_finite(z):
    with pytest.raises(DomainError):
        std_normal_cdf(z)


# --- intercepts -----------------------------------------------------------------------

def test_robust_intercept_at_zero_is_natural():
    assert robust_intercept(SCENE, 0.0) == natural_intercept(SCENE)


def test_scene_robust_below_natural():
    assert robust_intercept(SCENE, 0.5) < natural_intercept(SCENE)


def test_intercept_vanishes_in_symmetric_limit():
    assert abs(natural_intercept(MixtureSpec(d=2, eta=1.0, sigma=1.0, k_ratio=1.001))) < 1e-2


def test_robust_intercept_decreasing_in_eps():
    eps = np.linspace(0, SCENE.eta, 102)[1:-1]
    vals = np.array([robust_intercept(SCENE, e) for e in eps])
    assert np.all(np.diff(vals) < 0)


@pytest.mark.parametrize("eps", [2.0, 2.5])
def test_eps_at_or_above_eta_rejected(eps):
    with pytest.raises(DomainError):
        robust_intercept(SCENE, eps)


@pytest.mark.parametrize("bad", [MixtureSpec(d=2, eta=1.0, k_ratio=1.0),
                                 MixtureSpec(d=2, eta=1.0, k_ratio=2.0, m=3, gamma=0.1)])
def test_closed_forms_reject_degenerate_specs(bad):
    with pytest.raises(DomainError):
        natural_intercept(bad)
    with pytest.raises(DomainError):
        classwise_std_error_natural(bad)


@given(specs, st.floats(0.01, 0.99))
def test_closed_form_term_invariants(spec, frac):
    t = closed_form_terms(spec, frac * spec.eta)
    assert t.q_k > 0
    assert t.b_term < t.a_term
    assert t.b_rob < t.b_nat


# --- classwise errors -----------------------------------------------------------------

@given(specs)
def test_wide_class_has_larger_natural_error(spec):
    pair = classwise_std_error_natural(spec)
    assert pair.err_minus < pair.err_plus


def test_symmetric_limit_errors():
    spec = MixtureSpec(d=4, eta=0.5, sigma=1.0, k_ratio=1.001)
    pair = classwise_std_error_natural(spec)
    target = phi_hp(-math.sqrt(spec.d) * spec.eta / spec.sigma)
    assert abs(pair.err_plus - pair.err_minus) < 1e-3
    assert abs(pair.err_minus - target) < 1e-3 and abs(pair.err_plus - target) < 1e-3


def test_robust_std_error_continuous_at_zero_margin():
    a = classwise_std_error_robust(REF, 1e-8).as_tuple()
    b = classwise_std_error_natural(REF).as_tuple()
    assert a == pytest.approx(b, abs=1e-6)


@given(specs, st.floats(0.01, 0.95))
def test_substitution_identity_is_bit_exact(spec, frac):
    eps = frac * spec.eta
    shifted = spec.replace(eta=spec.eta - eps)
    assert classwise_rob_error_robust(spec, eps).as_tuple() == classwise_std_error_natural(shifted).as_tuple()


@given(specs, st.floats(0.01, 0.95))
def test_robust_error_dominates_standard(spec, frac):
    eps = frac * spec.eta
    std, rob = classwise_std_error_robust(spec, eps), classwise_rob_error_robust(spec, eps)
    assert rob.err_minus >= std.err_minus and rob.err_plus >= std.err_plus


@given(specs, st.floats(0.01, 0.95))
def test_robust_training_shifts_error_to_wide_class(spec, frac):
    eps = frac * spec.eta
    nat, rob = classwise_std_error_natural(spec), classwise_std_error_robust(spec, eps)
    assert rob.err_minus < nat.err_minus
    assert rob.err_plus > nat.err_plus


@pytest.mark.parametrize("d", [2, 10, 50])
@pytest.mark.parametrize("k", [1.5, 2.0, 3.0])
@pytest.mark.parametrize("ratio", [round(0.1 * i, 1) for i in range(1, 10)])
def test_shift_direction_grid(d, k, ratio):
    spec = MixtureSpec(d=d, eta=0.5, sigma=1.0, k_ratio=k)
    nat, rob = classwise_std_error_natural(spec), classwise_std_error_robust(spec, ratio * 0.5)
    assert rob.err_minus < nat.err_minus and rob.err_plus > nat.err_plus


@pytest.mark.parametrize("d", [2, 10, 50])
@pytest.mark.parametrize("k", [1.5, 2.0, 3.0])
def test_intercept_monotone_in_eta(d, k):
    etas = np.linspace(0.01, 2.0, 100)
    g = np.array([natural_intercept(MixtureSpec(d=d, eta=float(e), k_ratio=k)) for e in etas])
    assert np.all(np.diff(g) > 0)


# --- general linear classifiers -------------------------------------------------------

def test_all_ones_reproduces_closed_form():
    std, rob = linear_classwise_errors(REF, np.ones(REF.d), natural_intercept(REF), 0.2)
    assert std.as_tuple() == pytest.approx(classwise_std_error_natural(REF).as_tuple(), abs=1e-15)
    b_rob = robust_intercept(REF, 0.2)
    std, rob = linear_classwise_errors(REF, np.ones(REF.d), b_rob, 0.2)
    assert std.as_tuple() == pytest.approx(classwise_std_error_robust(REF, 0.2).as_tuple(), abs=1e-12)
    assert rob.as_tuple() == pytest.approx(classwise_rob_error_robust(REF, 0.2).as_tuple(), abs=1e-12)


def test_symmetric_zero_intercept():
    spec = MixtureSpec(d=3, eta=0.7, sigma=1.3, k_ratio=1.0)
    std, _ = linear_classwise_errors(spec, np.ones(3), 0.0)
    target = phi_hp(-math.sqrt(3) * 0.7 / 1.3)
    assert std.err_minus == pytest.approx(target, abs=1e-12)
    assert std.err_plus == pytest.approx(target, abs=1e-12)


def test_zero_weights_rejected():
    with pytest.raises(DomainError):
        linear_classwise_errors(REF, np.zeros(REF.d), 0.0)


def test_random_linear_classifier_against_sampling():
    spec = MixtureSpec(d=5, eta=0.4, sigma=1.0, k_ratio=2.0)
    rng = np.random.default_rng(11)
    w, b = rng.normal(1.0, 0.5, 5), 0.3
    std, rob = linear_classwise_errors(spec, w, b, 0.1)
    rep = mc_classwise_errors(spec, (w, b), 0.1, 2_000_000, 5)
    assert np.all(np.abs(rep.standard_rate - std.as_tuple()) < 2e-3)
    assert np.all(np.abs(rep.robust_rate - rob.as_tuple()) < 2e-3)


@pytest.mark.parametrize("norm", ["linf", "l2"])
def test_linear_errors_monotone_in_eps(norm):
    w = np.array([1.0, -0.5, 2.0])
    spec = MixtureSpec(d=3, eta=0.8, k_ratio=1.5)
    prev = None
    for eps in np.linspace(0, 0.7, 8):
        _, rob = linear_classwise_errors(spec, w, 0.1, eps, norm)
        if prev is not None:
            assert rob.err_minus >= prev.err_minus and rob.err_plus >= prev.err_plus
        prev = rob


@pytest.mark.parametrize("coord", [0, 4, 9])
@pytest.mark.parametrize("factor", [0.9, 1.1])
def test_all_ones_weight_is_locally_optimal(coord, factor):
    w = np.ones(REF.d)
    w[coord] *= factor
    base = sum(linear_classwise_errors(REF, np.ones(REF.d), natural_intercept(REF))[0].as_tuple())
    # best intercept for the perturbed direction, by dense search over the exact error
    grid = np.linspace(-3, 3, 60001)
    proj, nrm = float(w @ REF.theta), float(np.linalg.norm(w))
    avg = std_normal_cdf((grid - proj) / nrm) + std_normal_cdf((-grid - proj) / (REF.k_ratio * nrm))
    assert avg.min() >= base - 1e-12


# --- robust / non-robust feature mixture ----------------------------------------------

FEATURE = MixtureSpec(d=5, eta=0.4, sigma=1.0, k_ratio=2.0, m=500, gamma=0.02)


def test_feature_mixture_values():
    res = theorem3_errors(FEATURE, 0.1)
    assert res.gap_holds
    assert res.natural_std.as_tuple() == pytest.approx((0.1079, 0.3515), abs=5e-5)
    assert res.robust_std.as_tuple() == pytest.approx((0.0802, 0.4237), abs=5e-5)
    assert res.rise_plus == pytest.approx(0.0721, abs=2e-4)
    assert res.rise_minus == pytest.approx(-0.0277, abs=2e-4)


def test_feature_mixture_natural_errors_match_weighted_oracle():
    res = theorem3_errors(FEATURE, 0.1)
    w, b = res.natural_weights, res.natural_bias
    proj, nrm = float(w @ FEATURE.theta), float(np.linalg.norm(w))
    exact = (phi_hp((b - proj) / nrm), phi_hp((-b - proj) / (FEATURE.k_ratio * nrm)))
    assert res.natural_std.as_tuple() == pytest.approx(exact, abs=1e-10)


def test_feature_mixture_requires_non_robust_coordinates():
    with pytest.raises(DomainError):
        theorem3_errors(REF, 0.1)


@pytest.mark.parametrize("eps", [0.01, 0.4, 0.5])
def test_feature_mixture_regime(eps):
    with pytest.raises(DomainError):
        theorem3_errors(FEATURE, eps)


def test_feature_mixture_continuity_in_gamma():
    spec = MixtureSpec(d=5, eta=0.4, k_ratio=2.0, m=500, gamma=1e-9)
    res = theorem3_errors(spec, 0.1)
    plain = classwise_std_error_natural(MixtureSpec(d=5, eta=0.4, k_ratio=2.0))
    assert res.natural_std.as_tuple() == pytest.approx(plain.as_tuple(), abs=1e-6)


def test_q_factor_is_looked_up_at_call_time(monkeypatch):
    before = natural_intercept(REF)
    original = analytic.q_factor
    monkeypatch.setattr(analytic, "q_factor", lambda k: 1.01 * original(k))
    assert natural_intercept(REF) != before
