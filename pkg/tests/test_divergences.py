"""Closed-form divergence machinery: values, conjugates, duals, domains."""

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fferm.divergences import (
    DOMAIN_MARGIN,
    DivergenceKind,
    DivergenceSpec,
    clamp_dual,
    conjugate,
    conjugate_grad,
    conjugate_hess,
    divergence_direct,
    divergence_variational,
    dual_domain,
    dual_init,
    f_prime,
    f_value,
    optimal_dual,
    parse_divergence,
)
from fferm.errors import (
    AbsoluteContinuityViolation,
    InvalidAlphaParam,
    LengthMismatch,
    NonDifferentiable,
    NonPositiveArgument,
    OutOfDualDomain,
)

from conftest import central_diff, scalar_rel_err

CHI2 = DivergenceSpec(DivergenceKind.CHI_SQUARED)
KL = DivergenceSpec(DivergenceKind.KL)
RKL = DivergenceSpec(DivergenceKind.REVERSE_KL)
TV = DivergenceSpec(DivergenceKind.TOTAL_VARIATION)
JS = DivergenceSpec(DivergenceKind.JENSEN_SHANNON)
SH = DivergenceSpec(DivergenceKind.SQUARED_HELLINGER)

ALL_SPECS = [
    CHI2,
    KL,
    RKL,
    TV,
    JS,
    SH,
    DivergenceSpec(DivergenceKind.ALPHA, 0.5),
    DivergenceSpec(DivergenceKind.ALPHA, 2.0),
    DivergenceSpec(DivergenceKind.ALPHA, -0.5),
]
DIFF_SPECS = [s for s in ALL_SPECS if s.kind is not DivergenceKind.TOTAL_VARIATION]

IDS = [s.token() for s in ALL_SPECS]
DIFF_IDS = [s.token() for s in DIFF_SPECS]


def sample_t(spec, rng, n):
    return rng.uniform(0.05, 4.0, size=n)


def sample_dual(spec, rng, n, pad=0.05):
    """Uniform samples strictly inside the dual domain (padded off the bounds)."""
    dom = dual_domain(spec)
    lo = dom.lower if np.isfinite(dom.lower) else -4.0
    hi = dom.upper if np.isfinite(dom.upper) else 4.0
    return rng.uniform(lo + pad, hi - pad, size=n)


def random_prob_pair(rng, n):
    p = rng.uniform(0.05, 1.0, size=n)
    q = rng.uniform(0.05, 1.0, size=n)
    return p / p.sum(), q / q.sum()


# -- frozen examples -----------------------------------------------------------


class TestPointValues:
    def test_f_value_examples(self):
        assert f_value(CHI2, 1.0) == 0.0
        assert f_value(CHI2, 3.0) == pytest.approx(4.0, abs=1e-12)
        e = math.e
        assert f_value(KL, e) == pytest.approx(e * math.log(e), abs=1e-12)

    def test_f_prime_examples(self):
        assert f_prime(KL, 1.0) == pytest.approx(math.log(1.0) + 1.0, abs=1e-12)
        assert f_prime(CHI2, 1.0) == 0.0
        assert f_prime(RKL, 2.0) == pytest.approx(-1.0 / 2.0, abs=1e-12)

    def test_conjugate_examples(self):
        assert conjugate(KL, 1.0) == pytest.approx(math.exp(0.0), abs=1e-12)
        assert conjugate(CHI2, 2.0) == pytest.approx(2.0 + 2.0**2 / 4.0, abs=1e-12)
        assert conjugate(RKL, -1.0) == pytest.approx(-1.0 - math.log(1.0), abs=1e-12)

    def test_conjugate_grad_examples(self):
        assert conjugate_grad(KL, 1.0) == pytest.approx(math.exp(0.0), abs=1e-12)
        assert conjugate_grad(CHI2, 0.0) == pytest.approx(1.0, abs=1e-12)
        assert conjugate_grad(JS, 0.0) == pytest.approx(1.0 / (2.0 - 1.0), abs=1e-12)

    def test_conjugate_hess_examples(self):
        assert conjugate_hess(CHI2, 7.0) == pytest.approx(0.5, abs=1e-12)
        assert conjugate_hess(KL, 1.0) == pytest.approx(1.0, abs=1e-12)
        assert conjugate_hess(SH, -1.0) == pytest.approx(-2.0 / (-1.0) ** 3, abs=1e-12)

    def test_f_one_is_zero_for_every_kind(self):
        for spec in ALL_SPECS:
            assert f_value(spec, 1.0) == pytest.approx(0.0, abs=1e-15), spec.token()


class TestDivergenceValues:
    def test_chi2_direct_example(self):
        p = (0.5, 0.5)
        q = (0.25, 0.75)
        expected = 0.25 * (0.5 / 0.25 - 1) ** 2 + 0.75 * (0.5 / 0.75 - 1) ** 2
        assert expected == pytest.approx(1.0 / 3.0, abs=1e-12)
        assert divergence_direct(CHI2, p, q) == pytest.approx(expected, abs=1e-12)

    def test_kl_identity(self):
        assert divergence_direct(KL, (0.5, 0.5), (0.5, 0.5)) == 0.0

    def test_kl_direct_example(self):
        expected = 0.5 * math.log(0.5 / 0.25) + 0.5 * math.log(0.5 / 0.75)
        assert divergence_direct(KL, (0.5, 0.5), (0.25, 0.75)) == pytest.approx(
            expected, abs=1e-9
        )
        assert expected == pytest.approx(0.14384, abs=5e-6)

    def test_optimal_dual_examples(self):
        p = np.array([0.3, 0.7])
        np.testing.assert_allclose(optimal_dual(KL, p, p), [1.0, 1.0], atol=1e-12)
        np.testing.assert_allclose(optimal_dual(CHI2, p, p), [0.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(
            optimal_dual(RKL, (0.5, 0.5), (0.25, 0.75)),
            [-1.0 / 2.0, -1.0 / (2.0 / 3.0)],
            atol=1e-12,
        )

    def test_variational_examples(self):
        assert divergence_variational(CHI2, (0.5, 0.5), (0.25, 0.75)) == pytest.approx(
            1.0 / 3.0, abs=1e-10
        )
        # total variation via the boundary sign dual
        p, q = (0.9, 0.1), (0.5, 0.5)
        assert divergence_variational(TV, p, q) == pytest.approx(
            0.5 * (abs(0.4) + abs(-0.4)), abs=1e-12
        )
        u = (0.25, 0.25, 0.25, 0.25)
        assert divergence_variational(JS, u, u) == pytest.approx(0.0, abs=1e-15)


# -- structural invariants -----------------------------------------------------


@pytest.mark.parametrize("spec", ALL_SPECS, ids=IDS)
def test_generator_is_convex(spec, rng):
    t1 = sample_t(spec, rng, 300)
    t2 = sample_t(spec, rng, 300)
    s = rng.uniform(0.0, 1.0, size=300)
    mid = f_value(spec, s * t1 + (1 - s) * t2)
    chord = s * np.asarray(f_value(spec, t1)) + (1 - s) * np.asarray(f_value(spec, t2))
    assert np.all(mid <= chord + 1e-10)


@pytest.mark.parametrize("spec", ALL_SPECS, ids=IDS)
def test_fenchel_young_gap(spec, rng):
    t = sample_t(spec, rng, 1000)
    a = sample_dual(spec, rng, 1000)
    gap = a * t - np.asarray(f_value(spec, t)) - np.asarray(conjugate(spec, a))
    assert gap.max() <= 1e-12


@pytest.mark.parametrize("spec", DIFF_SPECS, ids=DIFF_IDS)
def test_fenchel_young_equality_at_maximizer(spec, rng):
    a = sample_dual(spec, rng, 1000)
    if spec.kind is DivergenceKind.CHI_SQUARED:
        # below a = -2 the maximizing t leaves the generator's domain t > 0
        a = np.maximum(a, -1.9)
    t = np.asarray(conjugate_grad(spec, a))
    gap = a * t - np.asarray(f_value(spec, t)) - np.asarray(conjugate(spec, a))
    assert np.abs(gap).max() <= 1e-8


@pytest.mark.parametrize("spec", DIFF_SPECS, ids=DIFF_IDS)
def test_biconjugacy(spec, rng):
    """sup_a (a t - f*(a)) over a dense grid reproduces f(t)."""
    t = rng.uniform(0.2, 3.0, size=100)
    astar = np.asarray(f_prime(spec, t))
    dom = dual_domain(spec)
    lo = max(astar.min() - 0.5, dom.lower + 1e-6)
    hi = min(astar.max() + 0.5, dom.upper - 1e-6)
    grid = np.linspace(lo, hi, 4001)
    vals = t[:, None] * grid[None, :] - np.asarray(conjugate(spec, grid))[None, :]
    best = grid[np.argmax(vals, axis=1)]
    h = grid[1] - grid[0]
    offsets = np.linspace(-2 * h, 2 * h, 4001)
    fine = np.clip(best[:, None] + offsets[None, :], dom.lower + 1e-9, dom.upper - 1e-9)
    vals2 = t[:, None] * fine - np.asarray(conjugate(spec, fine.ravel())).reshape(fine.shape)
    sup = vals2.max(axis=1)
    np.testing.assert_allclose(sup, np.asarray(f_value(spec, t)), atol=1e-6)


@pytest.mark.parametrize("spec", DIFF_SPECS, ids=DIFF_IDS)
def test_derivatives_match_finite_differences(spec, rng):
    t = rng.uniform(0.1, 3.0, size=200)
    a = sample_dual(spec, rng, 200)
    fd_fp = central_diff(lambda x: np.asarray(f_value(spec, x)), t)
    fd_cg = central_diff(lambda x: np.asarray(conjugate(spec, x)), a)
    fd_ch = central_diff(lambda x: np.asarray(conjugate_grad(spec, x)), a)
    for exact, approx in [
        (np.asarray(f_prime(spec, t)), fd_fp),
        (np.asarray(conjugate_grad(spec, a)), fd_cg),
        (np.asarray(conjugate_hess(spec, a)), fd_ch),
    ]:
        worst = max(scalar_rel_err(e, ap) for e, ap in zip(exact, approx))
        assert worst <= 1e-5


@pytest.mark.parametrize("spec", DIFF_SPECS, ids=DIFF_IDS)
def test_conjugate_hess_positive(spec, rng):
    a = sample_dual(spec, rng, 500)
    assert np.all(np.asarray(conjugate_hess(spec, a)) > 0)


@pytest.mark.parametrize("spec", ALL_SPECS, ids=IDS)
def test_direct_equals_variational(spec, rng):
    for _ in range(100):
        p, q = random_prob_pair(rng, int(rng.integers(2, 8)))
        d = divergence_direct(spec, p, q)
        v = divergence_variational(spec, p, q)
        assert abs(d - v) <= 1e-8, spec.token()


@pytest.mark.parametrize("spec", ALL_SPECS, ids=IDS)
def test_nonnegative_and_identity(spec, rng):
    for _ in range(50):
        p, q = random_prob_pair(rng, 4)
        assert divergence_direct(spec, p, p) == 0.0
        if np.abs(p - q).sum() > 1e-6:
            assert divergence_direct(spec, p, q) > 0.0


@pytest.mark.parametrize("spec", DIFF_SPECS, ids=DIFF_IDS)
def test_optimal_dual_first_order_condition(spec, rng):
    p, q = random_prob_pair(rng, 5)
    a = optimal_dual(spec, p, q)
    recovered = np.asarray(conjugate_grad(spec, a))
    np.testing.assert_allclose(recovered, p / q, atol=1e-9, rtol=1e-9)


def test_ermi_closed_form(rng):
    """Chi-squared divergence of joint vs product equals sum joint^2/product - 1."""
    for _ in range(25):
        joint = rng.uniform(0.05, 1.0, size=(2, 3))
        joint /= joint.sum()
        marg = joint.sum(axis=1)
        prior = joint.sum(axis=0)
        prod = np.outer(marg, prior)
        d = divergence_direct(CHI2, joint.ravel(), prod.ravel())
        ermi = float((joint**2 / prod).sum() - 1.0)
        assert abs(d - ermi) <= 1e-9


@settings(max_examples=200, deadline=None)
@given(
    t=st.floats(min_value=0.05, max_value=20.0),
    a=st.floats(min_value=-6.0, max_value=6.0),
)
def test_fenchel_young_holds_for_kl_hypothesis(t, a):
    gap = a * t - f_value(KL, t) - conjugate(KL, a)
    assert gap <= 1e-10


# -- domains, projection, parsing ----------------------------------------------


class TestDualDomain:
    def test_bounds(self):
        assert dual_domain(KL).upper == math.inf
        assert dual_domain(RKL).upper == 0.0 and dual_domain(RKL).open_upper
        assert dual_domain(TV).lower == -0.5 and not dual_domain(TV).open_lower
        assert dual_domain(JS).upper == pytest.approx(math.log(2.0))
        assert dual_domain(DivergenceSpec(DivergenceKind.ALPHA, 2.0)).lower == -1.0
        assert dual_domain(DivergenceSpec(DivergenceKind.ALPHA, 0.5)).upper == 2.0

    def test_clamp_examples(self):
        assert clamp_dual(TV, 0.9) == 0.5
        assert clamp_dual(KL, 123.0) == 123.0
        assert clamp_dual(RKL, 0.3) == -DOMAIN_MARGIN

    def test_conjugate_boundary_closed_for_tv(self):
        assert conjugate(TV, 0.5) == 0.5
        assert conjugate(TV, -0.5) == -0.5

    def test_dual_init_values(self):
        assert dual_init(CHI2) == 0.0
        assert dual_init(KL) == 1.0
        assert dual_init(RKL) == -1.0
        assert dual_init(JS) == 0.0
        assert dual_init(SH) == -1.0
        assert dual_init(TV) == 0.0


class TestErrors:
    def test_out_of_dual_domain(self):
        with pytest.raises(OutOfDualDomain):
            conjugate(RKL, 0.1)
        with pytest.raises(OutOfDualDomain):
            conjugate(TV, 0.51)
        with pytest.raises(OutOfDualDomain):
            conjugate(JS, math.log(2.0) + 1e-3)
        with pytest.raises(OutOfDualDomain):
            conjugate_grad(SH, 0.0)

    def test_tv_nondifferentiable(self):
        with pytest.raises(NonDifferentiable):
            f_prime(TV, 2.0)
        with pytest.raises(NonDifferentiable):
            conjugate_grad(TV, 0.0)
        with pytest.raises(NonDifferentiable):
            conjugate_hess(TV, 0.0)
        with pytest.raises(NonDifferentiable):
            optimal_dual(TV, (0.5, 0.5), (0.4, 0.6))

    def test_nonpositive_argument(self):
        for spec in (KL, RKL, JS):
            with pytest.raises(NonPositiveArgument):
                f_value(spec, 0.0)
        with pytest.raises(NonPositiveArgument):
            f_value(CHI2, -0.5)
        # kinds finite at zero accept t = 0
        assert f_value(CHI2, 0.0) == 1.0
        assert f_value(TV, 0.0) == 0.5
        assert f_value(SH, 0.0) == 2.0
        assert f_value(DivergenceSpec(DivergenceKind.ALPHA, 0.5), 0.0) == pytest.approx(2.0)

    def test_invalid_alpha(self):
        with pytest.raises(InvalidAlphaParam):
            DivergenceSpec(DivergenceKind.ALPHA, 1.0)
        with pytest.raises(InvalidAlphaParam):
            DivergenceSpec(DivergenceKind.ALPHA, 0.0)
        with pytest.raises(InvalidAlphaParam):
            parse_divergence("alpha:1")

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            divergence_direct(KL, (0.5, 0.5), (0.2, 0.3, 0.5))

    def test_absolute_continuity(self):
        with pytest.raises(AbsoluteContinuityViolation):
            divergence_direct(KL, (0.5, 0.5), (1.0, 0.0))
        with pytest.raises(AbsoluteContinuityViolation):
            divergence_direct(DivergenceSpec(DivergenceKind.ALPHA, -0.5), (0.5, 0.5), (1.0, 0.0))

    def test_floor_warns_but_evaluates(self):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            val = divergence_direct(CHI2, (0.5, 0.5), (1.0, 0.0))
        assert any("floored" in str(w.message) for w in caught)
        assert np.isfinite(val) and val > 0

    def test_prob_vector_validation(self):
        with pytest.raises(ValueError):
            divergence_direct(KL, (0.5, 0.6), (0.5, 0.5))
        with pytest.raises(ValueError):
            divergence_direct(KL, (-0.1, 1.1), (0.5, 0.5))


class TestParsing:
    def test_tokens_round_trip(self):
        for tok in ["chi2", "kl", "reverse-kl", "tv", "js", "hellinger", "alpha:0.5"]:
            assert parse_divergence(tok).token() == tok

    def test_unknown_token(self):
        with pytest.raises(InvalidAlphaParam):
            parse_divergence("wasserstein")
