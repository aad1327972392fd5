"""Distributionally robust training: dual fields, shift penalty, sup-norm clamp."""

import math
import tracemalloc
import warnings

import numpy as np
import pytest

from fferm.data import make_dataset, synth_biased
from fferm.divergences import (
    DivergenceKind,
    DivergenceSpec,
    conjugate,
    divergence_direct,
    dual_domain,
    f_prime,
    parse_divergence,
)
from fferm.errors import ConfigError, NonDifferentiable, UnsupportedDivergenceForLinf
from fferm.estimators import batch_probs, group_priors
from fferm.models import LINEAR, ONE_HIDDEN, ModelParams, init_params, loss
from fferm.robust import (
    RobustConfig,
    _linf_clamped,
    _linf_coef,
    _sgd_step,
    dro_grad_fields,
    robust_objective_linf,
    robust_train_linf,
    robust_train_smallshift,
    shift_penalty,
)

from conftest import grad_central_diff, rel_err

CHI2 = DivergenceSpec(DivergenceKind.CHI_SQUARED)
KL = DivergenceSpec(DivergenceKind.KL)

DIFF_SPECS = [
    CHI2,
    KL,
    DivergenceSpec(DivergenceKind.REVERSE_KL),
    DivergenceSpec(DivergenceKind.JENSEN_SHANNON),
    DivergenceSpec(DivergenceKind.SQUARED_HELLINGER),
]


def small_instance(rng, n=12, d=3, arch=LINEAR, scale=0.8):
    X = rng.normal(size=(n, d))
    y = np.array([0, 1] * (n // 2))
    s = np.array([0, 1, 1, 0] * (n // 4))
    ds = make_dataset(X, y, s, m=2, k=2)
    params = init_params(arch, d, 2, width=4, rng=rng)
    params.flat[:] = rng.normal(0.0, scale, size=params.flat.shape)
    return ds, params


def cfg_for(spec, **kw):
    base = dict(divergence=spec, lam=1.0, delta=0.05, batch_size=4)
    base.update(kw)
    return RobustConfig(**base)


class TestDroGradFields:
    def test_independence_chi2(self, rng):
        ds, _ = small_instance(rng)
        params = init_params(LINEAR, 3, 2)  # uniform: joint factorizes exactly
        alpha, fstar = dro_grad_fields(CHI2, params, ds, group_priors(ds))
        np.testing.assert_allclose(alpha, 0.0, atol=1e-12)
        np.testing.assert_allclose(fstar, 0.0, atol=1e-12)

    def test_independence_kl(self, rng):
        ds, _ = small_instance(rng)
        params = init_params(LINEAR, 3, 2)
        alpha, fstar = dro_grad_fields(KL, params, ds, group_priors(ds))
        np.testing.assert_allclose(alpha, 1.0, atol=1e-12)
        np.testing.assert_allclose(fstar, 1.0, atol=1e-12)

    def test_fields_match_batch_estimators(self, rng):
        ds, params = small_instance(rng)
        priors = group_priors(ds)
        alpha, fstar = dro_grad_fields(KL, params, ds, priors)
        bp = batch_probs(params, ds)
        expected = np.asarray(f_prime(KL, bp.joint / np.outer(bp.marginal, priors)))
        np.testing.assert_allclose(alpha, expected, atol=1e-12)

    @pytest.mark.parametrize("spec", DIFF_SPECS, ids=[s.token() for s in DIFF_SPECS])
    def test_grid_search_oracle(self, spec, rng):
        """alpha* maximizes sum_j a_j p_j - q_j f*(a_j) over a dense dual grid."""
        phat = np.array([0.35, 0.2, 0.15, 0.3])
        qhat = np.array([0.25, 0.3, 0.25, 0.2])
        alpha = np.asarray(f_prime(spec, phat / qhat))
        dom = dual_domain(spec)
        lo = max(alpha.min() - 1.0, dom.lower + 1e-6)
        hi = min(alpha.max() + 1.0, dom.upper - 1e-6)
        grid = np.linspace(lo, hi, 200001)
        fstar_grid = np.asarray(conjugate(spec, grid))
        for j in range(4):
            vals = grid * phat[j] - qhat[j] * fstar_grid
            best = grid[np.argmax(vals)]
            assert abs(best - alpha[j]) < 1e-4
            own = alpha[j] * phat[j] - qhat[j] * conjugate(spec, alpha[j])
            assert own >= vals.max() - 1e-6

    def test_danskin_single_entry_perturbation(self, rng):
        """Any +-1e-3 nudge of one alpha* entry lowers the dual objective."""
        ds, params = small_instance(rng, n=16)
        priors = group_priors(ds)
        alpha, _ = dro_grad_fields(CHI2, params, ds, priors)
        bp = batch_probs(params, ds)
        phat = bp.joint.ravel()
        qhat = np.outer(bp.marginal, priors).ravel()
        a = alpha.ravel()

        def dual_value(avec):
            return float((avec * phat).sum() - (qhat * np.asarray(conjugate(CHI2, avec))).sum())

        base = dual_value(a)
        for j in range(a.size):
            for eps in (1e-3, -1e-3):
                nudged = a.copy()
                nudged[j] += eps
                assert dual_value(nudged) < base

    def test_tv_rejected(self, rng):
        ds, params = small_instance(rng)
        with pytest.raises(NonDifferentiable):
            dro_grad_fields(DivergenceSpec(DivergenceKind.TOTAL_VARIATION), params, ds,
                            group_priors(ds))


class TestShiftPenalty:
    def test_delta_zero_vanishes(self, rng):
        ds, params = small_instance(rng)
        pen = shift_penalty(CHI2, params, ds, group_priors(ds), cfg_for(CHI2, delta=0.0))
        assert pen.value == 0.0
        np.testing.assert_array_equal(pen.grad_theta, 0.0)

    @pytest.mark.parametrize("spec", DIFF_SPECS, ids=[s.token() for s in DIFF_SPECS])
    @pytest.mark.parametrize("p_norm", [2.0, math.inf])
    def test_grad_matches_finite_differences(self, spec, p_norm, rng):
        ds, params = small_instance(rng, n=12, d=3)
        priors = group_priors(ds)
        cfg = cfg_for(spec, delta=0.05, p_norm=p_norm)
        pen = shift_penalty(spec, params, ds, priors, cfg)

        def value_at(flat):
            p = ModelParams(LINEAR, 3, 2, 0, flat.copy())
            return shift_penalty(spec, p, ds, priors, cfg).value

        fd = grad_central_diff(value_at, params.flat)
        assert rel_err(pen.grad_theta, fd) < 1e-4

    def test_squared_variant_grad(self, rng):
        ds, params = small_instance(rng, n=12, d=3)
        priors = group_priors(ds)
        cfg = cfg_for(CHI2, squared_penalty=True, epsilon_penalty=0.3)
        pen = shift_penalty(CHI2, params, ds, priors, cfg)

        def value_at(flat):
            p = ModelParams(LINEAR, 3, 2, 0, flat.copy())
            return shift_penalty(CHI2, p, ds, priors, cfg).value

        fd = grad_central_diff(value_at, params.flat)
        assert rel_err(pen.grad_theta, fd) < 1e-4
        alpha, fstar = dro_grad_fields(CHI2, params, ds, priors)
        expected = cfg.lam * 0.3 * ((alpha**2).sum() + (fstar**2).sum())
        assert pen.value == pytest.approx(expected, abs=1e-12)

    def test_hidden_architecture_grad(self, rng):
        ds, params = small_instance(rng, n=12, d=3, arch=ONE_HIDDEN)
        priors = group_priors(ds)
        cfg = cfg_for(KL, delta=0.02)
        pen = shift_penalty(KL, params, ds, priors, cfg)

        def value_at(flat):
            p = ModelParams(ONE_HIDDEN, 3, 2, 4, flat.copy())
            return shift_penalty(KL, p, ds, priors, cfg).value

        fd = grad_central_diff(value_at, params.flat)
        assert rel_err(pen.grad_theta, fd) < 1e-4

    def test_danskin_divergence_gradient_matches_fd(self, rng):
        """The closed-form dual gives the exact theta-gradient of D_f itself."""
        from fferm.robust import _smallshift_coef
        from fferm.models import weighted_prob_grad
        from fferm.estimators import batch_probs

        for spec in DIFF_SPECS:
            ds, params = small_instance(rng, n=16, d=3)
            priors = group_priors(ds)
            cfg = cfg_for(spec, lam=1.0, delta=0.0)
            coef, _ = _smallshift_coef(spec, params, ds.features, ds.groups, priors, ds.k, cfg)
            grad = weighted_prob_grad(params, ds.features, coef)

            def dval(flat, spec=spec):
                p = ModelParams(LINEAR, 3, 2, 0, flat.copy())
                bp = batch_probs(p, ds)
                return divergence_direct(
                    spec, bp.joint.ravel(), np.outer(bp.marginal, priors).ravel(),
                    check_simplex=False,
                )

            fd = grad_central_diff(dval, params.flat)
            assert rel_err(grad, fd) < 1e-5, spec.token()

    def test_taylor_fidelity_small_deltas(self, rng):
        """Linearized worst case tracks the sampled worst case to second order."""
        ds, params = small_instance(rng, n=40)
        priors = group_priors(ds)
        bp = batch_probs(params, ds)
        phat = bp.joint.ravel()
        qhat = np.outer(bp.marginal, priors).ravel()
        alpha, fstar = dro_grad_fields(CHI2, params, ds, priors)
        a, f = alpha.ravel(), fstar.ravel()
        base = divergence_direct(CHI2, phat, qhat, check_simplex=False)
        dirs = rng.normal(size=(2000, 2, 4))
        dirs /= np.linalg.norm(dirs, axis=2, keepdims=True)
        u_star = a / np.linalg.norm(a)
        v_star = -f / np.linalg.norm(f)  # grad_Q D = -f*(alpha*): push q down
        errs = {}
        for delta in (1e-3, 1e-2):
            linear = delta * (np.linalg.norm(a) + np.linalg.norm(f))
            best = -np.inf
            cand = np.concatenate([dirs, [[u_star, v_star]]], axis=0)
            for U, V in cand:
                val = divergence_direct(
                    CHI2, phat + delta * U, qhat + delta * V, check_simplex=False
                )
                best = max(best, val - base)
            errs[delta] = abs(best - linear)
        assert errs[1e-2] / errs[1e-3] >= 50


class TestLinfObjective:
    def test_clamp_arithmetic_example(self):
        p_t, q_t = _linf_clamped(np.array([0.7, 0.3]), np.array([0.5, 0.5]), 0.4)
        np.testing.assert_allclose(p_t, [1.0, 0.7])
        np.testing.assert_allclose(q_t, [0.1, 0.1])

    def test_delta_zero_equals_direct(self, rng):
        ds, params = small_instance(rng)
        priors = group_priors(ds)
        bp = batch_probs(params, ds)
        direct = divergence_direct(
            KL, bp.joint.ravel(), np.outer(bp.marginal, priors).ravel(), check_simplex=False
        )
        assert robust_objective_linf(KL, params, ds, priors, 0.0) == pytest.approx(
            direct, abs=1e-12
        )

    def test_unsupported_kind(self, rng):
        ds, params = small_instance(rng)
        with pytest.raises(UnsupportedDivergenceForLinf):
            robust_objective_linf(
                DivergenceSpec(DivergenceKind.JENSEN_SHANNON), params, ds,
                group_priors(ds), 0.1
            )

    def test_nondecreasing_in_delta(self, rng):
        ds, params = small_instance(rng, n=24)
        priors = group_priors(ds)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            vals = [
                robust_objective_linf(CHI2, params, ds, priors, d)
                for d in (0.0, 0.02, 0.05, 0.1, 0.2)
            ]
        assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))

    @pytest.mark.parametrize("spec", [KL, CHI2], ids=["kl", "chi2"])
    def test_corner_enumeration_oracle(self, spec, rng):
        """Worst case over the sup-norm box equals the clamped-corner value.

        Instances are drawn in the regime where the corner solution is valid
        (every joint entry exceeds its product entry by at least 2*delta, so
        the dual field stays positive throughout the box).
        """
        for _ in range(100):
            delta = float(rng.choice([0.01, 0.05, 0.1]))
            qhat = rng.uniform(0.15, 0.6, size=4)
            phat = qhat + 2 * delta + rng.uniform(0.0, 0.4, size=4)
            closed = divergence_direct(
                spec, np.minimum(phat + delta, 1.0), np.maximum(qhat - delta, 0.0),
                check_simplex=False,
            )
            best = -np.inf
            for bits in range(256):
                pc = phat + delta * np.where([bits >> i & 1 for i in range(4)], 1.0, -1.0)
                qc = qhat + delta * np.where([bits >> (i + 4) & 1 for i in range(4)], 1.0, -1.0)
                val = divergence_direct(
                    spec, np.clip(pc, 0.0, 1.0), np.clip(qc, 0.0, 1.0), check_simplex=False
                )
                best = max(best, val)
            assert abs(best - closed) <= 1e-10


class TestRobustTraining:
    def test_config_validation(self):
        with pytest.raises(ConfigError):
            cfg_for(CHI2, p_norm=3.0).check_robust()
        with pytest.raises(ConfigError):
            cfg_for(CHI2, fairness_notion="eo").check_robust()
        with pytest.raises(NonDifferentiable):
            cfg_for(DivergenceSpec(DivergenceKind.TOTAL_VARIATION)).check_robust()
        with pytest.raises(UnsupportedDivergenceForLinf):
            cfg_for(DivergenceSpec(DivergenceKind.JENSEN_SHANNON), mode="linf").check_robust()
        with pytest.raises(ConfigError):
            robust_train_smallshift(
                synth_biased(0, 120, 3, 0.2), cfg_for(CHI2, mode="linf", epochs_total=1)
            )

    def test_smallshift_delta_zero_penalty_identically_zero(self):
        ds = synth_biased(4, 300, 3, 0.3)
        cfg = cfg_for(CHI2, lam=30.0, delta=0.0, epochs_total=6, warmup_epochs=2,
                      batch_size=16, seed=3)
        rep = robust_train_smallshift(ds, cfg)
        np.testing.assert_array_equal(rep.extra["penalty"], 0.0)
        assert rep.records.shape[0] == 6

    def test_smallshift_deterministic(self):
        ds = synth_biased(4, 300, 3, 0.3)
        cfg = cfg_for(CHI2, lam=30.0, delta=0.05, epochs_total=5, warmup_epochs=1,
                      batch_size=16, seed=3)
        r1 = robust_train_smallshift(ds, cfg)
        r2 = robust_train_smallshift(ds, cfg)
        np.testing.assert_array_equal(r1.records, r2.records)
        np.testing.assert_array_equal(r1.final_params.flat, r2.final_params.flat)

    def test_linf_full_batch_descent_monotone(self, rng):
        """Full-batch gradient descent on the clamped objective never increases."""
        ds = synth_biased(5, 200, 3, 0.3)
        priors = group_priors(ds)
        cfg = cfg_for(KL, lam=5.0, delta=0.03, mode="linf", eta_theta=1e-3,
                      batch_size=ds.n)
        params = init_params(LINEAR, 3, 2)
        prev = math.inf
        for _ in range(60):
            obj = loss(params, ds.features, ds.labels) + cfg.lam * robust_objective_linf(
                KL, params, ds, priors, cfg.delta
            )
            assert obj <= prev + 1e-9
            prev = obj
            coef, _ = _linf_coef(KL, params, ds.features, ds.groups, priors, ds.k, cfg)
            _sgd_step(params, ds.features, ds.labels, coef, cfg.eta_theta)

    def test_linf_gradient_matches_finite_differences_off_clamp(self, rng):
        ds, params = small_instance(rng, n=16, d=3)
        priors = group_priors(ds)
        cfg = cfg_for(KL, lam=2.0, delta=0.02, mode="linf")
        coef, _ = _linf_coef(KL, params, ds.features, ds.groups, priors, ds.k, cfg)
        from fferm.models import weighted_prob_grad

        grad = weighted_prob_grad(params, ds.features, coef)

        def value_at(flat):
            p = ModelParams(LINEAR, 3, 2, 0, flat.copy())
            return cfg.lam * robust_objective_linf(KL, p, ds, priors, cfg.delta)

        fd = grad_central_diff(value_at, params.flat)
        assert rel_err(grad, fd) < 1e-4

    def test_linf_training_runs_and_reports(self):
        ds = synth_biased(4, 300, 3, 0.3)
        cfg = cfg_for(KL, lam=20.0, delta=0.05, mode="linf", epochs_total=5,
                      warmup_epochs=1, batch_size=16, seed=3)
        rep = robust_train_linf(ds, cfg)
        assert rep.records.shape[0] == 5
        assert (rep.extra["delta"] == 0.05).all()
        assert rep.extra["penalty"][-1] > 0

    def test_linf_training_stabilizes_dpv_under_test_shifts(self):
        """Across re-flipped test groups, the delta-trained model's DPV varies less."""
        from fferm.data import flip_sensitive, split, synth_biased
        from fferm.metrics import dp_violation
        from fferm.models import forward_batch

        data = synth_biased(77, 1500, 4, 0.45)
        tr, te = split(data, 0.25, 0)
        trf = flip_sensitive(tr, 0.2, 1)
        base = dict(divergence=KL, lam=100.0, epochs_total=250, warmup_epochs=30,
                    batch_size=8, seed=2, mode="linf")
        variances = {}
        for delta in (0.0, 0.1):
            rep = robust_train_linf(trf, RobustConfig(delta=delta, **base))
            probs, _ = forward_batch(rep.final_params, te.features)
            preds = np.argmax(probs, axis=1)
            dpvs = [
                dp_violation(preds, flip_sensitive(te, 0.2, 100 + i).groups)
                for i in range(5)
            ]
            variances[delta] = float(np.var(dpvs))
        assert variances[0.1] <= variances[0.0]

    def test_memory_contract_per_step(self):
        """Transient step storage stays near O(batch * params + m*n), far below n * params."""
        n, d, b = 5000, 300, 8
        ds = synth_biased(9, n, d, 0.3)
        priors = group_priors(ds)
        cfg = cfg_for(CHI2, lam=10.0, delta=0.05, batch_size=b)
        params = init_params(ONE_HIDDEN, d, 2, width=32, rng=np.random.default_rng(0))
        from fferm.robust import _smallshift_coef

        # warm the allocator, then measure one refresh + a few steps
        coef, _ = _smallshift_coef(CHI2, params, ds.features, ds.groups, priors, ds.k, cfg)
        _sgd_step(params, ds.features[:b], ds.labels[:b], coef[:b], cfg.eta_theta)
        tracemalloc.start()
        coef, _ = _smallshift_coef(CHI2, params, ds.features, ds.groups, priors, ds.k, cfg)
        for start in range(0, 10 * b, b):
            idx = np.arange(start, start + b)
            _sgd_step(params, ds.features[idx], ds.labels[idx], coef[idx], cfg.eta_theta)
        _, peak = tracemalloc.get_traced_memory()
        tracemalloc.stop()
        n_params = params.flat.size
        naive_bytes = n * n_params * 8  # per-sample parameter gradients
        assert peak < 0.05 * naive_bytes
        assert peak < 40e6
