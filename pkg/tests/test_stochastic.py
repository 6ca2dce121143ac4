"""Stochastic operations: Monte-Carlo oracles, fusion optimality, KKT checks."""

import numpy as np
import pytest

from lieloc.liegroups import GroupElement, sek_group
from lieloc.stochastic import (
    CorrelatedSet,
    LinearConstraint,
    NonPsdResultError,
    RankDeficientError,
    StochasticElement,
    WeightError,
    cross_cov_step,
    st_average,
    st_compose,
    st_difference,
    st_fuse,
    st_fuse_constrained,
    st_inverse,
)

from _oracles import (
    batch_compose,
    batch_inverse,
    batch_sek_exp,
    batch_sek_log,
    brute_force_fuse,
    element_to_batch,
    fusion_cost_and_grad,
    mc_cov,
    penalty_constrained_fuse,
    random_spd,
    rel_frob,
    sample_correlated,
)

SE3 = sek_group(1)
RNG = np.random.default_rng(314159)
N_MC = 30000


def rand_se3(rng=RNG, scale=0.5):
    return SE3.exp(scale * rng.standard_normal(6))


def rand_element(rng=RNG, cov_scale=1e-4, mean_scale=0.5):
    return StochasticElement(rand_se3(rng, mean_scale), random_spd(rng, 6, cov_scale))


def mc_perturbations_of(result_mean, means, zeta_samples, invert_first=False):
    """Sample group-exact results and express them at the analytic mean."""
    n = zeta_samples.shape[0]
    acc = None
    for i, m in enumerate(means):
        r, t = batch_sek_exp(zeta_samples[:, i, :], 1)
        xi = batch_compose(element_to_batch(m, n), (r, t))
        if invert_first and i == 0:
            xi = batch_inverse(xi)
        acc = xi if acc is None else batch_compose(acc, xi)
    base = batch_inverse(element_to_batch(result_mean, n))
    err = batch_compose(base, acc)
    return batch_sek_log(*err)


# ---------------------------------------------------------------------------
# Inverse
# ---------------------------------------------------------------------------


def test_inverse_identity_mean():
    p = random_spd(RNG, 6, 1e-3)
    out = st_inverse(StochasticElement(GroupElement.identity(1), p))
    assert np.allclose(out.mean.matrix(), np.eye(4))
    assert np.allclose(out.cov, p, atol=1e-12)


def test_inverse_is_involution():
    x = rand_element()
    back = st_inverse(st_inverse(x))
    assert np.max(np.abs(back.mean.matrix() - x.mean.matrix())) < 1e-12
    assert np.max(np.abs(back.cov - x.cov)) < 1e-10


def test_inverse_monte_carlo():
    x = StochasticElement(rand_se3(), 1e-4 * np.eye(6))
    out = st_inverse(x)
    zs = sample_correlated(RNG, CorrelatedSet((x,)), N_MC)
    r, t = batch_sek_exp(zs[:, 0, :], 1)
    samples = batch_inverse(batch_compose(element_to_batch(x.mean, N_MC), (r, t)))
    err = batch_compose(batch_inverse(element_to_batch(out.mean, N_MC)), samples)
    emp = mc_cov(batch_sek_log(*err))
    assert rel_frob(emp, out.cov) < 0.05


# ---------------------------------------------------------------------------
# Composition
# ---------------------------------------------------------------------------


def test_compose_identity_means_uncorrelated():
    p1, p2 = random_spd(RNG, 6, 1e-3), random_spd(RNG, 6, 1e-3)
    s = CorrelatedSet((StochasticElement(GroupElement.identity(1), p1),
                       StochasticElement(GroupElement.identity(1), p2)))
    out = st_compose(s)
    assert np.allclose(out.cov, p1 + p2, atol=1e-12)


def test_compose_second_identity():
    x1 = rand_element()
    p2 = random_spd(RNG, 6, 1e-3)
    s = CorrelatedSet((x1, StochasticElement(GroupElement.identity(1), p2)))
    out = st_compose(s)
    ad = GroupElement.identity(1).adjoint()  # identity transport for X2=I
    assert np.allclose(out.cov, p2 + ad @ x1.cov @ ad.T, atol=1e-12)


def test_compose_requires_two():
    with pytest.raises(ValueError):
        st_compose(CorrelatedSet((rand_element(),)))


def test_compose_monte_carlo_correlated():
    rng = np.random.default_rng(7)
    els = [StochasticElement(rand_se3(rng), random_spd(rng, 6, 1e-4))
           for _ in range(3)]
    c01 = 0.1 * 1e-4 * np.eye(6)
    s = CorrelatedSet(tuple(els), {(0, 1): c01})
    out = st_compose(s)
    zs = sample_correlated(rng, s, N_MC)
    emp = mc_cov(mc_perturbations_of(out.mean, [e.mean for e in els], zs))
    assert rel_frob(emp, out.cov) < 0.05


# ---------------------------------------------------------------------------
# Difference
# ---------------------------------------------------------------------------


def test_difference_of_identical_elements_vanishes():
    p = random_spd(RNG, 6, 1e-3)
    x = StochasticElement(rand_se3(), p)
    out = st_difference(x, x, p)
    assert np.max(np.abs(out.mean.matrix() - np.eye(4))) < 1e-12
    assert np.max(np.abs(out.cov)) < 1e-12


def test_difference_uncorrelated_identity_means():
    p1, p2 = random_spd(RNG, 6, 1e-3), random_spd(RNG, 6, 1e-3)
    x1 = StochasticElement(GroupElement.identity(1), p1)
    x2 = StochasticElement(GroupElement.identity(1), p2)
    out = st_difference(x1, x2)
    assert np.allclose(out.cov, p1 + p2, atol=1e-12)


def test_difference_monte_carlo():
    rng = np.random.default_rng(8)
    x1 = StochasticElement(rand_se3(rng), random_spd(rng, 6, 1e-4))
    x2 = StochasticElement(rand_se3(rng), random_spd(rng, 6, 1e-4))
    p12 = 0.25 * 1e-4 * np.eye(6)
    out = st_difference(x1, x2, p12)
    s = CorrelatedSet((x1, x2), {(0, 1): p12})
    zs = sample_correlated(rng, s, N_MC)
    emp = mc_cov(mc_perturbations_of(out.mean, [x1.mean, x2.mean], zs,
                                     invert_first=True))
    assert rel_frob(emp, out.cov) < 0.05


def test_difference_rejects_inconsistent_inputs():
    p = 1e-4 * np.eye(6)
    x1 = StochasticElement(rand_se3(), p)
    x2 = StochasticElement(rand_se3(), p)
    bad_p12 = 5e-4 * np.eye(6)  # |cross| > marginals: indefinite joint
    with pytest.raises((NonPsdResultError, ValueError)):
        st_difference(x1, x2, bad_p12)


# ---------------------------------------------------------------------------
# Averaging
# ---------------------------------------------------------------------------


def test_average_equal_means_closed_form():
    xbar = rand_se3()
    p = random_spd(RNG, 6, 1e-3)
    s = CorrelatedSet((StochasticElement(xbar, p), StochasticElement(xbar, p)))
    out = st_average(s, [0.5, 0.5])
    assert np.max(np.abs(out.mean.matrix() - xbar.matrix())) < 1e-10
    half = SE3.exp(-0.5 * xbar.log())
    ad = half.adjoint()
    expected = 0.25 * p + 0.25 * ad @ p @ ad.T
    assert np.max(np.abs(out.cov - expected)) < 1e-12


def test_average_degenerate_weights():
    x1, x2, x3 = (rand_element() for _ in range(3))
    out = st_average(CorrelatedSet((x1, x2, x3)), [1.0, 0.0, 0.0])
    assert np.max(np.abs(out.mean.matrix() - x1.mean.matrix())) < 1e-12


def test_average_weight_validation():
    s = CorrelatedSet((rand_element(), rand_element()))
    with pytest.raises(WeightError):
        st_average(s, [0.6, 0.6])
    with pytest.raises(WeightError):
        st_average(s, [1.5, -0.5])


def test_average_monte_carlo():
    # The first-order transport of fractional powers is exact at identity and
    # degrades with the magnitude of log(mean); keep means nearby, matching
    # how averaging is used (references for clustered estimates).
    rng = np.random.default_rng(9)
    base = rand_se3(rng, 0.1)
    els = []
    for _ in range(2):
        d = rng.standard_normal(6)
        d *= 0.05 / np.linalg.norm(d)
        els.append(StochasticElement(base @ SE3.exp(d), random_spd(rng, 6, 1e-4)))
    s = CorrelatedSet(tuple(els))
    alphas = np.array([0.5, 0.5])
    out = st_average(s, alphas)
    zs = sample_correlated(rng, s, N_MC)
    n = N_MC
    acc = None
    for i, e in enumerate(els):
        rot, tr = batch_sek_exp(zs[:, i, :], 1)
        xi = batch_compose(element_to_batch(e.mean, n), (rot, tr))
        # exact fractional power of each sampled element
        powered = batch_sek_exp(alphas[i] * batch_sek_log(*xi), 1)
        acc = powered if acc is None else batch_compose(acc, powered)
    err = batch_compose(batch_inverse(element_to_batch(out.mean, n)), acc)
    emp = mc_cov(batch_sek_log(*err))
    assert rel_frob(emp, out.cov) < 0.05


# ---------------------------------------------------------------------------
# First-order consistency across covariance scales
# ---------------------------------------------------------------------------


def test_first_order_consistency_shrinks_linearly():
    rng = np.random.default_rng(10)
    els_base = [rand_se3(rng, 0.4) for _ in range(2)]
    shapes = [random_spd(rng, 6, 1.0) for _ in range(2)]
    unit = rng.standard_normal((20000, 12))
    mismatch = []
    for scale in (1e-2, 1e-3, 1e-4):
        els = tuple(StochasticElement(m, scale * p)
                    for m, p in zip(els_base, shapes))
        s = CorrelatedSet(els)
        out = st_compose(s)
        zs = sample_correlated(rng, s, unit.shape[0], unit=unit)
        emp = mc_cov(mc_perturbations_of(out.mean, [e.mean for e in els], zs))
        mismatch.append(np.linalg.norm(emp - out.cov))
    # common random draws: the sampling part scales exactly linearly, the
    # nonlinearity superlinearly, so each decade shrinks at least ~linearly
    assert mismatch[0] / mismatch[1] > 5.0
    assert mismatch[1] / mismatch[2] > 5.0


# ---------------------------------------------------------------------------
# Fusion
# ---------------------------------------------------------------------------


def test_fuse_identical_means():
    xbar = rand_se3()
    p = random_spd(RNG, 6, 1e-4)
    s = CorrelatedSet((StochasticElement(xbar, p), StochasticElement(xbar, p)))
    out = st_fuse(s, reference=xbar)
    assert np.max(np.abs(out.mean.matrix() - xbar.matrix())) < 1e-12


def test_fuse_single_element_returns_input():
    x = rand_element()
    out = st_fuse(CorrelatedSet((x,)))
    assert np.max(np.abs(out.mean.matrix() - x.mean.matrix())) < 1e-10
    assert np.max(np.abs(out.cov - x.cov)) < 1e-10


def _fusion_problem(rng, n, sep, correlated):
    base = rand_se3(rng, 0.3)
    means = [base]
    for _ in range(n - 1):
        d = rng.standard_normal(6)
        d *= sep / np.linalg.norm(d)
        means.append(base @ SE3.exp(d))
    els = tuple(StochasticElement(m, random_spd(rng, 6, 1e-4 * rng.uniform(1, 2)))
                for m in means)
    cross = {}
    if correlated:
        cross[(0, 1)] = 0.05 * 1e-4 * np.eye(6)
    return CorrelatedSet(els, cross)


def test_fuse_against_brute_force_small_separation():
    rng = np.random.default_rng(11)
    for k in range(6):
        s = _fusion_problem(rng, n=2 + k % 2, sep=0.02, correlated=(k % 3 == 0))
        ref = st_average(s, np.full(s.n, 1.0 / s.n)).mean
        fused = st_fuse(s, reference=ref)
        zeta_star = (ref.inverse() @ fused.mean).log()
        zeta_oracle = brute_force_fuse(s, ref)
        assert np.linalg.norm(zeta_star - zeta_oracle) < 1e-6


def test_fuse_against_brute_force_wider_separation():
    # At 0.05 separation the one-shot linearization sits a few 1e-6 from the
    # exact-cost minimizer (second-order effect, measured).
    rng = np.random.default_rng(12)
    for _ in range(4):
        s = _fusion_problem(rng, n=2, sep=0.05, correlated=False)
        ref = st_average(s, np.full(s.n, 1.0 / s.n)).mean
        fused = st_fuse(s, reference=ref)
        zeta_star = (ref.inverse() @ fused.mean).log()
        zeta_oracle = brute_force_fuse(s, ref)
        assert np.linalg.norm(zeta_star - zeta_oracle) < 1e-5


def test_fuse_optimality_against_perturbations():
    rng = np.random.default_rng(13)
    s = _fusion_problem(rng, n=3, sep=0.03, correlated=True)
    ref = st_average(s, np.full(3, 1.0 / 3.0)).mean
    fused = st_fuse(s, reference=ref)
    zeta_star = (ref.inverse() @ fused.mean).log()
    cost, _ = fusion_cost_and_grad(s, ref)
    c0 = cost(zeta_star)
    for _ in range(100):
        d = rng.standard_normal(6)
        d *= 1e-3 / np.linalg.norm(d)
        assert c0 <= cost(zeta_star + d)


def test_fuse_reference_invariance_first_order():
    rng = np.random.default_rng(14)
    s = _fusion_problem(rng, n=2, sep=0.02, correlated=False)
    ref1 = st_average(s, [0.5, 0.5]).mean
    d = rng.standard_normal(6)
    ref2 = ref1 @ SE3.exp(0.05 * d / np.linalg.norm(d))
    m1 = st_fuse(s, reference=ref1).mean
    m2 = st_fuse(s, reference=ref2).mean
    assert np.linalg.norm((m1.inverse() @ m2).log()) < 1e-4


def test_fuse_covariance_psd():
    rng = np.random.default_rng(15)
    for _ in range(5):
        s = _fusion_problem(rng, n=3, sep=0.03, correlated=True)
        out = st_fuse(s)
        assert np.min(np.linalg.eigvalsh(out.cov)) >= -1e-12
        assert np.max(np.abs(out.cov - out.cov.T)) < 1e-12


# ---------------------------------------------------------------------------
# Constrained fusion
# ---------------------------------------------------------------------------


def test_constrained_full_rank_pins_to_reference():
    x = rand_element()
    c = LinearConstraint(np.eye(6), np.zeros(6), np.eye(6))
    out = st_fuse_constrained(x, c, reference=x.mean)
    assert np.max(np.abs(out.mean.matrix() - x.mean.matrix())) < 1e-12


def test_constrained_full_rank_returns_gamma_inverse():
    rng = np.random.default_rng(16)
    x = rand_element(rng)
    gamma = random_spd(rng, 6, 1.0)
    d_til = 0.01 * rng.standard_normal(6)
    c = LinearConstraint(gamma, d_til, np.eye(6))
    out = st_fuse_constrained(x, c, reference=x.mean)
    zeta_c = (x.mean.inverse() @ out.mean).log()
    assert np.max(np.abs(zeta_c - np.linalg.solve(gamma, d_til))) < 1e-12


def test_constrained_feasible_point_is_fixed():
    # When the unconstrained optimum (zeta_c = -zeta_u, i.e. the mean of the
    # unconstrained estimate) already satisfies the constraint, the
    # projection must return it with zero multipliers.
    rng = np.random.default_rng(17)
    x = rand_element(rng)
    ref = x.mean @ SE3.exp(0.02 * rng.standard_normal(6))
    zeta_u = (x.mean.inverse() @ ref).log()
    gamma = rng.standard_normal((3, 6))
    c = LinearConstraint(gamma, -gamma @ zeta_u, np.eye(6))
    out = st_fuse_constrained(x, c, reference=ref)
    zeta_c = (ref.inverse() @ out.mean).log()
    assert np.max(np.abs(zeta_c + zeta_u)) < 1e-10
    assert np.max(np.abs(out.mean.matrix() - x.mean.matrix())) < 1e-9


def test_constrained_satisfies_constraint_and_kkt():
    rng = np.random.default_rng(18)
    for _ in range(5):
        x = rand_element(rng)
        ref = x.mean @ SE3.exp(0.03 * rng.standard_normal(6))
        gamma = rng.standard_normal((3, 6))
        d_til = 0.01 * rng.standard_normal(3)
        w = random_spd(rng, 6, 1.0)
        c = LinearConstraint(gamma, d_til, w)
        out = st_fuse_constrained(x, c, reference=ref)
        zeta_c = (ref.inverse() @ out.mean).log()
        assert np.linalg.norm(gamma @ zeta_c - d_til) < 1e-10
        # stationarity: Jr^-T W (zeta_u + Jr^-1 zeta_c) + Gamma^T lambda = 0
        zeta_u = (x.mean.inverse() @ ref).log()
        jr_inv = SE3.jr_inv(zeta_u)
        big_j = np.linalg.inv(jr_inv.T @ w @ jr_inv)
        lam = -np.linalg.solve(gamma @ big_j @ gamma.T,
                               gamma @ big_j @ jr_inv.T @ w @ zeta_u + d_til)
        residual = jr_inv.T @ w @ (zeta_u + jr_inv @ zeta_c) + gamma.T @ lam
        assert np.linalg.norm(residual) < 1e-8


def test_constrained_matches_penalty_oracle():
    rng = np.random.default_rng(19)
    for _ in range(5):
        x = rand_element(rng)
        ref = x.mean @ SE3.exp(0.03 * rng.standard_normal(6))
        gamma = np.hstack([np.zeros((3, 3)), np.eye(3)])  # position-only rows
        d_til = 0.01 * rng.standard_normal(3)
        w = random_spd(rng, 6, 1.0)
        out = st_fuse_constrained(x, LinearConstraint(gamma, d_til, w),
                                  reference=ref)
        zeta_c = (ref.inverse() @ out.mean).log()
        zeta_u = (x.mean.inverse() @ ref).log()
        oracle = penalty_constrained_fuse(zeta_u, SE3.jr_inv(zeta_u), w,
                                          gamma, d_til)
        assert np.linalg.norm(zeta_c - oracle) < 1e-6


def test_constraint_rank_validation():
    gamma = np.vstack([np.eye(3), np.eye(3)])[:4, :3]  # 4x3: too many rows
    with pytest.raises(RankDeficientError):
        LinearConstraint(gamma, np.zeros(4), np.eye(3))
    rank_def = np.array([[1.0, 0, 0, 0, 0, 0], [2.0, 0, 0, 0, 0, 0]])
    with pytest.raises(RankDeficientError):
        LinearConstraint(rank_def, np.zeros(2), np.eye(6))


# ---------------------------------------------------------------------------
# Cross-covariance recursion
# ---------------------------------------------------------------------------


def test_cross_cov_zero_stays_zero():
    d = 4
    z = np.zeros((d, d))
    out = cross_cov_step(z, np.eye(d), np.eye(d), np.eye(d), np.eye(d), z,
                         np.zeros((d, 2)), np.zeros((2, d)),
                         np.zeros((d, 2)), np.zeros((2, d)))
    assert np.array_equal(out, z)


def test_cross_cov_degenerates_to_single_filter_update():
    rng = np.random.default_rng(20)
    d, q = 4, 2
    p = random_spd(rng, d, 1.0)
    f = rng.standard_normal((d, d))
    jr = np.eye(d) + 0.1 * rng.standard_normal((d, d))
    qm = random_spd(rng, d, 0.1)
    h = rng.standard_normal((q, d))
    p_pred = f @ p @ f.T + jr @ qm @ jr.T
    k = p_pred @ h.T @ np.linalg.inv(h @ p_pred @ h.T + np.eye(q))
    out = cross_cov_step(p, f, f, jr, jr, qm, k, h, k, h)
    expected = (np.eye(d) - k @ h) @ p_pred @ (np.eye(d) - k @ h).T
    assert np.max(np.abs(out - expected)) < 1e-12


def test_cross_cov_matches_stacked_filter():
    from _oracles import stacked_cross_cov
    rng = np.random.default_rng(21)
    d, q = 3, 2
    p_joint = np.kron(np.eye(2), random_spd(rng, d, 1.0))
    p_ij = np.zeros((d, d))
    qm = random_spd(rng, d, 0.05)
    for step in range(25):
        f_i = np.eye(d) + 0.05 * rng.standard_normal((d, d))
        f_j = np.eye(d) + 0.05 * rng.standard_normal((d, d))
        jr_i = np.eye(d) + 0.01 * rng.standard_normal((d, d))
        jr_j = np.eye(d) + 0.01 * rng.standard_normal((d, d))
        h_i = rng.standard_normal((q, d))
        h_j = rng.standard_normal((q, d))
        r_i = random_spd(rng, q, 0.2)
        r_j = random_spd(rng, q, 0.2)
        # marginal gains exactly as two separate filters would compute them
        p_ii = p_joint[:d, :d]
        p_jj = p_joint[d:, d:]
        p_ii_pred = f_i @ p_ii @ f_i.T + jr_i @ qm @ jr_i.T
        p_jj_pred = f_j @ p_jj @ f_j.T + jr_j @ qm @ jr_j.T
        k_i = p_ii_pred @ h_i.T @ np.linalg.inv(h_i @ p_ii_pred @ h_i.T + r_i)
        k_j = p_jj_pred @ h_j.T @ np.linalg.inv(h_j @ p_jj_pred @ h_j.T + r_j)
        p_ij = cross_cov_step(p_ij, f_i, f_j, jr_i, jr_j, qm, k_i, h_i, k_j, h_j)
        from _oracles import stacked_cross_cov as _stk
        p_joint = _stk(p_joint, f_i, f_j, jr_i, jr_j, qm, k_i, h_i, k_j, h_j)
        # measurement-noise marginal terms complete the diagonal blocks
        p_joint[:d, :d] += k_i @ r_i @ k_i.T
        p_joint[d:, d:] += k_j @ r_j @ k_j.T
        assert np.max(np.abs(p_ij - p_joint[:d, d:])) < 1e-8


def test_cross_cov_dimension_validation():
    from lieloc.liegroups import DimensionMismatchError
    d = 3
    with pytest.raises(DimensionMismatchError):
        cross_cov_step(np.zeros((d, d)), np.eye(d), np.eye(4), np.eye(d),
                       np.eye(d), np.zeros((d, d)), np.zeros((d, 2)),
                       np.zeros((2, d)), np.zeros((d, 2)), np.zeros((2, d)))


# ---------------------------------------------------------------------------
# Output hygiene
# ---------------------------------------------------------------------------


def test_outputs_symmetric_psd():
    rng = np.random.default_rng(22)
    for _ in range(10):
        s = _fusion_problem(rng, n=2, sep=0.03, correlated=True)
        for out in (st_compose(s), st_inverse(s.elements[0]),
                    st_difference(s.elements[0], s.elements[1], s.cross[(0, 1)]),
                    st_average(s, [0.4, 0.6]), st_fuse(s)):
            assert np.max(np.abs(out.cov - out.cov.T)) < 1e-10
            assert np.min(np.linalg.eigvalsh(out.cov)) >= -1e-8
