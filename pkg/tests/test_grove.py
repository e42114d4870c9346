"""Posterior-engine correctness.

The decisive oracle is brute-force enumeration over all joint state
configurations of small trees (exponential, test-only): evidence, marginals,
and joint activation probabilities from the two-sweep recursion must agree to
1e-8.  Structural invariants (stochasticity, coherence, prior reproduction)
and the exact sampler (frequencies, masks, goodness of fit, bands) are
checked on top.
"""
import math
from types import SimpleNamespace

import numpy as np
import pytest
from scipy import stats

from wavegrove import (
    CoefficientStack,
    FactorDesign,
    HAAR,
    HyperParams,
    NodeIndex,
    brute_force_oracle,
    credible_bands,
    downward_marginals,
    inverse_dwt,
    joint_root_probs,
    joint_states,
    joint_transition,
    pjap,
    posterior_mean_curve,
    posterior_mean_z,
    sample_posterior,
    upward_pass,
)
from wavegrove.grove import _pjap_core, pyramid_from_marginals


def make_hp(L: int, seed: int = 0) -> HyperParams:
    rng = np.random.default_rng(seed)
    return HyperParams(
        tau=float(rng.uniform(0.5, 8.0)),
        sigma0_sq=float(rng.uniform(0.3, 2.0)),
        nu=float(rng.uniform(1.0, 8.0)),
        alpha=float(rng.uniform(0.0, 1.0)),
        upsilon=tuple(rng.uniform(0.5, 4.0, size=L)),
        eta_rho=float(rng.uniform(0.1, 1.5)),
        gamma_rho=float(rng.uniform(0.2, 0.95)),
        eta_kappa=float(rng.uniform(0.1, 1.5)),
        gamma_kappa=float(rng.uniform(0.2, 0.95)),
    )


def make_instance(T: int, L: int, seed: int):
    """Random data stack, design, and hyperparameters for a small tree."""
    rng = np.random.default_rng(seed)
    G = [int(rng.integers(2, 4)) for _ in range(L)]
    reps = 2
    n = reps * max(int(np.prod(G)), 1)
    codes = np.zeros((n, L), dtype=int)
    for l in range(L):
        base = np.repeat(np.arange(G[l]), math.ceil(n / G[l]))[:n]
        rng.shuffle(base)
        codes[:, l] = base
        codes[: G[l], l] = np.arange(G[l])  # every group appears
    design = FactorDesign(codes, tuple(G)) if L else FactorDesign.single_group(n)
    Y = rng.standard_normal((n, T)) + rng.normal(0.0, 1.0, size=(1, T))
    data = CoefficientStack.from_signals(Y, HAAR)
    return data, design, make_hp(L, seed + 1000)


# ---------------------------------------------------------------------------
# enumeration oracle


@pytest.mark.parametrize("L", [1, 2])
def test_engine_matches_enumeration(L):
    for seed in range(6):
        data, design, hp = make_instance(8, L, seed)
        g = upward_pass(data, design, hp)
        oracle = brute_force_oracle(data, design, hp)

        rel = abs(g.log_evidence - oracle.log_evidence) / abs(oracle.log_evidence)
        assert rel < 1e-8

        marg = g.marginals()
        for j in range(g.J + 1):
            np.testing.assert_allclose(
                marg[j], oracle.node_state_dist[j], atol=1e-8
            )
            np.testing.assert_allclose(
                g.pmap_signal()[j], oracle.pmap_signal[j], atol=1e-8
            )
        for l in range(L):
            for j in range(g.J + 1):
                np.testing.assert_allclose(
                    g.pmap(l)[j], oracle.pmap[l][j], atol=1e-8
                )
            assert pjap(g, l) == pytest.approx(oracle.pjap[l], abs=1e-8)


def test_oracle_size_guard():
    data, design, hp = make_instance(8, 2, 0)
    with pytest.raises(ValueError):
        brute_force_oracle(data, design, hp, max_configs=100)


def test_tree_method_equals_grove_reduction():
    for seed in range(4):
        data, design, hp = make_instance(16, 0, seed)
        gt = upward_pass(data, design, hp, method="tree")
        gg = upward_pass(data, design, hp, method="grove")
        assert abs(gt.log_evidence - gg.log_evidence) <= 1e-10
        assert abs(gt.log_evidence_father - gg.log_evidence_father) <= 1e-10
        for mt, mg in zip(gt.marginals(), gg.marginals()):
            np.testing.assert_allclose(mt, mg, atol=1e-10)


# ---------------------------------------------------------------------------
# structural invariants


def fitted_grove(T=16, L=1, seed=0):
    data, design, hp = make_instance(T, L, seed)
    return upward_pass(data, design, hp)


def test_post_trans_rows_stochastic():
    g = fitted_grove()
    for j in range(1, g.J + 1):
        np.testing.assert_allclose(
            g.post_trans[j].sum(axis=2), 1.0, atol=1e-12
        )
    assert g.root_dist.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.isfinite(g.log_evidence)


def test_marginals_sum_to_one_and_root_matches():
    g = fitted_grove()
    marg = g.marginals()
    np.testing.assert_allclose(marg[0][0], g.root_dist, atol=0.0)
    for m in marg:
        np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-12)


def test_child_marginal_coherence():
    g = fitted_grove(T=16, L=1, seed=3)
    marg = g.marginals()
    for j in range(1, g.J + 1):
        K = marg[j].shape[0]
        for k in range(K):
            recomposed = marg[j - 1][k // 2] @ g.post_trans[j][k]
            np.testing.assert_allclose(marg[j][k], recomposed, atol=1e-12)


def test_joint_null_bounds_each_node():
    g = fitted_grove(T=16, L=1, seed=4)
    pjnp = 1.0 - pjap(g, 0)
    per_node = np.concatenate(g.pmap(0))
    assert pjnp <= (1.0 - per_node).min() + 1e-12


def test_single_admissible_path_evidence():
    data, design, _ = make_instance(8, 1, 7)
    hp = HyperParams(
        tau=2.0, sigma0_sq=1.0, nu=3.0, alpha=0.5, upsilon=(1.5,),
        eta_rho=1e-30, gamma_rho=0.5, eta_kappa=1e-30, gamma_kappa=0.5,
    )
    g = upward_pass(data, design, hp)
    all_null = sum(float(t.log_m[:, 0].sum()) for t in g.tables)
    assert g.log_evidence == pytest.approx(all_null, abs=1e-9)
    assert pjap(g, 0) <= 1e-12


def test_errors():
    data, design, hp = make_instance(8, 1, 0)
    with pytest.raises(ValueError):
        upward_pass(data, FactorDesign.single_group(design.n + 1), make_hp(0))
    with pytest.raises(ValueError):
        upward_pass(data, design, make_hp(0))  # factor count mismatch
    with pytest.raises(ValueError):
        upward_pass(data, design, hp, method="tree")
    with pytest.raises(ValueError):
        upward_pass(data, design, hp, method="magic")
    g = upward_pass(data, design, hp)
    with pytest.raises(ValueError):
        pjap(g, 1)
    with pytest.raises(ValueError):
        g.pmap(-1)


# ---------------------------------------------------------------------------
# degenerate trees and prior reproduction


def test_single_mother_pjap_equals_pmap():
    rng = np.random.default_rng(2)
    data = CoefficientStack.from_signals(rng.standard_normal((4, 2)) + 1.0, HAAR)
    design = FactorDesign(np.array([[0], [0], [1], [1]]), (2,))
    hp = make_hp(1, 5)
    g = upward_pass(data, design, hp)
    assert g.J == 0
    assert pjap(g, 0) == pytest.approx(g.pmap(0)[0][0], abs=1e-12)
    # hand check over the four root states (s, r): r = 1 in states 1 and 3
    terms = np.exp(g.root_log_prior + g.tables[0].log_m[0])
    want = (terms[1] + terms[3]) / terms.sum()
    assert pjap(g, 0) == pytest.approx(want, abs=1e-12)


def test_unit_likelihood_reproduces_prior():
    hp = HyperParams(
        tau=1.0, sigma0_sq=1.0, nu=1.0, upsilon=(1.0,),
        eta_rho=0.6, gamma_rho=0.7, eta_kappa=0.25, gamma_kappa=0.45,
    )
    J, C = 4, 4
    log_m = [np.zeros((2**j, C)) for j in range(J + 1)]
    log_trans = [None] + [
        np.log(joint_transition(j, hp)) for j in range(1, J + 1)
    ]
    root_log_prior = np.log(joint_root_probs(hp))
    log_phi, log_xi, post_trans, root_dist, log_ev = pyramid_from_marginals(
        log_m, log_trans, root_log_prior
    )
    assert log_ev == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(root_dist, joint_root_probs(hp), atol=1e-12)
    fake = SimpleNamespace(root_dist=root_dist, post_trans=post_trans, J=J)
    marg = downward_marginals(fake)
    v = joint_root_probs(hp)
    for j in range(1, J + 1):
        v = v @ joint_transition(j, hp)
        for k in range(2**j):
            np.testing.assert_allclose(marg[j][k], v, atol=1e-10)


def test_prior_pjap_via_unit_likelihood_matches_product_formula():
    hp = HyperParams(
        tau=1.0, sigma0_sq=1.0, nu=1.0, upsilon=(1.0,),
        eta_rho=0.5, gamma_rho=0.8, eta_kappa=0.3, gamma_kappa=0.4,
    )
    J = 5
    log_m = [np.zeros((2**j, 4)) for j in range(J + 1)]
    log_trans = [None] + [np.log(joint_transition(j, hp)) for j in range(1, J + 1)]
    _, _, post_trans, root_dist, _ = pyramid_from_marginals(
        log_m, log_trans, np.log(joint_root_probs(hp))
    )
    got = _pjap_core(post_trans, root_dist, J, 1, 0)
    # under the prior the factor chain never activates iff the root stays 0
    # and every level-j node independently declines de novo activation
    pjnp = 1.0 - min(hp.eta_kappa, 1.0)
    for j in range(1, J + 1):
        pjnp *= (1.0 - min(hp.eta_kappa * 2.0**-j, 1.0)) ** (2**j)
    assert got == pytest.approx(1.0 - pjnp, abs=1e-10)


# ---------------------------------------------------------------------------
# posterior means


def test_posterior_mean_z_is_shrunk_group_mean():
    data, design, hp = make_instance(16, 0, 11)
    g = upward_pass(data, design, hp, method="tree")
    ztree = posterior_mean_z(g)
    pm = g.pmap_signal()
    n = data.n
    for j in range(g.J + 1):
        dbar = data.levels[j].mean(axis=0)
        inv_tau = 2.0 ** (hp.alpha * j) / hp.tau
        want = pm[j] * n * dbar / (n + inv_tau)
        np.testing.assert_allclose(ztree.levels[j], want, atol=1e-12)
    fbar = data.father.mean()
    want_father = g.father_dist[1] * n * fbar / (n + 1.0 / hp.tau)
    assert ztree.father == pytest.approx(want_father, abs=1e-12)


def test_shrinkage_arithmetic():
    # inclusion certain, n = 4, tau_j^{-1} = 1, dbar = 1 shrinks to 0.8
    assert 1.0 * 4 * 1.0 / (4 + 1.0) == pytest.approx(0.8)


def test_posterior_mean_curve_is_inverse_transform():
    data, design, hp = make_instance(16, 1, 12)
    g = upward_pass(data, design, hp)
    tree = posterior_mean_z(g)
    np.testing.assert_allclose(
        posterior_mean_curve(g, HAAR), inverse_dwt(tree, HAAR), atol=1e-12
    )
    no_father = tree.copy()
    no_father.father = 0.0
    np.testing.assert_allclose(
        posterior_mean_curve(g, HAAR, include_father=False),
        inverse_dwt(no_father, HAAR),
        atol=1e-12,
    )


# ---------------------------------------------------------------------------
# exact sampler


def test_sampler_deterministic_and_positive():
    g = fitted_grove(T=8, L=1, seed=20)
    s1 = sample_posterior(g, 64, seed=9)
    s2 = sample_posterior(g, 64, seed=9)
    for j in range(g.J + 1):
        np.testing.assert_array_equal(s1.states[j], s2.states[j])
        np.testing.assert_array_equal(s1.coeffs[j], s2.coeffs[j])
        assert np.all(s1.sigma_sq[j] > 0.0)
    np.testing.assert_array_equal(s1.father_coeffs, s2.father_coeffs)
    s3 = sample_posterior(g, 64, seed=10)
    assert any(
        not np.array_equal(s1.states[j], s3.states[j]) for j in range(g.J + 1)
    )
    with pytest.raises(ValueError):
        sample_posterior(g, 0)


def test_sampler_zero_state_masks_coefficients():
    g = fitted_grove(T=8, L=1, seed=21)
    s = sample_posterior(g, 500, seed=1)
    states = joint_states(1)
    for j in range(g.J + 1):
        for c in range(4):
            bits = states[c]
            hit = s.states[j] == c
            if not hit.any():
                continue
            vals = s.coeffs[j][hit]  # (m, p)
            if bits[0] == 0:
                assert np.all(vals[:, 0] == 0.0)
            if bits[1] == 0:
                assert np.all(vals[:, 1:] == 0.0)


def test_sampler_marginal_frequencies_match_pmap():
    g = fitted_grove(T=16, L=1, seed=22)
    M = 20_000
    s = sample_posterior(g, M, seed=3)
    pm_sig = g.pmap_signal()
    pm_fac = g.pmap(0)
    for j in range(g.J + 1):
        s_bit = (s.states[j] >> 1) & 1
        r_bit = s.states[j] & 1
        for k in range(2**j):
            for p, freq in (
                (pm_sig[j][k], s_bit[:, k].mean()),
                (pm_fac[j][k], r_bit[:, k].mean()),
            ):
                se = math.sqrt(max(p * (1.0 - p), 1e-12) / M)
                assert abs(freq - p) <= 4.0 * se + 1e-9


def test_sampler_mean_z_matches_posterior_mean():
    g = fitted_grove(T=8, L=0, seed=23)
    M = 20_000
    s = sample_posterior(g, M, seed=4)
    ztree = posterior_mean_z(g)
    for j in range(g.J + 1):
        draws = s.coeffs[j][:, :, 0]
        sd = draws.std(axis=0) / math.sqrt(M)
        err = np.abs(draws.mean(axis=0) - ztree.levels[j])
        assert np.all(err <= 4.0 * sd + 1e-4)


def test_sampler_joint_state_law_chi_square():
    # J = 1 tree: the 3-node joint state law has an explicit closed form
    data, design, hp = make_instance(4, 0, 24)
    g = upward_pass(data, design, hp)
    M = 50_000
    s = sample_posterior(g, M, seed=5)
    codes = (
        s.states[0][:, 0].astype(int) * 4
        + s.states[1][:, 0].astype(int) * 2
        + s.states[1][:, 1].astype(int)
    )
    observed = np.bincount(codes, minlength=8).astype(float)
    expected = np.empty(8)
    for c0 in range(2):
        for c1 in range(2):
            for c2 in range(2):
                expected[c0 * 4 + c1 * 2 + c2] = (
                    g.root_dist[c0]
                    * g.post_trans[1][0, c0, c1]
                    * g.post_trans[1][1, c0, c2]
                ) * M
    # merge low-expectation cells to keep the chi-square approximation valid
    order = np.argsort(expected)
    obs_b, exp_b, acc_o, acc_e = [], [], 0.0, 0.0
    for idx in order:
        acc_o += observed[idx]
        acc_e += expected[idx]
        if acc_e >= 10.0:
            obs_b.append(acc_o)
            exp_b.append(acc_e)
            acc_o = acc_e = 0.0
    obs_b[-1] += acc_o
    exp_b[-1] += acc_e
    stat, p = stats.chisquare(obs_b, exp_b)
    assert p >= 1e-3


# ---------------------------------------------------------------------------
# credible bands


def test_bands_zero_width_for_identical_draws():
    g = fitted_grove(T=8, L=0, seed=25)
    s = sample_posterior(g, 1, seed=6)
    lo, hi = credible_bands(s, HAAR, "signal", level=0.95)
    np.testing.assert_allclose(lo, hi, atol=0.0)


def test_bands_cover_posterior_mean():
    data, design, hp = make_instance(32, 0, 26)
    g = upward_pass(data, design, hp)
    s = sample_posterior(g, 10_000, seed=7)
    mean_curve = posterior_mean_curve(g, HAAR)
    lo, hi = credible_bands(s, HAAR, "signal", level=0.95)
    assert np.all(lo <= mean_curve) and np.all(mean_curve <= hi)


def test_father_flag_shifts_curves_by_constant():
    g = fitted_grove(T=16, L=0, seed=27)
    s = sample_posterior(g, 50, seed=8)
    with_f = s.signal_curves(HAAR, include_father=True)
    without = s.signal_curves(HAAR, include_father=False)
    diff = with_f - without
    # the scaling basis function is constant, so each draw shifts bodily
    assert np.max(np.abs(diff - diff[:, :1])) <= 1e-12
    np.testing.assert_allclose(
        diff[:, 0], s.father_coeffs[:, 0] / math.sqrt(16.0), atol=1e-12
    )


def test_contrast_curves_baseline_is_zero():
    g = fitted_grove(T=8, L=1, seed=28)
    s = sample_posterior(g, 40, seed=9)
    same = s.contrast_curves(HAAR, 0, 0, baseline=0)
    np.testing.assert_allclose(same, 0.0, atol=0.0)
    c21 = s.contrast_curves(HAAR, 0, 1, baseline=0)
    assert c21.shape == (40, 8)
    assert np.any(c21 != 0.0)
    lo, hi = credible_bands(s, HAAR, ("contrast", 0, 1), level=0.9)
    assert np.all(lo <= hi)


def test_band_argument_validation():
    g = fitted_grove(T=8, L=0, seed=29)
    s = sample_posterior(g, 10, seed=10)
    with pytest.raises(ValueError):
        credible_bands(s, HAAR, "signal", level=1.0)
    with pytest.raises(ValueError):
        credible_bands(s, HAAR, "nonsense")


def test_draw_view_consistency():
    g = fitted_grove(T=8, L=1, seed=30)
    s = sample_posterior(g, 5, seed=11)
    d = s[2]
    node = NodeIndex(1, 1)
    assert d.state(node) == int(s.states[1][2, 1])
    assert d.sigma_sq(node) == float(s.sigma_sq[1][2, 1])
    np.testing.assert_array_equal(d.coeff(node), s.coeffs[1][2, 1])
    tree = d.z_tree()
    assert tree.father == float(s.father_coeffs[2, 0])
    np.testing.assert_array_equal(tree.levels[2], s.coeffs[2][2, :, 0])
