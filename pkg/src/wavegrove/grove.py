"""Exact posterior over Markov-grove wavelet models via two pyramid sweeps.

The joint indicator state of a node collects the signal bit s and one effect
bit per factor; prior transitions factorize across chains, so the joint chain
is the Kronecker product of 2x2 chains.  One upward sweep (leaves to root)
computes the evidence and the posterior transition tables in closed form; a
downward sweep yields marginal activation probabilities; a second upward
recursion with the effect bit pinned to zero yields the joint activation
probability of each factor; ancestral sampling with the conjugate normal /
inverse-Gamma conditionals yields exact posterior draws.  No MCMC anywhere.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .nodemodel import (
    FactorDesign,
    HyperParams,
    LevelTables,
    NumericalError,
    joint_root_probs,
    joint_states,
    joint_transition,
    level_tables,
    marginal_mt,
)
from .wavelet import CoefficientStack, CoefficientTree, NodeIndex, WaveletFilter

__all__ = [
    "PosteriorGrove",
    "PosteriorSample",
    "PosteriorDraw",
    "OracleResult",
    "upward_pass",
    "pyramid_from_marginals",
    "downward_marginals",
    "pjap",
    "sample_posterior",
    "posterior_mean_z",
    "posterior_mean_coefficients",
    "posterior_mean_curve",
    "credible_bands",
    "brute_force_oracle",
]


# ---------------------------------------------------------------------------
# upward sweep


@dataclass
class PosteriorGrove:
    """Exact posterior state of the model after the upward sweep."""

    hp: HyperParams
    design: FactorDesign
    data: CoefficientStack
    tables: list[LevelTables]
    father_table: LevelTables
    log_trans: list[np.ndarray]  # [j] = (C, C) log prior transition into level j
    root_log_prior: np.ndarray
    log_phi: list[np.ndarray]
    log_xi: list[np.ndarray]
    post_trans: list[Optional[np.ndarray]]  # [j] = (K_j, C, C), None at j=0
    root_dist: np.ndarray
    father_dist: np.ndarray
    log_evidence: float
    log_evidence_father: float
    _marginals: Optional[list[np.ndarray]] = field(default=None, repr=False)

    @property
    def J(self) -> int:
        return self.data.J

    @property
    def L(self) -> int:
        return self.design.L

    @property
    def n_states(self) -> int:
        return 2 ** (self.L + 1)

    def marginals(self) -> list[np.ndarray]:
        if self._marginals is None:
            self._marginals = downward_marginals(self)
        return self._marginals

    def _bit_mask(self, bit: int) -> np.ndarray:
        return (np.arange(self.n_states) >> bit) & 1 == 1

    def pmap_signal(self) -> list[np.ndarray]:
        """P(S_{j,k} = 1 | data) per level."""
        on = self._bit_mask(self.L)
        # clip: accumulated rounding can push a marginal sum an ulp past 1
        return [np.clip(m[:, on].sum(axis=1), 0.0, 1.0) for m in self.marginals()]

    def pmap(self, factor: int) -> list[np.ndarray]:
        """P(R_{j,k} = 1 | data) for one factor (0-based), per level."""
        self._check_factor(factor)
        on = self._bit_mask(self.L - 1 - factor)
        return [np.clip(m[:, on].sum(axis=1), 0.0, 1.0) for m in self.marginals()]

    def pmap_table(self, factor: int) -> dict[NodeIndex, float]:
        """PMAPs keyed by node, the shape the decision rules consume."""
        levels = self.pmap(factor)
        return {
            NodeIndex(j, k): float(levels[j][k])
            for j in range(len(levels))
            for k in range(levels[j].shape[0])
        }

    def pjap(self, factor: int) -> float:
        return pjap(self, factor)

    def _check_factor(self, factor: int) -> None:
        if not 0 <= factor < self.L:
            raise ValueError(f"factor index {factor} out of range [0, {self.L})")


def _log(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(p)


def pyramid_from_marginals(
    log_m: list[np.ndarray],
    log_trans: list[np.ndarray],
    root_log_prior: np.ndarray,
):
    """Upward recursion from per-node log marginals.

    Returns (log_phi, log_xi, post_trans, root_dist, log_evidence).  Level j
    of log_m has shape (2**j, C); log_trans[j] is the (C, C) log transition
    into level j (entry [0] unused); root_log_prior has shape (C,).
    """
    J = len(log_m) - 1
    log_phi: list[np.ndarray] = [None] * (J + 1)
    log_xi: list[np.ndarray] = [None] * (J + 1)
    post_trans: list[Optional[np.ndarray]] = [None] * (J + 1)

    log_phi[J] = log_m[J]
    for j in range(J, 0, -1):
        # xi_{j,k}(c) = sum_c' trans[c, c'] phi_{j,k}(c')
        stacked = log_trans[j][None, :, :] + log_phi[j][:, None, :]
        log_xi[j] = logsumexp(stacked, axis=2)
        post_trans[j] = np.exp(stacked - log_xi[j][:, :, None])
        if j > 0:
            K = log_xi[j].shape[0] // 2
            kids = log_xi[j].reshape(K, 2, -1).sum(axis=1)
            log_phi[j - 1] = log_m[j - 1] + kids

    root_terms = root_log_prior + log_phi[0][0]
    log_evidence = float(logsumexp(root_terms))
    root_dist = np.exp(root_terms - log_evidence)
    log_xi[0] = np.full_like(log_phi[0], log_evidence)
    return log_phi, log_xi, post_trans, root_dist, log_evidence


def _mt_level_tables(D: np.ndarray, j: int, hp: HyperParams) -> LevelTables:
    """Closed-form single-tree tables (no linear algebra)."""
    n, K = D.shape
    dbar = D.mean(axis=0)
    sumsq = np.einsum("ik,ik->k", D, D)
    inv_tau = 2.0 ** (hp.alpha * j) / hp.tau
    shrink = (n * dbar) ** 2 / (n + inv_tau)
    a = hp.nu * hp.sigma0_sq
    log_m = np.stack(
        [
            marginal_mt(dbar, sumsq, n, 0, j, hp),
            marginal_mt(dbar, sumsq, n, 1, j, hp),
        ],
        axis=1,
    ).reshape(K, 2)
    ig_rate = np.stack(
        [a + 0.5 * sumsq, a + 0.5 * np.maximum(sumsq - shrink, 0.0)], axis=1
    )
    mu = np.zeros((2, K, 1))
    mu[1, :, 0] = n * dbar / (n + inv_tau)
    chol = [None, np.array([[np.sqrt(n + inv_tau)]])]
    active = [np.empty(0, dtype=int), np.array([0])]
    return LevelTables(log_m, ig_rate, mu, chol, active, hp.nu + n / 2.0 + 1.0)


def upward_pass(
    data: CoefficientStack,
    design: FactorDesign,
    hp: HyperParams,
    method: str = "grove",
) -> PosteriorGrove:
    """Leaves-to-root sweep: evidence plus posterior transition tables.

    method="grove" evaluates node marginals through the general masked-design
    linear algebra; method="tree" uses the closed-form single-tree expressions
    and is only valid when the design has no factors.  The two must agree to
    near machine precision when L = 0.
    """
    if data.n != design.n:
        raise ValueError("data and design disagree on the number of curves")
    if hp.L != design.L:
        raise ValueError("hyperparameters and design disagree on factor count")
    if method not in ("grove", "tree"):
        raise ValueError(f"unknown method {method!r}")
    if method == "tree" and design.L != 0:
        raise ValueError('method="tree" requires a design without factors')

    J = data.J
    if method == "tree":
        tables = [_mt_level_tables(data.levels[j], j, hp) for j in range(J + 1)]
        father_table = _mt_level_tables(data.father[:, None], 0, hp)
    else:
        tables = [level_tables(data.levels[j], design, j, hp) for j in range(J + 1)]
        father_table = level_tables(data.father[:, None], design, 0, hp)

    log_trans = [_log(joint_transition(j, hp)) for j in range(J + 1)]
    root_log_prior = _log(joint_root_probs(hp))

    log_phi, log_xi, post_trans, root_dist, log_ev = pyramid_from_marginals(
        [t.log_m for t in tables], log_trans, root_log_prior
    )

    father_terms = root_log_prior + father_table.log_m[0]
    log_ev_father = float(logsumexp(father_terms))
    father_dist = np.exp(father_terms - log_ev_father)

    if not (np.isfinite(log_ev) and np.isfinite(log_ev_father)):
        raise NumericalError(
            "evidence is not finite; hyperparameters are numerically out of range"
        )

    return PosteriorGrove(
        hp=hp,
        design=design,
        data=data,
        tables=tables,
        father_table=father_table,
        log_trans=log_trans,
        root_log_prior=root_log_prior,
        log_phi=log_phi,
        log_xi=log_xi,
        post_trans=post_trans,
        root_dist=root_dist,
        father_dist=father_dist,
        log_evidence=log_ev,
        log_evidence_father=log_ev_father,
    )


# ---------------------------------------------------------------------------
# downward sweep and joint activation


def downward_marginals(g: PosteriorGrove) -> list[np.ndarray]:
    """Root-to-leaves sweep: marg[j][k, c] = P(state of (j,k) = c | data)."""
    marg: list[np.ndarray] = [g.root_dist[None, :]]
    for j in range(1, g.J + 1):
        K = g.post_trans[j].shape[0]
        par = marg[j - 1][np.arange(K) // 2]  # (K, C)
        marg.append(np.einsum("kc,kcd->kd", par, g.post_trans[j]))
    return marg


def _pjap_core(post_trans, root_dist, J: int, L: int, factor: int) -> float:
    """Joint activation probability of one factor from posterior transitions."""
    bit = L - 1 - factor
    C = root_dist.shape[0]
    null_states = np.flatnonzero((np.arange(C) >> bit) & 1 == 0)

    if J == 0:
        pjnp = float(root_dist[null_states].sum())
        return min(max(1.0 - pjnp, 0.0), 1.0)

    psi = None
    for j in range(J, 0, -1):
        q = post_trans[j][:, null_states[:, None], null_states[None, :]]
        if psi is None:
            psi = q.sum(axis=2)  # leaves: (K_J, C/2)
        else:
            prod = psi[0::2] * psi[1::2]  # (K_j, C/2)
            psi = np.einsum("kuv,kv->ku", q, prod)
    pjnp = float(root_dist[null_states] @ (psi[0] * psi[1]))
    return min(max(1.0 - pjnp, 0.0), 1.0)


def pjap(g: PosteriorGrove, factor: int) -> float:
    """P(factor has an effect somewhere | data) = 1 - P(all R_l = 0 | data).

    Computed by an upward recursion over the posterior Markov tree with the
    factor's bit pinned to zero in both parent and child states.
    """
    g._check_factor(factor)
    return _pjap_core(g.post_trans, g.root_dist, g.J, g.L, factor)


# ---------------------------------------------------------------------------
# posterior means


def posterior_mean_coefficients(g: PosteriorGrove):
    """E[theta | data] per node: (levels list of (K_j, p), father (p,))."""
    means = []
    for j, m in enumerate(g.marginals()):
        means.append(np.einsum("kc,ckp->kp", m, g.tables[j].mu))
    father = np.einsum("c,cp->p", g.father_dist, g.father_table.mu[:, 0, :])
    return means, father


def posterior_mean_z(g: PosteriorGrove) -> CoefficientTree:
    """Posterior mean of the signal coefficients as a coefficient tree.

    Each mother shrinks to P(S=1 | data) * n dbar / (n + tau_j^{-1}); the
    father field holds the father coefficient's posterior mean.
    """
    means, father = posterior_mean_coefficients(g)
    return CoefficientTree(float(father[0]), [m[:, 0].copy() for m in means])


def posterior_mean_curve(
    g: PosteriorGrove, filt: WaveletFilter, include_father: bool = True
) -> np.ndarray:
    """E[f | data]: inverse transform of the posterior-mean coefficients."""
    from .wavelet import inverse_dwt

    tree = posterior_mean_z(g)
    if not include_father:
        tree.father = 0.0
    return inverse_dwt(tree, filt)


# ---------------------------------------------------------------------------
# exact posterior sampling


@dataclass
class PosteriorDraw:
    """One joint posterior draw (a view into a PosteriorSample)."""

    sample: "PosteriorSample"
    i: int

    def state(self, node: NodeIndex) -> int:
        return int(self.sample.states[node.j][self.i, node.k])

    def sigma_sq(self, node: NodeIndex) -> float:
        return float(self.sample.sigma_sq[node.j][self.i, node.k])

    def coeff(self, node: NodeIndex) -> np.ndarray:
        return self.sample.coeffs[node.j][self.i, node.k]

    @property
    def father_state(self) -> int:
        return int(self.sample.father_state[self.i])

    @property
    def father_coeff(self) -> np.ndarray:
        return self.sample.father_coeffs[self.i]

    def z_tree(self) -> CoefficientTree:
        return CoefficientTree(
            float(self.father_coeff[0]),
            [lev[self.i, :, 0].copy() for lev in self.sample.coeffs],
        )


@dataclass
class PosteriorSample:
    """n_draws exact joint posterior draws, stored level-major.

    states[j] is (n_draws, 2**j) joint state codes; coeffs[j] is
    (n_draws, 2**j, p) with column 0 the signal coefficient z and the
    remaining columns the factor effect blocks in design order.
    """

    design: FactorDesign
    hp: HyperParams
    states: list[np.ndarray]
    sigma_sq: list[np.ndarray]
    coeffs: list[np.ndarray]
    father_state: np.ndarray
    father_sigma_sq: np.ndarray
    father_coeffs: np.ndarray

    def __len__(self) -> int:
        return self.father_state.shape[0]

    def __getitem__(self, i: int) -> PosteriorDraw:
        return PosteriorDraw(self, int(i))

    @property
    def J(self) -> int:
        return len(self.states) - 1

    def signal_curves(
        self, filt: WaveletFilter, include_father: bool = True
    ) -> np.ndarray:
        """(n_draws, T) draws of the baseline curve f."""
        z = [lev[:, :, 0] for lev in self.coeffs]
        father = self.father_coeffs[:, 0] if include_father else None
        return _curves_from(z, father, filt, len(self))

    def contrast_curves(
        self,
        filt: WaveletFilter,
        factor: int,
        group: int,
        baseline: int = 0,
        include_father: bool = True,
    ) -> np.ndarray:
        """(n_draws, T) draws of the contrast between two groups of a factor.

        Group indices are 0-based with 0 the design baseline; the contrast is
        mean(group) - mean(baseline).
        """
        cols = self._effect_columns(factor)
        diff_levels = []
        for lev in self.coeffs:
            a = self._group_effect(lev, cols, group)
            b = self._group_effect(lev, cols, baseline)
            diff_levels.append(a - b)
        father = None
        if include_father:
            father = self._group_effect(
                self.father_coeffs[:, None, :], cols, group
            )[:, 0] - self._group_effect(
                self.father_coeffs[:, None, :], cols, baseline
            )[:, 0]
        return _curves_from(diff_levels, father, filt, len(self))

    def _effect_columns(self, factor: int) -> np.ndarray:
        if not 0 <= factor < self.design.L:
            raise ValueError(f"factor index {factor} out of range")
        return self.design.column_blocks()[factor]

    @staticmethod
    def _group_effect(lev: np.ndarray, cols: np.ndarray, group: int) -> np.ndarray:
        # group 0 is the baseline with effect identically zero
        if group == 0:
            return np.zeros(lev.shape[:2])
        return lev[:, :, cols[group - 1]]


def _curves_from(levels, father, filt, n_draws):
    stack = CoefficientStack(
        father if father is not None else np.zeros(n_draws),
        [np.ascontiguousarray(lev) for lev in levels],
    )
    return stack.to_signals(filt)


def _sample_rows(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-cdf lookup along the last axis; u broadcasts against cdf[..., 0]."""
    return np.minimum(
        (u[..., None] > cdf).sum(axis=-1), cdf.shape[-1] - 1
    ).astype(np.int8)


def sample_posterior(g: PosteriorGrove, n_draws: int, seed: int = 0) -> PosteriorSample:
    """Ancestral sampling of (states, sigma^2, coefficients), exactly.

    Reproducible: one generator derived from SeedSequence(seed) drives the
    whole batch in a fixed order.
    """
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    M = n_draws
    C = g.n_states
    p = g.design.p

    # --- states, top-down
    states: list[np.ndarray] = []
    root_cdf = np.cumsum(g.root_dist)
    states.append(_sample_rows(root_cdf[None, :], rng.random((M, 1))))
    for j in range(1, g.J + 1):
        K = g.post_trans[j].shape[0]
        cdf = np.cumsum(g.post_trans[j], axis=2)  # (K, C, C)
        out = np.empty((M, K), dtype=np.int8)
        step = max(1, int(2e7 / (K * C + 1)))
        for lo in range(0, M, step):
            hi = min(lo + step, M)
            par = states[j - 1][lo:hi, np.arange(K) // 2]  # (m, K)
            rowcdf = cdf[np.arange(K)[None, :], par, :]  # (m, K, C)
            out[lo:hi] = _sample_rows(rowcdf, rng.random((hi - lo, K)))
        states.append(out)
    father_state = _sample_rows(
        np.cumsum(g.father_dist)[None, :], rng.random((M, 1))
    )[:, 0]

    # --- sigma^2 and coefficients, level by level then state by state
    sigma_sq: list[np.ndarray] = []
    coeffs: list[np.ndarray] = []
    for j in range(g.J + 1):
        tab = g.tables[j]
        K = states[j].shape[1]
        rate = tab.ig_rate[np.arange(K)[None, :], states[j]]  # (M, K)
        sig = rate / rng.gamma(tab.ig_shape, 1.0, size=(M, K))
        theta = np.zeros((M, K, p))
        _fill_coefficients(theta, states[j], sig, tab, rng)
        sigma_sq.append(sig)
        coeffs.append(theta)

    frate = g.father_table.ig_rate[0, father_state]
    fsig = frate / rng.gamma(g.father_table.ig_shape, 1.0, size=M)
    ftheta = np.zeros((M, 1, p))
    _fill_coefficients(
        ftheta, father_state[:, None], fsig[:, None], g.father_table, rng
    )

    return PosteriorSample(
        design=g.design,
        hp=g.hp,
        states=states,
        sigma_sq=sigma_sq,
        coeffs=coeffs,
        father_state=father_state,
        father_sigma_sq=fsig,
        father_coeffs=ftheta[:, 0, :],
    )


def _fill_coefficients(theta, codes, sig, tab: LevelTables, rng) -> None:
    """Draw theta ~ N(mu, sigma^2 * prec_active^{-1}) grouped by state."""
    C = tab.log_m.shape[1]
    for c in range(C):
        A = tab.active[c]
        if A.size == 0:
            continue
        m_idx, k_idx = np.nonzero(codes == c)
        if m_idx.size == 0:
            continue
        zeta = rng.standard_normal((A.size, m_idx.size))
        delta = solve_triangular(tab.chol[c], zeta, lower=True, trans="T").T
        vals = tab.mu[c][k_idx][:, A]
        vals = vals + np.sqrt(sig[m_idx, k_idx])[:, None] * delta
        theta[m_idx[:, None], k_idx[:, None], A[None, :]] = vals


# ---------------------------------------------------------------------------
# credible bands


def credible_bands(
    sample: PosteriorSample,
    filt: WaveletFilter,
    target: str | tuple = "signal",
    level: float = 0.95,
    include_father: bool = True,
):
    """Pointwise equal-tail credible band from posterior draws.

    target is either "signal" (the baseline curve f) or a tuple
    ("contrast", factor, group[, baseline]) for a factor-effect contrast.
    Returns (lower, upper) arrays over the T time points.
    """
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    if target == "signal":
        curves = sample.signal_curves(filt, include_father=include_father)
    elif isinstance(target, tuple) and target and target[0] == "contrast":
        _, factor, group, *rest = target
        baseline = rest[0] if rest else 0
        curves = sample.contrast_curves(
            filt, factor, group, baseline=baseline, include_father=include_father
        )
    else:
        raise ValueError(f"unknown band target {target!r}")
    half = (1.0 - level) / 2.0
    lower = np.quantile(curves, half, axis=0)
    upper = np.quantile(curves, 1.0 - half, axis=0)
    return lower, upper


# ---------------------------------------------------------------------------
# brute-force reference (small trees only)


@dataclass
class OracleResult:
    log_evidence: float
    pmap_signal: list[np.ndarray]
    pmap: list[list[np.ndarray]]  # [factor][level]
    pjap: tuple[float, ...]
    node_state_dist: list[np.ndarray]


def brute_force_oracle(
    data: CoefficientStack,
    design: FactorDesign,
    hp: HyperParams,
    max_configs: int = 30_000_000,
) -> OracleResult:
    """Exact posterior summaries by explicit enumeration of all state
    configurations.  Exponential cost; guarded to small trees."""
    J = data.J
    L = design.L
    C = 2 ** (L + 1)
    n_nodes = 2 ** (J + 1) - 1
    n_cfg = C**n_nodes
    if n_cfg > max_configs:
        raise ValueError(
            f"enumeration would need {n_cfg} configurations (> {max_configs})"
        )

    tables = [level_tables(data.levels[j], design, j, hp) for j in range(J + 1)]
    log_trans = [_log(joint_transition(j, hp)) for j in range(J + 1)]
    root_log_prior = _log(joint_root_probs(hp))

    # node order: level-major top-down; node (j, k) sits at offset 2^j - 1 + k
    offsets = [2**j - 1 for j in range(J + 1)]
    codes = np.arange(n_cfg)
    node_states = np.empty((n_cfg, n_nodes), dtype=np.int8)
    for i in range(n_nodes):
        node_states[:, i] = (codes // C ** (n_nodes - 1 - i)) % C

    log_w = root_log_prior[node_states[:, 0]].astype(float)
    for j in range(1, J + 1):
        for k in range(2**j):
            child = offsets[j] + k
            par = offsets[j - 1] + k // 2
            log_w += log_trans[j][node_states[:, par], node_states[:, child]]
    for j in range(J + 1):
        for k in range(2**j):
            log_w += tables[j].log_m[k, node_states[:, offsets[j] + k]]

    log_evidence = float(logsumexp(log_w))
    w = np.exp(log_w - log_evidence)

    node_state_dist = []
    for j in range(J + 1):
        dist = np.empty((2**j, C))
        for k in range(2**j):
            col = node_states[:, offsets[j] + k]
            dist[k] = np.bincount(col, weights=w, minlength=C)
        node_state_dist.append(dist)

    s_on = (np.arange(C) >> L) & 1 == 1
    pmap_signal = [d[:, s_on].sum(axis=1) for d in node_state_dist]
    pmap = []
    pjaps = []
    for f in range(L):
        on = (np.arange(C) >> (L - 1 - f)) & 1 == 1
        pmap.append([d[:, on].sum(axis=1) for d in node_state_dist])
        all_null = np.ones(n_cfg, dtype=bool)
        for i in range(n_nodes):
            all_null &= ~on[node_states[:, i]]
        pjaps.append(1.0 - float(w[all_null].sum()))

    return OracleResult(log_evidence, pmap_signal, pmap, tuple(pjaps), node_state_dist)
