"""Node-level conjugate model: spike-and-slab normal-inverse-Gamma marginals.

Each tree node (j, k) carries an n-vector d of wavelet coefficients (one entry
per observed curve) modeled as d = X(s, r) theta + u with u ~ N(0, sigma^2 I),
where the design columns are switched on and off by binary indicators: s for
the overall signal coefficient z and r_l for the effect block of factor l.
Active coefficients get zero-mean normal slabs whose variances scale with
sigma^2 and decay geometrically in the level j; sigma^2 itself is
inverse-Gamma.  Everything integrates in closed form, which is what the
functions here evaluate (in log space).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.special import gammaln

__all__ = [
    "NumericalError",
    "HyperParams",
    "FactorDesign",
    "NigConditional",
    "transition_matrix",
    "root_probs",
    "joint_states",
    "joint_transition",
    "joint_root_probs",
    "marginal_mt",
    "marginal_mg",
    "nig_conditional",
    "LevelTables",
    "level_tables",
]

_LOG_2PI = float(np.log(2.0 * np.pi))

# relative slack allowed before a negative residual quadratic form is treated
# as a genuine numerical failure rather than harmless cancellation noise
_RESIDUAL_RTOL = 1e-8


class NumericalError(RuntimeError):
    """A linear-algebra or stability invariant failed irrecoverably."""


@dataclass(frozen=True)
class HyperParams:
    """Model hyperparameters.

    upsilon holds one slab scale per tested factor (empty for plain
    denoising); eta/gamma pairs parameterize the signal tree (rho) and the
    factor trees (kappa, shared across factors).
    """

    tau: float
    sigma0_sq: float
    nu: float
    alpha: float = 0.5
    upsilon: tuple[float, ...] = ()
    eta_rho: float = 0.5
    gamma_rho: float = 0.8
    eta_kappa: float = 0.3
    gamma_kappa: float = 0.4

    def __post_init__(self):
        object.__setattr__(self, "upsilon", tuple(float(u) for u in self.upsilon))
        pos = {
            "tau": self.tau,
            "sigma0_sq": self.sigma0_sq,
            "nu": self.nu,
            "eta_rho": self.eta_rho,
            "eta_kappa": self.eta_kappa,
        }
        for name, v in pos.items():
            if not np.isfinite(v) or v <= 0.0:
                raise ValueError(f"{name} must be positive and finite, got {v}")
        if not np.isfinite(self.alpha) or self.alpha < 0.0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        for u in self.upsilon:
            if not np.isfinite(u) or u <= 0.0:
                raise ValueError(f"upsilon entries must be positive, got {u}")
        for name, g in (("gamma_rho", self.gamma_rho), ("gamma_kappa", self.gamma_kappa)):
            if not 0.0 < g < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {g}")

    @property
    def L(self) -> int:
        return len(self.upsilon)

    def tau_at(self, j: int) -> float:
        """Slab scale of the signal coefficient at level j: 2**(-alpha j) tau."""
        return 2.0 ** (-self.alpha * j) * self.tau

    def upsilon_at(self, l: int, j: int) -> float:
        """Slab scale of factor l's effect coefficients at level j."""
        return 2.0 ** (-self.alpha * j) * self.upsilon[l]

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "sigma0_sq": self.sigma0_sq,
            "nu": self.nu,
            "alpha": self.alpha,
            "upsilon": list(self.upsilon),
            "eta_rho": self.eta_rho,
            "gamma_rho": self.gamma_rho,
            "eta_kappa": self.eta_kappa,
            "gamma_kappa": self.gamma_kappa,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        d = dict(d)
        d["upsilon"] = tuple(d.get("upsilon", ()))
        return cls(**d)


@dataclass(frozen=True)
class FactorDesign:
    """Group labels of the n observed curves for L crossed one-way factors.

    codes[i, l] is the 0-based group of observation i under factor l; group 0
    is the baseline.  The implied regression design is an intercept column
    (the shared signal z) followed, per factor, by G_l - 1 indicator columns
    for its non-baseline groups.
    """

    codes: np.ndarray  # (n, L) int
    levels: tuple[int, ...]
    factor_names: tuple[str, ...] = ()
    level_names: tuple[tuple[str, ...], ...] = ()

    def __post_init__(self):
        codes = np.asarray(self.codes, dtype=int)
        if codes.ndim != 2:
            raise ValueError("codes must be 2-d (n, L)")
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "levels", tuple(int(g) for g in self.levels))
        if codes.shape[1] != len(self.levels):
            raise ValueError("levels must list one group count per factor")
        if codes.shape[0] < 1:
            raise ValueError("need at least one observation")
        for l, G in enumerate(self.levels):
            if G < 1:
                raise ValueError("each factor needs at least one group")
            col = codes[:, l]
            if col.min(initial=0) < 0 or col.max(initial=0) >= G:
                raise ValueError(f"factor {l} codes out of range [0, {G})")
        if not self.factor_names:
            object.__setattr__(
                self,
                "factor_names",
                tuple(f"factor_{l + 1}" for l in range(len(self.levels))),
            )
        if not self.level_names:
            object.__setattr__(
                self,
                "level_names",
                tuple(tuple(str(g + 1) for g in range(G)) for G in self.levels),
            )

    @property
    def n(self) -> int:
        return self.codes.shape[0]

    @property
    def L(self) -> int:
        return self.codes.shape[1]

    @property
    def p(self) -> int:
        return 1 + sum(G - 1 for G in self.levels)

    @classmethod
    def single_group(cls, n: int) -> "FactorDesign":
        """Design with no tested factors (plain denoising of n replicates)."""
        return cls(np.empty((n, 0), dtype=int), ())

    @classmethod
    def from_labels(
        cls, columns: Sequence[Sequence], factor_names: Sequence[str] = ()
    ) -> "FactorDesign":
        """Build a design from raw label columns (one sequence per factor).

        Labels are mapped to 0-based codes in sorted order, so the baseline
        group of each factor is its smallest label.
        """
        columns = [list(col) for col in columns]
        if columns:
            n = len(columns[0])
            if any(len(col) != n for col in columns):
                raise ValueError("label columns must share a length")
        cols, levels, level_names = [], [], []
        for col in columns:
            uniq = sorted(set(col))
            lut = {lab: g for g, lab in enumerate(uniq)}
            cols.append([lut[lab] for lab in col])
            levels.append(len(uniq))
            level_names.append(tuple(str(u) for u in uniq))
        codes = (
            np.array(cols, dtype=int).T
            if cols
            else np.empty((0, 0), dtype=int)
        )
        return cls(
            codes,
            tuple(levels),
            tuple(factor_names) if factor_names else (),
            tuple(level_names),
        )

    def design_matrix(self) -> np.ndarray:
        """(n, p) matrix: intercept column then per-factor group indicators."""
        X = np.zeros((self.n, self.p))
        X[:, 0] = 1.0
        col = 1
        for l, G in enumerate(self.levels):
            for g in range(1, G):
                X[:, col] = self.codes[:, l] == g
                col += 1
        return X

    def column_blocks(self) -> list[np.ndarray]:
        """Column indices of each factor's effect block in the design matrix."""
        blocks, col = [], 1
        for G in self.levels:
            blocks.append(np.arange(col, col + G - 1))
            col += G - 1
        return blocks

    def prior_scale_diag(self, hp: HyperParams, j: int) -> np.ndarray:
        """Prior precision diagonal (in units of 1/sigma^2) at level j."""
        if hp.L != self.L:
            raise ValueError("hyperparameters and design disagree on factor count")
        lam = [1.0 / hp.tau_at(j)]
        for l, G in enumerate(self.levels):
            lam.extend([1.0 / hp.upsilon_at(l, j)] * (G - 1))
        return np.array(lam)


def transition_matrix(j: int, eta: float, gamma: float) -> np.ndarray:
    """Row-stochastic 2x2 state transition into level j.

    Row 0 (parent inactive): de novo activation with probability
    min(eta 2^-j, 1); row 1 (parent active): persistence gamma.
    """
    if eta <= 0.0:
        raise ValueError("eta must be positive")
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    de_novo = min(eta * 2.0 ** (-j), 1.0)
    return np.array([[1.0 - de_novo, de_novo], [1.0 - gamma, gamma]])


def root_probs(eta: float) -> np.ndarray:
    """Initial state distribution at the root: substitute j=0."""
    p1 = min(eta, 1.0)
    return np.array([1.0 - p1, p1])


def joint_states(L: int) -> np.ndarray:
    """(2^(L+1), L+1) bit table in lexicographic order (s, r_1, ..., r_L)."""
    C = 2 ** (L + 1)
    c = np.arange(C)
    return np.stack([(c >> (L - b)) & 1 for b in range(L + 1)], axis=1)


def joint_transition(j: int, hp: HyperParams) -> np.ndarray:
    """Joint transition over (s, r_1..r_L): independent chains, Kronecker."""
    M = transition_matrix(j, hp.eta_rho, hp.gamma_rho)
    kap = transition_matrix(j, hp.eta_kappa, hp.gamma_kappa)
    for _ in range(hp.L):
        M = np.kron(M, kap)
    return M


def joint_root_probs(hp: HyperParams) -> np.ndarray:
    v = root_probs(hp.eta_rho)
    kap = root_probs(hp.eta_kappa)
    for _ in range(hp.L):
        v = np.kron(v, kap)
    return v


def _log_norm_const(n: int, hp: HyperParams) -> float:
    a = hp.nu * hp.sigma0_sq
    return (
        (hp.nu + 1.0) * np.log(a)
        + gammaln(hp.nu + n / 2.0 + 1.0)
        - gammaln(hp.nu + 1.0)
        - (n / 2.0) * _LOG_2PI
    )


def marginal_mt(dbar, sumsq, n: int, s, j, hp: HyperParams):
    """Log marginal likelihood of one node in the single-tree model.

    dbar and sumsq are the node's coefficient mean and sum of squares over the
    n observations; s is the inclusion state.  Broadcasts over array inputs.
    """
    dbar = np.asarray(dbar, dtype=float)
    sumsq = np.asarray(sumsq, dtype=float)
    s = np.asarray(s)
    j = np.asarray(j)
    inv_tau = 2.0 ** (hp.alpha * j) / hp.tau
    shrink = (n * dbar) ** 2 / (n + inv_tau)
    resid = sumsq - s * shrink
    resid = _clamp_residual(resid, sumsq)
    a = hp.nu * hp.sigma0_sq
    out = (
        _log_norm_const(n, hp)
        + 0.5 * s * (np.log(inv_tau) - np.log(n + inv_tau))
        - (hp.nu + n / 2.0 + 1.0) * np.log(a + 0.5 * resid)
    )
    return out if out.ndim else float(out)


def _clamp_residual(resid, total):
    """Clamp tiny negative residual quadratic forms caused by cancellation."""
    resid = np.asarray(resid, dtype=float)
    bad = resid < -_RESIDUAL_RTOL * np.maximum(np.asarray(total, dtype=float), 1.0)
    if np.any(bad):
        raise NumericalError("residual quadratic form went negative")
    return np.maximum(resid, 0.0)


@dataclass
class NigConditional:
    """Posterior conditional of one node given its indicator state.

    sigma^2 ~ InvGamma(ig_shape, ig_rate); active coefficients are normal with
    the given mean and covariance sigma^2 * (mask ∘ precision^{-1}) — the mask
    zeroes rows/columns of switched-off coefficients, which are point masses
    at zero.
    """

    ig_shape: float
    ig_rate: float
    mean: np.ndarray
    precision: np.ndarray
    mask: np.ndarray


@dataclass
class LevelTables:
    """Vectorized per-level node statistics for all joint states.

    log_m[k, c] is the log marginal of node k in state c; ig_rate likewise.
    mu[c, k, :] is the full-length posterior mean vector (zeros on inactive
    coordinates).  chol[c] is the Cholesky factor of the active block of the
    posterior precision, active[c] its column indices.
    """

    log_m: np.ndarray
    ig_rate: np.ndarray
    mu: np.ndarray
    chol: list
    active: list
    ig_shape: float


def _active_columns(bits: np.ndarray, blocks: list[np.ndarray]) -> np.ndarray:
    cols = [np.array([0])] if bits[0] else []
    for l, blk in enumerate(blocks):
        if bits[l + 1]:
            cols.append(blk)
    return np.concatenate(cols) if cols else np.empty(0, dtype=int)


def level_tables(D: np.ndarray, design: FactorDesign, j: int, hp: HyperParams) -> LevelTables:
    """Marginal likelihoods and conditional parameters for one level.

    D has shape (n, K): K node coefficient vectors observed over n curves.
    """
    n, K = D.shape
    X = design.design_matrix()
    lam = design.prior_scale_diag(hp, j)
    states = joint_states(design.L)
    C = states.shape[0]
    blocks = design.column_blocks()
    a = hp.nu * hp.sigma0_sq
    const = _log_norm_const(n, hp)
    dd = np.einsum("ik,ik->k", D, D)

    log_m = np.empty((K, C))
    ig_rate = np.empty((K, C))
    mu = np.zeros((C, K, design.p))
    chols: list = [None] * C
    actives: list = [None] * C
    for c in range(C):
        A = _active_columns(states[c], blocks)
        actives[c] = A
        if A.size == 0:
            resid = dd
            half_logdet_ratio = 0.0
        else:
            XA = X[:, A]
            prec = XA.T @ XA + np.diag(lam[A])
            try:
                Lc = cholesky(prec, lower=True)
            except np.linalg.LinAlgError as e:  # pragma: no cover
                raise NumericalError(f"posterior precision not SPD: {e}") from e
            chols[c] = Lc
            half_logdet_ratio = 0.5 * (
                np.sum(np.log(lam[A])) - 2.0 * np.sum(np.log(np.diag(Lc)))
            )
            B = XA.T @ D  # (|A|, K)
            W = solve_triangular(Lc, B, lower=True)
            resid = dd - np.einsum("ik,ik->k", W, W)
            mu[c][:, A] = cho_solve((Lc, True), B).T
        resid = _clamp_residual(resid, dd)
        ig_rate[:, c] = a + 0.5 * resid
        log_m[:, c] = (
            const + half_logdet_ratio - (hp.nu + n / 2.0 + 1.0) * np.log(ig_rate[:, c])
        )
    return LevelTables(log_m, ig_rate, mu, chols, actives, hp.nu + n / 2.0 + 1.0)


def _state_index(s: int, r: Sequence[int], L: int) -> int:
    bits = [int(s)] + [int(b) for b in r]
    if len(bits) != L + 1:
        raise ValueError(f"state needs {L} factor bits, got {len(bits) - 1}")
    idx = 0
    for b in bits:
        if b not in (0, 1):
            raise ValueError("state bits must be 0 or 1")
        idx = 2 * idx + b
    return idx


def marginal_mg(
    d: np.ndarray, design: FactorDesign, s: int, r: Sequence[int], j: int, hp: HyperParams
) -> float:
    """Log marginal likelihood of one node in the multi-factor model."""
    d = np.asarray(d, dtype=float)
    if d.shape != (design.n,):
        raise ValueError("d must be an n-vector matching the design")
    tabs = level_tables(d[:, None], design, j, hp)
    return float(tabs.log_m[0, _state_index(s, r, design.L)])


def nig_conditional(
    d: np.ndarray, design: FactorDesign, s: int, r: Sequence[int], j: int, hp: HyperParams
) -> NigConditional:
    """Exact posterior conditional of one node given its indicator state."""
    d = np.asarray(d, dtype=float)
    if d.shape != (design.n,):
        raise ValueError("d must be an n-vector matching the design")
    tabs = level_tables(d[:, None], design, j, hp)
    c = _state_index(s, r, design.L)
    lam = design.prior_scale_diag(hp, j)
    bits = joint_states(design.L)[c]
    A = _active_columns(bits, design.column_blocks())
    # precision of the state-masked design: switched-off columns are zeroed,
    # so the matrix is block-diagonal between active and inactive coordinates
    Xm = np.zeros((design.n, design.p))
    Xm[:, A] = design.design_matrix()[:, A]
    precision = Xm.T @ Xm + np.diag(lam)
    on = np.zeros(design.p)
    on[A] = 1.0
    return NigConditional(
        ig_shape=tabs.ig_shape,
        ig_rate=float(tabs.ig_rate[0, c]),
        mean=tabs.mu[c][0].copy(),
        precision=precision,
        mask=np.outer(on, on),
    )
