"""Hyperparameter estimation: marginal maximum likelihood and calibration.

The evidence of the whole data set is available in closed form from one
upward sweep, so hyperparameters are fitted by maximizing it directly with a
derivative-free simplex search in transformed coordinates (log for positive
parameters, logit for persistence probabilities).  Sparsity parameters of the
factor chains can instead be elicited by fixing the prior probability that a
factor has any effect at all, which depends only on (eta_kappa, J).
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.optimize import brentq, minimize
from scipy.special import expit, logit

from .grove import _pjap_core, pyramid_from_marginals, upward_pass
from .nodemodel import (
    FactorDesign,
    HyperParams,
    NumericalError,
    joint_root_probs,
    joint_transition,
)
from .wavelet import CoefficientStack

__all__ = [
    "FitSpec",
    "log_marginal",
    "initial_hyperparams",
    "mmle_fit",
    "prior_pjap",
    "calibrate_sparsity",
]

_MODES = ("full_eb", "hybrid", "fixed")
_CLIP = 30.0  # transformed coordinates are clipped to +-_CLIP before use


@dataclass(frozen=True)
class FitSpec:
    """Controls for the marginal-likelihood fit.

    full_eb searches every applicable hyperparameter; hybrid holds the factor
    sparsity pair (eta_kappa, gamma_kappa) fixed at ``fixed_sparsity`` and
    searches the rest; fixed performs no search at all.
    """

    mode: str = "full_eb"
    fixed_sparsity: Optional[tuple[float, float]] = None
    max_iters: int = 2000
    tolerance: float = 1e-8
    restarts: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}, got {self.mode!r}")
        if self.mode == "hybrid" and self.fixed_sparsity is None:
            raise ValueError("hybrid mode requires fixed_sparsity")
        if self.max_iters < 1 or self.restarts < 1 or self.tolerance <= 0:
            raise ValueError("max_iters, restarts must be >= 1 and tolerance > 0")


def log_marginal(
    hp: HyperParams,
    data: CoefficientStack,
    design: FactorDesign,
    include_father: bool = True,
) -> float:
    """Log evidence of all wavelet coefficients under the prior."""
    method = "tree" if design.L == 0 else "grove"
    g = upward_pass(data, design, hp, method=method)
    out = g.log_evidence
    if include_father:
        out += g.log_evidence_father
    return float(out)


def initial_hyperparams(data: CoefficientStack, design: FactorDesign) -> HyperParams:
    """Robust data-driven starting point for the simplex search."""
    fine = np.abs(np.ravel(data.levels[data.J]))
    sigma = np.median(fine) / 0.6745
    sigma0_sq = max(float(sigma) ** 2, 1e-8)
    coarse = np.concatenate(
        [np.ravel(data.levels[j]) for j in range(min(3, data.J) + 1)]
    )
    tau = float(np.clip(np.mean(coarse**2) / sigma0_sq - 1.0, 1.0, 1e6))
    return HyperParams(
        tau=tau,
        sigma0_sq=sigma0_sq,
        nu=10.0,
        alpha=0.5,
        upsilon=tuple([max(tau / 2.0, 1.0)] * design.L),
    )


def _param_names(L: int, mode: str) -> list[str]:
    names = ["alpha", "tau", "sigma0_sq", "nu", "eta_rho", "gamma_rho"]
    names += [f"upsilon_{l}" for l in range(L)]
    if L > 0 and mode == "full_eb":
        names += ["eta_kappa", "gamma_kappa"]
    return names


def _pack(hp: HyperParams, names: list[str]) -> np.ndarray:
    vec = []
    for name in names:
        if name.startswith("upsilon_"):
            v = hp.upsilon[int(name.split("_")[1])]
        else:
            v = getattr(hp, name)
        vec.append(logit(v) if name.startswith("gamma") else np.log(v))
    return np.array(vec)


def _unpack(vec: np.ndarray, template: HyperParams, names: list[str]) -> HyperParams:
    vec = np.clip(vec, -_CLIP, _CLIP)
    fields: dict = {}
    ups = list(template.upsilon)
    for name, v in zip(names, vec):
        if name.startswith("gamma"):
            val = float(expit(v))
        else:
            val = float(np.exp(v))
        if name.startswith("upsilon_"):
            ups[int(name.split("_")[1])] = val
        else:
            fields[name] = val
    return replace(template, upsilon=tuple(ups), **fields)


def mmle_fit(
    data: CoefficientStack,
    design: FactorDesign,
    spec: FitSpec = FitSpec(),
    init: Optional[HyperParams] = None,
) -> HyperParams:
    """Marginal maximum likelihood via Nelder-Mead with seeded restarts.

    Deterministic for a given (spec, init): restart jitter comes from
    SeedSequence(spec.seed).  Returns the best hyperparameters found (never
    worse than the starting point).
    """
    if init is None:
        init = initial_hyperparams(data, design)
    if init.L != design.L:
        raise ValueError("init hyperparameters disagree with design on factors")
    if spec.mode == "hybrid" and design.L == 0:
        raise ValueError("hybrid mode needs at least one factor")
    if spec.mode in ("hybrid", "fixed") and spec.fixed_sparsity is not None:
        ek, gk = spec.fixed_sparsity
        init = replace(init, eta_kappa=float(ek), gamma_kappa=float(gk))
    if spec.mode == "fixed":
        return init

    names = _param_names(design.L, spec.mode)

    def objective(vec: np.ndarray) -> float:
        try:
            hp = _unpack(vec, init, names)
            return -log_marginal(hp, data, design)
        except (NumericalError, np.linalg.LinAlgError, ValueError):
            return np.inf

    x0 = _pack(init, names)
    f0 = objective(x0)
    if not np.isfinite(f0):
        raise NumericalError("log marginal not finite at the starting point")
    fatol = spec.tolerance * (1.0 + abs(f0))

    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    best_x, best_f = x0, f0
    for r in range(spec.restarts):
        start = x0 if r == 0 else x0 + rng.normal(0.0, 0.5, size=x0.shape)
        res = minimize(
            objective,
            start,
            method="Nelder-Mead",
            options={
                "maxiter": spec.max_iters,
                "maxfev": 2 * spec.max_iters,
                "fatol": fatol,
                "xatol": 1e-6,
                "adaptive": True,
            },
        )
        if res.fun < best_f:
            best_x, best_f = res.x, res.fun
    return _unpack(best_x, init, names)


def prior_pjap(eta_kappa: float, gamma_kappa: float, J: int, L: int = 1) -> float:
    """Prior probability that one factor chain activates anywhere in the tree.

    Evaluated by running the pyramid with unit likelihoods (the posterior then
    equals the prior) and reading off the joint activation probability; the
    result is per-chain and so does not depend on L or on the signal chain.
    """
    if J < 0:
        raise ValueError("J must be >= 0")
    if L < 1:
        raise ValueError("needs at least one factor chain")
    if eta_kappa == 0.0:
        return 0.0  # activation is unreachable
    hp = HyperParams(
        tau=1.0,
        sigma0_sq=1.0,
        nu=1.0,
        upsilon=(1.0,),
        eta_kappa=eta_kappa,
        gamma_kappa=gamma_kappa,
    )
    log_m = [np.zeros((2**j, 4)) for j in range(J + 1)]
    log_trans = []
    with np.errstate(divide="ignore"):
        for j in range(J + 1):
            log_trans.append(np.log(joint_transition(j, hp)))
        root_log_prior = np.log(joint_root_probs(hp))
    _, _, post_trans, root_dist, _ = pyramid_from_marginals(
        log_m, log_trans, root_log_prior
    )
    return _pjap_core(post_trans, root_dist, J, L=1, factor=0)


def calibrate_sparsity(
    target_pjap: float, gamma_kappa: float, J: int, L: int = 1
) -> float:
    """eta_kappa achieving a requested prior joint activation probability.

    prior_pjap is nondecreasing in eta_kappa with range (0, 1), so any target
    strictly inside (0, 1) is reachable; bisection on log(eta).
    """
    if not 0.0 < target_pjap < 1.0:
        raise ValueError(
            f"target prior PJAP must lie strictly in (0, 1), got {target_pjap}"
        )

    def f(log_eta: float) -> float:
        return prior_pjap(float(np.exp(log_eta)), gamma_kappa, J, L) - target_pjap

    lo, hi = -60.0, 10.0
    if f(lo) > 0.0 or f(hi) < 0.0:  # pragma: no cover - range is always bracketed
        raise ValueError("target prior PJAP out of reachable range")
    return float(np.exp(brentq(f, lo, hi, xtol=1e-13, rtol=1e-13)))
