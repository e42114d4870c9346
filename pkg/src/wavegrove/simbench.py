"""Benchmark scenarios: classic test curves, factorial data, rival tests.

The four standard piecewise test curves are generated from their published
closed forms on the grid t = (1..T)/T and, by default, rescaled to unit
standard deviation so that noise levels and error magnitudes are comparable
across curves; the raw shapes remain available via standardize=False.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .nodemodel import FactorDesign
from .wavelet import CoefficientStack, WaveletFilter, get_filter

__all__ = [
    "TEST_FUNCTIONS",
    "test_function",
    "noise_sigma_for_rsnr",
    "Scenario",
    "SimulatedData",
    "generate",
    "FTestResult",
    "pointwise_f_test",
    "amse",
    "roc",
]

_JUMPS = np.array([0.1, 0.13, 0.15, 0.23, 0.25, 0.4, 0.44, 0.65, 0.76, 0.78, 0.81])
_BLOCK_SIGNS = np.array([4, -5, 3, -4, 5, -4.2, 2.1, 4.3, -3.1, 2.1, -4.2])
_BUMP_HEIGHTS = np.array([4, 5, 3, 4, 5, 4.2, 2.1, 4.3, 3.1, 5.1, 4.2])
_BUMP_WIDTHS = np.array(
    [0.005, 0.005, 0.006, 0.01, 0.01, 0.03, 0.01, 0.01, 0.005, 0.008, 0.005]
)


def _blocks(t):
    steps = (1.0 + np.sign(t[:, None] - _JUMPS[None, :])) / 2.0
    return steps @ _BLOCK_SIGNS


def _bumps(t):
    kern = (1.0 + np.abs((t[:, None] - _JUMPS[None, :]) / _BUMP_WIDTHS[None, :])) ** -4
    return kern @ _BUMP_HEIGHTS


def _heavisine(t):
    return 4.0 * np.sin(4.0 * np.pi * t) - np.sign(t - 0.3) - np.sign(0.72 - t)


def _doppler(t):
    return np.sqrt(t * (1.0 - t)) * np.sin(2.0 * np.pi * 1.05 / (t + 0.05))


TEST_FUNCTIONS = {
    "blocks": _blocks,
    "bumps": _bumps,
    "heavisine": _heavisine,
    "doppler": _doppler,
}


def test_function(name: str, T: int, standardize: bool = True) -> np.ndarray:
    """One of the four classic test curves sampled at t = (1..T)/T."""
    try:
        fn = TEST_FUNCTIONS[name]
    except KeyError:
        raise ValueError(
            f"unknown test function {name!r}; available: {sorted(TEST_FUNCTIONS)}"
        ) from None
    if T < 2:
        raise ValueError("T must be >= 2")
    f = fn(np.arange(1, T + 1) / T)
    if standardize:
        f = f / f.std(ddof=1)
    return f


def noise_sigma_for_rsnr(f: np.ndarray, rsnr: float) -> float:
    """Noise sd giving the requested root signal-to-noise ratio sd(f)/sigma."""
    if rsnr <= 0:
        raise ValueError("rsnr must be positive")
    sd = float(np.asarray(f, dtype=float).std(ddof=1))
    if sd == 0.0:
        raise ValueError("flat signal has no signal-to-noise ratio")
    return sd / rsnr


@dataclass(frozen=True)
class Scenario:
    """One-way functional ANOVA benchmark configuration.

    Group means are f (baseline) and f + c_g * b for g >= 2, where the signs
    c_g alternate +1, -1 so paired effects cancel in the grand mean.  effect
    "none" sets b = 0, "global" uses a whole-domain test curve, "local" uses
    b = proportion * f restricted to the interval; both kinds are multiplied
    by effect_scale.
    """

    baseline: str = "doppler"
    effect: str = "none"
    effect_shape: str = "doppler"
    groups: int = 3
    replicates: int = 3
    length: int = 1024
    rsnr: float = 3.0
    wavelet: str = "la10"
    effect_scale: float = 1.0
    interval: tuple[float, float] = (0.40, 0.45)
    proportion: float = 0.25

    def __post_init__(self):
        if self.effect not in ("none", "global", "local"):
            raise ValueError(f"unknown effect kind {self.effect!r}")
        if self.groups < 2 or self.replicates < 1:
            raise ValueError("need >= 2 groups and >= 1 replicate per group")
        lo, hi = self.interval
        if not 0.0 <= lo < hi <= 1.0:
            raise ValueError("interval must satisfy 0 <= lo < hi <= 1")


@dataclass
class SimulatedData:
    """Generated curves plus everything needed to score a method."""

    scenario: Scenario
    Y: np.ndarray  # (n, T)
    design: FactorDesign
    f: np.ndarray
    b: np.ndarray
    sigma: float
    truth: list[np.ndarray]  # per-level boolean: true effect support in wavelet domain
    truth_father: bool

    @property
    def has_effect(self) -> bool:
        return bool(any(lev.any() for lev in self.truth) or self.truth_father)


def _effect_curve(sc: Scenario) -> np.ndarray:
    T = sc.length
    if sc.effect == "none":
        return np.zeros(T)
    if sc.effect == "global":
        return sc.effect_scale * test_function(sc.effect_shape, T)
    f = test_function(sc.baseline, T)
    t = np.arange(1, T + 1) / T
    mask = (t >= sc.interval[0]) & (t < sc.interval[1])
    return np.where(mask, sc.effect_scale * sc.proportion * f, 0.0)


def generate(sc: Scenario, seed: int = 0) -> SimulatedData:
    """Draw one data set from the scenario (deterministic given seed)."""
    filt = get_filter(sc.wavelet)
    T = sc.length
    f = test_function(sc.baseline, T)
    b = _effect_curve(sc)
    sigma = noise_sigma_for_rsnr(f, sc.rsnr)

    signs = np.array([0.0] + [1.0 if g % 2 == 0 else -1.0 for g in range(2, sc.groups + 1)])
    codes = np.repeat(np.arange(sc.groups), sc.replicates)
    means = f[None, :] + signs[codes][:, None] * b[None, :]
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    Y = means + rng.normal(0.0, sigma, size=means.shape)

    design = FactorDesign(codes[:, None], (sc.groups,))
    beta = CoefficientStack.from_signals(b[None, :], filt)
    scale = max(float(np.max(np.abs(b))), 1.0)
    truth = [np.abs(lev[0]) > 1e-12 * scale for lev in beta.levels]
    truth_father = bool(abs(beta.father[0]) > 1e-12 * scale)
    return SimulatedData(sc, Y, design, f, b, sigma, truth, truth_father)


# ---------------------------------------------------------------------------
# classical pointwise F tests


@dataclass
class FTestResult:
    """Coordinate-wise one-way F statistics with Bonferroni aggregation.

    global_stat is -log10 of the minimum adjusted p-value, oriented so that
    larger means stronger evidence against the global null.
    """

    domain: str
    stats: np.ndarray
    pvalues: np.ndarray
    min_adj_p: float
    global_stat: float


def pointwise_f_test(
    Y: np.ndarray,
    codes: Sequence[int],
    domain: str = "wavelet",
    filt: Optional[WaveletFilter] = None,
) -> FTestResult:
    """One-way F test at every coordinate of the chosen domain.

    domain="wavelet" tests each mother coefficient after transforming the
    rows (the father carries the grand mean and is excluded); domain="time"
    tests each time point directly.
    """
    Y = np.asarray(Y, dtype=float)
    codes = np.asarray(codes, dtype=int)
    n = Y.shape[0]
    if codes.shape != (n,):
        raise ValueError("codes must give one group per row of Y")
    groups = np.unique(codes)
    G = groups.size
    if G < 2:
        raise ValueError("F test needs at least two groups")
    if n - G < 1:
        raise ValueError("F test needs positive within-group degrees of freedom")

    if domain == "wavelet":
        filt = filt if filt is not None else get_filter("la10")
        stack = CoefficientStack.from_signals(Y, filt)
        M = np.hstack([lev for lev in stack.levels])
    elif domain == "time":
        M = Y
    else:
        raise ValueError(f"unknown domain {domain!r}")

    grand = M.mean(axis=0)
    ssb = np.zeros(M.shape[1])
    ssw = np.zeros(M.shape[1])
    for g in groups:
        rows = M[codes == g]
        gm = rows.mean(axis=0)
        ssb += rows.shape[0] * (gm - grand) ** 2
        ssw += ((rows - gm) ** 2).sum(axis=0)
    dfb, dfw = G - 1, n - G
    with np.errstate(divide="ignore", invalid="ignore"):
        F = (ssb / dfb) / (ssw / dfw)
    F = np.where(ssw > 0, F, np.where(ssb > 0, np.inf, 0.0))
    pvals = stats.f.sf(F, dfb, dfw)
    min_adj = float(min(1.0, np.min(pvals) * M.shape[1]))
    global_stat = float(-np.log10(max(min_adj, 1e-300)))
    return FTestResult(domain, F, pvals, min_adj, global_stat)


# ---------------------------------------------------------------------------
# metrics


def amse(estimate: np.ndarray, truth: np.ndarray) -> float:
    """Average squared error over the sampling grid."""
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimate.shape != truth.shape:
        raise ValueError("estimate and truth must share a shape")
    return float(np.mean((estimate - truth) ** 2))


def roc(alt_stats: Sequence[float], null_stats: Sequence[float]):
    """ROC curve and AUC for a statistic oriented larger = more alternative.

    Returns (fpr, tpr, auc); ties receive half credit (Mann-Whitney AUC).
    """
    alt = np.asarray(alt_stats, dtype=float)
    null = np.asarray(null_stats, dtype=float)
    if alt.size == 0 or null.size == 0:
        raise ValueError("need at least one statistic per arm")
    thresholds = np.unique(np.concatenate([alt, null]))[::-1]
    tpr = [0.0]
    fpr = [0.0]
    for thr in thresholds:
        tpr.append(np.mean(alt >= thr))
        fpr.append(np.mean(null >= thr))
    ranks = stats.rankdata(np.concatenate([alt, null]))
    auc = (ranks[: alt.size].sum() - alt.size * (alt.size + 1) / 2.0) / (
        alt.size * null.size
    )
    return np.array(fpr), np.array(tpr), float(auc)
