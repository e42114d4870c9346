"""Bayesian FDR control over per-node activation probabilities.

Calling every node whose marginal activation probability exceeds a threshold
delta incurs an expected number of false positives equal to the sum of
(1 - PMAP) over the called set; dividing by the number of calls gives the
posterior expected false discovery rate, which is controlled directly by
choosing the largest threshold-defined set whose rate stays at or below
target.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .wavelet import NodeIndex

__all__ = ["DecisionReport", "evaluate", "threshold_for_fdr"]


@dataclass(frozen=True)
class DecisionReport:
    """Outcome of thresholding one factor's PMAP table."""

    delta: float
    called: tuple[NodeIndex, ...]
    nfp: float
    fdr: float
    factor: Optional[int] = None
    pjap: Optional[float] = None


def _validated(pmaps: Mapping[NodeIndex, float]) -> list[tuple[NodeIndex, float]]:
    items = []
    for node, p in pmaps.items():
        p = float(p)
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"PMAP at {tuple(node)} outside [0, 1]: {p}")
        items.append((NodeIndex(*node), p))
    return items


def evaluate(
    pmaps: Mapping[NodeIndex, float],
    delta: float,
    factor: Optional[int] = None,
    pjap: Optional[float] = None,
) -> DecisionReport:
    """Call all nodes with PMAP strictly above delta; report NFP and FDR.

    The FDR of an empty call set is 0 by convention.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    items = _validated(pmaps)
    called = sorted(node for node, p in items if p > delta)
    nfp = float(sum(1.0 - p for node, p in items if p > delta))
    fdr = nfp / len(called) if called else 0.0
    return DecisionReport(
        delta=float(delta),
        called=tuple(called),
        nfp=nfp,
        fdr=fdr,
        factor=factor,
        pjap=pjap,
    )


def threshold_for_fdr(pmaps: Mapping[NodeIndex, float], target_fdr: float) -> float:
    """Largest threshold-defined call set with posterior FDR <= target.

    PMAPs are scanned in decreasing order; tied values enter or leave as one
    block, so the returned delta always reproduces the selected set exactly
    via ``evaluate``.  When even the top block violates the target (or the
    table is empty) the returned delta sits above every PMAP, selecting
    nothing.
    """
    if not 0.0 < target_fdr < 1.0:
        raise ValueError(f"target FDR must lie in (0, 1), got {target_fdr}")
    items = _validated(pmaps)
    # nodes with PMAP exactly 0 are unreachable by any strict threshold
    values = np.array(sorted({p for _, p in items if p > 0.0}, reverse=True))
    if values.size == 0:
        return 0.5
    probs = np.array([p for _, p in items])
    # running expected FDR after including each successive tie block
    best_value = None
    n_called, nfp = 0, 0.0
    for v in values:
        block = probs[probs == v]
        n_called += block.size
        nfp += float(np.sum(1.0 - block))
        if nfp / n_called <= target_fdr:
            best_value = v
        else:
            break  # running FDR is nondecreasing, no later prefix can recover

    if best_value is None:
        top = float(values[0])
        return (1.0 + top) / 2.0
    below = values[values < best_value]
    if below.size:
        return float((best_value + below[0]) / 2.0)
    return float(best_value / 2.0)
