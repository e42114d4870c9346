"""Decision-rule arithmetic: NFP and FDR by hand, tie-block thresholding,
and the control guarantee (achieved FDR never exceeds the target) on random
probability tables."""
import numpy as np
import pytest

from wavegrove import NodeIndex, evaluate, threshold_for_fdr


def table(*probs):
    return {NodeIndex(0, i): p for i, p in enumerate(probs)}


def test_evaluate_hand_example():
    rep = evaluate(table(0.9, 0.6, 0.3), 0.5)
    assert len(rep.called) == 2
    assert rep.nfp == pytest.approx(0.5)
    assert rep.fdr == pytest.approx(0.25)
    assert rep.called == (NodeIndex(0, 0), NodeIndex(0, 1))


def test_evaluate_empty_call_set():
    rep = evaluate(table(0.2, 0.1), 0.5)
    assert rep.called == ()
    assert rep.nfp == 0.0 and rep.fdr == 0.0


def test_evaluate_certain_calls_have_zero_fdr():
    for delta in (0.1, 0.5, 0.9):
        rep = evaluate(table(1.0, 1.0, 1.0), delta)
        assert len(rep.called) == 3
        assert rep.fdr == 0.0


def test_evaluate_threshold_is_strict():
    rep = evaluate(table(0.5, 0.7), 0.5)
    assert rep.called == (NodeIndex(0, 1),)


def test_evaluate_carries_context():
    rep = evaluate(table(0.9), 0.5, factor=1, pjap=0.97)
    assert rep.factor == 1 and rep.pjap == 0.97


def test_evaluate_validation():
    with pytest.raises(ValueError):
        evaluate(table(0.5), 0.0)
    with pytest.raises(ValueError):
        evaluate(table(0.5), 1.0)
    with pytest.raises(ValueError):
        evaluate(table(1.5), 0.5)


def test_evaluate_monotone_in_delta():
    rng = np.random.default_rng(0)
    pm = table(*rng.random(40))
    sizes = [len(evaluate(pm, d).called) for d in np.linspace(0.05, 0.95, 19)]
    assert all(a >= b for a, b in zip(sizes, sizes[1:]))


def test_threshold_greedy_prefix():
    pm = table(0.9, 0.6, 0.3)
    delta = threshold_for_fdr(pm, 0.2)
    rep = evaluate(pm, delta)
    assert rep.called == (NodeIndex(0, 0),)
    assert rep.fdr == pytest.approx(0.1)

    delta = threshold_for_fdr(pm, 0.3)
    rep = evaluate(pm, delta)
    assert len(rep.called) == 2
    assert rep.fdr == pytest.approx(0.25)


def test_threshold_keeps_tie_blocks_whole():
    pm = table(0.8, 0.8)
    delta = threshold_for_fdr(pm, 0.25)
    rep = evaluate(pm, delta)
    assert len(rep.called) == 2
    assert rep.fdr == pytest.approx(0.2)


def test_threshold_no_feasible_set():
    pm = table(0.3, 0.2)
    delta = threshold_for_fdr(pm, 0.2)
    assert delta > 0.3
    assert evaluate(pm, delta).called == ()


def test_threshold_empty_table():
    delta = threshold_for_fdr({}, 0.1)
    assert 0.0 < delta < 1.0
    assert evaluate({}, delta).called == ()


def test_threshold_validation():
    with pytest.raises(ValueError):
        threshold_for_fdr(table(0.5), 0.0)
    with pytest.raises(ValueError):
        threshold_for_fdr(table(0.5), 1.0)


def test_running_fdr_is_nondecreasing():
    rng = np.random.default_rng(1)
    probs = np.sort(rng.random(30))[::-1]
    running = np.cumsum(1.0 - probs) / np.arange(1, 31)
    assert np.all(np.diff(running) >= -1e-15)


def test_achieved_fdr_never_exceeds_target():
    rng = np.random.default_rng(2)
    for trial in range(1000):
        m = int(rng.integers(1, 40))
        probs = rng.random(m)
        if rng.random() < 0.3:  # inject ties
            probs = np.round(probs, 1)
        pm = table(*probs)
        target = float(rng.uniform(0.02, 0.8))
        delta = threshold_for_fdr(pm, target)
        rep = evaluate(pm, delta)
        assert rep.fdr <= target + 1e-12
        # maximality: lowering delta to admit the next callable block breaks
        # the target (nodes with PMAP 0 are never callable by a strict
        # threshold, so they are not candidates)
        called_probs = sorted((p for p in probs if p > delta), reverse=True)
        rest = sorted((p for p in probs if 0.0 < p <= delta), reverse=True)
        if rest:
            grown = called_probs + [p for p in rest if p == rest[0]]
            grown_fdr = sum(1.0 - p for p in grown) / len(grown)
            assert grown_fdr > target
