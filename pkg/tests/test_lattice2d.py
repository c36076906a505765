"""2D hole dynamics: dense-grid rule, sparse kernel, tail extraction.

The kernel is validated three independent ways: against the dense step_2d
implementation (statistically), against the exact one-gate and ruin
constants, and against the 1D walker annihilation series on a one-row
strip.  The deep-tail test at the bottom runs about a minute; everything
else is seconds.
"""

import math

import numpy as np
import pytest

from shallow_shadows import lattice2d
from shallow_shadows.core import QuditModel
from shallow_shadows.lattice2d import (
    DISCARDED,
    SURVIVED,
    AnnihilationHistogram,
    DomainState,
    annihilation_histogram,
    annihilation_times,
    fit_annihilation_tail,
    step_2d,
)
from shallow_shadows.walkers import annihilation_prob, motzkin_series


def test_domain_state_validation():
    with pytest.raises(ValueError, match="2D"):
        DomainState(np.zeros((2, 2, 2), dtype=np.int8), 0)
    with pytest.raises(ValueError, match="cells"):
        DomainState(np.full((3, 3), 2, dtype=np.int8), 18)
    with pytest.raises(ValueError, match="inconsistent"):
        DomainState(np.zeros((3, 3), dtype=np.int8), 1)
    with pytest.raises(ValueError, match="non-empty"):
        DomainState(np.zeros((0, 3), dtype=np.int8), 0)
    state = DomainState.single_hole(7, 7)
    assert state.hole_count == 1
    assert state.grid[3, 3] == 1
    assert not state.touches_boundary()
    edge = np.zeros((5, 5), dtype=np.int8)
    edge[0, 2] = 1
    assert DomainState(edge, 1).touches_boundary()


def test_all_background_absorbing():
    model = QuditModel(2)
    rng = np.random.default_rng(0)
    state = DomainState(np.zeros((6, 6), dtype=np.int8), 0)
    for phase in range(4):
        state = step_2d(state, model, phase, rng)
        assert state.hole_count == 0
    # the all-holes grid is the other uniform configuration
    full = DomainState(np.ones((6, 6), dtype=np.int8), 36)
    for phase in range(4):
        full = step_2d(full, model, phase, rng)
        assert full.hole_count == 36


def test_step_rejects_bad_phase():
    state = DomainState.single_hole(5, 5)
    with pytest.raises(ValueError, match="schedule_phase"):
        step_2d(state, QuditModel(2), 4, np.random.default_rng(0))


def test_step_mixed_pair_probabilities():
    # one horizontal gate on a 1x2 grid exposes the raw three-outcome rule
    model = QuditModel(2, epsilon=0.8)
    rng = np.random.default_rng(21)
    start = DomainState(np.array([[1, 0]], dtype=np.int8), 1)
    n = 20000
    outcomes = {0: 0, 1: 0, 2: 0}
    for _ in range(n):
        new = step_2d(start, model, 0, rng)
        outcomes[new.hole_count] += 1
    for count, expected in [
        (outcomes[0], model.epsilon * model.a),
        (outcomes[2], model.epsilon * (1 - model.a)),
        (outcomes[1], 1 - model.epsilon),
    ]:
        sigma = math.sqrt(expected * (1 - expected) / n)
        assert abs(count / n - expected) < 4 * sigma
    # phase 1 has no gate on a two-column grid: open boundary
    unchanged = step_2d(start, model, 1, rng)
    assert np.array_equal(unchanged.grid, start.grid)


def _dense_annihilation_probs(model, trials, t_units, size, seed):
    """Histogram single-hole annihilation times using step_2d only."""
    rng = np.random.default_rng(seed)
    counts = np.zeros(4 * t_units, dtype=np.int64)
    for _ in range(trials):
        state = DomainState.single_hole(size, size)
        for sub in range(4 * t_units):
            state = step_2d(state, model, sub % 4, rng)
            if state.hole_count == 0:
                counts[sub] += 1
                break
    return counts / trials


def test_kernel_matches_dense_step():
    # same Markov rule, two very different implementations
    model = QuditModel(2)
    trials = 20000
    dense = _dense_annihilation_probs(model, trials, 1, 9, seed=5)
    times = annihilation_times(model, 400000, 1, 9, seed=6)
    kernel = np.bincount(times[times >= 0], minlength=4) / times.size
    for sub in range(4):
        sigma = math.sqrt(dense[sub] * (1 - dense[sub]) / trials + 1e-12)
        assert abs(dense[sub] - kernel[sub]) < 5 * sigma + 5e-4


def test_first_sublayer_probability():
    # exactly one horizontal gate covers the hole in phase 0
    for model in [QuditModel(2), QuditModel(3), QuditModel(2, epsilon=0.6)]:
        times = annihilation_times(model, 10**6, 2, 13, seed=9)
        expected = model.epsilon * model.a
        p0 = float((times == 0).mean())
        sigma = math.sqrt(expected * (1 - expected) / times.size)
        assert abs(p0 - expected) < 5 * sigma


def test_total_annihilation_matches_ruin_constant():
    # +-1 jump chain with downward odds a:(1-a) gives extinction q^{-2}
    # exactly; 1e7-trial baseline at seed 20260817: 0.24990 (q=2), 0.11121 (q=3)
    for q in (2, 3):
        times = annihilation_times(QuditModel(q), 10**6, 12, 33, seed=5)
        frac = float((times >= 0).mean())
        expected = q ** (-2.0)
        sigma = math.sqrt(expected * (1 - expected) / times.size)
        assert abs(frac - expected) < 5 * sigma
        assert not (times == DISCARDED).any()


def test_deterministic_under_seed():
    model = QuditModel(2)
    a = annihilation_times(model, 20000, 3, 15, seed=123)
    b = annihilation_times(model, 20000, 3, 15, seed=123)
    c = annihilation_times(model, 20000, 3, 15, seed=124)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_histogram_independent_of_grid_size():
    # L >= 4*t_max + 5 contains the worst-case cone: bit-identical runs
    model = QuditModel(2)
    a = annihilation_times(model, 30000, 3, 17, seed=42)
    b = annihilation_times(model, 30000, 3, 21, seed=42)
    assert np.array_equal(a, b)
    assert not (a == DISCARDED).any()
    # near the containment margin the match is statistical: the rare trials
    # whose filaments reach the smaller grid's edge change the draw stream
    small = annihilation_times(model, 200000, 3, 12, seed=42)
    assert (small == DISCARDED).mean() < 0.01
    n_small, n_big = small.size, a.size
    h_small = np.bincount(small[small >= 0], minlength=12) / n_small
    h_big = np.bincount(a[a >= 0], minlength=12) / n_big
    for p, ref in zip(h_small, h_big):
        sigma = math.sqrt(max(ref, 1e-6) * (1 - ref) * (1 / n_small + 1 / n_big))
        assert abs(p - ref) < 5 * sigma


def test_strip_reproduces_walker_series():
    # a one-row strip runs the 1D process; vertical phases are inert, so
    # sub-layer s maps to brickwork layer 2*(s//4) + s%4
    model = QuditModel(2)
    trials = 10**6
    times = annihilation_times(model, trials, 8, (1, 41), seed=11)
    assert not (times == DISCARDED).any()
    counts = np.bincount(times[times >= 0], minlength=32)
    for sub in range(32):
        if sub % 4 >= 2:
            assert counts[sub] == 0
    for layer in range(13):
        sub = 4 * (layer // 2) + layer % 2
        expected = annihilation_prob(layer, model)
        sigma = math.sqrt(expected * (1 - expected) / trials)
        assert abs(counts[sub] / trials - expected) < 5 * sigma


def test_strip_reproduces_walker_series_diluted():
    model = QuditModel(2, epsilon=0.7)
    trials = 400000
    times = annihilation_times(model, trials, 6, (1, 31), seed=13)
    counts = np.bincount(times[times >= 0], minlength=24)
    series = motzkin_series(12, model)
    first_return = series.p_minus * series.m
    for layer in range(9):
        sub = 4 * (layer // 2) + layer % 2
        expected = first_return[layer]
        sigma = math.sqrt(expected * (1 - expected) / trials)
        assert abs(counts[sub] / trials - expected) < 5 * sigma


def test_prune_censors_rather_than_bins():
    model = QuditModel(2)
    times = annihilation_times(model, 5000, 20, 49, seed=17)
    assert set(np.unique(times)) <= set(range(80)) | {SURVIVED}
    survived = float((times == SURVIVED).mean())
    assert abs(survived - 0.75) < 0.03


def test_boundary_discards_on_undersized_grid():
    # light cone of 3 units cannot fit in a 5x5 grid
    times = annihilation_times(QuditModel(2), 20000, 3, 5, seed=2)
    assert (times == DISCARDED).sum() > 0


def test_annihilation_times_validation():
    model = QuditModel(2)
    with pytest.raises(ValueError, match="trials"):
        annihilation_times(model, 0, 2, 9)
    with pytest.raises(ValueError, match="t_max"):
        annihilation_times(model, 10, 0, 9)
    with pytest.raises(ValueError, match="chunks"):
        annihilation_times(model, 10, 2, 9, chunks=0)
    with pytest.raises(ValueError, match="at least one cell"):
        annihilation_times(model, 10, 2, (0, 9))


def test_tail_fit_window_rules():
    trials = 10**7
    tau = np.arange(40)
    counts = np.rint(trials * 0.2 * np.exp(-0.9 * tau)).astype(np.int64)
    default = fit_annihilation_tail(counts, trials)
    assert default.window[0] == 5
    assert counts[default.window[1]] >= 50 > counts[default.window[1] + 1]
    assert abs(default.gamma - 0.9) < 0.01
    assert default.r2 > 0.999
    spanned = fit_annihilation_tail(counts, trials, floor=10, min_decades=3.0)
    assert spanned.decades >= 3.0
    assert spanned.window[0] > 0
    # latest admissible start: one bin later would span less than 3 decades
    later = np.log10(counts[spanned.window[0] + 1] / counts[spanned.window[1]])
    assert later < 3.0
    with pytest.raises(ValueError, match="more trials"):
        fit_annihilation_tail(counts, trials, floor=10, min_decades=12.0)
    with pytest.raises(ValueError, match="count floor"):
        fit_annihilation_tail(counts, trials, floor=10**12)
    with pytest.raises(ValueError, match="no annihilation"):
        fit_annihilation_tail(np.zeros(10, dtype=np.int64), trials)
    with pytest.raises(ValueError, match="populated bins"):
        fit_annihilation_tail(np.array([10000, 500, 100, 60, 0, 0]), trials)


def test_histogram_end_to_end():
    model = QuditModel(2)
    hist = annihilation_histogram(
        model, 10**6, 10, 27, seed=3, fit_floor=10, min_decades=2.5
    )
    assert isinstance(hist, AnnihilationHistogram)
    assert hist.n_discarded == 0
    assert hist.n_annihilated + hist.n_censored == hist.trials
    assert abs(hist.prob.sum() - hist.annihilation_fraction) < 1e-15
    assert 0.8 < hist.fit.gamma < 1.05
    assert hist.fit.r2 > 0.98
    assert hist.fit.decades >= 2.5
    # error bars cover the exact first-sub-layer probability
    assert abs(hist.prob[0] - 0.2) < 4 * hist.stderr[0]
    lines = hist.to_csv().strip().split("\n")
    assert lines[0] == "q,epsilon,tau,prob,stderr"
    assert len(lines) == 1 + 40
    q, eps, tau, prob, err = lines[1].split(",")
    assert (int(q), float(eps), int(tau)) == (2, 1.0, 0)
    assert float(prob) == hist.prob[0]
    assert float(err) == hist.stderr[0]
    record = hist.fit_record()
    for key in ("gamma_2d", "window", "r2", "trials", "L"):
        assert key in record
    assert record["schedule"] == lattice2d.SCHEDULE
    assert record["trials"] == 10**6


def test_histogram_rejects_uncontained_grid():
    with pytest.raises(ValueError, match="light-cone"):
        annihilation_histogram(QuditModel(2), 1000, 10, 23, seed=0)


def test_histogram_aborts_on_excess_discards():
    # the minimal legal grid at small t_max leaks over 1% of trials
    with pytest.raises(RuntimeError, match="raise L"):
        annihilation_histogram(QuditModel(2), 200000, 3, 10, seed=42)


def test_faster_decay_at_larger_q():
    kwargs = dict(trials=10**6, t_max=10, L=27, seed=3, fit_floor=10, min_decades=2.0)
    gamma2 = annihilation_histogram(QuditModel(2), **kwargs).fit.gamma
    gamma3 = annihilation_histogram(QuditModel(3), **kwargs).fit.gamma
    assert gamma3 > gamma2 + 0.4


def test_deep_tail_single_exponential_four_decades():
    # long-running regression (about a minute): the tail stays on one
    # exponential across four orders of magnitude
    hist = annihilation_histogram(
        QuditModel(2),
        10**8,
        20,
        49,
        seed=20260817,
        fit_floor=20,
        min_decades=4.0,
    )
    assert hist.fit.decades >= 4.0
    assert hist.fit.r2 > 0.99
    assert 0.85 < hist.fit.gamma < 1.0
    assert hist.n_discarded == 0
