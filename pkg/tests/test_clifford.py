"""Stabilizer sampler: group uniformity, averaged-map agreement, oracles.

The sampler is validated structurally (every draw preserves the
symplectic form, all 720 group elements appear at uniform rates) and
dynamically (the induced single-step occupation map collapses to the
averaged two-site transition matrix, and deep runs reproduce the exact
chain's weight distribution and equilibrium density).
"""

import math

import numpy as np
import pytest

from shallow_shadows.clifford import (
    CliffordGate,
    PauliString,
    estimate_weights,
    sample_twirl,
)
from shallow_shadows.core import OccupationPattern, QuditModel
from shallow_shadows.exact_markov import build_gate, evolve_dense, weights_from_dense


def test_pauli_string_basics():
    ident = PauliString.identity(5)
    assert ident.weight == 0
    assert ident.n_sites == 5
    pattern = OccupationPattern.from_iterable([1, 0, 1, 1, 0])
    for kind, x_weight, z_weight in [("x", 3, 0), ("z", 0, 3), ("y", 3, 3)]:
        p = PauliString.from_pattern(pattern, kind=kind)
        assert p.weight == 3
        assert int(p.x_bits.sum()) == x_weight
        assert int(p.z_bits.sum()) == z_weight
        assert p.support() == pattern
    with pytest.raises(ValueError, match="same length"):
        PauliString(np.zeros(3, np.uint8), np.zeros(4, np.uint8))
    with pytest.raises(ValueError, match="0 and 1"):
        PauliString(np.full(3, 2, np.uint8), np.zeros(3, np.uint8))
    with pytest.raises(ValueError, match="non-empty"):
        PauliString(np.zeros(0, np.uint8), np.zeros(0, np.uint8))
    with pytest.raises(ValueError, match="kind"):
        PauliString.from_pattern(pattern, kind="w")


def test_gate_validation():
    CliffordGate(np.eye(4, dtype=np.uint8))  # identity is symplectic
    swap = np.zeros((4, 4), dtype=np.uint8)
    swap[[0, 1, 2, 3], [2, 3, 0, 1]] = 1  # exchange the two qubits
    CliffordGate(swap)
    shear = np.eye(4, dtype=np.uint8)
    shear[0, 1] = 1  # phase-gate action z1 -> x1 + z1: still symplectic
    CliffordGate(shear)
    bad = np.eye(4, dtype=np.uint8)
    bad[:, 1] = bad[:, 0]  # two generators with the same image: form degenerates
    with pytest.raises(ValueError, match="symplectic"):
        CliffordGate(bad)
    with pytest.raises(ValueError, match="4x4"):
        CliffordGate(np.eye(3, dtype=np.uint8))


def test_sampled_gates_are_symplectic():
    rng = np.random.default_rng(1)
    for _ in range(300):
        CliffordGate.sample(rng)  # construction validates the form


def test_sampler_uniform_over_group():
    rng = np.random.default_rng(7)
    draws = 144000
    counts = {}
    for _ in range(draws):
        key = CliffordGate.sample(rng).symplectic.tobytes()
        counts[key] = counts.get(key, 0) + 1
    assert len(counts) == 720
    expected = draws / 720
    chi2 = sum((c - expected) ** 2 / expected for c in counts.values())
    # chi-square with 719 dof: mean 719, std ~38; 950 is a +6 sigma ceiling
    assert chi2 < 950
    assert min(counts.values()) > expected / 2


def test_twirl_depth_zero_is_identity():
    init = PauliString.from_pattern(OccupationPattern.contiguous(3, n=8), kind="y")
    out = sample_twirl(init, 0, QuditModel(2), seed=3)
    assert np.array_equal(out.x_bits, init.x_bits)
    assert np.array_equal(out.z_bits, init.z_bits)
    assert out.x_bits is not init.x_bits


def test_twirl_light_cone():
    # site 5 sits on even bond (4,5) in layer 0, then bonds (3,4)/(5,6)
    model = QuditModel(2)
    bits = np.zeros(12, np.uint8)
    bits[5] = 1
    init = PauliString(bits.copy(), np.zeros(12, np.uint8))
    for seed in range(60):
        support1 = np.nonzero(sample_twirl(init, 1, model, seed).support().bits)[0]
        assert set(support1) <= {4, 5}
        support2 = np.nonzero(sample_twirl(init, 2, model, seed).support().bits)[0]
        assert set(support2) <= {3, 4, 5, 6}


def _pair_class_frequencies(kind, bits, model, n_draws):
    init = PauliString.from_pattern(OccupationPattern.from_iterable(bits), kind=kind)
    freq = np.zeros(4)
    for seed in range(n_draws):
        occ = sample_twirl(init, 1, model, seed).support().bits
        freq[2 * occ[0] + occ[1]] += 1
    return freq / n_draws


def test_single_step_map_matches_averaged_gate():
    # the 2-design average collapses the sampler onto the transition matrix
    n_draws = 20000
    for eps in (1.0, 0.7):
        model = QuditModel(2, epsilon=eps)
        matrix = build_gate(model).matrix
        for kind, bits in [("x", (1, 0)), ("z", (1, 0)), ("y", (0, 1)), ("x", (1, 1))]:
            start = 2 * bits[0] + bits[1]
            freq = _pair_class_frequencies(kind, bits, model, n_draws)
            for new in range(4):
                p = matrix[new, start]
                sigma = math.sqrt(p * (1 - p) / n_draws)
                assert abs(freq[new] - p) < 4 * sigma + 1e-12


def test_estimated_distribution_matches_exact_chain():
    model = QuditModel(2)
    pattern = OccupationPattern.contiguous(2, n=10)
    init = PauliString.from_pattern(pattern, kind="x")
    est = estimate_weights(init, 2, model, 200000, seed=11)
    exact = weights_from_dense(evolve_dense(pattern, 2, model))
    tv = 0.5 * np.abs(est.distribution.probs - exact.probs).sum()
    assert tv < 0.01
    gap = abs(est.distribution.mean_weight() - exact.mean_weight())
    spread = math.sqrt(
        max(
            np.arange(11) ** 2 @ est.distribution.probs
            - est.distribution.mean_weight() ** 2,
            1e-12,
        )
    )
    assert gap < 3 * spread / math.sqrt(est.samples)


def test_estimated_mean_matches_exact_chain_deeper():
    model = QuditModel(2)
    pattern = OccupationPattern.contiguous(4, n=12)
    init = PauliString.from_pattern(pattern, kind="x")
    est = estimate_weights(init, 3, model, 100000, seed=23)
    exact = weights_from_dense(evolve_dense(pattern, 3, model))
    w = np.arange(13)
    spread = math.sqrt(w**2 @ est.distribution.probs - est.distribution.mean_weight() ** 2)
    gap = abs(est.distribution.mean_weight() - exact.mean_weight())
    assert gap < 3 * spread / math.sqrt(est.samples)


def test_kernel_agrees_with_reference_path():
    # the compiled kernel skips forced bonds; the reference never does
    model = QuditModel(2, epsilon=0.8)
    pattern = OccupationPattern.contiguous(3, n=8)
    init = PauliString.from_pattern(pattern, kind="x")
    reference = np.zeros(9)
    n_ref = 3000
    for seed in range(n_ref):
        reference[sample_twirl(init, 2, model, seed).weight] += 1
    reference /= n_ref
    est = estimate_weights(init, 2, model, 100000, seed=5)
    tv = 0.5 * np.abs(est.distribution.probs - reference).sum()
    assert tv < 0.06


def test_fully_packed_equilibrium_density():
    model = QuditModel(2)
    init = PauliString.from_pattern(OccupationPattern.contiguous(12), kind="x")
    est = estimate_weights(init, 20, model, 20000, seed=2)
    density = est.distribution.mean_weight() / 12
    assert abs(density - 0.75) < 0.01


def test_point_mass_for_single_sample():
    init = PauliString.from_pattern(OccupationPattern.contiguous(2, n=6), kind="x")
    est = estimate_weights(init, 3, QuditModel(2), 1, seed=9)
    assert np.isclose(est.distribution.probs.sum(), 1.0)
    assert (est.distribution.probs == 1.0).sum() == 1


def test_determinism_under_seed():
    model = QuditModel(2)
    init = PauliString.from_pattern(OccupationPattern.contiguous(4, n=10), kind="x")
    a = estimate_weights(init, 3, model, 5000, seed=31)
    b = estimate_weights(init, 3, model, 5000, seed=31)
    c = estimate_weights(init, 3, model, 5000, seed=32)
    assert np.array_equal(a.distribution.probs, b.distribution.probs)
    assert not np.array_equal(a.distribution.probs, c.distribution.probs)
    t1 = sample_twirl(init, 3, model, seed=4)
    t2 = sample_twirl(init, 3, model, seed=4)
    assert np.array_equal(t1.x_bits, t2.x_bits)
    assert np.array_equal(t1.z_bits, t2.z_bits)


def test_validation_errors():
    init = PauliString.identity(4)
    with pytest.raises(ValueError, match="q = 2"):
        sample_twirl(init, 1, QuditModel(3))
    with pytest.raises(ValueError, match="q = 2"):
        estimate_weights(init, 1, QuditModel(3), 10)
    with pytest.raises(ValueError, match="non-negative"):
        sample_twirl(init, -1, QuditModel(2))
    with pytest.raises(ValueError, match="samples"):
        estimate_weights(init, 1, QuditModel(2), 0)
    with pytest.raises(ValueError, match="chunks"):
        estimate_weights(init, 1, QuditModel(2), 10, chunks=0)
