"""Stochastic stabilizer oracle for qubit brickwork circuits.

Heisenberg-evolves a Pauli string through sampled random Clifford circuits
and estimates the averaged weight distribution by Monte Carlo.  Phases are
discarded throughout: the weight of a conjugated Pauli depends only on its
support, so strings live as x/z bit vectors and gates act as symplectic
matrices over GF(2).

Sampling.  A uniform two-qubit symplectic matrix (group order 720) is
drawn without enumerating the group, by extending a random hyperbolic
pair: the image u0 of X1 is any nonzero vector (15 choices), the image u1
of Z1 any vector pairing to 1 with it (8), and the images u2, u3 of X2,
Z2 repeat the construction inside the 2-dimensional space orthogonal to
the first pair (3 and 2 choices).  Every symplectic matrix arises from
exactly one such column tuple and 15*8*3*2 = 720, so rejection-sampling
each column uniformly over its admissible set gives the uniform
distribution on the group.  Sign patterns would contribute a further
factor of 16 to the full Clifford count; they never touch supports.

Vectors are packed into 4-bit integers ordered (x1, z1, x2, z2), so a
gate application is an XOR of the columns selected by the incoming bits.

Brickwork and dilution follow the averaged engines: layer t gates even
bonds for even t and odd bonds for odd t, and each gate acts with
probability epsilon, identity otherwise.  `sample_twirl` is the plain
reference path; `estimate_weights` runs a compiled kernel that skips
bonds whose two sites are both identity (the gate outcome is forced, so
no randomness is consumed), with samples split across child generator
streams spawned from the seed exactly as in the lattice engine.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .core import OccupationPattern, QuditModel, WeightDistribution

__all__ = [
    "PauliString",
    "CliffordGate",
    "sample_twirl",
    "EstimatedWeights",
    "estimate_weights",
]

# symplectic form J in the (x1, z1, x2, z2) ordering: x_i pairs with z_i
_FORM = np.array(
    [
        [0, 1, 0, 0],
        [1, 0, 0, 0],
        [0, 0, 0, 1],
        [0, 0, 1, 0],
    ],
    dtype=np.uint8,
)


@dataclass
class PauliString:
    """Pauli operator up to phase: x_bits/z_bits mark X- and Z-components."""

    x_bits: np.ndarray
    z_bits: np.ndarray

    def __post_init__(self):
        self.x_bits = np.asarray(self.x_bits, dtype=np.uint8)
        self.z_bits = np.asarray(self.z_bits, dtype=np.uint8)
        if self.x_bits.ndim != 1 or self.x_bits.size == 0:
            raise ValueError("x_bits must be a non-empty 1D bit vector")
        if self.x_bits.shape != self.z_bits.shape:
            raise ValueError("x_bits and z_bits must have the same length")
        if self.x_bits.max() > 1 or self.z_bits.max() > 1:
            raise ValueError("bit vectors must contain only 0 and 1")

    @classmethod
    def identity(cls, n: int) -> "PauliString":
        return cls(np.zeros(n, np.uint8), np.zeros(n, np.uint8))

    @classmethod
    def from_pattern(cls, pattern: OccupationPattern, kind: str = "x") -> "PauliString":
        """Concrete representative with the given support: X, Z, or Y sites."""
        bits = np.fromiter(pattern.bits, dtype=np.uint8, count=pattern.n_sites)
        zero = np.zeros_like(bits)
        if kind == "x":
            return cls(bits, zero)
        if kind == "z":
            return cls(zero, bits)
        if kind == "y":
            return cls(bits, bits.copy())
        raise ValueError(f"kind must be 'x', 'z' or 'y', got {kind!r}")

    @property
    def n_sites(self) -> int:
        return self.x_bits.size

    @property
    def weight(self) -> int:
        return int((self.x_bits | self.z_bits).sum())

    def support(self) -> OccupationPattern:
        return OccupationPattern.from_iterable(self.x_bits | self.z_bits)


@njit(cache=True)
def _parity4(w):
    return (0b0110100110010110 >> w) & 1


@njit(cache=True)
def _symplectic_inner(u, v):
    # pair x_i with z_i: swap the two bits of each site half before masking
    swapped = ((v & 0b0101) << 1) | ((v & 0b1010) >> 1)
    return _parity4(u & swapped)


@njit(cache=True)
def _sample_packed(gen):
    """Columns of a uniform element of the two-qubit symplectic group."""
    while True:
        u0 = int(gen.random() * 16.0)
        if u0 != 0:
            break
    while True:
        u1 = int(gen.random() * 16.0)
        if _symplectic_inner(u0, u1) == 1:
            break
    while True:
        u2 = int(gen.random() * 16.0)
        if u2 != 0 and _symplectic_inner(u0, u2) == 0 and _symplectic_inner(u1, u2) == 0:
            break
    while True:
        u3 = int(gen.random() * 16.0)
        if (
            _symplectic_inner(u0, u3) == 0
            and _symplectic_inner(u1, u3) == 0
            and _symplectic_inner(u2, u3) == 1
        ):
            break
    return u0, u1, u2, u3


def _columns_to_matrix(cols) -> np.ndarray:
    m = np.empty((4, 4), dtype=np.uint8)
    for j, col in enumerate(cols):
        for i in range(4):
            m[i, j] = (col >> i) & 1
    return m


@dataclass
class CliffordGate:
    """Two-qubit Clifford element reduced to its symplectic action.

    `phase` records the sign pattern slot of the full group element; the
    support evolution never reads it, so sampling leaves it zero.
    """

    symplectic: np.ndarray
    phase: np.ndarray = field(default_factory=lambda: np.zeros(4, np.uint8))

    def __post_init__(self):
        self.symplectic = np.asarray(self.symplectic, dtype=np.uint8)
        if self.symplectic.shape != (4, 4):
            raise ValueError("symplectic matrix must be 4x4")
        gram = (self.symplectic.T @ (_FORM @ self.symplectic).astype(np.int64)) % 2
        if not np.array_equal(gram, _FORM):
            raise ValueError("matrix does not preserve the symplectic form")

    @classmethod
    def sample(cls, rng) -> "CliffordGate":
        return cls(_columns_to_matrix(_sample_packed(rng)))

    def apply(self, pair_bits: np.ndarray) -> np.ndarray:
        """Conjugate a two-site Pauli given as (x1, z1, x2, z2) bits."""
        return (self.symplectic @ pair_bits.astype(np.uint8)) % 2


def _require_qubits(model: QuditModel):
    if model.q != 2:
        raise ValueError(f"the stabilizer oracle requires q = 2, got q = {model.q}")


def sample_twirl(init: PauliString, t: int, model: QuditModel, seed: int = 0) -> PauliString:
    """Conjugate `init` through one sampled t-layer diluted circuit."""
    _require_qubits(model)
    if t < 0:
        raise ValueError("depth must be non-negative")
    rng = np.random.default_rng(seed)
    x = init.x_bits.copy()
    z = init.z_bits.copy()
    n = init.n_sites
    for layer in range(t):
        for left in range(layer % 2, n - 1, 2):
            if rng.random() >= model.epsilon:
                continue
            gate = CliffordGate.sample(rng)
            right = left + 1
            pair = np.array([x[left], z[left], x[right], z[right]], np.uint8)
            out = gate.apply(pair)
            x[left], z[left], x[right], z[right] = out
    return PauliString(x, z)


@njit(cache=True)
def _twirl_weights_kernel(gen, samples, t, eps, x0, z0, hist):
    n = x0.size
    x = np.empty(n, np.uint8)
    z = np.empty(n, np.uint8)
    for _ in range(samples):
        for i in range(n):
            x[i] = x0[i]
            z[i] = z0[i]
        for layer in range(t):
            for left in range(layer % 2, n - 1, 2):
                right = left + 1
                if x[left] == 0 and z[left] == 0 and x[right] == 0 and z[right] == 0:
                    continue
                if gen.random() >= eps:
                    continue
                c0, c1, c2, c3 = _sample_packed(gen)
                v = 0
                if x[left]:
                    v ^= c0
                if z[left]:
                    v ^= c1
                if x[right]:
                    v ^= c2
                if z[right]:
                    v ^= c3
                x[left] = v & 1
                z[left] = (v >> 1) & 1
                x[right] = (v >> 2) & 1
                z[right] = (v >> 3) & 1
        w = 0
        for i in range(n):
            if x[i] | z[i]:
                w += 1
        hist[w] += 1


@dataclass(frozen=True)
class EstimatedWeights:
    """Empirical weight distribution with per-bin binomial standard errors."""

    distribution: WeightDistribution
    stderr: np.ndarray
    samples: int


def estimate_weights(
    init: PauliString,
    t: int,
    model: QuditModel,
    samples: int,
    seed: int = 0,
    *,
    chunks: int = 256,
) -> EstimatedWeights:
    """Monte-Carlo weight histogram of the conjugated string after t layers."""
    _require_qubits(model)
    if t < 0:
        raise ValueError("depth must be non-negative")
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if chunks < 1:
        raise ValueError("chunks must be >= 1")
    chunks = min(chunks, samples)
    hist = np.zeros(init.n_sites + 1, np.int64)
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(chunks)):
        m = samples // chunks + (1 if i < samples % chunks else 0)
        gen = np.random.Generator(np.random.PCG64(child))
        _twirl_weights_kernel(
            gen, m, t, model.epsilon, init.x_bits, init.z_bits, hist
        )
    probs = hist / samples
    stderr = np.sqrt(probs * (1.0 - probs) / samples)
    return EstimatedWeights(WeightDistribution(probs), stderr, samples)
