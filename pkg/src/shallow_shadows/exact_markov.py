"""Exact occupation-weight dynamics by dense enumeration.

Averaging a Haar-random two-qudit gate over the local unitary group turns
operator spreading into a classical Markov chain on occupation patterns
n in {0, 1}^N (0 = identity at the site, 1 = non-identity).  The two-site
transition matrix in the pair basis {00, 01, 10, 11} is column-stochastic:

    M_haar = [[1, 0,      0,      0     ],
              [0, a,      a,      a     ],
              [0, a,      a,      a     ],
              [0, 1-2a,   1-2a,   1-2a  ]],   a = 1 / (q^2 + 1),

and a diluted bond applies M(eps) = (1-eps) I + eps M_haar.  This module
evolves the full 2^N probability vector under the brickwork circuit and
is the correctness oracle for every other engine in the package.

Brickwork convention (shared package-wide): layer index t applies gates
on even bonds (0-1, 2-3, ...) when t is even and on odd bonds
(1-2, 3-4, ...) when t is odd.  Boundaries are open; edge sites simply
miss a partner on alternate layers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import OccupationPattern, QuditModel, WeightDistribution

__all__ = [
    "GateTransition",
    "DenseState",
    "build_gate",
    "evolve_dense",
    "weights_from_dense",
    "site_marginals",
    "bulk_marginal_dense",
    "bulk_marginal_curve_dense",
]

MAX_SITES = 20  # 2^20 doubles ~ 8 MB; the public API stops here
_MAX_SITES_ORACLE = 26  # the dedicated bulk-marginal oracle may go further


@dataclass(frozen=True)
class GateTransition:
    """Two-site transition matrix in the pair basis {00, 01, 10, 11}."""

    matrix: np.ndarray

    def __post_init__(self):
        m = self.matrix
        if m.shape != (4, 4):
            raise ValueError("pair transition matrix must be 4x4")
        if np.any(m < -1e-15):
            raise ValueError("transition matrix has negative entries")
        if np.max(np.abs(m.sum(axis=0) - 1.0)) > 1e-12:
            raise ValueError("transition matrix columns must sum to 1")


def build_gate(model: QuditModel) -> GateTransition:
    """Averaged two-site occupation transition matrix M(eps)."""
    a = model.a
    haar = np.array(
        [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, a, a, a],
            [0.0, a, a, a],
            [0.0, 1.0 - 2.0 * a, 1.0 - 2.0 * a, 1.0 - 2.0 * a],
        ]
    )
    eps = model.epsilon
    return GateTransition((1.0 - eps) * np.eye(4) + eps * haar)


@dataclass
class DenseState:
    """Probability vector over all 2^N occupation patterns.

    probs is indexed so that bit i of the configuration index is the
    occupation of site i with site 0 the most significant axis; use the
    helpers below rather than poking at the raveled order.
    """

    n_sites: int
    probs: np.ndarray

    def total(self) -> float:
        return float(self.probs.sum())


def _as_tensor(state: DenseState) -> np.ndarray:
    return state.probs.reshape((2,) * state.n_sites)


def _apply_bond(p: np.ndarray, gate: np.ndarray, i: int) -> np.ndarray:
    """Apply the 4x4 pair matrix to sites (i, i+1) of the (2,)*N tensor."""
    n = p.ndim
    q = np.moveaxis(p, (i, i + 1), (0, 1))
    shape = q.shape
    q = gate @ q.reshape(4, -1)
    return np.moveaxis(q.reshape(shape), (0, 1), (i, i + 1))


def _apply_layer(p: np.ndarray, layer: int, gate: np.ndarray) -> np.ndarray:
    n = p.ndim
    for i in range(layer % 2, n - 1, 2):
        p = _apply_bond(p, gate, i)
    return p


def _evolve_tensor(p: np.ndarray, t: int, gate: np.ndarray) -> np.ndarray:
    for layer in range(t):
        p = _apply_layer(p, layer, gate)
    return p


def evolve_dense(init: OccupationPattern, t: int, model: QuditModel) -> DenseState:
    """Evolve a point-mass initial pattern for t brickwork layers.

    Parameters
    ----------
    init : OccupationPattern
        Initial occupation pattern; its length fixes the chain size N.
    t : int
        Number of brickwork layers (see module docstring for parity).
    model : QuditModel

    Returns
    -------
    DenseState
    """
    n = init.n_sites
    if n > MAX_SITES:
        raise ValueError(f"N = {n} exceeds the dense-evolution guard ({MAX_SITES})")
    if n < 2:
        raise ValueError("need at least two sites")
    if t < 0:
        raise ValueError("t must be non-negative")
    p = np.zeros((2,) * n)
    p[init.bits] = 1.0
    p = _evolve_tensor(p, t, build_gate(model).matrix)
    return DenseState(n, p.reshape(-1))


_POPCOUNT_CACHE: dict[int, np.ndarray] = {}


def _popcounts(n: int) -> np.ndarray:
    pc = _POPCOUNT_CACHE.get(n)
    if pc is None:
        idx = np.arange(1 << n, dtype=np.uint64)
        pc = np.zeros(1 << n, dtype=np.int64)
        for b in range(n):
            pc += ((idx >> np.uint64(b)) & np.uint64(1)).astype(np.int64)
        _POPCOUNT_CACHE[n] = pc
    return pc


def weights_from_dense(state: DenseState) -> WeightDistribution:
    """Exact weight distribution pi(w) from a dense state."""
    pi = np.bincount(
        _popcounts(state.n_sites), weights=state.probs, minlength=state.n_sites + 1
    )
    return WeightDistribution(pi, tol=1e-12)


def site_marginals(state: DenseState) -> np.ndarray:
    """Per-site occupation probability, shape (N,)."""
    p = _as_tensor(state)
    out = np.empty(state.n_sites)
    for i in range(state.n_sites):
        axes = tuple(j for j in range(state.n_sites) if j != i)
        out[i] = p.sum(axis=axes)[1]
    return out


def bulk_marginal_dense(n_sites: int, t: int, model: QuditModel, site: int | None = None) -> float:
    """Occupation probability of one site of a fully packed chain after t layers.

    Dedicated oracle for bulk-density cross-checks; it tolerates larger N
    than evolve_dense (memory, not time, is the binding constraint) but
    returns only the single marginal instead of the full state.
    """
    return float(bulk_marginal_curve_dense(n_sites, t, model, site)[-1])


def bulk_marginal_curve_dense(
    n_sites: int, t_max: int, model: QuditModel, site: int | None = None
) -> np.ndarray:
    """Single-site occupation of a fully packed chain after 0..t_max layers.

    One incremental pass, so checking a whole depth range costs the same
    as the deepest point alone.
    """
    if n_sites > _MAX_SITES_ORACLE:
        raise ValueError(f"N = {n_sites} exceeds the oracle guard ({_MAX_SITES_ORACLE})")
    if t_max < 0:
        raise ValueError("t_max must be non-negative")
    if site is None:
        site = n_sites // 2
    axes = tuple(j for j in range(n_sites) if j != site)
    gate = build_gate(model).matrix
    p = np.zeros((2,) * n_sites)
    p[(1,) * n_sites] = 1.0
    out = np.empty(t_max + 1)
    out[0] = 1.0
    for layer in range(t_max):
        p = _apply_layer(p, layer, gate)
        out[layer + 1] = p.sum(axis=axes)[1]
    return out
