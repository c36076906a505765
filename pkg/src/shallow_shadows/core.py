"""Core types and formulas for shadow-norm estimation.

The sample complexity of estimating a Pauli observable from randomized
shallow-circuit measurements is controlled by a single scalar

    lambda = sum_w pi(w) * (q + 1)**(-w),

where pi(w) is the circuit-averaged distribution of the operator's
occupation weight w (number of non-identity sites) just before the
product measurement, and q is the local qudit dimension.  The squared
shadow norm is 1 / lambda.  Everything downstream (exact enumeration,
Monte Carlo, walker analytics, mean-field, iMPS) produces a pi(w) or a
lambda, so the conversions live here and are done in log space: at
operator sizes k ~ 1000 the linear numbers under/overflow float64.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "QuditModel",
    "WeightDistribution",
    "OccupationPattern",
    "ShadowNormCurve",
    "lambda_from_weights",
    "log_lambda_from_weights",
    "shadow_norm_sq",
    "log_shadow_norm_sq",
    "factor_shadow_norm",
]

_NORM_TOL = 1e-9  # external pi inputs may carry this much normalization dust


@dataclass(frozen=True)
class QuditModel:
    """Local dimension q and gate dilution epsilon of the measurement circuit.

    epsilon is the probability that a given brickwork bond carries a
    Haar-random two-site gate; with probability 1 - epsilon the bond is
    skipped (identity).  epsilon = 1 is the clean brickwork circuit.
    """

    q: int
    epsilon: float = 1.0

    def __post_init__(self):
        if not isinstance(self.q, (int, np.integer)) or self.q < 2:
            raise ValueError(f"q must be an integer >= 2, got {self.q!r}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")

    @property
    def a(self) -> float:
        """Single-site survival weight 1 / (q^2 + 1) of the averaged gate."""
        return 1.0 / (self.q * self.q + 1.0)


class WeightDistribution:
    """Probability distribution over occupation weights 0..n_max.

    Thin wrapper around a dense float vector; validates positivity and
    normalization on construction.  Engines hand these around instead of
    bare arrays so the normalization contract is checked once.
    """

    __slots__ = ("probs",)

    def __init__(self, probs, tol: float = _NORM_TOL):
        p = np.asarray(probs, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("weight distribution must be a non-empty 1d vector")
        if np.any(p < -1e-12):
            raise ValueError("weight distribution has negative entries")
        total = p.sum()
        if abs(total - 1.0) > tol:
            raise ValueError(f"weight distribution not normalized: sum = {total!r}")
        self.probs = np.clip(p, 0.0, None)

    @property
    def n_max(self) -> int:
        return self.probs.size - 1

    def mean_weight(self) -> float:
        return float(np.arange(self.probs.size) @ self.probs)

    @classmethod
    def point_mass(cls, w: int, n_max: int) -> "WeightDistribution":
        if not 0 <= w <= n_max:
            raise ValueError("point mass outside support")
        p = np.zeros(n_max + 1)
        p[w] = 1.0
        return cls(p)

    def __repr__(self):
        return f"WeightDistribution(n_max={self.n_max}, mean={self.mean_weight():.4f})"


@dataclass(frozen=True)
class OccupationPattern:
    """Binary occupation string: 1 marks a non-identity (occupied) site."""

    bits: tuple

    def __post_init__(self):
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError("pattern bits must be 0 or 1")

    @classmethod
    def from_iterable(cls, bits) -> "OccupationPattern":
        return cls(tuple(int(b) for b in bits))

    @classmethod
    def contiguous(cls, k: int, n: int | None = None, start: int = 0) -> "OccupationPattern":
        """k occupied sites in a row, optionally padded to n sites total."""
        if k < 1:
            raise ValueError("contiguous pattern needs k >= 1")
        n = k + start if n is None else n
        if start + k > n:
            raise ValueError("pattern does not fit")
        bits = [0] * n
        bits[start : start + k] = [1] * k
        return cls(tuple(bits))

    @property
    def n_sites(self) -> int:
        return len(self.bits)

    @property
    def weight(self) -> int:
        return sum(self.bits)

    @property
    def span(self) -> int:
        """Distance from first to last occupied site, inclusive. 0 if empty."""
        occ = [i for i, b in enumerate(self.bits) if b]
        if not occ:
            return 0
        return occ[-1] - occ[0] + 1


def log_lambda_from_weights(pi: WeightDistribution, model: QuditModel) -> float:
    """log of sum_w pi(w) (q+1)^-w, evaluated stably in log space."""
    p = pi.probs
    w = np.nonzero(p > 0.0)[0]
    if w.size == 0:
        raise ValueError("weight distribution has no support")
    logs = np.log(p[w]) - w * math.log(model.q + 1)
    hi = logs.max()
    return float(hi + math.log(np.exp(logs - hi).sum()))


def lambda_from_weights(pi: WeightDistribution, model: QuditModel) -> float:
    """sum_w pi(w) (q+1)^-w.  Lies in (0, 1] for normalized pi."""
    return math.exp(log_lambda_from_weights(pi, model))


def shadow_norm_sq(lam: float) -> float:
    """Squared shadow norm 1 / lambda."""
    if lam <= 0.0:
        raise ValueError(f"lambda must be positive, got {lam}")
    return 1.0 / lam


def log_shadow_norm_sq(log_lam: float) -> float:
    """log squared shadow norm from log lambda; trivially -log_lam, kept
    as a named operation so call sites read as physics."""
    return -log_lam


def factor_shadow_norm(components) -> float:
    """Product of squared shadow norms of spatially disjoint components."""
    comps = list(components)
    if not comps:
        raise ValueError("factor_shadow_norm needs at least one component")
    if any(c <= 0.0 for c in comps):
        raise ValueError("squared shadow norms must be positive")
    return float(np.prod(comps))


@dataclass
class ShadowNormCurve:
    """log ||O||_sh^2 as a function of circuit depth, one engine, one model.

    rows: list of (k, t, log_shadow_norm_sq) with integer k, t.
    """

    engine: str
    q: int
    epsilon: float
    rows: list = field(default_factory=list)

    def add(self, k: int, t: int, log_norm_sq: float):
        self.rows.append((int(k), int(t), float(log_norm_sq)))

    def at(self, k: int):
        """(t, log_norm) arrays for one operator size, sorted by t."""
        sub = sorted((t, v) for kk, t, v in self.rows if kk == k)
        t = np.array([s[0] for s in sub])
        v = np.array([s[1] for s in sub])
        return t, v

    def optimal_depth(self, k: int) -> int:
        t, v = self.at(k)
        if t.size == 0:
            raise ValueError(f"no entries for k={k}")
        return int(t[np.argmin(v)])

    def refined_optimal_depth(self, k: int) -> float:
        """Continuous minimizer estimate from the sampled curve.

        The curve lives on integer depths but the true optimum does
        not; a parabola through the discrete argmin and its neighbors
        removes most of the half-layer rounding bias, which matters
        when fitting depth-scaling laws.  Falls back to the integer
        argmin at a grid edge or on a locally flat curve.
        """
        t, v = self.at(k)
        if t.size == 0:
            raise ValueError(f"no entries for k={k}")
        i = int(np.argmin(v))
        if i == 0 or i == t.size - 1:
            return float(t[i])
        den = v[i - 1] - 2.0 * v[i] + v[i + 1]
        if den <= 0.0:
            return float(t[i])
        return float(t[i] + 0.5 * (v[i - 1] - v[i + 1]) / den)

    def to_csv(self) -> str:
        lines = ["engine,q,epsilon,k,t,log_shadow_norm_sq"]
        for k, t, v in self.rows:
            lines.append(f"{self.engine},{self.q},{self.epsilon!r},{k},{t},{v!r}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(
            {
                "engine": self.engine,
                "q": self.q,
                "epsilon": self.epsilon,
                "rows": [
                    {"k": k, "t": t, "log_shadow_norm_sq": v} for k, t, v in self.rows
                ],
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "ShadowNormCurve":
        data = json.loads(text)
        curve = cls(data["engine"], data["q"], data["epsilon"])
        for row in data["rows"]:
            curve.add(row["k"], row["t"], row["log_shadow_norm_sq"])
        return curve
