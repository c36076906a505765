"""Closed-form saddle-point model of the shadow norm.

After the bulk density has relaxed to n(t) = 1 - q^{-2} + c f(t) with
f(t) = t^{-3/2} e^{-gamma t}, the weight average defining the shadow
norm is dominated by rare low-density histories.  Evaluating the
average over independent site occupations gives a "saddle" density
n_sp below equilibrium and the explicit norm estimate

    log |O|^2 = -k ln(1/q - q c f(t)/(q+1)) + 2 v_sp(t) t ln q,

where the endpoint-walk factor q^{2 v_sp t} accounts for support
spreading.  Jensen's inequality gives the companion upper bound
(q+1)^{mean weight}.  Both are minimized near the same depth

    t* = gamma^{-1} (ln k - 3/2 ln t*) + const,

solved here by damped fixed-point iteration.  None of this is exact;
the point of the module is a cheap closed-form curve to compare with
the transfer-matrix engine and the depth heuristic behind it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import QuditModel, ShadowNormCurve
from .walkers import (
    butterfly_velocity,
    gamma_fit,
    motzkin_series,
    relaxation_amplitude,
)

__all__ = [
    "MeanFieldParams",
    "relaxation_profile",
    "saddle_density",
    "saddle_velocity",
    "meanfield_shadow_norm",
    "jensen_upper_bound",
    "optimal_depth",
]


@dataclass(frozen=True)
class MeanFieldParams:
    """Inputs of the closed-form model: relaxation amplitude and rate,
    butterfly velocity, and the underlying circuit model."""

    model: QuditModel
    c: float
    gamma: float
    v_B: float

    def __post_init__(self):
        if not (self.c > 0 and self.gamma > 0 and self.v_B > 0):
            raise ValueError("mean-field parameters must be positive")

    @property
    def saddle_velocity_source(self) -> str:
        """Whether the spreading factor is the clean closed form or the
        diluted-walk substitute (recorded in CLI metadata)."""
        if self.model.epsilon == 1.0:
            return "clean closed form"
        return "diluted walker fit, constant in t"

    @classmethod
    def from_model(cls, model: QuditModel, motzkin_horizon: int = 3000) -> "MeanFieldParams":
        """Fill parameters from the walker analytics.

        Clean circuits use the analytic values gamma = -ln(4a(1-a)) and
        c = a / (sqrt(pi) gamma); diluted ones fit both from the
        first-return series.
        """
        if model.epsilon <= 0.0:
            raise ValueError("mean-field model needs epsilon > 0")
        a = model.a
        if model.epsilon == 1.0:
            gamma = -math.log(4.0 * a * (1.0 - a))
            c = a / (math.sqrt(math.pi) * gamma)
        else:
            gamma = gamma_fit(motzkin_series(motzkin_horizon, model))
            # push the fit window deep into the asymptotic regime
            horizon = int(min(max(300.0, 60.0 / gamma), 6000.0))
            c = relaxation_amplitude(model, t_max=horizon)
        return cls(model, c, gamma, butterfly_velocity(model))


def relaxation_profile(t, gamma: float):
    """f(t) = t^{-3/2} e^{-gamma t}, the bulk-density relaxation shape."""
    t = np.asarray(t, dtype=float)
    out = t**-1.5 * np.exp(-gamma * t)
    return float(out) if out.ndim == 0 else out


def _density_depletion(t: float, params: MeanFieldParams) -> float:
    """1 - q^2 c f(t) / (q+1), the argument of the saddle logarithms."""
    q = params.model.q
    return 1.0 - q * q * params.c * relaxation_profile(t, params.gamma) / (q + 1.0)


def saddle_density(t: float, params: MeanFieldParams) -> float:
    """Occupation density dominating the shadow-norm average.

    Approaches ln(q)/ln(q+1) from above as the relaxation correction
    dies out; always below the equilibrium density 1 - q^{-2}.
    """
    if t <= 0:
        raise ValueError("saddle density needs t > 0")
    q = params.model.q
    arg = _density_depletion(t, params)
    if arg <= 0.0:
        raise ValueError(f"depth t={t} too shallow for the saddle form (log argument {arg:.3g})")
    return (math.log(q) - math.log(arg)) / math.log(q + 1.0)


def saddle_velocity(t: float, params: MeanFieldParams) -> float:
    """Effective spreading speed weighting the norm's endpoint sum.

    Clean circuits: v(t) = -log_q(a g + (1-a)/g) with g = (q+1)^{n_sp(t)},
    which relaxes onto v_E.  Diluted circuits have no closed endpoint
    sum; we substitute the t-independent identity value gamma/(2 ln q)
    (equal to the fitted v_B^sp, see the walker tests).
    """
    model = params.model
    if model.epsilon != 1.0:
        return params.gamma / (2.0 * math.log(model.q))
    q, a = model.q, model.a
    g = (q + 1.0) ** saddle_density(t, params)
    return -math.log(a * g + (1.0 - a) / g) / math.log(q)


def meanfield_shadow_norm(k: int, t: float, params: MeanFieldParams) -> float:
    """log |O|^2 for a weight-k contiguous operator in the saddle model.

    Valid when the operator is much longer than the spread depth; the
    k > 4t guard keeps callers inside the regime where the two endpoint
    walks are independent.
    """
    if k <= 4 * t:
        raise ValueError(f"saddle model needs k > 4t (got k={k}, t={t})")
    q = params.model.q
    arg = _density_depletion(t, params) / q
    if arg <= 0.0:
        raise ValueError(f"depth t={t} too shallow for the saddle form")
    return -k * math.log(arg) + 2.0 * saddle_velocity(t, params) * t * math.log(q)


def jensen_upper_bound(k: int, t: float, params: MeanFieldParams) -> float:
    """log of the convexity bound (q+1)^{mean weight}.

    Mean weight = support length (k plus two fronts) times bulk density.
    The density form 1 - q^{-2} + c f(t) exceeds full packing at very
    small t, outside its validity; it is capped at 1, which keeps the
    bound correct (weight can never exceed the support length).
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    q = params.model.q
    if t == 0:
        return k * math.log(q + 1.0)
    density = 1.0 - 1.0 / q**2 + params.c * relaxation_profile(t, params.gamma)
    mean_weight = (k + 2.0 * params.v_B * t) * min(density, 1.0)
    return mean_weight * math.log(q + 1.0)


def optimal_depth(
    k: int,
    params: MeanFieldParams | None = None,
    mode: str = "bound",
    const: float = 0.0,
    curve: ShadowNormCurve | None = None,
) -> float:
    """Twirling depth minimizing the norm estimate.

    Modes "bound" and "meanfield" share one stationarity condition
    (their minimizers differ only at O(1)) and solve

        t = (ln k - 3/2 ln t) / gamma + const

    by damped iteration.  Mode "curve-argmin" instead reads the argmin
    off a computed ShadowNormCurve, the honest choice when an engine
    sweep is available.
    """
    if mode == "curve-argmin":
        if curve is None:
            raise ValueError("curve-argmin mode needs a ShadowNormCurve")
        return float(curve.optimal_depth(k))
    if mode not in ("bound", "meanfield"):
        raise ValueError(f"unknown mode {mode!r}")
    if params is None:
        raise ValueError("bound/meanfield modes need MeanFieldParams")
    if k < 10:
        raise ValueError("depth heuristic needs k >= 10")
    gamma = params.gamma
    log_k = math.log(k)
    t = log_k / gamma
    for _ in range(200):
        proposal = (log_k - 1.5 * math.log(t)) / gamma + const
        new = 0.5 * t + 0.5 * proposal
        if new <= 0:
            new = t / 2.0
        if abs(new - t) < 1e-10:
            t = new
            break
        t = new
    residual = abs((log_k - 1.5 * math.log(t)) / gamma + const - t)
    if residual > 1e-8:
        raise RuntimeError(
            f"depth fixed point did not converge (residual {residual:.2e}); "
            "the damped iteration is unstable for small gamma, use curve-argmin"
        )
    return t
