"""Domain-wall walker analytics for the 1D brickwork circuit.

Backward evolution of the measurement boundary maps the occupation
dynamics of a single hole (identity site) onto two domain walls that
random-walk and annihilate on first meeting.  A wall sitting on a gated
bond steps toward the hole domain with probability eps*a, away with
eps*(1-a), and freezes for two layers with probability 1-eps (the bond
carried no gate, and its parity is revisited only every other layer).
This gives, for the relative coordinate, a generalized Motzkin walk
whose flat steps span two time units, with weights

    p_plus = eps (1 - a),   p_minus = eps a,   p_zero = 1 - eps.

First-return probabilities m_t obey

    m_0 = 1,   m_t = p_0 m_{t-1} + p_+ p_- sum_{j<t} m_j m_{t-1-j},

annihilation at relative-step time 2t+1 carries probability p_- m_t,
and at eps=1 the series collapses to the Catalan closed form
m_t = C_t (a(1-a))^t.  In circuit layers, the relative coordinate takes
one step in the first layer and two per layer afterwards, so the
annihilation event of index tau lands in layer tau + 1; bulk_density
builds the survival probability from that correspondence and is checked
against the dense Markov oracle to 1e-9.

The module also carries the velocity scales of the diluted circuit:
the front (butterfly) velocity v_B, the entanglement-like decay rate
v_E of the weighted endpoint sum, and the saddle-point velocity v_B^sp
fitted from the endpoint walk, all per circuit layer.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import QuditModel

__all__ = [
    "MotzkinSeries",
    "VelocityTable",
    "annihilation_prob",
    "motzkin_series",
    "bulk_density",
    "bulk_density_curve",
    "gamma_fit",
    "gamma_fit_free_power",
    "butterfly_velocity",
    "entanglement_velocity",
    "saddle_butterfly_velocity",
    "endpoint_mean_displacement_rate",
    "relaxation_amplitude",
    "velocity_table",
]


# ----------------------------------------------------------------------
# Catalan closed form (eps = 1)
# ----------------------------------------------------------------------

def _log_catalan(tau: int) -> float:
    # C_tau = (2 tau)! / (tau! (tau+1)!)
    return math.lgamma(2 * tau + 1) - math.lgamma(tau + 1) - math.lgamma(tau + 2)


def _log_annihilation(tau: int, a: float) -> float:
    return (tau + 1) * math.log(a) + tau * math.log1p(-a) + _log_catalan(tau)


def annihilation_prob(tau: int, model: QuditModel) -> float:
    """P(walls first meet at relative-step time 2 tau + 1), clean circuit.

    Equals a^(tau+1) (1-a)^tau C_tau; evaluated through lgamma so large
    tau neither overflows the Catalan number nor underflows the weights.
    """
    if model.epsilon != 1.0:
        raise ValueError("closed form requires epsilon = 1; use motzkin_series")
    if tau < 0:
        raise ValueError("tau must be non-negative")
    return math.exp(_log_annihilation(tau, model.a))


# ----------------------------------------------------------------------
# Motzkin recursion, rescaled against underflow
# ----------------------------------------------------------------------

@dataclass
class MotzkinSeries:
    """First-return series m_0..m_T with its step weights.

    log_m is the stable representation (m_t decays like e^{-gamma t} and
    underflows float64 near t ~ 700/gamma); the m property exponentiates
    and may flush to zero for very long horizons.
    """

    log_m: np.ndarray
    p_plus: float
    p_minus: float
    p_zero: float

    @property
    def m(self) -> np.ndarray:
        return np.exp(self.log_m)

    @property
    def horizon(self) -> int:
        return self.log_m.size - 1


def _asymptotic_scale(p_zero: float, pp: float) -> float:
    """Per-step decay factor r with m_t ~ r^t, from the generating function.

    The generating function M(z) = 1 + p_0 z M + p_+ p_- z M^2 has its
    branch point at the smaller root of p_0^2 z^2 - (2 p_0 + 4 p_+ p_-) z + 1,
    so r = 1/z_c.  Used only to condition the recursion (any r gives the
    same series exactly); gamma is still measured by fitting.
    """
    if pp <= 0.0:
        return 1.0
    if p_zero == 0.0:
        return 4.0 * pp
    b = 2.0 * p_zero + 4.0 * pp
    disc = b * b - 4.0 * p_zero * p_zero
    z_c = (b - math.sqrt(disc)) / (2.0 * p_zero * p_zero)
    return 1.0 / z_c


def motzkin_series(T: int, model: QuditModel) -> MotzkinSeries:
    """Evaluate the diluted first-return recursion up to horizon T."""
    if T < 0:
        raise ValueError("horizon must be non-negative")
    eps, a = model.epsilon, model.a
    p_plus, p_minus, p_zero = eps * (1.0 - a), eps * a, 1.0 - eps
    pp = p_plus * p_minus
    r = _asymptotic_scale(p_zero, pp)
    log_r = math.log(r)
    # s_t = m_t / r^t stays O(t^{-3/2}); the recursion transforms exactly.
    s = np.zeros(T + 1)
    s[0] = 1.0
    for t in range(1, T + 1):
        conv = float(np.dot(s[:t], s[t - 1 :: -1]))
        s[t] = (p_zero * s[t - 1] + pp * conv) / r
    log_m = np.log(s) + np.arange(T + 1) * log_r
    return MotzkinSeries(log_m, p_plus, p_minus, p_zero)


def _cumulative_annihilation(t: int, model: QuditModel) -> float:
    """Probability that the walls have met within the first t layers.

    Index tau of the first-return series corresponds to circuit layer
    tau + 1 (one relative step in the first layer, two per layer after),
    so layers 1..t collect tau = 0..t-1.
    """
    if t <= 0:
        return 0.0
    if model.epsilon == 1.0:
        a = model.a
        return float(sum(math.exp(_log_annihilation(tau, a)) for tau in range(t)))
    series = motzkin_series(t - 1, model)
    return float(model.epsilon * model.a * np.exp(series.log_m).sum())


def bulk_density(t: int, model: QuditModel) -> float:
    """Survival probability of a bulk site's hole pair up to depth t.

    Equals the occupation marginal of any bulk site of a fully packed
    chain after t brickwork layers; tends to 1 - q^{-2}.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    return 1.0 - _cumulative_annihilation(t, model)


def bulk_density_curve(t_max: int, model: QuditModel) -> np.ndarray:
    """bulk_density evaluated for every t in 0..t_max (single recursion pass)."""
    if t_max < 0:
        raise ValueError("t_max must be non-negative")
    if t_max == 0:
        return np.ones(1)
    series = motzkin_series(t_max - 1, model)
    terms = model.epsilon * model.a * np.exp(series.log_m)
    out = np.empty(t_max + 1)
    out[0] = 1.0
    out[1:] = 1.0 - np.cumsum(terms)
    return out


# ----------------------------------------------------------------------
# gamma from the series
# ----------------------------------------------------------------------

def _fit_window(series: MotzkinSeries, window) -> np.ndarray:
    T = series.horizon
    if window is None:
        window = (T // 2, T)
    t_min, t_max = int(window[0]), int(window[1])
    if t_max > T:
        raise ValueError(f"window end {t_max} beyond horizon {T}")
    t = np.arange(max(t_min, 1), t_max + 1)
    if t.size < 20:
        raise ValueError("fit window too short (< 20 points)")
    return t


def gamma_fit(series: MotzkinSeries, window=None) -> float:
    """Decay rate gamma from ln m_t + (3/2) ln t over the window.

    The universal t^{-3/2} prefactor is divided out before the linear
    fit; window defaults to the upper half of the horizon.
    """
    t = _fit_window(series, window)
    y = series.log_m[t] + 1.5 * np.log(t)
    slope = np.polyfit(t, y, 1)[0]
    return float(-slope)


def gamma_fit_free_power(series: MotzkinSeries, window=None):
    """Cross-check fit ln m_t = c - gamma t - p ln t with the power free.

    Returns (gamma, p); p should come out near 1.5.
    """
    t = _fit_window(series, window)
    y = series.log_m[t]
    A = np.stack([t.astype(float), np.log(t), np.ones_like(t, dtype=float)], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(-coef[0]), float(-coef[1])


# ----------------------------------------------------------------------
# velocity scales
# ----------------------------------------------------------------------

def butterfly_velocity(model: QuditModel) -> float:
    """Front velocity of the operator endpoint, sites per layer."""
    q, eps = model.q, model.epsilon
    return eps / (2.0 - eps) * (q * q - 1.0) / (q * q + 1.0)


def entanglement_velocity(model: QuditModel) -> float:
    """Decay rate of the endpoint generating sum, from the quadratic
    1 = (1-eps) g^2 + eps (2q/(q^2+1)) g with g = q^{v_E}."""
    q, eps = model.q, model.epsilon
    if eps <= 0.0:
        raise ValueError("entanglement velocity undefined at epsilon = 0")
    b = 2.0 * q / (q * q + 1.0)
    if eps == 1.0:
        g = 1.0 / b
    else:
        g = (-eps * b + math.sqrt(eps * eps * b * b + 4.0 * (1.0 - eps))) / (
            2.0 * (1.0 - eps)
        )
    return math.log(g) / math.log(q)


def _endpoint_evolution(model: QuditModel, t_max: int):
    """Distribution of the operator's right endpoint under the gated walk.

    Position x is gated in layers of matching parity: when x + t is even
    the endpoint may extend (+1 w.p. eps(1-a)); otherwise the bond behind
    it is gated and the endpoint may retract (-1 w.p. eps*a).  Returns
    (weighted_sums, means): q^{-x}-weighted sums and mean positions,
    indexed by t = 0..t_max.
    """
    eps, a, q = model.epsilon, model.a, model.q
    p_ext, p_ret = eps * (1.0 - a), eps * a
    u = 1.0 / q
    size = 2 * t_max + 5
    origin = t_max + 2
    x = np.arange(size) - origin
    p = np.zeros(size)
    p[origin] = 1.0
    # w(x) = p(x) q^{-x} evolved in place: a q^{-x} lookup table would
    # overflow at deep negative x where p has underflowed to zero.
    w = p.copy()
    sums = np.empty(t_max + 1)
    means = np.empty(t_max + 1)
    sums[0] = 1.0
    means[0] = 0.0
    def step(arr, even, odd, ext_factor, ret_factor):
        nxt = np.zeros_like(arr)
        nxt[1:][even[:-1]] += arr[:-1][even[:-1]] * ext_factor
        nxt[even] += arr[even] * (1.0 - p_ext)
        nxt[:-1][odd[1:]] += arr[1:][odd[1:]] * ret_factor
        nxt[odd] += arr[odd] * (1.0 - p_ret)
        return nxt

    for t in range(1, t_max + 1):
        even = (x + (t - 1)) % 2 == 0
        odd = ~even
        p = step(p, even, odd, p_ext, p_ret)
        w = step(w, even, odd, p_ext * u, p_ret / u)
        sums[t] = float(w.sum())
        means[t] = float(p @ x)
    return sums, means


def saddle_butterfly_velocity(model: QuditModel, t_max: int = 600, window=None) -> float:
    """v_B^sp from the decay of sum_x p_t(x) q^{-x} ~ q^{-v t}.

    Fitted on even t (the brickwork parity gives the sum a period-2
    modulation) over the upper half of the horizon by default.
    """
    if t_max < 100:
        raise ValueError("need t_max >= 100 for a stable fit")
    sums, _ = _endpoint_evolution(model, t_max)
    if window is None:
        window = (t_max // 2, t_max)
    t = np.arange(window[0] + window[0] % 2, window[1] + 1, 2)
    y = np.log(sums[t])
    slope, intercept = np.polyfit(t, y, 1)
    resid = y - (slope * t + intercept)
    if np.max(np.abs(resid)) > 1e-3:
        warnings.warn(
            f"endpoint-sum fit residual {np.max(np.abs(resid)):.2e} above 1e-3",
            stacklevel=2,
        )
    return float(-slope / math.log(model.q))


def endpoint_mean_displacement_rate(model: QuditModel, t_max: int = 400) -> float:
    """Late-time drift of the endpoint, sites per layer; tends to v_B."""
    _, means = _endpoint_evolution(model, t_max)
    half = t_max // 2
    return float((means[t_max] - means[half]) / (t_max - half))


# ----------------------------------------------------------------------
# relaxation amplitude of the bulk density tail
# ----------------------------------------------------------------------

def relaxation_amplitude(model: QuditModel, t_max: int = 300, window=None) -> float:
    """Amplitude c of bulk density ~ 1 - q^{-2} + c t^{-3/2} e^{-gamma t}.

    The residual above the plateau is the annihilation tail, accumulated
    in log space from the far end to dodge the cancellation that kills a
    naive (density - plateau) at large t.
    """
    margin = 200  # tail terms beyond the window still summed explicitly
    series = motzkin_series(t_max + margin, model)
    gamma = gamma_fit(series)
    log_terms = math.log(model.epsilon * model.a) + series.log_m
    # log_tail[tau] = log sum_{j >= tau} exp(log_terms[j])
    log_tail = np.logaddexp.accumulate(log_terms[::-1])[::-1]
    if window is None:
        window = (max(t_max // 2, 10), t_max)
    # survival deficit after layer t is the tail from tau = t onward
    t = np.arange(window[0], window[1] + 1)
    log_c = log_tail[t] + 1.5 * np.log(t) + gamma * t
    return float(np.exp(log_c.mean()))


# ----------------------------------------------------------------------
# table over a dilution grid
# ----------------------------------------------------------------------

@dataclass
class VelocityTable:
    """gamma, v_B, v_E, v_B^sp on an epsilon grid at fixed q."""

    q: int
    epsilon_grid: np.ndarray
    gamma: np.ndarray = field(default_factory=lambda: np.empty(0))
    v_B: np.ndarray = field(default_factory=lambda: np.empty(0))
    v_E: np.ndarray = field(default_factory=lambda: np.empty(0))
    v_B_sp: np.ndarray = field(default_factory=lambda: np.empty(0))

    def identity_residuals(self):
        """(|v_E - gamma/(2 ln q)|, |v_B_sp - v_E|) arrays for the grid."""
        ref = self.gamma / (2.0 * math.log(self.q))
        return np.abs(self.v_E - ref), np.abs(self.v_B_sp - self.v_E)

    def to_csv(self) -> str:
        lines = ["q,epsilon,gamma,v_B,v_E,v_B_sp"]
        for i, eps in enumerate(self.epsilon_grid):
            lines.append(
                f"{self.q},{float(eps)!r},{float(self.gamma[i])!r},"
                f"{float(self.v_B[i])!r},{float(self.v_E[i])!r},"
                f"{float(self.v_B_sp[i])!r}"
            )
        return "\n".join(lines) + "\n"


def velocity_table(
    q: int,
    epsilon_grid,
    motzkin_horizon: int = 3000,
    endpoint_horizon: int = 600,
) -> VelocityTable:
    """Sweep the dilution grid and collect all four velocity scales."""
    eps_grid = np.asarray(list(epsilon_grid), dtype=float)
    if np.any(eps_grid <= 0.0):
        raise ValueError("velocity table needs epsilon > 0")
    n = eps_grid.size
    out = VelocityTable(q, eps_grid, np.empty(n), np.empty(n), np.empty(n), np.empty(n))
    for i, eps in enumerate(eps_grid):
        model = QuditModel(q, float(eps))
        out.gamma[i] = gamma_fit(motzkin_series(motzkin_horizon, model))
        out.v_B[i] = butterfly_velocity(model)
        out.v_E[i] = entanglement_velocity(model)
        out.v_B_sp[i] = saddle_butterfly_velocity(model, endpoint_horizon)
    return out
