"""All-to-all (Brownian) model of occupation-weight dynamics.

n qudits; each update step applies a Haar-random gate to a uniformly
chosen pair with probability epsilon, and one time unit is n update
steps.  Permutation symmetry closes the dynamics on the weight w alone,
giving a birth-death master equation

    dpi_w/dt = r [ c1 ((w-1)(n-w+1) pi_{w-1} - w(n-w) pi_w)
                 + c2 (C(w+1,2) pi_{w+1} - C(w,2) pi_w) ],

with r = n eps / C(n,2), c1 = (q^2-1)/(q^2+1) the per-event growth
probability of a mixed pair and c2 = 2/(q^2+1) the annihilation
probability of an occupied pair.  The w = 1 state has no decay channel,
so a traceless operator never develops identity weight.

For w << n the decay term and the (n-w) saturation drop out and the
remaining pure-growth chain is solved exactly by

    lambda(k, t) = (1 + q e^{Lambda t})^{-k},  Lambda = 2 eps (q^2-1)/(q^2+1).

integrate() evolves the full equation; integrate_dilute() evolves the
pure-growth chain (the regime the closed form solves), which is what a
fixed-step integrator should be validated against.  At finite n the full
equation departs from the closed form quickly: lambda is dominated by
rare weight-decreasing histories the dilute limit does not have, and by
t ~ 5 (n = 100, k = 4, q = 2) the two differ by orders of magnitude.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .core import QuditModel, WeightDistribution, log_lambda_from_weights

__all__ = [
    "BrownianState",
    "RegimeMap",
    "weight_growth_rate",
    "rhs",
    "integrate",
    "integrate_dilute",
    "closed_form_lambda",
    "closed_form_log_norm",
    "log_shadow_norm",
    "equilibrium_weights",
    "regime_map",
    "trajectory_csv",
]

_NEG_TOL = 1e-10   # RK4 undershoot beyond this aborts the run
_NORM_TOL = 1e-8   # allowed normalization drift along a trajectory


def weight_growth_rate(model: QuditModel) -> float:
    """Dilute-limit growth rate Lambda = 2 eps (q^2 - 1) / (q^2 + 1)."""
    q2 = model.q * model.q
    return 2.0 * model.epsilon * (q2 - 1.0) / (q2 + 1.0)


@dataclass
class BrownianState:
    """Weight distribution pi over w = 0..n at time t."""

    pi: np.ndarray
    n: int
    t: float
    model: QuditModel

    def __post_init__(self):
        p = np.asarray(self.pi, dtype=float)
        if p.shape != (self.n + 1,):
            raise ValueError(f"pi must have length n + 1 = {self.n + 1}")
        if p.min() < -_NEG_TOL:
            raise ValueError(f"negative probability {p.min()!r} in state")
        total = p.sum()
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"state not normalized: sum = {total!r}")
        self.pi = np.clip(p, 0.0, None)

    def mean_weight(self) -> float:
        return float(np.arange(self.n + 1) @ self.pi)


def _full_rates(n: int, model: QuditModel):
    """(up, down) rate vectors of the full birth-death generator."""
    a = model.a
    r = 2.0 * model.epsilon / (n - 1.0)
    w = np.arange(n + 1, dtype=float)
    up = r * (1.0 - 2.0 * a) * w * (n - w)
    down = r * (2.0 * a) * w * (w - 1.0) / 2.0
    return up, down


def _dilute_rates(w_max: int, model: QuditModel):
    lam = weight_growth_rate(model)
    up = lam * np.arange(w_max + 1, dtype=float)
    up[w_max] = 0.0  # reflecting cap keeps the truncated chain stochastic
    return up, np.zeros(w_max + 1)


def _apply_generator(up: np.ndarray, down: np.ndarray, pi: np.ndarray) -> np.ndarray:
    out = -(up + down) * pi
    out[1:] += up[:-1] * pi[:-1]
    out[:-1] += down[1:] * pi[1:]
    return out


def rhs(state: BrownianState) -> np.ndarray:
    """Right-hand side of the full master equation at the given state."""
    up, down = _full_rates(state.n, state.model)
    return _apply_generator(up, down, state.pi)


def _integrate(up, down, init_k, n, model, t_end, dt, sample_every):
    if not 1 <= init_k <= n:
        raise ValueError(f"init_k must lie in [1, {n}], got {init_k}")
    if dt <= 0.0 or t_end < 0.0:
        raise ValueError("need dt > 0 and t_end >= 0")
    n_steps = int(round(t_end / dt))
    if abs(n_steps * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise ValueError("t_end must be a whole number of steps")
    if sample_every < 1:
        raise ValueError("sample_every must be positive")
    pi = np.zeros(n + 1)
    pi[init_k] = 1.0
    out = [BrownianState(pi.copy(), n, 0.0, model)]
    for step in range(1, n_steps + 1):
        k1 = _apply_generator(up, down, pi)
        k2 = _apply_generator(up, down, pi + 0.5 * dt * k1)
        k3 = _apply_generator(up, down, pi + 0.5 * dt * k2)
        k4 = _apply_generator(up, down, pi + dt * k3)
        pi = pi + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if pi.min() < -_NEG_TOL:
            raise RuntimeError(
                f"negative probability {pi.min():.2e} at t={step * dt:.4f}: "
                "time step too large"
            )
        if abs(pi.sum() - 1.0) > _NORM_TOL:
            raise RuntimeError(f"normalization drift at t={step * dt:.4f}")
        if step % sample_every == 0 or step == n_steps:
            out.append(BrownianState(pi.copy(), n, step * dt, model))
    return out


def integrate(init_k, n, model, t_end, dt=1e-3, sample_every=1):
    """RK4 trajectory of the full master equation from pi = delta_{w,k}."""
    up, down = _full_rates(n, model)
    return _integrate(up, down, init_k, n, model, t_end, dt, sample_every)


def integrate_dilute(init_k, w_max, model, t_end, dt=1e-3, sample_every=1):
    """RK4 trajectory of the pure-growth (w << n) chain, capped at w_max.

    The cap only touches lambda through weights ~ (q+1)^{-w_max}, so any
    w_max comfortably above k e^{Lambda t} reproduces the closed form to
    integrator accuracy.
    """
    up, down = _dilute_rates(w_max, model)
    return _integrate(up, down, init_k, w_max, model, t_end, dt, sample_every)


def closed_form_log_norm(k: int, t: float, model: QuditModel) -> float:
    """log ||O||_sh^2 = k log(1 + q e^{Lambda t}) in the dilute limit."""
    if k < 1 or t < 0.0:
        raise ValueError("need k >= 1 and t >= 0")
    lam_t = weight_growth_rate(model) * t
    return k * float(np.logaddexp(0.0, math.log(model.q) + lam_t))


def closed_form_lambda(k: int, t: float, model: QuditModel) -> float:
    """(1 + q e^{Lambda t})^{-k}; exact for the dilute-limit chain."""
    return math.exp(-closed_form_log_norm(k, t, model))


def log_shadow_norm(state: BrownianState) -> float:
    """log ||O||_sh^2 of a trajectory sample."""
    pi = WeightDistribution(state.pi, tol=1e-7)
    return -log_lambda_from_weights(pi, state.model)


def equilibrium_weights(n: int, model: QuditModel) -> WeightDistribution:
    """Stationary distribution: binomial(n, 1 - q^{-2}) confined to w >= 1.

    Detailed balance of the birth-death rates gives
    pi(w+1)/pi(w) = (q^2 - 1)(n - w)/(w + 1), the recursion of a binomial
    with success probability 1 - q^{-2}; the w = 0 state is disconnected.
    """
    w = np.arange(n + 1, dtype=float)
    log_p = math.log1p(-1.0 / model.q**2)
    log_1mp = -2.0 * math.log(model.q)
    log_binom = (
        gammaln(n + 1.0) - gammaln(w + 1.0) - gammaln(n - w + 1.0)
        + w * log_p + (n - w) * log_1mp
    )
    pi = np.exp(log_binom - log_binom.max())
    pi[0] = 0.0
    return WeightDistribution(pi / pi.sum())


@dataclass
class RegimeMap:
    """Shape classification of the shadow-norm curve per operator size."""

    n: int
    labels: dict = field(default_factory=dict)
    optimal_depths: dict = field(default_factory=dict)

    def boundary(self, label: str):
        """(min, max) of k/n carrying the given label, or None."""
        ks = [k for k, lab in self.labels.items() if lab == label]
        if not ks:
            return None
        return min(ks) / self.n, max(ks) / self.n


def regime_map(n, model, k_grid, t_grid, dt=1e-3, dead_band=1e-6) -> RegimeMap:
    """Classify the shadow-norm curve shape for each initial weight.

    Labels: "monotone-increasing-norm" (optimal depth 0),
    "non-monotonic", "monotone-decreasing-norm".  First differences of
    the log norm on t_grid smaller than dead_band count as flat.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size < 3 or t_grid[0] != 0.0:
        raise ValueError("t_grid must start at 0 and hold at least 3 points")
    if np.any(np.diff(t_grid) <= 0.0):
        raise ValueError("t_grid must be strictly increasing")
    steps = np.round(t_grid / dt).astype(int)
    if np.max(np.abs(steps * dt - t_grid)) > 1e-9:
        raise ValueError("t_grid times must be multiples of dt")
    up, down = _full_rates(n, model)
    out = RegimeMap(n)
    for k in k_grid:
        trajectory = _integrate(up, down, int(k), n, model,
                                float(t_grid[-1]), dt, sample_every=1)
        values = np.array([log_shadow_norm(trajectory[s]) for s in steps])
        diffs = np.diff(values)
        signs = np.where(np.abs(diffs) < dead_band, 0, np.sign(diffs))
        rising, falling = bool((signs > 0).any()), bool((signs < 0).any())
        if rising and falling:
            label = "non-monotonic"
        elif falling:
            label = "monotone-decreasing-norm"
        else:
            label = "monotone-increasing-norm"
        out.labels[int(k)] = label
        out.optimal_depths[int(k)] = float(t_grid[int(np.argmin(values))])
    return out


def trajectory_csv(trajectory, init_k: int) -> str:
    """CSV of log shadow norm along a trajectory."""
    lines = ["q,epsilon,n,k,t,log_shadow_norm_sq"]
    for state in trajectory:
        m = state.model
        lines.append(
            f"{m.q},{float(m.epsilon)!r},{state.n},{init_k},"
            f"{float(state.t)!r},{float(log_shadow_norm(state))!r}"
        )
    return "\n".join(lines) + "\n"
