"""Monte-Carlo hole dynamics on a two-dimensional lattice.

A single hole cell sits in an otherwise uniform background and the circuit
applies two-site gates to nearest-neighbour pairs.  A gate on a mixed
(hole, background) pair removes the hole with probability eps*a, copies it
onto the partner cell with probability eps*(1-a), and does nothing
otherwise; gates on uniform pairs are inert.  This is the same two-outcome
rule that drives the one-dimensional pair walker, lifted to two dimensions.
We record the sub-layer at which the hole set dies out and fit the decay
rate of that distribution's exponential tail.

Schedule.  The 2D brickwork is realized as four sub-layers per time unit:

    phase 0   horizontal gates on column pairs (0,1), (2,3), ...
    phase 1   horizontal gates on column pairs (1,2), (3,4), ...
    phase 2   vertical gates on row pairs (0,1), (2,3), ...
    phase 3   vertical gates on row pairs (1,2), (3,4), ...

The gate layout in 2D is a convention of this package, so it is echoed in
every fit record.  Annihilation times are reported at sub-layer resolution;
rates per sub-layer convert to rates per time unit by multiplying by 4.

Pruning.  The live hole count changes by exactly +-1 per random gate event,
with downward odds a : (1-a), so extinction starting from s holes has
probability (a/(1-a))^s = q^(-2s) regardless of geometry or dimension.
Trials are censored once the count reaches PRUNE_HOLES; the annihilation
events thereby missed occur with probability <= q^(-2*PRUNE_HOLES) per
trial (about 4e-9 at q=2), far below Monte-Carlo resolution.  The s=1 case
of the same ruin argument pins the total annihilation probability at
exactly q^(-2), which the long-horizon runs reproduce.

Boundaries are open and runs that would leak out of the finite grid are
discarded, never binned: a trial ends with code DISCARDED the moment a new
hole lands on the grid edge.  The worst-case light cone spreads two cells
per time unit in each direction, but reaching the edge past the
L > 2*t_max + 3 margin takes a long directed filament that stays below the
prune threshold the whole way, which is exponentially unlikely (zero
events in 1e7-trial production runs); the discard counter enforces a 1%
budget regardless.  Grids with L >= 4*t_max + 5 contain even the worst
case, making results bit-identical across grid sizes.

Trials are split across a fixed number of child generator streams spawned
from the seed, so results are deterministic for a given (seed, trials,
chunks) triple and independent of how the chunks are executed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import QuditModel

__all__ = [
    "SURVIVED",
    "DISCARDED",
    "PRUNE_HOLES",
    "SUB_LAYERS_PER_UNIT",
    "SCHEDULE",
    "DomainState",
    "step_2d",
    "annihilation_times",
    "TailFit",
    "fit_annihilation_tail",
    "AnnihilationHistogram",
    "annihilation_histogram",
]

SURVIVED = -1  # censored: alive at the horizon, or pruned as all-but-immortal
DISCARDED = -2  # a new hole reached the grid edge; trial dropped from statistics

PRUNE_HOLES = 14
SUB_LAYERS_PER_UNIT = 4
SCHEDULE = "horizontal-even, horizontal-odd, vertical-even, vertical-odd"


@dataclass
class DomainState:
    """Hole configuration on a finite grid: 1 marks a hole, 0 the background."""

    grid: np.ndarray
    hole_count: int

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.int8)
        if self.grid.ndim != 2 or self.grid.size == 0:
            raise ValueError("grid must be a non-empty 2D array")
        if self.grid.min() < 0 or self.grid.max() > 1:
            raise ValueError("grid cells must be 0 (background) or 1 (hole)")
        if self.hole_count != int(self.grid.sum()):
            raise ValueError(
                f"hole_count {self.hole_count} inconsistent with grid "
                f"(actual {int(self.grid.sum())})"
            )

    @classmethod
    def single_hole(cls, rows: int, cols: int) -> "DomainState":
        if rows < 1 or cols < 1:
            raise ValueError("grid must have at least one cell")
        grid = np.zeros((rows, cols), dtype=np.int8)
        grid[rows // 2, cols // 2] = 1
        return cls(grid, 1)

    @property
    def shape(self):
        return self.grid.shape

    def touches_boundary(self) -> bool:
        """True when a hole sits on the edge of a dimension of extent > 1."""
        rows, cols = self.grid.shape
        if rows > 1 and (self.grid[0].any() or self.grid[-1].any()):
            return True
        if cols > 1 and (self.grid[:, 0].any() or self.grid[:, -1].any()):
            return True
        return False


def step_2d(state: DomainState, model: QuditModel, schedule_phase: int, rng) -> DomainState:
    """Apply one sub-layer of two-site gates to the full grid.

    Dense reference implementation of the schedule: phases 0/1 gate
    horizontal pairs starting at even/odd columns, phases 2/3 the same for
    rows.  The Monte-Carlo driver uses a sparse-hole kernel with the
    identical rule; the two are cross-checked statistically in the tests.
    """
    if schedule_phase not in (0, 1, 2, 3):
        raise ValueError(f"schedule_phase must be in 0..3, got {schedule_phase}")
    grid = state.grid.copy()
    work = grid if schedule_phase < 2 else grid.T
    start = schedule_phase % 2
    n = work.shape[1]
    # paired slices are views into grid, so in-place writes land directly
    first = work[:, start : n - 1 : 2]
    second = work[:, start + 1 : n : 2]
    mixed = first != second
    u = rng.random(first.shape)
    kill = mixed & (u < model.epsilon * model.a)
    fill = mixed & ~kill & (u < model.epsilon)
    first[kill] = 0
    second[kill] = 0
    first[fill] = 1
    second[fill] = 1
    return DomainState(grid, int(grid.sum()))


@njit(cache=True)
def _trial_kernel(gen, trials, t_max_sub, rows, cols, eps_a, eps, prune_at, out):
    # a phase can at most double the live set, hence the capacity margin
    cap = 2 * prune_at + 4
    hole_r = np.empty(cap, np.int64)
    hole_c = np.empty(cap, np.int64)
    snap_r = np.empty(cap, np.int64)
    snap_c = np.empty(cap, np.int64)
    keep = np.empty(cap, np.bool_)
    add_r = np.empty(cap, np.int64)
    add_c = np.empty(cap, np.int64)
    for trial in range(trials):
        n = 1
        hole_r[0] = rows // 2
        hole_c[0] = cols // 2
        result = SURVIVED
        for sub in range(t_max_sub):
            phase = sub % 4
            n0 = n
            for i in range(n0):
                snap_r[i] = hole_r[i]
                snap_c[i] = hole_c[i]
                keep[i] = True
            n_add = 0
            discard = False
            for i in range(n0):
                r = snap_r[i]
                c = snap_c[i]
                if phase == 0:
                    pr = r
                    pc = c + 1 if c % 2 == 0 else c - 1
                elif phase == 1:
                    pr = r
                    pc = c + 1 if c % 2 == 1 else c - 1
                elif phase == 2:
                    pc = c
                    pr = r + 1 if r % 2 == 0 else r - 1
                else:
                    pc = c
                    pr = r + 1 if r % 2 == 1 else r - 1
                if pr < 0 or pr >= rows or pc < 0 or pc >= cols:
                    continue
                # partner already a hole: inert pair, no randomness consumed.
                # Scanning the stale snapshot is safe: a hole removed earlier
                # in this phase sat in a mixed gate, and pairing is an
                # involution, so it can never be the partner of a later one.
                hit = False
                for j in range(n0):
                    if snap_r[j] == pr and snap_c[j] == pc:
                        hit = True
                        break
                if hit:
                    continue
                u = gen.random()
                if u < eps_a:
                    keep[i] = False
                elif u < eps:
                    add_r[n_add] = pr
                    add_c[n_add] = pc
                    n_add += 1
                    if (rows > 1 and (pr == 0 or pr == rows - 1)) or (
                        cols > 1 and (pc == 0 or pc == cols - 1)
                    ):
                        discard = True
            if discard:
                result = DISCARDED
                break
            n = 0
            for i in range(n0):
                if keep[i]:
                    hole_r[n] = snap_r[i]
                    hole_c[n] = snap_c[i]
                    n += 1
            for j in range(n_add):
                hole_r[n] = add_r[j]
                hole_c[n] = add_c[j]
                n += 1
            if n == 0:
                result = sub
                break
            if n >= prune_at:
                break
        out[trial] = result


def annihilation_times(
    model: QuditModel,
    trials: int,
    t_max: int,
    shape,
    seed: int = 0,
    *,
    chunks: int = 64,
    prune_at: int = PRUNE_HOLES,
) -> np.ndarray:
    """Run independent single-hole trials and return one code per trial.

    Codes: the 0-based sub-layer at which the hole set vanished, SURVIVED
    for censored trials, DISCARDED for boundary touches.  `t_max` counts
    time units, so the horizon is 4*t_max sub-layers.  `shape` is either a
    side length (square grid) or a (rows, cols) pair; a 1-row strip runs
    the one-dimensional process, with the vertical phases inert.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if t_max < 1:
        raise ValueError("t_max must be >= 1")
    if chunks < 1:
        raise ValueError("chunks must be >= 1")
    if prune_at < 2:
        raise ValueError("prune_at must be >= 2")
    rows, cols = (shape, shape) if np.isscalar(shape) else shape
    if rows < 1 or cols < 1:
        raise ValueError("grid must have at least one cell")
    out = np.empty(trials, np.int64)
    done = 0
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(chunks)):
        m = trials // chunks + (1 if i < trials % chunks else 0)
        if m == 0:
            continue
        gen = np.random.Generator(np.random.PCG64(child))
        _trial_kernel(
            gen,
            m,
            4 * t_max,
            rows,
            cols,
            model.epsilon * model.a,
            model.epsilon,
            prune_at,
            out[done : done + m],
        )
        done += m
    return out


@dataclass(frozen=True)
class TailFit:
    """Weighted least-squares exponential fit to a histogram tail.

    `gamma` is the decay rate per sub-layer (multiply by 4 for the rate per
    time unit); `decades` is the base-10 span of the fitted probabilities.
    """

    gamma: float
    log_amplitude: float
    window: tuple
    r2: float
    decades: float
    n_points: int


def fit_annihilation_tail(
    counts, trials: int, *, floor: int = 50, min_decades=None
) -> TailFit:
    """Fit log P(tau) to a straight line over a tail window.

    The default window is [peak + 5, last bin with >= floor counts].  When
    `min_decades` is given the window instead starts at the latest bin past
    the peak from which the span down to the floor bin still covers that
    many decades; this is the widest-dynamic-range window that stays as
    deep in the tail as possible, for checks that demand a minimum span.
    Points are weighted by sqrt(count) (unit-variance log-Poisson errors).
    """
    counts = np.asarray(counts)
    if counts.ndim != 1 or counts.size == 0:
        raise ValueError("counts must be a non-empty 1D array")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if counts.sum() == 0:
        raise ValueError("no annihilation events to fit")
    peak = int(np.argmax(counts))
    eligible = np.nonzero(counts >= floor)[0]
    if eligible.size == 0:
        raise ValueError(f"no bin reaches the count floor of {floor}")
    hi = int(eligible.max())
    if min_decades is None:
        lo = peak + 5
    else:
        lo = None
        for cand in range(hi - 3, peak, -1):
            if counts[cand] > 0 and math.log10(counts[cand] / counts[hi]) >= min_decades:
                lo = cand
                break
        if lo is None:
            raise ValueError(
                f"no tail window past the peak spans {min_decades} decades "
                f"above the {floor}-count floor; more trials are needed"
            )
    bins = np.arange(lo, hi + 1)
    bins = bins[(bins >= 0) & (bins < counts.size)]
    bins = bins[counts[bins] > 0]
    if bins.size < 4:
        raise ValueError(
            f"tail window [{lo}, {hi}] has {bins.size} populated bins; "
            "at least 4 are needed for a meaningful fit"
        )
    log_p = np.log(counts[bins] / trials)
    slope, intercept = np.polyfit(bins, log_p, 1, w=np.sqrt(counts[bins]))
    resid = log_p - (slope * bins + intercept)
    r2 = 1.0 - (resid @ resid) / np.sum((log_p - log_p.mean()) ** 2)
    decades = math.log10(counts[bins[0]] / counts[bins[-1]])
    return TailFit(
        gamma=float(-slope),
        log_amplitude=float(intercept),
        window=(int(lo), int(hi)),
        r2=float(r2),
        decades=float(decades),
        n_points=int(bins.size),
    )


def _wilson_halfwidth(counts, trials):
    # score interval at one standard normal unit
    p = counts / trials
    return np.sqrt(p * (1.0 - p) / trials + 0.25 / trials**2) / (1.0 + 1.0 / trials)


@dataclass
class AnnihilationHistogram:
    """Empirical annihilation-time distribution with its tail fit."""

    model: QuditModel
    trials: int
    t_max: int
    L: int
    seed: int
    tau: np.ndarray
    counts: np.ndarray
    prob: np.ndarray
    stderr: np.ndarray
    n_annihilated: int
    n_discarded: int
    n_censored: int
    fit: TailFit

    @property
    def annihilation_fraction(self) -> float:
        return self.n_annihilated / self.trials

    def to_csv(self) -> str:
        lines = ["q,epsilon,tau,prob,stderr"]
        for tau, p, s in zip(self.tau, self.prob, self.stderr):
            lines.append(
                f"{self.model.q},{float(self.model.epsilon)!r},{int(tau)},"
                f"{float(p)!r},{float(s)!r}"
            )
        return "\n".join(lines) + "\n"

    def fit_record(self) -> dict:
        return {
            "gamma_2d": self.fit.gamma,
            "window": [int(self.fit.window[0]), int(self.fit.window[1])],
            "r2": self.fit.r2,
            "trials": self.trials,
            "L": self.L,
            "q": self.model.q,
            "epsilon": self.model.epsilon,
            "seed": self.seed,
            "decades": self.fit.decades,
            "time_unit": "sub-layer (1/4 brickwork time unit)",
            "schedule": SCHEDULE,
        }


def annihilation_histogram(
    model: QuditModel,
    trials: int,
    t_max: int,
    L: int,
    seed: int = 0,
    *,
    chunks: int = 64,
    fit_floor: int = 50,
    min_decades=None,
) -> AnnihilationHistogram:
    """Estimate P(annihilation at sub-layer tau) on an L x L grid.

    Requires L > 2*t_max + 3 so the light cone never reaches the edge.
    Error bars are Wilson score half-widths.  The tail fit obeys
    `fit_floor` and `min_decades` as in fit_annihilation_tail.
    """
    if L <= 2 * t_max + 3:
        raise ValueError(
            f"light-cone containment requires L > 2*t_max + 3 = {2 * t_max + 3}, got {L}"
        )
    times = annihilation_times(model, trials, t_max, L, seed, chunks=chunks)
    n_discarded = int((times == DISCARDED).sum())
    if n_discarded > 0.01 * trials:
        raise RuntimeError(
            f"{n_discarded} of {trials} trials reached the grid edge; "
            "raise L (or lower t_max) to keep the light cone contained"
        )
    counts = np.bincount(times[times >= 0], minlength=4 * t_max)
    fit = fit_annihilation_tail(counts, trials, floor=fit_floor, min_decades=min_decades)
    return AnnihilationHistogram(
        model=model,
        trials=trials,
        t_max=t_max,
        L=L,
        seed=seed,
        tau=np.arange(4 * t_max),
        counts=counts,
        prob=counts / trials,
        stderr=_wilson_halfwidth(counts, trials),
        n_annihilated=int((times >= 0).sum()),
        n_discarded=n_discarded,
        n_censored=int((times == SURVIVED).sum()),
        fit=fit,
    )
