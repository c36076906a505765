"""Infinite-MPS backward evolution of the measurement boundary.

The shadow norm of a pattern n is the component lambda(n) = (M^T)^t f
evaluated at n, where f is the product vector f(m) = (q+1)^{-|m|} and M
the layered occupation Markov chain.  f is an iMPS with bond dimension
one and a two-site unit cell (A at even sites, B at odd sites); each
transposed gate layer merges a neighboring pair, and a truncated SVD
restores the tensor-train form.  Norms then come from contracting the
site tensors selected by the pattern between the leading left/right
eigenvectors of the hole transfer matrix T = A0 B0.

Layer ordering.  The transpose of the brickwork circuit applies the
deepest forward layer first, so the vector for depth t is

    lambda_t = (L_0^T L_1^T ... L_{(t-1) mod 2}^T) f,

read right to left, with L_0 gating even bonds.  Evolving incrementally
we instead apply L_0^T, L_1^T, L_0^T, ... ("within" the cell first).
Reversing a sequence that ends on an odd layer is the same circuit
shifted by one site, so after an even number of steps the physical
chain is the evolved iMPS with the roles of A and B exchanged.
contraction_view() applies that exchange; every contraction below
assumes its input is already aligned (pattern site 0 = even site = A).

Checkpoint layout (little-endian), written by save_checkpoint:

    bytes 0..7   magic b"PMPS0001"
    int32        q
    float64      epsilon
    int32        steps applied
    int32        chi_max
    6 x int32    A.shape then B.shape
    int32        truncation-log length L
    float64[]    A, C order; then B; then L truncation entries
"""

from __future__ import annotations

import math
import os
import re
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import OccupationPattern, QuditModel, ShadowNormCurve
from .exact_markov import build_gate
from .meanfield import MeanFieldParams, jensen_upper_bound

__all__ = [
    "ProbabilityMPS",
    "Environments",
    "boundary_mps",
    "backward_step",
    "evolve_mps",
    "contraction_view",
    "environments",
    "shadow_norm_for_pattern",
    "shadow_norm_for_k",
    "shadow_norm_k_sweep",
    "save_checkpoint",
    "load_checkpoint",
    "optimal_depth_sweep",
]

_MAGIC = b"PMPS0001"


@dataclass
class ProbabilityMPS:
    """Two-site unit cell [A at even sites, B at odd sites].

    Index order (physical, left bond, right bond); A: (2, chi_out, chi_in)
    and B: (2, chi_in, chi_out), where chi_in is the bond inside the cell
    and chi_out the bond between cells.
    """

    A: np.ndarray
    B: np.ndarray
    chi_max: int
    truncation_log: list = field(default_factory=list)
    steps: int = 0

    def __post_init__(self):
        a, b = self.A, self.B
        if a.ndim != 3 or b.ndim != 3 or a.shape[0] != 2 or b.shape[0] != 2:
            raise ValueError("tensors must be (2, chi_left, chi_right)")
        if a.shape[2] != b.shape[1] or b.shape[2] != a.shape[1]:
            raise ValueError(f"bond mismatch: A {a.shape}, B {b.shape}")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("non-finite tensor entries")
        if max(a.shape[1:]) > self.chi_max or max(b.shape[1:]) > self.chi_max:
            raise ValueError("bond dimension exceeds chi_max")

    @property
    def bond_dims(self) -> tuple[int, int]:
        """(chi_in, chi_out)."""
        return self.A.shape[2], self.A.shape[1]


@dataclass
class Environments:
    """Leading left/right eigenvectors of T = A0 B0, with E_l . E_r = 1."""

    E_l: np.ndarray
    E_r: np.ndarray
    eigenvalue: float


def boundary_mps(model: QuditModel, chi_max: int = 256) -> ProbabilityMPS:
    """Depth-0 boundary f(m) = (q+1)^{-|m|} as a chi = 1 iMPS."""
    site = np.array([1.0, 1.0 / (model.q + 1.0)]).reshape(2, 1, 1)
    return ProbabilityMPS(site.copy(), site.copy(), chi_max)


def _split_pair(theta: np.ndarray, chi_max: int, step_index: int):
    """SVD split of theta[nL, nR, left, right] with cap and relative floor."""
    nl, nr, dl, dr = theta.shape
    mat = theta.transpose(0, 2, 1, 3).reshape(nl * dl, nr * dr)
    try:
        u, s, vh = np.linalg.svd(mat, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"SVD failed at backward step {step_index}") from exc
    keep = s > s[0] * 1e-14 if s[0] > 0 else s > 0
    keep &= np.arange(s.size) < chi_max
    chi = max(int(keep.sum()), 1)
    total = float(np.sum(s * s))
    discarded = float(np.sum(s[chi:] * s[chi:]) / total) if total > 0 else 0.0
    root = np.sqrt(s[:chi])
    left = (u[:, :chi] * root).reshape(nl, dl, chi)
    right = (root[:, None] * vh[:chi]).reshape(chi, nr, dr).transpose(1, 0, 2)
    return left, right, discarded


def backward_step(mps: ProbabilityMPS, model: QuditModel, parity: str) -> ProbabilityMPS:
    """One transposed gate layer on every even ("A-B") or odd ("B-A") bond.

    Returns a new ProbabilityMPS; the input is untouched.
    """
    gate = build_gate(model).matrix
    if parity == "even":
        left, right = mps.A, mps.B
    elif parity == "odd":
        left, right = mps.B, mps.A
    else:
        raise ValueError(f"parity must be 'even' or 'odd', got {parity!r}")
    theta = np.einsum("lab,rbc->lrac", left, right)
    # backward update: new[n] = sum_m M[m, n] old[m]
    theta = np.einsum(
        "mn,mac->nac", gate, theta.reshape(4, *theta.shape[2:])
    ).reshape(2, 2, *theta.shape[2:])
    new_left, new_right, discarded = _split_pair(theta, mps.chi_max, len(mps.truncation_log))
    if parity == "even":
        a, b = new_left, new_right
    else:
        b, a = new_left, new_right
    out = ProbabilityMPS(a, b, mps.chi_max, mps.truncation_log + [discarded], mps.steps + 1)
    return out


def evolve_mps(model: QuditModel, t: int, chi_max: int = 256) -> ProbabilityMPS:
    """Apply t backward layers to the boundary, within-cell bond first."""
    if t < 0:
        raise ValueError("t must be non-negative")
    mps = boundary_mps(model, chi_max)
    for s in range(t):
        mps = backward_step(mps, model, "even" if s % 2 == 0 else "odd")
    return mps


def contraction_view(mps: ProbabilityMPS) -> ProbabilityMPS:
    """Align the unit cell so pattern site 0 sits on an even physical site.

    After an even number of incremental steps the represented chain is
    shifted by one site (see module docstring), so A and B swap roles.
    """
    if mps.steps % 2 == 1:
        return mps
    return ProbabilityMPS(mps.B, mps.A, mps.chi_max, mps.truncation_log, mps.steps)


# ----------------------------------------------------------------------
# environments
# ----------------------------------------------------------------------

def _power_leading(T: np.ndarray, max_iter: int = 1000):
    """Leading eigenpair of a small nonsymmetric matrix.

    Power iteration (the physical spectrum has a unique dominant real
    eigenvalue near 1); dense eigendecomposition as fallback when the
    gap is too small for iteration to settle.
    """
    chi = T.shape[0]
    v = np.full(chi, 1.0 / math.sqrt(chi))
    for _ in range(max_iter):
        w = T @ v
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            break
        w /= norm
        if np.linalg.norm(w - v) < 1e-14:
            return float(v @ T @ v), w
        v = w
    vals, vecs = np.linalg.eig(T)
    idx = int(np.argmin(np.abs(vals - 1.0)))
    vec = vecs[:, idx]
    if np.max(np.abs(vec.imag)) > 1e-9 or abs(vals[idx].imag) > 1e-9:
        raise RuntimeError("leading transfer eigenvector is not real")
    vec = vec.real
    return float(vals[idx].real), vec / np.linalg.norm(vec)


def environments(mps: ProbabilityMPS) -> Environments:
    """Left/right fixed points of the hole transfer matrix T = A0 B0.

    Warns when the leading eigenvalue strays from 1 by more than 1e-6,
    the signature of over-aggressive truncation (probability transport
    through the hole sea is no longer conserved).
    """
    T = mps.A[0] @ mps.B[0]
    lam_r, e_r = _power_leading(T)
    _, e_l = _power_leading(T.T)
    if e_r.sum() < 0:
        e_r = -e_r
    if e_l.sum() < 0:
        e_l = -e_l
    overlap = float(e_l @ e_r)
    if overlap == 0.0:
        raise RuntimeError("degenerate environments: E_l . E_r = 0")
    e_r = e_r / overlap
    if abs(lam_r - 1.0) > 1e-6:
        warnings.warn(
            f"transfer eigenvalue {lam_r!r} deviates from 1 "
            f"(truncation too aggressive at chi={mps.chi_max})",
            stacklevel=2,
        )
    return Environments(e_l, e_r, lam_r)


# ----------------------------------------------------------------------
# norm contractions (inputs assumed aligned via contraction_view)
# ----------------------------------------------------------------------

def _finish(log_scale: float, value: float, what: str) -> float:
    if value <= 0.0 or not math.isfinite(value):
        raise RuntimeError(f"non-positive contraction for {what} (truncation artifact)")
    # contraction gives lambda; the squared norm is its reciprocal
    return -(log_scale + math.log(value))


def shadow_norm_for_pattern(
    mps: ProbabilityMPS,
    env: Environments,
    pattern: OccupationPattern,
    model: QuditModel | None = None,
) -> float:
    """log squared shadow norm of an occupation pattern.

    Pattern site 0 is placed on an even physical site (tensor A); pass
    the mps through contraction_view first when it was evolved
    incrementally.  model is accepted for interface symmetry only; the
    tensors already encode the circuit.
    """
    bits = pattern.bits
    if len(bits) == 0:
        raise ValueError("empty pattern")
    v = env.E_l.copy()
    log_scale = 0.0
    for i, bit in enumerate(bits):
        tensor = mps.A if i % 2 == 0 else mps.B
        v = v @ tensor[bit]
        peak = float(np.max(np.abs(v)))
        if peak == 0.0:
            raise RuntimeError(f"contraction vanished at pattern site {i}")
        v /= peak
        log_scale += math.log(peak)
    if len(bits) % 2 == 1:
        right = mps.B[0] @ env.E_r  # absorb one hole to return to cell boundary
    else:
        right = env.E_r
    return _finish(log_scale, float(v @ right), f"pattern of span {len(bits)}")


def shadow_norm_k_sweep(
    mps: ProbabilityMPS,
    env: Environments,
    k_list,
    model: QuditModel | None = None,
) -> np.ndarray:
    """log squared shadow norms for many contiguous weights in one pass.

    Shares the running products (A1 B1)^m and (B1 A1)^m across all
    requested k, with per-step rescaling so k ~ 1000 stays in range.
    """
    ks = list(k_list)
    if not ks or min(ks) < 1:
        raise ValueError("weights must be positive")
    a1, b1 = mps.A[1], mps.B[1]
    results = {}
    even = env.E_r.copy()
    odd = mps.B[0] @ env.E_r
    log_even = log_odd = 0.0
    want = set(ks)
    for k in range(1, max(ks) + 1):
        if k % 2 == 1:
            if k > 1:
                odd = b1 @ (a1 @ odd)
                peak = float(np.max(np.abs(odd)))
                if peak == 0.0:
                    raise RuntimeError(f"contraction vanished at k={k}")
                odd /= peak
                log_odd += math.log(peak)
            if k in want:
                results[k] = _finish(log_odd, float(env.E_l @ (a1 @ odd)), f"k={k}")
        else:
            even = a1 @ (b1 @ even)
            peak = float(np.max(np.abs(even)))
            if peak == 0.0:
                raise RuntimeError(f"contraction vanished at k={k}")
            even /= peak
            log_even += math.log(peak)
            if k in want:
                results[k] = _finish(log_even, float(env.E_l @ even), f"k={k}")
    return np.array([results[k] for k in ks])


def shadow_norm_for_k(
    mps: ProbabilityMPS,
    env: Environments,
    k: int,
    model: QuditModel | None = None,
) -> float:
    """log squared shadow norm of a contiguous weight-k operator."""
    if k < 1:
        raise ValueError("k must be at least 1")
    return float(shadow_norm_k_sweep(mps, env, [k], model)[0])


# ----------------------------------------------------------------------
# checkpoints
# ----------------------------------------------------------------------

def save_checkpoint(mps: ProbabilityMPS, model: QuditModel, path: str) -> None:
    """Write the binary layout documented in the module docstring."""
    header = _MAGIC + struct.pack(
        "<idii6ii",
        model.q,
        model.epsilon,
        mps.steps,
        mps.chi_max,
        *mps.A.shape,
        *mps.B.shape,
        len(mps.truncation_log),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(mps.A, dtype=np.float64).tobytes())
        fh.write(np.ascontiguousarray(mps.B, dtype=np.float64).tobytes())
        fh.write(np.asarray(mps.truncation_log, dtype=np.float64).tobytes())


def load_checkpoint(path: str) -> tuple[ProbabilityMPS, QuditModel]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != _MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    head = struct.Struct("<idii6ii")
    q, eps, steps, chi_max, *shapes, n_log = head.unpack_from(blob, 8)
    a_shape, b_shape = tuple(shapes[:3]), tuple(shapes[3:])
    offset = 8 + head.size
    a_len = int(np.prod(a_shape))
    b_len = int(np.prod(b_shape))
    data = np.frombuffer(blob, dtype=np.float64, offset=offset, count=a_len + b_len + n_log)
    a = data[:a_len].reshape(a_shape).copy()
    b = data[a_len : a_len + b_len].reshape(b_shape).copy()
    log = list(data[a_len + b_len :])
    mps = ProbabilityMPS(a, b, chi_max, log, steps)
    return mps, QuditModel(q, eps)


# ----------------------------------------------------------------------
# depth sweep
# ----------------------------------------------------------------------

def _checkpoint_name(model: QuditModel, t: int) -> str:
    return f"mps_q{model.q}_eps{model.epsilon:g}_t{t}.ckpt"


def _find_resume_point(checkpoint_dir: str, model: QuditModel, t_max: int) -> int:
    pattern = re.compile(
        rf"mps_q{model.q}_eps{re.escape(f'{model.epsilon:g}')}_t(\d+)\.ckpt$"
    )
    best = -1
    for name in os.listdir(checkpoint_dir):
        m = pattern.match(name)
        if m and int(m.group(1)) <= t_max:
            best = max(best, int(m.group(1)))
    return best


def optimal_depth_sweep(
    model: QuditModel,
    k_list,
    t_max: int,
    chi_max: int = 256,
    checkpoint_dir: str | None = None,
    params: MeanFieldParams | None = None,
    trunc_budget: float = 1e-6,
):
    """Full (k, t) grid of log shadow norms plus the per-k argmin depth.

    Every computed point with k >= 20 is checked against the sandwich
    q^k <= norm^2 <= (q+1)^{mean weight}; a violation aborts the sweep
    (it means the engine, not the physics, is wrong).  Cumulative
    discarded SVD weight beyond trunc_budget is reported per depth as a
    warning.  With a checkpoint_dir the sweep resumes from the deepest
    saved layer and extends the saved curve.
    """
    ks = sorted(set(int(k) for k in k_list))
    if not ks:
        raise ValueError("empty k list")
    if params is None:
        params = MeanFieldParams.from_model(model)
    curve = ShadowNormCurve("imps", model.q, model.epsilon)
    mps = boundary_mps(model, chi_max)
    start_t = 0
    curve_path = None
    if checkpoint_dir is not None:
        os.makedirs(checkpoint_dir, exist_ok=True)
        curve_path = os.path.join(
            checkpoint_dir, f"curve_q{model.q}_eps{model.epsilon:g}.json"
        )
        resume_t = _find_resume_point(checkpoint_dir, model, t_max)
        if resume_t >= 0 and os.path.exists(curve_path):
            mps, saved_model = load_checkpoint(
                os.path.join(checkpoint_dir, _checkpoint_name(model, resume_t))
            )
            if saved_model != model or mps.chi_max != chi_max:
                raise ValueError("checkpoint does not match the requested run")
            with open(curve_path) as fh:
                curve = ShadowNormCurve.from_json(fh.read())
            curve.rows = [row for row in curve.rows if row[1] <= resume_t]
            start_t = resume_t + 1
    log_q = math.log(model.q)
    for t in range(start_t, t_max + 1):
        if t > 0:
            step = t - 1
            mps = backward_step(mps, model, "even" if step % 2 == 0 else "odd")
        aligned = contraction_view(mps)
        env = environments(aligned)
        values = shadow_norm_k_sweep(aligned, env, ks, model)
        for k, value in zip(ks, values):
            if k >= 20:
                upper = jensen_upper_bound(k, t, params)
                if not (k * log_q - 1e-9 <= value <= upper + 1e-9):
                    raise RuntimeError(
                        f"sandwich violated at k={k}, t={t}: "
                        f"{k * log_q:.6f} <= {value:.6f} <= {upper:.6f} fails"
                    )
            curve.add(k, t, float(value))
        discarded = float(np.sum(mps.truncation_log))
        if discarded > trunc_budget:
            warnings.warn(
                f"cumulative truncation weight {discarded:.2e} above budget at t={t}",
                stacklevel=2,
            )
        if checkpoint_dir is not None:
            save_checkpoint(mps, model, os.path.join(checkpoint_dir, _checkpoint_name(model, t)))
            with open(curve_path, "w") as fh:
                fh.write(curve.to_json())
    table = {k: curve.optimal_depth(k) for k in ks}
    return curve, table
