"""Statevector evolution: Givens networks, CDF product formulas,
fast-forwarded one-body evolution, ``exp(-i t S^2)`` and the leading Trotter
error operator.

The Fock image ``G(u)`` of a single-particle unitary satisfies
``G(u) a†_p G(u)† = sum_q u_qp a†_q``; on the one-electron sector it is ``u``.
A unitary is stored as ``u = R_1 R_2 ... R_m D`` with two-mode factors
``R_k`` and a diagonal phase ``D``; the state is acted on by ``D`` first.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .cdf import QubitFrame, fragment_matrices
from .errors import CapacityError, ContractError
from .fock import FockBasis, diag_from_occupations, number_basis, popcount
from .model import SpinResolvedOperator

NORM_TOL = 1e-10
Y3_DIM_CAP = 6000


@dataclass(eq=False)
class FockStatevector:
    """Amplitudes over the determinants of ``basis``."""

    amplitudes: np.ndarray
    basis: FockBasis
    normalized: bool = True

    def __post_init__(self) -> None:
        a = np.asarray(self.amplitudes, dtype=complex)
        if a.shape != (self.basis.dim,):
            raise ContractError(f"amplitude vector length {a.shape} does not match basis dimension {self.basis.dim}")
        if self.normalized and abs(np.linalg.norm(a) - 1.0) > NORM_TOL:
            raise ContractError(f"state norm {np.linalg.norm(a):.12f} differs from 1")
        self.amplitudes = a

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def copy(self) -> "FockStatevector":
        return FockStatevector(self.amplitudes.copy(), self.basis, self.normalized)

    def with_amplitudes(self, amps: np.ndarray, normalized: bool | None = None) -> "FockStatevector":
        return FockStatevector(amps, self.basis, self.normalized if normalized is None else normalized)

    def vdot(self, other: "FockStatevector") -> complex:
        if not self.basis.same_space(other.basis):
            raise ContractError("states live in different bases")
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    @classmethod
    def determinant(cls, basis: FockBasis, mask: int) -> "FockStatevector":
        idx, found = basis.index(np.array([mask]))
        if not found[0]:
            raise ContractError("determinant not in basis")
        v = np.zeros(basis.dim, complex)
        v[idx[0]] = 1.0
        return cls(v, basis)


def embed(state: FockStatevector, target: FockBasis) -> FockStatevector:
    """Copy amplitudes into a larger basis containing every determinant of ``state``."""
    idx, found = target.index(state.basis.states)
    if not found.all():
        raise ContractError("target basis does not contain the state's determinants")
    v = np.zeros(target.dim, complex)
    v[idx] = state.amplitudes
    return FockStatevector(v, target, state.normalized)


def restrict_to(state: FockStatevector, target: FockBasis, tol: float = 1e-10) -> FockStatevector:
    """Inverse of :func:`embed`; weight outside ``target`` must be below ``tol``."""
    idx, found = state.basis.index(target.states)
    if not found.all():
        raise ContractError("target basis is not contained in the state's basis")
    v = state.amplitudes[idx]
    lost = state.norm**2 - float(np.vdot(v, v).real)
    if lost > tol:
        raise ContractError(f"state has weight {lost:.3e} outside the target basis")
    return FockStatevector(v, target, state.normalized)


# --- two-mode Fock action --------------------------------------------------------


def _pair_tables(basis: FockBasis, i: int, j: int):
    key = ("pair", i, j)
    cache = basis._lookup
    if key not in cache:
        s = basis.states
        bi, bj = np.int64(1) << np.int64(i), np.int64(1) << np.int64(j)
        occ_i = (s & bi) != 0
        occ_j = (s & bj) != 0
        only_i = np.nonzero(occ_i & ~occ_j)[0]
        both = np.nonzero(occ_i & occ_j)[0]
        partner, found = basis.index(s[only_i] ^ bi ^ bj)
        only_j = np.nonzero(~occ_i & occ_j)[0]
        if not found.all() or only_j.size != only_i.size:
            raise ContractError(f"two-mode rotation on modes ({i}, {j}) leaves the basis")
        lo, hi = min(i, j), max(i, j)
        between = ((np.int64(1) << np.int64(hi)) - 1) ^ ((np.int64(1) << np.int64(lo + 1)) - 1) if hi > lo + 1 else np.int64(0)
        sgn = np.where(popcount(s[only_i] & between) & 1, -1.0, 1.0)
        cache[key] = (only_i, partner, sgn, both)
    return cache[key]


def apply_two_mode(vec: np.ndarray, basis: FockBasis, i: int, j: int, r: np.ndarray) -> np.ndarray:
    """Fock image of the 2x2 unitary ``r`` acting on modes ``(i, j)``, ``i < j``.

    ``r`` is indexed ``[[r_ii, r_ij], [r_ji, r_jj]]``.
    """
    if i > j:
        i, j = j, i
        r = r[::-1, ::-1]
    only_i, partner, sgn, both = _pair_tables(basis, i, j)
    out = vec.copy()
    xs = vec[only_i]
    xp = vec[partner]
    out[only_i] = r[0, 0] * xs + sgn * r[0, 1] * xp
    out[partner] = sgn * r[1, 0] * xs + r[1, 1] * xp
    if both.size:
        out[both] = vec[both] * (r[0, 0] * r[1, 1] - r[0, 1] * r[1, 0])
    return out


def apply_mode_phases(vec: np.ndarray, basis: FockBasis, phases: np.ndarray) -> np.ndarray:
    """Multiply each determinant by the product of ``phases`` over its occupied modes."""
    logs = np.angle(phases)
    mags = np.abs(phases)
    occ = basis.occupations()
    factor = np.exp(1j * (occ @ logs)) * np.prod(np.where(occ, mags[None, :], 1.0), axis=1)
    return vec * factor


# --- Givens schedules --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GivensSchedule:
    """``u = R_1 ... R_m diag(phases)``; each entry is ``(i, j, theta, alpha, beta)`` with
    ``R = [[cos t e^{i a}, -sin t e^{-i b}], [sin t e^{i b}, cos t e^{-i a}]]`` on ``(i, j)``."""

    n_modes: int
    rotations: tuple[tuple[int, int, float, float, float], ...]
    phases: np.ndarray

    def __len__(self) -> int:
        return len(self.rotations)

    def matrix(self) -> np.ndarray:
        """Replay onto the identity."""
        u = np.diag(self.phases).astype(complex)
        for i, j, th, a, b in reversed(self.rotations):
            r = givens_matrix(th, a, b)
            u[[i, j], :] = r @ u[[i, j], :]
        return u

    def rounded(self, eps_rot: float) -> "GivensSchedule":
        q = 2 * np.pi * eps_rot
        rnd = lambda x: q * np.round(x / q)  # noqa: E731
        rots = tuple((i, j, rnd(t), rnd(a), rnd(b)) for i, j, t, a, b in self.rotations)
        ph = np.abs(self.phases) * np.exp(1j * rnd(np.angle(self.phases)))
        return GivensSchedule(self.n_modes, rots, ph)

    def on_modes(self, modes: Sequence[int], n_modes: int) -> "GivensSchedule":
        """Relabel mode ``k`` as ``modes[k]`` inside an ``n_modes`` register."""
        m = list(modes)
        ph = np.ones(n_modes, complex)
        ph[m] = self.phases
        return GivensSchedule(n_modes, tuple((m[i], m[j], t, a, b) for i, j, t, a, b in self.rotations), ph)


def givens_matrix(theta: float, alpha: float = 0.0, beta: float = 0.0) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array(
        [[c * np.exp(1j * alpha), -s * np.exp(-1j * beta)], [s * np.exp(1j * beta), c * np.exp(-1j * alpha)]]
    )


def givens_decompose(u: np.ndarray, tol: float = 1e-8) -> GivensSchedule:
    """Nearest-neighbour Givens network for a unitary (or real orthogonal) ``u``.

    Columns are cleared bottom-up with rotations on adjacent rows, giving at
    most ``n(n-1)/2`` factors; real input yields real rotations.
    """
    m = np.array(u, dtype=complex)
    n = m.shape[0]
    if m.shape != (n, n):
        raise ContractError("matrix must be square")
    if np.max(np.abs(m.conj().T @ m - np.eye(n))) > tol:
        raise ContractError("matrix is not unitary/orthogonal")
    real = np.isrealobj(u) or np.max(np.abs(np.imag(u))) == 0
    rots = []
    for c in range(n - 1):
        for r in range(n - 1, c, -1):
            b = m[r, c]
            if abs(b) < 1e-15:
                m[r, c] = 0.0
                continue
            a = m[r - 1, c]
            if real:
                th = math.atan2(b.real, a.real)
                al = be = 0.0
            else:
                th = math.atan2(abs(b), abs(a))
                al = float(np.angle(a)) if abs(a) > 0 else 0.0
                be = float(np.angle(b))
            rmat = givens_matrix(th, al, be)
            m[[r - 1, r], :] = rmat.conj().T @ m[[r - 1, r], :]
            m[r, c] = 0.0
            rots.append((r - 1, r, th, al, be))
    ph = np.diag(m).copy()
    if real:
        ph = np.sign(ph.real).astype(complex)
    return GivensSchedule(n, tuple(rots), ph)


def apply_schedule(vec: np.ndarray, basis: FockBasis, sched: GivensSchedule, inverse: bool = False) -> np.ndarray:
    """Apply ``G(u)`` (or ``G(u)†``) for ``u`` given by ``sched`` on ``basis`` modes."""
    if sched.n_modes != basis.n_modes:
        raise ContractError(f"schedule acts on {sched.n_modes} modes, basis has {basis.n_modes}")
    out = vec
    if not inverse:
        out = apply_mode_phases(out, basis, sched.phases)
        for i, j, th, a, b in reversed(sched.rotations):
            out = apply_two_mode(out, basis, i, j, givens_matrix(th, a, b))
    else:
        for i, j, th, a, b in sched.rotations:
            out = apply_two_mode(out, basis, i, j, givens_matrix(th, a, b).conj().T)
        out = apply_mode_phases(out, basis, sched.phases.conj())
    return out


def spatial_schedule(u: np.ndarray, n_orbitals: int) -> GivensSchedule:
    """Both-spin schedule of a spatial rotation: identical networks on alpha and beta modes."""
    s = givens_decompose(u)
    a = s.on_modes(range(n_orbitals), 2 * n_orbitals)
    b = s.on_modes(range(n_orbitals, 2 * n_orbitals), 2 * n_orbitals)
    return GivensSchedule(2 * n_orbitals, a.rotations + b.rotations, a.phases * b.phases)


def apply_basis_rotation(
    state: FockStatevector,
    schedule: GivensSchedule,
    spin_mode: str = "both",
    inverse: bool = False,
) -> FockStatevector:
    """Fock image of a single-particle rotation.

    ``spin_mode="both"`` takes an ``N``-mode spatial schedule and applies it to
    each spin; ``"general"`` takes a ``2N``-mode spin-orbital schedule.
    """
    n = state.basis.n_orbitals
    if spin_mode == "both":
        if schedule.n_modes != n:
            raise ContractError("spatial schedule size does not match the basis")
        a = schedule.on_modes(range(n), 2 * n)
        b = schedule.on_modes(range(n, 2 * n), 2 * n)
        sched = GivensSchedule(2 * n, a.rotations + b.rotations, a.phases * b.phases)
    elif spin_mode == "general":
        sched = schedule
    else:
        raise ContractError(f"unknown spin_mode {spin_mode!r}")
    return state.with_amplitudes(apply_schedule(state.amplitudes, state.basis, sched, inverse))


# --- product formulas ----------------------------------------------------------------


@dataclass(frozen=True)
class TrotterPlan:
    """Product-formula settings: order 1 or 2 (Strang), step ``delta`` and optional
    ``eps_rot`` angle rounding (multiples of ``2 pi eps_rot``)."""

    order: int = 2
    delta: float = 0.1
    eps_rot: float | None = None

    def __post_init__(self) -> None:
        if self.order not in (1, 2):
            raise ContractError("order must be 1 or 2")
        if not self.delta > 0:
            raise ContractError("delta must be positive")
        if self.eps_rot is not None and not 0 < self.eps_rot < 1:
            raise ContractError("eps_rot must lie in (0, 1)")


def steps_for(t: float, delta: float) -> tuple[int, float]:
    """Nearest step count for time ``t`` and the residual time ``t - n delta``."""
    n = int(round(t / delta))
    return n, t - n * delta


@dataclass(eq=False)
class _PreparedFrame:
    basis: FockBasis
    schedules: list[GivensSchedule]
    singles: list[np.ndarray]
    pairs: list[np.ndarray | None]
    constant: float


def _prepare(frame: QubitFrame, basis: FockBasis) -> _PreparedFrame:
    key = ("frame", id(frame))
    hit = basis._lookup.get(key)
    if hit is not None and hit[0] is frame:
        return hit[1]
    n = frame.n_orbitals
    if basis.n_orbitals != n:
        raise ContractError("frame and basis orbital counts differ")
    scheds = [givens_decompose(frame.one_body_u)]
    singles = [np.asarray(frame.single_z, float)]
    pairs: list[np.ndarray | None] = [None]
    for u, p in zip(frame.fragment_u, frame.pair_zz):
        scheds.append(spatial_schedule(u, n))
        singles.append(np.zeros(2 * n))
        pairs.append(2.0 * np.asarray(p, float))
    prep = _PreparedFrame(basis, scheds, singles, pairs, float(frame.constant_shift))
    basis._lookup[key] = (frame, prep)
    return prep


def _round_angles(coef: np.ndarray, scale: float, eps_rot: float | None) -> np.ndarray:
    # a Pauli rotation exp(-i theta P / 2) with theta = 2 * scale * coef
    if eps_rot is None or coef is None:
        return coef
    q = 2 * np.pi * eps_rot
    th = 2 * scale * coef
    return q * np.round(th / q) / (2 * scale)


def _fragment_exp(vec: np.ndarray, prep: _PreparedFrame, k: int, tau: float, eps_rot: float | None) -> np.ndarray:
    sched = prep.schedules[k]
    if eps_rot is not None:
        sched = sched.rounded(eps_rot)
    single = _round_angles(prep.singles[k], tau, eps_rot)
    pair = prep.pairs[k]
    if pair is not None and eps_rot is not None:
        pair = _round_angles(pair, tau, eps_rot)
    energies = diag_from_occupations(prep.basis, single, pair)
    out = apply_schedule(vec, prep.basis, sched, inverse=True)
    out = out * np.exp(-1j * tau * energies)
    return apply_schedule(out, prep.basis, sched)


def trotter_step(state: FockStatevector, frame: QubitFrame, plan: TrotterPlan) -> FockStatevector:
    """One product-formula step of ``exp(-i delta H)`` for the rotated frame.

    Order 1 applies fragments in order (one-body, l = 1..L); order 2 is the
    symmetric Strang sequence with the last fragment in the middle. The
    constant shift enters as a global phase.
    """
    prep = _prepare(frame, state.basis)
    d = plan.delta
    vec = state.amplitudes
    m = len(prep.schedules)
    if plan.order == 1 or m == 1:
        for k in range(m):
            vec = _fragment_exp(vec, prep, k, d, plan.eps_rot)
    else:
        for k in range(m - 1):
            vec = _fragment_exp(vec, prep, k, d / 2, plan.eps_rot)
        vec = _fragment_exp(vec, prep, m - 1, d, plan.eps_rot)
        for k in reversed(range(m - 1)):
            vec = _fragment_exp(vec, prep, k, d / 2, plan.eps_rot)
    vec = vec * np.exp(-1j * d * prep.constant)
    return state.with_amplitudes(vec)


def evolve(
    state: FockStatevector,
    t: float,
    plan: TrotterPlan,
    frame: QubitFrame,
    trace_csv: str | Path | None = None,
    energy_op: sp.spmatrix | None = None,
) -> FockStatevector:
    """``n = round(t / delta)`` product-formula steps.

    A nonzero rounding residual is reported through a warning. With
    ``trace_csv`` the norm (and ``<energy_op>`` if given) is logged per step.
    """
    n, resid = steps_for(t, plan.delta)
    if abs(resid) > 1e-9 * plan.delta:
        warnings.warn(f"t = {t} is not a multiple of delta; residual {resid:.3e} dropped", RuntimeWarning, stacklevel=2)
    rows = []
    cur = state
    for step in range(n):
        cur = trotter_step(cur, frame, plan)
        if trace_csv is not None:
            e = complex(np.vdot(cur.amplitudes, energy_op @ cur.amplitudes)).real if energy_op is not None else float("nan")
            rows.append((step + 1, cur.norm, e))
    if trace_csv is not None:
        with open(trace_csv, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["step", "norm", "energy"])
            wr.writerows(rows)
    return cur


# --- exact one-body evolution ----------------------------------------------------------


def _as_matrix(op: SpinResolvedOperator | np.ndarray) -> np.ndarray:
    return op.matrix if isinstance(op, SpinResolvedOperator) else np.asarray(op, complex)


def one_body_exponential_schedule(op: SpinResolvedOperator | np.ndarray, t: float, tol: float = 1e-10):
    """``(schedule of U_0, lambda)`` with ``h = U_0 diag(lambda) U_0†``."""
    h = _as_matrix(op)
    if np.max(np.abs(h - h.conj().T)) > tol:
        raise ContractError("one-body operator is not Hermitian")
    lam, u0 = np.linalg.eigh(0.5 * (h + h.conj().T))
    return givens_decompose(u0), lam


def fast_forward_one_body(state: FockStatevector, op: SpinResolvedOperator | np.ndarray, t: float) -> FockStatevector:
    """``exp(-i t h)`` for a one-body ``h``: rotate to its eigenbasis, apply
    occupation phases, rotate back. Exact up to the diagonalization accuracy."""
    sched, lam = one_body_exponential_schedule(op, t)
    if sched.n_modes != state.basis.n_modes:
        raise ContractError("operator size does not match the basis")
    vec = apply_schedule(state.amplitudes, state.basis, sched, inverse=True)
    vec = apply_mode_phases(vec, state.basis, np.exp(-1j * t * lam))
    vec = apply_schedule(vec, state.basis, sched)
    return state.with_amplitudes(vec)


# --- exp(-i t S^2) -----------------------------------------------------------------------


_U_X = np.array([[1.0, 1.0], [1.0, -1.0]], complex) / np.sqrt(2)
_U_Y = np.array([[1.0, 1.0], [1j, -1j]], complex) / np.sqrt(2)


def _sz2_diagonal(basis: FockBasis) -> np.ndarray:
    """``S_z^2 = (1/16) [sum_{a != b} s_a s_b z_a z_b + 2N]`` with ``s = -1`` (alpha), ``+1`` (beta)."""
    n = basis.n_orbitals
    s = np.r_[-np.ones(n), np.ones(n)]
    pair = np.outer(s, s) / 8.0
    return diag_from_occupations(basis, np.zeros(2 * n), pair) + 2 * n / 16.0


def _apply_per_orbital(vec: np.ndarray, basis: FockBasis, r: np.ndarray, inverse: bool) -> np.ndarray:
    n = basis.n_orbitals
    m = r.conj().T if inverse else r
    for k in range(n):
        vec = apply_two_mode(vec, basis, k, k + n, m)
    return vec


def exp_s2(state: FockStatevector, t: float, n_steps: int = 1) -> FockStatevector:
    """``exp(-i t S^2)`` as ``[exp(-i t S_x^2 / n) exp(-i t S_y^2 / n) exp(-i t S_z^2 / n)]^n``.

    ``S_x^2`` and ``S_y^2`` are ``S_z^2`` phase layers conjugated by per-orbital
    rotations on ``(k alpha, k beta)``. The rotated layers give ``+S_z`` here,
    so no swap is needed; the square is insensitive to that sign anyway. The
    three Cartesian squares commute on spin-1/2 and spin-1 multiplets, which
    makes one step exact whenever no component has ``S > 1``. A sector input
    whose approximate image leaves the sector is returned in the number basis.
    """
    basis = state.basis
    n = basis.n_orbitals
    ne = int(popcount(basis.states[:1])[0]) if basis.dim else 0
    s_max = 0.5 * min(ne, 2 * n - ne)
    if s_max > 1 and n_steps == 1:
        warnings.warn("states with S > 1 are possible; the single-step product is approximate", RuntimeWarning, stacklevel=2)
    work = embed(state, number_basis(n, ne)) if basis.kind == "sector" else state
    wb = work.basis
    phase = np.exp(-1j * (t / n_steps) * _sz2_diagonal(wb))
    vec = work.amplitudes
    for _ in range(n_steps):
        for r in (_U_X, _U_Y):
            vec = _apply_per_orbital(vec, wb, r, inverse=True)
            vec = vec * phase
            vec = _apply_per_orbital(vec, wb, r, inverse=False)
        vec = vec * phase
    out = work.with_amplitudes(vec)
    if basis.kind != "sector":
        return out
    try:
        return restrict_to(out, basis)
    except ContractError:
        warnings.warn("approximate product left the M sector; returning the number-sector state", RuntimeWarning, stacklevel=2)
        return out


# --- Trotter error ------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TrotterErrorReport:
    y3_expectations: np.ndarray
    energy_errors: np.ndarray
    delta: float
    recommended_delta: float | None


def trotter_error_operator(frame: QubitFrame, basis: FockBasis) -> np.ndarray:
    """Leading error ``Y_3`` of the Strang sequence (H_0 outermost):
    ``S_2(delta) = exp(-i delta (H + delta^2 Y_3 + O(delta^4)))`` with
    ``Y_3 = sum_j (-[[H_j, B_j], H_j] / 24 - [[H_j, B_j], B_j] / 12)``, ``B_j = sum_{i>j} H_i``."""
    if basis.dim > Y3_DIM_CAP:
        raise CapacityError(
            f"dimension {basis.dim} exceeds {Y3_DIM_CAP}; use the empirical slope fit of the eigenphase error instead"
        )
    mats = [m.toarray() for m in fragment_matrices(frame, basis)]
    y = np.zeros_like(mats[0])
    tail = sum(mats[1:], np.zeros_like(mats[0]))
    for j in range(len(mats) - 1):
        a = mats[j]
        c = a @ tail - tail @ a
        y += -(c @ a - a @ c) / 24.0 - (c @ tail - tail @ c) / 12.0
        tail = tail - mats[j + 1]
    return y


def trotter_error_estimate(
    frame: QubitFrame,
    trial_states: Sequence[FockStatevector],
    delta: float,
    target_eta: float | None = None,
) -> TrotterErrorReport:
    """``eps_E = delta^2 <Y_3>`` per trial state; ``delta_rec = sqrt(eta / max |<Y_3>|)``."""
    if not trial_states:
        raise ContractError("need at least one trial state")
    y = trotter_error_operator(frame, trial_states[0].basis)
    ev = np.array([complex(np.vdot(s.amplitudes, y @ s.amplitudes)).real for s in trial_states])
    eps = delta**2 * ev
    rec = None
    if target_eta is not None:
        worst = float(np.max(np.abs(ev)))
        rec = math.inf if worst == 0 else math.sqrt(target_eta / worst)
    return TrotterErrorReport(ev, eps, delta, rec)
