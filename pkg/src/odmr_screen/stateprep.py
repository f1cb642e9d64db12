"""Initial states: dipole excitation with the ground-state part removed,
truncated sums of Slater determinants and the coarse-QPE low-energy filter
boosted by the median of repeated single-bit readouts."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ContractError, DegenerateInputError
from .evolve import FockStatevector
from .fock import FockBasis
from .measure import ZetaState
from .model import DipoleOperator
from .reference import EigenSolution, sparse_one_body

# --- dipole excitation --------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DipoleExcitation:
    state: FockStatevector
    norm: float
    ground_overlap: complex


def dipole_excited_state(
    psi0: FockStatevector,
    d: DipoleOperator,
    axis: int | None = None,
    tol: float = 1e-12,
) -> DipoleExcitation:
    """Normalized ``D|psi0> - <psi0|D|psi0> |psi0>`` with its norm.

    ``axis`` selects one Cartesian component; ``None`` sums them.
    """
    if not psi0.normalized or abs(psi0.norm - 1) > 1e-10:
        raise ContractError("psi0 must be normalized")
    comps = range(3) if axis is None else [axis]
    m = sum(np.asarray(d.components[k], complex) for k in comps)
    op = sparse_one_body(m, psi0.basis)
    v0 = psi0.amplitudes
    w = op @ v0
    ov = complex(np.vdot(v0, w))
    w = w - ov * v0
    nrm = float(np.linalg.norm(w))
    if nrm <= tol:
        raise DegenerateInputError("dipole image is parallel to the ground state; nothing optically active")
    return DipoleExcitation(FockStatevector(w / nrm, psi0.basis), nrm, ov)


# --- sum of Slaters --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SlaterExpansion:
    """Determinants sorted by descending ``|coefficient|``; ``fidelity`` is the kept weight."""

    masks: np.ndarray
    coefficients: np.ndarray
    norm: float
    fidelity: float

    def __len__(self) -> int:
        return int(self.masks.size)

    @property
    def terms(self) -> list[tuple[int, complex]]:
        return [(int(m), complex(c)) for m, c in zip(self.masks, self.coefficients)]


def to_slater_expansion(state: FockStatevector, d_cap: int, tol: float = 0.0) -> SlaterExpansion:
    if d_cap < 1:
        raise ContractError("d_cap must be positive")
    a = state.amplitudes
    order = np.argsort(-np.abs(a), kind="stable")
    order = order[np.abs(a[order]) > tol][:d_cap]
    kept = a[order]
    total = float(np.vdot(a, a).real)
    w = float(np.vdot(kept, kept).real)
    nrm = math.sqrt(w)
    coef = kept / nrm if nrm > 0 else kept
    return SlaterExpansion(state.basis.states[order].copy(), coef, nrm, w / total if total > 0 else 0.0)


def from_slater_expansion(exp: SlaterExpansion, basis: FockBasis) -> FockStatevector:
    idx, found = basis.index(exp.masks)
    if not found.all():
        raise ContractError("expansion contains determinants outside the basis")
    v = np.zeros(basis.dim, complex)
    v[idx] = exp.coefficients
    return FockStatevector(v, basis)


# --- median lemma -------------------------------------------------------------------


def single_readout_fail_bound(t_minus_n: int) -> float:
    """``1 / (2 (e - 1))`` with ``e = 2^(t-n) - 1``."""
    e = 2**t_minus_n - 1
    if e <= 1:
        raise ContractError("t - n must be at least 2 for a useful bound")
    return 1.0 / (2 * (e - 1))


def median_fail_bound(p_single: float, r: int) -> float:
    """``p_r <= (1/2) (2 sqrt(p (1 - p)))^r``."""
    if not 0 <= p_single < 0.5:
        raise ContractError("single-readout failure must lie in [0, 1/2)")
    if r < 1:
        raise ContractError("r must be positive")
    return 0.5 * (2 * math.sqrt(p_single * (1 - p_single))) ** r


def qpe_calls_for_target(p_t: float, p_single: float) -> int:
    """Smallest ``r`` with ``median_fail_bound(p_single, r) <= p_t``."""
    if not 0 < p_t < 0.5:
        raise ContractError("p_t must lie in (0, 1/2)")
    if not 0 < p_single < 0.5:
        raise ContractError("p_single must lie in (0, 1/2)")
    r = math.ceil(math.log(2 * p_t) / math.log(2 * math.sqrt(p_single * (1 - p_single))) - 1e-12)
    return max(1, r)


# --- coarse QPE ------------------------------------------------------------------


@dataclass(frozen=True)
class QpeFilterConfig:
    """Coarse-QPE filter: ``t`` precision bits, ``n`` kept bits, ``r`` repetitions.

    Energies in Hartree; ``e_prime`` separates the accepted low window
    ``[e0, e_prime]`` from ``(e_prime, e_max]``.
    """

    e0: float
    e_prime: float
    e_max: float
    t: int = 4
    n: int = 1
    r: int = 3
    p_target: float | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.t > self.n >= 1:
            raise ContractError("need t > n >= 1")
        if not self.e0 < self.e_prime < self.e_max:
            raise ContractError("need e0 < e_prime < e_max")
        if self.r < 1:
            raise ContractError("r must be positive")

    @property
    def e(self) -> int:
        return 2 ** (self.t - self.n) - 1

    @property
    def repetitions(self) -> int:
        if self.p_target is None:
            return self.r
        return qpe_calls_for_target(self.p_target, single_readout_fail_bound(self.t - self.n))

    @property
    def shift_and_time(self) -> tuple[float, float]:
        """``(E_top, T)`` with ``exp(-i T (H - E_top))`` the QPE oracle.

        The shorter segment is padded so ``e_prime`` lands on phase 1/2; when
        the segments are equal both branches coincide.
        """
        up = self.e_max - self.e_prime
        down = self.e_prime - self.e0
        if up >= down:
            return self.e_max, math.pi / up
        return self.e_prime + down, math.pi / down


def phase_of(energy: np.ndarray, cfg: QpeFilterConfig) -> np.ndarray:
    """Eigenphase in ``[0, 1)`` of ``exp(-i T (E - E_top)) = exp(2 pi i phi)``."""
    top, T = cfg.shift_and_time
    return np.mod(-T * (np.asarray(energy, float) - top) / (2 * np.pi), 1.0)


def qpe_outcome_distribution(phi: np.ndarray, t: int) -> np.ndarray:
    """``P[k | phi]`` for textbook ``t``-bit phase estimation, shape ``(len(phi), 2^t)``."""
    m = 2**t
    k = np.arange(m)
    delta = np.asarray(phi, float)[:, None] - k[None, :] / m
    num = np.sin(np.pi * m * delta)
    den = m * np.sin(np.pi * delta)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(np.abs(den) < 1e-14, 1.0, (num / np.where(den == 0, 1, den)) ** 2)
    return p / p.sum(axis=1, keepdims=True)


def accepted(k: np.ndarray | int, t: int, n: int = 1) -> np.ndarray | bool:
    """Low-energy window flag: top kept bit equal to 1 (phase in ``[1/2, 1)``)."""
    return (np.asarray(k) >> (t - 1)) & 1 == 1


def per_eigenstate_accept_probability(energies: np.ndarray, cfg: QpeFilterConfig) -> np.ndarray:
    dist = qpe_outcome_distribution(phase_of(energies, cfg), cfg.t)
    return dist[:, accepted(np.arange(2**cfg.t), cfg.t)].sum(axis=1)


def accept_probability_median(q: np.ndarray | float, r: int) -> np.ndarray:
    """Probability that a strict majority of ``r`` readouts accept, per-readout rate ``q``."""
    from scipy.stats import binom

    need = r // 2 + 1
    return binom.sf(need - 1, r, np.asarray(q, float))


@dataclass
class FilterRecord:
    window: tuple[float, float, float]
    t: int
    n: int
    r: int
    outcomes: list[int]
    accepted_bits: list[bool]
    success: bool
    gamma2: float
    seed: int

    def to_json(self) -> dict:
        return asdict(self)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True))


@dataclass(frozen=True, eq=False)
class FilterResult:
    state: FockStatevector | None
    success: bool
    record: FilterRecord


def _register_amplitudes(vec: np.ndarray, evolution: Callable[[np.ndarray], np.ndarray], m: int) -> np.ndarray:
    """Row ``k``: system component attached to register outcome ``k`` after the inverse QFT."""
    ladder = [vec]
    for _ in range(m - 1):
        ladder.append(evolution(ladder[-1]))
    ks = np.arange(m)
    return (np.exp(-2j * np.pi * np.outer(ks, ks) / m) / m) @ np.array(ladder)


def coarse_qpe_filter(
    state: FockStatevector,
    cfg: QpeFilterConfig,
    solution: EigenSolution | None = None,
    evolution: Callable[[np.ndarray], np.ndarray] | None = None,
    support_tol: float = 1e-10,
) -> FilterResult:
    """Simulate ``r`` rounds of single-bit coarse QPE and a classical median.

    With ``solution`` the response is computed per eigencomponent: each round
    samples a full ``t``-bit readout and reweights the components by its
    likelihood; on success the returned state is the eigenbasis projection onto
    ``[e0, e_prime]``. With ``evolution`` (one application of the oracle
    ``exp(-i T (H - E_top))``) the register is simulated directly by running
    the ``2^t - 1`` step ladder, and the post-measurement state is returned.
    """
    if (solution is None) == (evolution is None):
        raise ContractError("supply exactly one of solution or evolution")
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    r = cfg.repetitions
    m = 2**cfg.t
    acc_mask = accepted(np.arange(m), cfg.t)
    outcomes: list[int] = []
    if solution is not None:
        vecs = solution.vectors
        c = vecs.conj().T @ state.amplitudes
        w = np.abs(c) ** 2
        if abs(w.sum() - 1.0) > 1e-8:
            raise ContractError("solution does not span the state; pass a complete eigenbasis")
        on = w > support_tol
        lo, hi = solution.energies[on].min(), solution.energies[on].max()
        if lo < cfg.e0 - 1e-12 or hi > cfg.e_max + 1e-12:
            raise ContractError(f"state support [{lo:.6f}, {hi:.6f}] lies outside the window [{cfg.e0}, {cfg.e_max}]")
        dist = qpe_outcome_distribution(phase_of(solution.energies, cfg), cfg.t)
        post = w.copy()
        for _ in range(r):
            pk = post @ dist
            k = int(rng.choice(m, p=pk / pk.sum()))
            outcomes.append(k)
            post = post * dist[:, k]
            post = post / post.sum()
        inside = solution.energies <= cfg.e_prime
        proj = vecs[:, inside] @ c[inside]
        gamma2 = float(np.vdot(proj, proj).real)
        bits = [bool(acc_mask[k]) for k in outcomes]
        success = sum(bits) > r / 2
        out = None
        if success and gamma2 > 0:
            out = FockStatevector(proj / math.sqrt(gamma2), state.basis)
    else:
        cur = state.amplitudes
        for _ in range(r):
            amps = _register_amplitudes(cur, evolution, m)
            pk = np.real(np.einsum("ij,ij->i", amps.conj(), amps))
            k = int(rng.choice(m, p=pk / pk.sum()))
            outcomes.append(k)
            cur = amps[k] / math.sqrt(pk[k])
        bits = [bool(acc_mask[k]) for k in outcomes]
        success = sum(bits) > r / 2
        # single-readout acceptance weight of the input stands in for gamma^2
        amps = _register_amplitudes(state.amplitudes, evolution, m)
        gamma2 = float(np.real(np.einsum("ij,ij->i", amps.conj(), amps))[acc_mask].sum())
        out = FockStatevector(cur, state.basis) if success else None
    rec = FilterRecord(
        (cfg.e0, cfg.e_prime, cfg.e_max), cfg.t, cfg.n, r, outcomes, bits, bool(success), gamma2, cfg.seed
    )
    return FilterResult(out, bool(success), rec)


def build_zeta_state(phi: FockStatevector, psi: FockStatevector, alpha: float, beta: float) -> ZetaState:
    """Ancilla-system state ``(alpha |0>|phi> + beta |1>|psi>) / (gamma sqrt 2)``."""
    if not phi.basis.same_space(psi.basis):
        raise ContractError("phi and psi must share a basis")
    if alpha < 0 or beta < 0 or alpha + beta == 0:
        raise ContractError("alpha and beta must be nonnegative and not both zero")
    return ZetaState(phi.amplitudes, psi.amplitudes, float(alpha), float(beta))
