"""Exact Fock-space reference: bases, sparse operators, diagonalization,
spin labels, dipole/ISC matrix elements, Lorentzian spectra and the
classical rate-equation model of ODMR contrast.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .constants import ALPHA_FS, HARTREE_TO_EV
from .errors import ContractError, DegenerateModelError
from .fock import (
    DEFAULT_BASIS_CAP,
    FockBasis,
    one_body_matrix,
    operator_matrix,
    s2_matrix,
    sector_basis,
    spin_free_to_spin_orbital,
    two_body_terms,
)
from .model import ActiveSpaceModel, DipoleOperator, SpinResolvedOperator
from .spectrum import SpectrumTrace

SectorBasis = FockBasis

DENSE_LIMIT = 2000


def build_sector_basis(n_orbitals: int, n_up: int, n_down: int, cap: int = DEFAULT_BASIS_CAP) -> FockBasis:
    """All determinants with ``n_up`` alpha and ``n_down`` beta electrons.

    States are ordered by ascending bitmask (bit ``p`` = (p, alpha), bit
    ``N + p`` = (p, beta)).
    """
    return sector_basis(n_orbitals, n_up, n_down, cap)


def sparse_hamiltonian(model: ActiveSpaceModel, basis: FockBasis) -> sp.csr_matrix:
    """Fock matrix of the spin-free Hamiltonian on ``basis`` (Hermitian)."""
    if basis.n_orbitals != model.n_orbitals:
        raise ContractError("basis and model orbital counts differ")
    terms = [(c, ops) for c, ops in _one_body_terms_spatial(model.t_eff, model.n_orbitals)]
    terms.extend(two_body_terms(model.v_eff, model.n_orbitals))
    h = operator_matrix(terms, basis)
    h = h + model.core_energy * sp.identity(basis.dim, dtype=complex, format="csr")
    return (0.5 * (h + h.conj().T)).tocsr()


def _one_body_terms_spatial(t: np.ndarray, n: int):
    for p, q in zip(*np.nonzero(t)):
        for sig in (0, 1):
            yield complex(t[p, q]), ((int(p) + sig * n, True), (int(q) + sig * n, False))


def _electron_counts(basis: FockBasis) -> tuple[int | None, int | None, int]:
    if basis.kind == "sector":
        return basis.n_up, basis.n_down, basis.n_up + basis.n_down
    if basis.kind == "number":
        return None, None, basis.n_electrons
    return None, None, -1


def sparse_one_body(
    op: SpinResolvedOperator | np.ndarray,
    basis_in: FockBasis,
    basis_out: FockBasis | None = None,
) -> sp.csr_matrix:
    """Fock matrix of a one-body operator.

    ``op`` may be a :class:`SpinResolvedOperator`, a ``2N x 2N`` spin-orbital
    array, or an ``N x N`` spatial array (applied to both spins, as for a
    dipole component). Sector-changing operators need ``basis_out``.
    """
    mat = op.matrix if isinstance(op, SpinResolvedOperator) else np.asarray(op)
    n = basis_in.n_orbitals
    if mat.shape == (n, n):
        mat = spin_free_to_spin_orbital(mat)
    basis_out = basis_in if basis_out is None else basis_out
    _, _, ne_in = _electron_counts(basis_in)
    _, _, ne_out = _electron_counts(basis_out)
    if ne_in != ne_out:
        raise ContractError(f"particle numbers differ between bases ({ne_in} vs {ne_out})")
    return one_body_matrix(mat, basis_in, basis_out)


def dipole_matrices(d: DipoleOperator, basis: FockBasis) -> list[sp.csr_matrix]:
    return [sparse_one_body(np.asarray(c), basis) for c in d.components]


# --- diagonalization -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EigenSolution:
    """Lowest eigenpairs; ``vectors[:, i]`` belongs to ``energies[i]``."""

    energies: np.ndarray
    vectors: np.ndarray
    basis: FockBasis | None = None
    s2_values: np.ndarray | None = None
    labels: tuple | None = None
    unclassified: tuple[int, ...] = ()

    @property
    def count(self) -> int:
        return int(self.energies.shape[0])


def fix_phase(vectors: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Make the first non-negligible amplitude of each column real positive."""
    out = np.array(vectors, dtype=complex, copy=True)
    for k in range(out.shape[1]):
        col = out[:, k]
        big = np.nonzero(np.abs(col) > tol * max(np.max(np.abs(col)), 1e-300))[0]
        if big.size:
            a = col[big[0]]
            out[:, k] = col * (abs(a) / a)
    return out


def exact_diagonalize(
    h: sp.spmatrix | np.ndarray,
    k: int | None = None,
    basis: FockBasis | None = None,
    dense_limit: int = DENSE_LIMIT,
) -> EigenSolution:
    """``k`` lowest eigenpairs (all when ``k`` is ``None``).

    Dense LAPACK below ``dense_limit``; implicitly restarted Lanczos
    (ARPACK) above, falling back to dense when that fails and fits.
    """
    dim = h.shape[0]
    k = dim if k is None else min(k, dim)
    if dim <= dense_limit or k >= dim - 1:
        dense = h.toarray() if sp.issparse(h) else np.asarray(h)
        w, v = scipy.linalg.eigh(dense)
        w, v = w[:k], v[:, :k]
    else:
        try:
            w, v = spla.eigsh(h, k=k, which="SA", tol=1e-12, maxiter=20 * dim)
            order = np.argsort(w)
            w, v = w[order], v[:, order]
        except spla.ArpackNoConvergence:
            if dim > 20000:
                raise
            w, v = scipy.linalg.eigh(h.toarray())
            w, v = w[:k], v[:, :k]
    return EigenSolution(np.asarray(w, float), fix_phase(v), basis)


def s2_classify(solution: EigenSolution, basis: FockBasis | None = None, tol: float = 0.1) -> EigenSolution:
    """Attach ``<S^2>`` and ``(S, index-within-S)`` labels; flag outliers."""
    basis = basis or solution.basis
    if basis is None:
        raise ContractError("a basis is required to build S^2")
    s2 = s2_matrix(basis)
    vals = np.real(np.einsum("ij,ij->j", solution.vectors.conj(), s2 @ solution.vectors))
    labels, bad, seen = [], [], {}
    for i, x in enumerate(vals):
        s = 0.5 * (-1.0 + math.sqrt(max(1.0 + 4.0 * x, 0.0)))
        s_half = round(2 * s) / 2
        if abs(s_half * (s_half + 1) - x) > tol:
            bad.append(i)
            labels.append((None, None))
            continue
        idx = seen.get(s_half, 0)
        seen[s_half] = idx + 1
        labels.append((s_half, idx))
    return replace(solution, basis=basis, s2_values=vals, labels=tuple(labels), unclassified=tuple(bad))


def lowest_with_spin(solution: EigenSolution, s: float) -> int:
    """Index of the lowest classified state with total spin ``s``."""
    if solution.labels is None:
        raise ContractError("solution is not spin-classified")
    for i, (lab, _) in enumerate(solution.labels):
        if lab is not None and abs(lab - s) < 1e-9:
            return i
    raise ContractError(f"no state with S={s} among the computed eigenpairs")


# --- matrix elements -------------------------------------------------------------


def dipole_amplitudes(solution: EigenSolution, d: DipoleOperator, basis: FockBasis | None = None,
                      reference: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Per-axis ``|<E_i|D_rho|E_ref>|^2`` (shape ``(count, 3)``) and their sum over axes."""
    basis = basis or solution.basis
    v0 = solution.vectors[:, reference]
    amps = np.zeros((solution.count, 3))
    for rho, dm in enumerate(dipole_matrices(d, basis)):
        amps[:, rho] = np.abs(solution.vectors.conj().T @ (dm @ v0)) ** 2
    return amps, amps.sum(axis=1)


def isc_matrix_elements(
    solution_initial: EigenSolution,
    solution_final: EigenSolution,
    soc_component: SpinResolvedOperator,
    basis_initial: FockBasis | None = None,
    basis_final: FockBasis | None = None,
) -> np.ndarray:
    """``M[f, i] = <E_f|H_SOC|E_i>`` with the phase convention of :func:`fix_phase`."""
    bi = basis_initial or solution_initial.basis
    bf = basis_final or solution_final.basis
    op = sparse_one_body(soc_component, bi, bf)
    vi = fix_phase(solution_initial.vectors)
    vf = fix_phase(solution_final.vectors)
    return vf.conj().T @ (op @ vi)


def isc_rate(element: complex, g: float = 1.0, x_if: float = 1.0) -> float:
    """``2 pi g |element|^2 X_if``."""
    if g < 1 or x_if < 0:
        raise ContractError("require g >= 1 and X_if >= 0")
    return 2.0 * math.pi * g * abs(element) ** 2 * x_if


def radiative_rate(e_i: float, e_j: float, amp2: float, alpha: float = ALPHA_FS) -> float:
    """Spontaneous emission rate ``(4/3) [alpha (E_i - E_j)]^3 |D|^2`` (atomic units)."""
    if e_i <= e_j:
        raise ContractError("emission requires E_i > E_j")
    return 4.0 / 3.0 * (alpha * (e_i - e_j)) ** 3 * amp2


def lorentzian_spectrum(gaps: np.ndarray, amp2: np.ndarray, eta: float, omegas: np.ndarray) -> np.ndarray:
    om = np.asarray(omegas, float)[:, None]
    return np.sum(np.asarray(amp2)[None, :] * eta / ((np.asarray(gaps)[None, :] - om) ** 2 + eta**2), axis=1)


def reference_spectrum(
    solution: EigenSolution,
    d: DipoleOperator,
    e0: float,
    eta: float,
    omegas: np.ndarray,
    basis: FockBasis | None = None,
) -> SpectrumTrace:
    """Lorentzian emission spectrum ``sum_{n>0} sum_rho |D_n0|^2 eta / ((E_n - E0 - w)^2 + eta^2)``."""
    if eta <= 0:
        raise ContractError("eta must be positive")
    _, total = dipole_amplitudes(solution, d, basis)
    gaps = solution.energies[1:] - e0
    y = lorentzian_spectrum(gaps, total[1:], eta, omegas)
    return SpectrumTrace(np.asarray(omegas, float), y, {"kind": "reference", "eta": eta, "e0": e0})


def eigen_report(solution: EigenSolution, amp2: np.ndarray | None = None) -> dict:
    out = {
        "energies_Ha": solution.energies.tolist(),
        "energies_eV": (solution.energies * HARTREE_TO_EV).tolist(),
    }
    if solution.s2_values is not None:
        out["s2"] = solution.s2_values.tolist()
        out["spin"] = [lab[0] for lab in solution.labels]
    if amp2 is not None:
        out["dipole_amp2"] = np.asarray(amp2).tolist()
    return out


def write_eigen_report(path: str | Path, solution: EigenSolution, amp2: np.ndarray | None = None) -> None:
    Path(path).write_text(json.dumps(eigen_report(solution, amp2), indent=2))


# --- rate equations --------------------------------------------------------------


@dataclass(frozen=True)
class Level:
    name: str
    manifold: str  # "GS", "ES" or "shelf"
    spin: float = 1.0
    m: int = 0


@dataclass(frozen=True, eq=False)
class RateModel:
    """Classical population model.

    ``rates[i, l]`` and ``radiative[i, l]`` are transition rates from level
    ``i`` to level ``l``. ``mw_rate`` is added in both directions between each
    pair of ``mw_pairs``. ``isc_inputs`` records ``(g, X_if)`` per ISC channel.
    """

    levels: tuple[Level, ...]
    rates: np.ndarray
    radiative: np.ndarray
    mw_rate: float = 0.0
    mw_pairs: tuple[tuple[int, int], ...] = ()
    isc_inputs: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        n = len(self.levels)
        for m in (self.rates, self.radiative):
            m = np.asarray(m, float)
            if m.shape != (n, n):
                raise ContractError("rate matrices must be n_levels x n_levels")
            if np.any(m < 0):
                raise ContractError("rates must be non-negative")
        if self.mw_rate < 0:
            raise ContractError("mw_rate must be non-negative")

    def total_rates(self, mw_rate: float | None = None) -> np.ndarray:
        t = np.asarray(self.rates, float) + np.asarray(self.radiative, float)
        w = self.mw_rate if mw_rate is None else mw_rate
        t = t.copy()
        for i, l in self.mw_pairs:
            t[i, l] += w
            t[l, i] += w
        np.fill_diagonal(t, 0.0)
        return t

    def generator(self, mw_rate: float | None = None) -> np.ndarray:
        """``K`` with ``dn/dt = K n``."""
        t = self.total_rates(mw_rate)
        return t.T - np.diag(t.sum(axis=1))


@dataclass(frozen=True, eq=False)
class OdmrResult:
    populations: np.ndarray
    intensity_mw: float
    intensity_0: float
    contrast: float
    residual: float


def steady_state(k: np.ndarray, rcond: float = 1e-12) -> np.ndarray:
    """Normalized null vector of the generator ``k``."""
    ns = scipy.linalg.null_space(k, rcond=rcond)
    if ns.shape[1] != 1:
        raise DegenerateModelError(f"rate matrix null space has dimension {ns.shape[1]}, expected 1")
    n = ns[:, 0]
    return n / n.sum()


def photoluminescence(rm: RateModel, populations: np.ndarray) -> float:
    """``sum_{i in ES, j in GS} k^r_ij n_i``."""
    es = np.array([lv.manifold == "ES" for lv in rm.levels])
    gs = np.array([lv.manifold == "GS" for lv in rm.levels])
    kr = np.asarray(rm.radiative, float)
    return float(np.sum(kr[np.ix_(es, gs)] * populations[es][:, None]))


def odmr_contrast(rm: RateModel) -> OdmrResult:
    """Steady-state populations with MW on, PL with and without MW, contrast."""
    k_mw = rm.generator()
    n_mw = steady_state(k_mw)
    n_0 = steady_state(rm.generator(0.0))
    i_mw = photoluminescence(rm, n_mw)
    i_0 = photoluminescence(rm, n_0)
    if i_0 <= 0:
        raise DegenerateModelError("no photoluminescence without microwaves")
    res = float(np.linalg.norm(k_mw @ n_mw))
    return OdmrResult(n_mw, i_mw, i_0, 1.0 - i_mw / i_0, res)


def triplet_defect_model(
    pump: float,
    k_rad: float,
    k_isc_z: float,
    k_isc_perp: float,
    k_shelf_to_0: float,
    k_shelf_to_1: float,
    mw_rate: float,
) -> RateModel:
    """Five-level triplet defect: GS M=0, GS M=±1, ES M=0, ES M=±1, singlet shelf.

    MW mixing acts between the excited sublevels.
    """
    levels = (
        Level("GS0", "GS", 1.0, 0), Level("GS1", "GS", 1.0, 1),
        Level("ES0", "ES", 1.0, 0), Level("ES1", "ES", 1.0, 1),
        Level("S", "shelf", 0.0, 0),
    )
    r = np.zeros((5, 5))
    rad = np.zeros((5, 5))
    r[0, 2] = r[1, 3] = pump
    rad[2, 0] = rad[3, 1] = k_rad
    r[2, 4] = k_isc_z
    r[3, 4] = k_isc_perp
    r[4, 0] = k_shelf_to_0
    r[4, 1] = k_shelf_to_1
    return RateModel(levels, r, rad, mw_rate, ((2, 3),))
