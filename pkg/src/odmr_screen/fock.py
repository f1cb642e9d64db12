"""Occupation-number bases and sparse second-quantized operators.

Spin-orbitals follow Jordan-Wigner order: mode ``p`` is (p, alpha) for
``0 <= p < N`` and mode ``N + p`` is (p, beta). A determinant is stored as an
integer bitmask whose bit ``j`` is the occupation of mode ``j``, and stands for
``a†_{j1} a†_{j2} ... |vac>`` with ``j1 < j2 < ...``. Bases list their
bitmasks in ascending integer order.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import CapacityError, ContractError

DEFAULT_BASIS_CAP = 4_000_000

Op = tuple[int, bool]  # (mode, is_creation)


def _masks_with_bits(n_modes: int, n_set: int) -> np.ndarray:
    out = [sum(1 << i for i in c) for c in itertools.combinations(range(n_modes), n_set)]
    return np.array(sorted(out), dtype=np.int64)


@dataclass(frozen=True, eq=False)
class FockBasis:
    """Ordered set of determinants over ``2 * n_orbitals`` spin-orbitals.

    ``kind`` is ``"sector"`` for fixed ``(n_up, n_down)``, ``"number"`` for a
    fixed total electron count and ``"full"`` for the whole Fock space.
    """

    n_orbitals: int
    states: np.ndarray
    kind: str
    n_up: int | None = None
    n_down: int | None = None
    n_electrons: int | None = None
    _lookup: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def dim(self) -> int:
        return int(self.states.shape[0])

    @property
    def n_modes(self) -> int:
        return 2 * self.n_orbitals

    def index(self, masks: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(indices, found)`` for an array of bitmasks."""
        masks = np.asarray(masks, dtype=np.int64)
        idx = np.searchsorted(self.states, masks)
        idx = np.clip(idx, 0, max(self.dim - 1, 0))
        found = self.states[idx] == masks if self.dim else np.zeros(masks.shape, bool)
        return idx, found

    def occupations(self) -> np.ndarray:
        """Boolean ``(dim, 2N)`` occupation table."""
        key = "occ"
        if key not in self._lookup:
            bits = (self.states[:, None] >> np.arange(self.n_modes)[None, :]) & 1
            self._lookup[key] = bits.astype(bool)
        return self._lookup[key]

    def same_space(self, other: "FockBasis") -> bool:
        return (
            self.n_orbitals == other.n_orbitals
            and self.dim == other.dim
            and bool(np.array_equal(self.states, other.states))
        )

    def label(self, i: int) -> str:
        """Human-readable occupation string ``alpha|beta`` for state ``i``."""
        m = int(self.states[i])
        n = self.n_orbitals
        a = "".join(str((m >> k) & 1) for k in range(n))
        b = "".join(str((m >> (n + k)) & 1) for k in range(n))
        return f"{a}|{b}"


def sector_basis(
    n_orbitals: int, n_up: int, n_down: int, cap: int = DEFAULT_BASIS_CAP
) -> FockBasis:
    if n_orbitals < 1:
        raise ContractError("n_orbitals must be positive")
    if not (0 <= n_up <= n_orbitals and 0 <= n_down <= n_orbitals):
        raise ContractError(f"electron counts ({n_up}, {n_down}) outside [0, {n_orbitals}]")
    size = math.comb(n_orbitals, n_up) * math.comb(n_orbitals, n_down)
    if size > cap:
        raise CapacityError(f"sector dimension {size} exceeds cap {cap}")
    a = _masks_with_bits(n_orbitals, n_up)
    b = _masks_with_bits(n_orbitals, n_down) << n_orbitals
    states = np.sort((a[None, :] | b[:, None]).ravel())
    return FockBasis(n_orbitals, states, "sector", n_up, n_down, n_up + n_down)


def number_basis(n_orbitals: int, n_electrons: int, cap: int = DEFAULT_BASIS_CAP) -> FockBasis:
    if not 0 <= n_electrons <= 2 * n_orbitals:
        raise ContractError(f"n_electrons {n_electrons} outside [0, {2 * n_orbitals}]")
    size = math.comb(2 * n_orbitals, n_electrons)
    if size > cap:
        raise CapacityError(f"number-sector dimension {size} exceeds cap {cap}")
    states = _masks_with_bits(2 * n_orbitals, n_electrons)
    return FockBasis(n_orbitals, states, "number", n_electrons=n_electrons)


def full_basis(n_orbitals: int, cap: int = DEFAULT_BASIS_CAP) -> FockBasis:
    size = 1 << (2 * n_orbitals)
    if size > cap:
        raise CapacityError(f"Fock-space dimension {size} exceeds cap {cap}")
    return FockBasis(n_orbitals, np.arange(size, dtype=np.int64), "full")


def popcount(x: np.ndarray) -> np.ndarray:
    return np.bitwise_count(np.asarray(x, dtype=np.int64)).astype(np.int64)


def apply_ops(masks: np.ndarray, ops: Sequence[Op]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Apply an operator product (written left to right) to determinants.

    Returns ``(new_masks, signs, ok)``; entries with ``ok == False`` are
    annihilated.
    """
    cur = np.array(masks, dtype=np.int64, copy=True)
    sign = np.ones(cur.shape, dtype=np.int64)
    ok = np.ones(cur.shape, dtype=bool)
    for mode, creation in reversed(ops):
        bit = np.int64(1) << np.int64(mode)
        occ = (cur & bit) != 0
        ok &= ~occ if creation else occ
        parity = popcount(cur & (bit - 1)) & 1
        sign = np.where(parity == 1, -sign, sign)
        cur = cur ^ bit
    return cur, sign, ok


def operator_matrix(
    terms: Iterable[tuple[complex, Sequence[Op]]],
    basis_in: FockBasis,
    basis_out: FockBasis | None = None,
) -> sp.csr_matrix:
    """Sparse matrix of ``sum coef * ops`` from ``basis_in`` to ``basis_out``."""
    basis_out = basis_in if basis_out is None else basis_out
    rows, cols, vals = [], [], []
    src = basis_in.states
    col_idx = np.arange(basis_in.dim)
    for coef, ops in terms:
        if coef == 0:
            continue
        new, sign, ok = apply_ops(src, ops)
        if not ok.any():
            continue
        idx, found = basis_out.index(new[ok])
        if not found.all():
            bad = new[ok][~found][0]
            raise ContractError(
                f"operator maps into a determinant {int(bad):#x} outside the target basis"
            )
        rows.append(idx)
        cols.append(col_idx[ok])
        vals.append(coef * sign[ok])
    shape = (basis_out.dim, basis_in.dim)
    if not rows:
        return sp.csr_matrix(shape, dtype=complex)
    mat = sp.coo_matrix(
        (np.concatenate(vals).astype(complex), (np.concatenate(rows), np.concatenate(cols))),
        shape=shape,
    )
    return mat.tocsr()


def one_body_terms(h: np.ndarray, tol: float = 0.0) -> list[tuple[complex, tuple[Op, Op]]]:
    """Terms ``h_ij a†_i a_j`` of a spin-orbital one-body matrix."""
    out = []
    for i, j in zip(*np.nonzero(np.abs(h) > tol)):
        out.append((complex(h[i, j]), ((int(i), True), (int(j), False))))
    return out


def one_body_matrix(
    h: np.ndarray, basis_in: FockBasis, basis_out: FockBasis | None = None
) -> sp.csr_matrix:
    """Fock matrix of the spin-orbital one-body operator ``sum h_ij a†_i a_j``."""
    h = np.asarray(h)
    if h.shape != (basis_in.n_modes, basis_in.n_modes):
        raise ContractError(f"one-body matrix shape {h.shape} does not match basis")
    return operator_matrix(one_body_terms(h), basis_in, basis_out)


def spin_free_to_spin_orbital(t: np.ndarray) -> np.ndarray:
    """Embed a spatial ``N x N`` matrix identically in both spin blocks."""
    n = t.shape[0]
    out = np.zeros((2 * n, 2 * n), dtype=np.result_type(t, float))
    out[:n, :n] = t
    out[n:, n:] = t
    return out


def two_body_terms(v: np.ndarray, n_orbitals: int, tol: float = 0.0):
    """Terms of ``1/2 sum v_pqrs a†_{p s} a†_{r t} a_{s t} a_{q s}`` (chemists' v)."""
    n = n_orbitals
    for p, q, r, s in zip(*np.nonzero(np.abs(v) > tol)):
        c = 0.5 * complex(v[p, q, r, s])
        for sig in (0, 1):
            for tau in (0, 1):
                P, Q = int(p) + sig * n, int(q) + sig * n
                R, S = int(r) + tau * n, int(s) + tau * n
                if P == R or Q == S:
                    continue
                yield c, ((P, True), (R, True), (S, False), (Q, False))


def diag_from_occupations(basis: FockBasis, single: np.ndarray, pair: np.ndarray | None = None) -> np.ndarray:
    """Diagonal ``sum_i c_i z_i + sum_{i<j} c_ij z_i z_j`` with ``z = 1 - 2n``.

    ``pair`` is symmetric; its diagonal is ignored.
    """
    z = 1.0 - 2.0 * basis.occupations()
    out = z @ np.asarray(single, dtype=float)
    if pair is not None:
        off = np.asarray(pair, dtype=float) - np.diag(np.diag(pair))
        out = out + 0.5 * np.einsum("ij,ij->i", z @ off, z)
    return out


# --- spin operators ---------------------------------------------------------


def sz_matrix_spin_orbital(n_orbitals: int) -> np.ndarray:
    """Single-particle ``s_z`` over spin-orbitals (alpha block first)."""
    return np.diag(np.r_[0.5 * np.ones(n_orbitals), -0.5 * np.ones(n_orbitals)]).astype(complex)


def splus_matrix_spin_orbital(n_orbitals: int) -> np.ndarray:
    """Single-particle ``s_+ = sum_k a†_{k alpha} a_{k beta}``."""
    n = n_orbitals
    m = np.zeros((2 * n, 2 * n), dtype=complex)
    m[np.arange(n), n + np.arange(n)] = 1.0
    return m


def sz_diagonal(basis: FockBasis) -> np.ndarray:
    occ = basis.occupations()
    n = basis.n_orbitals
    return 0.5 * (occ[:, :n].sum(1) - occ[:, n:].sum(1)).astype(float)


def raised_basis(basis: FockBasis, delta_m: int) -> FockBasis | None:
    """Sector reached by ``delta_m`` units of ``S_+`` (``None`` if empty)."""
    if basis.kind != "sector":
        return basis
    nu, nd = basis.n_up + delta_m, basis.n_down - delta_m
    if not (0 <= nu <= basis.n_orbitals and 0 <= nd <= basis.n_orbitals):
        return None
    return sector_basis(basis.n_orbitals, nu, nd)


def s2_matrix(basis: FockBasis) -> sp.csr_matrix:
    """Total spin ``S^2 = S_z^2 + S_z + S_- S_+`` on ``basis``."""
    sz = sz_diagonal(basis)
    out = sp.diags(sz**2 + sz).astype(complex).tocsr()
    mid = raised_basis(basis, 1)
    if mid is not None and mid.dim:
        splus = one_body_matrix(splus_matrix_spin_orbital(basis.n_orbitals), basis, mid)
        out = out + (splus.conj().T @ splus)
    return out.tocsr()


def expectation(op: sp.spmatrix | np.ndarray, vec: np.ndarray) -> complex:
    return complex(np.vdot(vec, op @ vec))
