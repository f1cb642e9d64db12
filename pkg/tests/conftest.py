"""Shared independent oracles: a dense Jordan-Wigner operator builder."""

from __future__ import annotations

import functools

import numpy as np
import pytest

_SIGMA_PLUS = np.array([[0.0, 0.0], [1.0, 0.0]])  # |1><0|
_Z = np.diag([1.0, -1.0])
_I = np.eye(2)


@functools.lru_cache(maxsize=None)
def _creators(n_modes: int) -> tuple[np.ndarray, ...]:
    # state index = sum_j n_j 2^j, so mode 0 is the last Kronecker factor
    out = []
    for j in range(n_modes):
        m = np.array([[1.0]])
        for k in reversed(range(n_modes)):
            f = _I if k > j else (_SIGMA_PLUS if k == j else _Z)
            m = np.kron(m, f)
        out.append(m)
    return tuple(out)


def dense_creators(n_orbitals: int) -> tuple[np.ndarray, ...]:
    return _creators(2 * n_orbitals)


def dense_one_body(h: np.ndarray, n_orbitals: int) -> np.ndarray:
    """Full Fock matrix of ``sum h_ij a†_i a_j`` (``2N x 2N`` or spatial ``N x N``)."""
    cr = dense_creators(n_orbitals)
    n = n_orbitals
    if h.shape == (n, n):
        h2 = np.zeros((2 * n, 2 * n), dtype=complex)
        h2[:n, :n] = h
        h2[n:, n:] = h
        h = h2
    out = np.zeros((4**n, 4**n), dtype=complex)
    for i in range(2 * n):
        for j in range(2 * n):
            if h[i, j] != 0:
                out += h[i, j] * cr[i] @ cr[j].T
    return out


def dense_hamiltonian(t: np.ndarray, v: np.ndarray, e: float, n_orbitals: int) -> np.ndarray:
    """Full Fock matrix of ``E + sum t E_pq + 1/2 sum (pq|rs) a†_ps a†_rt a_st a_qs``."""
    cr = dense_creators(n_orbitals)
    an = [c.T for c in cr]
    n = n_orbitals
    out = e * np.eye(4**n, dtype=complex) + dense_one_body(np.asarray(t, complex), n)
    for p in range(n):
        for q in range(n):
            for r in range(n):
                for s in range(n):
                    c = v[p, q, r, s]
                    if c == 0:
                        continue
                    for sg in (0, 1):
                        for tu in (0, 1):
                            out += 0.5 * c * (cr[p + sg * n] @ cr[r + tu * n] @ an[s + tu * n] @ an[q + sg * n])
    return out


def restrict(full: np.ndarray, states_out: np.ndarray, states_in: np.ndarray | None = None) -> np.ndarray:
    states_in = states_out if states_in is None else states_in
    return full[np.ix_(np.asarray(states_out), np.asarray(states_in))]


def random_state(dim: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return v / np.linalg.norm(v)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
