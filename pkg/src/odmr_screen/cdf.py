"""Compressed double factorization and the rotated Z/ZZ frame.

The two-body tensor is approximated as

    v_pqrs ~ sum_l sum_kl U^l_pk U^l_qk Z^l_kl U^l_rl U^l_sl

with real orthogonal ``U^l = expm(X^l)`` and symmetric ``Z^l``. Writing
``a†_p a†_r a_s a_q = E_pq E_rs - delta_qr E_ps`` and expanding the rotated
number operators in ``z = 1 - 2n`` moves the linear pieces of every fragment
into the one-body term, leaving pure ZZ fragments:

    H = c + sum_a (-lambda_a / 2) z'_a + sum_l sum_{(k,g) != (l,t)} (Z^l_kl / 8) z_kg z_lt

where ``lambda`` and ``U^0`` diagonalize
``t~ = t - 1/2 sum_r v_prrq + sum_l U^l diag(Z^l 1) U^l^T`` and
``c = E + sum_k lambda_k - 1/2 sum Z + 1/4 sum_k Z_kk`` (spatial eigenvalues
counted once per spin in the one-body sum).
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.optimize
import scipy.sparse as sp

from .errors import ContractError
from .fock import FockBasis, one_body_matrix, spin_free_to_spin_orbital
from .model import ActiveSpaceModel

log = logging.getLogger(__name__)

ORTHO_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class CdfFragment:
    u: np.ndarray
    z: np.ndarray

    def __post_init__(self) -> None:
        u = np.asarray(self.u, float)
        z = np.asarray(self.z, float)
        if u.ndim != 2 or u.shape[0] != u.shape[1]:
            raise ContractError("fragment u must be square")
        if z.shape not in (u.shape, (u.shape[0],)):
            raise ContractError("fragment z shape does not match u")
        if np.max(np.abs(u.T @ u - np.eye(u.shape[0]))) > 1e-8:
            raise ContractError("fragment u is not orthogonal")
        if z.ndim == 2 and np.max(np.abs(z - z.T)) > 1e-12:
            raise ContractError("fragment z is not symmetric")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "z", z)

    def tensor(self) -> np.ndarray:
        """``sum_kl U_pk U_qk Z_kl U_rl U_sl``."""
        return _fragment_tensor(self.u, self.z)


@dataclass(frozen=True)
class CdfOptions:
    n_starts: int = 4
    seed: int = 0
    max_iters: int = 10000
    tol: float = 1e-10
    perturbation: float = 0.3
    polish: bool = True
    polish_limit: int = 2000


@dataclass(frozen=True, eq=False)
class CdfFactorization:
    """One-body fragment (``u`` orthogonal, ``z`` eigenvalues), L two-body fragments
    and the constant of the rotated frame."""

    n_orbitals: int
    one_body: CdfFragment
    two_body: tuple[CdfFragment, ...]
    constant_shift: float
    core_energy: float
    residual: float
    seed: int = 0
    converged: bool = True
    history: tuple[float, ...] = field(default_factory=tuple)

    @property
    def n_fragments(self) -> int:
        return len(self.two_body)

    def effective_one_body(self) -> np.ndarray:
        u, z = self.one_body.u, self.one_body.z
        return (u * z[None, :]) @ u.T

    def to_json(self) -> dict:
        return {
            "n_orbitals": self.n_orbitals,
            "one_body": {"u": self.one_body.u.tolist(), "z": self.one_body.z.tolist()},
            "two_body": [{"u": f.u.tolist(), "z": f.z.tolist()} for f in self.two_body],
            "constant_shift": self.constant_shift,
            "core_energy": self.core_energy,
            "residual": self.residual,
            "seed": self.seed,
            "converged": self.converged,
        }

    @classmethod
    def from_json(cls, data: dict) -> "CdfFactorization":
        return cls(
            int(data["n_orbitals"]),
            CdfFragment(np.array(data["one_body"]["u"]), np.array(data["one_body"]["z"])),
            tuple(CdfFragment(np.array(f["u"]), np.array(f["z"])) for f in data["two_body"]),
            float(data["constant_shift"]),
            float(data["core_energy"]),
            float(data["residual"]),
            int(data.get("seed", 0)),
            bool(data.get("converged", True)),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "CdfFactorization":
        return cls.from_json(json.loads(Path(path).read_text()))


# --- one-body ------------------------------------------------------------------


def factorize_one_body_matrix(t: np.ndarray, tol: float = 1e-10) -> CdfFragment:
    t = np.asarray(t, float)
    if np.max(np.abs(t - t.T)) > tol:
        raise ContractError("one-body matrix is not symmetric")
    w, u = np.linalg.eigh(0.5 * (t + t.T))
    return CdfFragment(u, w)


def factorize_one_body(model: ActiveSpaceModel) -> CdfFragment:
    """Eigendecomposition ``t_eff = u diag(z) u^T`` (ascending ``z``)."""
    return factorize_one_body_matrix(model.t_eff)


def exchange_corrected_one_body(model: ActiveSpaceModel) -> np.ndarray:
    """``t_pq - 1/2 sum_r v_prrq`` (operator form ``E + sum t' E + 1/2 sum v E E``)."""
    return model.t_eff - 0.5 * np.einsum("prrq->pq", model.v_eff)


# --- two-body fit --------------------------------------------------------------


def _fragment_tensor(u: np.ndarray, z: np.ndarray) -> np.ndarray:
    if z.ndim == 1:
        z = np.diag(z)
    a = np.einsum("pk,qk->pqk", u, u)
    return np.einsum("pqk,kl,rsl->pqrs", a, z, a, optimize=True)


def _n_anti(n: int) -> int:
    return n * (n - 1) // 2


def _n_sym(n: int) -> int:
    return n * (n + 1) // 2


class _Packer:
    def __init__(self, n: int, n_frag: int) -> None:
        self.n = n
        self.L = n_frag
        self.iu_a = np.triu_indices(n, 1)
        self.iu_s = np.triu_indices(n)
        self.na, self.ns = _n_anti(n), _n_sym(n)
        self.size = n_frag * (self.na + self.ns)

    def unpack(self, x: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        out = []
        off = 0
        for _ in range(self.L):
            X = np.zeros((self.n, self.n))
            X[self.iu_a] = x[off:off + self.na]
            X = X - X.T
            off += self.na
            Z = np.zeros((self.n, self.n))
            Z[self.iu_s] = x[off:off + self.ns]
            Z = Z + Z.T - np.diag(np.diag(Z))
            off += self.ns
            out.append((X, Z))
        return out

    def pack(self, pairs: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
        parts = []
        for X, Z in pairs:
            parts.append(X[self.iu_a])
            parts.append(Z[self.iu_s])
        return np.concatenate(parts) if parts else np.zeros(0)

    def pack_grad(self, grads: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
        parts = []
        for gX, gZ in grads:
            parts.append((gX - gX.T)[self.iu_a])
            gz = gZ + gZ.T - np.diag(np.diag(gZ))
            parts.append(gz[self.iu_s])
        return np.concatenate(parts) if parts else np.zeros(0)


def _objective(x: np.ndarray, v: np.ndarray, packer: _Packer) -> tuple[float, np.ndarray]:
    pairs = packer.unpack(x)
    us = [scipy.linalg.expm(X) for X, _ in pairs]
    approx = np.zeros_like(v)
    for u, (_, Z) in zip(us, pairs):
        approx += _fragment_tensor(u, Z)
    r = v - approx
    f = float(np.sum(r * r))
    grads = []
    for u, (X, Z) in zip(us, pairs):
        a = np.einsum("pk,qk->pqk", u, u)
        gz = -2.0 * np.einsum("pqrs,pqk,rsl->kl", r, a, a, optimize=True)
        # dF/dU_ak = -8 sum R_aqrs U_qk Z_kl U_rl U_sl
        m = np.einsum("rsl,kl->rsk", a, Z)
        gu = -8.0 * np.einsum("aqrs,qk,rsk->ak", r, u, m, optimize=True)
        gx = scipy.linalg.expm_frechet(X.T, gu, compute_expm=False)
        grads.append((gx, gz))
    return f, packer.pack_grad(grads)


def _project_z(r: np.ndarray, u: np.ndarray) -> np.ndarray:
    a = np.einsum("pk,qk->pqk", u, u)
    return np.einsum("pqrs,pqk,rsl->kl", r, a, a, optimize=True)


def _proper_rotation(u: np.ndarray) -> np.ndarray:
    u = np.array(u, float)
    if np.linalg.det(u) < 0:
        u[:, 0] *= -1
    return u


def _log_orthogonal(u: np.ndarray) -> np.ndarray:
    x = scipy.linalg.logm(_proper_rotation(u))
    x = np.real(x)
    return 0.5 * (x - x.T)


def _greedy_fragment(r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Leading double-factorization term of the residual ``r``."""
    n = r.shape[0]
    sup = r.reshape(n * n, n * n)
    sup = 0.5 * (sup + sup.T)
    w, vec = np.linalg.eigh(sup)
    lead = vec[:, int(np.argmax(np.abs(w)))].reshape(n, n)
    _, u = np.linalg.eigh(0.5 * (lead + lead.T))
    x = _log_orthogonal(u)
    u = scipy.linalg.expm(x)
    return x, _project_z(r, u)


def _polish_z(v: np.ndarray, us: list[np.ndarray]) -> list[np.ndarray]:
    n = v.shape[0]
    iu = np.triu_indices(n)
    cols = []
    for u in us:
        a = np.einsum("pk,qk->pqk", u, u)
        for k, l in zip(*iu):
            t = np.einsum("pq,rs->pqrs", a[:, :, k], a[:, :, l])
            if k != l:
                t = t + t.transpose(2, 3, 0, 1)
            cols.append(t.ravel())
    design = np.stack(cols, 1)
    coef, *_ = np.linalg.lstsq(design, v.ravel(), rcond=None)
    out = []
    ns = len(iu[0])
    for i in range(len(us)):
        Z = np.zeros((n, n))
        Z[iu] = coef[i * ns:(i + 1) * ns]
        out.append(Z + Z.T - np.diag(np.diag(Z)))
    return out


def _run_lbfgs(v: np.ndarray, x0: np.ndarray, packer: _Packer, opts: CdfOptions):
    scale = max(float(np.sum(v * v)), 1e-300)

    def fun(x):
        f, g = _objective(x, v, packer)
        return f / scale, g / scale

    res = scipy.optimize.minimize(
        fun, x0, jac=True, method="L-BFGS-B",
        options={"maxiter": opts.max_iters, "ftol": opts.tol * 1e-6, "gtol": 1e-14, "maxcor": 30},
    )
    f0 = fun(x0)[0]
    if res.fun > f0:
        return x0, f0 * scale, False
    return res.x, float(res.fun) * scale, bool(res.success) or res.nit < opts.max_iters


def _residual_norm(v: np.ndarray, frags: list[tuple[np.ndarray, np.ndarray]]) -> float:
    approx = np.zeros_like(v)
    for u, z in frags:
        approx += _fragment_tensor(u, z)
    return float(np.linalg.norm(v - approx))


def factorize_two_body(
    model: ActiveSpaceModel | np.ndarray,
    n_fragments: int,
    opts: CdfOptions = CdfOptions(),
    warm_start: list[CdfFragment] | None = None,
) -> tuple[list[CdfFragment], float, bool]:
    """Fit ``n_fragments`` rotated quadratics to ``v_eff``.

    Returns ``(fragments, frobenius_residual, converged)``. Start 0 is the
    greedy double-factorization initialization (or ``warm_start`` padded
    greedily); further starts perturb it with seeded antisymmetric noise.
    """
    v = model.v_eff if isinstance(model, ActiveSpaceModel) else np.asarray(model, float)
    if n_fragments < 1:
        raise ContractError("need at least one fragment")
    n = v.shape[0]
    packer = _Packer(n, n_fragments)
    rng = np.random.default_rng(opts.seed)

    pairs: list[tuple[np.ndarray, np.ndarray]] = []
    r = v.copy()
    for frag in (warm_start or [])[:n_fragments]:
        x = _log_orthogonal(frag.u)
        z = frag.z if frag.z.ndim == 2 else np.diag(frag.z)
        pairs.append((x, np.array(z)))
        r = r - _fragment_tensor(scipy.linalg.expm(x), z)
    while len(pairs) < n_fragments:
        x, z = _greedy_fragment(r)
        pairs.append((x, z))
        r = r - _fragment_tensor(scipy.linalg.expm(x), z)
    base = packer.pack(pairs)

    best = (base, _objective(base, v, packer)[0], True)
    for start in range(max(opts.n_starts, 1)):
        if start == 0:
            x0 = base
        else:
            noise = []
            for X, Z in pairs:
                k = rng.normal(scale=opts.perturbation, size=(n, n))
                xn = X + 0.5 * (k - k.T)
                noise.append((xn, _project_z(v, scipy.linalg.expm(xn)) / n_fragments))
            x0 = packer.pack(noise)
        x, f, ok = _run_lbfgs(v, x0, packer, opts)
        if f < best[1]:
            best = (x, f, ok)
        if best[1] <= 1e-24 * max(float(np.sum(v * v)), 1e-300):
            break
    x, _, ok = best
    fitted = [(scipy.linalg.expm(X), Z) for X, Z in packer.unpack(x)]
    if opts.polish and n_fragments * n * n <= opts.polish_limit:
        zs = _polish_z(v, [u for u, _ in fitted])
        trial = [(u, z) for (u, _), z in zip(fitted, zs)]
        if _residual_norm(v, trial) <= _residual_norm(v, fitted):
            fitted = trial
    if not ok:
        warnings.warn("two-body factorization did not converge within max_iters", RuntimeWarning, stacklevel=2)
    frags = [CdfFragment(u, 0.5 * (z + z.T)) for u, z in fitted]
    return frags, _residual_norm(v, [(f.u, f.z) for f in frags]), ok


def build_factorization(
    model: ActiveSpaceModel,
    two_body: list[CdfFragment],
    residual: float,
    seed: int = 0,
    converged: bool = True,
    history: tuple[float, ...] = (),
) -> CdfFactorization:
    """Fold the linear parts of the fragments into the one-body term."""
    t_tilde = exchange_corrected_one_body(model)
    c2 = 0.0
    for f in two_body:
        t_tilde = t_tilde + (f.u * (f.z.sum(axis=1))[None, :]) @ f.u.T
        c2 += -0.5 * float(f.z.sum()) + 0.25 * float(np.trace(f.z))
    one = factorize_one_body_matrix(0.5 * (t_tilde + t_tilde.T), tol=1e-8)
    const = model.core_energy + float(one.z.sum()) + c2
    return CdfFactorization(
        model.n_orbitals, one, tuple(two_body), const, model.core_energy, residual, seed, converged, history
    )


def factorize(model: ActiveSpaceModel, n_fragments: int | None = None, opts: CdfOptions = CdfOptions()) -> CdfFactorization:
    """Full CDF with default ``L = N``."""
    n_fragments = model.n_orbitals if n_fragments is None else n_fragments
    frags, res, ok = factorize_two_body(model, n_fragments, opts)
    return build_factorization(model, frags, res, opts.seed, ok)


def sweep(model: ActiveSpaceModel, n_values: list[int], opts: CdfOptions = CdfOptions()) -> list[CdfFactorization]:
    """Factorizations over increasing ``L``, each warm-started from the previous one
    so the residual is non-increasing."""
    out: list[CdfFactorization] = []
    prev: list[CdfFragment] | None = None
    prev_res = np.inf
    for nf in sorted(n_values):
        frags, res, ok = factorize_two_body(model, nf, opts, warm_start=prev)
        if prev is not None and res > prev_res:
            # padding the previous fit with an empty fragment is always available
            frags = list(prev) + [CdfFragment(np.eye(model.n_orbitals), np.zeros((model.n_orbitals,) * 2))] * (nf - len(prev))
            res = prev_res
        out.append(build_factorization(model, frags, res, opts.seed, ok))
        prev, prev_res = frags, res
    return out


# --- rotated frame ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class QubitFrame:
    """Coefficients of the rotated Z/ZZ form over ``2N`` spin-orbitals.

    ``one_body_u`` (``2N x 2N`` unitary) and ``single_z`` give the one-body
    fragment ``sum_a single_z[a] z'_a`` with ``z'`` in the basis of the columns
    of ``one_body_u``. Each two-body fragment has a real orthogonal spatial
    rotation applied to both spins and ``pair_zz[a, b]`` coefficients
    (ordered pairs, zero diagonal).
    """

    n_orbitals: int
    one_body_matrix: np.ndarray
    one_body_u: np.ndarray
    single_z: np.ndarray
    fragment_u: tuple[np.ndarray, ...]
    pair_zz: tuple[np.ndarray, ...]
    two_body_constant: float
    constant_shift: float
    residual: float = 0.0

    @property
    def n_fragments(self) -> int:
        return len(self.fragment_u)

    @property
    def spin_free(self) -> bool:
        n = self.n_orbitals
        h = self.one_body_matrix
        return bool(np.max(np.abs(h[:n, n:])) == 0 and np.max(np.abs(h[:n, :n] - h[n:, n:])) == 0)

    def with_one_body(self, extra: np.ndarray) -> "QubitFrame":
        """Frame with a Hermitian spin-orbital term added to the one-body fragment."""
        h = self.one_body_matrix + np.asarray(extra, complex)
        if np.max(np.abs(h - h.conj().T)) > 1e-10:
            raise ContractError("one-body addition is not Hermitian")
        return _frame_from_one_body(self, 0.5 * (h + h.conj().T))


def _frame_from_one_body(frame: QubitFrame, h: np.ndarray) -> QubitFrame:
    lam, u0 = np.linalg.eigh(h)
    const = frame.two_body_constant + 0.5 * float(lam.sum())
    return replace(frame, one_body_matrix=h, one_body_u=u0, single_z=-0.5 * lam, constant_shift=const)


def _pair_matrix(z: np.ndarray) -> np.ndarray:
    big = np.kron(np.ones((2, 2)), z) / 8.0
    np.fill_diagonal(big, 0.0)
    return big


def assemble_qubit_frame(f: CdfFactorization) -> QubitFrame:
    """Single-Z (``-lambda/2``) and pair-ZZ (``Z_kl/8``) coefficients plus the constant."""
    n = f.n_orbitals
    h = spin_free_to_spin_orbital(f.effective_one_body()).astype(complex)
    # spin-free eigenbasis keeps alpha and beta blocks separate
    u0 = spin_free_to_spin_orbital(f.one_body.u).astype(complex)
    lam = np.r_[f.one_body.z, f.one_body.z]
    return QubitFrame(
        n, h, u0, -0.5 * lam,
        tuple(fr.u for fr in f.two_body), tuple(_pair_matrix(fr.z) for fr in f.two_body),
        f.constant_shift - float(f.one_body.z.sum()), f.constant_shift, f.residual,
    )


def frame_from_model(model: ActiveSpaceModel, n_fragments: int | None = None, opts: CdfOptions = CdfOptions()) -> QubitFrame:
    return assemble_qubit_frame(factorize(model, n_fragments, opts))


def exact_diagonal_frame(model: ActiveSpaceModel) -> QubitFrame:
    """Frame of a density-density model (``v_pqrs`` nonzero only for ``p = q``, ``r = s``)
    and diagonal ``t``; exact with one identity-rotation fragment."""
    n = model.n_orbitals
    z = np.einsum("ppqq->pq", model.v_eff)
    rebuilt = _fragment_tensor(np.eye(n), z)
    if np.max(np.abs(rebuilt - model.v_eff)) > 1e-12:
        raise ContractError("model is not density-density")
    frag = CdfFragment(np.eye(n), z)
    return assemble_qubit_frame(build_factorization(model, [frag], 0.0))


# --- Fock-space images -----------------------------------------------------------


def _rotated_number_ops(u: np.ndarray, basis: FockBasis) -> list[sp.csr_matrix]:
    """Spin-resolved ``n'_a`` for the spin-orbital unitary ``u`` (2N columns)."""
    out = []
    for a in range(u.shape[1]):
        col = u[:, a]
        out.append(one_body_matrix(np.outer(col, col.conj()), basis))
    return out


def fragment_matrices(frame: QubitFrame, basis: FockBasis) -> list[sp.csr_matrix]:
    """Fock matrices ``[H_0, H_1, ..., H_L]`` of the frame's fragments.

    ``H_0`` is the one-body fragment including the constant shift.
    """
    dim = basis.dim
    ident = sp.identity(dim, dtype=complex, format="csr")
    h0 = one_body_matrix(frame.one_body_matrix, basis) + (frame.two_body_constant) * ident
    mats = [h0.tocsr()]
    n = frame.n_orbitals
    for u, pair in zip(frame.fragment_u, frame.pair_zz):
        u2 = np.zeros((2 * n, 2 * n))
        u2[:n, :n] = u
        u2[n:, n:] = u
        nops = _rotated_number_ops(u2, basis)
        zops = [ident - 2 * m for m in nops]
        acc = sp.csr_matrix((dim, dim), dtype=complex)
        for a in range(2 * n):
            for b in range(2 * n):
                if a != b and pair[a, b] != 0:
                    acc = acc + pair[a, b] * (zops[a] @ zops[b])
        mats.append(acc.tocsr())
    return mats


def frame_hamiltonian(frame: QubitFrame, basis: FockBasis) -> sp.csr_matrix:
    mats = fragment_matrices(frame, basis)
    out = mats[0]
    for m in mats[1:]:
        out = out + m
    return out.tocsr()
