"""Active-space model, one-body operators and their spin decompositions.

Two-electron integrals are stored in chemists' notation, ``v[p, q, r, s] =
(pq|rs)``, and enter the Hamiltonian as::

    H = E + sum_{pq,s} t_pq a†_{p s} a_{q s}
          + 1/2 sum_{pqrs,s,t} v_pqrs a†_{p s} a†_{r t} a_{s t} a_{q s}

This is the ordering used by FCIDUMP files (``value i j k l`` is ``(ij|kl)``).
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .constants import DEFAULT_CONSTANTS, PhysicalConstants
from .errors import ContractError, DataIntegrityError, DegenerateInputError, MalformedInputError

SYMMETRY_TOL = 1e-10

SOC_LABELS = (
    "soc_full",
    "soc_axial",
    "soc_perp",
    "soc_T00",
    "soc_T10",
    "soc_T11",
    "soc_T1m1",
    "sz",
    "custom",
)


def _eightfold_images(p: int, q: int, r: int, s: int) -> set[tuple[int, int, int, int]]:
    return {
        (p, q, r, s), (q, p, r, s), (p, q, s, r), (q, p, s, r),
        (r, s, p, q), (s, r, p, q), (r, s, q, p), (s, r, q, p),
    }


def symmetry_violation(t: np.ndarray, v: np.ndarray) -> float:
    """Largest deviation of ``(t, v)`` from the required permutation symmetry."""
    dev = float(np.max(np.abs(t - t.T))) if t.size else 0.0
    if v.size:
        for perm in ((1, 0, 2, 3), (0, 1, 3, 2), (2, 3, 0, 1)):
            dev = max(dev, float(np.max(np.abs(v - v.transpose(perm)))))
    return dev


def symmetrize(t: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    t = 0.5 * (t + t.T)
    v = 0.5 * (v + v.transpose(1, 0, 2, 3))
    v = 0.5 * (v + v.transpose(0, 1, 3, 2))
    v = 0.5 * (v + v.transpose(2, 3, 0, 1))
    return t, v


@dataclass(frozen=True, eq=False)
class ActiveSpaceModel:
    """Spin-free effective Hamiltonian on ``n_orbitals`` spatial orbitals (Hartree)."""

    n_orbitals: int
    t_eff: np.ndarray
    v_eff: np.ndarray
    core_energy: float = 0.0
    n_electrons: int | None = None
    ms2: int = 0
    symmetry_tol: float = SYMMETRY_TOL

    def __post_init__(self) -> None:
        n = self.n_orbitals
        t = np.asarray(self.t_eff, dtype=float)
        v = np.asarray(self.v_eff, dtype=float)
        if t.shape != (n, n) or v.shape != (n, n, n, n):
            raise ContractError(f"integral shapes {t.shape}, {v.shape} do not match N={n}")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v)) and math.isfinite(self.core_energy)):
            raise DataIntegrityError("integrals contain non-finite entries")
        dev = symmetry_violation(t, v)
        if dev > self.symmetry_tol:
            raise DataIntegrityError(f"integral symmetry violated by {dev:.3e}")
        t, v = symmetrize(t, v)
        object.__setattr__(self, "t_eff", t)
        object.__setattr__(self, "v_eff", v)
        object.__setattr__(self, "core_energy", float(self.core_energy))

    def default_sector(self) -> tuple[int, int]:
        if self.n_electrons is None:
            raise ContractError("model carries no electron count")
        n_up = (self.n_electrons + self.ms2) // 2
        return n_up, self.n_electrons - n_up


def random_model(
    n_orbitals: int,
    seed: int,
    scale_t: float = 1.0,
    scale_v: float = 0.5,
    n_electrons: int | None = None,
) -> ActiveSpaceModel:
    """Seeded random model with a positive semidefinite ``(pq|rs)`` supermatrix."""
    rng = np.random.default_rng(seed)
    n = n_orbitals
    a = rng.normal(size=(n, n))
    t = scale_t * 0.5 * (a + a.T)
    npair = n * (n + 1) // 2
    vecs = []
    for _ in range(npair):
        b = rng.normal(size=(n, n))
        vecs.append(0.5 * (b + b.T))
    v = np.zeros((n, n, n, n))
    for b in vecs:
        v += np.einsum("pq,rs->pqrs", b, b)
    v *= scale_v / npair
    return ActiveSpaceModel(n, t, v, float(rng.normal()), n_electrons=n_electrons)


# --- FCIDUMP ---------------------------------------------------------------

_HEADER_KEY = re.compile(r"([A-Za-z0-9_]+)\s*=\s*([^=]*?)(?=,?\s*[A-Za-z0-9_]+\s*=|$)")


def _parse_header(text: str, first_line: int) -> dict[str, str]:
    body = text.strip()
    body = re.sub(r"^&FCI", "", body, flags=re.IGNORECASE)
    body = re.sub(r"(&END|/)\s*$", "", body.strip(), flags=re.IGNORECASE)
    out: dict[str, str] = {}
    for m in _HEADER_KEY.finditer(body.replace("\n", " ")):
        out[m.group(1).upper()] = m.group(2).strip().rstrip(",")
    if "NORB" not in out:
        raise MalformedInputError("header lacks NORB", first_line)
    return out


def load_fcidump(path: str | Path, symmetry_tol: float = SYMMETRY_TOL) -> ActiveSpaceModel:
    """Read an FCIDUMP file.

    Integral lines are ``value i j k l`` with one-based indices and
    ``(ij|kl)`` chemists' ordering; ``k = l = 0`` marks one-body entries and
    all-zero indices the core energy. Entries are stored zero-based. Any two
    lines that are images under the permutation symmetry must agree to
    ``symmetry_tol``.
    """
    lines = Path(path).read_text().splitlines()
    header_lines: list[str] = []
    start = None
    for i, line in enumerate(lines):
        header_lines.append(line)
        if re.search(r"(&END|^\s*/\s*$)", line, flags=re.IGNORECASE):
            start = i + 1
            break
    if start is None or not header_lines or not header_lines[0].strip().upper().startswith("&FCI"):
        raise MalformedInputError("missing &FCI ... &END header", 1)
    header = _parse_header("\n".join(header_lines), 1)
    try:
        n = int(header["NORB"])
        nelec = int(header["NELEC"]) if "NELEC" in header else None
        ms2 = int(header.get("MS2", "0") or 0)
    except ValueError as exc:
        raise MalformedInputError(f"bad header value ({exc})", 1) from None
    if n < 1:
        raise MalformedInputError("NORB must be positive", 1)
    t = np.full((n, n), np.nan)
    v = np.full((n, n, n, n), np.nan)
    core = 0.0

    def put(arr: np.ndarray, keys, value: float, lineno: int) -> None:
        for k in keys:
            old = arr[k]
            if not np.isnan(old) and abs(old - value) > symmetry_tol:
                raise DataIntegrityError(
                    f"line {lineno}: entry {tuple(x + 1 for x in k)} = {value} conflicts with "
                    f"symmetric image value {old} (tolerance {symmetry_tol})"
                )
            arr[k] = value

    for lineno, line in enumerate(lines[start:], start=start + 1):
        if not line.strip():
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 5:
            raise MalformedInputError(f"expected 5 fields, got {len(parts)}", lineno)
        try:
            value = float(parts[0].replace("D", "E").replace("d", "e"))
            i, j, k, l = (int(x) for x in parts[1:])
        except ValueError:
            raise MalformedInputError(f"cannot parse {line.strip()!r}", lineno) from None
        if not math.isfinite(value):
            raise MalformedInputError("non-finite value", lineno)
        if min(i, j, k, l) < 0 or max(i, j, k, l) > n:
            raise MalformedInputError(f"index outside 0..{n}", lineno)
        if i == j == k == l == 0:
            core = value
        elif k == 0 and l == 0:
            if i == 0 or j == 0:
                raise MalformedInputError("one-body entry with a zero index", lineno)
            put(t, {(i - 1, j - 1), (j - 1, i - 1)}, value, lineno)
        else:
            if 0 in (i, j, k, l):
                raise MalformedInputError("two-body entry with a zero index", lineno)
            put(v, _eightfold_images(i - 1, j - 1, k - 1, l - 1), value, lineno)
    t = np.nan_to_num(t, nan=0.0)
    v = np.nan_to_num(v, nan=0.0)
    return ActiveSpaceModel(n, t, v, core, n_electrons=nelec, ms2=ms2, symmetry_tol=symmetry_tol)


def save_fcidump(model: ActiveSpaceModel, path: str | Path, tol: float = 0.0) -> None:
    """Write ``model`` as FCIDUMP (symmetry-unique entries, one-based)."""
    n = model.n_orbitals
    nelec = model.n_electrons if model.n_electrons is not None else 0
    out = [f"&FCI NORB={n},NELEC={nelec},MS2={model.ms2},", " ORBSYM=" + "1," * n, " ISYM=1,", "&END"]
    v, t = model.v_eff, model.t_eff
    for p in range(n):
        for q in range(p + 1):
            for r in range(n):
                for s in range(r + 1):
                    if p * (p + 1) // 2 + q < r * (r + 1) // 2 + s:
                        continue
                    if abs(v[p, q, r, s]) > tol:
                        out.append(f"{float(v[p, q, r, s])!r} {p + 1} {q + 1} {r + 1} {s + 1}")
    for p in range(n):
        for q in range(p + 1):
            if abs(t[p, q]) > tol:
                out.append(f"{float(t[p, q])!r} {p + 1} {q + 1} 0 0")
    out.append(f"{float(model.core_energy)!r} 0 0 0 0")
    Path(path).write_text("\n".join(out) + "\n")


# --- one-body operators ----------------------------------------------------


@dataclass(frozen=True, eq=False)
class DipoleOperator:
    """Spatial dipole matrices ``d^x, d^y, d^z`` (atomic units, electron charge included)."""

    components: tuple[np.ndarray, np.ndarray, np.ndarray]

    @property
    def n_orbitals(self) -> int:
        return int(self.components[0].shape[0])

    def spin_orbital(self, axis: int) -> np.ndarray:
        """``2N x 2N`` spin-orbital matrix of component ``axis`` (same for both spins)."""
        d = np.asarray(self.components[axis])
        n = d.shape[0]
        out = np.zeros((2 * n, 2 * n), dtype=complex)
        out[:n, :n] = d
        out[n:, n:] = d
        return out

    def is_zero(self, tol: float = 0.0) -> bool:
        return all(float(np.max(np.abs(c))) <= tol for c in self.components)


def _check_blocks(m: np.ndarray, label: str, tol: float) -> None:
    n = m.shape[0] // 2
    aa, ab, ba, bb = m[:n, :n], m[:n, n:], m[n:, :n], m[n:, n:]
    zero = lambda x: float(np.max(np.abs(x))) <= tol if x.size else True  # noqa: E731
    rules = {
        "soc_axial": zero(ab) and zero(ba),
        "soc_T00": zero(ab) and zero(ba) and zero(aa - bb),
        "soc_T10": zero(ab) and zero(ba) and zero(aa + bb),
        "sz": zero(ab) and zero(ba),
        "soc_perp": zero(aa) and zero(bb),
        "soc_T11": zero(aa) and zero(bb) and zero(ba),
        "soc_T1m1": zero(aa) and zero(bb) and zero(ab),
    }
    if not rules.get(label, True):
        raise DataIntegrityError(f"block structure inconsistent with label {label!r}")


@dataclass(frozen=True, eq=False)
class SpinResolvedOperator:
    """Complex one-body operator over spin-orbitals ``(p, sigma)``, alpha block first."""

    matrix: np.ndarray
    label: str = "custom"
    tol: float = 1e-10

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] % 2:
            raise ContractError(f"spin-orbital matrix must be 2N x 2N, got {m.shape}")
        if self.label not in SOC_LABELS:
            raise ContractError(f"unknown operator label {self.label!r}")
        if self.label not in ("soc_T11", "soc_T1m1"):
            dev = float(np.max(np.abs(m - m.conj().T))) if m.size else 0.0
            if dev > self.tol:
                raise DataIntegrityError(f"operator {self.label!r} is not Hermitian (deviation {dev:.3e})")
        _check_blocks(m, self.label, self.tol)
        object.__setattr__(self, "matrix", m)

    @property
    def n_orbitals(self) -> int:
        return self.matrix.shape[0] // 2

    def relabel(self, label: str) -> "SpinResolvedOperator":
        return SpinResolvedOperator(self.matrix, label, self.tol)

    def __add__(self, other: "SpinResolvedOperator") -> "SpinResolvedOperator":
        return SpinResolvedOperator(self.matrix + other.matrix, "custom", max(self.tol, other.tol))

    def scaled(self, factor: float) -> "SpinResolvedOperator":
        return SpinResolvedOperator(factor * self.matrix, self.label, self.tol)


def sz_operator(n_orbitals: int) -> SpinResolvedOperator:
    return SpinResolvedOperator(
        np.diag(np.r_[0.5 * np.ones(n_orbitals), -0.5 * np.ones(n_orbitals)]), "sz"
    )


def split_axial_nonaxial(soc: SpinResolvedOperator) -> tuple[SpinResolvedOperator, SpinResolvedOperator]:
    """Split into spin-diagonal (axial) and spin-off-diagonal (nonaxial) blocks."""
    if soc.label != "soc_full":
        raise ContractError(f"expected label 'soc_full', got {soc.label!r}")
    n = soc.n_orbitals
    axial = np.zeros_like(soc.matrix)
    axial[:n, :n] = soc.matrix[:n, :n]
    axial[n:, n:] = soc.matrix[n:, n:]
    return (
        SpinResolvedOperator(axial, "soc_axial", soc.tol),
        SpinResolvedOperator(soc.matrix - axial, "soc_perp", soc.tol),
    )


@dataclass(frozen=True)
class SpinTensorComponents:
    T00: SpinResolvedOperator
    T10: SpinResolvedOperator
    T11: SpinResolvedOperator
    T1m1: SpinResolvedOperator

    @property
    def axial(self) -> SpinResolvedOperator:
        return SpinResolvedOperator(self.T00.matrix + self.T10.matrix, "soc_axial")

    @property
    def nonaxial(self) -> SpinResolvedOperator:
        return SpinResolvedOperator(self.T11.matrix + self.T1m1.matrix, "soc_perp")


def spin_tensor_decompose(soc: SpinResolvedOperator) -> SpinTensorComponents:
    """Rank-0 and rank-1 spin-tensor parts of a one-body spin-orbital operator.

    ``T00`` carries the spin average of the diagonal blocks, ``T10`` their
    half difference (times ``+1`` on alpha, ``-1`` on beta), ``T11`` the
    alpha-row/beta-column block (raises M by one) and ``T1m1`` the
    beta-row/alpha-column block.
    """
    if soc.label != "soc_full":
        raise ContractError(f"expected label 'soc_full', got {soc.label!r}")
    n = soc.n_orbitals
    m = soc.matrix
    aa, bb = m[:n, :n], m[n:, n:]
    z = np.zeros((n, n), dtype=complex)
    avg, dif = 0.5 * (aa + bb), 0.5 * (aa - bb)
    t00 = np.block([[avg, z], [z, avg]])
    t10 = np.block([[dif, z], [z, -dif]])
    t11 = np.block([[z, m[:n, n:]], [z, z]])
    t1m1 = np.block([[z, z], [m[n:, :n], z]])
    return SpinTensorComponents(
        SpinResolvedOperator(t00, "soc_T00", soc.tol),
        SpinResolvedOperator(t10, "soc_T10", soc.tol),
        SpinResolvedOperator(t11, "soc_T11", soc.tol),
        SpinResolvedOperator(t1m1, "soc_T1m1", soc.tol),
    )


def random_soc(n_orbitals: int, seed: int, scale: float = 1e-3, nonaxial_only: bool = False,
               axial_only: bool = False) -> SpinResolvedOperator:
    """Seeded random Hermitian spin-orbital operator labelled ``soc_full``."""
    rng = np.random.default_rng(seed)
    m = 2 * n_orbitals
    a = rng.normal(size=(m, m)) + 1j * rng.normal(size=(m, m))
    h = scale * 0.5 * (a + a.conj().T)
    n = n_orbitals
    if nonaxial_only:
        h[:n, :n] = 0
        h[n:, n:] = 0
    if axial_only:
        h[:n, n:] = 0
        h[n:, :n] = 0
    return SpinResolvedOperator(h, "soc_full")


def random_dipole(n_orbitals: int, seed: int, scale: float = 1.0) -> DipoleOperator:
    """Seeded real symmetric dipole components."""
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(3, n_orbitals, n_orbitals))
    return DipoleOperator(tuple(scale * 0.5 * (c + c.T) for c in a))


# --- grid and plane-wave orbitals --------------------------------------------


@dataclass(frozen=True, eq=False)
class GridOrbitalSet:
    """Orbital amplitudes sampled on grid points with a uniform volume element."""

    values: np.ndarray
    points: np.ndarray
    weight: float

    @property
    def n_orbitals(self) -> int:
        return int(self.values.shape[1])

    def norms(self) -> np.ndarray:
        return np.sum(np.abs(self.values) ** 2, axis=0) * self.weight


def _check_grid_norm(orbitals: GridOrbitalSet, tol: float) -> None:
    dev = np.abs(orbitals.norms() - 1.0)
    if np.any(dev > tol):
        bad = int(np.argmax(dev))
        raise DataIntegrityError(f"orbital {bad} norm deviates from 1 by {dev[bad]:.3e} (tolerance {tol})")


def dipole_from_grid(orbitals: GridOrbitalSet, norm_tol: float = 1e-4) -> DipoleOperator:
    """``d^rho_pq = -sum_i phi_p*(r_i) r_i,rho phi_q(r_i) dV``.

    Real inputs are symmetrized; complex inputs are Hermitian-symmetrized.
    """
    _check_grid_norm(orbitals, norm_tol)
    phi = orbitals.values
    comps = []
    for rho in range(3):
        d = -(phi.conj().T * orbitals.points[:, rho][None, :]) @ phi * orbitals.weight
        d = 0.5 * (d + d.conj().T)
        comps.append(d.real.copy() if np.isrealobj(phi) else d)
    return DipoleOperator(tuple(comps))


def localization_factor(
    orbitals: GridOrbitalSet,
    index: int,
    center: Sequence[float],
    radius: float,
    norm_tol: float = 1e-3,
) -> float:
    """Weight of orbital ``index`` inside a sphere of ``radius`` around ``center``."""
    if radius <= 0:
        raise ContractError("radius must be positive")
    _check_grid_norm(
        GridOrbitalSet(orbitals.values[:, [index]], orbitals.points, orbitals.weight), norm_tol
    )
    dist = np.linalg.norm(orbitals.points - np.asarray(center, float)[None, :], axis=1)
    inside = dist < radius
    return float(np.sum(np.abs(orbitals.values[inside, index]) ** 2) * orbitals.weight)


@dataclass(frozen=True)
class Atom:
    Z: int
    R: tuple[float, float, float]


@dataclass(frozen=True, eq=False)
class PlaneWaveOrbitalSet:
    """Orbitals ``phi_p(r) = Omega^{-1/2} sum_i C_ip exp(i G_i . r)``.

    ``g_vectors`` are Cartesian reciprocal vectors in Bohr^-1 (integer
    multiples of ``2 pi / L`` for a cubic cell of side ``L``).
    """

    coefficients: np.ndarray
    g_vectors: np.ndarray
    cell_volume: float
    atoms: tuple[Atom, ...] = field(default_factory=tuple)
    norm_tol: float = 1e-8

    def __post_init__(self) -> None:
        c = np.asarray(self.coefficients, dtype=complex)
        g = np.asarray(self.g_vectors, dtype=float)
        if c.ndim != 2 or g.shape != (c.shape[0], 3):
            raise ContractError("coefficients and g_vectors shapes disagree")
        if len({tuple(np.round(x, 12)) for x in g}) != len(g):
            raise DataIntegrityError("g_vectors are not distinct")
        norms = np.sum(np.abs(c) ** 2, axis=0)
        if np.any(np.abs(norms - 1) > self.norm_tol):
            raise DataIntegrityError("plane-wave coefficient columns are not normalized")
        object.__setattr__(self, "coefficients", c)
        object.__setattr__(self, "g_vectors", g)
        object.__setattr__(self, "atoms", tuple(self.atoms))

    @property
    def n_orbitals(self) -> int:
        return int(self.coefficients.shape[1])

    @property
    def cell_length(self) -> float:
        return float(self.cell_volume) ** (1.0 / 3.0)


def soc_from_plane_waves(
    pw: PlaneWaveOrbitalSet, constants: PhysicalConstants = DEFAULT_CONSTANTS
) -> SpinResolvedOperator:
    """One-body Breit-Pauli SOC matrix from a plane-wave expansion.

    Spatial parts use ``int e^{-iG.r} r_u / r^3 = -4 pi i G_u / G^2`` on the
    difference vectors ``G_ji = G_j - G_i``; pairs with ``G_ji = 0`` are
    skipped (their cross product vanishes).
    """
    if not pw.atoms:
        raise DegenerateInputError("plane-wave set has no atoms")
    g = pw.g_vectors
    c = pw.coefficients
    gji = g[None, :, :] - g[:, None, :]  # [i, j] -> G_j - G_i
    cross = np.cross(gji, np.broadcast_to(g[None, :, :], gji.shape))
    g2 = np.einsum("iju,iju->ij", gji, gji)
    mask = g2 > 1e-14
    inv = np.where(mask, 1.0 / np.where(mask, g2, 1.0), 0.0)
    k = np.zeros(gji.shape, dtype=complex)
    for atom in pw.atoms:
        phase = np.exp(1j * gji @ np.asarray(atom.R, float))
        k += (atom.Z * phase * inv)[:, :, None] * cross
    k *= 4.0 * np.pi / pw.cell_volume
    ch = c.conj().T
    r_plus = ch @ (1j * k[:, :, 0] - k[:, :, 1]) @ c
    r_minus = ch @ (1j * k[:, :, 0] + k[:, :, 1]) @ c
    r_z = ch @ (1j * k[:, :, 2]) @ c
    a2 = constants.alpha_fs**2
    n = pw.n_orbitals
    h = np.zeros((2 * n, 2 * n), dtype=complex)
    h[n:, :n] = 0.25 * a2 * r_plus
    h[:n, n:] = 0.25 * a2 * r_minus
    h[:n, :n] = 0.5 * a2 * 0.5 * r_z
    h[n:, n:] = -0.5 * a2 * 0.5 * r_z
    h = 0.5 * (h + h.conj().T)
    return SpinResolvedOperator(h, "soc_full", tol=1e-8)


def _periodic_field(points_frac: np.ndarray, n_grid: int, length: float, center: np.ndarray) -> np.ndarray:
    """Ewald-summed periodic field ``sum_L (d + L) / |d + L|^3`` on a cubic grid.

    Real-space part uses erfc screening over neighbouring images; the smooth
    remainder is evaluated by FFT. The point ``d = 0`` is set to zero.
    """
    a = 7.0 / length
    idx = np.arange(n_grid)
    h = length / n_grid
    coords = np.stack(np.meshgrid(idx, idx, idx, indexing="ij"), -1).reshape(-1, 3) * h
    d0 = coords - center[None, :]
    d0 -= length * np.round(d0 / length)
    field_real = np.zeros_like(d0)
    from scipy.special import erfc

    for shift in np.ndindex(3, 3, 3):
        d = d0 + (np.array(shift) - 1) * length
        r = np.linalg.norm(d, axis=1)
        ok = r > 1e-12
        rr = r[ok]
        fac = (erfc(a * rr) + 2 * a * rr / np.sqrt(np.pi) * np.exp(-(a * rr) ** 2)) / rr**3
        field_real[ok] += d[ok] * fac[:, None]
    freq = np.fft.fftfreq(n_grid, d=1.0 / n_grid) * 2 * np.pi / length
    gx, gy, gz = np.meshgrid(freq, freq, freq, indexing="ij")
    g2 = gx**2 + gy**2 + gz**2
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(g2 > 0, 4 * np.pi / (length**3) * np.exp(-g2 / (4 * a * a)) / g2, 0.0)
    phase = np.exp(-1j * (gx * center[0] + gy * center[1] + gz * center[2]))
    field_rec = np.zeros_like(d0)
    for u, gu in enumerate((gx, gy, gz)):
        coef = -1j * gu * w * phase
        field_rec[:, u] = np.real(np.fft.ifftn(coef) * n_grid**3).reshape(-1)
    out = field_real + field_rec
    zero = np.linalg.norm(d0, axis=1) < 1e-12
    out[zero] = 0.0
    return out


# Simple-cubic Epstein zeta Z(1); the punctured trapezoidal rule misses
# -Z(1) h^2 f(0) of a 1/r singularity.
_PUNCTURED_1_OVER_R = 2.8372974794806196


def _curl_density(pw: PlaneWaveOrbitalSet, point: np.ndarray) -> np.ndarray:
    """``curl_u`` of ``g_w = phi_p^* (p_w phi_q)`` at ``point``, shape ``(3, N, N)``."""
    g = pw.g_vectors
    wave = np.exp(1j * g @ point) / np.sqrt(pw.cell_volume)
    c = pw.coefficients
    phi = wave @ c
    d1 = np.array([(wave * 1j * g[:, i]) @ c for i in range(3)])  # d_i phi
    d2 = np.array([[(wave * -g[:, i] * g[:, j]) @ c for j in range(3)] for i in range(3)])
    # dg_w/dx_i = d_i phi_p^* (-i d_w phi_q) + phi_p^* (-i d_i d_w phi_q)
    dg = -1j * (
        np.einsum("ip,wq->iwpq", d1.conj(), d1) + np.einsum("p,iwq->iwpq", phi.conj(), d2)
    )
    out = np.zeros((3,) + dg.shape[2:], dtype=complex)
    for u, (i, w) in enumerate(((1, 2), (2, 0), (0, 1))):
        out[u] = dg[i, w] - dg[w, i]
    return out


def soc_real_space_quadrature(
    pw: PlaneWaveOrbitalSet,
    n_grid: int = 64,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
    singular_correction: bool = True,
) -> SpinResolvedOperator:
    """Direct grid evaluation of ``(alpha^2/2) sum_I Z_I [(r-R_I) x p] . s / |r-R_I|^3``.

    Assumes a cubic cell. Each atom's field is summed over periodic images
    (Ewald), and orbital gradients are evaluated analytically. Atoms should
    sit on grid points: the odd ``1/r^2`` part then cancels on the punctured
    grid, and ``singular_correction`` adds the lattice correction for the
    remaining ``1/r`` part, lifting the rule from O(h^2) to higher order.
    """
    if not pw.atoms:
        raise DegenerateInputError("plane-wave set has no atoms")
    length = pw.cell_length
    h = length / n_grid
    idx = np.arange(n_grid)
    coords = np.stack(np.meshgrid(idx, idx, idx, indexing="ij"), -1).reshape(-1, 3) * h
    g = pw.g_vectors
    waves = np.exp(1j * coords @ g.T) / np.sqrt(pw.cell_volume)
    phi = waves @ pw.coefficients
    grad = np.stack([(waves * (1j * g[:, u])[None, :]) @ pw.coefficients for u in range(3)], -1)
    p_phi = -1j * grad  # (n_pts, N, 3)
    field = np.zeros((coords.shape[0], 3))
    for atom in pw.atoms:
        field += atom.Z * _periodic_field(None, n_grid, length, np.asarray(atom.R, float))
    lvec = np.cross(field[:, None, :], p_phi)  # (n_pts, N, 3)
    dv = h**3
    ell = np.einsum("ip,iqu->upq", phi.conj(), lvec) * dv
    if singular_correction:
        for atom in pw.atoms:
            ell += atom.Z * _PUNCTURED_1_OVER_R * h**2 / 3.0 * _curl_density(pw, np.asarray(atom.R, float))
    sx = 0.5 * np.array([[0, 1], [1, 0]], dtype=complex)
    sy = 0.5 * np.array([[0, -1j], [1j, 0]], dtype=complex)
    sz = 0.5 * np.array([[1, 0], [0, -1]], dtype=complex)
    n = pw.n_orbitals
    hmat = np.zeros((2 * n, 2 * n), dtype=complex)
    for u, s in enumerate((sx, sy, sz)):
        hmat += np.kron(s, ell[u])
    hmat *= 0.5 * constants.alpha_fs**2
    hmat = 0.5 * (hmat + hmat.conj().T)
    return SpinResolvedOperator(hmat, "soc_full", tol=1e-6)


# --- JSON I/O ------------------------------------------------------------------


def operator_to_json(op: SpinResolvedOperator) -> dict:
    return {
        "n_orbitals": op.n_orbitals,
        "label": op.label,
        "re": op.matrix.real.tolist(),
        "im": op.matrix.imag.tolist(),
    }


def operator_from_json(data: dict) -> SpinResolvedOperator:
    try:
        m = np.asarray(data["re"], float) + 1j * np.asarray(data["im"], float)
        n = int(data["n_orbitals"])
        label = str(data.get("label", "custom"))
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedInputError(f"bad operator JSON ({exc})") from None
    if m.shape != (2 * n, 2 * n):
        raise MalformedInputError(f"operator matrix shape {m.shape} does not match n_orbitals={n}")
    return SpinResolvedOperator(m, label)


def dipole_to_json(d: DipoleOperator) -> dict:
    out: dict = {"n_orbitals": d.n_orbitals, "label": "dipole"}
    for name, comp in zip("xyz", d.components):
        comp = np.asarray(comp)
        out[name] = {"re": comp.real.tolist(), "im": np.imag(comp).tolist()}
    return out


def dipole_from_json(data: dict) -> DipoleOperator:
    try:
        comps = []
        for name in "xyz":
            c = np.asarray(data[name]["re"], float) + 1j * np.asarray(data[name]["im"], float)
            comps.append(c.real.copy() if not np.any(c.imag) else c)
        n = int(data["n_orbitals"])
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedInputError(f"bad dipole JSON ({exc})") from None
    if any(c.shape != (n, n) for c in comps):
        raise MalformedInputError("dipole component shape does not match n_orbitals")
    return DipoleOperator(tuple(comps))


def plane_waves_from_json(data: dict) -> PlaneWaveOrbitalSet:
    try:
        c = np.asarray(data["coefficients_re"], float) + 1j * np.asarray(data["coefficients_im"], float)
        atoms = tuple(Atom(int(a["Z"]), tuple(float(x) for x in a["R"])) for a in data["atoms"])
        return PlaneWaveOrbitalSet(c, np.asarray(data["g_vectors"], float), float(data["cell_volume"]), atoms)
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedInputError(f"bad plane-wave JSON ({exc})") from None


def plane_waves_to_json(pw: PlaneWaveOrbitalSet) -> dict:
    return {
        "coefficients_re": pw.coefficients.real.tolist(),
        "coefficients_im": pw.coefficients.imag.tolist(),
        "g_vectors": pw.g_vectors.tolist(),
        "cell_volume": pw.cell_volume,
        "atoms": [{"Z": a.Z, "R": list(a.R)} for a in pw.atoms],
    }


def read_json(path: str | Path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise MalformedInputError(f"invalid JSON: {exc.msg}", exc.lineno) from None
