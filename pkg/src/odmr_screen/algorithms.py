"""End-to-end drivers: evolution proxy, optical response via the damped
discrete-time Fourier transform of the Green's function, and
spectroscopy-based ISC detection with its perturbative oracle."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Protocol, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .cdf import QubitFrame
from .errors import AlgorithmicFailure, ContractError, DegenerateInputError, SingularityError
from .evolve import FockStatevector, TrotterPlan, embed, fast_forward_one_body, trotter_step
from .fock import FockBasis, number_basis, sector_basis
from .measure import ComplexEstimate, ShotPlan, modified_hadamard_test, sample_complex
from .model import ActiveSpaceModel, DipoleOperator, SpinResolvedOperator, SpinTensorComponents
from .reference import (
    EigenSolution,
    exact_diagonalize,
    lorentzian_spectrum,
    lowest_with_spin,
    s2_classify,
    sparse_hamiltonian,
    sparse_one_body,
)
from .spectrum import SpectrumTrace
from .stateprep import QpeFilterConfig, build_zeta_state, coarse_qpe_filter, dipole_excited_state

# --- propagators --------------------------------------------------------------


class Propagator(Protocol):
    basis: FockBasis

    def evolve(self, vec: np.ndarray, t: float) -> np.ndarray: ...


class ExactPropagator:
    """``exp(-i t H)`` from a dense eigendecomposition of the Fock matrix."""

    def __init__(self, h: sp.spmatrix | np.ndarray, basis: FockBasis) -> None:
        dense = h.toarray() if sp.issparse(h) else np.asarray(h)
        self.basis = basis
        self.energies, self.vectors = scipy.linalg.eigh(dense)

    def evolve(self, vec: np.ndarray, t: float) -> np.ndarray:
        c = self.vectors.conj().T @ vec
        return self.vectors @ (np.exp(-1j * t * self.energies) * c)


class TrotterPropagator:
    """Product-formula evolution of a rotated frame.

    ``t`` is split into ``ceil(t / delta)`` equal steps, so the effective step
    never exceeds ``plan.delta`` and no time is dropped.
    """

    def __init__(self, frame: QubitFrame, plan: TrotterPlan, basis: FockBasis) -> None:
        self.frame, self.plan, self.basis = frame, plan, basis

    def evolve(self, vec: np.ndarray, t: float) -> np.ndarray:
        if t < 0:
            raise ContractError("product-formula evolution needs t >= 0")
        if t == 0:
            return np.array(vec, complex)
        n = max(1, math.ceil(t / self.plan.delta - 1e-9))
        plan = self.plan if n * self.plan.delta == t else replace(self.plan, delta=t / n)
        st = FockStatevector(vec, self.basis, normalized=False)
        for _ in range(n):
            st = trotter_step(st, self.frame, plan)
        return st.amplitudes


# --- spectroscopy configuration ----------------------------------------------------


@dataclass(frozen=True)
class SpectroConfig:
    """DTFT settings (Hartree units); ``tau`` defaults to ``pi / (2 window_norm)``."""

    eta: float = 2e-3
    j_max: int = 500
    tau: float | None = None
    window_norm: float = 1.0
    shots_total: int = 3000
    seed: int = 0
    exact: bool = True

    def __post_init__(self) -> None:
        if self.eta <= 0 or self.window_norm <= 0 or (self.tau is not None and self.tau <= 0):
            raise ContractError("eta, tau and window_norm must be positive")
        if self.j_max < 1:
            raise ContractError("j_max must be at least 1")

    @property
    def step(self) -> float:
        return math.pi / (2 * self.window_norm) if self.tau is None else self.tau

    def shot_allocation(self) -> np.ndarray:
        """Shots for ``j = 1..j_max`` proportional to ``exp(-j tau eta)``."""
        w = np.exp(-np.arange(1, self.j_max + 1) * self.step * self.eta)
        return np.maximum(1, np.rint(self.shots_total * w / w.sum())).astype(int)

    def to_json(self) -> dict:
        d = asdict(self)
        d["tau_effective"] = self.step
        return d


@dataclass(frozen=True, eq=False)
class GreensSeries:
    """``G(tau j)`` for ``j = 0..j_max``; negative ``j`` follow by conjugation."""

    tau: float
    values: np.ndarray
    std_errors: np.ndarray
    shots: np.ndarray

    @property
    def j(self) -> np.ndarray:
        return np.arange(self.values.size)

    def two_sided(self) -> tuple[np.ndarray, np.ndarray]:
        g = self.values
        return np.arange(-(g.size - 1), g.size), np.concatenate([g[:0:-1].conj(), g])


def greens_function_series(
    psi_d: FockStatevector,
    propagator: Propagator,
    cfg: SpectroConfig,
    e_ref: float = 0.0,
) -> GreensSeries:
    """Hadamard-test series of ``<psi_D| exp(-i tau j (H - e_ref)) |psi_D>``."""
    tau = cfg.step
    vals = np.zeros(cfg.j_max + 1, complex)
    errs = np.zeros((cfg.j_max + 1, 2))
    vals[0] = complex(np.vdot(psi_d.amplitudes, psi_d.amplitudes))
    shots = np.zeros(cfg.j_max + 1, int)
    alloc = None if cfg.exact else cfg.shot_allocation()
    cur = psi_d.amplitudes
    for j in range(1, cfg.j_max + 1):
        cur = propagator.evolve(cur, tau)
        z = complex(np.vdot(psi_d.amplitudes, cur)) * np.exp(1j * tau * j * e_ref)
        if alloc is None:
            vals[j] = z
        else:
            rng = np.random.Generator(np.random.PCG64([cfg.seed, j]))
            vals[j], errs[j] = sample_complex(z, int(alloc[j - 1]), rng)
            shots[j] = alloc[j - 1]
    return GreensSeries(tau, vals, errs, shots)


def dtft_spectrum(series: GreensSeries, cfg: SpectroConfig, norm2: float, omegas: np.ndarray) -> SpectrumTrace:
    """``pi norm2 (tau / 2 pi) sum_j exp(-eta tau |j|) G(tau j) exp(i j tau w)``.

    The ``pi norm2`` factor gives peaks the height and area of the Lorentzian
    reference (area ``pi |D_n0|^2``). Negative ``j`` enter as the conjugate
    of positive ``j``; the sum is evaluated by Horner's rule in ``exp(i tau w)``.
    """
    w = np.asarray(omegas, float)
    g = series.values
    a = np.exp(-cfg.eta * series.tau * np.arange(g.size)) * g
    z = np.exp(1j * series.tau * w)
    pos = np.zeros(w.size, complex)
    for coef in a[:0:-1]:
        pos = (pos + coef) * z
    full = (a[0] + pos + pos.conj()) * (series.tau / 2 * norm2)
    resid = float(np.max(np.abs(full.imag))) if w.size else 0.0
    meta = {"kind": "dtft", "config": cfg.to_json(), "norm2": norm2}
    return SpectrumTrace(w, full.real.copy(), meta, resid)


@dataclass(frozen=True)
class ErrorBudget:
    """Truncation, discretization and shot-noise bounds, in trace units when ``scale = pi norm2``."""

    trunc: float
    tau: float
    meas: float
    scale: float = 1.0
    eta: float = 1.0

    @property
    def deterministic(self) -> float:
        return self.trunc + self.tau

    @property
    def meas_pointwise(self) -> float:
        """Shot-noise bound on the trace itself; ``meas`` bounds ``eta`` times the trace."""
        return self.meas / self.eta


def error_budget(cfg: SpectroConfig, h_bound: float, w_max: float | None = None, norm2: float | None = None) -> ErrorBudget:
    """``eps_Trunc = e^{-j_max tau eta} / (pi tau eta)``,
    ``eps_tau = (j_max tau^3 / 12) |H - w - i eta|^2`` with
    ``|H - w - i eta|^2 <= (h_bound + w_max)^2 + eta^2``, and
    ``eps_meas = eta tau sum_{k=1}^{2 j_max} e^{-k tau eta} / (2 pi sqrt(S))``.

    ``h_bound`` bounds the shifted Hamiltonian on the support of the state;
    ``w_max`` defaults to ``window_norm``. With ``norm2`` all three are
    multiplied by ``pi norm2`` (the trace normalization). ``eps_meas`` refers
    to the peak-height-normalized spectrum ``eta sigma(w)``; see
    :attr:`ErrorBudget.meas_pointwise` for the trace itself.
    """
    tau, eta, jm = cfg.step, cfg.eta, cfg.j_max
    w_max = cfg.window_norm if w_max is None else w_max
    trunc = math.exp(-abs(jm * tau * eta)) / (math.pi * tau * eta)
    disc = jm * tau**3 / 12.0 * ((abs(h_bound) + abs(w_max)) ** 2 + eta**2)
    ks = np.arange(1, 2 * jm + 1)
    meas = eta * tau * float(np.exp(-ks * tau * eta).sum()) / (2 * math.pi * math.sqrt(cfg.shots_total))
    scale = 1.0 if norm2 is None else math.pi * norm2
    return ErrorBudget(scale * trunc, scale * disc, scale * meas, scale, eta)


def solve_j_max(cfg: SpectroConfig, eps_trunc: float) -> int:
    """Smallest ``j_max`` with ``eps_Trunc <= eps_trunc``."""
    tau, eta = cfg.step, cfg.eta
    return max(1, math.ceil(-math.log(eps_trunc * math.pi * tau * eta) / (tau * eta)))


def solve_shots(cfg: SpectroConfig, eps_meas: float) -> int:
    """Total ``S_Had`` reaching ``eps_meas``."""
    tau, eta = cfg.step, cfg.eta
    ks = np.arange(1, 2 * cfg.j_max + 1)
    return math.ceil((eta * tau * float(np.exp(-ks * tau * eta).sum()) / (2 * math.pi * eps_meas)) ** 2)


# --- optical response -----------------------------------------------------------------


def ground_state(model: ActiveSpaceModel, basis: FockBasis, spin: float | None = None) -> tuple[FockStatevector, float]:
    """Lowest eigenstate (optionally of total spin ``spin``) and its energy."""
    sol = exact_diagonalize(sparse_hamiltonian(model, basis), basis=basis)
    i = 0
    if spin is not None:
        sol = s2_classify(sol, basis)
        i = lowest_with_spin(sol, spin)
    return FockStatevector(sol.vectors[:, i], basis), float(sol.energies[i])


@dataclass(frozen=True, eq=False)
class OpticalResponse:
    trace: SpectrumTrace
    norms2: tuple[float, float, float]
    series: tuple[GreensSeries | None, ...]
    degenerate: bool


def spectrum_from_state(
    psi0: FockStatevector,
    d: DipoleOperator,
    propagator: Propagator,
    cfg: SpectroConfig,
    e_ref: float,
    omegas: np.ndarray,
) -> OpticalResponse:
    """Sum over axes of the DTFT traces of the dipole-excited states of ``psi0``."""
    if not psi0.basis.same_space(propagator.basis):
        psi0 = embed(psi0, propagator.basis)
    w = np.asarray(omegas, float)
    total = np.zeros(w.size)
    resid = 0.0
    norms, seriess = [], []
    for rho in range(3):
        try:
            exc = dipole_excited_state(psi0, d, axis=rho)
        except DegenerateInputError:
            norms.append(0.0)
            seriess.append(None)
            continue
        sub = replace(cfg, seed=cfg.seed + rho)
        ser = greens_function_series(exc.state, propagator, sub, e_ref)
        tr = dtft_spectrum(ser, sub, exc.norm**2, w)
        total += tr.intensities
        resid = max(resid, tr.imag_residual)
        norms.append(exc.norm**2)
        seriess.append(ser)
    degenerate = all(n == 0.0 for n in norms)
    if degenerate:
        warnings.warn("dipole has no optically active component; spectrum is empty", RuntimeWarning, stacklevel=2)
    meta = {"kind": "optical_response", "config": cfg.to_json(), "norms2": norms, "e_ref": e_ref}
    return OpticalResponse(SpectrumTrace(w, total, meta, resid), tuple(norms), tuple(seriess), degenerate)


def optical_response(
    model: ActiveSpaceModel,
    d: DipoleOperator,
    sector: tuple[int, int],
    cfg: SpectroConfig,
    omegas: np.ndarray,
    psi0: FockStatevector | None = None,
    e0: float | None = None,
    frame: QubitFrame | None = None,
    plan: TrotterPlan | None = None,
) -> OpticalResponse:
    """Emission spectrum of ``sector``: exact evolution by default, product
    formula when both ``frame`` and ``plan`` are given."""
    basis = sector_basis(model.n_orbitals, *sector)
    if psi0 is None:
        psi0, e_gs = ground_state(model, basis)
        e0 = e_gs if e0 is None else e0
    elif e0 is None:
        h = sparse_hamiltonian(model, basis)
        e0 = float(np.vdot(psi0.amplitudes, h @ psi0.amplitudes).real)
    prop: Propagator
    if frame is not None and plan is not None:
        prop = TrotterPropagator(frame, plan, basis)
    else:
        prop = ExactPropagator(sparse_hamiltonian(model, basis), basis)
    return spectrum_from_state(psi0, d, prop, cfg, e0, omegas)


# --- evolution proxy ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ProxyStates:
    """Filtered states on a common number-conserving basis with their window amplitudes."""

    singlet: FockStatevector
    triplet_m0: FockStatevector
    triplet_m1: FockStatevector
    alpha_singlet: float
    beta_m0: float
    beta_m1: float
    reports: dict = field(default_factory=dict)


def _sector_for(model: ActiveSpaceModel, m2: int) -> tuple[int, int]:
    ne = model.n_electrons
    if ne is None:
        raise ContractError("model carries no electron count")
    if (ne + m2) % 2:
        raise ContractError("electron count and M are incompatible")
    return (ne + m2) // 2, (ne - m2) // 2


def prepare_proxy_state(
    model: ActiveSpaceModel,
    d: DipoleOperator,
    spin: float,
    m2: int,
    seed: int = 0,
    r: int = 5,
    t: int = 4,
    max_attempts: int = 20,
) -> tuple[FockStatevector, float, dict]:
    """Dipole-excite the lowest spin-``spin`` state of the ``M = m2/2`` sector and
    filter into the window holding its first optically reached excitation.

    Returns the filtered state, its window amplitude and the filter report.
    """
    basis = sector_basis(model.n_orbitals, *_sector_for(model, m2))
    sol = s2_classify(exact_diagonalize(sparse_hamiltonian(model, basis), basis=basis), basis)
    i0 = lowest_with_spin(sol, spin)
    psi0 = FockStatevector(sol.vectors[:, i0], basis)
    exc = dipole_excited_state(psi0, d)
    w = np.abs(sol.vectors.conj().T @ exc.state.amplitudes) ** 2
    same = np.array([lab is not None and abs(lab - spin) < 1e-9 for lab, _ in sol.labels])
    reached = np.nonzero(same & (w > 1e-8))[0]
    if reached.size == 0:
        raise DegenerateInputError("dipole reaches no excited state of the requested spin")
    e = sol.energies
    e1 = e[reached[0]]
    above = e[(e > e1 + 1e-9) & (w > 1e-12)]
    e_max = float(e[w > 1e-12].max()) + 1e-3
    e_prime = float(0.5 * (e1 + above.min())) if above.size else float(e1 + 0.5 * (e_max - e1))
    e_low = float(min(e[w > 1e-12].min(), e[i0])) - 1e-3
    reports = []
    for attempt in range(max_attempts):
        cfg = QpeFilterConfig(e_low, e_prime, e_max, t=t, r=r, seed=seed + attempt)
        res = coarse_qpe_filter(exc.state, cfg, solution=sol)
        reports.append(res.record.to_json())
        if res.success:
            return res.state, math.sqrt(res.record.gamma2), {"attempts": reports, "e1": float(e1)}
    raise AlgorithmicFailure(json.dumps({"filter_exhausted": reports}))


def prepare_proxy_states(model: ActiveSpaceModel, d: DipoleOperator, seed: int = 0, **kw) -> ProxyStates:
    nb = number_basis(model.n_orbitals, model.n_electrons)
    s, a, rs = prepare_proxy_state(model, d, 0.0, 0, seed, **kw)
    t0, b0, r0 = prepare_proxy_state(model, d, 1.0, 0, seed + 1000, **kw)
    t1, b1, r1 = prepare_proxy_state(model, d, 1.0, 2, seed + 2000, **kw)
    return ProxyStates(embed(s, nb), embed(t0, nb), embed(t1, nb), a, b0, b1, {"singlet": rs, "m0": r0, "m1": r1})


@dataclass(frozen=True)
class ProxyConfig:
    shots: int | None = None
    seed: int = 0
    fit_points: int | None = None


@dataclass(frozen=True, eq=False)
class ProxyResult:
    times: np.ndarray
    k_z: tuple[ComplexEstimate, ...]
    k_perp: tuple[ComplexEstimate, ...]
    ratio: np.ndarray
    ratio_error: np.ndarray
    slope_z: complex
    slope_perp: complex
    cubic_z: complex
    cubic_perp: complex

    def to_json(self) -> dict:
        c = lambda z: [z.real, z.imag]  # noqa: E731
        return {
            "times": self.times.tolist(),
            "k_z": [c(e.value) for e in self.k_z],
            "k_perp": [c(e.value) for e in self.k_perp],
            "k_z_err": [list(e.std_error) for e in self.k_z],
            "k_perp_err": [list(e.std_error) for e in self.k_perp],
            "ratio": self.ratio.tolist(),
            "ratio_error": self.ratio_error.tolist(),
            "slope_z": c(self.slope_z),
            "slope_perp": c(self.slope_perp),
        }


def fit_short_time(times: np.ndarray, k: np.ndarray) -> tuple[complex, complex]:
    """Fit ``k(t) / (-i t) = M + C t^2``; returns ``(M, C)``."""
    t = np.asarray(times, float)
    if np.any(t <= 0):
        raise ContractError("fit times must be positive")
    y = np.asarray(k) / (-1j * t)
    a = np.column_stack([np.ones_like(t), t**2])
    coef, *_ = np.linalg.lstsq(a, y, rcond=None)
    return complex(coef[0]), complex(coef[1])


def _ratio(kz: Sequence[ComplexEstimate], kp: Sequence[ComplexEstimate]) -> tuple[np.ndarray, np.ndarray]:
    rat, err = [], []
    for a, b in zip(kz, kp):
        mz, mp = abs(a.value), abs(b.value)
        sz, sp_ = math.hypot(*a.std_error), math.hypot(*b.std_error)
        r = mp / mz if mz > 0 else math.inf
        e = r * math.hypot(sp_ / mp if mp else 0.0, sz / mz if mz else 0.0) if math.isfinite(r) else math.inf
        rat.append(r)
        err.append(e)
    return np.array(rat), np.array(err)


def evolution_proxy(
    soc: SpinTensorComponents,
    states: ProxyStates,
    t_list: Sequence[float],
    cfg: ProxyConfig = ProxyConfig(),
) -> ProxyResult:
    """Modified-Hadamard estimates of ``<psi_1,S=1,M| exp(-i t H^{1,M}) |psi_1,S=0>``.

    ``H^{1,0} = T10`` for the axial proxy and ``T11 + T1m1`` for the nonaxial
    one, both fast-forwarded exactly.
    """
    times = np.asarray(t_list, float)
    h_z = soc.T10.matrix
    h_p = soc.T11.matrix + soc.T1m1.matrix
    z_zeta = build_zeta_state(states.triplet_m0, states.singlet, states.beta_m0, states.alpha_singlet)
    p_zeta = build_zeta_state(states.triplet_m1, states.singlet, states.beta_m1, states.alpha_singlet)
    basis = states.singlet.basis
    kz, kp = [], []
    for i, t in enumerate(times):
        for h, zeta, out, off in ((h_z, z_zeta, kz, 0), (h_p, p_zeta, kp, 1)):
            act = lambda v, h=h, t=t: fast_forward_one_body(FockStatevector(v, basis), h, t).amplitudes  # noqa: E731
            exact = cfg.shots is None
            plan = None if exact else ShotPlan(cfg.shots, (cfg.seed * 1_000_003 + 2 * i + off) % 2**64)
            out.append(modified_hadamard_test(zeta, act, plan, exact_mode=exact))
    rat, err = _ratio(kz, kp)
    npts = len(times) if cfg.fit_points is None else cfg.fit_points
    pos = times > 0
    iz = np.nonzero(pos)[0][:npts]
    mz, cz = fit_short_time(times[iz], np.array([kz[i].value for i in iz])) if iz.size >= 2 else (0j, 0j)
    mp, cp = fit_short_time(times[iz], np.array([kp[i].value for i in iz])) if iz.size >= 2 else (0j, 0j)
    return ProxyResult(times, tuple(kz), tuple(kp), rat, err, mz, mp, cz, cp)


def proxy_matrix_elements(soc: SpinTensorComponents, states: ProxyStates) -> tuple[complex, complex]:
    """Oracle ``<psi_1,S=1,M|H^{1,M}|psi_1,S=0>`` for the axial and nonaxial channels."""
    b = states.singlet.basis
    hz = sparse_one_body(soc.T10, b)
    hp = sparse_one_body(SpinResolvedOperator(soc.T11.matrix + soc.T1m1.matrix, "soc_perp"), b)
    s = states.singlet.amplitudes
    return complex(np.vdot(states.triplet_m0.amplitudes, hz @ s)), complex(np.vdot(states.triplet_m1.amplitudes, hp @ s))


# --- kappa and perturbation theory ----------------------------------------------------------


@dataclass(frozen=True)
class KappaBound:
    kappa_max: float
    min_gap: float
    soc_radius: float
    degenerate: bool


def kappa_bound(energies: np.ndarray, soc: SpinResolvedOperator | np.ndarray, degeneracy_tol: float = 1e-9) -> KappaBound:
    """``kappa_max = min gap / max |eig(H_SOC)|`` over the same-sector ``energies``."""
    m = soc.matrix if isinstance(soc, SpinResolvedOperator) else np.asarray(soc)
    h = 0.5 * (m + m.conj().T)
    radius = float(np.max(np.abs(np.linalg.eigvalsh(h)))) if h.size else 0.0
    e = np.sort(np.asarray(energies, float))
    gap = float(np.min(np.diff(e))) if e.size > 1 else math.inf
    if gap <= degeneracy_tol:
        return KappaBound(0.0, gap, radius, True)
    if radius == 0:
        return KappaBound(math.inf, gap, radius, False)
    return KappaBound(gap / radius, gap, radius, False)


@dataclass(frozen=True, eq=False)
class PerturbedSolution:
    energies: np.ndarray
    vectors: np.ndarray
    amp2: np.ndarray | None


def perturbation_oracle(
    solution: EigenSolution,
    soc_matrix: np.ndarray | sp.spmatrix,
    kappa: float,
    targets: Sequence[int] | None = None,
    d: DipoleOperator | None = None,
    reference_vector: np.ndarray | None = None,
    degenerate_mode: bool = False,
    degeneracy_tol: float = 1e-8,
    coupling_tol: float = 1e-14,
    state_order: int = 1,
) -> PerturbedSolution:
    """Second-order energies and normalized first-order states of ``H + kappa V``.

    ``state_order=2`` adds the second-order state correction, which intensity
    changes need to be exact at order ``kappa^2`` whenever ``V`` links the
    target to other bright states through a common intermediate.

    ``soc_matrix`` is ``V`` on the solution's basis; ``solution`` must hold the
    complete spectrum of that basis. With ``d`` and ``reference_vector`` the
    recomputed ``sum_rho |<ref|D_rho|E'_n>|^2`` is returned. In degenerate mode
    each degenerate block is first rotated to diagonalize ``V`` within it.
    """
    e = np.asarray(solution.energies, float)
    vecs = np.array(solution.vectors, complex)
    vmat = soc_matrix.toarray() if sp.issparse(soc_matrix) else np.asarray(soc_matrix)
    vm = vecs.conj().T @ vmat @ vecs
    idx = range(e.size) if targets is None else list(targets)
    if state_order not in (1, 2):
        raise ContractError("state_order must be 1 or 2")
    if degenerate_mode:
        order = np.argsort(e)
        blocks, cur = [], [order[0]]
        for a, b in zip(order[:-1], order[1:]):
            if e[b] - e[a] <= degeneracy_tol:
                cur.append(b)
            else:
                blocks.append(cur)
                cur = [b]
        blocks.append(cur)
        for bl in blocks:
            if len(bl) > 1:
                sub = vm[np.ix_(bl, bl)]
                _, rot = np.linalg.eigh(0.5 * (sub + sub.conj().T))
                vecs[:, bl] = vecs[:, bl] @ rot
        vm = vecs.conj().T @ vmat @ vecs
    out_e, out_v = [], []
    for n in idx:
        den = e[n] - e
        small = np.abs(den) <= degeneracy_tol
        small[n] = True
        coupled = np.abs(vm[:, n]) > coupling_tol
        bad = np.nonzero(small & coupled & (np.arange(e.size) != n))[0]
        if bad.size and not degenerate_mode:
            raise SingularityError(f"vanishing denominator between states {n} and {int(bad[0])}")
        inv = np.where(small, 0.0, 1.0 / np.where(small, 1.0, den))
        c1 = np.where(coupled, vm[:, n], 0.0) * inv
        shift = kappa * vm[n, n].real + kappa**2 * float(np.sum(np.abs(np.where(coupled, vm[:, n], 0.0)) ** 2 * inv))
        corr = kappa * c1
        if state_order == 2:
            c2 = (vm @ c1 - vm[n, n] * c1) * inv
            c2[n] = -0.5 * float(np.sum(np.abs(c1) ** 2))
            corr = corr + kappa**2 * c2
        vec = vecs[:, n] + vecs @ corr
        out_e.append(e[n] + shift)
        out_v.append(vec / np.linalg.norm(vec))
    v_out = np.column_stack(out_v) if out_v else np.zeros((e.size, 0))
    amp2 = None
    if d is not None and reference_vector is not None:
        b = solution.basis
        amp2 = np.zeros(len(out_v))
        for rho in range(3):
            dm = sparse_one_body(np.asarray(d.components[rho], complex), b)
            amp2 += np.abs(v_out.conj().T @ (dm @ reference_vector)) ** 2
    return PerturbedSolution(np.array(out_e), v_out, amp2)


# --- spectroscopy-based ISC ---------------------------------------------------------------


@dataclass(frozen=True)
class PeakLeakage:
    center: float
    area_reference: float
    area_axial: float
    area_nonaxial: float

    @property
    def axial(self) -> float:
        return (self.area_reference - self.area_axial) / self.area_reference

    @property
    def nonaxial(self) -> float:
        return (self.area_reference - self.area_nonaxial) / self.area_reference


@dataclass(frozen=True, eq=False)
class SpectroscopyIscResult:
    reference: SpectrumTrace
    axial: SpectrumTrace
    nonaxial: SpectrumTrace
    peaks: tuple[PeakLeakage, ...]
    uncertainty: float
    axial_leakage: float
    nonaxial_leakage: float
    verdict: str
    kappa: float

    def to_json(self) -> dict:
        return {
            "kappa": self.kappa,
            "verdict": self.verdict,
            "uncertainty": self.uncertainty,
            "axial_leakage": self.axial_leakage,
            "nonaxial_leakage": self.nonaxial_leakage,
            "peaks": [dict(asdict(p), axial_leakage=p.axial, nonaxial_leakage=p.nonaxial) for p in self.peaks],
        }


def imbalance_verdict(axial: float, nonaxial: float, uncertainty: float, threshold: float = 3.0) -> str:
    """Compare leakages that each carry ``uncertainty``; their difference carries ``sqrt 2`` of it."""
    if abs(nonaxial - axial) > threshold * math.sqrt(2) * uncertainty:
        return "imbalanced (nonaxial >> axial)" if nonaxial > axial else "imbalanced (axial >> nonaxial)"
    if abs(axial) <= threshold * uncertainty and abs(nonaxial) <= threshold * uncertainty:
        return "no ISC detected"
    return "balanced"


def _singlet_peaks(model: ActiveSpaceModel, d: DipoleOperator, basis: FockBasis, min_amp2: float):
    sol = s2_classify(exact_diagonalize(sparse_hamiltonian(model, basis), basis=basis), basis)
    i0 = lowest_with_spin(sol, 0.0)
    v0 = sol.vectors[:, i0]
    amp = np.zeros(sol.count)
    for rho in range(3):
        dm = sparse_one_body(np.asarray(d.components[rho], complex), basis)
        amp += np.abs(sol.vectors.conj().T @ (dm @ v0)) ** 2
    keep = [i for i in range(sol.count) if i != i0 and amp[i] > min_amp2]
    return sol, i0, keep, amp


def spectroscopy_isc(
    model: ActiveSpaceModel,
    d: DipoleOperator,
    soc: SpinTensorComponents,
    kappa: float,
    cfg: SpectroConfig,
    omegas: np.ndarray,
    frame: QubitFrame | None = None,
    plan: TrotterPlan | None = None,
    kappa_max: float | None = None,
    min_amp2: float = 1e-6,
    threshold: float = 3.0,
) -> SpectroscopyIscResult:
    """Reference, axial-perturbed and nonaxial-perturbed spectra from the
    singlet ground state, with per-peak relative area loss over ``+-5 eta``."""
    if kappa < 0:
        raise ContractError("kappa must be nonnegative")
    if kappa_max is not None and kappa > kappa_max:
        warnings.warn(f"kappa {kappa} exceeds the gap bound {kappa_max}", RuntimeWarning, stacklevel=2)
    n = model.n_orbitals
    sec = _sector_for(model, 0)
    sb = sector_basis(n, *sec)
    nb = number_basis(n, model.n_electrons)
    sol, i0, peaks_idx, _ = _singlet_peaks(model, d, sb, min_amp2)
    psi0 = FockStatevector(sol.vectors[:, i0], sb)
    e0 = float(sol.energies[i0])
    h_nb = sparse_hamiltonian(model, nb)
    comps = {"axial": soc.T10.matrix, "nonaxial": soc.T11.matrix + soc.T1m1.matrix}

    def run(extra: np.ndarray, k: float) -> OpticalResponse:
        if frame is not None and plan is not None:
            prop: Propagator = TrotterPropagator(frame.with_one_body(k * extra), plan, nb)
        else:
            prop = ExactPropagator(h_nb + sparse_one_body(k * extra, nb), nb)
        return spectrum_from_state(psi0, d, prop, cfg, e0, omegas)

    r_ref = run(comps["axial"], 0.0)
    r_ax = run(comps["axial"], kappa)
    r_na = run(comps["nonaxial"], kappa)
    ref, ax, na = r_ref.trace, r_ax.trace, r_na.trace
    eta = cfg.eta
    peaks = []
    for i in peaks_idx:
        c = float(sol.energies[i] - e0)
        a_ref = ref.peak_area(c, 5 * eta)
        a_ax = ax.peak_area(c, 5 * eta)
        a_na = na.peak_area(c, 5 * eta)
        if a_ref > 0:
            peaks.append(PeakLeakage(c, a_ref, a_ax, a_na))
    norm2 = float(sum(r_ref.norms2))
    bud = error_budget(cfg, 0.0, norm2=norm2)
    if cfg.exact:
        # truncation acts linearly, so only the change of the series is uncertain
        diff = max(
            (float(np.max(np.abs(a.values - b.values))) for o in (r_ax, r_na)
             for a, b in zip(o.series, r_ref.series) if a is not None),
            default=0.0,
        )
        noise = bud.trunc * diff
    else:
        noise = math.sqrt(2) * bud.meas_pointwise
    total = sum(p.area_reference for p in peaks)
    unc = 10 * eta * noise * len(peaks) / total if peaks else math.inf
    # intensity may move into or out of a window, so magnitudes are summed
    ax_l = sum(abs(p.area_reference - p.area_axial) for p in peaks) / total if peaks else 0.0
    na_l = sum(abs(p.area_reference - p.area_nonaxial) for p in peaks) / total if peaks else 0.0
    verdict = imbalance_verdict(ax_l, na_l, unc, threshold)
    return SpectroscopyIscResult(ref, ax, na, tuple(peaks), unc, ax_l, na_l, verdict, kappa)


def predicted_leakage(
    model: ActiveSpaceModel,
    d: DipoleOperator,
    component: np.ndarray,
    kappa: float,
    eta: float,
    omegas: np.ndarray,
    min_amp2: float = 1e-6,
) -> dict[float, float]:
    """Perturbative per-peak relative area loss, measured like :func:`spectroscopy_isc`.

    Every level of the number-conserving space is perturbed to second order
    (energies) and first order (states); the Lorentzian spectra from the fixed
    singlet ground state before and after are integrated over ``+-5 eta``
    around each bright singlet peak. Intensity borrowed by nearby triplets
    thus enters exactly as it does in the simulated trace.
    """
    n = model.n_orbitals
    nb = number_basis(n, model.n_electrons)
    sb = sector_basis(n, *_sector_for(model, 0))
    sol_s, i0, keep, _ = _singlet_peaks(model, d, sb, min_amp2)
    full = exact_diagonalize(sparse_hamiltonian(model, nb), basis=nb)
    v0 = embed(FockStatevector(sol_s.vectors[:, i0], sb), nb).amplitudes
    e0 = float(sol_s.energies[i0])
    w = np.asarray(omegas, float)
    pert = perturbation_oracle(
        full, sparse_one_body(component, nb), kappa, None, degenerate_mode=True, state_order=2
    )
    # same dipole image as the simulated trace: ground component removed
    images = []
    for rho in range(3):
        x = sparse_one_body(np.asarray(d.components[rho], complex), nb) @ v0
        images.append(x - np.vdot(v0, x) * v0)

    def amp2(vecs: np.ndarray) -> np.ndarray:
        return sum(np.abs(vecs.conj().T @ x) ** 2 for x in images)

    ref = SpectrumTrace(w, lorentzian_spectrum(full.energies - e0, amp2(full.vectors), eta, w))
    per = SpectrumTrace(w, lorentzian_spectrum(pert.energies - e0, amp2(pert.vectors), eta, w))
    out = {}
    for i in keep:
        c = float(sol_s.energies[i] - e0)
        a_ref = ref.peak_area(c, 5 * eta)
        a_per = per.peak_area(c, 5 * eta)
        out[c] = 1.0 - a_per / a_ref
    return out
