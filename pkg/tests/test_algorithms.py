import json
import math
from dataclasses import replace

import numpy as np
import pytest
import scipy.linalg

from odmr_screen.algorithms import (
    ExactPropagator,
    GreensSeries,
    ProxyConfig,
    SpectroConfig,
    TrotterPropagator,
    dtft_spectrum,
    error_budget,
    evolution_proxy,
    fit_short_time,
    greens_function_series,
    imbalance_verdict,
    kappa_bound,
    optical_response,
    perturbation_oracle,
    predicted_leakage,
    prepare_proxy_state,
    prepare_proxy_states,
    proxy_matrix_elements,
    solve_j_max,
    solve_shots,
    spectroscopy_isc,
)
from odmr_screen.cdf import frame_from_model
from odmr_screen.errors import AlgorithmicFailure, ContractError, SingularityError
from odmr_screen.evolve import FockStatevector, TrotterPlan
from odmr_screen.fock import sector_basis
from odmr_screen.model import (
    DipoleOperator,
    SpinResolvedOperator,
    random_dipole,
    random_model,
    random_soc,
    spin_tensor_decompose,
)
from odmr_screen.reference import (
    EigenSolution,
    dipole_amplitudes,
    exact_diagonalize,
    lorentzian_spectrum,
    s2_classify,
    sparse_hamiltonian,
    sparse_one_body,
)

# e^{-500 (pi/2) 0.002} / (pi (pi/2) 0.002)
EPS_TRUNC_DEFAULTS = 21.062604730926925

TOY_H = np.array([[0.2, 0.05, 0.0], [0.05, 0.7, 0.1], [0.0, 0.1, 1.3]])


def _toy():
    basis = sector_basis(3, 1, 0)
    w, v = np.linalg.eigh(TOY_H)
    return basis, w, v, ExactPropagator(TOY_H, basis)


def _toy_state(basis, seed=0):
    rng = np.random.default_rng(seed)
    c = rng.normal(size=3) + 1j * rng.normal(size=3)
    return FockStatevector(c / np.linalg.norm(c), basis)


def _toy_state_in(basis, seed=0):
    rng = np.random.default_rng(seed)
    c = rng.normal(size=basis.dim) + 1j * rng.normal(size=basis.dim)
    return c / np.linalg.norm(c)


def _zero_soc(n):
    return spin_tensor_decompose(SpinResolvedOperator(np.zeros((2 * n, 2 * n), complex), "soc_full"))


def _isc_setup(seed):
    """Three-orbital, four-electron model with planted nonaxial SOC and the kappa rule."""
    m = random_model(3, seed, n_electrons=4)
    d = random_dipole(3, seed)
    soc = spin_tensor_decompose(random_soc(3, seed, scale=1.0, nonaxial_only=True))
    b = sector_basis(3, 2, 2)
    sol = s2_classify(exact_diagonalize(sparse_hamiltonian(m, b), basis=b), b)
    singlets = sol.energies[[i for i, (lab, _) in enumerate(sol.labels) if lab == 0]]
    kb = kappa_bound(singlets, soc.T11.matrix + soc.T1m1.matrix + soc.T10.matrix)
    span = float(sol.energies[-1] - sol.energies[0])
    eta = 0.01
    cfg = SpectroConfig(eta=eta, window_norm=1.1 * span)
    cfg = replace(cfg, j_max=int(12 / (eta * cfg.step)))
    om = np.linspace(-0.1, span + 0.1, 4001)
    return m, d, soc, kb.kappa_max / 10, cfg, om


@pytest.fixture(scope="module")
def states():
    m = random_model(3, 0, n_electrons=4)
    return m, prepare_proxy_states(m, random_dipole(3, 0), seed=0)


@pytest.fixture(scope="module")
def planted():
    m, d, soc, kappa, cfg, om = _isc_setup(1)
    return m, d, soc, kappa, cfg, om, spectroscopy_isc(m, d, soc, kappa, cfg, om)


class TestSpectroConfig:
    def test_default_tau(self):
        assert SpectroConfig(window_norm=2.0).step == pytest.approx(math.pi / 4)
        assert SpectroConfig(tau=0.3).step == 0.3

    @pytest.mark.parametrize("kw", [{"eta": 0.0}, {"j_max": 0}, {"tau": -1.0}, {"window_norm": 0.0}])
    def test_validation(self, kw):
        with pytest.raises(ContractError):
            SpectroConfig(**kw)

    def test_shot_allocation(self):
        cfg = SpectroConfig(eta=0.01, j_max=200, shots_total=3000)
        s = cfg.shot_allocation()
        assert s.size == 200 and s.min() >= 1
        assert np.all(np.diff(s) <= 0)
        assert abs(s.sum() - 3000) < 200

    def test_json_defaults(self):
        d = SpectroConfig().to_json()
        assert d["shots_total"] == 3000 and d["eta"] == 2e-3 and d["j_max"] == 500


class TestGreens:
    def test_zero_time_is_one(self):
        basis, _, _, prop = _toy()
        ser = greens_function_series(_toy_state(basis), prop, SpectroConfig(j_max=5))
        assert ser.values[0] == pytest.approx(1.0)

    def test_eigenstate_phase(self):
        basis, w, v, prop = _toy()
        cfg = SpectroConfig(j_max=20, tau=0.4)
        ser = greens_function_series(FockStatevector(v[:, 1].astype(complex), basis), prop, cfg)
        np.testing.assert_allclose(ser.values, np.exp(-1j * 0.4 * np.arange(21) * w[1]), atol=1e-12)

    @pytest.mark.parametrize("e_ref", [0.0, 0.35])
    def test_spectral_sum(self, e_ref):
        basis, w, v, prop = _toy()
        psi = _toy_state(basis, 2)
        c2 = np.abs(v.T @ psi.amplitudes) ** 2
        cfg = SpectroConfig(j_max=60, tau=0.7)
        ser = greens_function_series(psi, prop, cfg, e_ref)
        j = np.arange(61)
        oracle = (c2[None, :] * np.exp(-1j * 0.7 * j[:, None] * (w[None, :] - e_ref))).sum(axis=1)
        assert np.max(np.abs(ser.values - oracle)) < 1e-12

    def test_two_sided_conjugate(self):
        basis, _, _, prop = _toy()
        ser = greens_function_series(_toy_state(basis), prop, SpectroConfig(j_max=8))
        j, g = ser.two_sided()
        assert j[0] == -8 and j[-1] == 8
        np.testing.assert_array_equal(g[:8], ser.values[:0:-1].conj())

    def test_sampled_shots_and_determinism(self):
        basis, _, _, prop = _toy()
        cfg = SpectroConfig(j_max=30, exact=False, seed=5)
        a = greens_function_series(_toy_state(basis), prop, cfg)
        b = greens_function_series(_toy_state(basis), prop, cfg)
        np.testing.assert_array_equal(a.values, b.values)
        np.testing.assert_array_equal(a.shots[1:], cfg.shot_allocation())
        assert np.all(a.std_errors[1:] >= 0)


class TestDtft:
    def test_zero_series(self):
        cfg = SpectroConfig(j_max=10)
        ser = GreensSeries(cfg.step, np.zeros(11, complex), np.zeros((11, 2)), np.zeros(11, int))
        tr = dtft_spectrum(ser, cfg, 1.0, np.linspace(0, 1, 11))
        assert np.all(tr.intensities == 0)

    def test_single_level_height(self):
        basis, w, v, prop = _toy()
        cfg = SpectroConfig(eta=0.01, j_max=20000, tau=0.5)
        ser = greens_function_series(FockStatevector(v[:, 1].astype(complex), basis), prop, cfg)
        om = np.linspace(w[1] - 0.05, w[1] + 0.05, 1001)
        tr = dtft_spectrum(ser, cfg, 2.0, om)
        assert abs(om[np.argmax(tr.intensities)] - w[1]) <= om[1] - om[0]
        assert tr.intensities.max() == pytest.approx(2.0 / 0.01, rel=1e-3)
        assert tr.imag_residual < 1e-8

    def test_matches_lorentzian_within_budget(self):
        basis, w, v, prop = _toy()
        psi = _toy_state(basis, 3)
        c2 = np.abs(v.T @ psi.amplitudes) ** 2
        cfg = SpectroConfig(eta=0.05, j_max=400, window_norm=1.5)
        om = np.linspace(0.0, 1.6, 801)
        tr = dtft_spectrum(greens_function_series(psi, prop, cfg), cfg, 1.0, om)
        ref = lorentzian_spectrum(w, c2, cfg.eta, om)
        bud = error_budget(cfg, float(np.max(np.abs(w))), float(om.max()), 1.0)
        assert np.max(np.abs(tr.intensities - ref)) <= bud.deterministic

    def test_area_sum_rule(self):
        basis, w, v, prop = _toy()
        psi = _toy_state(basis, 4)
        cfg = SpectroConfig(eta=0.01, j_max=3000, window_norm=1.5)
        om = np.linspace(-2 * math.pi / cfg.step / 2, 2 * math.pi / cfg.step / 2, 20001)
        tr = dtft_spectrum(greens_function_series(psi, prop, cfg), cfg, 3.0, om)
        assert np.trapezoid(tr.intensities, om) == pytest.approx(3.0 * math.pi, rel=1e-3)


class TestErrorBudget:
    def test_paper_defaults_trunc(self):
        cfg = SpectroConfig(eta=2e-3, tau=math.pi / 2, j_max=500)
        assert error_budget(cfg, 1.0).trunc == pytest.approx(EPS_TRUNC_DEFAULTS, rel=1e-12)

    def test_trunc_vanishes(self):
        a = error_budget(SpectroConfig(j_max=500), 1.0).trunc
        b = error_budget(SpectroConfig(j_max=50_000), 1.0).trunc
        assert b < 1e-40 * a

    def test_shot_scaling(self):
        a = error_budget(SpectroConfig(shots_total=3000), 1.0).meas
        b = error_budget(SpectroConfig(shots_total=6000), 1.0).meas
        assert b == pytest.approx(a / math.sqrt(2))

    def test_discretization_formula(self):
        cfg = SpectroConfig(eta=0.1, tau=0.2, j_max=40)
        assert error_budget(cfg, 1.5, 0.5).tau == pytest.approx(40 * 0.008 / 12 * (4.0 + 0.01))

    def test_trace_scale(self):
        cfg = SpectroConfig()
        a, b = error_budget(cfg, 1.0), error_budget(cfg, 1.0, norm2=2.0)
        assert b.trunc == pytest.approx(2 * math.pi * a.trunc)
        assert b.meas_pointwise == pytest.approx(b.meas / cfg.eta)

    def test_inverse_solvers(self):
        cfg = SpectroConfig(eta=2e-3, window_norm=1.0)
        jm = solve_j_max(cfg, 1e-3)
        assert error_budget(replace(cfg, j_max=jm), 1.0).trunc <= 1e-3
        assert error_budget(replace(cfg, j_max=jm - 1), 1.0).trunc > 1e-3
        s = solve_shots(cfg, 1e-4)
        assert error_budget(replace(cfg, shots_total=s), 1.0).meas <= 1e-4
        assert error_budget(replace(cfg, shots_total=s - 1), 1.0).meas > 1e-4


class TestOpticalResponse:
    def test_zero_dipole(self):
        m = random_model(2, 0, n_electrons=2)
        d = DipoleOperator(tuple(np.zeros((2, 2)) for _ in range(3)))
        with pytest.warns(RuntimeWarning, match="empty"):
            r = optical_response(m, d, (1, 1), SpectroConfig(j_max=10), np.linspace(0, 1, 5))
        assert r.degenerate and np.all(r.trace.intensities == 0)

    def test_peaks_and_areas(self):
        m = random_model(2, 3, n_electrons=2)
        d = random_dipole(2, 13)
        b = sector_basis(2, 1, 1)
        sol = exact_diagonalize(sparse_hamiltonian(m, b), basis=b)
        _, amp2 = dipole_amplitudes(sol, d)
        gaps = sol.energies - sol.energies[0]
        span = gaps[-1]
        eta = 0.005
        cfg = SpectroConfig(eta=eta, window_norm=1.2 * span)
        cfg = replace(cfg, j_max=int(15 / (eta * cfg.step)))
        om = np.linspace(-1, span + 1, 8001)
        tr = optical_response(m, d, (1, 1), cfg, om).trace
        bright = [k for k in range(1, b.dim) if amp2[k] > 1e-3]
        assert len(bright) == 2
        edges = np.r_[om[0], 0.5 * (gaps[bright[0]] + gaps[bright[1]]), om[-1]]
        for k, lo, hi in zip(bright, edges[:-1], edges[1:]):
            sel = (om >= lo) & (om <= hi)
            peak = om[sel][np.argmax(tr.intensities[sel])]
            assert abs(peak - gaps[k]) <= om[1] - om[0]
            area = np.trapezoid(tr.intensities[sel], om[sel])
            assert area == pytest.approx(math.pi * amp2[k], rel=0.02)

    def test_sampled_within_noise_budget(self):
        m = random_model(2, 3, n_electrons=2)
        d = random_dipole(2, 13)
        cfg = SpectroConfig(eta=0.1, j_max=500, window_norm=8.0, shots_total=3000)
        om = np.linspace(-1, 9, 2001)
        ex = optical_response(m, d, (1, 1), cfg, om)
        sa = optical_response(m, d, (1, 1), replace(cfg, exact=False, seed=11), om)
        eps = sum(error_budget(cfg, 0.0, norm2=n).meas_pointwise for n in ex.norms2)
        dev = np.abs(sa.trace.intensities - ex.trace.intensities)
        assert np.mean(dev < 5 * eps) >= 0.99

    def test_trotter_mode_matches_exact(self):
        m = random_model(2, 1, n_electrons=2)
        d = random_dipole(2, 1)
        cfg = SpectroConfig(eta=0.05, j_max=60, window_norm=4.0)
        om = np.linspace(0, 4, 201)
        ex = optical_response(m, d, (1, 1), cfg, om)
        tr = optical_response(m, d, (1, 1), cfg, om, frame=frame_from_model(m, 3), plan=TrotterPlan(2, cfg.step / 8))
        assert np.max(np.abs(ex.trace.intensities - tr.trace.intensities)) < 1e-2 * np.max(ex.trace.intensities)


class TestTrotterPropagator:
    def test_step_need_not_divide_time(self):
        m = random_model(2, 0, n_electrons=2)
        b = sector_basis(2, 1, 1)
        h = sparse_hamiltonian(m, b).toarray()
        psi = _toy_state_in(b)
        frame = frame_from_model(m, 4)
        t = math.pi / 8
        ref = scipy.linalg.expm(-1j * t * h) @ psi
        for delta in (t / 8, 0.05):
            out = TrotterPropagator(frame, TrotterPlan(2, delta), b).evolve(psi, t)
            assert np.linalg.norm(out - ref) < 1e-4

    def test_zero_and_negative_time(self):
        m = random_model(2, 0, n_electrons=2)
        b = sector_basis(2, 1, 1)
        prop = TrotterPropagator(frame_from_model(m, 2), TrotterPlan(2, 0.1), b)
        psi = _toy_state_in(b)
        np.testing.assert_array_equal(prop.evolve(psi, 0.0), psi)
        with pytest.raises(ContractError):
            prop.evolve(psi, -0.1)


class TestProxy:
    def test_zero_soc(self, states):
        m, st = states
        res = evolution_proxy(_zero_soc(3), st, [0.01, 0.1, 1.0])
        assert all(abs(k.value) < 1e-12 for k in res.k_z + res.k_perp)

    def test_zero_time_overlap(self, states):
        m, st = states
        res = evolution_proxy(spin_tensor_decompose(random_soc(3, 0)), st, [0.0])
        assert abs(res.k_z[0].value) < 1e-12 and abs(res.k_perp[0].value) < 1e-12

    def test_slope_matches_oracle(self, states):
        m, st = states
        soc = spin_tensor_decompose(random_soc(3, 0))
        res = evolution_proxy(soc, st, [0.01, 0.02, 0.04, 0.08])
        oz, op = proxy_matrix_elements(soc, st)
        assert abs(res.slope_z - oz) < 0.01 * abs(oz)
        assert abs(res.slope_perp - op) < 0.01 * abs(op)
        ts = np.array([0.01, 0.02, 0.04, 0.08])
        resid = np.abs(np.array([k.value for k in res.k_perp]) / (-1j * ts) - op)
        assert np.polyfit(np.log(ts), np.log(resid), 1)[0] == pytest.approx(2.0, abs=0.3)

    def test_planted_nonaxial(self, states):
        m, st = states
        soc = spin_tensor_decompose(random_soc(3, 0, nonaxial_only=True))
        res = evolution_proxy(soc, st, [0.02, 0.05])
        assert np.all(res.ratio > 1e3)

    def test_sampled_errors(self, states):
        m, st = states
        soc = spin_tensor_decompose(random_soc(3, 0, scale=0.1))
        res = evolution_proxy(soc, st, [0.5], ProxyConfig(shots=4000, seed=3))
        ex = evolution_proxy(soc, st, [0.5])
        for a, b in ((res.k_z[0], ex.k_z[0]), (res.k_perp[0], ex.k_perp[0])):
            assert abs(a.real - b.real) < 5 * a.std_error[0] + 1e-12
            assert a.shots_used == 8000
        assert json.loads(json.dumps(res.to_json()))["times"] == [0.5]

    def test_fit_short_time(self):
        t = np.array([0.1, 0.2, 0.3])
        m, c = 0.3 - 0.2j, 0.05
        mm, cc = fit_short_time(t, -1j * t * (m + c * t**2))
        assert mm == pytest.approx(m) and cc == pytest.approx(c)
        with pytest.raises(ContractError):
            fit_short_time(np.array([0.0, 0.1]), np.zeros(2))

    def test_filter_exhaustion(self):
        m = random_model(3, 0, n_electrons=4)
        with pytest.raises(AlgorithmicFailure, match="filter_exhausted"):
            prepare_proxy_state(m, random_dipole(3, 0), 0.0, 0, max_attempts=0)


class TestKappa:
    def test_zero_soc(self):
        kb = kappa_bound(np.array([0.0, 1.0]), np.zeros((4, 4)))
        assert kb.kappa_max == math.inf and not kb.degenerate

    def test_half_gap_radius(self):
        g = 0.4
        kb = kappa_bound(np.array([0.0, g, 3.0]), np.diag([g / 2, -g / 4]))
        assert kb.kappa_max == pytest.approx(2.0)

    def test_degenerate(self):
        kb = kappa_bound(np.array([0.0, 0.5, 0.5]), np.eye(2))
        assert kb.kappa_max == 0.0 and kb.degenerate

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_shifts_below_tenth_gap(self, seed):
        m = random_model(3, seed, n_electrons=4)
        b = sector_basis(3, 2, 2)
        h = sparse_hamiltonian(m, b).toarray()
        soc = spin_tensor_decompose(random_soc(3, seed, scale=1.0))
        e = np.linalg.eigvalsh(h)
        kb = kappa_bound(e, soc.T10)
        v = sparse_one_body(soc.T10, b).toarray()
        shifted = np.linalg.eigvalsh(h + kb.kappa_max / 10 * v)
        assert np.max(np.abs(shifted - e)) < kb.min_gap / 10


class TestPerturbation:
    def _two_level(self, gap=1.0, v=0.3):
        sol = EigenSolution(np.array([0.0, gap]), np.eye(2, dtype=complex))
        return sol, np.array([[0.0, v], [v, 0.0]])

    def test_kappa_zero_passthrough(self):
        sol, vm = self._two_level()
        out = perturbation_oracle(sol, vm, 0.0)
        np.testing.assert_allclose(out.energies, sol.energies)
        np.testing.assert_allclose(np.abs(out.vectors), np.eye(2))

    @pytest.mark.parametrize("kappa", [0.05, 0.1, 0.2])
    def test_two_level_closed_form(self, kappa):
        gap, v = 1.0, 0.3
        sol, vm = self._two_level(gap, v)
        out = perturbation_oracle(sol, vm, kappa)
        half = math.sqrt((gap / 2) ** 2 + (kappa * v) ** 2)
        exact = np.array([gap / 2 - half, gap / 2 + half])
        x = kappa * v / gap
        assert np.max(np.abs(out.energies - exact)) < 2 * gap * x**3 + 1e-15

    def test_spin_tensor_first_order_vanishes(self):
        m = random_model(2, 4, n_electrons=2)
        from odmr_screen.fock import number_basis

        nb = number_basis(2, 2)
        sol = exact_diagonalize(sparse_hamiltonian(m, nb), basis=nb)
        soc = spin_tensor_decompose(random_soc(2, 4, scale=1.0))
        vfull = sparse_one_body(soc.T11.matrix + soc.T1m1.matrix, nb)
        vm = sol.vectors.conj().T @ (vfull @ sol.vectors)
        assert np.max(np.abs(np.diag(vm))) < 1e-12

    def test_singular_pair_named(self):
        sol = EigenSolution(np.array([0.0, 0.0, 1.0]), np.eye(3, dtype=complex))
        vm = np.array([[0, 0.2, 0.1], [0.2, 0, 0.1], [0.1, 0.1, 0]], complex)
        with pytest.raises(SingularityError, match="states 0 and 1"):
            perturbation_oracle(sol, vm, 0.01)

    def test_degenerate_mode(self):
        sol = EigenSolution(np.array([0.0, 0.0, 1.0]), np.eye(3, dtype=complex))
        vm = np.array([[0, 0.2, 0.1], [0.2, 0, 0.1], [0.1, 0.1, 0]], complex)
        kappa = 0.01
        out = perturbation_oracle(sol, vm, kappa, degenerate_mode=True)
        exact = np.linalg.eigvalsh(np.diag(sol.energies) + kappa * vm)
        assert np.max(np.abs(np.sort(out.energies) - exact)) < 1e-5

    def test_amplitudes_recomputed(self):
        sol, vm = self._two_level()
        out = perturbation_oracle(sol, vm, 0.0)
        assert out.amp2 is None
        with pytest.raises(ContractError):
            perturbation_oracle(sol, vm, 0.1, state_order=3)


class TestVerdict:
    @pytest.mark.parametrize(
        "ax,na,unc,expected",
        [
            (0.0, 0.5, 0.01, "imbalanced (nonaxial >> axial)"),
            (0.5, 0.0, 0.01, "imbalanced (axial >> nonaxial)"),
            (0.001, 0.002, 0.01, "no ISC detected"),
            (0.3, 0.31, 0.01, "balanced"),
        ],
    )
    def test_cases(self, ax, na, unc, expected):
        assert imbalance_verdict(ax, na, unc) == expected

    def test_threshold(self):
        assert imbalance_verdict(0.0, 0.06, 0.01, threshold=5.0) == "balanced"


class TestSpectroscopyIsc:
    def test_kappa_zero_identical(self):
        m, d, soc, _, cfg, om = _isc_setup(0)
        cfg = replace(cfg, j_max=300)
        r = spectroscopy_isc(m, d, soc, 0.0, cfg, om)
        assert np.array_equal(r.reference.intensities, r.axial.intensities)
        assert np.array_equal(r.reference.intensities, r.nonaxial.intensities)
        assert r.verdict == "no ISC detected"

    def test_negative_kappa(self):
        m, d, soc, _, cfg, om = _isc_setup(0)
        with pytest.raises(ContractError):
            spectroscopy_isc(m, d, soc, -0.1, cfg, om)

    def test_kappa_above_bound_warns(self):
        m, d, soc, kappa, cfg, om = _isc_setup(0)
        with pytest.warns(RuntimeWarning, match="exceeds"):
            spectroscopy_isc(m, d, soc, kappa, replace(cfg, j_max=50), om, kappa_max=kappa / 2)

    def test_planted_selection_rule(self, planted):
        *_, r = planted
        assert r.axial_leakage == 0.0
        assert r.nonaxial_leakage > 5 * r.axial_leakage
        assert r.verdict == "imbalanced (nonaxial >> axial)"

    def test_per_peak_matches_oracle(self, planted):
        m, d, soc, kappa, cfg, om, r = planted
        pred = predicted_leakage(m, d, soc.T11.matrix + soc.T1m1.matrix, kappa, cfg.eta, om)
        assert len(r.peaks) >= 2
        for p in r.peaks:
            c = min(pred, key=lambda g: abs(g - p.center))
            assert abs(c - p.center) < 1e-12
            assert p.nonaxial == pytest.approx(pred[c], rel=0.2)

    def test_report_json(self, planted):
        *_, r = planted
        data = json.loads(json.dumps(r.to_json()))
        assert data["verdict"] == r.verdict and len(data["peaks"]) == len(r.peaks)

    def test_trotter_mode_agrees(self):
        m, d, soc, kappa, cfg, om = _isc_setup(1)
        cfg = replace(cfg, j_max=40)
        ex = spectroscopy_isc(m, d, soc, kappa, cfg, om)
        tr = spectroscopy_isc(m, d, soc, kappa, cfg, om, frame=frame_from_model(m, 6), plan=TrotterPlan(2, cfg.step / 5))
        scale = np.max(ex.reference.intensities)
        assert np.max(np.abs(ex.nonaxial.intensities - tr.nonaxial.intensities)) < 1e-2 * scale
