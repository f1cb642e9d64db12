import numpy as np
import pytest
import scipy.linalg

from conftest import dense_hamiltonian, restrict
from odmr_screen.cdf import (
    CdfFactorization,
    CdfFragment,
    CdfOptions,
    assemble_qubit_frame,
    build_factorization,
    factorize,
    factorize_one_body_matrix,
    factorize_two_body,
    frame_from_model,
    frame_hamiltonian,
    sweep,
)
from odmr_screen.errors import ContractError
from odmr_screen.fock import full_basis, number_basis, sector_basis
from odmr_screen.model import ActiveSpaceModel, random_model
from odmr_screen.reference import exact_diagonalize, sparse_hamiltonian


def _planted_tensor(n, seed):
    rng = np.random.default_rng(seed)
    k = rng.normal(size=(n, n))
    u = scipy.linalg.expm(0.5 * (k - k.T))
    z = rng.normal(size=(n, n))
    z = 0.5 * (z + z.T)
    return CdfFragment(u, z).tensor(), u, z


class TestOneBody:
    def test_diagonal(self):
        f = factorize_one_body_matrix(np.diag([3.0, -1.0, 2.0]))
        np.testing.assert_allclose(f.z, [-1.0, 2.0, 3.0])
        np.testing.assert_allclose(np.abs(f.u), np.eye(3)[:, [1, 2, 0]], atol=1e-14)

    def test_pauli_x(self):
        f = factorize_one_body_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
        np.testing.assert_allclose(f.z, [-1.0, 1.0], atol=1e-14)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_random_reconstruction(self, seed):
        a = np.random.default_rng(seed).normal(size=(5, 5))
        t = 0.5 * (a + a.T)
        f = factorize_one_body_matrix(t)
        assert np.linalg.norm((f.u * f.z) @ f.u.T - t) < 1e-10
        assert np.all(np.diff(f.z) >= 0)

    def test_nonsymmetric_rejected(self):
        with pytest.raises(ContractError):
            factorize_one_body_matrix(np.array([[0.0, 1.0], [0.0, 0.0]]))


class TestTwoBody:
    @pytest.mark.parametrize("seed", [3, 4])
    def test_plant_and_recover(self, seed):
        v, _, _ = _planted_tensor(3, seed)
        frags, res, ok = factorize_two_body(v, 1)
        assert res < 1e-8
        assert ok

    def test_density_density_identity_rotation(self):
        v = np.zeros((3,) * 4)
        for p in range(3):
            for r in range(3):
                v[p, p, r, r] = 0.7
        frags, res, _ = factorize_two_body(v, 1)
        assert res < 1e-10
        np.testing.assert_allclose(frags[0].tensor(), v, atol=1e-10)

    def test_residual_nonincreasing_in_l(self):
        m = random_model(4, 11)
        res = [f.residual for f in sweep(m, list(range(1, 9)))]
        assert all(b <= a + 1e-12 for a, b in zip(res, res[1:]))
        assert res[-1] < 0.1 * res[0]

    def test_deterministic_given_seed(self):
        m = random_model(3, 5)
        a = factorize(m, 2, CdfOptions(seed=7))
        b = factorize(m, 2, CdfOptions(seed=7))
        assert a.residual == b.residual
        for fa, fb in zip(a.two_body, b.two_body):
            assert np.array_equal(fa.u, fb.u) and np.array_equal(fa.z, fb.z)

    def test_orthogonality_maintained(self):
        f = factorize(random_model(4, 2), 4)
        for fr in f.two_body:
            assert np.max(np.abs(fr.u.T @ fr.u - np.eye(4))) < 1e-8

    def test_zero_fragments_rejected(self):
        with pytest.raises(ContractError):
            factorize_two_body(random_model(2, 0), 0)

    def test_nonconvergence_warns_and_returns(self):
        with pytest.warns(RuntimeWarning):
            frags, res, ok = factorize_two_body(random_model(4, 1), 2, CdfOptions(max_iters=2, n_starts=1))
        assert not ok and len(frags) == 2 and np.isfinite(res)


class TestFrame:
    def test_one_orbital(self):
        a = 0.37
        m = ActiveSpaceModel(1, np.array([[a]]), np.zeros((1, 1, 1, 1)))
        fr = frame_from_model(m, 1)
        np.testing.assert_allclose(fr.single_z, [-a / 2, -a / 2])
        assert fr.constant_shift == pytest.approx(a)
        assert np.max(np.abs(fr.pair_zz[0])) < 1e-12

    def test_zero_two_body_constant(self):
        rng = np.random.default_rng(8)
        t = rng.normal(size=(3, 3))
        t = 0.5 * (t + t.T)
        m = ActiveSpaceModel(3, t, np.zeros((3,) * 4), core_energy=0.25)
        f = build_factorization(m, [CdfFragment(np.eye(3), np.zeros((3, 3)))], 0.0)
        fr = assemble_qubit_frame(f)
        assert np.max(np.abs(fr.pair_zz[0])) == 0
        assert fr.constant_shift == pytest.approx(0.25 + np.linalg.eigvalsh(t).sum())

    def test_density_density_frame_is_exact(self):
        rng = np.random.default_rng(2)
        v = np.zeros((2,) * 4)
        z = rng.normal(size=(2, 2))
        z = z @ z.T
        for p in range(2):
            for r in range(2):
                v[p, p, r, r] = z[p, r]
        m = ActiveSpaceModel(2, np.diag([0.3, -0.4]), v)
        basis = full_basis(2)
        h = frame_hamiltonian(frame_from_model(m, 1), basis).toarray()
        ref = restrict(dense_hamiltonian(m.t_eff, m.v_eff, 0.0, 2), basis.states)
        np.testing.assert_allclose(h, ref, atol=1e-10)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_rebuilt_matches_model_matrix(self, seed):
        m = random_model(3, seed, n_electrons=3)
        basis = number_basis(3, 3)
        frame = frame_from_model(m, 6)
        diff = frame_hamiltonian(frame, basis).toarray() - sparse_hamiltonian(m, basis).toarray()
        assert np.max(np.abs(diff)) < 1e-8 + 10 * frame.residual

    def test_json_round_trip(self, tmp_path):
        f = factorize(random_model(2, 6), 2)
        f.save(tmp_path / "c.json")
        g = CdfFactorization.load(tmp_path / "c.json")
        assert g.residual == f.residual and g.constant_shift == f.constant_shift
        np.testing.assert_array_equal(g.two_body[1].u, f.two_body[1].u)

    def test_low_energy_error_decreases_with_l(self):
        m = random_model(4, 3, n_electrons=4)
        basis = sector_basis(4, 2, 2)
        exact = exact_diagonalize(sparse_hamiltonian(m, basis), basis=basis, k=4).energies
        errs = []
        for nf in (1, 4, 8):
            approx = exact_diagonalize(frame_hamiltonian(frame_from_model(m, nf), basis), basis=basis, k=4).energies
            errs.append(float(np.mean(np.abs(approx - exact))))
        assert errs[2] < errs[0]
        assert errs[2] < 1e-3
