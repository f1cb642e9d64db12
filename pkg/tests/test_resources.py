import itertools
import json
import math
from dataclasses import replace

import pytest

from odmr_screen.errors import ContractError
from odmr_screen.resources import (
    SOS_CALIBRATION,
    TABLE_COLUMNS,
    CostModelConfig,
    calibrate_sos_c1,
    continuation_accept_probability,
    evolution_proxy_cost,
    filter_rounds,
    hs_oracle_calls,
    proxy_shots,
    qubit_ledger,
    rotation_bits,
    spectroscopy_cost,
    state_prep_expected_cost,
    table_csv,
    table_rows,
    trotter_step_toffoli,
    write_table,
)
from odmr_screen.stateprep import single_readout_fail_bound

TABLE_N = (14, 16, 18, 36)
TABLE_QUBITS = {14: 97, 16: 101, 18: 105, 36: 141}
TABLE_PROXY = {14: 1.03e8, 16: 1.54e8, 18: 2.20e8, 36: 1.77e9}
TABLE_SPECTRUM = {14: 5.05e12, 16: 7.59e12, 18: 1.09e13, 36: 8.86e13}
TABLE_COSTLIEST = {14: 1.03e9, 16: 1.54e9, 18: 2.21e9, 36: 1.80e10}

# [(2 18^2 + 36) + 18 (2 18^2 + 18 37)] * 14 * 5
STEP_N18 = 1_703_520


def _within_factor_2(x, ref):
    return ref / 2 <= x <= 2 * ref


def _enumerated_accept(r0, r1, rounds, p, prior):
    """Sum over every continuation sequence of both hypotheses."""
    like_g = prior * (1 - p) ** r0 * p**r1
    like_b = (1 - prior) * p**r0 * (1 - p) ** r1
    pg = like_g / (like_g + like_b)
    left = rounds - r0 - r1
    acc = 0.0
    for seq in itertools.product((0, 1), repeat=left):
        passes = r0 + seq.count(1)
        if passes > rounds // 2:
            k = seq.count(1)
            acc += pg * (1 - p) ** k * p ** (left - k) + (1 - pg) * p**k * (1 - p) ** (left - k)
    return acc, pg


class TestTrotterStep:
    def test_trivial(self):
        assert trotter_step_toffoli(1, 0, 0.5, order=1) == 4

    def test_regression_n18(self):
        assert trotter_step_toffoli(18, 18, 1e-4) == STEP_N18

    def test_order_two_is_five_steps(self):
        assert trotter_step_toffoli(5, 3, 1e-3, 2) == 5 * trotter_step_toffoli(5, 3, 1e-3, 1)

    def test_linear_in_bits(self):
        assert rotation_bits(2**-5) == 5 and rotation_bits(2**-10) == 10
        assert trotter_step_toffoli(6, 6, 2**-10) == 2 * trotter_step_toffoli(6, 6, 2**-5)

    @pytest.mark.parametrize("kw", [{"order": 3}, {"eps_rot": 1.5}, {"l": -1}])
    def test_validation(self, kw):
        args = {"n": 2, "l": 1, "eps_rot": 1e-3, "order": 2} | kw
        with pytest.raises(ContractError):
            trotter_step_toffoli(**args)


class TestQubits:
    @pytest.mark.parametrize("n", TABLE_N)
    def test_table_values(self, n):
        cfg = CostModelConfig(n=n)
        assert qubit_ledger(cfg) == TABLE_QUBITS[n]
        assert qubit_ledger(cfg, "spectroscopy") == TABLE_QUBITS[n] - 5

    def test_affine_slope_two(self):
        q = [qubit_ledger(CostModelConfig(n=n)) for n in range(2, 40)]
        assert all(b - a == 2 for a, b in zip(q, q[1:]))

    def test_unknown_algorithm(self):
        with pytest.raises(ContractError):
            qubit_ledger(CostModelConfig(), "qaoa")

    def test_pluggable_ancilla(self):
        assert qubit_ledger(CostModelConfig(n=4, sos_ancilla=lambda d: 0)) == 9


class TestEvolutionProxyCost:
    @pytest.mark.parametrize("n", TABLE_N)
    def test_table_factor_two(self, n):
        rep = evolution_proxy_cost(CostModelConfig(n=n))
        assert _within_factor_2(rep.toffoli_per_circuit, TABLE_PROXY[n])

    def test_defaults(self):
        cfg = CostModelConfig()
        assert proxy_shots(cfg) == 2286
        assert filter_rounds(cfg) == 11
        assert hs_oracle_calls(cfg) == 88

    def test_breakdown_sums(self):
        rep = evolution_proxy_cost()
        assert sum(rep.breakdown.values()) == pytest.approx(rep.toffoli_total, rel=1e-12)
        assert rep.toffoli_total == pytest.approx(4 * 2286 * rep.toffoli_per_circuit, rel=1e-12)
        assert any(SOS_CALIBRATION in n for n in rep.notes)

    def test_formula_limit(self):
        cfg = CostModelConfig(n=6, gamma2=1.0, sos_toffoli=lambda d, n: 0.0)
        rep = evolution_proxy_cost(cfg)
        c_trot = trotter_step_toffoli(6, 6, 1e-4)
        s = proxy_shots(cfg)
        assert rep.breakdown["state_preparation"] == 0.0
        assert rep.toffoli_total - rep.breakdown["soc_evolution"] == pytest.approx(4 * s * c_trot * hs_oracle_calls(cfg))
        assert "user-supplied" in rep.notes[0]

    def test_calibration_reproduces_row(self):
        c1 = calibrate_sos_c1(2.20e8)
        assert c1 == pytest.approx(3.98514, rel=1e-5)

    def test_json(self):
        data = json.loads(json.dumps(evolution_proxy_cost().to_json()))
        assert data["details"]["shots_had"] == 2286
        assert data["details"]["config"]["sos_toffoli"] == "default_sos_toffoli"


class TestSpectroscopyCost:
    @pytest.mark.parametrize("n", TABLE_N)
    def test_table_factor_two(self, n):
        rep = spectroscopy_cost(CostModelConfig(n=n))
        assert _within_factor_2(rep.toffoli_total, TABLE_SPECTRUM[n])
        assert _within_factor_2(rep.toffoli_per_circuit, TABLE_COSTLIEST[n])

    def test_shots_linear(self):
        a = spectroscopy_cost(CostModelConfig(shots_spec=3000)).toffoli_total
        b = spectroscopy_cost(CostModelConfig(shots_spec=6000)).toffoli_total
        assert b == pytest.approx(2 * a)

    def test_large_eta_collapses_to_first_term(self):
        rep = spectroscopy_cost(CostModelConfig(eta=100.0))
        assert rep.details["mean_j"] == pytest.approx(1.0, abs=1e-12)
        assert rep.toffoli_total == pytest.approx(6 * rep.details["c_trot"] * 3000)

    def test_costliest_formula(self):
        cfg = CostModelConfig(n=4, trotter_delta=math.pi / 8)
        rep = spectroscopy_cost(cfg)
        assert rep.toffoli_per_circuit == pytest.approx(rep.details["c_trot"] * 2 * 500 * 4)

    def test_breakdown_sums(self):
        rep = spectroscopy_cost()
        assert sum(rep.breakdown.values()) == pytest.approx(rep.toffoli_total)


class TestMonotonicity:
    @pytest.mark.parametrize(
        "field,values",
        [("n", (4, 8, 12)), ("l", (2, 4, 8)), ("shots_had", (100, 200, 400)), ("j_max", (100, 200, 400)),
         ("eps_rot", (1e-2, 1e-4, 1e-6))],
    )
    def test_nondecreasing(self, field, values):
        props, specs = [], []
        for v in values:
            cfg = replace(CostModelConfig(n=8), **{field: v})
            props.append(evolution_proxy_cost(cfg).toffoli_total)
            specs.append(spectroscopy_cost(cfg).toffoli_total)
        assert props == sorted(props) and specs == sorted(specs)

    def test_invalid_config(self):
        with pytest.raises(ContractError):
            CostModelConfig(gamma2=1.5)
        with pytest.raises(ContractError):
            CostModelConfig(eta=0.0)


class TestDiscard:
    @pytest.mark.parametrize("r0,r1", [(0, 0), (2, 1), (1, 2), (4, 3), (0, 5), (5, 0), (3, 3)])
    @pytest.mark.parametrize("rounds", [7, 11])
    def test_accept_matches_enumeration(self, r0, r1, rounds):
        p = single_readout_fail_bound(3)
        got = continuation_accept_probability(r0, r1, rounds, p, 0.7)
        want = _enumerated_accept(r0, r1, rounds, p, 0.7)
        assert got[0] == pytest.approx(want[0], rel=1e-10, abs=1e-15)
        assert got[1] == pytest.approx(want[1], rel=1e-10)

    def test_tally_over_budget(self):
        with pytest.raises(ContractError):
            continuation_accept_probability(6, 6, 11, 0.1, 0.5)

    def test_fresh_state_continues(self):
        assert state_prep_expected_cost(0, 0).action == "continue"

    def test_lost_majority_discards(self):
        dec = state_prep_expected_cost(0, 6)
        assert dec.action == "discard" and dec.p_accept == 0.0 and dec.c_test_further == math.inf

    @pytest.mark.parametrize("r0,r1", [(r0, r1) for r0 in range(7) for r1 in range(7) if r0 + r1 <= 11])
    def test_decision_matches_cost_minimization(self, r0, r1):
        cfg = CostModelConfig()
        dec = state_prep_expected_cost(r0, r1, cfg)
        p = single_readout_fail_bound(cfg.t_minus_n)
        rounds = filter_rounds(cfg)
        per_round = trotter_step_toffoli(18, 18, 1e-4) * 2**cfg.t_minus_n
        acc, _ = _enumerated_accept(r0, r1, rounds, p, cfg.gamma2)
        further = per_round * (rounds - r0 - r1) / acc if acc > 0 else math.inf
        fresh = (cfg.sos_toffoli(2 * cfg.d, cfg.n) + per_round * rounds) / cfg.gamma2
        assert dec.action == ("continue" if further <= fresh else "discard")

    @pytest.mark.parametrize(
        "tally,action",
        [((0, 0), "continue"), ((3, 0), "continue"), ((0, 3), "discard"), ((2, 1), "continue"),
         ((1, 2), "discard"), ((3, 3), "continue")],
    )
    def test_recorded_decisions(self, tally, action):
        assert state_prep_expected_cost(*tally).action == action


class TestTable:
    def test_rows(self):
        rows = table_rows()
        assert [r["N"] for r in rows] == list(TABLE_N)
        assert [r["qubits"] for r in rows] == [97, 101, 105, 141]
        assert [r["spectroscopy_qubits"] for r in rows] == [92, 96, 100, 136]

    def test_csv_layout(self):
        text = table_csv(table_rows())
        lines = text.strip().split("\n")
        assert lines[0] == ",".join(TABLE_COLUMNS) and len(lines) == 5
        assert lines[3].startswith("18,105,2.200e+08,100,")

    def test_empty_csv(self):
        assert table_csv([]) == ",".join(TABLE_COLUMNS) + "\n"

    def test_write_json(self, tmp_path):
        write_table(tmp_path / "t.json", table_rows((18,)))
        data = json.loads((tmp_path / "t.json").read_text())
        assert data["rows"][0]["qubits"] == 105 and data["notes"] == [SOS_CALIBRATION]
