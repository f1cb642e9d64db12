"""Fault-tolerant Toffoli and logical-qubit ledgers for the evolution-proxy and
spectroscopy algorithms.

The sum-of-Slaters (SOS) preparation cost and ancilla footprint are not
derivable here; the defaults are calibrated models and are labelled as such
in every report.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.stats import binom

from .errors import ContractError
from .stateprep import median_fail_bound, qpe_calls_for_target, single_readout_fail_bound

SOS_CALIBRATION = "calibrated model, not ground truth: fitted to one reference row"


def rotation_bits(eps_rot: float) -> int:
    """Toffolis per synthesized rotation, ``ceil(log2(1/eps_rot))``."""
    if not 0 < eps_rot < 1:
        raise ContractError("eps_rot must lie in (0, 1)")
    return math.ceil(math.log2(1.0 / eps_rot) - 1e-12)


def _step_cost(one_body_rotations: int, n: int, l: int, eps_rot: float, order: int) -> int:
    if order not in (1, 2):
        raise ContractError("order must be 1 or 2")
    if n < 1 or l < 0:
        raise ContractError("need N >= 1 and L >= 0")
    first = (one_body_rotations + l * (2 * n * n + n * (2 * n + 1))) * rotation_bits(eps_rot)
    # a second-order step costs five first-order steps
    return first if order == 1 else 5 * first


def trotter_step_toffoli(n: int, l: int, eps_rot: float, order: int = 2) -> int:
    """``[(2N^2 + 2N) + L (2N^2 + N(2N+1))] ceil(log2 1/eps_rot)``, times 5 at order 2."""
    return _step_cost(2 * n * n + 2 * n, n, l, eps_rot, order)


def trotter_step_toffoli_soc(n: int, l: int, eps_rot: float, order: int = 2) -> int:
    """Step cost when the one-body fragment carries a spin-mixing SOC term.

    Its orbital rotation then acts on all ``2N`` spin orbitals:
    ``2 (2N)^2 + 2N`` rotations instead of ``2N^2 + 2N``.
    """
    return _step_cost(2 * (2 * n) ** 2 + 2 * n, n, l, eps_rot, order)


def soc_fast_forward_toffoli(n: int, eps_rot: float) -> int:
    """Complex one-body fast-forward: ``2 (2N)^2`` rotations."""
    return 2 * (2 * n) ** 2 * rotation_bits(eps_rot)


SOS_C1 = 3.985


def default_sos_toffoli(d: int, n: int) -> float:
    """``c1 D (ceil(log2 D) + 2N)`` with ``c1`` from :func:`calibrate_sos_c1`."""
    return SOS_C1 * d * (math.ceil(math.log2(d)) + 2 * n)


def default_sos_ancilla(d: int) -> int:
    """``5 ceil(log2 D) - 7``; reproduces the ancilla residue of both table modes."""
    return 5 * math.ceil(math.log2(d)) - 7


@dataclass(frozen=True)
class CostModelConfig:
    """Every cost symbol; defaults follow the published resource study.

    ``trotter_delta`` defaults to ``tau`` (one step per DTFT time step) and
    ``l`` to ``n``.
    """

    n: int = 18
    l: int | None = None
    eps_rot: float = 1e-4
    d: int = 10_000
    gamma2: float = 0.7
    alpha: float | None = None
    beta: float | None = None
    eps: float = 0.1
    p_t: float = 1e-3
    t_minus_n: int = 3
    trotter_order: int = 2
    n_trot: int = 1
    n_times: int = 1
    shots_had: int | None = None
    eta: float = 2e-3
    tau: float = math.pi / 2
    j_max: int = 500
    shots_spec: int = 3000
    trotter_delta: float | None = None
    sos_toffoli: Callable[[int, int], float] = field(default=default_sos_toffoli, compare=False)
    sos_ancilla: Callable[[int], int] = field(default=default_sos_ancilla, compare=False)

    def __post_init__(self) -> None:
        positive = (self.n, self.eps_rot, self.d, self.gamma2, self.eps, self.p_t, self.t_minus_n,
                    self.n_trot, self.n_times, self.eta, self.tau, self.j_max, self.shots_spec)
        if any(v <= 0 for v in positive):
            raise ContractError("cost-model parameters must be positive")
        if self.gamma2 > 1:
            raise ContractError("gamma^2 must not exceed 1")

    @property
    def layers(self) -> int:
        return self.n if self.l is None else self.l

    @property
    def delta(self) -> float:
        return self.tau if self.trotter_delta is None else self.trotter_delta

    @property
    def amplitudes(self) -> tuple[float, float]:
        a = math.sqrt(self.gamma2) if self.alpha is None else self.alpha
        b = math.sqrt(self.gamma2) if self.beta is None else self.beta
        return a, b

    def to_json(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("sos_toffoli", "sos_ancilla")}
        d["sos_toffoli"] = getattr(self.sos_toffoli, "__name__", repr(self.sos_toffoli))
        d["sos_ancilla"] = getattr(self.sos_ancilla, "__name__", repr(self.sos_ancilla))
        return d


@dataclass(frozen=True)
class ResourceReport:
    """``breakdown`` sums to ``toffoli_total``."""

    algorithm: str
    toffoli_per_circuit: float
    toffoli_total: float
    logical_qubits: int
    breakdown: dict[str, float]
    notes: tuple[str, ...] = ()
    details: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)


def proxy_shots(cfg: CostModelConfig) -> int:
    """``S_Had`` under the proxy budget; 2286 at the defaults."""
    from .measure import shots_required

    if cfg.shots_had is not None:
        return cfg.shots_had
    a, b = cfg.amplitudes
    return shots_required(cfg.eps, a, b, math.sqrt(cfg.gamma2), estimator="proxy_budget")


def filter_rounds(cfg: CostModelConfig) -> int:
    return qpe_calls_for_target(cfg.p_t, single_readout_fail_bound(cfg.t_minus_n))


def hs_oracle_calls(cfg: CostModelConfig) -> int:
    """``C_HS``: median-lemma rounds times ``2^(t-n)`` oracle calls per round."""
    return filter_rounds(cfg) * 2**cfg.t_minus_n


def qubit_ledger(cfg: CostModelConfig, algorithm: str = "evolution_proxy") -> int:
    """``2N`` system + 1 Hadamard ancilla + ``sos_ancilla(D_eff)``; ``D_eff = 2D`` for the proxy."""
    if algorithm == "evolution_proxy":
        d_eff = 2 * cfg.d
    elif algorithm == "spectroscopy":
        d_eff = cfg.d
    else:
        raise ContractError(f"unknown algorithm {algorithm!r}")
    return 2 * cfg.n + 1 + int(cfg.sos_ancilla(d_eff))


def evolution_proxy_cost(cfg: CostModelConfig = CostModelConfig()) -> ResourceReport:
    """``2 . 2 . S_Had N_t [(C_SOS(2D) + C_Trot N_Trot C_HS) / gamma^2 + C_SOC]``."""
    c_trot = trotter_step_toffoli(cfg.n, cfg.layers, cfg.eps_rot, cfg.trotter_order)
    c_hs = hs_oracle_calls(cfg)
    sos = cfg.sos_toffoli(2 * cfg.d, cfg.n) / cfg.gamma2
    filt = c_trot * cfg.n_trot * c_hs / cfg.gamma2
    soc = soc_fast_forward_toffoli(cfg.n, cfg.eps_rot)
    per = sos + filt + soc
    shots = proxy_shots(cfg)
    mult = 2 * 2 * shots * cfg.n_times
    notes = [f"state preparation: {SOS_CALIBRATION}"]
    if cfg.sos_toffoli is not default_sos_toffoli or cfg.sos_ancilla is not default_sos_ancilla:
        notes = ["state preparation: user-supplied SOS model"]
    return ResourceReport(
        "evolution_proxy",
        per,
        mult * per,
        qubit_ledger(cfg, "evolution_proxy"),
        {"state_preparation": mult * sos, "energy_filter": mult * filt, "soc_evolution": mult * soc},
        tuple(notes),
        {"c_trot": c_trot, "c_hs": c_hs, "shots_had": shots, "filter_rounds": filter_rounds(cfg),
         "config": cfg.to_json()},
    )


def _weighted_mean_j(cfg: CostModelConfig) -> float:
    j = np.arange(1, 2 * cfg.j_max + 1)
    w = np.exp(-cfg.tau * cfg.eta * j)
    return float((j * w).sum() / w.sum())


def spectroscopy_cost(cfg: CostModelConfig = CostModelConfig()) -> ResourceReport:
    """``3 . 2 . C_Trot s (tau/Delta) sum_j j e^{-tau eta j} / sum_k e^{-tau eta k}``
    per spectrum; the costliest circuit runs ``2 j_max tau / Delta`` steps."""
    c_trot = trotter_step_toffoli_soc(cfg.n, cfg.layers, cfg.eps_rot, cfg.trotter_order)
    steps_per_tau = cfg.tau / cfg.delta
    mean_j = _weighted_mean_j(cfg)
    per_axis_part = 2 * c_trot * cfg.shots_spec * steps_per_tau * mean_j
    total = 3 * per_axis_part
    costliest = c_trot * 2 * cfg.j_max * steps_per_tau
    return ResourceReport(
        "spectroscopy",
        costliest,
        total,
        qubit_ledger(cfg, "spectroscopy"),
        {"axis_x": per_axis_part, "axis_y": per_axis_part, "axis_z": per_axis_part},
        (f"qubit count: {SOS_CALIBRATION}", "state-preparation Toffolis excluded from the spectrum cost"),
        {"c_trot": c_trot, "mean_j": mean_j, "steps_per_tau": steps_per_tau, "config": cfg.to_json()},
    )


def calibrate_sos_c1(target_per_circuit: float, cfg: CostModelConfig = CostModelConfig()) -> float:
    """``c1`` for which the proxy per-circuit cost equals ``target_per_circuit``."""
    probe = replace(cfg, sos_toffoli=lambda d, n: d * (math.ceil(math.log2(d)) + 2 * n))
    base = replace(cfg, sos_toffoli=lambda d, n: 0.0)
    rest = evolution_proxy_cost(base).toffoli_per_circuit
    unit = evolution_proxy_cost(probe).toffoli_per_circuit - rest
    return (target_per_circuit - rest) / unit


# --- early discarding during state preparation ---------------------------------


@dataclass(frozen=True)
class DiscardDecision:
    action: str
    c_new: float
    c_test_further: float
    p_accept: float
    p_good: float
    literal_bound: float


def continuation_accept_probability(r0: int, r1: int, rounds: int, p: float, prior_good: float) -> tuple[float, float]:
    """Probability that the median over ``rounds`` accepts, given ``r0`` passes and
    ``r1`` fails so far; and the posterior weight of the in-window branch.

    In-window states pass each round with probability ``1 - p``, out-of-window
    states with probability ``p``; the prior weight of the in-window branch is
    ``prior_good`` (``gamma^2``).
    """
    done = r0 + r1
    if done > rounds:
        raise ContractError("tally exceeds the round budget")
    need = rounds // 2 + 1 - r0
    left = rounds - done
    lg = math.log(prior_good) + r0 * math.log1p(-p) + r1 * math.log(p) if prior_good > 0 else -math.inf
    lb = math.log1p(-prior_good) + r0 * math.log(p) + r1 * math.log1p(-p) if prior_good < 1 else -math.inf
    top = max(lg, lb)
    wg, wb = math.exp(lg - top), math.exp(lb - top)
    pg = wg / (wg + wb)
    if need > left:
        return 0.0, pg
    if need <= 0:
        return 1.0, pg
    acc = pg * binom.sf(need - 1, left, 1 - p) + (1 - pg) * binom.sf(need - 1, left, p)
    return float(acc), pg


def state_prep_expected_cost(r0: int, r1: int, cfg: CostModelConfig = CostModelConfig()) -> DiscardDecision:
    """Continue testing a state with ``r0`` passes and ``r1`` fails, or discard it.

    ``C_new = (C_SOS(2D) + C_Trot N_Trot C_HS) / gamma^2`` and
    ``C_test_further = C_Trot N_Trot 2^(t-n) (rounds - done) / P(accept | tally)``
    with the posterior acceptance probability; the tally-independent literal
    bound ``(2 sqrt(p(1-p)))^done / 2`` is reported alongside.
    """
    p = single_readout_fail_bound(cfg.t_minus_n)
    rounds = filter_rounds(cfg)
    c_trot = trotter_step_toffoli(cfg.n, cfg.layers, cfg.eps_rot, cfg.trotter_order)
    per_round = c_trot * cfg.n_trot * 2**cfg.t_minus_n
    c_new = (cfg.sos_toffoli(2 * cfg.d, cfg.n) + per_round * rounds) / cfg.gamma2
    done = r0 + r1
    p_acc, pg = continuation_accept_probability(r0, r1, rounds, p, cfg.gamma2)
    remaining = per_round * (rounds - done)
    c_test = remaining / p_acc if p_acc > 0 else math.inf
    literal = median_fail_bound(p, done) if done else 0.5
    action = "continue" if c_test <= c_new else "discard"
    return DiscardDecision(action, c_new, c_test, p_acc, pg, remaining / literal)


# --- table emitters ---------------------------------------------------------------


TABLE_COLUMNS = ("N", "qubits", "proxy_toffoli_per_circuit", "spectroscopy_qubits",
                 "spectroscopy_toffoli_per_spectrum", "spectroscopy_toffoli_costliest_circuit")


def table_rows(ns: tuple[int, ...] = (14, 16, 18, 36), base: CostModelConfig = CostModelConfig()) -> list[dict]:
    rows = []
    for n in ns:
        cfg = replace(base, n=n, l=None if base.l is None else base.l)
        pr, sr = evolution_proxy_cost(cfg), spectroscopy_cost(cfg)
        rows.append(dict(zip(TABLE_COLUMNS, (n, pr.logical_qubits, pr.toffoli_per_circuit, sr.logical_qubits,
                                             sr.toffoli_total, sr.toffoli_per_circuit))))
    return rows


def table_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    wr = csv.DictWriter(buf, fieldnames=TABLE_COLUMNS, lineterminator="\n")
    wr.writeheader()
    for row in rows:
        wr.writerow({k: (f"{v:.3e}" if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def write_table(path: str | Path, rows: list[dict]) -> None:
    path = Path(path)
    if path.suffix == ".json":
        path.write_text(json.dumps({"rows": rows, "notes": [SOS_CALIBRATION]}, indent=2))
    else:
        path.write_text(table_csv(rows))
