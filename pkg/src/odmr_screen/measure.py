"""Ancilla-measurement protocols with binomial shot noise.

Only the ancilla outcome is sampled; the post-measurement system state is
discarded. ``mu = 2 p(0) - 1`` has standard error ``2 sqrt(p (1 - p) / S)``.
Random draws use numpy's PCG64 generator seeded with a 64-bit integer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ContractError

RNG_ALGORITHM = "numpy.PCG64"
ESTIMATORS = ("direct", "amplitude_estimation_model", "proxy_budget")

UnitaryAction = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ShotPlan:
    shots: int = 1000
    seed: int = 0
    estimator: str = "direct"

    def __post_init__(self) -> None:
        if self.shots < 1:
            raise ContractError("shots must be at least 1")
        if self.estimator not in ESTIMATORS:
            raise ContractError(f"unknown estimator {self.estimator!r}")
        if not 0 <= self.seed < 2**64:
            raise ContractError("seed must be a 64-bit unsigned integer")

    def rng(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed))


@dataclass(frozen=True)
class ComplexEstimate:
    """``std_error`` holds (real, imaginary) standard errors."""

    value: complex
    std_error: tuple[float, float]
    shots_used: int

    @property
    def real(self) -> float:
        return self.value.real

    @property
    def imag(self) -> float:
        return self.value.imag


def _vector(state) -> np.ndarray:
    return np.asarray(getattr(state, "amplitudes", state), dtype=complex)


def sample_real(mu: float, shots: int, rng: np.random.Generator) -> tuple[float, float]:
    p0 = min(max(0.5 * (1.0 + mu), 0.0), 1.0)
    k = rng.binomial(shots, p0)
    p_hat = k / shots
    return 2 * p_hat - 1, 2 * math.sqrt(p_hat * (1 - p_hat) / shots)


def sample_complex(z: complex, shots: int, rng: np.random.Generator) -> tuple[complex, tuple[float, float]]:
    re, se_re = sample_real(z.real, shots, rng)
    im, se_im = sample_real(z.imag, shots, rng)
    return complex(re, im), (se_re, se_im)


def hadamard_test(
    state,
    unitary_action: UnitaryAction,
    plan: ShotPlan | None = None,
    exact_mode: bool = True,
) -> ComplexEstimate:
    """Estimate ``<psi|U|psi>``; sampled mode spends ``plan.shots`` per component."""
    psi = _vector(state)
    z = complex(np.vdot(psi, unitary_action(psi)))
    if exact_mode or plan is None:
        return ComplexEstimate(z, (0.0, 0.0), 0)
    val, se = sample_complex(z, plan.shots, plan.rng())
    return ComplexEstimate(val, se, 2 * plan.shots)


@dataclass(frozen=True, eq=False)
class ZetaState:
    """``(alpha |0>|phi> + beta |1>|psi>) / (gamma sqrt 2)`` with ``gamma^2 = (alpha^2 + beta^2) / 2``."""

    phi: np.ndarray
    psi: np.ndarray
    alpha: float
    beta: float

    @property
    def gamma2(self) -> float:
        return 0.5 * (self.alpha**2 + self.beta**2)

    @property
    def amplitudes(self) -> np.ndarray:
        g = math.sqrt(2 * self.gamma2)
        return np.concatenate([self.alpha * self.phi, self.beta * self.psi]) / g

    def ancilla_p0(self) -> float:
        return float(np.linalg.norm(self.amplitudes[: self.phi.size]) ** 2)


def modified_hadamard_test(
    zeta: ZetaState,
    unitary_action: UnitaryAction,
    plan: ShotPlan | None = None,
    exact_mode: bool = True,
) -> ComplexEstimate:
    """Estimate ``<phi|U|psi>`` from ``<X>`` and ``<Y>`` on the ancilla of ``zeta``.

    ``<X> + i <Y> = (alpha beta / gamma^2) <phi|U|psi>``; estimates and
    standard errors are rescaled by ``gamma^2 / (alpha beta)``.
    """
    if zeta.alpha * zeta.beta == 0:
        raise ContractError("alpha * beta must be nonzero")
    scale = zeta.gamma2 / (zeta.alpha * zeta.beta)
    raw = complex(np.vdot(zeta.phi, unitary_action(zeta.psi))) / scale
    if exact_mode or plan is None:
        return ComplexEstimate(raw * scale, (0.0, 0.0), 0)
    val, (se_re, se_im) = sample_complex(raw, plan.shots, plan.rng())
    return ComplexEstimate(val * scale, (se_re * scale, se_im * scale), 2 * plan.shots)


def swap_test(state_a, state_b, plan: ShotPlan | None = None, exact_mode: bool = True) -> tuple[float, float]:
    """``(|<a|b>|^2, std_error)`` from ``p(0) = (1 + |<a|b>|^2) / 2``."""
    a, b = _vector(state_a), _vector(state_b)
    if a.shape != b.shape:
        raise ContractError("states have different dimensions")
    f = float(abs(np.vdot(a, b)) ** 2)
    if exact_mode or plan is None:
        return f, 0.0
    return sample_real(f, plan.shots, plan.rng())


def shots_required(
    eps: float,
    alpha: float = 1.0,
    beta: float = 1.0,
    gamma: float | None = None,
    estimator: str = "direct",
    c: float = 0.05,
) -> int:
    """Hadamard-test shot budget for total precision ``eps``.

    ``direct``: ``4/eps^2 (g^2/ab)^2``; ``proxy_budget``: ``16/(eps^2 g^2) (g^2/ab)^2``;
    ``amplitude_estimation_model``: ``6.4/eps (g^2/ab) log((2/c) log2(pi g^2 / (eps ab)))``.
    ``gamma`` defaults to ``sqrt((alpha^2 + beta^2) / 2)``.
    """
    if not 0 < eps < 1:
        raise ContractError("eps must lie in (0, 1)")
    if alpha * beta <= 0:
        raise ContractError("alpha and beta must be positive")
    g2 = 0.5 * (alpha**2 + beta**2) if gamma is None else gamma**2
    infl = g2 / (alpha * beta)
    if estimator == "direct":
        val = 4.0 / eps**2 * infl**2
    elif estimator == "proxy_budget":
        val = 16.0 / (eps**2 * g2) * infl**2
    elif estimator == "amplitude_estimation_model":
        val = 6.4 / eps * infl * math.log((2.0 / c) * math.log2(math.pi * infl / eps))
    else:
        raise ContractError(f"unknown estimator {estimator!r}")
    # guard against float noise just above an integer
    return int(math.ceil(val - 1e-9))
