"""Physical constants and unit conversions (atomic units throughout)."""

from __future__ import annotations

from dataclasses import dataclass

ALPHA_FS = 1.0 / 137.035999084
HARTREE_TO_EV = 27.211386
HARTREE_TO_CM1 = 219474.63


@dataclass(frozen=True)
class PhysicalConstants:
    """Container for the constants used by the SOC and rate formulas."""

    alpha_fs: float = ALPHA_FS


DEFAULT_CONSTANTS = PhysicalConstants()
