"""Sampled spectra and their CSV form."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .constants import HARTREE_TO_EV


@dataclass(frozen=True, eq=False)
class SpectrumTrace:
    """Intensities on a monotone frequency grid (Hartree) plus provenance."""

    omegas: np.ndarray
    intensities: np.ndarray
    metadata: dict[str, Any] = field(default_factory=dict)
    imag_residual: float = 0.0

    def peak_area(self, center: float, half_width: float) -> float:
        """Trapezoid area of the trace over ``[center - half_width, center + half_width]``."""
        w = self.omegas
        lo, hi = center - half_width, center + half_width
        inside = (w >= lo) & (w <= hi)
        x = w[inside]
        y = self.intensities[inside]
        if x.size < 2:
            return 0.0
        return float(np.trapezoid(y, x))

    def local_peak(self, center: float, search: float) -> float:
        """Grid frequency of the largest intensity within ``search`` of ``center``."""
        w = self.omegas
        inside = np.abs(w - center) <= search
        if not inside.any():
            return center
        sub = np.where(inside)[0]
        return float(w[sub[int(np.argmax(self.intensities[sub]))]])

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["omega_Ha", "omega_eV", "intensity"])
            for w, y in zip(self.omegas, self.intensities):
                wr.writerow([repr(float(w)), repr(float(w) * HARTREE_TO_EV), repr(float(y))])


def read_spectrum_csv(path: str | Path) -> SpectrumTrace:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size == 0:
        return SpectrumTrace(np.zeros(0), np.zeros(0))
    return SpectrumTrace(data[:, 0], data[:, 2])
