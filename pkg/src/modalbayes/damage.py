"""Damage assessment: stiffness ratios, damage-probability curves and alarms
from a calibration/monitoring result pair.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .errors import ConfigurationError
from .inference import InferenceResult

VARIANCE_PAIRINGS = ("as_printed", "conventional")

# f from 0 to 0.25 in steps of 0.0025 covers the loss range of interest.
DEFAULT_F_MAX = 0.25
DEFAULT_F_STEP = 0.0025


def default_f_grid(f_max: float = DEFAULT_F_MAX, f_step: float = DEFAULT_F_STEP) -> np.ndarray:
    count = int(round(f_max / f_step))
    return np.linspace(0.0, f_max, count + 1)


def _check_pair(calib: InferenceResult, monitor: InferenceResult) -> None:
    if calib.theta_map.size != monitor.theta_map.size:
        raise ConfigurationError(
            f"substructure count mismatch: calibration has {calib.theta_map.size}, "
            f"monitoring has {monitor.theta_map.size}"
        )


def stiffness_ratios(calib: InferenceResult, monitor: InferenceResult) -> np.ndarray:
    """Monitoring-to-calibration MAP ratios; pruned components are exactly 1."""
    _check_pair(calib, monitor)
    theta_u = calib.theta_map
    if np.any(theta_u == 0.0):
        raise ConfigurationError("calibration MAP has zero components; ratios undefined")
    ratios = monitor.theta_map / theta_u
    for j in monitor.fixed_set:
        ratios[j] = 1.0
    return ratios


def damage_probability(calib: InferenceResult, monitor: InferenceResult, f_grid=None,
                       variance_pairing: str = "as_printed") -> np.ndarray:
    """P(stiffness loss of substructure j exceeds fraction f) on the grid.

    Gaussian asymptotic approximation with MAP values and the marginal
    standard deviations of each run's Sigma_theta.  ``variance_pairing``
    selects which variance carries the (1-f)^2 factor: "as_printed" puts it
    on the monitoring variance, "conventional" on the calibration variance.
    Returns an (n, len(f_grid)) array.
    """
    if variance_pairing not in VARIANCE_PAIRINGS:
        raise ConfigurationError(f"unknown variance_pairing {variance_pairing!r}")
    _check_pair(calib, monitor)
    f_grid = default_f_grid() if f_grid is None else np.asarray(f_grid, dtype=float)
    if np.any(f_grid < 0.0) or np.any(f_grid > 1.0):
        raise ConfigurationError("f grid values must lie in [0, 1]")
    theta_u = calib.theta_map
    theta_d = monitor.theta_map
    sig_u = np.sqrt(np.clip(np.diag(calib.theta_cov), 0.0, None))
    sig_d = np.sqrt(np.clip(np.diag(monitor.theta_cov), 0.0, None))

    one_minus_f = 1.0 - f_grid[None, :]
    num = one_minus_f * theta_u[:, None] - theta_d[:, None]
    if variance_pairing == "as_printed":
        var = one_minus_f**2 * sig_d[:, None] ** 2 + sig_u[:, None] ** 2
    else:
        var = one_minus_f**2 * sig_u[:, None] ** 2 + sig_d[:, None] ** 2
    denom = np.sqrt(var)
    prob = np.empty_like(num)
    regular = denom > 0.0
    prob[regular] = ndtr(num[regular] / denom[regular])
    # degenerate: both uncertainties zero -> step function, 0.5 by continuity at 0
    prob[~regular & (num > 0)] = 1.0
    prob[~regular & (num < 0)] = 0.0
    prob[~regular & (num == 0)] = 0.5
    return prob


@dataclass(frozen=True)
class DamageReport:
    """Per-substructure ratios, monitoring c.o.v., probability curves and alarms."""

    map_ratios: np.ndarray  # (n,)
    cov_percent: np.ndarray  # (n,) monitoring-stage c.o.v. in percent
    f_grid: np.ndarray  # (nf,)
    prob_curves: np.ndarray  # (n, nf)
    alarms: np.ndarray  # (n,) bool, ratio < 1
    variance_pairing: str = "as_printed"

    @property
    def n(self) -> int:
        return self.map_ratios.size

    def alarmed_substructures(self) -> list:
        return [int(j) for j in np.flatnonzero(self.alarms)]


def build_report(calib: InferenceResult, monitor: InferenceResult, f_grid=None,
                 variance_pairing: str = "as_printed") -> DamageReport:
    """Assemble ratios, c.o.v., curves and alarm flags; curves are checked monotone."""
    ratios = stiffness_ratios(calib, monitor)
    f_grid = default_f_grid() if f_grid is None else np.asarray(f_grid, dtype=float)
    curves = damage_probability(calib, monitor, f_grid, variance_pairing=variance_pairing)
    if np.any(np.diff(curves, axis=1) > 1e-12):
        raise ConfigurationError("damage-probability curve is not non-increasing in f")
    return DamageReport(
        map_ratios=ratios,
        cov_percent=100.0 * monitor.cov_theta,
        f_grid=f_grid,
        prob_curves=curves,
        alarms=ratios < 1.0,
        variance_pairing=variance_pairing,
    )


# -- serialization ---------------------------------------------------------


def write_ratios_csv(report: DamageReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["substructure_id", "map_ratio", "cov_percent", "alarm"])
        for j in range(report.n):
            writer.writerow([
                j + 1,
                repr(float(report.map_ratios[j])),
                repr(float(report.cov_percent[j])),
                int(report.alarms[j]),
            ])


def write_probability_csv(report: DamageReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["substructure_id", "map_ratio", "cov_percent", "f", "prob"])
        for j in range(report.n):
            for k, f in enumerate(report.f_grid):
                writer.writerow([
                    j + 1,
                    repr(float(report.map_ratios[j])),
                    repr(float(report.cov_percent[j])),
                    repr(float(f)),
                    repr(float(report.prob_curves[j, k])),
                ])


def report_to_dict(report: DamageReport) -> dict:
    return {
        "variance_pairing": report.variance_pairing,
        "map_ratios": report.map_ratios.tolist(),
        "cov_percent": report.cov_percent.tolist(),
        "f_grid": report.f_grid.tolist(),
        "prob_curves": report.prob_curves.tolist(),
        "alarms": [bool(a) for a in report.alarms],
        "alarmed_substructures": [j + 1 for j in report.alarmed_substructures()],
    }


def report_from_dict(payload: dict) -> DamageReport:
    return DamageReport(
        map_ratios=np.asarray(payload["map_ratios"], dtype=float),
        cov_percent=np.asarray(payload["cov_percent"], dtype=float),
        f_grid=np.asarray(payload["f_grid"], dtype=float),
        prob_curves=np.asarray(payload["prob_curves"], dtype=float),
        alarms=np.asarray(payload["alarms"], dtype=bool),
        variance_pairing=payload.get("variance_pairing", "as_printed"),
    )


def save_report(report: DamageReport, path) -> None:
    Path(path).write_text(json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n")


def load_report(path) -> DamageReport:
    return report_from_dict(json.loads(Path(path).read_text()))
