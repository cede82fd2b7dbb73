"""File schemas and run manifests for the CLI pipeline.

All structured inputs/outputs are JSON, tabular numeric outputs CSV; floats
are serialized at full round-trip precision so pipelines are lossless. Run
manifests honor SOURCE_DATE_EPOCH for reproducible timestamps.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .bench import ShearBuildingSpec, shear_building_model
from .errors import ConfigurationError
from .inference import InferenceResult, InferenceState
from .model import StructuralModel


# -- model files -------------------------------------------------------------


def _matrix(payload, name: str, d: int) -> np.ndarray:
    a = np.asarray(payload, dtype=float)
    if a.ndim == 1:
        if a.size != d * d:
            raise ConfigurationError(f"{name} must have {d * d} entries, got {a.size}")
        a = a.reshape(d, d)
    if a.shape != (d, d):
        raise ConfigurationError(f"{name} must be {d}x{d}, got {a.shape}")
    return a


def model_from_dict(payload: dict) -> StructuralModel:
    """Parse a model definition, expanding the shear-building shorthand."""
    if "shear_building" in payload:
        short = dict(payload["shear_building"])
        unit_scale = float(short.pop("unit_scale", 1.0))
        try:
            spec = ShearBuildingSpec(**short)
        except TypeError as exc:
            raise ConfigurationError(f"bad shear_building shorthand: {exc}") from exc
        return shear_building_model(spec, unit_scale=unit_scale)
    try:
        d = int(payload["d"])
        n = int(payload["n"])
        mass = _matrix(payload["M"], "M", d)
        k0 = _matrix(payload["K0"], "K0", d)
        ksub_raw = payload["Ksub"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"malformed model payload: {exc}") from exc
    if len(ksub_raw) != n:
        raise ConfigurationError(f"model declares n={n} but has {len(ksub_raw)} substructures")
    ksub = np.stack([_matrix(kj, f"Ksub[{j}]", d) for j, kj in enumerate(ksub_raw)])
    return StructuralModel(mass=mass, k0=k0, ksub=ksub)


def model_to_dict(model: StructuralModel) -> dict:
    return {
        "d": model.d,
        "n": model.n,
        "M": model.mass.tolist(),
        "K0": model.k0.tolist(),
        "Ksub": [kj.tolist() for kj in model.ksub],
    }


def load_model(path) -> StructuralModel:
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigurationError(f"model file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"model file {path} is not valid JSON: {exc}") from exc
    return model_from_dict(payload)


def save_model(model_or_payload, path) -> None:
    payload = model_or_payload
    if isinstance(model_or_payload, StructuralModel):
        payload = model_to_dict(model_or_payload)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# -- inference results -------------------------------------------------------


def result_to_dict(result: InferenceResult) -> dict:
    state = result.state_map
    return {
        "mode": result.mode,
        "theta_map": state.theta.tolist(),
        "theta_anchor": result.theta_anchor.tolist(),
        "omega2": state.omega2.tolist(),
        "frequencies_hz": (np.sqrt(state.omega2) / (2.0 * np.pi)).tolist(),
        "phi": state.phi.tolist(),
        "beta": state.beta,
        "eta": state.eta,
        "nu": state.nu,
        "rho": state.rho.tolist(),
        "tau": state.tau.tolist(),
        "alpha": state.alpha.tolist(),
        "lambda": state.lam,
        "zeta": state.zeta,
        "a0": state.a0,
        "b0": state.b0,
        "fixed_set": sorted(int(j) for j in state.fixed_set),
        "diagnostics": list(state.diagnostics),
        "theta_cov": result.theta_cov.tolist(),
        "cov_theta": result.cov_theta.tolist(),
        "pruning_events": [[int(sweep), int(j)] for sweep, j in result.pruning_events],
        "iterations": result.iterations,
        "converged": bool(result.converged),
    }


def result_from_dict(payload: dict) -> InferenceResult:
    try:
        state = InferenceState(
            theta=np.asarray(payload["theta_map"], dtype=float),
            omega2=np.asarray(payload["omega2"], dtype=float),
            phi=np.asarray(payload["phi"], dtype=float),
            beta=float(payload["beta"]),
            eta=float(payload["eta"]),
            nu=float(payload["nu"]),
            rho=np.asarray(payload["rho"], dtype=float),
            tau=np.asarray(payload["tau"], dtype=float),
            alpha=np.asarray(payload["alpha"], dtype=float),
            lam=float(payload["lambda"]),
            zeta=float(payload["zeta"]),
            a0=float(payload["a0"]),
            b0=float(payload["b0"]),
            fixed_set=set(int(j) for j in payload["fixed_set"]),
            diagnostics=list(payload.get("diagnostics", [])),
        )
        return InferenceResult(
            mode=payload["mode"],
            state_map=state,
            theta_anchor=np.asarray(payload["theta_anchor"], dtype=float),
            theta_cov=np.asarray(payload["theta_cov"], dtype=float),
            cov_theta=np.asarray(payload["cov_theta"], dtype=float),
            full_cov=None,
            full_cov_labels=None,
            objective_trace=np.empty(0),
            theta_trace=np.empty((0, state.n)),
            alpha_trace=None,
            pruning_events=[(int(s), int(j)) for s, j in payload.get("pruning_events", [])],
            iterations=int(payload["iterations"]),
            converged=bool(payload["converged"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"malformed inference result payload: {exc}") from exc


def save_result(result: InferenceResult, path) -> None:
    Path(path).write_text(json.dumps(result_to_dict(result), indent=2, sort_keys=True) + "\n")


def load_result(path) -> InferenceResult:
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigurationError(f"result file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"result file {path} is not valid JSON: {exc}") from exc
    return result_from_dict(payload)


def write_trace_csv(result: InferenceResult, path) -> None:
    n = result.theta_trace.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["sweep", "objective"] + [f"theta_{j + 1}" for j in range(n)]
        if result.alpha_trace is not None:
            header += [f"alpha_{j + 1}" for j in range(n)]
        writer.writerow(header)
        for k in range(result.theta_trace.shape[0]):
            row = [k, repr(float(result.objective_trace[k]))]
            row += [repr(float(v)) for v in result.theta_trace[k]]
            if result.alpha_trace is not None:
                row += [repr(float(v)) for v in result.alpha_trace[k]]
            writer.writerow(row)


def write_cov_table_csv(rows: list, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["parameter", "map", "cov_percent"])
        for row in rows:
            writer.writerow([row["parameter"], repr(float(row["map"])), repr(float(row["cov_percent"]))])


def write_matrix_csv(matrix: np.ndarray, labels: list, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["parameter"] + list(labels))
        for label, row in zip(labels, matrix):
            writer.writerow([label] + [repr(float(v)) for v in row])


def write_pruning_csv(result: InferenceResult, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sweep", "substructure_id"])
        for sweep, j in result.pruning_events:
            writer.writerow([sweep, j + 1])


# -- manifests ---------------------------------------------------------------


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is not None:
        return datetime.fromtimestamp(int(epoch), tz=timezone.utc).isoformat()
    return datetime.now(tz=timezone.utc).isoformat()


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def config_hash(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def write_manifest(path, command: str, settings: dict, inputs: list, outputs: list,
                   seed=None, convergence: dict | None = None) -> None:
    manifest = {
        "command": command,
        "config_hash": config_hash(settings),
        "settings": settings,
        "inputs": {str(p): file_digest(p) for p in inputs},
        "outputs": {str(Path(p).name): file_digest(p) for p in outputs},
        "seed": seed,
        "tool_version": __version__,
        "timestamps": {"completed_utc": _timestamp()},
        "convergence": convergence,
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
