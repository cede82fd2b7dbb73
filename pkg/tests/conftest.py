"""Shared fixtures and independent numerical oracles for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from modalbayes.bench import NoiseSpec, simulate_modal_data
from modalbayes.data import ModalDataset
from modalbayes.inference import AlgorithmConfig, InferenceState, objective, run_calibration
from modalbayes.model import StructuralModel


# ---------------------------------------------------------------------------
# small structural models
# ---------------------------------------------------------------------------


@pytest.fixture
def toy2_model() -> StructuralModel:
    """2-DOF, n=2 model with a non-proportional mass matrix.

    The unequal masses matter: they exercise Hessian cross terms that vanish
    when the mass matrix commutes with the stiffness residual operator.
    """
    mass = np.diag([1.0, 1.5])
    k1 = 1.3 * np.array([[2.0, -1.0], [-1.0, 1.0]])
    k2 = 0.7 * np.array([[1.0, 0.2], [0.2, 2.0]])
    k0 = 0.1 * np.array([[1.0, -0.3], [-0.3, 1.0]])
    return StructuralModel(mass=mass, k0=k0, ksub=np.stack([k1, k2]))


@pytest.fixture
def toy2_dataset(toy2_model) -> ModalDataset:
    """m=1, q=3, full sensors, 1% noise on the toy model at theta = ones."""
    return simulate_modal_data(
        toy2_model, [1.0, 1.0], m=1, q=3, observed_dofs=[0, 1],
        noise=NoiseSpec(freq_cov=0.01, shape_cov=0.01, seed=3),
        normalization="per_mode",
    )


@pytest.fixture
def toy2_map(toy2_model, toy2_dataset):
    """Tightly converged calibration state on the toy instance."""
    config = AlgorithmConfig(mode="calibration", tol_theta=1e-12, max_iterations=4000)
    result = run_calibration(toy2_dataset, toy2_model, np.ones(2), config)
    assert result.converged
    return result


def random_spd(rng, d, scale=1.0):
    a = rng.normal(size=(d, d))
    return scale * (a @ a.T + d * np.eye(d))


def random_symmetric(rng, d, scale=1.0):
    a = rng.normal(size=(d, d))
    return scale * (a + a.T)


# ---------------------------------------------------------------------------
# objective packing and finite-difference oracles (independent of the
# analytic gradients/Hessians they check)
# ---------------------------------------------------------------------------


def pack_state(state: InferenceState) -> np.ndarray:
    """Flatten [beta, omega2, rho, tau, phi, eta, nu, theta] for FD probing."""
    return np.concatenate([
        [state.beta], state.omega2, state.rho, state.tau, state.phi,
        [state.eta, state.nu], state.theta,
    ])


def unpack_state(x: np.ndarray, template: InferenceState) -> InferenceState:
    m = template.m
    dm = template.phi.size
    n = template.n
    return InferenceState(
        theta=x[1 + 3 * m + dm + 2:].copy(),
        omega2=x[1:1 + m].copy(),
        phi=x[1 + 3 * m:1 + 3 * m + dm].copy(),
        beta=float(x[0]),
        eta=float(x[1 + 3 * m + dm]),
        nu=float(x[1 + 3 * m + dm + 1]),
        rho=x[1 + m:1 + 2 * m].copy(),
        tau=x[1 + 2 * m:1 + 3 * m].copy(),
        alpha=template.alpha.copy(),
        lam=template.lam,
        zeta=template.zeta,
        a0=template.a0,
        b0=template.b0,
        fixed_set=set(template.fixed_set),
    )


def objective_of(dataset, model, anchor, template):
    def fun(x):
        return objective(unpack_state(x, template), dataset, model, anchor)

    return fun


def fd_gradient(fun, x, rel_step=1e-6):
    """Central-difference gradient with per-coordinate relative steps.

    Steps scale with each coordinate's own magnitude; an absolute floor would
    wreck coordinates like nu ~ 1/eta whose third derivative grows as the
    inverse cube.
    """
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for i in range(x.size):
        h = rel_step * (abs(x[i]) if x[i] != 0.0 else 1.0)
        e = np.zeros_like(x)
        e[i] = h
        grad[i] = (fun(x + e) - fun(x - e)) / (2.0 * h)
    return grad


def _fd_hessian_step(fun, x, h):
    n = x.size
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            ei = np.zeros(n)
            ei[i] = h[i]
            ej = np.zeros(n)
            ej[j] = h[j]
            val = (fun(x + ei + ej) - fun(x + ei - ej) - fun(x - ei + ej) + fun(x - ei - ej))
            out[i, j] = out[j, i] = val / (4.0 * h[i] * h[j])
    return out


def fd_hessian(fun, x, rel_step=1e-4):
    """Richardson-extrapolated central-difference Hessian."""
    x = np.asarray(x, dtype=float)
    h = rel_step * np.maximum(np.abs(x), 1e-3)
    coarse = _fd_hessian_step(fun, x, h)
    fine = _fd_hessian_step(fun, x, h / 2.0)
    return (4.0 * fine - coarse) / 3.0
