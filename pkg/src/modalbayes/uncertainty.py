"""Laplace-approximation posterior covariance for [xi, theta] and for the ARD
hyper-parameter block, plus the c.o.v. reporting conventions.

The joint precision matrix is assembled blockwise in the parameter order
[beta, omega^2, rho, tau | Phi, eta, nu, theta]; pruned stiffness components
are constants, not variables, and are excluded from the theta block.

Reported coefficients of variation follow the conventions of the source
tables: theta uses the conditional covariance Sigma_theta, and the scalar
precisions (beta, eta, rho and the normalized phi) use their conditional
variances, i.e. the reciprocal of the corresponding Hessian diagonal entry.
The full joint inverse is also available; its marginals for rho differ
structurally because of the rho-tau coupling.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .data import ModalDataset, gamma_t_psi, observation_mask
from .errors import NumericalError
from .model import (
    StructuralModel,
    assemble_stiffness,
    build_b,
    build_F,
    build_G,
    build_H,
    build_c,
)

HESSIAN_ASYMMETRY_RTOL = 1e-8
MAX_CONDITION = 1e14


def theta_covariance_from(beta: float, hmat: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Sigma_theta from the closed form, given the regression matrix directly.

    Both printed forms (beta A H^T H + I)^-1 A and A (beta H^T H A + I)^-1 are
    evaluated (they are transposes of one another); the symmetrized average is
    returned and rows/columns of zero-variance components are exactly zero.
    """
    alpha = np.asarray(alpha, dtype=float)
    n = alpha.size
    amat = np.diag(alpha)
    hth = hmat.T @ hmat
    b1 = beta * (amat @ hth) + np.eye(n)
    b2 = beta * (hth @ amat) + np.eye(n)
    try:
        form1 = np.linalg.solve(b1, amat)
        form2 = amat @ np.linalg.inv(b2)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"theta covariance solve failed: {exc}") from exc
    cov = 0.5 * (form1 + form2)
    zero = alpha == 0.0
    if np.any(zero):
        cov[zero, :] = 0.0
        cov[:, zero] = 0.0
    return cov


def theta_covariance(state, model: StructuralModel) -> np.ndarray:
    """n x n conditional posterior covariance of theta given the other MAP values."""
    hmat = build_H(model, state.phi)
    return theta_covariance_from(state.beta, hmat, state.alpha)


def _hessian_labels(m: int, d: int, free_idx: np.ndarray) -> list:
    labels = ["beta"]
    labels += [f"omega2_{i + 1}" for i in range(m)]
    labels += [f"rho_{i + 1}" for i in range(m)]
    labels += [f"tau_{i + 1}" for i in range(m)]
    labels += [f"phi_{i + 1}_{k + 1}" for i in range(m) for k in range(d)]
    labels += ["eta", "nu"]
    labels += [f"theta_{j + 1}" for j in free_idx]
    return labels


def joint_hessian(state, dataset: ModalDataset, model: StructuralModel):
    """Full precision matrix of the objective at the MAP, with labels.

    Returns (hessian, labels) where the row/column order is
    [beta, omega2, rho, tau, Phi, eta, nu, theta_free].
    """
    d, m = model.d, state.m
    q, s = dataset.q, dataset.s
    free = state.free_mask() & (state.alpha > 0.0)
    free_idx = np.flatnonzero(free)
    nf = free_idx.size
    dm = d * m

    k = assemble_stiffness(model, state.theta)
    modes = state.phi.reshape(m, d)
    fmat = build_F(model, state.theta, state.omega2)
    gmat = build_G(model, state.phi)
    cvec = build_c(model, state.theta, state.phi)
    hmat = build_H(model, state.phi)
    bvec = build_b(model, state.omega2, state.phi)
    mask = observation_mask(dataset, d)
    gpsi = gamma_t_psi(dataset, d)
    w2_sum = dataset.omega2_segments.sum(axis=0)

    nxi = 3 * m + 1
    size = nxi + dm + 2 + nf
    hess = np.zeros((size, size))
    i_b = 0
    i_w = slice(1, 1 + m)
    i_r = slice(1 + m, 1 + 2 * m)
    i_t = slice(1 + 2 * m, 1 + 3 * m)
    i_phi = slice(nxi, nxi + dm)
    i_eta = nxi + dm
    i_nu = nxi + dm + 1
    i_th = slice(nxi + dm + 2, size)

    gtg = gmat.T @ gmat
    # (1,1) block
    hess[i_b, i_b] = (dm / 2.0 - 1.0 + state.a0) / state.beta**2
    v_bw = gtg @ state.omega2 - gmat.T @ cvec
    hess[i_b, i_w] = v_bw
    hess[i_w, i_b] = v_bw
    hess[i_w, i_w] = state.beta * gtg + np.diag(q * state.rho)
    hess[i_w, i_r] = np.diag(q * state.omega2 - w2_sum)
    hess[i_r, i_w] = np.diag(q * state.omega2 - w2_sum)
    hess[i_r, i_r] = np.diag(0.5 * q / state.rho**2)
    hess[i_r, i_t] = np.eye(m)
    hess[i_t, i_r] = np.eye(m)
    hess[i_t, i_t] = np.diag(1.0 / state.tau**2)

    # (2,2) block
    hess[i_phi, i_phi] = state.beta * fmat + state.eta * q * np.diag(mask)
    v_pe = q * mask * state.phi - gpsi
    hess[i_phi, i_eta] = v_pe
    hess[i_eta, i_phi] = v_pe
    hess[i_eta, i_eta] = 0.5 * s * q * m / state.eta**2
    hess[i_eta, i_nu] = 1.0
    hess[i_nu, i_eta] = 1.0
    hess[i_nu, i_nu] = 1.0 / state.nu**2
    if nf:
        l3 = np.zeros((dm, nf))
        for i in range(m):
            a_i = k - state.omega2[i] * model.mass
            for col, j in enumerate(free_idx):
                kj = model.ksub[j]
                l3[i * d:(i + 1) * d, col] = (a_i @ kj + kj @ a_i) @ modes[i]
        hess[i_phi, i_th] = state.beta * l3
        hess[i_th, i_phi] = (state.beta * l3).T
        hf = hmat[:, free_idx]
        hess[i_th, i_th] = state.beta * (hf.T @ hf) + np.diag(1.0 / state.alpha[free_idx])

    # (1,2) block
    v_bphi = fmat @ state.phi
    hess[i_b, i_phi] = v_bphi
    hess[i_phi, i_b] = v_bphi
    if nf:
        resid = hmat @ state.theta - bvec
        v_bth = (hmat.T @ resid)[free_idx]
        hess[i_b, i_th] = v_bth
        hess[i_th, i_b] = v_bth
    # omega^2-Phi coupling: exact symmetrized mixed partial -beta (M A_i + A_i M) Phi_i
    for i in range(m):
        a_i = k - state.omega2[i] * model.mass
        w_i = -state.beta * ((model.mass @ a_i + a_i @ model.mass) @ modes[i])
        hess[1 + i, nxi + i * d:nxi + (i + 1) * d] = w_i
        hess[nxi + i * d:nxi + (i + 1) * d, 1 + i] = w_i
    if nf:
        l2 = np.zeros((m, nf))
        for i in range(m):
            mphi = model.mass @ modes[i]
            for col, j in enumerate(free_idx):
                l2[i, col] = modes[i] @ (model.ksub[j] @ mphi)
        hess[i_w, i_th] = -state.beta * l2
        hess[i_th, i_w] = (-state.beta * l2).T

    return hess, _hessian_labels(m, d, free_idx)


def invert_hessian(hess: np.ndarray, state=None) -> np.ndarray:
    """Symmetric-indefinite inverse of an assembled Hessian with condition check.

    The raw precision matrix mixes parameter scales spanning many orders
    (e.g. eta vs its reciprocal-scale rate), so it is Jacobi-equilibrated
    before the condition estimate and factorization.
    """
    scale = np.max(np.abs(hess))
    asym = np.max(np.abs(hess - hess.T))
    if scale > 0 and asym > HESSIAN_ASYMMETRY_RTOL * scale:
        if state is not None:
            state.flag(f"hessian asymmetry {asym / scale:.2e} above tolerance; symmetrized")
    sym = 0.5 * (hess + hess.T)
    diag = np.diag(sym)
    if np.all(diag > 0):
        d = 1.0 / np.sqrt(diag)
    else:
        d = np.ones(sym.shape[0])
    scaled = sym * d[:, None] * d[None, :]
    cond = np.linalg.cond(scaled)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise NumericalError(f"hessian is numerically singular (condition estimate {cond:.3e})")
    try:
        inv_scaled = scipy.linalg.solve(scaled, np.eye(sym.shape[0]), assume_a="sym")
    except scipy.linalg.LinAlgError as exc:
        raise NumericalError(f"hessian inversion failed: {exc}") from exc
    cov = inv_scaled * d[:, None] * d[None, :]
    return 0.5 * (cov + cov.T)


def joint_covariance(state, dataset: ModalDataset, model: StructuralModel):
    """Inverse of the joint Hessian with labels: marginal variances on the diagonal."""
    hess, labels = joint_hessian(state, dataset, model)
    return invert_hessian(hess, state), labels


def cov_report(state, dataset: ModalDataset, model: StructuralModel) -> list:
    """MAP values and reported c.o.v. (percent) in the tabulated convention.

    Rows: theta_1..n (from Sigma_theta), beta, eta, phi_1..m, where
    phi_i = rho_i * sum_r what_{r,i}^4 / q is the normalized frequency
    precision.  The scalar precisions use conditional c.o.v. values
    1/(MAP * sqrt(Hessian diagonal)), which the assembled diagonal entries
    make independent of the residuals.
    """
    d, m = model.d, state.m
    q, s = dataset.q, dataset.s
    rows = []
    cov = theta_covariance(state, model)
    sigma = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    free = state.free_mask()
    for j in range(state.n):
        c = 0.0 if not free[j] or state.theta[j] == 0 else 100.0 * sigma[j] / abs(state.theta[j])
        rows.append({"parameter": f"theta_{j + 1}", "map": float(state.theta[j]), "cov_percent": c})
    h_bb = (d * m / 2.0 - 1.0 + state.a0) / state.beta**2
    rows.append({
        "parameter": "beta",
        "map": float(state.beta),
        "cov_percent": 100.0 / (state.beta * np.sqrt(h_bb)),
    })
    h_ee = 0.5 * s * q * m / state.eta**2
    rows.append({
        "parameter": "eta",
        "map": float(state.eta),
        "cov_percent": 100.0 / (state.eta * np.sqrt(h_ee)),
    })
    w4_sum = np.sum(dataset.omega2_segments**2, axis=0)
    for i in range(m):
        h_rr = 0.5 * q / state.rho[i] ** 2
        rows.append({
            "parameter": f"phi_{i + 1}",
            "map": float(state.rho[i] * w4_sum[i] / q),
            "cov_percent": 100.0 / (state.rho[i] * np.sqrt(h_rr)),
        })
    return rows


def hyper_hessian(state, theta_anchor, model: StructuralModel | None = None,
                  theta_cov_diag=None) -> tuple[np.ndarray, list]:
    """Precision matrix of the ARD hyper-parameter block [alpha_free, lambda, zeta].

    Pruned components are excluded; with everything pruned only the 2x2
    (lambda, zeta) block remains.
    """
    anchor = np.asarray(theta_anchor, dtype=float)
    free = state.free_mask() & (state.alpha > 0.0)
    free_idx = np.flatnonzero(free)
    if theta_cov_diag is None:
        if model is None:
            raise NumericalError("hyper_hessian needs either theta_cov_diag or the model")
        theta_cov_diag = np.diag(theta_covariance(state, model))
    bdiag = np.asarray(theta_cov_diag, dtype=float) + (anchor - state.theta) ** 2
    nf = free_idx.size
    out = np.zeros((nf + 2, nf + 2))
    if nf:
        a = state.alpha[free_idx]
        out[:nf, :nf] = np.diag(2.0 * bdiag[free_idx] / a**3 - 1.0 / a**2)
        out[:nf, nf] = 1.0
        out[nf, :nf] = 1.0
    out[nf, nf] = state.n / state.lam**2
    out[nf, nf + 1] = 1.0
    out[nf + 1, nf] = 1.0
    out[nf + 1, nf + 1] = 1.0 / state.zeta**2
    labels = [f"alpha_{j + 1}" for j in free_idx] + ["lambda", "zeta"]
    return out, labels


def hyper_covariance(state, theta_anchor, model: StructuralModel | None = None,
                     theta_cov_diag=None):
    hess, labels = hyper_hessian(state, theta_anchor, model=model, theta_cov_diag=theta_cov_diag)
    return invert_hessian(hess, state), labels
