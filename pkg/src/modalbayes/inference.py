"""Iterative MAP coordinate descent over system modal parameters, stiffness
scaling parameters and all hyper-parameters.

Two run modes share one sweep structure:

* calibration -- the ARD variances are pinned at a large value, so the anchor
  term is inert and the data alone determines the stiffness parameters;
  convergence is on the max change in theta.
* monitoring -- the ARD variances, their rate and its rate are optimized each
  sweep from the pseudo-evidence of the calibration anchor; components whose
  variance collapses below ``alpha_min`` are pinned to the anchor permanently;
  convergence is on the max change of log(alpha) over free components.

Update order within a sweep is fixed: (mode shapes, eta), (frequencies, rho),
theta, beta, then the ARD block in monitoring mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import uncertainty
from .data import ModalDataset, gamma_t_psi, observation_mask, shape_residual_sq
from .errors import ConfigurationError, NumericalError
from .model import (
    StructuralModel,
    assemble_stiffness,
    build_b,
    build_F,
    build_G,
    build_H,
    build_c,
)

CALIBRATION = "calibration"
MONITORING = "monitoring"
VARIANCE_EXP = "variance_exp"
PRECISION_EXP = "precision_exp"

# Below this rate the closed-form ARD update switches to its analytic limit.
LAMBDA_SERIES_THRESHOLD = 1e-12


@dataclass(frozen=True)
class AlgorithmConfig:
    """Settings of one inference run.

    ``b0`` defaults to 1.0 in calibration and 0.1 in monitoring when left
    None.  ``fix_hypers`` may pin ``beta``, ``eta``, ``rho`` (scalar or
    per-mode) or ``phi`` (normalized frequency precision, converted to rho
    per mode) to emulate the non-hierarchical comparison method.
    ``lambda_fixed`` pins the ARD rate (0.0 gives classic sparse Bayesian
    learning with a flat hyper-prior over the variances).  ``init_scale``
    multiplies the closed-form initial values of ``beta``/``eta``/``phi`` for
    robustness sweeps over starting points.
    """

    mode: str = CALIBRATION
    hyper_variant: str = VARIANCE_EXP
    kappa: float = 0.0
    alpha_min: float = 1e-9
    tol_theta: float = 1e-3
    tol_log_alpha: float = 5e-3
    max_iterations: int = 2000
    a0: float = 1.0
    b0: float | None = None
    alpha_init_large: float = 1e9
    eta_max: float = 1e12
    rho_max: float = 1e12
    fix_hypers: dict | None = None
    init_scale: dict | None = None
    lambda_fixed: float | None = None
    min_sweeps_before_pruning: int = 2
    compute_full_covariance: bool = True

    def __post_init__(self):
        if self.mode not in (CALIBRATION, MONITORING):
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        if self.hyper_variant not in (VARIANCE_EXP, PRECISION_EXP):
            raise ConfigurationError(f"unknown hyper_variant {self.hyper_variant!r}")
        if self.kappa < 0:
            raise ConfigurationError("kappa must be nonnegative")
        if min(self.alpha_min, self.tol_theta, self.tol_log_alpha) <= 0:
            raise ConfigurationError("tolerances and alpha_min must be positive")
        if self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be at least 1")
        if self.b0 is not None and self.b0 <= 0:
            raise ConfigurationError("b0 must be positive")
        if self.lambda_fixed is not None and self.lambda_fixed < 0:
            raise ConfigurationError("lambda_fixed must be nonnegative")
        if self.fix_hypers:
            unknown = set(self.fix_hypers) - {"beta", "eta", "rho", "phi"}
            if unknown:
                raise ConfigurationError(f"fix_hypers has unknown keys: {sorted(unknown)}")
        if self.init_scale:
            unknown = set(self.init_scale) - {"beta", "eta", "phi"}
            if unknown:
                raise ConfigurationError(f"init_scale has unknown keys: {sorted(unknown)}")

    @property
    def resolved_b0(self) -> float:
        if self.b0 is not None:
            return self.b0
        return 1.0 if self.mode == CALIBRATION else 0.1

    def fixed(self, name: str) -> bool:
        return bool(self.fix_hypers) and name in self.fix_hypers


@dataclass
class InferenceState:
    """All uncertain parameters of one run (mutable, owned by the run)."""

    theta: np.ndarray
    omega2: np.ndarray
    phi: np.ndarray
    beta: float
    eta: float
    nu: float
    rho: np.ndarray
    tau: np.ndarray
    alpha: np.ndarray
    lam: float
    zeta: float
    a0: float
    b0: float
    fixed_set: set = field(default_factory=set)
    diagnostics: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.theta.size

    @property
    def m(self) -> int:
        return self.omega2.size

    def free_mask(self) -> np.ndarray:
        mask = np.ones(self.n, dtype=bool)
        if self.fixed_set:
            mask[sorted(self.fixed_set)] = False
        return mask

    def flag(self, message: str) -> None:
        if message not in self.diagnostics:
            self.diagnostics.append(message)


@dataclass
class InferenceResult:
    """MAP state, posterior covariances and run history."""

    mode: str
    state_map: InferenceState
    theta_anchor: np.ndarray
    theta_cov: np.ndarray
    cov_theta: np.ndarray
    full_cov: np.ndarray | None
    full_cov_labels: list | None
    objective_trace: np.ndarray
    theta_trace: np.ndarray
    alpha_trace: np.ndarray | None
    pruning_events: list
    iterations: int
    converged: bool

    @property
    def theta_map(self) -> np.ndarray:
        return self.state_map.theta

    @property
    def fixed_set(self) -> set:
        return self.state_map.fixed_set


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------


def initialize(
    dataset: ModalDataset,
    model: StructuralModel,
    theta_init,
    config: AlgorithmConfig,
) -> InferenceState:
    """Closed-form hyper-parameter initialization plus data-driven starts.

    beta, eta and rho start at their prior-only/data-moment values; the system
    frequencies start at the segment means, the system mode shapes at the
    segment-mean shapes lifted into the observed DOFs (zeros elsewhere).
    """
    dataset.validate_against(model.d)
    d, n = model.d, model.n
    q, m, s = dataset.q, dataset.m, dataset.s
    theta = np.array(theta_init, dtype=float)
    if theta.shape != (n,):
        raise ConfigurationError(f"theta_init must have shape ({n},), got {theta.shape}")

    a0 = config.a0
    b0 = config.resolved_b0
    if d * m + 2.0 * (a0 - 1.0) <= 0:
        raise ConfigurationError("beta prior shape too small: d*m + 2(a0-1) must be positive")
    beta = (d * m + 2.0 * (a0 - 1.0)) / (2.0 * b0)

    psi_sq = float(dataset.psi_hat @ dataset.psi_hat)
    if psi_sq == 0:
        raise ConfigurationError("mode-shape data is identically zero")
    eta = (s * q * m - 2.0) / psi_sq

    w2 = dataset.omega2_segments
    w4_sum = np.sum(w2 * w2, axis=0)
    rho = (q - 2.0) / w4_sum

    scale = config.init_scale or {}
    beta *= scale.get("beta", 1.0)
    eta *= scale.get("eta", 1.0)
    rho = rho * scale.get("phi", 1.0)

    fix = config.fix_hypers or {}
    if "beta" in fix:
        beta = float(fix["beta"])
    if "eta" in fix:
        eta = float(fix["eta"])
    if "phi" in fix and "rho" in fix:
        raise ConfigurationError("fix_hypers cannot set both rho and phi")
    if "rho" in fix:
        rho = np.broadcast_to(np.asarray(fix["rho"], dtype=float), (m,)).copy()
    elif "phi" in fix:
        rho = float(fix["phi"]) * q / w4_sum
    if beta <= 0 or eta <= 0 or np.any(rho <= 0):
        raise ConfigurationError("initial precisions must be positive")

    phi0 = np.zeros(d * m)
    mean_shapes = dataset.psi_segments.mean(axis=0)  # (m, s)
    for i in range(m):
        phi0[i * d + dataset.observed_dofs] = mean_shapes[i]

    if config.mode == CALIBRATION:
        alpha = np.full(n, config.alpha_init_large)
    else:
        alpha = np.full(n, float(n) ** 2)
    lam = 1.0 if config.lambda_fixed is None else float(config.lambda_fixed)

    return InferenceState(
        theta=theta,
        omega2=w2.mean(axis=0),
        phi=phi0,
        beta=float(beta),
        eta=float(eta),
        nu=1.0 / float(eta),
        rho=np.asarray(rho, dtype=float),
        tau=1.0 / np.asarray(rho, dtype=float),
        alpha=alpha,
        lam=lam,
        zeta=1.0,
        a0=float(a0),
        b0=float(b0),
    )


# ---------------------------------------------------------------------------
# coordinate updates (each is the exact minimizer of the objective in its
# block with every other parameter held fixed)
# ---------------------------------------------------------------------------


def update_mode_shapes(state: InferenceState, dataset: ModalDataset, model: StructuralModel) -> np.ndarray:
    """Solve (beta F + eta Gamma^T Gamma) Phi = eta Gamma^T Psi_hat."""
    d = model.d
    mask = observation_mask(dataset, d)
    if state.beta == 0.0 and np.any(mask == 0.0):
        dof = int(np.argmin(mask)) % d
        raise NumericalError(
            f"mode-shape system is singular: DOF {dof} is unobserved and beta is zero"
        )
    lhs = build_F(model, state.theta, state.omega2) * state.beta
    lhs[np.diag_indices_from(lhs)] += state.eta * dataset.q * mask
    rhs = state.eta * gamma_t_psi(dataset, d)
    try:
        return np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"mode-shape update failed: {exc}") from exc


def update_eta(state: InferenceState, dataset: ModalDataset, model: StructuralModel,
               eta_max: float = 1e12) -> tuple[float, float]:
    """eta = (sqm - 2) / ||Psi_hat - Gamma Phi||^2 and nu = 1/eta."""
    sqm = dataset.s * dataset.q * dataset.m
    res_sq = shape_residual_sq(dataset, model.d, state.phi)
    if res_sq <= (sqm - 2.0) / eta_max:
        state.flag("noise-free mode-shape data: eta clamped at maximum")
        eta = eta_max
    else:
        eta = (sqm - 2.0) / res_sq
    return eta, 1.0 / eta


def update_frequencies(state: InferenceState, dataset: ModalDataset, model: StructuralModel) -> np.ndarray:
    """Solve the m x m system (beta G^T G + T^T E^-1 T) w2 = beta G^T c + T^T E^-1 what2."""
    if np.any(state.rho <= 0):
        raise ConfigurationError("frequency precisions must be positive")
    g = build_G(model, state.phi)
    c = build_c(model, state.theta, state.phi)
    lhs = state.beta * (g.T @ g)
    lhs[np.diag_indices_from(lhs)] += dataset.q * state.rho
    rhs = state.beta * (g.T @ c) + state.rho * dataset.omega2_segments.sum(axis=0)
    try:
        return np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"frequency update failed: {exc}") from exc


def update_rho(state: InferenceState, dataset: ModalDataset,
               rho_max: float = 1e12) -> tuple[np.ndarray, np.ndarray]:
    """rho_i = (q - 2) / sum_r (what_{r,i}^2 - w_i^2)^2 and tau = 1/rho."""
    q = dataset.q
    if q < 3:
        raise ConfigurationError("insufficient segments: rho update requires q >= 3")
    dev = dataset.omega2_segments - state.omega2[None, :]
    dev_sq = np.sum(dev * dev, axis=0)
    floor = (q - 2.0) / rho_max
    clamped = dev_sq <= floor
    if np.any(clamped):
        state.flag("noise-free frequency data: rho clamped at maximum")
    rho = np.where(clamped, rho_max, (q - 2.0) / np.where(clamped, 1.0, dev_sq))
    return rho, 1.0 / rho


def update_theta(state: InferenceState, dataset: ModalDataset, model: StructuralModel,
                 theta_anchor) -> np.ndarray:
    """MAP stiffness scaling parameters from the current linear regression.

    Components in the fixed set (or whose ARD variance is exactly zero) stay
    pinned at the anchor; the remaining block solves
    (beta Hf^T Hf + Af^-1) theta_f = beta Hf^T (b - Hp anchor_p) + Af^-1 anchor_f.
    """
    anchor = np.asarray(theta_anchor, dtype=float)
    hmat = build_H(model, state.phi)
    bvec = build_b(model, state.omega2, state.phi)
    free = state.free_mask() & (state.alpha > 0.0)
    theta_new = anchor.copy()
    if not np.any(free):
        return theta_new
    hf = hmat[:, free]
    alpha_f = state.alpha[free]
    resid_rhs = bvec - hmat[:, ~free] @ anchor[~free]
    lhs = state.beta * (hf.T @ hf)
    lhs[np.diag_indices_from(lhs)] += 1.0 / alpha_f
    rhs = state.beta * (hf.T @ resid_rhs) + anchor[free] / alpha_f
    try:
        theta_new[free] = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"theta update failed: {exc}") from exc
    return theta_new


def update_beta(state: InferenceState, model: StructuralModel) -> float:
    """beta = (dm + 2(a0 - 1)) / (2 b0 + sum_i ||(K - w_i^2 M) Phi_i||^2)."""
    d = model.d
    m = state.m
    numerator = d * m + 2.0 * (state.a0 - 1.0)
    if numerator <= 0:
        raise ConfigurationError("beta update undefined: d*m + 2(a0-1) must be positive")
    k = assemble_stiffness(model, state.theta)
    modes = state.phi.reshape(m, d)
    res = modes @ k.T - state.omega2[:, None] * (modes @ model.mass.T)
    return numerator / (2.0 * state.b0 + float(np.sum(res * res)))


def update_alpha(state: InferenceState, theta_anchor, theta_cov_diag, lam: float | None = None) -> np.ndarray:
    """Evidence-maximizing ARD variances (exponential hyper-prior on variances).

    Uses the closed form (-1 + sqrt(1 + 8 lam B_j)) / (4 lam) with
    B_j = (Sigma_theta)_jj + (anchor_j - theta_j)^2, switching to the analytic
    series limit alpha_j = B_j when lam is below 1e-12.  Pruned components
    keep alpha = 0.
    """
    lam = state.lam if lam is None else lam
    if lam < 0:
        raise ConfigurationError("lambda must be nonnegative")
    anchor = np.asarray(theta_anchor, dtype=float)
    bj = np.asarray(theta_cov_diag, dtype=float) + (anchor - state.theta) ** 2
    if lam < LAMBDA_SERIES_THRESHOLD:
        alpha = bj.copy()
    else:
        alpha = (-1.0 + np.sqrt(1.0 + 8.0 * lam * bj)) / (4.0 * lam)
    free = state.free_mask()
    out = np.zeros(state.n)
    out[free] = alpha[free]
    return out


def update_alpha_precision_variant(state: InferenceState, theta_anchor, theta_cov_diag,
                                   kappa: float) -> np.ndarray:
    """ARD variances under the exponential hyper-prior on precisions: B_j + kappa."""
    if kappa < 0:
        raise ConfigurationError("kappa must be nonnegative")
    anchor = np.asarray(theta_anchor, dtype=float)
    bj = np.asarray(theta_cov_diag, dtype=float) + (anchor - state.theta) ** 2
    free = state.free_mask()
    out = np.zeros(state.n)
    out[free] = bj[free] + kappa
    return out


def update_lambda_zeta(state: InferenceState) -> tuple[float, float]:
    """One sweep of lam = n / (sum alpha + zeta) followed by zeta = 1/lam.

    zeta is kept (not eliminated) so the update stays finite when every alpha
    is temporarily zero.
    """
    lam = state.n / (float(np.sum(state.alpha)) + state.zeta)
    return lam, 1.0 / lam


# ---------------------------------------------------------------------------
# objective (negative log posterior up to additive constants)
# ---------------------------------------------------------------------------


def objective(state: InferenceState, dataset: ModalDataset, model: StructuralModel,
              theta_anchor) -> float:
    """The minimized function J over [xi, theta], all log terms included.

    Pinned components contribute zero to the anchor term by construction;
    a free component with alpha exactly zero contributes zero only if its
    theta equals the anchor, and +inf otherwise.
    """
    if state.beta <= 0 or state.eta <= 0 or state.nu <= 0:
        raise ConfigurationError("objective undefined: nonpositive precision")
    if np.any(state.rho <= 0) or np.any(state.tau <= 0):
        raise ConfigurationError("objective undefined: nonpositive precision")
    d = model.d
    q, m, s = dataset.q, dataset.m, dataset.s
    anchor = np.asarray(theta_anchor, dtype=float)

    j = (1.0 - state.a0) * math.log(state.beta) + state.b0 * state.beta
    dev = dataset.omega2_segments - state.omega2[None, :]
    j += -0.5 * q * float(np.sum(np.log(state.rho)))
    j += 0.5 * float(np.sum(state.rho * np.sum(dev * dev, axis=0)))
    j += -float(np.sum(np.log(state.tau) - state.tau * state.rho))
    j += -0.5 * s * q * m * math.log(state.eta)
    j += 0.5 * state.eta * shape_residual_sq(dataset, d, state.phi)
    j += -math.log(state.nu) + state.nu * state.eta

    diff = anchor - state.theta
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(state.alpha > 0, diff * diff / np.where(state.alpha > 0, state.alpha, 1.0), 0.0)
    zero_alpha = state.alpha == 0
    if np.any(zero_alpha & (diff != 0.0)):
        return math.inf
    j += 0.5 * float(np.sum(terms))

    k = assemble_stiffness(model, state.theta)
    modes = state.phi.reshape(m, d)
    res = modes @ k.T - state.omega2[:, None] * (modes @ model.mass.T)
    j += -0.5 * d * m * math.log(state.beta) + 0.5 * state.beta * float(np.sum(res * res))
    return j


# ---------------------------------------------------------------------------
# run drivers
# ---------------------------------------------------------------------------


def _log_alpha_step(alpha_new: np.ndarray, alpha_old: np.ndarray, free: np.ndarray) -> float:
    if not np.any(free):
        return 0.0
    new = alpha_new[free]
    old = alpha_old[free]
    both_zero = (new == 0) & (old == 0)
    if np.any((new == 0) != (old == 0)):
        return math.inf
    ratio = np.ones_like(new)
    ok = ~both_zero
    ratio[ok] = new[ok] / old[ok]
    return float(np.max(np.abs(np.log(ratio))))


def _run(dataset: ModalDataset, model: StructuralModel, theta_init, anchor,
         config: AlgorithmConfig) -> InferenceResult:
    anchor = np.asarray(anchor, dtype=float)
    state = initialize(dataset, model, theta_init, config)
    monitoring = config.mode == MONITORING

    theta_trace = [state.theta.copy()]
    objective_trace = [objective(state, dataset, model, anchor)]
    alpha_trace = [state.alpha.copy()] if monitoring else None
    pruning_events: list[tuple[int, int]] = []

    converged = False
    sweeps = 0
    for sweep in range(1, config.max_iterations + 1):
        sweeps = sweep
        state.phi = update_mode_shapes(state, dataset, model)
        if not config.fixed("eta"):
            state.eta, state.nu = update_eta(state, dataset, model, eta_max=config.eta_max)
        state.omega2 = update_frequencies(state, dataset, model)
        if not (config.fixed("rho") or config.fixed("phi")):
            state.rho, state.tau = update_rho(state, dataset, rho_max=config.rho_max)
        theta_prev = state.theta
        state.theta = update_theta(state, dataset, model, anchor)
        if not config.fixed("beta"):
            state.beta = update_beta(state, model)

        if monitoring:
            alpha_prev = state.alpha
            hmat = build_H(model, state.phi)
            cov_diag = np.diag(uncertainty.theta_covariance_from(state.beta, hmat, state.alpha))
            if config.hyper_variant == PRECISION_EXP:
                state.alpha = update_alpha_precision_variant(state, anchor, cov_diag, config.kappa)
            else:
                state.alpha = update_alpha(state, anchor, cov_diag)
                if config.lambda_fixed is None:
                    state.lam, state.zeta = update_lambda_zeta(state)
            if sweep >= config.min_sweeps_before_pruning:
                free = state.free_mask()
                newly = np.flatnonzero(free & (state.alpha < config.alpha_min))
                for j in newly:
                    state.fixed_set.add(int(j))
                    state.alpha[j] = 0.0
                    state.theta[j] = anchor[j]
                    pruning_events.append((sweep, int(j)))
            alpha_trace.append(state.alpha.copy())

        theta_trace.append(state.theta.copy())
        objective_trace.append(objective(state, dataset, model, anchor))

        if monitoring:
            free = state.free_mask()
            if not np.any(free):
                converged = True  # everything pruned: report zero stiffness change
            elif sweep >= 2:
                step = _log_alpha_step(alpha_trace[-1], alpha_trace[-2], free)
                converged = step < config.tol_log_alpha
        else:
            converged = float(np.max(np.abs(state.theta - theta_prev))) < config.tol_theta
        if converged:
            break

    theta_cov = uncertainty.theta_covariance(state, model)
    sigma = np.sqrt(np.clip(np.diag(theta_cov), 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        cov_theta = np.where(state.theta != 0, sigma / np.abs(state.theta), 0.0)
    free = state.free_mask()
    cov_theta[~free] = 0.0

    full_cov = None
    labels = None
    if config.compute_full_covariance:
        try:
            hess, labels = uncertainty.joint_hessian(state, dataset, model)
            full_cov = uncertainty.invert_hessian(hess, state)
        except NumericalError as exc:
            state.flag(f"joint covariance unavailable: {exc}")
            full_cov = None
            labels = None

    return InferenceResult(
        mode=config.mode,
        state_map=state,
        theta_anchor=anchor,
        theta_cov=theta_cov,
        cov_theta=cov_theta,
        full_cov=full_cov,
        full_cov_labels=labels,
        objective_trace=np.asarray(objective_trace),
        theta_trace=np.asarray(theta_trace),
        alpha_trace=None if alpha_trace is None else np.asarray(alpha_trace),
        pruning_events=pruning_events,
        iterations=sweeps,
        converged=converged,
    )


def run_calibration(dataset: ModalDataset, model: StructuralModel, theta_init,
                    config: AlgorithmConfig | None = None) -> InferenceResult:
    """Algorithm 1: calibrate stiffness scaling parameters on undamaged data."""
    config = config or AlgorithmConfig(mode=CALIBRATION)
    if config.mode != CALIBRATION:
        raise ConfigurationError("run_calibration requires config.mode == 'calibration'")
    return _run(dataset, model, theta_init, anchor=theta_init, config=config)


def run_monitoring(dataset: ModalDataset, model: StructuralModel, theta_u_hat,
                   config: AlgorithmConfig | None = None) -> InferenceResult:
    """Algorithm 2: sparse stiffness-change inference anchored at the calibration MAP."""
    config = config or AlgorithmConfig(mode=MONITORING)
    if config.mode != MONITORING:
        raise ConfigurationError("run_monitoring requires config.mode == 'monitoring'")
    return _run(dataset, model, theta_u_hat, anchor=theta_u_hat, config=config)
