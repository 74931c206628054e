"""Unscented Kalman filters for the 9D tracking problem.

:class:`RiemannianUKF` runs on the manifold R^3 x R^3 x R^S x SO(3) with
tangent covariance of size S+9.  :class:`EuclideanUKF` is the classical
baseline that carries ``vec(R)`` as nine free coordinates (size S+15).
Both assign the observation belief either as the identity, as the
sigma-point average of inverse FIMs, or (in simulation) as the exact
observation covariance.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (DegenerateSpread, DimensionMismatch, FilterStepError, InnovationSingular,
                     LeorisError, NotPSD)
from .fim import fim_inverse, observation_fim
from .geometry import ObservationLayout, WaveConstants, assemble_observation, wrap_angle
from .manifold import (UeState, manifold_mean, nearest_rotation, orthonormality_error, skew,
                       so3_boxplus, state_boxminus, state_boxplus)

BELIEF_MODES = ("identity", "fim_approx", "oracle")
CROSS_MODES = ("measurement_sigma", "time_update_sigma")
PSD_TOL = 1e-9

DEFAULT_EPSILON = {"rural": 0.5, "suburban": 0.5, "urban_invisible": 0.5, "urban_visible": 0.0}


@dataclass
class FilterConfig:
    alpha: float = 1e-3
    beta: float = 2.0
    kappa: float = 0.0
    epsilon: dict = field(default_factory=lambda: dict(DEFAULT_EPSILON))
    accel_cov: np.ndarray = field(default_factory=lambda: 0.2 ** 2 * np.eye(3))
    gyro_cov: np.ndarray = field(default_factory=lambda: np.deg2rad(2.0) ** 2 * np.eye(3))
    dt: float = 1.0
    belief: str = "fim_approx"
    cross_covariance: str = "measurement_sigma"
    wrap_innovation: bool = True
    fim_method: str = "structured"

    def __post_init__(self):
        self.accel_cov = np.asarray(self.accel_cov, dtype=float)
        self.gyro_cov = np.asarray(self.gyro_cov, dtype=float)
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.belief not in BELIEF_MODES:
            raise ValueError(f"belief must be one of {BELIEF_MODES}")
        if self.cross_covariance not in CROSS_MODES:
            raise ValueError(f"cross_covariance must be one of {CROSS_MODES}")
        for name in ("accel_cov", "gyro_cov"):
            C = getattr(self, name)
            if C.shape != (3, 3) or not np.allclose(C, C.T) or np.linalg.eigvalsh(C).min() < -PSD_TOL:
                raise ValueError(f"{name} must be a symmetric PSD 3x3 matrix")

    def epsilon_for(self, region: str | None) -> float:
        if region is None:
            return 0.0
        return float(self.epsilon.get(region, 0.0))


@dataclass
class FilterState:
    mean: UeState
    P: np.ndarray


@dataclass(frozen=True)
class ImuMeasurement:
    accel: np.ndarray
    rotation: np.ndarray


@dataclass
class Observation:
    """One channel-parameter observation and the context needed to evaluate h and J.

    ``active`` flags the components the channel estimator actually resolved;
    ``cov`` is the covariance the observation was drawn with (used by the
    oracle belief); ``region`` selects the belief regularization.
    """

    value: np.ndarray
    active: np.ndarray
    snapshot: object
    sats: list
    riss: list
    wave: WaveConstants = field(default_factory=WaveConstants)
    cov: np.ndarray | None = None
    region: str | None = None

    @property
    def layout(self) -> ObservationLayout:
        return ObservationLayout(len(self.sats), len(self.riss))

    def predict(self, states: UeState, clip: bool = False) -> np.ndarray:
        return assemble_observation(states, self.sats, self.riss, self.wave, clip)


# ---------------------------------------------------------------- building blocks

def ukf_weights(n_p: int, alpha: float = 1e-3, beta: float = 2.0, kappa: float = 0.0):
    """Scaled unscented weights ``(w_m, w_c, lam)`` for ``2 n_p + 1`` points."""
    if alpha == 0:
        raise DegenerateSpread("alpha must be nonzero")
    lam = alpha ** 2 * (n_p + kappa) - n_p
    if n_p + lam == 0:
        raise DegenerateSpread("n_p + lambda vanishes")
    wm = np.full(2 * n_p + 1, 1.0 / (2.0 * (n_p + lam)))
    wc = wm.copy()
    wm[0] = lam / (n_p + lam)
    wc[0] = wm[0] + 1.0 - alpha ** 2 + beta
    return wm, wc, lam


def process_function(state: UeState, accel, rotation, dt: float) -> UeState:
    """Constant-acceleration kinematics driven by the IMU; works on batches."""
    accel = np.asarray(accel, dtype=float)
    p = state.p + state.v * dt + 0.5 * accel * dt ** 2
    v = state.v + accel * dt
    return UeState(p, v, state.b.copy(), state.R @ np.asarray(rotation, dtype=float))


def process_noise(accel_cov, gyro_cov, dt: float, n_sats: int) -> np.ndarray:
    """Tangent-space process covariance over ``[dp, dv, db, dw]``."""
    Ca, Cw = np.asarray(accel_cov, dtype=float), np.asarray(gyro_cov, dtype=float)
    n = n_sats + 9
    Q = np.zeros((n, n))
    Q[0:3, 0:3] = dt ** 4 / 4.0 * Ca
    Q[0:3, 3:6] = Q[3:6, 0:3] = dt ** 3 / 2.0 * Ca
    Q[3:6, 3:6] = dt ** 2 * Ca
    Q[n - 3:, n - 3:] = Cw
    return Q


def euclidean_process_noise(accel_cov, gyro_cov, dt: float, n_sats: int) -> np.ndarray:
    """Process covariance of the ``vec(R)`` baseline; the rotation block is isotropic."""
    n = n_sats + 15
    Q = np.zeros((n, n))
    Q[:6 + n_sats, :6 + n_sats] = process_noise(accel_cov, np.zeros((3, 3)), dt, n_sats)[:6 + n_sats, :6 + n_sats]
    Q[6 + n_sats:, 6 + n_sats:] = np.linalg.norm(gyro_cov, "fro") / (2.0 * np.pi) * np.eye(9)
    return Q


def symmetrize(M):
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def _unit_scale(M):
    d = np.sqrt(np.abs(np.diagonal(M)))
    inv = np.where(d > 0, 1.0 / np.where(d > 0, d, 1.0), 0.0)
    return d, inv


def scaled_nees(e, P) -> float:
    """``e^T P^+ e`` with the pseudo-inverse taken in unit-diagonal coordinates.

    States mix metres and seconds, so an unscaled cutoff would discard the
    clock-bias directions as numerically zero.
    """
    d, inv = _unit_scale(P)
    z = np.asarray(e, dtype=float) * inv
    return float(z @ np.linalg.pinv(P * np.outer(inv, inv), hermitian=True) @ z)


def project_psd(M, tol: float = PSD_TOL, strict: bool = False):
    """Symmetrize and clip negative eigenvalues in diagonally scaled coordinates.

    ``strict`` raises :class:`NotPSD` when an eigenvalue is below ``-tol`` in
    those coordinates instead of clipping it.
    """
    M = symmetrize(np.asarray(M, dtype=float))
    d, inv = _unit_scale(M)
    S = M * inv[:, None] * inv[None, :]
    vals, vecs = np.linalg.eigh(S)
    if strict and vals.min() < -tol * max(1.0, np.abs(vals).max()):
        raise NotPSD(f"matrix has eigenvalue {vals.min():.3e} in scaled coordinates")
    if vals.min() >= 0:
        return M
    S = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
    return symmetrize(S * d[:, None] * d[None, :])


def psd_cholesky(P) -> np.ndarray:
    """Lower-triangular ``L`` with ``L L^T = P`` for PSD ``P``; degenerate pivots give zero columns."""
    P = project_psd(P, strict=True)
    d, inv = _unit_scale(P)
    A = P * inv[:, None] * inv[None, :]
    n = A.shape[0]
    L = np.zeros_like(A)
    for j in range(n):
        piv = A[j, j] - L[j, :j] @ L[j, :j]
        if piv <= 1e-12:
            continue
        L[j, j] = np.sqrt(piv)
        L[j + 1:, j] = (A[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L * d[:, None]


def sigma_points(mean: UeState, P, lam: float) -> UeState:
    """``2 N_p + 1`` points ``mean``, ``mean [+] col_i`` and ``mean [+] (-col_i)``."""
    n = P.shape[0]
    if n != mean.tangent_dim:
        raise DimensionMismatch(f"covariance is {n}x{n}, state tangent dimension {mean.tangent_dim}")
    L = psd_cholesky((n + lam) * P)
    deltas = np.vstack([np.zeros(n), L.T, -L.T])
    return state_boxplus(mean.broadcast(2 * n + 1), deltas)


def _weighted_outer(w, A, B=None):
    B = A if B is None else B
    return np.einsum("i,ij,ik->jk", w, A, B)


def _wrap_columns(x, idx):
    x = np.array(x, dtype=float, copy=True)
    if idx.size:
        x[..., idx] = wrap_angle(x[..., idx])
    return x


# ---------------------------------------------------------------- belief

def belief_assignment(rho_points, wc, epsilon: float, snapshot, mode: str,
                      oracle_cov=None, fim_method: str = "structured") -> np.ndarray:
    """Observation covariance the filter trusts, over the full observation vector.

    ``fim_approx`` averages inverse FIMs at the sigma-point observations with
    the covariance weights and adds ``epsilon I``; ``oracle`` returns the
    covariance the observation was actually drawn with; ``identity`` ignores both.
    """
    dim = rho_points.shape[-1]
    if mode == "identity":
        return np.eye(dim)
    if mode == "oracle":
        if oracle_cov is None:
            raise ValueError("oracle belief needs the true observation covariance")
        return symmetrize(np.asarray(oracle_cov, dtype=float))
    if mode != "fim_approx":
        raise ValueError(f"unknown belief mode {mode!r}")
    covs = fim_inverse(observation_fim(snapshot, rho_points, fim_method)).cov
    return average_covariances(covs, wc, epsilon)


def average_covariances(covs, wc, epsilon: float = 0.0) -> np.ndarray:
    """``epsilon I + sum_i wc_i covs_i``, kept no tighter than the central covariance.

    The sum is taken around ``covs[0]`` for precision.  With a small spread
    parameter the central weight is large and negative, so a strongly curved
    ``covs(x)`` can make the raw sum indefinite; in coordinates whitened by
    ``covs[0]`` its eigenvalues are therefore floored at one.
    """
    covs = np.asarray(covs, dtype=float)
    wc = np.asarray(wc, dtype=float)
    base = symmetrize(covs[0])
    avg = symmetrize(wc.sum() * base + np.einsum("i,ijk->jk", wc[1:], covs[1:] - base))
    d = np.sqrt(np.diagonal(base))
    L = np.linalg.cholesky(base / np.outer(d, d))
    Linv = np.linalg.inv(L)
    white = symmetrize(Linv @ (avg / np.outer(d, d)) @ Linv.T)
    vals, vecs = np.linalg.eigh(white)
    if vals.min() < 1.0:
        white = (vecs * np.maximum(vals, 1.0)) @ vecs.T
        avg = symmetrize((L @ white @ L.T) * np.outer(d, d))
    return avg + epsilon * np.eye(avg.shape[0])


def _gain(cross, Q):
    """``cross Q^-1`` via a diagonally scaled solve."""
    d = np.sqrt(np.diagonal(Q))
    if np.any(~np.isfinite(d)) or np.any(d <= 0):
        raise InnovationSingular("innovation covariance has a nonpositive diagonal")
    Qs = Q / np.outer(d, d)
    try:
        sol = np.linalg.solve(Qs, (cross / d).T)
    except np.linalg.LinAlgError as exc:
        raise InnovationSingular(str(exc)) from exc
    if not np.all(np.isfinite(sol)):
        raise InnovationSingular("non-finite Kalman gain")
    return sol.T / d


# ---------------------------------------------------------------- Riemannian filter

@dataclass
class StepDiagnostics:
    innovation: np.ndarray | None = None
    n_active: int = 0
    belief_trace: float = 0.0


class RiemannianUKF:
    """UKF on the compound manifold with tangent covariance of size S+9."""

    name = "riemannian"

    def __init__(self, config: FilterConfig | None = None):
        self.config = config or FilterConfig()

    def weights(self, n_p):
        c = self.config
        return ukf_weights(n_p, c.alpha, c.beta, c.kappa)

    def time_update(self, state: FilterState, imu: ImuMeasurement):
        cfg = self.config
        n = state.P.shape[0]
        wm, wc, lam = self.weights(n)
        z = sigma_points(state.mean, state.P, lam)
        fz = process_function(z, imu.accel, imu.rotation, cfg.dt)
        mean = manifold_mean(wm, fz)
        dev = state_boxminus(fz, mean.broadcast(len(fz)))
        P = _weighted_outer(wc, dev) + process_noise(cfg.accel_cov, cfg.gyro_cov, cfg.dt, mean.n_sats)
        return FilterState(mean, symmetrize(P)), dev

    def measurement_update(self, pred: FilterState, obs: Observation, prior_dev=None):
        cfg = self.config
        n = pred.P.shape[0]
        wm, wc, lam = self.weights(n)
        x = sigma_points(pred.mean, pred.P, lam)
        rho = obs.predict(x)
        if cfg.cross_covariance == "time_update_sigma" and prior_dev is not None:
            dev = prior_dev
        else:
            dev = state_boxminus(x, pred.mean.broadcast(len(x)))
        belief = belief_assignment(rho, wc, cfg.epsilon_for(obs.region), obs.snapshot,
                                   cfg.belief, obs.cov, cfg.fim_method)
        return _kalman_correct(pred.P, dev, rho, wm, wc, belief, obs, cfg,
                               lambda K_innov: state_boxplus(pred.mean, K_innov))

    def step(self, state: FilterState, imu: ImuMeasurement, obs: Observation):
        pred, dev = self.time_update(state, imu)
        if obs is None:
            return pred, StepDiagnostics()
        return self.measurement_update(pred, obs, dev)

    def estimate(self, state: FilterState) -> UeState:
        return state.mean

    def nees(self, state: FilterState, truth: UeState) -> float:
        return scaled_nees(state_boxminus(truth, state.mean), state.P)


def _kalman_correct(P_pred, dev, rho, wm, wc, belief, obs: Observation, cfg: FilterConfig, apply):
    lay = obs.layout
    az = lay.azimuth_indices if cfg.wrap_innovation else np.array([], dtype=int)
    active = np.flatnonzero(obs.active)
    # mean observation taken relative to the central point, azimuths on the circle
    d0 = _wrap_columns(rho - rho[0], az)
    rho_mean = rho[0] + wm @ d0
    drho = _wrap_columns(rho - rho_mean, az)[:, active]
    Q = _weighted_outer(wc, drho) + belief[np.ix_(active, active)]
    Q = project_psd(Q)
    cross = _weighted_outer(wc, dev, drho)
    innov = _wrap_columns(np.asarray(obs.value) - rho_mean, az)[active]
    if active.size == 0:
        return FilterState(apply(np.zeros(P_pred.shape[0])), P_pred), StepDiagnostics()
    K = _gain(cross, Q)
    state_mean = apply(K @ innov)
    P = project_psd(P_pred - K @ Q @ K.T)
    diag = StepDiagnostics(innov, int(active.size), float(np.trace(belief[np.ix_(active, active)])))
    return FilterState(state_mean, P), diag


# ---------------------------------------------------------------- Euclidean baseline

@dataclass
class EuclideanState:
    """Flat state ``[p, v, b, vec(R)]`` with its (S+15)-dimensional covariance."""

    x: np.ndarray
    P: np.ndarray
    n_sats: int

    @property
    def mean(self) -> UeState:
        return UeState.from_vector(self.x, self.n_sats)

    @property
    def projected_mean(self) -> UeState:
        m = self.mean
        return UeState(m.p, m.v, m.b, nearest_rotation(m.R))


def rotation_vec_jacobian(R) -> np.ndarray:
    """``d vec(R [+] w) / dw`` at ``w = 0`` (9x3, column-major vec)."""
    cols = [np.swapaxes(R @ skew(e), -1, -2).reshape(9) for e in np.eye(3)]
    return np.stack(cols, axis=1)


def to_euclidean(state: FilterState) -> EuclideanState:
    """Embed a tangent-space Gaussian into the ``vec(R)`` coordinates (linearized)."""
    S = state.mean.n_sats
    n = S + 15
    T = np.zeros((n, S + 9))
    T[:6 + S, :6 + S] = np.eye(6 + S)
    T[6 + S:, 6 + S:] = rotation_vec_jacobian(state.mean.R)
    return EuclideanState(state.mean.to_vector(), symmetrize(T @ state.P @ T.T), S)


class EuclideanUKF:
    """Classical additive-noise UKF on ``[p, v, b, vec(R)]`` (rotation left unconstrained)."""

    name = "euclidean"

    def __init__(self, config: FilterConfig | None = None):
        self.config = config or FilterConfig()

    def weights(self, n_p):
        c = self.config
        return ukf_weights(n_p, c.alpha, c.beta, c.kappa)

    def _sigma(self, x, P, lam):
        L = psd_cholesky((P.shape[0] + lam) * P)
        return x + np.vstack([np.zeros(x.size), L.T, -L.T])

    def _propagate(self, X, imu, S):
        cfg = self.config
        states = UeState.from_vector(X, S)
        return process_function(states, imu.accel, imu.rotation, cfg.dt).to_vector()

    def time_update(self, state: EuclideanState, imu: ImuMeasurement):
        cfg = self.config
        n = state.P.shape[0]
        wm, wc, lam = self.weights(n)
        fz = self._propagate(self._sigma(state.x, state.P, lam), imu, state.n_sats)
        x = fz[0] + wm @ (fz - fz[0])
        dev = fz - x
        P = _weighted_outer(wc, dev) + euclidean_process_noise(cfg.accel_cov, cfg.gyro_cov, cfg.dt, state.n_sats)
        return EuclideanState(x, symmetrize(P), state.n_sats), dev

    def measurement_update(self, pred: EuclideanState, obs: Observation, prior_dev=None):
        cfg = self.config
        n = pred.P.shape[0]
        wm, wc, lam = self.weights(n)
        X = self._sigma(pred.x, pred.P, lam)
        rho = obs.predict(UeState.from_vector(X, pred.n_sats), clip=True)
        if cfg.cross_covariance == "time_update_sigma" and prior_dev is not None:
            dev = prior_dev
        else:
            dev = X - pred.x
        belief = belief_assignment(rho, wc, cfg.epsilon_for(obs.region), obs.snapshot,
                                   cfg.belief, obs.cov, cfg.fim_method)
        new, diag = _kalman_correct(pred.P, dev, rho, wm, wc, belief, obs, cfg,
                                    lambda K_innov: pred.x + K_innov)
        return EuclideanState(new.mean, new.P, pred.n_sats), diag

    def step(self, state: EuclideanState, imu: ImuMeasurement, obs: Observation):
        pred, dev = self.time_update(state, imu)
        if obs is None:
            return pred, StepDiagnostics()
        return self.measurement_update(pred, obs, dev)

    def estimate(self, state: EuclideanState) -> UeState:
        return state.projected_mean

    def nees(self, state: EuclideanState, truth: UeState) -> float:
        return scaled_nees(truth.to_vector() - state.x, state.P)


# ---------------------------------------------------------------- tracking loop

@dataclass
class TrackResult:
    states: list
    estimates: list
    nees: list
    diagnostics: list

    @property
    def orthonormality(self) -> np.ndarray:
        """Orthonormality error of the raw (unprojected) rotation of every state."""
        return np.array([float(orthonormality_error(_raw_rotation(s))) for s in self.states])


def _raw_rotation(state):
    return state.mean.R


def track(filt, initial, timeline, truth=None) -> TrackResult:
    """Run ``filt`` over ``timeline`` of ``(imu, observation)`` pairs.

    ``truth`` (optional) is a sequence of UeStates aligned with the initial
    state and every step; when given, NEES is reported per step.  Any failure
    is re-raised as :class:`FilterStepError` carrying the zero-based step.
    """
    state = initial
    states, estimates, nees, diags = [state], [filt.estimate(state)], [], []
    if truth is not None:
        nees.append(np.nan)
    for n, (imu, obs) in enumerate(timeline):
        try:
            state, diag = filt.step(state, imu, obs)
            if not np.all(np.isfinite(state.P)):
                raise InnovationSingular("covariance became non-finite")
        except (LeorisError, np.linalg.LinAlgError, FloatingPointError) as exc:
            raise FilterStepError(n, exc) from exc
        states.append(state)
        estimates.append(filt.estimate(state))
        diags.append(diag)
        if truth is not None:
            nees.append(filt.nees(state, truth[n + 1]))
    return TrackResult(states, estimates, nees, diags)


def riemannian_initial(mean: UeState, P0=None) -> FilterState:
    n = mean.tangent_dim
    return FilterState(mean, np.zeros((n, n)) if P0 is None else np.asarray(P0, dtype=float))
