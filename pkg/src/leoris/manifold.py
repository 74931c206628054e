"""Algebra of the compound state manifold R^3 x R^3 x R^S x SO(3).

All functions accept single states or batches: a batch is a :class:`UeState`
whose arrays carry one leading axis (``p`` of shape ``(n, 3)``, ``R`` of shape
``(n, 3, 3)`` and so on).  Tangent vectors are laid out as
``[dp (3), dv (3), db (S), dw (3)]``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import AngleNearPi, DimensionMismatch, MeanNotConverged

SMALL_ANGLE = 1e-10
SERIES_ANGLE = 1e-5
NEAR_PI_SIN = 1e-6
MEAN_TOL = 1e-10
MEAN_MAX_ITER = 100


@dataclass(frozen=True)
class UeState:
    """Position (m), velocity (m/s), clock biases (s) and body-to-global rotation."""

    p: np.ndarray
    v: np.ndarray
    b: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        for name in ("p", "v", "b", "R"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    @property
    def n_sats(self) -> int:
        return self.b.shape[-1]

    @property
    def tangent_dim(self) -> int:
        return self.n_sats + 9

    @property
    def is_batch(self) -> bool:
        return self.p.ndim == 2

    def __len__(self):
        if not self.is_batch:
            raise TypeError("single state has no length")
        return self.p.shape[0]

    def __getitem__(self, idx):
        if not self.is_batch:
            raise TypeError("single state is not indexable")
        return UeState(self.p[idx], self.v[idx], self.b[idx], self.R[idx])

    @classmethod
    def stack(cls, states) -> "UeState":
        states = list(states)
        return cls(
            np.stack([s.p for s in states]),
            np.stack([s.v for s in states]),
            np.stack([s.b for s in states]),
            np.stack([s.R for s in states]),
        )

    def broadcast(self, n: int) -> "UeState":
        """Repeat a single state ``n`` times as a batch."""
        return UeState(
            np.broadcast_to(self.p, (n, 3)).copy(),
            np.broadcast_to(self.v, (n, 3)).copy(),
            np.broadcast_to(self.b, (n, self.n_sats)).copy(),
            np.broadcast_to(self.R, (n, 3, 3)).copy(),
        )

    def to_vector(self) -> np.ndarray:
        """Flat Euclidean embedding ``[p, v, b, vec(R)]`` (column-major vec)."""
        vecR = np.swapaxes(self.R, -1, -2).reshape(self.R.shape[:-2] + (9,))
        return np.concatenate([self.p, self.v, self.b, vecR], axis=-1)

    @classmethod
    def from_vector(cls, x, n_sats: int) -> "UeState":
        x = np.asarray(x, dtype=float)
        s = n_sats
        R = np.swapaxes(x[..., 6 + s:15 + s].reshape(x.shape[:-1] + (3, 3)), -1, -2)
        return cls(x[..., 0:3], x[..., 3:6], x[..., 6:6 + s], R)


def skew(e):
    """Cross-product matrix of ``e`` (supports leading batch axes)."""
    e = np.asarray(e, dtype=float)
    out = np.zeros(e.shape[:-1] + (3, 3))
    out[..., 0, 1] = -e[..., 2]
    out[..., 0, 2] = e[..., 1]
    out[..., 1, 0] = e[..., 2]
    out[..., 1, 2] = -e[..., 0]
    out[..., 2, 0] = -e[..., 1]
    out[..., 2, 1] = e[..., 0]
    return out


def vee(S):
    S = np.asarray(S)
    return np.stack([S[..., 2, 1], S[..., 0, 2], S[..., 1, 0]], axis=-1)


def euler_to_rotation(alpha: float, beta: float, gamma: float) -> np.ndarray:
    """Z-Y-X Euler angles (yaw ``alpha``, pitch ``beta``, roll ``gamma``) to a rotation matrix."""
    ca, sa = np.cos(alpha), np.sin(alpha)
    cb, sb = np.cos(beta), np.sin(beta)
    cg, sg = np.cos(gamma), np.sin(gamma)
    return np.array([
        [ca * cb, ca * sb * sg - sa * cg, ca * sb * cg + sa * sg],
        [sa * cb, sa * sb * sg + ca * cg, sa * sb * cg - ca * sg],
        [-sb, cb * sg, cb * cg],
    ])


def so3_exp(e):
    """Rotation by angle ``|e|`` about axis ``e/|e|`` (Rodrigues), batched over leading axes."""
    e = np.asarray(e, dtype=float)
    theta = np.linalg.norm(e, axis=-1)
    K = skew(e)
    with np.errstate(invalid="ignore", divide="ignore"):
        th2 = theta ** 2
        s_coef = np.where(theta < SERIES_ANGLE, 1.0 - th2 / 6.0, np.sin(theta) / theta)
        c_coef = np.where(theta < SERIES_ANGLE, 0.5 - th2 / 24.0, (1.0 - np.cos(theta)) / th2)
    s_coef = np.where(theta < SMALL_ANGLE, 0.0, s_coef)[..., None, None]
    c_coef = np.where(theta < SMALL_ANGLE, 0.0, c_coef)[..., None, None]
    return np.eye(3) + s_coef * K + c_coef * (K @ K)


def so3_boxplus(R, e):
    """``R`` rotated in its body frame by the axis-angle vector ``e``."""
    return np.asarray(R, dtype=float) @ so3_exp(e)


def so3_log(D):
    """Axis-angle vector of the rotation ``D`` (batched).

    Uses the closed form away from pi and the symmetric-part eigenvector when
    ``sin(phi) < 1e-6``; the latter emits :class:`AngleNearPi`.
    """
    D = np.asarray(D, dtype=float)
    w = vee(D - np.swapaxes(D, -1, -2))  # 2 sin(phi) a
    cos_phi = np.clip((np.trace(D, axis1=-2, axis2=-1) - 1.0) / 2.0, -1.0, 1.0)
    sin_phi = 0.5 * np.linalg.norm(w, axis=-1)
    phi = np.arctan2(sin_phi, cos_phi)
    with np.errstate(invalid="ignore", divide="ignore"):
        coef = np.where(phi < SERIES_ANGLE, 0.5 + phi ** 2 / 12.0, phi / (2.0 * sin_phi))
    out = coef[..., None] * w

    near_pi = (sin_phi < NEAR_PI_SIN) & (cos_phi < 0)
    if np.any(near_pi):
        warnings.warn("rotation angle within 1e-6 of pi; using eigenvector fallback", AngleNearPi, stacklevel=2)
        flat_D = D.reshape(-1, 3, 3)
        flat_out = out.reshape(-1, 3)
        flat_w = w.reshape(-1, 3)
        flat_phi = np.broadcast_to(phi, near_pi.shape).reshape(-1)
        for i in np.flatnonzero(near_pi.reshape(-1)):
            sym = 0.5 * (flat_D[i] + flat_D[i].T)
            vals, vecs = np.linalg.eigh(sym)
            axis = vecs[:, np.argmax(vals)]
            if axis @ flat_w[i] < 0:
                axis = -axis
            flat_out[i] = flat_phi[i] * axis
        out = flat_out.reshape(out.shape)
    return out


def so3_boxminus(Ra, Rb):
    """Axis-angle ``e`` such that ``so3_boxplus(Rb, e) == Ra``."""
    Ra = np.asarray(Ra, dtype=float)
    Rb = np.asarray(Rb, dtype=float)
    return so3_log(np.swapaxes(Rb, -1, -2) @ Ra)


def geodesic_angle(Ra, Rb):
    return np.linalg.norm(so3_boxminus(Ra, Rb), axis=-1)


def nearest_rotation(M):
    """Polar projection of a 3x3 matrix onto SO(3)."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=float))
    d = np.sign(np.linalg.det(U @ Vt))
    corr = np.ones(np.shape(d) + (3,))
    corr[..., 2] = d
    return (U * corr[..., None, :]) @ Vt


def orthonormality_error(R):
    R = np.asarray(R, dtype=float)
    return np.linalg.norm(np.swapaxes(R, -1, -2) @ R - np.eye(3), axis=(-2, -1))


def _split(u, n_sats):
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != n_sats + 9:
        raise DimensionMismatch(f"tangent vector has length {u.shape[-1]}, expected {n_sats + 9}")
    s = n_sats
    return u[..., 0:3], u[..., 3:6], u[..., 6:6 + s], u[..., 6 + s:9 + s]


def state_boxplus(state: UeState, u) -> UeState:
    dp, dv, db, dw = _split(u, state.n_sats)
    return UeState(state.p + dp, state.v + dv, state.b + db, so3_boxplus(state.R, dw))


def state_boxminus(a: UeState, b: UeState) -> np.ndarray:
    if a.n_sats != b.n_sats:
        raise DimensionMismatch(f"clock-bias lengths differ: {a.n_sats} vs {b.n_sats}")
    return np.concatenate(
        [a.p - b.p, a.v - b.v, a.b - b.b, so3_boxminus(a.R, b.R)], axis=-1)


def manifold_mean(weights, points: UeState, tol: float = MEAN_TOL,
                  max_iter: int = MEAN_MAX_ITER) -> UeState:
    """Weighted mean of a batch of states.

    Euclidean blocks are weighted averages.  The rotation is the fixed point of
    ``R <- R [+] sum_i w_i (R_i [-] R)``, started from the heaviest point.
    Negative weights are used as given.  The stopping tolerance is never
    tighter than the rounding floor ``8 eps sum|w|`` of the weighted sum, which
    matters for the large mixed-sign weights of small-spread unscented sets.
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.shape[0] != len(points) or w.shape[0] < 1:
        raise DimensionMismatch("weights and points must have the same nonzero length")
    if abs(w.sum() - 1.0) > 1e-9 * max(1.0, np.abs(w).sum()):
        raise ValueError(f"weights sum to {w.sum()!r}, expected 1")

    ref = int(np.argmax(w))
    # centred sums keep precision when weights are large and of mixed sign
    def wavg(x):
        return x[ref] + np.tensordot(w, x - x[ref], axes=1)

    tol = max(tol, 8.0 * np.finfo(float).eps * np.abs(w).sum())
    R = points.R[ref].copy()
    for _ in range(max_iter):
        step = np.tensordot(w, so3_boxminus(points.R, R), axes=1)
        R = so3_boxplus(R, step)
        if np.linalg.norm(step) < tol:
            break
    else:
        raise MeanNotConverged(
            f"rotation mean residual {np.linalg.norm(step):.3e} after {max_iter} iterations")
    return UeState(wavg(points.p), wavg(points.v), wavg(points.b), R)
