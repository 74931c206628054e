"""Fisher information of the channel-parameter vector.

Two independent routes produce the same matrix:

* ``method="structured"``: every column of the signal Jacobian touches a
  single propagation path, so ``D^H D`` reduces to per-path-pair sums over
  transmissions and subcarriers.  Fast and batched over states.
* ``method="finite_difference"``: central differences of the stacked
  noise-free samples followed by the Slepian-Bangs formula.  Slow; used as
  the reference.

Nuisance channel gains are eliminated per satellite with a Schur complement.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import LinkSnapshot, los_samples
from .errors import NoRisLinks, NuisanceSingular, SingularNoise, StepUnderflow

FD_STEPS = {"angle": 1e-6, "delay": 1e-12, "doppler": 1e-3, "gain": 1e-6}
COND_LIMIT = 1e12
JITTER_REL = 1e-10
FLOOR_VARIANCE = 1e6
# singular values of the nuisance factor below this fraction of the largest span nothing
NULLSPACE_RTOL = 1e-8


# ---------------------------------------------------------------- column map

@dataclass(frozen=True)
class _Column:
    index: int       # position in rho (or -1 for nuisance)
    path: int        # 0 = direct, 1 + r = via RIS r
    kind: str        # doppler | delay | angle | re | im
    angle: int = -1  # 0..3 = AoD az, AoD el, AoA az, AoA el


def _satellite_columns(snap: LinkSnapshot, s: int) -> list[_Column]:
    """Columns touched by satellite ``s`` ordered [rho_0; rho_s; xi_s]."""
    lay, R = snap.layout, snap.n_ris
    cols = [_Column(lay.ris_doppler(r), 1 + r, "doppler") for r in range(R)]
    for r in range(R):
        a = lay.ris_aod(r).start
        cols += [_Column(a, 1 + r, "angle", 0), _Column(a + 1, 1 + r, "angle", 1)]
    for r in range(R):
        a = lay.ris_aoa(r).start
        cols += [_Column(a, 1 + r, "angle", 2), _Column(a + 1, 1 + r, "angle", 3)]
    cols.append(_Column(lay.sat_doppler(s), 0, "doppler"))
    a, b = lay.sat_aod(s).start, lay.sat_aoa(s).start
    cols += [_Column(a, 0, "angle", 0), _Column(a + 1, 0, "angle", 1),
             _Column(b, 0, "angle", 2), _Column(b + 1, 0, "angle", 3)]
    cols.append(_Column(lay.sat_delay(s), 0, "delay"))
    cols += [_Column(lay.ris_delay(s, r), 1 + r, "delay") for r in range(R)]
    for p in range(R + 1):
        cols += [_Column(-1, p, "re"), _Column(-1, p, "im")]
    return cols


def nuisance_vector(snap: LinkSnapshot, s: int) -> np.ndarray:
    """``[Re, Im]`` of the direct gain then of each cascaded RIS gain of satellite ``s``."""
    g = snap.path_gains[s]
    return np.column_stack([g.real, g.imag]).ravel()


# ---------------------------------------------------------------- FD route

def stack_signals(snap: LinkSnapshot, rho, s: int, transmissions=None) -> np.ndarray:
    """Noise-free samples of satellite ``s``; entry ``g*K + k`` is transmission g, subcarrier k (0-based)."""
    return los_samples(snap, rho, s, transmissions=transmissions)


def _realized_step(x, h):
    hi, lo = x + h, x - h
    width = hi - lo
    if width == 0 or abs(width - 2 * h) > 1e-2 * 2 * h:
        raise StepUnderflow(f"step {h:g} degenerate at parameter value {x:g}")
    return hi, lo, width


def jacobian(snap: LinkSnapshot, rho, s: int, steps: dict | None = None,
             transmissions=None) -> np.ndarray:
    """Central-difference Jacobian of the stacked samples of satellite ``s``.

    Columns are all of ``rho`` followed by the ``2(R+1)`` nuisance parts of
    satellite ``s``; columns belonging to other satellites stay zero.
    """
    steps = {**FD_STEPS, **(steps or {})}
    rho = np.asarray(rho, dtype=float)
    gains = snap.path_gains[s].astype(complex)
    n_rho, R = rho.size, snap.n_ris
    n_rows = snap.frame.n_subcarriers * snap.transmission_index(transmissions).size
    out = np.zeros((n_rows, n_rho + 2 * (R + 1)), dtype=complex)
    for col in _satellite_columns(snap, s):
        if col.kind in ("re", "im"):
            unit = 1.0 if col.kind == "re" else 1j
            h = steps["gain"]
            plus, minus = gains.copy(), gains.copy()
            plus[col.path] += unit * h
            minus[col.path] -= unit * h
            j = n_rho + 2 * col.path + (col.kind == "im")
            out[:, j] = (los_samples(snap, rho, s, plus, transmissions)
                         - los_samples(snap, rho, s, minus, transmissions)) / (2 * h)
            continue
        h = steps[col.kind]
        hi, lo, width = _realized_step(rho[col.index], h)
        plus, minus = rho.copy(), rho.copy()
        plus[col.index], minus[col.index] = hi, lo
        out[:, col.index] = (los_samples(snap, plus, s, gains, transmissions)
                             - los_samples(snap, minus, s, gains, transmissions)) / width
    return out


def sample_noise(snap: LinkSnapshot, s: int, transmissions=None) -> np.ndarray:
    """Noise variance of every stacked sample of satellite ``s``."""
    gidx = snap.transmission_index(transmissions)
    per_g = np.asarray(snap.noise_var[s], dtype=float)[gidx]
    return np.repeat(per_g, snap.frame.n_subcarriers)


def slepian_bangs(D, C) -> np.ndarray:
    """``2 Re(D^H C^-1 D)`` for a diagonal noise covariance given by its diagonal ``C``."""
    D = np.atleast_2d(np.asarray(D))
    C = np.broadcast_to(np.asarray(C, dtype=float), D.shape[:1])
    if np.any(C <= 0):
        raise SingularNoise("noise variances must be positive")
    J = 2.0 * np.real(D.conj().T @ (D / C[:, None]))
    return 0.5 * (J + J.T)


def _scatter_satellite(snap: LinkSnapshot, s: int, local: np.ndarray, n_rho: int) -> np.ndarray:
    """Embed an ``[rho; xi_s]`` matrix into the full ``[rho; xi_1..xi_S]`` space."""
    nx = 2 * (snap.n_ris + 1)
    idx = np.concatenate([np.arange(n_rho), n_rho + s * nx + np.arange(nx)])
    full = np.zeros((n_rho + snap.n_sats * nx,) * 2)
    full[np.ix_(idx, idx)] = local
    return full


def channel_fim(snap: LinkSnapshot, rho, method: str = "structured",
                transmissions=None, steps: dict | None = None) -> np.ndarray:
    """FIM over ``[rho; xi_1; ...; xi_S]`` before nuisance removal."""
    rho = np.asarray(rho, dtype=float)
    n_rho = rho.size
    total = None
    for s in range(snap.n_sats):
        if method == "finite_difference":
            D = jacobian(snap, rho, s, steps, transmissions)
            local = slepian_bangs(D, sample_noise(snap, s, transmissions))
        elif method == "structured":
            local = _structured_local(snap, rho[None], s, transmissions)[0]
            local = _local_to_rho_order(snap, s, local, n_rho)
        else:
            raise ValueError(f"unknown FIM method {method!r}")
        part = _scatter_satellite(snap, s, local, n_rho)
        total = part if total is None else total + part
    return total


# ---------------------------------------------------------------- structured route

def _structured_local(snap: LinkSnapshot, rho, s: int, transmissions=None) -> np.ndarray:
    """Batched FIM of satellite ``s`` over its own columns (``_satellite_columns`` order)."""
    gidx = snap.transmission_index(transmissions)
    noise = np.asarray(snap.noise_var[s], dtype=float)[gidx]
    if np.any(noise <= 0):
        raise SingularNoise("noise variance must be positive")
    cols = _satellite_columns(snap, s)
    gains = snap.path_gains[s]
    c, dc = snap.array_factors(rho, s, transmissions, derivatives=True)  # (n, G, P), (n, G, P, 4)
    dop, dly = snap.path_parameters(rho, s)                               # (n, P)
    t = snap.sample_times(transmissions)
    fk = snap.subcarrier_freqs()

    n = rho.shape[0]
    path = np.array([col.path for col in cols])
    a = np.array([col.kind == "doppler" for col in cols], dtype=int)
    b = np.array([col.kind == "delay" for col in cols], dtype=int)
    coef = np.empty((n, gidx.size, len(cols)), dtype=complex)
    for i, col in enumerate(cols):
        p = col.path
        if col.kind == "doppler":
            coef[..., i] = 2j * np.pi * gains[p] * c[..., p]
        elif col.kind == "delay":
            coef[..., i] = -2j * np.pi * gains[p] * c[..., p]
        elif col.kind == "angle":
            coef[..., i] = gains[p] * dc[..., p, col.angle]
        elif col.kind == "re":
            coef[..., i] = c[..., p]
        else:
            coef[..., i] = 1j * c[..., p]

    # the sum over samples factors into a transmission sum and a subcarrier sum
    ddop = dop[:, None, :] - dop[:, :, None]                    # (n, P, P): f_q - f_p
    ddly = dly[:, None, :] - dly[:, :, None]
    fmax = fk[-1]
    fpow = (fk / fmax)[None, :] ** np.arange(3)[:, None]        # (3, K), normalized for range
    ef = np.exp(-2j * np.pi * ddly[..., None] * fk)             # (n, P, P, K)
    fsum = np.einsum("npqk,bk->nbpq", ef, fpow) * (fmax ** np.arange(3))[None, :, None, None]

    pi, pj = np.meshgrid(path, path, indexing="ij")
    A = a[:, None] + a[None, :]
    B = b[:, None] + b[None, :]
    et = np.exp(2j * np.pi * ddop[:, pi, pj][..., None] * t)   # (n, m, m, G)
    tw = (t[None, :] ** np.arange(3)[:, None])[A] / noise       # (m, m, G)
    tsum = np.einsum("ngi,ngj,nijg,ijg->nij", coef.conj(), coef, et, tw)
    gram = tsum * fsum[:, B, pi, pj]
    J = 2.0 * snap.amplitude_prefactor[s] ** 2 * gram.real
    return 0.5 * (J + np.swapaxes(J, -1, -2))


def _local_to_rho_order(snap: LinkSnapshot, s: int, local: np.ndarray, n_rho: int) -> np.ndarray:
    """Reorder a local matrix into ``[rho (full length); xi_s]`` coordinates."""
    cols = _satellite_columns(snap, s)
    target = np.array([c.index if c.index >= 0 else -1 for c in cols])
    nx = 2 * (snap.n_ris + 1)
    target[target < 0] = n_rho + np.arange(nx)
    out = np.zeros(local.shape[:-2] + (n_rho + nx, n_rho + nx))
    out[..., target[:, None], target[None, :]] = local
    return out


# ---------------------------------------------------------------- nuisance removal

@dataclass
class FimResult:
    J: np.ndarray
    used_pinv: bool = False
    meta: dict = field(default_factory=dict)


def _diag_scale(M):
    d = np.sqrt(np.clip(np.diagonal(M, axis1=-2, axis2=-1), 0.0, None))
    return np.where(d > 0, 1.0 / np.where(d > 0, d, 1.0), 0.0)


def _projected_schur(X, Y, Z):
    """``X - Y Z^+ Y^T`` from a square-root factor of the full matrix.

    With ``[[X, Y], [Y^T, Z]] = F F^T`` the complement equals the kept rows of
    ``F`` projected off the row space of the nuisance rows, which is PSD by
    construction and avoids the cancellation of the direct formula when ``Z``
    is ill conditioned.
    """
    n = X.shape[-1]
    full = np.concatenate([np.concatenate([X, Y], axis=-1),
                           np.concatenate([np.swapaxes(Y, -1, -2), Z], axis=-1)], axis=-2)
    d = _diag_scale(full)
    full = full * d[..., :, None] * d[..., None, :]
    vals, vecs = np.linalg.eigh(0.5 * (full + np.swapaxes(full, -1, -2)))
    F = vecs * np.sqrt(np.clip(vals, 0.0, None))[..., None, :]
    _, sv, Wt = np.linalg.svd(F[..., n:, :])
    null = np.ones(F.shape[:-2] + (F.shape[-1],))
    rank_tol = NULLSPACE_RTOL * sv[..., :1]
    null[..., : sv.shape[-1]] = (sv <= rank_tol).astype(float)
    A = (F[..., :n, :] @ np.swapaxes(Wt, -1, -2)) * null[..., None, :]
    keep = np.where(d[..., :n] > 0, 1.0 / np.where(d[..., :n] > 0, d[..., :n], 1.0), 0.0)
    J = (A @ np.swapaxes(A, -1, -2)) * keep[..., :, None] * keep[..., None, :]
    return J


def schur_complement(X, Y, Z, allow_pinv: bool = True) -> FimResult:
    """``X - Y Z^-1 Y^T`` (batched) for a PSD information matrix.

    Computed in factored form (see ``_projected_schur``).  If the scaled
    nuisance block is numerically singular the generalized (pseudo-inverse)
    complement is returned, or ``NuisanceSingular`` is raised when
    ``allow_pinv`` is false.
    """
    X, Y, Z = (np.asarray(m, dtype=float) for m in (X, Y, Z))
    dz = _diag_scale(Z)
    Zs = Z * dz[..., :, None] * dz[..., None, :]
    live = np.diagonal(Zs, axis1=-2, axis2=-1) > 0
    Zs = Zs + np.where(live, 0.0, 1.0)[..., None] * np.eye(Z.shape[-1])
    cond = np.linalg.cond(Zs)
    used_pinv = bool(np.any(~np.isfinite(cond) | (cond > COND_LIMIT)))
    if used_pinv and not allow_pinv:
        raise NuisanceSingular(f"nuisance block condition number {np.max(cond):.3e}")
    J = _projected_schur(X, Y, Z)
    J = 0.5 * (J + np.swapaxes(J, -1, -2))
    return FimResult(J, used_pinv, {"nuisance_condition": float(np.max(cond))})


def remove_nuisance(J_ch, n_rho: int, allow_pinv: bool = True) -> FimResult:
    """Eliminate the trailing nuisance block of ``J_ch`` (first ``n_rho`` rows are kept)."""
    J_ch = np.asarray(J_ch, dtype=float)
    X = J_ch[..., :n_rho, :n_rho]
    Y = J_ch[..., :n_rho, n_rho:]
    Z = J_ch[..., n_rho:, n_rho:]
    return schur_complement(X, Y, Z, allow_pinv)


def observation_fim(snap: LinkSnapshot, rho, method: str = "structured",
                    transmissions=None) -> np.ndarray:
    """Nuisance-free FIM of ``rho``; accepts a single vector or a batch of shape ``(n, dim)``."""
    rho = np.asarray(rho, dtype=float)
    single = rho.ndim == 1
    batch = rho[None] if single else rho
    n_rho = batch.shape[-1]
    if method == "finite_difference":
        out = np.stack([remove_nuisance(channel_fim(snap, r, method, transmissions), n_rho).J
                        for r in batch])
        return out[0] if single else out
    J = np.zeros((batch.shape[0], n_rho, n_rho))
    for s in range(snap.n_sats):
        cols = _satellite_columns(snap, s)
        local = _structured_local(snap, batch, s, transmissions)
        nr = sum(c.index >= 0 for c in cols)
        res = schur_complement(local[:, :nr, :nr], local[:, :nr, nr:], local[:, nr:, nr:])
        idx = np.array([c.index for c in cols[:nr]])
        J[:, idx[:, None], idx[None, :]] += res.J
    return J[0] if single else J


# ---------------------------------------------------------------- inversion

@dataclass
class CovarianceResult:
    cov: np.ndarray
    active: np.ndarray
    jitter: np.ndarray


def fim_inverse(J, floor: float = FLOOR_VARIANCE, cond_limit: float = COND_LIMIT,
                jitter_rel: float = JITTER_REL) -> CovarianceResult:
    """Regularized inverse of a (batched) FIM.

    Components with no information (zero diagonal) receive ``floor`` variance
    and no correlations.  The remaining block is inverted in diagonally scaled
    coordinates; if its condition number exceeds ``cond_limit`` a jitter
    ``jitter_rel * trace / dim`` is added to the scaled matrix first.
    """
    J = np.asarray(J, dtype=float)
    single = J.ndim == 2
    Jb = J[None] if single else J
    n, dim = Jb.shape[0], Jb.shape[-1]
    cov = np.zeros_like(Jb)
    active = np.diagonal(Jb, axis1=-2, axis2=-1) > 0
    jitter = np.zeros(n)
    for i in range(n):
        idx = np.flatnonzero(active[i])
        cov[i][np.diag_indices(dim)] = floor
        if idx.size == 0:
            continue
        sub = Jb[i][np.ix_(idx, idx)]
        d = 1.0 / np.sqrt(np.diagonal(sub))
        scaled = sub * d[:, None] * d[None, :]
        scaled = 0.5 * (scaled + scaled.T)
        if np.linalg.cond(scaled) > cond_limit:
            jitter[i] = jitter_rel * np.trace(scaled) / idx.size
            scaled = scaled + jitter[i] * np.eye(idx.size)
        inv = np.linalg.inv(scaled) * d[:, None] * d[None, :]
        cov[i][np.ix_(idx, idx)] = 0.5 * (inv + inv.T)
    if single:
        return CovarianceResult(cov[0], active[0], jitter[0])
    return CovarianceResult(cov, active, jitter)


def observation_covariance(snap: LinkSnapshot, rho, method: str = "structured") -> CovarianceResult:
    return fim_inverse(observation_fim(snap, rho, method))


def crb_phi_d(J, n_ris: int) -> float:
    """Root of the summed CRB over the RIS angle-of-departure block of ``rho``."""
    if n_ris < 1:
        raise NoRisLinks("CRB of the RIS angles needs at least one RIS")
    cov = fim_inverse(J).cov
    block = slice(n_ris, 3 * n_ris)
    return float(np.sqrt(np.trace(cov[block, block])))
