"""Geometric channel parameters and the observation function h.

Frames: every node carries a body-to-global rotation; a global direction
``d`` is expressed in a node's body frame as ``R.T @ d``.  Azimuth is
``atan2(y, x)`` and elevation ``asin(z / |d|)`` of that body-frame vector.
Dopplers are in Hz, delays in seconds, angles in radians.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CoincidentPoints, DimensionMismatch
from .manifold import UeState

SPEED_OF_LIGHT = 299_792_458.0
MIN_SEPARATION = 1e-6
ASIN_SLACK = 1e-12


@dataclass(frozen=True)
class WaveConstants:
    f_c: float = 12.7e9
    c: float = SPEED_OF_LIGHT

    @property
    def wavelength(self) -> float:
        return self.c / self.f_c


@dataclass(frozen=True)
class SatelliteState:
    p: np.ndarray
    v: np.ndarray
    R: np.ndarray


@dataclass(frozen=True)
class RisState:
    """A stationary RIS; ``gamma`` holds the diagonal reflection coefficients."""

    p: np.ndarray
    R: np.ndarray
    gamma: np.ndarray | None = None
    gain: float = 1.0


@dataclass(frozen=True)
class KnownLegParams:
    """Doppler (Hz), delay (s), AoA at the RIS and AoD at the satellite of a satellite-RIS leg."""

    doppler: float
    delay: float
    aoa: np.ndarray
    aod: np.ndarray


def _rotate_into(R, d):
    # R.T @ d with broadcasting over leading axes
    return np.einsum("...ji,...j->...i", R, d)


def direction_angles(R, d, clip: bool = False):
    """Azimuth/elevation of global direction ``d`` seen from a node with orientation ``R``.

    Returns an array with trailing axis ``(az, el)``.  ``clip`` lets the
    elevation argument saturate for non-orthonormal ``R`` (used by the
    Euclidean baseline only).
    """
    d = np.asarray(d, dtype=float)
    local = _rotate_into(np.asarray(R, dtype=float), d)
    dist = np.linalg.norm(d, axis=-1)
    az = np.arctan2(local[..., 1], local[..., 0])
    arg = local[..., 2] / dist
    if not clip and np.any(np.abs(arg) > 1.0 + ASIN_SLACK):
        raise ValueError("elevation sine outside [-1, 1]; is R a rotation?")
    el = np.arcsin(np.clip(arg, -1.0, 1.0))
    return np.stack([az, el], axis=-1)


def _check_separation(d):
    if np.any(np.linalg.norm(d, axis=-1) < MIN_SEPARATION):
        raise CoincidentPoints("nodes closer than 1e-6 m")


def sat_link_params(sat: SatelliteState, ue: UeState, s: int, k: WaveConstants, clip: bool = False):
    """Doppler, AoD (az, el), AoA (az, el) and delay of the direct satellite-UE link."""
    d = ue.p - sat.p  # satellite -> UE
    _check_separation(d)
    dist = np.linalg.norm(d, axis=-1)
    doppler = np.einsum("...i,...i->...", sat.v - ue.v, d) / (k.wavelength * dist)
    aod = direction_angles(sat.R, d, clip)
    aoa = direction_angles(ue.R, -d, clip)
    delay = dist / k.c + ue.b[..., s]
    return doppler, aod, aoa, delay


def ris_link_params(ris: RisState, ue: UeState, b, k: WaveConstants, clip: bool = False):
    """Doppler, AoD at the RIS, AoA at the UE and per-satellite delays of a RIS-UE link."""
    d = ris.p - ue.p  # UE -> RIS
    _check_separation(d)
    dist = np.linalg.norm(d, axis=-1)
    doppler = np.einsum("...i,...i->...", ue.v, d) / (k.wavelength * dist)
    aod = direction_angles(ris.R, -d, clip)
    aoa = direction_angles(ue.R, d, clip)
    delays = (dist / k.c)[..., None] + np.asarray(b, dtype=float)
    return doppler, aod, aoa, delays


def sat_ris_known_params(sat: SatelliteState, ris: RisState, k: WaveConstants) -> KnownLegParams:
    """Parameters of the satellite-RIS leg, treating the RIS as a static UE with zero clock bias."""
    proxy = UeState(ris.p, np.zeros(3), np.zeros(1), ris.R)
    doppler, aod, aoa, delay = sat_link_params(sat, proxy, 0, k)
    return KnownLegParams(float(doppler), float(delay), aoa, aod)


def elevation_angle(sat: SatelliteState, ue: UeState):
    """Elevation of the satellite above the global x-y plane at the UE."""
    d = sat.p - ue.p
    _check_separation(d)
    return np.arcsin(np.clip(d[..., 2] / np.linalg.norm(d, axis=-1), -1.0, 1.0))


@dataclass(frozen=True)
class ObservationLayout:
    """Index bookkeeping for the stacked observation vector.

    Order: ``[nu (R), phi_D (2R), phi_A (2R)]`` then, per satellite,
    ``[u_s, theta_D (2), theta_A (2), tau_s, eps_s1..eps_sR]``.
    """

    n_sats: int
    n_ris: int
    dim: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "dim", 5 * self.n_ris + self.n_sats * (self.n_ris + 6))

    def ris_doppler(self, r):
        return r

    def ris_aod(self, r):
        return slice(self.n_ris + 2 * r, self.n_ris + 2 * r + 2)

    def ris_aoa(self, r):
        return slice(3 * self.n_ris + 2 * r, 3 * self.n_ris + 2 * r + 2)

    def sat_offset(self, s):
        return 5 * self.n_ris + s * (self.n_ris + 6)

    def sat_block(self, s):
        o = self.sat_offset(s)
        return slice(o, o + self.n_ris + 6)

    def sat_doppler(self, s):
        return self.sat_offset(s)

    def sat_aod(self, s):
        o = self.sat_offset(s)
        return slice(o + 1, o + 3)

    def sat_aoa(self, s):
        o = self.sat_offset(s)
        return slice(o + 3, o + 5)

    def sat_delay(self, s):
        return self.sat_offset(s) + 5

    def ris_delay(self, s, r):
        return self.sat_offset(s) + 6 + r

    @property
    def azimuth_indices(self) -> np.ndarray:
        idx = []
        for r in range(self.n_ris):
            idx += [self.ris_aod(r).start, self.ris_aoa(r).start]
        for s in range(self.n_sats):
            idx += [self.sat_aod(s).start, self.sat_aoa(s).start]
        return np.array(sorted(idx), dtype=int)

    def ris_indices(self) -> np.ndarray:
        """Indices of every component that depends on a RIS path."""
        idx = list(range(5 * self.n_ris))
        for s in range(self.n_sats):
            idx += [self.ris_delay(s, r) for r in range(self.n_ris)]
        return np.array(sorted(idx), dtype=int)

    def component_names(self) -> list[str]:
        names = [""] * self.dim
        for r in range(self.n_ris):
            names[self.ris_doppler(r)] = f"nu_{r}"
            a, b = self.ris_aod(r).start, self.ris_aoa(r).start
            names[a], names[a + 1] = f"phiD_az_{r}", f"phiD_el_{r}"
            names[b], names[b + 1] = f"phiA_az_{r}", f"phiA_el_{r}"
        for s in range(self.n_sats):
            o = self.sat_offset(s)
            names[o:o + 6] = [f"u_{s}", f"thetaD_az_{s}", f"thetaD_el_{s}",
                              f"thetaA_az_{s}", f"thetaA_el_{s}", f"tau_{s}"]
            for r in range(self.n_ris):
                names[self.ris_delay(s, r)] = f"eps_{s}_{r}"
        return names


def assemble_observation(ue: UeState, sats, riss, k: WaveConstants, clip: bool = False) -> np.ndarray:
    """Stack every channel parameter into the observation vector ``rho = h(ue)``.

    Works on a single state or a batch; the result has a trailing axis of
    length ``5R + S(R+6)``.
    """
    sats, riss = list(sats), list(riss)
    S, R = len(sats), len(riss)
    if ue.n_sats != S:
        raise DimensionMismatch(f"state has {ue.n_sats} clock biases but {S} satellites were given")
    lay = ObservationLayout(S, R)
    rho = np.zeros(ue.p.shape[:-1] + (lay.dim,))
    ris_delays = []
    for r, ris in enumerate(riss):
        nu, aod, aoa, eps = ris_link_params(ris, ue, ue.b, k, clip)
        rho[..., lay.ris_doppler(r)] = nu
        rho[..., lay.ris_aod(r)] = aod
        rho[..., lay.ris_aoa(r)] = aoa
        ris_delays.append(eps)
    for s, sat in enumerate(sats):
        u, aod, aoa, tau = sat_link_params(sat, ue, s, k, clip)
        rho[..., lay.sat_doppler(s)] = u
        rho[..., lay.sat_aod(s)] = aod
        rho[..., lay.sat_aoa(s)] = aoa
        rho[..., lay.sat_delay(s)] = tau
        for r in range(R):
            rho[..., lay.ris_delay(s, r)] = ris_delays[r][..., s]
    return rho


def wrap_angle(x):
    """Wrap into (-pi, pi]."""
    y = np.mod(np.asarray(x, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    return np.where(y == -np.pi, np.pi, y)
