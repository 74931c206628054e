"""Radio environment and LOS signal model.

Covers array responses, the large-scale link budget (free-space loss, shadow
fading, clutter, gaseous absorption, scintillation), LOS probability, active
RIS amplification, the aggregated NLOS-plus-thermal noise variance and the
noise-free LOS received samples used by the Fisher information.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import IndexOutOfRange
from .geometry import KnownLegParams, ObservationLayout, WaveConstants

BOLTZMANN_PSD_DBM_HZ = -174.0


@dataclass(frozen=True)
class ArrayConfig:
    """Uniform planar array in the node's body y-z plane, boresight along body +x."""

    rows: int = 4
    cols: int = 4
    spacing: float = 5e-3

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("array dimensions must be positive")
        if self.spacing <= 0:
            raise ValueError("element spacing must be positive")

    @property
    def size(self) -> int:
        return self.rows * self.cols

    def element_indices(self):
        m, n = np.meshgrid(np.arange(self.rows), np.arange(self.cols), indexing="ij")
        return m.ravel().astype(float), n.ravel().astype(float)


def _array_phase_terms(array: ArrayConfig, angles, wavelength):
    angles = np.asarray(angles, dtype=float)
    az, el = angles[..., 0:1], angles[..., 1:2]
    m, n = array.element_indices()
    kd = 2.0 * np.pi * array.spacing / wavelength
    return kd, m, n, az, el


def steering_vector(array: ArrayConfig, angles, wavelength: float) -> np.ndarray:
    """Unit-modulus response ``exp(j k d (m cos(el) sin(az) + n sin(el)))``.

    ``angles`` has a trailing ``(az, el)`` axis; the output replaces it with
    the element axis of length ``rows * cols``.
    """
    kd, m, n, az, el = _array_phase_terms(array, angles, wavelength)
    return np.exp(1j * kd * (m * np.cos(el) * np.sin(az) + n * np.sin(el)))


def steering_derivatives(array: ArrayConfig, angles, wavelength: float):
    """Analytic derivatives of :func:`steering_vector` w.r.t. azimuth and elevation."""
    kd, m, n, az, el = _array_phase_terms(array, angles, wavelength)
    a = np.exp(1j * kd * (m * np.cos(el) * np.sin(az) + n * np.sin(el)))
    d_az = 1j * kd * (m * np.cos(el) * np.cos(az)) * a
    d_el = 1j * kd * (-m * np.sin(el) * np.sin(az) + n * np.cos(el)) * a
    return d_az, d_el


# ---------------------------------------------------------------- environment

_LOS_ELEVATIONS = np.arange(10.0, 91.0, 10.0)
_LOS_OPEN = np.array([78.2, 86.9, 91.9, 92.9, 93.5, 94.0, 94.9, 95.2, 99.8]) / 100
_LOS_URBAN = np.array([24.6, 38.6, 49.3, 61.3, 72.6, 80.5, 91.9, 96.8, 99.2]) / 100


@dataclass(frozen=True)
class EnvironmentParams:
    name: str
    k_factor_db: float
    v_sigma: float
    v_theta: float
    los_elevations_deg: np.ndarray = field(default_factory=lambda: _LOS_ELEVATIONS)
    los_probabilities: np.ndarray = field(default_factory=lambda: _LOS_OPEN)
    clutter_loss_db: float = 0.0
    scintillation_db: float = 0.5

    @property
    def k_factor(self) -> float:
        return 10.0 ** (self.k_factor_db / 10.0)

    def __post_init__(self):
        p = np.asarray(self.los_probabilities, dtype=float)
        if np.any((p < 0) | (p > 1)) or np.any(np.diff(p) < 0):
            raise ValueError("LOS probabilities must lie in [0, 1] and be nondecreasing")


ENVIRONMENTS = {
    "rural": EnvironmentParams("rural", 3.0, 1.40, 1.00, los_probabilities=_LOS_OPEN),
    "suburban": EnvironmentParams("suburban", 2.6, 1.45, 0.85, los_probabilities=_LOS_OPEN),
    "urban": EnvironmentParams("urban", 1.85, 0.10, 0.00, los_probabilities=_LOS_URBAN),
}


class AtmosphericTable:
    """Bilinear lookup of gaseous absorption (dB) over frequency (GHz) and elevation (deg).

    Inputs outside the tabulated range are clamped to the nearest edge.
    """

    def __init__(self, freqs_ghz, elevations_deg, loss_db):
        self.freqs = np.asarray(freqs_ghz, dtype=float)
        self.elevations = np.asarray(elevations_deg, dtype=float)
        self.loss = np.asarray(loss_db, dtype=float)
        self._interp = RegularGridInterpolator((self.freqs, self.elevations), self.loss)

    @classmethod
    def from_csv(cls, path=None) -> "AtmosphericTable":
        if path is None:
            text = resources.files("leoris.data").joinpath("atmospheric_absorption.csv").read_text()
            rows = list(csv.DictReader(text.splitlines()))
        else:
            with open(path, newline="") as fh:
                rows = list(csv.DictReader(fh))
        f = np.array([float(r["frequency_GHz"]) for r in rows])
        e = np.array([float(r["elevation_deg"]) for r in rows])
        loss = np.array([float(r["loss_dB"]) for r in rows])
        freqs, elevs = np.unique(f), np.unique(e)
        grid = np.full((freqs.size, elevs.size), np.nan)
        grid[np.searchsorted(freqs, f), np.searchsorted(elevs, e)] = loss
        if np.isnan(grid).any():
            raise ValueError("atmospheric table must be a full frequency x elevation grid")
        return cls(freqs, elevs, grid)

    def __call__(self, f_ghz, elevation_rad):
        f = np.clip(f_ghz, self.freqs[0], self.freqs[-1])
        e = np.clip(np.degrees(elevation_rad), self.elevations[0], self.elevations[-1])
        f, e = np.broadcast_arrays(f, e)
        out = self._interp(np.stack([f.ravel(), e.ravel()], axis=-1))
        return out.reshape(f.shape) if f.ndim else float(out[0])


_DEFAULT_ATMOSPHERE = None


def default_atmosphere() -> AtmosphericTable:
    global _DEFAULT_ATMOSPHERE
    if _DEFAULT_ATMOSPHERE is None:
        _DEFAULT_ATMOSPHERE = AtmosphericTable.from_csv()
    return _DEFAULT_ATMOSPHERE


def fspl_db(d, f_ghz):
    """Free-space path loss with ``d`` in metres and ``f_ghz`` in GHz."""
    return 32.45 + 20.0 * np.log10(d) + 20.0 * np.log10(f_ghz)


def shadow_fading_db(x, elevation_rad, env: EnvironmentParams):
    return x * (env.v_sigma + env.v_theta * np.log10(elevation_rad))


def total_path_loss(d, f_ghz, elevation_rad, env: EnvironmentParams, x=0.0,
                    atmosphere: AtmosphericTable | None = None, terrestrial: bool = False):
    """Large-scale loss in dB.

    Satellite legs add clutter (zero under LOS), gaseous absorption and
    scintillation on top of FSPL and shadow fading; ``terrestrial`` keeps
    only FSPL and shadow fading (RIS-UE leg).
    """
    if np.any(np.asarray(d) <= 0) or np.any(np.asarray(f_ghz) <= 0):
        raise ValueError("distance and frequency must be positive")
    pl = fspl_db(d, f_ghz) + shadow_fading_db(x, elevation_rad, env)
    if terrestrial:
        return pl
    atmosphere = atmosphere or default_atmosphere()
    return pl + env.clutter_loss_db + atmosphere(f_ghz, elevation_rad) + env.scintillation_db


def los_probability(elevation_rad, env: EnvironmentParams):
    """Linear interpolation of the LOS table in degrees, clamped at the table ends."""
    return np.interp(np.degrees(elevation_rad), env.los_elevations_deg, env.los_probabilities)


def expected_gain_amplitude(pl_db, p_los):
    if np.any((np.asarray(p_los) < 0) | (np.asarray(p_los) > 1)):
        raise ValueError("LOS probability must lie in [0, 1]")
    return p_los * 10.0 ** (-np.asarray(pl_db) / 20.0)


def ris_amplification(p_ris, incident_power, n_elements, max_gain_db=40.0):
    """Uniform amplitude gain of an active RIS.

    ``incident_power`` is the total power impinging on the ``n_elements``
    elements; the reflected power is kept below ``incident + p_ris`` and the
    amplitude is capped at ``max_gain_db``.
    """
    if n_elements < 1:
        raise ValueError("RIS needs at least one element")
    cap = 10.0 ** (max_gain_db / 20.0)
    if incident_power <= 0:
        return cap if p_ris > 0 else 1.0
    return float(min(np.sqrt(1.0 + p_ris / incident_power), cap))


def dbm_to_watt(x_dbm):
    return 10.0 ** ((np.asarray(x_dbm, dtype=float) - 30.0) / 10.0)


def noise_power(bandwidth, noise_figure_db=0.0, psd_dbm_hz=BOLTZMANN_PSD_DBM_HZ):
    return float(dbm_to_watt(psd_dbm_hz + 10.0 * np.log10(bandwidth) + noise_figure_db))


def effective_noise_variance(tx_power, pilot_abs2, w, f, k_factor, sigma2,
                             direct_gain=1.0, ris_terms=(), theta_ue=None, theta_sat=None):
    """NLOS-plus-thermal variance of one received sample.

    ``ris_terms`` is a sequence of ``(vector, large_scale_gain, theta_ris)``
    where ``vector`` is ``Gamma_r H_sr f`` for that RIS.  ``direct_gain`` and
    each ``large_scale_gain`` are the amplitudes of the large-scale loss of the
    diffuse leg reaching the UE; with unit values the classic unattenuated
    form is recovered.
    """
    if k_factor <= 0:
        raise ValueError("Rician factor must be positive (linear)")
    if np.isinf(k_factor):
        return float(sigma2)

    def qnorm(theta, x):
        x = np.asarray(x)
        if theta is None:
            return float(np.vdot(x, x).real)
        return float(np.vdot(x, theta @ x).real)

    diffuse = abs(direct_gain) ** 2 * qnorm(theta_sat, f)
    for vec, gain, theta_r in ris_terms:
        diffuse += abs(gain) ** 2 * qnorm(theta_r, vec)
    return float(tx_power * pilot_abs2 * qnorm(theta_ue, w) * diffuse / (k_factor + 1.0) + sigma2)


# ---------------------------------------------------------------- LOS signal

@dataclass(frozen=True)
class BeamformingSet:
    """Random analog beams, one draw per pilot transmission.

    ``precoders[s, g]`` and ``combiners[s, g]`` are unit-norm; ``ris_phases[r, g]``
    holds unit-modulus RIS phase profiles; ``pilots[s, k]`` are unit-modulus symbols.
    """

    precoders: np.ndarray   # (S, G, M_s)
    combiners: np.ndarray   # (S, G, M)
    pilots: np.ndarray      # (S, K)
    ris_phases: np.ndarray  # (R, G, M_R)

    @classmethod
    def random(cls, rng, n_sats, n_transmissions, sat_elements, ue_elements,
               n_subcarriers, n_ris=0, ris_elements=1):
        def unit(shape):
            z = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
            return z / np.linalg.norm(z, axis=-1, keepdims=True)

        def phases(shape):
            return np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, shape))

        G = n_transmissions
        return cls(unit((n_sats, G, sat_elements)), unit((n_sats, G, ue_elements)),
                   phases((n_sats, n_subcarriers)), phases((n_ris, G, ris_elements)))

    def subset(self, n_sats: int, n_transmissions: int, n_subcarriers: int, n_ris: int | None = None):
        """Leading satellites, transmissions, subcarriers and RISs of a larger draw."""
        S, G, K = n_sats, n_transmissions, n_subcarriers
        R = self.ris_phases.shape[0] if n_ris is None else n_ris
        if S > self.precoders.shape[0] or G > self.precoders.shape[1] or K > self.pilots.shape[1] \
                or R > self.ris_phases.shape[0]:
            raise ValueError("subset larger than the beam draw")
        return BeamformingSet(self.precoders[:S, :G], self.combiners[:S, :G], self.pilots[:S, :K],
                              self.ris_phases[:R, :G])


@dataclass(frozen=True)
class FrameConfig:
    n_subcarriers: int = 128
    n_transmissions: int = 8
    bandwidth: float = 240e6
    symbol_duration: float | None = None  # defaults to K / B

    def __post_init__(self):
        if self.n_subcarriers < 1 or self.n_transmissions < 1 or self.bandwidth <= 0:
            raise ValueError("frame needs K >= 1, G >= 1 and a positive bandwidth")

    @property
    def subcarrier_spacing(self) -> float:
        return self.bandwidth / self.n_subcarriers

    @property
    def symbol_time(self) -> float:
        return self.symbol_duration if self.symbol_duration is not None else 1.0 / self.subcarrier_spacing


@dataclass
class LinkSnapshot:
    """Everything the LOS signal model needs for one update interval.

    ``path_gains[s, 0]`` is the direct gain of satellite ``s`` and
    ``path_gains[s, 1 + r]`` the cascaded gain through RIS ``r``.
    ``ris_vectors[s, r, g]`` is ``Gamma_r(g) a_R(AoA of the satellite-RIS leg)``
    and ``sat_ris_tx[s, r, g]`` the precoded satellite response toward RIS ``r``.
    ``noise_var[s, g]`` is the effective noise variance of every subcarrier of
    transmission ``g``.
    """

    wave: WaveConstants
    frame: FrameConfig
    sat_array: ArrayConfig
    ris_array: ArrayConfig
    ue_array: ArrayConfig
    beams: BeamformingSet
    tx_power: np.ndarray
    k_factor: float
    path_gains: np.ndarray
    known_legs: list
    ris_vectors: np.ndarray
    sat_ris_tx: np.ndarray
    noise_var: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_sats(self) -> int:
        return self.path_gains.shape[0]

    @property
    def n_ris(self) -> int:
        return self.path_gains.shape[1] - 1

    @property
    def layout(self) -> ObservationLayout:
        return ObservationLayout(self.n_sats, self.n_ris)

    @property
    def amplitude_prefactor(self) -> np.ndarray:
        kf = self.k_factor
        return np.sqrt(kf * np.asarray(self.tx_power, dtype=float) / (kf + 1.0))

    def transmission_index(self, transmissions=None) -> np.ndarray:
        if transmissions is None:
            return np.arange(self.frame.n_transmissions)
        idx = np.asarray(transmissions, dtype=int)
        if np.any((idx < 0) | (idx >= self.frame.n_transmissions)):
            raise IndexOutOfRange("transmission index out of range")
        return idx

    def path_parameters(self, rho, s):
        """Per-path (Doppler, delay) of satellite ``s`` from observation vector(s)."""
        lay = self.layout
        rho = np.asarray(rho, dtype=float)
        R = self.n_ris
        dop = np.empty(rho.shape[:-1] + (R + 1,))
        dly = np.empty_like(dop)
        dop[..., 0] = rho[..., lay.sat_doppler(s)]
        dly[..., 0] = rho[..., lay.sat_delay(s)]
        for r in range(R):
            leg: KnownLegParams = self.known_legs[s][r]
            dop[..., 1 + r] = rho[..., lay.ris_doppler(r)] + leg.doppler
            dly[..., 1 + r] = rho[..., lay.ris_delay(s, r)] + leg.delay
        return dop, dly

    def array_factors(self, rho, s, transmissions=None, derivatives: bool = False):
        """Beamformed scalar responses ``c[..., g, p]`` of each path and transmission.

        With ``derivatives`` also returns ``dc[..., g, p, j]`` for
        j = (AoD az, AoD el, AoA az, AoA el) of that path.
        """
        lay = self.layout
        lam = self.wave.wavelength
        rho = np.asarray(rho, dtype=float)
        g = self.transmission_index(transmissions)
        w = self.beams.combiners[s, g].conj()        # (G, M)
        fs = self.beams.precoders[s, g]               # (G, M_s)
        R = self.n_ris
        lead = rho.shape[:-1]

        c = np.empty(lead + (g.size, R + 1), dtype=complex)
        dc = np.zeros(lead + (g.size, R + 1, 4), dtype=complex) if derivatives else None

        def project(vec, beams):
            # vec (..., M) against per-transmission beams (G, M) -> (..., G)
            return np.einsum("...m,gm->...g", vec, beams)

        aod, aoa = rho[..., lay.sat_aod(s)], rho[..., lay.sat_aoa(s)]
        tx = project(steering_vector(self.sat_array, aod, lam), fs)
        rx = project(steering_vector(self.ue_array, aoa, lam), w)
        c[..., 0] = tx * rx
        if derivatives:
            for j, da in enumerate(steering_derivatives(self.sat_array, aod, lam)):
                dc[..., 0, j] = project(da, fs) * rx
            for j, da in enumerate(steering_derivatives(self.ue_array, aoa, lam)):
                dc[..., 0, 2 + j] = tx * project(da, w)

        for r in range(R):
            aod, aoa = rho[..., lay.ris_aod(r)], rho[..., lay.ris_aoa(r)]
            vec = self.ris_vectors[s, r, g]           # (G, M_R)
            tail = self.sat_ris_tx[s, r, g]           # (G,)
            refl = project(steering_vector(self.ris_array, aod, lam), vec)
            rx = project(steering_vector(self.ue_array, aoa, lam), w)
            c[..., 1 + r] = refl * rx * tail
            if derivatives:
                for j, da in enumerate(steering_derivatives(self.ris_array, aod, lam)):
                    dc[..., 1 + r, j] = project(da, vec) * rx * tail
                for j, da in enumerate(steering_derivatives(self.ue_array, aoa, lam)):
                    dc[..., 1 + r, 2 + j] = refl * project(da, w) * tail
        return (c, dc) if derivatives else c

    def sample_times(self, transmissions=None):
        return self.transmission_index(transmissions) * self.frame.symbol_time

    def subcarrier_freqs(self):
        return np.arange(1, self.frame.n_subcarriers + 1) * self.frame.subcarrier_spacing


def los_samples(snap: LinkSnapshot, rho, s: int, gains=None, transmissions=None) -> np.ndarray:
    """Noise-free LOS samples of satellite ``s`` stacked transmission-major.

    ``gains`` overrides ``snap.path_gains[s]``, which is how nuisance
    perturbations enter.  Output shape ``(..., G*K)``.
    """
    gains = snap.path_gains[s] if gains is None else np.asarray(gains)
    c = snap.array_factors(rho, s, transmissions)                       # (..., G, P)
    dop, dly = snap.path_parameters(rho, s)
    t = snap.sample_times(transmissions)
    fk = snap.subcarrier_freqs()
    # Doppler and delay phases stay separate factors so a small Doppler
    # perturbation is not swamped by rounding of the large delay phase
    tphase = np.exp(2j * np.pi * t[:, None] * dop[..., None, :])        # (..., G, P)
    fphase = np.exp(-2j * np.pi * fk[:, None] * dly[..., None, :])      # (..., K, P)
    sig = np.einsum("...gp,...kp,...gp->...gk", tphase, fphase, gains * c)
    sig = sig * snap.beams.pilots[s] * snap.amplitude_prefactor[s]
    return sig.reshape(sig.shape[:-2] + (-1,))


def noise_free_rx(snap: LinkSnapshot, rho, g: int, k: int, s: int) -> complex:
    """LOS sample of satellite ``s`` at transmission ``g`` and subcarrier ``k`` (both 1-based)."""
    G, K = snap.frame.n_transmissions, snap.frame.n_subcarriers
    if not (1 <= g <= G and 1 <= k <= K):
        raise IndexOutOfRange(f"(g={g}, k={k}) outside 1..{G} x 1..{K}")
    if not 0 <= s < snap.n_sats:
        raise IndexOutOfRange(f"satellite index {s} out of range")
    return complex(los_samples(snap, rho, s, transmissions=[g - 1])[k - 1])
