"""Synthetic world: orbits, UE trajectory, regions, link budgets, IMU and observations."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .channel import (ENVIRONMENTS, ArrayConfig, BeamformingSet, FrameConfig, LinkSnapshot,
                      dbm_to_watt, effective_noise_variance, los_probability, noise_power,
                      ris_amplification, steering_vector, total_path_loss)
from .fim import fim_inverse, observation_fim
from .geometry import (RisState, SatelliteState, WaveConstants, assemble_observation,
                       elevation_angle, sat_ris_known_params, wrap_angle)
from .manifold import UeState, euler_to_rotation, so3_exp, state_boxplus
from .ukf import FilterConfig, ImuMeasurement, Observation, process_function

EARTH_RADIUS = 6_378_137.0
EARTH_MU = 3.986e14
MIN_ELEVATION = np.deg2rad(1.0)

REGIONS = ("rural", "suburban", "urban")
SEGMENTS = ("rural", "suburban", "urban_invisible", "urban_visible")


# ---------------------------------------------------------------- orbits

@dataclass
class OrbitConfig:
    """Circular orbit: height (m), inclination, right ascension of the node and phase (rad)."""

    height: float = 500e3
    inclination: float = 0.9
    raan: float = 0.0
    phase: float = 0.0

    @property
    def radius(self) -> float:
        return EARTH_RADIUS + self.height

    @property
    def mean_motion(self) -> float:
        return float(np.sqrt(EARTH_MU / self.radius ** 3))

    @property
    def period(self) -> float:
        return 2.0 * np.pi / self.mean_motion

    @property
    def speed(self) -> float:
        return float(np.sqrt(EARTH_MU / self.radius))


@dataclass
class Anchor:
    """Geodetic origin of the local east-north-up scene frame (degrees)."""

    lat_deg: float = 43.6
    lon_deg: float = 1.4

    def basis(self):
        lat, lon = np.deg2rad(self.lat_deg), np.deg2rad(self.lon_deg)
        east = np.array([-np.sin(lon), np.cos(lon), 0.0])
        north = np.array([-np.sin(lat) * np.cos(lon), -np.sin(lat) * np.sin(lon), np.cos(lat)])
        up = np.array([np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)])
        return np.vstack([east, north, up]), EARTH_RADIUS * up


def orbit_inertial(orbit: OrbitConfig, t):
    """Earth-centred position and velocity at time ``t`` (s)."""
    u = orbit.phase + orbit.mean_motion * t
    i, om = orbit.inclination, orbit.raan
    node = np.array([np.cos(om), np.sin(om), 0.0])
    perp = np.array([-np.cos(i) * np.sin(om), np.cos(i) * np.cos(om), np.sin(i)])
    r = orbit.radius * (np.cos(u) * node + np.sin(u) * perp)
    v = orbit.radius * orbit.mean_motion * (-np.sin(u) * node + np.cos(u) * perp)
    return r, v


def satellite_state(orbit: OrbitConfig, t: float, anchor: Anchor) -> SatelliteState:
    """Satellite in the scene frame with its array boresight (body x) pointing at nadir."""
    M, origin = anchor.basis()
    r, v = orbit_inertial(orbit, t)
    p, vel = M @ (r - origin), M @ v
    x_axis = -(M @ r) / np.linalg.norm(r)
    y_axis = vel - (vel @ x_axis) * x_axis
    y_axis /= np.linalg.norm(y_axis)
    R = np.column_stack([x_axis, y_axis, np.cross(x_axis, y_axis)])
    return SatelliteState(p, vel, R)


def propagate_satellites(orbits, t: float, anchor: Anchor | None = None) -> list[SatelliteState]:
    if t < 0:
        raise ValueError("time must be nonnegative")
    anchor = anchor or Anchor()
    return [satellite_state(o, t, anchor) for o in orbits]


def orbit_from_look_angles(elevation: float, azimuth: float, heading: float, height: float = 500e3,
                           t_ref: float = 0.0, anchor: Anchor | None = None) -> OrbitConfig:
    """Circular orbit that is seen at (elevation, azimuth from north) at ``t_ref``.

    ``heading`` is the direction of motion over ground, clockwise from north.
    """
    anchor = anchor or Anchor()
    M, origin = anchor.basis()
    a = EARTH_RADIUS + height
    d = M.T @ np.array([np.cos(elevation) * np.sin(azimuth),
                        np.cos(elevation) * np.cos(azimuth), np.sin(elevation)])
    proj = origin @ d
    rng = -proj + np.sqrt(proj ** 2 - (EARTH_RADIUS ** 2 - a ** 2))
    r_hat = (origin + rng * d) / a
    east = np.cross([0.0, 0.0, 1.0], r_hat)
    east /= np.linalg.norm(east)
    north = np.cross(r_hat, east)
    v_hat = np.cos(heading) * north + np.sin(heading) * east
    h = np.cross(r_hat, v_hat)
    inc = float(np.arccos(np.clip(h[2], -1.0, 1.0)))
    raan = float(np.arctan2(h[0], -h[1]))
    node = np.array([np.cos(raan), np.sin(raan), 0.0])
    u_ref = float(np.arctan2(r_hat @ np.cross(h, node), r_hat @ node))
    orbit = OrbitConfig(height, inc, raan, 0.0)
    orbit.phase = float(wrap_angle(u_ref - orbit.mean_motion * t_ref))
    return orbit


# ---------------------------------------------------------------- configuration

@dataclass
class RisConfig:
    position: list = field(default_factory=lambda: [700.0, 25.0, 15.0])
    euler: list = field(default_factory=lambda: [-np.pi / 2, 0.0, 0.0])
    zone: list = field(default_factory=lambda: [[650.0, -50.0], [1000.0, -50.0],
                                                [1000.0, 20.0], [650.0, 20.0]])
    region: str = "urban"

    @property
    def rotation(self):
        return euler_to_rotation(*self.euler)


@dataclass
class MotionSegment:
    """Constant acceleration (m/s^2, global) and body rate (rad/s) from ``start`` step on."""

    start: int
    accel: list
    body_rate: list


def _default_segments():
    return [MotionSegment(0, [0.05, 0.0, 0.0], [0.0, 0.0, 0.01]),
            MotionSegment(15, [0.0, 0.08, 0.0], [0.005, 0.0, -0.01]),
            MotionSegment(30, [0.0, -0.08, 0.0], [0.0, 0.005, 0.0]),
            MotionSegment(45, [-0.05, 0.0, 0.0], [-0.005, 0.0, 0.01])]


@dataclass
class TrajectoryConfig:
    start: list = field(default_factory=lambda: [0.0, 0.0, 1.5])
    velocity: list = field(default_factory=lambda: [15.0, 0.0, 0.0])
    euler: list = field(default_factory=lambda: [0.1, -1.2, 0.05])
    segments: list = field(default_factory=_default_segments)
    # arc length (m) at which the region switches from rural to suburban and suburban to urban
    region_breaks: list = field(default_factory=lambda: [225.0, 450.0])


@dataclass
class ScenarioConfig:
    n_sats: int = 3
    n_ris: int = 1
    n_steps: int = 60
    trials: int = 20
    seed: int = 2024
    n_subcarriers: int = 128
    n_transmissions: int = 8
    bandwidth: float = 240e6
    symbol_duration: float | None = None
    update_interval: float = 1.0
    carrier: float = 12.7e9
    tx_power_dbm: float = 50.0
    ris_power_dbm: float = 0.0
    ris_max_gain_db: float = 40.0
    noise_psd_dbm_hz: float = -174.0
    noise_figure_db: float = 0.0
    sat_array: list = field(default_factory=lambda: [4, 4])
    ris_array: list = field(default_factory=lambda: [20, 20])
    ue_array: list = field(default_factory=lambda: [4, 4])
    element_spacing: float = 5e-3
    accel_std: float = 0.2
    gyro_std_deg: float = 2.0
    clock_bias_range: list = field(default_factory=lambda: [80e-9, 120e-9])
    shadowing: bool = True
    anchor: Anchor = field(default_factory=Anchor)
    orbits: list = field(default_factory=lambda: default_constellation(60.0))
    riss: list = field(default_factory=lambda: [RisConfig()])
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    # initial filter covariance: zero reproduces a known start; otherwise a
    # diagonal of standard deviations [pos m, vel m/s, bias s, rot rad] used
    # both to perturb the initial mean and as P0
    initial_std: list | None = None

    def __post_init__(self):
        if self.n_sats < 1 or self.n_sats > len(self.orbits):
            raise ValueError(f"n_sats must be between 1 and {len(self.orbits)}")
        if self.n_ris < 0 or self.n_ris > len(self.riss):
            raise ValueError(f"n_ris must be between 0 and {len(self.riss)}")
        if self.n_steps < 1:
            raise ValueError("n_steps must be at least 1")
        if self.update_interval <= 0:
            raise ValueError("update_interval must be positive")

    # -- derived objects
    @property
    def wave(self) -> WaveConstants:
        return WaveConstants(self.carrier)

    @property
    def frame(self) -> FrameConfig:
        return FrameConfig(self.n_subcarriers, self.n_transmissions, self.bandwidth, self.symbol_duration)

    def arrays(self):
        d = self.element_spacing
        return (ArrayConfig(*self.sat_array, d), ArrayConfig(*self.ris_array, d),
                ArrayConfig(*self.ue_array, d))

    @property
    def active_orbits(self):
        return self.orbits[: self.n_sats]

    @property
    def active_riss(self):
        return self.riss[: self.n_ris]

    def ris_states(self, riss=None) -> list[RisState]:
        riss = self.active_riss if riss is None else riss
        return [RisState(np.asarray(r.position, dtype=float), r.rotation) for r in riss]

    def filter_config(self, **overrides) -> FilterConfig:
        kw = dict(accel_cov=self.accel_std ** 2 * np.eye(3),
                  gyro_cov=np.deg2rad(self.gyro_std_deg) ** 2 * np.eye(3),
                  dt=self.update_interval)
        kw.update(overrides)
        return FilterConfig(**kw)

    # -- serialization
    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        data = dict(data)
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        if "anchor" in data:
            data["anchor"] = Anchor(**data["anchor"])
        if "orbits" in data:
            data["orbits"] = [OrbitConfig(**o) for o in data["orbits"]]
        if "riss" in data:
            data["riss"] = [RisConfig(**r) for r in data["riss"]]
        if "trajectory" in data:
            traj = dict(data["trajectory"])
            if "segments" in traj:
                traj["segments"] = [MotionSegment(**s) for s in traj["segments"]]
            data["trajectory"] = TrajectoryConfig(**traj)
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def default_constellation(t_ref: float, anchor: Anchor | None = None) -> list[OrbitConfig]:
    """Five satellites spread over the sky at ``t_ref`` seconds."""
    looks = [(70, 30, 100), (55, 150, 20), (50, 260, 190), (75, 200, 300), (45, 330, 240)]
    return [orbit_from_look_angles(np.deg2rad(el), np.deg2rad(az), np.deg2rad(hd), 500e3, t_ref, anchor)
            for el, az, hd in looks]


def desk_scenario(**overrides) -> ScenarioConfig:
    """Small profile: S=3, R=1, K=128, G=8, 60 steps, 20 trials."""
    return ScenarioConfig(**overrides)


def full_scenario(**overrides) -> ScenarioConfig:
    """Full profile: S=5, R=2, K=3000, G=32, 180 steps."""
    second = RisConfig(position=[1450.0, -25.0, 15.0], euler=[np.pi / 2, 0.0, 0.0],
                       zone=[[1350.0, -20.0], [1900.0, -20.0], [1900.0, 50.0], [1350.0, 50.0]])
    traj = TrajectoryConfig(
        segments=[MotionSegment(0, [0.05, 0.0, 0.0], [0.0, 0.0, 0.01]),
                  MotionSegment(45, [0.0, 0.05, 0.0], [0.005, 0.0, -0.01]),
                  MotionSegment(90, [0.0, -0.05, 0.0], [0.0, 0.005, 0.0]),
                  MotionSegment(135, [-0.03, 0.0, 0.0], [-0.005, 0.0, 0.01])],
        region_breaks=[675.0, 1350.0])
    first = RisConfig(position=[1000.0, 25.0, 15.0],
                      zone=[[900.0, -50.0], [1300.0, -50.0], [1300.0, 20.0], [900.0, 20.0]])
    kw = dict(n_sats=5, n_ris=2, n_subcarriers=3000, n_transmissions=32, n_steps=180,
              orbits=default_constellation(180.0), riss=[first, second], trajectory=traj)
    kw.update(overrides)
    return ScenarioConfig(**kw)


# ---------------------------------------------------------------- trajectory

@dataclass
class TruthTrajectory:
    states: list                 # n_steps + 1 UeStates
    accels: np.ndarray           # (n_steps, 3)
    rotations: np.ndarray        # (n_steps, 3, 3)
    regions: list                # region per state
    segments: list               # rural | suburban | urban_invisible | urban_visible, per state
    visible: np.ndarray          # (n_states, n_ris_configured) bool

    def __len__(self):
        return len(self.states)


def point_in_polygon(point, polygon) -> bool:
    """Even-odd rule on the x-y projection."""
    x, y = point[0], point[1]
    inside = False
    poly = np.asarray(polygon, dtype=float)
    for (x1, y1), (x2, y2) in zip(poly, np.roll(poly, -1, axis=0)):
        if (y1 > y) != (y2 > y):
            x_cross = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < x_cross:
                inside = not inside
    return inside


def ris_visible(ris: RisConfig, p) -> bool:
    normal = ris.rotation[:, 0]
    front = (np.asarray(p) - np.asarray(ris.position)) @ normal > 0
    return bool(front and point_in_polygon(p, ris.zone))


def region_at(arc_length: float, breaks) -> str:
    if arc_length < breaks[0]:
        return "rural"
    if arc_length < breaks[1]:
        return "suburban"
    return "urban"


def segment_label(region: str, visible) -> str:
    if region != "urban":
        return region
    return "urban_visible" if np.any(visible) else "urban_invisible"


def generate_trajectory(config: ScenarioConfig, n_steps: int | None = None,
                        biases=None) -> TruthTrajectory:
    """Deterministic truth from piecewise-constant acceleration and body rate."""
    n_steps = config.n_steps if n_steps is None else n_steps
    if n_steps < 1:
        raise ValueError("need at least one step")
    tc = config.trajectory
    dt = config.update_interval
    b = np.zeros(config.n_sats) if biases is None else np.asarray(biases, dtype=float)
    state = UeState(np.asarray(tc.start, float), np.asarray(tc.velocity, float), b,
                    euler_to_rotation(*tc.euler))
    segs = sorted(tc.segments, key=lambda s: s.start)
    accels = np.zeros((n_steps, 3))
    rots = np.zeros((n_steps, 3, 3))
    states = [state]
    for n in range(n_steps):
        seg = [s for s in segs if s.start <= n]
        accel = np.asarray(seg[-1].accel if seg else [0, 0, 0], dtype=float)
        rate = np.asarray(seg[-1].body_rate if seg else [0, 0, 0], dtype=float)
        accels[n] = accel
        rots[n] = so3_exp(rate * dt)
        state = process_function(state, accel, rots[n], dt)
        states.append(state)

    arc = np.concatenate([[0.0], np.cumsum([np.linalg.norm(b.p - a.p) for a, b in zip(states, states[1:])])])
    regions = [region_at(s, tc.region_breaks) for s in arc]
    visible = np.array([[ris_visible(r, st.p) for r in config.riss] for st in states], dtype=bool)
    visible = visible.reshape(len(states), len(config.riss))
    segments = [segment_label(reg, vis) for reg, vis in zip(regions, visible)]
    return TruthTrajectory(states, accels, rots, regions, segments, visible)


def with_biases(traj: TruthTrajectory, biases) -> TruthTrajectory:
    b = np.asarray(biases, dtype=float)
    states = [UeState(s.p, s.v, b.copy(), s.R) for s in traj.states]
    return dataclasses.replace(traj, states=states)


def synthesize_imu(traj: TruthTrajectory, accel_cov, gyro_cov, rng) -> list[ImuMeasurement]:
    accel_cov = np.asarray(accel_cov, dtype=float)
    gyro_cov = np.asarray(gyro_cov, dtype=float)
    out = []
    for a, Om in zip(traj.accels, traj.rotations):
        da = rng.multivariate_normal(np.zeros(3), accel_cov, method="eigh")
        dw = rng.multivariate_normal(np.zeros(3), gyro_cov, method="eigh")
        out.append(ImuMeasurement(a + da, Om @ so3_exp(dw)))
    return out


# ---------------------------------------------------------------- link snapshots

def build_snapshot(config: ScenarioConfig, t: float, ue: UeState, region: str, rng,
                   environment: str | None = None, beams: BeamformingSet | None = None,
                   shadowing: bool | None = None,
                   random_phases: bool = True) -> tuple[LinkSnapshot, list, list]:
    """Per-interval channel realization: gains, beams, RIS profiles and noise levels.

    ``environment`` overrides the radio environment (default: the truth region);
    RIS legs use the environment of the region the RIS is installed in unless
    overridden.  With given ``beams``, ``shadowing=False`` and
    ``random_phases=False`` the result is deterministic and ``rng`` is unused.
    Returns the snapshot plus the satellite and RIS states used.
    """
    wave, frame = config.wave, config.frame
    sat_arr, ris_arr, ue_arr = config.arrays()
    S, R, G = config.n_sats, config.n_ris, frame.n_transmissions
    f_ghz = config.carrier / 1e9
    lam = wave.wavelength
    shadowing = config.shadowing if shadowing is None else shadowing
    env = ENVIRONMENTS[environment or region]

    sats = propagate_satellites(config.active_orbits, t, config.anchor)
    ris_cfgs = config.active_riss
    riss = config.ris_states(ris_cfgs)
    if beams is None:
        beams = BeamformingSet.random(rng, S, G, sat_arr.size, ue_arr.size, frame.n_subcarriers,
                                      R, ris_arr.size)

    def phase():
        return np.exp(1j * rng.uniform(0.0, 2.0 * np.pi)) if random_phases else 1.0

    def draw_x():
        return rng.standard_normal() if shadowing else 0.0

    p_tx = float(dbm_to_watt(config.tx_power_dbm))
    p_ris = float(dbm_to_watt(config.ris_power_dbm))
    sigma2 = noise_power(config.bandwidth, config.noise_figure_db, config.noise_psd_dbm_hz)

    # direct satellite-UE legs
    direct = np.zeros(S, dtype=complex)
    direct_ls = np.zeros(S)
    for s, sat in enumerate(sats):
        el = max(float(elevation_angle(sat, ue)), MIN_ELEVATION)
        pl = total_path_loss(np.linalg.norm(sat.p - ue.p), f_ghz, el, env, draw_x())
        direct_ls[s] = 10.0 ** (-pl / 20.0)
        direct[s] = los_probability(el, env) * direct_ls[s] * phase()

    # satellite-RIS and RIS-UE legs
    legs = [[sat_ris_known_params(sat, ris, wave) for ris in riss] for sat in sats]
    sat_ris = np.zeros((S, R), dtype=complex)
    ris_ue = np.zeros(R, dtype=complex)
    ris_ue_ls = np.zeros(R)
    amp = np.ones(R)
    for r, (rc, ris) in enumerate(zip(ris_cfgs, riss)):
        renv = ENVIRONMENTS[environment or rc.region]
        incident = 0.0
        for s, sat in enumerate(sats):
            proxy = UeState(ris.p, np.zeros(3), np.zeros(1), ris.R)
            el = max(float(elevation_angle(sat, proxy)), MIN_ELEVATION)
            pl = total_path_loss(np.linalg.norm(sat.p - ris.p), f_ghz, el, renv, draw_x())
            sat_ris[s, r] = los_probability(el, renv) * 10.0 ** (-pl / 20.0) * phase()
            incident += p_tx * abs(sat_ris[s, r]) ** 2 * ris_arr.size
        amp[r] = ris_amplification(p_ris, incident, ris_arr.size, config.ris_max_gain_db)
        if ris_visible(rc, ue.p):
            d = ris.p - ue.p
            el = max(float(np.arcsin(abs(d[2]) / np.linalg.norm(d))), MIN_ELEVATION)
            pl = total_path_loss(np.linalg.norm(d), f_ghz, el, ENVIRONMENTS[rc.region], draw_x(),
                                 terrestrial=True)
            ris_ue_ls[r] = 10.0 ** (-pl / 20.0)
            ris_ue[r] = ris_ue_ls[r] * phase()

    gains = np.zeros((S, R + 1), dtype=complex)
    gains[:, 0] = direct
    gains[:, 1:] = sat_ris * ris_ue[None, :]

    M_R = ris_arr.size
    ris_vectors = np.zeros((S, R, G, M_R), dtype=complex)
    sat_ris_tx = np.zeros((S, R, G), dtype=complex)
    for s in range(S):
        for r in range(R):
            gamma = amp[r] * beams.ris_phases[r]                         # (G, M_R)
            ris_vectors[s, r] = gamma * steering_vector(ris_arr, legs[s][r].aoa, lam)
            sat_ris_tx[s, r] = beams.precoders[s] @ steering_vector(sat_arr, legs[s][r].aod, lam)

    noise = np.zeros((S, G))
    for s in range(S):
        for g in range(G):
            terms = [(sat_ris[s, r] * sat_ris_tx[s, r, g] * ris_vectors[s, r, g], ris_ue_ls[r], None)
                     for r in range(R)]
            noise[s, g] = effective_noise_variance(
                p_tx, 1.0, beams.combiners[s, g], beams.precoders[s, g], env.k_factor, sigma2,
                direct_gain=direct_ls[s], ris_terms=terms)

    snap = LinkSnapshot(wave, frame, sat_arr, ris_arr, ue_arr, beams, np.full(S, p_tx), env.k_factor,
                        gains, legs, ris_vectors, sat_ris_tx, noise,
                        meta={"region": region, "environment": env.name, "ris_amplitude": amp,
                              "sigma2": sigma2})
    return snap, sats, riss


def _symmetric_factor(cov):
    d = np.sqrt(np.diagonal(cov))
    S = cov / np.outer(d, d)
    vals, vecs = np.linalg.eigh(0.5 * (S + S.T))
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) * d[:, None]


def synthesize_observation(ue: UeState, snapshot: LinkSnapshot, sats, riss, rng,
                           region: str | None = None, fim_method: str = "structured") -> Observation:
    """``h(ue)`` plus Gaussian error with the inverse-FIM covariance (efficient estimator)."""
    wave = snapshot.wave
    rho = assemble_observation(ue, sats, riss, wave)
    cov = fim_inverse(observation_fim(snapshot, rho, fim_method))
    noise = _symmetric_factor(cov.cov) @ rng.standard_normal(rho.size)
    value = rho + noise
    az = snapshot.layout.azimuth_indices
    value[az] = wrap_angle(value[az])
    return Observation(value, cov.active, snapshot, sats, riss, wave, cov.cov, region)


# ---------------------------------------------------------------- trial world

@dataclass
class TrialWorld:
    """Everything every filter variant of one Monte Carlo trial shares."""

    truth: TruthTrajectory
    imu: list
    observations: list
    filter_regions: list

    @property
    def timeline(self):
        return list(zip(self.imu, self.observations))


def trial_rng(root_seed: int, trial: int, stream: int) -> np.random.Generator:
    """Independent stream ``stream`` of trial ``trial`` (counter-based spawn key)."""
    return np.random.default_rng(np.random.SeedSequence(root_seed, spawn_key=(trial, stream)))


STREAM_CLOCK, STREAM_IMU, STREAM_CHANNEL, STREAM_NOISE, STREAM_INIT = range(5)


def filter_region(config: ScenarioConfig, segment: str, visible) -> str:
    """Belief-regularization label: RIS-visible only counts for RISs that are deployed."""
    if segment.startswith("urban"):
        active_vis = np.asarray(visible)[: config.n_ris]
        return "urban_visible" if np.any(active_vis) else "urban_invisible"
    return segment


def build_world(config: ScenarioConfig, trial: int, fim_method: str = "structured") -> TrialWorld:
    lo, hi = config.clock_bias_range
    biases = trial_rng(config.seed, trial, STREAM_CLOCK).uniform(lo, hi, config.n_sats)
    truth = generate_trajectory(config, biases=biases)
    fc = config.filter_config()
    imu = synthesize_imu(truth, fc.accel_cov, fc.gyro_cov, trial_rng(config.seed, trial, STREAM_IMU))
    ch_rng = trial_rng(config.seed, trial, STREAM_CHANNEL)
    ob_rng = trial_rng(config.seed, trial, STREAM_NOISE)
    observations, fregions = [], []
    for n in range(1, len(truth.states)):
        ue = truth.states[n]
        fr = filter_region(config, truth.segments[n], truth.visible[n])
        snap, sats, riss = build_snapshot(config, n * config.update_interval, ue, truth.regions[n], ch_rng)
        observations.append(synthesize_observation(ue, snap, sats, riss, ob_rng, fr, fim_method))
        fregions.append(fr)
    return TrialWorld(truth, imu, observations, fregions)


def initial_estimate(config: ScenarioConfig, truth0: UeState, trial: int):
    """Initial mean and tangent covariance.

    Without ``initial_std`` the filter starts at the true state with zero
    covariance; otherwise the mean is perturbed by a draw from the stated
    diagonal covariance, which is also returned as P0.
    """
    S = truth0.n_sats
    if config.initial_std is None:
        return truth0, np.zeros((S + 9, S + 9))
    sp, sv, sb, sr = config.initial_std
    std = np.concatenate([np.full(3, sp), np.full(3, sv), np.full(S, sb), np.full(3, sr)])
    P0 = np.diag(std ** 2)
    delta = trial_rng(config.seed, trial, STREAM_INIT).standard_normal(S + 9) * std
    return state_boxplus(truth0, delta), P0
