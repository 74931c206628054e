import dataclasses

import numpy as np
import pytest

import leoris.scenario as sc
from leoris.experiment import reference_step
from leoris.geometry import assemble_observation
from leoris.manifold import orthonormality_error, so3_exp, so3_log
from leoris.scenario import (Anchor, MotionSegment, OrbitConfig, RisConfig, ScenarioConfig,
                             TrajectoryConfig, build_snapshot, build_world, desk_scenario,
                             generate_trajectory, orbit_from_look_angles, orbit_inertial,
                             point_in_polygon, propagate_satellites, ris_visible, synthesize_imu,
                             synthesize_observation, trial_rng)


def is_rotation(R):
    return orthonormality_error(R) < 1e-9 and np.linalg.det(R) > 0


def test_orbit_period_and_speed_at_500km():
    orbit = OrbitConfig(height=500e3)
    assert orbit.period == pytest.approx(5677.0, rel=1e-3)
    assert orbit.speed == pytest.approx(7613.0, rel=1e-3)
    r, v = orbit_inertial(orbit, 1234.5)
    assert np.linalg.norm(r) == pytest.approx(orbit.radius, rel=1e-12)
    assert np.linalg.norm(v) == pytest.approx(orbit.speed, rel=1e-12)
    assert abs(r @ v) < 1e-6 * orbit.radius * orbit.speed


def test_orbit_phase_at_time_zero():
    orbit = OrbitConfig(height=500e3, inclination=0.0, raan=0.0, phase=0.7)
    r, _ = orbit_inertial(orbit, 0.0)
    np.testing.assert_allclose(r, orbit.radius * np.array([np.cos(0.7), np.sin(0.7), 0.0]), atol=1e-6)
    r_full, _ = orbit_inertial(orbit, orbit.period)
    np.testing.assert_allclose(r_full, r, atol=1e-3)


def test_orbit_from_look_angles_reproduces_look_angles():
    anchor = Anchor()
    el, az = np.deg2rad(55.0), np.deg2rad(120.0)
    orbit = orbit_from_look_angles(el, az, heading=0.3, t_ref=50.0, anchor=anchor)
    sat = propagate_satellites([orbit], 50.0, anchor)[0]
    d = sat.p - np.array([0.0, 0.0, 0.0])
    assert np.arcsin(d[2] / np.linalg.norm(d)) == pytest.approx(el, abs=1e-9)
    assert np.arctan2(d[0], d[1]) == pytest.approx(az, abs=1e-9)
    assert np.linalg.norm(sat.v) == pytest.approx(orbit.speed, rel=1e-9)
    assert is_rotation(sat.R)


def test_negative_time_rejected():
    with pytest.raises(ValueError):
        propagate_satellites([OrbitConfig()], -1.0)


def _straight_config(accel, n_steps=10):
    traj = TrajectoryConfig(start=[0.0, 0.0, 0.0], velocity=[0.0, 0.0, 0.0], euler=[0.0, 0.0, 0.0],
                            segments=[MotionSegment(0, accel, [0.0, 0.0, 0.0])])
    return desk_scenario(trajectory=traj, n_steps=n_steps, update_interval=1.0)


def test_constant_acceleration_from_rest():
    traj = generate_trajectory(_straight_config([1.0, 0.0, 0.0]))
    x = np.array([s.p[0] for s in traj.states])
    n = np.arange(len(x))
    np.testing.assert_allclose(x, n ** 2 / 2.0, atol=1e-9)
    np.testing.assert_allclose([s.v[0] for s in traj.states], n, atol=1e-12)


def test_zero_acceleration_is_a_straight_line():
    config = _straight_config([0.0, 0.0, 0.0])
    config = dataclasses.replace(config, trajectory=dataclasses.replace(config.trajectory,
                                                                        velocity=[3.0, -1.0, 0.5]))
    traj = generate_trajectory(config)
    for n, s in enumerate(traj.states):
        np.testing.assert_allclose(s.p, n * np.array([3.0, -1.0, 0.5]), atol=1e-9)
        np.testing.assert_allclose(s.R, np.eye(3), atol=1e-12)


def test_region_labels_cover_every_step():
    config = desk_scenario()
    traj = generate_trajectory(config)
    assert len(traj.segments) == len(traj.states) == config.n_steps + 1
    assert set(traj.segments) <= set(sc.SEGMENTS)
    # the desk route passes through every segment type
    assert set(traj.segments) == set(sc.SEGMENTS)
    assert all(is_rotation(s.R) for s in traj.states)


def test_imu_exact_without_noise():
    traj = generate_trajectory(desk_scenario(n_steps=5))
    imu = synthesize_imu(traj, np.zeros((3, 3)), np.zeros((3, 3)), np.random.default_rng(0))
    for m, a, Om in zip(imu, traj.accels, traj.rotations):
        np.testing.assert_array_equal(m.accel, a)
        np.testing.assert_allclose(m.rotation, Om, atol=1e-15)


def test_imu_noise_covariance():
    cfg = _straight_config([0.2, 0.0, 0.0], n_steps=10_000)
    traj = generate_trajectory(cfg)
    traj = dataclasses.replace(traj, rotations=np.broadcast_to(so3_exp([0.0, 0.0, 0.01]), (10_000, 3, 3)))
    acc_cov = np.array([[4e-2, 1e-2, 0.0], [1e-2, 2e-2, 0.0], [0.0, 0.0, 1e-2]])
    gyr_cov = np.diag([1e-4, 2e-4, 3e-4])
    imu = synthesize_imu(traj, acc_cov, gyr_cov, np.random.default_rng(7))
    da = np.array([m.accel for m in imu]) - traj.accels
    dw = np.array([so3_log(traj.rotations[0].T @ m.rotation) for m in imu])
    for sample, cov in ((da, acc_cov), (dw, gyr_cov)):
        est = np.cov(sample.T)
        assert np.linalg.norm(est - cov) / np.linalg.norm(cov) < 0.05
    assert all(is_rotation(m.rotation) for m in imu)


@pytest.fixture(scope="module")
def reference_link():
    config = desk_scenario()
    n = reference_step(config)
    ue = generate_trajectory(config, biases=np.full(config.n_sats, 1e-6)).states[n]
    snap, sats, riss = build_snapshot(config, n * config.update_interval, ue, "urban",
                                      trial_rng(config.seed, 0, sc.STREAM_CHANNEL))
    return config, ue, snap, sats, riss


def test_observation_without_noise_equals_measurement_model(reference_link, monkeypatch):
    config, ue, snap, sats, riss = reference_link
    true_fim = sc.observation_fim(snap, assemble_observation(ue, sats, riss, config.wave))
    monkeypatch.setattr(sc, "observation_fim", lambda *a, **k: true_fim * 1e40)
    obs = synthesize_observation(ue, snap, sats, riss, np.random.default_rng(3))
    rho = assemble_observation(ue, sats, riss, config.wave)
    az = snap.layout.azimuth_indices
    expected = rho.copy()
    expected[az] = sc.wrap_angle(expected[az])
    np.testing.assert_allclose(obs.value, expected, rtol=1e-12, atol=1e-15)


def test_observation_sample_covariance(reference_link, monkeypatch):
    config, ue, snap, sats, riss = reference_link
    rho = assemble_observation(ue, sats, riss, config.wave)
    true_fim = sc.observation_fim(snap, rho)
    monkeypatch.setattr(sc, "observation_fim", lambda *a, **k: true_fim)
    rng = np.random.default_rng(11)
    draws = [synthesize_observation(ue, snap, sats, riss, rng) for _ in range(2_000)]
    cov = draws[0].cov
    # remaining draws through the same sampler, without the per-call FIM bookkeeping
    factor = sc._symmetric_factor(cov)
    extra = (factor @ rng.standard_normal((rho.size, 8_000))).T
    err = np.vstack([d.value - rho for d in draws] + [extra])
    az = snap.layout.azimuth_indices
    err[:, az] = sc.wrap_angle(err[:, az])
    d = np.sqrt(np.diag(cov))
    # wrapping flattens azimuths whose spread is comparable to 2 pi; compare the rest
    keep = np.ones(rho.size, bool)
    keep[snap.layout.azimuth_indices] = d[snap.layout.azimuth_indices] < 0.5
    keep &= d > 0
    err, cov, d = err[:, keep], cov[np.ix_(keep, keep)], d[keep]
    est = np.cov(err.T) / np.outer(d, d)
    target = cov / np.outer(d, d)
    assert np.linalg.norm(est - target) / np.linalg.norm(target) < 0.1


def test_observation_azimuths_wrapped(reference_link):
    config, ue, snap, sats, riss = reference_link
    rng = np.random.default_rng(5)
    az = snap.layout.azimuth_indices
    for _ in range(20):
        obs = synthesize_observation(ue, snap, sats, riss, rng)
        assert np.all(obs.value[az] > -np.pi) and np.all(obs.value[az] <= np.pi)


def test_config_round_trip(tmp_path):
    config = desk_scenario(seed=99, n_ris=0)
    path = tmp_path / "scenario.json"
    config.save(path)
    loaded = ScenarioConfig.load(path)
    assert loaded.to_dict() == config.to_dict()
    assert isinstance(loaded.riss[0], RisConfig)
    assert isinstance(loaded.trajectory.segments[0], MotionSegment)


def test_config_rejects_unknown_keys():
    data = desk_scenario().to_dict()
    data["n_satellites"] = 3
    with pytest.raises((KeyError, TypeError, ValueError)):
        ScenarioConfig.from_dict(data)


def test_trial_streams_deterministic_and_distinct():
    a = trial_rng(42, 3, 1).standard_normal(5)
    np.testing.assert_array_equal(a, trial_rng(42, 3, 1).standard_normal(5))
    assert not np.allclose(a, trial_rng(42, 3, 2).standard_normal(5))
    assert not np.allclose(a, trial_rng(42, 4, 1).standard_normal(5))
    assert not np.allclose(a, trial_rng(43, 3, 1).standard_normal(5))


def test_point_in_polygon():
    square = [[0, 0], [1, 0], [1, 1], [0, 1]]
    assert point_in_polygon([0.5, 0.5, 9.0], square)
    assert not point_in_polygon([1.5, 0.5, 0.0], square)


def test_ris_gain_zero_outside_visibility():
    config = desk_scenario()
    traj = generate_trajectory(config)
    ris = config.riss[0]
    inside = [s for s, v in zip(traj.states, traj.visible[:, 0]) if v]
    outside = [s for s, v in zip(traj.states, traj.visible[:, 0]) if not v]
    assert inside and outside
    assert ris_visible(ris, inside[0].p)
    kw = dict(shadowing=False, random_phases=False)
    snap_in, _, _ = build_snapshot(config, 0.0, inside[0], "urban", np.random.default_rng(0), **kw)
    snap_out, _, _ = build_snapshot(config, 0.0, outside[0], "urban", np.random.default_rng(0), **kw)
    ref = np.abs(snap_in.path_gains[:, 1]).max()
    assert ref > 0
    assert np.abs(snap_out.path_gains[:, 1]).max() <= 1e-6 * ref


def test_world_filter_regions_follow_deployed_ris():
    config = desk_scenario(n_steps=60, n_ris=0)
    world = build_world(config, 0)
    assert "urban_visible" not in world.filter_regions
    assert len(world.observations) == len(world.imu) == config.n_steps
