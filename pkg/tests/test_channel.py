import numpy as np
import pytest

from leoris.channel import (ENVIRONMENTS, ArrayConfig, AtmosphericTable, BeamformingSet, FrameConfig, LinkSnapshot,
                            default_atmosphere, dbm_to_watt, effective_noise_variance, expected_gain_amplitude,
                            fspl_db, los_probability, los_samples, noise_free_rx, noise_power, ris_amplification,
                            shadow_fading_db, steering_derivatives, steering_vector, total_path_loss)
from leoris.errors import IndexOutOfRange
from leoris.geometry import ObservationLayout, WaveConstants


def test_steering_examples():
    arr = ArrayConfig(4, 4, 5e-3)
    a = steering_vector(arr, [0.0, 0.0], 0.0236)
    assert np.allclose(a, a[0])
    assert np.allclose(steering_vector(ArrayConfig(1, 1, 1.0), [0.3, 0.2], 1.0), [1.0])
    a = steering_vector(ArrayConfig(2, 1, 0.5), [np.pi / 2, 0.0], 1.0)
    assert np.allclose(a, np.exp(1j * np.array([0.0, np.pi])))


def test_steering_derivatives_match_differences():
    arr = ArrayConfig(3, 4, 0.4)
    ang = np.array([0.3, -0.5])
    d_az, d_el = steering_derivatives(arr, ang, 1.0)
    h = 1e-6
    fd_az = (steering_vector(arr, ang + [h, 0], 1.0) - steering_vector(arr, ang - [h, 0], 1.0)) / (2 * h)
    fd_el = (steering_vector(arr, ang + [0, h], 1.0) - steering_vector(arr, ang - [0, h], 1.0)) / (2 * h)
    assert np.allclose(d_az, fd_az, atol=1e-8) and np.allclose(d_el, fd_el, atol=1e-8)


def test_steering_batch_shape():
    arr = ArrayConfig(2, 3)
    assert steering_vector(arr, np.zeros((5, 7, 2)), 0.02).shape == (5, 7, 6)


def test_path_loss_examples():
    assert fspl_db(1.0, 1.0) == pytest.approx(32.45)
    assert fspl_db(1000.0, 12.7) == pytest.approx(114.53, abs=5e-3)
    urban = ENVIRONMENTS["urban"]
    assert shadow_fading_db(1.0, np.radians(40), urban) == pytest.approx(0.10)
    assert shadow_fading_db(1.0, np.radians(10), urban) == pytest.approx(0.10)


def test_total_path_loss_terms():
    env = ENVIRONMENTS["rural"]
    el = np.radians(50)
    terrestrial = total_path_loss(500.0, 12.7, el, env, 0.0, terrestrial=True)
    assert terrestrial == pytest.approx(fspl_db(500.0, 12.7))
    sat = total_path_loss(500.0, 12.7, el, env, 0.0)
    atm = default_atmosphere()(12.7, el)
    assert sat == pytest.approx(terrestrial + atm + env.scintillation_db + env.clutter_loss_db)
    with pytest.raises(ValueError):
        total_path_loss(0.0, 12.7, el, env)


def test_atmosphere_lookup(tmp_path):
    path = tmp_path / "atm.csv"
    path.write_text("frequency_GHz,elevation_deg,loss_dB\n10,10,1.0\n10,90,0.2\n20,10,3.0\n20,90,0.6\n")
    table = AtmosphericTable.from_csv(path)
    assert table(15.0, np.radians(10)) == pytest.approx(2.0)
    assert table(5.0, np.radians(90)) == pytest.approx(0.2)   # clamped
    bad = tmp_path / "bad.csv"
    bad.write_text("frequency_GHz,elevation_deg,loss_dB\n10,10,1.0\n20,90,0.6\n")
    with pytest.raises(ValueError):
        AtmosphericTable.from_csv(bad)


def test_los_probability_examples():
    assert los_probability(np.radians(30), ENVIRONMENTS["urban"]) == pytest.approx(0.493)
    assert los_probability(np.radians(90), ENVIRONMENTS["rural"]) == pytest.approx(0.998)
    assert los_probability(np.radians(35), ENVIRONMENTS["urban"]) == pytest.approx(0.553)
    assert los_probability(np.radians(2), ENVIRONMENTS["urban"]) == pytest.approx(0.246)


def test_gain_amplitude_examples():
    assert expected_gain_amplitude(0.0, 1.0) == 1.0
    assert expected_gain_amplitude(37.0, 0.0) == 0.0
    assert expected_gain_amplitude(20.0, 0.5) == pytest.approx(0.05)
    with pytest.raises(ValueError):
        expected_gain_amplitude(0.0, 1.5)


def test_ris_amplification_examples():
    assert ris_amplification(0.0, 1e-9, 400) == 1.0
    assert ris_amplification(1e-6, 1e-6, 400) == pytest.approx(np.sqrt(2))
    assert ris_amplification(1e-3, 1e-30, 400) == pytest.approx(100.0)
    assert ris_amplification(1e-3, 0.0, 400) == pytest.approx(100.0)


def test_noise_helpers():
    assert dbm_to_watt(30.0) == pytest.approx(1.0)
    assert noise_power(1.0) == pytest.approx(10 ** (-20.4))


def test_effective_noise_examples():
    w = np.ones(4) / 2
    f = np.ones(4) / 2
    sigma2 = 1e-12
    assert effective_noise_variance(1.0, 1.0, w, f, np.inf, sigma2) == sigma2
    assert effective_noise_variance(0.0, 1.0, w, f, 2.0, sigma2) == sigma2
    c = effective_noise_variance(2 * sigma2, 1.0, w, f, 1.0, sigma2, theta_ue=np.eye(4), theta_sat=np.eye(4),
                                 ris_terms=[(np.zeros(9), 1.0, np.eye(9))])
    assert c == pytest.approx(2 * sigma2)


def small_snapshot(S=1, R=0, G=3, K=5, gains=None, seed=0):
    rng = np.random.default_rng(seed)
    sat, ris, ue = ArrayConfig(2, 2, 0.5), ArrayConfig(2, 3, 0.5), ArrayConfig(2, 2, 0.5)
    beams = BeamformingSet.random(rng, S, G, sat.size, ue.size, K, R, ris.size)
    if gains is None:
        gains = rng.normal(size=(S, R + 1)) + 1j * rng.normal(size=(S, R + 1))
    from leoris.geometry import KnownLegParams
    legs = [[KnownLegParams(30.0, 1e-6, rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)) for _ in range(R)]
            for _ in range(S)]
    ris_vec = np.exp(1j * rng.uniform(0, 6, (S, R, G, ris.size)))
    tx = rng.normal(size=(S, R, G)) + 1j * rng.normal(size=(S, R, G))
    return LinkSnapshot(WaveConstants(f_c=1.0, c=1.0), FrameConfig(K, G, 1e6), sat, ris, ue, beams,
                        np.full(S, 2.0), 3.0, np.asarray(gains, dtype=complex), legs, ris_vec, tx,
                        np.full((S, G), 0.1))


def random_rho(snap, seed=1):
    rng = np.random.default_rng(seed)
    lay = ObservationLayout(snap.n_sats, snap.n_ris)
    rho = rng.uniform(-1, 1, lay.dim)
    for s in range(snap.n_sats):
        rho[lay.sat_doppler(s)] = 1e3 * rng.normal()
        rho[lay.sat_delay(s)] = 2e-6
    return rho


def test_noise_free_rx_rank_one_formula():
    snap = small_snapshot()
    rho = random_rho(snap)
    lay = snap.layout
    kf, P = snap.k_factor, snap.tx_power[0]
    alpha = snap.path_gains[0, 0]
    u, tau = rho[lay.sat_doppler(0)], rho[lay.sat_delay(0)]
    a_ue = steering_vector(snap.ue_array, rho[lay.sat_aoa(0)], 1.0)
    a_sat = steering_vector(snap.sat_array, rho[lay.sat_aod(0)], 1.0)
    for g in (1, 3):
        for k in (1, 5):
            w = snap.beams.combiners[0, g - 1]
            f = snap.beams.precoders[0, g - 1]
            t = (g - 1) * snap.frame.symbol_time
            df = snap.frame.subcarrier_spacing
            ref = (np.sqrt(kf * P / (kf + 1)) * alpha * np.exp(2j * np.pi * (t * u - k * df * tau))
                   * np.vdot(w, a_ue) * (a_sat @ f) * snap.beams.pilots[0, k - 1])
            assert noise_free_rx(snap, rho, g, k, 0) == pytest.approx(ref, rel=1e-10)


def test_noise_free_rx_zero_gains_and_bounds():
    snap = small_snapshot(S=2, R=1, gains=np.zeros((2, 2)))
    rho = random_rho(snap)
    assert noise_free_rx(snap, rho, 2, 3, 1) == 0
    with pytest.raises(IndexOutOfRange):
        noise_free_rx(snap, rho, 0, 1, 0)
    with pytest.raises(IndexOutOfRange):
        noise_free_rx(snap, rho, 1, 6, 0)
    with pytest.raises(IndexOutOfRange):
        noise_free_rx(snap, rho, 1, 1, 2)


def test_doppler_phase_linear_in_time():
    snap = small_snapshot(G=3)
    rho = random_rho(snap)
    lay = snap.layout
    rho_zero = rho.copy()
    rho_zero[lay.sat_doppler(0)] = 0.0
    # ratio to the Doppler-free sample isolates exp(j 2 pi t u)
    ph = [noise_free_rx(snap, rho, g, 2, 0) / noise_free_rx(snap, rho_zero, g, 2, 0) for g in (2, 3)]
    t = snap.frame.symbol_time
    assert np.angle(ph[0]) == pytest.approx(np.angle(np.exp(2j * np.pi * t * rho[lay.sat_doppler(0)])))
    assert ph[1] == pytest.approx(ph[0] ** 2, rel=1e-9)


def test_los_samples_layout_and_ris_path():
    snap = small_snapshot(S=2, R=1)
    rho = random_rho(snap)
    sig = los_samples(snap, rho, 1)
    K = snap.frame.n_subcarriers
    assert sig.shape == (snap.frame.n_transmissions * K,)
    assert sig[K] == pytest.approx(noise_free_rx(snap, rho, 2, 1, 1))
    direct_only = los_samples(snap, rho, 1, gains=[snap.path_gains[1, 0], 0.0])
    assert not np.allclose(direct_only, sig)


def test_beam_subset_and_frame_validation():
    beams = BeamformingSet.random(np.random.default_rng(0), 3, 8, 4, 4, 16, 1, 9)
    sub = beams.subset(2, 4, 8)
    assert sub.precoders.shape == (2, 4, 4) and sub.pilots.shape == (2, 8) and sub.ris_phases.shape == (1, 4, 9)
    assert np.array_equal(sub.precoders, beams.precoders[:2, :4])
    with pytest.raises(ValueError):
        beams.subset(4, 1, 1)
    assert np.allclose(np.linalg.norm(beams.combiners, axis=-1), 1)
    with pytest.raises(ValueError):
        FrameConfig(0, 1, 1e6)
