import numpy as np
import pytest

from leoris.errors import FilterStepError, LengthMismatch, NotPSD
from leoris.experiment import (VARIANTS, compute_metrics, crb_sweep, empirical_cdf, parse_variant,
                               reference_step, rmse, run_monte_carlo)
from leoris.manifold import UeState, so3_exp
from leoris.scenario import desk_scenario


def _state(p=(0, 0, 0), v=(0, 0, 0), R=None):
    return UeState(np.array(p, float), np.array(v, float), np.zeros(2), np.eye(3) if R is None else R)


def test_metrics_zero_for_identical_sequences():
    states = [_state((1, 2, 3), (0.1, 0, 0)), _state((4, 5, 6), (0, 1, 0))]
    err = compute_metrics(states, states)
    for m in ("position", "velocity", "orientation"):
        np.testing.assert_array_equal(err[m], 0.0)


def test_metrics_quarter_turn_about_z():
    err = compute_metrics([_state()], [_state(R=so3_exp([0.0, 0.0, np.pi / 2]))])
    assert err["orientation"][0] == pytest.approx(np.pi / 2, abs=1e-12)
    assert err["position"][0] == 0.0


def test_metrics_position_and_velocity_norms():
    err = compute_metrics([_state()], [_state((3, 4, 0), (0, 0, 2))])
    assert err["position"][0] == pytest.approx(5.0)
    assert err["velocity"][0] == pytest.approx(2.0)


def test_metrics_length_mismatch():
    with pytest.raises(LengthMismatch):
        compute_metrics([_state()], [_state(), _state()])


def test_rmse_of_constant_error():
    assert rmse(np.full(17, 0.3)) == pytest.approx(0.3)
    assert np.isnan(rmse([]))


def test_empirical_cdf():
    v, p = empirical_cdf([3.0, 1.0, 2.0, 2.0])
    np.testing.assert_array_equal(v, [1.0, 2.0, 2.0, 3.0])
    assert p[-1] == 1.0
    assert np.all(np.diff(p) > 0)


def test_parse_variant():
    assert parse_variant("euclidean/oracle") == ("euclidean", "oracle")
    with pytest.raises(ValueError):
        parse_variant("riemannian/magic")


@pytest.fixture(scope="module")
def short_config():
    return desk_scenario(n_steps=12)


def test_monte_carlo_single_trial_deterministic(short_config):
    a = run_monte_carlo(short_config, 1, ["riemannian/fim_approx"], parallel=False)
    b = run_monte_carlo(short_config, 1, ["riemannian/fim_approx"], parallel=False)
    assert a.rows == b.rows
    assert len(a.rows) == short_config.n_steps + 1
    assert not a.failures


def test_monte_carlo_parallel_matches_serial(short_config):
    variants = ["riemannian/fim_approx", "euclidean/oracle"]
    serial = run_monte_carlo(short_config, 2, variants, parallel=False)
    par = run_monte_carlo(short_config, 2, variants, parallel=True)
    assert serial.rows == par.rows
    assert {r["variant"] for r in par.rows} == set(variants)
    assert set(par.rows[0]) >= {"trial", "step", "variant", "segment", "position_error"}
    summary = par.summary()
    for v in variants:
        assert summary["variants"][v]["completed_trials"] == 2
        assert np.isfinite(summary["variants"][v]["all"]["position"]["rmse"])


def test_monte_carlo_rejects_bad_arguments(short_config):
    with pytest.raises(ValueError):
        run_monte_carlo(short_config, 0)
    with pytest.raises(ValueError):
        run_monte_carlo(short_config, 1, ["kalman/identity"])


def test_monte_carlo_records_failures(short_config, monkeypatch):
    import leoris.experiment as ex

    def broken(filt, initial, timeline, truth=None):
        raise FilterStepError(3, NotPSD("injected"))
    monkeypatch.setattr(ex, "track", broken)
    res = run_monte_carlo(short_config, 2, ["riemannian/fim_approx"], parallel=False)
    assert not res.rows
    assert [f["trial"] for f in res.failures] == [0, 1]
    assert res.failures[0]["step"] == 3 and "NotPSD" in res.failures[0]["error"]
    assert res.summary()["variants"]["riemannian/fim_approx"]["completed_trials"] == 0


def test_variants_enumerate_all_combinations():
    assert len(VARIANTS) == 6
    assert "riemannian/identity" in VARIANTS


def test_crb_sweep_rows_and_ordering():
    config = desk_scenario()
    assert reference_step(config) > 0
    rows = crb_sweep(config, [2, 4], [1, 2], [32], ["rural", "urban"])
    assert len(rows) == 8
    assert all(np.isfinite(r["crb_phi_d"]) and r["crb_phi_d"] > 0 for r in rows)
    crb = {(r["G"], r["S"], r["region"]): r["crb_phi_d"] for r in rows}
    assert crb[(4, 2, "rural")] <= crb[(2, 2, "rural")]
    assert crb[(4, 2, "rural")] <= crb[(4, 1, "rural")]


def test_crb_sweep_needs_a_ris():
    with pytest.raises(ValueError):
        crb_sweep(desk_scenario(n_ris=0), [2], [1], [16])
