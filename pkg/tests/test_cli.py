import csv
import json

import numpy as np
import pytest

from leoris.cli import (CDF_COLUMNS, CRB_COLUMNS, EXIT_CONFIG, METRIC_COLUMNS, TRACK_COLUMNS, main)
from leoris.experiment import VARIANTS
from leoris.scenario import desk_scenario


@pytest.fixture(scope="module")
def scenario_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "short.json"
    desk_scenario(n_steps=10, trials=2).save(path)
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def test_missing_scenario_file(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert main(["track", "--scenario", str(missing), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert str(missing) in capsys.readouterr().err


def test_malformed_scenario_file(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["track", "--scenario", str(bad), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_bad_seed_and_trials(tmp_path, scenario_file):
    assert main(["track", "--scenario", str(scenario_file), "--seed", "-1", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["montecarlo", "--scenario", str(scenario_file), "--trials", "0",
                 "--out", str(tmp_path)]) == EXIT_CONFIG


def test_track_outputs_and_reproducibility(tmp_path, scenario_file):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    for out in (out1, out2):
        assert main(["track", "--scenario", str(scenario_file), "--out", str(out)]) == 0
    header, rows = read_csv(out1 / "track.csv")
    assert header == TRACK_COLUMNS
    assert len(rows) == 11
    assert (out1 / "track.csv").read_bytes() == (out2 / "track.csv").read_bytes()
    summary = json.loads((out1 / "summary.json").read_text())
    assert summary["variant"] == "riemannian/fim_approx"
    assert np.isfinite(summary["rmse"]["all"]["position"])


def test_track_euclidean_oracle(tmp_path, scenario_file):
    assert main(["track", "--scenario", str(scenario_file), "--variant", "euclidean",
                 "--belief", "oracle", "--trial", "1", "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["variant"] == "euclidean/oracle" and summary["trial"] == 1


def test_crb_sweep_grid(tmp_path):
    assert main(["crb-sweep", "--G", "1,2", "--S", "1", "--K", "16", "--regions", "urban",
                 "--out", str(tmp_path)]) == 0
    header, rows = read_csv(tmp_path / "crb.csv")
    assert header == CRB_COLUMNS
    assert [r[0] for r in rows] == ["1", "2"]
    assert all(np.isfinite(float(r[-1])) for r in rows)


def test_crb_sweep_empty_grid(tmp_path):
    assert main(["crb-sweep", "--G", "", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["crb-sweep", "--S", "9", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_montecarlo_outputs(tmp_path, scenario_file):
    args = ["montecarlo", "--scenario", str(scenario_file), "--trials", "2",
            "--belief", "fim_approx", "--belief", "oracle"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    header, rows = read_csv(tmp_path / "a" / "metrics.csv")
    assert header == METRIC_COLUMNS
    groups = {(r[0], r[2]) for r in rows}
    assert len(groups) == 4
    assert {r[2] for r in rows} <= set(VARIANTS)
    cdf_header, _ = read_csv(tmp_path / "a" / "cdf.csv")
    assert cdf_header == CDF_COLUMNS
    for name in ("metrics.csv", "cdf.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["trials"] == 2 and set(summary["variants"]) == {"riemannian/fim_approx",
                                                                   "riemannian/oracle"}
