import math
import statistics

import pytest

from sensormux import cli, harness
from sensormux.harness import ExperimentConfig, ConfigError


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig("sweep", trials=0)
    with pytest.raises(ConfigError):
        ExperimentConfig("sweep", grid_ms=())
    with pytest.raises(ConfigError):
        ExperimentConfig("nope")
    with pytest.raises(ConfigError):
        ExperimentConfig("sweep", policy="fastest")
    path = tmp_path / "c.toml"
    path.write_text('kind = "sweep"\ntrails = 3\n')
    with pytest.raises(ConfigError, match="trails"):
        ExperimentConfig.from_toml(path)


def test_sub_floor_row_records_failures():
    cfg = ExperimentConfig("sweep", profiles=("poco_f1",), sensors=("MF",), grid_ms=(50,), trials=1)
    res = harness.run(cfg)
    [row] = res.rows
    assert row.failures == 1 and row.mean_edit_distance == 64 and math.isnan(row.median_bit_rate_bps)


def test_sweep_aggregates_match_raw_dump(tmp_path):
    cfg = ExperimentConfig("sweep", profiles=("pixel_4a",), sensors=("AC", "GR"), grid_ms=(75, 150),
                           trials=5, bits=(16, 40), seed=11)
    agg, raw = harness.write_result(harness.run(cfg), tmp_path / "s.csv")
    trials = harness.read_csv(raw)
    for row in harness.read_csv(agg):
        mine = [t for t in trials if t["sensor"] == row["sensor"] and t["pulse_width_ms"] == row["pulse_width_ms"]]
        assert len(mine) == int(row["trials"]) == 5
        assert float(row["mean_edit_distance"]) == pytest.approx(
            statistics.fmean(int(t["edit_distance"]) for t in mine), abs=1e-6)
        rates = [float(t["bit_rate_bps"]) for t in mine if t["status"] == "ok"]
        if rates:
            assert float(row["median_bit_rate_bps"]) == pytest.approx(statistics.median(rates), abs=1e-5)
        assert {16 <= int(t["n_bits"]) <= 40 for t in mine} == {True}


def test_trial_seed_is_xor():
    cfg = ExperimentConfig("sweep", profiles=("poco_f1",), sensors=("MF",), grid_ms=(100,), trials=3, seed=6)
    assert [t.seed for t in harness.run(cfg).trials] == [6, 7, 4]


def test_jitter_sigma_zero_has_no_spread(tmp_path):
    prof = tmp_path / "flat.toml"
    prof.write_text('schema_version = 1\nname = "flat"\n[sensors.MF]\nmin_period_us = 10000\n'
                    "max_period_us = 1000000\n")
    res = harness.run(ExperimentConfig("jitter", profiles=(str(prof),), samples=500))
    assert all(r.std_gap_us == 0 and r.violations == 0 for r in res.rows)


def test_jitter_mf_relative_std():
    res = harness.run(ExperimentConfig("jitter", profiles=("poco_f1",), sensors=("MF",), samples=2000))
    assert all(r.relative_std == pytest.approx(0.005, rel=0.2) for r in res.rows)


def test_empty_db_gives_empty_report(tmp_path):
    path = tmp_path / "db.toml"
    path.write_text("schema_version = 1\n")
    res = harness.run(ExperimentConfig("apps", db=str(path)))
    assert res.rows == [] and harness.to_csv(res.rows) == ""


def test_cli_exit_codes(tmp_path, capsys):
    assert cli.main(["sweep", "--profile", "nope"]) == 1
    out = tmp_path / "s.csv"
    code = cli.main(["sweep", "--profile", "poco_f1", "--sensor", "MF", "--grid", "50", "--trials", "2",
                     "--max-failure-rate", "0", "--out", str(out)])
    assert code == 2
    assert out.exists() and harness.trials_path(out).exists()
    assert cli.main(["sweep", "--profile", "poco_f1", "--sensor", "MF", "--grid", "100", "--trials", "2",
                     "--max-failure-rate", "0"]) == 0
    assert capsys.readouterr().out.startswith("device,sensor,pulse_width_ms")


def test_cli_config_file(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('profiles = ["poco_f1"]\nsensors = ["MF"]\ngrid_ms = [100]\ntrials = 2\n')
    out = tmp_path / "o.csv"
    assert cli.main(["sweep", "--config", str(cfg), "--out", str(out), "--seed", "3"]) == 0
    rows = harness.read_csv(out)
    assert len(rows) == 1 and rows[0]["trials"] == "2"
