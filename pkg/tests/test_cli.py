import json

import numpy as np
import pytest

from lifsnr.cli import ConfigError, main, read_config_file, resolve
from lifsnr.io import read_f32

SMALL_VALIDATE = ["--patterns", "2", "--presentations", "60", "--taus", "10",
                  "--strategies", "1", "--jobs", "1", "--seed", "4"]


def test_precedence_cli_over_file_over_defaults(tmp_path):
    cfg_file = tmp_path / "c.cfg"
    cfg_file.write_text("# comment\nrate = 5.0\njitter=1.5  # trailing\nmax-strategy = 3\n")
    file_values = read_config_file(cfg_file)
    cfg = resolve("optimize", file_values, {"rate": "7", "jitter": None})
    assert cfg["rate"] == 7.0
    assert cfg["jitter"] == 1.5
    assert cfg["max_strategy"] == 3 and isinstance(cfg["max_strategy"], int)
    assert cfg["n_afferents"] == 10_000


def test_unknown_keys_rejected(tmp_path):
    with pytest.raises(ConfigError):
        resolve("optimize", {"tau": "3"}, {})
    bad = tmp_path / "bad.cfg"
    bad.write_text("no equals sign here\n")
    with pytest.raises(ConfigError):
        read_config_file(bad)
    bad.write_text("theta = 300\n")
    assert main(["optimize", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2


def test_optimize_writes_manifest_and_result(tmp_path, capsys):
    out = tmp_path / "opt"
    assert main(["optimize", "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "optimize" and manifest["seed"] == 0
    assert manifest["config"]["rate"] == 3.2
    res = json.loads((out / "optimize.json").read_text())
    assert res["best_strategy"] == 1
    assert json.loads(capsys.readouterr().out)["best_strategy"] == 1


def test_map_smoke(tmp_path):
    out = tmp_path / "map"
    assert main(["map", "--points", "2", "--jobs", "1", "--out", str(out)]) == 0
    for key in ("n", "tau", "window_over_tau", "snr"):
        lines = (out / f"map_{key}.csv").read_text().splitlines()
        assert len(lines) == 3 and lines[0].startswith("f\\T,")
        assert all(len(line.split(",")) == 3 for line in lines)
    assert (out / "sweep.csv").read_text().startswith("f,T,n,tau,dt,snr,constraint_active\n")


def test_validate_is_byte_identical_for_fixed_seed(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["validate", "--out", str(a)] + SMALL_VALIDATE) in (0, 1)
    assert main(["validate", "--out", str(b)] + SMALL_VALIDATE) in (0, 1)
    raw = (a / "validate.csv").read_bytes()
    assert raw == (b / "validate.csv").read_bytes()
    assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()
    header, row = raw.decode().splitlines()
    assert header == "tau,strategy,snr_analytic,snr_sim_mean,snr_sim_sd,n_patterns"
    assert b"\r" not in raw and row.startswith("10.0,1,")


def test_validate_independent_of_job_count(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["validate", "--out", str(a)] + SMALL_VALIDATE)
    main(["validate", "--out", str(b)] + SMALL_VALIDATE[:-4] + ["--jobs", "2", "--seed", "4"])
    assert (a / "validate.csv").read_bytes() == (b / "validate.csv").read_bytes()


def test_stdp_run_early_stop(tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["stdp-run", "--presentations", "20", "--snapshot-every", "10",
                 "--out", str(out)])
    assert code == 0
    outcome = json.loads((out / "outcome.json").read_text())
    assert outcome["binarized"] is False and outcome["is_optimal"] is False
    w = read_f32(out / "weights.f32")
    assert w.size == 10_000 and np.all((w >= 0) & (w <= 1))
    assert read_f32(out / "snapshots.f32", (-1, 10_000)).shape == (2, 10_000)
    assert (out / "post_spikes.csv").read_text().startswith("time_ms\n")


def test_stdp_sweep_small(tmp_path):
    out = tmp_path / "sweep"
    code = main(["stdp-sweep", "--n-afferents", "2000", "--theta-min", "60", "--theta-max", "66",
                 "--w-out-min=-2e-3", "--w-out-max=-2e-3", "--runs", "2",
                 "--presentations", "10", "--jobs", "1", "--out", str(out)])
    assert code == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0] == "theta,w_out,p,mode,n_runs,n_divergent"
    assert len(lines) == 3
    assert len(list((out / "runs").glob("*.json"))) == 4


def test_io_error_exit_code(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["optimize", "--out", str(blocker / "sub")]) == 2


def test_invalid_parameters_exit_code(tmp_path):
    # theta too high for any initial weight in [0, 1]
    assert main(["stdp-run", "--theta", "900", "--presentations", "5",
                 "--out", str(tmp_path / "r")]) == 2
