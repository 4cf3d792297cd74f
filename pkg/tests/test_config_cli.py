import json
import math
import warnings

import numpy as np
import pytest
import yaml
from hypothesis import given, settings, strategies as st

from peitsim import cli, io
from peitsim import config as cf
from peitsim.errors import ConfigError


def write_yaml(path, data):
    path.write_text(yaml.safe_dump(data))
    return path


@pytest.mark.parametrize("name", cf.preset_names())
def test_every_preset_parses(name):
    cfg = cf.load_preset(name)
    assert cfg.command in cli.COMMANDS


def test_unknown_preset_and_wrong_command():
    with pytest.raises(ConfigError):
        cf.load_preset("no-such-preset")
    with pytest.raises(ConfigError):
        cf.load_preset("four-ion-modes", "cool")


def test_unknown_key_rejected(tmp_path):
    p = write_yaml(tmp_path / "bad.yaml", {"chain": {"ion_count": 2, "trap_mhz": [1, 10, 10]},
                                           "colour": "blue"})
    with pytest.raises(ConfigError):
        cf.load_config(p, "modes")
    assert cli.main(["modes", "--config", str(p), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG


def test_out_of_range_value_is_config_error(tmp_path):
    p = write_yaml(tmp_path / "bad.yaml", {"chain": {"ion_count": 0, "trap_mhz": [1, 10, 10]}})
    assert cli.main(["modes", "--config", str(p), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG


def test_bad_threads(tmp_path):
    assert cli.main(["modes", "--preset", "four-ion-modes", "--threads", "0",
                     "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_config_and_preset_are_exclusive(tmp_path):
    with pytest.raises(SystemExit):
        cli.main(["modes", "--preset", "four-ion-modes", "--config", "x.yaml"])


def test_single_ion_echoes_trap(tmp_path):
    p = write_yaml(tmp_path / "one.yaml", {"chain": {"ion_count": 1, "trap_mhz": [0.6, 1.706, 1.754]}})
    assert cli.main(["modes", "--config", str(p), "--out", str(tmp_path)]) == cli.EXIT_OK
    t = io.read_csv(tmp_path / "modes.csv")
    got = {a: float(f) for a, f in zip(t["axis"], t["frequency_mhz"])}
    assert got == pytest.approx({"z": 0.6, "x": 1.706, "y": 1.754}, rel=1e-12)


def test_three_ion_axial_ratios(tmp_path):
    p = write_yaml(tmp_path / "three.yaml", {"chain": {"ion_count": 3, "trap_mhz": [1.0, 10.0, 10.0]}})
    assert cli.main(["modes", "--config", str(p), "--out", str(tmp_path)]) == cli.EXIT_OK
    t = io.read_csv(tmp_path / "modes.csv")
    z = sorted(float(f) for a, f in zip(t["axis"], t["frequency_mhz"]) if a == "z")
    assert z == pytest.approx([1.0, math.sqrt(3), math.sqrt(29 / 5)], rel=1e-9)
    meta = json.loads((tmp_path / "modes.json").read_text())
    assert meta["command"] == "modes" and "parameters" in meta


def test_worked_estimate_preset(tmp_path):
    assert cli.main(["thermo", "--preset", "asymmetry-estimate", "--out", str(tmp_path)]) == cli.EXIT_OK
    t = io.read_csv(tmp_path / "estimate.csv")
    assert round(float(t["nbar"][0]), 2) == 0.40


def test_estimate_from_trace_files(tmp_path):
    from peitsim.thermometry import rabi_trace_model
    times = np.linspace(0, 60, 121)
    for side, amp in (("blue", 129.0), ("red", 21.0)):
        io.write_csv(tmp_path / f"{side}.csv",
                     {"time_us": times, "excitation": rabi_trace_model(times, amp, 0.35, 40.0, 0.0)})
    p = write_yaml(tmp_path / "tr.yaml", {"factor": 2.06, "traces": {
        "blue_csv": str(tmp_path / "blue.csv"), "red_csv": str(tmp_path / "red.csv")}})
    assert cli.main(["thermo", "--config", str(p), "--out", str(tmp_path / "o")]) == cli.EXIT_OK
    t = io.read_csv(tmp_path / "o" / "estimate.csv")
    assert float(t["nbar"][0]) == pytest.approx(2.06 * 21 / 108, rel=1e-6)


def test_missing_trace_file_is_config_error(tmp_path):
    p = write_yaml(tmp_path / "tr.yaml", {"traces": {"blue_csv": str(tmp_path / "nope.csv"),
                                                     "red_csv": str(tmp_path / "nope.csv")}})
    assert cli.main(["thermo", "--config", str(p), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG


def test_thermo_without_inputs_is_config_error(tmp_path):
    p = write_yaml(tmp_path / "e.yaml", {"factor": 2.0})
    assert cli.main(["thermo", "--config", str(p), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG


def test_sweep_preset_writes_table(tmp_path):
    assert cli.main(["sweep", "--preset", "mode-sweep", "--out", str(tmp_path)]) == cli.EXIT_OK
    t = io.read_csv(tmp_path / "sweep.csv")
    assert len(t["omega_mhz"]) == 36
    meta = json.loads((tmp_path / "sweep.json").read_text())
    assert meta["report"]["failed_points"] == []


def test_probe_too_strong_is_regime_violation(tmp_path):
    cfg = cf.load_preset("weak-single", "cool").model_dump(mode="json")
    cfg["probes"][0]["rabi_mhz"] = 40.0
    p = write_yaml(tmp_path / "strong.yaml", cfg)
    assert cli.main(["cool", "--config", str(p), "--out", str(tmp_path / "o")]) == cli.EXIT_REGIME


def test_dimension_cap_is_config_error(tmp_path):
    cfg = cf.load_preset("axial-radial", "cool").model_dump(mode="json")
    cfg["max_dim"] = 256
    p = write_yaml(tmp_path / "big.yaml", cfg)
    assert cli.main(["cool", "--config", str(p), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG


def test_heating_run_exits_with_regime_code(tmp_path):
    # blue sideband tuned onto the bright resonance
    cfg = cf.load_preset("weak-single", "cool").model_dump(mode="json")
    cfg["probes"][0]["detuning_mhz"] = 334.0
    cfg["t_max_us"] = 200.0
    cfg["samples"] = 21
    p = write_yaml(tmp_path / "heat.yaml", cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        code = cli.main(["cool", "--config", str(p), "--out", str(tmp_path / "o")])
    assert code == cli.EXIT_REGIME
    assert (tmp_path / "o" / "cool.csv").exists()
    meta = json.loads((tmp_path / "o" / "cool.json").read_text())
    assert meta["report"]["regime_violation"]


@settings(max_examples=25, deadline=None)
@given(vals=st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=8))
def test_csv_roundtrip_is_exact(vals, tmp_path_factory):
    p = tmp_path_factory.mktemp("csv") / "x.csv"
    io.write_csv(p, {"v": vals})
    back = [float(x) for x in io.read_csv(p)["v"]]
    assert back == vals
