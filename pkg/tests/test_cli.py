"""
Run the command line end to end through tofbeam.main and check exit
codes, standard output JSON and written files.
"""
import json
from pathlib import Path

import pytest

from detector import CHUNK_SIZE
from tofbeam import main
from validator import check_csv, check_json

CONFIGS = Path(__file__).parent.parent / "configs"


def run(capsys, *argv):
    """
    Return (exit code, decoded stdout or None, decoded stderr error or None).
    """
    code = main([str(arg) for arg in argv])
    captured = capsys.readouterr()
    output = json.loads(captured.out) if captured.out.strip() else None
    error = None
    # log lines may precede the indented error document
    lines = captured.err.split("\n")
    if "{" in lines:
        error = json.loads("\n".join(lines[lines.index("{"):]))
    return code, output, error


def simulate(capsys, path, *extra):
    return run(capsys, "simulate", "--config", CONFIGS / "smf28.json",
               "--n", 20000, "--seed", 5, "--out", path, *extra)


def test_simulate_writes_events(capsys, tmp_path):
    code, output, _ = simulate(capsys, tmp_path / "events.csv")
    assert code == 0
    assert check_json(output, "simulate") is True
    assert output["events"] == 20000
    assert output["seed"] == 5
    assert check_csv(tmp_path / "events.csv", "events") is True


def test_simulate_out_directory(capsys, tmp_path):
    code, output, _ = run(capsys, "simulate", "--fiber", "tec30", "--n", 100,
                          "--out", tmp_path / "run")
    assert code == 0
    assert output["out"] == str(tmp_path / "run" / "events.csv")
    assert (tmp_path / "run" / "events.csv").exists()


def test_simulate_is_deterministic(capsys, tmp_path, monkeypatch):
    """
    Same seed gives byte-identical files, whatever the thread count.
    """
    n = CHUNK_SIZE + 100
    monkeypatch.setenv("TOFBEAM_THREADS", "1")
    assert simulate(capsys, tmp_path / "one.csv", "--n", n)[0] == 0
    monkeypatch.setenv("TOFBEAM_THREADS", "4")
    assert simulate(capsys, tmp_path / "four.csv", "--n", n)[0] == 0
    assert (tmp_path / "one.csv").read_bytes() == (tmp_path / "four.csv").read_bytes()


def test_simulate_with_run_config(capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    code, output, _ = run(capsys, "simulate", "--config", CONFIGS / "run_smf28.yaml", "--n", 1000)
    assert code == 0
    assert output["seed"] == 7
    assert (tmp_path / "out" / "smf28_events.csv").exists()


@pytest.mark.parametrize("argv", [("--n", 0), ("--seed", -1)])
def test_simulate_rejects(capsys, tmp_path, argv):
    code, output, error = simulate(capsys, tmp_path / "events.csv", *argv)
    assert code == 2
    assert output is None
    assert check_json(error, "error") is True
    assert error["error"] == "ValidationError"


def test_simulate_misaligned_beam(capsys, tmp_path):
    config = tmp_path / "far.json"
    config.write_text(json.dumps({"mfd_um": 10.4, "center_um": [1000.0, 0.0],
                                  "modes": [{"p": 0, "weight": 1.0}]}), encoding="utf-8")
    code, _, error = run(capsys, "simulate", "--config", config, "--n", 10,
                         "--out", tmp_path / "events.csv")
    assert code == 2
    assert error["error"] == "ConfigurationError"


def test_analyze(capsys, tmp_path):
    assert simulate(capsys, tmp_path / "events.csv", "--n", 200000)[0] == 0
    code, output, _ = run(capsys, "analyze", tmp_path / "events.csv", "--max-p", 0,
                          "--fiber", "smf28", "--out", tmp_path / "fit")
    assert code == 0
    assert check_json(output, "fit") is True
    assert output["mfd_um"] == pytest.approx(10.4, abs=0.3)
    assert output["divergence"]["diverged"] is False
    assert output["comb"]["low_confidence"] is False
    assert json.loads((tmp_path / "fit" / "fit.json").read_text(encoding="utf-8")) == output
    assert check_csv(tmp_path / "fit" / "profile.csv", "profile") is True
    assert check_csv(tmp_path / "fit" / "histogram.csv", "histogram") is True


def test_analyze_multimode(capsys, tmp_path):
    code, _, _ = run(capsys, "simulate", "--config", CONFIGS / "tec30.json", "--n", 500000,
                     "--seed", 2, "--out", tmp_path / "events.csv")
    assert code == 0
    code, output, _ = run(capsys, "analyze", tmp_path / "events.csv", "--max-p", 2,
                          "--out", tmp_path)
    assert code == 0
    weights = {entry["p"]: entry["weight"] for entry in output["weights"]}
    assert weights[1] == pytest.approx(0.07, abs=0.02)
    assert output["mfd_um"] == pytest.approx(30.0, abs=0.6)


def test_analyze_writes_figures(capsys, tmp_path):
    assert simulate(capsys, tmp_path / "events.csv")[0] == 0
    code, _, _ = run(capsys, "analyze", tmp_path / "events.csv", "--max-p", 0,
                     "--out", tmp_path, "--svg")
    assert code == 0
    for name in ("histogram.svg", "profile.svg", "tail_power.svg"):
        assert (tmp_path / name).read_text(encoding="utf-8").lstrip().startswith("<?xml")


@pytest.mark.parametrize(("content", "message"),
                         [("", "line 1"),
                          ("event_id,true_column,true_x_um,true_y_um,t_pos_ps,t_neg_ps\n"
                           "0,0,0.0,0.0,1.0,2.0\n1,0,0.0,0.0,x,2.0\n", "line 3")])
def test_analyze_malformed_events(capsys, tmp_path, content, message):
    path = tmp_path / "events.csv"
    path.write_text(content, encoding="utf-8")
    code, output, error = run(capsys, "analyze", path, "--out", tmp_path)
    assert code == 2
    assert output is None
    assert error["error"] == "MalformedInputError"
    assert message in error["message"]


def test_analyze_missing_file(capsys, tmp_path):
    code, _, error = run(capsys, "analyze", tmp_path / "missing.csv", "--out", tmp_path)
    assert code == 2
    assert error["error"] == "ConfigurationError"


def test_analyze_unresolvable_beam(capsys, tmp_path):
    """
    A beam narrower than one column cannot be fitted: numerical failure.
    """
    config = tmp_path / "narrow.json"
    config.write_text(json.dumps({"mfd_um": 0.1, "modes": [{"p": 0, "weight": 1.0}]}),
                      encoding="utf-8")
    assert run(capsys, "simulate", "--config", config, "--n", 2000,
               "--out", tmp_path / "events.csv")[0] == 0
    code, output, error = run(capsys, "analyze", tmp_path / "events.csv", "--out", tmp_path)
    assert code == 3
    assert output is None
    assert error["error"] == "FitError"


def test_analyze_outlier_event(capsys, tmp_path):
    """
    One far-off delta time must not blow up the histogram.
    """
    assert simulate(capsys, tmp_path / "events.csv", "--n", 1000)[0] == 0
    with open(tmp_path / "events.csv", "a", encoding="utf-8") as events_file:
        events_file.write("1000,0,0.0,0.0,1e13,0.0\n")
    code, output, error = run(capsys, "analyze", tmp_path / "events.csv", "--out", tmp_path)
    assert code == 2
    assert output is None
    assert error["error"] == "ValidationError"
    assert "outlier" in error["message"]


@pytest.mark.parametrize(("argv", "key", "expected", "tolerance"),
                         [(("--diameter-um", 20, "--offset-um", 0), "efficiency", 0.99930, 1e-5),
                          (("--diameter-um", 20, "--offset-um", 4.5), "loss", 0.03, 0.003),
                          (("--diameter-um", 20, "--solve-offset", "--loss-budget", 0.01),
                           "max_offset_um", 3.4, 0.1),
                          (("--min-efficiency", 0.99), "min_diameter_um", 15.93, 0.01)])
def test_couple(capsys, argv, key, expected, tolerance):
    code, output, _ = run(capsys, "couple", "--mfd-um", 10.5, *argv)
    assert code == 0
    assert check_json(output, "couple") is True
    assert output[key] == pytest.approx(expected, abs=tolerance)


def test_couple_within_budget(capsys):
    code, output, _ = run(capsys, "couple", "--fiber", "smf28", "--diameter-um", 35,
                          "--offset-um", 4.5, "--loss-budget", 0.001)
    assert code == 0
    assert output["within_budget"] is True


def test_couple_no_tolerance(capsys):
    code, _, error = run(capsys, "couple", "--mfd-um", 10.5, "--diameter-um", 5,
                         "--solve-offset", "--loss-budget", 0.01)
    assert code == 2
    assert error["error"] == "NoToleranceError"


def test_couple_grid(capsys, tmp_path):
    code, output, _ = run(capsys, "couple", "--mfd-um", 10.5, "--grid",
                          "--diameters", "20,35", "--offsets", "0,3.4,4.5",
                          "--out", tmp_path / "grid.csv", "--svg")
    assert code == 0
    assert output == {"grid_csv": str(tmp_path / "grid.csv")}
    assert check_csv(tmp_path / "grid.csv", "grid") is True
    assert (tmp_path / "grid.svg").exists()


@pytest.mark.parametrize("mode", [{"mfd_um": "wide", "modes": [{"p": 0, "weight": 1.0}]},
                                  {"mfd_um": 10.4, "center_um": [0.0, 0.0, 1.0],
                                   "modes": [{"p": 0, "weight": 1.0}]},
                                  {"mfd_um": 10.4, "modes": ["fundamental"]},
                                  {"mfd_um": 10.4, "modes": [{"p": "zero", "weight": 1.0}]}])
def test_couple_malformed_mode_config(capsys, tmp_path, mode):
    config = tmp_path / "mode.json"
    config.write_text(json.dumps(mode), encoding="utf-8")
    code, output, error = run(capsys, "couple", "--config", config, "--diameter-um", 20)
    assert code == 2
    assert output is None
    assert check_json(error, "error") is True
    assert error["error"] == "ValidationError"


@pytest.mark.parametrize("layer", [{"thickness_nm": "thick", "n": 1.45},
                                   {"thickness_nm": 100.0, "n": [1.45]},
                                   "SiO2"])
def test_stack_malformed_config(capsys, tmp_path, layer):
    config = tmp_path / "stack.json"
    config.write_text(json.dumps({"wavelength_nm": 1550.0, "ambient_n": 1.0, "substrate_n": 1.45,
                                  "layers": [layer]}), encoding="utf-8")
    code, output, error = run(capsys, "stack", "--config", config)
    assert code == 2
    assert output is None
    assert error["error"] == "ValidationError"


def test_stack_builtin(capsys, tmp_path):
    code, output, _ = run(capsys, "stack", "--builtin-paper", "--mosi-n", 5.0, "--mosi-k", 4.0,
                          "--out", tmp_path, "--svg")
    assert code == 0
    assert check_json(output, "stack_response") is True
    assert output["R"] + output["T"] + output["A"] == pytest.approx(1.0, abs=1e-9)
    assert output["total_thickness_nm"] == pytest.approx(3000, abs=200)
    thickness_um = output["total_thickness_nm"] / 1000
    assert output["multipass_path_um"] == pytest.approx(thickness_um / output["absorber_single_pass"])
    assert output["multipass_path_um"] > thickness_um
    assert json.loads((tmp_path / "stack_response.json").read_text(encoding="utf-8")) == output
    assert (tmp_path / "stack_spectrum.svg").exists()


def test_stack_from_config(capsys):
    code, output, _ = run(capsys, "stack", "--config", CONFIGS / "dbr_mirror.json")
    assert code == 0
    assert output["R"] > 0.99


def test_stack_needs_mosi_index(capsys):
    code, output, error = run(capsys, "stack", "--builtin-paper")
    assert code == 2
    assert output is None
    assert error["error"] == "ConfigurationError"
    assert "--mosi-n" in error["message"]


@pytest.mark.parametrize("argv", [(), ("frobnicate",), ("couple", "--diameters", "a,b"),
                                  ("stack", "--ordering", "sideways")])
def test_usage_errors(capsys, argv):
    assert main(list(argv)) == 2
    capsys.readouterr()
