import filecmp
from pathlib import Path

import pytest

from enlarge_sim.cli import EXIT_CONFIG, EXIT_GATE, EXIT_OK, EXIT_POWER, load_config, run
from enlarge_sim.errors import ConfigurationError

GAUSSIAN = """
horizon = 1.0
n_steps = 64
n_paths = 10000
seed = 4

[model]
beta = 0.0
sigma2 = 1.0
"""

AC = GAUSSIAN.replace("n_steps = 64", "n_steps = 128") + """
[hazard]
kind = "constant"
rate = 1.0
"""


@pytest.fixture
def config(tmp_path):
    def write(text, name="run.toml"):
        p = tmp_path / name
        p.write_text(text)
        return str(p)
    return write


def test_verify_levy_gaussian_smoke(config, tmp_path, capsys):
    out = tmp_path / "out"
    assert run(["verify-levy", "--config", config(GAUSSIAN), "--out", str(out)]) == EXIT_OK
    lines = (out / "characteristic.csv").read_text().splitlines()
    assert lines[0].startswith("# config_sha256=") and lines[0].endswith("seed=4")
    assert lines[1] == "u,t,empirical_re,empirical_im,theory_re,theory_im,z_re,z_im"
    assert "PASS characteristic function" in (out / "summary.txt").read_text()
    manifest = (out / "manifest.txt").read_text()
    assert "seed: 4" in manifest and "kernel_backend:" in manifest
    assert "PASS" in capsys.readouterr().out


def test_floats_have_17_significant_digits(config, tmp_path):
    out = tmp_path / "out"
    run(["verify-levy", "--config", config(GAUSSIAN), "--out", str(out)])
    row = (out / "characteristic.csv").read_text().splitlines()[2].split(",")
    assert any(len(v.lstrip("-").replace(".", "").lstrip("0").split("e")[0]) >= 16 for v in row[2:])


def test_outputs_are_byte_identical_across_runs(config, tmp_path):
    cfg = config(GAUSSIAN)
    a, b = tmp_path / "a", tmp_path / "b"
    run(["verify-levy", "--config", cfg, "--out", str(a)])
    run(["verify-levy", "--config", cfg, "--out", str(b)])
    assert filecmp.cmp(a / "characteristic.csv", b / "characteristic.csv", shallow=False)
    assert (a / "summary.txt").read_bytes() == (b / "summary.txt").read_bytes()


def test_seed_override_changes_output(config, tmp_path):
    cfg = config(GAUSSIAN)
    run(["verify-levy", "--config", cfg, "--out", str(tmp_path / "a")])
    run(["verify-levy", "--config", cfg, "--seed", "5", "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "characteristic.csv").read_bytes() != (tmp_path / "b" / "characteristic.csv").read_bytes()


def test_missing_hazard_is_a_config_error(config, tmp_path, capsys):
    assert run(["verify-enlargement", "--config", config(GAUSSIAN), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "hazard" in capsys.readouterr().err


@pytest.mark.parametrize("text, field", [("horizon = [", "run.toml"), (GAUSSIAN + '\n[hazard]\nkind = "weird"\n', "hazard.kind"),
                                         (GAUSSIAN.replace("sigma2 = 1.0", "sigma2 = -1.0"), "model"),
                                         ('experiment = "represent"\n' + GAUSSIAN, "experiment")])
def test_field_level_messages(config, text, field):
    with pytest.raises(ConfigurationError, match=field.replace(".", r"\.")):
        load_config(config(text), "verify-levy")


def test_too_few_paths_is_a_power_error(config, tmp_path):
    assert run(["verify-levy", "--config", config(GAUSSIAN), "--paths", "500", "--out", str(tmp_path)]) == EXIT_POWER


def test_negative_control_inverts_levy_gate(config, tmp_path):
    assert run(["verify-levy", "--config", config(GAUSSIAN), "--negative-control", "--out", str(tmp_path)]) == EXIT_OK


@pytest.mark.slow
def test_multiplicity_negative_control_semantics(config, tmp_path):
    cfg = config(AC)
    # with an absolutely continuous hazard the single driver fails: plain run fails, control passes
    assert run(["multiplicity", "--config", cfg, "--negative-control", "--out", str(tmp_path / "neg")]) == EXIT_OK
    assert run(["multiplicity", "--config", cfg, "--out", str(tmp_path / "pos")]) == EXIT_GATE
    text = (tmp_path / "neg" / "singularity.csv").read_text()
    assert "absolutely_continuous" in text


def test_shipped_configs_parse():
    root = Path(__file__).resolve().parents[1] / "configs"
    names = {"verify_levy": "verify-levy", "verify_enlargement": "verify-enlargement", "represent": "represent",
             "multiplicity": "multiplicity", "multiplicity_control": "multiplicity", "time_change": "time-change"}
    for stem, exp in names.items():
        cfg = load_config(root / f"{stem}.toml", exp)
        assert cfg.n_paths >= 10_000
