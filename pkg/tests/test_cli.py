import configparser
import subprocess
import sys

import numpy as np
import pytest

from cortical.cli import main
from cortical.config import load_config, parse_config
from cortical.errors import ConfigError
from cortical.imaging import RgbImage, save_image


def manifest(out):
    p = configparser.ConfigParser(interpolation=None)
    p.read(out / "manifest.txt")
    return p


def small(*extra):
    return ["--set", "grid.width=16", "--set", "grid.height=16", *extra]


def test_make_test_image_and_manifest(tmp_path):
    out = tmp_path / "img"
    args = ["make-test-image", "--out-dir", str(out), *small("--set", "image.kind=checker")]
    assert main(args) == 0
    assert (out / "test_image.png").exists() and (out / "test_image.png.txt").exists()
    m = manifest(out)
    assert m["experiment"]["command"] == "make-test-image"
    assert m["run"]["status"] == "0"
    assert "test_image.png" in m["run"]["outputs"]


def test_reconstruct_rerun_from_manifest_is_identical(tmp_path):
    out = tmp_path / "rec"
    args = ["reconstruct", "--out-dir", str(out), *small("--set", "operator.theta_kind=pinwheel",
                                                         "--set", "operator.partition=1/2,1/2,0")]
    assert main(args) == 0
    first = (out / "reconstructed.csv").read_bytes()
    m = manifest(out)
    assert m["run"]["converged_R"] == "true"
    assert m["operator"]["seed"] == "0"
    (tmp_path / "m.ini").write_text((out / "manifest.txt").read_text())
    assert main(["run", "--config", str(tmp_path / "m.ini")]) == 0
    assert (out / "reconstructed.csv").read_bytes() == first


def test_seed_override_reaches_operator(tmp_path):
    out = tmp_path / "map"
    assert main(["make-map", "--seed", "9", "--out-dir", str(out), *small("--set", "operator.theta_kind=salt_pepper")]) == 0
    m = manifest(out)
    assert m["experiment"]["seed"] == "9" and m["operator"]["seed"] == "9"
    theta = np.loadtxt(out / "orientation.csv", delimiter=",")
    assert theta.shape == (16, 16) and np.all((theta >= 0) & (theta < np.pi))


def test_differentiate_and_green(tmp_path):
    assert main(["differentiate", "--out-dir", str(tmp_path / "d"), *small()]) == 0
    assert (tmp_path / "d" / "differentiated.csv").exists()
    out = tmp_path / "g"
    assert main(["green", "--out-dir", str(out), *small()]) == 0
    ratio = float(manifest(out)["run"]["anisotropy_ratio"])
    assert ratio == pytest.approx(1.0, abs=0.15)
    for name in ("green.csv", "green.png", "contours.csv", "summary.txt"):
        assert (out / name).exists()


def test_colour_input_file(tmp_path):
    rgb = np.random.default_rng(0).uniform(size=(12, 12, 3))
    save_image(RgbImage.from_array(rgb), tmp_path / "in.png")
    cfg = tmp_path / "c.ini"
    cfg.write_text("[experiment]\ncommand = reconstruct\ninput = in.png\n[solver]\ntolerance = 1e-6\n")
    out = tmp_path / "o"
    assert main(["run", "--config", str(cfg), "--out-dir", str(out)]) == 0
    for band in "RGB":
        assert (out / f"reconstructed_{band}.csv").exists()


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[nonsense]\nx = 1\n")
    assert main(["run", "--config", str(bad)]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.ini")]) == 2
    assert main(["green", "--set", "gridwidth=3"]) == 2
    assert main(["green", "--set", "grid.width=abc"]) == 2
    assert main(["green", "--set", "solver.dt=-1"]) == 2
    assert main(["run"]) == 2
    assert "config error" in capsys.readouterr().err


def test_io_error_exit_3(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[experiment]\ncommand = reconstruct\ninput = nowhere.png\n")
    assert main(["run", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == 3


def test_instability_exit_4(tmp_path, capsys):
    args = ["reconstruct", "--out-dir", str(tmp_path / "o"), *small("--set", "solver.dt=5")]
    assert main(args) == 4
    assert "iteration" in capsys.readouterr().err


def test_homogenize_verdicts(tmp_path):
    common = ["--set", "homogenize.epsilons=1/8,1/16", "--set", "homogenize.delta=1"]
    out = tmp_path / "h"
    assert main(["homogenize", "--out-dir", str(out), *common, "--set", "homogenize.expected_a0=0.25"]) == 0
    assert float(manifest(out)["run"]["fitted_coefficient"]) == pytest.approx(0.25, rel=0.02)
    assert "verdict: PASS" in (out / "summary.txt").read_text()
    bad = ["homogenize", "--out-dir", str(tmp_path / "h2"), *common, "--set", "homogenize.expected_a0=0.5"]
    assert main(bad) == 5


def test_parse_config_defaults_and_fractions():
    cfg = parse_config("[operator]\npartition = 1/3, 1/3, 1/3\ntheta = pi/4\n", command="green")
    assert sum(cfg.operator.partition) == pytest.approx(1.0)
    assert cfg.geometry.shape == (64, 64)
    assert cfg.solver.dt == "default" and cfg.solver.tolerance == "auto"
    again = parse_config(cfg.to_ini())
    assert again.to_ini() == cfg.to_ini()
    with pytest.raises(ConfigError):
        parse_config("[experiment]\ncommand = fly\n")
    with pytest.raises(ConfigError):
        parse_config("[solver]\ndt = fast\n", command="green")


def test_shipped_configs_parse():
    from pathlib import Path

    configs = sorted((Path(__file__).parent.parent / "configs").glob("*.ini"))
    assert configs
    for path in configs:
        cfg = load_config(path)
        assert cfg.command
        cfg.operator.build(cfg.geometry) if cfg.command != "homogenize" else None


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "cortical.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("cortical")
