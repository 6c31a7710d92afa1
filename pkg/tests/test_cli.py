import numpy as np
import pytest

from glioinv.cli import main
from glioinv.config import ConfigError, RunConfig, build_config, parse_config_text
from glioinv.volume_io import load_volume

SMALL = ["--grid", "32,32", "--nt", "4", "--case", "2"]


def test_dry_run_prints_resolved_config(capsys):
    assert main(["invert", "--dry-run", *SMALL, "--rho", "1.5"]) == 0
    out = capsys.readouterr().out
    assert "rho = 1.5" in out and "dims = 32,32" in out


def test_negative_rho_is_config_error_naming_field(capsys):
    assert main(["forward", "--rho", "-1"]) == 2
    assert "rho" in capsys.readouterr().err


def test_unknown_config_key_and_section(tmp_path, capsys):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[model]\nrho = 2\nsigma = 3\n")
    assert main(["synth", "--config", str(cfg)]) == 2
    assert "model.sigma" in capsys.readouterr().err
    cfg.write_text("[solver]\ntol = 1\n")
    assert main(["synth", "--config", str(cfg)]) == 2


def test_config_precedence_and_parsing(tmp_path):
    vals = parse_config_text("[grid]\ndims = 32x32\n[inversion]\nbetas = 1e-3, 1e-2\nwarm_start = no\n")
    assert vals == {"dims": (32, 32), "betas": (1e-3, 1e-2), "warm_start": False}
    cfg = build_config(vals, {"dims": (16, 16), "rho": None})
    assert cfg.dims == (16, 16) and cfg.rho == RunConfig().rho
    with pytest.raises(ConfigError, match="hessian"):
        build_config({}, {"hessian": "bfgs"})
    with pytest.raises(ConfigError, match="k_w"):
        build_config({"k_w": 0.001})
    with pytest.raises(ConfigError, match="grid.nt"):
        parse_config_text("[grid]\nnt = many\n")


def test_bad_flag_exits_2():
    assert main(["invert", "--nt", "x"]) == 2


def test_synth_writes_volumes_deterministically(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["synth", *SMALL, "--out", str(a)]) == 0
    assert main(["synth", *SMALL, "--out", str(b)]) == 0
    names = sorted(p.name for p in a.glob("*.glf"))
    assert names == ["K.glf", "T.glf", "c_t0.glf", "c_t1.glf", "c_t2.glf", "dti.glf", "labels.glf"]
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()
    c0 = load_volume(a / "c_t0.glf")
    assert c0.grid.dims == (32, 32) and c0.values.max() <= 1
    assert "c_t1.glf" in (a / "manifest.txt").read_text()


def test_forward_log(tmp_path, capsys):
    assert main(["forward", *SMALL, "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "forward_log.csv").read_text().splitlines()
    assert lines[0] == "step,t,mass,max,extent"
    assert len(lines) == 1 + 9  # two time units at four steps each
    mass = [float(l.split(",")[2]) for l in lines[1:]]
    assert all(np.diff(mass) > 0)
    assert len(list((tmp_path / "trajectory").glob("*.glf"))) == 9


def test_invert_writes_outputs(tmp_path, capsys):
    rc = main(["invert", *SMALL, "--cd", "0.2", "--eta", "0.05", "--out", str(tmp_path)])
    assert rc == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("c_d,eta,eps_kf")
    assert out[1].startswith("0.20,0.05,")
    assert (tmp_path / "convergence.csv").exists()
    assert len(np.loadtxt(tmp_path / "p.txt")) > 0
    assert load_volume(tmp_path / "recon_t2.glf").grid.dims == (32, 32)


def test_lcurve_needs_four_betas(tmp_path, capsys):
    cfg = tmp_path / "l.ini"
    cfg.write_text("[inversion]\nbetas = 1e-3, 1e-2, 1e-1\n")
    assert main(["lcurve", *SMALL, "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "betas" in capsys.readouterr().err


def test_unwritable_output_exits_4(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["synth", *SMALL, "--out", str(blocker / "sub")]) == 4
    assert "I/O error" in capsys.readouterr().err


def test_missing_config_file_exits_4(tmp_path):
    assert main(["synth", "--config", str(tmp_path / "nope.ini")]) == 4
