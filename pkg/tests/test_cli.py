import csv

import pytest

from hppinet.cli import build_parser, main
from hppinet.config import ConfigError, RunConfig, parse_config

REFERENCE_CONFIG = """\
# reference module metrics (before optimization)
metrics.first_layer.acc = 0.9935
metrics.first_layer.ram = 87.2
metrics.first_layer.rom = 210.9
metrics.first_layer.macc = 142048
metrics.plmn.acc = 0.9517
metrics.plmn.ram = 25.9
metrics.plmn.rom = 890.6
metrics.plmn.macc = 889377
metrics.stationary.acc = 0.9950
metrics.stationary.ram = 87.2
metrics.stationary.rom = 210.9
metrics.stationary.macc = 142000
"""

TINY = "windows_per_class=12\nmax_epochs=2\npatience=1\nexplain_epochs=2\nstream_windows=20\n"


# -- config -------------------------------------------------------------------------


def test_config_defaults_and_values():
    cfg = parse_config("seed = 4\nlearning_rate=0.01\nsplit=0.8,0.1,0.1\n\n# comment\n")
    assert (cfg.seed, cfg.learning_rate, cfg.split) == (4, 0.01, (0.8, 0.1, 0.1))
    assert parse_config("").windows_per_class == RunConfig().windows_per_class


def test_config_profile_override():
    cfg = parse_config("profile.C1.freq_hz=1.5\nprofile.A1.amplitude=1,1,1,0,0,1\n")
    assert cfg.profiles()["C1"].freq_hz == 1.5
    assert cfg.profiles()["A1"].amplitude == (1.0, 1.0, 1.0, 0.0, 0.0, 1.0)


@pytest.mark.parametrize(
    "text",
    ["bogus=1", "seed", "seed=abc", "seed=1.5", "profile.Z9.freq_hz=1", "profile.A1.colour=1", "metrics.plmn.acc=0.9"],
)
def test_config_rejects(text):
    with pytest.raises(ConfigError):
        parse_config(text)


# -- CLI ----------------------------------------------------------------------------


def test_help_for_every_subcommand(capsys):
    for cmd in ("synth", "train", "eval", "quantize", "resources", "stream", "explain", "ablate"):
        assert main([cmd, "--help"]) == 0
        assert "usage" in capsys.readouterr().out


def test_usage_errors_exit_1(tmp_path, capsys):
    assert main(["frobnicate"]) == 1
    assert main(["synth", "--bogus", "--out", str(tmp_path)]) == 1
    assert "--bogus" in capsys.readouterr().err
    assert main(["train", "--out", str(tmp_path)]) == 1
    assert "--module" in capsys.readouterr().err
    (tmp_path / "bad.cfg").write_text("nope=1\n")
    assert main(["synth", "--out", str(tmp_path), "--config", str(tmp_path / "bad.cfg")]) == 1
    assert "nope" in capsys.readouterr().err


def test_missing_data_exits_2(tmp_path, capsys):
    assert main(["eval", "--out", str(tmp_path)]) == 2
    assert "dataset.npz" in capsys.readouterr().err


def test_resources_with_reference_metrics(tmp_path, capsys):
    (tmp_path / "t2.cfg").write_text(REFERENCE_CONFIG)
    assert main(["resources", "--p", "0.5", "--out", str(tmp_path), "--config", str(tmp_path / "t2.cfg")]) == 0
    out = capsys.readouterr().out
    assert "ACC 96.70%" in out
    assert "ROM 1312.4 KiB" in out
    assert "MACC 1173425" in out
    assert "RAM 143.75 KiB" in out
    rows = list(csv.reader(open(tmp_path / "resources.csv")))
    assert rows[0] == ["module", "acc", "ram_kib", "rom_kib", "macc"]
    assert len(rows) == 5


def test_resources_rejects_bad_p(tmp_path):
    (tmp_path / "t2.cfg").write_text(REFERENCE_CONFIG)
    assert main(["resources", "--p", "1.5", "--out", str(tmp_path), "--config", str(tmp_path / "t2.cfg")]) == 1


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    (d / "tiny.cfg").write_text(TINY)
    args = ["--out", str(d), "--config", str(d / "tiny.cfg")]
    assert main(["synth"] + args) == 0
    assert main(["train", "--module", "first"] + args) == 0
    assert main(["train", "--module", "stationary"] + args) == 0
    assert main(["train", "--module", "plmn"] + args) == 0
    return d, args


def test_synth_artifacts(workdir):
    d, _ = workdir
    assert (d / "dataset.npz").exists()
    assert "seed=0" in (d / "manifest.txt").read_text()
    assert (d / "streams" / "C1.csv").read_text().startswith("t,ax,ay,az,gx,gy,gz,label")


def test_training_is_byte_reproducible(workdir, tmp_path):
    d, args = workdir
    first = (d / "plmn.hppi").read_bytes()
    assert main(["train", "--module", "plmn"] + args) == 0
    assert (d / "plmn.hppi").read_bytes() == first


def test_eval_quantize_stream_explain(workdir):
    d, args = workdir
    assert main(["eval"] + args) == 0
    assert (d / "confusion_system.csv").read_text().startswith("true\\pred,A1")
    assert main(["quantize"] + args) == 0
    assert (d / "plmn.int8.hppi").stat().st_size < (d / "plmn.hppi").stat().st_size / 3
    assert main(["resources"] + args) == 0
    assert main(["stream", "--windows", "15"] + args) == 0
    assert len((d / "events.csv").read_text().splitlines()) == 16
    assert main(["explain"] + args) == 0
    assert "FFT" in (d / "attribution.txt").read_text()


def test_variant_flag_only_for_plmn(workdir):
    _, args = workdir
    assert main(["train", "--module", "first", "--variant", "fft"] + args) == 1


def test_corrupt_model_exits_2(workdir, tmp_path, capsys):
    d, args = workdir
    for name in ("dataset.npz", "tiny.cfg", "first_layer.hppi", "stationary.hppi"):
        (tmp_path / name).write_bytes((d / name).read_bytes())
    (tmp_path / "plmn.hppi").write_bytes(b"NOPE" + (d / "plmn.hppi").read_bytes()[4:])
    assert main(["eval", "--out", str(tmp_path), "--config", str(tmp_path / "tiny.cfg")]) == 2
    assert "magic" in capsys.readouterr().err


def test_ablate_has_six_rows(workdir):
    d, args = workdir
    assert main(["ablate"] + args) == 0
    rows = list(csv.reader(open(d / "ablation.csv")))
    assert [r[0] for r in rows[1:]] == ["FFT", "WT", "GB", "PLMN (no attention)", "PLCN", "PLMN"]


def test_parser_lists_commands():
    text = build_parser().format_help()
    for cmd in ("synth", "train", "eval", "quantize", "resources", "stream", "explain", "ablate"):
        assert cmd in text
