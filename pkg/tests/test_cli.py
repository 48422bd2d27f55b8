import numpy as np
import pytest

from tagforge import imageproc
from tagforge.cli import build_parser, main
from tagforge.distribution import EmpiricalDistribution, TargetProfile, load_profile, save_profile
from tagforge.estimation import HISTOGRAM, THUMBNAIL, from_features, save_estimator
from tagforge.scene_model import OptionKey

SMALL = """seed = 3
num_identities = 2
images_per_identity = 2
[backgrounds]
source = "procedural"
count = 3
"""

PLAIN = """seed = 3
beta = 0.0
[backgrounds]
source = "plain"
[options.gamma]
mode = "fixed"
value = 1.0
[options.working_height_px]
mode = "fixed"
value = 256
"""


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "small.toml"
    p.write_text(SMALL)
    return p


def write_profile(path, key, values):
    save_profile(TargetProfile({key: EmpiricalDistribution(key, tuple(values), "t")}), path)


def test_generate_ok(cfg_file, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["generate", "--config", str(cfg_file), "--out", str(out), "--workers", "1"]) == 0
    assert (out / "manifest.csv").exists()
    assert "wrote 4 images of 2 identities" in capsys.readouterr().out


def test_generate_missing_config(tmp_path, capsys):
    missing = tmp_path / "absent.toml"
    assert main(["generate", "--config", str(missing), "--out", str(tmp_path / "o")]) == 1
    assert str(missing) in capsys.readouterr().err


def test_generate_profile_without_profile_mode_warns(cfg_file, tmp_path, caplog):
    prof = tmp_path / "p.profile"
    write_profile(prof, OptionKey.gamma, [1.2])
    code = main(["generate", "--config", str(cfg_file), "--profile", str(prof), "--out", str(tmp_path / "o"),
                 "--workers", "1"])
    assert code == 0
    assert "no option" in caplog.text and "profile mode" in caplog.text


def test_generate_error_exit_two(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text(SMALL + '[poses]\nbvh = "nope.bvh"\n')
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "o"), "--workers", "1"]) == 2
    assert "identity 0, image 0" in capsys.readouterr().err


@pytest.mark.parametrize("argv,needle", [
    (["calibrate", "--option", "background_ref"], "option not estimable"),
    (["calibrate", "--option", "gamma", "--n", "3"], "n >= k"),
    (["calibrate", "--option", "exposure"], "unknown option key"),
])
def test_calibrate_errors(argv, needle, tmp_path, capsys):
    assert main(argv + ["--out", str(tmp_path / "e.est"), "--workers", "1"]) == 1
    assert needle in capsys.readouterr().err


def test_calibrate_writes_estimator(cfg_file, tmp_path):
    out = tmp_path / "g.est"
    assert main(["calibrate", "--option", "gamma", "--config", str(cfg_file), "--n", "6", "--k", "2",
                 "--range", "0.5", "2.0", "--out", str(out), "--workers", "1"]) == 0
    assert out.stat().st_size > 0


@pytest.fixture
def target_dir(tmp_path):
    d = tmp_path / "target"
    d.mkdir()
    for i in range(3):
        imageproc.write_png(d / f"{i}.png", np.full((256, 128, 3), 0.2 + 0.1 * i))
    return d


def test_estimate_and_merge(target_dir, tmp_path, capsys):
    g_est, d_est = tmp_path / "g.est", tmp_path / "d.est"
    rng = np.random.default_rng(0)
    save_estimator(from_features(OptionKey.gamma, HISTOGRAM, 1, rng.random((4, 32)), np.array([0.6, 1.0, 1.4, 1.8])),
                   g_est)
    save_estimator(from_features(OptionKey.camera_depression_deg, THUMBNAIL, 2, rng.random((4, 128)),
                                 np.array([0.0, 20.0, 40.0, 60.0])), d_est)
    prof = tmp_path / "target.profile"
    csv_path = tmp_path / "hist.csv"
    assert main(["estimate", "--estimator", str(g_est), "--images", str(target_dir), "--out", str(prof),
                 "--hist-csv", str(csv_path)]) == 0
    text = capsys.readouterr().out
    assert text.count("[") >= 18
    assert len(csv_path.read_text().splitlines()) == 19
    assert set(load_profile(prof).keys()) == {OptionKey.gamma}
    assert main(["estimate", "--estimator", str(d_est), "--images", str(target_dir), "--out", str(prof)]) == 0
    assert set(load_profile(prof).keys()) == {OptionKey.gamma, OptionKey.camera_depression_deg}


def test_estimate_empty_dir(tmp_path):
    est = tmp_path / "g.est"
    save_estimator(from_features(OptionKey.gamma, HISTOGRAM, 1, np.zeros((1, 32)), np.array([1.0])), est)
    (tmp_path / "empty").mkdir()
    assert main(["estimate", "--estimator", str(est), "--images", str(tmp_path / "empty"),
                 "--out", str(tmp_path / "p")]) == 1


def test_compare(tmp_path, capsys):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    vals = [0.6, 0.9, 1.1, 1.3]
    write_profile(a, OptionKey.gamma, vals)
    write_profile(b, OptionKey.gamma, [v + 0.5 for v in vals])
    write_profile(c, OptionKey.ambient, [0.2])
    assert main(["compare", "--a", str(a), "--b", str(a)]) == 0
    assert "W1=0\t" in capsys.readouterr().out
    assert main(["compare", "--a", str(a), "--b", str(b)]) == 0
    w1 = float(capsys.readouterr().out.split("W1=")[1].split()[0])
    assert abs(w1 - 0.5) <= 1e-9
    assert main(["compare", "--a", str(a), "--b", str(c)]) == 1


def _preview(tmp_path, name, options):
    cfg = tmp_path / "plain.toml"
    cfg.write_text(PLAIN)
    out = tmp_path / name
    assert main(["preview", "--config", str(cfg), "--seed", "4", "--options", options, "--out", str(out)]) == 0
    return imageproc.read_image(out)


def test_preview_depression_shortens(tmp_path):
    def height(img):
        rows = np.where(np.abs(img - 128 / 255).max(axis=2).max(axis=1) > 1e-9)[0]
        return rows[-1] - rows[0]
    level = _preview(tmp_path, "a.png", "camera_depression_deg=0,camera_azimuth_deg=0")
    steep = _preview(tmp_path, "b.png", "camera_depression_deg=60,camera_azimuth_deg=0")
    assert height(steep) < height(level)


def test_preview_gamma_ordering(tmp_path):
    bright = _preview(tmp_path, "a.png", "gamma=0.5")
    dark = _preview(tmp_path, "b.png", "gamma=2.0")
    assert bright.mean() > dark.mean()


@pytest.mark.parametrize("spec", ["brightness=2", "gamma=abc", "gamma", "gamma=9"])
def test_preview_bad_spec(spec, tmp_path, capsys):
    assert main(["preview", "--options", spec, "--out", str(tmp_path / "x.png")]) == 1
    assert "error" in capsys.readouterr().err


def test_gamma_variant_command(target_dir, tmp_path):
    out = tmp_path / "g"
    assert main(["gamma-variant", "--images", str(target_dir), "--lo", "0.5", "--hi", "1.5", "--out", str(out)]) == 0
    assert (out / "gamma_values.csv").exists()


SUBCOMMANDS = ["generate", "calibrate", "estimate", "compare", "preview", "gamma-variant"]


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_help_lists_flags(cmd, capsys):
    with pytest.raises(SystemExit) as e:
        main([cmd, "--help"])
    assert e.value.code == 0
    text = capsys.readouterr().out
    sub = build_parser()._subparsers._group_actions[0].choices[cmd]
    for action in sub._actions:
        for flag in action.option_strings:
            assert flag in text


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_unknown_flag_rejected(cmd):
    with pytest.raises(SystemExit) as e:
        main([cmd, "--definitely-not-a-flag"])
    assert e.value.code == 1


def test_seed_env_override(tmp_path, monkeypatch, cfg_file):
    outs = []
    for seed in ("11", "11", "12"):
        monkeypatch.setenv("TAGFORGE_SEED", seed)
        out = tmp_path / f"o{len(outs)}"
        assert main(["generate", "--config", str(cfg_file), "--out", str(out), "--workers", "1"]) == 0
        outs.append((out / "manifest.csv").read_text())
    assert outs[0] == outs[1] != outs[2]
    assert "seed=11" in outs[0]
