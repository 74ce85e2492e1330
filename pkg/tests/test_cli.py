"""Command-line surface: config dialect, exit codes, file outputs.

The slow subcommands (evaluate, real training) are exercised end to end
by the acceptance suite; here we pin the plumbing — parsing, validation
ordering, where files land, and the 0/1/2 exit-code contract.
"""

import numpy as np
import pytest

from advkit import cli
from advkit.config import (
    SCHEMA,
    build_run_config,
    load_config_file,
    parse_config_text,
)
from advkit.errors import ConfigError


# --- config dialect ---------------------------------------------------------


def test_parse_ignores_comments_and_blanks():
    text = "\n".join(
        [
            "# full-line comment",
            "",
            "seed = 7",
            "   ",
            "out_dir = runs/a   # trailing comment",
        ]
    )
    assert parse_config_text(text) == {"seed": "7", "out_dir": "runs/a"}


def test_parse_rejects_line_without_equals():
    with pytest.raises(ConfigError, match=r"myfile:2: expected 'key = value'"):
        parse_config_text("seed = 1\nnot a pair\n", source="myfile")


def test_unknown_key_is_named():
    with pytest.raises(ConfigError, match=r"unknown config key 'attack\.manigen\.cc'"):
        build_run_config({"attack.manigen.cc": "2.0"})


def test_bad_value_names_key_and_value():
    with pytest.raises(ConfigError, match=r"bad value for seed: 'seven'"):
        build_run_config({"seed": "seven"})


def test_bool_words_accepted():
    for word, expected in [("true", True), ("YES", True), ("0", False), ("No", False)]:
        rc = build_run_config({"train_missing": word})
        assert rc.train_missing is expected
    with pytest.raises(ConfigError, match="expected a boolean"):
        build_run_config({"train_missing": "definitely"})


def test_resplit_seed_optional():
    assert build_run_config({}).resplit_seed is None
    assert build_run_config({"resplit_seed": "none"}).resplit_seed is None
    assert build_run_config({"resplit_seed": "9"}).resplit_seed == 9


def test_defaults_fill_model_paths_from_out_dir():
    rc = build_run_config({"out_dir": "exp1"})
    assert rc.model_paths["clf"].endswith("exp1/mnist-clf.mgwt")
    assert rc.model_paths["ae"].endswith("exp1/mnist-ae.mgwt")
    explicit = build_run_config({"model.ae": "elsewhere/ae.mgwt"})
    assert explicit.model_paths["ae"] == "elsewhere/ae.mgwt"


def test_overrides_beat_file_values():
    rc = build_run_config({"seed": "1", "out_dir": "a"}, {"seed": "2"})
    assert rc.seed == 2
    assert rc.out_dir == "a"


def test_digest_stable_and_value_sensitive():
    a = build_run_config({"seed": "5"})
    b = build_run_config({"seed": "5"})
    c = build_run_config({"seed": "6"})
    assert a.digest() == b.digest()
    assert a.digest() != c.digest()
    assert len(a.digest()) == 16


def test_attack_configs_materialized_per_kind():
    rc = build_run_config(
        {"attack.bim.steps": "4", "attack.bim.alpha": "0.08", "seed": "11"}
    )
    assert set(rc.attacks) == {"manigen", "carlini", "fgsm", "bim"}
    assert rc.attacks["manigen"].c == 1.0
    assert rc.attacks["manigen"].check_period == 10
    assert rc.attacks["bim"].steps == 4
    for cfg in rc.attacks.values():
        assert cfg.seed == 11


def test_unreachable_bim_ball_rejected_at_config_time():
    # steps * alpha below epsilon can never reach the ball boundary.
    with pytest.raises(ValueError, match="cannot reach the epsilon ball"):
        build_run_config({"attack.bim.steps": "4"})  # 4 * 0.05 < 0.25


def test_dataset_and_sample_count_validated():
    with pytest.raises(ConfigError, match="dataset must be mnist or cifar10"):
        build_run_config({"dataset": "svhn"})
    with pytest.raises(ConfigError, match="sample_count"):
        build_run_config({"sample_count": "0"})


def test_every_schema_key_round_trips_through_a_file(tmp_path):
    # A file that sets every key to its own default (in the canonical
    # spelling the digest uses) must parse cleanly and produce the same
    # digest as the all-defaults config.
    defaults = dict(build_run_config({}).effective)
    path = tmp_path / "full.cfg"
    path.write_text(
        "\n".join(f"{key} = {value}" for key, value in defaults.items()),
        encoding="utf-8",
    )
    rc = build_run_config(load_config_file(str(path)))
    assert rc.digest() == build_run_config({}).digest()


# --- CLI exit codes and outputs ----------------------------------------------


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    """A miniature on-disk dataset: 2 train / 1 test image per class."""
    d = tmp_path_factory.mktemp("cli-data")
    code = cli.main(
        ["synth-data", "--data", str(d), "--train-per-class", "2", "--test-per-class", "1"]
    )
    assert code == 0
    return d


@pytest.fixture(scope="module")
def model_dir(tmp_path_factory, corpus_dir):
    """Weight files produced through the real train commands (0 epochs)."""
    out = tmp_path_factory.mktemp("cli-models")
    cfg = out / "fast.cfg"
    cfg.write_text(
        "train.clf.epochs = 0\ntrain.ae.epochs = 0\ntrain.clf.subset = 20\n",
        encoding="utf-8",
    )
    for cmd in ("train-clf", "train-ae"):
        code = cli.main(
            [cmd, "--config", str(cfg), "--data", str(corpus_dir), "--out", str(out)]
        )
        assert code == 0
    return out


def test_synth_data_writes_idx_files(corpus_dir):
    names = {p.name for p in corpus_dir.iterdir()}
    assert {
        "train-images-idx3-ubyte",
        "train-labels-idx1-ubyte",
        "t10k-images-idx3-ubyte",
        "t10k-labels-idx1-ubyte",
    } <= names


def test_train_commands_save_weights(model_dir):
    assert (model_dir / "mnist-clf.mgwt").exists()
    assert (model_dir / "mnist-ae.mgwt").exists()


def test_unknown_config_key_exits_1(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("attack.manigen.cc = 2.0\n", encoding="utf-8")
    code = cli.main(["evaluate", "--config", str(bad)])
    assert code == 1
    assert "attack.manigen.cc" in capsys.readouterr().err


def test_missing_config_file_exits_1(capsys):
    code = cli.main(["evaluate", "--config", "/no/such/file.cfg"])
    assert code == 1
    assert "config file not found" in capsys.readouterr().err


def test_missing_data_dir_exits_1(tmp_path, capsys):
    code = cli.main(["train-ae", "--data", str(tmp_path / "nowhere")])
    assert code == 1
    assert "data directory" in capsys.readouterr().err


def test_attack_without_autoencoder_exits_1_before_compute(
    tmp_path, corpus_dir, model_dir, capsys
):
    # Only the classifier weights are present in this out dir.
    out = tmp_path / "half"
    out.mkdir()
    (out / "mnist-clf.mgwt").write_bytes((model_dir / "mnist-clf.mgwt").read_bytes())
    code = cli.main(
        ["attack", "--kind", "manigen", "--data", str(corpus_dir), "--out", str(out)]
    )
    assert code == 1
    err = capsys.readouterr().err
    assert "missing trained model for 'ae'" in err
    assert not (out / "adv-manigen.npy").exists()


def test_bad_attack_kind_exits_1(capsys):
    code = cli.main(["attack", "--kind", "nosuch"])
    assert code == 1
    assert "invalid choice" in capsys.readouterr().err


def test_corrupt_weights_exit_2(tmp_path, corpus_dir, model_dir, capsys):
    out = tmp_path / "corrupt"
    out.mkdir()
    (out / "mnist-ae.mgwt").write_bytes(b"not a weight container at all")
    (out / "mnist-clf.mgwt").write_bytes((model_dir / "mnist-clf.mgwt").read_bytes())
    code = cli.main(
        ["calibrate-magnet", "--data", str(corpus_dir), "--out", str(out)]
    )
    assert code == 2
    assert "runtime error" in capsys.readouterr().err


def test_calibrate_magnet_writes_threshold_file(tmp_path, corpus_dir, model_dir, capsys):
    out = tmp_path / "calib"
    out.mkdir()
    for name in ("mnist-ae.mgwt", "mnist-clf.mgwt"):
        (out / name).write_bytes((model_dir / name).read_bytes())
    code = cli.main(
        ["calibrate-magnet", "--data", str(corpus_dir), "--out", str(out)]
    )
    assert code == 0
    text = (out / "magnet.txt").read_text(encoding="utf-8")
    assert "detector = reconstruction_error" in text
    assert "threshold = " in text
    capsys.readouterr()


def test_export_grid_writes_png(tmp_path, capsys):
    rng = np.random.default_rng(0)
    row = rng.random((3, 8, 8, 1), dtype=np.float32)
    a, b = tmp_path / "a.npy", tmp_path / "b.npy"
    np.save(a, row)
    np.save(b, row[::-1])
    png = tmp_path / "grid.png"
    code = cli.main(
        ["export-grid", str(a), str(b), "--path", str(png), "--count", "3"]
    )
    assert code == 0
    assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    capsys.readouterr()


def test_export_grid_missing_row_file_exits_1(tmp_path, capsys):
    code = cli.main(["export-grid", str(tmp_path / "ghost.npy"), "--path", "x.png"])
    assert code == 1
    assert "row file not found" in capsys.readouterr().err


def test_shipped_presets_parse(request):
    configs = request.config.rootpath / "configs"
    presets = sorted(configs.glob("*.cfg"))
    assert len(presets) >= 4, "expected desk and full presets for both datasets"
    for preset in presets:
        rc = build_run_config(load_config_file(str(preset)))
        assert rc.dataset in ("mnist", "cifar10")
        # Desk presets must stay desk-sized; full presets mirror the
        # published budgets.
        if preset.name.endswith("-desk.cfg"):
            assert rc.train_epochs["clf"] <= 10
        else:
            assert rc.train_epochs["clf"] >= 100
