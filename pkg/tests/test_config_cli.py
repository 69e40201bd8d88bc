import json

import pytest
import yaml

from seedstab import cli
from seedstab.config import from_dict, load_config
from seedstab.errors import ConfigError

SMALL = {
    "seeds": [0, 1, 2],
    "train": {"epochs": 3, "embedding_dim": 8, "hidden_dim": 8},
    "swa": {"cutoff_epoch": 1, "candidate_lrs": ["6e-3"]},
    "corpus": {"n_train": 300, "n_dev": 60, "n_test": 200},
    "suite": {"scale": 0.05},
    "names": {"min_count": 1},
}


def write_config(tmp_path, overrides=None, **top):
    cfg = {**SMALL, **(overrides or {}), **top}
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


def test_defaults_validate():
    cfg = from_dict({})
    assert cfg.seeds == list(range(10)) and cfg.variants == ["vanilla", "swa"]
    assert cfg.suite.scale == 0.1
    assert from_dict({"suite": {"tau": 0.2}}).suite.scale == 0.1


def test_yaml_scientific_notation_is_a_float(tmp_path):
    cfg = load_config(write_config(tmp_path, train={"peak_lr": "1e-2", "epochs": 3}))
    assert cfg.train.peak_lr == 0.01
    assert cfg.swa.candidate_lrs == [0.006]


@pytest.mark.parametrize(
    "data, field",
    [
        ({"bogus": 1}, "bogus"),
        ({"train": {"nope": 1}}, "train.nope"),
        ({"seeds": []}, "seeds"),
        ({"variants": ["ema"]}, "variants"),
        ({"swa": {"cutoff_epoch": 5}}, "swa.cutoff_epoch"),
        ({"corpus": {"source": "tsv"}}, "corpus.train_tsv"),
        ({"suite": {"enabled": ["Nope"]}}, "suite.enabled"),
        ({"lexicons": {"colours": "x.txt"}}, "lexicons.colours"),
        ({"train": {"peak_lr": "fast"}}, "train.peak_lr"),
    ],
)
def test_config_errors_name_the_field(data, field):
    with pytest.raises(ConfigError) as exc:
        from_dict(data)
    assert exc.value.field == field


def test_config_dump_roundtrips():
    cfg = from_dict(SMALL)
    again = from_dict(yaml.safe_load(cfg.dump()))
    assert again == cfg


def test_seed_list_parsing():
    assert cli._seed_list("0-3,7") == [0, 1, 2, 3, 7]


def test_cli_usage_error_exit_code(capsys):
    assert cli.main(["frobnicate"]) == cli.EXIT_USAGE


def test_cli_config_error_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text("seeds: []\n")
    assert cli.main(["prepare", "--config", str(path), "--out", str(tmp_path / "o")]) == cli.EXIT_USAGE
    assert "seeds" in capsys.readouterr().err


def test_cli_requires_output_dir(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("SEEDSTAB_OUT", raising=False)
    assert cli.main(["prepare", "--config", str(write_config(tmp_path))]) == cli.EXIT_USAGE


def test_cli_out_env_fallback(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("SEEDSTAB_OUT", str(tmp_path / "env_out"))
    assert cli.main(["prepare", "--config", str(write_config(tmp_path))]) == 0
    assert (tmp_path / "env_out" / "suite" / "manifest.json").exists()


def test_cli_stage_before_prepare_is_data_error(tmp_path, capsys):
    code = cli.main(["train", "--config", str(write_config(tmp_path)), "--out", str(tmp_path / "o")])
    assert code == cli.EXIT_DATA
    assert "vocab.json" in capsys.readouterr().err


def test_cli_missing_lexicon_names_its_users(tmp_path, capsys):
    cfg = write_config(tmp_path, lexicons={"neutral_words": str(tmp_path / "missing.txt")})
    assert cli.main(["prepare", "--config", str(cfg), "--out", str(tmp_path / "o")]) == cli.EXIT_DATA
    assert "Change Neutral Words" in capsys.readouterr().err


def test_cli_all_seeds_failing_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path, train={"epochs": 3, "peak_lr": 1e300})
    out = tmp_path / "o"
    assert cli.main(["prepare", "--config", str(cfg), "--out", str(out)]) == 0
    assert cli.main(["train", "--config", str(cfg), "--out", str(out), "--variant", "vanilla"]) == cli.EXIT_ALL_FAILED
    log = json.loads((out / "logs" / "train_seed0_vanilla.json").read_text())
    assert log["failed"] and log["epoch"] == 1
