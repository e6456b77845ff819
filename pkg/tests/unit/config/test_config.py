import pytest

from bunca.config import (
    ConfigError,
    RunConfig,
    TrainConfig,
    env_overrides,
    parse_ks,
    parse_lines,
)

SAMPLE = """
# desk-scale run
d = 32
lr = 0.01   # faster
use_cc = false
ks = 5,10
dataset_dir = data/toy
"""


def test_parse_lines_strips_comments():
    assert parse_lines(SAMPLE) == {
        "d": "32",
        "lr": "0.01",
        "use_cc": "false",
        "ks": "5,10",
        "dataset_dir": "data/toy",
    }


def test_from_text_coerces_types():
    cfg = RunConfig.from_text(SAMPLE)
    assert cfg.d == 32
    assert cfg.lr == 0.01
    assert cfg.use_cc is False
    assert cfg.ks == (5, 10)


def test_unknown_key_names_line():
    with pytest.raises(ConfigError) as ie:
        parse_lines("d = 4\n\nwidth = 3\n", "run.cfg")
    assert "run.cfg:3" in str(ie.value)
    assert "width" in str(ie.value)


def test_line_without_equals():
    with pytest.raises(ConfigError):
        parse_lines("d 4")


def test_precedence(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("lr = 0.1\nd = 8\nseed = 3\n")
    environ = {"BUNCA_LR": "0.2", "BUNCA_D": "16", "UNRELATED": "x"}
    cfg = RunConfig.load(path, {"lr": "0.3"}, environ=environ)
    assert cfg.lr == 0.3
    assert cfg.d == 16
    assert cfg.seed == 3
    assert cfg.epochs == TrainConfig().epochs


def test_environment_is_read_by_default(monkeypatch):
    monkeypatch.setenv("BUNCA_EPOCHS", "7")
    assert RunConfig.load().epochs == 7


def test_env_overrides_only_known_keys():
    assert env_overrides({"BUNCA_H_SUB": "2", "BUNCA_WHATEVER": "1"}) == {"H_sub": "2"}


def test_dump_round_trip():
    cfg = RunConfig(d=8, use_bc=False, ks=(3, 7), lambda2=4e-5, causation_up="laplacian")
    assert RunConfig.from_text(cfg.dump()) == cfg


@pytest.mark.parametrize("value, expected", [("yes", True), ("Off", False), ("1", True)])
def test_booleans(value, expected):
    assert RunConfig.load(None, {"use_sv": value}, environ={}).use_sv is expected


@pytest.mark.parametrize(
    "overrides",
    [
        {"use_sv": "maybe"},
        {"d": "four"},
        {"alpha": "1.5"},
        {"H": "9"},
        {"tau": "0"},
        {"dtype": "float16"},
        {"causation_bc": "random"},
        {"use_sv": "false", "use_rv": "false"},
        {"ks": "5,-1"},
        {"ks": "a,b"},
    ],
)
def test_invalid_values(overrides):
    with pytest.raises(ConfigError):
        RunConfig.load(None, overrides, environ={})


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "absent.cfg", environ={})


def test_parse_ks():
    assert parse_ks("10, 20") == (10, 20)


def test_require():
    with pytest.raises(ConfigError) as ie:
        RunConfig().require("dataset_dir")
    assert "dataset_dir" in str(ie.value)
    assert RunConfig(dataset_dir="x").require("dataset_dir").dataset_dir == "x"


def test_checkpoint_path():
    assert str(RunConfig(out_dir="runs/a").checkpoint_path).endswith("best.ckpt")
    assert str(RunConfig(checkpoint="m.ckpt").checkpoint_path) == "m.ckpt"


@pytest.mark.parametrize(
    "flags, beta, gamma",
    [
        ({}, 0.8, 0.5),
        ({"use_up": False}, 1.0, 0.5),
        ({"use_bc": False}, 0.0, 0.5),
        ({"use_cc": False}, 0.8, 1.0),
        ({"use_dc": False}, 0.8, 0.0),
        ({"use_rv": False}, 0.8, 0.0),
    ],
)
def test_effective_weights(flags, beta, gamma):
    cfg = TrainConfig(**flags)
    assert cfg.effective_beta == beta
    assert cfg.effective_gamma == gamma
    assert cfg.hyper_params.gamma == gamma


def test_train_config_drops_run_keys():
    cfg = RunConfig(dataset_dir="x", d=8).train_config()
    assert type(cfg) is TrainConfig
    assert cfg.d == 8


def test_hyper_params_carry_loss_weights():
    hp = TrainConfig(tau=0.5, mu=0.3, lambda1=0.2, lambda2=1e-4).hyper_params
    assert (hp.tau, hp.mu, hp.lambda1, hp.lambda2) == (0.5, 0.3, 0.2, 1e-4)
