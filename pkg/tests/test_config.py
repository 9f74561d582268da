import pytest

from stawm.harness.config import (
    ConfigError, RunConfig, format_config, model_config_from_echo, parse_config, parse_text,
)


def synth(**kw):
    return dict({"dataset": "synth-quadrant"}, **kw)


def test_empty_config_gives_defaults():
    cfg = parse_config(None, synth(mode="classify"))
    assert cfg.batch_size == 128 and cfg.epochs == 5 and cfg.lr == 1e-3 and cfg.seed == 0
    assert cfg.model.memory_size == 64 and cfg.model.glimpses == 4 and cfg.model.glimpse_size == 8
    assert (cfg.model.eta, cfg.model.delta, cfg.model.theta) == (0.4, 0.2, 0.5)


def test_memory_size_sets_hidden():
    assert parse_config(None, synth(memory_size="64")).model.hidden_size == 128
    assert parse_config(None, synth(memory_size=32)).echo()["hidden_size"] == 64


def test_hidden_size_cannot_be_set():
    with pytest.raises(ConfigError, match="hidden_size"):
        parse_config(None, synth(hidden_size=99))


def test_unstable_rates_rejected():
    with pytest.raises(ConfigError, match="stability"):
        parse_config(None, synth(eta=0.1, delta=0.2))


@pytest.mark.parametrize("overrides,match", [
    (synth(colour="red"), "unknown config key"),
    (synth(epochs="many"), "epochs"),
    (synth(mode="regress"), "unknown mode"),
    (synth(epochs=0), "positive"),
    (synth(val_fraction=1.0), "val_fraction"),
    ({"dataset": "mnist"}, "dataset path missing"),
    ({"dataset": "mnist", "data_dir": "/no/such/dir"}, "does not exist"),
    (synth(mode="selfsup"), "checkpoint"),
    (synth(image_size=16), "synth"),
    (synth(dropout=1.5), "dropout"),
])
def test_rejections(overrides, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(None, overrides)


def test_file_with_comments_and_override(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# a run\nmode = draw-addition\nepochs = 3  # short\n\nbeta = 2.0\ndataset = synth-bars\n")
    cfg = parse_config(str(path), {"epochs": 4, "seed": None})
    assert cfg.mode == "draw-addition" and cfg.head == "draw-addition"
    assert cfg.epochs == 4 and cfg.model.beta == 2.0 and cfg.seed == 0


def test_bad_line():
    with pytest.raises(ConfigError):
        parse_text("just words")


def test_selfsup_learns_rates(tmp_path):
    cfg = parse_config(None, synth(mode="selfsup", checkpoint=str(tmp_path / "x")), check_paths=False)
    assert cfg.model.learnable_rates and cfg.head == "classify"


def test_layers_and_milestones_parse():
    cfg = parse_config(None, synth(context_layers="8:3:2, 16:3", milestones="2,4", augment="false"))
    assert cfg.model.context_layers == ((8, 3, 2), (16, 3, 1))
    assert cfg.milestones == (2, 4) and cfg.augment is False


def test_format_round_trips(tmp_path):
    cfg = parse_config(None, synth(mode="sketchpad", memory_size=16, epochs=2))
    path = tmp_path / "echo.cfg"
    path.write_text(format_config(cfg))
    assert parse_config(str(path)) == cfg


def test_model_from_echo():
    cfg = RunConfig().with_(dataset="synth-quadrant")
    assert model_config_from_echo(cfg.echo()) == cfg.model
