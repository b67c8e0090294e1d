from dataclasses import fields

import pytest

from gampofdm import config


def test_dump_load_round_trip(tmp_path):
    spec = config.apply_overrides(config.preset("desk"), [
        ("frame.Mt", "96"), ("receiver.max_turbo", "4"), ("sv.cluster_rate", "0.05"),
        ("sweep.values", "6, 7.5, 9"), ("experiment.algorithms", "gamp_mc, lasso, bsg"),
        ("frame.coded", "false"),
    ])
    p = tmp_path / "c.txt"
    p.write_text(config.dump_config(spec))
    assert config.load_config(p) == spec


def test_dump_covers_every_leaf_field():
    text = config.dump_config(config.ExperimentSpec())
    keys = {line.split("=")[0].strip() for line in text.splitlines()}
    spec = config.ExperimentSpec()
    for section, obj in [("frame", spec.frame), ("receiver", spec.receiver),
                         ("sv", spec.channel.sv), ("prior", spec.prior), ("sweep", spec.sweep)]:
        for f in fields(obj):
            assert f"{section}.{f.name}" in keys
    assert "experiment.trials" in keys and "channel.baud_ns" in keys


def test_comments_and_blank_lines():
    items = config.parse_config_text("# header\n\nframe.N = 128  # trailing\n")
    assert items == [("frame.N", "128")]


@pytest.mark.parametrize("bad", ["frame.bogus = 1", "nosuch.N = 1", "frame.N"])
def test_bad_lines(bad):
    with pytest.raises((KeyError, ValueError)):
        config.apply_overrides(config.ExperimentSpec(), config.parse_config_text(bad))


def test_bool_coercion():
    for text, want in [("yes", True), ("0", False), ("True", True), ("off", False)]:
        spec = config.apply_overrides(config.ExperimentSpec(), [("frame.coded", text)])
        assert spec.frame.coded is want
    with pytest.raises(ValueError):
        config.apply_overrides(config.ExperimentSpec(), [("frame.coded", "maybe")])


def test_integer_sweep_values():
    spec = config.apply_overrides(config.ExperimentSpec(), [("sweep.variable", "Mt"),
                                                            ("sweep.values", "64, 112.0")])
    assert spec.sweep.values == (64, 112)
    assert all(isinstance(v, int) for v in spec.sweep.values)


@pytest.mark.parametrize("items", [
    [("experiment.trials", "0")],
    [("experiment.algorithms", "gamp, magic")],
    [("sweep.variable", "rate")],
    [("channel.model", "rayleigh")],
])
def test_validation(items):
    with pytest.raises(ValueError):
        config.apply_overrides(config.ExperimentSpec(), items)


def test_presets():
    desk = config.preset("desk")
    assert (desk.frame.N, desk.frame.L, desk.frame.M, desk.frame.eta) == (256, 64, 4, 2.0)
    assert desk.trials == 200 and desk.channel.sv.sync_offset_lags == 5
    full = config.preset("full")
    assert (full.frame.N, full.frame.L, full.trials) == (1024, 256, 5000)
    assert config.preset("smoke").trials < desk.trials
    with pytest.raises(KeyError):
        config.preset("huge")


def test_shipped_config_loads():
    import pathlib
    root = pathlib.Path(__file__).resolve().parents[1]
    for p in sorted((root / "configs").glob("*.cfg")) + sorted((root / "data").glob("*.cfg")):
        config.load_config(p)
