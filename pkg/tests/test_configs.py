import pytest

from conftest import CONFIG_DIR
from inflect.errors import ConfigError
from inflect.utility.configs import Config, deep_update


def test_deep_update_merges_sections():
    target = {"model": {"num_layers": 6, "d_model": 64}, "seeds": [1, 2]}
    deep_update(target, {"model": {"num_layers": 3}, "seeds": [0]})
    assert target == {"model": {"num_layers": 3, "d_model": 64}, "seeds": [0]}


def test_smoke_inherits_from_desk(smoke_config):
    assert smoke_config.model["num_layers"] == 3
    assert smoke_config.model["vocab_size"] == 64
    assert smoke_config.lora["rank"] == 4
    assert smoke_config.regimes["OVER"]["lr"] == 1e-3
    assert smoke_config.seeds == [0, 1]


def test_overrides_parse_literals(smoke_config):
    smoke_config.apply_overrides(["model.num_layers=4", "locator.method=ski-maxima", "regimes.OVER.source_epochs=5",
                                  "out_dir=runs/elsewhere"])
    assert smoke_config.model["num_layers"] == 4
    assert smoke_config.locator["method"] == "ski-maxima"
    assert smoke_config.regimes["OVER"]["source_epochs"] == 5
    assert smoke_config.out_dir == "runs/elsewhere"


@pytest.mark.parametrize("override", ["nonsense", "colours.primary=red"])
def test_bad_overrides(smoke_config, override):
    with pytest.raises(ConfigError):
        smoke_config.apply_overrides([override])


def test_missing_file():
    with pytest.raises(ConfigError):
        Config.load_from_file(str(CONFIG_DIR / "absent.py"))


def test_section_must_be_a_dict(smoke_config):
    assert smoke_config.section("probe")["epochs"] == 2
    assert smoke_config.section("unknown") == {}
    with pytest.raises(ConfigError):
        smoke_config.section("seeds")


def test_saved_config_loads_back(smoke_config, tmp_path):
    path = smoke_config.save_to_file(str(tmp_path))
    reloaded = Config.load_from_file(path)
    assert reloaded.to_clean_dict() == smoke_config.to_clean_dict()


def test_derived_config_cannot_be_saved(tmp_path):
    with pytest.raises(ConfigError):
        Config.load_from_dict({"model": {}}).save_to_file(str(tmp_path))
