"""Unit tests for the config module"""
import os
import sys
import configparser
import uuid
from pathlib import Path
import pytest
import mock
from stress_basis.config import Config

tests_path = os.path.dirname(os.path.abspath(__file__))
src_path = tests_path + "/../"
sys.path.insert(0, src_path)

RESOLVED = (
    "CACHE_DIR",
    "RECTANGLE_ELEMENTS",
    "ANNULUS_ELEMENTS",
    "MAX_WAVENUMBER",
    "DEGENERATE_GAP",
    "L2_TOLERANCE",
    "H1_TOLERANCE",
    "RESIDUAL_TOLERANCE",
)


@pytest.fixture(name="restore_config")
def fixture_restore_config_globals():
    """Puts the resolved class attributes back after a test reads a custom config file"""
    saved = {name: getattr(Config, name) for name in RESOLVED}
    yield
    for name, value in saved.items():
        setattr(Config, name, value)


def _write_tmp_config(config_str):
    test_config_path = Config.CONFIG_DIR.joinpath(f"tmp_pytest_{uuid.uuid4().hex}.conf")
    with open(test_config_path, "w", encoding="utf8") as conf_file:
        conf_file.write(config_str)
    return test_config_path


@pytest.fixture(name="mock_config")
def fixture_create_tmp_mock_config():
    """
    Creates a tmp config file with arbitrary values prior to running a test that uses this fixture.
    It then cleans up the tmp file after the test has run
    """
    test_config_path = _write_tmp_config(
        """
[configuration]
cache_dir = /tmp/sb-pytest-cache
rectangle_elements = 16
annulus_elements = 64
max_wavenumber = 3
degenerate_gap = 1e-5
l2_tolerance = 1e-9
h1_tolerance = 1e-7
residual_tolerance = 1e-7
    """
    )
    yield test_config_path
    os.remove(test_config_path)


@pytest.fixture(name="invalid_config")
def fixture_create_tmp_invalid_config():
    """
    Creates a tmp config file with values that fail validation.
    It then cleans up the tmp file after the test has run
    """
    test_config_path = _write_tmp_config(
        """
[configuration]
rectangle_elements = 2
annulus_elements = many
max_wavenumber = -1
l2_tolerance = 3
h1_tolerance = 0
    """
    )
    yield test_config_path
    os.remove(test_config_path)


@pytest.fixture(name="tmp_partial_config")
def fixture_create_partial_config():
    """
    Creates a tmp config file holding only the mesh resolutions.
    It then cleans up the tmp file after the test has run
    """
    test_config_path = _write_tmp_config(
        """
[configuration]
rectangle_elements = 24
annulus_elements = 96
    """
    )
    yield test_config_path
    os.remove(test_config_path)


def read_config_as_dict(path):
    input_config = configparser.ConfigParser()
    input_config.read(path)
    return input_config


@pytest.mark.usefixtures("restore_config")
def test_config_values_are_read(mock_config):
    """Every key of the config file reaches the class globals with the right type"""
    with mock.patch.dict(os.environ, {}, clear=False):
        os.environ.pop("SB_CACHE_DIR", None)
        Config(config_filename=mock_config)
    assert Config.CACHE_DIR == Path("/tmp/sb-pytest-cache")
    assert Config.RECTANGLE_ELEMENTS == 16
    assert Config.ANNULUS_ELEMENTS == 64
    assert Config.MAX_WAVENUMBER == 3
    assert Config.DEGENERATE_GAP == pytest.approx(1e-5)
    assert Config.L2_TOLERANCE == pytest.approx(1e-9)
    assert Config.H1_TOLERANCE == pytest.approx(1e-7)
    assert Config.RESIDUAL_TOLERANCE == pytest.approx(1e-7)


@pytest.mark.usefixtures("restore_config")
def test_invalid_values_fall_back_to_defaults(invalid_config, caplog):
    """Values failing validation are replaced by the defaults, with a warning each"""
    Config(config_filename=invalid_config)
    defaults = Config.DEFAULT_CONF
    assert Config.RECTANGLE_ELEMENTS == int(defaults["rectangle_elements"])
    assert Config.ANNULUS_ELEMENTS == int(defaults["annulus_elements"])
    assert Config.MAX_WAVENUMBER == int(defaults["max_wavenumber"])
    assert Config.L2_TOLERANCE == float(defaults["l2_tolerance"])
    assert Config.H1_TOLERANCE == float(defaults["h1_tolerance"])
    warnings = [r for r in caplog.records if r.levelname == "WARNING"]
    assert len(warnings) == 5, f"expected 5 warnings, got {[r.message for r in warnings]}"


@pytest.mark.usefixtures("restore_config")
def test_config_upgrade_process(tmp_partial_config):
    """
    test a config holding only the mesh resolutions
    upgrades succesfully to include every other parameter
    """
    config_dict = read_config_as_dict(tmp_partial_config)
    assert list(config_dict["configuration"]) == ["rectangle_elements", "annulus_elements"]

    Config(config_filename=tmp_partial_config)

    config_dict = read_config_as_dict(tmp_partial_config)
    assert config_dict.sections() == ["configuration"]
    assert sorted(config_dict["configuration"]) == sorted(Config.DEFAULT_CONF)
    # existing values survive the upgrade
    assert config_dict.get("configuration", "rectangle_elements") == "24"
    assert config_dict.get("configuration", "annulus_elements") == "96"
    for key, item in Config.DEFAULT_CONF.items():
        if key not in ("rectangle_elements", "annulus_elements"):
            assert config_dict.get("configuration", key) == item
    assert Config.RECTANGLE_ELEMENTS == 24


@pytest.mark.usefixtures("restore_config")
def test_missing_config_file_is_created():
    """A fresh config file holds exactly the default configuration"""
    test_config_path = Config.CONFIG_DIR.joinpath(f"tmp_pytest_{uuid.uuid4().hex}.conf")
    assert not test_config_path.exists()
    try:
        Config(config_filename=test_config_path)
        config_dict = read_config_as_dict(test_config_path)
        assert dict(config_dict["configuration"]) == Config.DEFAULT_CONF
    finally:
        os.remove(test_config_path)


@pytest.mark.usefixtures("restore_config")
def test_cache_dir_environment_override(mock_config, tmp_path):
    """SB_CACHE_DIR wins over the cache_dir key"""
    with mock.patch.dict(os.environ, {"SB_CACHE_DIR": str(tmp_path)}):
        Config(config_filename=mock_config)
    assert Config.CACHE_DIR == tmp_path


# fmt: off
count_cases = [
    ("48", 4, True),
    ("4", 4, True),
    ("3", 4, False),
    ("0", 0, True),
    ("-1", 0, False),
    ("1.5", 1, False),
    ("lots", 1, False),
]
tolerance_cases = [
    ("1e-8", True),
    ("0.5", True),
    ("0", False),
    ("1", False),
    ("-1e-6", False),
    ("tight", False),
]
# fmt: on


@pytest.mark.parametrize("value,minimum,expected", count_cases)
def test_is_valid_count(value, minimum, expected):
    assert (
        Config.is_valid_count(value, minimum) is expected
    ), f"is_valid_count({value!r}, {minimum}) should be {expected}"


@pytest.mark.parametrize("value,expected", tolerance_cases)
def test_is_valid_tolerance(value, expected):
    assert (
        Config.is_valid_tolerance(value) is expected
    ), f"is_valid_tolerance({value!r}) should be {expected}"
