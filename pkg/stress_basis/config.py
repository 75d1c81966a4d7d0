"""Module to store, create or read from a configuration file and parse the values and variables to
globals for other modules to access.
"""
import logging
import logging.handlers
import os
import configparser
from pathlib import Path

logger = logging.getLogger(__name__)


class Config:
    """Config class, manages the initialization of all the necessary globals."""

    ROOT_LOGGER = None
    VERBOSE = False
    CONFIG_DIR = Path.home().joinpath(".config", "stress-basis")
    CONFIG_DIR.mkdir(parents=True, exist_ok=True)
    LOG_DIR = Path.joinpath(CONFIG_DIR, "logs")
    LOG_DIR.mkdir(exist_ok=True)
    LOG_PATH = LOG_DIR.joinpath("sb.logs")

    # config parameters (need to be accessible to tests without invoking __init__)
    cache_dir_dict = {
        "cache_dir": str(Path.home().joinpath(".cache", "stress-basis"))
    }
    resolution_dict = {
        "rectangle_elements": "48",
        "annulus_elements": "128",
        "max_wavenumber": "6",
    }
    tolerance_dict = {
        "degenerate_gap": "1e-6",
        "l2_tolerance": "1e-8",
        "h1_tolerance": "1e-6",
        "residual_tolerance": "1e-8",
    }
    DEFAULT_CONF = {
        **cache_dir_dict,
        **resolution_dict,
        **tolerance_dict,
    }

    # resolved values, usable before __init__ runs
    CACHE_DIR = Path(cache_dir_dict["cache_dir"])
    RECTANGLE_ELEMENTS = 48
    ANNULUS_ELEMENTS = 128
    MAX_WAVENUMBER = 6
    DEGENERATE_GAP = 1e-6
    L2_TOLERANCE = 1e-8
    H1_TOLERANCE = 1e-6
    RESIDUAL_TOLERANCE = 1e-8

    @classmethod
    def __init__(cls, verbose=False, config_filename="sb.conf"):
        """This is the entry point for the class and running this will setup the stress-basis
        config and make all the necessary globals available
        """
        cls.VERBOSE = verbose
        cls.CONFIG_PATH = cls.CONFIG_DIR.joinpath(config_filename)

        # Initialize root logger
        cls.init_logger()

        # Read from config file
        config = cls._read_write_config()

        cache_dir = os.getenv("SB_CACHE_DIR") or config.get("configuration", "cache_dir")
        cls.CACHE_DIR = Path(cache_dir).expanduser()
        cls.RECTANGLE_ELEMENTS = cls._get_count(config, "rectangle_elements", minimum=4)
        cls.ANNULUS_ELEMENTS = cls._get_count(config, "annulus_elements", minimum=4)
        cls.MAX_WAVENUMBER = cls._get_count(config, "max_wavenumber", minimum=0)
        cls.DEGENERATE_GAP = cls._get_tolerance(config, "degenerate_gap")
        cls.L2_TOLERANCE = cls._get_tolerance(config, "l2_tolerance")
        cls.H1_TOLERANCE = cls._get_tolerance(config, "h1_tolerance")
        cls.RESIDUAL_TOLERANCE = cls._get_tolerance(config, "residual_tolerance")

    @classmethod
    def init_logger(cls):
        """Initialze root logger."""
        if cls.ROOT_LOGGER is None:
            cls.ROOT_LOGGER = logging.getLogger("stress_basis")

        # create root logger
        cls.ROOT_LOGGER.setLevel(logging.DEBUG)
        level = logging.DEBUG if cls.VERBOSE else logging.INFO

        # repeated initialisation only adjusts the console level
        if cls.ROOT_LOGGER.handlers:
            for handler in cls.ROOT_LOGGER.handlers:
                if not isinstance(handler, logging.handlers.TimedRotatingFileHandler):
                    handler.setLevel(level)
            return

        # create formatter
        log_format = logging.Formatter(
            "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
        )

        # log to stdout
        stream_handler = logging.StreamHandler()
        stream_handler.setLevel(level)
        stream_handler.setFormatter(log_format)
        cls.ROOT_LOGGER.addHandler(stream_handler)

        # log to file, rotate every 4 weeks, save up to 8 weeks
        file_handler = logging.handlers.TimedRotatingFileHandler(
            Config.LOG_PATH, when="W6", interval=4, backupCount=8
        )
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(log_format)
        cls.ROOT_LOGGER.addHandler(file_handler)

    @staticmethod
    def is_valid_count(value, minimum=1):
        """Check a resolution or count is an integer no smaller than `minimum`"""
        try:
            return int(value) >= minimum
        except ValueError:
            return False

    @staticmethod
    def is_valid_tolerance(value):
        """Check a tolerance is a positive float below one"""
        try:
            return 0.0 < float(value) < 1.0
        except ValueError:
            return False

    @classmethod
    def _get_count(cls, config, key, minimum):
        value = config.get("configuration", key)
        if not cls.is_valid_count(value, minimum):
            logger.warning(
                "Invalid %s '%s' in %s, using default %s",
                key,
                value,
                cls.CONFIG_PATH,
                cls.DEFAULT_CONF[key],
            )
            value = cls.DEFAULT_CONF[key]
        return int(value)

    @classmethod
    def _get_tolerance(cls, config, key):
        value = config.get("configuration", key)
        if not cls.is_valid_tolerance(value):
            logger.warning(
                "Invalid %s '%s' in %s, using default %s",
                key,
                value,
                cls.CONFIG_PATH,
                cls.DEFAULT_CONF[key],
            )
            value = cls.DEFAULT_CONF[key]
        return float(value)

    @classmethod
    def _read_write_config(cls):
        """Function to read the config file or create one if it doesn't exist"""
        config = configparser.ConfigParser(allow_no_value=True)
        # Write config template to file if it doesn't already exist
        if not os.path.exists(cls.CONFIG_PATH):
            logger.info(
                "No config file was found, creating one at: %s", cls.CONFIG_PATH
            )
            # Set to default config values
            config["configuration"] = cls.DEFAULT_CONF
            with open(cls.CONFIG_PATH, "w", encoding="utf8") as config_file:
                config.write(config_file)

        # Read the config file
        logger.debug("Reading config file at: %s", cls.CONFIG_PATH)
        input_config = configparser.ConfigParser()
        input_config.read(cls.CONFIG_PATH)
        if not input_config.has_section("configuration"):
            input_config.add_section("configuration")

        # Creates all config keys that don't exists yet and sets to default values
        for config_key, config_value in cls.DEFAULT_CONF.items():
            if not input_config.has_option("configuration", config_key):
                input_config.set("configuration", config_key, config_value)

        with open(cls.CONFIG_PATH, "w", encoding="utf8") as config_file:
            input_config.write(config_file)

        return input_config
