""" stress-basis Module"""
import logging
from stress_basis.config import Config

__version__ = "0.1.0"

logger = logging.getLogger(__name__)
Config.ROOT_LOGGER = logger
