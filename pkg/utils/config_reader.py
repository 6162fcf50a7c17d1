"""
Configuration Reader Module
============================

Provides centralized access to sensor profiles for the toolkit.
Loads profile-specific defaults (binning and evaluation settings) from YAML.

Features:
    - Multi-profile support (kitti, vlp16, aeva, avia)
    - Environment variable based switching (SOLID_PROFILE)
    - Lazy loading with a class-level cache
    - Explicit reset for tests and profile switches

Configuration File:
    configs/config.yaml - One section per sensor profile

Environment Variable:
    SOLID_PROFILE - Profile name (default: 'kitti')

Example:
    >>> os.environ['SOLID_PROFILE'] = 'vlp16'
    >>> ConfigReader.get_config('n_e')
    16
"""

import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional

import yaml

from utils.framework_exception import ConfigurationError

_logger = logging.getLogger(__name__)

DEFAULT_PROFILE = "kitti"


class ConfigReader:
    """
    Singleton reader for YAML sensor profiles.

    Loads the configuration once on first access and caches the selected
    profile. `use_profile` switches explicitly (the CLI `--profile` flag);
    otherwise SOLID_PROFILE decides.

    Class Attributes:
        _data: Cached profile dictionary.
        _profile: Current profile name.
    """

    _data: Optional[dict] = None
    _profile: Optional[str] = None

    @classmethod
    def _config_path(cls) -> Path:
        root_dir = Path(__file__).resolve().parent.parent
        return root_dir / 'configs' / 'config.yaml'

    @classmethod
    def _load_config(cls, profile: Optional[str] = None) -> None:
        """
        Load the profile section from config.yaml.

        Raises:
            FileNotFoundError: If config.yaml doesn't exist.
            ConfigurationError: If the profile section is not found.
        """
        cls._profile = profile or os.getenv("SOLID_PROFILE", DEFAULT_PROFILE)
        config_file_path = cls._config_path()

        _logger.info(f"ConfigReader: Loading configuration | Profile: {cls._profile} | File: {config_file_path}")

        with open(config_file_path, "r") as f:
            all_profiles = yaml.safe_load(f)

        if cls._profile not in all_profiles:
            raise ConfigurationError(
                f"Unknown sensor profile '{cls._profile}' | Available: {sorted(all_profiles)}"
            )
        cls._data = all_profiles[cls._profile]
        _logger.debug(f"ConfigReader: Profile loaded | Profile: {cls._profile} | Keys: {list(cls._data.keys())}")

    @classmethod
    def use_profile(cls, profile: str) -> None:
        """Select a profile explicitly, replacing any cached one."""
        cls._load_config(profile)

    @classmethod
    def reset(cls) -> None:
        """Forget the cached profile; the next access reloads."""
        cls._data = None
        cls._profile = None

    @classmethod
    def profile(cls) -> str:
        if cls._data is None:
            cls._load_config()
        return cls._profile

    @classmethod
    def get_config(cls, key: str) -> Any:
        """
        Get a configuration value by key from the active profile.

        Args:
            key: Configuration key to retrieve.

        Returns:
            The configuration value, or None if key not found.

        Example:
            >>> ConfigReader.get_config('l_max')
            80.0
        """
        if cls._data is None:
            _logger.debug("ConfigReader: Configuration not loaded. Loading now...")
            cls._load_config()

        value = cls._data.get(key)
        if value is None:
            _logger.warning(f"ConfigReader: Key '{key}' not found in {cls._profile} profile")
        else:
            _logger.debug(f"ConfigReader: Retrieved '{key}' = {value}")
        return value

    @classmethod
    def as_dict(cls) -> Dict[str, Any]:
        """Copy of the whole active profile."""
        if cls._data is None:
            cls._load_config()
        return dict(cls._data)
