"""Core application components."""

from __future__ import annotations

from .config import Settings, get_settings, load_settings, settings
from .exceptions import DataError, VsfError
from .logging import get_logger

__all__ = ["DataError", "Settings", "VsfError", "get_logger", "get_settings", "load_settings", "settings"]
