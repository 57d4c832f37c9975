"""Deployment orchestration: model, select, transfer, install, activate,
update, reconfigure, and uninstall packaged software across a fleet."""

from .values import Size, Version

__all__ = ["Size", "Version"]
__version__ = "0.1.0"
