"""HTTP fine-tuning service for line-encoded row corpora."""

from .app import app, create_app
from .config import DEFAULTS, ServerDefaults

__version__ = "0.1.0"

__all__ = ["DEFAULTS", "ServerDefaults", "app", "create_app"]
