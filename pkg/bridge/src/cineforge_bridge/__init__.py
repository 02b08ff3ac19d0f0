"""cineforge-bridge: reference perception adapter emitting source manifests."""

__version__ = "0.1.0"

from .config import BridgeConfig, BridgeError, load_config  # noqa: F401
from .extract import extract_manifest  # noqa: F401
from .probe import probe  # noqa: F401
