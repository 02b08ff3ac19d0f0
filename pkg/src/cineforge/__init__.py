"""cineforge: instruction-driven cinematic video compilation engine."""

__version__ = "0.1.0"

from .errors import CineforgeError, ManifestError  # noqa: F401
from .manifest import (GlobalShotRef, SourceCollection, SourceManifest,  # noqa: F401
                       load_manifest, merge_sources, save_manifest)
