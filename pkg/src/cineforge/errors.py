"""Exception hierarchy shared across the engine."""


class CineforgeError(Exception):
    """Base class for all engine errors."""


class ManifestError(CineforgeError):
    """Schema or invariant violation in a source manifest.

    Carries the full diagnostic list so callers (notably the CLI validator)
    can report every problem, not just the first.
    """

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        lines = "; ".join(str(d) for d in self.diagnostics[:5])
        more = "" if len(self.diagnostics) <= 5 else f" (+{len(self.diagnostics) - 5} more)"
        super().__init__(f"{len(self.diagnostics)} manifest problem(s): {lines}{more}")


class IdentityError(CineforgeError):
    """Identity assignment could not be computed (no comparable embedding pair)."""


class BindingConflictError(CineforgeError):
    """Voiceprint cluster-to-character binding failed to cover every character."""


class ProviderError(CineforgeError):
    """A completion/embedding/judge provider failed."""


class ProviderTimeout(ProviderError):
    """A provider call exceeded the configured timeout."""


class MemoryBuildError(CineforgeError):
    """Narrative memory construction failed at a named stage."""

    def __init__(self, stage, position, cause):
        self.stage = stage
        self.position = position
        self.cause = cause
        super().__init__(f"memory build failed at stage {stage!r}, position {position!r}: {cause}")


class UnknownCharacterError(CineforgeError):
    """A memory query required a character_id absent from the roster."""


class PlanningError(CineforgeError):
    """The planning loop hit an unrecoverable provider or protocol fault."""


class RenderError(CineforgeError):
    """EDL compilation or external assembly failed."""


class SessionLogError(CineforgeError):
    """Sequence violation, duplicate checkpoint, or corrupt log record."""
