"""Exception types shared across the workbench."""


class WorkbenchError(Exception):
    """Base class for all workbench errors."""


class ManifestError(WorkbenchError):
    """Manifest parse failure or invariant violation (message names the record)."""


class BudgetError(WorkbenchError):
    """An operation would violate the |train| + |validation| < n_max budget."""


class TriageError(WorkbenchError):
    """Invalid triage selection or verdict (unknown sample, unflagged sample, bad label)."""


class VersionConflict(WorkbenchError):
    """Optimistic-concurrency failure: the record changed since the client read it."""


class ImageDecodeError(WorkbenchError):
    """Image file missing, unreadable, or not a supported PNG."""


class GanTrainingError(WorkbenchError):
    """GAN training violated a hard invariant (frozen classifier drifted)."""
