"""Exception types shared across the package."""

from __future__ import annotations


class LatentPaintError(Exception):
    """Base class for library errors."""


class ShapeMismatchError(LatentPaintError, ValueError):
    """An array does not match the shape declared for its boundary or slot."""


class ArchiveFormatError(LatentPaintError, ValueError):
    """Archive file is unreadable, truncated, or of an unsupported version."""


class CatalogError(LatentPaintError, ValueError):
    """Unit catalog is missing a class or is bound to a different checkpoint."""


class EditError(LatentPaintError, ValueError):
    """An edit operation fails validation."""


class OptimizationError(LatentPaintError, RuntimeError):
    """An optimization produced a non-finite loss or failed to converge."""
