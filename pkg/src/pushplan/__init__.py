"""Contact-aware planning and tracking for planar pushing in clutter."""

__version__ = "0.1.0"
