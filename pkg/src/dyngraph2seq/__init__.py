"""Dynamic-graph-to-sequence learning with hierarchical attention."""

__version__ = "0.1.0"
