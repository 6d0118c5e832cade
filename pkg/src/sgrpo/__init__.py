"""Group-relative policy optimization with conditional ground-truth injection on a tabular policy."""

__version__ = "0.1.0"
