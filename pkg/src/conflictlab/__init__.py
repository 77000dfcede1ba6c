"""conflictlab: synthesize, validate, and evaluate inter-evidence conflicts."""

__version__ = "0.1.0"
