"""lcd-icd: loop-closure detection and image change detection from one map retrieval."""

__version__ = "0.1.0"
