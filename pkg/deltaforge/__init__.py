"""deltaforge: requirements-document diffing, change extraction and validated design-model updates."""

__version__ = "0.1.0"
