"""Dyck-language recognition: exact automata, compiled RNNs and trained sequence models."""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import DyckLabError  # noqa: E402

__all__ = ["DyckLabError", "__version__"]
