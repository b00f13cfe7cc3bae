"""Prompt construction and frozen GPT-2 embedding export.

Writes the binary T3EMB store consumed by the t3time forecaster; the two
packages share only that file contract and the window-enumeration rules
documented alongside it.
"""

__version__ = "0.1.0"
