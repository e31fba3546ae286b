"""
ktnet - knowledge-transfer dense correspondence networks

This package trains and evaluates dense human correspondence models on
procedurally generated scenes, with 2D-to-3D classifier knowledge transfer.
"""

from .cli import main

__version__ = "0.1.0"

__all__ = ["main"]
