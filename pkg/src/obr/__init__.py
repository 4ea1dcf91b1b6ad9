"""Optical Braille recognition: dot detection, cell clustering, transcription."""

from .pipeline import PageResult, PipelineParams, recognize_dots, run_page
from .table import DEFAULT_TABLE, BrailleTable

__all__ = ["BrailleTable", "DEFAULT_TABLE", "PageResult", "PipelineParams", "recognize_dots", "run_page"]
__version__ = "0.1.0"
