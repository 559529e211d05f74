"""Desk-scale ambulatory ECG analysis toolkit.

Signal synthesis and I/O, preprocessing, wave delineation, quality
screening, beat/rhythm classification, evaluation statistics, and a
small clinician-review service.
"""

__version__ = "0.1.0"
