"""Desk-scale simulation of phase-kick mean estimation.

A dense state-vector engine, a two-branch cat-state representation for
many-processor protocols, the serial phase-kick estimator with
post-selection and restart, the one-classical-bit distributed variant, a
classical sampling baseline, and a reproducible experiment CLI.
"""

from __future__ import annotations

__version__ = "0.1.0"
