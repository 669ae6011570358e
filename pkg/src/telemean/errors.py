"""Exception types shared across the package.

ValidationError covers bad inputs and configuration (CLI exit code 2).
The runtime family covers caps and internal defects hit during a run
(CLI exit code 3).
"""

from __future__ import annotations


class ValidationError(ValueError):
    """Invalid input: bad site index, malformed dataset, out-of-range config."""


class SimulationError(RuntimeError):
    """Internal invariant violated (norm drift, impossible measurement branch)."""


class RestartCapError(RuntimeError):
    """Post-selection failed more often than max_restarts allows."""


class UnwrapError(RuntimeError):
    """Accumulated phase left the (-pi, pi] readout window; reduce r."""
