"""
Custom exception hierarchy for the VSF planner.

Provides domain-specific exceptions with rich error context.
"""

from __future__ import annotations

from typing import Any


class VsfError(Exception):
    """Base exception for all planner errors."""

    def __init__(self, message: str, **context: Any) -> None:
        """
        Initialize exception with message and context.

        Args:
            message: Human-readable error message
            **context: Additional error context for logging
        """
        super().__init__(message)
        self.message = message
        self.context = context

    def __str__(self) -> str:
        """Return formatted error message."""
        if self.context:
            context_str = ", ".join(f"{k}={v}" for k, v in self.context.items())
            return f"{self.message} ({context_str})"
        return self.message


class DataError(VsfError):
    """Raised when input data or parameters are invalid (CLI exit code 2)."""


# ── models ────────────────────────────────────────────────────────────────
class MalformedFileError(DataError):
    """Raised when a file cannot be parsed; context carries the line/field locus."""


class InvariantViolationError(DataError):
    """Raised when parsed data breaks a domain invariant; context names id and field."""


class EmptyTrajectoryError(DataError):
    """Raised when a trajectory operation receives no samples."""


# ── vocabulary ──────────────────────────────────────────────────────────────
class InvalidParamsError(DataError):
    """Raised when generator parameters are out of range."""


# ── metrics ───────────────────────────────────────────────────────────────
class MissingMapDataError(DataError):
    """Raised when a metric needs a map element the stage does not have."""


class InvalidWeightsError(DataError):
    """Raised when EPDMS metric weights are inconsistent."""


class StageMismatchError(DataError):
    """Raised when a stage-2 trajectory is given without a stage-2 scenario, or vice versa."""


# ── directive ───────────────────────────────────────────────────────────────
class UnrecognizedDirectiveError(DataError):
    """Raised when a reply contains no cognitive directive."""


# ── scorers ─────────────────────────────────────────────────────────────────
class DimensionMismatchError(DataError):
    """Raised when a feature vector does not match the scorer parameters."""


class DegenerateDesignError(DataError):
    """Raised when the ridge design matrix cannot be solved."""


# ── fusion ──────────────────────────────────────────────────────────────────
class InvalidConfigError(DataError):
    """Raised when a fusion or application configuration is invalid."""


class LengthMismatchError(DataError):
    """Raised when scorer outputs cover different candidate lists."""


class EmptyCandidatesError(DataError):
    """Raised when selection is asked to choose among nothing."""


# ── lqr ─────────────────────────────────────────────────────────────────────
class NumericalFailureError(DataError):
    """Raised when the Riccati recursion meets non-finite values."""


class HorizonMismatchError(DataError):
    """Raised when a candidate's step does not match the controller step."""


# ── vlm_fusion ─────────────────────────────────────────────────────────────
class NoVisiblePointsError(DataError):
    """Raised when no candidate projects into the camera frustum."""


class EmptyRankingError(DataError):
    """Raised when a scorer ranking holds no candidates."""


class UnparseableSelectionError(DataError):
    """Raised when a VLM reply names no presented candidate; signals the fallback path."""


class VlmError(VsfError):
    """Base class for VLM endpoint failures."""


class VlmTransportError(VlmError):
    """Raised when the VLM endpoint stays unreachable after retries (CLI exit code 3)."""


class VlmProtocolError(VlmError, DataError):
    """Raised when the VLM endpoint answers with a malformed body."""


class BindFailureError(VsfError):
    """Raised when the mock VLM server cannot bind its port."""


# ── ablation ────────────────────────────────────────────────────────────────
class MalformedRecordsError(DataError):
    """Raised when a record file cannot be parsed."""
