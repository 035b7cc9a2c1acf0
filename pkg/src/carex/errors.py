"""Exception hierarchy shared by every pipeline stage.

Exit-code / HTTP-status mapping lives with the CLI and service adapters;
here each class only carries the failure category.
"""

from __future__ import annotations


class CarexError(Exception):
    """Base class for all pipeline errors."""


# --- signal ingestion ---

class MalformedCsv(CarexError):
    pass


class TooShort(CarexError):
    pass


class BadRate(CarexError):
    pass


class InvalidRecord(CarexError):
    pass


class UnsupportedFormat(CarexError):
    pass


class HeaderMismatch(CarexError):
    pass


class DuplicateRecordId(CarexError):
    pass


class IoError(CarexError):
    """Filesystem-level failure while reading or writing artifacts."""


class NotFound(CarexError):
    pass


# --- biomarker encoding ---

class NoPeaks(CarexError):
    pass


class LeadNotFound(CarexError):
    pass


class EncodeFailure(CarexError):
    """Raised when a record cannot be encoded; carries the all-missing vector."""

    def __init__(self, message, vector=None):
        super().__init__(message)
        self.vector = vector


class InsufficientData(CarexError):
    pass


class SchemaMismatch(CarexError):
    pass


# --- causal network ---

class UnknownNode(CarexError):
    pass


class UnknownState(CarexError):
    pass


class OrderingIncomplete(CarexError):
    pass


class ConstraintConflict(CarexError):
    pass


class ZeroProbabilityEvidence(CarexError):
    pass


# --- knowledge / generation ---

class EmptyCorpus(CarexError):
    pass


class RemoteUnavailable(CarexError):
    pass


class Timeout(CarexError):
    pass


# --- evaluation / orchestration ---

class LengthMismatch(CarexError):
    pass


class MissingArtifact(CarexError):
    pass


class SpecInvalid(CarexError):
    pass


class UsageError(CarexError):
    pass
