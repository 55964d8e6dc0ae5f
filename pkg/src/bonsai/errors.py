"""Shared exception types."""

from __future__ import annotations


class BonsaiError(Exception):
    """Base class for all platform errors."""

    code = "error"

    def __init__(self, message: str, detail: object = None):
        super().__init__(message)
        self.message = message
        self.detail = detail

    def envelope(self) -> dict:
        return {"code": self.code, "message": self.message, "detail": self.detail}


class UnresolvedTypeError(BonsaiError):
    code = "unresolved-type"


class TypeCycleError(BonsaiError):
    code = "type-cycle"


class DerivationError(BonsaiError):
    code = "derivation-error"


class ContractParseError(BonsaiError):
    code = "contract-parse-error"


class AdmissionError(BonsaiError):
    code = "admission-rejected"


class ConflictError(BonsaiError):
    code = "conflict"


class InvalidTransitionError(BonsaiError):
    code = "invalid-transition"


class NotFoundError(BonsaiError):
    code = "not-found"


class ValidationFailedError(BonsaiError):
    code = "validation-failed"


class WorkflowParseError(BonsaiError):
    code = "workflow-parse-error"


class RevisionConflictError(BonsaiError):
    code = "revision-conflict"


class TypedInputError(BonsaiError):
    code = "typed-input-error"


class ExpiredTokenError(BonsaiError):
    code = "expired"


class FeatureDisabledError(BonsaiError):
    code = "feature-disabled"


class MappingError(BonsaiError):
    code = "incomplete-mapping"
