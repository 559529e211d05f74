"""Clinician-facing service: REST API, storage, cases, RBAC, audit."""

from ecgdesk.platform.service import (
    AuthError,
    ConflictError,
    ForbiddenError,
    NotFoundError,
    PlatformConfig,
    PlatformService,
    ValidationError,
)

__all__ = [
    "PlatformService",
    "PlatformConfig",
    "AuthError",
    "ForbiddenError",
    "NotFoundError",
    "ConflictError",
    "ValidationError",
]
