"""Principals, bearer tokens, and the role-permission matrix."""
from __future__ import annotations

import hashlib
import secrets
from dataclasses import dataclass

ROLES = ("admin", "org_manager", "clinician", "trial_coordinator")

# action -> roles allowed (within their own org; admin crosses orgs)
PERMISSIONS: dict[str, frozenset[str]] = {
    "recording.upload": frozenset({"admin", "clinician", "trial_coordinator"}),
    "case.create": frozenset({"admin", "clinician"}),
    "case.view": frozenset({"admin", "clinician", "trial_coordinator"}),
    "result.view": frozenset({"admin", "clinician", "trial_coordinator"}),
    "report.view": frozenset({"admin", "clinician", "trial_coordinator"}),
    "trace.view": frozenset({"admin", "clinician", "trial_coordinator"}),
    "edit.submit": frozenset({"admin", "clinician"}),
    "report.finalize": frozenset({"admin", "clinician"}),
    "audit.query": frozenset({"admin", "org_manager"}),
    "case.reanalyze": frozenset({"admin"}),
    "user.manage": frozenset({"admin", "org_manager"}),
}


@dataclass(frozen=True)
class Principal:
    user_id: str
    role: str
    org_ref: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role: {self.role}")


def authorize(principal: Principal, action: str, resource_org: str | None) -> bool:
    """Pure decision from the documented matrix; cross-org only for admin."""
    allowed = PERMISSIONS.get(action)
    if allowed is None or principal.role not in allowed:
        return False
    if principal.role == "admin":
        return True
    if resource_org is None:
        return True
    return principal.org_ref == resource_org


def mint_token() -> str:
    return secrets.token_hex(24)


def hash_token(token: str, secret: str) -> str:
    return hashlib.sha256((secret + ":" + token).encode("utf-8")).hexdigest()
