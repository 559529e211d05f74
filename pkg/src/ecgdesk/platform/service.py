"""Platform core: cases, edits, reports, jobs, RBAC enforcement, audit.

Every state-changing operation emits exactly one audit event attributed to
its caller; audited reads (case/result/report views, audit queries) emit
one "read"-category event. Denied or invalid calls emit none. All writes
are serialized; finalized reports are content-addressed bytes and can
never change.
"""
from __future__ import annotations

import json
import threading
import uuid
from collections import deque
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from ecgdesk.nn.checkpoint import CheckpointRegistry
from ecgdesk.pipeline import AnalysisConfig, analyze_recording
from ecgdesk.platform.auth import Principal, authorize, hash_token, mint_token
from ecgdesk.platform.storage import Database, ObjectStore
from ecgdesk.signal_io.recording import FormatError, parse_recording

CASE_STATUSES = ("queued", "processing", "ready", "in_review", "finalized", "failed")
LEGAL_TRANSITIONS = {
    ("queued", "processing"),
    ("processing", "ready"),
    ("processing", "queued"),  # failed attempt, retrying
    ("processing", "failed"),  # retry cap reached
    ("ready", "in_review"),
    ("ready", "finalized"),
    ("in_review", "finalized"),
    ("failed", "queued"),  # admin re-analysis
    ("ready", "queued"),  # admin re-analysis
    ("in_review", "queued"),  # admin re-analysis
}
MAX_RETRIES = 3
EDIT_ACTIONS = ("confirm", "modify", "reject")


class AuthError(Exception):
    """401: missing or invalid token."""


class ForbiddenError(Exception):
    """403: role/org denied."""


class NotFoundError(Exception):
    """404."""


class ConflictError(Exception):
    """409: illegal state for the operation."""


class ValidationError(Exception):
    """422: malformed payload."""


@dataclass
class PlatformConfig:
    data_dir: Path
    token_secret: str = "dev-secret"
    model_dir: Path | None = None
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    job_mode: str = "inline"  # inline | manual | pool
    job_workers: int = 2


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class PlatformService:
    def __init__(self, config: PlatformConfig):
        self.config = config
        root = Path(config.data_dir)
        root.mkdir(parents=True, exist_ok=True)
        self.objects = ObjectStore(root / "objects")
        self.db = Database(root / "platform.db")
        self.registry = (
            CheckpointRegistry(config.model_dir) if config.model_dir else None
        )
        self._job_queue: deque[str] = deque()
        self._job_lock = threading.Lock()
        self._pool = None
        if config.job_mode == "pool":
            from concurrent.futures import ThreadPoolExecutor

            self._pool = ThreadPoolExecutor(max_workers=config.job_workers)

    # --- users / auth ----------------------------------------------------------

    def add_user(self, user_id: str, role: str, org: str) -> str:
        """Provision a user; returns the bearer token (shown once)."""
        Principal(user_id=user_id, role=role, org_ref=org)  # validates role
        token = mint_token()
        th = hash_token(token, self.config.token_secret)

        def txn(conn):
            conn.execute(
                "INSERT INTO users (id, org, role, token_hash, created_at) VALUES (?,?,?,?,?)",
                (user_id, org, role, th, _now()),
            )

        self.db.write(txn)
        return token

    def principal_for_token(self, token: str | None) -> Principal:
        if not token:
            raise AuthError("missing bearer token")
        th = hash_token(token, self.config.token_secret)
        row = self.db.read_one("SELECT id, org, role FROM users WHERE token_hash = ?", (th,))
        if row is None:
            raise AuthError("unknown token")
        return Principal(user_id=row["id"], role=row["role"], org_ref=row["org"])

    def _require(self, principal: Principal, action: str, resource_org: str | None):
        if not authorize(principal, action, resource_org):
            raise ForbiddenError(f"{principal.role} may not {action}")

    # --- audit -----------------------------------------------------------------

    def _emit(self, conn, actor: str, role: str, action: str, target: str, category: str, details: dict):
        seq = self.db.next_audit_seq(conn)
        conn.execute(
            "INSERT INTO audit (seq, actor, role, action, target, category, created_at, details)"
            " VALUES (?,?,?,?,?,?,?,?)",
            (seq, actor, role, action, target, category, _now(), json.dumps(details, sort_keys=True)),
        )

    # --- recordings ------------------------------------------------------------

    def upload_recording(
        self, principal: Principal, data: bytes, fmt: str, patient_ref: str
    ) -> str:
        self._require(principal, "recording.upload", principal.org_ref)
        try:
            rec = parse_recording(data, fmt)
        except FormatError as e:
            raise ValidationError(str(e)) from e
        addr = self.objects.put(data)
        rec_id = rec.id or uuid.uuid4().hex

        def txn(conn):
            exists = conn.execute("SELECT 1 FROM recordings WHERE id = ?", (rec_id,)).fetchone()
            rid = rec_id if not exists else uuid.uuid4().hex
            conn.execute(
                "INSERT INTO recordings (id, org, patient_ref, format, object_addr, uploaded_by, created_at)"
                " VALUES (?,?,?,?,?,?,?)",
                (rid, principal.org_ref, patient_ref, fmt, addr, principal.user_id, _now()),
            )
            self._emit(
                conn, principal.user_id, principal.role, "recording.upload", rid, "state",
                {"patient_ref": patient_ref, "format": fmt, "object_addr": addr},
            )
            return rid

        return self.db.write(txn)

    def get_recording_bytes(self, recording_id: str) -> tuple[bytes, str]:
        row = self.db.read_one(
            "SELECT object_addr, format FROM recordings WHERE id = ?", (recording_id,)
        )
        if row is None:
            raise NotFoundError("unknown recording")
        return self.objects.get(row["object_addr"]), row["format"]

    # --- cases -------------------------------------------------------------------

    def create_case(self, principal: Principal, patient_ref: str, recording_ref: str, lead: str = "II") -> dict:
        rec = self.db.read_one("SELECT org FROM recordings WHERE id = ?", (recording_ref,))
        if rec is None:
            raise NotFoundError("unknown recording")
        self._require(principal, "case.create", rec["org"])
        case_id = uuid.uuid4().hex

        def txn(conn):
            conn.execute(
                "INSERT INTO cases (id, org, patient_ref, recording_ref, requesting_clinician,"
                " status, lead, created_at) VALUES (?,?,?,?,?,?,?,?)",
                (case_id, rec["org"], patient_ref, recording_ref, principal.user_id, "queued", lead, _now()),
            )
            self._emit(
                conn, principal.user_id, principal.role, "case.create", case_id, "state",
                {"patient_ref": patient_ref, "recording_ref": recording_ref},
            )

        self.db.write(txn)
        self._schedule(case_id)
        return self.case_detail_unaudited(case_id)

    def _case_row(self, case_id: str):
        row = self.db.read_one("SELECT * FROM cases WHERE id = ?", (case_id,))
        if row is None:
            raise NotFoundError("unknown case")
        return row

    def case_detail_unaudited(self, case_id: str) -> dict:
        row = self._case_row(case_id)
        edits = self.db.read(
            "SELECT id, target, action, new_value, original_value, editor, created_at"
            " FROM edits WHERE case_id = ? ORDER BY created_at, id",
            (case_id,),
        )
        return {
            "id": row["id"],
            "org": row["org"],
            "patient_ref": row["patient_ref"],
            "recording_ref": row["recording_ref"],
            "requesting_clinician": row["requesting_clinician"],
            "status": row["status"],
            "retry_count": row["retry_count"],
            "error": row["error"],
            "lead": row["lead"],
            "created_at": row["created_at"],
            "has_result": row["result_addr"] is not None,
            "has_report": row["report_addr"] is not None,
            "edits": [dict(e) for e in edits],
        }

    def get_case(self, principal: Principal, case_id: str) -> dict:
        row = self._case_row(case_id)
        self._require(principal, "case.view", row["org"])

        def txn(conn):
            self._emit(conn, principal.user_id, principal.role, "case.view", case_id, "read", {})

        self.db.write(txn)
        return self.case_detail_unaudited(case_id)

    def list_cases(self, principal: Principal, status: str | None = None) -> list[dict]:
        self._require(principal, "case.view", principal.org_ref)
        if principal.role == "admin":
            sql, args = "SELECT id FROM cases", ()
        else:
            sql, args = "SELECT id FROM cases WHERE org = ?", (principal.org_ref,)
        if status:
            if status not in CASE_STATUSES:
                raise ValidationError(f"unknown status: {status}")
            sql += (" WHERE" if "WHERE" not in sql else " AND") + " status = ?"
            args = (*args, status)
        sql += " ORDER BY created_at, id"
        return [self.case_detail_unaudited(r["id"]) for r in self.db.read(sql, args)]

    # --- analysis jobs ---------------------------------------------------------

    def _schedule(self, case_id: str) -> None:
        mode = self.config.job_mode
        if mode == "inline":
            self.execute_analysis(case_id)
        elif mode == "manual":
            with self._job_lock:
                self._job_queue.append(case_id)
        elif mode == "pool":
            self._pool.submit(self._run_job_safely, case_id)
        else:
            raise ValueError(f"unknown job mode: {mode}")

    def _run_job_safely(self, case_id: str) -> None:
        try:
            self.execute_analysis(case_id)
        except Exception:
            pass  # failures are recorded on the case row, never crash workers

    def run_next_job(self) -> str | None:
        """Manual mode: execute one scheduled job; returns the case id."""
        with self._job_lock:
            if not self._job_queue:
                return None
            case_id = self._job_queue.popleft()
        try:
            self.execute_analysis(case_id)
        except ConflictError:
            pass
        return case_id

    def pending_jobs(self) -> int:
        with self._job_lock:
            return len(self._job_queue)

    def _transition(self, conn, case_id: str, src: str, dst: str) -> None:
        if (src, dst) not in LEGAL_TRANSITIONS:
            raise ConflictError(f"illegal transition {src} -> {dst}")
        cur = conn.execute("SELECT status FROM cases WHERE id = ?", (case_id,)).fetchone()
        if cur is None or cur["status"] != src:
            raise ConflictError(f"case not in {src}")
        conn.execute("UPDATE cases SET status = ? WHERE id = ?", (dst, case_id))

    def execute_analysis(self, case_id: str) -> None:
        """Background job: queued -> processing -> ready, with capped retries."""
        row = self._case_row(case_id)
        if row["status"] == "processing":
            raise ConflictError("already processing")
        if row["status"] != "queued":
            raise ConflictError(f"case not queued (status {row['status']})")

        def start_txn(conn):
            self._transition(conn, case_id, "queued", "processing")

        self.db.write(start_txn)

        try:
            if self.registry is None:
                raise RuntimeError("no model registry configured")
            data, fmt = self.get_recording_bytes(row["recording_ref"])
            rec = parse_recording(data, fmt)
            result = analyze_recording(rec, row["lead"], self.registry, self.config.analysis)
            payload = result.canonical_json(include_volatile=True).encode("utf-8")
            addr = self.objects.put(payload)

            def ok_txn(conn):
                self._transition(conn, case_id, "processing", "ready")
                version_row = conn.execute(
                    "SELECT COALESCE(MAX(version), 0) + 1 AS v FROM result_versions WHERE case_id = ?",
                    (case_id,),
                ).fetchone()
                conn.execute(
                    "INSERT INTO result_versions (case_id, version, object_addr, created_at)"
                    " VALUES (?,?,?,?)",
                    (case_id, version_row["v"], addr, _now()),
                )
                conn.execute(
                    "UPDATE cases SET result_addr = ?, error = NULL WHERE id = ?", (addr, case_id)
                )
                conn.execute(
                    "INSERT INTO billing_ledger (org, case_id, amount, created_at) VALUES (?,?,?,?)",
                    (row["org"], case_id, 0.0, _now()),
                )
                self._emit(
                    conn, "system", "admin", "analysis.complete", case_id, "state",
                    {"result_addr": addr, "attempt": row["retry_count"] + 1},
                )

            self.db.write(ok_txn)
        except (ConflictError,):
            raise
        except Exception as e:
            message = f"{type(e).__name__}: {e}"

            def fail_txn(conn):
                retries = row["retry_count"] + 1
                dst = "failed" if retries >= MAX_RETRIES else "queued"
                self._transition(conn, case_id, "processing", dst)
                conn.execute(
                    "UPDATE cases SET retry_count = ?, error = ? WHERE id = ?",
                    (retries, message, case_id),
                )
                self._emit(
                    conn, "system", "admin", "analysis.failed", case_id, "state",
                    {"attempt": retries, "error": message[:500]},
                )
                return dst

            dst = self.db.write(fail_txn)
            if dst == "queued":
                self._schedule_retry(case_id)

    def _schedule_retry(self, case_id: str) -> None:
        if self.config.job_mode == "inline":
            self.execute_analysis(case_id)
        else:
            self._schedule(case_id)

    def get_result(self, principal: Principal, case_id: str) -> dict:
        row = self._case_row(case_id)
        self._require(principal, "result.view", row["org"])
        if row["result_addr"] is None:
            raise NotFoundError("result not available")
        payload = self.objects.get(row["result_addr"])

        def txn(conn):
            self._emit(conn, principal.user_id, principal.role, "result.view", case_id, "read", {})

        self.db.write(txn)
        return json.loads(payload)

    # --- edits / reports ---------------------------------------------------------

    def submit_edit(
        self,
        principal: Principal,
        case_id: str,
        target: str,
        action: str,
        new_value: str | None = None,
        original_value: str | None = None,
    ) -> dict:
        row = self._case_row(case_id)
        self._require(principal, "edit.submit", row["org"])
        if row["status"] == "finalized":
            raise ConflictError("case finalized")
        if row["status"] not in ("ready", "in_review"):
            raise ConflictError(f"case not reviewable (status {row['status']})")
        if action not in EDIT_ACTIONS:
            raise ValidationError(f"unknown edit action: {action}")
        if action == "modify" and new_value is None:
            raise ValidationError("modify requires new_value")
        edit_id = uuid.uuid4().hex

        def txn(conn):
            if row["status"] == "ready":
                self._transition(conn, case_id, "ready", "in_review")
            conn.execute(
                "INSERT INTO edits (id, case_id, target, action, new_value, original_value, editor, created_at)"
                " VALUES (?,?,?,?,?,?,?,?)",
                (edit_id, case_id, target, action, new_value, original_value, principal.user_id, _now()),
            )
            self._emit(
                conn, principal.user_id, principal.role, "edit.submit", case_id, "state",
                {"edit_id": edit_id, "target": target, "edit_action": action},
            )

        self.db.write(txn)
        return {
            "id": edit_id,
            "case_id": case_id,
            "target": target,
            "action": action,
            "new_value": new_value,
            "original_value": original_value,
            "editor": principal.user_id,
        }

    def finalize_report(self, principal: Principal, case_id: str, narrative: str) -> dict:
        row = self._case_row(case_id)
        self._require(principal, "report.finalize", row["org"])
        if row["status"] == "finalized":
            raise ConflictError("already finalized")
        if row["status"] not in ("ready", "in_review"):
            raise ConflictError(f"case not reviewable (status {row['status']})")
        if row["result_addr"] is None:
            raise ConflictError("no analysis result to finalize")
        result = json.loads(self.objects.get(row["result_addr"]))
        edits = self.db.read(
            "SELECT id, target, action, new_value, original_value, editor, created_at"
            " FROM edits WHERE case_id = ? ORDER BY created_at, id",
            (case_id,),
        )
        report = {
            "schema_version": 1,
            "case_ref": case_id,
            "patient_ref": row["patient_ref"],
            "recording_ref": row["recording_ref"],
            "result_addr": row["result_addr"],
            "model_versions": result["model_versions"],
            "machine_findings": {
                "summary": result["summary"],
                "lead": result["lead"],
            },
            "clinician_edits": [dict(e) for e in edits],
            "narrative": narrative,
            "finalized_by": principal.user_id,
            "finalized_at": _now(),
        }
        payload = json.dumps(report, sort_keys=True, separators=(",", ":")).encode("utf-8")
        addr = self.objects.put(payload)

        def txn(conn):
            self._transition(conn, case_id, row["status"], "finalized")
            conn.execute("UPDATE cases SET report_addr = ? WHERE id = ?", (addr, case_id))
            self._emit(
                conn, principal.user_id, principal.role, "report.finalize", case_id, "state",
                {"report_addr": addr},
            )

        self.db.write(txn)
        return report

    def get_report_bytes(self, principal: Principal, case_id: str) -> bytes:
        row = self._case_row(case_id)
        self._require(principal, "report.view", row["org"])
        if row["report_addr"] is None:
            raise NotFoundError("report not available")
        payload = self.objects.get(row["report_addr"])

        def txn(conn):
            self._emit(conn, principal.user_id, principal.role, "report.view", case_id, "read", {})

        self.db.write(txn)
        return payload

    def reanalyze(self, principal: Principal, case_id: str) -> dict:
        """Admin-only: queue a fresh analysis version; finalized reports stay."""
        row = self._case_row(case_id)
        self._require(principal, "case.reanalyze", row["org"])
        if row["status"] in ("queued", "processing"):
            raise ConflictError("analysis already pending")
        if row["status"] == "finalized":
            raise ConflictError("case finalized; reports are immutable")

        def txn(conn):
            self._transition(conn, case_id, row["status"], "queued")
            conn.execute("UPDATE cases SET retry_count = 0 WHERE id = ?", (case_id,))
            self._emit(
                conn, principal.user_id, principal.role, "case.reanalyze", case_id, "state", {}
            )

        self.db.write(txn)
        self._schedule(case_id)
        return self.case_detail_unaudited(case_id)

    # --- audit query -------------------------------------------------------------

    def query_audit(
        self,
        principal: Principal,
        actor: str | None = None,
        case: str | None = None,
        limit: int = 500,
        offset: int = 0,
    ) -> list[dict]:
        self._require(principal, "audit.query", principal.org_ref)
        sql = "SELECT seq, actor, role, action, target, category, created_at, details FROM audit"
        clauses, args = [], []
        if actor:
            clauses.append("actor = ?")
            args.append(actor)
        if case:
            clauses.append("target = ?")
            args.append(case)
        if clauses:
            sql += " WHERE " + " AND ".join(clauses)
        sql += " ORDER BY seq LIMIT ? OFFSET ?"
        args.extend([limit, offset])
        rows = self.db.read(sql, tuple(args))

        def txn(conn):
            self._emit(
                conn, principal.user_id, principal.role, "audit.query", "audit", "read",
                {"actor": actor, "case": case},
            )

        self.db.write(txn)
        out = []
        for r in rows:
            d = dict(r)
            d["details"] = json.loads(d["details"])
            out.append(d)
        return out

    # --- trace tiles ---------------------------------------------------------------

    def trace_tiles(
        self,
        principal: Principal,
        case_id: str,
        start: int,
        end: int,
        buckets: int,
        lead: str | None = None,
    ) -> dict:
        """Min/max envelope per bucket over [start, end) of the case's lead."""
        row = self._case_row(case_id)
        self._require(principal, "trace.view", row["org"])
        if buckets < 1 or end <= start:
            raise ValidationError("need end > start and buckets >= 1")
        data, fmt = self.get_recording_bytes(row["recording_ref"])
        rec = parse_recording(data, fmt)
        lead = lead or row["lead"]
        x = rec.lead_mv(lead)
        start = max(0, start)
        end = min(len(x), end)
        if end <= start:
            raise ValidationError("range outside recording")
        seg = x[start:end]
        edges = [start + round(i * (end - start) / buckets) for i in range(buckets + 1)]
        tiles = []
        for i in range(buckets):
            lo, hi = edges[i] - start, edges[i + 1] - start
            if hi <= lo:
                hi = lo + 1
            chunk = seg[lo:hi]
            tiles.append(
                {
                    "start_sample": int(edges[i]),
                    "end_sample": int(edges[i + 1]),
                    "min_mv": round(float(chunk.min()), 6),
                    "max_mv": round(float(chunk.max()), 6),
                }
            )
        return {
            "case_id": case_id,
            "lead": lead,
            "sampling_rate_hz": rec.sampling_rate_hz,
            "n_samples": len(x),
            "from": int(start),
            "to": int(end),
            "tiles": tiles,
        }
