"""Append-only relational store plus write-once blob area.

A store is a directory holding one SQLite database and a ``blobs/`` tree
fanned out by content hash. Rows are keyed by content-derived
identifiers and inserted with insert-or-ignore, so re-storing the same
entity is a no-op and nothing is ever updated or deleted.
"""

from __future__ import annotations

import os
import sqlite3
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterator, Mapping, Optional, Sequence, Union

from . import canon
from .canon import Identifier, SCHEMA_VERSION
from .errors import (
    BlobCorruptionError,
    IdentifierFormatError,
    IntegrityError,
    ReferentialError,
    StoreOpenError,
)

DB_FILENAME = "store.sqlite"
BLOB_DIRNAME = "blobs"
STORE_FORMAT_VERSION = "1"

TABLES = ("snapshots", "representations", "engine_runs", "decisions", "f_map")

_PREFIX_TABLE = {
    "snap": "snapshots",
    "repr": "representations",
    "run": "engine_runs",
    "dec": "decisions",
}

_SCHEMA = """
CREATE TABLE IF NOT EXISTS meta (
    key TEXT PRIMARY KEY,
    value TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS snapshots (
    snapshot_id TEXT PRIMARY KEY,
    time_window_start TEXT NOT NULL,
    time_window_end TEXT NOT NULL,
    artifact_manifest TEXT NOT NULL,
    version TEXT NOT NULL,
    created_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS representations (
    repr_id TEXT PRIMARY KEY,
    snapshot_id TEXT NOT NULL REFERENCES snapshots(snapshot_id),
    factory_name TEXT NOT NULL,
    factory_version TEXT NOT NULL,
    params TEXT NOT NULL,
    encoded_artifact_ref TEXT NOT NULL,
    version TEXT NOT NULL,
    created_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS engine_runs (
    run_id TEXT PRIMARY KEY,
    repr_id TEXT NOT NULL REFERENCES representations(repr_id),
    engine_name TEXT NOT NULL,
    engine_version TEXT NOT NULL,
    query TEXT NOT NULL,
    raw_output_ref TEXT NOT NULL,
    exec_time_ms TEXT NOT NULL,
    status TEXT NOT NULL CHECK (status IN ('ok', 'failed')),
    version TEXT NOT NULL,
    created_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS decisions (
    decision_id TEXT PRIMARY KEY,
    policy_id TEXT NOT NULL,
    payload_hash TEXT NOT NULL,
    version TEXT NOT NULL,
    created_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS f_map (
    experiment_id TEXT NOT NULL,
    snapshot_id TEXT NOT NULL REFERENCES snapshots(snapshot_id),
    repr_id TEXT NOT NULL REFERENCES representations(repr_id),
    run_id TEXT NOT NULL REFERENCES engine_runs(run_id),
    decision_id TEXT NOT NULL REFERENCES decisions(decision_id),
    plan_id TEXT NOT NULL,
    created_at TEXT NOT NULL,
    PRIMARY KEY (experiment_id, plan_id, repr_id, run_id, decision_id)
);
"""


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _as_identifier(value: Union[str, Identifier], expected_prefix: str) -> Identifier:
    ident = Identifier.parse(value) if isinstance(value, str) else value
    if ident.prefix != expected_prefix:
        raise IdentifierFormatError(
            f"expected a {expected_prefix} identifier, got {ident}"
        )
    return ident


@dataclass(frozen=True)
class BlobRef:
    """Address and length of a stored byte sequence."""

    hash: str
    length: int


@dataclass(frozen=True)
class ManifestEntry:
    name: str
    artifact_ref: str


@dataclass(frozen=True)
class SnapshotRecord:
    snapshot_id: Identifier
    time_window: tuple[str, str]
    artifact_manifest: tuple[ManifestEntry, ...]
    version: str
    created_at: str

    def identifying_payload(self) -> dict:
        return {
            "time_window": {"start": self.time_window[0], "end": self.time_window[1]},
            "artifact_manifest": [
                {"name": e.name, "artifact_ref": e.artifact_ref}
                for e in self.artifact_manifest
            ],
            "version": self.version,
        }

    @classmethod
    def create(
        cls,
        time_window: tuple[str, str],
        artifact_manifest: Sequence[ManifestEntry],
        version: str = SCHEMA_VERSION,
    ) -> "SnapshotRecord":
        manifest = tuple(sorted(artifact_manifest, key=lambda e: e.name))
        record = cls(
            snapshot_id=Identifier("snap", "0" * 16),
            time_window=(time_window[0], time_window[1]),
            artifact_manifest=manifest,
            version=version,
            created_at=_now(),
        )
        ident = canon.content_id("snap", record.identifying_payload())
        object.__setattr__(record, "snapshot_id", ident)
        return record


@dataclass(frozen=True)
class RepresentationRecord:
    repr_id: Identifier
    snapshot_id: Identifier
    factory_name: str
    factory_version: str
    params: Mapping[str, str]
    encoded_artifact_ref: str
    version: str
    created_at: str

    def identifying_payload(self) -> dict:
        # The encoded artifact is a deterministic function of the other
        # fields, so its hash is deliberately not identifying.
        return {
            "snapshot_id": str(self.snapshot_id),
            "factory_name": self.factory_name,
            "factory_version": self.factory_version,
            "params": dict(self.params),
            "version": self.version,
        }

    @classmethod
    def create(
        cls,
        snapshot_id: Identifier,
        factory_name: str,
        factory_version: str,
        params: Mapping[str, str],
        encoded_artifact_ref: str,
        version: str = SCHEMA_VERSION,
    ) -> "RepresentationRecord":
        record = cls(
            repr_id=Identifier("repr", "0" * 16),
            snapshot_id=snapshot_id,
            factory_name=factory_name,
            factory_version=factory_version,
            params=dict(params),
            encoded_artifact_ref=encoded_artifact_ref,
            version=version,
            created_at=_now(),
        )
        ident = canon.content_id("repr", record.identifying_payload())
        object.__setattr__(record, "repr_id", ident)
        return record


@dataclass(frozen=True)
class EngineRunRecord:
    run_id: Identifier
    repr_id: Identifier
    engine_name: str
    engine_version: str
    query: Any
    raw_output_ref: str
    exec_time_ms: str
    status: str
    version: str
    created_at: str

    def identifying_payload(self) -> dict:
        return {
            "repr_id": str(self.repr_id),
            "engine_name": self.engine_name,
            "engine_version": self.engine_version,
            "query": self.query,
            "raw_output_ref": self.raw_output_ref,
            "version": self.version,
        }

    @classmethod
    def create(
        cls,
        repr_id: Identifier,
        engine_name: str,
        engine_version: str,
        query: Any,
        raw_output_ref: str,
        exec_time_ms: str,
        status: str = "ok",
        version: str = SCHEMA_VERSION,
    ) -> "EngineRunRecord":
        record = cls(
            run_id=Identifier("run", "0" * 16),
            repr_id=repr_id,
            engine_name=engine_name,
            engine_version=engine_version,
            query=query,
            raw_output_ref=raw_output_ref,
            exec_time_ms=exec_time_ms,
            status=status,
            version=version,
            created_at=_now(),
        )
        ident = canon.content_id("run", record.identifying_payload())
        object.__setattr__(record, "run_id", ident)
        return record


@dataclass(frozen=True)
class DecisionRecord:
    decision_id: Identifier
    policy_id: Identifier
    payload_hash: str
    version: str
    created_at: str

    def identifying_payload(self) -> dict:
        return {
            "policy_id": str(self.policy_id),
            "payload_hash": self.payload_hash,
            "version": self.version,
        }

    @classmethod
    def create(
        cls,
        policy_id: Identifier,
        payload_hash: str,
        version: str = SCHEMA_VERSION,
    ) -> "DecisionRecord":
        record = cls(
            decision_id=Identifier("dec", "0" * 16),
            policy_id=policy_id,
            payload_hash=payload_hash,
            version=version,
            created_at=_now(),
        )
        ident = canon.content_id("dec", record.identifying_payload())
        object.__setattr__(record, "decision_id", ident)
        return record


@dataclass(frozen=True)
class FMapEntry:
    """One materialized map row: grid point, run, and resulting decision."""

    experiment_id: str
    snapshot_id: Identifier
    repr_id: Identifier
    run_id: Identifier
    decision_id: Identifier
    plan_id: Identifier
    created_at: str = ""

    @classmethod
    def create(
        cls,
        experiment_id: str,
        snapshot_id: Identifier,
        repr_id: Identifier,
        run_id: Identifier,
        decision_id: Identifier,
        plan_id: Identifier,
    ) -> "FMapEntry":
        return cls(
            experiment_id=experiment_id,
            snapshot_id=snapshot_id,
            repr_id=repr_id,
            run_id=run_id,
            decision_id=decision_id,
            plan_id=plan_id,
            created_at=_now(),
        )


Record = Union[
    SnapshotRecord, RepresentationRecord, EngineRunRecord, DecisionRecord, FMapEntry
]


class Store:
    """Handle on one store directory. Writers must not be shared across processes."""

    def __init__(self, location: Union[str, Path]):
        self.location = Path(location)
        self.blob_dir = self.location / BLOB_DIRNAME
        self._lock = threading.RLock()
        self._conn = self._open_connection()

    def _open_connection(self) -> sqlite3.Connection:
        db_path = self.location / DB_FILENAME
        if self.location.exists() and not self.location.is_dir():
            raise StoreOpenError(f"store location {self.location} is not a directory")
        existing = db_path.exists()
        try:
            self.location.mkdir(parents=True, exist_ok=True)
            self.blob_dir.mkdir(exist_ok=True)
            conn = sqlite3.connect(db_path, check_same_thread=False)
            conn.row_factory = sqlite3.Row
            conn.execute("PRAGMA foreign_keys = ON")
            if existing:
                self._check_integrity(conn)
            with conn:
                conn.executescript(_SCHEMA)
                conn.execute(
                    "INSERT OR IGNORE INTO meta (key, value) VALUES (?, ?)",
                    ("store_format", STORE_FORMAT_VERSION),
                )
        except sqlite3.Error as exc:
            raise StoreOpenError(f"cannot open store at {self.location}: {exc}") from exc
        return conn

    @staticmethod
    def _check_integrity(conn: sqlite3.Connection) -> None:
        try:
            names = {
                row[0]
                for row in conn.execute(
                    "SELECT name FROM sqlite_master WHERE type = 'table'"
                )
            }
        except sqlite3.DatabaseError as exc:
            raise StoreOpenError(f"existing database is unreadable: {exc}") from exc
        if "meta" not in names:
            raise StoreOpenError("existing database has no meta table")
        missing = [t for t in TABLES if t not in names]
        if missing:
            raise StoreOpenError(f"existing database is missing tables: {missing}")
        row = conn.execute(
            "SELECT value FROM meta WHERE key = 'store_format'"
        ).fetchone()
        if row is None or row[0] != STORE_FORMAT_VERSION:
            found = None if row is None else row[0]
            raise StoreOpenError(
                f"store format mismatch: found {found!r}, expected {STORE_FORMAT_VERSION!r}"
            )

    def close(self) -> None:
        self._conn.close()

    def __enter__(self) -> "Store":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- blob area ---------------------------------------------------------

    def _blob_path(self, ref: str) -> Path:
        if not canon.is_payload_hash(ref):
            raise IdentifierFormatError(f"malformed blob hash: {ref!r}")
        return self.blob_dir / ref[:2] / ref[2:4] / ref

    def put_blob(self, data: bytes) -> BlobRef:
        """Store bytes under their content hash. Re-storing is a no-op."""
        ref = canon.payload_hash(data)
        path = self._blob_path(ref)
        if not path.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.parent / f".{ref}.{os.getpid()}.tmp"
            tmp.write_bytes(data)
            os.replace(tmp, path)
        return BlobRef(hash=ref, length=len(data))

    def get_blob(self, ref: str) -> bytes:
        """Load bytes by hash, verifying them against their address."""
        data = self.read_blob_unverified(ref)
        if data is None:
            raise ReferentialError(f"blob {ref} is not stored")
        actual = canon.payload_hash(data)
        if actual != ref:
            raise BlobCorruptionError(
                f"blob {ref} re-hashes to {actual}; stored bytes are corrupt"
            )
        return data

    def read_blob_unverified(self, ref: str) -> Optional[bytes]:
        """Raw blob read without the re-hash check; None when absent.

        Verification audits use this so that corruption can be reported
        as a finding instead of an exception.
        """
        path = self._blob_path(ref)
        try:
            return path.read_bytes()
        except FileNotFoundError:
            return None

    def has_blob(self, ref: str) -> bool:
        return self._blob_path(ref).exists()

    def iter_blob_hashes(self) -> Iterator[str]:
        for path in sorted(self.blob_dir.glob("*/*/*")):
            if not path.name.startswith("."):
                yield path.name

    def blob_count(self) -> int:
        return sum(1 for _ in self.iter_blob_hashes())

    # -- rows --------------------------------------------------------------

    def _row_exists(self, table: str, column: str, value: str) -> bool:
        cur = self._conn.execute(
            f"SELECT 1 FROM {table} WHERE {column} = ? LIMIT 1", (value,)
        )
        return cur.fetchone() is not None

    def _require_row(self, table: str, column: str, ident: Identifier, owner: str) -> None:
        if not self._row_exists(table, column, str(ident)):
            raise ReferentialError(f"{owner} references missing {column} {ident}")

    def _require_blob(self, ref: str, owner: str) -> None:
        if not self.has_blob(ref):
            raise ReferentialError(f"{owner} references missing blob {ref}")

    def _verify_identity(self, record, field: str, prefix: str) -> None:
        recomputed = canon.content_id(prefix, record.identifying_payload())
        stored = getattr(record, field)
        if recomputed != stored:
            raise IntegrityError(
                f"stored identifier {stored} does not match recomputed {recomputed}"
            )

    def put_record(self, record: Record) -> str:
        """Insert a record, returning "inserted" or "ignored".

        The record's identifier is recomputed from its identifying
        payload and every reference is checked before the write, so the
        tables stay closed under the chain invariants.
        """
        if isinstance(record, SnapshotRecord):
            self._verify_identity(record, "snapshot_id", "snap")
            for entry in record.artifact_manifest:
                self._require_blob(entry.artifact_ref, f"snapshot {record.snapshot_id}")
            sql = (
                "INSERT OR IGNORE INTO snapshots "
                "(snapshot_id, time_window_start, time_window_end, artifact_manifest, version, created_at) "
                "VALUES (?, ?, ?, ?, ?, ?)"
            )
            args = (
                str(record.snapshot_id),
                record.time_window[0],
                record.time_window[1],
                canon.canonical_encode(
                    [
                        {"name": e.name, "artifact_ref": e.artifact_ref}
                        for e in record.artifact_manifest
                    ]
                ).decode("utf-8"),
                record.version,
                record.created_at,
            )
        elif isinstance(record, RepresentationRecord):
            self._verify_identity(record, "repr_id", "repr")
            self._require_row(
                "snapshots", "snapshot_id", record.snapshot_id, f"representation {record.repr_id}"
            )
            self._require_blob(record.encoded_artifact_ref, f"representation {record.repr_id}")
            sql = (
                "INSERT OR IGNORE INTO representations "
                "(repr_id, snapshot_id, factory_name, factory_version, params, encoded_artifact_ref, version, created_at) "
                "VALUES (?, ?, ?, ?, ?, ?, ?, ?)"
            )
            args = (
                str(record.repr_id),
                str(record.snapshot_id),
                record.factory_name,
                record.factory_version,
                canon.canonical_encode(dict(record.params)).decode("utf-8"),
                record.encoded_artifact_ref,
                record.version,
                record.created_at,
            )
        elif isinstance(record, EngineRunRecord):
            self._verify_identity(record, "run_id", "run")
            self._require_row(
                "representations", "repr_id", record.repr_id, f"engine run {record.run_id}"
            )
            self._require_blob(record.raw_output_ref, f"engine run {record.run_id}")
            sql = (
                "INSERT OR IGNORE INTO engine_runs "
                "(run_id, repr_id, engine_name, engine_version, query, raw_output_ref, exec_time_ms, status, version, created_at) "
                "VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?)"
            )
            args = (
                str(record.run_id),
                str(record.repr_id),
                record.engine_name,
                record.engine_version,
                canon.canonical_encode(record.query).decode("utf-8"),
                record.raw_output_ref,
                record.exec_time_ms,
                record.status,
                record.version,
                record.created_at,
            )
        elif isinstance(record, DecisionRecord):
            self._verify_identity(record, "decision_id", "dec")
            self._require_blob(
                record.policy_id.digest16, f"decision {record.decision_id} (policy spec)"
            )
            sql = (
                "INSERT OR IGNORE INTO decisions "
                "(decision_id, policy_id, payload_hash, version, created_at) "
                "VALUES (?, ?, ?, ?, ?)"
            )
            args = (
                str(record.decision_id),
                str(record.policy_id),
                record.payload_hash,
                record.version,
                record.created_at,
            )
        elif isinstance(record, FMapEntry):
            owner = f"f_map entry for {record.decision_id}"
            self._require_row("snapshots", "snapshot_id", record.snapshot_id, owner)
            self._require_row("representations", "repr_id", record.repr_id, owner)
            self._require_row("engine_runs", "run_id", record.run_id, owner)
            self._require_row("decisions", "decision_id", record.decision_id, owner)
            self._require_blob(record.plan_id.digest16, f"{owner} (plan spec)")
            rep = self.get_record(record.repr_id)
            if rep.snapshot_id != record.snapshot_id:
                raise IntegrityError(
                    f"f_map entry snapshot {record.snapshot_id} does not match "
                    f"representation snapshot {rep.snapshot_id}"
                )
            run = self.get_record(record.run_id)
            if run.repr_id != record.repr_id:
                raise IntegrityError(
                    f"f_map entry representation {record.repr_id} does not match "
                    f"run representation {run.repr_id}"
                )
            sql = (
                "INSERT OR IGNORE INTO f_map "
                "(experiment_id, snapshot_id, repr_id, run_id, decision_id, plan_id, created_at) "
                "VALUES (?, ?, ?, ?, ?, ?, ?)"
            )
            args = (
                record.experiment_id,
                str(record.snapshot_id),
                str(record.repr_id),
                str(record.run_id),
                str(record.decision_id),
                str(record.plan_id),
                record.created_at,
            )
        else:
            raise TypeError(f"not a storable record: {type(record).__name__}")

        with self._lock, self._conn:
            cur = self._conn.execute(sql, args)
        return "inserted" if cur.rowcount else "ignored"

    def get_record(self, ident: Union[str, Identifier]):
        """Fetch the row addressed by an identifier, or None when absent.

        Policy and plan identifiers address blob-backed specs, not rows,
        so they always resolve to None here.
        """
        if isinstance(ident, str):
            ident = Identifier.parse(ident)
        table = _PREFIX_TABLE.get(ident.prefix)
        if table is None:
            return None
        pk = {"snapshots": "snapshot_id", "representations": "repr_id",
              "engine_runs": "run_id", "decisions": "decision_id"}[table]
        row = self._conn.execute(
            f"SELECT * FROM {table} WHERE {pk} = ?", (str(ident),)
        ).fetchone()
        if row is None:
            return None
        return self._record_from_row(table, row)

    @staticmethod
    def _record_from_row(table: str, row: sqlite3.Row):
        if table == "snapshots":
            manifest = tuple(
                ManifestEntry(name=e["name"], artifact_ref=e["artifact_ref"])
                for e in canon.canonical_decode(row["artifact_manifest"].encode("utf-8"))
            )
            return SnapshotRecord(
                snapshot_id=Identifier.parse(row["snapshot_id"]),
                time_window=(row["time_window_start"], row["time_window_end"]),
                artifact_manifest=manifest,
                version=row["version"],
                created_at=row["created_at"],
            )
        if table == "representations":
            return RepresentationRecord(
                repr_id=Identifier.parse(row["repr_id"]),
                snapshot_id=Identifier.parse(row["snapshot_id"]),
                factory_name=row["factory_name"],
                factory_version=row["factory_version"],
                params=canon.canonical_decode(row["params"].encode("utf-8")),
                encoded_artifact_ref=row["encoded_artifact_ref"],
                version=row["version"],
                created_at=row["created_at"],
            )
        if table == "engine_runs":
            return EngineRunRecord(
                run_id=Identifier.parse(row["run_id"]),
                repr_id=Identifier.parse(row["repr_id"]),
                engine_name=row["engine_name"],
                engine_version=row["engine_version"],
                query=canon.canonical_decode(row["query"].encode("utf-8")),
                raw_output_ref=row["raw_output_ref"],
                exec_time_ms=row["exec_time_ms"],
                status=row["status"],
                version=row["version"],
                created_at=row["created_at"],
            )
        if table == "decisions":
            return DecisionRecord(
                decision_id=Identifier.parse(row["decision_id"]),
                policy_id=Identifier.parse(row["policy_id"]),
                payload_hash=row["payload_hash"],
                version=row["version"],
                created_at=row["created_at"],
            )
        raise AssertionError(table)

    @staticmethod
    def _fmap_from_row(row: sqlite3.Row) -> FMapEntry:
        return FMapEntry(
            experiment_id=row["experiment_id"],
            snapshot_id=Identifier.parse(row["snapshot_id"]),
            repr_id=Identifier.parse(row["repr_id"]),
            run_id=Identifier.parse(row["run_id"]),
            decision_id=Identifier.parse(row["decision_id"]),
            plan_id=Identifier.parse(row["plan_id"]),
            created_at=row["created_at"],
        )

    def table_counts(self) -> dict[str, int]:
        counts = {}
        for table in TABLES:
            counts[table] = self._conn.execute(
                f"SELECT COUNT(*) FROM {table}"
            ).fetchone()[0]
        return counts

    def table_rows(self, table: str) -> list[dict]:
        """All rows of one table as dicts, in a deterministic order."""
        if table not in TABLES:
            raise ValueError(f"unknown table {table!r}")
        cur = self._conn.execute(f"SELECT * FROM {table}")
        rows = [dict(row) for row in cur.fetchall()]
        rows.sort(key=lambda r: tuple(str(v) for v in r.values()))
        return rows

    def query_fmap(
        self,
        experiment_id: str,
        snapshot_id: Optional[Union[str, Identifier]] = None,
        plan_id: Optional[Union[str, Identifier]] = None,
    ) -> list[FMapEntry]:
        """Map rows for an experiment, sorted by repr then run then plan."""
        sql = "SELECT * FROM f_map WHERE experiment_id = ?"
        args: list[str] = [experiment_id]
        if snapshot_id is not None:
            sql += " AND snapshot_id = ?"
            args.append(str(_as_identifier(snapshot_id, "snap")))
        if plan_id is not None:
            sql += " AND plan_id = ?"
            args.append(str(_as_identifier(plan_id, "plan")))
        sql += " ORDER BY repr_id, run_id, plan_id"
        return [self._fmap_from_row(row) for row in self._conn.execute(sql, args)]

    def fmap_for_decision(self, decision_id: Union[str, Identifier]) -> list[FMapEntry]:
        ident = _as_identifier(decision_id, "dec")
        cur = self._conn.execute(
            "SELECT * FROM f_map WHERE decision_id = ? "
            "ORDER BY experiment_id, repr_id, run_id, plan_id",
            (str(ident),),
        )
        return [self._fmap_from_row(row) for row in cur.fetchall()]

    def experiment_plan_ids(self, experiment_id: str) -> list[Identifier]:
        cur = self._conn.execute(
            "SELECT DISTINCT plan_id FROM f_map WHERE experiment_id = ? ORDER BY plan_id",
            (experiment_id,),
        )
        return [Identifier.parse(row[0]) for row in cur.fetchall()]


def open_store(location: Union[str, Path]) -> Store:
    """Open a store directory, creating an empty one when absent."""
    return Store(location)
