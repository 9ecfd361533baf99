"""Replay verification: recompute decision identities from stored bytes.

Replay walks one map entry's chain backward, rehashes what the blobs
actually contain, and compares against what the rows claim. Mismatches
are findings in the report, never exceptions, so one corrupt byte still
yields a complete account of which fields diverged. Only a structurally
broken chain (a missing row or blob) raises, since then there is
nothing left to compare against.

When a blob fails its address check, the recomputed value falls back to
the hash of the bytes actually present, so any single-byte change shows
up as a persisted/recomputed divergence rather than being silently
re-derived from corrupt input.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Union

from . import canon
from .canon import Identifier, SCHEMA_VERSION
from .errors import (
    BrokenChainError,
    CanonicalizationError,
    ValidationError,
)
from .policy import EquivalencePolicy
from .store import FMapEntry, Store


@dataclass(frozen=True)
class FieldCheck:
    field: str
    persisted: str
    recomputed: str

    @property
    def match(self) -> bool:
        return self.persisted == self.recomputed

    def to_payload(self) -> dict:
        return {
            "field": self.field,
            "persisted": self.persisted,
            "recomputed": self.recomputed,
            "match": self.match,
        }


@dataclass(frozen=True)
class ReplayReport:
    """Outcome of replaying one map entry."""

    entry: FMapEntry
    checks: tuple[FieldCheck, ...]
    counts_before: Mapping[str, int]
    counts_after: Mapping[str, int]

    @property
    def ok(self) -> bool:
        return all(check.match for check in self.checks)

    @property
    def store_unchanged(self) -> bool:
        return dict(self.counts_before) == dict(self.counts_after)

    def mismatches(self) -> tuple[FieldCheck, ...]:
        return tuple(check for check in self.checks if not check.match)

    def to_payload(self) -> dict:
        return {
            "entry": {
                "experiment_id": self.entry.experiment_id,
                "plan_id": str(self.entry.plan_id),
                "snapshot_id": str(self.entry.snapshot_id),
                "repr_id": str(self.entry.repr_id),
                "run_id": str(self.entry.run_id),
                "decision_id": str(self.entry.decision_id),
            },
            "checks": [check.to_payload() for check in self.checks],
            "ok": self.ok,
            "store_unchanged": self.store_unchanged,
            "version": SCHEMA_VERSION,
        }


def _extracted_hash(raw_bytes: bytes, policy: EquivalencePolicy) -> Optional[str]:
    """Hash of the policy-selected value, or None when it cannot be reached."""
    try:
        payload = canon.canonical_decode(raw_bytes)
    except CanonicalizationError:
        return None
    value = payload
    for part in policy.hash_source:
        if not isinstance(value, Mapping) or part not in value:
            return None
        value = value[part]
    try:
        return canon.payload_hash(canon.canonical_encode(value))
    except CanonicalizationError:
        return None


def _decode_policy(pol_bytes: bytes) -> Optional[EquivalencePolicy]:
    try:
        payload = canon.canonical_decode(pol_bytes)
    except CanonicalizationError:
        return None
    if not isinstance(payload, Mapping):
        return None
    try:
        return EquivalencePolicy.from_payload(payload)
    except ValidationError:
        return None


def replay_entry(store: Store, entry: FMapEntry, deep: bool = False) -> ReplayReport:
    """Re-derive the entry's decision from its stored raw output.

    The basic pass verifies the raw output blob, the policy blob, the
    extracted payload hash, and the decision identifier. ``deep`` also
    rehashes the upstream representation and snapshot blobs, re-derives
    every row identifier from its own columns, and re-checks the
    row-to-row links.
    """
    counts_before = store.table_counts()
    run = store.get_record(entry.run_id)
    if run is None:
        raise BrokenChainError(f"engine run row {entry.run_id} is missing")
    decision = store.get_record(entry.decision_id)
    if decision is None:
        raise BrokenChainError(f"decision row {entry.decision_id} is missing")

    raw_bytes = store.read_blob_unverified(run.raw_output_ref)
    if raw_bytes is None:
        raise BrokenChainError(f"raw output blob {run.raw_output_ref} is missing")
    raw_actual = canon.payload_hash(raw_bytes)

    pol_bytes = store.read_blob_unverified(decision.policy_id.digest16)
    if pol_bytes is None:
        raise BrokenChainError(f"policy blob {decision.policy_id} is missing")
    pol_actual = "pol_" + canon.payload_hash(pol_bytes)

    policy = _decode_policy(pol_bytes)
    recomputed_hash = None
    if raw_actual == run.raw_output_ref and policy is not None:
        recomputed_hash = _extracted_hash(raw_bytes, policy)
    if recomputed_hash is None:
        recomputed_hash = raw_actual

    recomputed_decision = canon.content_id(
        "dec",
        {
            "policy_id": pol_actual,
            "payload_hash": recomputed_hash,
            "version": decision.version,
        },
    )

    checks = [
        FieldCheck("raw_output_ref", run.raw_output_ref, raw_actual),
        FieldCheck("policy_id", str(decision.policy_id), pol_actual),
        FieldCheck("payload_hash", decision.payload_hash, recomputed_hash),
        FieldCheck("decision_id", str(entry.decision_id), str(recomputed_decision)),
    ]

    if deep:
        rep = store.get_record(entry.repr_id)
        if rep is None:
            raise BrokenChainError(f"representation row {entry.repr_id} is missing")
        snapshot = store.get_record(entry.snapshot_id)
        if snapshot is None:
            raise BrokenChainError(f"snapshot row {entry.snapshot_id} is missing")
        encoded = store.read_blob_unverified(rep.encoded_artifact_ref)
        if encoded is None:
            raise BrokenChainError(
                f"encoded artifact blob {rep.encoded_artifact_ref} is missing"
            )
        checks.append(
            FieldCheck(
                "encoded_artifact_ref",
                rep.encoded_artifact_ref,
                canon.payload_hash(encoded),
            )
        )
        for manifest_entry in snapshot.artifact_manifest:
            artifact = store.read_blob_unverified(manifest_entry.artifact_ref)
            if artifact is None:
                raise BrokenChainError(
                    f"snapshot artifact blob {manifest_entry.artifact_ref} is missing"
                )
            checks.append(
                FieldCheck(
                    f"artifact:{manifest_entry.name}",
                    manifest_entry.artifact_ref,
                    canon.payload_hash(artifact),
                )
            )
        checks.extend(
            [
                FieldCheck(
                    "snapshot_row",
                    str(entry.snapshot_id),
                    str(canon.content_id("snap", snapshot.identifying_payload())),
                ),
                FieldCheck(
                    "representation_row",
                    str(entry.repr_id),
                    str(canon.content_id("repr", rep.identifying_payload())),
                ),
                FieldCheck(
                    "run_row",
                    str(entry.run_id),
                    str(canon.content_id("run", run.identifying_payload())),
                ),
                FieldCheck(
                    "decision_row",
                    str(entry.decision_id),
                    str(canon.content_id("dec", decision.identifying_payload())),
                ),
                FieldCheck(
                    "run_links_representation",
                    str(entry.repr_id),
                    str(run.repr_id),
                ),
                FieldCheck(
                    "representation_links_snapshot",
                    str(entry.snapshot_id),
                    str(rep.snapshot_id),
                ),
            ]
        )

    return ReplayReport(
        entry=entry,
        checks=tuple(checks),
        counts_before=counts_before,
        counts_after=store.table_counts(),
    )


def replay_decision(
    store: Store, decision_id: Union[str, Identifier], deep: bool = False
) -> tuple[ReplayReport, ...]:
    """Replay every map entry that produced the given decision."""
    if isinstance(decision_id, str):
        decision_id = Identifier.parse(decision_id)
    if decision_id.prefix != "dec":
        raise ValidationError(f"not a decision identifier: {decision_id}")
    entries = store.fmap_for_decision(decision_id)
    if not entries:
        raise BrokenChainError(
            f"decision {decision_id} has no map entry linking it to a run"
        )
    return tuple(replay_entry(store, entry, deep=deep) for entry in entries)


@dataclass(frozen=True)
class AggregateReport:
    """Replay outcomes for every entry in one experiment's map."""

    experiment_id: str
    reports: tuple[ReplayReport, ...]
    errors: tuple[tuple[str, str], ...]
    counts_before: Mapping[str, int]
    counts_after: Mapping[str, int]

    @property
    def ok(self) -> bool:
        return not self.errors and all(report.ok for report in self.reports)

    @property
    def verified(self) -> int:
        return len(self.reports)

    @property
    def matched(self) -> int:
        return sum(1 for report in self.reports if report.ok)

    @property
    def store_unchanged(self) -> bool:
        return dict(self.counts_before) == dict(self.counts_after)

    def to_payload(self) -> dict:
        return {
            "experiment_id": self.experiment_id,
            "verified": self.verified,
            "matched": self.matched,
            "mismatched": self.verified - self.matched,
            "errors": [
                {"entry": subject, "error": message}
                for subject, message in self.errors
            ],
            "reports": [report.to_payload() for report in self.reports],
            "ok": self.ok,
            "store_unchanged": self.store_unchanged,
            "version": SCHEMA_VERSION,
        }


def replay_all(
    store: Store,
    experiment_id: str,
    plan_id: Optional[Union[str, Identifier]] = None,
    deep: bool = False,
) -> AggregateReport:
    """Replay an experiment's whole map, capturing per-entry failures.

    A broken chain on one entry becomes an error line and the rest of
    the map is still verified.
    """
    counts_before = store.table_counts()
    entries = store.query_fmap(experiment_id, plan_id=plan_id)
    if not entries:
        raise ValidationError(f"experiment {experiment_id!r} has no map entries")
    reports = []
    errors = []
    for entry in entries:
        try:
            reports.append(replay_entry(store, entry, deep=deep))
        except BrokenChainError as exc:
            errors.append((f"{entry.run_id}/{entry.decision_id}", str(exc)))
    return AggregateReport(
        experiment_id=experiment_id,
        reports=tuple(reports),
        errors=tuple(errors),
        counts_before=counts_before,
        counts_after=store.table_counts(),
    )
