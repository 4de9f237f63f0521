"""Accepted submissions, one record per (form, sender); the newest one wins."""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

from .ingest import Submission, iso_utc
from .schema import FormSchema, Registry

METADATA_COLUMNS = ("received_date", "sender", "message_id")


class UnknownSchema(LookupError):
    pass


class UnknownField(LookupError):
    pass


class UpsertStatus(enum.Enum):
    INSERTED = "inserted"
    REPLACED = "replaced"
    STALE = "stale"
    IDENTITY_CONFLICT = "identity_conflict"


@dataclass(frozen=True)
class UpsertResult:
    status: UpsertStatus
    previous: Optional[Submission] = None


@dataclass(frozen=True)
class StoreRecord:
    key: tuple[str, str]
    submission: Submission
    # Accepted submissions seen for this key, including stale ones, so the
    # count does not depend on arrival order.
    history_count: int = 1

    def column(self, name: str) -> str:
        sub = self.submission
        if name == "received_date":
            return iso_utc(sub.date)
        if name == "sender":
            return sub.sender
        if name == "message_id":
            return sub.message_id
        return sub.fields.get(name, "")


class Store:
    def __init__(self, registry: Registry):
        self.registry = registry
        self._records: dict[tuple[str, str], StoreRecord] = {}

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[StoreRecord]:
        return iter(sorted(self._records.values(), key=lambda r: r.key))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Store):
            return NotImplemented
        return self._records == other._records

    def get(self, schema_id: str, sender: str) -> Optional[StoreRecord]:
        return self._records.get((schema_id, sender))

    def upsert(self, sub: Submission) -> UpsertResult:
        record = self._records.get(sub.key)
        if record is None:
            self._records[sub.key] = StoreRecord(sub.key, sub)
            return UpsertResult(UpsertStatus.INSERTED)

        current = record.submission
        if sub.identity_digest and current.identity_digest and sub.identity_digest != current.identity_digest:
            return UpsertResult(UpsertStatus.IDENTITY_CONFLICT, current)
        if sub.order > current.order:
            self._records[sub.key] = StoreRecord(sub.key, sub, record.history_count + 1)
            return UpsertResult(UpsertStatus.REPLACED, current)
        self._records[sub.key] = StoreRecord(sub.key, current, record.history_count + 1)
        return UpsertResult(UpsertStatus.STALE, current)

    def _schema(self, schema_id: str) -> FormSchema:
        schema = self.registry.get(schema_id)
        if schema is None:
            raise UnknownSchema(schema_id)
        return schema

    def records(self, schema_id: str) -> list[StoreRecord]:
        """Records of one form, ordered by sender."""
        self._schema(schema_id)
        return sorted((r for r in self._records.values() if r.key[0] == schema_id), key=lambda r: r.key[1])

    def columns(self, schema_id: str) -> list[str]:
        return [*METADATA_COLUMNS, *self._schema(schema_id).field_names]

    def export_csv(self, schema_id: str) -> bytes:
        """RFC 4180 CSV: CRLF rows, minimal quoting, header row first.

        Password columns already hold digests, never plaintext.
        """
        return self.to_csv(schema_id, self.records(schema_id))

    def to_csv(self, schema_id: str, records: Iterable[StoreRecord]) -> bytes:
        columns = self.columns(schema_id)
        buf = io.StringIO(newline="")
        writer = csv.writer(buf, lineterminator="\r\n")
        writer.writerow(columns)
        for record in records:
            writer.writerow([record.column(c) for c in columns])
        return buf.getvalue().encode("utf-8")

    def query(self, schema_id: str, field: str, value: str) -> list[StoreRecord]:
        if field not in self.columns(schema_id):
            raise UnknownField(f"{schema_id} has no column {field!r}")
        return [r for r in self.records(schema_id) if r.column(field) == value]


__all__ = [
    "METADATA_COLUMNS",
    "Store",
    "StoreRecord",
    "UnknownField",
    "UnknownSchema",
    "UpsertResult",
    "UpsertStatus",
]
