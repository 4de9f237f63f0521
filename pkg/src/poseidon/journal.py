"""Append-only journal of received messages, and the loop that feeds the store.

Every processed message is kept verbatim as ``<seq>-<hash>.eml`` next to a
``<seq>-<hash>.outcome`` sidecar with one line per outcome::

    SEQ 7 OUTCOME accepted KEY person-registration/jan@x.org ARRIVED 1412596800 SHA256 9f2c...

The sidecar is written last and acts as the commit marker. Replaying the
journal through a fresh :class:`Intake` rebuilds the store exactly.
"""

from __future__ import annotations

import hashlib
import logging
import os
import re
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Union

from . import ingest
from .ingest import Accepted, IngestOutcome, Rejected
from .schema import Registry
from .store import Store, UpsertStatus

log = logging.getLogger(__name__)

_ENTRY_RE = re.compile(r"(\d+)-([0-9a-f]{16})\.(eml|outcome)\Z")
_SIDECAR_RE = re.compile(
    r"SEQ (\d+) OUTCOME (accepted|rejected:[a-z_]+) KEY (\S+) ARRIVED (-?\d+) SHA256 ([0-9a-f]{64})\Z"
)


class JournalCorrupt(Exception):
    def __init__(self, seq: int, problem: str):
        super().__init__(f"journal entry {seq}: {problem}")
        self.seq = seq
        self.problem = problem


@dataclass(frozen=True)
class JournalEntry:
    seq: int
    eml: Path
    sidecar: Path


def content_digest(raw: bytes) -> str:
    return hashlib.sha256(raw).hexdigest()


def _message_tag(raw: bytes, outcomes: list[IngestOutcome]) -> str:
    message_id = outcomes[0].message_id if outcomes else "-"
    basis = message_id.encode("utf-8") if message_id != "-" else raw
    return hashlib.sha256(basis).hexdigest()[:16]


def sidecar_lines(outcomes: list[IngestOutcome], arrival: int, digest: str) -> list[str]:
    lines = []
    for outcome in outcomes:
        key = f"{outcome.key[0]}/{outcome.key[1]}" if outcome.key else "-"
        lines.append(f"SEQ {outcome.seq} OUTCOME {outcome.status} KEY {key} ARRIVED {arrival} SHA256 {digest}")
    return lines


def _write_atomic(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


class Journal:
    """A directory of journaled messages.

    Opening with ``writable=True`` removes an uncommitted tail entry (an
    ``.eml`` whose sidecar never got written) left behind by a crash.
    """

    def __init__(self, directory: Union[str, Path], writable: bool = False):
        self.directory = Path(directory)
        if writable:
            self.directory.mkdir(parents=True, exist_ok=True)
            for tmp in self.directory.glob("*.tmp"):
                tmp.unlink()
            for orphan in self._scan()[1]:
                log.warning("discarding uncommitted journal entry %s", orphan.name)
                orphan.unlink()

    def _scan(self) -> tuple[list[JournalEntry], list[Path]]:
        if not self.directory.is_dir():
            return [], []
        found: dict[tuple[int, str], dict[str, Path]] = {}
        for path in self.directory.iterdir():
            m = _ENTRY_RE.match(path.name)
            if m:
                found.setdefault((int(m.group(1)), m.group(2)), {})[m.group(3)] = path
        entries: list[JournalEntry] = []
        orphans: list[Path] = []
        last_seq = max((seq for seq, _ in found), default=None)
        for (seq, _tag), files in sorted(found.items()):
            if "eml" in files and "outcome" in files:
                entries.append(JournalEntry(seq, files["eml"], files["outcome"]))
            elif "eml" in files and seq == last_seq:
                orphans.append(files["eml"])
            elif "eml" in files:
                raise JournalCorrupt(seq, "message has no outcome sidecar")
            else:
                raise JournalCorrupt(seq, "outcome sidecar has no message")
        return entries, orphans

    def entries(self) -> list[JournalEntry]:
        return self._scan()[0]

    def next_seq(self) -> int:
        last = 0
        for entry in self.entries():
            lines = entry.sidecar.read_text("utf-8").splitlines()
            last = max([last, entry.seq] + [int(m.group(1)) for m in map(_SIDECAR_RE.match, lines) if m])
        return last + 1

    def digests(self) -> set[str]:
        """Content digests of every journaled message (used to skip already-seen files)."""
        out = set()
        for entry in self.entries():
            for line in entry.sidecar.read_text("utf-8").splitlines():
                m = _SIDECAR_RE.match(line)
                if m:
                    out.add(m.group(5))
        return out

    def write(self, raw: bytes, outcomes: list[IngestOutcome], arrival: int) -> JournalEntry:
        seq = outcomes[0].seq
        stem = f"{seq:08d}-{_message_tag(raw, outcomes)}"
        eml = self.directory / f"{stem}.eml"
        sidecar = self.directory / f"{stem}.outcome"
        _write_atomic(eml, raw)
        lines = sidecar_lines(outcomes, arrival, content_digest(raw))
        _write_atomic(sidecar, ("\n".join(lines) + "\n").encode("utf-8"))
        return JournalEntry(seq, eml, sidecar)


class Intake:
    """Single consumer that turns raw messages into store updates.

    ``journal`` is optional; without it nothing is persisted (used by replay
    and by the simulator).
    """

    def __init__(
        self,
        registry: Registry,
        store: Optional[Store] = None,
        journal: Optional[Journal] = None,
        system_address: str = ingest.DEFAULT_SYSTEM_ADDRESS,
        clock: Callable[[], float] = time.time,
        next_seq: int = 1,
    ):
        self.registry = registry
        self.store = store if store is not None else Store(registry)
        self.journal = journal
        self.system_address = system_address
        self.clock = clock
        self.next_seq = next_seq

    def receive(self, raw: bytes, arrival: Optional[int] = None) -> list[IngestOutcome]:
        if arrival is None:
            arrival = int(self.clock())
        outcomes = ingest.receive(raw, self.registry, self.next_seq, arrival, self.system_address)
        settled: list[IngestOutcome] = []
        for outcome in outcomes:
            if isinstance(outcome, Accepted):
                result = self.store.upsert(outcome.submission)
                if result.status is UpsertStatus.IDENTITY_CONFLICT:
                    sub = outcome.submission
                    outcome = Rejected(
                        ingest.IDENTITY_CONFLICT,
                        sub.message_id,
                        sub.seq,
                        "password does not match the earlier submission",
                        key=sub.key,
                    )
            settled.append(outcome)
        self.next_seq = max(o.seq for o in settled) + 1
        if self.journal is not None:
            self.journal.write(raw, settled, arrival)
        return settled


def journal_write(
    directory: Union[str, Path], raw: bytes, outcomes: list[IngestOutcome], arrival: int
) -> JournalEntry:
    return Journal(directory, writable=True).write(raw, outcomes, arrival)


def journal_replay(
    directory: Union[str, Path],
    registry: Registry,
    system_address: str = ingest.DEFAULT_SYSTEM_ADDRESS,
) -> Store:
    """Rebuild the store from a journal directory, checking every entry on the way."""
    intake = Intake(registry, system_address=system_address)
    for entry in Journal(directory).entries():
        try:
            raw = entry.eml.read_bytes()
            recorded = entry.sidecar.read_text("utf-8").splitlines()
        except OSError as exc:
            raise JournalCorrupt(entry.seq, f"unreadable: {exc}") from None
        matches = [_SIDECAR_RE.match(line) for line in recorded]
        if not recorded or not all(matches):
            raise JournalCorrupt(entry.seq, "unparseable outcome sidecar")
        first = matches[0]
        if int(first.group(1)) != entry.seq:
            raise JournalCorrupt(entry.seq, "sidecar sequence number does not match file name")
        if first.group(5) != content_digest(raw):
            raise JournalCorrupt(entry.seq, "message content does not match its digest (truncated?)")
        arrival = int(first.group(4))
        intake.next_seq = entry.seq
        outcomes = intake.receive(raw, arrival=arrival)
        if sidecar_lines(outcomes, arrival, first.group(5)) != recorded:
            raise JournalCorrupt(entry.seq, "replayed outcome differs from the recorded one")
    return intake.store


__all__ = [
    "Intake",
    "Journal",
    "JournalCorrupt",
    "JournalEntry",
    "content_digest",
    "journal_replay",
    "journal_write",
    "sidecar_lines",
]
