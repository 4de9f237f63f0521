"""From a received mail message to an accepted submission (plus receipt) or a rejection.

Stages run in a fixed order and the first failing stage decides the outcome:
sender check, attachment extraction, payload parsing, schema lookup,
validation. Nothing here touches the store; see :mod:`poseidon.journal` for
the loop that persists outcomes.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Optional, Union

from .formdata import PayloadError, ValidationError, parse_payload, validate
from .mime import MailMessage, MessageError, parse_message
from .schema import Registry

DEFAULT_SYSTEM_ADDRESS = "forms@poseidon.example"
XML_MEDIA_TYPES = ("application/xml", "text/xml")

SPOOFED_SENDER = "spoofed_sender"
NO_FORM_ATTACHMENT = "no_form_attachment"
NON_TEXT_ATTACHMENT = "non_text_attachment"
MALFORMED_PAYLOAD = "malformed_payload"
UNKNOWN_SCHEMA = "unknown_schema"
VALIDATION_FAILED = "validation_failed"
IDENTITY_CONFLICT = "identity_conflict"
MALFORMED_MESSAGE = "malformed_message"


class Rejection(Exception):
    """Raised by a pipeline stage to stop processing a message."""

    def __init__(self, reason: str, detail: str = "", errors: tuple[ValidationError, ...] = ()):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason
        self.detail = detail
        self.errors = errors


@dataclass(frozen=True)
class Submission:
    schema_id: str
    sender: str
    fields: dict[str, str]
    date: int
    seq: int
    message_id: str
    identity_digest: str = ""

    @property
    def key(self) -> tuple[str, str]:
        return (self.schema_id, self.sender)

    @property
    def order(self) -> tuple[int, int]:
        return (self.date, self.seq)


@dataclass(frozen=True)
class Accepted:
    submission: Submission
    receipt: MailMessage

    @property
    def seq(self) -> int:
        return self.submission.seq

    @property
    def message_id(self) -> str:
        return self.submission.message_id

    @property
    def status(self) -> str:
        return "accepted"

    @property
    def key(self) -> Optional[tuple[str, str]]:
        return self.submission.key


@dataclass(frozen=True)
class Rejected:
    reason: str
    message_id: str
    seq: int
    detail: str = ""
    errors: tuple[ValidationError, ...] = ()
    key: Optional[tuple[str, str]] = None

    @property
    def status(self) -> str:
        return f"rejected:{self.reason}"


IngestOutcome = Union[Accepted, Rejected]


def password_digest(value: str) -> str:
    if not value:
        return ""
    return hashlib.sha256(value.encode("utf-8")).hexdigest()


def iso_utc(epoch: int) -> str:
    return datetime.fromtimestamp(epoch, timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def check_sender(msg: MailMessage) -> None:
    """Reject mail whose Reply-To points somewhere other than From.

    A missing Reply-To is fine; most clients leave it out.
    """
    if msg.reply_to is not None and msg.reply_to != msg.sender:
        raise Rejection(SPOOFED_SENDER, f"Reply-To {msg.reply_to} differs from From {msg.sender}")


def extract_form_attachments(msg: MailMessage) -> list[tuple[str, bytes]]:
    for att in msg.attachments:
        if b"\x00" in att.content:
            raise Rejection(NON_TEXT_ATTACHMENT, f"{att.filename} is not plain text")
    forms = [
        (att.filename, att.content)
        for att in msg.attachments
        if att.media_type in XML_MEDIA_TYPES or att.filename.lower().endswith(".xml")
    ]
    if not forms:
        raise Rejection(NO_FORM_ATTACHMENT, "message carries no XML attachment")
    return forms


def _build_submission(msg: MailMessage, content: bytes, registry: Registry, seq: int) -> Submission:
    try:
        payload = parse_payload(content)
    except PayloadError as exc:
        raise Rejection(MALFORMED_PAYLOAD, str(exc)) from None
    schema = registry.get(payload.schema_id)
    if schema is None:
        raise Rejection(UNKNOWN_SCHEMA, f"no form named {payload.schema_id!r}")
    result = validate(payload, schema)
    if not result.ok:
        raise Rejection(VALIDATION_FAILED, f"{len(result.errors)} problem(s)", result.errors)

    # Passwords identify the submitter; only their digest is kept.
    fields = dict(result.fields)
    passwords = [f.name for f in schema.fields if f.kind == "password"]
    for name in passwords:
        fields[name] = password_digest(fields[name])
    identity = fields[passwords[0]] if passwords else ""
    return Submission(
        schema_id=schema.schema_id,
        sender=msg.sender,
        fields=fields,
        date=msg.date,
        seq=seq,
        message_id=msg.message_id,
        identity_digest=identity,
    )


def process_message(
    msg: MailMessage,
    registry: Registry,
    seq: int,
    system_address: str = DEFAULT_SYSTEM_ADDRESS,
) -> list[IngestOutcome]:
    """Run the pipeline over one message.

    Each XML attachment is an independent candidate and takes the next seq
    number, so the result has one outcome per attachment (or a single
    rejection when the message as a whole is refused).
    """
    try:
        check_sender(msg)
        forms = extract_form_attachments(msg)
    except Rejection as rej:
        return [Rejected(rej.reason, msg.message_id, seq, rej.detail)]

    outcomes: list[IngestOutcome] = []
    for offset, (_filename, content) in enumerate(forms):
        try:
            sub = _build_submission(msg, content, registry, seq + offset)
        except Rejection as rej:
            outcomes.append(Rejected(rej.reason, msg.message_id, seq + offset, rej.detail, rej.errors))
        else:
            outcomes.append(Accepted(sub, make_receipt(sub, system_address)))
    return outcomes


def receive(
    raw: bytes,
    registry: Registry,
    seq: int,
    arrival: int,
    system_address: str = DEFAULT_SYSTEM_ADDRESS,
) -> list[IngestOutcome]:
    """Parse raw message bytes and process them.

    An unparseable Date header is replaced by ``arrival``; any other parse
    failure is a ``malformed_message`` rejection.
    """
    try:
        msg = parse_message(raw, default_date=arrival)
    except MessageError as exc:
        return [Rejected(MALFORMED_MESSAGE, "-", seq, str(exc))]
    return process_message(msg, registry, seq, system_address)


def make_receipt(sub: Submission, system_address: str = DEFAULT_SYSTEM_ADDRESS) -> MailMessage:
    names = sorted(name for name, value in sub.fields.items() if value)
    body = (
        f"schema: {sub.schema_id}\n"
        f"received: {iso_utc(sub.date)}\n"
        f"fields: {','.join(names)}\n"
    )
    domain = system_address.rsplit("@", 1)[1]
    tag = hashlib.sha256(sub.message_id.encode("utf-8")).hexdigest()[:12]
    return MailMessage(
        sender=system_address,
        to=sub.sender,
        date=sub.date,
        message_id=f"receipt-{sub.seq}-{tag}@{domain}",
        subject=f"Receipt: {sub.schema_id} {sub.message_id}",
        body_text=body,
    )


__all__ = [
    "Accepted",
    "DEFAULT_SYSTEM_ADDRESS",
    "IngestOutcome",
    "Rejected",
    "Rejection",
    "Submission",
    "check_sender",
    "extract_form_attachments",
    "iso_utc",
    "make_receipt",
    "password_digest",
    "process_message",
    "receive",
]
