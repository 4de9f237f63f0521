"""A deliberately small mail message codec.

It reads the subset of RFC 5322 / MIME that form submissions need (single-part
text, or multipart/mixed with a text body and flat attachments; 7bit, 8bit and
base64 transfer encodings) and writes one canonical form::

    From: a@x.org
    To: forms@conf.org                  (optional)
    Reply-To: a@x.org                   (optional)
    Date: Mon, 06 Oct 2014 12:00:00 GMT
    Subject: ...
    Message-ID: <id>
    MIME-Version: 1.0
    Content-Type: ...

with CRLF line endings, base64 attachments wrapped at 76 columns and a
boundary derived from the Message-ID, so equal messages serialize to equal
bytes.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import re
from dataclasses import dataclass
from datetime import timezone
from email.utils import formatdate, parseaddr, parsedate_to_datetime
from typing import Optional

from .formdata import is_email

CRLF = b"\r\n"
BASE64_LINE = 76

_PARAM_RE = re.compile(
    r';\s*([!#$%&\'*+\-.^_`|~0-9A-Za-z]+)\s*=\s*("(?:[^"\\]|\\.)*"|[^;\s]*)', re.S
)
_MEDIA_TYPE_RE = re.compile(r"[a-z0-9][a-z0-9!#$&^_.+-]*/[a-z0-9][a-z0-9!#$&^_.+-]*\Z")
_MESSAGE_ID_RE = re.compile(r"[^\s<>]+\Z")


class MessageError(ValueError):
    """Raised when bytes cannot be read as a mail message."""


class MissingHeader(MessageError):
    def __init__(self, name: str):
        super().__init__(f"missing {name} header")
        self.name = name


class MalformedMultipart(MessageError):
    pass


class UnsupportedEncoding(MessageError):
    pass


class BadDate(MessageError):
    pass


class BadAddress(MessageError):
    pass


class MalformedHeader(MessageError):
    pass


def normalize_address(value: str) -> str:
    """``"Jan Novak <Jan@X.org>"`` -> ``"jan@x.org"``; raises BadAddress if that fails."""
    _, addr = parseaddr(value)
    addr = addr.strip().lower()
    if not is_email(addr):
        raise BadAddress(f"not an address: {value!r}")
    return addr


def is_canonical_address(value: str) -> bool:
    try:
        return normalize_address(value) == value
    except BadAddress:
        return False


@dataclass(frozen=True)
class Attachment:
    filename: str
    media_type: str
    content: bytes

    def __post_init__(self) -> None:
        if not self.filename or any(c in self.filename for c in '\r\n"\\'):
            raise ValueError(f"bad attachment filename {self.filename!r}")
        object.__setattr__(self, "media_type", self.media_type.lower())
        if not _MEDIA_TYPE_RE.match(self.media_type):
            raise ValueError(f"bad media type {self.media_type!r}")


@dataclass(frozen=True)
class MailMessage:
    sender: str
    date: int
    message_id: str
    subject: str = ""
    body_text: str = ""
    reply_to: Optional[str] = None
    to: Optional[str] = None
    attachments: tuple[Attachment, ...] = ()

    def __post_init__(self) -> None:
        if not is_canonical_address(self.sender):
            raise ValueError(f"sender must be a bare lowercase address, got {self.sender!r}")
        for name in ("reply_to", "to"):
            value = getattr(self, name)
            if value is not None and not is_canonical_address(value):
                raise ValueError(f"{name} must be a bare lowercase address, got {value!r}")
        if not _MESSAGE_ID_RE.match(self.message_id):
            raise ValueError(f"bad message id {self.message_id!r}")
        if "\r" in self.subject or "\n" in self.subject:
            raise ValueError("subject must be a single line")
        if "\r" in self.body_text:
            raise ValueError("body_text uses \\n line endings only")
        object.__setattr__(self, "subject", self.subject.strip())
        object.__setattr__(self, "date", int(self.date))
        object.__setattr__(self, "attachments", tuple(self.attachments))


# --- serializing ---------------------------------------------------------------------


def _boundary(msg: MailMessage) -> str:
    boundary = "=_poseidon_" + hashlib.sha256(msg.message_id.encode("utf-8")).hexdigest()[:24]
    while "--" + boundary in msg.body_text:
        boundary += "_"
    return boundary


def _text_encoding(text: str) -> str:
    return "7bit" if text.isascii() else "8bit"


def _wrap_base64(content: bytes) -> bytes:
    encoded = base64.b64encode(content)
    return CRLF.join(encoded[i : i + BASE64_LINE] for i in range(0, len(encoded), BASE64_LINE))


def _crlf_text(text: str) -> bytes:
    return text.replace("\n", "\r\n").encode("utf-8")


def serialize_message(msg: MailMessage) -> bytes:
    headers = [f"From: {msg.sender}"]
    if msg.to is not None:
        headers.append(f"To: {msg.to}")
    if msg.reply_to is not None:
        headers.append(f"Reply-To: {msg.reply_to}")
    headers += [
        f"Date: {formatdate(msg.date, usegmt=True)}",
        f"Subject: {msg.subject}",
        f"Message-ID: <{msg.message_id}>",
        "MIME-Version: 1.0",
    ]

    if not msg.attachments:
        headers += [
            "Content-Type: text/plain; charset=utf-8",
            f"Content-Transfer-Encoding: {_text_encoding(msg.body_text)}",
        ]
        return "\r\n".join(headers).encode("utf-8") + CRLF + CRLF + _crlf_text(msg.body_text)

    boundary = _boundary(msg)
    headers.append(f'Content-Type: multipart/mixed; boundary="{boundary}"')
    delimiter = b"--" + boundary.encode("ascii")
    out = ["\r\n".join(headers).encode("utf-8"), b""]
    out += [
        delimiter,
        b"Content-Type: text/plain; charset=utf-8",
        f"Content-Transfer-Encoding: {_text_encoding(msg.body_text)}".encode("ascii"),
        b"",
        _crlf_text(msg.body_text),
    ]
    for att in msg.attachments:
        name = att.filename.encode("utf-8")
        out += [
            delimiter,
            b"Content-Type: " + att.media_type.encode("ascii") + b'; name="' + name + b'"',
            b'Content-Disposition: attachment; filename="' + name + b'"',
            b"Content-Transfer-Encoding: base64",
            b"",
            _wrap_base64(att.content),
        ]
    out.append(delimiter + b"--")
    return CRLF.join(out) + CRLF


# --- parsing -------------------------------------------------------------------------


def _split_head(data: bytes) -> tuple[bytes, bytes]:
    head, sep, body = data.partition(CRLF + CRLF)
    if not sep:
        if data.endswith(CRLF):
            return data[:-2], b""
        return data, b""
    return head, body


def _parse_headers(block: bytes) -> dict[str, str]:
    """Unfold and collect headers; names lowercased, first occurrence wins."""
    headers: dict[str, str] = {}
    current: Optional[list[str]] = None
    pending: list[tuple[str, list[str]]] = []
    for raw in block.split(CRLF) if block else []:
        line = raw.decode("utf-8", "replace")
        if line[:1] in (" ", "\t"):
            if current is None:
                raise MalformedHeader("continuation line before any header")
            current.append(line)
            continue
        name, colon, value = line.partition(":")
        if not colon or not name or name != name.strip():
            raise MalformedHeader(f"not a header line: {line!r}")
        current = [value]
        pending.append((name.lower(), current))
    for name, parts in pending:
        headers.setdefault(name, "".join(parts).strip())
    return headers


def _content_type(value: Optional[str]) -> tuple[str, dict[str, str]]:
    if not value:
        return "text/plain", {}
    mtype, _, rest = value.partition(";")
    params = {}
    for key, raw in _PARAM_RE.findall(";" + rest):
        if raw.startswith('"'):
            raw = re.sub(r"\\(.)", r"\1", raw[1:-1])
        params.setdefault(key.lower(), raw)
    return mtype.strip().lower(), params


def _decode_transfer(content: bytes, encoding: Optional[str]) -> bytes:
    enc = (encoding or "7bit").strip().lower()
    if enc in ("7bit", "8bit"):
        return content
    if enc == "base64":
        compact = re.sub(rb"[ \t\r\n]", b"", content)
        try:
            return base64.b64decode(compact, validate=True)
        except binascii.Error as exc:
            raise MessageError(f"bad base64 content: {exc}") from None
    raise UnsupportedEncoding(f"unsupported Content-Transfer-Encoding {enc!r}")


def _decode_text(content: bytes, params: dict[str, str]) -> str:
    charset = params.get("charset", "utf-8")
    try:
        text = content.decode(charset, "replace")
    except LookupError:
        text = content.decode("utf-8", "replace")
    return text.replace("\r\n", "\n")


def _parse_date(value: str) -> int:
    try:
        dt = parsedate_to_datetime(value)
    except (TypeError, ValueError, IndexError) as exc:
        raise BadDate(f"unparseable Date header {value!r}: {exc}") from None
    if dt is None:
        raise BadDate(f"unparseable Date header {value!r}")
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def _split_multipart(body: bytes, boundary: str) -> list[bytes]:
    delimiter = b"--" + boundary.encode("utf-8", "replace")
    closing = delimiter + b"--"
    parts: list[bytes] = []
    current: Optional[list[bytes]] = None
    for line in body.split(CRLF):
        marker = line.rstrip(b" \t")
        if marker == closing:
            if current is None:
                raise MalformedMultipart("closing boundary before any part")
            parts.append(CRLF.join(current))
            return parts
        if marker == delimiter:
            if current is not None:
                parts.append(CRLF.join(current))
            current = []
        elif current is not None:
            current.append(line)
    if current is None:
        raise MalformedMultipart(f"boundary {boundary!r} never appears in the body")
    raise MalformedMultipart(f"multipart body is not terminated by --{boundary}--")


def _attachment_name(headers: dict[str, str], params: dict[str, str], index: int) -> str:
    _, disp = _content_type(headers.get("content-disposition"))
    name = disp.get("filename") or params.get("name") or ""
    name = name.replace("\r", "").replace("\n", "").replace('"', "").replace("\\", "")
    return name or f"part{index}.bin"


def parse_message(data: bytes, default_date: Optional[int] = None) -> MailMessage:
    """Read one message.

    ``default_date`` stands in for an unparseable (not a missing) Date header;
    without it such a header raises :class:`BadDate`.
    """
    if b"\r" not in data:
        data = data.replace(b"\n", CRLF)
    head, body = _split_head(data)
    headers = _parse_headers(head)

    for required in ("from", "date", "message-id"):
        if not headers.get(required):
            raise MissingHeader({"from": "From", "date": "Date", "message-id": "Message-ID"}[required])
    sender = normalize_address(headers["from"])
    reply_to = normalize_address(headers["reply-to"]) if headers.get("reply-to") else None
    to = normalize_address(headers["to"]) if headers.get("to") else None
    try:
        date = _parse_date(headers["date"])
    except BadDate:
        if default_date is None:
            raise
        date = default_date
    message_id = headers["message-id"].strip().strip("<>").strip()
    if not _MESSAGE_ID_RE.match(message_id):
        raise MalformedHeader(f"bad Message-ID {headers['message-id']!r}")

    try:
        body_text, attachments = _parse_body(headers, body)
        return MailMessage(
            sender=sender,
            date=date,
            message_id=message_id,
            subject=headers.get("subject", ""),
            body_text=body_text.replace("\r", ""),
            reply_to=reply_to,
            to=to,
            attachments=tuple(attachments),
        )
    except MessageError:
        raise
    except ValueError as exc:
        raise MessageError(str(exc)) from None


def _parse_body(headers: dict[str, str], body: bytes) -> tuple[str, list[Attachment]]:
    mtype, params = _content_type(headers.get("content-type"))
    body_text = ""
    attachments: list[Attachment] = []
    if mtype.startswith("multipart/"):
        boundary = params.get("boundary")
        if not boundary:
            raise MalformedMultipart("multipart message without a boundary parameter")
        for index, part in enumerate(_split_multipart(body, boundary)):
            part_head, part_body = _split_head(part)
            part_headers = _parse_headers(part_head)
            ptype, pparams = _content_type(part_headers.get("content-type"))
            content = _decode_transfer(part_body, part_headers.get("content-transfer-encoding"))
            disposition = part_headers.get("content-disposition", "").lower()
            is_body = (
                ptype == "text/plain"
                and not body_text
                and not attachments
                and not disposition.startswith("attachment")
                and "name" not in pparams
            )
            if is_body:
                body_text = _decode_text(content, pparams)
            else:
                attachments.append(Attachment(_attachment_name(part_headers, pparams, index), ptype, content))
    else:
        content = _decode_transfer(body, headers.get("content-transfer-encoding"))
        if mtype == "text/plain" and "name" not in params:
            body_text = _decode_text(content, params)
        else:
            attachments.append(Attachment(_attachment_name(headers, params, 0), mtype, content))
    return body_text, attachments


__all__ = [
    "Attachment",
    "BadAddress",
    "BadDate",
    "MailMessage",
    "MalformedHeader",
    "MalformedMultipart",
    "MessageError",
    "MissingHeader",
    "UnsupportedEncoding",
    "is_canonical_address",
    "normalize_address",
    "parse_message",
    "serialize_message",
]
