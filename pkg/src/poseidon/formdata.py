"""Form payloads: the XML document a filled-in form sends as a mail attachment.

Wire format::

    <poseidon-form schema="person-registration" version="1">
      <field name="first_name">Jan</field>
      ...
    </poseidon-form>

Nothing else is allowed in the document: no other elements or attributes, no
DOCTYPE (and therefore no custom entities).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Union
from xml.parsers import expat
from xml.sax.saxutils import escape, quoteattr

from .schema import FieldSpec, FormSchema

MAX_PAYLOAD_BYTES = 1024 * 1024
MAX_DATE_CHARS = 64
ROOT_TAG = "poseidon-form"
FORM = "(form)"

ERROR_CODES = (
    "required_missing",
    "non_ascii",
    "bad_email",
    "bad_url",
    "bad_date",
    "not_in_enum",
    "retype_mismatch",
    "bad_separator_list",
    "unknown_field",
    "unknown_schema",
)


class PayloadError(ValueError):
    """The attachment is not a usable form payload."""


class MalformedXml(PayloadError):
    pass


class MissingSchemaAttribute(PayloadError):
    pass


class DuplicateField(PayloadError):
    pass


class OversizePayload(PayloadError):
    pass


@dataclass(frozen=True)
class FormPayload:
    schema_id: str
    fields: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class ValidationError:
    field: str
    code: str
    detail: str = ""

    def __str__(self) -> str:
        return f"{self.field} {self.code} {self.detail}".rstrip()


@dataclass(frozen=True)
class ValidationResult:
    """Sanitized values for every schema field (schema order) plus any errors found.

    Truthy when there are no errors.
    """

    fields: dict[str, str]
    errors: tuple[ValidationError, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.errors

    def __bool__(self) -> bool:
        return self.ok


# --- parsing -------------------------------------------------------------------------


class _PayloadHandler:
    def __init__(self) -> None:
        self.schema_id: Optional[str] = None
        self.fields: dict[str, str] = {}
        self.depth = 0
        self.seen_root = False
        self.current: Optional[str] = None
        self.chunks: list[str] = []

    def start(self, tag: str, attrs: dict[str, str]) -> None:
        self.depth += 1
        if self.depth == 1:
            if tag != ROOT_TAG:
                raise MalformedXml(f"root element must be <{ROOT_TAG}>, got <{tag}>")
            extra = set(attrs) - {"schema", "version"}
            if extra:
                raise MalformedXml(f"unexpected attribute(s) on root: {', '.join(sorted(extra))}")
            if "version" in attrs and attrs["version"] != "1":
                raise MalformedXml(f"unsupported payload version {attrs['version']!r}")
            if not attrs.get("schema"):
                raise MissingSchemaAttribute("root element has no schema attribute")
            self.schema_id = attrs["schema"]
            self.seen_root = True
        elif self.depth == 2:
            if tag != "field":
                raise MalformedXml(f"unexpected element <{tag}>")
            if set(attrs) != {"name"}:
                raise MalformedXml("<field> takes exactly one attribute, name")
            name = attrs["name"]
            if name in self.fields:
                raise DuplicateField(f"field {name!r} appears more than once")
            self.current = name
            self.chunks = []
        else:
            raise MalformedXml(f"nested element <{tag}> inside a field")

    def end(self, tag: str) -> None:
        if self.depth == 2 and self.current is not None:
            self.fields[self.current] = "".join(self.chunks)
            self.current = None
        self.depth -= 1

    def text(self, data: str) -> None:
        if self.depth == 2:
            self.chunks.append(data)
        elif data.strip():
            raise MalformedXml("text outside of a <field> element")


def _forbid_doctype(*_args) -> None:
    raise MalformedXml("DOCTYPE declarations are not permitted")


def parse_payload(data: Union[bytes, str]) -> FormPayload:
    if isinstance(data, str):
        data = data.encode("utf-8")
    if len(data) > MAX_PAYLOAD_BYTES:
        raise OversizePayload(f"payload is {len(data)} bytes, limit is {MAX_PAYLOAD_BYTES}")

    handler = _PayloadHandler()
    parser = expat.ParserCreate()
    parser.StartElementHandler = handler.start
    parser.EndElementHandler = handler.end
    parser.CharacterDataHandler = handler.text
    parser.StartDoctypeDeclHandler = _forbid_doctype
    parser.EntityDeclHandler = _forbid_doctype
    try:
        parser.Parse(data, True)
    except expat.ExpatError as exc:
        raise MalformedXml(str(exc)) from None
    if not handler.seen_root or handler.schema_id is None:
        raise MalformedXml("no root element")
    return FormPayload(handler.schema_id, handler.fields)


def render_payload(payload: FormPayload) -> bytes:
    lines = ['<?xml version="1.0" encoding="UTF-8"?>']
    lines.append(f"<{ROOT_TAG} schema={quoteattr(payload.schema_id)} version=\"1\">")
    for name, value in payload.fields.items():
        # \r would be normalized away by any XML parser; keep it as a reference.
        text = escape(value).replace("\r", "&#13;")
        lines.append(f"  <field name={quoteattr(name)}>{text}</field>")
    lines.append(f"</{ROOT_TAG}>")
    return ("\n".join(lines) + "\n").encode("utf-8")


# --- sanitizing ----------------------------------------------------------------------

_SANITIZE_TABLE: dict[int, Optional[str]] = {c: None for c in range(0x20)}
_SANITIZE_TABLE.update({c: None for c in range(0x7F, 0xA0)})
_SANITIZE_TABLE.update({ord("\t"): " ", ord("\r"): " ", ord("\n"): " ", 0xA0: " "})
_SANITIZE_TABLE.update({c: None for c in (0x200B, 0x200C, 0x200D, 0xFEFF)})
_SPACE_RUN = re.compile(" {2,}")


def sanitize_text(s: str) -> str:
    """Undo what copy-and-paste from web pages and word processors leaves behind.

    Control characters are dropped (TAB, CR and LF become spaces), zero-width
    characters vanish, no-break spaces become plain spaces, and space runs are
    collapsed and trimmed.
    """
    return _SPACE_RUN.sub(" ", s.translate(_SANITIZE_TABLE)).strip(" ")


# --- validation ----------------------------------------------------------------------

_EMAIL_RE = re.compile(r"[^@\s]+@[^@\s]+\.[^@\s]+\Z")


def is_email(value: str) -> bool:
    """Shallow syntax check: one ``@``, non-empty local part, dotted domain."""
    if value.count("@") != 1 or not _EMAIL_RE.match(value):
        return False
    domain = value.split("@", 1)[1]
    return all(domain.split("."))


def _is_printable_ascii(value: str) -> bool:
    return all(0x20 <= ord(c) <= 0x7E for c in value)


def _list_items(value: str, separator: str) -> list[str]:
    return [item.strip() for item in value.split(separator) if item.strip()]


def _check_field(spec: FieldSpec, value: str, separator: Optional[str]) -> list[ValidationError]:
    if not value:
        if spec.required:
            return [ValidationError(spec.name, "required_missing", "value is required")]
        return []

    errors = []
    if spec.ascii_only and not _is_printable_ascii(value):
        errors.append(ValidationError(spec.name, "non_ascii", "only plain ASCII letters are accepted"))

    kind = spec.kind
    if kind == "email" and not is_email(value):
        errors.append(ValidationError(spec.name, "bad_email", f"not an e-mail address: {value!r}"))
    elif kind == "url" and not value.startswith(("http://", "https://")):
        errors.append(ValidationError(spec.name, "bad_url", "must start with http:// or https://"))
    elif kind == "enum" and value not in spec.enum_values:
        errors.append(ValidationError(spec.name, "not_in_enum", f"expected one of {'|'.join(spec.enum_values)}"))
    elif kind == "yes_no" and value not in ("Yes", "No"):
        errors.append(ValidationError(spec.name, "not_in_enum", "expected Yes or No"))
    elif kind == "date":
        if len(value) > MAX_DATE_CHARS:
            errors.append(ValidationError(spec.name, "bad_date", f"longer than {MAX_DATE_CHARS} characters"))
        elif not spec.ascii_only and not _is_printable_ascii(value):
            errors.append(ValidationError(spec.name, "non_ascii", "dates must be plain ASCII"))

    if kind == "email_list" or separator is not None:
        sep = separator or ";"
        items = _list_items(value, sep)
        if not items or (kind == "email_list" and not all(is_email(i) for i in items)):
            errors.append(
                ValidationError(spec.name, "bad_separator_list", f"expected e-mail addresses separated by {sep!r}")
            )
    return errors


def validate(payload: FormPayload, schema: FormSchema) -> ValidationResult:
    """Check ``payload`` against ``schema`` and report every problem found."""
    if payload.schema_id != schema.schema_id:
        return ValidationResult(
            {}, (ValidationError(FORM, "unknown_schema", f"payload is for {payload.schema_id!r}"),)
        )

    known = set(schema.field_names)
    errors = [
        ValidationError(name, "unknown_field", "not part of this form")
        for name in payload.fields
        if name not in known
    ]
    clean = {spec.name: sanitize_text(payload.fields.get(spec.name, "")) for spec in schema.fields}
    for spec in schema.fields:
        errors.extend(_check_field(spec, clean[spec.name], schema.separator_for(spec.name)))
    for rule in schema.cross_rules:
        if rule.kind == "must_equal":
            a, b = rule.fields
            if clean[a] != clean[b]:
                errors.append(ValidationError(FORM, "retype_mismatch", f"{a} and {b} differ"))
    return ValidationResult(clean, tuple(errors))


__all__ = [
    "DuplicateField",
    "FormPayload",
    "MalformedXml",
    "MissingSchemaAttribute",
    "OversizePayload",
    "PayloadError",
    "ValidationError",
    "ValidationResult",
    "is_email",
    "parse_payload",
    "render_payload",
    "sanitize_text",
    "validate",
]
