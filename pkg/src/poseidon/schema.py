"""Form schemas: the declarative description of each submittable form.

A schema lists fields in display order plus cross-field rules. Schemas can be
written in a small line-based text format so that office staff can add forms
without touching code::

    schema person-registration title="Person Registration"
    field email email required ascii label="E-mail"
    field salutation enum "values=Mr.|Mrs.|Dr.|Prof."
    rule must_equal password retype_password
    rule separator_list interested_emails ;
"""

from __future__ import annotations

import re
import shlex
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

KINDS = ("text", "email", "password", "url", "enum", "email_list", "date", "yes_no")
RULE_KINDS = ("must_equal", "separator_list")

_IDENT_RE = re.compile(r"[a-z0-9_]+\Z")
_SCHEMA_ID_RE = re.compile(r"[a-z0-9][a-z0-9_-]*\Z")


class SchemaError(ValueError):
    """Base class for schema definition problems."""


class SchemaSyntaxError(SchemaError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DuplicateFieldName(SchemaError):
    pass


class UnknownKind(SchemaError):
    pass


class DanglingCrossRule(SchemaError):
    pass


class DuplicateSchemaId(SchemaError):
    pass


@dataclass(frozen=True)
class FieldSpec:
    name: str
    kind: str
    label: str = ""
    required: bool = False
    ascii_only: bool = False
    enum_values: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not _IDENT_RE.match(self.name):
            raise SchemaError(f"invalid field name {self.name!r}")
        if self.kind not in KINDS:
            raise UnknownKind(f"unknown field kind {self.kind!r}")
        object.__setattr__(self, "enum_values", tuple(self.enum_values))
        if (self.kind == "enum") != bool(self.enum_values):
            raise SchemaError(f"field {self.name}: enum values are required for, and only for, kind enum")
        if self.kind == "password" and not self.ascii_only:
            raise SchemaError(f"field {self.name}: password fields must be ascii_only")
        if not self.label:
            object.__setattr__(self, "label", self.name)


@dataclass(frozen=True)
class CrossRule:
    """``must_equal`` compares two fields; ``separator_list`` splits one field on ``separator``."""

    kind: str
    fields: tuple[str, ...]
    separator: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "fields", tuple(self.fields))
        if self.kind == "must_equal":
            if len(self.fields) != 2:
                raise SchemaError("must_equal takes exactly two fields")
        elif self.kind == "separator_list":
            if len(self.fields) != 1 or len(self.separator) != 1:
                raise SchemaError("separator_list takes one field and a single separator character")
        else:
            raise SchemaError(f"unknown rule kind {self.kind!r}")

    @classmethod
    def must_equal(cls, a: str, b: str) -> "CrossRule":
        return cls("must_equal", (a, b))

    @classmethod
    def separator_list(cls, name: str, separator: str) -> "CrossRule":
        return cls("separator_list", (name,), separator)


@dataclass(frozen=True)
class FormSchema:
    schema_id: str
    title: str
    fields: tuple[FieldSpec, ...]
    cross_rules: tuple[CrossRule, ...] = ()

    def __post_init__(self) -> None:
        if not _SCHEMA_ID_RE.match(self.schema_id):
            raise SchemaError(f"invalid schema id {self.schema_id!r}")
        object.__setattr__(self, "fields", tuple(self.fields))
        object.__setattr__(self, "cross_rules", tuple(self.cross_rules))
        seen: set[str] = set()
        for spec in self.fields:
            if spec.name in seen:
                raise DuplicateFieldName(f"{self.schema_id}: duplicate field {spec.name!r}")
            seen.add(spec.name)
        for rule in self.cross_rules:
            missing = [n for n in rule.fields if n not in seen]
            if missing:
                raise DanglingCrossRule(
                    f"{self.schema_id}: rule {rule.kind} references unknown field(s) {', '.join(missing)}"
                )

    @property
    def field_names(self) -> list[str]:
        return [f.name for f in self.fields]

    def separator_for(self, name: str) -> Optional[str]:
        for rule in self.cross_rules:
            if rule.kind == "separator_list" and rule.fields[0] == name:
                return rule.separator
        return None


def field_lookup(schema: FormSchema, name: str) -> Optional[FieldSpec]:
    for spec in schema.fields:
        if spec.name == name:
            return spec
    return None


class Registry:
    """Read-only lookup of schemas by id."""

    def __init__(self, schemas: Iterable[FormSchema] = ()):
        self._schemas: dict[str, FormSchema] = {}
        for schema in schemas:
            if schema.schema_id in self._schemas:
                raise DuplicateSchemaId(schema.schema_id)
            self._schemas[schema.schema_id] = schema

    def get(self, schema_id: str) -> Optional[FormSchema]:
        return self._schemas.get(schema_id)

    def __getitem__(self, schema_id: str) -> FormSchema:
        return self._schemas[schema_id]

    def __contains__(self, schema_id: object) -> bool:
        return schema_id in self._schemas

    def __iter__(self) -> Iterator[FormSchema]:
        return iter(self._schemas.values())

    def __len__(self) -> int:
        return len(self._schemas)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Registry):
            return NotImplemented
        return self._schemas == other._schemas

    def ids(self) -> list[str]:
        return list(self._schemas)

    def extended(self, schemas: Iterable[FormSchema]) -> "Registry":
        return Registry([*self, *schemas])


# --- schema-definition text format -------------------------------------------------


def load_schema(text: str) -> FormSchema:
    header: Optional[tuple[str, str, int]] = None
    fields: list[FieldSpec] = []
    rules: list[CrossRule] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        try:
            tokens = shlex.split(stripped)
        except ValueError as exc:
            raise SchemaSyntaxError(lineno, str(exc)) from None
        keyword, args = tokens[0], tokens[1:]

        if keyword == "schema":
            if header is not None:
                raise SchemaSyntaxError(lineno, "second schema header")
            if not args:
                raise SchemaSyntaxError(lineno, "schema header needs an id")
            opts = _options(lineno, args[1:], allowed={"title"})
            header = (args[0], str(opts.get("title", args[0])), lineno)
        elif header is None:
            raise SchemaSyntaxError(lineno, "expected 'schema <id>' before any other line")
        elif keyword == "field":
            fields.append(_parse_field(lineno, args))
        elif keyword == "rule":
            rules.append(_parse_rule(lineno, args))
        else:
            raise SchemaSyntaxError(lineno, f"unknown directive {keyword!r}")

    if header is None:
        raise SchemaSyntaxError(1, "missing 'schema <id>' header")
    names = [f.name for f in fields]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise DuplicateFieldName(f"duplicate field name(s): {', '.join(dupes)}")
    try:
        return FormSchema(header[0], header[1], tuple(fields), tuple(rules))
    except DanglingCrossRule:
        raise
    except SchemaError as exc:
        raise SchemaSyntaxError(header[2], str(exc)) from None


def _options(lineno: int, tokens: list[str], allowed: set[str], flags: frozenset = frozenset()) -> dict:
    opts: dict[str, object] = {}
    for tok in tokens:
        if tok in flags:
            opts[tok] = True
            continue
        key, eq, value = tok.partition("=")
        if not eq or key not in allowed:
            raise SchemaSyntaxError(lineno, f"unexpected token {tok!r}")
        opts[key] = value
    return opts


def _parse_field(lineno: int, args: list[str]) -> FieldSpec:
    if len(args) < 2:
        raise SchemaSyntaxError(lineno, "field needs a name and a kind")
    name, kind = args[0], args[1]
    if kind not in KINDS:
        raise UnknownKind(f"line {lineno}: unknown field kind {kind!r}")
    opts = _options(lineno, args[2:], allowed={"values", "label"}, flags=frozenset({"required", "ascii"}))
    values = tuple(str(opts["values"]).split("|")) if "values" in opts else ()
    try:
        return FieldSpec(
            name=name,
            kind=kind,
            label=str(opts.get("label", "")),
            required=bool(opts.get("required", False)),
            ascii_only=bool(opts.get("ascii", False)),
            enum_values=values,
        )
    except SchemaError as exc:
        raise SchemaSyntaxError(lineno, str(exc)) from None


def _parse_rule(lineno: int, args: list[str]) -> CrossRule:
    if args[:1] == ["must_equal"] and len(args) == 3:
        return CrossRule.must_equal(args[1], args[2])
    if args[:1] == ["separator_list"] and len(args) == 3 and len(args[2]) == 1:
        return CrossRule.separator_list(args[1], args[2])
    raise SchemaSyntaxError(lineno, "expected 'rule must_equal A B' or 'rule separator_list FIELD CHAR'")


def dump_schema(schema: FormSchema) -> str:
    """Render ``schema`` in the definition format; ``load_schema`` reads it back unchanged."""
    lines = [f"schema {schema.schema_id} {shlex.quote('title=' + schema.title)}"]
    for spec in schema.fields:
        parts = ["field", spec.name, spec.kind]
        if spec.required:
            parts.append("required")
        if spec.ascii_only:
            parts.append("ascii")
        if spec.enum_values:
            parts.append(shlex.quote("values=" + "|".join(spec.enum_values)))
        parts.append(shlex.quote("label=" + spec.label))
        lines.append(" ".join(parts))
    for rule in schema.cross_rules:
        if rule.kind == "must_equal":
            lines.append(f"rule must_equal {rule.fields[0]} {rule.fields[1]}")
        else:
            lines.append(f"rule separator_list {rule.fields[0]} {shlex.quote(rule.separator)}")
    return "\n".join(lines) + "\n"


# --- built-in conference forms ------------------------------------------------------


def _starred(name: str, kind: str, label: str, **kw) -> FieldSpec:
    # A starred item on the printed form: mandatory and plain ASCII.
    return FieldSpec(name, kind, label, required=True, ascii_only=True, **kw)


def _plain(name: str, kind: str, label: str, **kw) -> FieldSpec:
    return FieldSpec(name, kind, label, **kw)


def _person_registration() -> FormSchema:
    return FormSchema(
        "person-registration",
        "Person Registration",
        (
            _plain("salutation", "enum", "Mr. Mrs. Dr. Prof.", enum_values=("Mr.", "Mrs.", "Dr.", "Prof.")),
            _plain("vegetarian", "yes_no", "Preferred meal vegetarian?"),
            _starred("first_name", "text", "First (given) Name"),
            _starred("last_name", "text", "Last (family) Name"),
            _plain("abbreviation", "text", "Abbreviation e.g. Smith,J."),
            _starred("email", "email", "E-mail"),
            _starred("password", "password", "Password"),
            _starred("retype_password", "password", "RETYPE the password"),
            _plain("home_page", "url", "Home page"),
            _plain("reviewer_willing", "yes_no", "Are you willing to help us as a reviewer?"),
            _starred("department", "text", "Department"),
            _starred("institution", "text", "Institution"),
            _starred("address1", "text", "Address -1"),
            _plain("address2", "text", "Address-2"),
            _starred("street", "text", "Street"),
            _starred("number", "text", "No."),
            _starred("zip", "text", "ZIP CODE"),
            _starred("city", "text", "CITY"),
            _plain("state", "text", "State"),
            _starred("country", "text", "Country"),
            _plain("working_group_url", "url", "Working Group WEB pages"),
            _plain(
                "interested_emails",
                "email_list",
                "E-mail addresses of people might be interested in these events",
            ),
            _starred("date", "date", "Date"),
        ),
        (
            CrossRule.must_equal("password", "retype_password"),
            CrossRule.separator_list("interested_emails", ";"),
        ),
    )


def _paper_registration() -> FormSchema:
    return FormSchema(
        "paper-registration",
        "Paper Registration",
        (
            _starred("title", "text", "Title of the paper"),
            _starred("authors", "text", "Authors and co-authors"),
            _starred("abstract", "text", "Abstract"),
            _starred("keywords", "text", "Keywords"),
            _starred("download_url", "url", "Address where the document is stored for download"),
        ),
    )


# The forms below are only named in the catalogue; their field sets are
# minimal interpretations of the one-line descriptions.


def _reviewer_registration() -> FormSchema:
    return FormSchema(
        "reviewer-registration",
        "Reviewer Registration",
        (
            _starred("first_name", "text", "First (given) Name"),
            _starred("last_name", "text", "Last (family) Name"),
            _starred("email", "email", "E-mail"),
            _starred("institution", "text", "Institution"),
            _starred("country", "text", "Country"),
            _plain("expertise", "text", "Fields of expertise"),
        ),
    )


def _review_submission() -> FormSchema:
    return FormSchema(
        "review-submission",
        "Review Submission",
        (
            _starred("paper_id", "text", "Paper ID"),
            _starred("reviewer_email", "email", "Reviewer E-mail"),
            _starred("score", "enum", "Score", enum_values=("1", "2", "3", "4", "5")),
            _plain("comments", "text", "Comments"),
        ),
    )


def _attendee_registration() -> FormSchema:
    return FormSchema(
        "attendee-registration",
        "Conference Attendee Registration",
        (
            _starred("first_name", "text", "First (given) Name"),
            _starred("last_name", "text", "Last (family) Name"),
            _starred("email", "email", "E-mail"),
            _starred("institution", "text", "Institution"),
            _starred("country", "text", "Country"),
            _plain("vegetarian", "yes_no", "Preferred meal vegetarian?"),
        ),
    )


def _fee_payment() -> FormSchema:
    return FormSchema(
        "fee-payment",
        "Conference Fee Payment",
        (
            _starred("payer_name", "text", "Payer name"),
            _starred("email", "email", "E-mail"),
            _starred("amount", "text", "Amount"),
            _starred("currency", "enum", "Currency", enum_values=("EUR", "USD", "CZK")),
            _starred("payment_reference", "text", "Payment reference"),
            _plain("invoice_address", "text", "Invoice address"),
        ),
    )


def _visa_form() -> FormSchema:
    return FormSchema(
        "visa-form",
        "Conference Attendee VISA Letter",
        (
            _starred("first_name", "text", "First (given) Name"),
            _starred("last_name", "text", "Last (family) Name"),
            _starred("date_of_birth", "date", "Date of birth"),
            _starred("nationality", "text", "Nationality"),
            _starred("passport_number", "text", "Passport number"),
            _starred("passport_expiry", "date", "Passport expiry date"),
            _starred("embassy_city", "text", "Embassy city"),
        ),
    )


def builtin_registry() -> Registry:
    return Registry(
        [
            _person_registration(),
            _paper_registration(),
            _reviewer_registration(),
            _review_submission(),
            _attendee_registration(),
            _fee_payment(),
            _visa_form(),
        ]
    )


__all__ = [
    "KINDS",
    "CrossRule",
    "DanglingCrossRule",
    "DuplicateFieldName",
    "DuplicateSchemaId",
    "FieldSpec",
    "FormSchema",
    "Registry",
    "SchemaError",
    "SchemaSyntaxError",
    "UnknownKind",
    "builtin_registry",
    "dump_schema",
    "field_lookup",
    "load_schema",
]
