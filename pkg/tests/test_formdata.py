import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st

from poseidon.formdata import (
    FORM,
    DuplicateField,
    FormPayload,
    MalformedXml,
    MissingSchemaAttribute,
    OversizePayload,
    ValidationError,
    is_email,
    parse_payload,
    render_payload,
    sanitize_text,
    validate,
)
from poseidon.schema import builtin_registry, load_schema

from helpers import person_fields

PERSON = builtin_registry()["person-registration"]


def codes(result):
    return {(e.field, e.code) for e in result.errors}


# --- parsing ---


def test_parse_minimal_document():
    doc = b'<poseidon-form schema="person-registration"><field name="first_name">Jan</field></poseidon-form>'
    assert parse_payload(doc) == FormPayload("person-registration", {"first_name": "Jan"})


def test_parse_keeps_document_order_and_decodes_entities():
    doc = (
        '<poseidon-form schema="s" version="1">\n'
        '  <field name="b">x &amp; y</field>\n'
        '  <field name="a">&lt;tag&gt; &#233;</field>\n'
        '  <field name="c"/>\n'
        "</poseidon-form>"
    )
    payload = parse_payload(doc)
    assert list(payload.fields) == ["b", "a", "c"]
    assert payload.fields == {"b": "x & y", "a": "<tag> é", "c": ""}


@pytest.mark.parametrize(
    "doc, error",
    [
        (b"", MalformedXml),
        (b"<poseidon-form schema='s'>", MalformedXml),
        (b"<other schema='s'/>", MalformedXml),
        (b"<poseidon-form/>", MissingSchemaAttribute),
        (b"<poseidon-form schema=''/>", MissingSchemaAttribute),
        (b"<poseidon-form schema='s' extra='1'/>", MalformedXml),
        (b"<poseidon-form schema='s' version='2'/>", MalformedXml),
        (b"<poseidon-form schema='s'><item name='a'/></poseidon-form>", MalformedXml),
        (b"<poseidon-form schema='s'><field/></poseidon-form>", MalformedXml),
        (b"<poseidon-form schema='s'><field name='a'><b/></field></poseidon-form>", MalformedXml),
        (b"<poseidon-form schema='s'>stray<field name='a'/></poseidon-form>", MalformedXml),
        (
            b"<poseidon-form schema='s'><field name='email'>a</field><field name='email'>b</field></poseidon-form>",
            DuplicateField,
        ),
        (
            b"<!DOCTYPE poseidon-form [<!ENTITY x 'boom'>]><poseidon-form schema='s'>"
            b"<field name='a'>&x;</field></poseidon-form>",
            MalformedXml,
        ),
    ],
)
def test_parse_rejects(doc, error):
    with pytest.raises(error):
        parse_payload(doc)


def test_parse_rejects_oversize():
    big = b"<poseidon-form schema='s'><field name='a'>" + b"x" * (1024 * 1024) + b"</field></poseidon-form>"
    with pytest.raises(OversizePayload):
        parse_payload(big)


field_text = st.text(st.characters(blacklist_categories=("Cs",), blacklist_characters="\x00"), max_size=40).filter(
    lambda s: all(c in "\t\n\r" or ord(c) >= 0x20 for c in s) and "\ufffe" not in s and "\uffff" not in s
)


@given(
    st.from_regex(r"[a-z][a-z0-9-]{0,15}", fullmatch=True),
    st.dictionaries(st.from_regex(r"[a-z_][a-z0-9_]{0,10}", fullmatch=True), field_text, max_size=6),
)
def test_render_then_parse_is_identity(schema_id, fields):
    payload = FormPayload(schema_id, fields)
    assert parse_payload(render_payload(payload)) == payload


# --- sanitizing ---


@pytest.mark.parametrize(
    "raw, clean",
    [
        ("Plzen", "Plzen"),
        ("Jan\u200bNovak", "JanNovak"),
        ("  a\u00a0 b ", "a b"),
        ("a\tb\r\nc", "a b c"),
        ("\ufeffx\u200c\u200dy\x00\x07\x85", "xy"),
        ("", ""),
    ],
)
def test_sanitize_examples(raw, clean):
    assert sanitize_text(raw) == clean


@given(st.text())
def test_sanitize_is_idempotent(s):
    once = sanitize_text(s)
    assert sanitize_text(once) == once


@given(st.lists(st.text(st.characters(min_codepoint=0x21, max_codepoint=0x7E), min_size=1), max_size=6))
def test_sanitize_is_identity_on_normalized_ascii(words):
    s = " ".join(words)
    assert sanitize_text(s) == s


@given(st.text())
def test_sanitized_text_has_no_invisible_characters(s):
    out = sanitize_text(s)
    assert "  " not in out and out == out.strip(" ")
    assert not any(ord(c) < 0x20 or 0x7F <= ord(c) < 0xA0 or c in "\u00a0\u200b\u200c\u200d\ufeff" for c in out)


# --- validation ---


@pytest.mark.parametrize(
    "value, ok",
    [
        ("a@x.org", True),
        ("jan.novak@mail.zcu.cz", True),
        ("a@x", False),
        ("@x.org", False),
        ("a@@x.org", False),
        ("a@x..org", False),
        ("a b@x.org", False),
        ("", False),
    ],
)
def test_is_email(value, ok):
    assert is_email(value) is ok


def test_valid_person_registration():
    result = validate(FormPayload("person-registration", person_fields()), PERSON)
    assert result.ok and result
    assert list(result.fields) == PERSON.field_names


def test_missing_country():
    fields = person_fields()
    del fields["country"]
    result = validate(FormPayload("person-registration", fields), PERSON)
    assert codes(result) == {("country", "required_missing")}


def test_blank_after_sanitizing_counts_as_missing():
    result = validate(FormPayload("person-registration", person_fields(country=" \u200b\u00a0")), PERSON)
    assert codes(result) == {("country", "required_missing")}


def test_retype_mismatch():
    result = validate(FormPayload("person-registration", person_fields(password="abc", retype_password="abd")), PERSON)
    assert codes(result) == {(FORM, "retype_mismatch")}


def test_non_ascii_first_name():
    result = validate(FormPayload("person-registration", person_fields(first_name="Václav")), PERSON)
    assert codes(result) == {("first_name", "non_ascii")}


def test_pasted_zero_width_characters_are_not_rejected():
    result = validate(FormPayload("person-registration", person_fields(first_name="Jan\u200b")), PERSON)
    assert result.ok
    assert result.fields["first_name"] == "Jan"


def test_interested_emails_separator():
    ok = validate(FormPayload("person-registration", person_fields(interested_emails="a@x.org;b@y.org")), PERSON)
    assert ok.ok
    bad = validate(FormPayload("person-registration", person_fields(interested_emails="a@x.org,b@y.org")), PERSON)
    assert codes(bad) == {("interested_emails", "bad_separator_list")}


@pytest.mark.parametrize(
    "override, expected",
    [
        ({"email": "not-an-address"}, ("email", "bad_email")),
        ({"home_page": "www.example.cz"}, ("home_page", "bad_url")),
        ({"salutation": "Sir"}, ("salutation", "not_in_enum")),
        ({"vegetarian": "yes"}, ("vegetarian", "not_in_enum")),
        ({"date": "x" * 65}, ("date", "bad_date")),
        ({"nickname": "JJ"}, ("nickname", "unknown_field")),
    ],
)
def test_kind_checks(override, expected):
    result = validate(FormPayload("person-registration", person_fields(**override)), PERSON)
    assert codes(result) == {expected}


def test_schema_mismatch():
    result = validate(FormPayload("paper-registration", {}), PERSON)
    assert codes(result) == {(FORM, "unknown_schema")}


def test_errors_are_reported_exhaustively():
    fields = person_fields(first_name="Václav", email="nope", password="a", retype_password="b")
    del fields["country"]
    result = validate(FormPayload("person-registration", fields), PERSON)
    assert codes(result) == {
        ("first_name", "non_ascii"),
        ("email", "bad_email"),
        ("country", "required_missing"),
        (FORM, "retype_mismatch"),
    }


def test_error_text_format():
    assert str(ValidationError("country", "required_missing", "value is required")) == (
        "country required_missing value is required"
    )
    assert str(ValidationError("country", "required_missing")) == "country required_missing"


messy = st.text(alphabet=st.sampled_from("ab@.; \t\u200b\u00a0Xé\n"), max_size=12)


@given(st.fixed_dictionaries({name: messy for name in ("first_name", "country", "email", "interested_emails")}))
def test_validation_is_a_fixpoint(overrides):
    result = validate(FormPayload("person-registration", person_fields(**overrides)), PERSON)
    if result.ok:
        again = validate(FormPayload("person-registration", result.fields), PERSON)
        assert again.ok and again.fields == result.fields


FOUR = load_schema(
    """
    schema four
    field name text required ascii
    field mail email required
    field site url
    field meal enum values=fish|veg
    """
)
BAD_VALUES = {"name": "Václav", "mail": "nope", "site": "ftp://x", "meal": "beef"}


def single_field_errors(name, value):
    schema = load_schema(f"schema one\n{FOUR_LINES[name]}")
    payload = FormPayload("one", {} if value is None else {name: value})
    return codes(validate(payload, schema))


FOUR_LINES = {
    "name": "field name text required ascii",
    "mail": "field mail email required",
    "site": "field site url",
    "meal": "field meal enum values=fish|veg",
}


@pytest.mark.parametrize("pattern", list(itertools.product((False, True), repeat=4)))
def test_error_set_is_union_of_single_field_checks(pattern):
    fields = {name: BAD_VALUES[name] for name, present in zip(BAD_VALUES, pattern) if present}
    expected = set()
    for name, present in zip(BAD_VALUES, pattern):
        expected |= single_field_errors(name, BAD_VALUES[name] if present else None)
    assert codes(validate(FormPayload("four", fields), FOUR)) == expected
