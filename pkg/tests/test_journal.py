import pytest

from poseidon.ingest import Accepted
from poseidon.journal import Intake, Journal, JournalCorrupt, journal_replay, journal_write
from poseidon.mime import serialize_message
from poseidon.schema import builtin_registry
from poseidon.store import Store

from helpers import form_message, person_fields

REGISTRY = builtin_registry()


def raw_messages():
    yield serialize_message(form_message(person_fields(), message_id="m1@zcu.cz", date=100))
    yield serialize_message(form_message(person_fields(city="Praha"), message_id="m2@zcu.cz", date=300))
    # Arrives late but is older: stale.
    yield serialize_message(form_message(person_fields(city="Brno"), message_id="m3@zcu.cz", date=200))
    yield serialize_message(form_message(person_fields(), message_id="m4@zcu.cz", reply_to="x@evil.example"))
    yield serialize_message(
        form_message(person_fields(email="eva@x.org", password="other", retype_password="other"),
                     sender="eva@x.org", message_id="m5@x.org", date=400)
    )
    # Same sender, different password: identity conflict.
    yield serialize_message(
        form_message(person_fields(password="guess", retype_password="guess"), message_id="m6@zcu.cz", date=500)
    )
    yield b"garbage"


def live_run(directory):
    intake = Intake(REGISTRY, journal=Journal(directory, writable=True), clock=lambda: 1000)
    outcomes = [o for raw in raw_messages() for o in intake.receive(raw)]
    return intake, outcomes


def test_replay_reproduces_live_store(tmp_path):
    intake, outcomes = live_run(tmp_path)
    assert [o.status for o in outcomes] == [
        "accepted", "accepted", "accepted", "rejected:spoofed_sender", "accepted",
        "rejected:identity_conflict", "rejected:malformed_message",
    ]
    assert intake.store.get("person-registration", "jan@zcu.cz").submission.fields["city"] == "Praha"
    assert journal_replay(tmp_path, REGISTRY) == intake.store
    assert len(Journal(tmp_path).entries()) == 7


def test_sidecar_format(tmp_path):
    live_run(tmp_path)
    first = Journal(tmp_path).entries()[0]
    line = first.sidecar.read_text().strip()
    assert line.startswith("SEQ 1 OUTCOME accepted KEY person-registration/jan@zcu.cz ARRIVED 1000 SHA256 ")
    assert first.eml.name.startswith("00000001-") and first.eml.suffix == ".eml"


def test_sidecars_hold_no_plaintext_password(tmp_path):
    live_run(tmp_path)
    for path in tmp_path.glob("*.outcome"):
        text = path.read_text()
        assert "Tr1dent-Secret" not in text and "guess" not in text


def test_empty_journal(tmp_path):
    assert journal_replay(tmp_path, REGISTRY) == Store(REGISTRY)
    assert journal_replay(tmp_path / "missing", REGISTRY) == Store(REGISTRY)


def test_truncated_message_is_reported_with_seq(tmp_path):
    live_run(tmp_path)
    entry = Journal(tmp_path).entries()[2]
    data = entry.eml.read_bytes()
    entry.eml.write_bytes(data[: len(data) // 2])
    with pytest.raises(JournalCorrupt) as info:
        journal_replay(tmp_path, REGISTRY)
    assert info.value.seq == entry.seq == 3


def test_tampered_sidecar_is_detected(tmp_path):
    live_run(tmp_path)
    entry = Journal(tmp_path).entries()[1]
    entry.sidecar.write_text(entry.sidecar.read_text().replace("accepted", "rejected:spoofed_sender"))
    with pytest.raises(JournalCorrupt) as info:
        journal_replay(tmp_path, REGISTRY)
    assert info.value.seq == 2


def test_uncommitted_tail_is_discarded_on_open(tmp_path):
    intake, _ = live_run(tmp_path)
    (tmp_path / "00000099-0123456789abcdef.eml").write_bytes(b"half written")
    (tmp_path / "00000099-0123456789abcdef.outcome.tmp").write_bytes(b"SEQ")
    assert journal_replay(tmp_path, REGISTRY) == intake.store
    Journal(tmp_path, writable=True)
    assert not list(tmp_path.glob("00000099-*"))
    assert journal_replay(tmp_path, REGISTRY) == intake.store


def test_orphan_in_the_middle_is_corruption(tmp_path):
    live_run(tmp_path)
    Journal(tmp_path).entries()[3].sidecar.unlink()
    with pytest.raises(JournalCorrupt) as info:
        Journal(tmp_path, writable=True)
    assert info.value.seq == 4


def test_next_seq_and_digests(tmp_path):
    intake, outcomes = live_run(tmp_path)
    journal = Journal(tmp_path)
    assert journal.next_seq() == intake.next_seq == 8
    assert len(journal.digests()) == 7


def test_journal_write_helper(tmp_path):
    raw = next(raw_messages())
    [outcome] = Intake(REGISTRY).receive(raw, arrival=5)
    assert isinstance(outcome, Accepted)
    entry = journal_write(tmp_path, raw, [outcome], 5)
    assert entry.eml.read_bytes() == raw
    assert journal_replay(tmp_path, REGISTRY).get("person-registration", "jan@zcu.cz") is not None
