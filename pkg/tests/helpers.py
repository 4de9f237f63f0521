"""Independent oracles and builders shared by the tests.

The oracles here deliberately avoid the stdlib codecs the package uses.
"""

from __future__ import annotations

from poseidon.formdata import FormPayload, render_payload
from poseidon.mime import Attachment, MailMessage

_B64 = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/"


def oracle_base64(data: bytes) -> str:
    out = []
    for i in range(0, len(data), 3):
        chunk = data[i : i + 3]
        n = int.from_bytes(chunk + b"\0" * (3 - len(chunk)), "big")
        quad = [_B64[(n >> shift) & 63] for shift in (18, 12, 6, 0)]
        if len(chunk) < 3:
            quad[len(chunk) + 1 :] = "=" * (3 - len(chunk))
        out.append("".join(quad))
    return "".join(out)


def oracle_csv(text: str) -> list[list[str]]:
    """Minimal RFC 4180 reader: CRLF records, double-quote escaping."""
    rows: list[list[str]] = []
    row: list[str] = []
    cell: list[str] = []
    i, quoted = 0, False
    while i < len(text):
        ch = text[i]
        if quoted:
            if ch == '"' and text[i + 1 : i + 2] == '"':
                cell.append('"')
                i += 2
                continue
            if ch == '"':
                quoted = False
            else:
                cell.append(ch)
            i += 1
            continue
        if ch == '"' and not cell:
            quoted = True
        elif ch == ",":
            row.append("".join(cell))
            cell = []
        elif text.startswith("\r\n", i):
            row.append("".join(cell))
            rows.append(row)
            row, cell = [], []
            i += 2
            continue
        else:
            cell.append(ch)
        i += 1
    if cell or row:
        row.append("".join(cell))
        rows.append(row)
    return rows


def person_fields(**overrides: str) -> dict[str, str]:
    fields = {
        "salutation": "Prof.",
        "vegetarian": "No",
        "first_name": "Jan",
        "last_name": "Novak",
        "abbreviation": "Novak,J.",
        "email": "jan@zcu.cz",
        "password": "Tr1dent-Secret",
        "retype_password": "Tr1dent-Secret",
        "home_page": "http://www.example.cz",
        "reviewer_willing": "Yes",
        "department": "Computer Science",
        "institution": "University of West Bohemia",
        "address1": "Univerzitni 8",
        "address2": "",
        "street": "Univerzitni",
        "number": "8",
        "zip": "30614",
        "city": "Plzen",
        "state": "",
        "country": "Czech Republic",
        "working_group_url": "",
        "interested_emails": "a@x.org;b@y.org",
        "date": "2014-10-06",
    }
    fields.update(overrides)
    return fields


def form_message(
    fields: dict[str, str],
    schema_id: str = "person-registration",
    sender: str = "jan@zcu.cz",
    reply_to: str | None = None,
    message_id: str = "m1@zcu.cz",
    date: int = 1412596800,
    extra: tuple[Attachment, ...] = (),
) -> MailMessage:
    payload = render_payload(FormPayload(schema_id, fields))
    return MailMessage(
        sender=sender,
        reply_to=reply_to,
        date=date,
        message_id=message_id,
        subject="form",
        body_text="see attachment\n",
        attachments=(Attachment("form.xml", "application/xml", payload), *extra),
    )


def random_schedule(rng, n_events: int, clients: list[str]) -> list:
    """Random mailsim events; every submit carries a fresh message id."""
    from poseidon.mailsim import SetOffline, SetOnline, Submit, Sync, Tick

    events = []
    for i in range(n_events):
        roll = rng.random()
        if roll < 0.4:
            sender, to = rng.choice(clients), rng.choice(clients)
            msg = MailMessage(sender=sender, date=i, message_id=f"e{i}@sim.example", subject=f"{i}")
            events.append(Submit(sender, msg, to))
        elif roll < 0.55:
            events.append(SetOnline(rng.choice(clients)))
        elif roll < 0.65:
            events.append(SetOffline(rng.choice(clients)))
        elif roll < 0.95:
            events.append(Sync(rng.choice(clients)))
        else:
            events.append(Tick(rng.randrange(1, 4)))
    return events


def fifo_holds(world, events) -> bool:
    """Each (sender, recipient) pair sees its messages arrive in submit order."""
    from poseidon.mailsim import Submit

    sent: dict[tuple[str, str], list[str]] = {}
    for e in events:
        if isinstance(e, Submit):
            sent.setdefault((e.client, e.to), []).append(e.msg.message_id)
    origin = {mid: pair for pair, ids in sent.items() for mid in ids}
    for client in world.clients.values():
        received: dict[tuple[str, str], list[str]] = {}
        for msg in client.inbox:
            pair = origin[msg.message_id]
            received.setdefault(pair, []).append(msg.message_id)
        for pair, ids in received.items():
            if pair[1] != client.address or ids != sent[pair][: len(ids)]:
                return False
    return True
