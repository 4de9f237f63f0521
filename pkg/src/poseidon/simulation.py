"""Seeded whole-system run: clients fill in forms offline, mail them through the
simulated server, and the recipient ingests them on a polling schedule.

The generated plan doubles as ground truth. Re-submissions, spoofed senders and
broken payloads are mixed in on purpose so the store has something to reject
and deduplicate.
"""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

from .formdata import FormPayload, render_payload
from .ingest import DEFAULT_SYSTEM_ADDRESS, Accepted, IngestOutcome
from .journal import Intake
from .mailsim import SetOffline, SetOnline, Submit, Sync, Tick, World, tick_date
from .mime import Attachment, MailMessage, serialize_message
from .schema import Registry, builtin_registry

SPOOF_SHARE = 0.15
INVALID_SHARE = 0.15
SIM_SCHEMAS = ("person-registration", "paper-registration")
COUNTRIES = ("Czech Republic", "Germany", "Poland", "Slovakia")


def client_address(index: int) -> str:
    return f"client{index:02d}@example.org"


@dataclass(frozen=True)
class PlannedSubmission:
    index: int
    client: str
    schema_id: str
    kind: str  # valid | spoofed | invalid
    defect: str
    fields: dict[str, str]
    payload: bytes
    date: int
    message_id: str
    reply_to: Optional[str] = None

    @property
    def key(self) -> tuple[str, str]:
        return (self.schema_id, self.client)

    def message(self, system_address: str = DEFAULT_SYSTEM_ADDRESS) -> MailMessage:
        return MailMessage(
            sender=self.client,
            to=system_address,
            reply_to=self.reply_to,
            date=self.date,
            message_id=self.message_id,
            subject=f"{self.schema_id} submission",
            body_text="Filled-in form attached.\n",
            attachments=(Attachment("form.xml", "application/xml", self.payload),),
        )


def _person_fields(rng: random.Random, idx: int, address: str, password: str, rev: int) -> dict[str, str]:
    return {
        "salutation": rng.choice(("Mr.", "Mrs.", "Dr.", "Prof.")),
        "vegetarian": rng.choice(("Yes", "No")),
        "first_name": f"Given{idx}",
        "last_name": f"Family{idx}",
        "abbreviation": f"Family{idx},G.",
        "email": address,
        "password": password,
        "retype_password": password,
        "home_page": f"https://example.org/~c{idx}",
        "reviewer_willing": rng.choice(("Yes", "No")),
        "department": f"Dept. {rev}, Computer Science",
        "institution": "University of West Bohemia",
        "address1": "Univerzitni 8",
        "address2": "",
        "street": "Univerzitni",
        "number": str(8 + rev % 3),
        "zip": "30614",
        "city": "Plzen",
        "state": "",
        "country": rng.choice(COUNTRIES),
        "working_group_url": "",
        "interested_emails": rng.choice(("", "a@x.org;b@y.org")),
        "date": "2014-10-06",
    }


def _paper_fields(rng: random.Random, idx: int, rev: int) -> dict[str, str]:
    return {
        "title": f'On "offline" forms, revision {rev}',
        "authors": f"Family{idx},G.; Coauthor{rng.randrange(100)},C.",
        "abstract": f"Forms travel by e-mail, revision {rev}.",
        "keywords": "e-mail, forms, offline",
        "download_url": f"https://example.org/papers/{idx}-{rev}.pdf",
    }


def _apply_defect(rng: random.Random, schema_id: str, fields: dict[str, str]) -> tuple[str, str, dict[str, str]]:
    """Break a valid submission in one of several ways; returns (defect, schema_id, fields)."""
    defects = ["missing_required", "non_ascii", "malformed_xml", "unknown_schema"]
    if schema_id == "person-registration":
        defects.append("retype_mismatch")
    defect = rng.choice(defects)
    fields = dict(fields)
    if defect == "missing_required":
        fields.pop("country" if schema_id == "person-registration" else "title")
    elif defect == "non_ascii":
        fields["first_name" if schema_id == "person-registration" else "authors"] = "Václav"
    elif defect == "retype_mismatch":
        fields["retype_password"] = fields["password"] + "x"
    elif defect == "unknown_schema":
        schema_id = "bogus"
    return defect, schema_id, fields


def plan_submissions(n_clients: int, n_submissions: int, seed: int) -> list[PlannedSubmission]:
    if n_clients < 1 or n_submissions < 0:
        raise ValueError("need at least one client and a non-negative submission count")
    rng = random.Random(seed)
    passwords = [f"pw{rng.getrandbits(48):012x}!Q" for _ in range(n_clients)]
    n_spoof = round(n_submissions * SPOOF_SHARE)
    n_invalid = round(n_submissions * INVALID_SHARE)
    kinds = ["spoofed"] * n_spoof + ["invalid"] * n_invalid
    kinds += ["valid"] * (n_submissions - len(kinds))
    rng.shuffle(kinds)

    plan = []
    for i, kind in enumerate(kinds):
        idx = rng.randrange(n_clients)
        address = client_address(idx)
        schema_id = rng.choice(SIM_SCHEMAS)
        if schema_id == "person-registration":
            fields = _person_fields(rng, idx, address, passwords[idx], i)
        else:
            fields = _paper_fields(rng, idx, i)
        defect, reply_to, payload_schema = "", None, schema_id
        if kind == "invalid":
            defect, payload_schema, fields = _apply_defect(rng, schema_id, fields)
        elif kind == "spoofed":
            reply_to = f"attacker{rng.randrange(1000)}@evil.example"
        elif rng.random() < 0.3:
            reply_to = address
        payload = render_payload(FormPayload(payload_schema, fields))
        if defect == "malformed_xml":
            payload = payload[: len(payload) // 2]
        plan.append(
            PlannedSubmission(
                index=i,
                client=address,
                schema_id=payload_schema,
                kind=kind,
                defect=defect,
                fields=fields,
                payload=payload,
                date=tick_date(i + 1),
                message_id=f"s{seed}-{i}@{address.split('@')[1]}",
                reply_to=reply_to,
            )
        )
    return plan


def ground_truth(plan: list[PlannedSubmission]) -> dict[tuple[str, str], PlannedSubmission]:
    """Newest valid submission per (form, sender), straight from the plan."""
    latest: dict[tuple[str, str], PlannedSubmission] = {}
    for p in plan:
        if p.kind == "valid" and (p.key not in latest or p.date > latest[p.key].date):
            latest[p.key] = p
    return latest


def count_duplicates(plan: list[PlannedSubmission]) -> int:
    seen: set[tuple[str, str]] = set()
    dupes = 0
    for p in plan:
        if p.kind != "valid":
            continue
        dupes += p.key in seen
        seen.add(p.key)
    return dupes


@dataclass
class SimulationResult:
    n_clients: int
    seed: int
    plan: list[PlannedSubmission]
    world: World
    intake: Intake
    outcomes: list[IngestOutcome] = field(default_factory=list)
    receipts: list[MailMessage] = field(default_factory=list)

    @property
    def store(self):
        return self.intake.store

    def delivered_receipts(self) -> int:
        system = self.intake.system_address
        return sum(
            1 for c in self.world.clients.values() if c.address != system for m in c.inbox if m.sender == system
        )

    def oracle_matches(self) -> bool:
        truth = ground_truth(self.plan)
        if {r.key for r in self.store} != set(truth):
            return False
        return all(self.store.get(*key).submission.message_id == p.message_id for key, p in truth.items())

    def report(self) -> str:
        kinds = Counter(p.kind for p in self.plan)
        accepted = sum(isinstance(o, Accepted) for o in self.outcomes)
        reasons = Counter(o.reason for o in self.outcomes if not isinstance(o, Accepted))
        lines = [
            f"clients={self.n_clients} submissions={len(self.plan)} seed={self.seed}",
            f"planned valid={kinds['valid']} spoofed={kinds['spoofed']} invalid={kinds['invalid']}"
            f" duplicates={count_duplicates(self.plan)}",
            f"messages created={self.world.created} consumed={self.world.consumed} in_flight={self.world.held()}",
            f"accepted={accepted} rejected={sum(reasons.values())}",
        ]
        lines += [f"  rejected:{reason}={n}" for reason, n in sorted(reasons.items())]
        lines += [
            f"receipts sent={len(self.receipts)} delivered={self.delivered_receipts()}",
            f"records={len(self.store)}",
            f"oracle_match={'yes' if self.oracle_matches() else 'no'}",
        ]
        return "\n".join(lines) + "\n"


def run_simulation(
    n_clients: int,
    n_submissions: int,
    seed: int,
    poll_every: int = 5,
    registry: Optional[Registry] = None,
    system_address: str = DEFAULT_SYSTEM_ADDRESS,
) -> SimulationResult:
    plan = plan_submissions(n_clients, n_submissions, seed)
    clients = [client_address(i) for i in range(n_clients)]
    world = World(clients)
    world.add_client(system_address, online=True)
    intake = Intake(registry or builtin_registry(), system_address=system_address)
    result = SimulationResult(n_clients, seed, plan, world, intake)
    rng = random.Random(seed * 7919 + 1)

    def apply(event) -> None:
        world.apply(event)
        if isinstance(event, Sync) and event.client == system_address:
            for msg in world.drain_inbox(system_address):
                outcomes = intake.receive(serialize_message(msg), arrival=tick_date(world.server.clock))
                result.outcomes.extend(outcomes)
                for outcome in outcomes:
                    if isinstance(outcome, Accepted):
                        result.receipts.append(outcome.receipt)
                        world.apply(Submit(system_address, outcome.receipt, outcome.submission.sender))

    for p in plan:
        apply(Tick())
        apply(Submit(p.client, p.message(system_address), system_address))
        if rng.random() < 0.4:
            apply(SetOnline(p.client))
            apply(Sync(p.client))
        if rng.random() < 0.15:
            apply(SetOffline(rng.choice(clients)))
        if rng.random() < 0.1:
            apply(Sync(rng.choice(clients)))
        if world.server.clock % poll_every == 0:
            apply(Sync(system_address))

    # Everyone connects at the end so nothing is left in flight.
    apply(Tick())
    for address in clients:
        apply(SetOnline(address))
        apply(Sync(address))
    apply(Sync(system_address))
    apply(Sync(system_address))
    for address in clients:
        apply(Sync(address))
    return result


__all__ = [
    "PlannedSubmission",
    "SimulationResult",
    "client_address",
    "count_duplicates",
    "ground_truth",
    "plan_submissions",
    "run_simulation",
]
