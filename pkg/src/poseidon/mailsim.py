"""In-memory store-and-forward mail: client outboxes, one server, client inboxes.

Clients compose mail at any time; it waits in their outbox. Only ``sync`` of
an online client moves anything: its outbox is pushed to the server queues
(one FIFO per recipient), then its own server queue is downloaded into its
inbox and removed from the server, POP style.

Every movement is logged as ``TICK <n> MOVE <message_id> <from> -> <to>``
where locations are ``new``, ``outbox:<addr>``, ``server:<addr>``,
``inbox:<addr>`` and ``consumed``.
"""

from __future__ import annotations

import shlex
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Union

from .mime import MailMessage, normalize_address, parse_message

# Simulated time starts at 2014-10-06 00:00:00 UTC; one tick is one minute.
SIM_EPOCH = 1412553600
TICK_SECONDS = 60


class ClientOffline(Exception):
    pass


class UnknownClient(KeyError):
    pass


class DuplicateMessage(ValueError):
    pass


def tick_date(tick: int) -> int:
    return SIM_EPOCH + tick * TICK_SECONDS


@dataclass
class SimClient:
    address: str
    online: bool = False
    outbox: list[tuple[MailMessage, str]] = field(default_factory=list)
    inbox: list[MailMessage] = field(default_factory=list)


@dataclass
class SimServer:
    queues: dict[str, list[MailMessage]] = field(default_factory=dict)
    clock: int = 0

    def queued(self) -> int:
        return sum(len(q) for q in self.queues.values())


@dataclass(frozen=True)
class Move:
    message_id: str
    source: str
    target: str


def client_submit(client: SimClient, msg: MailMessage, to: str) -> SimClient:
    client.outbox.append((msg, normalize_address(to)))
    return client


def client_sync(client: SimClient, server: SimServer) -> list[Move]:
    """Push the outbox, then download-and-delete the client's server queue."""
    if not client.online:
        raise ClientOffline(client.address)
    moves = []
    for msg, to in client.outbox:
        server.queues.setdefault(to, []).append(msg)
        moves.append(Move(msg.message_id, f"outbox:{client.address}", f"server:{to}"))
    client.outbox.clear()
    for msg in server.queues.pop(client.address, []):
        client.inbox.append(msg)
        moves.append(Move(msg.message_id, f"server:{client.address}", f"inbox:{client.address}"))
    return moves


# --- schedules -----------------------------------------------------------------------


@dataclass(frozen=True)
class Submit:
    client: str
    msg: MailMessage
    to: str


@dataclass(frozen=True)
class SetOnline:
    client: str


@dataclass(frozen=True)
class SetOffline:
    client: str


@dataclass(frozen=True)
class Sync:
    client: str


@dataclass(frozen=True)
class Tick:
    n: int = 1


Event = Union[Submit, SetOnline, SetOffline, Sync, Tick]


class World:
    """The whole simulated mail system plus its movement log."""

    def __init__(self, addresses: Iterable[str] = ()):
        self.clients: dict[str, SimClient] = {}
        self.server = SimServer()
        self.log: list[str] = []
        self.created = 0
        self.consumed = 0
        self._seen_ids: set[str] = set()
        for address in addresses:
            self.add_client(address)

    def add_client(self, address: str, online: bool = False) -> SimClient:
        address = normalize_address(address)
        client = self.clients.setdefault(address, SimClient(address, online))
        return client

    def client(self, address: str) -> SimClient:
        try:
            return self.clients[normalize_address(address)]
        except KeyError:
            raise UnknownClient(address) from None

    def _record(self, moves: Iterable[Move]) -> None:
        for m in moves:
            self.log.append(f"TICK {self.server.clock} MOVE {m.message_id} {m.source} -> {m.target}")

    def apply(self, event: Event) -> list[Move]:
        if isinstance(event, Tick):
            self.server.clock += max(0, event.n)
            return []
        client = self.client(event.client)
        if isinstance(event, Submit):
            if event.msg.message_id in self._seen_ids:
                raise DuplicateMessage(event.msg.message_id)
            self._seen_ids.add(event.msg.message_id)
            client_submit(client, event.msg, event.to)
            self.created += 1
            moves = [Move(event.msg.message_id, "new", f"outbox:{client.address}")]
        elif isinstance(event, SetOnline):
            client.online = True
            moves = []
        elif isinstance(event, SetOffline):
            client.online = False
            moves = []
        elif isinstance(event, Sync):
            try:
                moves = client_sync(client, self.server)
            except ClientOffline:
                self.log.append(f"TICK {self.server.clock} NOOP sync {client.address} offline")
                return []
        else:
            raise TypeError(f"unknown event {event!r}")
        self._record(moves)
        return moves

    def drain_inbox(self, address: str) -> list[MailMessage]:
        """Hand the inbox contents to a local consumer (e.g. the ingest loop)."""
        client = self.client(address)
        taken, client.inbox = client.inbox, []
        self.consumed += len(taken)
        self._record(Move(m.message_id, f"inbox:{client.address}", "consumed") for m in taken)
        return taken

    def held(self) -> int:
        """Messages currently somewhere in the system."""
        return (
            sum(len(c.outbox) + len(c.inbox) for c in self.clients.values())
            + self.server.queued()
        )

    def snapshot(self) -> tuple:
        clients = tuple(
            (
                c.address,
                c.online,
                tuple((m.message_id, to) for m, to in c.outbox),
                tuple(m.message_id for m in c.inbox),
            )
            for c in sorted(self.clients.values(), key=lambda c: c.address)
        )
        queues = tuple(
            (addr, tuple(m.message_id for m in q)) for addr, q in sorted(self.server.queues.items()) if q
        )
        return (clients, queues, self.server.clock)

    def log_text(self) -> str:
        return "".join(line + "\n" for line in self.log)


def run_schedule(addresses: Iterable[str], events: Iterable[Event]) -> World:
    """Apply ``events`` in order to a fresh world holding ``addresses`` (all offline)."""
    world = World(addresses)
    for event in events:
        world.apply(event)
    return world


def parse_schedule(text: str, base_dir: Union[str, Path] = ".") -> tuple[list[str], list[Event]]:
    """Read a schedule file: one event per line.

    ::

        client a@x.org
        submit a@x.org forms@conf.org msgs/form1.eml
        online a@x.org
        sync a@x.org
        offline a@x.org
        tick 5
    """
    base = Path(base_dir)
    clients: list[str] = []
    events: list[Event] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        word, *args = shlex.split(line)
        if word == "client" and len(args) == 1:
            clients.append(args[0])
        elif word == "submit" and len(args) == 3:
            msg = parse_message((base / args[2]).read_bytes())
            events.append(Submit(args[0], msg, args[1]))
        elif word == "online" and len(args) == 1:
            events.append(SetOnline(args[0]))
        elif word == "offline" and len(args) == 1:
            events.append(SetOffline(args[0]))
        elif word == "sync" and len(args) == 1:
            events.append(Sync(args[0]))
        elif word == "tick" and len(args) <= 1:
            events.append(Tick(int(args[0]) if args else 1))
        else:
            raise ValueError(f"schedule line {lineno}: cannot parse {line!r}")
    return clients, events


__all__ = [
    "ClientOffline",
    "DuplicateMessage",
    "Event",
    "Move",
    "SIM_EPOCH",
    "SetOffline",
    "SetOnline",
    "SimClient",
    "SimServer",
    "Submit",
    "Sync",
    "Tick",
    "UnknownClient",
    "World",
    "client_submit",
    "client_sync",
    "parse_schedule",
    "run_schedule",
    "tick_date",
]
