"""Command-line entry point.

Exit status: 0 success, 1 domain-level negative result (e.g. an invalid
payload), 2 usage or environment error.
"""

from __future__ import annotations

import argparse
import contextlib
import fcntl
import logging
import os
import signal
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Optional

from . import __version__
from .formdata import PayloadError, parse_payload, validate
from .ingest import DEFAULT_SYSTEM_ADDRESS, Accepted
from .journal import Intake, Journal, JournalCorrupt, content_digest, journal_replay
from .mailsim import parse_schedule, run_schedule
from .mime import BadAddress, normalize_address, serialize_message
from .schema import Registry, SchemaError, builtin_registry, load_schema
from .simulation import run_simulation
from .store import Store, UnknownField, UnknownSchema

log = logging.getLogger("poseidon")

EXIT_OK, EXIT_NEGATIVE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Configuration or environment problem; reported with exit status 2."""


# --- configuration -------------------------------------------------------------------


@dataclass
class Config:
    system_address: str = DEFAULT_SYSTEM_ADDRESS
    poll_interval_secs: Optional[int] = None
    maildir_in: Path = Path("maildir")
    journal_dir: Path = Path("journal")
    export_dir: Path = Path("export")
    schema_paths: list[Path] = field(default_factory=list)

    @property
    def outbox_dir(self) -> Path:
        return self.export_dir / "outbox"


_PATH_KEYS = ("maildir_in", "journal_dir", "export_dir")


def load_config(path: Optional[Path], env: Optional[dict] = None) -> Config:
    """Read a ``key = value`` file; POSEIDON_CONFIG and POSEIDON_POLL_SECS apply from the environment."""
    env = os.environ if env is None else env
    cfg = Config()
    if path is None and env.get("POSEIDON_CONFIG"):
        path = Path(env["POSEIDON_CONFIG"])
    if path is not None:
        try:
            text = Path(path).read_text("utf-8")
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from None
        base = Path(path).parent
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, eq, value = (part.strip() for part in line.partition("="))
            if not eq or not value:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            if key in _PATH_KEYS:
                setattr(cfg, key, base / value)
            elif key == "schema_paths":
                cfg.schema_paths = [base / p.strip() for p in value.split(",") if p.strip()]
            elif key == "system_address":
                cfg.system_address = value
            elif key == "poll_interval_secs":
                cfg.poll_interval_secs = _positive_int(value, f"{path}:{lineno}")
            else:
                raise UsageError(f"{path}:{lineno}: unknown setting {key!r}")
    if env.get("POSEIDON_POLL_SECS"):
        cfg.poll_interval_secs = _positive_int(env["POSEIDON_POLL_SECS"], "POSEIDON_POLL_SECS")
    try:
        cfg.system_address = normalize_address(cfg.system_address)
    except BadAddress:
        raise UsageError(f"system_address {cfg.system_address!r} is not an address") from None
    return cfg


def _positive_int(value: str, where: str) -> int:
    try:
        n = int(value)
    except ValueError:
        n = 0
    if n < 1:
        raise UsageError(f"{where}: poll interval must be a positive integer, got {value!r}")
    return n


def _registry(cfg: Config, extra: list[str]) -> Registry:
    schemas = []
    for p in [*cfg.schema_paths, *map(Path, extra)]:
        try:
            schemas.append(load_schema(Path(p).read_text("utf-8")))
        except OSError as exc:
            raise UsageError(f"cannot read schema {p}: {exc}") from None
        except SchemaError as exc:
            raise UsageError(f"{p}: {exc}") from None
    try:
        return builtin_registry().extended(schemas)
    except SchemaError as exc:
        raise UsageError(f"duplicate schema id {exc}") from None


@contextlib.contextmanager
def journal_lock(journal_dir: Path) -> Iterator[None]:
    journal_dir.mkdir(parents=True, exist_ok=True)
    with open(journal_dir / ".lock", "w") as fh:
        try:
            fcntl.flock(fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError:
            raise UsageError(f"another poseidon process holds {journal_dir / '.lock'}") from None
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


def _load_store(cfg: Config, registry: Registry) -> Store:
    try:
        return journal_replay(cfg.journal_dir, registry, cfg.system_address)
    except JournalCorrupt as exc:
        raise UsageError(str(exc)) from None


# --- ingest pass ---------------------------------------------------------------------


class Mailroom:
    """Recipient side: the journal-backed intake plus the receipt outbox."""

    def __init__(self, cfg: Config, registry: Registry):
        self.cfg = cfg
        journal = Journal(cfg.journal_dir, writable=True)
        try:
            store = journal_replay(cfg.journal_dir, registry, cfg.system_address)
            self.seen = journal.digests()
            next_seq = journal.next_seq()
        except JournalCorrupt as exc:
            raise UsageError(str(exc)) from None
        self.intake = Intake(registry, store, journal, cfg.system_address, next_seq=next_seq)

    def ingest_directory(self, maildir: Path, should_stop: Callable[[], bool] = lambda: False) -> tuple[int, int]:
        """Process every not-yet-journaled ``.eml`` in filename order."""
        try:
            paths = sorted(p for p in maildir.iterdir() if p.suffix == ".eml" and p.is_file())
        except OSError as exc:
            raise UsageError(f"cannot read maildir {maildir}: {exc}") from None
        accepted = rejected = 0
        for path in paths:
            if should_stop():
                break
            raw = path.read_bytes()
            digest = content_digest(raw)
            if digest in self.seen:
                continue
            for outcome in self.intake.receive(raw):
                if isinstance(outcome, Accepted):
                    accepted += 1
                    self._write_receipt(outcome)
                else:
                    rejected += 1
                    log.info("rejected %s (%s): %s", path.name, outcome.reason, outcome.detail)
            self.seen.add(digest)
        return accepted, rejected

    def _write_receipt(self, outcome: Accepted) -> None:
        outbox = self.cfg.outbox_dir
        outbox.mkdir(parents=True, exist_ok=True)
        target = outbox / f"{outcome.seq:08d}-receipt.eml"
        tmp = target.with_name(target.name + ".tmp")
        tmp.write_bytes(serialize_message(outcome.receipt))
        os.replace(tmp, target)


# --- commands ------------------------------------------------------------------------


def cmd_validate(args: argparse.Namespace, cfg: Config) -> int:
    registry = _registry(cfg, args.schemas)
    try:
        data = Path(args.payload).read_bytes()
    except OSError as exc:
        raise UsageError(f"cannot read {args.payload}: {exc}") from None
    try:
        payload = parse_payload(data)
    except PayloadError as exc:
        print(f"(form) malformed_payload {exc}")
        return EXIT_NEGATIVE
    schema_id = args.schema or payload.schema_id
    schema = registry.get(schema_id)
    if schema is None:
        raise UsageError(f"unknown schema {schema_id!r}")
    result = validate(payload, schema)
    if result.ok:
        print("OK")
        return EXIT_OK
    for error in result.errors:
        print(error)
    return EXIT_NEGATIVE


def cmd_ingest(args: argparse.Namespace, cfg: Config) -> int:
    maildir = Path(args.maildir) if args.maildir else cfg.maildir_in
    if not maildir.is_dir():
        raise UsageError(f"maildir {maildir} is not a directory")
    registry = _registry(cfg, args.schemas)
    with journal_lock(cfg.journal_dir):
        accepted, rejected = Mailroom(cfg, registry).ingest_directory(maildir)
    print(f"accepted={accepted} rejected={rejected}")
    return EXIT_OK


def cmd_serve(args: argparse.Namespace, cfg: Config) -> int:
    if cfg.poll_interval_secs is None:
        raise UsageError("poll_interval_secs must be configured (config file or POSEIDON_POLL_SECS)")
    registry = _registry(cfg, args.schemas)
    stop = False

    def request_stop(signum, _frame) -> None:
        nonlocal stop
        log.info("signal %d received, finishing current message", signum)
        stop = True

    previous = {s: signal.signal(s, request_stop) for s in (signal.SIGINT, signal.SIGTERM)}
    cycles = 0
    try:
        with journal_lock(cfg.journal_dir):
            room = Mailroom(cfg, registry)
            while not stop:
                try:
                    accepted, rejected = room.ingest_directory(cfg.maildir_in, lambda: stop)
                    if accepted or rejected:
                        log.info("cycle %d: accepted=%d rejected=%d", cycles, accepted, rejected)
                except (OSError, UsageError) as exc:
                    log.error("cycle %d failed, retrying next cycle: %s", cycles, exc)
                cycles += 1
                if args.max_cycles and cycles >= args.max_cycles:
                    break
                deadline = time.monotonic() + cfg.poll_interval_secs
                while not stop and time.monotonic() < deadline:
                    time.sleep(min(0.2, cfg.poll_interval_secs))
    finally:
        for sig, handler in previous.items():
            signal.signal(sig, handler)
    return EXIT_OK


def _lookup_error(exc: LookupError) -> UsageError:
    if isinstance(exc, UnknownSchema):
        return UsageError(f"unknown schema {exc.args[0]!r}")
    return UsageError(str(exc.args[0]) if exc.args else str(exc))


def cmd_export(args: argparse.Namespace, cfg: Config) -> int:
    registry = _registry(cfg, args.schemas)
    store = _load_store(cfg, registry)
    try:
        data = store.export_csv(args.schema)
    except UnknownSchema as exc:
        raise _lookup_error(exc) from None
    if args.out == "-":
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    else:
        Path(args.out).write_bytes(data)
    return EXIT_OK


def cmd_query(args: argparse.Namespace, cfg: Config) -> int:
    registry = _registry(cfg, args.schemas)
    store = _load_store(cfg, registry)
    try:
        records = store.query(args.schema, args.field, args.value)
    except (UnknownSchema, UnknownField) as exc:
        raise _lookup_error(exc) from None
    sys.stdout.buffer.write(store.to_csv(args.schema, records))
    sys.stdout.flush()
    return EXIT_OK


def cmd_replay(args: argparse.Namespace, cfg: Config) -> int:
    registry = _registry(cfg, args.schemas)
    store = _load_store(cfg, registry)
    print(f"entries={len(Journal(cfg.journal_dir).entries())} records={len(store)}")
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace, cfg: Config) -> int:
    if args.clients < 1 or args.submissions < 0 or args.poll_every < 1:
        raise UsageError("need --clients >= 1, --submissions >= 0 and --poll-every >= 1")
    result = run_simulation(
        args.clients,
        args.submissions,
        args.seed,
        poll_every=args.poll_every,
        registry=_registry(cfg, args.schemas),
        system_address=cfg.system_address,
    )
    if args.log:
        Path(args.log).write_text(result.world.log_text(), "utf-8")
    sys.stdout.write(result.report())
    return EXIT_OK


def cmd_run_schedule(args: argparse.Namespace, cfg: Config) -> int:
    path = Path(args.schedule)
    try:
        clients, events = parse_schedule(path.read_text("utf-8"), path.parent)
    except (OSError, ValueError) as exc:
        raise UsageError(f"{path}: {exc}") from None
    world = run_schedule(clients, events)
    text = world.log_text()
    if args.log:
        Path(args.log).write_text(text, "utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value settings file")
    common.add_argument("--journal", type=Path, help="journal directory (overrides journal_dir)")
    common.add_argument("--export-dir", type=Path, help="export directory (overrides export_dir)")
    common.add_argument("--schemas", action="append", default=[], metavar="FILE", help="extra schema file")

    parser = argparse.ArgumentParser(prog="poseidon", description="E-mail transported form processing.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", parents=[common], help="check one XML payload file")
    p.add_argument("payload")
    p.add_argument("--schema", help="form id (default: the payload's own)")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("ingest", parents=[common], help="process new .eml files once")
    p.add_argument("--maildir", help="directory of .eml files (overrides maildir_in)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("serve", parents=[common], help="poll maildir_in every poll_interval_secs")
    p.add_argument("--max-cycles", type=int, default=0, help="stop after N cycles (0 = run until interrupted)")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("export", parents=[common], help="write one form's records as CSV")
    p.add_argument("--schema", required=True)
    p.add_argument("--out", required=True, help="output file, or - for stdout")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("query", parents=[common], help="print records whose field equals a value")
    p.add_argument("--schema", required=True)
    p.add_argument("--field", required=True)
    p.add_argument("--value", required=True)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("replay", parents=[common], help="verify the journal and rebuild the store")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("simulate", parents=[common], help="run a seeded end-to-end simulation")
    p.add_argument("--clients", type=int, default=10)
    p.add_argument("--submissions", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--poll-every", type=int, default=5, help="ticks between recipient syncs")
    p.add_argument("--log", help="write the movement log here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("run-schedule", parents=[common], help="replay a mail schedule file")
    p.add_argument("schedule")
    p.add_argument("--log", help="write the movement log here instead of stdout")
    p.set_defaults(func=cmd_run_schedule)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config)
        if args.journal:
            cfg.journal_dir = args.journal
        if args.export_dir:
            cfg.export_dir = args.export_dir
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"poseidon: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
