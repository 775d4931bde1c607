"""Relay-side persistent mailbox store.

One append-only log per recipient under `<root>/mail/<username>.log`, plus a
`<root>/directory.jsonl` of registered users. Log records are 4-byte
big-endian length-prefixed JSON; deliveries append a `msg` record and acks
append an `ack` tombstone, so replaying a log reconstructs the live queue.
Appends are fsynced before the call returns.

The store treats envelope payload bytes as opaque: it parses the 50-byte
header to check addressing and never looks past it.
"""

from __future__ import annotations

import base64
import json
import logging
import os
import secrets
import struct
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from . import crypto
from .directory import USERNAME_RE, NoSuchUserError, UserRecord

log = logging.getLogger("arsecure.relay.store")

MAX_ENVELOPE_BYTES = crypto.MAX_PLAINTEXT + crypto.MIN_ENVELOPE_LEN
MAX_PULL_LIMIT = 100
_LEN = struct.Struct(">I")


class StoreError(Exception):
    pass


class MisaddressedEnvelopeError(StoreError):
    pass


class EnvelopeTooLargeError(StoreError):
    pass


class MalformedEnvelopeError(StoreError):
    pass


@dataclass(frozen=True)
class StoredMessage:
    message_id: bytes
    recipient: str
    sender: str
    envelope: bytes
    received_at: int
    sequence: int


@dataclass
class _Mailbox:
    messages: list[StoredMessage] = field(default_factory=list)
    next_sequence: int = 1
    lock: threading.Lock = field(default_factory=threading.Lock)


def _fsync_append(path: Path, payload: bytes) -> None:
    with open(path, "ab") as handle:
        handle.write(payload)
        handle.flush()
        os.fsync(handle.fileno())


def _encode_record(obj: dict) -> bytes:
    body = json.dumps(obj, separators=(",", ":"), sort_keys=True).encode()
    return _LEN.pack(len(body)) + body


class MailStore:
    """Durable per-recipient FIFO queues plus the user directory file.

    `key_id_lookup` maps a username to the key id of its registered public
    key (None for unknown users); the relay wires it to the directory so
    enqueue can refuse misaddressed envelopes.
    """

    def __init__(self, root: str | Path,
                 key_id_lookup: Callable[[str], bytes | None] | None = None,
                 time_fn: Callable[[], float] = time.time):
        self.root = Path(root)
        self.mail_dir = self.root / "mail"
        self.directory_path = self.root / "directory.jsonl"
        self.mail_dir.mkdir(parents=True, exist_ok=True)
        self._key_id_lookup = key_id_lookup
        self._time_fn = time_fn
        self._boxes: dict[str, _Mailbox] = {}
        self._boxes_lock = threading.Lock()
        self._restore()

    # -- directory persistence ----------------------------------------

    def append_user(self, record: UserRecord) -> None:
        line = json.dumps({
            "username": record.username,
            "public_key": base64.b64encode(record.public_key.data).decode(),
            "salt": base64.b64encode(record.salt).decode(),
            "verifier": base64.b64encode(record.verifier).decode(),
            "registered_at": record.registered_at,
        }, separators=(",", ":"), sort_keys=True)
        _fsync_append(self.directory_path, (line + "\n").encode())

    def load_users(self) -> list[UserRecord]:
        if not self.directory_path.exists():
            return []
        records = []
        for line in self.directory_path.read_text().splitlines():
            if not line.strip():
                continue
            raw = json.loads(line)
            records.append(UserRecord(
                username=raw["username"],
                public_key=crypto.PublicKey(base64.b64decode(raw["public_key"])),
                salt=base64.b64decode(raw["salt"]),
                verifier=base64.b64decode(raw["verifier"]),
                registered_at=raw["registered_at"],
            ))
        return records

    # -- mailbox operations -------------------------------------------

    def enqueue(self, recipient: str, sender: str, envelope: bytes) -> StoredMessage:
        if len(envelope) > MAX_ENVELOPE_BYTES:
            raise EnvelopeTooLargeError("too large")
        try:
            parsed = crypto.MessageEnvelope.from_bytes(envelope)
        except crypto.CryptoError as exc:
            raise MalformedEnvelopeError(str(exc)) from None
        if self._key_id_lookup is not None:
            expected = self._key_id_lookup(recipient)
            if expected is None:
                raise NoSuchUserError("no such user")
            if parsed.recipient_key_id != expected:
                raise MisaddressedEnvelopeError("misaddressed envelope")
        box = self._box(recipient)
        with box.lock:
            message = StoredMessage(
                message_id=secrets.token_bytes(16),
                recipient=recipient,
                sender=sender,
                envelope=envelope,
                received_at=int(self._time_fn()),
                sequence=box.next_sequence,
            )
            record = _encode_record({
                "t": "msg",
                "id": message.message_id.hex(),
                "sender": sender,
                "envelope": base64.b64encode(envelope).decode(),
                "received_at": message.received_at,
                "sequence": message.sequence,
            })
            _fsync_append(self._log_path(recipient), record)
            box.messages.append(message)
            box.next_sequence += 1
        log.info("enqueue recipient=%s sender=%s bytes=%d seq=%d",
                 recipient, sender, len(envelope), message.sequence)
        return message

    def pull(self, recipient: str, after_sequence: int = 0,
             limit: int = MAX_PULL_LIMIT) -> list[StoredMessage]:
        if not 1 <= limit <= MAX_PULL_LIMIT:
            raise ValueError("limit must be in 1..100")
        if after_sequence < 0:
            raise ValueError("after_sequence must be >= 0")
        box = self._box(recipient)
        with box.lock:
            return [m for m in box.messages if m.sequence > after_sequence][:limit]

    def acknowledge(self, recipient: str, up_to_sequence: int) -> int:
        box = self._box(recipient)
        with box.lock:
            keep = [m for m in box.messages if m.sequence > up_to_sequence]
            deleted = len(box.messages) - len(keep)
            if deleted:
                record = _encode_record({"t": "ack", "up_to": up_to_sequence})
                _fsync_append(self._log_path(recipient), record)
                box.messages = keep
        if deleted:
            log.info("ack recipient=%s up_to=%d deleted=%d",
                     recipient, up_to_sequence, deleted)
        return deleted

    def pending_count(self, recipient: str) -> int:
        box = self._box(recipient)
        with box.lock:
            return len(box.messages)

    # -- internals ------------------------------------------------------

    def _box(self, recipient: str) -> _Mailbox:
        with self._boxes_lock:
            box = self._boxes.get(recipient)
            if box is None:
                box = self._boxes[recipient] = _Mailbox()
            return box

    def _log_path(self, recipient: str) -> Path:
        # Usernames are already [a-z0-9_]{3,32}; refuse anything else so a
        # recipient string can never traverse out of the mail directory.
        if not USERNAME_RE.match(recipient):
            raise ValueError(f"unsafe mailbox name: {recipient!r}")
        return self.mail_dir / f"{recipient}.log"

    def _restore(self) -> None:
        for path in sorted(self.mail_dir.glob("*.log")):
            username = path.stem
            box = self._box(username)
            box.messages, box.next_sequence = self._replay(path, username)

    def _replay(self, path: Path, username: str) -> tuple[list[StoredMessage], int]:
        data = path.read_bytes()
        messages: list[StoredMessage] = []
        next_sequence = 1
        offset = 0
        while offset < len(data):
            if offset + 4 > len(data):
                self._truncate(path, offset, "partial length prefix")
                break
            (length,) = _LEN.unpack_from(data, offset)
            start = offset + 4
            end = start + length
            if end > len(data):
                self._truncate(path, offset, "partial record body")
                break
            try:
                record = json.loads(data[start:end])
                kind = record["t"]
            except (ValueError, KeyError, UnicodeDecodeError):
                self._truncate(path, offset, "undecodable record")
                break
            if kind == "msg":
                message = StoredMessage(
                    message_id=bytes.fromhex(record["id"]),
                    recipient=username,
                    sender=record["sender"],
                    envelope=base64.b64decode(record["envelope"]),
                    received_at=record["received_at"],
                    sequence=record["sequence"],
                )
                messages.append(message)
                next_sequence = max(next_sequence, message.sequence + 1)
            elif kind == "ack":
                up_to = record["up_to"]
                messages = [m for m in messages if m.sequence > up_to]
            else:
                self._truncate(path, offset, f"unknown record type {kind!r}")
                break
            offset = end
        return messages, next_sequence

    def _truncate(self, path: Path, offset: int, reason: str) -> None:
        log.warning("truncating corrupt tail of %s at byte %d (%s)",
                    path.name, offset, reason)
        with open(path, "r+b") as handle:
            handle.truncate(offset)
            handle.flush()
            os.fsync(handle.fileno())
