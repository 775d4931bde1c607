"""The secure device ("glasses") client.

All plaintext and private-key handling lives in this process. Local state
under the home directory is encrypted at rest with a key derived from the
login password (a distinct KDF context from the server verifier, so the
relay can never decrypt the files even though it stores the verifier):

    identity.enc   magic | salt(16) | nonce(12) | AEAD(identity JSON)
    contacts.enc   magic | nonce(12) | AEAD(contact book JSON)
    history.enc    magic | nonce(12) | AEAD(conversation JSON)
    config         plain key=value (server_url, cursor) - no secrets
    lock           pid of the process holding the identity
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import secrets
import socket
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

from . import crypto

DEFAULT_HOME = "~/.arsecure"
_MAGIC = b"ARSECENC"
_AT_REST_CONTEXT = b"arsecure-identity-at-rest"


class ClientError(Exception):
    pass


class AlreadyInitializedError(ClientError):
    pass


class NotInitializedError(ClientError):
    pass


class UnlockFailedError(ClientError):
    """Wrong password: the identity file will not decrypt (and the same
    wording covers a server-side login rejection, on purpose)."""


class ContactKeyChangedError(ClientError):
    pass


class ServerUnreachableError(ClientError):
    pass


class LockedError(ClientError):
    pass


class RelayError(ClientError):
    """An ApiError body returned by the relay."""

    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


# -- relay HTTP client ----------------------------------------------------


class RelayClient:
    """Thin urllib wrapper over the relay's JSON API."""

    def __init__(self, base_url: str, timeout: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def _request(self, method: str, path: str, body: dict | None = None,
                 token: bytes | None = None) -> dict:
        request = urllib.request.Request(self.base_url + path, method=method)
        data = None
        if body is not None:
            data = json.dumps(body).encode()
            request.add_header("Content-Type", "application/json")
        if token is not None:
            request.add_header("Authorization",
                               "Bearer " + base64.b64encode(token).decode())
        try:
            with urllib.request.urlopen(request, data=data,
                                        timeout=self.timeout) as resp:
                return json.loads(resp.read())
        except urllib.error.HTTPError as err:
            raw = err.read()
            try:
                parsed = json.loads(raw)
                raise RelayError(err.code, parsed["code"], parsed["message"])
            except (ValueError, KeyError):
                raise RelayError(err.code, "malformed", raw.decode("utf-8",
                                                                   "replace"))
        except (urllib.error.URLError, ConnectionError, socket.timeout) as exc:
            raise ServerUnreachableError("server unreachable") from exc

    def health(self) -> dict:
        return self._request("GET", "/v1/health")

    def register(self, username: str, public_key: crypto.PublicKey,
                 salt: bytes, verifier: bytes) -> dict:
        return self._request("POST", "/v1/register", body={
            "username": username,
            "public_key": base64.b64encode(public_key.data).decode(),
            "salt": base64.b64encode(salt).decode(),
            "verifier": base64.b64encode(verifier).decode(),
        })

    def login(self, username: str, password: str) -> bytes:
        record = self._request("POST", "/v1/login",
                               body={"username": username,
                                     "password": password})
        return base64.b64decode(record["token"])

    def lookup_key(self, username: str) -> crypto.PublicKey:
        record = self._request("GET", f"/v1/keys/{username}")
        return crypto.PublicKey(base64.b64decode(record["public_key"]))

    def send(self, token: bytes, recipient: str, armored: str) -> dict:
        return self._request("POST", "/v1/messages", token=token,
                             body={"recipient": recipient,
                                   "envelope": armored})

    def pull(self, token: bytes, after: int, limit: int = 100) -> list[dict]:
        return self._request(
            "GET", f"/v1/messages?after={after}&limit={limit}",
            token=token)["messages"]

    def ack(self, token: bytes, up_to: int) -> int:
        return self._request("POST", "/v1/messages/ack", token=token,
                             body={"up_to": up_to})["deleted"]


# -- encrypted at-rest files ------------------------------------------------


def _at_rest_key(password: str, salt: bytes) -> bytes:
    # Same KDF as the server verifier but under a context-derived salt, so
    # the two outputs are unrelated even for the same password.
    context_salt = hashlib.sha256(_AT_REST_CONTEXT + salt).digest()[:16]
    return crypto.derive_password_key(password.encode("utf-8"), context_salt)


def _seal_blob(key: bytes, payload: dict, aad: bytes) -> bytes:
    nonce = secrets.token_bytes(12)
    body = json.dumps(payload, separators=(",", ":"), sort_keys=True).encode()
    return nonce + ChaCha20Poly1305(key).encrypt(nonce, body, aad)


def _open_blob(key: bytes, blob: bytes, aad: bytes) -> dict:
    if len(blob) < 12 + 16:
        raise UnlockFailedError("authentication failed")
    try:
        body = ChaCha20Poly1305(key).decrypt(blob[:12], blob[12:], aad)
    except InvalidTag:
        raise UnlockFailedError("authentication failed") from None
    return json.loads(body)


def _write_atomic(path: Path, data: bytes) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


@dataclass(frozen=True)
class LocalIdentity:
    username: str
    keypair: crypto.KeyPair
    server_url: str
    created_at: int


@dataclass
class ClientHome:
    """Paths and plain config for one identity's home directory."""

    root: Path

    def __post_init__(self):
        self.root = Path(self.root).expanduser()

    @property
    def identity_path(self) -> Path:
        return self.root / "identity.enc"

    @property
    def contacts_path(self) -> Path:
        return self.root / "contacts.enc"

    @property
    def history_path(self) -> Path:
        return self.root / "history.enc"

    @property
    def config_path(self) -> Path:
        return self.root / "config"

    @property
    def lock_path(self) -> Path:
        return self.root / "lock"

    def read_config(self) -> dict[str, str]:
        config: dict[str, str] = {}
        if self.config_path.exists():
            for line in self.config_path.read_text().splitlines():
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                name, _, value = line.partition("=")
                config[name.strip()] = value.strip()
        return config

    def write_config(self, config: dict[str, str]) -> None:
        lines = [f"{name}={value}" for name, value in sorted(config.items())]
        _write_atomic(self.config_path, ("\n".join(lines) + "\n").encode())


class _HomeLock:
    """Exclusive per-home lock so the CLI and the agent cannot run against
    the same identity concurrently. Stale locks from dead pids are stolen."""

    def __init__(self, path: Path):
        self.path = path
        self._held = False

    def acquire(self) -> None:
        for _ in range(2):
            try:
                fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            except FileExistsError:
                owner = self._read_owner()
                if owner is not None and _pid_alive(owner):
                    raise LockedError(
                        f"another arsecure process (pid {owner}) holds "
                        f"{self.path}")
                try:
                    self.path.unlink()
                except FileNotFoundError:
                    pass
                continue
            with os.fdopen(fd, "w") as handle:
                handle.write(str(os.getpid()))
            self._held = True
            return
        raise LockedError(f"could not acquire {self.path}")

    def release(self) -> None:
        if self._held:
            try:
                self.path.unlink()
            except FileNotFoundError:
                pass
            self._held = False

    def _read_owner(self) -> int | None:
        try:
            return int(self.path.read_text().strip())
        except (OSError, ValueError):
            return None


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


# -- conversation history ----------------------------------------------------


@dataclass(frozen=True)
class ConversationEntry:
    direction: str  # "sent" | "received"
    peer: str
    text: str | None  # None when flagged undecryptable
    timestamp: int
    message_id: str
    armored: str
    sequence: int | None = None
    flag: str | None = None

    def to_dict(self) -> dict:
        return {
            "direction": self.direction,
            "peer": self.peer,
            "text": self.text,
            "timestamp": self.timestamp,
            "message_id": self.message_id,
            "armored": self.armored,
            "sequence": self.sequence,
            "flag": self.flag,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ConversationEntry":
        return cls(**raw)


# -- lifecycle: init and unlock ----------------------------------------------


def init(home: ClientHome, username: str, password: str,
         server_url: str) -> LocalIdentity:
    """Generate an identity, register it, and write the encrypted files.

    Nothing is written unless registration succeeds, so a failed init
    leaves no local state behind.
    """
    if home.identity_path.exists():
        raise AlreadyInitializedError(f"already initialized: {home.root}")
    encoded = password.encode("utf-8")
    if not 8 <= len(encoded) <= 128:
        raise ClientError("password must be 8..128 bytes")

    keypair = crypto.generate_keypair()
    salt = secrets.token_bytes(16)
    verifier = crypto.derive_password_key(encoded, salt)
    relay = RelayClient(server_url)
    record = relay.register(username, keypair.public_key, salt, verifier)

    identity = LocalIdentity(
        username=record["username"],
        keypair=keypair,
        server_url=server_url,
        created_at=int(time.time()),
    )
    home.root.mkdir(parents=True, exist_ok=True)
    key = _at_rest_key(password, salt)
    blob = _seal_blob(key, {
        "username": identity.username,
        "private_key": base64.b64encode(keypair.private_key).decode(),
        "server_url": server_url,
        "created_at": identity.created_at,
    }, aad=_MAGIC + b"identity")
    _write_atomic(home.identity_path, _MAGIC + salt + blob)
    home.write_config({"server_url": server_url, "cursor": "0"})
    return identity


def unlock(home: ClientHome, password: str) -> "DeviceSession":
    """Decrypt the identity and open a session; takes the home lock.

    The relay login happens lazily if the server is unreachable, so a
    local unlock works offline.
    """
    if not home.identity_path.exists():
        raise NotInitializedError(f"no identity at {home.root}; run init")
    raw = home.identity_path.read_bytes()
    if len(raw) < len(_MAGIC) + 16 or not raw.startswith(_MAGIC):
        raise ClientError("identity file is corrupt")
    salt = raw[len(_MAGIC):len(_MAGIC) + 16]
    key = _at_rest_key(password, salt)
    payload = _open_blob(key, raw[len(_MAGIC) + 16:], aad=_MAGIC + b"identity")

    keypair = crypto.generate_keypair(
        seed=base64.b64decode(payload["private_key"]))
    identity = LocalIdentity(
        username=payload["username"],
        keypair=keypair,
        server_url=payload["server_url"],
        created_at=payload["created_at"],
    )

    lock = _HomeLock(home.lock_path)
    lock.acquire()
    try:
        session = DeviceSession(home, identity, password, key, lock)
        session.try_login()
        return session
    except Exception:
        lock.release()
        raise


class DeviceSession:
    """An unlocked identity: holds the keypair, the at-rest key, the relay
    token, and the decrypted contact book and history, all in memory.

    The password is retained so the session can transparently log in again
    when the relay restarts (server-side tokens are memory-only).
    """

    def __init__(self, home: ClientHome, identity: LocalIdentity,
                 password: str, at_rest_key: bytes, lock: _HomeLock):
        self.home = home
        self.identity = identity
        self._password = password
        self._key = at_rest_key
        self._lock_file = lock
        self._lock = threading.RLock()
        self.relay = RelayClient(identity.server_url)
        self._token: bytes | None = None
        self._contacts: dict[str, dict] = self._load(home.contacts_path,
                                                     b"contacts", {})
        self._history: list[ConversationEntry] = [
            ConversationEntry.from_dict(raw)
            for raw in self._load(home.history_path, b"history",
                                  {"entries": []})["entries"]
        ]
        self._seen_ids = {e.message_id for e in self._history
                          if e.direction == "received"}

    # -- persistence --

    def _load(self, path: Path, tag: bytes, default):
        if not path.exists():
            return default
        raw = path.read_bytes()
        if not raw.startswith(_MAGIC):
            raise ClientError(f"{path.name} is corrupt")
        return _open_blob(self._key, raw[len(_MAGIC):], aad=_MAGIC + tag)

    def _save_contacts(self) -> None:
        blob = _seal_blob(self._key, self._contacts, aad=_MAGIC + b"contacts")
        _write_atomic(self.home.contacts_path, _MAGIC + blob)

    def _save_history(self) -> None:
        payload = {"entries": [e.to_dict() for e in self._history]}
        blob = _seal_blob(self._key, payload, aad=_MAGIC + b"history")
        _write_atomic(self.home.history_path, _MAGIC + blob)

    @property
    def cursor(self) -> int:
        return int(self.home.read_config().get("cursor", "0"))

    def _set_cursor(self, value: int) -> None:
        config = self.home.read_config()
        config["cursor"] = str(value)
        self.home.write_config(config)

    # -- auth --

    def try_login(self) -> bool:
        """Login, mapping auth rejection to the unlock error; unreachable
        server is fine (offline unlock contract)."""
        try:
            self._login()
            return True
        except ServerUnreachableError:
            return False

    def _login(self) -> None:
        try:
            self._token = self.relay.login(self.identity.username,
                                           self._password)
        except RelayError as err:
            if err.code == "authentication_failed":
                raise UnlockFailedError("authentication failed") from None
            raise

    def _authed(self, call):
        """Run a relay call, logging in (again) on missing/expired token."""
        with self._lock:
            if self._token is None:
                self._login()
            try:
                return call(self._token)
            except RelayError as err:
                if err.code != "unauthorized":
                    raise
                self._login()
                return call(self._token)

    # -- contacts / TOFU --

    def contacts(self) -> list[dict]:
        with self._lock:
            return [
                {"username": name, "key_id": entry["key_id"],
                 "pinned_at": entry["pinned_at"]}
                for name, entry in sorted(self._contacts.items())
            ]

    def pinned_key(self, username: str) -> crypto.PublicKey | None:
        entry = self._contacts.get(username)
        if entry is None:
            return None
        return crypto.PublicKey(base64.b64decode(entry["public_key"]))

    def _pin(self, username: str, public_key: crypto.PublicKey) -> None:
        self._contacts[username] = {
            "public_key": base64.b64encode(public_key.data).decode(),
            "key_id": crypto.key_id(public_key).hex(),
            "pinned_at": int(time.time()),
        }
        self._save_contacts()

    def add_contact(self, username: str, repin: bool = False) -> dict:
        """Look the user up in the directory and pin (or explicitly repin)."""
        with self._lock:
            directory_key = self.relay.lookup_key(username)
            pinned = self.pinned_key(username)
            if pinned is not None and pinned != directory_key and not repin:
                raise ContactKeyChangedError("contact key changed - refusing")
            self._pin(username, directory_key)
            return self._contacts[username]

    def _resolve_recipient(self, username: str) -> crypto.PublicKey:
        """Directory lookup on every send; encryption always targets the
        pinned key, and a directory/pin mismatch refuses outright."""
        directory_key = self.relay.lookup_key(username)
        pinned = self.pinned_key(username)
        if pinned is None:
            self._pin(username, directory_key)
            return directory_key
        if pinned != directory_key:
            raise ContactKeyChangedError("contact key changed - refusing")
        return pinned

    # -- messaging --

    def send(self, recipient: str, text: str) -> ConversationEntry:
        encoded = text.encode("utf-8")
        if len(encoded) > crypto.MAX_PLAINTEXT:
            raise ClientError("too large")
        with self._lock:
            recipient_key = self._resolve_recipient(recipient)
            envelope = crypto.encrypt_message(encoded, self.identity.keypair,
                                              recipient_key)
            armored = crypto.armor(envelope)
            record = self._authed(
                lambda token: self.relay.send(token, recipient, armored))
            entry = ConversationEntry(
                direction="sent",
                peer=recipient,
                text=text,
                timestamp=int(time.time()),
                message_id=record["message_id"],
                armored=armored,
                sequence=record["sequence"],
            )
            self._history.append(entry)
            self._save_history()
            return entry

    def inbox(self) -> list[ConversationEntry]:
        """Pull everything after the cursor, decrypt, record, ack.

        Undecryptable messages stay visible as flagged entries and are
        still acknowledged so they cannot wedge the mailbox. Duplicate
        deliveries (relay retries, cursor replays) are dropped by
        message id.
        """
        with self._lock:
            new_entries: list[ConversationEntry] = []
            highest = self.cursor
            while True:
                batch = self._authed(
                    lambda token: self.relay.pull(token, after=highest))
                if not batch:
                    break
                for message in batch:
                    highest = max(highest, message["sequence"])
                    if message["message_id"] in self._seen_ids:
                        continue
                    new_entries.append(self._ingest(message))
                if len(batch) < 100:
                    break
            if highest > self.cursor:
                self._history.extend(new_entries)
                self._seen_ids.update(e.message_id for e in new_entries)
                self._save_history()
                self._authed(
                    lambda token: self.relay.ack(token, up_to=highest))
                self._set_cursor(highest)
            return new_entries

    def _ingest(self, message: dict) -> ConversationEntry:
        sender = message["sender"]
        armored = message["envelope"]
        base = {
            "direction": "received",
            "peer": sender,
            "timestamp": message["received_at"],
            "message_id": message["message_id"],
            "armored": armored,
            "sequence": message["sequence"],
        }
        try:
            envelope = crypto.dearmor(armored)
        except crypto.CryptoError:
            return ConversationEntry(text=None, flag="undecryptable "
                                     f"(id {message['message_id']})", **base)
        sender_key = self.pinned_key(sender)
        if sender_key is None:
            try:
                sender_key = self.relay.lookup_key(sender)
            except RelayError:
                return ConversationEntry(
                    text=None,
                    flag=f"sender unknown (id {message['message_id']})",
                    **base)
            self._pin(sender, sender_key)
        if envelope.sender_key_id != crypto.key_id(sender_key):
            return ConversationEntry(
                text=None,
                flag=f"sender key mismatch (id {message['message_id']})",
                **base)
        try:
            plaintext = crypto.decrypt_message(envelope,
                                               self.identity.keypair,
                                               sender_key)
            text = plaintext.decode("utf-8")
        except (crypto.CryptoError, UnicodeDecodeError):
            return ConversationEntry(text=None, flag="undecryptable "
                                     f"(id {message['message_id']})", **base)
        return ConversationEntry(text=text, **base)

    # -- views --

    def conversation(self, peer: str) -> list[ConversationEntry]:
        with self._lock:
            return [e for e in self._history if e.peer == peer]

    def phone_view(self, peer: str) -> list[str]:
        """What the untrusted phone layer holds for this conversation:
        armored ciphertext only."""
        with self._lock:
            return [e.armored for e in self._history if e.peer == peer]

    def history(self) -> list[ConversationEntry]:
        with self._lock:
            return list(self._history)

    def status(self) -> dict:
        with self._lock:
            return {
                "username": self.identity.username,
                "server_url": self.identity.server_url,
                "contacts": len(self._contacts),
                "history_entries": len(self._history),
                "cursor": self.cursor,
            }

    def close(self) -> None:
        self._lock_file.release()

    def __enter__(self) -> "DeviceSession":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
