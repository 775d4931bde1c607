"""Key directory and password authentication (server-side, storage-agnostic).

Binds usernames to public keys at registration and issues opaque session
tokens on password login. The server stores only (salt, Argon2id verifier);
raw passwords exist here just long enough to recompute the verifier.
"""

from __future__ import annotations

import hmac
import re
import secrets
import threading
import time
from dataclasses import dataclass
from typing import Callable, Iterable

from . import crypto

USERNAME_RE = re.compile(r"^[a-z0-9_]{3,32}$")
MIN_PASSWORD_BYTES = 8
MAX_PASSWORD_BYTES = 128
DEFAULT_TOKEN_LIFETIME_S = 24 * 3600


class DirectoryError(Exception):
    pass


class InvalidUsernameError(DirectoryError):
    pass


class UsernameTakenError(DirectoryError):
    pass


class WeakPasswordError(DirectoryError):
    pass


class AuthenticationFailedError(DirectoryError):
    """Single error for unknown user and wrong password alike."""


class UnauthorizedError(DirectoryError):
    pass


class NoSuchUserError(DirectoryError):
    pass


@dataclass(frozen=True)
class UserRecord:
    username: str
    public_key: crypto.PublicKey
    salt: bytes
    verifier: bytes
    registered_at: int


@dataclass(frozen=True)
class PublicUserInfo:
    """The only shape lookups ever expose: no salt, no verifier."""

    username: str
    public_key: crypto.PublicKey
    registered_at: int


@dataclass(frozen=True)
class SessionToken:
    token: bytes
    username: str
    expires_at: int


def canonical_username(name: str) -> str:
    """Lowercase and validate; usernames are case-insensitive by construction."""
    canonical = name.lower()
    if not USERNAME_RE.match(canonical):
        raise InvalidUsernameError("invalid username")
    return canonical


def derive_verifier(password: str, salt: bytes) -> bytes:
    """Argon2id(password, salt) with the pinned cost parameters."""
    encoded = password.encode("utf-8")
    if not MIN_PASSWORD_BYTES <= len(encoded) <= MAX_PASSWORD_BYTES:
        raise WeakPasswordError("weak or oversized password")
    return crypto.derive_password_key(encoded, salt)


# Equalizes the work done for unknown usernames at login so the cheap path
# does not trivially reveal user existence.
_DUMMY_SALT = b"\x00" * 16


class Directory:
    """In-memory user/session state with an optional persistence hook.

    `persist_user` is called under the directory lock after a registration
    wins; the relay wires it to the storage layer's append. Session tokens
    are deliberately memory-only: clients just log in again after a relay
    restart.
    """

    def __init__(
        self,
        token_lifetime_s: int = DEFAULT_TOKEN_LIFETIME_S,
        time_fn: Callable[[], float] = time.time,
        persist_user: Callable[[UserRecord], None] | None = None,
    ):
        self._users: dict[str, UserRecord] = {}
        self._sessions: dict[bytes, SessionToken] = {}
        self._lock = threading.Lock()
        self._token_lifetime_s = token_lifetime_s
        self._time_fn = time_fn
        self._persist_user = persist_user

    def preload(self, records: Iterable[UserRecord]) -> None:
        """Adopt previously persisted records (restore path, no re-persist)."""
        with self._lock:
            for record in records:
                self._users[record.username] = record

    def register(self, username: str, public_key: crypto.PublicKey, salt: bytes,
                 verifier: bytes) -> UserRecord:
        canonical = canonical_username(username)
        if len(salt) != 16 or len(verifier) != 32:
            raise ValueError("salt must be 16 bytes and verifier 32 bytes")
        record = UserRecord(
            username=canonical,
            public_key=public_key,
            salt=salt,
            verifier=verifier,
            registered_at=int(self._time_fn()),
        )
        with self._lock:
            if canonical in self._users:
                raise UsernameTakenError("username taken")
            if self._persist_user is not None:
                self._persist_user(record)
            self._users[canonical] = record
        return record

    def login(self, username: str, password: str) -> SessionToken:
        try:
            canonical = canonical_username(username)
        except InvalidUsernameError:
            canonical = None
        with self._lock:
            record = self._users.get(canonical) if canonical else None
        if record is None:
            # Burn the same KDF cost as a real check before failing.
            try:
                derive_verifier(password, _DUMMY_SALT)
            except WeakPasswordError:
                pass
            raise AuthenticationFailedError("authentication failed")
        try:
            candidate = derive_verifier(password, record.salt)
        except WeakPasswordError:
            raise AuthenticationFailedError("authentication failed") from None
        if not hmac.compare_digest(candidate, record.verifier):
            raise AuthenticationFailedError("authentication failed")
        session = SessionToken(
            token=secrets.token_bytes(32),
            username=record.username,
            expires_at=int(self._time_fn()) + self._token_lifetime_s,
        )
        with self._lock:
            self._sessions[session.token] = session
        return session

    def lookup_key(self, username: str) -> PublicUserInfo:
        try:
            canonical = canonical_username(username)
        except InvalidUsernameError:
            raise NoSuchUserError("no such user") from None
        with self._lock:
            record = self._users.get(canonical)
        if record is None:
            raise NoSuchUserError("no such user")
        return PublicUserInfo(record.username, record.public_key, record.registered_at)

    def key_id_of(self, username: str) -> bytes | None:
        """Key id of a registered user's key, or None if unknown."""
        try:
            return crypto.key_id(self.lookup_key(username).public_key)
        except NoSuchUserError:
            return None

    def validate_token(self, token: bytes) -> str:
        now = self._time_fn()
        with self._lock:
            session = self._sessions.get(token)
            if session is None:
                raise UnauthorizedError("unauthorized")
            if now >= session.expires_at:
                del self._sessions[token]
                raise UnauthorizedError("unauthorized")
            return session.username
