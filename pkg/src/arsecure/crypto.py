"""Cryptographic core: identity keys, the message envelope, and ASCII armor.

This is the only module that handles plaintext and private key material.
Everything above it (relay, storage, phone-side UI) moves opaque envelope
bytes around.

Envelope wire layout (fixed order, no padding)::

    version(1)=0x01 | suite(1)=0x01 | ephemeral_public(32)
    | sender_key_id(8) | recipient_key_id(8) | ciphertext(N+16)

The AEAD key is derived per message: a fresh ephemeral X25519 share gives
confidentiality, the static sender->recipient share gives sender
authenticity, and HKDF binds both to the header fields. Because the key is
unique per message the AEAD nonce is fixed at zero.
"""

from __future__ import annotations

import base64
import hashlib
import secrets
from dataclasses import dataclass
from typing import Callable

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.argon2 import Argon2id
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

ENVELOPE_VERSION = 0x01
SUITE_X25519_HKDF_CHACHA = 0x01
HEADER_LEN = 50
TAG_LEN = 16
MIN_ENVELOPE_LEN = HEADER_LEN + TAG_LEN
MAX_PLAINTEXT = 64 * 1024

KDF_INFO_PREFIX = b"arsecure-v1"
_ZERO_NONCE = b"\x00" * 12

ARMOR_HEADER = "-----BEGIN ARSECURE MESSAGE-----"
ARMOR_FOOTER = "-----END ARSECURE MESSAGE-----"
_ARMOR_WIDTH = 64

RandomSource = Callable[[int], bytes]


class CryptoError(Exception):
    """Base class for all crypto-layer failures."""


class DegeneratePublicKeyError(CryptoError):
    """DH against this public key yields an all-zero shared secret."""


class WrongPartyError(CryptoError):
    """Envelope key ids do not match the supplied keys."""


class AuthenticationFailureError(CryptoError):
    """AEAD tag verification failed; no plaintext is released."""


class UnsupportedFormatError(CryptoError):
    """Unknown envelope version or cipher suite."""


class MalformedArmorError(CryptoError):
    """Armored text is not a well-formed ARSECURE MESSAGE block."""


class TruncatedEnvelopeError(CryptoError):
    """Decoded envelope is shorter than the minimum 66 bytes."""


@dataclass(frozen=True)
class PublicKey:
    """A raw 32-byte X25519 public key."""

    data: bytes

    def __post_init__(self) -> None:
        if len(self.data) != 32:
            raise ValueError("public key must be exactly 32 bytes")


@dataclass(frozen=True)
class KeyPair:
    """X25519 identity key material. private_key is the 32-byte seed scalar."""

    private_key: bytes
    public_key: PublicKey


def generate_keypair(seed: bytes | None = None) -> KeyPair:
    """Deterministically derive a keypair from a 32-byte seed (random if omitted)."""
    if seed is None:
        seed = secrets.token_bytes(32)
    if len(seed) != 32:
        raise ValueError("seed must be exactly 32 bytes")
    priv = X25519PrivateKey.from_private_bytes(seed)
    return KeyPair(seed, PublicKey(priv.public_key().public_bytes_raw()))


def key_id(pk: PublicKey) -> bytes:
    """8-byte key fingerprint: the first 8 bytes of SHA-256 over the key bytes."""
    return hashlib.sha256(pk.data).digest()[:8]


def _dh(private_seed: bytes, peer: PublicKey) -> bytes:
    priv = X25519PrivateKey.from_private_bytes(private_seed)
    try:
        return priv.exchange(X25519PublicKey.from_public_bytes(peer.data))
    except ValueError as exc:
        # OpenSSL refuses the all-zero shared secret produced by low-order points.
        raise DegeneratePublicKeyError("degenerate public key") from exc


@dataclass(frozen=True)
class MessageEnvelope:
    """The versioned ciphertext container; the only thing that leaves the device."""

    version: int
    suite: int
    ephemeral_public: bytes
    sender_key_id: bytes
    recipient_key_id: bytes
    ciphertext: bytes

    @property
    def header(self) -> bytes:
        return (
            bytes([self.version, self.suite])
            + self.ephemeral_public
            + self.sender_key_id
            + self.recipient_key_id
        )

    def to_bytes(self) -> bytes:
        return self.header + self.ciphertext

    @classmethod
    def from_bytes(cls, data: bytes) -> "MessageEnvelope":
        if len(data) < MIN_ENVELOPE_LEN:
            raise TruncatedEnvelopeError("truncated envelope")
        version, suite = data[0], data[1]
        if version != ENVELOPE_VERSION or suite != SUITE_X25519_HKDF_CHACHA:
            raise UnsupportedFormatError("unsupported format")
        return cls(
            version=version,
            suite=suite,
            ephemeral_public=data[2:34],
            sender_key_id=data[34:42],
            recipient_key_id=data[42:50],
            ciphertext=data[50:],
        )


def check_plaintext(body: bytes) -> None:
    """Enforce the transport plaintext contract: valid UTF-8, at most 64 KiB."""
    if len(body) > MAX_PLAINTEXT:
        raise ValueError("plaintext exceeds the 64 KiB transport cap")
    try:
        body.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ValueError("plaintext must be valid UTF-8") from exc


def _derive_message_key(shared_eph: bytes, shared_static: bytes, eph_pub: bytes,
                        sender_kid: bytes, recipient_kid: bytes) -> bytes:
    return HKDF(
        algorithm=hashes.SHA256(),
        length=32,
        salt=None,
        info=KDF_INFO_PREFIX + eph_pub + sender_kid + recipient_kid,
    ).derive(shared_eph + shared_static)


def encrypt_message(
    plaintext: bytes,
    sender: KeyPair,
    recipient_pk: PublicKey,
    rng: RandomSource = secrets.token_bytes,
) -> MessageEnvelope:
    """Seal plaintext from sender to recipient with a fresh ephemeral share.

    AEAD key = HKDF-SHA-256(DH(eph, recipient) || DH(sender, recipient)),
    bound to the envelope header via the HKDF info and the AEAD associated
    data. The injected rng exists so tests can fix the ephemeral.
    """
    check_plaintext(plaintext)
    eph = generate_keypair(rng(32))
    sender_kid = key_id(sender.public_key)
    recipient_kid = key_id(recipient_pk)
    key = _derive_message_key(
        _dh(eph.private_key, recipient_pk),
        _dh(sender.private_key, recipient_pk),
        eph.public_key.data,
        sender_kid,
        recipient_kid,
    )
    header = (
        bytes([ENVELOPE_VERSION, SUITE_X25519_HKDF_CHACHA])
        + eph.public_key.data
        + sender_kid
        + recipient_kid
    )
    ciphertext = ChaCha20Poly1305(key).encrypt(_ZERO_NONCE, plaintext, header)
    return MessageEnvelope(
        version=ENVELOPE_VERSION,
        suite=SUITE_X25519_HKDF_CHACHA,
        ephemeral_public=eph.public_key.data,
        sender_key_id=sender_kid,
        recipient_key_id=recipient_kid,
        ciphertext=ciphertext,
    )


def decrypt_message(env: MessageEnvelope, recipient: KeyPair, sender_pk: PublicKey) -> bytes:
    """Open an envelope; raises instead of ever releasing partial plaintext."""
    if env.version != ENVELOPE_VERSION or env.suite != SUITE_X25519_HKDF_CHACHA:
        raise UnsupportedFormatError("unsupported format")
    if key_id(sender_pk) != env.sender_key_id:
        raise WrongPartyError("wrong party: sender key id mismatch")
    if key_id(recipient.public_key) != env.recipient_key_id:
        raise WrongPartyError("wrong party: recipient key id mismatch")
    eph_pk = PublicKey(env.ephemeral_public)
    key = _derive_message_key(
        _dh(recipient.private_key, eph_pk),
        _dh(recipient.private_key, sender_pk),
        env.ephemeral_public,
        env.sender_key_id,
        env.recipient_key_id,
    )
    try:
        return ChaCha20Poly1305(key).decrypt(_ZERO_NONCE, env.ciphertext, env.header)
    except InvalidTag as exc:
        raise AuthenticationFailureError("authentication failure") from exc


def armor(env: "MessageEnvelope | bytes") -> str:
    """Canonical printable encoding: LF line endings, base64 body at 64 columns.

    Accepts raw envelope bytes as well so relays can re-armor without
    interpreting them.
    """
    raw = env if isinstance(env, bytes) else env.to_bytes()
    body = base64.b64encode(raw).decode("ascii")
    lines = [body[i : i + _ARMOR_WIDTH] for i in range(0, len(body), _ARMOR_WIDTH)]
    return "\n".join([ARMOR_HEADER] + lines + [ARMOR_FOOTER])


def dearmor(text: str) -> MessageEnvelope:
    """Parse armored text back to an envelope.

    Tolerates CRLF, trailing spaces, and arbitrary whitespace inside the
    body; ciphertext gets pasted through channels that reflow text.
    """
    lines = [line.strip() for line in text.strip().splitlines()]
    if len(lines) < 2 or lines[0] != ARMOR_HEADER or lines[-1] != ARMOR_FOOTER:
        raise MalformedArmorError("malformed armor")
    body = "".join("".join(line.split()) for line in lines[1:-1])
    try:
        raw = base64.b64decode(body.encode("ascii"), validate=True)
    except Exception as exc:
        raise MalformedArmorError("malformed armor") from exc
    return MessageEnvelope.from_bytes(raw)


def derive_password_key(password: bytes, salt: bytes) -> bytes:
    """Argon2id, memory 64 MiB, 3 iterations, 1 lane, 32-byte output."""
    if len(salt) != 16:
        raise ValueError("salt must be exactly 16 bytes")
    return Argon2id(salt=salt, length=32, iterations=3, lanes=1, memory_cost=64 * 1024).derive(
        password
    )
