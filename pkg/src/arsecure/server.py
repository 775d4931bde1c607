"""HTTP/JSON relay service binding the directory and the mailbox store.

The relay sees armored envelopes only: request paths and status codes are
logged, bodies never are. All storage writes are fsynced by the store before
a handler responds, so shutdown has nothing left to flush.
"""

from __future__ import annotations

import argparse
import base64
import binascii
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable
from urllib.parse import parse_qs, urlparse

from . import crypto, directory as directory_mod, store as store_mod

log = logging.getLogger("arsecure.relay")

DEFAULT_BIND = "127.0.0.1:7070"
DEFAULT_STORAGE = "./arsecure-data"
DEFAULT_TOKEN_TTL_HOURS = 24.0
MAX_BODY_BYTES = 256 * 1024

_STATUS_BY_CODE = {
    "invalid_username": 400,
    "username_taken": 409,
    "authentication_failed": 401,
    "unauthorized": 401,
    "no_such_user": 404,
    "misaddressed_envelope": 422,
    "too_large": 413,
    "malformed": 400,
}


class ApiError(Exception):
    """An error the API reports as {"code", "message"} JSON.

    The code enum is closed; status defaults from the code except for
    unknown routes, which are 404 with code "malformed".
    """

    def __init__(self, code: str, message: str, status: int | None = None):
        assert code in _STATUS_BY_CODE
        super().__init__(message)
        self.code = code
        self.message = message
        self.status = status if status is not None else _STATUS_BY_CODE[code]

    def body(self) -> bytes:
        return _json_bytes({"code": self.code, "message": self.message})


def _json_bytes(obj) -> bytes:
    return json.dumps(obj, separators=(",", ":"), sort_keys=True).encode()


def parse_bind(bind: str) -> tuple[str, int]:
    host, _, port = bind.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"bind address must be host:port, got {bind!r}")
    return host, int(port)


@dataclass
class ServeConfig:
    bind: str = DEFAULT_BIND
    storage: Path = field(default_factory=lambda: Path(DEFAULT_STORAGE))
    token_ttl_hours: float = DEFAULT_TOKEN_TTL_HOURS


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    # -- plumbing -------------------------------------------------------

    @property
    def relay(self) -> "RelayServer":
        return self.server.relay  # type: ignore[attr-defined]

    def log_message(self, fmt, *args):
        # Method, path, status only. Envelope bodies must never reach logs.
        log.info("%s %s", self.address_string(), fmt % args)

    def _respond(self, status: int, body: bytes) -> None:
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _respond_json(self, status: int, obj) -> None:
        self._respond(status, _json_bytes(obj))

    def _read_json(self) -> dict:
        length_header = self.headers.get("Content-Length")
        try:
            length = int(length_header)
        except (TypeError, ValueError):
            raise ApiError("malformed", "missing or invalid content length")
        if length > MAX_BODY_BYTES:
            raise ApiError("too_large", "request body too large")
        raw = self.rfile.read(length)
        try:
            body = json.loads(raw)
        except (ValueError, UnicodeDecodeError):
            raise ApiError("malformed", "request body is not valid JSON")
        if not isinstance(body, dict):
            raise ApiError("malformed", "request body must be a JSON object")
        return body

    def _field(self, body: dict, name: str, kind=str):
        value = body.get(name)
        if not isinstance(value, kind) or isinstance(value, bool):
            raise ApiError("malformed", f"field {name!r} missing or wrong type")
        return value

    def _b64_field(self, body: dict, name: str, expect_len: int) -> bytes:
        try:
            decoded = base64.b64decode(self._field(body, name), validate=True)
        except binascii.Error:
            raise ApiError("malformed", f"field {name!r} is not valid base64")
        if len(decoded) != expect_len:
            raise ApiError("malformed", f"field {name!r} must decode to "
                                        f"{expect_len} bytes")
        return decoded

    def _authenticate(self) -> str:
        header = self.headers.get("Authorization", "")
        scheme, _, value = header.partition(" ")
        if scheme != "Bearer" or not value:
            raise ApiError("unauthorized", "unauthorized")
        try:
            token = base64.b64decode(value, validate=True)
        except binascii.Error:
            raise ApiError("unauthorized", "unauthorized")
        try:
            return self.relay.directory.validate_token(token)
        except directory_mod.UnauthorizedError:
            raise ApiError("unauthorized", "unauthorized")

    # -- dispatch -------------------------------------------------------

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")

    def _dispatch(self, method: str) -> None:
        url = urlparse(self.path)
        try:
            handler = self._route(method, url.path)
            handler(url)
        except ApiError as err:
            self._respond(err.status, err.body())
        except Exception:
            log.exception("unhandled error on %s %s", method, url.path)
            self._respond(500, _json_bytes(
                {"code": "malformed", "message": "internal error"}))

    def _route(self, method: str, path: str):
        if method == "GET" and path == "/v1/health":
            return self._handle_health
        if method == "POST" and path == "/v1/register":
            return self._handle_register
        if method == "POST" and path == "/v1/login":
            return self._handle_login
        if method == "GET" and path.startswith("/v1/keys/"):
            return self._handle_keys
        if method == "POST" and path == "/v1/messages":
            return self._handle_send
        if method == "GET" and path == "/v1/messages":
            return self._handle_pull
        if method == "POST" and path == "/v1/messages/ack":
            return self._handle_ack
        raise ApiError("malformed", "unknown route", status=404)

    # -- endpoints ------------------------------------------------------

    def _handle_health(self, url) -> None:
        self._respond(200, b'{"status":"ok","version":"1"}')

    def _handle_register(self, url) -> None:
        body = self._read_json()
        username = self._field(body, "username")
        public_key = crypto.PublicKey(self._b64_field(body, "public_key", 32))
        salt = self._b64_field(body, "salt", 16)
        verifier = self._b64_field(body, "verifier", 32)
        try:
            record = self.relay.directory.register(username, public_key, salt,
                                                   verifier)
        except directory_mod.InvalidUsernameError:
            raise ApiError("invalid_username", "invalid username")
        except directory_mod.UsernameTakenError:
            raise ApiError("username_taken", "username taken")
        self._respond_json(201, {
            "username": record.username,
            "public_key": base64.b64encode(record.public_key.data).decode(),
            "registered_at": record.registered_at,
        })

    def _handle_login(self, url) -> None:
        body = self._read_json()
        username = self._field(body, "username")
        password = self._field(body, "password")
        try:
            session = self.relay.directory.login(username, password)
        except directory_mod.AuthenticationFailedError:
            raise ApiError("authentication_failed", "authentication failed")
        self._respond_json(200, {
            "token": base64.b64encode(session.token).decode(),
            "expires_at": session.expires_at,
        })

    def _handle_keys(self, url) -> None:
        username = url.path[len("/v1/keys/"):]
        try:
            info = self.relay.directory.lookup_key(username)
        except directory_mod.NoSuchUserError:
            raise ApiError("no_such_user", "no such user")
        self._respond_json(200, {
            "username": info.username,
            "public_key": base64.b64encode(info.public_key.data).decode(),
            "registered_at": info.registered_at,
        })

    def _handle_send(self, url) -> None:
        sender = self._authenticate()
        body = self._read_json()
        recipient = self._field(body, "recipient")
        armored = self._field(body, "envelope")
        try:
            envelope = crypto.dearmor(armored).to_bytes()
        except crypto.CryptoError:
            raise ApiError("malformed", "envelope is not valid armor")
        try:
            canonical = directory_mod.canonical_username(recipient)
        except directory_mod.InvalidUsernameError:
            raise ApiError("no_such_user", "no such user")
        try:
            message = self.relay.store.enqueue(canonical, sender, envelope)
        except directory_mod.NoSuchUserError:
            raise ApiError("no_such_user", "no such user")
        except store_mod.MisaddressedEnvelopeError:
            raise ApiError("misaddressed_envelope", "misaddressed envelope")
        except store_mod.EnvelopeTooLargeError:
            raise ApiError("too_large", "too large")
        except store_mod.MalformedEnvelopeError:
            raise ApiError("malformed", "envelope does not parse")
        self._respond_json(201, {
            "message_id": message.message_id.hex(),
            "sequence": message.sequence,
        })

    def _handle_pull(self, url) -> None:
        # The mailbox is derived from the token, never from the query, so
        # cross-user reads are structurally impossible.
        username = self._authenticate()
        params = parse_qs(url.query)
        after = self._int_param(params, "after", default=0, low=0,
                                high=2**62)
        limit = self._int_param(params, "limit", default=store_mod.MAX_PULL_LIMIT,
                                low=1, high=store_mod.MAX_PULL_LIMIT)
        messages = self.relay.store.pull(username, after_sequence=after,
                                         limit=limit)
        self._respond_json(200, {"messages": [
            {
                "message_id": m.message_id.hex(),
                "sender": m.sender,
                "sequence": m.sequence,
                "received_at": m.received_at,
                "envelope": crypto.armor(m.envelope),
            }
            for m in messages
        ]})

    def _handle_ack(self, url) -> None:
        username = self._authenticate()
        body = self._read_json()
        up_to = self._field(body, "up_to", kind=int)
        if up_to < 0:
            raise ApiError("malformed", "up_to must be >= 0")
        deleted = self.relay.store.acknowledge(username, up_to)
        self._respond_json(200, {"deleted": deleted})

    @staticmethod
    def _int_param(params: dict, name: str, default: int, low: int,
                   high: int) -> int:
        values = params.get(name)
        if values is None:
            return default
        try:
            value = int(values[-1])
        except ValueError:
            raise ApiError("malformed", f"query param {name!r} must be an integer")
        if not low <= value <= high:
            raise ApiError("malformed", f"query param {name!r} out of range")
        return value


class _Server(ThreadingHTTPServer):
    daemon_threads = True


class RelayServer:
    """A running relay: storage, directory, and HTTP listener."""

    def __init__(self, config: ServeConfig,
                 time_fn: Callable[[], float] = time.time):
        self.config = config
        self.directory = directory_mod.Directory(
            token_lifetime_s=int(config.token_ttl_hours * 3600),
            time_fn=time_fn,
            persist_user=lambda record: self.store.append_user(record),
        )
        self.store = store_mod.MailStore(
            config.storage,
            key_id_lookup=self.directory.key_id_of,
            time_fn=time_fn,
        )
        self.directory.preload(self.store.load_users())
        host, port = parse_bind(config.bind)
        self._httpd = _Server((host, port), _Handler)
        self._httpd.relay = self  # type: ignore[attr-defined]
        self._thread: threading.Thread | None = None

    @property
    def host(self) -> str:
        return self._httpd.server_address[0]

    @property
    def port(self) -> int:
        return self._httpd.server_address[1]

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def start(self) -> "RelayServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever,
                                        name="arsecure-relay", daemon=True)
        self._thread.start()
        log.info("relay listening on %s:%d", self.host, self.port)
        return self

    def run_forever(self) -> None:
        log.info("relay listening on %s:%d", self.host, self.port)
        try:
            self._httpd.serve_forever()
        except KeyboardInterrupt:
            pass
        finally:
            self._httpd.server_close()

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)


def serve(config: ServeConfig,
          time_fn: Callable[[], float] = time.time) -> RelayServer:
    """Start a relay in a background thread; caller owns stop()."""
    return RelayServer(config, time_fn=time_fn).start()


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="arsecure-relay",
        description="ARSecure store-and-forward relay server")
    parser.add_argument("--bind",
                        default=os.environ.get("ARSECURE_BIND", DEFAULT_BIND),
                        help="host:port to listen on")
    parser.add_argument("--storage",
                        default=os.environ.get("ARSECURE_STORAGE",
                                               DEFAULT_STORAGE),
                        help="storage root directory")
    parser.add_argument("--token-ttl", type=float,
                        default=float(os.environ.get("ARSECURE_TOKEN_TTL",
                                                     DEFAULT_TOKEN_TTL_HOURS)),
                        help="session token lifetime in hours")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO,
                        format="%(asctime)s %(name)s %(message)s")
    config = ServeConfig(bind=args.bind, storage=Path(args.storage),
                         token_ttl_hours=args.token_ttl)
    try:
        server = RelayServer(config)
    except OSError as exc:
        print(f"error: cannot start relay: {exc}", flush=True)
        return 1
    print(f"arsecure relay listening on {server.host}:{server.port}",
          flush=True)
    print(f"storage root: {config.storage}", flush=True)
    server.run_forever()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
