"""Localhost device-agent API for the phone-side UI.

Serves the unlocked device session to a browser on the same machine. The
boundary is enforced three ways: the listener refuses non-loopback binds,
every request must carry the per-launch `X-Device-Session` secret, and the
phone-view endpoint only ever returns armored ciphertext, so the UI layer
never holds keys or any plaintext it was not explicitly handed.
"""

from __future__ import annotations

import hmac
import json
import logging
import secrets
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from . import __version__, client as client_mod
from .server import parse_bind

log = logging.getLogger("arsecure.agent")

DEFAULT_AGENT_BIND = "127.0.0.1:7171"
_LOOPBACK_HOSTS = {"127.0.0.1", "localhost", "::1"}


class _AgentHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    @property
    def agent(self) -> "DeviceAgent":
        return self.server.agent  # type: ignore[attr-defined]

    def log_message(self, fmt, *args):
        log.info("%s", fmt % args)

    def _respond(self, status: int, obj) -> None:
        body = json.dumps(obj).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self._cors_headers()
        self.end_headers()
        self.wfile.write(body)

    def _cors_headers(self) -> None:
        # The UI page is served from a different origin (file:// or a dev
        # server); the session secret, not the origin, is the auth boundary.
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Headers",
                         "X-Device-Session, Content-Type")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")

    def do_OPTIONS(self):
        self.send_response(204)
        self.send_header("Content-Length", "0")
        self._cors_headers()
        self.end_headers()

    def _authorized(self) -> bool:
        supplied = self.headers.get("X-Device-Session", "")
        return hmac.compare_digest(supplied, self.agent.secret)

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")

    def _dispatch(self, method: str) -> None:
        if not self._authorized():
            self._respond(401, {"error": "unauthorized"})
            return
        try:
            self._route(method)
        except client_mod.ContactKeyChangedError as err:
            self._respond(409, {"error": str(err)})
        except client_mod.ServerUnreachableError as err:
            self._respond(502, {"error": str(err)})
        except client_mod.RelayError as err:
            self._respond(err.status, {"error": err.message})
        except client_mod.ClientError as err:
            status = 413 if str(err) == "too large" else 400
            self._respond(status, {"error": str(err)})
        except Exception:
            log.exception("agent request failed: %s %s", method, self.path)
            self._respond(500, {"error": "internal error"})

    def _route(self, method: str) -> None:
        session = self.agent.session
        path = self.path.split("?", 1)[0]
        if method == "GET" and path == "/device/v1/status":
            self.agent.sync_quietly()
            status = session.status()
            status["version"] = __version__
            self._respond(200, status)
        elif method == "GET" and path == "/device/v1/contacts":
            self._respond(200, {"contacts": session.contacts()})
        elif method == "POST" and path == "/device/v1/send":
            body = self._read_json()
            recipient = body.get("recipient")
            text = body.get("text")
            if not isinstance(recipient, str) or not isinstance(text, str):
                self._respond(400, {"error": "recipient and text required"})
                return
            entry = session.send(recipient, text)
            self._respond(201, {"message_id": entry.message_id,
                                "sequence": entry.sequence})
        elif method == "GET" and path.startswith("/device/v1/conversation/"):
            peer = path[len("/device/v1/conversation/"):]
            self.agent.sync_quietly()
            entries = [
                {"direction": e.direction, "text": e.text,
                 "timestamp": e.timestamp, "sequence": e.sequence,
                 "flag": e.flag}
                for e in session.conversation(peer)
            ]
            self._respond(200, {"peer": peer, "entries": entries})
        elif method == "GET" and path.startswith("/device/v1/phone-view/"):
            peer = path[len("/device/v1/phone-view/"):]
            self._respond(200, {"peer": peer,
                                "messages": session.phone_view(peer)})
        else:
            self._respond(404, {"error": "unknown route"})

    def _read_json(self) -> dict:
        try:
            length = int(self.headers.get("Content-Length", ""))
            body = json.loads(self.rfile.read(length))
        except (ValueError, TypeError):
            return {}
        return body if isinstance(body, dict) else {}


class _AgentServer(ThreadingHTTPServer):
    daemon_threads = True


class DeviceAgent:
    """A running device API bound to loopback for one unlocked session."""

    def __init__(self, session: client_mod.DeviceSession,
                 bind: str = DEFAULT_AGENT_BIND, secret: str | None = None):
        host, port = parse_bind(bind)
        if host not in _LOOPBACK_HOSTS:
            raise ValueError(f"agent binds 127.0.0.1 only, refused {host!r}")
        self.session = session
        self.secret = secret if secret is not None else secrets.token_hex(16)
        self._httpd = _AgentServer((host, port), _AgentHandler)
        self._httpd.agent = self  # type: ignore[attr-defined]
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

    def sync_quietly(self) -> None:
        """Pull new mail if the relay is up; stay usable offline if not."""
        try:
            self.session.inbox()
        except (client_mod.ServerUnreachableError, client_mod.RelayError):
            pass

    def start(self) -> "DeviceAgent":
        self._thread = threading.Thread(target=self._httpd.serve_forever,
                                        name="arsecure-agent", daemon=True)
        self._thread.start()
        log.info("device agent on %s:%d", self.host, self.port)
        return self

    def run_forever(self) -> None:
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


def agent_serve(session: client_mod.DeviceSession,
                bind: str = DEFAULT_AGENT_BIND,
                secret: str | None = None) -> DeviceAgent:
    return DeviceAgent(session, bind=bind, secret=secret).start()
