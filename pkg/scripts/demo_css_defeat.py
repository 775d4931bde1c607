#!/usr/bin/env python3
"""Show a client-side-scanning adversary losing against ARSecure.

The demo runs the full stack twice:

  1. ARSecure: two device sessions exchange flagged-keyword messages
     through a relay, with a wiretap recording every byte on the wire.
     The scanner then sweeps the wiretap transcript plus the relay's
     on-disk storage.

  2. Baseline: the same message texts sent over a plain HTTP channel
     that stores what it receives, scanned the same way.

The scanner holds a target list of literal keywords and exact-message
digests. It finds nothing in the ARSecure run and floods with hits in
the baseline run.

Run from the repo root: python scripts/demo_css_defeat.py
"""

import hashlib
import pathlib
import sys
import tempfile
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

REPO = pathlib.Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from arsecure import client as client_mod  # noqa: E402
from arsecure.client import ClientHome  # noqa: E402
from arsecure.css import TargetList, scan_transcript  # noqa: E402
from arsecure.server import ServeConfig, serve  # noqa: E402
from arsecure.wiretap import Wiretap  # noqa: E402

LITERALS = ["pipe bomb", "attack plan", "rendezvous", "safehouse",
            "midnight drop"]
MESSAGES = [
    "the pipe bomb is ready",
    "here is the attack plan",
    "rendezvous at the old bridge",
    "move it to the safehouse",
    "confirm the midnight drop",
]


class _PlaintextRelay(BaseHTTPRequestHandler):
    """What a messaging relay looks like without end-to-end encryption."""

    def do_POST(self):
        body = self.rfile.read(int(self.headers.get("Content-Length", 0)))
        self.server.stored.append(body)  # type: ignore[attr-defined]
        self.send_response(200)
        self.send_header("Content-Length", "2")
        self.end_headers()
        self.wfile.write(b"ok")

    def log_message(self, fmt, *args):
        pass


def run_arsecure(workdir: pathlib.Path, targets: TargetList):
    relay = serve(ServeConfig(bind="127.0.0.1:0", storage=workdir / "relay"))
    tap = Wiretap(relay.host, relay.port).start()
    try:
        # Both clients talk to the wiretap, so every byte they exchange
        # with the relay lands in the transcript.
        home_a = ClientHome(workdir / "alice")
        home_b = ClientHome(workdir / "bob")
        client_mod.init(home_a, "alice", "demo-pass-alice", tap.url)
        client_mod.init(home_b, "bob", "demo-pass-bob", tap.url)
        with client_mod.unlock(home_a, "demo-pass-alice") as alice, \
                client_mod.unlock(home_b, "demo-pass-bob") as bob:
            for text in MESSAGES:
                alice.send("bob", text)
            received = bob.inbox()
            assert [e.text for e in received] == MESSAGES
    finally:
        tap.stop()
        relay.stop()

    entries = [(flow.label, flow.data) for flow in tap.transcript()]
    for path in sorted((workdir / "relay").rglob("*")):
        if path.is_file():
            entries.append((f"relay-disk:{path.name}", path.read_bytes()))
    return scan_transcript(entries, targets)


def run_baseline(targets: TargetList):
    stub = ThreadingHTTPServer(("127.0.0.1", 0), _PlaintextRelay)
    stub.stored = []  # type: ignore[attr-defined]
    threading.Thread(target=stub.serve_forever, daemon=True).start()
    tap = Wiretap("127.0.0.1", stub.server_address[1]).start()
    try:
        import urllib.request
        for text in MESSAGES:
            req = urllib.request.Request(f"{tap.url}/send",
                                         data=text.encode(), method="POST")
            with urllib.request.urlopen(req, timeout=10) as resp:
                assert resp.status == 200
    finally:
        tap.stop()
        stub.shutdown()
        stub.server_close()

    entries = [(flow.label, flow.data) for flow in tap.transcript()]
    entries += [(f"relay-disk:message{i}", body)
                for i, body in enumerate(stub.stored)]
    return scan_transcript(entries, targets)


def describe(name: str, result) -> None:
    print(f"\n{name}")
    print(f"  inputs scanned:  {len(result.reports)}")
    print(f"  literal hits:    {result.total_literal_hits}")
    print(f"  digest hits:     {result.total_digest_hits}")
    print(f"  flagged inputs:  {result.flagged}")
    for report in result.reports:
        if not report.flagged:
            continue
        kinds = []
        if report.literal_hits:
            found = sorted({h.target for h in report.literal_hits})
            kinds.append("literals " + ", ".join(repr(t) for t in found))
        if report.digest_hit:
            kinds.append("digest " + report.digest_hit.hex()[:16] + "...")
        print(f"    flagged {report.input_label}: {'; '.join(kinds)}")


def main() -> int:
    targets = TargetList.build(
        LITERALS,
        digests=[hashlib.sha256(m.encode()).digest() for m in MESSAGES])
    print("scanner target list:")
    for lit in LITERALS:
        print(f"  literal {lit!r}")
    print(f"  + {len(MESSAGES)} exact-message digests")

    with tempfile.TemporaryDirectory(prefix="arsecure-demo-") as tmp:
        arsecure_result = run_arsecure(pathlib.Path(tmp), targets)
    describe("ARSecure run (wiretap + relay disk):", arsecure_result)

    baseline_result = run_baseline(targets)
    describe("Plaintext baseline run (wiretap + relay disk):", baseline_result)

    ok = (arsecure_result.flagged == 0
          and baseline_result.total_literal_hits >= len(MESSAGES))
    print("\nverdict:", "scanner defeated" if ok else "scanner got through")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
