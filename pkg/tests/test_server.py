"""Relay HTTP API: endpoint contract, auth, persistence, log hygiene."""

import base64
import json
import logging
import time

import pytest

from arsecure import crypto
from arsecure.server import RelayServer, ServeConfig, parse_bind, serve
from helpers import (
    ack_messages,
    http_request,
    login,
    pull_messages,
    register_user,
    send_message,
)

PASSWORD = "relay-test-pw"


@pytest.fixture
def relay(tmp_path):
    server = serve(ServeConfig(bind="127.0.0.1:0", storage=tmp_path / "data"))
    yield server
    server.stop()


def make_envelope(sender_kp, recipient_kp, text):
    return crypto.encrypt_message(text.encode(), sender_kp,
                                  recipient_kp.public_key).to_bytes()


def test_health_is_bit_exact(relay):
    status, body = http_request("GET", f"{relay.url}/v1/health")
    assert status == 200
    assert body == b'{"status":"ok","version":"1"}'


def test_register_and_key_lookup(relay):
    keypair, _, _ = register_user(relay.url, "alice", PASSWORD)
    status, body = http_request("GET", f"{relay.url}/v1/keys/alice")
    assert status == 200
    record = json.loads(body)
    assert set(record) == {"username", "public_key", "registered_at"}
    assert base64.b64decode(record["public_key"]) == keypair.public_key.data


def test_register_conflicts_and_validation(relay):
    register_user(relay.url, "alice", PASSWORD)
    keypair = crypto.generate_keypair()
    payload = {
        "username": "ALICE",
        "public_key": base64.b64encode(keypair.public_key.data).decode(),
        "salt": base64.b64encode(b"\x01" * 16).decode(),
        "verifier": base64.b64encode(b"\x02" * 32).decode(),
    }
    status, body = http_request("POST", f"{relay.url}/v1/register", body=payload)
    assert (status, json.loads(body)["code"]) == (409, "username_taken")

    payload["username"] = "no spaces allowed"
    status, body = http_request("POST", f"{relay.url}/v1/register", body=payload)
    assert (status, json.loads(body)["code"]) == (400, "invalid_username")

    payload["username"] = "fine_name"
    payload["public_key"] = "!!!not-base64!!!"
    status, body = http_request("POST", f"{relay.url}/v1/register", body=payload)
    assert (status, json.loads(body)["code"]) == (400, "malformed")

    payload["public_key"] = base64.b64encode(b"\x01" * 31).decode()
    status, body = http_request("POST", f"{relay.url}/v1/register", body=payload)
    assert (status, json.loads(body)["code"]) == (400, "malformed")


def test_login_returns_token_and_expiry(relay):
    register_user(relay.url, "alice", PASSWORD)
    status, body = http_request("POST", f"{relay.url}/v1/login",
                                body={"username": "alice",
                                      "password": PASSWORD})
    assert status == 200
    record = json.loads(body)
    assert set(record) == {"token", "expires_at"}
    assert len(base64.b64decode(record["token"])) == 32
    assert abs(record["expires_at"] - (time.time() + 24 * 3600)) < 60


def test_login_failures_are_byte_identical(relay):
    register_user(relay.url, "alice", PASSWORD)
    wrong_pw = http_request("POST", f"{relay.url}/v1/login",
                            body={"username": "alice",
                                  "password": "wrong-password"})
    unknown = http_request("POST", f"{relay.url}/v1/login",
                           body={"username": "nobody",
                                 "password": "wrong-password"})
    assert wrong_pw[0] == unknown[0] == 401
    assert wrong_pw[1] == unknown[1]
    assert json.loads(wrong_pw[1])["code"] == "authentication_failed"


def test_unknown_key_lookup(relay):
    status, body = http_request("GET", f"{relay.url}/v1/keys/ghost")
    assert (status, json.loads(body)["code"]) == (404, "no_such_user")


def test_send_pull_ack_round_trip(relay):
    alice_kp, _, _ = register_user(relay.url, "alice", PASSWORD)
    bob_kp, _, _ = register_user(relay.url, "bob", PASSWORD)
    alice = login(relay.url, "alice", PASSWORD)
    bob = login(relay.url, "bob", PASSWORD)

    for i in range(3):
        status, body = send_message(relay.url, alice, "bob",
                                    make_envelope(alice_kp, bob_kp, f"note {i}"))
        assert status == 201
        record = json.loads(body)
        assert record["sequence"] == i + 1
        assert len(bytes.fromhex(record["message_id"])) == 16

    messages = pull_messages(relay.url, bob)
    assert [m["sequence"] for m in messages] == [1, 2, 3]
    assert all(m["sender"] == "alice" for m in messages)
    decrypted = [
        crypto.decrypt_message(crypto.dearmor(m["envelope"]),
                               bob_kp, alice_kp.public_key)
        for m in messages
    ]
    assert decrypted == [b"note 0", b"note 1", b"note 2"]

    assert ack_messages(relay.url, bob, 2) == 2
    assert [m["sequence"] for m in pull_messages(relay.url, bob)] == [3]
    assert ack_messages(relay.url, bob, 3) == 1
    assert pull_messages(relay.url, bob) == []


def test_send_error_statuses(relay):
    alice_kp, _, _ = register_user(relay.url, "alice", PASSWORD)
    bob_kp, _, _ = register_user(relay.url, "bob", PASSWORD)
    alice = login(relay.url, "alice", PASSWORD)

    env = make_envelope(alice_kp, bob_kp, "hi")
    status, body = send_message(relay.url, alice, "ghost", env)
    assert (status, json.loads(body)["code"]) == (404, "no_such_user")

    # Envelope addressed to alice's key but submitted for recipient bob.
    to_alice = make_envelope(bob_kp, alice_kp, "hi")
    status, body = send_message(relay.url, alice, "bob", to_alice)
    assert (status, json.loads(body)["code"]) == (422, "misaddressed_envelope")

    oversize = env[:50] + b"\x00" * (crypto.MAX_PLAINTEXT + 17)
    status, body = send_message(relay.url, alice, "bob", oversize)
    assert (status, json.loads(body)["code"]) == (413, "too_large")

    status, body = http_request("POST", f"{relay.url}/v1/messages",
                                token=alice,
                                body={"recipient": "bob",
                                      "envelope": "not armor at all"})
    assert (status, json.loads(body)["code"]) == (400, "malformed")


def test_auth_required_on_message_endpoints(relay):
    status, body = http_request("GET", f"{relay.url}/v1/messages")
    assert (status, json.loads(body)["code"]) == (401, "unauthorized")
    status, body = http_request("POST", f"{relay.url}/v1/messages/ack",
                                token=b"\x00" * 32, body={"up_to": 1})
    assert (status, json.loads(body)["code"]) == (401, "unauthorized")
    request_status, _ = http_request("POST", f"{relay.url}/v1/messages",
                                     token=b"junk", body={})
    assert request_status == 401


def test_expired_token_rejected(tmp_path):
    clock = {"now": 1_700_000_000.0}
    server = RelayServer(ServeConfig(bind="127.0.0.1:0",
                                     storage=tmp_path / "data"),
                         time_fn=lambda: clock["now"]).start()
    try:
        register_user(server.url, "alice", PASSWORD)
        token = login(server.url, "alice", PASSWORD)
        assert pull_messages(server.url, token) == []
        clock["now"] += 24 * 3600 + 1
        status, body = http_request("GET", f"{server.url}/v1/messages",
                                    token=token)
        assert (status, json.loads(body)["code"]) == (401, "unauthorized")
    finally:
        server.stop()


def test_pull_query_validation(relay):
    register_user(relay.url, "alice", PASSWORD)
    token = login(relay.url, "alice", PASSWORD)
    for query in ("limit=0", "limit=101", "after=-1", "limit=abc"):
        status, body = http_request(
            "GET", f"{relay.url}/v1/messages?{query}", token=token)
        assert (status, json.loads(body)["code"]) == (400, "malformed"), query


def test_pull_is_scoped_to_token_owner(relay):
    alice_kp, _, _ = register_user(relay.url, "alice", PASSWORD)
    bob_kp, _, _ = register_user(relay.url, "bob", PASSWORD)
    alice = login(relay.url, "alice", PASSWORD)
    bob = login(relay.url, "bob", PASSWORD)
    send_message(relay.url, alice, "bob", make_envelope(alice_kp, bob_kp, "x"))

    # Query-string attempts to choose the mailbox are ignored by design.
    status, body = http_request(
        "GET", f"{relay.url}/v1/messages?user=bob&recipient=bob&after=0",
        token=alice)
    assert status == 200
    assert json.loads(body)["messages"] == []
    assert len(pull_messages(relay.url, bob)) == 1


def test_unknown_routes_are_malformed_404(relay):
    for method, path in [("GET", "/nope"), ("POST", "/v1/nope"),
                         ("GET", "/v1/messages/extra")]:
        status, body = http_request(method, relay.url + path,
                                    body={} if method == "POST" else None)
        assert (status, json.loads(body)["code"]) == (404, "malformed"), path


def test_malformed_json_body(relay):
    status, body = http_request("POST", f"{relay.url}/v1/login",
                                raw_body=b"{not json")
    assert (status, json.loads(body)["code"]) == (400, "malformed")
    status, body = http_request("POST", f"{relay.url}/v1/login",
                                raw_body=b'"just a string"')
    assert (status, json.loads(body)["code"]) == (400, "malformed")


def test_state_survives_restart(tmp_path):
    storage = tmp_path / "data"
    first = serve(ServeConfig(bind="127.0.0.1:0", storage=storage))
    alice_kp, _, _ = register_user(first.url, "alice", PASSWORD)
    bob_kp, _, _ = register_user(first.url, "bob", PASSWORD)
    alice = login(first.url, "alice", PASSWORD)
    env = make_envelope(alice_kp, bob_kp, "persistent")
    status, body = send_message(first.url, alice, "bob", env)
    assert status == 201
    sent = json.loads(body)
    first.stop()

    second = serve(ServeConfig(bind="127.0.0.1:0", storage=storage))
    try:
        # Users persist; tokens are memory-only so clients just re-login.
        bob = login(second.url, "bob", PASSWORD)
        messages = pull_messages(second.url, bob)
        assert len(messages) == 1
        assert messages[0]["message_id"] == sent["message_id"]
        assert messages[0]["sequence"] == sent["sequence"]
        assert crypto.dearmor(messages[0]["envelope"]).to_bytes() == env
    finally:
        second.stop()


def test_second_bind_on_same_port_fails(relay):
    with pytest.raises(OSError):
        RelayServer(ServeConfig(bind=f"127.0.0.1:{relay.port}",
                                storage=relay.config.storage))


def test_parse_bind():
    assert parse_bind("127.0.0.1:7070") == ("127.0.0.1", 7070)
    assert parse_bind("0.0.0.0:80") == ("0.0.0.0", 80)
    with pytest.raises(ValueError):
        parse_bind("no-port")
    with pytest.raises(ValueError):
        parse_bind("host:notaport")


def test_canary_never_in_logs_or_metadata(relay, caplog):
    """Plants a marker inside ciphertext bytes; it must appear in no log line
    and no non-envelope response field."""
    canary = b"CANARY-d41d8cd98f"
    alice_kp, _, _ = register_user(relay.url, "alice", PASSWORD)
    bob_kp, _, _ = register_user(relay.url, "bob", PASSWORD)
    alice = login(relay.url, "alice", PASSWORD)
    bob = login(relay.url, "bob", PASSWORD)

    header = crypto.encrypt_message(b"x", alice_kp,
                                    bob_kp.public_key).to_bytes()[:50]
    planted = header + canary + b"\x00" * 16

    with caplog.at_level(logging.DEBUG):
        status, _ = send_message(relay.url, alice, "bob", planted)
        assert status == 201
        messages = pull_messages(relay.url, bob)

    for record in caplog.records:
        assert canary.decode() not in record.getMessage()
    assert crypto.dearmor(messages[0]["envelope"]).to_bytes() == planted
    stripped = [{k: v for k, v in m.items() if k != "envelope"}
                for m in messages]
    assert canary.decode() not in json.dumps(stripped)
