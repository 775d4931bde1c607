"""Raw HTTP helpers shared by server, client, and acceptance tests.

Deliberately independent of arsecure.client so server tests exercise the
wire contract directly.
"""

import base64
import json
import urllib.error
import urllib.request

from arsecure import crypto
from arsecure.directory import derive_verifier


def http_request(method, url, body=None, token=None, raw_body=None):
    """Returns (status, parsed-or-raw body bytes)."""
    data = raw_body
    request = urllib.request.Request(url, method=method)
    if body is not None:
        data = json.dumps(body).encode()
        request.add_header("Content-Type", "application/json")
    if token is not None:
        request.add_header("Authorization",
                           "Bearer " + base64.b64encode(token).decode())
    try:
        with urllib.request.urlopen(request, data=data, timeout=10) as resp:
            return resp.status, resp.read()
    except urllib.error.HTTPError as err:
        return err.code, err.read()


def register_user(base_url, username, password, keypair=None, salt=None):
    """Registers over the wire; returns (keypair, salt, verifier)."""
    keypair = keypair or crypto.generate_keypair()
    salt = salt if salt is not None else b"\x0a" * 16
    verifier = derive_verifier(password, salt)
    status, body = http_request("POST", f"{base_url}/v1/register", body={
        "username": username,
        "public_key": base64.b64encode(keypair.public_key.data).decode(),
        "salt": base64.b64encode(salt).decode(),
        "verifier": base64.b64encode(verifier).decode(),
    })
    assert status == 201, body
    return keypair, salt, verifier


def login(base_url, username, password):
    """Returns the raw 32-byte session token."""
    status, body = http_request("POST", f"{base_url}/v1/login",
                                body={"username": username,
                                      "password": password})
    assert status == 200, body
    return base64.b64decode(json.loads(body)["token"])


def send_message(base_url, token, recipient, envelope_bytes):
    return http_request("POST", f"{base_url}/v1/messages", token=token, body={
        "recipient": recipient,
        "envelope": crypto.armor(envelope_bytes),
    })


def pull_messages(base_url, token, after=0, limit=100):
    status, body = http_request(
        "GET", f"{base_url}/v1/messages?after={after}&limit={limit}",
        token=token)
    assert status == 200, body
    return json.loads(body)["messages"]


def ack_messages(base_url, token, up_to):
    status, body = http_request("POST", f"{base_url}/v1/messages/ack",
                                token=token, body={"up_to": up_to})
    assert status == 200, body
    return json.loads(body)["deleted"]
