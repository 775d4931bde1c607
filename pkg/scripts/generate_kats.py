#!/usr/bin/env python3
"""Mint the known-answer files from the reference oracles.

Writes:

    tests/data/envelope_kats.jsonl  -- seed triples -> envelope bytes -> armor
    tests/data/password_kat.json    -- Argon2id verifier for a fixed password/salt

Every value comes from the pure-Python reference code in tests/oracles.py,
never from arsecure itself, so the files pin the production implementation
against an independently written route. The Argon2id entry takes about a
minute: it runs the 64 MiB reference KDF in pure Python.

Run from the repo root: python scripts/generate_kats.py
"""

import base64
import json
import pathlib
import sys
import time

REPO = pathlib.Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "tests"))

import oracles  # noqa: E402

DATA_DIR = REPO / "tests" / "data"

ENVELOPE_CASES = [
    {
        "name": "hello",
        "a_seed": "01" * 32,
        "b_seed": "02" * 32,
        "eph_seed": "03" * 32,
        "plaintext": "hello",
    },
    {
        "name": "empty",
        "a_seed": "01" * 32,
        "b_seed": "02" * 32,
        "eph_seed": "03" * 32,
        "plaintext": "",
    },
    {
        "name": "unicode",
        "a_seed": "a0" * 32,
        "b_seed": "b1" * 32,
        "eph_seed": "c2" * 32,
        "plaintext": "mesaj gönder → šifreli ✓",
    },
    {
        "name": "two-armor-lines",
        "a_seed": "11" * 32,
        "b_seed": "22" * 32,
        "eph_seed": "33" * 32,
        "plaintext": "The quick brown fox jumps over the lazy dog, twice over. "
        "The quick brown fox jumps over the lazy dog, twice over.",
    },
]

PASSWORD_CASE = {
    "password": "correct horse battery",
    "salt": "00" * 16,
}


def main() -> None:
    DATA_DIR.mkdir(parents=True, exist_ok=True)

    env_path = DATA_DIR / "envelope_kats.jsonl"
    with env_path.open("w") as fh:
        for case in ENVELOPE_CASES:
            plaintext = case["plaintext"].encode("utf-8")
            envelope = oracles.oracle_envelope(
                bytes.fromhex(case["a_seed"]),
                bytes.fromhex(case["b_seed"]),
                bytes.fromhex(case["eph_seed"]),
                plaintext,
            )
            record = dict(case)
            record["plaintext_b64"] = base64.b64encode(plaintext).decode("ascii")
            record["envelope_hex"] = envelope.hex()
            record["armored"] = oracles.oracle_armor(envelope)
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    print(f"wrote {env_path} ({len(ENVELOPE_CASES)} cases)")

    print("deriving Argon2id verifier KAT (64 MiB, pure Python; takes a while)...")
    t0 = time.time()
    verifier = oracles.argon2id(
        password=PASSWORD_CASE["password"].encode("utf-8"),
        salt=bytes.fromhex(PASSWORD_CASE["salt"]),
        time_cost=3,
        memory_cost_kib=64 * 1024,
        parallelism=1,
        out_len=32,
    )
    kat = dict(PASSWORD_CASE)
    kat["verifier_hex"] = verifier.hex()
    pw_path = DATA_DIR / "password_kat.json"
    pw_path.write_text(json.dumps(kat, indent=2, sort_keys=True) + "\n")
    print(f"wrote {pw_path} in {time.time() - t0:.0f}s")


if __name__ == "__main__":
    main()
