"""Scanner behavior: literal/digest matching, oracle equivalence, CLI."""

import hashlib
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arsecure import crypto
from arsecure.css import (
    LiteralHit,
    ScanReport,
    TargetList,
    TargetListError,
    main,
    scan,
    scan_transcript,
)

TARGETS = TargetList.build(["bomb", "attack plan", "rendezvous"])


def brute_force_hits(data, literals):
    """Windowed byte-compare with a hand-rolled ASCII fold: the independent
    route the scanner must agree with."""
    folded = bytes(b + 32 if 0x41 <= b <= 0x5A else b for b in data)
    hits = []
    for literal in literals:
        needle = literal.encode("utf-8")
        if not needle:
            continue
        for i in range(len(folded) - len(needle) + 1):
            if folded[i:i + len(needle)] == needle:
                hits.append((literal, i))
    return sorted(hits, key=lambda h: (h[1], h[0]))


def as_pairs(report: ScanReport):
    return [(h.target, h.byte_offset) for h in report.literal_hits]


def test_single_literal_hit_with_offset():
    report = scan(b"the bomb plan", TargetList.build(["bomb"]))
    assert as_pairs(report) == [("bomb", 4)]
    assert report.verdict == "flagged"
    assert report.bytes_scanned == 13


def test_armored_envelope_of_flagged_text_scans_clean():
    a = crypto.generate_keypair(seed=b"\x01" * 32)
    b = crypto.generate_keypair(seed=b"\x02" * 32)
    eph = b"\x03" * 32
    env = crypto.encrypt_message(b"the bomb plan", a, b.public_key,
                                 rng=lambda n: eph[:n])
    report = scan(crypto.armor(env).encode(), TargetList.build(["bomb"]))
    assert report.verdict == "clean"
    assert report.literal_hits == ()


def test_digest_hit_without_literals():
    payload = b"innocuous looking bytes"
    targets = TargetList.build(["bomb"],
                               digests=[hashlib.sha256(payload).digest()])
    report = scan(payload, targets)
    assert report.digest_hit == hashlib.sha256(payload).digest()
    assert report.verdict == "flagged"
    assert report.literal_hits == ()
    # One byte different: digest no longer matches.
    assert scan(payload + b".", targets).verdict == "clean"


def test_case_insensitive_ascii_only():
    report = scan(b"The BOMB and the BoMb", TargetList.build(["bomb"]))
    assert as_pairs(report) == [("bomb", 4), ("bomb", 17)]
    # Non-ASCII letters do not fold.
    report = scan("the BÖMB".encode(), TargetList.build(["bömb"]))
    assert report.verdict == "clean"


def test_overlapping_occurrences_all_reported():
    report = scan(b"aaaaaa", TargetList.build(["aaaa"]))
    assert as_pairs(report) == [("aaaa", 0), ("aaaa", 1), ("aaaa", 2)]


def test_soundness_offsets_slice_back_to_target():
    data = b"Attack Plan inside an ATTACK PLANATTACK PLAN zone"
    report = scan(data, TARGETS)
    assert report.literal_hits
    for hit in report.literal_hits:
        needle = hit.target.encode()
        window = data[hit.byte_offset:hit.byte_offset + len(needle)]
        assert window.lower() == needle


@settings(max_examples=150, deadline=None)
@given(data=st.binary(max_size=4096))
def test_oracle_equivalence_on_random_bytes(data):
    report = scan(data, TARGETS)
    assert as_pairs(report) == brute_force_hits(data, TARGETS.literals)


@settings(max_examples=150, deadline=None)
@given(
    chunks=st.lists(st.binary(max_size=40), min_size=0, max_size=8),
    planted=st.lists(st.sampled_from([b"bomb", b"BOMB", b"Attack Plan",
                                      b"rendezVOUS", b"bom", b"omb "]),
                     min_size=0, max_size=6),
    seed=st.integers(0, 2**31),
)
def test_oracle_equivalence_with_planted_literals(chunks, planted, seed):
    import random
    rng = random.Random(seed)
    parts = list(chunks) + list(planted)
    rng.shuffle(parts)
    data = b"".join(parts)
    report = scan(data, TARGETS)
    assert as_pairs(report) == brute_force_hits(data, TARGETS.literals)


def test_scan_transcript_order_and_counts():
    entries = [
        ("first", b"nothing here"),
        ("second", b"the bomb plan"),
        ("third", b"rendezvous at RENDEZVOUS point"),
    ]
    result = scan_transcript(entries, TARGETS)
    assert [r.input_label for r in result.reports] == ["first", "second",
                                                       "third"]
    assert [r.verdict for r in result.reports] == ["clean", "flagged",
                                                   "flagged"]
    assert (result.flagged, result.clean) == (2, 1)
    assert result.total_literal_hits == 3
    assert result.total_digest_hits == 0


def test_scan_transcript_accepts_dicts_and_is_empty_safe():
    result = scan_transcript([], TARGETS)
    assert result.reports == ()
    assert (result.flagged, result.clean) == (0, 0)
    result = scan_transcript([{"label": "x", "bytes": b"bomb"}], TARGETS)
    assert result.flagged == 1


def test_target_list_validation():
    with pytest.raises(TargetListError):
        TargetList.build([])
    with pytest.raises(TargetListError):
        TargetList.build(["abc"])  # under 4 bytes
    with pytest.raises(TargetListError):
        TargetList((), (b"\x00" * 31,))
    # 4-byte minimum counts UTF-8 bytes, not characters.
    assert TargetList.build(["éé"]).literals == ("éé",)


def test_target_list_parse_and_report_shape():
    digest = hashlib.sha256(b"payload").hexdigest()
    text = f"# comment\nBomb\n\nsha256:{digest}\nattack plan\n"
    targets = TargetList.parse(text)
    assert targets.literals == ("bomb", "attack plan")
    assert targets.digests == (bytes.fromhex(digest),)

    report = scan(b"a bomb", targets)
    shaped = report.to_dict()
    assert shaped["verdict"] == "flagged"
    assert shaped["literal_hits"] == [{"target": "bomb", "byte_offset": 2}]
    assert shaped["digest_hit"] is None


def test_cli_exit_codes_and_json(tmp_path, capsys):
    targets = tmp_path / "targets.txt"
    targets.write_text("bomb\nattack plan\n")
    flagged = tmp_path / "flagged.txt"
    flagged.write_text("the BOMB plan")
    clean = tmp_path / "clean.txt"
    clean.write_text("nothing to see")

    assert main(["scan", "--targets", str(targets), str(clean)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["flagged"] == 0

    code = main(["scan", "--targets", str(targets), str(flagged), str(clean)])
    assert code == 2
    out = json.loads(capsys.readouterr().out)
    assert out["flagged"] == 1
    assert out["reports"][0]["input_label"] == str(flagged)
    assert out["reports"][0]["literal_hits"][0]["target"] == "bomb"


def test_cli_bad_targets_file(tmp_path, capsys):
    missing = tmp_path / "nope.txt"
    assert main(["scan", "--targets", str(missing), str(missing)]) == 1
    empty = tmp_path / "empty.txt"
    empty.write_text("# only comments\n")
    assert main(["scan", "--targets", str(empty), str(empty)]) == 1
