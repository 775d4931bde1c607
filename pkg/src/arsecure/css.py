"""Client-side-scanning adversary simulator.

Matches byte streams against a target list: case-insensitive literal
substrings (ASCII folding) plus whole-input SHA-256 digests. Used to
demonstrate that the relay wire transcript and storage defeat scanning
while a plaintext baseline does not.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

MIN_LITERAL_BYTES = 4


class TargetListError(Exception):
    pass


@dataclass(frozen=True)
class TargetList:
    """Literals are stored lowercase; matching is ASCII-case-insensitive."""

    literals: tuple[str, ...]
    digests: tuple[bytes, ...] = ()

    def __post_init__(self):
        if not self.literals and not self.digests:
            raise TargetListError("target list is empty")
        for literal in self.literals:
            if len(literal.encode("utf-8")) < MIN_LITERAL_BYTES:
                raise TargetListError(
                    f"literal shorter than {MIN_LITERAL_BYTES} bytes: {literal!r}")
            if literal != literal.lower():
                raise TargetListError(f"literal not lowercase: {literal!r}")
        for digest in self.digests:
            if len(digest) != 32:
                raise TargetListError("digests must be 32-byte SHA-256 values")

    @classmethod
    def build(cls, literals: Iterable[str] = (),
              digests: Iterable[bytes] = ()) -> "TargetList":
        return cls(tuple(lit.lower() for lit in literals), tuple(digests))

    @classmethod
    def parse(cls, text: str) -> "TargetList":
        """One literal per line; `sha256:<hex>` lines are digests.

        Blank lines and lines starting with # are skipped.
        """
        literals, digests = [], []
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("sha256:"):
                digests.append(bytes.fromhex(line[len("sha256:"):]))
            else:
                literals.append(line.lower())
        return cls(tuple(literals), tuple(digests))

    @classmethod
    def load(cls, path: str | Path) -> "TargetList":
        return cls.parse(Path(path).read_text())


@dataclass(frozen=True)
class LiteralHit:
    target: str
    byte_offset: int


@dataclass(frozen=True)
class ScanReport:
    input_label: str
    bytes_scanned: int
    literal_hits: tuple[LiteralHit, ...]
    digest_hit: bytes | None
    verdict: str  # "clean" | "flagged"

    @property
    def flagged(self) -> bool:
        return self.verdict == "flagged"

    def to_dict(self) -> dict:
        return {
            "input_label": self.input_label,
            "bytes_scanned": self.bytes_scanned,
            "literal_hits": [
                {"target": h.target, "byte_offset": h.byte_offset}
                for h in self.literal_hits
            ],
            "digest_hit": self.digest_hit.hex() if self.digest_hit else None,
            "verdict": self.verdict,
        }


def _find_all_overlapping(haystack: bytes, needle: bytes) -> Iterable[int]:
    start = 0
    while True:
        pos = haystack.find(needle, start)
        if pos < 0:
            return
        yield pos
        start = pos + 1


def scan(data: bytes, targets: TargetList, label: str = "input") -> ScanReport:
    """Deterministic scan: every overlapping case-folded occurrence of every
    literal, plus a whole-input digest check."""
    folded = data.lower()  # bytes.lower folds ASCII A-Z only
    hits = []
    for literal in targets.literals:
        needle = literal.encode("utf-8")
        for offset in _find_all_overlapping(folded, needle):
            hits.append(LiteralHit(literal, offset))
    hits.sort(key=lambda h: (h.byte_offset, h.target))
    digest_hit = None
    if targets.digests:
        digest = hashlib.sha256(data).digest()
        if digest in targets.digests:
            digest_hit = digest
    verdict = "flagged" if hits or digest_hit else "clean"
    return ScanReport(label, len(data), tuple(hits), digest_hit, verdict)


@dataclass(frozen=True)
class TranscriptScan:
    reports: tuple[ScanReport, ...]
    flagged: int
    clean: int

    @property
    def total_literal_hits(self) -> int:
        return sum(len(r.literal_hits) for r in self.reports)

    @property
    def total_digest_hits(self) -> int:
        return sum(1 for r in self.reports if r.digest_hit is not None)

    def to_dict(self) -> dict:
        return {
            "reports": [r.to_dict() for r in self.reports],
            "flagged": self.flagged,
            "clean": self.clean,
        }


def scan_transcript(entries: Sequence, targets: TargetList) -> TranscriptScan:
    """One report per (label, bytes) entry, order preserved.

    Entries may be any objects with .label/.data attributes, 2-tuples, or
    {"label", "bytes"} dicts.
    """
    reports = []
    for entry in entries:
        if hasattr(entry, "label") and hasattr(entry, "data"):
            label, data = entry.label, entry.data
        elif isinstance(entry, dict):
            label, data = entry["label"], entry["bytes"]
        else:
            label, data = entry
        reports.append(scan(data, targets, label=label))
    flagged = sum(1 for r in reports if r.flagged)
    return TranscriptScan(tuple(reports), flagged, len(reports) - flagged)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="arsecure-css",
        description="Scan files against a CSS target list")
    sub = parser.add_subparsers(dest="command", required=True)
    scan_cmd = sub.add_parser("scan", help="scan files for target matches")
    scan_cmd.add_argument("--targets", required=True,
                          help="target file: one literal per line, "
                               "or sha256:<hex> lines")
    scan_cmd.add_argument("files", nargs="+", help="files to scan")
    args = parser.parse_args(argv)

    try:
        targets = TargetList.load(args.targets)
    except (OSError, ValueError, TargetListError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    entries = []
    for name in args.files:
        try:
            entries.append((name, Path(name).read_bytes()))
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
    result = scan_transcript(entries, targets)
    print(json.dumps(result.to_dict(), indent=2))
    return 2 if result.flagged else 0


if __name__ == "__main__":
    raise SystemExit(main())
