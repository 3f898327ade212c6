"""Collected OTP observations and their tab-separated file format.

One record per line::

    index <TAB> epoch_seconds <TAB> code <TAB> consumed(0|1) <TAB> account_id

Lines starting with ``#`` are comments.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, List, Optional, Union

from .prng import OtpFormat


class SequenceFormatError(ValueError):
    pass


@dataclass(frozen=True)
class OtpRecord:
    index: int
    code: str
    request_time: Optional[int] = None
    consumed: bool = False
    account_id: str = "default"

    @property
    def value(self) -> int:
        return int(self.code)


@dataclass
class OtpSequence:
    records: List[OtpRecord]
    format: OtpFormat
    source_label: str = ""
    notes: List[str] = field(default_factory=list)

    def __post_init__(self):
        accounts = {r.account_id for r in self.records}
        if len(accounts) > 1:
            raise SequenceFormatError(f"records span several accounts: {sorted(accounts)}")
        last = None
        for r in self.records:
            if not self.format.matches(r.code):
                raise SequenceFormatError(
                    f"record {r.index}: code {r.code!r} is not {self.format.length} decimal digits"
                )
            if r.request_time is not None:
                if last is not None and r.request_time < last:
                    raise SequenceFormatError(f"record {r.index}: request_time goes backwards")
                last = r.request_time

    @classmethod
    def from_codes(
        cls,
        codes: Iterable[str],
        times: Optional[Iterable[int]] = None,
        account_id: str = "default",
        source_label: str = "",
    ) -> "OtpSequence":
        codes = list(codes)
        if not codes:
            raise SequenceFormatError("cannot infer the code length of an empty sequence")
        times = list(times) if times is not None else [None] * len(codes)
        records = [
            OtpRecord(i, c, t, False, account_id) for i, (c, t) in enumerate(zip(codes, times))
        ]
        return cls(records, OtpFormat(len(codes[0])), source_label)

    def __len__(self):
        return len(self.records)

    @property
    def codes(self) -> List[str]:
        return [r.code for r in self.records]

    @property
    def values(self) -> List[int]:
        return [r.value for r in self.records]

    @property
    def account_id(self) -> Optional[str]:
        return self.records[0].account_id if self.records else None

    def head(self, n: int) -> "OtpSequence":
        return OtpSequence(self.records[:n], self.format, self.source_label, list(self.notes))

    def extend(self, other: "OtpSequence") -> "OtpSequence":
        """Concatenate, renumbering ``other`` to continue this sequence's indices."""
        start = self.records[-1].index + 1 if self.records else 0
        moved = [replace(r, index=start + i) for i, r in enumerate(other.records)]
        return OtpSequence(self.records + moved, self.format, self.source_label, self.notes + other.notes)


def dumps(seq: OtpSequence) -> str:
    lines = [f"# source: {seq.source_label}", f"# otp_length: {seq.format.length}"]
    lines += [f"# note: {n}" for n in seq.notes]
    for r in seq.records:
        t = "" if r.request_time is None else str(r.request_time)
        lines.append(f"{r.index}\t{t}\t{r.code}\t{int(r.consumed)}\t{r.account_id}")
    return "\n".join(lines) + "\n"


def loads(text: str, source_label: str = "") -> OtpSequence:
    records = []
    notes = []
    length = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("otp_length:"):
                length = int(body.split(":", 1)[1])
            elif body.startswith("source:") and not source_label:
                source_label = body.split(":", 1)[1].strip()
            elif body.startswith("note:"):
                notes.append(body.split(":", 1)[1].strip())
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise SequenceFormatError(f"line {lineno}: expected 5 tab-separated fields, got {len(parts)}")
        idx, t, code, consumed, account = parts
        try:
            record = OtpRecord(
                index=int(idx),
                code=code.strip(),
                request_time=int(t) if t.strip() else None,
                consumed=consumed.strip() == "1",
                account_id=account.strip(),
            )
        except ValueError as exc:
            raise SequenceFormatError(f"line {lineno}: {exc}") from None
        if consumed.strip() not in ("0", "1"):
            raise SequenceFormatError(f"line {lineno}: consumed flag must be 0 or 1")
        records.append(record)
    if length is None:
        if not records:
            raise SequenceFormatError("empty sequence file without an otp_length header")
        length = len(records[0].code)
    try:
        fmt = OtpFormat(length)
    except ValueError as exc:
        raise SequenceFormatError(str(exc)) from None
    return OtpSequence(records, fmt, source_label, notes)


def read(path: Union[str, Path]) -> OtpSequence:
    path = Path(path)
    return loads(path.read_text(encoding="utf-8"), source_label="")


def write(seq: OtpSequence, path: Union[str, Path]) -> None:
    Path(path).write_text(dumps(seq), encoding="utf-8")
