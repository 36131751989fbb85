"""Events, traces and alphabets.

A trace is the private, finite sequence of events a user's device records:
test outcomes such as ``s(-)``, contacts ``c(x9)`` and day markers ``day``.
Everything here is an immutable value; the binary encoding is canonical so
that trace digests are stable across runs and platforms.
"""

from __future__ import annotations

import enum
import re
import struct
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

from .errors import AlphabetMismatch, MalformedEncoding

#: Value used for contacts whose identifier is absent from a published alphabet.
OTHER_CONTACT = "_"

_LABEL_RE = re.compile(r"[A-Za-z][A-Za-z0-9_]*\Z")
_VALUE_RE = re.compile(r"(?:[A-Za-z][A-Za-z0-9_]*|[+-]|[0-9]+|_)\Z")
_EVENT_RE = re.compile(r"\s*([A-Za-z][A-Za-z0-9_]*)\s*(?:\(\s*([^()\s]+)\s*\))?\s*\Z")


class Verdict(enum.Enum):
    ACCEPT = "accept"
    REJECT = "reject"

    def __bool__(self) -> bool:
        return self is Verdict.ACCEPT

    @classmethod
    def of(cls, accepted: bool) -> "Verdict":
        return cls.ACCEPT if accepted else cls.REJECT


def _normalize_value(value: str) -> str:
    # U+2212 MINUS SIGN shows up when traces are copied from typeset text
    return value.replace("−", "-")


@dataclass(frozen=True)
class Event:
    label: str
    value: Optional[str] = None

    def __post_init__(self):
        if not _LABEL_RE.match(self.label):
            raise ValueError(f"invalid event label {self.label!r}")
        if self.value is not None:
            value = _normalize_value(self.value)
            if not _VALUE_RE.match(value):
                raise ValueError(f"invalid event value {self.value!r}")
            object.__setattr__(self, "value", value)

    @classmethod
    def parse(cls, text: str) -> "Event":
        m = _EVENT_RE.match(_normalize_value(text))
        if not m:
            raise ValueError(f"cannot parse event {text!r}")
        return cls(m.group(1), m.group(2))

    @property
    def symbol(self) -> tuple[str, Optional[str]]:
        return (self.label, self.value)

    def __str__(self) -> str:
        return self.label if self.value is None else f"{self.label}({self.value})"


@dataclass(frozen=True)
class Trace:
    events: tuple[Event, ...] = ()

    def __init__(self, events: Iterable[Event] = ()):
        object.__setattr__(self, "events", tuple(events))

    @classmethod
    def parse(cls, text: str) -> "Trace":
        """Parse the textual literal form, e.g. ``"v(+);s(-);a(-)"``."""
        parts = [p for p in text.split(";") if p.strip()]
        return cls(Event.parse(p) for p in parts)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[Event]:
        return iter(self.events)

    def __getitem__(self, item):
        if isinstance(item, slice):
            return Trace(self.events[item])
        return self.events[item]

    def __add__(self, other: "Trace") -> "Trace":
        return concat(self, other)

    def __str__(self) -> str:
        return ";".join(str(e) for e in self.events)


def concat(left: Trace, right: Trace) -> Trace:
    return Trace(left.events + right.events)


def truncate_after_last_marker(trace: Trace, marker_label: str, keep_days: int) -> Trace:
    """Drop everything up to and including the ``(n - keep_days)``-th marker.

    ``n`` is the number of marker events in `trace`. The kept suffix holds
    exactly `keep_days` markers; a trace with ``n <= keep_days`` is returned
    unchanged.
    """
    if keep_days < 0:
        raise ValueError("keep_days must be non-negative")
    positions = [i for i, e in enumerate(trace.events) if e.label == marker_label]
    if len(positions) <= keep_days:
        return trace
    cut = positions[len(positions) - keep_days - 1]
    return Trace(trace.events[cut + 1:])


# --- canonical binary encoding ---------------------------------------------

def encode(trace: Trace) -> bytes:
    out = bytearray(struct.pack(">I", len(trace.events)))
    for event in trace.events:
        label = event.label.encode("utf-8")
        value = b"" if event.value is None else event.value.encode("utf-8")
        if len(label) > 255 or len(value) > 255:
            raise ValueError(f"event {event} too long to encode")
        out.append(len(label))
        out += label
        out.append(len(value))
        out += value
    return bytes(out)


def decode(data: bytes) -> Trace:
    if len(data) < 4:
        raise MalformedEncoding("truncated event count", len(data))
    (count,) = struct.unpack_from(">I", data, 0)
    pos = 4
    events = []
    for _ in range(count):
        fields = []
        for what in ("label", "value"):
            if pos >= len(data):
                raise MalformedEncoding(f"missing {what} length", pos)
            size = data[pos]
            pos += 1
            if pos + size > len(data):
                raise MalformedEncoding(f"truncated {what}", pos)
            fields.append(data[pos:pos + size])
            pos += size
        try:
            label = fields[0].decode("utf-8")
            value = fields[1].decode("utf-8") if fields[1] else None
            event = Event(label, value)
        except (UnicodeDecodeError, ValueError) as exc:
            raise MalformedEncoding(f"invalid event: {exc}", pos) from None
        if event.value is not None and event.value.encode("utf-8") != fields[1]:
            # non-canonical spelling (e.g. U+2212) would break injectivity
            raise MalformedEncoding("non-canonical event value", pos)
        events.append(event)
    if pos != len(data):
        raise MalformedEncoding("trailing bytes after last event", pos)
    return Trace(events)


# --- alphabets -------------------------------------------------------------

Symbol = tuple[str, Optional[str]]


@dataclass(frozen=True)
class Alphabet:
    """Ordered, duplicate-free symbol table ``label(value)`` -> index."""

    symbols: tuple[Symbol, ...]
    index: dict = field(init=False, repr=False, compare=False, hash=False)

    def __init__(self, symbols: Iterable):
        syms = []
        for s in symbols:
            if isinstance(s, Event):
                s = s.symbol
            elif isinstance(s, str):
                s = Event.parse(s).symbol
            else:
                s = Event(*s).symbol
            syms.append(s)
        object.__setattr__(self, "symbols", tuple(syms))
        index = {s: i for i, s in enumerate(self.symbols)}
        if len(index) != len(self.symbols):
            raise ValueError("alphabet symbols must be pairwise distinct")
        object.__setattr__(self, "index", index)

    def __len__(self) -> int:
        return len(self.symbols)

    def __iter__(self) -> Iterator[Symbol]:
        return iter(self.symbols)

    def __contains__(self, item) -> bool:
        if isinstance(item, Event):
            item = item.symbol
        return item in self.index

    @property
    def labels(self) -> tuple[str, ...]:
        seen = dict.fromkeys(label for label, _ in self.symbols)
        return tuple(seen)

    def values_of(self, label: str) -> tuple[Optional[str], ...]:
        return tuple(v for l, v in self.symbols if l == label)

    def event(self, i: int) -> Event:
        return Event(*self.symbols[i])

    def with_symbols(self, extra: Iterable[Symbol], drop_label: str | None = None) -> "Alphabet":
        kept = [s for s in self.symbols if s[0] != drop_label]
        for s in extra:
            if s not in kept:
                kept.append(s)
        return Alphabet(kept)

    def to_text(self) -> str:
        lines = []
        for label in self.labels:
            values = self.values_of(label)
            bare = [v for v in values if v is None]
            valued = [v for v in values if v is not None]
            if bare:
                lines.append(label)
            if valued:
                lines.append(f"{label}: {','.join(valued)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> "Alphabet":
        """Read the line-oriented declaration format.

        Each line is either ``label: v1,v2,...`` or a bare ``label``;
        ``#`` starts a comment.
        """
        symbols: list[Symbol] = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if ":" in line:
                label, values = line.split(":", 1)
                label = label.strip()
                vals = [v.strip() for v in values.split(",") if v.strip()]
                if not vals:
                    raise ValueError(f"line {lineno}: label {label!r} declares no values")
                try:
                    symbols.extend(Event(label, v).symbol for v in vals)
                except ValueError as exc:
                    raise ValueError(f"line {lineno}: {exc}") from None
            else:
                try:
                    symbols.append(Event(line).symbol)
                except ValueError as exc:
                    raise ValueError(f"line {lineno}: {exc}") from None
        return cls(symbols)


def symbol_index(alphabet: Alphabet, event: Event) -> int:
    try:
        return alphabet.index[event.symbol]
    except KeyError:
        raise AlphabetMismatch(f"event {event} is not in the alphabet") from None


def to_indices(alphabet: Alphabet, trace: Trace | Sequence[Event]) -> list[int]:
    return [symbol_index(alphabet, e) for e in trace]


def map_unknown_contacts(trace: Trace, alphabet: Alphabet, contact_label: str = "c") -> Trace:
    """Replace contacts with identifiers absent from `alphabet` by ``c(_)``."""
    out = []
    for e in trace:
        if e.label == contact_label and e.symbol not in alphabet.index:
            e = Event(contact_label, OTHER_CONTACT)
        out.append(e)
    return Trace(out)
