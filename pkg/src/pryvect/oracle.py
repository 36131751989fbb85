"""Contact oracle: append-only store of anonymous ids reported positive.

Authoritative participants (clinics) append signed reports; facilities read
the list before each evaluation to expand the dangerous-contact event.

On disk the store is a sequence of records, each ``u32 length | payload``
with payload ``u16 id_len | id | u64 reported_at | u8 fp_len | fingerprint``.
Appends are fsync'ed before they are acknowledged. A torn record at the end
of the file (a crash mid-append, never acknowledged) is cut off on open.
"""

from __future__ import annotations

import logging
import os
import struct
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey

from .automata import OracleExpansion
from .errors import StoreFailure, Unauthorized
from .messages import OracleReport
from .tokens import SigningKeyPair, fingerprint
from .trace import Event

log = logging.getLogger(__name__)

_REPORT_DOMAIN = b"pryvect/oracle-report/v1"


@dataclass(frozen=True)
class PositiveRecord:
    anon_id: str
    reported_at: int
    reporter: bytes

    def encode(self) -> bytes:
        raw_id = self.anon_id.encode("utf-8")
        payload = (struct.pack(">H", len(raw_id)) + raw_id + struct.pack(">QB", self.reported_at,
                   len(self.reporter)) + self.reporter)
        return struct.pack(">I", len(payload)) + payload


@dataclass(frozen=True)
class AuthoritativeCredential:
    """Signing identity of an authoritative participant."""

    keys: SigningKeyPair
    name: str = ""

    @property
    def fingerprint(self) -> bytes:
        return self.keys.fingerprint


def _report_body(anon_id: str, reported_at: int) -> bytes:
    raw = anon_id.encode("utf-8")
    return _REPORT_DOMAIN + struct.pack(">H", len(raw)) + raw + struct.pack(">Q", reported_at)


def make_report(credential: AuthoritativeCredential, anon_id: str, now: int) -> OracleReport:
    raw_key = credential.keys.verification_key.public_bytes(
        serialization.Encoding.Raw, serialization.PublicFormat.Raw)
    return OracleReport(anon_id, int(now), raw_key, credential.keys.sign(_report_body(anon_id, int(now))))


def _valid_id(anon_id: str) -> bool:
    try:
        Event("c", anon_id)
    except ValueError:
        return False
    return anon_id != "_" and len(anon_id.encode("utf-8")) <= 255


class OracleStore:
    """File-backed, append-only positive list.

    Appends are serialized by a lock; readers get a consistent snapshot of
    the records acknowledged so far.
    """

    def __init__(self, path: str | os.PathLike, allow_list: Iterable[bytes] = ()):
        self.path = Path(path)
        self.allow_list = set(allow_list)
        self._lock = threading.Lock()
        self._records: list[PositiveRecord] = []
        self._by_id: dict[str, PositiveRecord] = {}
        try:
            self._load()
        except OSError as exc:
            raise StoreFailure(f"cannot open store {self.path}: {exc}") from exc

    def _load(self):
        if not self.path.exists():
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.touch()
        data = self.path.read_bytes()
        pos = 0
        while pos < len(data):
            record, end = self._parse(data, pos)
            if record is None:
                log.warning("event=oracle_truncate path=%s offset=%d dropped=%d",
                            self.path, pos, len(data) - pos)
                with open(self.path, "r+b") as fh:
                    fh.truncate(pos)
                    fh.flush()
                    os.fsync(fh.fileno())
                break
            self._records.append(record)
            self._by_id.setdefault(record.anon_id, record)
            pos = end

    @staticmethod
    def _parse(data: bytes, pos: int):
        if pos + 4 > len(data):
            return None, pos
        (length,) = struct.unpack_from(">I", data, pos)
        start, end = pos + 4, pos + 4 + length
        if end > len(data):
            return None, pos
        payload = data[start:end]
        try:
            (id_len,) = struct.unpack_from(">H", payload, 0)
            anon_id = payload[2:2 + id_len].decode("utf-8")
            at, fp_len = struct.unpack_from(">QB", payload, 2 + id_len)
            fp = payload[11 + id_len:11 + id_len + fp_len]
            if 11 + id_len + fp_len != len(payload) or len(fp) != fp_len:
                raise ValueError("record length mismatch")
        except (struct.error, UnicodeDecodeError, ValueError):
            raise StoreFailure(f"corrupt record at offset {pos}") from None
        return PositiveRecord(anon_id, at, fp), end

    def __len__(self):
        return len(self._records)

    def authorize(self, report: OracleReport) -> bytes:
        """Check signature and allow-list; returns the reporter fingerprint."""
        try:
            vk = Ed25519PublicKey.from_public_bytes(report.reporter_key)
        except ValueError:
            raise Unauthorized("malformed reporter key") from None
        fp = fingerprint(vk)
        if fp not in self.allow_list:
            raise Unauthorized("reporter is not an allow-listed authoritative participant")
        try:
            vk.verify(report.signature, _report_body(report.anon_id, report.reported_at))
        except InvalidSignature:
            raise Unauthorized("bad report signature") from None
        return fp

    def apply(self, report: OracleReport) -> tuple[PositiveRecord, bool]:
        """Append a verified report. Returns ``(record, created)``."""
        reporter = self.authorize(report)
        if not _valid_id(report.anon_id):
            raise ValueError(f"invalid anonymous id {report.anon_id!r}")
        with self._lock:
            existing = self._by_id.get(report.anon_id)
            if existing is not None:
                return existing, False
            record = PositiveRecord(report.anon_id, report.reported_at, reporter)
            try:
                with open(self.path, "ab") as fh:
                    fh.write(record.encode())
                    fh.flush()
                    os.fsync(fh.fileno())
            except OSError as exc:
                raise StoreFailure(f"append failed: {exc}") from exc
            self._records.append(record)
            self._by_id[record.anon_id] = record
            return record, True

    def records(self) -> list[PositiveRecord]:
        with self._lock:
            return list(self._records)


def report_positive(store: OracleStore, credential: AuthoritativeCredential, anon_id: str,
                    now: int) -> PositiveRecord:
    record, _ = store.apply(make_report(credential, anon_id, now))
    return record


def list_positives(store: OracleStore, since: Optional[int] = None) -> list[str]:
    records = store.records()
    if since is not None:
        records = [r for r in records if r.reported_at >= since]
    return [r.anon_id for r in sorted(records, key=lambda r: (r.reported_at, r.anon_id))]


def snapshot_expansion(store: OracleStore, dangerous_label: str,
                       contact_label: str = "c") -> OracleExpansion:
    """Freeze the current positive list for one evaluation session."""
    return OracleExpansion(dangerous_label, tuple(list_positives(store)), contact_label)
