"""Protocol and oracle messages, and the frame format that carries them.

Frame layout::

    u32 length (= 2 + len(payload)) | u8 version (0x01) | u8 type | payload

Payload fields appear in declaration order; variable parts are prefixed
with a u32 length or count. Ciphertexts and plaintext-space integers are
written at the fixed width implied by the session key, so a message's size
depends on public parameters only.

Messages carrying ciphertexts need the session's public key to be encoded
or decoded; pass it as ``pk``.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, fields
from typing import Optional

from .errors import MalformedEncoding, MalformedFrame
from .hcrypto import HeCiphertext, HePublicKey, dump_public, load_public
from .tokens import TOKEN_LEN, AuthToken
from .trace import Alphabet, Event

PROTOCOL_VERSION = 0x01
MAX_FRAME = 64 * 1024 * 1024


class MsgType(enum.IntEnum):
    HELLO = 1
    PARAMS = 2
    INIT_QUERY = 3
    INIT_REPLY = 4
    STEP_QUERY = 5
    STEP_REPLY = 6
    FINAL_QUERY = 7
    FINAL_CHALLENGE = 8
    FINAL_OPEN = 9
    VERDICT = 10
    # oracle API
    ORACLE_REPORT = 32
    ORACLE_REPORT_ACK = 33
    ORACLE_LIST = 34
    ORACLE_LIST_REPLY = 35
    ERROR = 63


@dataclass(frozen=True)
class Hello:
    pk: HePublicKey
    trace_len: int
    policy_id: bytes = bytes(32)


@dataclass(frozen=True)
class Params:
    session_id: bytes
    q_count: int
    alphabet: Alphabet
    kappa: int


@dataclass(frozen=True)
class InitQuery:
    selector: tuple


@dataclass(frozen=True)
class InitReply:
    padded_row: tuple
    pad_ct: HeCiphertext


@dataclass(frozen=True)
class StepQuery:
    state_selector: tuple
    symbol_selector: tuple


@dataclass(frozen=True)
class StepReply:
    row_cts: tuple
    pad_ct: HeCiphertext


@dataclass(frozen=True)
class FinalQuery:
    state_selector: tuple
    trace_digest: bytes


@dataclass(frozen=True)
class FinalChallenge:
    masked_bit_ct: HeCiphertext


@dataclass(frozen=True)
class FinalOpen:
    masked_bit: int


@dataclass(frozen=True)
class VerdictMsg:
    accept: bool
    token: Optional[AuthToken] = None


@dataclass(frozen=True)
class OracleReport:
    anon_id: str
    reported_at: int
    reporter_key: bytes  # raw Ed25519 public key
    signature: bytes


@dataclass(frozen=True)
class OracleReportAck:
    anon_id: str
    reported_at: int
    created: bool


@dataclass(frozen=True)
class OracleList:
    since: Optional[int] = None


@dataclass(frozen=True)
class OracleListReply:
    ids: tuple


@dataclass(frozen=True)
class ErrorMsg:
    code: str
    detail: str = ""


MESSAGE_TYPES = {
    Hello: MsgType.HELLO, Params: MsgType.PARAMS, InitQuery: MsgType.INIT_QUERY,
    InitReply: MsgType.INIT_REPLY, StepQuery: MsgType.STEP_QUERY,
    StepReply: MsgType.STEP_REPLY, FinalQuery: MsgType.FINAL_QUERY,
    FinalChallenge: MsgType.FINAL_CHALLENGE, FinalOpen: MsgType.FINAL_OPEN,
    VerdictMsg: MsgType.VERDICT, OracleReport: MsgType.ORACLE_REPORT,
    OracleReportAck: MsgType.ORACLE_REPORT_ACK, OracleList: MsgType.ORACLE_LIST,
    OracleListReply: MsgType.ORACLE_LIST_REPLY, ErrorMsg: MsgType.ERROR,
}
_CLASSES = {t: cls for cls, t in MESSAGE_TYPES.items()}
_NEEDS_KEY = {InitQuery, InitReply, StepQuery, StepReply, FinalQuery, FinalChallenge, FinalOpen}


def ciphertext_count(msg) -> int:
    """Number of ciphertexts a message carries."""
    count = 0
    for f in fields(msg):
        v = getattr(msg, f.name)
        if isinstance(v, HeCiphertext):
            count += 1
        elif isinstance(v, tuple):
            count += sum(isinstance(x, HeCiphertext) for x in v)
    return count


# --- payload writer / reader -----------------------------------------------

class _Writer:
    def __init__(self, pk: Optional[HePublicKey]):
        self.pk = pk
        self.buf = bytearray()

    def u8(self, v):
        self.buf += struct.pack(">B", v)

    def u16(self, v):
        self.buf += struct.pack(">H", v)

    def u32(self, v):
        self.buf += struct.pack(">I", v)

    def u64(self, v):
        self.buf += struct.pack(">Q", v)

    def blob(self, b: bytes):
        self.u32(len(b))
        self.buf += b

    def text(self, s: str):
        self.blob(s.encode("utf-8"))

    def key(self) -> HePublicKey:
        if self.pk is None:
            raise ValueError("encoding this message needs the session public key")
        return self.pk

    def ct(self, c: HeCiphertext):
        pk = self.key()
        if c.pk.fingerprint != pk.fingerprint:
            raise ValueError("ciphertext under a foreign key")
        self.blob(c.to_bytes())

    def cts(self, cs):
        self.u32(len(cs))
        for c in cs:
            self.ct(c)

    def integer(self, v: int):
        self.blob(int(v).to_bytes(self.key().n_bytes, "big"))

    def integers(self, vs):
        self.u32(len(vs))
        for v in vs:
            self.integer(v)


class _Reader:
    def __init__(self, data: bytes, pk: Optional[HePublicKey]):
        self.data = data
        self.pos = 0
        self.pk = pk

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise MalformedEncoding("truncated payload", self.pos)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self):
        return self.take(1)[0]

    def u16(self):
        return struct.unpack(">H", self.take(2))[0]

    def u32(self):
        return struct.unpack(">I", self.take(4))[0]

    def u64(self):
        return struct.unpack(">Q", self.take(8))[0]

    def blob(self) -> bytes:
        return self.take(self.u32())

    def text(self) -> str:
        start = self.pos
        try:
            return self.blob().decode("utf-8")
        except UnicodeDecodeError:
            raise MalformedEncoding("invalid utf-8", start) from None

    def count(self, min_item: int) -> int:
        n = self.u32()
        if n * min_item > len(self.data) - self.pos:
            raise MalformedEncoding("element count exceeds payload", self.pos - 4)
        return n

    def key(self) -> HePublicKey:
        if self.pk is None:
            raise MalformedEncoding("message needs a session key to decode", self.pos)
        return self.pk

    def ct(self) -> HeCiphertext:
        start = self.pos
        raw = self.blob()
        pk = self.key()
        if len(raw) != pk.ct_bytes:
            raise MalformedEncoding("ciphertext has the wrong width", start)
        try:
            return HeCiphertext.from_bytes(pk, raw)
        except MalformedEncoding:
            raise MalformedEncoding("ciphertext out of range", start) from None

    def cts(self) -> tuple:
        return tuple(self.ct() for _ in range(self.count(4)))

    def integer(self) -> int:
        start = self.pos
        raw = self.blob()
        if len(raw) != self.key().n_bytes:
            raise MalformedEncoding("integer has the wrong width", start)
        return int.from_bytes(raw, "big")

    def integers(self) -> tuple:
        return tuple(self.integer() for _ in range(self.count(4)))

    def done(self):
        if self.pos != len(self.data):
            raise MalformedEncoding("trailing bytes in payload", self.pos)


def _encode_payload(msg, w: _Writer):
    if isinstance(msg, Hello):
        w.blob(dump_public(msg.pk))
        w.u32(msg.trace_len)
        w.blob(msg.policy_id)
    elif isinstance(msg, Params):
        w.buf += msg.session_id
        w.u32(msg.q_count)
        w.u32(len(msg.alphabet))
        for label, value in msg.alphabet:
            w.text(label)
            w.text(value or "")
        w.u16(msg.kappa)
    elif isinstance(msg, InitQuery):
        w.cts(msg.selector)
    elif isinstance(msg, InitReply):
        w.integers(msg.padded_row)
        w.ct(msg.pad_ct)
    elif isinstance(msg, StepQuery):
        w.cts(msg.state_selector)
        w.cts(msg.symbol_selector)
    elif isinstance(msg, StepReply):
        w.cts(msg.row_cts)
        w.ct(msg.pad_ct)
    elif isinstance(msg, FinalQuery):
        w.cts(msg.state_selector)
        w.blob(msg.trace_digest)
    elif isinstance(msg, FinalChallenge):
        w.ct(msg.masked_bit_ct)
    elif isinstance(msg, FinalOpen):
        w.integer(msg.masked_bit)
    elif isinstance(msg, VerdictMsg):
        # fixed size whatever the outcome: absent tokens are zero-filled
        w.u8(1 if msg.accept else 0)
        w.u8(0 if msg.token is None else 1)
        w.buf += bytes(TOKEN_LEN) if msg.token is None else msg.token.to_bytes()
    elif isinstance(msg, OracleReport):
        w.text(msg.anon_id)
        w.u64(msg.reported_at)
        w.blob(msg.reporter_key)
        w.blob(msg.signature)
    elif isinstance(msg, OracleReportAck):
        w.text(msg.anon_id)
        w.u64(msg.reported_at)
        w.u8(1 if msg.created else 0)
    elif isinstance(msg, OracleList):
        w.u8(0 if msg.since is None else 1)
        w.u64(msg.since or 0)
    elif isinstance(msg, OracleListReply):
        w.u32(len(msg.ids))
        for i in msg.ids:
            w.text(i)
    elif isinstance(msg, ErrorMsg):
        w.text(msg.code)
        w.text(msg.detail)
    else:
        raise TypeError(f"not a protocol message: {msg!r}")


def _decode_payload(cls, r: _Reader):
    if cls is Hello:
        start = r.pos
        try:
            pk = load_public(r.blob())
        except MalformedEncoding:
            raise MalformedEncoding("invalid public key", start) from None
        if pk.n < 3:
            raise MalformedEncoding("invalid public key", start)
        trace_len = r.u32()
        return Hello(pk, trace_len, r.blob())
    if cls is Params:
        session_id = r.take(16)
        q_count = r.u32()
        symbols = []
        for _ in range(r.count(8)):
            start = r.pos
            label, value = r.text(), r.text()
            try:
                symbols.append(Event(label, value or None).symbol)
            except ValueError:
                raise MalformedEncoding("invalid alphabet symbol", start) from None
        try:
            alphabet = Alphabet(symbols)
        except ValueError:
            raise MalformedEncoding("duplicate alphabet symbol", r.pos) from None
        return Params(session_id, q_count, alphabet, r.u16())
    if cls is InitQuery:
        return InitQuery(r.cts())
    if cls is InitReply:
        return InitReply(r.integers(), r.ct())
    if cls is StepQuery:
        return StepQuery(r.cts(), r.cts())
    if cls is StepReply:
        return StepReply(r.cts(), r.ct())
    if cls is FinalQuery:
        return FinalQuery(r.cts(), r.blob())
    if cls is FinalChallenge:
        return FinalChallenge(r.ct())
    if cls is FinalOpen:
        return FinalOpen(r.integer())
    if cls is VerdictMsg:
        accept, has_token = r.u8(), r.u8()
        start = r.pos
        raw = r.take(TOKEN_LEN)
        if accept > 1 or has_token > 1:
            raise MalformedEncoding("invalid flag", start - 2)
        if not has_token:
            if any(raw):
                raise MalformedEncoding("non-zero token padding", start)
            return VerdictMsg(bool(accept), None)
        try:
            token = AuthToken.from_bytes(raw)
        except MalformedEncoding as exc:
            raise MalformedEncoding(f"bad token: {exc}", start) from None
        return VerdictMsg(bool(accept), token)
    if cls is OracleReport:
        return OracleReport(r.text(), r.u64(), r.blob(), r.blob())
    if cls is OracleReportAck:
        anon_id, at, created = r.text(), r.u64(), r.u8()
        return OracleReportAck(anon_id, at, bool(created))
    if cls is OracleList:
        flag, since = r.u8(), r.u64()
        return OracleList(since if flag else None)
    if cls is OracleListReply:
        return OracleListReply(tuple(r.text() for _ in range(r.count(4))))
    if cls is ErrorMsg:
        return ErrorMsg(r.text(), r.text())
    raise TypeError(cls)


def encode_message(msg, pk: Optional[HePublicKey] = None) -> bytes:
    """Serialize `msg` as a complete frame."""
    w = _Writer(pk)
    _encode_payload(msg, w)
    payload = bytes(w.buf)
    return struct.pack(">IBB", 2 + len(payload), PROTOCOL_VERSION, MESSAGE_TYPES[type(msg)]) + payload


def split_frame(data: bytes) -> tuple[int, bytes]:
    """Validate the frame header; return ``(msg_type, payload)``."""
    if len(data) < 6:
        raise MalformedFrame(f"frame shorter than its 6-byte header ({len(data)} bytes)")
    length, version, msg_type = struct.unpack_from(">IBB", data, 0)
    if length != len(data) - 4:
        raise MalformedFrame(f"length field {length} does not match frame size {len(data) - 4}")
    if version != PROTOCOL_VERSION:
        raise MalformedFrame(f"unsupported protocol version {version}")
    if msg_type not in _CLASSES:
        raise MalformedFrame(f"unknown message type {msg_type}")
    return msg_type, data[6:]


def decode_message(data: bytes, pk: Optional[HePublicKey] = None):
    """Parse one complete frame; any defect raises :class:`MalformedFrame`."""
    msg_type, payload = split_frame(data)
    cls = _CLASSES[msg_type]
    r = _Reader(payload, pk)
    try:
        msg = _decode_payload(cls, r)
        r.done()
    except MalformedEncoding as exc:
        raise MalformedFrame(f"{MsgType(msg_type).name}: {exc}") from None
    return msg


def read_frame(sock) -> bytes:
    """Read exactly one frame from a socket; raises EOFError on clean close."""
    header = _recv_exact(sock, 4, allow_eof=True)
    (length,) = struct.unpack(">I", header)
    if length < 2 or length > MAX_FRAME:
        raise MalformedFrame(f"bad frame length {length}")
    return header + _recv_exact(sock, length)


def _recv_exact(sock, n: int, allow_eof: bool = False) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            if allow_eof and not buf:
                raise EOFError("connection closed")
            raise MalformedFrame("connection closed mid-frame")
        buf += chunk
    return bytes(buf)


def needs_key(msg_type: int) -> bool:
    return _CLASSES.get(msg_type) in _NEEDS_KEY
