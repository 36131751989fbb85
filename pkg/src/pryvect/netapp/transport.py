"""Socket plumbing shared by services and clients.

An endpoint is ``"host:port"``, a ``(host, port)`` tuple, or a zero-argument
callable returning a connected socket. The callable form is how tests and the
scenario harness run services over in-process socket pairs.
"""

from __future__ import annotations

import socket
import threading
from typing import Callable, Optional, Union

from .. import errors
from ..messages import ErrorMsg, decode_message, encode_message, read_frame

Endpoint = Union[str, tuple, Callable[[], socket.socket]]


def parse_endpoint(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise errors.ConfigError(f"endpoint must be host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


def connect(endpoint: Endpoint, timeout: Optional[float] = 30.0) -> socket.socket:
    try:
        if callable(endpoint):
            sock = endpoint()
        else:
            addr = parse_endpoint(endpoint) if isinstance(endpoint, str) else tuple(endpoint)
            sock = socket.create_connection(addr, timeout=timeout)
    except OSError as exc:
        raise errors.TransportError(f"cannot connect to {endpoint!r}: {exc}") from exc
    sock.settimeout(timeout)
    return sock


def pipe(handler: Callable[[socket.socket], None]) -> socket.socket:
    """Run `handler` on one end of a socket pair in a thread; return the other end."""
    ours, theirs = socket.socketpair()

    def serve():
        try:
            handler(theirs)
        finally:
            theirs.close()

    threading.Thread(target=serve, daemon=True).start()
    return ours


def send(sock: socket.socket, msg, pk=None) -> int:
    frame = encode_message(msg, pk)
    try:
        sock.sendall(frame)
    except OSError as exc:
        raise errors.TransportError(f"send failed: {exc}") from exc
    return len(frame)


def receive(sock: socket.socket, pk=None) -> tuple[object, int]:
    """Read and decode one frame; returns ``(message, frame_size)``."""
    try:
        frame = read_frame(sock)
    except EOFError:
        raise errors.TransportError("peer closed the connection") from None
    except OSError as exc:
        raise errors.TransportError(f"receive failed: {exc}") from exc
    return decode_message(frame, pk), len(frame)


def error_message(exc: BaseException) -> ErrorMsg:
    code = type(exc).__name__ if isinstance(exc, errors.PryvectError) else "InternalError"
    return ErrorMsg(code, str(exc)[:500])


def raise_remote(msg: ErrorMsg):
    """Re-raise an ERROR frame as the matching local exception type."""
    cls = getattr(errors, msg.code, None)
    if not (isinstance(cls, type) and issubclass(cls, errors.PryvectError)):
        cls = errors.ProtocolViolation
    try:
        exc = cls(msg.detail)
    except TypeError:
        exc = errors.ProtocolViolation(f"{msg.code}: {msg.detail}")
    raise exc


def expect(msg, cls):
    if isinstance(msg, ErrorMsg):
        raise_remote(msg)
    if not isinstance(msg, cls):
        names = "/".join(c.__name__ for c in (cls if isinstance(cls, tuple) else (cls,)))
        raise errors.ProtocolViolation(f"expected {names}, got {type(msg).__name__}")
    return msg
