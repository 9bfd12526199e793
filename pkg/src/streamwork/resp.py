"""Minimal client for the stream-broker wire protocol (RESP2).

Only what the stream backend needs: command arrays out, the five RESP reply
types back.  Connections are not thread-safe; callers keep one per thread.
"""

from __future__ import annotations

import socket
from typing import Optional, Union
from urllib.parse import urlparse

RespValue = Union[bytes, int, list, None]


class ProtocolError(Exception):
    pass


class ServerError(Exception):
    """Error reply (``-ERR ...``) returned by the broker."""


def encode_command(*args) -> bytes:
    parts = [b"*%d\r\n" % len(args)]
    for arg in args:
        if isinstance(arg, bytes):
            data = arg
        elif isinstance(arg, str):
            data = arg.encode("utf-8")
        elif isinstance(arg, (int, float)):
            data = str(arg).encode("ascii")
        else:
            raise TypeError(f"cannot encode argument of type {type(arg).__name__}")
        parts.append(b"$%d\r\n%s\r\n" % (len(data), data))
    return b"".join(parts)


class RespConnection:
    """One TCP connection speaking RESP.  ``execute`` sends and reads a reply."""

    def __init__(self, host: str, port: int, connect_timeout: float = 5.0):
        self.host = host
        self.port = port
        try:
            self._sock = socket.create_connection((host, port), timeout=connect_timeout)
        except OSError as exc:
            raise ConnectionError(f"cannot reach broker at {host}:{port}: {exc}") from exc
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._file = self._sock.makefile("rb")

    def execute(self, *args, timeout: Optional[float] = 10.0) -> RespValue:
        self._sock.settimeout(timeout)
        try:
            self._sock.sendall(encode_command(*args))
            return self._read_reply()
        except (OSError, EOFError) as exc:
            raise ConnectionError(f"broker connection lost: {exc}") from exc

    def _read_line(self) -> bytes:
        line = self._file.readline()
        if not line.endswith(b"\r\n"):
            raise EOFError("connection closed mid-reply")
        return line[:-2]

    def _read_reply(self) -> RespValue:
        line = self._read_line()
        if not line:
            raise ProtocolError("empty reply line")
        marker, rest = line[:1], line[1:]
        if marker == b"+":
            return rest
        if marker == b"-":
            raise ServerError(rest.decode("utf-8", "replace"))
        if marker == b":":
            return int(rest)
        if marker == b"$":
            n = int(rest)
            if n == -1:
                return None
            data = self._file.read(n + 2)
            if len(data) != n + 2:
                raise EOFError("connection closed mid-bulk")
            return data[:-2]
        if marker == b"*":
            n = int(rest)
            if n == -1:
                return None
            return [self._read_reply() for _ in range(n)]
        raise ProtocolError(f"unknown reply marker {marker!r}")

    def close(self) -> None:
        try:
            self._file.close()
            self._sock.close()
        except OSError:
            pass


def parse_broker_url(url: str) -> tuple[str, int]:
    """Accepts redis://host:port[/db] or host:port; the db part is ignored."""
    if "//" not in url:
        url = "redis://" + url
    parsed = urlparse(url)
    if not parsed.hostname:
        raise ValueError(f"cannot parse broker url {url!r}")
    return parsed.hostname, parsed.port or 6379


def pairs_to_dict(flat: list) -> dict[bytes, RespValue]:
    """RESP map replies arrive as flat [k, v, k, v, ...] arrays."""
    return {flat[i]: flat[i + 1] for i in range(0, len(flat), 2)}
