"""In-process stream broker speaking the subset of the wire protocol the
stream backend uses: append, consumer-group read, ack, pending/idle queries
and reclaim.

Intended as a test double and local-demo broker; point BROKER_URL at a real
stream broker for anything beyond desk scale.  Durability is out of scope.
"""

from __future__ import annotations

import socketserver
import threading
import time
from typing import Optional


class _Consumer:
    __slots__ = ("created", "last_delivery")

    def __init__(self):
        self.created = time.monotonic()
        self.last_delivery: Optional[float] = None

    def idle_ms(self) -> int:
        anchor = self.last_delivery if self.last_delivery is not None else self.created
        return int((time.monotonic() - anchor) * 1000)


class _Group:
    __slots__ = ("delivered", "consumers", "pel")

    def __init__(self):
        self.delivered = 0  # entries handed out so far (index into the stream)
        self.consumers: dict[str, _Consumer] = {}
        # entry id -> [owner consumer, delivery monotonic time]
        self.pel: dict[str, list] = {}


class _Stream:
    __slots__ = ("entries", "groups", "last_ms", "last_seq")

    def __init__(self):
        self.entries: list[tuple[str, list]] = []  # (id, flat field-value list)
        self.groups: dict[str, _Group] = {}
        self.last_ms = 0
        self.last_seq = 0

    def next_id(self) -> str:
        ms = int(time.time() * 1000)
        if ms <= self.last_ms:
            self.last_seq += 1
        else:
            self.last_ms, self.last_seq = ms, 0
        return f"{self.last_ms}-{self.last_seq}"


class _Store:
    def __init__(self):
        self.streams: dict[bytes, _Stream] = {}
        self.cond = threading.Condition()

    def stream(self, key: bytes, create: bool = False) -> Optional[_Stream]:
        s = self.streams.get(key)
        if s is None and create:
            s = self.streams[key] = _Stream()
        return s


def _enc_simple(text: str) -> bytes:
    return b"+" + text.encode() + b"\r\n"


def _enc_error(text: str) -> bytes:
    return b"-ERR " + text.encode() + b"\r\n"


def _enc(value) -> bytes:
    """Encode ints, bytes/str bulks, None and nested lists."""
    if value is None:
        return b"$-1\r\n"
    if isinstance(value, int):
        return b":%d\r\n" % value
    if isinstance(value, str):
        value = value.encode()
    if isinstance(value, bytes):
        return b"$%d\r\n%s\r\n" % (len(value), value)
    if isinstance(value, (list, tuple)):
        return b"*%d\r\n" % len(value) + b"".join(_enc(v) for v in value)
    raise TypeError(f"cannot encode {type(value).__name__}")


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        while True:
            try:
                cmd = self._read_command()
            except (EOFError, ConnectionError, OSError):
                return
            if cmd is None:
                return
            name = cmd[0].upper().decode()
            if name == "QUIT":
                self.wfile.write(_enc_simple("OK"))
                return
            method = getattr(self, "cmd_" + name.replace("-", "_").lower(), None)
            if method is None:
                self.wfile.write(_enc_error(f"unknown command '{name}'"))
                continue
            try:
                reply = method(cmd[1:])
            except CommandError as exc:
                reply = _enc_error(str(exc))
            try:
                self.wfile.write(reply)
            except OSError:
                return

    def _read_command(self) -> Optional[list[bytes]]:
        line = self.rfile.readline()
        if not line:
            return None
        if not line.startswith(b"*"):
            raise EOFError("inline commands not supported")
        n = int(line[1:].rstrip())
        args = []
        for _ in range(n):
            header = self.rfile.readline()
            if not header.startswith(b"$"):
                raise EOFError("expected bulk string")
            size = int(header[1:].rstrip())
            data = self.rfile.read(size + 2)
            args.append(data[:-2])
        return args

    @property
    def store(self) -> _Store:
        return self.server.store  # type: ignore[attr-defined]

    # -- commands ---------------------------------------------------------

    def cmd_ping(self, args):
        return _enc_simple("PONG")

    def cmd_select(self, args):
        return _enc_simple("OK")

    def cmd_flushall(self, args):
        with self.store.cond:
            self.store.streams.clear()
        return _enc_simple("OK")

    def cmd_del(self, args):
        with self.store.cond:
            removed = sum(1 for key in args if self.store.streams.pop(key, None) is not None)
        return _enc(removed)

    def cmd_xadd(self, args):
        key, id_arg, fields = args[0], args[1], args[2:]
        if id_arg != b"*":
            raise CommandError("only auto ids are supported")
        if len(fields) % 2:
            raise CommandError("wrong number of arguments for XADD")
        with self.store.cond:
            stream = self.store.stream(key, create=True)
            entry_id = stream.next_id()
            stream.entries.append((entry_id, list(fields)))
            self.store.cond.notify_all()
        return _enc(entry_id)

    def cmd_xlen(self, args):
        with self.store.cond:
            stream = self.store.stream(args[0])
            return _enc(len(stream.entries) if stream else 0)

    def cmd_xgroup(self, args):
        sub = args[0].upper()
        with self.store.cond:
            if sub == b"CREATE":
                key, group = args[1], args[2]
                mkstream = b"MKSTREAM" in (a.upper() for a in args[4:])
                stream = self.store.stream(key, create=mkstream)
                if stream is None:
                    raise CommandError("no such key")
                if group in stream.groups:
                    return _enc_error("BUSYGROUP Consumer Group name already exists")
                stream.groups[group] = _Group()
                return _enc_simple("OK")
            if sub == b"CREATECONSUMER":
                key, group, consumer = args[1], args[2], args[3]
                g = self._group(key, group)
                created = consumer not in g.consumers
                if created:
                    g.consumers[consumer] = _Consumer()
                return _enc(int(created))
        raise CommandError(f"unsupported XGROUP subcommand {sub!r}")

    def _group(self, key: bytes, group: bytes) -> _Group:
        stream = self.store.stream(key)
        if stream is None or group not in stream.groups:
            raise CommandError("NOGROUP no such consumer group")
        return stream.groups[group]

    def cmd_xreadgroup(self, args):
        opts = {"COUNT": 1, "BLOCK": None}
        i = 0
        group = consumer = key = None
        while i < len(args):
            word = args[i].upper()
            if word == b"GROUP":
                group, consumer = args[i + 1], args[i + 2]
                i += 3
            elif word in (b"COUNT", b"BLOCK"):
                opts[word.decode()] = int(args[i + 1])
                i += 2
            elif word == b"STREAMS":
                key = args[i + 1]
                if args[i + 2] != b">":
                    raise CommandError("only the '>' cursor is supported")
                i += 3
            else:
                raise CommandError(f"unexpected XREADGROUP token {args[i]!r}")
        if group is None or key is None:
            raise CommandError("malformed XREADGROUP")
        deadline = None if opts["BLOCK"] is None else time.monotonic() + opts["BLOCK"] / 1000.0
        with self.store.cond:
            while True:
                g = self._group(key, group)
                stream = self.store.stream(key)
                cons = g.consumers.setdefault(consumer, _Consumer())
                if g.delivered < len(stream.entries):
                    batch = []
                    now = time.monotonic()
                    while g.delivered < len(stream.entries) and len(batch) < opts["COUNT"]:
                        entry_id, fields = stream.entries[g.delivered]
                        g.delivered += 1
                        g.pel[entry_id] = [consumer, now]
                        batch.append([entry_id, list(fields)])
                    cons.last_delivery = now
                    return _enc([[key, batch]])
                if deadline is None:
                    return _enc(None)
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return _enc(None)
                self.store.cond.wait(remaining)

    def cmd_xack(self, args):
        key, group, ids = args[0], args[1], args[2:]
        with self.store.cond:
            g = self._group(key, group)
            acked = sum(1 for entry_id in ids if g.pel.pop(entry_id.decode(), None) is not None)
        return _enc(acked)

    def cmd_xpending(self, args):
        key, group = args[0], args[1]
        with self.store.cond:
            g = self._group(key, group)
            if not g.pel:
                return _enc([0, None, None, None])
            ids = sorted(g.pel)
            per_consumer: dict[bytes, int] = {}
            for owner, _ in g.pel.values():
                per_consumer[owner] = per_consumer.get(owner, 0) + 1
            breakdown = [[owner, str(count)] for owner, count in sorted(per_consumer.items())]
            return _enc([len(g.pel), ids[0], ids[-1], breakdown])

    def cmd_xinfo(self, args):
        sub = args[0].upper()
        with self.store.cond:
            if sub == b"GROUPS":
                stream = self.store.stream(args[1])
                if stream is None:
                    raise CommandError("no such key")
                out = []
                for name, g in sorted(stream.groups.items()):
                    lag = len(stream.entries) - g.delivered
                    out.append([
                        b"name", name,
                        b"consumers", len(g.consumers),
                        b"pending", len(g.pel),
                        b"entries-read", g.delivered,
                        b"lag", lag,
                    ])
                return _enc(out)
            if sub == b"CONSUMERS":
                g = self._group(args[1], args[2])
                out = []
                for name, cons in sorted(g.consumers.items()):
                    pending = sum(1 for owner, _ in g.pel.values() if owner == name)
                    out.append([b"name", name, b"pending", pending, b"idle", cons.idle_ms()])
                return _enc(out)
        raise CommandError(f"unsupported XINFO subcommand {sub!r}")

    def cmd_xautoclaim(self, args):
        key, group, consumer, min_idle = args[0], args[1], args[2], int(args[3])
        count = 100
        if len(args) >= 7 and args[5].upper() == b"COUNT":
            count = int(args[6])
        with self.store.cond:
            g = self._group(key, group)
            stream = self.store.stream(key)
            by_id = dict(stream.entries)
            now = time.monotonic()
            claimed = []
            for entry_id in sorted(g.pel):
                if len(claimed) >= count:
                    break
                owner, delivered_at = g.pel[entry_id]
                if (now - delivered_at) * 1000 >= min_idle:
                    g.pel[entry_id] = [consumer, now]
                    claimed.append([entry_id, list(by_id[entry_id])])
            if claimed:
                cons = g.consumers.setdefault(consumer, _Consumer())
                cons.last_delivery = now
            return _enc([b"0-0", claimed, []])


class CommandError(Exception):
    pass


class MiniStreamServer:
    """Threaded TCP broker; ``with MiniStreamServer() as url: ...``."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        class _Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self._server = _Server((host, port), _Handler)
        self._server.store = _Store()  # type: ignore[attr-defined]
        self._thread: Optional[threading.Thread] = None

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"redis://{host}:{port}"

    def start(self) -> "MiniStreamServer":
        self._thread = threading.Thread(target=self._server.serve_forever, name="mini-broker", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread:
            self._thread.join(timeout=5)

    def __enter__(self) -> str:
        self.start()
        return self.url

    def __exit__(self, *exc) -> None:
        self.stop()
