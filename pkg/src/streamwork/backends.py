"""Resolve a broker-backend argument into a live Broker instance."""

from __future__ import annotations

from typing import Optional, Union

from .broker import Broker, MemoryBroker


def make_broker(backend: Union[str, Broker, None], url: Optional[str] = None) -> tuple[Broker, bool]:
    """Returns (broker, owned).  ``owned`` means the caller should close it.

    Accepts a Broker instance, "memory", or "stream"/"stream_broker" (the
    latter connects to ``url`` or $BROKER_URL).
    """
    if isinstance(backend, Broker):
        return backend, False
    if backend in (None, "memory"):
        return MemoryBroker(), True
    if backend in ("stream", "stream_broker", "redis"):
        from .stream_broker import StreamBroker

        return StreamBroker(url), True
    raise ValueError(f"unknown broker backend {backend!r}")
