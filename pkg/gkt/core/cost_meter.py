"""Multiply-add and buffer accounting for tensor ops.

A :class:`CostMeter` is activated with :func:`metering`; while active, every
matmul-like op reports its multiply-adds and every op reports the buffer it
allocated, both attributed to the innermost :func:`cost_scope` label.
"""
from __future__ import annotations

import contextvars
import logging
import threading
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, Iterator, Optional, Tuple

logger = logging.getLogger(__name__)

DEFAULT_SCOPE = "other"

_ACTIVE_METER: contextvars.ContextVar[Optional["CostMeter"]] = contextvars.ContextVar(
    "gkt_active_meter", default=None
)
_SCOPE: contextvars.ContextVar[str] = contextvars.ContextVar("gkt_cost_scope", default=DEFAULT_SCOPE)


@dataclass
class CostMeter:
    macs: Dict[str, int] = field(default_factory=lambda: defaultdict(int))
    largest_buffer: Dict[str, int] = field(default_factory=lambda: defaultdict(int))
    largest_shape: Dict[str, Tuple[int, ...]] = field(default_factory=dict)
    total_bytes: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def add_macs(self, label: str, count: int) -> None:
        with self._lock:
            self.macs[label] += int(count)

    def add_buffer(self, label: str, shape: Tuple[int, ...], nbytes: int) -> None:
        with self._lock:
            self.total_bytes += int(nbytes)
            if nbytes > self.largest_buffer[label]:
                self.largest_buffer[label] = int(nbytes)
                self.largest_shape[label] = tuple(shape)

    @property
    def total_macs(self) -> int:
        return sum(self.macs.values())

    @property
    def peak_buffer_bytes(self) -> int:
        return max(self.largest_buffer.values(), default=0)

    def to_dict(self) -> dict:
        return {
            "macs": dict(sorted(self.macs.items())),
            "total_macs": self.total_macs,
            "peak_buffer_bytes": self.peak_buffer_bytes,
            "largest_buffer": dict(sorted(self.largest_buffer.items())),
            "total_bytes": self.total_bytes,
        }


@contextmanager
def metering(meter: Optional[CostMeter] = None) -> Iterator[CostMeter]:
    meter = meter if meter is not None else CostMeter()
    token = _ACTIVE_METER.set(meter)
    try:
        yield meter
    finally:
        _ACTIVE_METER.reset(token)


@contextmanager
def cost_scope(label: str) -> Iterator[None]:
    token = _SCOPE.set(label)
    try:
        yield
    finally:
        _SCOPE.reset(token)


def record_macs(count: int, label: Optional[str] = None) -> None:
    meter = _ACTIVE_METER.get()
    if meter is not None:
        meter.add_macs(label or _SCOPE.get(), count)


def record_buffer(shape: Tuple[int, ...], nbytes: int) -> None:
    meter = _ACTIVE_METER.get()
    if meter is not None:
        meter.add_buffer(_SCOPE.get(), shape, nbytes)


__all__ = ["CostMeter", "metering", "cost_scope", "record_macs", "record_buffer", "DEFAULT_SCOPE"]
