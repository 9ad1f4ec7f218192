"""Seeded emulation of inter-site WAN links: base delay, jitter, loss.

Every link owns a dedicated pseudo-random stream keyed by the experiment
seed and the link id, so adding or reordering links never perturbs the
draws of the others.  This module is the only source of nondeterminism in
the kit, and it is fully reproducible under a seed.
"""

from __future__ import annotations

import heapq
import zlib
from dataclasses import dataclass, field
from typing import Any

import numpy as np

MS = 1_000_000  # ns per millisecond


@dataclass(frozen=True)
class Jitter:
    """Delay noise model: none, uniform(+/-amplitude), or normal truncated at 3 sigma."""

    kind: str = "none"  # "none" | "uniform" | "normal"
    param_ns: int = 0  # amplitude for uniform, sigma for normal

    def __post_init__(self):
        if self.kind not in ("none", "uniform", "normal"):
            raise ValueError(f"unknown jitter kind {self.kind!r}")
        if self.param_ns < 0:
            raise ValueError("jitter parameter must be >= 0")

    def draw(self, rng: np.random.Generator) -> int:
        if self.kind == "none":
            return 0
        if self.kind == "uniform":
            return int(rng.uniform(-self.param_ns, self.param_ns))
        x = rng.normal(0.0, self.param_ns)
        bound = 3.0 * self.param_ns
        return int(min(max(x, -bound), bound))

    @property
    def worst_case_ns(self) -> int:
        if self.kind == "none":
            return 0
        if self.kind == "uniform":
            return self.param_ns
        return 3 * self.param_ns


@dataclass(frozen=True)
class LinkModel:
    link_id: str
    base_delay_ns: int = 0
    jitter: Jitter = field(default_factory=Jitter)
    loss_prob: float = 0.0
    non_overtaking: bool = False

    def __post_init__(self):
        if self.base_delay_ns < 0:
            raise ValueError("base_delay_ns must be >= 0")
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError("loss_prob must be in [0, 1]")

    @property
    def worst_case_delay_ns(self) -> int:
        return self.base_delay_ns + self.jitter.worst_case_ns

    @property
    def min_delay_ns(self) -> int:
        """Nominal minimum transport latency used by the causality checker."""
        return self.base_delay_ns


@dataclass(frozen=True)
class ScheduledDelivery:
    message: Any
    deliver_time_ns: int
    draw_index: int
    dropped: bool = False


def link_rng(experiment_seed: int, link_id: str) -> np.random.Generator:
    """Dedicated generator for one link under one experiment seed."""
    key = zlib.crc32(link_id.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([experiment_seed, key]))


class LinkScheduler:
    """Per-link scheduler: draws loss then jitter, queues deliveries in order.

    Draws occur only inside :meth:`schedule`; the owner serializes calls.
    """

    def __init__(self, link: LinkModel, experiment_seed: int = 0):
        self.link = link
        self._rng = link_rng(experiment_seed, link.link_id)
        self._queue: list[tuple[int, int, ScheduledDelivery]] = []
        self._draws = 0
        self._last_deliver_ns = -1

    def schedule(self, message: Any, now_ns: int) -> ScheduledDelivery:
        """Assign a delivery time (or drop); dropped messages are not queued."""
        if now_ns < 0:
            raise ValueError("now_ns must be >= 0")
        index = self._draws
        self._draws += 1
        lost = self.link.loss_prob > 0.0 and self._rng.random() < self.link.loss_prob
        if lost:
            return ScheduledDelivery(message, -1, index, dropped=True)
        effective = max(0, self.link.base_delay_ns + self.link.jitter.draw(self._rng))
        deliver = now_ns + effective
        if self.link.non_overtaking and deliver < self._last_deliver_ns:
            deliver = self._last_deliver_ns
        self._last_deliver_ns = max(self._last_deliver_ns, deliver)
        delivery = ScheduledDelivery(message, deliver, index)
        heapq.heappush(self._queue, (deliver, index, delivery))
        return delivery

    def deliver_due(self, now_ns: int) -> list[ScheduledDelivery]:
        """Pop all deliveries with deliver_time <= now, ordered by (time, draw)."""
        due: list[ScheduledDelivery] = []
        while self._queue and self._queue[0][0] <= now_ns:
            due.append(heapq.heappop(self._queue)[2])
        return due

    def pending(self) -> int:
        return len(self._queue)

    def next_due_ns(self) -> int | None:
        return self._queue[0][0] if self._queue else None


def parse_link(obj: dict, from_site: str, peer: str) -> LinkModel:
    """Build a LinkModel from the sites.json `links[]` entry schema."""
    from .errors import SchemaError

    allowed = {"peer", "base_delay_ms", "jitter", "loss", "non_overtaking"}
    unknown = set(obj) - allowed
    if unknown:
        raise SchemaError("unknown-field", f"unexpected field(s) {sorted(unknown)} in link", f"{from_site}->{peer}")
    jitter_raw = obj.get("jitter")
    if jitter_raw in (None, "none"):
        jitter = Jitter()
    elif isinstance(jitter_raw, dict):
        kind = jitter_raw.get("type")
        if kind == "uniform":
            jitter = Jitter("uniform", int(float(jitter_raw.get("amplitude_ms", 0)) * MS))
        elif kind == "normal":
            jitter = Jitter("normal", int(float(jitter_raw.get("sigma_ms", 0)) * MS))
        elif kind == "none":
            jitter = Jitter()
        else:
            raise SchemaError("bad-value", f"unknown jitter type {kind!r}", f"{from_site}->{peer}")
    else:
        raise SchemaError("bad-type", "jitter must be an object or \"none\"", f"{from_site}->{peer}")
    try:
        return LinkModel(
            link_id=f"{from_site}->{peer}",
            base_delay_ns=int(float(obj.get("base_delay_ms", 0)) * MS),
            jitter=jitter,
            loss_prob=float(obj.get("loss", 0.0)),
            non_overtaking=bool(obj.get("non_overtaking", False)),
        )
    except ValueError as exc:
        raise SchemaError("bad-value", str(exc), f"{from_site}->{peer}") from exc
