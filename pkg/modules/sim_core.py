"""
Deterministic discrete-event core.

Virtual time is an integer count of microseconds since simulation start.
Events with equal timestamps are delivered in insertion order.
"""

import heapq
import itertools
import logging
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Optional, Set, Tuple

from .errors import CausalityError, SimulationError

logger = logging.getLogger(__name__)

VirtualTime = int

US_PER_MS = 1_000
US_PER_S = 1_000_000


def seconds(value: float) -> VirtualTime:
    """Convert seconds to virtual microseconds."""
    return int(round(value * US_PER_S))


def millis(value: float) -> VirtualTime:
    """Convert milliseconds to virtual microseconds."""
    return int(round(value * US_PER_MS))


def to_seconds(micros: VirtualTime) -> float:
    return micros / US_PER_S


@dataclass(frozen=True)
class Event:
    """A scheduled delivery to one component."""

    at: VirtualTime
    seq: int
    target: str
    kind: str
    payload: Any = None


@dataclass(frozen=True)
class LogEntry:
    at: VirtualTime
    seq: int
    component: str
    kind: str
    detail: str = ""

    def to_line(self) -> str:
        line = f"t={self.at} {self.component} {self.kind}"
        return f"{line} {self.detail}" if self.detail else line


class SimLog:
    """Ordered record of what components reported during a run."""

    def __init__(self):
        self._entries: List[LogEntry] = []
        self._seq = itertools.count()

    def append(self, at: VirtualTime, component: str, kind: str, detail: str = "") -> LogEntry:
        entry = LogEntry(at, next(self._seq), component, kind, detail)
        self._entries.append(entry)
        return entry

    @property
    def entries(self) -> List[LogEntry]:
        return list(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[LogEntry]:
        return iter(self._entries)

    def find(self, kind: Optional[str] = None, component: Optional[str] = None) -> List[LogEntry]:
        """Return entries matching the given kind and/or component."""
        return [
            e for e in self._entries
            if (kind is None or e.kind == kind) and (component is None or e.component == component)
        ]

    def first(self, kind: str, component: Optional[str] = None) -> Optional[LogEntry]:
        matches = self.find(kind, component)
        return matches[0] if matches else None

    def count(self, kind: str, component: Optional[str] = None) -> int:
        return len(self.find(kind, component))

    def lines(self) -> List[str]:
        return [e.to_line() for e in self._entries]

    def to_text(self) -> str:
        return "".join(line + "\n" for line in self.lines())

    def write(self, path: Path) -> None:
        Path(path).write_text(self.to_text(), encoding="ascii")
        logger.info(f"Wrote {len(self._entries)} log entries to {path}")


Handler = Callable[[Event], None]


class Simulator:
    """Single-threaded event loop with a virtual microsecond clock."""

    def __init__(self, seed: int = 1):
        """
        Initialize the simulator.

        Args:
            seed: Seed for the run's single RNG
        """
        self.seed = seed
        self.rng = random.Random(seed)
        self.log = SimLog()
        self._now: VirtualTime = 0
        self._queue: List[Tuple[VirtualTime, int, Event]] = []
        self._seq = itertools.count()
        self._handlers: Dict[str, Handler] = {}
        self._cancelled: Set[int] = set()
        self._pending_ids: Set[int] = set()
        self.scheduled_count = 0
        self.delivered_count = 0
        self.cancelled_count = 0

    def now(self) -> VirtualTime:
        return self._now

    def register(self, component_id: str, handler: Handler) -> None:
        if component_id in self._handlers:
            raise SimulationError(f"Component '{component_id}' already registered")
        self._handlers[component_id] = handler

    def schedule(self, at: VirtualTime, target: str, kind: str, payload: Any = None) -> int:
        """
        Enqueue an event.

        Args:
            at: Delivery time in microseconds
            target: Registered component id
            kind: Event kind, dispatched by the component
            payload: Opaque data or typed signal

        Returns:
            int: Event id (its insertion sequence number)

        Raises:
            CausalityError: If at is earlier than now()
        """
        if at < self._now:
            raise CausalityError(f"Cannot schedule '{kind}' for {target} at t={at}; now is t={self._now}")
        seq = next(self._seq)
        heapq.heappush(self._queue, (at, seq, Event(at, seq, target, kind, payload)))
        self._pending_ids.add(seq)
        self.scheduled_count += 1
        return seq

    def schedule_in(self, delay: VirtualTime, target: str, kind: str, payload: Any = None) -> int:
        return self.schedule(self._now + delay, target, kind, payload)

    def cancel(self, event_id: int) -> None:
        """Mark a pending event so it is skipped when reached."""
        if event_id in self._pending_ids:
            self._cancelled.add(event_id)

    def pending(self) -> int:
        return len(self._pending_ids) - len(self._cancelled)

    def next_event_time(self) -> Optional[VirtualTime]:
        self._discard_cancelled_head()
        return self._queue[0][0] if self._queue else None

    def record(self, component: str, kind: str, detail: str = "") -> None:
        """Append a semantic entry to the run's SimLog."""
        self.log.append(self._now, component, kind, detail)

    def step(self) -> bool:
        """Deliver the next event. Returns False when the queue is empty."""
        self._discard_cancelled_head()
        if not self._queue:
            return False
        at, seq, event = heapq.heappop(self._queue)
        self._pending_ids.discard(seq)
        self._now = at
        handler = self._handlers.get(event.target)
        if handler is None:
            raise SimulationError(f"No component registered as '{event.target}'")
        self.delivered_count += 1
        handler(event)
        return True

    def run_until(self, deadline: Optional[VirtualTime] = None, stop: Optional[Callable[[], bool]] = None) -> SimLog:
        """
        Process events up to and including the deadline.

        Args:
            deadline: Last virtual time to process; None runs until quiescent
            stop: Optional predicate checked after every event

        Returns:
            SimLog: The run's cumulative log
        """
        while True:
            next_at = self.next_event_time()
            if next_at is None or (deadline is not None and next_at > deadline):
                break
            self.step()
            if stop is not None and stop():
                return self.log
        if deadline is not None and self._queue and deadline > self._now:
            self._now = deadline
        return self.log

    def _discard_cancelled_head(self) -> None:
        while self._queue and self._queue[0][1] in self._cancelled:
            _, seq, _ = heapq.heappop(self._queue)
            self._pending_ids.discard(seq)
            self._cancelled.discard(seq)
            self.cancelled_count += 1


class SimComponent:
    """Base for anything that receives events; dispatches on event kind."""

    def __init__(self, sim: Simulator, component_id: str):
        self.sim = sim
        self.component_id = component_id
        sim.register(component_id, self.handle_event)

    def handle_event(self, event: Event) -> None:
        handler = getattr(self, f"_on_{event.kind}", None)
        if handler is None:
            raise SimulationError(f"{self.component_id} has no handler for '{event.kind}'")
        handler(event.payload)

    def now(self) -> VirtualTime:
        return self.sim.now()

    def schedule_in(self, delay: VirtualTime, kind: str, payload: Any = None) -> int:
        return self.sim.schedule_in(delay, self.component_id, kind, payload)

    def schedule_at(self, at: VirtualTime, kind: str, payload: Any = None) -> int:
        return self.sim.schedule(at, self.component_id, kind, payload)

    def record(self, kind: str, detail: str = "") -> None:
        self.sim.record(self.component_id, kind, detail)
