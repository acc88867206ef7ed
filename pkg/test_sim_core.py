"""
Unit tests for the discrete-event core.
"""

import tempfile
import unittest
from pathlib import Path

from modules.errors import CausalityError, SimulationError
from modules.sim_core import SimComponent, SimLog, Simulator, millis, seconds, to_seconds


class Recorder(SimComponent):
    """Test component that logs every ping."""

    def __init__(self, sim, component_id="rec"):
        super().__init__(sim, component_id)
        self.seen = []

    def _on_ping(self, payload):
        self.seen.append((self.now(), payload))
        self.record("PING", str(payload))

    def _on_chain(self, remaining):
        self.record("CHAIN", str(remaining))
        if remaining:
            self.schedule_in(millis(1), "chain", remaining - 1)


class TestTimeHelpers(unittest.TestCase):

    def test_conversions(self):
        self.assertEqual(seconds(60), 60_000_000)
        self.assertEqual(seconds(0.5), 500_000)
        self.assertEqual(millis(200), 200_000)
        self.assertEqual(to_seconds(27_800_000), 27.8)


class TestSimulator(unittest.TestCase):
    """Test scheduling and delivery."""

    def setUp(self):
        self.sim = Simulator(seed=1)
        self.rec = Recorder(self.sim)

    def test_initial_state(self):
        """Fresh simulator starts at zero with an empty log."""
        self.assertEqual(self.sim.now(), 0)
        self.assertEqual(len(self.sim.log), 0)

    def test_empty_run_is_noop(self):
        log = self.sim.run_until()
        self.assertEqual(self.sim.now(), 0)
        self.assertEqual(len(log), 0)

    def test_first_event_id(self):
        self.assertEqual(self.sim.schedule(0, "rec", "ping", "wake"), 0)

    def test_fifo_tie_break(self):
        """Equal timestamps deliver in insertion order."""
        ids = [self.sim.schedule(1000, "rec", "ping", n) for n in range(5)]
        self.assertEqual(ids, sorted(ids))
        self.sim.run_until()
        self.assertEqual([p for _, p in self.rec.seen], list(range(5)))

    def test_time_order(self):
        self.sim.schedule(3000, "rec", "ping", "late")
        self.sim.schedule(1000, "rec", "ping", "early")
        self.sim.run_until()
        self.assertEqual(self.rec.seen, [(1000, "early"), (3000, "late")])

    def test_causality_rejected(self):
        self.sim.schedule(5000, "rec", "ping")
        self.sim.run_until()
        with self.assertRaises(CausalityError):
            self.sim.schedule(4999, "rec", "ping")

    def test_sixty_second_event(self):
        self.sim.schedule(seconds(60), "rec", "ping")
        self.sim.run_until()
        self.assertEqual(self.sim.now(), 60_000_000)

    def test_deadline_with_pending_events(self):
        """Clock stops at the deadline when later events remain."""
        self.sim.schedule(seconds(1), "rec", "ping", 1)
        self.sim.schedule(seconds(10), "rec", "ping", 10)
        self.sim.run_until(seconds(5))
        self.assertEqual(self.sim.now(), 5_000_000)
        self.assertEqual(len(self.rec.seen), 1)
        self.assertEqual(self.sim.pending(), 1)

    def test_deadline_inclusive(self):
        self.sim.schedule(seconds(5), "rec", "ping")
        self.sim.run_until(seconds(5))
        self.assertEqual(len(self.rec.seen), 1)

    def test_cancel(self):
        event_id = self.sim.schedule(100, "rec", "ping", "cancelled")
        self.sim.schedule(200, "rec", "ping", "kept")
        self.sim.cancel(event_id)
        self.sim.run_until()
        self.assertEqual([p for _, p in self.rec.seen], ["kept"])
        self.assertEqual(self.sim.cancelled_count, 1)

    def test_conservation(self):
        """Every scheduled event is delivered, cancelled or still pending."""
        self.sim.schedule(0, "rec", "chain", 10)
        for at in (5, 50_000, 900_000):
            self.sim.schedule(at, "rec", "ping")
        self.sim.cancel(self.sim.schedule(7, "rec", "ping"))
        self.sim.run_until(millis(6))
        total = self.sim.delivered_count + self.sim.cancelled_count + self.sim.pending()
        self.assertEqual(total, self.sim.scheduled_count)

    def test_stop_predicate(self):
        self.sim.schedule(0, "rec", "chain", 100)
        self.sim.run_until(stop=lambda: len(self.sim.log) >= 3)
        self.assertEqual(len(self.sim.log), 3)

    def test_unknown_target(self):
        self.sim.schedule(0, "nobody", "ping")
        with self.assertRaises(SimulationError):
            self.sim.run_until()

    def test_missing_handler(self):
        self.sim.schedule(0, "rec", "unheard")
        with self.assertRaises(SimulationError):
            self.sim.run_until()

    def test_duplicate_component(self):
        with self.assertRaises(SimulationError):
            Recorder(self.sim, "rec")

    def test_determinism(self):
        """Same seed and schedule give identical logs."""
        def run(seed):
            sim = Simulator(seed)
            Recorder(sim)
            for _ in range(20):
                sim.schedule(sim.rng.randrange(1_000_000), "rec", "ping", sim.rng.getrandbits(32))
            sim.run_until()
            return sim.log.to_text()

        self.assertEqual(run(42), run(42))
        self.assertNotEqual(run(42), run(43))


class TestSimLog(unittest.TestCase):

    def test_queries_and_lines(self):
        log = SimLog()
        log.append(0, "bridge", "ADVERTISING", "name=IoT Droplock")
        log.append(10, "host", "CONNECTED")
        log.append(20, "bridge", "CONNECTED")
        self.assertEqual(log.count("CONNECTED"), 2)
        self.assertEqual(log.first("CONNECTED").component, "host")
        self.assertEqual(len(log.find(component="bridge")), 2)
        self.assertIsNone(log.first("OVERFLOW"))
        self.assertEqual(log.lines()[0], "t=0 bridge ADVERTISING name=IoT Droplock")
        self.assertEqual(log.lines()[1], "t=10 host CONNECTED")

    def test_write(self):
        log = SimLog()
        log.append(5, "lock", "FLASH_DONE", "firmware=Droplock")
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "run.log"
            log.write(path)
            self.assertEqual(path.read_text(), "t=5 lock FLASH_DONE firmware=Droplock\n")


if __name__ == '__main__':
    unittest.main()
