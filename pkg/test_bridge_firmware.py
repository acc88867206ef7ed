"""
Unit tests for the UART/BLE bridge firmware.
"""

import unittest

from hypothesis import given, settings
from hypothesis import strategies as st

from modules.bridge_firmware import BridgeFirmware, FprPacketHandler, HandlerState, PowerState, RingBuffer
from modules.errors import LinkError, RingBufferOverflow
from modules.fpr_protocol import (
    CommandWord,
    FrameKind,
    ResultCode,
    StreamParser,
    command,
    data_response,
    encode_frame,
    response,
    split_fragments,
)
from modules.sensor_sim import SensorSimulator
from modules.sim_core import Simulator, seconds
from modules.transport import BleSession, UartLink


class TestRingBuffer(unittest.TestCase):

    def test_fifo_with_wraparound(self):
        ring = RingBuffer(8)
        ring.push(b"abcdef")
        self.assertEqual(ring.pop(4), b"abcd")
        ring.push(b"ghijk")
        self.assertEqual(ring.occupancy, 7)
        self.assertEqual(ring.pop(100), b"efghijk")
        self.assertEqual(ring.occupancy, 0)

    def test_overflow_keeps_what_fits(self):
        ring = RingBuffer(4)
        with self.assertRaises(RingBufferOverflow) as ctx:
            ring.push(b"123456")
        self.assertEqual(ctx.exception.dropped, 2)
        self.assertEqual(ctx.exception.capacity, 4)
        self.assertEqual(ring.pop(10), b"1234")

    def test_high_watermark(self):
        ring = RingBuffer(2048)
        ring.push(bytes(700))
        ring.pop(600)
        ring.push(bytes(100))
        self.assertEqual(ring.high_watermark, 700)
        self.assertEqual(ring.free(), 2048 - 200)

    def test_clear(self):
        ring = RingBuffer(4)
        ring.push(b"xy")
        ring.clear()
        self.assertEqual(ring.occupancy, 0)
        self.assertEqual(ring.pop(2), b"")

    def test_invalid_capacity(self):
        with self.assertRaises(ValueError):
            RingBuffer(0)


class TestPacketHandler(unittest.TestCase):

    def setUp(self):
        self.headers = []
        self.handler = FprPacketHandler(on_header=lambda *h: self.headers.append(h))

    def test_follows_frames_across_fragments(self):
        stream = encode_frame(response(CommandWord.UP_IMAGE, ResultCode.SUCCESS, total_length=600))
        stream += encode_frame(data_response(CommandWord.UP_IMAGE, bytes(512)))
        stream += encode_frame(data_response(CommandWord.UP_IMAGE, bytes(88)))
        for piece in split_fragments(stream, 7):
            self.handler.observe(piece)
        self.assertEqual(self.headers, [
            (FrameKind.COMMAND_RESPONSE, CommandWord.UP_IMAGE, 26),
            (FrameKind.DATA_RESPONSE, CommandWord.UP_IMAGE, 522),
            (FrameKind.DATA_RESPONSE, CommandWord.UP_IMAGE, 98),
        ])
        self.assertTrue(self.handler.at_boundary)

    def test_mid_frame_not_at_boundary(self):
        raw = encode_frame(response(CommandWord.GET_IMAGE, ResultCode.SUCCESS))
        self.handler.observe(raw[:20])
        self.assertFalse(self.handler.at_boundary)
        self.assertIs(self.handler.state, HandlerState.STREAMING_BODY)
        self.handler.observe(raw[20:])
        self.assertTrue(self.handler.at_boundary)

    def test_resync_over_garbage(self):
        self.handler.observe(b"\x01\x02\x03" + encode_frame(command(CommandWord.TEST_CONNECTION)))
        self.assertEqual(self.handler.frames_seen, 1)
        self.assertEqual(self.handler.resync_bytes, 3)


class BridgeRig:
    """Sensor, UART, bridge and BLE session with a recording host."""

    def __init__(self, baud=115200, downshift=True, ring_capacity=2048):
        self.sim = Simulator(seed=3)
        self.uart = UartLink(self.sim, ("bridge", "sensor"), baud)
        self.sensor = SensorSimulator(self.sim, self.uart, baud=baud)
        self.ble = BleSession(self.sim)
        self.bridge = BridgeFirmware(self.sim, self.uart, self.ble, ring_capacity=ring_capacity, downshift=downshift)
        self.notifications = []
        self.parser = StreamParser()
        self.frames = []
        self.ble.bind(central=self._on_notify)

    def _on_notify(self, payload):
        self.notifications.append(payload)
        self.frames.extend(self.parser.push(payload))

    def connect(self):
        self.bridge.wake()
        self.ble.connect()
        self.bridge.on_ble_connect()

    def send(self, frame):
        for piece in split_fragments(encode_frame(frame)):
            self.ble.write(piece)


class TestBridgeFirmware(unittest.TestCase):

    def test_advertising_window(self):
        rig = BridgeRig()
        self.assertIsNone(rig.bridge.advertisement())
        rig.bridge.wake()
        self.assertEqual(rig.bridge.advertisement().name, "IoT Droplock")
        rig.sim.run_until()
        self.assertIs(rig.bridge.power, PowerState.SLEEPING)
        self.assertEqual(rig.sim.log.first("SLEEP").at, seconds(60))

    def test_wake_ignored_while_awake(self):
        rig = BridgeRig()
        rig.bridge.wake()
        rig.bridge.wake()
        self.assertEqual(rig.sim.log.count("WAKE_IGNORED"), 1)

    def test_connect_requires_advertising(self):
        rig = BridgeRig()
        with self.assertRaises(LinkError):
            rig.bridge.on_ble_connect()

    def test_connect_cancels_sleep_and_downshifts(self):
        rig = BridgeRig()
        rig.connect()
        rig.sim.run_until()
        self.assertIs(rig.bridge.power, PowerState.CONNECTED)
        self.assertEqual(rig.sim.log.count("SLEEP"), 0)
        self.assertEqual(rig.sim.log.count("DOWNSHIFT_ACK"), 1)
        self.assertEqual(rig.uart.baud, 9600)
        # the acknowledgement is consumed by the bridge, not forwarded
        self.assertEqual(rig.notifications, [])

    def test_host_writes_wait_for_downshift(self):
        rig = BridgeRig()
        rig.connect()
        rig.bridge.on_ble_data(encode_frame(command(CommandWord.TEST_CONNECTION)))
        self.assertEqual(len(rig.bridge.host_queue), 1)
        rig.sim.run_until()
        self.assertEqual([f.result for f in rig.frames], [ResultCode.SUCCESS])
        commands = rig.sim.log.find("CMD", "sensor")
        self.assertEqual([e.detail for e in commands], ["SET_BAUDRATE", "TEST_CONNECTION"])
        self.assertGreater(commands[1].at, rig.sim.log.first("DOWNSHIFT_ACK").at)

    def test_fragments_capped_at_20(self):
        rig = BridgeRig()
        rig.connect()
        rig.send(command(CommandWord.TEST_CONNECTION))
        rig.sim.run_until()
        self.assertEqual([len(n) for n in rig.notifications], [20, 6])
        self.assertEqual(rig.bridge.bytes_to_host, 26)

    def test_ble_data_dropped_when_sleeping(self):
        rig = BridgeRig()
        rig.bridge.on_ble_data(b"\x00" * 5)
        self.assertEqual(rig.sim.log.count("BLE_DROPPED"), 1)
        self.assertEqual(rig.bridge.bytes_to_sensor, 0)

    def test_disconnect_sleeps(self):
        rig = BridgeRig()
        rig.connect()
        rig.ble.disconnect()
        self.assertIs(rig.bridge.power, PowerState.SLEEPING)

    def test_disconnect_mid_frame_resets_packet_handler(self):
        rig = BridgeRig()
        rig.connect()
        rig.sim.run_until()
        reply = encode_frame(response(CommandWord.GET_IMAGE, ResultCode.SUCCESS))
        rig.bridge.on_uart_data(reply[:10])
        self.assertIs(rig.bridge.handler.state, HandlerState.STREAMING_BODY)
        rig.ble.disconnect()
        self.assertTrue(rig.bridge.handler.at_boundary)
        self.assertEqual(rig.bridge.handler.remaining, 0)

        rig.sim.run_until()
        rig.connect()
        rig.sim.run_until()
        rig.send(command(CommandWord.TEST_CONNECTION))
        rig.sim.run_until()
        headers = [e.detail for e in rig.sim.log.find("HEADER", "bridge")]
        self.assertEqual(sum("cmd=TEST_CONNECTION" in h for h in headers), 1)
        self.assertEqual([f.cmd for f in rig.frames], [CommandWord.TEST_CONNECTION])
        self.assertEqual(rig.sim.log.count("DOWNSHIFT_ACK"), 2)

    def test_full_upload_with_downshift(self):
        rig = BridgeRig()
        rig.connect()
        rig.sensor.present_finger(17)
        rig.send(command(CommandWord.GET_IMAGE))
        rig.sim.run_until()
        rig.send(command(CommandWord.UP_IMAGE, b"\x00"))
        rig.sim.run_until()
        payload = b"".join(f.payload for f in rig.frames if f.kind is FrameKind.DATA_RESPONSE)
        self.assertEqual(len(payload), 25600)
        self.assertEqual(rig.bridge.overflow_events, 0)
        self.assertLess(rig.bridge.ring.high_watermark, 1024)
        self.assertTrue(all(len(n) <= 20 for n in rig.notifications))

    def test_overflow_without_downshift(self):
        rig = BridgeRig(downshift=False)
        rig.connect()
        rig.sensor.present_finger(17)
        rig.send(command(CommandWord.GET_IMAGE))
        rig.sim.run_until()
        rig.send(command(CommandWord.UP_IMAGE, b"\x00"))
        rig.sim.run_until()
        self.assertGreaterEqual(rig.bridge.overflow_events, 1)
        self.assertGreater(rig.bridge.dropped_bytes, 0)
        self.assertEqual(rig.bridge.ring.high_watermark, 2048)
        self.assertGreaterEqual(rig.parser.checksum_failures, 1)


bridge_steps = st.lists(
    st.one_of(
        st.integers(1, 500).map(lambda seed: ("finger", seed)),
        st.tuples(
            st.sampled_from([
                CommandWord.TEST_CONNECTION, CommandWord.FINGER_DETECT, CommandWord.GET_IMAGE,
                CommandWord.UP_IMAGE, CommandWord.GEN_TEMPLATE, CommandWord.UP_TEMPLATE,
                CommandWord.ACTUATE, 0x0777,
            ]),
            st.integers(1, 20),
        ),
    ),
    min_size=1,
    max_size=8,
)


class TestBridgeTransparency(unittest.TestCase):
    """Without overflow the host sees exactly what the sensor sent."""

    @settings(max_examples=40, deadline=None)
    @given(steps=bridge_steps)
    def test_host_stream_equals_sensor_stream(self, steps):
        rig = BridgeRig()
        rig.connect()
        rig.sim.run_until()
        sensor_out, host_in = bytearray(), bytearray()
        rig.uart.add_tap(lambda source, data: sensor_out.extend(data) if source == "sensor" else None)
        rig.ble.add_tap(lambda direction, payload: host_in.extend(payload) if direction == "notify" else None)

        watermark = rig.bridge.ring.high_watermark
        for step, arg in steps:
            if step == "finger":
                rig.sensor.present_finger(arg)
            else:
                # quarter resolution keeps image uploads short
                for piece in split_fragments(encode_frame(command(step, b"\x01")), arg):
                    rig.ble.write(piece)
            rig.sim.run_until()
            self.assertGreaterEqual(rig.bridge.ring.high_watermark, watermark)
            watermark = rig.bridge.ring.high_watermark

        self.assertEqual(rig.bridge.overflow_events, 0)
        self.assertEqual(bytes(host_in), bytes(sensor_out))
        self.assertTrue(all(1 <= len(n) <= 20 for n in rig.notifications))


if __name__ == '__main__':
    unittest.main()
