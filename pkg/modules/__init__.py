"""
Modules package initialization.
"""

from .sim_core import Simulator, SimLog, SimComponent
from .fpr_protocol import Frame, FrameKind, CommandWord, ResultCode, StreamParser, encode_frame, decode_frame
from .sensor_sim import SensorSimulator, FingerprintImage, Resolution, UploadPolicy, generate_fingerprint
from .transport import UartLink, BleSession, BleConnectionParams, effective_rate
from .bridge_firmware import BridgeFirmware, RingBuffer, FprPacketHandler
from .poc_firmware import PocController
from .dfu_tool import DfuPackage, TrustPolicy, TrustMode, SmartLock, build_package, tamper_package, verify_package, crc16
from .harvest_client import HarvestClient, CaptureStats, capture_image, save_pgm, load_pgm
from .scenarios import ScenarioReport, run_scenario

__all__ = [
    'Simulator',
    'SimLog',
    'SimComponent',
    'Frame',
    'FrameKind',
    'CommandWord',
    'ResultCode',
    'StreamParser',
    'encode_frame',
    'decode_frame',
    'SensorSimulator',
    'FingerprintImage',
    'Resolution',
    'UploadPolicy',
    'generate_fingerprint',
    'UartLink',
    'BleSession',
    'BleConnectionParams',
    'effective_rate',
    'BridgeFirmware',
    'RingBuffer',
    'FprPacketHandler',
    'PocController',
    'DfuPackage',
    'TrustPolicy',
    'TrustMode',
    'SmartLock',
    'build_package',
    'tamper_package',
    'verify_package',
    'crc16',
    'HarvestClient',
    'CaptureStats',
    'capture_image',
    'save_pgm',
    'load_pgm',
    'ScenarioReport',
    'run_scenario',
]
