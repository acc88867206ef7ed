"""
Firmware-update packages, trust policies and the lock's provisioning state.

Container layout: magic "DLFW", one version byte, then TLV records
(tag 1 byte, length 4 bytes little-endian):

    0x01 firmware   0x02 crc16 (u16 LE)   0x03 signature
    0x04 signer id  0x05 name             0x06 version string
"""

import hashlib
import logging
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Union

import crcmod.predefined
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey

from config import DFU_FLASH_DURATION_S, DFU_PACKAGE_MAGIC, DFU_PACKAGE_VERSION
from .errors import (
    AlreadyRegistered,
    ArtifactError,
    AuthFailed,
    DfuError,
    NotInDfuMode,
    PackageFormatError,
    PatchRangeError,
    SigningKeyRequired,
)
from .sim_core import SimComponent, Simulator, seconds

logger = logging.getLogger(__name__)

TAG_FIRMWARE = 0x01
TAG_CRC16 = 0x02
TAG_SIGNATURE = 0x03
TAG_SIGNER_ID = 0x04
TAG_NAME = 0x05
TAG_VERSION = 0x06

SIGNER_ID_SIZE = 8

_TLV = struct.Struct("<BI")
_crc16 = crcmod.predefined.mkPredefinedCrcFun("crc-ccitt-false")


def crc16(data: bytes) -> int:
    """CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, unreflected, no final xor."""
    return _crc16(bytes(data))


def firmware_digest(firmware: bytes) -> bytes:
    return hashlib.sha256(firmware).digest()


def signer_id(public_key: Ed25519PublicKey) -> bytes:
    """Key fingerprint: first 8 bytes of SHA-256 over the raw public key."""
    raw = public_key.public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)
    return hashlib.sha256(raw).digest()[:SIGNER_ID_SIZE]


@dataclass(frozen=True)
class LegacyCrc:
    crc: int


@dataclass(frozen=True)
class Signed:
    signature: bytes
    signer_id: bytes


Protection = Union[LegacyCrc, Signed]


class ProtectionKind(Enum):
    LEGACY_CRC = "legacy"
    SIGNED = "signed"


@dataclass(frozen=True)
class DfuPackage:
    """A firmware image plus the value that is supposed to protect it."""

    firmware: bytes
    protection: Protection
    name: str = ""
    version: str = ""

    @property
    def is_signed(self) -> bool:
        return isinstance(self.protection, Signed)

    def to_bytes(self) -> bytes:
        records = [(TAG_FIRMWARE, self.firmware)]
        if isinstance(self.protection, LegacyCrc):
            records.append((TAG_CRC16, struct.pack("<H", self.protection.crc)))
        else:
            records.append((TAG_SIGNATURE, self.protection.signature))
            records.append((TAG_SIGNER_ID, self.protection.signer_id))
        if self.name:
            records.append((TAG_NAME, self.name.encode("utf-8")))
        if self.version:
            records.append((TAG_VERSION, self.version.encode("utf-8")))
        out = bytearray(DFU_PACKAGE_MAGIC)
        out.append(DFU_PACKAGE_VERSION)
        for tag, value in records:
            out += _TLV.pack(tag, len(value)) + value
        return bytes(out)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "DfuPackage":
        """
        Parse a package container.

        Raises:
            PackageFormatError: On bad magic or version, truncation, missing
                firmware, or conflicting protection records
        """
        header = len(DFU_PACKAGE_MAGIC) + 1
        if len(raw) < header or raw[:len(DFU_PACKAGE_MAGIC)] != DFU_PACKAGE_MAGIC:
            raise PackageFormatError("not a DLFW package (bad magic)")
        if raw[len(DFU_PACKAGE_MAGIC)] != DFU_PACKAGE_VERSION:
            raise PackageFormatError(f"unsupported package version {raw[len(DFU_PACKAGE_MAGIC)]}")
        fields: Dict[int, bytes] = {}
        offset = header
        while offset < len(raw):
            if offset + _TLV.size > len(raw):
                raise PackageFormatError(f"truncated record header at offset {offset}")
            tag, length = _TLV.unpack_from(raw, offset)
            offset += _TLV.size
            if offset + length > len(raw):
                raise PackageFormatError(f"record 0x{tag:02X} truncated: needs {length} bytes")
            value = raw[offset:offset + length]
            offset += length
            if tag not in (TAG_FIRMWARE, TAG_CRC16, TAG_SIGNATURE, TAG_SIGNER_ID, TAG_NAME, TAG_VERSION):
                logger.warning(f"Skipping unknown package record 0x{tag:02X} ({length} bytes)")
                continue
            if tag in fields:
                raise PackageFormatError(f"duplicate record 0x{tag:02X}")
            fields[tag] = value

        if TAG_FIRMWARE not in fields:
            raise PackageFormatError("package has no firmware record")
        has_crc = TAG_CRC16 in fields
        has_sig = TAG_SIGNATURE in fields
        if has_crc == has_sig:
            raise PackageFormatError("package needs exactly one of a CRC-16 or a signature record")
        if has_crc:
            if len(fields[TAG_CRC16]) != 2:
                raise PackageFormatError("CRC-16 record must be 2 bytes")
            protection: Protection = LegacyCrc(struct.unpack("<H", fields[TAG_CRC16])[0])
        else:
            if len(fields.get(TAG_SIGNER_ID, b"")) != SIGNER_ID_SIZE:
                raise PackageFormatError("signed package needs an 8-byte signer id")
            protection = Signed(fields[TAG_SIGNATURE], fields[TAG_SIGNER_ID])
        try:
            name = fields.get(TAG_NAME, b"").decode("utf-8")
            version = fields.get(TAG_VERSION, b"").decode("utf-8")
        except UnicodeDecodeError as e:
            raise PackageFormatError(f"metadata is not UTF-8: {e}")
        return cls(fields[TAG_FIRMWARE], protection, name, version)

    def save(self, path: Union[str, Path]) -> None:
        try:
            Path(path).write_bytes(self.to_bytes())
        except OSError as e:
            raise ArtifactError(str(path), e.strerror or str(e))
        logger.info(f"Wrote package {path}")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "DfuPackage":
        try:
            raw = Path(path).read_bytes()
        except OSError as e:
            raise ArtifactError(str(path), e.strerror or str(e))
        return cls.from_bytes(raw)


def build_package(
    firmware: bytes,
    protection: ProtectionKind = ProtectionKind.LEGACY_CRC,
    key: Optional[Ed25519PrivateKey] = None,
    name: str = "",
    version: str = "",
) -> DfuPackage:
    """
    Wrap a firmware image for update.

    Args:
        firmware: Raw image
        protection: LEGACY_CRC or SIGNED
        key: Private key, required for SIGNED
        name: Optional package name
        version: Optional version string

    Returns:
        DfuPackage: Well-formed package

    Raises:
        SigningKeyRequired: SIGNED without a key
    """
    firmware = bytes(firmware)
    if protection is ProtectionKind.SIGNED:
        if key is None:
            raise SigningKeyRequired("a signed package needs a private key")
        signature = key.sign(firmware_digest(firmware))
        return DfuPackage(firmware, Signed(signature, signer_id(key.public_key())), name, version)
    return DfuPackage(firmware, LegacyCrc(crc16(firmware)), name, version)


def tamper_package(pkg: DfuPackage, offset: int, patch: bytes, fixup_crc: bool = False) -> DfuPackage:
    """
    Overwrite firmware bytes, optionally recomputing a legacy CRC.

    Signatures are carried over unchanged.

    Raises:
        PatchRangeError: If the patch does not lie inside the firmware
    """
    if offset < 0 or offset + len(patch) > len(pkg.firmware):
        raise PatchRangeError(
            f"patch of {len(patch)} bytes at offset {offset} exceeds firmware of {len(pkg.firmware)} bytes"
        )
    firmware = pkg.firmware[:offset] + bytes(patch) + pkg.firmware[offset + len(patch):]
    protection = pkg.protection
    if fixup_crc and isinstance(protection, LegacyCrc):
        protection = LegacyCrc(crc16(firmware))
    return DfuPackage(firmware, protection, pkg.name, pkg.version)


class TrustMode(Enum):
    ACCEPT_LEGACY = "AcceptLegacy"
    REQUIRE_SIGNATURE = "RequireSignature"


@dataclass
class TrustPolicy:
    """What an updater will accept, and from whom."""

    mode: TrustMode = TrustMode.ACCEPT_LEGACY
    trusted_keys: Dict[bytes, Ed25519PublicKey] = field(default_factory=dict)

    @classmethod
    def with_keys(cls, mode: TrustMode, keys: Iterable[Ed25519PublicKey]) -> "TrustPolicy":
        return cls(mode, {signer_id(k): k for k in keys})

    def trust(self, key: Ed25519PublicKey) -> None:
        self.trusted_keys[signer_id(key)] = key


@dataclass
class VerifyReport:
    well_formed: bool = True
    integrity_ok: bool = False
    signature_present: bool = False
    signature_valid: bool = False
    accepted: bool = False
    reasons: List[str] = field(default_factory=list)


def verify_package(pkg: DfuPackage, policy: TrustPolicy) -> VerifyReport:
    """
    Evaluate a package against a trust policy. Never raises for a rejection.

    Args:
        pkg: Parsed package
        policy: Trust policy of the updating device

    Returns:
        VerifyReport: Outcome and the reasons for any rejection
    """
    report = VerifyReport()
    protection = pkg.protection
    if isinstance(protection, LegacyCrc):
        report.integrity_ok = crc16(pkg.firmware) == protection.crc
        if not report.integrity_ok:
            report.reasons.append("crc mismatch")
        if policy.mode is TrustMode.REQUIRE_SIGNATURE:
            report.reasons.append("signature absent")
        else:
            report.accepted = report.integrity_ok
        return report

    report.signature_present = True
    key = policy.trusted_keys.get(protection.signer_id)
    if key is None:
        report.reasons.append("untrusted signer")
        return report
    try:
        key.verify(protection.signature, firmware_digest(pkg.firmware))
        report.signature_valid = True
    except InvalidSignature:
        report.reasons.append("signature invalid")
    report.integrity_ok = report.signature_valid
    report.accepted = report.signature_valid
    return report


def load_private_key(path: Union[str, Path]) -> Ed25519PrivateKey:
    """Load an Ed25519 private key from PEM."""
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise ArtifactError(str(path), e.strerror or str(e))
    try:
        key = serialization.load_pem_private_key(data, password=None)
    except ValueError as e:
        raise PackageFormatError(f"{path}: not a PEM private key ({e})")
    if not isinstance(key, Ed25519PrivateKey):
        raise PackageFormatError(f"{path}: expected an Ed25519 key")
    return key


def load_public_key(path: Union[str, Path]) -> Ed25519PublicKey:
    """Load an Ed25519 public key from PEM (a private key file also works)."""
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise ArtifactError(str(path), e.strerror or str(e))
    if b"PRIVATE KEY" in data:
        return load_private_key(path).public_key()
    try:
        key = serialization.load_pem_public_key(data)
    except ValueError as e:
        raise PackageFormatError(f"{path}: not a PEM public key ({e})")
    if not isinstance(key, Ed25519PublicKey):
        raise PackageFormatError(f"{path}: expected an Ed25519 key")
    return key


class FirmwareId(Enum):
    STOCK = "Stock"
    DROPLOCK = "Droplock"


STOCK_FIRMWARE_MAGIC = b"LOCKFW\x00\x01"
DROPLOCK_FIRMWARE_MAGIC = b"DRPLCK\x00\x01"


def _image(magic: bytes, seed: int, size: int) -> bytes:
    body = bytearray()
    counter = 0
    while len(magic) + len(body) < size:
        body += hashlib.sha256(magic + seed.to_bytes(8, "little") + counter.to_bytes(4, "little")).digest()
        counter += 1
    return (magic + bytes(body))[:size]


def stock_firmware_image(seed: int = 0, size: int = 4096) -> bytes:
    """Deterministic stand-in for the vendor's lock firmware."""
    return _image(STOCK_FIRMWARE_MAGIC, seed, size)


def droplock_firmware_image(seed: int = 0, size: int = 4096) -> bytes:
    """Deterministic stand-in for the bridge firmware build."""
    return _image(DROPLOCK_FIRMWARE_MAGIC, seed, size)


def identify_firmware(firmware: bytes) -> FirmwareId:
    if firmware.startswith(DROPLOCK_FIRMWARE_MAGIC):
        return FirmwareId.DROPLOCK
    return FirmwareId.STOCK


@dataclass
class LockProvisioningState:
    registered: bool = False
    serial: bytes = b""
    key: bytes = b""
    dfu_mode: bool = False
    firmware_id: FirmwareId = FirmwareId.STOCK


@dataclass(frozen=True)
class Authenticated:
    serial: bytes
    key: bytes


@dataclass(frozen=True)
class BeforeRegistration:
    serial: bytes
    key: bytes


DfuRoute = Union[Authenticated, BeforeRegistration]


def register(lock: LockProvisioningState, serial: bytes, key: bytes) -> None:
    """
    Normal owner registration; credentials are fixed afterwards.

    Raises:
        AlreadyRegistered: If the lock already has credentials
    """
    if lock.registered:
        raise AlreadyRegistered("lock is already registered")
    lock.serial = bytes(serial)
    lock.key = bytes(key)
    lock.registered = True


def activate_dfu(lock: LockProvisioningState, route: DfuRoute) -> bool:
    """
    Put the lock into DFU mode.

    Args:
        lock: Provisioning state, mutated on success
        route: Authenticated with the registered credentials, or
            BeforeRegistration with arbitrary values on a fresh lock

    Returns:
        bool: True once DFU mode is active

    Raises:
        DfuError: Already in DFU mode
        AuthFailed: Authenticated with wrong credentials
        AlreadyRegistered: BeforeRegistration on a registered lock
    """
    if lock.dfu_mode:
        raise DfuError("lock is already in DFU mode")
    if isinstance(route, Authenticated):
        if not lock.registered or (route.serial, route.key) != (lock.serial, lock.key):
            raise AuthFailed("serial/key do not match the lock's credentials")
    elif isinstance(route, BeforeRegistration):
        # the first values presented become the lock's credentials
        register(lock, route.serial, route.key)
    else:
        raise DfuError(f"unknown DFU route {route!r}")
    lock.dfu_mode = True
    return True


class SmartLock(SimComponent):
    """The lock's BLE chip as seen by the updater."""

    def __init__(self, sim: Simulator, component_id: str = "lock", flash_duration_us: int = seconds(DFU_FLASH_DURATION_S)):
        super().__init__(sim, component_id)
        self.state = LockProvisioningState()
        self.flash_duration_us = flash_duration_us
        self.flashing: Optional[DfuPackage] = None
        self._flashed: List[Callable[["SmartLock"], None]] = []

    def on_flashed(self, callback: Callable[["SmartLock"], None]) -> None:
        self._flashed.append(callback)

    def register(self, serial: bytes, key: bytes) -> None:
        register(self.state, serial, key)
        self.record("REGISTERED", f"serial={serial.hex()}")

    def activate_dfu(self, route: DfuRoute) -> bool:
        try:
            activate_dfu(self.state, route)
        except DfuError as e:
            self.record("DFU_REFUSED", f"route={type(route).__name__} reason=\"{e}\"")
            logger.error(f"DFU activation failed: {e}")
            raise
        self.record("DFU_MODE", f"route={type(route).__name__}")
        logger.info(f"DFU mode active via {type(route).__name__}")
        return True

    def flash(self, pkg: DfuPackage, policy: TrustPolicy) -> VerifyReport:
        """
        Verify and, if accepted, start writing the package.

        Returns:
            VerifyReport: The verification outcome; the swap completes later

        Raises:
            NotInDfuMode: If DFU mode is not active
        """
        if not self.state.dfu_mode:
            raise NotInDfuMode("flash requires DFU mode")
        if self.flashing is not None:
            raise DfuError("a flash is already in progress")
        report = verify_package(pkg, policy)
        if not report.accepted:
            self.record("FLASH_REJECTED", "reasons=" + ",".join(r.replace(" ", "_") for r in report.reasons))
            logger.warning(f"Package rejected: {', '.join(report.reasons)}")
            return report
        self.flashing = pkg
        self.record("FLASH_START", f"bytes={len(pkg.firmware)} policy={policy.mode.value}")
        self.schedule_in(self.flash_duration_us, "flash_done")
        return report

    def _on_flash_done(self, _payload) -> None:
        self.state.firmware_id = identify_firmware(self.flashing.firmware)
        self.flashing = None
        self.state.dfu_mode = False
        self.record("FLASH_DONE", f"firmware={self.state.firmware_id.value}")
        logger.info("Firmware swap complete")
        for callback in self._flashed:
            callback(self)
