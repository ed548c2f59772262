"""Process tags and unique object identifiers."""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass

TAG_SIZE = 16
UID_SIZE = TAG_SIZE + 4

#: Identifies every container written and every uid assigned by this process run.
PROCESS_TAG: bytes = os.urandom(TAG_SIZE)

NULL_TAG = bytes(TAG_SIZE)


@dataclass(frozen=True, order=True)
class Uid:
    tag: bytes
    serial: int

    def __post_init__(self):
        if len(self.tag) != TAG_SIZE:
            raise ValueError(f"process tag must be {TAG_SIZE} bytes, got {len(self.tag)}")
        if not 0 <= self.serial <= 0xFFFFFFFF:
            raise ValueError(f"serial out of u32 range: {self.serial}")

    @property
    def is_set(self) -> bool:
        return self.serial != 0

    def to_bytes(self) -> bytes:
        return self.tag + struct.pack("<I", self.serial)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Uid":
        if len(data) != UID_SIZE:
            raise ValueError(f"uid needs {UID_SIZE} bytes, got {len(data)}")
        return cls(bytes(data[:TAG_SIZE]), struct.unpack("<I", data[TAG_SIZE:])[0])

    def __str__(self):
        return f"{self.tag.hex()}:{self.serial}"

    @classmethod
    def parse(cls, text: str) -> "Uid":
        tag, _, serial = text.partition(":")
        return cls(bytes.fromhex(tag), int(serial))


NULL_UID = Uid(NULL_TAG, 0)
