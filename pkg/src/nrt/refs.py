"""Persistent references between records, resolved lazily.

A record that may be the target of links is tagged with a :class:`Uid`.
Other records store only that uid (a :class:`Ref`, 20 bytes on disk), so the
target is written once no matter how many records point at it.  Resolution
never touches storage: a ref resolves only after its target has been read or
registered in the same :class:`RefRegistry`.
"""
from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field

from .errors import ConflictingRegistrationError, MixedProcessTagsError, UntaggedError
from .schema import DynamicRecord, FieldDescriptor, Kind, TypeDescriptor
from .uid import NULL_UID, PROCESS_TAG, TAG_SIZE, Uid

REF_ARRAY_TYPE = TypeDescriptor(
    "nrt.RefArray",
    1,
    (
        FieldDescriptor("tag", Kind.STRING),
        FieldDescriptor("serials", Kind.SEQUENCE, "Int64"),
    ),
)

_counters: dict[bytes, itertools.count] = {}
_counter_lock = threading.Lock()


def _next_serial(tag: bytes) -> int:
    with _counter_lock:
        counter = _counters.setdefault(tag, itertools.count(1))
        serial = next(counter)
    if serial > 0xFFFFFFFF:
        raise OverflowError("uid serials exhausted for this process tag")
    return serial


def _peek_serial(tag: bytes) -> int:
    with _counter_lock:
        counter = _counters.setdefault(tag, itertools.count(1))
        # itertools.count has no peek; recreate it positioned at the same value
        value = next(counter)
        _counters[tag] = itertools.count(value)
    return value


@dataclass(frozen=True)
class Ref:
    target: Uid = NULL_UID

    @property
    def is_set(self) -> bool:
        return self.target.is_set

    def resolve(self, registry: "RefRegistry") -> DynamicRecord | None:
        return registry.resolve(self)

    def to_bytes(self) -> bytes:
        return self.target.to_bytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Ref":
        return cls(Uid.from_bytes(data))


class RefRegistry:
    """Uid assignment plus the table of records loaded so far."""

    def __init__(self, tag: bytes = PROCESS_TAG):
        if len(tag) != TAG_SIZE:
            raise ValueError(f"process tag must be {TAG_SIZE} bytes")
        self.tag = bytes(tag)
        self._loaded: dict[Uid, DynamicRecord] = {}
        self._lock = threading.Lock()

    @property
    def next_serial(self) -> int:
        return _peek_serial(self.tag)

    def assign_uid(self, record: DynamicRecord) -> Uid:
        if record.uid is not None:
            return record.uid
        uid = Uid(self.tag, _next_serial(self.tag))
        object.__setattr__(record, "uid", uid)
        self.register_loaded(record)
        return uid

    def register_loaded(self, record: DynamicRecord) -> None:
        if record.uid is None or not record.uid.is_set:
            raise UntaggedError(f"{record.type_name} record has no uid")
        with self._lock:
            current = self._loaded.get(record.uid)
            if current is not None:
                if current != record:
                    raise ConflictingRegistrationError(f"uid {record.uid} already maps to a different record")
                return
            self._loaded[record.uid] = record

    def resolve(self, ref: "Ref | Uid") -> DynamicRecord | None:
        uid = ref.target if isinstance(ref, Ref) else ref
        if not uid.is_set:
            return None
        return self._loaded.get(uid)

    def __contains__(self, uid: Uid) -> bool:
        return uid in self._loaded

    def __len__(self) -> int:
        return len(self._loaded)


def assign_uid(registry: RefRegistry, record: DynamicRecord) -> Uid:
    return registry.assign_uid(record)


def make_ref(record: DynamicRecord) -> Ref:
    if record.uid is None or not record.uid.is_set:
        raise UntaggedError(f"{record.type_name} record has no uid; call assign_uid first")
    return Ref(record.uid)


def resolve(ref: "Ref | Uid", registry: RefRegistry) -> DynamicRecord | None:
    return registry.resolve(ref)


def register_loaded(registry: RefRegistry, record: DynamicRecord) -> None:
    registry.register_loaded(record)


@dataclass
class RefArray:
    """Compact list of references that all share one process tag."""

    tag: bytes | None = None
    serials: list[int] = field(default_factory=list)

    def append(self, target: "DynamicRecord | Ref | Uid") -> None:
        if isinstance(target, DynamicRecord):
            uid = make_ref(target).target
        elif isinstance(target, Ref):
            uid = target.target
        else:
            uid = target
        if self.tag is None:
            self.tag = uid.tag
        elif uid.tag != self.tag:
            raise MixedProcessTagsError(f"uid {uid} has tag {uid.tag.hex()}, array holds {self.tag.hex()}")
        self.serials.append(uid.serial)

    def __len__(self) -> int:
        return len(self.serials)

    def ref(self, i: int) -> Ref:
        return Ref(Uid(self.tag, self.serials[i]))

    def get(self, i: int, registry: RefRegistry) -> DynamicRecord | None:
        return registry.resolve(self.ref(i))

    def to_record(self) -> DynamicRecord:
        return DynamicRecord(
            REF_ARRAY_TYPE.name,
            REF_ARRAY_TYPE.version,
            (("tag", (self.tag or bytes(TAG_SIZE)).hex()), ("serials", tuple(self.serials))),
        )

    @classmethod
    def from_record(cls, record: DynamicRecord) -> "RefArray":
        serials = list(record["serials"])
        return cls(bytes.fromhex(record["tag"]) if serials else None, serials)
