"""Self-describing type descriptors and the value codec built on them.

A :class:`TypeDescriptor` is the file-resident description of one record
layout.  Anything that can be written can be read back through
:func:`read_emulated` using nothing but descriptors, which is what makes a
container readable without the Python classes that produced it.
"""
from __future__ import annotations

import dataclasses
import re
import struct
import threading
import typing
import zlib
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, Iterable, Iterator, Mapping

from .errors import (
    ChecksumMismatchError,
    CyclicBaseError,
    DuplicateConflictError,
    IncompatibleKindError,
    MalformedError,
    SchemaError,
    TypeMismatchError,
    UnknownBaseError,
    UnknownElementTypeError,
    UnknownTypeError,
)
from .uid import NULL_UID, UID_SIZE, Uid

DESCRIPTOR_TAG = 0xD5

_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")

_U8 = struct.Struct("<B")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_I64 = struct.Struct("<q")
_F64 = struct.Struct("<d")

INT64_MIN = -(1 << 63)
INT64_MAX = (1 << 63) - 1


class Kind(IntEnum):
    INT64 = 1
    FLOAT64 = 2
    BOOL = 3
    STRING = 4
    COMPOSITE = 5
    FIXED_ARRAY = 6
    SEQUENCE = 7
    REF = 8

    @property
    def label(self) -> str:
        return _KIND_LABELS[self]

    @classmethod
    def parse(cls, value: "Kind | int | str") -> "Kind":
        if isinstance(value, Kind):
            return value
        if isinstance(value, str):
            try:
                return _LABEL_KINDS[value]
            except KeyError:
                raise SchemaError(f"unknown field kind {value!r}") from None
        return cls(value)


_KIND_LABELS = {
    Kind.INT64: "Int64",
    Kind.FLOAT64: "Float64",
    Kind.BOOL: "Bool",
    Kind.STRING: "String",
    Kind.COMPOSITE: "Composite",
    Kind.FIXED_ARRAY: "FixedArray",
    Kind.SEQUENCE: "Sequence",
    Kind.REF: "RefKind",
}
_LABEL_KINDS = {v: k for k, v in _KIND_LABELS.items()}

SCALAR_KINDS = frozenset({Kind.INT64, Kind.FLOAT64, Kind.BOOL, Kind.STRING, Kind.REF})
LIST_KINDS = frozenset({Kind.FIXED_ARRAY, Kind.SEQUENCE})

#: Element names of FixedArray/Sequence fields that denote a scalar kind
#: rather than a composite type.
ELEMENT_SCALARS = {_KIND_LABELS[k]: k for k in SCALAR_KINDS}


def element_kind(element: str) -> Kind:
    """Kind of a list element named by a FieldDescriptor's ``element``."""
    return ELEMENT_SCALARS.get(element, Kind.COMPOSITE)


@dataclass(frozen=True)
class FieldDescriptor:
    name: str
    kind: Kind
    element: str | None = None
    length: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind.parse(self.kind))
        if not _NAME_RE.match(self.name):
            raise SchemaError(f"invalid field name {self.name!r}")
        kind = self.kind
        if kind in SCALAR_KINDS:
            if self.element is not None or self.length is not None:
                raise SchemaError(f"field {self.name!r}: {kind.label} takes no element or length")
            return
        if not self.element:
            raise SchemaError(f"field {self.name!r}: {kind.label} requires an element type")
        if kind is Kind.COMPOSITE and self.element in ELEMENT_SCALARS:
            raise SchemaError(f"field {self.name!r}: Composite element must be a record type")
        if kind is Kind.FIXED_ARRAY:
            if self.length is None or self.length < 1:
                raise SchemaError(f"field {self.name!r}: FixedArray requires a positive length")
        elif self.length is not None:
            raise SchemaError(f"field {self.name!r}: only FixedArray takes a length")

    @property
    def is_list(self) -> bool:
        return self.kind in LIST_KINDS

    def describe(self) -> str:
        if self.kind is Kind.FIXED_ARRAY:
            return f"{self.element}[{self.length}]"
        if self.kind is Kind.SEQUENCE:
            return f"Sequence<{self.element}>"
        if self.kind is Kind.COMPOSITE:
            return self.element
        return self.kind.label


@dataclass(frozen=True)
class TypeDescriptor:
    name: str
    version: int
    fields: tuple[FieldDescriptor, ...] = ()
    base: str | None = None
    checksum: int = field(init=False, compare=True)

    def __post_init__(self):
        object.__setattr__(self, "fields", tuple(self.fields))
        if not self.name:
            raise SchemaError("type name must be non-empty")
        if not 1 <= self.version <= 0xFFFFFFFF:
            raise SchemaError(f"{self.name}: version must be a positive u32")
        if self.base == "":
            object.__setattr__(self, "base", None)
        seen = set()
        for f in self.fields:
            if f.name in seen:
                raise SchemaError(f"{self.name}: duplicate field {f.name!r}")
            seen.add(f.name)
        object.__setattr__(self, "checksum", compute_checksum(self))

    @property
    def key(self) -> tuple[str, int]:
        return (self.name, self.version)

    def field_named(self, name: str) -> FieldDescriptor | None:
        for f in self.fields:
            if f.name == name:
                return f
        return None


def _put_str16(out: bytearray, text: str | None) -> None:
    raw = (text or "").encode("utf-8")
    if len(raw) > 0xFFFF:
        raise SchemaError(f"name too long: {len(raw)} bytes")
    out += _U16.pack(len(raw))
    out += raw


def _canonical_bytes(desc: TypeDescriptor, checksum: int) -> bytes:
    out = bytearray([DESCRIPTOR_TAG])
    _put_str16(out, desc.name)
    out += _U32.pack(desc.version)
    out += _U32.pack(checksum)
    _put_str16(out, desc.base)
    out += _U16.pack(len(desc.fields))
    for f in desc.fields:
        _put_str16(out, f.name)
        out += _U8.pack(int(f.kind))
        _put_str16(out, f.element)
        out += _U32.pack(f.length or 0)
    return bytes(out)


def compute_checksum(desc: TypeDescriptor) -> int:
    """CRC-32 of the canonical encoding with the checksum slot zeroed."""
    return zlib.crc32(_canonical_bytes(desc, 0)) & 0xFFFFFFFF


def encode_descriptor(desc: TypeDescriptor) -> bytes:
    return _canonical_bytes(desc, desc.checksum)


class _Reader:
    """Cursor over a byte buffer that raises MalformedError on truncation."""

    __slots__ = ("buf", "pos")

    def __init__(self, data, pos: int = 0):
        self.buf = memoryview(data)
        self.pos = pos

    def take(self, n: int) -> memoryview:
        end = self.pos + n
        if n < 0 or end > len(self.buf):
            raise MalformedError(f"truncated data: need {n} bytes at offset {self.pos}")
        chunk = self.buf[self.pos:end]
        self.pos = end
        return chunk

    def unpack(self, st: struct.Struct):
        end = self.pos + st.size
        if end > len(self.buf):
            raise MalformedError(f"truncated data at offset {self.pos}")
        value = st.unpack_from(self.buf, self.pos)[0]
        self.pos = end
        return value

    def str16(self) -> str:
        return self.text(self.unpack(_U16))

    def str32(self) -> str:
        return self.text(self.unpack(_U32))

    def text(self, n: int) -> str:
        try:
            return str(self.take(n), "utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedError(f"invalid UTF-8 text: {exc}") from None

    @property
    def remaining(self) -> int:
        return len(self.buf) - self.pos


def _decode_descriptor(r: _Reader) -> TypeDescriptor:
    if r.unpack(_U8) != DESCRIPTOR_TAG:
        raise MalformedError("missing descriptor tag 0xD5")
    name = r.str16()
    version = r.unpack(_U32)
    stored = r.unpack(_U32)
    base = r.str16() or None
    fields = []
    for _ in range(r.unpack(_U16)):
        fname = r.str16()
        kind_code = r.unpack(_U8)
        element = r.str16() or None
        length = r.unpack(_U32) or None
        try:
            fields.append(FieldDescriptor(fname, Kind(kind_code), element, length))
        except (ValueError, SchemaError) as exc:
            raise MalformedError(f"bad field in descriptor {name!r}: {exc}") from None
    try:
        desc = TypeDescriptor(name, version, tuple(fields), base)
    except SchemaError as exc:
        raise MalformedError(str(exc)) from None
    if desc.checksum != stored:
        raise ChecksumMismatchError(
            f"{name} v{version}: stored checksum {stored:#010x} != computed {desc.checksum:#010x}"
        )
    return desc


def decode_descriptor(data: bytes) -> TypeDescriptor:
    r = _Reader(data)
    desc = _decode_descriptor(r)
    if r.remaining:
        raise MalformedError(f"{r.remaining} trailing bytes after descriptor")
    return desc


class SchemaRegistry:
    """Descriptors by (name, version), plus optional native class bindings."""

    def __init__(self, descriptors: Iterable[TypeDescriptor] = ()):
        self._by_key: dict[tuple[str, int], TypeDescriptor] = {}
        self._latest: dict[str, int] = {}
        self._flat: dict[tuple[str, int], tuple[FieldDescriptor, ...]] = {}
        self._bindings: dict[str, type] = {}
        self._lock = threading.Lock()
        for d in descriptors:
            self.register(d)

    def register(self, desc: TypeDescriptor) -> None:
        with self._lock:
            existing = self._by_key.get(desc.key)
            if existing is not None:
                if existing.checksum != desc.checksum:
                    raise DuplicateConflictError(
                        f"{desc.name} v{desc.version} already registered with checksum "
                        f"{existing.checksum:#010x}, new one is {desc.checksum:#010x}"
                    )
                return
            chain = self._base_chain(desc)
            names = set()
            for d in chain:
                for f in d.fields:
                    if f.name in names:
                        raise SchemaError(f"{desc.name}: field {f.name!r} duplicated through inheritance")
                    names.add(f.name)
            self._by_key[desc.key] = desc
            if desc.version > self._latest.get(desc.name, 0):
                self._latest[desc.name] = desc.version
            self._flat.clear()

    def _base_chain(self, desc: TypeDescriptor) -> list[TypeDescriptor]:
        """Root-first ancestry of ``desc`` (ending with desc), as if desc were registered."""
        chain = [desc]
        seen = {desc.name}
        cur = desc
        while cur.base is not None:
            if cur.base in seen:
                raise CyclicBaseError(f"{desc.name}: base chain revisits {cur.base!r}")
            seen.add(cur.base)
            version = self._latest.get(cur.base)
            if version is None:
                raise UnknownBaseError(f"{cur.name}: base type {cur.base!r} is not registered")
            nxt = self._by_key[(cur.base, version)]
            chain.append(nxt)
            cur = nxt
        chain.reverse()
        return chain

    def lookup(self, name: str, version: int | None = None) -> TypeDescriptor:
        if version is None:
            version = self._latest.get(name)
        desc = self._by_key.get((name, version)) if version is not None else None
        if desc is None:
            what = name if version is None else f"{name} v{version}"
            raise UnknownTypeError(f"type {what} is not registered")
        return desc

    def latest(self, name: str) -> int:
        try:
            return self._latest[name]
        except KeyError:
            raise UnknownTypeError(f"type {name} is not registered") from None

    def flat_fields(self, desc: TypeDescriptor) -> tuple[FieldDescriptor, ...]:
        """Inherited fields first, then the descriptor's own, in declaration order."""
        registered = self._by_key.get(desc.key)
        same = registered is not None and registered.checksum == desc.checksum
        cached = self._flat.get(desc.key) if same else None
        if cached is None:
            cached = tuple(f for d in self._base_chain(desc) for f in d.fields)
            if same:
                self._flat[desc.key] = cached
        return cached

    def composite(self, name: str) -> TypeDescriptor:
        """Resolve a Composite element name (always the latest version)."""
        try:
            return self.lookup(name)
        except UnknownTypeError:
            raise UnknownElementTypeError(f"element type {name!r} is not registered") from None

    def closure(self, desc: TypeDescriptor) -> list[TypeDescriptor]:
        """Every descriptor needed to decode ``desc``, dependencies first."""
        out: list[TypeDescriptor] = []
        seen: set[tuple[str, int]] = set()

        def visit(d: TypeDescriptor) -> None:
            if d.key in seen:
                return
            seen.add(d.key)
            if d.base is not None:
                visit(self.lookup(d.base))
            for f in d.fields:
                if f.element is not None and element_kind(f.element) is Kind.COMPOSITE:
                    visit(self.composite(f.element))
            out.append(d)

        visit(desc)
        return out

    def copy(self) -> "SchemaRegistry":
        other = SchemaRegistry()
        for d in self.descriptors():
            other._by_key[d.key] = d
        other._latest = dict(self._latest)
        other._bindings = dict(self._bindings)
        return other

    def descriptors(self) -> list[TypeDescriptor]:
        return [self._by_key[k] for k in sorted(self._by_key)]

    def __contains__(self, item) -> bool:
        if isinstance(item, tuple):
            return item in self._by_key
        return item in self._latest

    def __iter__(self) -> Iterator[TypeDescriptor]:
        return iter(self.descriptors())

    def __len__(self) -> int:
        return len(self._by_key)

    # native bindings ---------------------------------------------------

    def bind(self, type_name: str, cls: type) -> None:
        self._bindings[type_name] = cls

    def unbind(self, type_name: str) -> None:
        self._bindings.pop(type_name, None)

    def binding(self, type_name: str) -> type | None:
        return self._bindings.get(type_name)

    def bound_name(self, cls: type) -> str | None:
        for name, bound in self._bindings.items():
            if bound is cls:
                return name
        return None


def _freeze(value):
    if isinstance(value, list):
        return tuple(_freeze(v) for v in value)
    if isinstance(value, tuple):
        return tuple(_freeze(v) for v in value)
    return value


@dataclass(frozen=True)
class DynamicRecord:
    """A record materialized purely from a descriptor.

    Lists are held as tuples so records are hashable.  ``uid`` is the
    persistent identity assigned by :mod:`nrt.refs`; it is not part of value
    equality.
    """

    type_name: str
    type_version: int
    values: tuple[tuple[str, Any], ...] = ()
    uid: Uid | None = field(default=None, compare=False)

    def __post_init__(self):
        items = self.values.items() if isinstance(self.values, Mapping) else self.values
        object.__setattr__(self, "values", tuple((k, _freeze(v)) for k, v in items))

    def __getitem__(self, name: str):
        for k, v in self.values:
            if k == name:
                return v
        raise KeyError(name)

    def get(self, name: str, default=None):
        for k, v in self.values:
            if k == name:
                return v
        return default

    def names(self) -> list[str]:
        return [k for k, _ in self.values]

    def as_dict(self) -> dict[str, Any]:
        return dict(self.values)

    def __repr__(self):
        inner = ", ".join(f"{k}={v!r}" for k, v in self.values)
        return f"{self.type_name}@{self.type_version}({inner})"


# value codec -------------------------------------------------------------


def _mismatch(what: str, value) -> TypeMismatchError:
    return TypeMismatchError(f"{what}: unexpected value {value!r} ({type(value).__name__})")


def encode_value(
    out: bytearray, kind: Kind, element: str | None, length: int | None, value, registry: SchemaRegistry
) -> None:
    if kind is Kind.FLOAT64:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise _mismatch("Float64", value)
        out += _F64.pack(float(value))
    elif kind is Kind.INT64:
        if isinstance(value, bool) or not isinstance(value, int):
            raise _mismatch("Int64", value)
        if not INT64_MIN <= value <= INT64_MAX:
            raise TypeMismatchError(f"Int64 overflow: {value}")
        out += _I64.pack(value)
    elif kind is Kind.BOOL:
        if not isinstance(value, bool):
            raise _mismatch("Bool", value)
        out.append(1 if value else 0)
    elif kind is Kind.STRING:
        if not isinstance(value, str):
            raise _mismatch("String", value)
        try:
            raw = value.encode("utf-8")
        except UnicodeEncodeError:
            raise _mismatch("String", value) from None
        out += _U32.pack(len(raw))
        out += raw
    elif kind is Kind.REF:
        target = getattr(value, "target", value)
        if not isinstance(target, Uid):
            raise _mismatch("RefKind", value)
        out += target.to_bytes()
    elif kind is Kind.COMPOSITE:
        if not isinstance(value, DynamicRecord) or value.type_name != element:
            raise _mismatch(f"Composite<{element}>", value)
        desc = registry.composite(element)
        if value.type_version != desc.version:
            raise TypeMismatchError(
                f"nested {element} record has version {value.type_version}, "
                f"registry resolves v{desc.version}"
            )
        _encode_fields(out, value, desc, registry)
    elif kind is Kind.FIXED_ARRAY or kind is Kind.SEQUENCE:
        if not isinstance(value, (tuple, list)):
            raise _mismatch(kind.label, value)
        if kind is Kind.FIXED_ARRAY:
            if len(value) != length:
                raise TypeMismatchError(f"FixedArray expects {length} elements, got {len(value)}")
        else:
            out += _U32.pack(len(value))
        ekind = element_kind(element)
        ename = element if ekind is Kind.COMPOSITE else None
        for v in value:
            encode_value(out, ekind, ename, None, v, registry)
    else:  # pragma: no cover
        raise SchemaError(f"unhandled kind {kind}")


def encode_field(out: bytearray, fd: FieldDescriptor, value, registry: SchemaRegistry) -> None:
    encode_value(out, fd.kind, fd.element, fd.length, value, registry)


def _encode_fields(out: bytearray, record: DynamicRecord, desc: TypeDescriptor, registry) -> None:
    flat = registry.flat_fields(desc)
    if len(record.values) != len(flat):
        raise TypeMismatchError(
            f"{desc.name}: record has {len(record.values)} values, descriptor has {len(flat)} fields"
        )
    for fd, (name, value) in zip(flat, record.values):
        if name != fd.name:
            raise TypeMismatchError(f"{desc.name}: expected field {fd.name!r}, found {name!r}")
        encode_value(out, fd.kind, fd.element, fd.length, value, registry)


def encode_record(record: DynamicRecord, registry: SchemaRegistry) -> bytes:
    """Value bytes of ``record`` using its registered descriptor version."""
    desc = registry.lookup(record.type_name, record.type_version)
    out = bytearray()
    _encode_fields(out, record, desc, registry)
    return bytes(out)


def decode_value(r: _Reader, kind: Kind, element: str | None, length: int | None, registry: SchemaRegistry):
    if kind is Kind.FLOAT64:
        return r.unpack(_F64)
    if kind is Kind.INT64:
        return r.unpack(_I64)
    if kind is Kind.BOOL:
        b = r.unpack(_U8)
        if b > 1:
            raise MalformedError(f"invalid Bool byte {b}")
        return b == 1
    if kind is Kind.STRING:
        return r.str32()
    if kind is Kind.REF:
        return Uid.from_bytes(bytes(r.take(UID_SIZE)))
    if kind is Kind.COMPOSITE:
        desc = registry.composite(element)
        return _decode_fields(r, desc, registry)
    if kind is Kind.FIXED_ARRAY or kind is Kind.SEQUENCE:
        count = length if kind is Kind.FIXED_ARRAY else r.unpack(_U32)
        ekind = element_kind(element)
        if ekind is not Kind.COMPOSITE and count > r.remaining:
            # scalar elements occupy at least one byte each
            raise MalformedError(f"list count {count} exceeds remaining {r.remaining} bytes")
        ename = element if ekind is Kind.COMPOSITE else None
        return tuple(decode_value(r, ekind, ename, None, registry) for _ in range(count))
    raise MalformedError(f"unknown kind {kind}")


def decode_field(r: _Reader, fd: FieldDescriptor, registry: SchemaRegistry):
    return decode_value(r, fd.kind, fd.element, fd.length, registry)


def _decode_fields(r: _Reader, desc: TypeDescriptor, registry) -> DynamicRecord:
    values = tuple(
        (fd.name, decode_value(r, fd.kind, fd.element, fd.length, registry))
        for fd in registry.flat_fields(desc)
    )
    return DynamicRecord(desc.name, desc.version, values)


def read_emulated(data: bytes, desc: TypeDescriptor, registry: SchemaRegistry) -> DynamicRecord:
    """Materialize one value of ``desc``'s layout using descriptors only."""
    r = _Reader(data)
    record = _decode_fields(r, desc, registry)
    if r.remaining:
        raise MalformedError(f"{r.remaining} trailing bytes after {desc.name} value")
    return record


def default_value(kind: Kind, element: str | None, length: int | None, registry: SchemaRegistry | None):
    if kind is Kind.INT64:
        return 0
    if kind is Kind.FLOAT64:
        return 0.0
    if kind is Kind.BOOL:
        return False
    if kind is Kind.STRING:
        return ""
    if kind is Kind.REF:
        return NULL_UID
    if kind is Kind.SEQUENCE:
        return ()
    if registry is None:
        raise SchemaError(f"a registry is needed to build a default {kind.label}<{element}>")
    if kind is Kind.FIXED_ARRAY:
        ekind = element_kind(element)
        ename = element if ekind is Kind.COMPOSITE else None
        return tuple(default_value(ekind, ename, None, registry) for _ in range(length))
    desc = registry.composite(element)
    return DynamicRecord(
        desc.name,
        desc.version,
        tuple((f.name, default_value(f.kind, f.element, f.length, registry)) for f in registry.flat_fields(desc)),
    )


def _flat_or_own(desc: TypeDescriptor, registry: SchemaRegistry | None) -> tuple[FieldDescriptor, ...]:
    if registry is not None:
        return registry.flat_fields(desc)
    if desc.base is not None:
        raise SchemaError(f"{desc.name} has a base type; pass a registry to flatten it")
    return desc.fields


def _convert(value, src: FieldDescriptor, dst: FieldDescriptor):
    if src.kind == dst.kind and src.element == dst.element and src.length == dst.length:
        return value
    if src.kind is Kind.INT64 and dst.kind is Kind.FLOAT64:
        return float(value)
    if (
        src.kind == dst.kind
        and src.kind in LIST_KINDS
        and src.length == dst.length
        and src.element == "Int64"
        and dst.element == "Float64"
    ):
        return tuple(float(v) for v in value)
    raise IncompatibleKindError(f"field {dst.name!r}: cannot convert {src.describe()} to {dst.describe()}")


def evolve(
    record: DynamicRecord,
    src: TypeDescriptor,
    dst: TypeDescriptor,
    registry: SchemaRegistry | None = None,
) -> DynamicRecord:
    """Re-shape ``record`` from the ``src`` layout to the ``dst`` layout.

    Fields are matched by name.  New fields get kind defaults, removed
    fields are dropped, and Int64 widens to Float64 (also element-wise in
    lists).  Any other kind change raises IncompatibleKindError.
    """
    if src.name != dst.name:
        raise SchemaError(f"cannot evolve {src.name} into {dst.name}")
    src_fields = {f.name: f for f in _flat_or_own(src, registry)}
    values = record.as_dict()
    out = []
    for f in _flat_or_own(dst, registry):
        old = src_fields.get(f.name)
        if old is None:
            out.append((f.name, default_value(f.kind, f.element, f.length, registry)))
        else:
            out.append((f.name, _convert(values[f.name], old, f)))
    return DynamicRecord(dst.name, dst.version, tuple(out), uid=record.uid)


# native classes ---------------------------------------------------------

_PY_SCALARS = {int: "Int64", float: "Float64", bool: "Bool", str: "String", Uid: "RefKind"}


def _element_name(tp, registry: SchemaRegistry | None) -> str:
    if tp in _PY_SCALARS:
        return _PY_SCALARS[tp]
    if dataclasses.is_dataclass(tp):
        return (registry.bound_name(tp) if registry else None) or tp.__name__
    raise SchemaError(f"no field kind for Python type {tp!r}")


def descriptor_from_class(
    cls: type, version: int = 1, name: str | None = None, registry: SchemaRegistry | None = None
) -> TypeDescriptor:
    """Build a descriptor for an uninstrumented dataclass from its annotations.

    A dataclass parent becomes the ``base``; only the class's own fields are
    listed.  ``list[X]`` and ``tuple[X, ...]`` map to Sequence.
    """
    if not dataclasses.is_dataclass(cls):
        raise SchemaError(f"{cls!r} is not a dataclass")
    hints = typing.get_type_hints(cls)
    parent = next((b for b in cls.__mro__[1:] if dataclasses.is_dataclass(b)), None)
    inherited = {f.name for f in dataclasses.fields(parent)} if parent else set()
    fields = []
    for f in dataclasses.fields(cls):
        if f.name in inherited:
            continue
        tp = hints[f.name]
        origin = typing.get_origin(tp)
        if origin in (list, tuple) or origin is typing.get_origin(typing.Sequence[int]):
            args = typing.get_args(tp)
            fields.append(FieldDescriptor(f.name, Kind.SEQUENCE, _element_name(args[0], registry)))
        elif tp in _PY_SCALARS:
            fields.append(FieldDescriptor(f.name, Kind.parse(_PY_SCALARS[tp])))
        else:
            fields.append(FieldDescriptor(f.name, Kind.COMPOSITE, _element_name(tp, registry)))
    base = _element_name(parent, registry) if parent else None
    return TypeDescriptor(name or (registry.bound_name(cls) if registry else None) or cls.__name__,
                          version, tuple(fields), base)


def from_native(obj, registry: SchemaRegistry) -> DynamicRecord:
    """Convert a bound native object (and any bound nested objects) to a record."""
    if isinstance(obj, DynamicRecord):
        return obj
    name = registry.bound_name(type(obj))
    if name is None:
        raise TypeMismatchError(f"no native binding for {type(obj).__name__}")
    desc = registry.lookup(name)

    def conv(v):
        if isinstance(v, (list, tuple)):
            return tuple(conv(x) for x in v)
        if dataclasses.is_dataclass(v) and not isinstance(v, type):
            return from_native(v, registry)
        return v

    return DynamicRecord(
        desc.name,
        desc.version,
        tuple((f.name, conv(getattr(obj, f.name))) for f in registry.flat_fields(desc)),
        uid=getattr(obj, "_nrt_uid", None),
    )


def to_native(record: DynamicRecord, registry: SchemaRegistry):
    """Instantiate bound classes where available; unbound types stay emulated."""

    def conv(v):
        if isinstance(v, DynamicRecord):
            return to_native(v, registry)
        if isinstance(v, tuple):
            return [conv(x) for x in v]
        return v

    cls = registry.binding(record.type_name)
    if cls is None:
        return record
    return cls(**{k: conv(v) for k, v in record.values})
