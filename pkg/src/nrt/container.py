"""Keyed, self-describing container files.

Layout (little-endian)::

    header     32 bytes   "NRT1", u32 format version, u64 key-table offset, 16-byte process tag
    data       records    tag u8, u64 payload length, payload
                          0xD5 payload = canonical type descriptor
                          0xD6 payload = u8 flags [+ 20-byte uid] + value bytes
    key table  0xD7, u32 count, per key: name, cycle, type name, version, offset, length, codec

Every type used by a value record has its descriptor (and the descriptors of
its bases and nested element types) written earlier in the same file, so a
reader needs no registry of its own.
"""
from __future__ import annotations

import io
import os
import struct
import threading
from dataclasses import dataclass
from typing import Iterator

from .errors import (
    BadMaxSizeError,
    IoFailureError,
    MalformedError,
    NotFoundError,
    UnknownTypeError,
)
from .refs import RefRegistry
from .schema import (
    DESCRIPTOR_TAG,
    DynamicRecord,
    SchemaRegistry,
    _Reader,
    _decode_descriptor,
    encode_descriptor,
    encode_record,
    from_native,
    read_emulated,
)
from .uid import PROCESS_TAG, UID_SIZE, Uid

MAGIC = b"NRT1"
FORMAT_VERSION = 1
VALUE_TAG = 0xD6
KEYS_TAG = 0xD7
MIN_MAX_SIZE = 4096

_HEADER = struct.Struct("<4sIQ16s")
_RECORD_HEAD = struct.Struct("<BQ")
_KEY_TAIL = struct.Struct("<IQQB")
_FLAG_UID = 0x01

HEADER_SIZE = _HEADER.size

#: Backing store for "mem:" containers, keyed by container name.
_MEMORY: dict[str, bytes] = {}
_MEMORY_LOCK = threading.Lock()

#: Records read through get() are registered here unless a container was
#: given its own RefRegistry.
default_refs = RefRegistry()


@dataclass(frozen=True)
class Header:
    magic: bytes = MAGIC
    format_version: int = FORMAT_VERSION
    dir_offset: int = 0
    process_tag: bytes = PROCESS_TAG

    def pack(self) -> bytes:
        return _HEADER.pack(self.magic, self.format_version, self.dir_offset, self.process_tag)

    @classmethod
    def unpack(cls, data: bytes) -> "Header":
        if len(data) < HEADER_SIZE:
            raise MalformedError(f"file shorter than the {HEADER_SIZE}-byte header")
        magic, version, dir_offset, tag = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise MalformedError(f"bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise MalformedError(f"unsupported format version {version}")
        return cls(magic, version, dir_offset, tag)


@dataclass(frozen=True)
class ObjectKey:
    name: str
    cycle: int
    type_name: str
    type_version: int
    offset: int
    length: int
    codec: int = 0

    def pack(self) -> bytes:
        out = bytearray()
        _put_name(out, self.name)
        out += struct.pack("<I", self.cycle)
        _put_name(out, self.type_name)
        out += _KEY_TAIL.pack(self.type_version, self.offset, self.length, self.codec)
        return bytes(out)

    @classmethod
    def unpack_from(cls, r: _Reader) -> "ObjectKey":
        name = r.str16()
        cycle = r.unpack(struct.Struct("<I"))
        type_name = r.str16()
        version, offset, length, codec = _KEY_TAIL.unpack(bytes(r.take(_KEY_TAIL.size)))
        return cls(name, cycle, type_name, version, offset, length, codec)


def _put_name(out: bytearray, text: str) -> None:
    raw = text.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError(f"name too long ({len(raw)} bytes)")
    out += struct.pack("<H", len(raw))
    out += raw


def encode_key_table(keys: list[ObjectKey]) -> bytes:
    out = bytearray([KEYS_TAG])
    out += struct.pack("<I", len(keys))
    for k in keys:
        out += k.pack()
    return bytes(out)


def decode_key_table(data: bytes) -> list[ObjectKey]:
    r = _Reader(data)
    if r.unpack(struct.Struct("<B")) != KEYS_TAG:
        raise MalformedError("key table tag 0xD7 not found at dir_offset")
    count = r.unpack(struct.Struct("<I"))
    return [ObjectKey.unpack_from(r) for _ in range(count)]


def next_overflow_name(path: str, index: int) -> str:
    """Name of the ``index``-th overflow file: ``myfile.root`` -> ``myfile_1.root``."""
    if index < 1:
        raise ValueError("overflow index starts at 1")
    head, tail = os.path.split(path)
    stem, ext = os.path.splitext(tail)
    return os.path.join(head, f"{stem}_{index}{ext}")


class ContainerFile:
    """One container on disk (or in process memory for ``mem:`` names)."""

    def __init__(self, stream, path: str, *, writable: bool, memory: bool = False,
                 max_size: int | None = None, registry: SchemaRegistry | None = None,
                 refs: RefRegistry | None = None, overflow_index: int = 0, base_path: str | None = None):
        self._stream = stream
        self.path = path
        self.memory = memory
        self.writable = writable
        self.max_size = max_size
        self.registry = registry
        self.refs = refs if refs is not None else default_refs
        self.overflow_index = overflow_index
        self.base_path = base_path or path
        self.schemas = SchemaRegistry()
        self.header = Header()
        self._keys: list[ObjectKey] = []
        self._index: dict[tuple[str, int], ObjectKey] = {}
        self._cycles: dict[str, int] = {}
        self._written_uids: dict[Uid, tuple[int, int]] = {}
        self._descriptor_offsets: list[int] = []
        self._size = 0
        self._lock = threading.Lock()
        self._closed = False

    # construction --------------------------------------------------------

    @classmethod
    def create(cls, path: str, max_size: int | None = None, registry: SchemaRegistry | None = None,
               refs: RefRegistry | None = None, *, memory: bool = False, overflow_index: int = 0,
               base_path: str | None = None) -> "ContainerFile":
        if max_size is not None and max_size < MIN_MAX_SIZE:
            raise BadMaxSizeError(f"max_size must be at least {MIN_MAX_SIZE} bytes, got {max_size}")
        if memory:
            stream = io.BytesIO()
        else:
            try:
                stream = open(path, "w+b")
            except OSError as exc:
                raise IoFailureError(f"cannot create {path}: {exc}") from exc
        self = cls(stream, path, writable=True, memory=memory, max_size=max_size, registry=registry,
                   refs=refs, overflow_index=overflow_index, base_path=base_path)
        self.header = Header(process_tag=self.refs.tag)
        self._write_at(0, self.header.pack())
        self._size = HEADER_SIZE
        return self

    @classmethod
    def open(cls, path: str, refs: RefRegistry | None = None, *, memory: bool = False) -> "ContainerFile":
        if memory:
            with _MEMORY_LOCK:
                data = _MEMORY.get(path)
            if data is None:
                raise IoFailureError(f"no in-memory container named {path!r}")
            stream = io.BytesIO(data)
        else:
            try:
                stream = open(path, "rb")
            except OSError as exc:
                raise IoFailureError(f"cannot open {path}: {exc}") from exc
        self = cls(stream, path, writable=False, memory=memory, refs=refs)
        try:
            self._load()
        except Exception:
            stream.close()
            raise
        return self

    def _load(self) -> None:
        stream = self._stream
        stream.seek(0, io.SEEK_END)
        self._size = stream.tell()
        self.header = Header.unpack(self._read_at(0, HEADER_SIZE))
        dir_offset = self.header.dir_offset
        if dir_offset == 0:
            raise MalformedError(f"{self.path} was never finalized (no key table)")
        if dir_offset < HEADER_SIZE or dir_offset >= self._size:
            raise MalformedError(f"dir_offset {dir_offset} outside file of {self._size} bytes")
        for key in decode_key_table(self._read_at(dir_offset, self._size - dir_offset)):
            if key.offset + key.length > dir_offset:
                raise MalformedError(f"key {key.name};{key.cycle} points past the data region")
            self._add_key(key)
        pos = HEADER_SIZE
        while pos < dir_offset:
            tag, length = _RECORD_HEAD.unpack(self._read_at(pos, _RECORD_HEAD.size))
            if tag == DESCRIPTOR_TAG:
                payload = self._read_at(pos + _RECORD_HEAD.size, length)
                self.schemas.register(_decode_descriptor(_Reader(payload)))
                self._descriptor_offsets.append(pos)
            elif tag != VALUE_TAG:
                raise MalformedError(f"unknown record tag {tag:#04x} at offset {pos}")
            pos += _RECORD_HEAD.size + length
        if pos != dir_offset:
            raise MalformedError("data region does not end at dir_offset")

    # low level io -------------------------------------------------------

    def _read_at(self, offset: int, n: int) -> bytes:
        with self._lock:
            try:
                self._stream.seek(offset)
                data = self._stream.read(n)
            except (OSError, ValueError) as exc:
                raise IoFailureError(f"read failed on {self.path}: {exc}") from exc
        if len(data) != n:
            raise MalformedError(f"short read at offset {offset}: wanted {n}, got {len(data)}")
        return data

    def _write_at(self, offset: int, data: bytes) -> None:
        with self._lock:
            try:
                self._stream.seek(offset)
                self._stream.write(data)
            except (OSError, ValueError) as exc:
                raise IoFailureError(f"write failed on {self.path}: {exc}") from exc

    def _append_record(self, tag: int, payload: bytes) -> tuple[int, int]:
        offset = self._size
        blob = _RECORD_HEAD.pack(tag, len(payload)) + payload
        self._write_at(offset, blob)
        self._size += len(blob)
        return offset, len(blob)

    def _require_writable(self) -> None:
        if not self.writable:
            raise IoFailureError(f"{self.path} is not open for writing")

    # keys ---------------------------------------------------------------

    def _add_key(self, key: ObjectKey) -> None:
        self._keys.append(key)
        self._index[(key.name, key.cycle)] = key
        self._cycles[key.name] = max(self._cycles.get(key.name, 0), key.cycle)

    def list_keys(self) -> list[ObjectKey]:
        return list(self._keys)

    def __iter__(self) -> Iterator[ObjectKey]:
        return iter(self.list_keys())

    def __contains__(self, name: str) -> bool:
        return name in self._cycles

    def key(self, name: str, cycle: int | None = None) -> ObjectKey:
        if cycle is None:
            cycle = self._cycles.get(name)
        key = self._index.get((name, cycle)) if cycle is not None else None
        if key is None:
            what = name if cycle is None else f"{name};{cycle}"
            raise NotFoundError(f"no key {what} in {self.path}")
        return key

    @property
    def closed(self) -> bool:
        return self._closed

    @property
    def size(self) -> int:
        return self._size

    @property
    def descriptor_count(self) -> int:
        return len(self._descriptor_offsets)

    # objects ------------------------------------------------------------

    def write_schema(self, type_name: str, version: int | None = None,
                     registry: SchemaRegistry | None = None) -> None:
        """Write the descriptor closure of a type unless already present."""
        self._require_writable()
        registry = registry or self.registry
        if registry is None:
            raise UnknownTypeError(f"no registry to describe {type_name}")
        desc = registry.lookup(type_name, version)
        for d in registry.closure(desc):
            if d.key in self.schemas:
                continue
            offset, _ = self._append_record(DESCRIPTOR_TAG, encode_descriptor(d))
            self.schemas.register(d)
            self._descriptor_offsets.append(offset)

    def put(self, name: str, record, registry: SchemaRegistry | None = None) -> ObjectKey:
        """Append ``record`` under ``name`` with the next cycle number.

        A uid-tagged record already stored in this file is not written again;
        the new key points at the existing payload.
        """
        self._require_writable()
        registry = registry or self.registry
        if registry is None:
            raise UnknownTypeError("container has no schema registry")
        record = from_native(record, registry)
        self.write_schema(record.type_name, record.type_version, registry)
        shared = self._written_uids.get(record.uid) if record.uid is not None else None
        if shared is not None:
            offset, length = shared
        else:
            body = encode_record(record, registry)
            if record.uid is not None:
                payload = bytes([_FLAG_UID]) + record.uid.to_bytes() + body
            else:
                payload = b"\x00" + body
            offset, length = self._append_record(VALUE_TAG, payload)
            if record.uid is not None:
                self._written_uids[record.uid] = (offset, length)
        key = ObjectKey(name, self._cycles.get(name, 0) + 1, record.type_name, record.type_version, offset, length)
        self._add_key(key)
        return key

    def read_payload(self, key: ObjectKey) -> bytes:
        raw = self._read_at(key.offset, key.length)
        tag, length = _RECORD_HEAD.unpack_from(raw)
        if tag != VALUE_TAG or length != key.length - _RECORD_HEAD.size:
            raise MalformedError(f"key {key.name};{key.cycle} does not point at a value record")
        if key.codec != 0:
            raise MalformedError(f"unsupported codec {key.codec}")
        return raw[_RECORD_HEAD.size:]

    def get(self, name: str, cycle: int | None = None) -> DynamicRecord:
        key = self.key(name, cycle)
        payload = self.read_payload(key)
        if not payload:
            raise MalformedError("empty value payload")
        flags = payload[0]
        pos = 1
        uid = None
        if flags & _FLAG_UID:
            if len(payload) < 1 + UID_SIZE:
                raise MalformedError("truncated uid in value record")
            uid = Uid.from_bytes(payload[1:1 + UID_SIZE])
            pos += UID_SIZE
        desc = self.schemas.lookup(key.type_name, key.type_version)
        record = read_emulated(payload[pos:], desc, self.schemas)
        if uid is not None:
            object.__setattr__(record, "uid", uid)
            self.refs.register_loaded(record)
        return record

    def get_object(self, name: str, cycle: int | None = None, registry: SchemaRegistry | None = None):
        """Like get(), but returns a native instance when the type is bound in ``registry``."""
        from .schema import to_native

        record = self.get(name, cycle)
        registry = registry or self.registry
        return to_native(record, registry) if registry is not None else record

    # lifecycle ----------------------------------------------------------

    def finalize(self) -> None:
        """Write the key table and point the header at it.  Idempotent."""
        if not self.writable:
            return
        dir_offset = self._size
        table = encode_key_table(self._keys)
        self._write_at(dir_offset, table)
        self._size += len(table)
        self.header = Header(MAGIC, FORMAT_VERSION, dir_offset, self.header.process_tag)
        self._write_at(0, self.header.pack())
        with self._lock:
            self._stream.flush()
        if self.memory:
            with _MEMORY_LOCK:
                _MEMORY[self.path] = self._stream.getvalue()
        self.writable = False

    def close(self) -> None:
        if self._closed:
            return
        self.finalize()
        self._stream.close()
        self._closed = True

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def maybe_rollover(self) -> "ContainerFile | None":
        """Finalize this file and open its numbered successor once it exceeds max_size."""
        if self.max_size is None or self._size <= self.max_size:
            return None
        self.finalize()
        index = self.overflow_index + 1
        return ContainerFile.create(
            next_overflow_name(self.base_path, index), self.max_size, self.registry, self.refs,
            memory=self.memory, overflow_index=index, base_path=self.base_path,
        )

    def __repr__(self):
        state = "w" if self.writable else "r"
        return f"<ContainerFile {self.path!r} {state} keys={len(self._keys)} size={self._size}>"


def create(path: str, max_size: int | None = None, registry: SchemaRegistry | None = None,
           refs: RefRegistry | None = None, *, memory: bool = False) -> ContainerFile:
    return ContainerFile.create(path, max_size, registry, refs, memory=memory)


def open_container(path: str, refs: RefRegistry | None = None, *, memory: bool = False) -> ContainerFile:
    return ContainerFile.open(path, refs, memory=memory)


def maybe_rollover(container: ContainerFile) -> ContainerFile | None:
    return container.maybe_rollover()


def _exists(path: str, memory: bool) -> bool:
    if memory:
        with _MEMORY_LOCK:
            return path in _MEMORY
    return os.path.exists(path)


def chain_paths(path: str, *, memory: bool = False) -> list[str]:
    """``path`` followed by every existing overflow successor, in order."""
    paths = [path]
    index = 1
    while _exists(next_overflow_name(path, index), memory):
        paths.append(next_overflow_name(path, index))
        index += 1
    return paths


def open_chain(path: str, refs: RefRegistry | None = None, *, memory: bool = False) -> list[ContainerFile]:
    files = []
    for i, p in enumerate(chain_paths(path, memory=memory)):
        f = ContainerFile.open(p, refs, memory=memory)
        f.overflow_index = i
        f.base_path = path
        files.append(f)
    return files


class ContainerChain:
    """A writer that follows rollover: puts always go to the newest file."""

    def __init__(self, first: ContainerFile):
        self.files = [first]

    @classmethod
    def create(cls, path: str, max_size: int | None = None, registry: SchemaRegistry | None = None,
               refs: RefRegistry | None = None, *, memory: bool = False) -> "ContainerChain":
        return cls(ContainerFile.create(path, max_size, registry, refs, memory=memory))

    @property
    def current(self) -> ContainerFile:
        return self.files[-1]

    @property
    def paths(self) -> list[str]:
        return [f.path for f in self.files]

    def put(self, name: str, record, registry: SchemaRegistry | None = None) -> tuple[int, ObjectKey]:
        index = len(self.files) - 1
        key = self.current.put(name, record, registry)
        self.rollover()
        return index, key

    def rollover(self) -> ContainerFile | None:
        successor = self.current.maybe_rollover()
        if successor is not None:
            self.files.append(successor)
        return successor

    def close(self) -> None:
        for f in self.files:
            f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def memory_names() -> list[str]:
    with _MEMORY_LOCK:
        return sorted(_MEMORY)


def drop_memory(name: str | None = None) -> None:
    with _MEMORY_LOCK:
        if name is None:
            _MEMORY.clear()
        else:
            _MEMORY.pop(name, None)
