import dataclasses
import struct
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from corpus import Corpus, crc32_bitwise
from nrt.errors import (
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
from nrt.schema import (
    DynamicRecord,
    FieldDescriptor,
    Kind,
    SchemaRegistry,
    TypeDescriptor,
    compute_checksum,
    decode_descriptor,
    descriptor_from_class,
    encode_descriptor,
    encode_record,
    evolve,
    from_native,
    read_emulated,
    to_native,
)

FIXTURES = Path(__file__).parent / "fixtures"
F = FieldDescriptor


def hit(version=1, *fields):
    return TypeDescriptor("Hit", version, fields or (F("x", Kind.FLOAT64), F("y", Kind.FLOAT64)))


def test_golden_hit_descriptor_bytes():
    golden = bytes.fromhex((FIXTURES / "hit_v1.hex").read_text().strip())
    assert encode_descriptor(hit()) == golden
    # hand decode of the fixture: tag, name, version, checksum, base, count
    assert golden[0] == 0xD5
    assert golden[1:3] == b"\x03\x00" and golden[3:6] == b"Hit"
    assert struct.unpack_from("<I", golden, 6)[0] == 1
    stored = struct.unpack_from("<I", golden, 10)[0]
    assert golden[14:16] == b"\x00\x00"
    assert struct.unpack_from("<H", golden, 16)[0] == 2
    zeroed = golden[:10] + b"\0\0\0\0" + golden[14:]
    assert stored == crc32_bitwise(zeroed) == hit().checksum


def test_checksum_matches_bitwise_oracle_for_marker():
    marker = TypeDescriptor("Marker", 1, ())
    raw = bytearray(encode_descriptor(marker))
    raw[-8:-4] = b"\0\0\0\0"  # checksum slot precedes base (2) and count (2)
    assert compute_checksum(marker) == crc32_bitwise(bytes(raw))


def test_kind_change_changes_checksum():
    a = hit(1, F("x", Kind.INT64))
    b = hit(1, F("x", Kind.FLOAT64))
    assert a.checksum != b.checksum
    for d in (a, b):
        raw = bytearray(encode_descriptor(d))
        raw[10:14] = b"\0\0\0\0"
        assert d.checksum == crc32_bitwise(bytes(raw))


def test_identical_descriptors_share_checksum():
    assert hit().checksum == hit().checksum


def test_field_order_is_semantic():
    a = hit(1, F("x", Kind.FLOAT64), F("y", Kind.FLOAT64))
    b = hit(1, F("y", Kind.FLOAT64), F("x", Kind.FLOAT64))
    assert encode_descriptor(a) != encode_descriptor(b)


def test_register_lookup_and_idempotence():
    reg = SchemaRegistry()
    reg.register(hit())
    reg.register(hit())
    assert reg.lookup("Hit", 1) == hit()
    assert reg.latest("Hit") == 1


def test_register_conflict():
    reg = SchemaRegistry([hit()])
    with pytest.raises(DuplicateConflictError):
        reg.register(hit(1, F("x", Kind.FLOAT64), F("z", Kind.FLOAT64)))


def test_unknown_and_cyclic_base():
    reg = SchemaRegistry()
    with pytest.raises(UnknownBaseError):
        reg.register(TypeDescriptor("A", 1, (), base="Nope"))
    with pytest.raises(CyclicBaseError):
        reg.register(TypeDescriptor("A", 1, (), base="A"))


def test_inherited_duplicate_field_rejected():
    reg = SchemaRegistry([TypeDescriptor("B", 1, (F("x", Kind.INT64),))])
    with pytest.raises(SchemaError):
        reg.register(TypeDescriptor("D", 1, (F("x", Kind.INT64),), base="B"))


def test_flat_fields_put_base_first():
    reg = SchemaRegistry([TypeDescriptor("B", 1, (F("a", Kind.INT64),))])
    reg.register(TypeDescriptor("D", 1, (F("b", Kind.STRING),), base="B"))
    assert [f.name for f in reg.flat_fields(reg.lookup("D"))] == ["a", "b"]


def test_field_descriptor_validation():
    with pytest.raises(SchemaError):
        F("x", Kind.COMPOSITE)
    with pytest.raises(SchemaError):
        F("x", Kind.FIXED_ARRAY, "Int64")
    with pytest.raises(SchemaError):
        F("x", Kind.SEQUENCE, "Int64", 3)
    with pytest.raises(SchemaError):
        F("x", Kind.INT64, "Hit")
    with pytest.raises(SchemaError):
        F("bad name", Kind.INT64)


def test_lookup_unknown():
    with pytest.raises(UnknownTypeError):
        SchemaRegistry().lookup("Nope")


def test_decode_round_trip_and_truncation():
    raw = encode_descriptor(hit())
    assert decode_descriptor(raw) == hit()
    assert encode_descriptor(decode_descriptor(raw)) == raw
    for cut in (0, 1, 5, len(raw) - 1):
        with pytest.raises(MalformedError):
            decode_descriptor(raw[:cut])
    with pytest.raises(MalformedError):
        decode_descriptor(raw + b"\0")


def test_flipped_checksum_detected():
    raw = bytearray(bytes.fromhex((FIXTURES / "hit_v1.hex").read_text().strip()))
    raw[10] ^= 0xFF
    with pytest.raises(ChecksumMismatchError):
        decode_descriptor(bytes(raw))


def test_randomized_descriptor_round_trip():
    corpus = Corpus(11)
    for _ in range(1000):
        d = corpus.make_type(depth=1)
        raw = encode_descriptor(d)
        assert decode_descriptor(raw) == d
        assert encode_descriptor(decode_descriptor(raw)) == raw


def test_single_field_mutations_change_checksum():
    corpus = Corpus(12)
    for _ in range(200):
        d = corpus.make_type(depth=0)
        if not d.fields:
            continue
        f0 = d.fields[0]
        renamed = dataclasses.replace(d, fields=(F(f0.name + "z", f0.kind, f0.element, f0.length),) + d.fields[1:])
        assert renamed.checksum != d.checksum
        other = Kind.STRING if f0.kind is not Kind.STRING else Kind.INT64
        if f0.kind in (Kind.INT64, Kind.FLOAT64, Kind.BOOL, Kind.STRING, Kind.REF):
            rekind = dataclasses.replace(d, fields=(F(f0.name, other),) + d.fields[1:])
            assert rekind.checksum != d.checksum
        if len(d.fields) > 1 and d.fields[0] != d.fields[1]:
            swapped = dataclasses.replace(d, fields=(d.fields[1], d.fields[0]) + d.fields[2:])
            assert swapped.checksum != d.checksum


def test_read_emulated_round_trip_over_corpus():
    corpus = Corpus(13)
    for desc, record in corpus.pairs(300):
        data = encode_record(record, corpus.registry)
        assert read_emulated(data, desc, corpus.registry) == record


def test_read_emulated_values():
    reg = SchemaRegistry([hit()])
    rec = DynamicRecord("Hit", 1, {"x": 1.5, "y": -2.0})
    out = read_emulated(encode_record(rec, reg), hit(), reg)
    assert [v for _, v in out.values] == [1.5, -2.0]


def test_nested_sequence_and_empty_sequence():
    reg = SchemaRegistry([hit()])
    track = TypeDescriptor("Track", 1, (F("hits", Kind.SEQUENCE, "Hit"),))
    reg.register(track)
    hits = (DynamicRecord("Hit", 1, {"x": 1.0, "y": 2.0}), DynamicRecord("Hit", 1, {"x": 3.0, "y": 4.0}))
    rec = DynamicRecord("Track", 1, {"hits": hits})
    out = read_emulated(encode_record(rec, reg), track, reg)
    assert len(out["hits"]) == 2 and out["hits"][1]["y"] == 4.0
    empty = DynamicRecord("Track", 1, {"hits": ()})
    assert read_emulated(encode_record(empty, reg), track, reg)["hits"] == ()


def test_read_emulated_unknown_element():
    track = TypeDescriptor("Track", 1, (F("hits", Kind.SEQUENCE, "Hit"),))
    reg = SchemaRegistry()
    with pytest.raises(UnknownElementTypeError):
        read_emulated(b"\x01\x00\x00\x00" + b"\0" * 16, track, reg)


def test_read_emulated_malformed():
    reg = SchemaRegistry([hit()])
    with pytest.raises(MalformedError):
        read_emulated(b"\0" * 7, hit(), reg)
    with pytest.raises(MalformedError):
        read_emulated(b"\0" * 17, hit(), reg)


def test_encode_type_mismatch():
    reg = SchemaRegistry([hit()])
    with pytest.raises(TypeMismatchError):
        encode_record(DynamicRecord("Hit", 1, {"x": "a", "y": 1.0}), reg)


def test_evolve_identity_default_and_widening():
    reg = SchemaRegistry()
    v1 = TypeDescriptor("P", 1, (F("x", Kind.INT64), F("gone", Kind.STRING)))
    v2 = TypeDescriptor("P", 2, (F("x", Kind.FLOAT64), F("z", Kind.FLOAT64), F("s", Kind.SEQUENCE, "Int64")))
    rec = DynamicRecord("P", 1, {"x": 7, "gone": "a"})
    assert evolve(rec, v1, v1, reg) == rec
    out = evolve(rec, v1, v2, reg)
    assert out.as_dict() == {"x": 7.0, "z": 0.0, "s": ()}
    assert isinstance(out["x"], float)


def test_evolve_incompatible():
    reg = SchemaRegistry([hit()])
    v1 = TypeDescriptor("P", 1, (F("x", Kind.STRING),))
    v2 = TypeDescriptor("P", 2, (F("x", Kind.COMPOSITE, "Hit"),))
    with pytest.raises(IncompatibleKindError):
        evolve(DynamicRecord("P", 1, {"x": "a"}), v1, v2, reg)


def test_evolve_identity_over_corpus():
    corpus = Corpus(14)
    for desc, rec in corpus.pairs(100):
        assert evolve(rec, desc, desc, corpus.registry) == rec


@dataclasses.dataclass
class Vec:
    x: float
    y: float


@dataclasses.dataclass
class Particle:
    name: str
    p: Vec
    tags: list[int]


def test_native_binding_round_trip():
    reg = SchemaRegistry()
    reg.register(descriptor_from_class(Vec))
    reg.register(descriptor_from_class(Particle, registry=reg))
    reg.bind("Vec", Vec)
    reg.bind("Particle", Particle)
    obj = Particle("mu", Vec(1.0, 2.0), [1, 2])
    rec = from_native(obj, reg)
    assert rec["p"]["y"] == 2.0
    assert to_native(rec, reg) == obj
    reg.unbind("Particle")
    assert to_native(rec, reg) == rec


@settings(max_examples=200, deadline=None)
@given(
    x=st.integers(min_value=-(1 << 63), max_value=(1 << 63) - 1),
    y=st.floats(allow_nan=False),
    s=st.text(),
    flags=st.lists(st.booleans(), max_size=5),
)
def test_scalar_value_round_trip(x, y, s, flags):
    d = TypeDescriptor("S", 1, (F("x", Kind.INT64), F("y", Kind.FLOAT64), F("s", Kind.STRING),
                                F("flags", Kind.SEQUENCE, "Bool")))
    reg = SchemaRegistry([d])
    try:
        rec = DynamicRecord("S", 1, {"x": x, "y": y, "s": s, "flags": flags})
        data = encode_record(rec, reg)
    except TypeMismatchError:
        # lone surrogates cannot be encoded as UTF-8
        assert any(0xD800 <= ord(c) <= 0xDFFF for c in s)
        return
    assert read_emulated(data, d, reg) == rec
