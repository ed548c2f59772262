import pytest

from rawscan import records
from nrt import container
from nrt.errors import ConflictingRegistrationError, MixedProcessTagsError, UntaggedError
from nrt.refs import REF_ARRAY_TYPE, Ref, RefArray, RefRegistry, assign_uid, make_ref, register_loaded, resolve
from nrt.schema import DynamicRecord, FieldDescriptor, Kind, SchemaRegistry, TypeDescriptor, encode_record
from nrt.uid import NULL_UID, UID_SIZE, Uid

C = TypeDescriptor("C", 1, (FieldDescriptor("v", Kind.INT64),))
A = TypeDescriptor("A", 1, (FieldDescriptor("name", Kind.STRING), FieldDescriptor("link", Kind.REF)))


def c(v):
    return DynamicRecord("C", 1, {"v": v})


def test_assign_uid_idempotent_and_sequential():
    reg = RefRegistry(tag=bytes(range(16)))
    r1, r2 = c(1), c(2)
    u1 = assign_uid(reg, r1)
    assert assign_uid(reg, r1) == u1
    u2 = assign_uid(reg, r2)
    assert u2.serial == u1.serial + 1
    assert u1.tag == reg.tag


def test_serials_count_from_one_for_fresh_tag():
    reg = RefRegistry(tag=b"\x07" * 16)
    assert [assign_uid(reg, c(i)).serial for i in range(3)] == [1, 2, 3]


def test_make_ref_and_resolve():
    reg = RefRegistry()
    target = c(5)
    assign_uid(reg, target)
    ref = make_ref(target)
    assert resolve(ref, reg) is target
    with pytest.raises(UntaggedError):
        make_ref(c(6))


def test_unset_ref_resolves_to_nothing():
    assert resolve(Ref(), RefRegistry()) is None
    assert resolve(Ref(NULL_UID), RefRegistry()) is None


def test_ref_is_twenty_bytes():
    reg = RefRegistry()
    small, big = c(1), DynamicRecord("C", 1, {"v": 10 ** 12})
    assign_uid(reg, small)
    assign_uid(reg, big)
    assert len(make_ref(small).to_bytes()) == len(make_ref(big).to_bytes()) == UID_SIZE == 20
    schemas = SchemaRegistry([A])
    rec = DynamicRecord("A", 1, {"name": "", "link": make_ref(small).target})
    assert len(encode_record(rec, schemas)) == 4 + 20


def test_register_loaded_rules():
    reg = RefRegistry()
    uid = Uid(b"\x01" * 16, 9)
    rec = DynamicRecord("C", 1, {"v": 1}, uid=uid)
    register_loaded(reg, rec)
    register_loaded(reg, DynamicRecord("C", 1, {"v": 1}, uid=uid))
    with pytest.raises(ConflictingRegistrationError):
        register_loaded(reg, DynamicRecord("C", 1, {"v": 2}, uid=uid))
    with pytest.raises(UntaggedError):
        register_loaded(reg, c(3))


def test_lazy_resolution_across_files(tmp_path):
    schemas = SchemaRegistry([C, A])
    writer = RefRegistry()
    target = c(42)
    assign_uid(writer, target)
    f1 = container.create(str(tmp_path / "one.nrt"), registry=schemas)
    f1.put("C", target)
    f1.close()
    f2 = container.create(str(tmp_path / "two.nrt"), registry=schemas)
    f2.put("A", DynamicRecord("A", 1, {"name": "a", "link": make_ref(target).target}))
    f2.close()

    reader = RefRegistry()
    a = container.open_container(str(tmp_path / "two.nrt"), reader).get("A")
    ref = Ref(a["link"])
    assert resolve(ref, reader) is None
    loaded = container.open_container(str(tmp_path / "one.nrt"), reader).get("C")
    assert resolve(ref, reader) == loaded == target
    assert resolve(ref, reader) is resolve(ref, reader)


def test_shared_target_stored_once(tmp_path):
    schemas = SchemaRegistry([C, A])
    target = c(7)
    uid = assign_uid(RefRegistry(), target)
    path = str(tmp_path / "g.nrt")
    f = container.create(path, registry=schemas)
    for i in range(5):
        f.put(f"a{i}", DynamicRecord("A", 1, {"name": str(i), "link": uid}))
        f.put("C", target)
    f.close()
    payloads = [p for t, _, p in records(open(path, "rb").read()) if t == 0xD6]
    stored_targets = [p for p in payloads if p[0] & 1 and p[1:21] == uid.to_bytes()]
    assert len(stored_targets) == 1
    g = container.open_container(path, RefRegistry())
    assert len(g.list_keys()) == 10
    assert g.get("C", 5) == target


def test_ref_array():
    reg = RefRegistry()
    targets = [c(i) for i in range(3)]
    uids = [assign_uid(RefRegistry(tag=reg.tag), t) for t in targets]
    arr = RefArray()
    for u in uids:
        arr.append(u)
    fresh = RefRegistry()
    assert arr.get(1, fresh) is None
    for t in targets:
        register_loaded(fresh, t)
    assert arr.get(1, fresh) == targets[1]
    with pytest.raises(MixedProcessTagsError):
        arr.append(Uid(b"\xee" * 16, 1))
    record = arr.to_record()
    assert (record.type_name, record.type_version) == (REF_ARRAY_TYPE.name, 1)
    assert RefArray.from_record(record) == arr
    encode_record(record, SchemaRegistry([REF_ARRAY_TYPE]))
