"""Columnar trees: records split into branches, buffered in baskets.

The split level controls how deep composite fields are decomposed.  Level 0
keeps whole records in a single branch; each further level expands one more
layer of composition.  A ``Sequence`` of composites that is expanded becomes
a count branch ``<path>_n`` plus one list-valued branch per member.

Reading is lazy: a :class:`TreeReader` loads only the baskets of the branches
it is asked for and counts every load in its :class:`ReadTrace`.
"""
from __future__ import annotations

import base64
import bisect
from collections import Counter
from dataclasses import dataclass, field

from .container import ContainerFile, open_chain
from .errors import (
    EmptyCollectionError,
    HeterogeneousError,
    IoFailureError,
    MalformedError,
    NoSuchBranchError,
    NotFoundError,
    OutOfRangeError,
    SchemaError,
    TypeMismatchError,
)
from .schema import (
    LIST_KINDS,
    DynamicRecord,
    FieldDescriptor,
    Kind,
    SchemaRegistry,
    TypeDescriptor,
    _decode_fields,
    _encode_fields,
    _Reader,
    _U32,
    decode_field,
    decode_value,
    element_kind,
    encode_field,
    encode_record,
    encode_value,
)

DEFAULT_BASKET_CAPACITY = 1000

WHOLE, LEAF, COUNT, MEMBER = "whole", "leaf", "count", "member"

BASKET_TYPE = TypeDescriptor(
    "nrt.Basket",
    1,
    (
        FieldDescriptor("branch", Kind.STRING),
        FieldDescriptor("first_entry", Kind.INT64),
        FieldDescriptor("count", Kind.INT64),
        FieldDescriptor("payload", Kind.STRING),
    ),
)
BRANCH_META_TYPE = TypeDescriptor(
    "nrt.TreeBranch",
    1,
    (
        FieldDescriptor("name", Kind.STRING),
        FieldDescriptor("axis", Kind.STRING),
        FieldDescriptor("basket_keys", Kind.SEQUENCE, "String"),
    ),
)
TREE_META_TYPE = TypeDescriptor(
    "nrt.TreeMeta",
    1,
    (
        FieldDescriptor("name", Kind.STRING),
        FieldDescriptor("type_name", Kind.STRING),
        FieldDescriptor("split_level", Kind.INT64),
        FieldDescriptor("entries", Kind.INT64),
        FieldDescriptor("branches", Kind.SEQUENCE, "nrt.TreeBranch"),
    ),
)

INTERNAL_TYPES = SchemaRegistry([BASKET_TYPE, BRANCH_META_TYPE, TREE_META_TYPE])


@dataclass(frozen=True)
class BranchLayout:
    """Where one branch's values come from.

    ``path`` is the field path to the stored value; for count and member
    branches it is the path of the split sequence itself.
    """

    name: str
    path: tuple[str, ...]
    role: str
    field: FieldDescriptor | None = None
    axis: str | None = None

    @property
    def leaf_kind(self) -> Kind:
        if self.role == WHOLE:
            return Kind.COMPOSITE
        if self.role == COUNT:
            return Kind.INT64
        return self.field.kind


def split(desc: TypeDescriptor, level: int, registry: SchemaRegistry) -> list[BranchLayout]:
    if level < 0:
        raise ValueError("split level must be non-negative")
    if desc.key not in registry:
        registry.lookup(desc.name, desc.version)
    if level == 0:
        return [BranchLayout(desc.name, (), WHOLE)]
    out: list[BranchLayout] = []

    def expand(d: TypeDescriptor, prefix: tuple[str, ...], budget: int) -> None:
        for f in registry.flat_fields(d):
            path = prefix + (f.name,)
            name = ".".join(path)
            if f.kind is Kind.COMPOSITE and budget > 1:
                expand(registry.composite(f.element), path, budget - 1)
            elif f.kind is Kind.SEQUENCE and element_kind(f.element) is Kind.COMPOSITE and budget > 1:
                count = f"{name}_n"
                out.append(BranchLayout(count, path, COUNT))
                for m in registry.flat_fields(registry.composite(f.element)):
                    out.append(BranchLayout(f"{name}.{m.name}", path, MEMBER, m, count))
            else:
                out.append(BranchLayout(name, path, LEAF, f))

    expand(desc, (), level)
    names = [b.name for b in out]
    if len(set(names)) != len(names):
        dup = next(n for n in names if names.count(n) > 1)
        raise SchemaError(f"{desc.name}: split produces branch name {dup!r} twice")
    return out


@dataclass(frozen=True)
class BasketRef:
    first_entry: int
    count: int
    file_index: int
    key: str

    def __str__(self):
        return f"{self.file_index}:{self.first_entry}:{self.count}:{self.key}"

    @classmethod
    def parse(cls, text: str) -> "BasketRef":
        try:
            index, first, count, key = text.split(":", 3)
            return cls(int(first), int(count), int(index), key)
        except ValueError:
            raise MalformedError(f"bad basket key {text!r}") from None


@dataclass
class Branch:
    layout: BranchLayout
    capacity: int
    baskets: list[BasketRef] = field(default_factory=list)
    pending: list = field(default_factory=list)
    _starts: list[int] = field(default_factory=list)

    @property
    def name(self) -> str:
        return self.layout.name

    @property
    def flushed_entries(self) -> int:
        return self.baskets[-1].first_entry + self.baskets[-1].count if self.baskets else 0

    def add_basket(self, ref: BasketRef) -> None:
        self.baskets.append(ref)
        self._starts.append(ref.first_entry)

    def basket_for(self, i: int) -> BasketRef:
        return self.baskets[bisect.bisect_right(self._starts, i) - 1]


@dataclass(frozen=True)
class PathPlan:
    """How to produce a (possibly logical) branch path from physical branches.

    ``axis`` is the list field the value varies over per entry, if any;
    ``nested`` marks paths that cross more than one list.
    """

    path: str
    branch: str | None
    rest: tuple[str, ...]
    count: bool
    kind: Kind
    axis: str | None
    nested: bool
    outer_list: bool


class ReadTrace:
    def __init__(self):
        self.loads: Counter = Counter()

    def record(self, branch: str) -> None:
        self.loads[branch] += 1

    def loaded_branches(self) -> set[str]:
        return {b for b, n in self.loads.items() if n}

    def total(self) -> int:
        return sum(self.loads.values())


def _project(value, rest: tuple[str, ...]):
    if not rest:
        return value
    if isinstance(value, DynamicRecord):
        return _project(value[rest[0]], rest[1:])
    return tuple(_project(v, rest) for v in value)


class Tree:
    def __init__(self, name: str, desc: TypeDescriptor, split_level: int, registry: SchemaRegistry,
                 sink: ContainerFile | None = None, basket_capacity: int = DEFAULT_BASKET_CAPACITY):
        if basket_capacity < 1:
            raise ValueError("basket_capacity must be positive")
        self.name = name
        self.desc = desc
        self.split_level = split_level
        self.registry = registry
        self.basket_capacity = basket_capacity
        self.layouts = split(desc, split_level, registry)
        self.branches = [Branch(layout, basket_capacity) for layout in self.layouts]
        self._by_name = {b.name: b for b in self.branches}
        self.entries = 0
        self.files: list[ContainerFile] = []
        self.writable = sink is not None
        self.finalized = False
        self._plans: dict[str, PathPlan] = {}
        self._default_reader: TreeReader | None = None
        if sink is not None:
            self._attach(sink)

    # writing ------------------------------------------------------------

    @property
    def sink(self) -> ContainerFile:
        return self.files[-1]

    def _attach(self, sink: ContainerFile) -> None:
        sink.write_schema(self.desc.name, self.desc.version, self.registry)
        for t in (BASKET_TYPE, TREE_META_TYPE):
            sink.write_schema(t.name, t.version, INTERNAL_TYPES)
        self.files.append(sink)

    def _extract(self, layout: BranchLayout, record: DynamicRecord):
        if layout.role == WHOLE:
            return record
        value = record
        for part in layout.path:
            value = value[part]
        if layout.role == COUNT:
            return len(value)
        if layout.role == MEMBER:
            return tuple(elem[layout.field.name] for elem in value)
        return value

    def fill(self, record: DynamicRecord) -> int:
        if not self.writable:
            raise IoFailureError(f"tree {self.name!r} is read-only")
        record = _as_record(record, self.registry)
        if record.type_name != self.desc.name or record.type_version != self.desc.version:
            raise TypeMismatchError(
                f"tree {self.name!r} holds {self.desc.name} v{self.desc.version}, "
                f"got {record.type_name} v{record.type_version}"
            )
        encode_record(record, self.registry)  # validates before any branch is touched
        for b in self.branches:
            b.pending.append(self._extract(b.layout, record))
        index = self.entries
        self.entries += 1
        if len(self.branches[0].pending) >= self.basket_capacity:
            self.flush()
        return index

    def _encode_entry(self, layout: BranchLayout, out: bytearray, value) -> None:
        if layout.role == WHOLE:
            _encode_fields(out, value, self.desc, self.registry)
        elif layout.role == COUNT:
            encode_value(out, Kind.INT64, None, None, value, self.registry)
        elif layout.role == MEMBER:
            out += _U32.pack(len(value))
            for v in value:
                encode_field(out, layout.field, v, self.registry)
        else:
            encode_field(out, layout.field, value, self.registry)

    def flush(self) -> None:
        """Write every non-empty open basket, then let the sink roll over."""
        if not self.branches[0].pending:
            return
        sink = self.sink
        file_index = len(self.files) - 1
        for b in self.branches:
            out = bytearray()
            for v in b.pending:
                self._encode_entry(b.layout, out, v)
            first = b.flushed_entries
            key = f"{self.name}/{b.name}/{len(b.baskets)}"
            record = DynamicRecord(BASKET_TYPE.name, BASKET_TYPE.version, (
                ("branch", b.name),
                ("first_entry", first),
                ("count", len(b.pending)),
                ("payload", base64.b64encode(bytes(out)).decode("ascii")),
            ))
            sink.put(key, record, INTERNAL_TYPES)
            b.add_basket(BasketRef(first, len(b.pending), file_index, key))
            b.pending = []
        successor = sink.maybe_rollover()
        if successor is not None:
            self._attach(successor)

    def meta_record(self) -> DynamicRecord:
        branches = tuple(
            DynamicRecord(BRANCH_META_TYPE.name, BRANCH_META_TYPE.version, (
                ("name", b.name),
                ("axis", b.layout.axis or ""),
                ("basket_keys", tuple(str(r) for r in b.baskets)),
            ))
            for b in self.branches
        )
        return DynamicRecord(TREE_META_TYPE.name, TREE_META_TYPE.version, (
            ("name", self.name),
            ("type_name", self.desc.name),
            ("split_level", self.split_level),
            ("entries", self.entries),
            ("branches", branches),
        ))

    def finalize(self) -> None:
        """Flush partial baskets and store the tree's metadata record under its name."""
        if not self.writable:
            return
        self.flush()
        self.sink.put(self.name, self.meta_record(), INTERNAL_TYPES)
        self.writable = False
        self.finalized = True

    def close(self) -> None:
        self.finalize()
        for f in self.files:
            f.close()

    # reading ------------------------------------------------------------

    def reader(self) -> "TreeReader":
        return TreeReader(self)

    @property
    def default_reader(self) -> "TreeReader":
        if self._default_reader is None:
            self._default_reader = TreeReader(self)
        return self._default_reader

    def get_entry(self, i: int) -> DynamicRecord:
        return self.default_reader.get_entry(i)

    def read_branch(self, name: str, i: int):
        return self.default_reader.read(name, i)

    def __len__(self) -> int:
        return self.entries

    def __iter__(self):
        reader = self.reader()
        for i in range(self.entries):
            yield reader.get_entry(i)

    @property
    def branch_names(self) -> list[str]:
        return [b.name for b in self.branches]

    def branch(self, name: str) -> Branch:
        try:
            return self._by_name[name]
        except KeyError:
            raise NoSuchBranchError(f"tree {self.name!r} has no branch {name!r}") from None

    def plan(self, path: str) -> PathPlan:
        """Resolve a dotted field path, split or not, to the branch that holds it."""
        cached = self._plans.get(path)
        if cached is None:
            cached = self._plans[path] = self._make_plan(path)
        return cached

    def _make_plan(self, path: str) -> PathPlan:
        parts = tuple(path.split("."))
        if not all(parts):
            raise NoSuchBranchError(f"bad branch path {path!r}")
        reg = self.registry
        d: TypeDescriptor | None = self.desc
        axis = None
        outer_list = False
        nested = False
        kind = Kind.COMPOSITE
        count = False
        for idx, part in enumerate(parts):
            last = idx == len(parts) - 1
            if d is None:
                raise NoSuchBranchError(f"{path!r}: {'.'.join(parts[:idx])} has no fields")
            fields = {f.name: f for f in reg.flat_fields(d)}
            f = fields.get(part)
            if f is None and last and part.endswith("_n") and part[:-2] in fields \
                    and fields[part[:-2]].kind in LIST_KINDS:
                count = True
                outer_list = axis is not None
                kind = Kind.INT64
                parts = parts[:-1] + (part[:-2],)
                break
            if f is None:
                raise NoSuchBranchError(f"tree {self.name!r} has no branch or field {path!r}")
            if f.kind in LIST_KINDS:
                if axis is not None:
                    nested = True
                else:
                    axis = ".".join(parts[:idx + 1])
                ek = element_kind(f.element)
                d = reg.composite(f.element) if ek is Kind.COMPOSITE else None
                kind = ek
            elif f.kind is Kind.COMPOSITE:
                d = reg.composite(f.element)
                kind = Kind.COMPOSITE
            else:
                d = None
                kind = f.kind
        if path in self._by_name:
            return PathPlan(path, path, (), False, kind, axis, nested, outer_list)
        for k in range(len(parts), 0, -1):
            name = ".".join(parts[:k])
            b = self._by_name.get(name)
            if b is not None and b.layout.role != COUNT:
                return PathPlan(path, name, parts[k:], count, kind, axis, nested, outer_list)
        if self.layouts[0].role == WHOLE:
            return PathPlan(path, self.layouts[0].name, parts, count, kind, axis, nested, outer_list)
        # an interior node of the split: reassembled from the branches below it
        return PathPlan(".".join(parts), None, parts, count, kind, axis, nested, outer_list)

    def meta_branches_under(self, prefix: tuple[str, ...]) -> list[Branch]:
        n = len(prefix)
        out = []
        for b in self.branches:
            full = b.layout.path + ((b.layout.field.name,) if b.layout.role == MEMBER else ())
            if full[:n] == prefix:
                out.append(b)
        return out


def _as_record(record, registry: SchemaRegistry) -> DynamicRecord:
    if isinstance(record, DynamicRecord):
        return record
    from .schema import from_native

    return from_native(record, registry)


class TreeReader:
    """Per-reader basket cache and read trace over one tree."""

    def __init__(self, tree: Tree):
        self.tree = tree
        self.trace = ReadTrace()
        self._cache: dict[str, tuple[int, list]] = {}

    def _file(self, index: int) -> ContainerFile:
        f = self.tree.files[index]
        if f.closed:
            f = self.tree.files[index] = ContainerFile.open(f.path, f.refs, memory=f.memory)
        return f

    def _load(self, branch: Branch, ref: BasketRef) -> list:
        f = self._file(ref.file_index)
        record = f.get(ref.key)
        if record["branch"] != branch.name or record["first_entry"] != ref.first_entry \
                or record["count"] != ref.count:
            raise MalformedError(f"basket {ref.key} does not match the tree index")
        data = base64.b64decode(record["payload"])
        r = _Reader(data)
        layout = branch.layout
        reg = f.schemas
        values = []
        for _ in range(ref.count):
            if layout.role == WHOLE:
                values.append(_decode_fields(r, reg.lookup(self.tree.desc.name, self.tree.desc.version), reg))
            elif layout.role == COUNT:
                values.append(decode_value(r, Kind.INT64, None, None, reg))
            elif layout.role == MEMBER:
                n = r.unpack(_U32)
                values.append(tuple(decode_field(r, layout.field, reg) for _ in range(n)))
            else:
                values.append(decode_field(r, layout.field, reg))
        if r.remaining:
            raise MalformedError(f"basket {ref.key}: {r.remaining} trailing bytes")
        self.trace.record(branch.name)
        return values

    def value(self, branch_name: str, i: int):
        """Value of one physical branch at entry ``i``."""
        tree = self.tree
        branch = tree.branch(branch_name)
        if not 0 <= i < tree.entries:
            raise OutOfRangeError(f"entry {i} outside [0, {tree.entries})")
        flushed = branch.flushed_entries
        if i >= flushed:
            return branch.pending[i - flushed]
        cached = self._cache.get(branch_name)
        if cached is not None and cached[0] <= i < cached[0] + len(cached[1]):
            return cached[1][i - cached[0]]
        ref = branch.basket_for(i)
        values = self._load(branch, ref)
        self._cache[branch_name] = (ref.first_entry, values)
        return values[i - ref.first_entry]

    def read(self, path: str, i: int):
        """Value of a branch or dotted field path at entry ``i``."""
        tree = self.tree
        if not 0 <= i < tree.entries:
            raise OutOfRangeError(f"entry {i} outside [0, {tree.entries})")
        plan = tree.plan(path)
        if plan.branch is None:
            value = self._assemble(plan.rest, i)
        else:
            value = _project(self.value(plan.branch, i), plan.rest)
        if plan.count:
            value = tuple(len(v) for v in value) if plan.outer_list else len(value)
        return value

    def get_entry(self, i: int) -> DynamicRecord:
        tree = self.tree
        if not 0 <= i < tree.entries:
            raise OutOfRangeError(f"entry {i} outside [0, {tree.entries})")
        if tree.layouts[0].role == WHOLE:
            return self.value(tree.layouts[0].name, i)
        return self._assemble((), i)

    def _assemble(self, prefix: tuple[str, ...], i: int):
        tree = self.tree
        reg = tree.registry
        node: dict = {}
        for b in tree.meta_branches_under(prefix):
            lay = b.layout
            v = self.value(b.name, i)
            if lay.role == LEAF:
                _put(node, lay.path, v)
            elif lay.role == COUNT:
                _put(node, lay.path + ("#n",), v)
            else:
                _put(node, lay.path + ("#m", lay.field.name), v)
        d = tree.desc
        f = None
        for part in prefix:
            node = node[part]
            f = next(x for x in reg.flat_fields(d) if x.name == part)
            if f.kind is Kind.COMPOSITE or (f.kind is Kind.SEQUENCE and element_kind(f.element) is Kind.COMPOSITE):
                d = reg.composite(f.element)
        if f is None:
            return _build_record(d, node, reg)
        return _build_field(f, node, reg)


def _put(node: dict, path: tuple[str, ...], value) -> None:
    for part in path[:-1]:
        node = node.setdefault(part, {})
    node[path[-1]] = value


def _build_field(f: FieldDescriptor, sub, reg: SchemaRegistry):
    if not isinstance(sub, dict):
        return sub
    ed = reg.composite(f.element)
    if "#n" in sub:
        n = sub["#n"]
        members = sub.get("#m", {})
        flat = reg.flat_fields(ed)
        for m in flat:
            if len(members[m.name]) != n:
                raise MalformedError(f"member {f.name}.{m.name} has {len(members[m.name])} values, count is {n}")
        return tuple(
            DynamicRecord(ed.name, ed.version, tuple((m.name, members[m.name][k]) for m in flat))
            for k in range(n)
        )
    return _build_record(ed, sub, reg)


def _build_record(d: TypeDescriptor, node: dict, reg: SchemaRegistry) -> DynamicRecord:
    return DynamicRecord(
        d.name, d.version, tuple((f.name, _build_field(f, node[f.name], reg)) for f in reg.flat_fields(d))
    )


def create_tree(container: ContainerFile, name: str, desc: TypeDescriptor | str, split_level: int = 99,
                registry: SchemaRegistry | None = None,
                basket_capacity: int = DEFAULT_BASKET_CAPACITY) -> Tree:
    registry = registry or container.registry
    if registry is None:
        raise SchemaError("no schema registry for the tree's type")
    if isinstance(desc, str):
        desc = registry.lookup(desc)
    else:
        registry.lookup(desc.name, desc.version)
    return Tree(name, desc, split_level, registry, container, basket_capacity)


def branches_from_collection(container: ContainerFile, name: str, records: list, split_level: int = 99,
                             registry: SchemaRegistry | None = None,
                             basket_capacity: int = DEFAULT_BASKET_CAPACITY) -> Tree:
    """Create a tree whose layout is inferred from the records themselves, then fill it."""
    registry = registry or container.registry
    records = [_as_record(r, registry) for r in records]
    if not records:
        raise EmptyCollectionError("cannot infer a tree layout from an empty collection")
    first = records[0]
    for r in records[1:]:
        if (r.type_name, r.type_version) != (first.type_name, first.type_version):
            raise HeterogeneousError(
                f"collection mixes {first.type_name} v{first.type_version} and {r.type_name} v{r.type_version}"
            )
    tree = create_tree(container, name, registry.lookup(first.type_name, first.type_version), split_level,
                       registry, basket_capacity)
    for r in records:
        tree.fill(r)
    return tree


def fill(tree: Tree, record) -> int:
    return tree.fill(record)


def get_entry(tree: Tree, i: int) -> DynamicRecord:
    return tree.get_entry(i)


def read_branch(tree: Tree, branch_name: str, i: int):
    return tree.read_branch(branch_name, i)


def open_tree(source, name: str) -> Tree:
    """Open a finalized tree from a path (following overflow files) or a list of containers."""
    files = open_chain(source) if isinstance(source, str) else list(source)
    meta = None
    meta_file = None
    for f in reversed(files):
        if name in f and f.key(name).type_name == TREE_META_TYPE.name:
            meta = f.get(name)
            meta_file = f
            break
    if meta is None:
        raise NotFoundError(f"no tree named {name!r} in {[f.path for f in files]}")
    registry = meta_file.schemas
    desc = registry.lookup(meta["type_name"])
    tree = Tree(name, desc, meta["split_level"], registry)
    stored = [b["name"] for b in meta["branches"]]
    if stored != tree.branch_names:
        raise MalformedError(f"tree {name!r}: stored branch layout {stored} does not match the split of {desc.name}")
    for b, bm in zip(tree.branches, meta["branches"]):
        for text in bm["basket_keys"]:
            b.add_basket(BasketRef.parse(text))
    tree.entries = meta["entries"]
    tree.files = files
    tree.finalized = True
    for b in tree.branches:
        if b.flushed_entries != tree.entries:
            raise MalformedError(f"branch {b.name} covers {b.flushed_entries} of {tree.entries} entries")
    return tree
