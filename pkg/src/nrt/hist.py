"""One-dimensional weighted histograms, label histograms, merging and stacks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import (
    IncompatibleBinningError,
    LabelModeMismatchError,
    NumericModeMismatchError,
    TypeMismatchError,
)
from .schema import DynamicRecord, FieldDescriptor, Kind, SchemaRegistry, TypeDescriptor

HIST_TYPE = TypeDescriptor(
    "nrt.Hist1D",
    1,
    (
        FieldDescriptor("name", Kind.STRING),
        FieldDescriptor("nbins", Kind.INT64),
        FieldDescriptor("lo", Kind.FLOAT64),
        FieldDescriptor("hi", Kind.FLOAT64),
        FieldDescriptor("contents", Kind.SEQUENCE, "Float64"),
        FieldDescriptor("sumw2", Kind.SEQUENCE, "Float64"),
        FieldDescriptor("under", Kind.FLOAT64),
        FieldDescriptor("over", Kind.FLOAT64),
        FieldDescriptor("entries", Kind.INT64),
        FieldDescriptor("labels", Kind.SEQUENCE, "String"),
    ),
)


@dataclass
class Hist1D:
    """Fixed-width bins over [lo, hi), or string-labelled bins.

    Bins are half open, so ``x == hi`` lands in overflow.  A histogram that
    has not been filled yet switches to label mode on its first
    :meth:`fill_label`.
    """

    name: str
    nbins: int
    lo: float
    hi: float
    contents: list[float] = field(default_factory=list)
    sumw2: list[float] = field(default_factory=list)
    underflow: float = 0.0
    overflow: float = 0.0
    entries: int = 0
    labels: dict[str, int] | None = None

    def __post_init__(self):
        if self.labels is None:
            if self.nbins < 1:
                raise ValueError("nbins must be positive")
            if not self.lo < self.hi:
                raise ValueError(f"need lo < hi, got [{self.lo}, {self.hi})")
            if not self.contents:
                self.contents = [0.0] * self.nbins
            if not self.sumw2:
                self.sumw2 = [0.0] * self.nbins

    @classmethod
    def labelled(cls, name: str) -> "Hist1D":
        return cls(name, 0, 0.0, 0.0, [], [], labels={})

    @property
    def label_mode(self) -> bool:
        return self.labels is not None

    def bin_index(self, x: float) -> int:
        if math.isnan(x):
            raise ValueError("cannot bin NaN")
        if x < self.lo:
            return -1
        if x >= self.hi:
            return self.nbins
        b = math.floor(self.nbins * (x - self.lo) / (self.hi - self.lo))
        return min(max(b, 0), self.nbins - 1)

    def edges(self, b: int) -> tuple[float, float]:
        width = (self.hi - self.lo) / self.nbins
        return self.lo + b * width, self.lo + (b + 1) * width

    def fill(self, x: float, w: float = 1.0) -> int:
        if self.label_mode:
            raise LabelModeMismatchError(f"{self.name} is a label histogram; use fill_label")
        b = self.bin_index(x)
        if b < 0:
            self.underflow += w
        elif b >= self.nbins:
            self.overflow += w
        else:
            self.contents[b] += w
            self.sumw2[b] += w * w
        self.entries += 1
        return b

    def fill_label(self, label: str, w: float = 1.0) -> int:
        if not self.label_mode:
            if self.entries or any(self.contents) or self.underflow or self.overflow:
                raise NumericModeMismatchError(f"{self.name} already holds numeric fills")
            self.labels = {}
            self.contents, self.sumw2 = [], []
            self.nbins, self.lo, self.hi = 0, 0.0, 0.0
        b = self.labels.get(label)
        if b is None:
            b = self.labels[label] = len(self.contents)
            self.contents.append(0.0)
            self.sumw2.append(0.0)
            self.nbins = len(self.contents)
            self.hi = float(self.nbins)
        self.contents[b] += w
        self.sumw2[b] += w * w
        self.entries += 1
        return b

    def label_items(self) -> list[tuple[str, float]]:
        return [(label, self.contents[b]) for label, b in self.labels.items()]

    def total(self) -> float:
        return math.fsum(self.contents) + self.underflow + self.overflow

    def copy(self, name: str | None = None) -> "Hist1D":
        return Hist1D(
            name or self.name, self.nbins, self.lo, self.hi, list(self.contents), list(self.sumw2),
            self.underflow, self.overflow, self.entries, dict(self.labels) if self.labels is not None else None,
        )

    def to_record(self) -> DynamicRecord:
        labels = tuple(self.labels) if self.labels is not None else ()
        return DynamicRecord(HIST_TYPE.name, HIST_TYPE.version, (
            ("name", self.name),
            ("nbins", self.nbins),
            ("lo", float(self.lo)),
            ("hi", float(self.hi)),
            ("contents", tuple(float(c) for c in self.contents)),
            ("sumw2", tuple(float(c) for c in self.sumw2)),
            ("under", float(self.underflow)),
            ("over", float(self.overflow)),
            ("entries", self.entries),
            ("labels", labels),
        ))

    @classmethod
    def from_record(cls, record: DynamicRecord) -> "Hist1D":
        labels = record["labels"]
        return cls(
            record["name"], record["nbins"], record["lo"], record["hi"],
            list(record["contents"]), list(record["sumw2"]), record["under"], record["over"],
            record["entries"], {label: i for i, label in enumerate(labels)} if labels or record["nbins"] == 0 else None,
        )


def hist_registry() -> SchemaRegistry:
    registry = SchemaRegistry()
    registry.register(HIST_TYPE)
    return registry


def save(container, h: Hist1D, name: str | None = None):
    """Store ``h`` as a keyed record; returns the key."""
    return container.put(name or h.name, h.to_record(), hist_registry())


def load(container, name: str, cycle: int | None = None) -> Hist1D:
    record = container.get(name, cycle)
    if record.type_name != HIST_TYPE.name:
        raise TypeMismatchError(f"{name!r} holds a {record.type_name}, not a histogram")
    return Hist1D.from_record(record)


def fill(h: Hist1D, x: float, w: float = 1.0) -> int:
    return h.fill(x, w)


def fill_label(h: Hist1D, label: str, w: float = 1.0) -> int:
    return h.fill_label(label, w)


def _check_compatible(hists: list[Hist1D]) -> None:
    first = hists[0]
    for h in hists[1:]:
        if h.label_mode != first.label_mode:
            raise IncompatibleBinningError(f"cannot combine label histogram with numeric {h.name}")
        if not first.label_mode and (h.nbins, h.lo, h.hi) != (first.nbins, first.lo, first.hi):
            raise IncompatibleBinningError(
                f"{h.name} has binning ({h.nbins}, {h.lo}, {h.hi}), "
                f"expected ({first.nbins}, {first.lo}, {first.hi})"
            )


def merge(hists: list[Hist1D], name: str | None = None) -> Hist1D:
    """Bin-wise sum.  Label histograms are merged by label, in first-seen order."""
    if not hists:
        raise ValueError("nothing to merge")
    _check_compatible(hists)
    first = hists[0]
    if first.label_mode:
        out = Hist1D.labelled(name or first.name)
        for h in hists:
            for label, b in h.labels.items():
                ob = out.labels.get(label)
                if ob is None:
                    ob = out.labels[label] = len(out.contents)
                    out.contents.append(0.0)
                    out.sumw2.append(0.0)
                out.contents[ob] += h.contents[b]
                out.sumw2[ob] += h.sumw2[b]
            out.underflow += h.underflow
            out.overflow += h.overflow
            out.entries += h.entries
        out.nbins = len(out.contents)
        out.hi = float(out.nbins)
        return out
    out = Hist1D(name or first.name, first.nbins, first.lo, first.hi)
    for h in hists:
        for b in range(first.nbins):
            out.contents[b] += h.contents[b]
            out.sumw2[b] += h.sumw2[b]
        out.underflow += h.underflow
        out.overflow += h.overflow
        out.entries += h.entries
    return out


@dataclass
class HistStack:
    name: str
    members: list[Hist1D] = field(default_factory=list)

    def add(self, h: Hist1D) -> None:
        if self.members:
            _check_compatible([self.members[0], h])
            if h.label_mode and list(h.labels) != list(self.members[0].labels):
                if set(h.labels) != set(self.members[0].labels):
                    raise IncompatibleBinningError(f"{h.name} has a different label set")
        self.members.append(h)


def stack_totals(stack: HistStack, nostack: bool = False) -> list[Hist1D]:
    """Cumulative sums: the k-th output is members 0..k added together.

    With ``nostack`` the members are returned as they are.
    """
    if nostack:
        return list(stack.members)
    if not stack.members:
        return []
    _check_compatible(stack.members)
    out = []
    for k, h in enumerate(stack.members):
        out.append(h.copy() if k == 0 else merge([out[-1], h], name=h.name))
    return out


def render_ascii(h: Hist1D, width: int = 60) -> str:
    """One row per bin: range (or label), content, and a proportional bar."""
    rows = []
    peak = max((c for c in h.contents), default=0.0)
    if h.label_mode:
        heads = list(h.labels)
    else:
        heads = [f"[{_num(lo)}, {_num(hi)})" for lo, hi in (h.edges(b) for b in range(h.nbins))]
    pad = max((len(x) for x in heads), default=0)
    for head, c in zip(heads, h.contents):
        bar = "#" * (round(width * c / peak) if peak > 0 and c > 0 else 0)
        rows.append(f"{head:<{pad}} {_num(c):>10} |{bar}")
    rows.append(f"entries={h.entries} underflow={_num(h.underflow)} overflow={_num(h.overflow)}")
    return "\n".join(rows)


def _num(x: float) -> str:
    return f"{x:.6g}"
