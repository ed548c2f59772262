"""Regex-keyed plugin registry and protocol-dispatching container open.

Config lines look like::

    Plugin.TFile: ^rfio:  TRFIOFile   RFIO
      "TRFIOFile(const char*,Option_t*,const char*,Int_t)"
    +Plugin.TFile: ^dcache:  TDCacheFile DCache  "TDCacheFile(...)"

A plain ``Plugin.<Base>:`` line replaces every earlier entry for that base;
a leading ``+`` appends.  The quoted constructor may sit on the next,
indented line.  Lines starting with ``#`` are comments, and indented lines
directly after a comment belong to it.
"""
from __future__ import annotations

import os
import re
from dataclasses import dataclass
from typing import Callable

from . import container as _container
from .errors import (
    ConfigSyntaxError,
    IoFailureError,
    NoMatchError,
    UnsupportedHandlerError,
)

CONTAINER_BASE = "ContainerOpen"
FALLBACK_BASE = "TFile"
ENV_VAR = "NRT_PLUGINS"

_HEAD = re.compile(r"(\+?)Plugin\.([A-Za-z_][A-Za-z0-9_]*)\s*:(.*)")
_FIELDS = re.compile(r'\s*(?:"([^"]*)"|(\S+))')
_SCHEME = re.compile(r"[A-Za-z][A-Za-z0-9+.-]*:")
_LITERAL_PUNCT = set(":/-_~@=,;%!<>&'\"#")


@dataclass(frozen=True)
class PluginSpec:
    base: str
    pattern: str
    handler: str
    library: str = ""
    ctor: str = ""

    def matches(self, uri: str) -> bool:
        return compile_pattern(self.pattern).search(uri) is not None

    def to_line(self, append: bool = False) -> str:
        plus = "+" if append else ""
        return f'{plus}Plugin.{self.base}: {self.pattern} {self.handler} {self.library} "{self.ctor}"'


def check_pattern(pattern: str) -> None:
    """Reject anything outside the supported subset.

    Allowed: a leading '^' (also right after '|'), literals, backslash
    escapes of punctuation, '.', character classes, the quantifiers
    '*', '+', '?' after an atom, and '|'.
    """
    i, n = 0, len(pattern)
    if not pattern:
        raise ValueError("empty pattern")
    atom = False
    while i < n:
        c = pattern[i]
        if c == "^":
            if i != 0 and pattern[i - 1] != "|":
                raise ValueError(f"'^' allowed only at the start of an alternative (offset {i})")
            atom = False
        elif c == "|":
            atom = False
        elif c in "*+?":
            if not atom:
                raise ValueError(f"quantifier {c!r} has nothing to repeat (offset {i})")
            atom = False
        elif c == "\\":
            if i + 1 >= n or pattern[i + 1].isalnum():
                raise ValueError(f"unsupported escape at offset {i}")
            i += 1
            atom = True
        elif c == "[":
            j = i + 1
            if j < n and pattern[j] == "^":
                j += 1
            if j < n and pattern[j] == "]":
                j += 1
            while j < n and pattern[j] != "]":
                if pattern[j] == "\\":
                    j += 1
                elif pattern[j] == "[":
                    raise ValueError(f"nested '[' in character class at offset {j}")
                j += 1
            if j >= n:
                raise ValueError(f"unterminated character class at offset {i}")
            i = j
            atom = True
        elif c == "." or c.isalnum() or c in _LITERAL_PUNCT:
            atom = True
        else:
            raise ValueError(f"unsupported regex syntax {c!r} at offset {i}")
        i += 1


_COMPILED: dict[str, re.Pattern] = {}


def compile_pattern(pattern: str) -> re.Pattern:
    compiled = _COMPILED.get(pattern)
    if compiled is None:
        check_pattern(pattern)
        compiled = _COMPILED[pattern] = re.compile(pattern)
    return compiled


def _split_fields(text: str) -> tuple[list[str], str | None]:
    """Bare fields, plus the quoted constructor if present."""
    bare: list[str] = []
    ctor = None
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _FIELDS.match(text, pos)
        if m is None:
            break
        if m.group(1) is not None:
            if ctor is not None or text[m.end():].strip():
                raise ValueError("the quoted constructor must be the last field")
            ctor = m.group(1)
        else:
            if m.group(2).startswith('"'):
                raise ValueError("unterminated quoted constructor")
            bare.append(m.group(2))
        pos = m.end()
    return bare, ctor


@dataclass
class _Pending:
    line: int
    append: bool
    base: str
    bare: list[str]
    ctor: str | None


def _finish(p: _Pending) -> PluginSpec:
    bare = list(p.bare)
    if p.ctor is None:
        raise ConfigSyntaxError("missing quoted constructor", p.line)
    if len(bare) == 2:
        # pattern and handler written without a space between them: recover the
        # split from the class name that the constructor prototype starts with
        cls_name = p.ctor.split("(", 1)[0].strip()
        if cls_name and bare[0].endswith(cls_name) and len(bare[0]) > len(cls_name):
            bare = [bare[0][: -len(cls_name)], cls_name, bare[1]]
    if len(bare) < 3:
        raise ConfigSyntaxError("expected: <regex> <handler> <library> \"<ctor>\"", p.line)
    if len(bare) > 3:
        raise ConfigSyntaxError(f"unexpected field {bare[3]!r}", p.line)
    pattern, handler, library = bare
    try:
        check_pattern(pattern)
    except ValueError as exc:
        raise ConfigSyntaxError(f"bad pattern {pattern!r}: {exc}", p.line) from None
    return PluginSpec(p.base, pattern, handler, library, p.ctor)


def parse_config(text: str) -> list[tuple[bool, PluginSpec]]:
    """(appends, spec) pairs in file order."""
    out: list[tuple[bool, PluginSpec]] = []
    pending: _Pending | None = None
    after_comment = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        stripped = raw.strip()
        if not stripped:
            after_comment = False
            continue
        indented = raw[0].isspace()
        if stripped.startswith("#"):
            after_comment = True
            continue
        if indented:
            if after_comment:
                continue
            if pending is None or pending.ctor is not None:
                raise ConfigSyntaxError("continuation line without an open entry", lineno)
            try:
                bare, ctor = _split_fields(stripped)
            except ValueError as exc:
                raise ConfigSyntaxError(str(exc), lineno) from None
            if bare or ctor is None:
                raise ConfigSyntaxError("continuation line must hold only the quoted constructor", lineno)
            pending.ctor = ctor
            continue
        after_comment = False
        if pending is not None:
            out.append((pending.append, _finish(pending)))
            pending = None
        m = _HEAD.fullmatch(stripped)
        if m is None:
            raise ConfigSyntaxError(f"expected 'Plugin.<Base>:', found {stripped[:30]!r}", lineno)
        try:
            bare, ctor = _split_fields(m.group(3))
        except ValueError as exc:
            raise ConfigSyntaxError(str(exc), lineno) from None
        pending = _Pending(lineno, m.group(1) == "+", m.group(2), bare, ctor)
    if pending is not None:
        out.append((pending.append, _finish(pending)))
    return out


def load_config(text: str) -> list[PluginSpec]:
    return [spec for _, spec in parse_config(text)]


def dump_config(specs: list[PluginSpec]) -> str:
    """Config text that re-parses to ``specs``; later entries of a base use '+'."""
    seen: set[str] = set()
    lines = []
    for spec in specs:
        lines.append(spec.to_line(append=spec.base in seen))
        seen.add(spec.base)
    return "\n".join(lines) + ("\n" if lines else "")


Factory = Callable[[str, str], "_container.ContainerFile"]


def _open_local(location: str, mode: str):
    if mode == "w":
        return _container.create(location)
    return _container.open_container(location)


def _open_mem(location: str, mode: str):
    if mode == "w":
        return _container.create(location, memory=True)
    return _container.open_container(location, memory=True)


class PluginRegistry:
    def __init__(self, builtins: bool = True):
        self._specs: dict[str, list[PluginSpec]] = {}
        self.factories: dict[str, Factory] = {}
        if builtins:
            self.factories["local"] = _open_local
            self.factories["mem"] = _open_mem
            self.add(PluginSpec(CONTAINER_BASE, "^local:", "local", "builtin", "local(path)"))
            self.add(PluginSpec(CONTAINER_BASE, "^mem:", "mem", "builtin", "mem(name)"))

    def add(self, spec: PluginSpec, append: bool = True) -> None:
        compile_pattern(spec.pattern)
        if append:
            self._specs.setdefault(spec.base, []).append(spec)
        else:
            self._specs[spec.base] = [spec]

    def prepend(self, spec: PluginSpec) -> None:
        compile_pattern(spec.pattern)
        self._specs.setdefault(spec.base, []).insert(0, spec)

    def load(self, text: str) -> list[PluginSpec]:
        entries = parse_config(text)
        for append, spec in entries:
            self.add(spec, append)
        return [spec for _, spec in entries]

    def load_file(self, path: str) -> list[PluginSpec]:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise IoFailureError(f"cannot read plugin config {path}: {exc}") from exc
        return self.load(text)

    def specs(self, base: str | None = None) -> list[PluginSpec]:
        if base is not None:
            return list(self._specs.get(base, ()))
        return [s for group in self._specs.values() for s in group]

    def bases(self) -> list[str]:
        return list(self._specs)

    def register_factory(self, handler: str, factory: Factory) -> None:
        self.factories[handler] = factory

    def resolve(self, base: str, uri: str) -> PluginSpec:
        for spec in self._specs.get(base, ()):
            if spec.matches(uri):
                return spec
        raise NoMatchError(f"no {base} plugin matches {uri!r}")


def resolve(registry: PluginRegistry, base: str, uri: str) -> PluginSpec:
    return registry.resolve(base, uri)


def default_registry(config_path: str | None = None) -> PluginRegistry:
    """Builtins plus the config named by ``config_path`` or $NRT_PLUGINS."""
    registry = PluginRegistry()
    path = config_path or os.environ.get(ENV_VAR)
    if path:
        registry.load_file(path)
    return registry


def split_uri(registry: PluginRegistry, uri: str) -> tuple[PluginSpec, str]:
    """The plugin entry that handles ``uri`` and the location part after the scheme.

    Bare paths are treated as ``local:<path>``.  URIs that no container
    handler recognizes are tried against the generic file base so that
    configured remote protocols resolve (and then report themselves as
    unsupported).
    """
    if not _SCHEME.match(uri):
        uri = "local:" + uri
    try:
        spec = registry.resolve(CONTAINER_BASE, uri)
    except NoMatchError:
        try:
            spec = registry.resolve(FALLBACK_BASE, uri)
        except NoMatchError:
            raise NoMatchError(f"no container plugin matches {uri!r}") from None
    m = _SCHEME.match(uri)
    return spec, uri[m.end():] if m else uri


def open_any(registry: PluginRegistry, uri: str, mode: str = "r"):
    """Open (mode "r") or create (mode "w") the container named by ``uri``."""
    if mode not in ("r", "w"):
        raise ValueError(f"mode must be 'r' or 'w', got {mode!r}")
    spec, location = split_uri(registry, uri)
    factory = registry.factories.get(spec.handler)
    if factory is None:
        raise UnsupportedHandlerError(spec.handler)
    return factory(location, mode)
