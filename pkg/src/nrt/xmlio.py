"""Lossless XML rendering of records.

``<object type="Hit" version="1"><f name="x" k="f64">1.5</f>...</object>``

Fields carry a short kind code; list elements are wrapped in ``<e>``;
composite values nest another ``<object>``.  Floats use the shortest
round-trip decimal form.  Strings that XML 1.0 cannot carry verbatim are
base64-encoded and marked ``enc="base64"``.
"""
from __future__ import annotations

import base64
import re
import xml.etree.ElementTree as ET
from xml.sax.saxutils import escape, quoteattr

from .errors import SchemaError, XmlMalformedError
from .schema import (
    DynamicRecord,
    FieldDescriptor,
    Kind,
    SchemaRegistry,
    TypeDescriptor,
    element_kind,
)
from .uid import Uid

KIND_CODES = {
    Kind.INT64: "i64",
    Kind.FLOAT64: "f64",
    Kind.BOOL: "bool",
    Kind.STRING: "str",
    Kind.COMPOSITE: "obj",
    Kind.FIXED_ARRAY: "arr",
    Kind.SEQUENCE: "seq",
    Kind.REF: "ref",
}

# \r is legal but parsers normalize it away, so it is treated as unsafe too
_UNSAFE = re.compile("[\x00-\x08\x0b-\x1f\ufffe\uffff]")


def format_float(x: float) -> str:
    text = repr(float(x))
    if text.endswith(".0"):
        text = text[:-2]
    return text


def _scalar_text(kind: Kind, value) -> tuple[str, str]:
    """(text, extra attributes) for a scalar value."""
    if kind is Kind.FLOAT64:
        return format_float(value), ""
    if kind is Kind.INT64:
        return str(value), ""
    if kind is Kind.BOOL:
        return ("true" if value else "false"), ""
    if kind is Kind.REF:
        return str(getattr(value, "target", value)), ""
    if _UNSAFE.search(value):
        return base64.b64encode(value.encode("utf-8")).decode("ascii"), ' enc="base64"'
    return escape(value), ""


def _render_object(record: DynamicRecord, registry: SchemaRegistry, out: list[str],
                   descriptors: list[TypeDescriptor] | None = None) -> None:
    desc = registry.lookup(record.type_name, record.type_version)
    uid = f" uid={quoteattr(str(record.uid))}" if record.uid is not None else ""
    out.append(f"<object type={quoteattr(desc.name)} version=\"{desc.version}\"{uid}>")
    for d in descriptors or ():
        _render_descriptor(d, out)
    for fd, (_, value) in zip(registry.flat_fields(desc), record.values):
        _render_field(fd, value, registry, out)
    out.append("</object>")


def _render_value(kind: Kind, element: str | None, value, registry, out: list[str], tag: str, attrs: str):
    if kind is Kind.COMPOSITE:
        out.append(f"<{tag}{attrs}>")
        _render_object(value, registry, out)
        out.append(f"</{tag}>")
    elif kind is Kind.FIXED_ARRAY or kind is Kind.SEQUENCE:
        if not value:
            out.append(f"<{tag}{attrs}/>")
            return
        out.append(f"<{tag}{attrs}>")
        ekind = element_kind(element)
        for v in value:
            _render_value(ekind, element, v, registry, out, "e", "")
        out.append(f"</{tag}>")
    else:
        text, extra = _scalar_text(kind, value)
        out.append(f"<{tag}{attrs}{extra}>{text}</{tag}>")


def _render_field(fd: FieldDescriptor, value, registry, out: list[str]) -> None:
    attrs = f" name={quoteattr(fd.name)} k=\"{KIND_CODES[fd.kind]}\""
    _render_value(fd.kind, fd.element, value, registry, out, "f", attrs)


def _render_descriptor(desc: TypeDescriptor, out: list[str]) -> None:
    base = f" base={quoteattr(desc.base)}" if desc.base else ""
    out.append(
        f"<descriptor name={quoteattr(desc.name)} version=\"{desc.version}\" "
        f"checksum=\"{desc.checksum}\"{base}>"
    )
    for f in desc.fields:
        extra = ""
        if f.element is not None:
            extra += f" element={quoteattr(f.element)}"
        if f.length is not None:
            extra += f" length=\"{f.length}\""
        out.append(f"<field name={quoteattr(f.name)} kind=\"{f.kind.label}\"{extra}/>")
    out.append("</descriptor>")


def record_to_xml(record: DynamicRecord, registry: SchemaRegistry, with_descriptor: bool = False) -> str:
    desc = registry.lookup(record.type_name, record.type_version)
    out: list[str] = []
    _render_object(record, registry, out, registry.closure(desc) if with_descriptor else None)
    return "".join(out)


def export_xml(container, name: str, cycle: int | None = None, with_descriptor: bool = False) -> str:
    """XML for one keyed object, described by the container's own schemas."""
    return record_to_xml(container.get(name, cycle), container.schemas, with_descriptor)


# parsing ----------------------------------------------------------------


def _attr(node: ET.Element, name: str) -> str:
    value = node.get(name)
    if value is None:
        raise XmlMalformedError(f"<{node.tag}> is missing the {name!r} attribute")
    return value


def _int_attr(node: ET.Element, name: str) -> int:
    try:
        return int(_attr(node, name))
    except ValueError:
        raise XmlMalformedError(f"<{node.tag}> attribute {name!r} is not an integer") from None


def _parse_descriptor(node: ET.Element) -> TypeDescriptor:
    fields = []
    for child in node:
        if child.tag != "field":
            raise XmlMalformedError(f"unexpected <{child.tag}> inside <descriptor>")
        length = child.get("length")
        try:
            fields.append(FieldDescriptor(_attr(child, "name"), Kind.parse(_attr(child, "kind")),
                                          child.get("element"), int(length) if length else None))
        except (SchemaError, ValueError) as exc:
            raise XmlMalformedError(f"bad descriptor field: {exc}") from None
    desc = TypeDescriptor(_attr(node, "name"), _int_attr(node, "version"), tuple(fields), node.get("base"))
    if node.get("checksum") is not None and _int_attr(node, "checksum") != desc.checksum:
        raise XmlMalformedError(f"descriptor {desc.name} v{desc.version}: checksum mismatch")
    return desc


def _parse_scalar(kind: Kind, node: ET.Element):
    text = node.text or ""
    if node.get("enc") == "base64":
        try:
            text = base64.b64decode(text, validate=True).decode("utf-8")
        except ValueError:
            raise XmlMalformedError("invalid base64 string payload") from None
    try:
        if kind is Kind.FLOAT64:
            return float(text)
        if kind is Kind.INT64:
            return int(text)
        if kind is Kind.BOOL:
            if text not in ("true", "false"):
                raise ValueError(text)
            return text == "true"
        if kind is Kind.REF:
            return Uid.parse(text)
    except ValueError:
        raise XmlMalformedError(f"bad {kind.label} value {text!r}") from None
    return text


def _parse_value(kind: Kind, element: str | None, length: int | None, node: ET.Element, registry):
    if kind is Kind.COMPOSITE:
        children = list(node)
        if len(children) != 1 or children[0].tag != "object":
            raise XmlMalformedError("composite value must hold exactly one <object>")
        record = _parse_object(children[0], registry)
        if record.type_name != element:
            raise XmlMalformedError(f"expected nested {element}, found {record.type_name}")
        return record
    if kind is Kind.FIXED_ARRAY or kind is Kind.SEQUENCE:
        ekind = element_kind(element)
        items = []
        for child in node:
            if child.tag != "e":
                raise XmlMalformedError(f"list elements must be <e>, found <{child.tag}>")
            items.append(_parse_value(ekind, element, None, child, registry))
        if kind is Kind.FIXED_ARRAY and len(items) != length:
            raise XmlMalformedError(f"fixed array expects {length} elements, found {len(items)}")
        return tuple(items)
    if len(node):
        raise XmlMalformedError(f"scalar <{node.tag}> must not have children")
    return _parse_scalar(kind, node)


def _parse_object(node: ET.Element, registry: SchemaRegistry) -> DynamicRecord:
    if node.tag != "object":
        raise XmlMalformedError(f"expected <object>, found <{node.tag}>")
    type_name = _attr(node, "type")
    version = _int_attr(node, "version")
    children = list(node)
    while children and children[0].tag == "descriptor":
        registry.register(_parse_descriptor(children.pop(0)))
    desc = registry.lookup(type_name, version)
    flat = registry.flat_fields(desc)
    if len(children) != len(flat):
        raise XmlMalformedError(f"{type_name}: expected {len(flat)} fields, found {len(children)}")
    values = []
    for fd, child in zip(flat, children):
        if child.tag != "f" or child.get("name") != fd.name:
            raise XmlMalformedError(f"{type_name}: expected <f name={fd.name!r}>")
        if child.get("k") != KIND_CODES[fd.kind]:
            raise XmlMalformedError(f"{type_name}.{fd.name}: kind code {child.get('k')!r} does not match descriptor")
        values.append((fd.name, _parse_value(fd.kind, fd.element, fd.length, child, registry)))
    uid = node.get("uid")
    try:
        uid_value = Uid.parse(uid) if uid else None
    except ValueError:
        raise XmlMalformedError(f"bad uid attribute {uid!r}") from None
    return DynamicRecord(desc.name, desc.version, tuple(values), uid=uid_value)


def import_xml(text: str, registry: SchemaRegistry) -> DynamicRecord:
    """Parse an exported object.  Embedded descriptors are registered first."""
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise XmlMalformedError(f"not well-formed XML: {exc}") from None
    return _parse_object(root, registry)
