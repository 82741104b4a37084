"""Simulation-definition sublanguage: GSSA-XML.

A closed, versioned XML schema (version "1") carrying only simulation-tier
data: resolved parameters, placed needles, regions, algorithm texts and a
duration hint. `to_xml` emits a canonical byte-stable form; `from_xml`
validates against the closed schema and rejects anything unknown. See
docs/gssa-schema.md for the element vocabulary.
"""

from __future__ import annotations

import difflib
import xml.parsers.expat
from dataclasses import dataclass, field
from typing import Any, Optional

from .domain import AlgorithmDef, DomainError, PhantomShape, ValueType, coerce_value

SCHEMA_VERSION = "1"

Point = tuple[float, float, float]


class XmlError(DomainError):
    """Malformed XML input."""

    def __init__(self, message: str, line: int = 0, column: int = 0):
        loc = f" (line {line}, column {column})" if line else ""
        super().__init__(message + loc)
        self.line = line
        self.column = column


class SchemaError(DomainError):
    """Well-formed XML that violates the definition schema."""

    def __init__(self, message: str, line: int = 0):
        loc = f" (line {line})" if line else ""
        super().__init__(message + loc)
        self.line = line


class LookupFailure(KeyError):
    """Unknown parameter/region name, with near-match suggestions."""

    def __init__(self, name: str, known: list[str]):
        near = difflib.get_close_matches(name, known, n=3)
        hint = f"; did you mean {', '.join(near)}?" if near else ""
        super().__init__(f"unknown name {name!r}{hint}")
        self.name = name
        self.suggestions = near


@dataclass(frozen=True)
class RegionPayload:
    """Either a voxel-mask file reference or an analytic shape."""

    kind: str  # "mask" | "sphere" | "cylinder" | "box"
    path: Optional[str] = None
    shape: Optional[PhantomShape] = None


def shape_to_region_payload(shape: PhantomShape) -> RegionPayload:
    return RegionPayload(kind=shape.kind, shape=shape)


@dataclass(frozen=True)
class Region:
    name: str
    group: str
    payload: RegionPayload


@dataclass(frozen=True)
class NeedlePlacement:
    index: int
    klass: str  # geometry tag, e.g. "extensible_tines"
    tip: Point
    entry: Point
    parameters: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class SimulationDefinition:
    family: str
    parameters: dict[str, Any] = field(default_factory=dict)
    needles: tuple[NeedlePlacement, ...] = ()
    regions: tuple[Region, ...] = ()
    algorithms: tuple[AlgorithmDef, ...] = ()
    duration: Optional[float] = None

    def __post_init__(self):
        if not self.family:
            raise DomainError("definition family must be non-empty")
        for pos, needle in enumerate(self.needles, start=1):
            if needle.index != pos:
                raise DomainError(
                    f"needle indices must be dense from 1, got {needle.index} at {pos}"
                )
        names = [r.name for r in self.regions]
        if len(names) != len(set(names)):
            raise DomainError("duplicate region name")


@dataclass(frozen=True)
class IndexedRegion:
    name: str
    group: str
    payload: RegionPayload
    idx: int


def param(defn: SimulationDefinition, name: str) -> Any:
    """Exact typed value of a definition parameter.

    Unknown names raise LookupFailure listing near matches.
    """
    try:
        return defn.parameters[name]
    except KeyError:
        raise LookupFailure(name, sorted(defn.parameters)) from None


def region_index(defn: SimulationDefinition) -> list[IndexedRegion]:
    """Regions with their stable label indices (document order, 1-based;
    label 0 is reserved for background)."""
    return [
        IndexedRegion(r.name, r.group, r.payload, idx)
        for idx, r in enumerate(defn.regions, start=1)
    ]


def regions_in_group(defn: SimulationDefinition, group: str) -> list[IndexedRegion]:
    return [r for r in region_index(defn) if r.group == group]


# --- typed value text encoding ---------------------------------------------


def infer_value_type(value: Any) -> ValueType:
    if isinstance(value, bool):
        return ValueType.BOOLEAN
    if isinstance(value, int):
        return ValueType.INT
    if isinstance(value, float):
        return ValueType.FLOAT
    if isinstance(value, str):
        return ValueType.STRING
    if isinstance(value, (list, tuple)):
        if all(isinstance(v, (list, tuple)) and len(v) == 3 for v in value) and value:
            return ValueType.POINT_LIST
        return ValueType.FLOAT_LIST
    raise DomainError(f"cannot infer value type of {value!r}")


def encode_value(value: Any) -> tuple[str, str]:
    """(type tag, canonical text) for a typed parameter value."""
    vt = infer_value_type(value)
    if vt is ValueType.FLOAT:
        return vt.value, repr(float(value))
    if vt is ValueType.INT:
        return vt.value, str(int(value))
    if vt is ValueType.BOOLEAN:
        return vt.value, "true" if value else "false"
    if vt is ValueType.STRING:
        return vt.value, value
    if vt is ValueType.FLOAT_LIST:
        return vt.value, ",".join(repr(float(v)) for v in value)
    return vt.value, ";".join(" ".join(repr(float(c)) for c in p) for p in value)


def decode_value(type_tag: str, text: str) -> Any:
    try:
        vt = ValueType(type_tag)
    except ValueError:
        raise SchemaError(f"unknown parameter type {type_tag!r}") from None
    try:
        if vt is ValueType.FLOAT:
            return float(text)
        if vt is ValueType.INT:
            return int(text)
        if vt is ValueType.BOOLEAN:
            if text not in ("true", "false"):
                raise ValueError(text)
            return text == "true"
        if vt is ValueType.STRING:
            return text
        if vt is ValueType.FLOAT_LIST:
            return [float(v) for v in text.split(",")] if text else []
        if vt is ValueType.POINT_LIST:
            if not text:
                return []
            return coerce_value(
                vt, [[float(c) for c in p.split()] for p in text.split(";")]
            )
    except ValueError as exc:
        raise SchemaError(f"bad {vt.value} literal {text!r}") from exc
    raise SchemaError(f"unknown parameter type {type_tag!r}")


def _fmt_point(p: Point) -> str:
    return " ".join(repr(float(c)) for c in p)


def _parse_point(text: str, what: str) -> Point:
    parts = text.split()
    if len(parts) != 3:
        raise SchemaError(f"{what} must be three numbers, got {text!r}")
    try:
        return tuple(float(c) for c in parts)
    except ValueError:
        raise SchemaError(f"{what} must be three numbers, got {text!r}") from None


def _escape(text: str, attribute: bool = False) -> str:
    text = text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
    if attribute:
        # Literal newlines/tabs in attribute values would be normalized to
        # spaces on re-parse; keep round trips exact by escaping them.
        text = (
            text.replace('"', "&quot;")
            .replace("\n", "&#10;")
            .replace("\t", "&#9;")
            .replace("\r", "&#13;")
        )
    return text


class _Writer:
    def __init__(self):
        self.lines: list[str] = []

    def element(self, depth: int, tag: str, attrs: dict[str, str],
                text: Optional[str] = None, close: bool = True):
        pad = "  " * depth
        parts = "".join(
            f' {k}="{_escape(v, attribute=True)}"' for k, v in sorted(attrs.items())
        )
        if text is not None:
            self.lines.append(f"{pad}<{tag}{parts}>{_escape(text)}</{tag}>")
        elif close:
            self.lines.append(f"{pad}<{tag}{parts}/>")
        else:
            self.lines.append(f"{pad}<{tag}{parts}>")

    def close(self, depth: int, tag: str):
        self.lines.append(f"{'  ' * depth}</{tag}>")


def to_xml(defn: SimulationDefinition) -> str:
    """Canonical XML text: sorted attributes, fixed section order
    (parameters, needles, regions, algorithms), LF endings, 2-space indent.
    Byte-stable across runs and platforms."""
    w = _Writer()
    root_attrs = {"family": defn.family, "version": SCHEMA_VERSION}
    if defn.duration is not None:
        root_attrs["duration"] = repr(float(defn.duration))
    w.element(0, "simulation", root_attrs, close=False)

    w.element(1, "parameters", {}, close=False)
    for name in sorted(defn.parameters):
        type_tag, text = encode_value(defn.parameters[name])
        w.element(2, "parameter", {"name": name, "type": type_tag, "value": text})
    w.close(1, "parameters")

    w.element(1, "needles", {}, close=False)
    for needle in defn.needles:
        w.element(
            2,
            "needle",
            {
                "index": str(needle.index),
                "class": needle.klass,
                "tip": _fmt_point(needle.tip),
                "entry": _fmt_point(needle.entry),
            },
            close=False,
        )
        w.element(3, "parameters", {}, close=False)
        for name in sorted(needle.parameters):
            type_tag, text = encode_value(needle.parameters[name])
            w.element(4, "parameter", {"name": name, "type": type_tag, "value": text})
        w.close(3, "parameters")
        w.close(2, "needle")
    w.close(1, "needles")

    w.element(1, "regions", {}, close=False)
    for region in defn.regions:
        w.element(2, "region", {"name": region.name, "group": region.group}, close=False)
        payload = region.payload
        if payload.kind == "mask":
            w.element(3, "mask", {"path": payload.path or ""})
        elif payload.kind == "sphere":
            s = payload.shape
            w.element(3, "sphere", {"centre": _fmt_point(s.centre),
                                    "radius": repr(float(s.radius))})
        elif payload.kind == "cylinder":
            s = payload.shape
            w.element(3, "cylinder", {"start": _fmt_point(s.start),
                                      "end": _fmt_point(s.end),
                                      "radius": repr(float(s.radius))})
        elif payload.kind == "box":
            s = payload.shape
            w.element(3, "box", {"min": _fmt_point(s.minimum),
                                 "max": _fmt_point(s.maximum)})
        else:
            raise DomainError(f"unknown region payload kind {payload.kind!r}")
        w.close(2, "region")
    w.close(1, "regions")

    w.element(1, "algorithms", {}, close=False)
    for algo in defn.algorithms:
        w.element(
            2,
            "algorithm",
            {"result": algo.result, "arguments": ",".join(algo.arguments)},
            close=False,
        )
        w.element(3, "body", {}, text=algo.body)
        w.close(2, "algorithm")
    w.close(1, "algorithms")

    w.close(0, "simulation")
    return "\n".join(w.lines) + "\n"


# --- parsing ----------------------------------------------------------------


class _Node:
    __slots__ = ("tag", "attrs", "children", "text", "line")

    def __init__(self, tag: str, attrs: dict[str, str], line: int):
        self.tag = tag
        self.attrs = attrs
        self.children: list[_Node] = []
        self.text: str = ""
        self.line = line


def _parse_tree(text: str) -> _Node:
    parser = xml.parsers.expat.ParserCreate()
    root: list[_Node] = []
    stack: list[_Node] = []

    def start(tag, attrs):
        node = _Node(tag, dict(attrs), parser.CurrentLineNumber)
        if stack:
            stack[-1].children.append(node)
        else:
            root.append(node)
        stack.append(node)

    def end(tag):
        stack.pop()

    def chars(data):
        if stack:
            stack[-1].text += data

    parser.StartElementHandler = start
    parser.EndElementHandler = end
    parser.CharacterDataHandler = chars
    try:
        parser.Parse(text, True)
    except xml.parsers.expat.ExpatError as exc:
        raise XmlError(
            xml.parsers.expat.errors.messages[exc.code],
            exc.lineno,
            exc.offset + 1,
        ) from exc
    if not root:
        raise XmlError("empty document")
    return root[0]


def _require_attrs(node: _Node, required: tuple[str, ...], optional: tuple[str, ...] = ()):
    for name in required:
        if name not in node.attrs:
            raise SchemaError(f"<{node.tag}> missing attribute {name!r}", node.line)
    for name in node.attrs:
        if name not in required and name not in optional:
            raise SchemaError(f"<{node.tag}> has unknown attribute {name!r}", node.line)


def _no_text(node: _Node):
    if node.text.strip():
        raise SchemaError(f"<{node.tag}> does not allow text content", node.line)


def _parse_parameters(node: _Node) -> dict[str, Any]:
    _no_text(node)
    out: dict[str, Any] = {}
    for child in node.children:
        if child.tag != "parameter":
            raise SchemaError(f"unknown element <{child.tag}>", child.line)
        _require_attrs(child, ("name", "type", "value"))
        _no_text(child)
        if child.children:
            raise SchemaError("<parameter> does not allow children", child.line)
        name = child.attrs["name"]
        if name in out:
            raise SchemaError(f"duplicate parameter {name!r}", child.line)
        out[name] = decode_value(child.attrs["type"], child.attrs["value"])
    return out


_SHAPE_TAGS = ("mask", "sphere", "cylinder", "box")


def _parse_region(node: _Node) -> Region:
    _require_attrs(node, ("name", "group"))
    _no_text(node)
    if len(node.children) != 1:
        raise SchemaError("<region> needs exactly one payload child", node.line)
    payload_node = node.children[0]
    if payload_node.tag not in _SHAPE_TAGS:
        raise SchemaError(f"unknown element <{payload_node.tag}>", payload_node.line)
    _no_text(payload_node)
    if payload_node.children:
        raise SchemaError(
            f"<{payload_node.tag}> does not allow children", payload_node.line
        )
    try:
        if payload_node.tag == "mask":
            _require_attrs(payload_node, ("path",))
            payload = RegionPayload(kind="mask", path=payload_node.attrs["path"])
        elif payload_node.tag == "sphere":
            _require_attrs(payload_node, ("centre", "radius"))
            payload = RegionPayload(
                kind="sphere",
                shape=PhantomShape(
                    "sphere",
                    centre=_parse_point(payload_node.attrs["centre"], "sphere centre"),
                    radius=float(payload_node.attrs["radius"]),
                ),
            )
        elif payload_node.tag == "cylinder":
            _require_attrs(payload_node, ("start", "end", "radius"))
            payload = RegionPayload(
                kind="cylinder",
                shape=PhantomShape(
                    "cylinder",
                    start=_parse_point(payload_node.attrs["start"], "cylinder start"),
                    end=_parse_point(payload_node.attrs["end"], "cylinder end"),
                    radius=float(payload_node.attrs["radius"]),
                ),
            )
        else:
            _require_attrs(payload_node, ("min", "max"))
            payload = RegionPayload(
                kind="box",
                shape=PhantomShape(
                    "box",
                    minimum=_parse_point(payload_node.attrs["min"], "box min"),
                    maximum=_parse_point(payload_node.attrs["max"], "box max"),
                ),
            )
    except (ValueError, DomainError) as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError(str(exc), payload_node.line) from exc
    return Region(name=node.attrs["name"], group=node.attrs["group"], payload=payload)


def from_xml(text: str) -> SimulationDefinition:
    """Parse and validate a definition document (closed schema).

    Raises XmlError for malformed XML and SchemaError (with line numbers)
    for schema violations, including duplicate region names and unknown
    elements or attributes.
    """
    root = _parse_tree(text)
    if root.tag != "simulation":
        raise SchemaError(f"root element must be <simulation>, got <{root.tag}>",
                          root.line)
    _require_attrs(root, ("family", "version"), optional=("duration",))
    if root.attrs["version"] != SCHEMA_VERSION:
        raise SchemaError(
            f"unsupported schema version {root.attrs['version']!r}", root.line
        )
    _no_text(root)

    sections = {c.tag: c for c in root.children}
    if len(sections) != len(root.children):
        raise SchemaError("duplicate section element", root.line)
    for child in root.children:
        if child.tag not in ("parameters", "needles", "regions", "algorithms"):
            raise SchemaError(f"unknown element <{child.tag}>", child.line)
    for tag in ("parameters", "needles", "regions", "algorithms"):
        if tag not in sections:
            raise SchemaError(f"missing <{tag}> section", root.line)

    parameters = _parse_parameters(sections["parameters"])

    needles = []
    _no_text(sections["needles"])
    for node in sections["needles"].children:
        if node.tag != "needle":
            raise SchemaError(f"unknown element <{node.tag}>", node.line)
        _require_attrs(node, ("index", "class", "tip", "entry"))
        _no_text(node)
        if len(node.children) != 1 or node.children[0].tag != "parameters":
            raise SchemaError("<needle> needs exactly one <parameters> child", node.line)
        try:
            index = int(node.attrs["index"])
        except ValueError:
            raise SchemaError(f"bad needle index {node.attrs['index']!r}", node.line) from None
        needles.append(
            NeedlePlacement(
                index=index,
                klass=node.attrs["class"],
                tip=_parse_point(node.attrs["tip"], "needle tip"),
                entry=_parse_point(node.attrs["entry"], "needle entry"),
                parameters=_parse_parameters(node.children[0]),
            )
        )

    regions = []
    seen_regions = set()
    _no_text(sections["regions"])
    for node in sections["regions"].children:
        if node.tag != "region":
            raise SchemaError(f"unknown element <{node.tag}>", node.line)
        region = _parse_region(node)
        if region.name in seen_regions:
            raise SchemaError(f"duplicate region name {region.name!r}", node.line)
        seen_regions.add(region.name)
        regions.append(region)

    algorithms = []
    _no_text(sections["algorithms"])
    for node in sections["algorithms"].children:
        if node.tag != "algorithm":
            raise SchemaError(f"unknown element <{node.tag}>", node.line)
        _require_attrs(node, ("result", "arguments"))
        _no_text(node)
        if len(node.children) != 1 or node.children[0].tag != "body":
            raise SchemaError("<algorithm> needs exactly one <body> child", node.line)
        body_node = node.children[0]
        if body_node.children:
            raise SchemaError("<body> does not allow children", body_node.line)
        if body_node.attrs:
            raise SchemaError("<body> does not allow attributes", body_node.line)
        arguments = tuple(
            a for a in node.attrs["arguments"].split(",") if a
        )
        try:
            algorithms.append(
                AlgorithmDef(node.attrs["result"], arguments, body_node.text)
            )
        except DomainError as exc:
            raise SchemaError(str(exc), node.line) from exc

    try:
        defn = SimulationDefinition(
            family=root.attrs["family"],
            parameters=parameters,
            needles=tuple(needles),
            regions=tuple(regions),
            algorithms=tuple(algorithms),
            duration=(
                float(root.attrs["duration"]) if "duration" in root.attrs else None
            ),
        )
    except (ValueError, DomainError) as exc:
        raise SchemaError(str(exc), root.line) from exc
    return defn
