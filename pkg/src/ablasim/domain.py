"""Abstract-tier entities of the clinical domain model.

Parameters, parameter attributions, equipment/context/protocol/model specs,
combinations and concrete (placed) needles, plus their JSON forms for the
flat-file entity store.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional, Sequence

PARAMETER_NAME_RE = re.compile(r"^[A-Z][A-Z0-9_]*$")

Point = tuple[float, float, float]


class DomainError(Exception):
    """Invalid entity data or invariant violation."""


class ValueType(str, Enum):
    FLOAT = "float"
    INT = "int"
    BOOLEAN = "boolean"
    STRING = "string"
    FLOAT_LIST = "float_list"
    POINT_LIST = "point_list"


def coerce_value(value_type: ValueType, value: Any) -> Any:
    """Validate `value` against `value_type`, returning the normalized form.

    float accepts ints; int rejects non-integral floats; point_list is a list
    of (x, y, z) float triples. Raises DomainError on mismatch.
    """
    vt = ValueType(value_type)
    if vt is ValueType.FLOAT:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise DomainError(f"expected float, got {value!r}")
        return float(value)
    if vt is ValueType.INT:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise DomainError(f"expected int, got {value!r}")
        return int(value)
    if vt is ValueType.BOOLEAN:
        if not isinstance(value, bool):
            raise DomainError(f"expected boolean, got {value!r}")
        return value
    if vt is ValueType.STRING:
        if not isinstance(value, str):
            raise DomainError(f"expected string, got {value!r}")
        return value
    if vt is ValueType.FLOAT_LIST:
        if not isinstance(value, (list, tuple)):
            raise DomainError(f"expected float list, got {value!r}")
        out = []
        for item in value:
            if isinstance(item, bool) or not isinstance(item, (int, float)):
                raise DomainError(f"expected float list, got element {item!r}")
            out.append(float(item))
        return out
    if vt is ValueType.POINT_LIST:
        if not isinstance(value, (list, tuple)):
            raise DomainError(f"expected point list, got {value!r}")
        points = []
        for item in value:
            if not isinstance(item, (list, tuple)) or len(item) != 3:
                raise DomainError(f"expected (x, y, z) triple, got {item!r}")
            points.append(tuple(float(c) for c in item))
        return points
    raise DomainError(f"unknown value type {value_type!r}")


@dataclass(frozen=True)
class Parameter:
    """A uniquely named, reusable token for one item of information."""

    name: str
    value_type: ValueType
    default_value: Any = None
    units: Optional[str] = None

    def __post_init__(self):
        if not PARAMETER_NAME_RE.match(self.name):
            raise DomainError(f"bad parameter name {self.name!r}")
        object.__setattr__(self, "value_type", ValueType(self.value_type))
        if self.default_value is not None:
            object.__setattr__(
                self, "default_value", coerce_value(self.value_type, self.default_value)
            )


class Editable(str, Enum):
    HIDDEN = "hidden"
    OPTIONAL = "optional"
    REQUIRED = "required"


class WidgetHint(str, Enum):
    NUMBER_BOX = "number_box"
    SLIDER = "slider"
    POWER_TIME_GRAPH = "power_time_graph"
    CHECKBOX = "checkbox"
    TEXT = "text"


@dataclass(frozen=True)
class Attribution:
    """A specific application of a Parameter to its owning entity.

    The owning entity is the attribution target; stored inline, so the
    target reference is implicit.
    """

    parameter: str
    override_value: Any = None
    editable: Editable = Editable.HIDDEN
    widget_hint: Optional[WidgetHint] = None

    def __post_init__(self):
        object.__setattr__(self, "editable", Editable(self.editable))
        if self.widget_hint is not None:
            object.__setattr__(self, "widget_hint", WidgetHint(self.widget_hint))


def _check_attributions(attrs: Sequence[Attribution], owner: str) -> None:
    seen = set()
    for a in attrs:
        if a.parameter in seen:
            raise DomainError(f"{owner}: duplicate attribution of {a.parameter}")
        seen.add(a.parameter)


class NeedleGeometryKind(str, Enum):
    STRAIGHT_MONOPOLAR = "straight_monopolar"
    EXTENSIBLE_TINES = "extensible_tines"


@dataclass(frozen=True)
class NeedleGeometry:
    kind: NeedleGeometryKind
    shaft_radius: float
    active_length: float
    tine_count: int = 0
    max_tine_extension: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", NeedleGeometryKind(self.kind))
        if self.shaft_radius <= 0 or self.active_length <= 0:
            raise DomainError("needle geometric constants must be positive")
        if self.kind is NeedleGeometryKind.EXTENSIBLE_TINES:
            if self.tine_count < 1:
                raise DomainError("extensible-tine needle needs tine_count >= 1")
            if self.max_tine_extension <= 0:
                raise DomainError("extensible-tine needle needs max_tine_extension > 0")


@dataclass(frozen=True)
class NeedleSpec:
    id: str
    manufacturer_model: str
    geometry: NeedleGeometry
    attributions: tuple[Attribution, ...] = ()

    kind = "needle"

    def __post_init__(self):
        _check_attributions(self.attributions, f"needle {self.id}")


@dataclass(frozen=True)
class CompatRow:
    """Allowed pairing of a generator with a needle type, with multiplicity."""

    needle: str
    min_count: int
    max_count: int

    def __post_init__(self):
        if not (0 <= self.min_count <= self.max_count):
            raise DomainError(
                f"compat row for {self.needle}: need 0 <= min <= max, "
                f"got ({self.min_count}, {self.max_count})"
            )


@dataclass(frozen=True)
class PowerGeneratorSpec:
    id: str
    manufacturer_model: str
    attributions: tuple[Attribution, ...] = ()
    compat: tuple[CompatRow, ...] = ()

    kind = "generator"

    def __post_init__(self):
        _check_attributions(self.attributions, f"generator {self.id}")


class Organ(str, Enum):
    LIVER = "liver"
    LUNG = "lung"
    KIDNEY = "kidney"
    PHANTOM = "phantom"


# Context attributions that must be strictly positive when supplied.
_MATERIAL_CONSTANT_NAMES = {
    "MATERIAL_DENSITY",
    "MATERIAL_HEAT_CAPACITY",
    "MATERIAL_CONDUCTIVITY",
    "MATERIAL_PERFUSION_RATE",
    "MATERIAL_ELECTRIC_CONDUCTIVITY",
    "MATERIAL_RELATIVE_PERMITTIVITY",
    "MATERIAL_RELATIVE_PERMEABILITY",
    "BLOOD_DENSITY",
    "BLOOD_HEAT_CAPACITY",
    "MATERIAL_HEAT_CAPACITY_FROZEN",
    "MATERIAL_HEAT_CAPACITY_LIQUID",
    "MATERIAL_CONDUCTIVITY_FROZEN",
    "MATERIAL_CONDUCTIVITY_LIQUID",
    "LATENT_HEAT_SOLIDIFICATION",
}


@dataclass(frozen=True)
class ContextSpec:
    id: str
    organ: Organ
    attributions: tuple[Attribution, ...] = ()

    kind = "context"

    def __post_init__(self):
        object.__setattr__(self, "organ", Organ(self.organ))
        _check_attributions(self.attributions, f"context {self.id}")
        for a in self.attributions:
            v = a.override_value
            if v is None:
                continue
            if a.parameter in _MATERIAL_CONSTANT_NAMES and isinstance(v, (int, float)):
                if v <= 0:
                    raise DomainError(
                        f"context {self.id}: {a.parameter} must be positive, got {v}"
                    )
            if a.parameter == "BODY_TEMPERATURE" and not (30.0 <= v <= 42.0):
                raise DomainError(
                    f"context {self.id}: BODY_TEMPERATURE must lie in [30, 42] C"
                )


class Modality(str, Enum):
    RFA = "RFA"
    MWA = "MWA"
    CRYO = "CRYO"
    IRE = "IRE"


@dataclass(frozen=True)
class AlgorithmDef:
    """A single named function: intraprocedural arguments -> result variable."""

    result: str
    arguments: tuple[str, ...]
    body: str

    def __post_init__(self):
        for arg in self.arguments:
            if arg not in INTRAPROCEDURAL_VARIABLES:
                raise DomainError(f"unknown algorithm argument {arg!r}")


INTRAPROCEDURAL_VARIABLES = (
    "time",
    "phase",
    "power",
    "flow_rate",
    "voltage",
    "temperature_avg",
    "temperature_max",
    "tine_temperature_min",
    "impedance",
)


@dataclass(frozen=True)
class ProtocolSpec:
    id: str
    modality: Modality
    algorithms: tuple[AlgorithmDef, ...] = ()
    attributions: tuple[Attribution, ...] = ()

    kind = "protocol"

    def __post_init__(self):
        object.__setattr__(self, "modality", Modality(self.modality))
        _check_attributions(self.attributions, f"protocol {self.id}")
        results = [a.result for a in self.algorithms]
        if len(results) != len(set(results)):
            raise DomainError(f"protocol {self.id}: duplicate algorithm result names")


class ModelFamily(str, Enum):
    BIOHEAT_RFA = "bioheat_rfa"
    BIOHEAT_MWA = "bioheat_mwa"
    CRYO_EFFECTIVE_CAPACITY = "cryo_effective_capacity"
    IRE_POTENTIAL = "ire_potential"


@dataclass(frozen=True)
class RegionRequirement:
    group: str
    min_count: int
    max_count: int

    def __post_init__(self):
        if not (0 <= self.min_count <= self.max_count):
            raise DomainError(
                f"region requirement {self.group}: need 0 <= min <= max"
            )


@dataclass(frozen=True)
class ResultSpec:
    """Lesion rule: compare `field` against `threshold` along `direction`."""

    field: str
    threshold: float
    direction: str  # "ge" | "le"

    def __post_init__(self):
        import math

        if self.direction not in ("ge", "le"):
            raise DomainError(f"result direction must be ge|le, got {self.direction!r}")
        if not math.isfinite(self.threshold):
            raise DomainError("result threshold must be finite")


@dataclass(frozen=True)
class NumericalModelSpec:
    id: str
    family: ModelFamily
    required_regions: tuple[RegionRequirement, ...] = ()
    attributions: tuple[Attribution, ...] = ()
    result_spec: Optional[ResultSpec] = None

    kind = "model"

    def __post_init__(self):
        object.__setattr__(self, "family", ModelFamily(self.family))
        _check_attributions(self.attributions, f"model {self.id}")


@dataclass(frozen=True)
class Combination:
    """A simulatable bundle: context + generator + protocol + model + needles."""

    id: str
    context: str
    power_generator: str
    protocol: str
    numerical_model: str
    allowed_needles: tuple[str, ...]
    public: bool = False

    kind = "combination"

    def __post_init__(self):
        if not self.allowed_needles:
            raise DomainError(f"combination {self.id}: allowed_needles is empty")


@dataclass(frozen=True)
class PhantomShape:
    """Analytic region shape: sphere, cylinder or box."""

    kind: str  # "sphere" | "cylinder" | "box"
    centre: Optional[Point] = None
    radius: Optional[float] = None
    start: Optional[Point] = None
    end: Optional[Point] = None
    minimum: Optional[Point] = None
    maximum: Optional[Point] = None

    def __post_init__(self):
        if self.kind == "sphere":
            if self.centre is None or self.radius is None or self.radius <= 0:
                raise DomainError("sphere needs centre and positive radius")
        elif self.kind == "cylinder":
            if self.start is None or self.end is None or not self.radius or self.radius <= 0:
                raise DomainError("cylinder needs start, end and positive radius")
        elif self.kind == "box":
            if self.minimum is None or self.maximum is None:
                raise DomainError("box needs minimum and maximum corners")
        else:
            raise DomainError(f"unknown shape kind {self.kind!r}")


@dataclass(frozen=True)
class PhantomRegion:
    name: str
    group: str
    shape: PhantomShape


@dataclass(frozen=True)
class PhantomSpec:
    """Case-tier stand-in: an analytic labelled phantom on a voxel grid."""

    id: str
    dims: tuple[int, int, int]
    spacing: float
    origin: Point
    regions: tuple[PhantomRegion, ...]

    kind = "phantom"

    def __post_init__(self):
        if any(d < 2 for d in self.dims):
            raise DomainError("phantom grid dims must be >= 2 along each axis")
        if self.spacing <= 0:
            raise DomainError("phantom grid spacing must be positive")
        names = [r.name for r in self.regions]
        if len(names) != len(set(names)):
            raise DomainError(f"phantom {self.id}: duplicate region names")


@dataclass(frozen=True)
class ConcreteNeedle:
    """An abstract needle concretized with a placement and per-needle values."""

    spec: str
    tip: Point
    entry: Point
    parameters: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "tip", tuple(float(c) for c in self.tip))
        object.__setattr__(self, "entry", tuple(float(c) for c in self.entry))
        if self.tip == self.entry:
            raise DomainError("needle tip and entry coincide")


# --- JSON (de)serialization for the flat-file store ------------------------


def _attr_to_json(a: Attribution) -> dict:
    doc: dict[str, Any] = {"parameter": a.parameter, "editable": a.editable.value}
    if a.override_value is not None:
        doc["override_value"] = a.override_value
    if a.widget_hint is not None:
        doc["widget_hint"] = a.widget_hint.value
    return doc


def _attr_from_json(doc: dict) -> Attribution:
    return Attribution(
        parameter=doc["parameter"],
        override_value=doc.get("override_value"),
        editable=Editable(doc.get("editable", "hidden")),
        widget_hint=WidgetHint(doc["widget_hint"]) if doc.get("widget_hint") else None,
    )


def entity_to_json(entity: Any) -> dict:
    """Serialize any domain entity to its store document (snake_case keys)."""
    if isinstance(entity, Parameter):
        doc = {"name": entity.name, "value_type": entity.value_type.value}
        if entity.default_value is not None:
            doc["default_value"] = _value_to_json(entity.default_value)
        if entity.units is not None:
            doc["units"] = entity.units
        return doc
    if isinstance(entity, NeedleSpec):
        g = entity.geometry
        geom = {
            "kind": g.kind.value,
            "shaft_radius": g.shaft_radius,
            "active_length": g.active_length,
        }
        if g.kind is NeedleGeometryKind.EXTENSIBLE_TINES:
            geom["tine_count"] = g.tine_count
            geom["max_tine_extension"] = g.max_tine_extension
        return {
            "id": entity.id,
            "manufacturer_model": entity.manufacturer_model,
            "geometry": geom,
            "attributions": [_attr_to_json(a) for a in entity.attributions],
        }
    if isinstance(entity, PowerGeneratorSpec):
        return {
            "id": entity.id,
            "manufacturer_model": entity.manufacturer_model,
            "attributions": [_attr_to_json(a) for a in entity.attributions],
            "compat": [
                {"needle": c.needle, "min_count": c.min_count, "max_count": c.max_count}
                for c in entity.compat
            ],
        }
    if isinstance(entity, ContextSpec):
        return {
            "id": entity.id,
            "organ": entity.organ.value,
            "attributions": [_attr_to_json(a) for a in entity.attributions],
        }
    if isinstance(entity, ProtocolSpec):
        return {
            "id": entity.id,
            "modality": entity.modality.value,
            "algorithms": [
                {"result": a.result, "arguments": list(a.arguments), "body": a.body}
                for a in entity.algorithms
            ],
            "attributions": [_attr_to_json(a) for a in entity.attributions],
        }
    if isinstance(entity, NumericalModelSpec):
        doc = {
            "id": entity.id,
            "family": entity.family.value,
            "required_regions": [
                {"group": r.group, "min_count": r.min_count, "max_count": r.max_count}
                for r in entity.required_regions
            ],
            "attributions": [_attr_to_json(a) for a in entity.attributions],
        }
        if entity.result_spec is not None:
            doc["result_spec"] = {
                "field": entity.result_spec.field,
                "threshold": entity.result_spec.threshold,
                "direction": entity.result_spec.direction,
            }
        return doc
    if isinstance(entity, Combination):
        return {
            "id": entity.id,
            "context": entity.context,
            "power_generator": entity.power_generator,
            "protocol": entity.protocol,
            "numerical_model": entity.numerical_model,
            "allowed_needles": list(entity.allowed_needles),
            "public": entity.public,
        }
    if isinstance(entity, PhantomSpec):
        return {
            "id": entity.id,
            "grid": {
                "dims": list(entity.dims),
                "spacing": entity.spacing,
                "origin": list(entity.origin),
            },
            "regions": [
                {"name": r.name, "group": r.group, "shape": _shape_to_json(r.shape)}
                for r in entity.regions
            ],
        }
    raise DomainError(f"not a storable entity: {type(entity).__name__}")


def _value_to_json(v: Any) -> Any:
    if isinstance(v, tuple):
        return list(v)
    if isinstance(v, list):
        return [_value_to_json(x) for x in v]
    return v


def _shape_to_json(s: PhantomShape) -> dict:
    doc: dict[str, Any] = {"kind": s.kind}
    if s.kind == "sphere":
        doc["centre"] = list(s.centre)
        doc["radius"] = s.radius
    elif s.kind == "cylinder":
        doc["start"] = list(s.start)
        doc["end"] = list(s.end)
        doc["radius"] = s.radius
    else:
        doc["min"] = list(s.minimum)
        doc["max"] = list(s.maximum)
    return doc


def shape_from_json(doc: dict) -> PhantomShape:
    kind = doc["kind"]
    if kind == "sphere":
        return PhantomShape(kind, centre=tuple(doc["centre"]), radius=doc["radius"])
    if kind == "cylinder":
        return PhantomShape(
            kind, start=tuple(doc["start"]), end=tuple(doc["end"]), radius=doc["radius"]
        )
    if kind == "box":
        return PhantomShape(kind, minimum=tuple(doc["min"]), maximum=tuple(doc["max"]))
    raise DomainError(f"unknown shape kind {kind!r}")


ENTITY_KINDS = (
    "parameter",
    "needle",
    "generator",
    "context",
    "protocol",
    "model",
    "combination",
    "phantom",
)


def entity_from_json(kind: str, doc: dict) -> Any:
    """Deserialize a store document. Raises DomainError on schema problems."""
    try:
        if kind == "parameter":
            return Parameter(
                name=doc["name"],
                value_type=ValueType(doc["value_type"]),
                default_value=doc.get("default_value"),
                units=doc.get("units"),
            )
        if kind == "needle":
            g = doc["geometry"]
            return NeedleSpec(
                id=doc["id"],
                manufacturer_model=doc["manufacturer_model"],
                geometry=NeedleGeometry(
                    kind=NeedleGeometryKind(g["kind"]),
                    shaft_radius=g["shaft_radius"],
                    active_length=g["active_length"],
                    tine_count=g.get("tine_count", 0),
                    max_tine_extension=g.get("max_tine_extension", 0.0),
                ),
                attributions=tuple(_attr_from_json(a) for a in doc.get("attributions", [])),
            )
        if kind == "generator":
            return PowerGeneratorSpec(
                id=doc["id"],
                manufacturer_model=doc["manufacturer_model"],
                attributions=tuple(_attr_from_json(a) for a in doc.get("attributions", [])),
                compat=tuple(
                    CompatRow(c["needle"], c["min_count"], c["max_count"])
                    for c in doc.get("compat", [])
                ),
            )
        if kind == "context":
            return ContextSpec(
                id=doc["id"],
                organ=Organ(doc["organ"]),
                attributions=tuple(_attr_from_json(a) for a in doc.get("attributions", [])),
            )
        if kind == "protocol":
            return ProtocolSpec(
                id=doc["id"],
                modality=Modality(doc["modality"]),
                algorithms=tuple(
                    AlgorithmDef(a["result"], tuple(a["arguments"]), a["body"])
                    for a in doc.get("algorithms", [])
                ),
                attributions=tuple(_attr_from_json(a) for a in doc.get("attributions", [])),
            )
        if kind == "model":
            rs = doc.get("result_spec")
            return NumericalModelSpec(
                id=doc["id"],
                family=ModelFamily(doc["family"]),
                required_regions=tuple(
                    RegionRequirement(r["group"], r["min_count"], r["max_count"])
                    for r in doc.get("required_regions", [])
                ),
                attributions=tuple(_attr_from_json(a) for a in doc.get("attributions", [])),
                result_spec=(
                    ResultSpec(rs["field"], rs["threshold"], rs["direction"]) if rs else None
                ),
            )
        if kind == "combination":
            return Combination(
                id=doc["id"],
                context=doc["context"],
                power_generator=doc["power_generator"],
                protocol=doc["protocol"],
                numerical_model=doc["numerical_model"],
                allowed_needles=tuple(doc["allowed_needles"]),
                public=doc.get("public", False),
            )
        if kind == "phantom":
            g = doc["grid"]
            return PhantomSpec(
                id=doc["id"],
                dims=tuple(g["dims"]),
                spacing=g["spacing"],
                origin=tuple(g["origin"]),
                regions=tuple(
                    PhantomRegion(r["name"], r["group"], shape_from_json(r["shape"]))
                    for r in doc.get("regions", [])
                ),
            )
    except KeyError as exc:
        raise DomainError(f"{kind} document missing field {exc}") from exc
    raise DomainError(f"unknown entity kind {kind!r}")
