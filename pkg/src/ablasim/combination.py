"""Validation, parameter resolution and concretization of combinations.

All operations are pure functions over a registry snapshot. Precedence of
parameter values, highest first:

    user input > per-needle attribution > protocol > power generator
    > context > numerical model > parameter default

Needle-attributed parameters live in per-needle scopes tied to the concrete
needles; everything else resolves into the global scope.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

from .domain import (
    Attribution,
    Combination,
    ConcreteNeedle,
    DomainError,
    Editable,
    NeedleGeometryKind,
    PhantomSpec,
    coerce_value,
)
from .registry import RegistrySnapshot
from .simdef import NeedlePlacement, Region, SimulationDefinition, shape_to_region_payload

# Source ranks, lowest number = highest precedence.
SOURCE_ORDER = (
    "user",
    "needle",
    "protocol",
    "generator",
    "context",
    "model",
    "default",
)


class ResolutionError(DomainError):
    def __init__(self, kind: str, parameter: str, message: str):
        super().__init__(message)
        self.kind = kind
        self.parameter = parameter


class CombinationInvalid(DomainError):
    def __init__(self, report: "ValidationReport"):
        super().__init__(f"combination does not validate: {report.describe()}")
        self.report = report


class CompatViolation(DomainError):
    pass


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    unfillable: tuple[str, ...] = ()
    compat_missing: tuple[str, ...] = ()

    def describe(self) -> str:
        if self.ok:
            return "ok"
        parts = []
        if self.unfillable:
            parts.append("unfillable parameters: " + ", ".join(self.unfillable))
        if self.compat_missing:
            parts.append(
                "needles missing from generator compat table: "
                + ", ".join(self.compat_missing)
            )
        return "; ".join(parts)


def _members(combination: Combination, registry: RegistrySnapshot):
    """Member entities keyed by their precedence source tag."""
    context = registry.get("context", combination.context)
    generator = registry.get("generator", combination.power_generator)
    protocol = registry.get("protocol", combination.protocol)
    model = registry.get("model", combination.numerical_model)
    needles = [registry.get("needle", n) for n in combination.allowed_needles]
    return context, generator, protocol, model, needles


def validate_combination(
    candidate: Combination, registry: RegistrySnapshot
) -> ValidationReport:
    """Check that every attributed parameter is fillable and compat rows exist.

    A parameter is fillable when it has a default, some member overrides it,
    or some attribution lets the user enter it (editable optional/required).
    Dangling entity references raise MissingEntityError instead of failing
    validation.
    """
    context, generator, protocol, model, needles = _members(candidate, registry)

    attributed: dict[str, list[Attribution]] = {}
    for entity in [context, generator, protocol, model, *needles]:
        for attr in entity.attributions:
            attributed.setdefault(attr.parameter, []).append(attr)

    unfillable = []
    for name in sorted(attributed):
        parameter = registry.parameter(name)  # raises MissingEntityError if dangling
        attrs = attributed[name]
        has_value = parameter.default_value is not None or any(
            a.override_value is not None for a in attrs
        )
        user_fillable = any(
            a.editable in (Editable.OPTIONAL, Editable.REQUIRED) for a in attrs
        )
        if not (has_value or user_fillable):
            unfillable.append(name)

    compat_needles = {row.needle for row in generator.compat}
    compat_missing = sorted(
        n for n in candidate.allowed_needles if n not in compat_needles
    )

    return ValidationReport(
        ok=not unfillable and not compat_missing,
        unfillable=tuple(unfillable),
        compat_missing=tuple(compat_missing),
    )


@dataclass
class ResolvedParameters:
    """Flat resolved values: one global scope plus one scope per needle."""

    values: dict[str, Any] = field(default_factory=dict)
    sources: dict[str, str] = field(default_factory=dict)
    per_needle: list[dict[str, Any]] = field(default_factory=list)
    per_needle_sources: list[dict[str, str]] = field(default_factory=list)

    def __getitem__(self, name: str) -> Any:
        return self.values[name]


def _typed(registry: RegistrySnapshot, name: str, value: Any, where: str) -> Any:
    parameter = registry.parameter(name)
    try:
        return coerce_value(parameter.value_type, value)
    except DomainError as exc:
        raise ResolutionError(
            "type", name, f"type error for {name} ({where}): {exc}"
        ) from exc


def resolve_parameters(
    combination: Combination,
    concrete_needles: Sequence[ConcreteNeedle],
    user_inputs: dict[str, Any],
    registry: RegistrySnapshot,
) -> ResolvedParameters:
    """Resolve every attributed parameter by source precedence.

    Raises ResolutionError("missing", ...) when a required editable parameter
    has no user value, ResolutionError("type", ...) on value/type mismatch,
    and ResolutionError("not-editable", ...) when a user input targets a
    parameter nothing marked editable.
    """
    context, generator, protocol, model, needle_specs = _members(combination, registry)
    spec_by_id = {n.id: n for n in needle_specs}

    global_sources = [
        ("protocol", protocol),
        ("generator", generator),
        ("context", context),
        ("model", model),
    ]

    attributed: dict[str, list[Attribution]] = {}
    for entity in [context, generator, protocol, model, *needle_specs]:
        for attr in entity.attributions:
            attributed.setdefault(attr.parameter, []).append(attr)

    editable = {
        name
        for name, attrs in attributed.items()
        if any(a.editable in (Editable.OPTIONAL, Editable.REQUIRED) for a in attrs)
    }
    required = {
        name
        for name, attrs in attributed.items()
        if any(a.editable is Editable.REQUIRED for a in attrs)
    }
    for name in user_inputs:
        if name not in editable:
            raise ResolutionError(
                "not-editable", name, f"parameter {name} is not user-editable here"
            )

    needle_attributed = {
        a.parameter for spec in needle_specs for a in spec.attributions
    }

    resolved = ResolvedParameters()

    # Global scope: user input, then protocol/generator/context/model
    # overrides, then the parameter default.
    for name in sorted(attributed):
        if name in user_inputs:
            resolved.values[name] = _typed(registry, name, user_inputs[name], "user input")
            resolved.sources[name] = "user"
            continue
        placed = False
        for tag, entity in global_sources:
            attr = next(
                (a for a in entity.attributions
                 if a.parameter == name and a.override_value is not None),
                None,
            )
            if attr is not None:
                resolved.values[name] = _typed(registry, name, attr.override_value, tag)
                resolved.sources[name] = tag
                placed = True
                break
        if placed:
            continue
        parameter = registry.parameter(name)
        if parameter.default_value is not None:
            resolved.values[name] = parameter.default_value
            resolved.sources[name] = "default"
        elif name in needle_attributed:
            pass  # may still resolve inside a needle scope below
        elif name in required:
            raise ResolutionError(
                "missing", name, f"missing required parameter {name}"
            )

    # Per-needle scopes: the needle's own user values, then the needle spec
    # attribution, then whatever the global scope resolved.
    for needle in concrete_needles:
        spec = spec_by_id.get(needle.spec) or registry.get("needle", needle.spec)
        scope = dict(resolved.values)
        origins = dict(resolved.sources)
        for attr in spec.attributions:
            if attr.override_value is not None and attr.parameter not in user_inputs:
                scope[attr.parameter] = _typed(
                    registry, attr.parameter, attr.override_value, f"needle {spec.id}"
                )
                origins[attr.parameter] = "needle"
        for name, value in needle.parameters.items():
            if name not in editable:
                raise ResolutionError(
                    "not-editable", name, f"parameter {name} is not user-editable here"
                )
            scope[name] = _typed(registry, name, value, "needle input")
            origins[name] = "user"
        resolved.per_needle.append(scope)
        resolved.per_needle_sources.append(origins)

    # Required parameters must now hold a user-supplied value in every scope
    # where they apply.
    for name in sorted(required):
        if name in user_inputs:
            continue
        if name in needle_attributed and concrete_needles:
            if all(name in n.parameters for n in concrete_needles):
                continue
        raise ResolutionError("missing", name, f"missing required parameter {name}")

    return resolved


def check_needle_compat(
    combination: Combination,
    concrete_needles: Sequence[ConcreteNeedle],
    registry: RegistrySnapshot,
) -> None:
    """Enforce the generator/needle multiplicity rules for a placement.

    One simulation uses a single needle model; its count must fall inside
    the generator's (min, max) row for that model.
    """
    generator = registry.get("generator", combination.power_generator)
    if not concrete_needles:
        raise CompatViolation("no needles placed")
    spec_ids = {n.spec for n in concrete_needles}
    if len(spec_ids) > 1:
        raise CompatViolation(
            "all needles in one simulation must share a model: "
            + ", ".join(sorted(spec_ids))
        )
    spec_id = next(iter(spec_ids))
    if spec_id not in combination.allowed_needles:
        raise CompatViolation(f"needle {spec_id} is not allowed by the combination")
    row = next((r for r in generator.compat if r.needle == spec_id), None)
    if row is None:
        raise CompatViolation(f"needle {spec_id} missing from generator compat table")
    count = len(concrete_needles)
    if not (row.min_count <= count <= row.max_count):
        raise CompatViolation(
            f"{count} needle(s) of {spec_id} outside allowed range "
            f"[{row.min_count}, {row.max_count}]"
        )


# Geometry constants are copied into per-needle parameters so the solver
# side never needs the abstract needle entity.
_GEOMETRY_PARAMETERS = {
    "NEEDLE_SHAFT_RADIUS": lambda g: g.shaft_radius,
    "NEEDLE_ACTIVE_LENGTH": lambda g: g.active_length,
}


def concretize(
    combination: Combination,
    concrete_needles: Sequence[ConcreteNeedle],
    user_inputs: dict[str, Any],
    registry: RegistrySnapshot,
    phantom: Optional[PhantomSpec] = None,
) -> SimulationDefinition:
    """Derive the simulation-tier definition for a validated combination.

    The result carries only simulation-tier data: resolved parameter values,
    placed needles tagged with their geometry class, region payloads taken
    from `phantom`, and the protocol's algorithm texts.
    """
    report = validate_combination(combination, registry)
    if not report.ok:
        raise CombinationInvalid(report)
    check_needle_compat(combination, concrete_needles, registry)

    _, _, protocol, model, _ = _members(combination, registry)
    resolved = resolve_parameters(combination, concrete_needles, user_inputs, registry)

    needle_attributed = set()
    for needle_id in combination.allowed_needles:
        for attr in registry.get("needle", needle_id).attributions:
            needle_attributed.add(attr.parameter)

    parameters = {
        name: value
        for name, value in resolved.values.items()
        if name not in needle_attributed or resolved.sources.get(name) == "user"
    }

    placements = []
    for index, needle in enumerate(concrete_needles, start=1):
        spec = registry.get("needle", needle.spec)
        scope = resolved.per_needle[index - 1]
        needle_params = {
            name: scope[name]
            for name in sorted(needle_attributed)
            if name in scope
        }
        for name, getter in _GEOMETRY_PARAMETERS.items():
            needle_params.setdefault(name, getter(spec.geometry))
        if spec.geometry.kind is NeedleGeometryKind.EXTENSIBLE_TINES:
            needle_params.setdefault("NEEDLE_TINE_COUNT", spec.geometry.tine_count)
            needle_params.setdefault(
                "NEEDLE_MAX_TINE_EXTENSION", spec.geometry.max_tine_extension
            )
        placements.append(
            NeedlePlacement(
                index=index,
                klass=spec.geometry.kind.value,
                tip=needle.tip,
                entry=needle.entry,
                parameters=needle_params,
            )
        )

    regions: list[Region] = []
    if phantom is not None:
        parameters.setdefault("SIMULATION_DOMAIN_DIMS", [float(d) for d in phantom.dims])
        parameters.setdefault("SIMULATION_DOMAIN_SPACING", float(phantom.spacing))
        parameters.setdefault("SIMULATION_DOMAIN_ORIGIN", list(phantom.origin))
        for region in phantom.regions:
            regions.append(
                Region(
                    name=region.name,
                    group=region.group,
                    payload=shape_to_region_payload(region.shape),
                )
            )

    counts: dict[str, int] = {}
    for region in regions:
        counts[region.group] = counts.get(region.group, 0) + 1
    for req in model.required_regions:
        n = counts.get(req.group, 0)
        if not (req.min_count <= n <= req.max_count):
            raise DomainError(
                f"model requires {req.min_count}..{req.max_count} region(s) in "
                f"group {req.group!r}, got {n}"
            )

    if model.result_spec is not None:
        parameters.setdefault("LESION_FIELD", model.result_spec.field)
        parameters.setdefault("LESION_THRESHOLD", model.result_spec.threshold)
        parameters.setdefault("LESION_DIRECTION", model.result_spec.direction)

    duration = parameters.get("MAX_DURATION")

    return SimulationDefinition(
        family=model.family.value,
        parameters=parameters,
        needles=tuple(placements),
        regions=tuple(regions),
        algorithms=tuple(protocol.algorithms),
        duration=float(duration) if duration is not None else None,
    )
