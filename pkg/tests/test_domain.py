"""Domain model: entity invariants, validation, resolution, concretization."""

import itertools

import pytest

from ablasim.combination import (
    CombinationInvalid,
    CompatViolation,
    ResolutionError,
    SOURCE_ORDER,
    concretize,
    resolve_parameters,
    validate_combination,
)
from ablasim.domain import (
    Attribution,
    Combination,
    CompatRow,
    ConcreteNeedle,
    ContextSpec,
    DomainError,
    NeedleGeometry,
    NeedleSpec,
    NumericalModelSpec,
    Parameter,
    PowerGeneratorSpec,
    entity_from_json,
    entity_to_json,
)
from ablasim.registry import MissingEntityError, RegistrySnapshot

from conftest import build_entities

NEEDLE = ConcreteNeedle(
    spec="tines9", tip=(0.032, 0.032, 0.030), entry=(0.032, 0.032, 0.063)
)


def combo(registry):
    return registry.get("combination", "combo")


class TestEntityInvariants:
    def test_parameter_name_must_be_upper_snake(self):
        with pytest.raises(DomainError):
            Parameter("lower_case", "float")
        with pytest.raises(DomainError):
            Parameter("1BAD", "float")
        Parameter("GOOD_NAME_2", "float")

    def test_default_value_must_match_type(self):
        with pytest.raises(DomainError):
            Parameter("P1", "int", default_value="nope")
        assert Parameter("P1", "int", default_value=3.0).default_value == 3

    def test_point_list_values(self):
        p = Parameter("PAIRS", "point_list", default_value=[[1, 2, 3.0]])
        assert p.default_value == [(1.0, 2.0, 3.0)]
        with pytest.raises(DomainError):
            Parameter("PAIRS", "point_list", default_value=[[1, 2]])

    def test_tine_needle_needs_tines(self):
        with pytest.raises(DomainError):
            NeedleGeometry(kind="extensible_tines", shaft_radius=1e-3,
                           active_length=1e-2, tine_count=0, max_tine_extension=0.02)

    def test_compat_bounds_ordered(self):
        with pytest.raises(DomainError):
            CompatRow("n", 3, 2)

    def test_body_temperature_range(self):
        with pytest.raises(DomainError):
            ContextSpec(
                id="c",
                organ="liver",
                attributions=(Attribution("BODY_TEMPERATURE", override_value=80.0),),
            )

    def test_combination_needs_needles(self):
        with pytest.raises(DomainError):
            Combination("c", "ctx", "gen", "prot", "model", allowed_needles=())

    def test_concrete_needle_tip_entry_distinct(self):
        with pytest.raises(DomainError):
            ConcreteNeedle(spec="s", tip=(0, 0, 0), entry=(0, 0, 0))

    def test_json_round_trip(self, registry):
        for kind, key in [
            ("needle", "tines9"),
            ("generator", "gen1"),
            ("context", "liver"),
            ("protocol", "staged"),
            ("model", "rfa-model"),
            ("combination", "combo"),
        ]:
            entity = registry.get(kind, key)
            assert entity_from_json(kind, entity_to_json(entity)) == entity


class TestValidateCombination:
    def test_fully_specified_combination_is_ok(self, registry):
        report = validate_combination(combo(registry), registry)
        assert report.ok
        assert report.unfillable == ()

    def test_unfillable_parameter_is_named(self, make_registry):
        # CONSTANT_INPUT_POWER loses its default and every attribution is
        # hidden with no override: nothing can ever fill it.
        registry = make_registry(
            CONSTANT_INPUT_POWER=Parameter("CONSTANT_INPUT_POWER", "float"),
            gen1=PowerGeneratorSpec(
                id="gen1",
                manufacturer_model="Box 1500",
                attributions=(Attribution("CONSTANT_INPUT_POWER", editable="hidden"),),
                compat=(CompatRow("tines9", 1, 1),),
            ),
        )
        report = validate_combination(combo(registry), registry)
        assert not report.ok
        assert report.unfillable == ("CONSTANT_INPUT_POWER",)
        # oracle: exhaustive scan over every attribution in the combination
        members = [registry.get("context", "liver"), registry.get("generator", "gen1"),
                   registry.get("protocol", "staged"), registry.get("model", "rfa-model"),
                   registry.get("needle", "tines9")]
        fillable = set()
        for entity in members:
            for attr in entity.attributions:
                param = registry.get("parameter", attr.parameter)
                if (param.default_value is not None or attr.override_value is not None
                        or attr.editable.value in ("optional", "required")):
                    fillable.add(attr.parameter)
        attributed = {a.parameter for e in members for a in e.attributions}
        assert set(report.unfillable) == attributed - fillable

    def test_needle_missing_from_compat_table(self, make_registry):
        registry = make_registry(
            gen1=PowerGeneratorSpec(
                id="gen1", manufacturer_model="Box 1500", compat=()
            ),
        )
        report = validate_combination(combo(registry), registry)
        assert not report.ok
        assert report.compat_missing == ("tines9",)

    def test_dangling_reference_is_a_distinct_error(self, registry):
        bad = Combination(
            id="bad", context="nope", power_generator="gen1", protocol="staged",
            numerical_model="rfa-model", allowed_needles=("tines9",),
        )
        with pytest.raises(MissingEntityError):
            validate_combination(bad, registry)

    def test_idempotent_and_attribution_order_independent(self):
        base = build_entities()
        registry_a = RegistrySnapshot.from_entities(base)
        flipped = build_entities(
            liver=ContextSpec(
                id="liver",
                organ="liver",
                attributions=(
                    Attribution("MATERIAL_CONDUCTIVITY", override_value=0.512),
                    Attribution("BODY_TEMPERATURE", override_value=37.0),
                ),
            )
        )
        registry_b = RegistrySnapshot.from_entities(flipped)
        c = combo(registry_a)
        first = validate_combination(c, registry_a)
        assert first == validate_combination(c, registry_a)  # idempotent
        assert first == validate_combination(combo(registry_b), registry_b)

    def test_removing_only_default_flips_validation(self, make_registry):
        ok_registry = make_registry()
        assert validate_combination(combo(ok_registry), ok_registry).ok
        bare = make_registry(
            RFA_GAUSSIAN_SIGMA=Parameter("RFA_GAUSSIAN_SIGMA", "float"),
            tines9=NeedleSpec(
                id="tines9",
                manufacturer_model="Umbrella Nine",
                geometry=NeedleGeometry(
                    kind="extensible_tines", shaft_radius=0.0012,
                    active_length=0.01, tine_count=9, max_tine_extension=0.02,
                ),
                attributions=(Attribution("RFA_GAUSSIAN_SIGMA", editable="hidden"),),
            ),
        )
        report = validate_combination(combo(bare), bare)
        assert not report.ok and "RFA_GAUSSIAN_SIGMA" in report.unfillable


class TestResolveParameters:
    def test_user_beats_context_beats_default(self, make_registry):
        registry = make_registry(
            liver=ContextSpec(
                id="liver",
                organ="liver",
                attributions=(
                    Attribution("CONSTANT_INPUT_POWER", override_value=80.0,
                                editable="optional"),
                ),
            ),
        )
        c = combo(registry)
        resolved = resolve_parameters(
            c, [NEEDLE], {"CONSTANT_INPUT_POWER": 100.0}, registry
        )
        assert resolved["CONSTANT_INPUT_POWER"] == 100.0
        resolved = resolve_parameters(c, [NEEDLE], {}, registry)
        assert resolved["CONSTANT_INPUT_POWER"] == 80.0
        assert resolved.sources["CONSTANT_INPUT_POWER"] == "context"

    def test_default_only_parameter_resolves_to_default(self, registry):
        resolved = resolve_parameters(combo(registry), [NEEDLE], {}, registry)
        assert resolved["MAX_DURATION"] == 1800.0
        assert resolved.sources["MAX_DURATION"] == "default"

    def test_required_without_user_value_is_missing(self, make_registry):
        registry = make_registry(
            gen1=PowerGeneratorSpec(
                id="gen1",
                manufacturer_model="Box 1500",
                attributions=(
                    Attribution("CONSTANT_INPUT_POWER", editable="required"),
                ),
                compat=(CompatRow("tines9", 1, 1),),
            ),
        )
        with pytest.raises(ResolutionError) as err:
            resolve_parameters(combo(registry), [NEEDLE], {}, registry)
        assert err.value.kind == "missing"
        assert err.value.parameter == "CONSTANT_INPUT_POWER"

    def test_type_mismatch_names_parameter(self, registry):
        with pytest.raises(ResolutionError) as err:
            resolve_parameters(
                combo(registry), [NEEDLE], {"CONSTANT_INPUT_POWER": "lots"}, registry
            )
        assert err.value.kind == "type"
        assert err.value.parameter == "CONSTANT_INPUT_POWER"

    def test_non_editable_user_input_rejected(self, registry):
        with pytest.raises(ResolutionError) as err:
            resolve_parameters(
                combo(registry), [NEEDLE], {"BODY_TEMPERATURE": 36.0}, registry
            )
        assert err.value.kind == "not-editable"

    def test_needle_scope_overrides_global(self, make_registry):
        registry = make_registry()
        needle = ConcreteNeedle(
            spec="tines9", tip=NEEDLE.tip, entry=NEEDLE.entry,
            parameters={"RFA_GAUSSIAN_SIGMA": 0.006},
        )
        resolved = resolve_parameters(combo(registry), [needle], {}, registry)
        assert resolved.per_needle[0]["RFA_GAUSSIAN_SIGMA"] == 0.006
        assert resolved.per_needle_sources[0]["RFA_GAUSSIAN_SIGMA"] == "user"

    def test_never_returns_lower_ranked_source(self, make_registry):
        # exhaustive oracle over all ways of spreading a value across three
        # sources: generator, context, default
        rank = {tag: i for i, tag in enumerate(SOURCE_ORDER)}
        for sources in itertools.product([False, True], repeat=3):
            has_gen, has_ctx, has_default = sources
            overrides = {
                "CONSTANT_INPUT_POWER": Parameter(
                    "CONSTANT_INPUT_POWER", "float",
                    default_value=60.0 if has_default else None,
                ),
                "gen1": PowerGeneratorSpec(
                    id="gen1",
                    manufacturer_model="Box 1500",
                    attributions=(
                        Attribution(
                            "CONSTANT_INPUT_POWER",
                            override_value=70.0 if has_gen else None,
                            editable="optional",
                        ),
                    ),
                    compat=(CompatRow("tines9", 1, 1),),
                ),
                "liver": ContextSpec(
                    id="liver",
                    organ="liver",
                    attributions=(
                        Attribution(
                            "CONSTANT_INPUT_POWER",
                            override_value=80.0 if has_ctx else None,
                        ),
                    ),
                ),
            }
            registry = RegistrySnapshot.from_entities(build_entities(**overrides))
            c = combo(registry)
            if not any(sources):
                resolved = resolve_parameters(c, [NEEDLE], {}, registry)
                assert "CONSTANT_INPUT_POWER" not in resolved.values
                continue
            resolved = resolve_parameters(c, [NEEDLE], {}, registry)
            available = {
                tag: value
                for tag, value, present in [
                    ("generator", 70.0, has_gen),
                    ("context", 80.0, has_ctx),
                    ("default", 60.0, has_default),
                ]
                if present
            }
            best = min(available, key=lambda t: rank[t])
            assert resolved["CONSTANT_INPUT_POWER"] == available[best]
            assert resolved.sources["CONSTANT_INPUT_POWER"] == best


class TestConcretize:
    def test_single_needle_combination(self, registry):
        defn = concretize(combo(registry), [NEEDLE], {}, registry)
        assert defn.family == "bioheat_rfa"
        assert len(defn.needles) == 1
        assert defn.needles[0].index == 1
        assert defn.needles[0].klass == "extensible_tines"
        assert defn.needles[0].parameters["NEEDLE_TINE_COUNT"] == 9
        assert defn.parameters["LESION_THRESHOLD"] == 0.8
        assert defn.duration == 1800.0

    def _ire_registry(self):
        entities = build_entities(
            gen1=PowerGeneratorSpec(
                id="gen1",
                manufacturer_model="Pulse Box",
                compat=(CompatRow("straight", 2, 6),),
            ),
            combo=Combination(
                id="combo", context="liver", power_generator="gen1",
                protocol="staged", numerical_model="ire-model",
                allowed_needles=("straight",),
            ),
        )
        entities.append(
            NumericalModelSpec(id="ire-model", family="ire_potential")
        )
        return RegistrySnapshot.from_entities(entities)

    def test_ire_two_needles_within_compat(self):
        registry = self._ire_registry()
        needles = [
            ConcreteNeedle("straight", (0.02, 0.03, 0.03), (0.02, 0.03, 0.06)),
            ConcreteNeedle("straight", (0.04, 0.03, 0.03), (0.04, 0.03, 0.06)),
        ]
        defn = concretize(combo(registry), needles, {}, registry)
        assert len(defn.needles) == 2
        assert [n.index for n in defn.needles] == [1, 2]

    def test_ire_one_needle_violates_compat(self):
        registry = self._ire_registry()
        needles = [ConcreteNeedle("straight", (0.02, 0.03, 0.03), (0.02, 0.03, 0.06))]
        with pytest.raises(CompatViolation):
            concretize(combo(registry), needles, {}, registry)

    def test_concretize_requires_valid_combination(self, make_registry):
        registry = make_registry(
            CONSTANT_INPUT_POWER=Parameter("CONSTANT_INPUT_POWER", "float"),
            gen1=PowerGeneratorSpec(
                id="gen1",
                manufacturer_model="Box 1500",
                attributions=(Attribution("CONSTANT_INPUT_POWER", editable="hidden"),),
                compat=(CompatRow("tines9", 1, 1),),
            ),
        )
        with pytest.raises(CombinationInvalid):
            concretize(combo(registry), [NEEDLE], {}, registry)

    def test_valid_combination_with_full_inputs_never_missing(self, make_registry):
        # all-editable variant: supplying every editable parameter must
        # succeed whenever validation succeeded
        registry = make_registry(
            gen1=PowerGeneratorSpec(
                id="gen1",
                manufacturer_model="Box 1500",
                attributions=(
                    Attribution("CONSTANT_INPUT_POWER", editable="required"),
                ),
                compat=(CompatRow("tines9", 1, 1),),
            ),
        )
        c = combo(registry)
        assert validate_combination(c, registry).ok
        defn = concretize(c, [NEEDLE], {"CONSTANT_INPUT_POWER": 42.0}, registry)
        assert defn.parameters["CONSTANT_INPUT_POWER"] == 42.0
