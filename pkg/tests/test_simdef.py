"""Simulation-definition XML: canonical emission, closed-schema parsing."""

import random

import pytest

from ablasim.domain import AlgorithmDef, DomainError, PhantomShape
from ablasim.simdef import (
    LookupFailure,
    NeedlePlacement,
    Region,
    RegionPayload,
    SchemaError,
    SimulationDefinition,
    XmlError,
    from_xml,
    param,
    regions_in_group,
    to_xml,
)

MINIMAL = SimulationDefinition(family="bioheat_rfa")


def full_definition():
    return SimulationDefinition(
        family="ire_potential",
        parameters={
            "CONSTANT_IRE_NEEDLEPAIR_VOLTAGE": [(1.0, 2.0, 3000.0)],
            "CONSTANT_IRE_FIELD_THRESHOLD": 70000.0,
            "SIMULATION_DOMAIN_DIMS": [64.0, 64.0, 64.0],
            "NEEDLE_COUNT": 2,
            "PUBLIC_RUN": True,
            "OPERATOR_NOTE": "two needles <&> \"quoted\"\nsecond line",
        },
        needles=(
            NeedlePlacement(1, "straight_monopolar", (0.02, 0.03, 0.03),
                            (0.02, 0.03, 0.06), {"NEEDLE_SHAFT_RADIUS": 0.001}),
            NeedlePlacement(2, "straight_monopolar", (0.04, 0.03, 0.03),
                            (0.04, 0.03, 0.06), {}),
        ),
        regions=(
            Region("organ", "organ",
                   RegionPayload("sphere", shape=PhantomShape(
                       "sphere", centre=(0.032, 0.032, 0.032), radius=0.028))),
            Region("portal", "vessels",
                   RegionPayload("cylinder", shape=PhantomShape(
                       "cylinder", start=(0.045, 0.032, 0.0),
                       end=(0.045, 0.032, 0.064), radius=0.003))),
            Region("lesion-ref", "tumour", RegionPayload("mask", path="ref.gsmask")),
        ),
        algorithms=(
            AlgorithmDef("voltage", ("time",), "PHASE p\nWHEN time > 10 END\n"),
        ),
        duration=600.0,
    )


class TestToXml:
    def test_minimal_definition_has_empty_sections(self):
        text = to_xml(MINIMAL)
        lines = text.splitlines()
        assert lines[0] == '<simulation family="bioheat_rfa" version="1">'
        assert "<parameters>" in lines[1]
        assert text.endswith("</simulation>\n")
        assert "\r" not in text

    def test_golden_two_needle_layout(self):
        text = to_xml(full_definition())
        needle_lines = [l for l in text.splitlines() if "<needle " in l]
        assert len(needle_lines) == 2
        assert 'index="1"' in needle_lines[0]
        assert 'index="2"' in needle_lines[1]
        # attributes are emitted sorted
        assert needle_lines[0].index("class=") < needle_lines[0].index("entry=")
        assert needle_lines[0].index("entry=") < needle_lines[0].index("index=")

    def test_byte_stable_across_calls(self):
        a = to_xml(full_definition())
        b = to_xml(full_definition())
        assert a == b

    def test_round_trip_identity_canonical(self):
        text = to_xml(full_definition())
        assert to_xml(from_xml(text)) == text


class TestFromXml:
    def test_round_trip_structural_equality(self):
        defn = full_definition()
        assert from_xml(to_xml(defn)) == defn

    def test_minimal_round_trip(self):
        assert from_xml(to_xml(MINIMAL)) == MINIMAL

    def test_malformed_xml(self):
        with pytest.raises(XmlError):
            from_xml("<simulation family='x' version='1'>")

    def test_unknown_element_rejected(self):
        text = to_xml(MINIMAL).replace("</simulation>", "<foo/></simulation>")
        with pytest.raises(SchemaError, match="foo"):
            from_xml(text)

    def test_unknown_attribute_rejected(self):
        text = to_xml(MINIMAL).replace('version="1"', 'version="1" extra="no"')
        with pytest.raises(SchemaError, match="extra"):
            from_xml(text)

    def test_duplicate_region_name_rejected(self):
        text = to_xml(full_definition()).replace(
            '<region group="vessels" name="portal">',
            '<region group="vessels" name="organ">',
        )
        with pytest.raises(SchemaError, match="duplicate region"):
            from_xml(text)

    def test_wrong_version_rejected(self):
        text = to_xml(MINIMAL).replace('version="1"', 'version="2"')
        with pytest.raises(SchemaError, match="version"):
            from_xml(text)

    def test_error_carries_line_number(self):
        text = to_xml(full_definition()).replace(
            '<mask path="ref.gsmask"/>', "<blob/>"
        )
        with pytest.raises(SchemaError) as err:
            from_xml(text)
        assert err.value.line > 1

    def test_needle_indices_must_be_dense(self):
        text = to_xml(full_definition()).replace('index="2"', 'index="7"')
        with pytest.raises(SchemaError, match="dense"):
            from_xml(text)


class TestAccessors:
    def test_param_returns_exact_typed_values(self):
        defn = full_definition()
        assert param(defn, "CONSTANT_IRE_NEEDLEPAIR_VOLTAGE") == [(1.0, 2.0, 3000.0)]
        assert param(defn, "NEEDLE_COUNT") == 2
        assert param(defn, "PUBLIC_RUN") is True

    def test_param_round_trip_types_survive(self):
        defn = from_xml(to_xml(full_definition()))
        triples = param(defn, "CONSTANT_IRE_NEEDLEPAIR_VOLTAGE")
        assert triples == [(1.0, 2.0, 3000.0)]
        assert isinstance(param(defn, "NEEDLE_COUNT"), int)
        assert param(defn, "OPERATOR_NOTE") == (
            'two needles <&> "quoted"\nsecond line'
        )

    def test_unknown_parameter_lists_near_matches(self):
        with pytest.raises(LookupFailure) as err:
            param(full_definition(), "CONSTANT_IRE_FIELD_THRESHOLDS")
        assert "CONSTANT_IRE_FIELD_THRESHOLD" in str(err.value)

    def test_region_idx_document_order(self):
        defn = full_definition()
        vessels = regions_in_group(defn, "vessels")
        assert [r.idx for r in vessels] == [2]
        organ = regions_in_group(defn, "organ")
        assert [r.idx for r in organ] == [1]
        assert regions_in_group(defn, "missing") == []

    def test_two_vessel_regions_get_sequential_idx(self):
        defn = SimulationDefinition(
            family="f",
            regions=(
                Region("organ", "organ", RegionPayload("mask", path="a")),
                Region("v1", "vessels", RegionPayload("mask", path="b")),
                Region("v2", "vessels", RegionPayload("mask", path="c")),
            ),
        )
        assert [r.idx for r in regions_in_group(defn, "vessels")] == [2, 3]

    def test_algorithm_parameters_resolve(self):
        defn = full_definition()
        for algo in defn.algorithms:
            for name in defn.parameters:
                param(defn, name)  # total over every declared parameter


def random_definition(rng: random.Random) -> SimulationDefinition:
    families = ["bioheat_rfa", "bioheat_mwa", "cryo_effective_capacity",
                "ire_potential"]
    parameters = {}
    for i in range(rng.randint(0, 6)):
        name = f"PARAM_{i}"
        choice = rng.randrange(6)
        if choice == 0:
            parameters[name] = rng.uniform(-1e3, 1e3)
        elif choice == 1:
            parameters[name] = rng.randint(-50, 50)
        elif choice == 2:
            parameters[name] = bool(rng.getrandbits(1))
        elif choice == 3:
            parameters[name] = "".join(
                rng.choice("abc <>&\"'\n\tz") for _ in range(rng.randint(0, 8))
            )
        elif choice == 4:
            parameters[name] = [rng.uniform(-5, 5) for _ in range(rng.randint(0, 4))]
        else:
            parameters[name] = [
                tuple(rng.uniform(-5, 5) for _ in range(3))
                for _ in range(rng.randint(1, 3))
            ]
    needles = tuple(
        NeedlePlacement(
            index=i + 1,
            klass=rng.choice(["straight_monopolar", "extensible_tines"]),
            tip=tuple(rng.uniform(0, 0.06) for _ in range(3)),
            entry=tuple(rng.uniform(0, 0.06) for _ in range(3)),
            parameters={"NEEDLE_SHAFT_RADIUS": rng.uniform(1e-4, 2e-3)},
        )
        for i in range(rng.randint(0, 3))
    )
    shapes = [
        RegionPayload("sphere", shape=PhantomShape(
            "sphere", centre=(0.01, 0.02, 0.03), radius=rng.uniform(0.001, 0.02))),
        RegionPayload("box", shape=PhantomShape(
            "box", minimum=(0.0, 0.0, 0.0), maximum=(0.01, 0.02, 0.03))),
        RegionPayload("mask", path=f"mask-{rng.randint(0, 9)}.gsmask"),
    ]
    regions = tuple(
        Region(f"region-{i}", rng.choice(["organ", "vessels", "tumour"]),
               rng.choice(shapes))
        for i in range(rng.randint(0, 4))
    )
    results = rng.sample(["power", "flow_rate", "voltage"], rng.randint(0, 3))
    algorithms = tuple(
        AlgorithmDef(
            result=result,
            arguments=("time", "temperature_avg"),
            body=f"PHASE p\nWHEN time > {rng.randint(1, 500)} END\n",
        )
        for result in results
    )
    return SimulationDefinition(
        family=rng.choice(families),
        parameters=parameters,
        needles=needles,
        regions=regions,
        algorithms=algorithms,
        duration=rng.choice([None, rng.uniform(1, 3600)]),
    )


def test_generated_round_trip_50():
    rng = random.Random(20260809)
    for _ in range(50):
        defn = random_definition(rng)
        text = to_xml(defn)
        assert from_xml(text) == defn
        assert to_xml(from_xml(text)) == text
