"""Shared fixtures: a small in-memory registry for combination tests."""

import pytest

from ablasim.domain import (
    AlgorithmDef,
    Attribution,
    Combination,
    CompatRow,
    ContextSpec,
    NeedleGeometry,
    NeedleSpec,
    NumericalModelSpec,
    Parameter,
    PowerGeneratorSpec,
    ProtocolSpec,
    RegionRequirement,
    ResultSpec,
)
from ablasim.registry import RegistrySnapshot

RFA_PROTOCOL_BODY = (
    "PHASE main\n"
    "WHEN time >= 0 SET power = CONSTANT_INPUT_POWER\n"
    "WHEN time > 300 END\n"
)


def build_entities(**overrides):
    """Entity set for a small RFA combination; overrides replace by id/name."""
    entities = [
        Parameter("CONSTANT_INPUT_POWER", "float", default_value=60.0, units="W"),
        Parameter("BODY_TEMPERATURE", "float", default_value=37.0, units="C"),
        Parameter("MATERIAL_CONDUCTIVITY", "float", default_value=0.512),
        Parameter("RFA_GAUSSIAN_SIGMA", "float", default_value=0.004, units="m"),
        Parameter("NEEDLE_SHAFT_RADIUS", "float", default_value=0.0012, units="m"),
        Parameter("MAX_DURATION", "float", default_value=1800.0, units="s"),
        NeedleSpec(
            id="tines9",
            manufacturer_model="Umbrella Nine",
            geometry=NeedleGeometry(
                kind="extensible_tines",
                shaft_radius=0.0012,
                active_length=0.01,
                tine_count=9,
                max_tine_extension=0.02,
            ),
            attributions=(
                Attribution("RFA_GAUSSIAN_SIGMA", editable="optional"),
                Attribution("NEEDLE_SHAFT_RADIUS"),
            ),
        ),
        NeedleSpec(
            id="straight",
            manufacturer_model="Plain Rod",
            geometry=NeedleGeometry(
                kind="straight_monopolar", shaft_radius=0.001, active_length=0.012
            ),
        ),
        PowerGeneratorSpec(
            id="gen1",
            manufacturer_model="Box 1500",
            attributions=(Attribution("CONSTANT_INPUT_POWER", editable="optional"),),
            compat=(CompatRow("tines9", 1, 1), CompatRow("straight", 1, 6)),
        ),
        ContextSpec(
            id="liver",
            organ="liver",
            attributions=(
                Attribution("BODY_TEMPERATURE", override_value=37.0),
                Attribution("MATERIAL_CONDUCTIVITY", override_value=0.512),
            ),
        ),
        ProtocolSpec(
            id="staged",
            modality="RFA",
            algorithms=(
                AlgorithmDef("power", ("time", "power"), RFA_PROTOCOL_BODY),
            ),
        ),
        NumericalModelSpec(
            id="rfa-model",
            family="bioheat_rfa",
            required_regions=(RegionRequirement("organ", 0, 1),),
            attributions=(Attribution("MAX_DURATION"),),
            result_spec=ResultSpec("death_fraction", 0.8, "ge"),
        ),
        Combination(
            id="combo",
            context="liver",
            power_generator="gen1",
            protocol="staged",
            numerical_model="rfa-model",
            allowed_needles=("tines9",),
            public=True,
        ),
    ]
    by_key = {getattr(e, "id", None) or e.name: e for e in entities}
    by_key.update(overrides)
    return list(by_key.values())


@pytest.fixture
def registry():
    return RegistrySnapshot.from_entities(build_entities())


@pytest.fixture
def make_registry():
    def _make(**overrides):
        return RegistrySnapshot.from_entities(build_entities(**overrides))

    return _make
