"""Shipped demo fixtures: one combination per modality on a liver-like
voxel phantom, so validation and runs work out of the box.

The packaged entity store lives under ablasim/data; `demo_store_path()`
points at it and `install_demo_store()` copies it somewhere writable.
"""

from __future__ import annotations

import shutil
from importlib import resources
from pathlib import Path

from .domain import (
    AlgorithmDef,
    Attribution,
    Combination,
    CompatRow,
    ContextSpec,
    NeedleGeometry,
    NeedleSpec,
    NumericalModelSpec,
    Parameter,
    PhantomRegion,
    PhantomShape,
    PhantomSpec,
    PowerGeneratorSpec,
    ProtocolSpec,
    RegionRequirement,
    ResultSpec,
)
from .registry import EntityStore

RFA_PROTOCOL = (
    "# staged, manufacturer-style: warm up half-extended, then full power\n"
    "PHASE warmup\n"
    "WHEN time >= 0 SET power = 40\n"
    "WHEN time >= 0 SET extension = 0.5\n"
    "WHEN temperature_avg > 60 ADVANCE\n"
    "WHEN time > 120 ADVANCE\n"
    "PHASE full_power\n"
    "WHEN time >= 0 SET power = 70\n"
    "WHEN time >= 0 SET extension = 1\n"
    "WHEN time > 300 END\n"
)

MWA_PROTOCOL = (
    "PHASE main\n"
    "WHEN time >= 0 SET power = CONSTANT_INPUT_POWER\n"
    "WHEN time > 180 END\n"
)

CRYO_PROTOCOL = (
    "PHASE freeze\n"
    "WHEN time >= 0 SET flow_rate = 1\n"
    "WHEN time > 90 END\n"
)


def demo_parameters() -> list[Parameter]:
    return [
        # domain geometry travels as definition parameters
        Parameter("SIMULATION_DOMAIN_DIMS", "float_list"),
        Parameter("SIMULATION_DOMAIN_SPACING", "float", units="m"),
        Parameter("SIMULATION_DOMAIN_ORIGIN", "float_list", units="m"),
        Parameter("MAX_DURATION", "float", units="s"),
        Parameter("PERFUSION_MODE", "string", default_value="paper"),
        # context material constants
        Parameter("BODY_TEMPERATURE", "float", default_value=37.0, units="C"),
        Parameter("MATERIAL_DENSITY", "float", units="kg/m^3"),
        Parameter("MATERIAL_HEAT_CAPACITY", "float", units="J/(kg K)"),
        Parameter("MATERIAL_CONDUCTIVITY", "float", units="W/(m K)"),
        Parameter("MATERIAL_PERFUSION_RATE", "float", units="1/s"),
        Parameter("BLOOD_DENSITY", "float", default_value=1060.0, units="kg/m^3"),
        Parameter("BLOOD_HEAT_CAPACITY", "float", default_value=3600.0,
                  units="J/(kg K)"),
        Parameter("MATERIAL_ELECTRIC_CONDUCTIVITY", "float", units="S/m"),
        Parameter("MATERIAL_RELATIVE_PERMITTIVITY", "float"),
        Parameter("MATERIAL_RELATIVE_PERMEABILITY", "float", default_value=1.0),
        # cell death model; the exponent scale carries no default anywhere
        Parameter("CELL_DEATH_FORWARD_RATE", "float", default_value=0.00333,
                  units="1/s"),
        Parameter("CELL_DEATH_BACKWARD_RATE", "float", default_value=0.00777,
                  units="1/s"),
        Parameter("CELL_DEATH_RATE_TEMPERATURE", "float", units="C"),
        Parameter("CELL_DEATH_THRESHOLD", "float", default_value=0.8),
        Parameter("CELL_DEATH_INITIAL_ALIVE", "float", default_value=0.99),
        # RFA
        Parameter("CONSTANT_INPUT_POWER", "float", units="W"),
        Parameter("CONSTANT_IMPEDANCE", "float", default_value=70.0, units="ohm"),
        Parameter("RFA_GAUSSIAN_SIGMA", "float", default_value=0.004, units="m"),
        Parameter("RFA_MAX_POWER", "float", default_value=150.0, units="W"),
        Parameter("RFA_TARGET_TEMPERATURE", "float", units="C"),
        Parameter("RFA_PID_KP", "float", default_value=0.05),
        Parameter("RFA_PID_KI", "float", default_value=0.005),
        Parameter("RFA_PID_KD", "float", default_value=0.0),
        Parameter("NEEDLE_SHAFT_RADIUS", "float", units="m"),
        # MWA
        Parameter("CONSTANT_MWA_FREQUENCY", "float", units="Hz"),
        Parameter("MWA_TISSUE_CONDUCTIVITY", "float", units="S/m"),
        Parameter("MWA_SIGMA_SLOPE", "float", default_value=0.0, units="1/K"),
        Parameter("MWA_SAR_MODE", "string", default_value="paper"),
        Parameter("MWA_FIELD_REFRESH_STEPS", "int", default_value=0),
        Parameter("MWA_COAX_INNER_RADIUS", "float", default_value=0.0003, units="m"),
        Parameter("MWA_COAX_OUTER_RADIUS", "float", default_value=0.001, units="m"),
        Parameter("MWA_PORT_OFFSET", "float", default_value=0.005, units="m"),
        Parameter("MWA_SLOT_HEIGHT", "float", default_value=0.004, units="m"),
        Parameter("MWA_SLEEVE_THICKNESS", "float", default_value=0.0005, units="m"),
        Parameter("MWA_SLEEVE_PERMITTIVITY", "float", default_value=43.0),
        Parameter("MWA_AXISYM_SPACING", "float", default_value=0.0005, units="m"),
        Parameter("MWA_AXISYM_NR", "int", default_value=64),
        Parameter("MWA_AXISYM_NZ", "int", default_value=96),
        # cryoablation
        Parameter("MATERIAL_HEAT_CAPACITY_FROZEN", "float", units="J/(kg K)"),
        Parameter("MATERIAL_HEAT_CAPACITY_LIQUID", "float", units="J/(kg K)"),
        Parameter("MATERIAL_CONDUCTIVITY_FROZEN", "float", units="W/(m K)"),
        Parameter("MATERIAL_CONDUCTIVITY_LIQUID", "float", units="W/(m K)"),
        Parameter("LATENT_HEAT_SOLIDIFICATION", "float", units="J/kg"),
        Parameter("SOLIDUS_TEMPERATURE", "float", units="C"),
        Parameter("LIQUIDUS_TEMPERATURE", "float", units="C"),
        Parameter("CRYO_LESION_ISOTHERM", "float", units="C"),
        Parameter("CRYO_FLOW_TEMPERATURE_MAP", "float_list"),
        # IRE
        Parameter("CONSTANT_IRE_NEEDLEPAIR_VOLTAGE", "point_list",
                  units="(anode idx, cathode idx, V)"),
        Parameter("CONSTANT_IRE_FIELD_THRESHOLD", "float", units="V/m"),
        Parameter("IRE_CONDUCTIVITY_BETA", "float", default_value=0.0),
        Parameter("IRE_REVERSIBLE_THRESHOLD", "float", default_value=1e30,
                  units="V/m"),
        # lesion rule carried into the definition
        Parameter("LESION_FIELD", "string"),
        Parameter("LESION_THRESHOLD", "float"),
        Parameter("LESION_DIRECTION", "string"),
    ]


def demo_entities() -> list:
    entities: list = list(demo_parameters())

    entities += [
        NeedleSpec(
            id="umbrella-9",
            manufacturer_model="Umbrella Nine 2.0",
            geometry=NeedleGeometry(
                kind="extensible_tines", shaft_radius=0.0012,
                active_length=0.01, tine_count=9, max_tine_extension=0.012,
            ),
            attributions=(
                Attribution("RFA_GAUSSIAN_SIGMA", override_value=0.004,
                            editable="optional", widget_hint="number_box"),
                Attribution("NEEDLE_SHAFT_RADIUS", override_value=0.0012),
            ),
        ),
        NeedleSpec(
            id="mwa-applicator",
            manufacturer_model="Slotline 245",
            geometry=NeedleGeometry(
                kind="straight_monopolar", shaft_radius=0.0012,
                active_length=0.012,
            ),
            attributions=(
                Attribution("NEEDLE_SHAFT_RADIUS", override_value=0.0012),
            ),
        ),
        NeedleSpec(
            id="cryo-probe",
            manufacturer_model="FrostLine 1.5",
            geometry=NeedleGeometry(
                kind="straight_monopolar", shaft_radius=0.0015,
                active_length=0.025,
            ),
            attributions=(
                Attribution("NEEDLE_SHAFT_RADIUS", override_value=0.0015),
                Attribution("CRYO_FLOW_TEMPERATURE_MAP",
                            override_value=[0.0, 37.0, 1.0, -150.0]),
            ),
        ),
        NeedleSpec(
            id="ire-electrode",
            manufacturer_model="PulseTip 18G",
            geometry=NeedleGeometry(
                kind="straight_monopolar", shaft_radius=0.0009,
                active_length=0.02,
            ),
            attributions=(
                Attribution("NEEDLE_SHAFT_RADIUS", override_value=0.0009),
            ),
        ),
    ]

    entities += [
        PowerGeneratorSpec(
            id="rfa-generator",
            manufacturer_model="ThermoDrive 1500",
            attributions=(
                Attribution("CONSTANT_INPUT_POWER", override_value=70.0,
                            editable="optional", widget_hint="power_time_graph"),
                Attribution("RFA_MAX_POWER", override_value=150.0),
                Attribution("RFA_TARGET_TEMPERATURE", override_value=105.0,
                            editable="optional", widget_hint="number_box"),
                Attribution("RFA_PID_KP", override_value=0.05),
                Attribution("RFA_PID_KI", override_value=0.005),
                Attribution("RFA_PID_KD", override_value=0.0),
            ),
            compat=(CompatRow("umbrella-9", 1, 1),),
        ),
        PowerGeneratorSpec(
            id="mwa-generator",
            manufacturer_model="WaveCook 2450",
            attributions=(
                Attribution("CONSTANT_MWA_FREQUENCY", override_value=2.45e9),
                Attribution("CONSTANT_INPUT_POWER", override_value=60.0,
                            editable="optional", widget_hint="slider"),
            ),
            compat=(CompatRow("mwa-applicator", 1, 1),),
        ),
        PowerGeneratorSpec(
            id="cryo-generator",
            manufacturer_model="FrostLine Console",
            attributions=(),
            compat=(CompatRow("cryo-probe", 1, 3),),
        ),
        PowerGeneratorSpec(
            id="ire-generator",
            manufacturer_model="PulseBox 3000",
            attributions=(
                Attribution("CONSTANT_IRE_NEEDLEPAIR_VOLTAGE",
                            override_value=[[1.0, 2.0, 3000.0]],
                            editable="optional", widget_hint="text"),
            ),
            compat=(CompatRow("ire-electrode", 2, 6),),
        ),
    ]

    liver_attrs = (
        Attribution("BODY_TEMPERATURE", override_value=37.0),
        Attribution("MATERIAL_DENSITY", override_value=1060.0),
        Attribution("MATERIAL_HEAT_CAPACITY", override_value=3600.0),
        Attribution("MATERIAL_CONDUCTIVITY", override_value=0.512),
        Attribution("MATERIAL_PERFUSION_RATE", override_value=0.004),
        Attribution("MATERIAL_ELECTRIC_CONDUCTIVITY", override_value=0.2),
        Attribution("MATERIAL_RELATIVE_PERMITTIVITY", override_value=43.0),
        Attribution("MWA_TISSUE_CONDUCTIVITY", override_value=1.69),
        Attribution("MATERIAL_HEAT_CAPACITY_FROZEN", override_value=1800.0),
        Attribution("MATERIAL_HEAT_CAPACITY_LIQUID", override_value=3600.0),
        Attribution("MATERIAL_CONDUCTIVITY_FROZEN", override_value=2.25),
        Attribution("MATERIAL_CONDUCTIVITY_LIQUID", override_value=0.512),
        Attribution("LATENT_HEAT_SOLIDIFICATION", override_value=250000.0),
        Attribution("SOLIDUS_TEMPERATURE", override_value=-8.0),
        Attribution("LIQUIDUS_TEMPERATURE", override_value=-1.0),
    )
    entities.append(
        ContextSpec(id="liver-phantom", organ="liver", attributions=liver_attrs)
    )

    entities += [
        ProtocolSpec(
            id="rfa-staged",
            modality="RFA",
            algorithms=(
                AlgorithmDef("power",
                             ("time", "power", "temperature_avg",
                              "tine_temperature_min", "impedance"),
                             RFA_PROTOCOL),
            ),
        ),
        ProtocolSpec(
            id="mwa-constant",
            modality="MWA",
            algorithms=(
                AlgorithmDef("power", ("time", "power", "temperature_avg"),
                             MWA_PROTOCOL),
            ),
            attributions=(),
        ),
        ProtocolSpec(
            id="cryo-single-freeze",
            modality="CRYO",
            algorithms=(
                AlgorithmDef("flow_rate", ("time", "flow_rate"), CRYO_PROTOCOL),
            ),
        ),
        ProtocolSpec(id="ire-sequential", modality="IRE", algorithms=()),
    ]

    common_regions = (
        RegionRequirement("organ", 1, 1),
        RegionRequirement("tumour", 0, 1),
        RegionRequirement("vessels", 0, 4),
    )
    entities += [
        NumericalModelSpec(
            id="rfa-gaussian-staged",
            family="bioheat_rfa",
            required_regions=common_regions,
            attributions=(
                Attribution("CELL_DEATH_RATE_TEMPERATURE", override_value=40.5,
                            editable="optional"),
                Attribution("MAX_DURATION", override_value=600.0,
                            editable="optional"),
                Attribution("PERFUSION_MODE", override_value="paper"),
            ),
            result_spec=ResultSpec("death_fraction", 0.8, "ge"),
        ),
        NumericalModelSpec(
            id="mwa-axisym-coupled",
            family="bioheat_mwa",
            required_regions=common_regions,
            attributions=(
                Attribution("CELL_DEATH_RATE_TEMPERATURE", override_value=40.5,
                            editable="optional"),
                Attribution("MAX_DURATION", override_value=240.0,
                            editable="optional"),
                # the printed deposition formula is linear in the field and
                # deposits too little total power to form a lesion; the demo
                # model uses the conventional quadratic form
                Attribution("MWA_SAR_MODE", override_value="standard"),
                Attribution("MWA_SLEEVE_PERMITTIVITY", override_value=43.0),
            ),
            result_spec=ResultSpec("death_fraction", 0.8, "ge"),
        ),
        NumericalModelSpec(
            id="cryo-capacity",
            family="cryo_effective_capacity",
            required_regions=common_regions,
            attributions=(
                Attribution("CRYO_LESION_ISOTHERM", override_value=-20.0,
                            editable="optional", widget_hint="number_box"),
                Attribution("MAX_DURATION", override_value=120.0,
                            editable="optional"),
            ),
            result_spec=ResultSpec("temperature_min", -20.0, "le"),
        ),
        NumericalModelSpec(
            id="ire-max-field",
            family="ire_potential",
            required_regions=common_regions,
            attributions=(
                Attribution("CONSTANT_IRE_FIELD_THRESHOLD", override_value=50000.0,
                            editable="optional", widget_hint="number_box"),
                Attribution("IRE_CONDUCTIVITY_BETA", override_value=0.0),
            ),
            result_spec=ResultSpec("e_max", 50000.0, "ge"),
        ),
    ]

    entities += [
        Combination(
            id="demo-rfa", context="liver-phantom",
            power_generator="rfa-generator", protocol="rfa-staged",
            numerical_model="rfa-gaussian-staged",
            allowed_needles=("umbrella-9",), public=True,
        ),
        Combination(
            id="demo-mwa", context="liver-phantom",
            power_generator="mwa-generator", protocol="mwa-constant",
            numerical_model="mwa-axisym-coupled",
            allowed_needles=("mwa-applicator",), public=True,
        ),
        Combination(
            id="demo-cryo", context="liver-phantom",
            power_generator="cryo-generator", protocol="cryo-single-freeze",
            numerical_model="cryo-capacity",
            allowed_needles=("cryo-probe",), public=True,
        ),
        Combination(
            id="demo-ire", context="liver-phantom",
            power_generator="ire-generator", protocol="ire-sequential",
            numerical_model="ire-max-field",
            allowed_needles=("ire-electrode",), public=True,
        ),
    ]

    entities.append(
        PhantomSpec(
            id="demo-liver",
            dims=(64, 64, 64),
            spacing=0.001,
            origin=(0.0, 0.0, 0.0),
            regions=(
                PhantomRegion("organ", "organ", PhantomShape(
                    "sphere", centre=(0.032, 0.032, 0.032), radius=0.028)),
                PhantomRegion("tumour", "tumour", PhantomShape(
                    "sphere", centre=(0.032, 0.032, 0.030), radius=0.008)),
                PhantomRegion("portal-vein", "vessels", PhantomShape(
                    "cylinder", start=(0.048, 0.032, 0.006),
                    end=(0.048, 0.032, 0.058), radius=0.0025)),
            ),
        )
    )
    return entities


def install_demo_store(root: Path) -> EntityStore:
    """Write the demo entities into a fresh store at `root`."""
    store = EntityStore(root)
    for entity in demo_entities():
        store.put(entity)
    return store


def demo_store_path() -> Path:
    """Location of the packaged read-only demo store."""
    return Path(resources.files("ablasim") / "data")


def demo_store() -> EntityStore:
    return EntityStore(demo_store_path())


def regenerate_packaged_store() -> Path:
    """Rebuild the packaged data directory from demo_entities()."""
    root = demo_store_path()
    entities_dir = root / "entities"
    if entities_dir.exists():
        shutil.rmtree(entities_dir)
    install_demo_store(root)
    return root
