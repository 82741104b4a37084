"""Numerical-model families: translate a simulation definition into solver
inputs, run it, and write artifacts.

A family pairs a runner entry point with the translation from definition
parameters/regions/needles to solver state. The four built-in families are
bioheat_rfa, bioheat_mwa, cryo_effective_capacity and ire_potential. Runners
write artifacts into a working directory and report progress through a
callback (at least every simulated 10%).
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .domain import DomainError
from .em import (
    AxisymGrid,
    AxisymMaterials,
    CoaxPort,
    Pairing,
    ire_protocol_lesion,
    revolve_to_grid,
    sar_from_field,
    solve_mwa_field,
)
from .formats import read_mask, write_field, write_mask
from .grid import (
    NeedleRaster,
    RegionLabels,
    ScalarField,
    VoxelGrid,
    build_phantom,
    isovolume,
    rasterize_needle,
)
from .protocol import EvalContext, link_program, parse_protocol, tick
from .rfa import PidController, RfaSetup, history_csv, run_rfa, trilinear_sample
from .simdef import SimulationDefinition, param, region_index
from .thermal import (
    BioheatState,
    CellDeathParams,
    CryoMaterial,
    Material,
    cryo_effective_properties,
    stability_bound,
    step_bioheat,
    step_cryo,
)

ProgressFn = Callable[[float, str], None]


class FamilyError(DomainError):
    pass


class UnknownFamilyError(FamilyError):
    def __init__(self, family: str):
        super().__init__(f"no registered numerical-model family {family!r}")
        self.family = family


def _silent_progress(percent: float, message: str) -> None:
    pass


def get(defn: SimulationDefinition, name: str, default=None):
    if name in defn.parameters:
        return defn.parameters[name]
    if default is None:
        raise FamilyError(f"definition is missing required parameter {name}")
    return default


def build_grid(defn: SimulationDefinition) -> VoxelGrid:
    dims = get(defn, "SIMULATION_DOMAIN_DIMS")
    spacing = get(defn, "SIMULATION_DOMAIN_SPACING")
    origin = get(defn, "SIMULATION_DOMAIN_ORIGIN", [0.0, 0.0, 0.0])
    return VoxelGrid(
        dims=tuple(int(round(d)) for d in dims),
        spacing=float(spacing),
        origin=tuple(origin),
    )


def build_labels(
    defn: SimulationDefinition, grid: VoxelGrid, base_dir: Optional[Path]
) -> RegionLabels:
    """Region labels in document order (idx from 1); mask payloads resolve
    relative to the definition file's directory."""
    labels = np.zeros(grid.dims, dtype=np.int32)
    warnings: list[str] = []
    for region in region_index(defn):
        payload = region.payload
        if payload.kind == "mask":
            if base_dir is None:
                raise FamilyError(
                    f"region {region.name!r} references a mask file but the "
                    "definition has no base directory"
                )
            mask, mask_grid = read_mask(base_dir / payload.path)
            if mask_grid.dims != grid.dims:
                raise FamilyError(
                    f"mask {payload.path!r} dims {mask_grid.dims} != domain "
                    f"{grid.dims}"
                )
        else:
            result = build_phantom([(region.name, payload.shape)], grid)
            mask = result.labels == 1
            warnings.extend(result.warnings)
        labels[mask] = region.idx
    return RegionLabels(grid=grid, labels=labels, warnings=tuple(warnings))


def organ_mask(defn: SimulationDefinition, labels: RegionLabels) -> Optional[np.ndarray]:
    organ_regions = [r.idx for r in region_index(defn) if r.group == "organ"]
    if not organ_regions:
        return None
    return labels.mask_of(organ_regions)


def tissue_material(defn: SimulationDefinition) -> Material:
    return Material(
        rho=float(get(defn, "MATERIAL_DENSITY", 1060.0)),
        c=float(get(defn, "MATERIAL_HEAT_CAPACITY", 3600.0)),
        k=float(get(defn, "MATERIAL_CONDUCTIVITY", 0.512)),
        nu=float(get(defn, "MATERIAL_PERFUSION_RATE", 0.0)),
    )


def death_params(defn: SimulationDefinition) -> CellDeathParams:
    return CellDeathParams(
        k_forward=float(get(defn, "CELL_DEATH_FORWARD_RATE", 0.00333)),
        k_backward=float(get(defn, "CELL_DEATH_BACKWARD_RATE", 0.00777)),
        t_k=float(get(defn, "CELL_DEATH_RATE_TEMPERATURE")),
        d_threshold=float(get(defn, "CELL_DEATH_THRESHOLD", 0.8)),
        a_initial=float(get(defn, "CELL_DEATH_INITIAL_ALIVE", 0.99)),
    )


def initial_state(
    defn: SimulationDefinition, grid: VoxelGrid, labels: RegionLabels
) -> BioheatState:
    death = None
    try:
        death = death_params(defn)
    except FamilyError:
        pass
    return BioheatState.uniform(
        grid,
        tissue_material(defn),
        t_body=float(get(defn, "BODY_TEMPERATURE", 37.0)),
        a_initial=death.a_initial if death else 0.99,
        labels=labels.labels,
        blood_rho=float(get(defn, "BLOOD_DENSITY", 1060.0)),
        blood_c=float(get(defn, "BLOOD_HEAT_CAPACITY", 3600.0)),
    )


def needle_rasters(
    defn: SimulationDefinition, grid: VoxelGrid, extension: float = 0.0
) -> list[NeedleRaster]:
    rasters = []
    for needle in defn.needles:
        params = needle.parameters
        rasters.append(
            rasterize_needle(
                needle.tip,
                needle.entry,
                needle.klass,
                grid,
                shaft_radius=float(params.get("NEEDLE_SHAFT_RADIUS", 0.001)),
                active_length=float(params.get("NEEDLE_ACTIVE_LENGTH", 0.0)),
                tine_count=int(params.get("NEEDLE_TINE_COUNT", 0)),
                max_tine_extension=float(params.get("NEEDLE_MAX_TINE_EXTENSION", 0.0)),
                extension_fraction=extension,
            )
        )
    return rasters


def select_program(defn: SimulationDefinition, result: str):
    """Parse and link the protocol algorithm producing `result`, or None."""
    for algo in defn.algorithms:
        if algo.result == result:
            program = parse_protocol(algo.body)
            link_program(program, algo.arguments, tuple(defn.parameters))
            return program
    return None


def lesion_rule(defn: SimulationDefinition) -> tuple[str, float, str]:
    return (
        str(get(defn, "LESION_FIELD", "death_fraction")),
        float(get(defn, "LESION_THRESHOLD", 0.8)),
        str(get(defn, "LESION_DIRECTION", "ge")),
    )


def run_duration(defn: SimulationDefinition, fallback: float) -> float:
    if defn.duration is not None:
        return float(defn.duration)
    return float(get(defn, "MAX_DURATION", fallback))


# --- RFA ---------------------------------------------------------------------


def run_rfa_family(
    defn: SimulationDefinition,
    workdir: Path,
    progress: ProgressFn = _silent_progress,
    base_dir: Optional[Path] = None,
) -> list[str]:
    grid = build_grid(defn)
    labels = build_labels(defn, grid, base_dir)
    if len(defn.needles) != 1:
        raise FamilyError("the staged RFA family drives exactly one needle")
    needle = defn.needles[0]
    if needle.klass != "extensible_tines":
        raise FamilyError("the staged RFA family needs an extensible-tine needle")

    program = select_program(defn, "power")
    if program is None:
        raise FamilyError("RFA definition has no protocol algorithm for power")

    max_power = float(get(defn, "RFA_MAX_POWER", 150.0))
    pid = PidController(
        k_p=float(get(defn, "RFA_PID_KP", 0.05)),
        k_i=float(get(defn, "RFA_PID_KI", 0.005)),
        k_d=float(get(defn, "RFA_PID_KD", 0.0)),
        setpoint=float(get(defn, "RFA_TARGET_TEMPERATURE", 105.0)),
        output_min=0.0,
        output_max=1.0,
    )
    setup = RfaSetup(
        tip=needle.tip,
        entry=needle.entry,
        tine_count=int(needle.parameters["NEEDLE_TINE_COUNT"]),
        max_tine_extension=float(needle.parameters["NEEDLE_MAX_TINE_EXTENSION"]),
        gaussian_sigma=float(needle.parameters.get("RFA_GAUSSIAN_SIGMA",
                                                   get(defn, "RFA_GAUSSIAN_SIGMA", 0.004))),
        program=program,
        death=death_params(defn),
        pid=pid,
        max_power=max_power,
        max_duration=run_duration(defn, 3600.0),
        initial_extension=0.0,
        impedance=float(get(defn, "CONSTANT_IMPEDANCE", 0.0)),
        parameters={
            name: float(value)
            for name, value in defn.parameters.items()
            if isinstance(value, (int, float)) and not isinstance(value, bool)
        },
        perfusion_mode=str(get(defn, "PERFUSION_MODE", "paper")),
    )
    state = initial_state(defn, grid, labels)
    restrict = organ_mask(defn, labels)

    duration = setup.max_duration
    last_percent = -10.0

    def on_tick(row):
        nonlocal last_percent
        percent = min(99.0, 100.0 * row.time / duration)
        if percent - last_percent >= 10.0:
            last_percent = percent
            progress(percent, f"t={row.time:.0f}s power={row.power:.1f}W")

    result = run_rfa(setup, state, organ_mask=restrict, on_tick=on_tick)

    write_mask(workdir / "lesion.gsmask", result.lesion, grid)
    write_field(workdir / "temperature.gsfld",
                ScalarField(grid, result.state.temperature, "temperature"))
    write_field(workdir / "death_fraction.gsfld",
                ScalarField(grid, result.state.dead, "death_fraction"))
    (workdir / "history.csv").write_text(history_csv(result.history))
    progress(100.0, "staged protocol ended")
    return ["lesion.gsmask", "temperature.gsfld", "death_fraction.gsfld",
            "history.csv"]


# --- MWA ---------------------------------------------------------------------


def _axisym_materials(
    defn: SimulationDefinition,
    axgrid: AxisymGrid,
    shaft_radius: float,
    sigma_base: float,
    temperature_at: Optional[Callable[[float, float], float]] = None,
) -> AxisymMaterials:
    nr, nz = axgrid.nr, axgrid.nz
    eps_tissue = float(get(defn, "MATERIAL_RELATIVE_PERMITTIVITY", 43.0))
    slope = float(get(defn, "MWA_SIGMA_SLOPE", 0.0))
    sleeve = float(get(defn, "MWA_SLEEVE_THICKNESS", 0.0005))
    eps = np.full((nr, nz), eps_tissue)
    sigma = np.full((nr, nz), sigma_base)
    if slope != 0.0 and temperature_at is not None:
        r = axgrid.r
        z = axgrid.z
        for i in range(nr):
            for j in range(nz):
                t = temperature_at(r[i], z[j])
                sigma[i, j] = max(sigma_base * (1.0 + slope * (t - 37.0)), 0.0)
    shield = (axgrid.r[:, None] <= shaft_radius + sleeve) & (
        axgrid.z[None, :] >= -sleeve
    )
    eps = np.where(shield, float(get(defn, "MWA_SLEEVE_PERMITTIVITY", eps_tissue)), eps)
    sigma = np.where(shield, 0.0, sigma)
    return AxisymMaterials(eps, sigma, np.ones((nr, nz)))


def run_mwa_family(
    defn: SimulationDefinition,
    workdir: Path,
    progress: ProgressFn = _silent_progress,
    base_dir: Optional[Path] = None,
) -> list[str]:
    grid = build_grid(defn)
    labels = build_labels(defn, grid, base_dir)
    if len(defn.needles) != 1:
        raise FamilyError("the MWA family drives exactly one applicator")
    needle = defn.needles[0]
    shaft_radius = float(needle.parameters.get("NEEDLE_SHAFT_RADIUS", 0.0012))

    frequency = float(get(defn, "CONSTANT_MWA_FREQUENCY"))
    sar_mode = str(get(defn, "MWA_SAR_MODE", "paper"))
    sigma37 = float(get(defn, "MWA_TISSUE_CONDUCTIVITY", 1.69))
    ax_spacing = float(get(defn, "MWA_AXISYM_SPACING", grid.spacing / 2.0))
    nr = int(get(defn, "MWA_AXISYM_NR", 64))
    nz = int(get(defn, "MWA_AXISYM_NZ", 96))
    axgrid = AxisymGrid(nr=nr, nz=nz, spacing=ax_spacing,
                        z_min=-nz * ax_spacing / 3.0)
    port = CoaxPort(
        inner_radius=float(get(defn, "MWA_COAX_INNER_RADIUS", 0.0003)),
        outer_radius=float(get(defn, "MWA_COAX_OUTER_RADIUS", 0.001)),
        offset_from_tip=float(get(defn, "MWA_PORT_OFFSET", 0.005)),
        slot_height=float(get(defn, "MWA_SLOT_HEIGHT", 0.004)),
    )
    refresh = int(get(defn, "MWA_FIELD_REFRESH_STEPS", 0))  # 0: solve once

    state = initial_state(defn, grid, labels)
    death = death_params(defn)
    restrict = organ_mask(defn, labels)
    program = select_program(defn, "power")
    duration = run_duration(defn, 240.0)

    tip = np.asarray(needle.tip)
    entry = np.asarray(needle.entry)
    axis = entry - tip
    axis = axis / np.linalg.norm(axis)
    helper = np.array([1.0, 0.0, 0.0])
    if abs(float(axis @ helper)) > 0.9:
        helper = np.array([0.0, 1.0, 0.0])
    perp = np.cross(axis, helper)
    perp /= np.linalg.norm(perp)

    def solve_unit_sar(current_state: BioheatState) -> np.ndarray:
        """Unit-power SAR on the 3D grid for the current temperature field."""

        def temperature_at(r_c: float, z_c: float) -> float:
            point = tip + z_c * axis + r_c * perp
            clipped = [
                min(max(point[a], grid.origin[a] + 1e-9),
                    grid.origin[a] + grid.dims[a] * grid.spacing - 1e-9)
                for a in range(3)
            ]
            return trilinear_sample(current_state.temperature, grid, clipped)

        materials = _axisym_materials(
            defn, axgrid, shaft_radius, sigma37,
            temperature_at if refresh else None,
        )
        solution = solve_mwa_field(
            axgrid, materials, frequency, 1.0, port, shaft_radius
        )
        q_ax = sar_from_field(
            solution, materials.sigma,
            eps_r=materials.eps_r if sar_mode == "standard" else None,
            mode=sar_mode,
        )
        return revolve_to_grid(q_ax, axgrid, grid, needle.tip, needle.entry)

    unit_sar = solve_unit_sar(state)

    def scale_for_power(power: float) -> float:
        if power <= 0.0:
            return 0.0
        # the field scales with sqrt(power): the printed deposition is linear
        # in the field, the standard one quadratic
        return math.sqrt(power) if sar_mode == "paper" else power

    rho, c, k, _ = state.property_fields()
    dt_bound = stability_bound(grid.spacing, float((rho * c).min()), float(k.max()))
    substeps = max(1, int(math.ceil(1.0 / (0.9 * dt_bound))))
    dt = 1.0 / substeps

    power = 0.0
    phase = 0
    terminated = False
    history = io.StringIO()
    history.write("time_s,phase,power_w,temperature_avg_c,temperature_max_c,"
                  "lesion_voxels\n")
    last_percent = -10.0
    step_count = 0
    while state.time < duration:
        in_organ = restrict if restrict is not None else np.ones(grid.dims, bool)
        t_avg = float(state.temperature[in_organ].mean())
        t_max = float(state.temperature[in_organ].max())
        if program is not None:
            ctx = EvalContext(
                variables={"power": power, "temperature_avg": t_avg,
                           "temperature_max": t_max,
                           "impedance": float(get(defn, "CONSTANT_IMPEDANCE", 0.0))},
                parameters={
                    name: float(value)
                    for name, value in defn.parameters.items()
                    if isinstance(value, (int, float)) and not isinstance(value, bool)
                },
                phase=phase,
                time=state.time,
            )
            result = tick(program, ctx)
            phase = result.phase
            power = float(result.variables.get("power", power))
            if result.terminated:
                terminated = True
                break
        else:
            power = float(get(defn, "CONSTANT_INPUT_POWER", 0.0))

        if refresh and step_count > 0 and step_count % refresh == 0:
            unit_sar = solve_unit_sar(state)
        q_inst = unit_sar * scale_for_power(power)
        for _ in range(substeps):
            state = step_bioheat(
                state, q_inst, dt, death=death,
                perfusion_mode=str(get(defn, "PERFUSION_MODE", "paper")),
            )
        step_count += 1

        lesion_now = isovolume(
            ScalarField(grid, state.dead, "death_fraction"),
            death.d_threshold, "ge", restrict_to=restrict,
        )
        history.write(
            f"{state.time:.3f},{phase},{power:.6f},{t_avg:.6f},{t_max:.6f},"
            f"{int(lesion_now.sum())}\n"
        )
        percent = min(99.0, 100.0 * state.time / duration)
        if percent - last_percent >= 10.0:
            last_percent = percent
            progress(percent, f"t={state.time:.0f}s power={power:.1f}W")

    field_name, threshold, direction = lesion_rule(defn)
    lesion = isovolume(
        ScalarField(grid, state.dead, "death_fraction"), threshold, direction,
        restrict_to=restrict,
    )
    write_mask(workdir / "lesion.gsmask", lesion, grid)
    write_field(workdir / "temperature.gsfld",
                ScalarField(grid, state.temperature, "temperature"))
    write_field(workdir / "death_fraction.gsfld",
                ScalarField(grid, state.dead, "death_fraction"))
    write_field(workdir / "sar.gsfld", ScalarField(grid, unit_sar, "sar_unit_power"))
    (workdir / "history.csv").write_text(history.getvalue())
    progress(100.0, "protocol ended" if terminated else "duration reached")
    return ["lesion.gsmask", "temperature.gsfld", "death_fraction.gsfld",
            "sar.gsfld", "history.csv"]


# --- cryoablation -------------------------------------------------------------


def _flow_to_temperature(flow: float, table: Sequence[float]) -> float:
    """Piecewise-linear lookup through flattened (flow, temperature) pairs."""
    if len(table) < 2 or len(table) % 2 != 0:
        raise FamilyError("flow/temperature map needs flattened (flow, C) pairs")
    points = sorted(
        (float(table[i]), float(table[i + 1])) for i in range(0, len(table), 2)
    )
    if flow <= points[0][0]:
        return points[0][1]
    for (f0, t0), (f1, t1) in zip(points, points[1:]):
        if flow <= f1:
            if f1 == f0:
                return t1
            return t0 + (t1 - t0) * (flow - f0) / (f1 - f0)
    return points[-1][1]


def run_cryo_family(
    defn: SimulationDefinition,
    workdir: Path,
    progress: ProgressFn = _silent_progress,
    base_dir: Optional[Path] = None,
) -> list[str]:
    grid = build_grid(defn)
    labels = build_labels(defn, grid, base_dir)
    if not defn.needles:
        raise FamilyError("the cryoablation family needs at least one probe")
    rasters = needle_rasters(defn, grid)
    probe_mask = np.zeros(grid.dims, dtype=bool)
    for raster in rasters:
        probe_mask |= raster.shaft

    material = CryoMaterial(
        c_solid=float(get(defn, "MATERIAL_HEAT_CAPACITY_FROZEN", 1800.0)),
        c_liquid=float(get(defn, "MATERIAL_HEAT_CAPACITY_LIQUID", 3600.0)),
        k_solid=float(get(defn, "MATERIAL_CONDUCTIVITY_FROZEN", 2.25)),
        k_liquid=float(get(defn, "MATERIAL_CONDUCTIVITY_LIQUID", 0.512)),
        latent_heat=float(get(defn, "LATENT_HEAT_SOLIDIFICATION", 250000.0)),
        t_solidus=float(get(defn, "SOLIDUS_TEMPERATURE", -8.0)),
        t_liquidus=float(get(defn, "LIQUIDUS_TEMPERATURE", -1.0)),
    )
    isotherm = float(get(defn, "CRYO_LESION_ISOTHERM"))
    flow_tables = [
        needle.parameters.get("CRYO_FLOW_TEMPERATURE_MAP",
                              get(defn, "CRYO_FLOW_TEMPERATURE_MAP",
                                  [0.0, 37.0, 1.0, -150.0]))
        for needle in defn.needles
    ]
    program = select_program(defn, "flow_rate")
    duration = run_duration(defn, 120.0)

    state = initial_state(defn, grid, labels)
    restrict = organ_mask(defn, labels)
    min_temperature = state.temperature.copy()

    rho = float(get(defn, "MATERIAL_DENSITY", 1060.0))
    c_min = min(material.c_solid, material.c_liquid)
    k_max = max(
        material.k_solid, material.k_liquid,
        float(cryo_effective_properties(
            np.array([(material.t_solidus + material.t_liquidus) / 2]),
            material)[1][0]),
    )
    dt_bound = stability_bound(grid.spacing, rho * c_min, k_max)
    substeps = max(1, int(math.ceil(1.0 / (0.9 * dt_bound))))
    dt = 1.0 / substeps

    flow = 0.0
    phase = 0
    terminated = False
    history = io.StringIO()
    history.write("time_s,phase,flow_rate,probe_temperature_c,min_organ_c,"
                  "lesion_voxels\n")
    last_percent = -10.0
    while state.time < duration:
        if program is not None:
            in_organ = restrict if restrict is not None else np.ones(grid.dims, bool)
            ctx = EvalContext(
                variables={
                    "flow_rate": flow,
                    "temperature_avg": float(state.temperature[in_organ].mean()),
                    "temperature_max": float(state.temperature[in_organ].max()),
                },
                parameters={
                    name: float(value)
                    for name, value in defn.parameters.items()
                    if isinstance(value, (int, float)) and not isinstance(value, bool)
                },
                phase=phase,
                time=state.time,
            )
            result = tick(program, ctx)
            phase = result.phase
            flow = float(result.variables.get("flow_rate", flow))
            if result.terminated:
                terminated = True
                break
        probe_temp = _flow_to_temperature(flow, flow_tables[0])
        for _ in range(substeps):
            state = step_cryo(state, material, dt, probe_mask=probe_mask,
                              probe_temperature=probe_temp)
        np.minimum(min_temperature, state.temperature, out=min_temperature)

        lesion_now = isovolume(
            ScalarField(grid, min_temperature, "temperature_min"),
            isotherm, "le", restrict_to=restrict,
        )
        in_organ = restrict if restrict is not None else np.ones(grid.dims, bool)
        history.write(
            f"{state.time:.3f},{phase},{flow:.6f},{probe_temp:.6f},"
            f"{float(state.temperature[in_organ].min()):.6f},"
            f"{int(lesion_now.sum())}\n"
        )
        percent = min(99.0, 100.0 * state.time / duration)
        if percent - last_percent >= 10.0:
            last_percent = percent
            progress(percent, f"t={state.time:.0f}s probe={probe_temp:.0f}C")

    lesion = isovolume(
        ScalarField(grid, min_temperature, "temperature_min"), isotherm, "le",
        restrict_to=restrict,
    )
    write_mask(workdir / "lesion.gsmask", lesion, grid)
    write_field(workdir / "temperature.gsfld",
                ScalarField(grid, state.temperature, "temperature"))
    write_field(workdir / "min_temperature.gsfld",
                ScalarField(grid, min_temperature, "temperature_min"))
    (workdir / "history.csv").write_text(history.getvalue())
    progress(100.0, "protocol ended" if terminated else "duration reached")
    return ["lesion.gsmask", "temperature.gsfld", "min_temperature.gsfld",
            "history.csv"]


# --- IRE ----------------------------------------------------------------------


def run_ire_family(
    defn: SimulationDefinition,
    workdir: Path,
    progress: ProgressFn = _silent_progress,
    base_dir: Optional[Path] = None,
) -> list[str]:
    grid = build_grid(defn)
    labels = build_labels(defn, grid, base_dir)
    rasters = needle_rasters(defn, grid)
    if len(rasters) < 2:
        raise FamilyError("the IRE family needs at least two electrodes")

    triples = param(defn, "CONSTANT_IRE_NEEDLEPAIR_VOLTAGE")
    threshold = float(get(defn, "CONSTANT_IRE_FIELD_THRESHOLD"))
    beta = float(get(defn, "IRE_CONDUCTIVITY_BETA", 0.0))
    reversible = float(get(defn, "IRE_REVERSIBLE_THRESHOLD", 1e30))
    sigma_value = float(get(defn, "MATERIAL_ELECTRIC_CONDUCTIVITY", 0.2))
    sigma = np.full(grid.dims, sigma_value)

    def electrode(index: float) -> np.ndarray:
        i = int(round(index))
        if not (1 <= i <= len(rasters)):
            raise FamilyError(f"needle index {i} out of range in pairing table")
        raster = rasters[i - 1]
        return raster.electrode if raster.electrode is not None else raster.shaft

    pairings = []
    for anode_idx, cathode_idx, volts in triples:
        if int(round(anode_idx)) == int(round(cathode_idx)):
            raise FamilyError("pairing uses the same needle as anode and cathode")
        pairings.append(Pairing(electrode(anode_idx), electrode(cathode_idx),
                                float(volts)))
    if not pairings:
        raise FamilyError("IRE pairing table is empty")

    restrict = organ_mask(defn, labels)
    history = io.StringIO()
    history.write("pairing,anode,cathode,voltage_v,max_field_v_per_m,"
                  "lesion_voxels\n")
    total = len(pairings)
    running_max = np.zeros(grid.dims)

    def on_pairing(number: int, e_mag: np.ndarray) -> None:
        np.maximum(running_max, e_mag, out=running_max)
        lesion_now = running_max >= threshold
        if restrict is not None:
            lesion_now &= restrict
        anode_idx, cathode_idx, volts = triples[number]
        history.write(
            f"{number + 1},{int(anode_idx)},{int(cathode_idx)},{volts:.1f},"
            f"{float(e_mag.max()):.3f},{int(lesion_now.sum())}\n"
        )
        progress(100.0 * (number + 1) / (total + 1),
                 f"pairing {number + 1}/{total}")

    lesion, e_max, _ = ire_protocol_lesion(
        sigma, pairings, threshold, grid.spacing, organ_mask=restrict,
        beta=beta, reversible_threshold=reversible, on_pairing=on_pairing,
    )
    write_mask(workdir / "lesion.gsmask", lesion, grid)
    write_field(workdir / "e_max.gsfld", ScalarField(grid, e_max, "e_max"))
    (workdir / "history.csv").write_text(history.getvalue())
    progress(100.0, "pairing sequence complete")
    return ["lesion.gsmask", "e_max.gsfld", "history.csv"]


# --- registry -----------------------------------------------------------------


@dataclass(frozen=True)
class Family:
    """A named solver entry: module-qualified runner + human description."""

    name: str
    runner: str  # dotted "module:function" path resolved in the worker
    description: str = ""


BUILTIN_FAMILIES = {
    "bioheat_rfa": Family(
        "bioheat_rfa", "ablasim.families:run_rfa_family",
        "staged RFA with Gaussian deposition and PID-trimmed power",
    ),
    "bioheat_mwa": Family(
        "bioheat_mwa", "ablasim.families:run_mwa_family",
        "axisymmetric microwave field coupled to the bioheat model",
    ),
    "cryo_effective_capacity": Family(
        "cryo_effective_capacity", "ablasim.families:run_cryo_family",
        "freezing with the effective heat capacity method",
    ),
    "ire_potential": Family(
        "ire_potential", "ablasim.families:run_ire_family",
        "electric potential pairings with the max-field lesion rule",
    ),
}


def resolve_runner(entry: str):
    module_name, _, function_name = entry.partition(":")
    if not function_name:
        raise FamilyError(f"bad runner entry {entry!r}")
    import importlib

    module = importlib.import_module(module_name)
    try:
        return getattr(module, function_name)
    except AttributeError:
        raise FamilyError(f"runner {entry!r} not found") from None


def run_definition(
    defn: SimulationDefinition,
    workdir: Path,
    progress: ProgressFn = _silent_progress,
    base_dir: Optional[Path] = None,
    families: Optional[dict[str, Family]] = None,
) -> list[str]:
    table = families if families is not None else BUILTIN_FAMILIES
    family = table.get(defn.family)
    if family is None:
        raise UnknownFamilyError(defn.family)
    runner = resolve_runner(family.runner)
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    return runner(defn, workdir, progress, base_dir=base_dir)
