"""Radiofrequency ablation: empirical Gaussian deposition, thermocouple
feedback, PID-governed power and staged protocol execution.

Heat deposition is a sum of Gaussians centred on the tine tips, normalized
so the discrete volume integral equals the requested power exactly (split
equally across centres). The protocol program stages power and tine
extension; a PID controller on the hottest-tine temperature trims the staged
power multiplicatively toward the target temperature.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .domain import DomainError
from .grid import ScalarField, VoxelGrid, isovolume, tine_tip_points
from .protocol import EvalContext, ProtocolProgram, tick
from .thermal import BioheatState, CellDeathParams, StabilityError, stability_bound, step_bioheat


class RfaError(DomainError):
    pass


class ProtocolTimeout(RfaError):
    def __init__(self, limit: float):
        super().__init__(f"protocol did not END within MAX_DURATION={limit:g}s")
        self.limit = limit


def gaussian_deposition(
    centers: Sequence[Sequence[float]],
    total_power: float,
    sigma: float,
    grid: VoxelGrid,
) -> np.ndarray:
    """Q(x) = sum_i a_i exp(-|x - c_i|^2 / (2 sigma^2)), W/m^3.

    Each centre carries total_power / n, with a_i normalized against its own
    discrete sum so the voxel integral of Q equals total_power to rounding.
    """
    if len(centers) == 0:
        raise RfaError("gaussian deposition needs at least one centre")
    if sigma <= 0:
        raise RfaError("gaussian width must be positive")
    if total_power < 0:
        raise RfaError("power must be >= 0")
    x, y, z = grid.centers()
    q = np.zeros(grid.dims)
    share = total_power / len(centers)
    inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma)
    for c in centers:
        r2 = (x - c[0]) ** 2 + (y - c[1]) ** 2 + (z - c[2]) ** 2
        kernel = np.exp(-r2 * inv_two_sigma2)
        weight = float(kernel.sum()) * grid.voxel_volume
        if weight == 0.0:
            raise RfaError(f"gaussian centre {tuple(c)} deposits nothing on the grid")
        q += (share / weight) * kernel
    return q


@dataclass
class PidController:
    """Positional PID with derivative-on-measurement and conditional
    anti-windup (the integrator freezes while the output is clamped and the
    error would push it further into the clamp)."""

    k_p: float
    k_i: float
    k_d: float
    setpoint: float
    output_min: float = 0.0
    output_max: float = math.inf
    integral: float = 0.0
    previous_measurement: Optional[float] = None

    def __post_init__(self):
        if not (self.output_min <= self.output_max):
            raise RfaError("PID clamp bounds out of order")
        for gain in (self.k_p, self.k_i, self.k_d):
            if not math.isfinite(gain):
                raise RfaError("PID gains must be finite")

    def step(self, measured: float, dt: float) -> float:
        if dt <= 0:
            raise RfaError("PID step needs dt > 0")
        error = self.setpoint - measured
        if self.previous_measurement is None:
            derivative = 0.0
        else:
            derivative = -(measured - self.previous_measurement) / dt
        unclamped = (
            self.k_p * error
            + self.k_i * (self.integral + error * dt)
            + self.k_d * derivative
        )
        output = min(max(unclamped, self.output_min), self.output_max)
        saturated_high = unclamped > self.output_max and error > 0
        saturated_low = unclamped < self.output_min and error < 0
        if not (saturated_high or saturated_low):
            self.integral += error * dt
        self.previous_measurement = measured
        return output


def pid_step(controller: PidController, measured: float, dt: float) -> float:
    return controller.step(measured, dt)


@dataclass
class RfaHistoryRow:
    time: float
    phase: int
    power: float
    temperature_avg: float
    tine_temperature_min: float
    lesion_voxels: int


@dataclass
class RfaRunResult:
    state: BioheatState
    lesion: np.ndarray
    history: list[RfaHistoryRow]
    tine_tips: tuple[tuple[float, float, float], ...]
    terminated_by_protocol: bool


def history_csv(history: Sequence[RfaHistoryRow]) -> str:
    out = io.StringIO()
    out.write("time_s,phase,power_w,temperature_avg_c,tine_temperature_min_c,"
              "lesion_voxels\n")
    for row in history:
        out.write(
            f"{row.time:.3f},{row.phase},{row.power:.6f},"
            f"{row.temperature_avg:.6f},{row.tine_temperature_min:.6f},"
            f"{row.lesion_voxels}\n"
        )
    return out.getvalue()


def trilinear_sample(field: np.ndarray, grid: VoxelGrid, point: Sequence[float]) -> float:
    """Trilinear interpolation of a voxel-centred field at a world point."""
    coords = []
    for axis in range(3):
        u = (point[axis] - grid.origin[axis]) / grid.spacing - 0.5
        u = min(max(u, 0.0), grid.dims[axis] - 1.0)
        coords.append(u)
    i0 = [int(math.floor(u)) for u in coords]
    i1 = [min(i + 1, grid.dims[a] - 1) for a, i in enumerate(i0)]
    f = [coords[a] - i0[a] for a in range(3)]
    value = 0.0
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                weight = (
                    (f[0] if dx else 1.0 - f[0])
                    * (f[1] if dy else 1.0 - f[1])
                    * (f[2] if dz else 1.0 - f[2])
                )
                value += weight * float(
                    field[(i1 if dx else i0)[0], (i1 if dy else i0)[1],
                          (i1 if dz else i0)[2]]
                )
    return value


TICK_SECONDS = 1.0


@dataclass
class RfaSetup:
    """Everything a staged RFA run needs besides the thermal state."""

    tip: tuple[float, float, float]
    entry: tuple[float, float, float]
    tine_count: int
    max_tine_extension: float
    gaussian_sigma: float
    program: ProtocolProgram
    death: CellDeathParams
    pid: PidController
    max_power: float
    max_duration: float = 3600.0
    initial_power: float = 0.0
    initial_extension: float = 1.0
    impedance: float = 0.0
    parameters: dict[str, float] = field(default_factory=dict)
    perfusion_mode: str = "paper"


def run_rfa(
    setup: RfaSetup,
    state: BioheatState,
    organ_mask: Optional[np.ndarray] = None,
    on_tick: Optional[Callable[[RfaHistoryRow], None]] = None,
) -> RfaRunResult:
    """Execute the staged protocol until it ENDs.

    Per one-second tick: sample tine-tip thermocouples, evaluate the protocol
    rules, rebuild the deposition if the extension changed, trim the staged
    power by the PID factor, then fill the tick with stable bioheat and cell
    death substeps. The lesion is the death-threshold isovolume restricted to
    the organ.
    """
    grid = state.grid
    extension = setup.initial_extension
    power = setup.initial_power
    tips = tine_tip_points(
        setup.tip, setup.entry, setup.tine_count,
        setup.max_tine_extension, extension,
    )
    deposition_shape = gaussian_deposition(tips, 1.0, setup.gaussian_sigma, grid)

    rho, c, k, _ = state.property_fields()
    dt_bound = stability_bound(grid.spacing, float((rho * c).min()), float(k.max()))
    substeps = max(1, int(math.ceil(TICK_SECONDS / (0.9 * dt_bound))))
    dt = TICK_SECONDS / substeps

    history: list[RfaHistoryRow] = []
    phase = 0
    terminated = False
    time = 0.0
    while time < setup.max_duration:
        tip_temps = [trilinear_sample(state.temperature, grid, p) for p in tips]
        variables = {
            "power": power,
            "extension": extension,
            "temperature_avg": float(np.mean(tip_temps)),
            "temperature_max": float(np.max(tip_temps)),
            "tine_temperature_min": float(np.min(tip_temps)),
            "impedance": setup.impedance,
        }
        ctx = EvalContext(
            variables=variables,
            parameters=setup.parameters,
            phase=phase,
            time=time,
        )
        result = tick(setup.program, ctx)
        phase = result.phase
        staged_power = float(result.variables.get("power", power))
        new_extension = float(result.variables.get("extension", extension))
        if new_extension != extension:
            extension = min(max(new_extension, 0.0), 1.0)
            tips = tine_tip_points(
                setup.tip, setup.entry, setup.tine_count,
                setup.max_tine_extension, extension,
            )
            deposition_shape = gaussian_deposition(
                tips, 1.0, setup.gaussian_sigma, grid
            )
        trim = setup.pid.step(variables["temperature_max"], TICK_SECONDS)
        power = min(max(staged_power, 0.0), setup.max_power) * trim

        if result.terminated:
            terminated = True
            break

        q_inst = deposition_shape * power
        for _ in range(substeps):
            state = step_bioheat(
                state, q_inst, dt, death=setup.death,
                perfusion_mode=setup.perfusion_mode,
            )
        time = state.time

        lesion_now = isovolume(
            ScalarField(grid, state.dead, "death_fraction"),
            setup.death.d_threshold, "ge", restrict_to=organ_mask,
        )
        row = RfaHistoryRow(
            time=time,
            phase=phase,
            power=power,
            temperature_avg=variables["temperature_avg"],
            tine_temperature_min=variables["tine_temperature_min"],
            lesion_voxels=int(lesion_now.sum()),
        )
        history.append(row)
        if on_tick is not None:
            on_tick(row)

    if not terminated:
        raise ProtocolTimeout(setup.max_duration)

    lesion = isovolume(
        ScalarField(grid, state.dead, "death_fraction"),
        setup.death.d_threshold, "ge", restrict_to=organ_mask,
    )
    return RfaRunResult(
        state=state,
        lesion=lesion,
        history=history,
        tine_tips=tips,
        terminated_by_protocol=terminated,
    )
