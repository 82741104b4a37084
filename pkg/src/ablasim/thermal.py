"""Bioheat conduction with perfusion, the three-state cell death model, and
the freezing (effective heat capacity) variant.

The conduction operator is a flux-form second-order central Laplacian with
harmonic-mean face conductivity across material boundaries, integrated with
explicit Euler under a hard stability guard. Temperatures are degrees
Celsius throughout; the cell death exponent e^(T/T_k) makes the temperature
scale part of the model parameters, so T_k carries no default anywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .domain import DomainError
from .grid import ScalarField, VoxelGrid


class SolverError(DomainError):
    pass


class StabilityError(SolverError):
    def __init__(self, dt: float, bound: float):
        super().__init__(
            f"dt={dt:g}s exceeds the explicit stability bound {bound:g}s"
        )
        self.dt = dt
        self.bound = bound


@dataclass(frozen=True)
class Material:
    """Per-label volumetric constants."""

    rho: float  # kg/m^3
    c: float    # J/(kg K)
    k: float    # W/(m K)
    nu: float = 0.0  # perfusion coefficient, 1/s

    def __post_init__(self):
        if self.rho <= 0 or self.c <= 0 or self.k <= 0:
            raise SolverError("material constants must be positive")
        if self.nu < 0:
            raise SolverError("perfusion coefficient must be >= 0")


@dataclass(frozen=True)
class CellDeathParams:
    """Rates of the alive/vulnerable/dead transition model."""

    k_forward: float  # 1/s
    k_backward: float  # 1/s
    t_k: float  # C, exponent scale
    d_threshold: float = 0.8
    a_initial: float = 0.99

    def __post_init__(self):
        if self.k_forward < 0 or self.k_backward < 0:
            raise SolverError("cell death rates must be >= 0")
        if self.t_k <= 0:
            raise SolverError("cell death temperature scale must be positive")
        if not (0.0 < self.d_threshold < 1.0):
            raise SolverError("death threshold must lie in (0, 1)")


@dataclass(frozen=True)
class CryoMaterial:
    """Frozen/liquid properties with a mushy transition band."""

    c_solid: float
    c_liquid: float
    k_solid: float
    k_liquid: float
    latent_heat: float  # J/kg
    t_solidus: float    # C
    t_liquidus: float   # C

    def __post_init__(self):
        if self.t_solidus >= self.t_liquidus:
            raise SolverError("solidus temperature must lie below liquidus")
        for name in ("c_solid", "c_liquid", "k_solid", "k_liquid", "latent_heat"):
            if getattr(self, name) <= 0:
                raise SolverError(f"{name} must be positive")


@dataclass
class BioheatState:
    """Temperature plus alive/dead fractions on one grid."""

    grid: VoxelGrid
    temperature: np.ndarray          # C
    alive: np.ndarray                # fraction
    dead: np.ndarray                 # fraction
    time: float = 0.0                # s
    materials: dict[int, Material] = field(default_factory=dict)
    blood_rho: float = 1060.0
    blood_c: float = 3600.0
    t_body: float = 37.0
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("temperature", "alive", "dead"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != self.grid.dims:
                raise SolverError(f"{name} shape {arr.shape} != grid {self.grid.dims}")
            setattr(self, name, arr)
        if self.labels is None:
            self.labels = np.zeros(self.grid.dims, dtype=np.int32)
        check_fractions(self.alive, self.dead)
        if not np.isfinite(self.temperature).all():
            raise SolverError("temperature must be finite")

    @classmethod
    def uniform(
        cls,
        grid: VoxelGrid,
        material: Material,
        t_body: float = 37.0,
        a_initial: float = 0.99,
        labels: Optional[np.ndarray] = None,
        materials: Optional[dict[int, Material]] = None,
        blood_rho: float = 1060.0,
        blood_c: float = 3600.0,
    ) -> "BioheatState":
        mats = dict(materials) if materials else {}
        if labels is None:
            mats.setdefault(0, material)
        else:
            for label in np.unique(labels):
                mats.setdefault(int(label), material)
        return cls(
            grid=grid,
            temperature=np.full(grid.dims, float(t_body)),
            alive=np.full(grid.dims, float(a_initial)),
            dead=np.zeros(grid.dims),
            materials=mats,
            blood_rho=blood_rho,
            blood_c=blood_c,
            t_body=t_body,
            labels=labels,
        )

    def property_fields(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(rho, c, k, nu) per voxel from the label map."""
        max_label = int(self.labels.max()) if self.labels.size else 0
        rho = np.empty(max_label + 1)
        c = np.empty(max_label + 1)
        k = np.empty(max_label + 1)
        nu = np.empty(max_label + 1)
        for label in range(max_label + 1):
            mat = self.materials.get(label)
            if mat is None:
                raise SolverError(f"no material for label {label}")
            rho[label], c[label], k[label], nu[label] = mat.rho, mat.c, mat.k, mat.nu
        lab = self.labels
        return rho[lab], c[lab], k[lab], nu[lab]


def check_fractions(alive: np.ndarray, dead: np.ndarray) -> None:
    if (alive < -1e-12).any() or (dead < -1e-12).any():
        raise SolverError("cell fractions must be >= 0")
    if (alive > 1.0 + 1e-12).any() or (dead > 1.0 + 1e-12).any():
        raise SolverError("cell fractions must be <= 1")
    if (alive + dead > 1.0 + 1e-9).any():
        raise SolverError("alive + dead must not exceed 1")


def perfusion_source(
    temperature: np.ndarray,
    dead: np.ndarray,
    nu: np.ndarray,
    blood_rho: float,
    blood_c: float,
    t_body: float,
    d_threshold: float = 0.8,
    mode: str = "paper",
) -> np.ndarray:
    """Perfusion heat source, W/m^3.

    mode="paper" applies nu*rho_b*c_b*(T_body - T) where the dead fraction is
    at or above the threshold and zero elsewhere, exactly as printed in the
    source model. mode="alive-gated" flips the gate (perfusion only in tissue
    below the threshold), matching the physical account of perfusion ceasing
    in dead tissue. The gate choice is a config switch because the printed
    inequality contradicts that account; "paper" is the default.
    """
    base = nu * blood_rho * blood_c * (t_body - np.asarray(temperature))
    if mode == "paper":
        gate = np.asarray(dead) >= d_threshold
    elif mode == "alive-gated":
        gate = np.asarray(dead) < d_threshold
    else:
        raise SolverError(f"unknown perfusion mode {mode!r}")
    return np.where(gate, base, 0.0)


def _face_conductivity(k: np.ndarray, axis: int) -> np.ndarray:
    """Harmonic-mean conductivity on interior faces along one axis."""
    lo = [slice(None)] * 3
    hi = [slice(None)] * 3
    lo[axis] = slice(None, -1)
    hi[axis] = slice(1, None)
    k_lo = k[tuple(lo)]
    k_hi = k[tuple(hi)]
    return 2.0 * k_lo * k_hi / (k_lo + k_hi)


def diffusion_flux_divergence(
    temperature: np.ndarray, k: np.ndarray, spacing: float
) -> np.ndarray:
    """div(k grad T) in flux form, W/m^3; zero-flux at the grid boundary.

    Interior face fluxes cancel pairwise in the volume sum, so the discrete
    energy budget closes exactly (up to rounding).
    """
    out = np.zeros_like(temperature)
    inv_h2 = 1.0 / (spacing * spacing)
    for axis in range(3):
        k_face = _face_conductivity(k, axis)
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        flux = k_face * (temperature[tuple(hi)] - temperature[tuple(lo)]) * inv_h2
        out[tuple(lo)] += flux
        out[tuple(hi)] -= flux
    return out


def stability_bound(spacing: float, rho_c_min: float, k_max: float) -> float:
    return spacing * spacing * rho_c_min / (6.0 * k_max)


def boundary_mask(dims: tuple[int, int, int]) -> np.ndarray:
    mask = np.ones(dims, dtype=bool)
    mask[1:-1, 1:-1, 1:-1] = False
    return mask


def step_bioheat(
    state: BioheatState,
    q_inst: Optional[np.ndarray],
    dt: float,
    death: Optional[CellDeathParams] = None,
    perfusion_mode: str = "paper",
    boundary: str = "dirichlet",
    fixed_mask: Optional[np.ndarray] = None,
    fixed_values: Optional[np.ndarray] = None,
) -> BioheatState:
    """Advance the bioheat state by one explicit step of length dt.

    boundary="dirichlet" pins the outermost voxel layer at T_body (the
    default contract); "insulated" uses the natural zero-flux closure of the
    flux-form operator, which oracle setups use to realize 1D problems.
    fixed_mask/fixed_values pin additional voxels (probe boundaries).
    Raises StabilityError rather than silently clamping dt.
    """
    rho, c, k, nu = state.property_fields()
    rho_c = rho * c
    bound = stability_bound(state.grid.spacing, float(rho_c.min()), float(k.max()))
    if dt > bound:
        raise StabilityError(dt, bound)

    temperature = state.temperature
    q_total = diffusion_flux_divergence(temperature, k, state.grid.spacing)
    if q_inst is not None:
        q_total = q_total + q_inst
    if death is not None:
        q_total = q_total + perfusion_source(
            temperature, state.dead, nu, state.blood_rho, state.blood_c,
            state.t_body, death.d_threshold, perfusion_mode,
        )

    new_t = temperature + dt * q_total / rho_c
    if boundary == "dirichlet":
        new_t[boundary_mask(state.grid.dims)] = state.t_body
    elif boundary != "insulated":
        raise SolverError(f"unknown boundary mode {boundary!r}")
    if fixed_mask is not None:
        new_t = np.where(fixed_mask, fixed_values, new_t)

    alive, dead = state.alive, state.dead
    if death is not None:
        alive, dead = step_cell_death(new_t, alive, dead, death, dt)

    return BioheatState(
        grid=state.grid,
        temperature=new_t,
        alive=alive,
        dead=dead,
        time=state.time + dt,
        materials=state.materials,
        blood_rho=state.blood_rho,
        blood_c=state.blood_c,
        t_body=state.t_body,
        labels=state.labels,
    )


MAX_SUBSTEP_CHANGE = 0.05


def _death_rates(
    t_scaled: np.ndarray, alive: np.ndarray, dead: np.ndarray,
    params: CellDeathParams,
) -> tuple[np.ndarray, np.ndarray]:
    kf = params.k_forward * t_scaled
    vulnerable = 1.0 - alive - dead
    da = -kf * (1.0 - alive) * alive + params.k_backward * vulnerable
    dd = kf * (1.0 - alive) * vulnerable
    return da, dd


def step_cell_death(
    temperature: np.ndarray,
    alive: np.ndarray,
    dead: np.ndarray,
    params: CellDeathParams,
    dt: float,
) -> tuple[np.ndarray, np.ndarray]:
    """RK4 integration of the alive/dead fractions over dt at fixed T.

    Substep counts are chosen per voxel from the closed-form rate bound
    k_f*e^(T/T_k) + k_b so no substep moves either fraction by more than
    0.05. Results are clamped onto the simplex {A, D >= 0, A + D <= 1}.
    """
    alive = np.asarray(alive, dtype=np.float64)
    dead = np.asarray(dead, dtype=np.float64)
    t_scaled = np.exp(np.asarray(temperature, dtype=np.float64) / params.t_k)

    rate_bound = params.k_forward * t_scaled + params.k_backward
    n_sub = np.maximum(1, np.ceil(dt * rate_bound / MAX_SUBSTEP_CHANGE)).astype(np.int64)
    max_sub = int(n_sub.max())
    h = dt / n_sub

    a = alive.copy()
    d = dead.copy()
    for step in range(max_sub):
        active = n_sub > step
        if not active.all():
            ha = np.where(active, h, 0.0)
        else:
            ha = h
        k1a, k1d = _death_rates(t_scaled, a, d, params)
        k2a, k2d = _death_rates(t_scaled, a + 0.5 * ha * k1a, d + 0.5 * ha * k1d, params)
        k3a, k3d = _death_rates(t_scaled, a + 0.5 * ha * k2a, d + 0.5 * ha * k2d, params)
        k4a, k4d = _death_rates(t_scaled, a + ha * k3a, d + ha * k3d, params)
        a = a + ha / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a)
        d = d + ha / 6.0 * (k1d + 2.0 * k2d + 2.0 * k3d + k4d)

    np.clip(a, 0.0, 1.0, out=a)
    np.clip(d, 0.0, 1.0, out=d)
    # clamp onto the simplex by absorbing any (rounding-level) excess into A,
    # which keeps D exactly monotone when the backward rate is zero
    np.minimum(a, 1.0 - d, out=a)
    return a, d


def cryo_effective_properties(
    temperature: np.ndarray, material: CryoMaterial, continuous_k: bool = False
) -> tuple[np.ndarray, np.ndarray]:
    """(c_eff, k_eff) for the effective heat capacity method.

    Piecewise exactly as printed, band boundaries inclusive: below the
    solidus (c_s, k_s); inside [T_s, T_l] the mushy values
    (c_s+c_l)/2 + h_sf/(2(T_l-T_s)) and k_s + (k_l-k_s)(T-T_s)/(2(T_l-T_s));
    above the liquidus (c_l, k_l). The printed k ramp reaches only the mean
    of k_s and k_l at T_l (a jump to k_l above); continuous_k=True removes
    the 1/2 factor for a continuous profile.
    """
    t = np.asarray(temperature, dtype=np.float64)
    band = material.t_liquidus - material.t_solidus
    c_mushy = 0.5 * (material.c_solid + material.c_liquid) + material.latent_heat / (
        2.0 * band
    )
    ramp = (material.k_liquid - material.k_solid) * (t - material.t_solidus) / band
    if not continuous_k:
        ramp = 0.5 * ramp
    k_mushy = material.k_solid + ramp

    in_band = (t >= material.t_solidus) & (t <= material.t_liquidus)
    above = t > material.t_liquidus
    c_eff = np.where(above, material.c_liquid,
                     np.where(in_band, c_mushy, material.c_solid))
    k_eff = np.where(above, material.k_liquid,
                     np.where(in_band, k_mushy, material.k_solid))
    return c_eff, k_eff


PICARD_TOLERANCE = 1e-3
PICARD_MAX_ITERATIONS = 8


def step_cryo(
    state: BioheatState,
    material: CryoMaterial,
    dt: float,
    probe_mask: Optional[np.ndarray] = None,
    probe_temperature: float = -150.0,
    q_inst: Optional[np.ndarray] = None,
    boundary: str = "dirichlet",
    continuous_k: bool = False,
) -> BioheatState:
    """One explicit step of the nonlinear freezing problem.

    Effective properties are evaluated at the current iterate (one Picard
    pass; more while the relative temperature change exceeds 1e-3). Probe
    voxels are held at the protocol-controlled probe temperature. Density
    comes from the label materials; c and k come from the effective model.
    """
    rho = state.property_fields()[0]
    t_old = state.temperature
    iterate = t_old
    new_t = t_old
    for iteration in range(PICARD_MAX_ITERATIONS):
        c_eff, k_eff = cryo_effective_properties(iterate, material, continuous_k)
        rho_c = rho * c_eff
        bound = stability_bound(
            state.grid.spacing, float(rho_c.min()), float(k_eff.max())
        )
        if dt > bound:
            raise StabilityError(dt, bound)
        q_total = diffusion_flux_divergence(t_old, k_eff, state.grid.spacing)
        if q_inst is not None:
            q_total = q_total + q_inst
        new_t = t_old + dt * q_total / rho_c
        if boundary == "dirichlet":
            new_t[boundary_mask(state.grid.dims)] = state.t_body
        elif boundary != "insulated":
            raise SolverError(f"unknown boundary mode {boundary!r}")
        if probe_mask is not None:
            new_t = np.where(probe_mask, probe_temperature, new_t)
        scale = max(float(np.abs(iterate).max()), 1.0)
        change = float(np.abs(new_t - iterate).max()) / scale
        iterate = new_t
        if change <= PICARD_TOLERANCE:
            break

    return BioheatState(
        grid=state.grid,
        temperature=new_t,
        alive=state.alive,
        dead=state.dead,
        time=state.time + dt,
        materials=state.materials,
        blood_rho=state.blood_rho,
        blood_c=state.blood_c,
        t_body=state.t_body,
        labels=state.labels,
    )
