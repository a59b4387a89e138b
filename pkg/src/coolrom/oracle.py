"""Synthetic labeled channel data standing in for a CFD campaign.

Each sampled channel is marched with :mod:`coolrom.channel_rom` on a fine
grid, and every 2 mm station gets a wall-temperature label from a closed-form
quasi-1D model::

    T_w = T_b + q_w / alpha_eff + q d / k_solid
    alpha_eff = C (k / D_h) Re^0.8 Pr^0.4 (1 + c_r (r / D_h)^0.3) * eta_fin
    q_w = q (b + fin) / (b + 2 h_ch)

with bulk properties from the table. The model is not CFD. It is a smooth,
physically shaped ground truth (heat flux and wall thickness raise T_w;
roughness and mass flux lower it; cp/k swings near the pseudo-critical line
move it) that the network can learn and tests can recompute exactly.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from coolrom import channel_rom, fluidprops
from coolrom.channel_rom import ChannelGeometry, FlowState, HeatFluxProfile, MarchConfig
from coolrom.datapipe import Dataset
from coolrom.errors import CoolromError, ValidationError
from coolrom.fluidprops import PropertyTable

NUSSELT_C = 0.023
ROUGHNESS_C = 3.0
K_SOLID = 340.0  # W/(m K), copper alloy

ORACLE_CONSTANTS = {
    "nusselt_coefficient": NUSSELT_C,
    "reynolds_exponent": 0.8,
    "prandtl_exponent": 0.4,
    "roughness_coefficient": ROUGHNESS_C,
    "roughness_exponent": 0.3,
    "k_solid[W/m.K]": K_SOLID,
}


@dataclass(frozen=True)
class GeneratorConfig:
    n_channels: int = 300
    rng_seed: int = 0
    p_out_bar: tuple[float, float] = (50.0, 150.0)
    T_in: tuple[float, float] = (120.0, 400.0)
    roughness_um: tuple[float, float] = (0.2, 15.0)
    area_mm2: tuple[float, float] = (1.0, 10.0)
    aspect_ratio: tuple[float, float] = (1.0, 9.2)
    wall_thickness_mm: tuple[float, float] = (0.8, 1.2)
    heat_flux_MW: tuple[float, float] = (9.0, 80.0)
    mass_flux: tuple[float, float] = (3000.0, 35000.0)
    # bulk enthalpy pick-up over the channel, used to pair G with q
    enthalpy_rise_kJ: tuple[float, float] = (100.0, 800.0)
    # draws whose inlet-based friction estimate exceeds this share of p_out are redrawn
    max_drop_fraction: float = 0.25
    near_critical_fraction: float = 0.3
    near_critical_p_out_bar: tuple[float, float] = (50.0, 70.0)
    near_critical_T_in: tuple[float, float] = (160.0, 200.0)
    min_width_mm: float = 1.0
    length_mm: float = 250.0
    fin_thickness_mm: float = 1.0
    dz: float = 2.0
    substeps: int = 4
    label_noise_std: float = 0.0

    def __post_init__(self):
        if self.n_channels < 1:
            raise ValidationError("n_channels must be >= 1")
        if self.substeps < 1 or self.dz <= 0:
            raise ValidationError("dz and substeps must be positive")
        if not 0.0 <= self.near_critical_fraction <= 1.0:
            raise ValidationError("near_critical_fraction must lie in [0, 1]")
        if self.label_noise_std < 0:
            raise ValidationError("label_noise_std must be >= 0")
        for name in ("p_out_bar", "T_in", "roughness_um", "area_mm2", "aspect_ratio", "wall_thickness_mm",
                     "heat_flux_MW", "mass_flux", "enthalpy_rise_kJ", "near_critical_p_out_bar",
                     "near_critical_T_in"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise ValidationError(f"invalid range for {name}: {(lo, hi)}")

    def check_table(self, table: PropertyTable) -> None:
        p_lo, p_hi = table.p_range
        for lo, hi in (self.p_out_bar, self.near_critical_p_out_bar):
            if lo * 1e5 < p_lo or hi * 1e5 > p_hi:
                raise ValidationError(f"outlet pressure range {lo}-{hi} bar outside the property table")
        for lo, _ in (self.T_in, self.near_critical_T_in):
            if lo < table.temperatures[0]:
                raise ValidationError(f"inlet temperature {lo} K below the property table")


@dataclass(frozen=True)
class ChannelCase:
    index: int
    geometry: ChannelGeometry
    p_out: float  # Pa
    T_in: float  # K
    heat_flux: float  # W/m^2
    mass_flux: float  # kg/(m^2 s)

    def march_config(self, dz: float) -> MarchConfig:
        return MarchConfig(
            mdot=self.mass_flux * self.geometry.area * 1e-6,
            T_in=self.T_in,
            heat_flux=HeatFluxProfile.constant(self.heat_flux),
            p_out=self.p_out,
            dz=dz,
        )


@dataclass
class GenerationResult:
    dataset: Dataset
    cases: list[ChannelCase]
    skipped: list[tuple[int, str]] = field(default_factory=list)

    def manifest(self, cfg: GeneratorConfig) -> dict:
        return {
            "config": asdict(cfg),
            "seed": cfg.rng_seed,
            "oracle_constants": ORACLE_CONSTANTS,
            "n_channels_ok": len(self.cases),
            "skipped": [{"channel": i, "reason": r} for i, r in self.skipped],
            "n_samples": len(self.dataset),
            "dataset_checksum": self.dataset.checksum(),
        }


# ---------------------------------------------------------------------------
# Label model


def heat_transfer_coefficient(k, d_h, Re, Pr, rel_roughness):
    """Dittus-Boelter-type coefficient with a roughness enhancement [W/(m^2 K)]; ``d_h`` in m."""
    return NUSSELT_C * (k / d_h) * Re**0.8 * Pr**0.4 * (1.0 + ROUGHNESS_C * rel_roughness**0.3)


def fin_efficiency(alpha, fin_height, fin_thickness, k_solid=K_SOLID):
    """Straight fin with adiabatic tip, ``tanh(mL)/(mL)``; lengths in m."""
    mL = np.sqrt(2.0 * alpha / (k_solid * fin_thickness)) * fin_height
    return np.tanh(mL) / mL


def wall_temperature(T_b, q, q_w, alpha_eff, wall_thickness):
    """Hot-gas wall temperature: convective superheat plus conduction through ``wall_thickness`` [m]."""
    return T_b + q_w / alpha_eff + q * wall_thickness / K_SOLID


def station_labels(states, q, geom: ChannelGeometry) -> np.ndarray:
    """Wall temperatures for marched states at local heat flux ``q`` (scalar or per state)."""
    T_b = np.array([s.T_b for s in states])
    Re = np.array([s.Re for s in states])
    k = np.array([s.k for s in states])
    Pr = np.array([s.cp * s.mu / s.k for s in states])
    return label_from_properties(T_b, np.broadcast_to(q, T_b.shape), Re, Pr, k, geom)


def label_from_properties(T_b, q, Re, Pr, k, geom: ChannelGeometry):
    d_h = geom.hydraulic_diameter * 1e-3
    alpha = heat_transfer_coefficient(k, d_h, Re, Pr, geom.roughness * 1e-3 / geom.hydraulic_diameter)
    eta = fin_efficiency(alpha, geom.height * 1e-3, geom.fin_thickness * 1e-3)
    q_w = q * geom.pitch / (geom.width + 2.0 * geom.height)
    return wall_temperature(T_b, q, q_w, alpha * eta, geom.wall_thickness * 1e-3)


# ---------------------------------------------------------------------------
# Sampling and generation


def _uniform(rng, bounds):
    lo, hi = bounds
    return float(lo + (hi - lo) * rng.random())


def _drop_estimate(table, geom, p_out, T_in, G):
    inlet = fluidprops.query(table, p_out, T_in)
    d_h = geom.hydraulic_diameter
    f = channel_rom.friction_factor(G * d_h * 1e-3 / inlet.mu, geom.roughness * 1e-3 / d_h)
    return channel_rom.darcy_weisbach(f, inlet.rho, G / inlet.rho, geom.length, d_h)


def sample_case(cfg: GeneratorConfig, index: int, table: PropertyTable | None = None) -> ChannelCase:
    """Draw one channel; channel ``index`` depends only on ``(rng_seed, index)``.

    Mass flux is paired with heat flux through a sampled bulk enthalpy rise.
    With a ``table``, pairs whose inlet friction loss over the whole channel
    would exceed ``max_drop_fraction * p_out`` are redrawn.
    """
    rng = np.random.default_rng([cfg.rng_seed, index])
    area = _uniform(rng, cfg.area_mm2)
    # narrow channels cannot be made arbitrarily tall: width >= min_width
    ar_hi = min(cfg.aspect_ratio[1], max(cfg.aspect_ratio[0], area / cfg.min_width_mm**2))
    ar = _uniform(rng, (cfg.aspect_ratio[0], ar_hi))
    d = _uniform(rng, cfg.wall_thickness_mm)
    r = _uniform(rng, cfg.roughness_um)
    if rng.random() < cfg.near_critical_fraction:
        p_out = _uniform(rng, cfg.near_critical_p_out_bar) * 1e5
        T_in = _uniform(rng, cfg.near_critical_T_in)
    else:
        p_out = _uniform(rng, cfg.p_out_bar) * 1e5
        T_in = _uniform(rng, cfg.T_in)
    geom = ChannelGeometry.from_area(area, ar, d, cfg.length_mm, r, cfg.fin_thickness_mm)
    heated = geom.pitch * 1e-3 * cfg.length_mm * 1e-3
    for _ in range(100):
        q = _uniform(rng, cfg.heat_flux_MW) * 1e6
        rise = _uniform(rng, cfg.enthalpy_rise_kJ) * 1e3
        G = q * heated / (area * 1e-6 * rise)
        if not cfg.mass_flux[0] <= G <= cfg.mass_flux[1]:
            continue
        if table is None or _drop_estimate(table, geom, p_out, T_in, G) <= cfg.max_drop_fraction * p_out:
            break
    else:
        G = min(max(G, cfg.mass_flux[0]), cfg.mass_flux[1])
    return ChannelCase(index, geom, p_out, T_in, q, G)


def reference_states(table: PropertyTable, case: ChannelCase, cfg: GeneratorConfig) -> list[FlowState]:
    """Bulk states every ``cfg.dz`` mm from a march refined by ``cfg.substeps``."""
    states = channel_rom.march(table, case.geometry, case.march_config(cfg.dz / cfg.substeps))
    return states[:: cfg.substeps]


def channel_dataset(states, case: ChannelCase, labels, provenance="oracle") -> Dataset:
    cfg_like = case.march_config(2.0)
    cols = channel_rom.station_columns(states, case.geometry, cfg_like)
    cols["T_w"] = np.asarray(labels, dtype=np.float64)
    return Dataset(cols, provenance, np.full(len(states), case.index))


def generate(table: PropertyTable, cfg: GeneratorConfig, index_offset: int = 0) -> GenerationResult:
    """Sample ``cfg.n_channels`` channels, march them and label every station.

    Channels whose march fails (fluid leaves the table, closure does not
    converge) are skipped and listed in the result.
    """
    cfg.check_table(table)
    parts, cases, skipped = [], [], []
    for i in range(index_offset, index_offset + cfg.n_channels):
        case = sample_case(cfg, i, table)
        try:
            states = reference_states(table, case, cfg)
        except CoolromError as exc:
            skipped.append((i, str(exc)))
            continue
        labels = station_labels(states, case.heat_flux, case.geometry)
        if cfg.label_noise_std > 0:
            noise_rng = np.random.default_rng([cfg.rng_seed, i, 1])
            labels = labels + noise_rng.normal(0.0, cfg.label_noise_std, size=len(labels))
        parts.append(channel_dataset(states, case, labels))
        cases.append(case)
    if not parts:
        raise ValidationError("every sampled channel failed to march")
    return GenerationResult(Dataset.concat(parts), cases, skipped)
