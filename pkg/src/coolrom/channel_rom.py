"""1-D marching of bulk pressure and total enthalpy along a straight cooling channel.

Geometry is given in mm (roughness in um), thermodynamic quantities in SI.
Each step adds the heat picked up over one channel pitch to the total
enthalpy, subtracts a Darcy-Weisbach friction loss from the static pressure,
and then closes the state through the property table and mass continuity.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from coolrom import fluidprops
from coolrom.errors import ConvergenceError, OutOfRangeError, ValidationError
from coolrom.fluidprops import PropertyTable

AREA_BAND = (1.0, 10.0)  # mm^2
ASPECT_BAND = (1.0, 9.2)

CLOSURE_TOL = 1e-4  # K
CLOSURE_MAX_ITER = 50
OUTLET_PRESSURE_TOL = 100.0  # Pa


class EnvelopeWarning(UserWarning):
    """Geometry outside the range the wall-temperature model was trained on."""


@dataclass(frozen=True)
class ChannelGeometry:
    width: float  # b [mm]
    height: float  # h_ch [mm]
    wall_thickness: float  # d [mm]
    length: float  # l [mm]
    roughness: float  # r [um]
    fin_thickness: float = 1.0  # [mm]

    def __post_init__(self):
        for name in ("width", "height", "wall_thickness", "length", "roughness", "fin_thickness"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise ValidationError(f"geometry field {name} must be positive, got {val!r}")
        for msg in self.envelope_warnings():
            warnings.warn(msg, EnvelopeWarning, stacklevel=3)

    @classmethod
    def from_area(cls, area, aspect_ratio, wall_thickness, length, roughness, fin_thickness=1.0):
        """Build from cross-section area [mm^2] and aspect ratio height/width."""
        width = math.sqrt(area / aspect_ratio)
        return cls(
            width=width,
            height=width * aspect_ratio,
            wall_thickness=wall_thickness,
            length=length,
            roughness=roughness,
            fin_thickness=fin_thickness,
        )

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def aspect_ratio(self) -> float:
        return self.height / self.width

    @property
    def hydraulic_diameter(self) -> float:
        return hydraulic_diameter(self)

    @property
    def pitch(self) -> float:
        return self.width + self.fin_thickness

    def envelope_warnings(self) -> list[str]:
        out = []
        if not AREA_BAND[0] <= self.area <= AREA_BAND[1]:
            out.append(f"channel area {self.area:.3g} mm^2 outside {AREA_BAND}")
        if not ASPECT_BAND[0] <= self.aspect_ratio <= ASPECT_BAND[1]:
            out.append(f"aspect ratio {self.aspect_ratio:.3g} outside {ASPECT_BAND}")
        return out


@dataclass(frozen=True)
class HeatFluxProfile:
    """Piecewise-constant heat flux: ``fluxes[i]`` [W/m^2] applies from ``starts[i]`` [mm] onward."""

    starts: tuple[float, ...]
    fluxes: tuple[float, ...]

    def __post_init__(self):
        starts = tuple(float(s) for s in self.starts)
        fluxes = tuple(float(q) for q in self.fluxes)
        object.__setattr__(self, "starts", starts)
        object.__setattr__(self, "fluxes", fluxes)
        if not starts or len(starts) != len(fluxes):
            raise ValidationError("heat-flux profile needs matching, non-empty starts and fluxes")
        if starts[0] != 0.0:
            raise ValidationError("heat-flux profile must start at z = 0")
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValidationError("heat-flux profile breakpoints must be strictly ascending")
        if any(not (math.isfinite(q) and q >= 0) for q in fluxes):
            raise ValidationError("heat flux must be finite and non-negative")

    @classmethod
    def constant(cls, q: float) -> "HeatFluxProfile":
        return cls((0.0,), (q,))

    def __call__(self, z: float) -> float:
        idx = 0
        for i, s in enumerate(self.starts):
            if z >= s:
                idx = i
        return self.fluxes[idx]

    def mean_over(self, z0: float, z1: float) -> float:
        """Average flux over [z0, z1]."""
        if z1 <= z0:
            return self(z0)
        ends = self.starts[1:] + (math.inf,)
        total = 0.0
        for s, e, q in zip(self.starts, ends, self.fluxes):
            lo, hi = max(s, z0), min(e, z1)
            if hi > lo:
                total += q * (hi - lo)
        return total / (z1 - z0)


@dataclass(frozen=True)
class MarchConfig:
    mdot: float  # [kg/s]
    T_in: float  # [K]
    heat_flux: HeatFluxProfile
    p_in: float | None = None  # [Pa]
    p_out: float | None = None  # [Pa]
    dz: float = 2.0  # [mm]

    def __post_init__(self):
        if not isinstance(self.heat_flux, HeatFluxProfile):
            object.__setattr__(self, "heat_flux", HeatFluxProfile.constant(self.heat_flux))
        if (self.p_in is None) == (self.p_out is None):
            raise ValidationError("exactly one of p_in and p_out must be given")
        if not self.dz > 0:
            raise ValidationError("dz must be positive")
        if not self.mdot > 0:
            raise ValidationError("mass flow rate must be positive")
        if not self.T_in > 0:
            raise ValidationError("inlet temperature must be positive")


@dataclass(frozen=True)
class FlowState:
    z: float  # [mm]
    p_stat: float  # [Pa]
    h_tot: float  # [J/kg]
    h_stat: float  # [J/kg]
    T_b: float  # [K]
    rho_b: float  # [kg/m^3]
    v_b: float  # [m/s]
    Re: float
    f: float
    mu: float = field(default=0.0, repr=False)
    k: float = field(default=0.0, repr=False)
    cp: float = field(default=0.0, repr=False)


def mass_flux(mdot: float, geom: ChannelGeometry) -> float:
    """G = mdot / A in kg/(m^2 s)."""
    return mdot / (geom.area * 1e-6)


def hydraulic_diameter(geom: ChannelGeometry) -> float:
    """Rectangular duct, full wetted perimeter: 2 b h / (b + h) [mm]."""
    return 2.0 * geom.width * geom.height / (geom.width + geom.height)


def friction_factor(Re: float, rel_roughness: float) -> float:
    """Churchill (1977) Darcy friction factor, all flow regimes."""
    if not Re > 0:
        raise ValidationError(f"Reynolds number must be positive, got {Re!r}")
    if rel_roughness < 0:
        raise ValidationError("relative roughness must be non-negative")
    arg = (7.0 / Re) ** 0.9 + 0.27 * rel_roughness
    inner = 1.0 / arg
    if not inner > 1.0:
        raise ValidationError(f"Churchill log argument {inner:.4g} <= 1 (rel. roughness {rel_roughness:.3g})")
    A = (2.457 * math.log(inner)) ** 16
    B = (37530.0 / Re) ** 16
    return 8.0 * ((8.0 / Re) ** 12 + (A + B) ** -1.5) ** (1.0 / 12.0)


def darcy_weisbach(f: float, rho: float, v: float, dz: float, d_h: float) -> float:
    """Pressure loss [Pa] over ``dz``; ``dz`` and ``d_h`` in the same length unit."""
    return 0.5 * f * rho * v * v * dz / d_h


def pressure_step(state: FlowState, geom: ChannelGeometry, dz: float, f: float | None = None) -> float:
    """Friction pressure drop over a segment of length ``dz`` [mm]."""
    if f is None:
        f = friction_factor(state.Re, geom.roughness * 1e-3 / geom.hydraulic_diameter)
    return darcy_weisbach(f, state.rho_b, state.v_b, dz, geom.hydraulic_diameter)


def enthalpy_step(state: FlowState, q_local: float, geom: ChannelGeometry, dz: float, mdot: float) -> float:
    """Total-enthalpy rise [J/kg] from heat entering over one pitch (b + fin) along ``dz`` [mm]."""
    if q_local < 0:
        raise ValidationError("heat flux must be non-negative")
    if not mdot > 0:
        raise ValidationError("mass flow rate must be positive")
    heat = q_local * geom.pitch * 1e-3 * dz * 1e-3
    return heat / mdot


def _station(table, geom, z, p, h_tot, T, props, G, v) -> FlowState:
    d_h = geom.hydraulic_diameter * 1e-3
    Re = G * d_h / props.mu
    f = friction_factor(Re, geom.roughness * 1e-3 / geom.hydraulic_diameter)
    return FlowState(
        z=z,
        p_stat=p,
        h_tot=h_tot,
        h_stat=h_tot - 0.5 * v * v,
        T_b=T,
        rho_b=props.rho,
        v_b=v,
        Re=Re,
        f=f,
        mu=props.mu,
        k=props.k,
        cp=props.cp,
    )


def close_state(table: PropertyTable, geom: ChannelGeometry, z: float, p: float, h_tot: float,
                G: float, v_guess: float, station: int = 0) -> FlowState:
    """Find (T, rho, v) consistent with p, h_tot and continuity.

    The velocity residual ``G / rho(T(h_tot - v^2/2)) - v`` is strictly
    decreasing in v, so the iteration keeps a bracket and takes secant steps
    inside it (bisection when a step leaves it). Plain substitution oscillates
    where density falls steeply across the pseudo-critical line.
    """

    def residual(v):
        T = fluidprops.temperature_from_enthalpy(table, p, h_tot - 0.5 * v * v)
        props = fluidprops.query(table, p, T)
        return T, props, G / props.rho - v

    lo, hi = 0.0, math.inf
    v0 = v_guess
    T0, props0, F0 = residual(v0)
    v1 = v0 + F0  # one substitution step
    for _ in range(CLOSURE_MAX_ITER):
        if F0 > 0:
            lo = max(lo, v0)
        else:
            hi = min(hi, v0)
        T1, props1, F1 = residual(v1)
        if abs(T1 - T0) < CLOSURE_TOL or F1 == 0.0:
            return _station(table, geom, z, p, h_tot, T1, props1, G, G / props1.rho)
        if F1 > 0:
            lo = max(lo, v1)
        else:
            hi = min(hi, v1)
        v2 = v1 - F1 * (v1 - v0) / (F1 - F0) if F1 != F0 else v1 + F1
        if not lo < v2 < hi:
            v2 = 0.5 * (lo + hi) if math.isfinite(hi) else v1 + F1
        v0, T0, F0 = v1, T1, F1
        v1 = v2
    raise ConvergenceError(f"state closure did not converge at station {station} (z={z:g} mm)", station=station)


def _stations(length: float, dz: float) -> np.ndarray:
    n = int(math.ceil(length / dz - 1e-9))
    z = np.arange(n + 1) * dz
    z[-1] = length
    return z


def _march_from_inlet(table, geom, cfg, p_in) -> list[FlowState]:
    G = mass_flux(cfg.mdot, geom)
    z = _stations(geom.length, cfg.dz)
    inlet = fluidprops.query(table, p_in, cfg.T_in)
    v = G / inlet.rho
    h_tot = inlet.h + 0.5 * v * v
    states = [_station(table, geom, 0.0, p_in, h_tot, cfg.T_in, inlet, G, v)]
    for i in range(1, len(z)):
        prev = states[-1]
        seg = z[i] - z[i - 1]
        q_seg = cfg.heat_flux.mean_over(z[i - 1], z[i])
        h_next = prev.h_tot + enthalpy_step(prev, q_seg, geom, seg, cfg.mdot)
        p_next = prev.p_stat - pressure_step(prev, geom, seg)
        try:
            states.append(close_state(table, geom, float(z[i]), p_next, h_next, G, prev.v_b, station=i))
        except OutOfRangeError as exc:
            raise OutOfRangeError(f"fluid left the property table at station {i} (z={z[i]:g} mm): {exc}") from exc
    return states


def march(table: PropertyTable, geom: ChannelGeometry, cfg: MarchConfig) -> list[FlowState]:
    """March the bulk state from inlet to outlet; stations every ``cfg.dz`` mm plus the outlet.

    With ``cfg.p_out`` set, the inlet pressure is found by a secant iteration
    until the marched outlet pressure matches within 100 Pa.
    """
    if cfg.p_in is not None:
        return _march_from_inlet(table, geom, cfg, cfg.p_in)
    return _march_to_outlet(table, geom, cfg)


def _march_to_outlet(table, geom, cfg) -> list[FlowState]:
    target = cfg.p_out
    p_max = table.p_range[1]
    # first guess from the inlet friction loss over the whole length
    inlet = fluidprops.query(table, target, cfg.T_in)
    G = mass_flux(cfg.mdot, geom)
    v = G / inlet.rho
    d_h = geom.hydraulic_diameter
    f = friction_factor(G * d_h * 1e-3 / inlet.mu, geom.roughness * 1e-3 / d_h)
    drop = darcy_weisbach(f, inlet.rho, v, geom.length, d_h)

    def attempt(p_in):
        states = _march_from_inlet(table, geom, cfg, p_in)
        return states, states[-1].p_stat - target

    def robust(p_in):
        # an inlet guess that is too low lets the fluid fall off the table; raise it
        margin = max(p_in - target, 1e3)
        for _ in range(20):
            p_in = min(target + margin, p_max)
            try:
                return (p_in, *attempt(p_in))
            except OutOfRangeError:
                if p_in >= p_max:
                    raise
                margin *= 2.0
        raise ConvergenceError("could not bracket an inlet pressure for the requested outlet pressure")

    x0, s0, r0 = robust(target + drop)
    if abs(r0) < OUTLET_PRESSURE_TOL:
        return s0
    x1, s1, r1 = robust(x0 - r0)
    for _ in range(40):
        if abs(r1) < OUTLET_PRESSURE_TOL:
            return s1
        if r1 == r0:
            break
        x2 = x1 - r1 * (x1 - x0) / (r1 - r0)
        x0, r0 = x1, r1
        x1, s1, r1 = robust(x2)
    raise ConvergenceError(f"outlet-pressure iteration did not converge (residual {r1:.3g} Pa)")


# ---------------------------------------------------------------------------
# Station features and hybrid prediction


def station_columns(states: Sequence[FlowState], geom: ChannelGeometry, cfg: MarchConfig) -> dict[str, np.ndarray]:
    """Per-station sample columns (names match the dataset schema, label excluded)."""
    n = len(states)
    z = np.array([s.z for s in states])
    G = mass_flux(cfg.mdot, geom)
    return {
        "z": z,
        "T_b": np.array([s.T_b for s in states]),
        "h_b": np.array([s.h_stat for s in states]),
        "p_b": np.array([s.p_stat for s in states]),
        "v_b": np.array([s.v_b for s in states]),
        "G": np.full(n, G),
        "q": np.array([cfg.heat_flux(zi) for zi in z]),
        "r": np.full(n, geom.roughness),
        "A": np.full(n, geom.area),
        "AR": np.full(n, geom.aspect_ratio),
        "d": np.full(n, geom.wall_thickness),
    }


def predict_channel(table, geom, cfg, model, scaler) -> list[tuple[FlowState, float]]:
    """March the channel and predict the wall temperature at every station."""
    from coolrom import neural

    if model.layer_dims[0] != len(scaler.feature_names):
        raise ValidationError(
            f"model expects {model.layer_dims[0]} inputs, scaler provides {len(scaler.feature_names)}"
        )
    states = march(table, geom, cfg)
    cols = station_columns(states, geom, cfg)
    missing = [n for n in scaler.feature_names if n not in cols]
    if missing:
        raise ValidationError(f"unknown feature names {missing}")
    X = np.column_stack([cols[n] for n in scaler.feature_names])
    T_w = neural.predict(model, neural.transform(scaler, X))
    return list(zip(states, T_w.tolist()))


MARCH_CSV_HEADER = ["z[mm]", "p[Pa]", "h_tot[J/kg]", "h_stat[J/kg]", "T_b[K]", "rho[kg/m3]", "v[m/s]", "Re", "f"]


def march_rows(states: Sequence[FlowState], wall_temperatures: Sequence[float] | None = None):
    """Header and rows for the march-output CSV."""
    header = list(MARCH_CSV_HEADER)
    if wall_temperatures is not None:
        header.append("T_w[K]")
    rows = []
    for i, s in enumerate(states):
        row = [s.z, s.p_stat, s.h_tot, s.h_stat, s.T_b, s.rho_b, s.v_b, s.Re, s.f]
        if wall_temperatures is not None:
            row.append(wall_temperatures[i])
        rows.append(row)
    return header, rows
