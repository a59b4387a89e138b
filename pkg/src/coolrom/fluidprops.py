"""Tabulated coolant properties on a (pressure, temperature) grid.

A :class:`PropertyTable` holds density, enthalpy and transport properties on a
rectangular grid. Queries interpolate bilinearly inside the table and switch to
an ideal-gas extension above the highest tabulated temperature. The inverse
map (p, h) -> T is what the marching solver uses to close the state.

Property-table CSV layout::

    #R=518.28
    p[Pa],T[K],rho[kg/m3],h[J/kg],mu[Pa.s],k[W/m.K],cp[J/kg.K]
    4500000.0,100.0,...

One row per node, pressure-major, grid complete.
"""

from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from coolrom.errors import OutOfRangeError, ParseError, ValidationError

CSV_HEADER = ["p[Pa]", "T[K]", "rho[kg/m3]", "h[J/kg]", "mu[Pa.s]", "k[W/m.K]", "cp[J/kg.K]"]
PROPERTY_NAMES = ("rho", "h", "mu", "k", "cp")

# cap of the ideal-gas branch for the inverse lookup
T_MAX_EXTENDED = 2000.0
ENTHALPY_TOL = 1.0  # J/kg

BUNDLED_TABLE = Path(__file__).parent / "data" / "pseudo_methane.csv"


@dataclass(frozen=True)
class PropertyState:
    rho: float
    h: float
    mu: float
    k: float
    cp: float
    T: float
    p: float


@dataclass(frozen=True, eq=False)
class PropertyTable:
    """Immutable property grid. All grids have shape ``(len(pressures), len(temperatures))``."""

    pressures: np.ndarray
    temperatures: np.ndarray
    rho: np.ndarray
    h: np.ndarray
    mu: np.ndarray
    k: np.ndarray
    cp: np.ndarray
    gas_constant_specific: float

    def __post_init__(self):
        for name in ("pressures", "temperatures", *PROPERTY_NAMES):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        _validate(self)
        # (5, n_p, n_T) stack for single-slice corner lookups
        stacked = np.stack([getattr(self, n) for n in PROPERTY_NAMES])
        stacked.setflags(write=False)
        object.__setattr__(self, "_stacked", stacked)
        object.__setattr__(self, "_p_axis", tuple(self.pressures.tolist()))
        object.__setattr__(self, "_t_axis", tuple(self.temperatures.tolist()))

    @property
    def t_max_table(self) -> float:
        return float(self.temperatures[-1])

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.pressures), len(self.temperatures))

    @property
    def p_range(self) -> tuple[float, float]:
        return float(self.pressures[0]), float(self.pressures[-1])


def _validate(table: PropertyTable) -> None:
    p, t = table.pressures, table.temperatures
    if p.ndim != 1 or t.ndim != 1 or len(p) < 2 or len(t) < 2:
        raise ValidationError("pressure and temperature axes need at least two nodes each")
    if not np.all(np.diff(p) > 0):
        raise ValidationError("pressure axis is not strictly ascending")
    if not np.all(np.diff(t) > 0):
        raise ValidationError("temperature axis is not strictly ascending")
    for name in PROPERTY_NAMES:
        grid = getattr(table, name)
        if grid.shape != (len(p), len(t)):
            raise ValidationError(f"{name} grid has shape {grid.shape}, expected {(len(p), len(t))}")
        if not np.all(np.isfinite(grid)):
            raise ValidationError(f"{name} grid contains non-finite values")
    for name in ("rho", "mu", "k", "cp"):
        if not np.all(getattr(table, name) > 0):
            raise ValidationError(f"{name} must be strictly positive")
    bad = np.argwhere(np.diff(table.h, axis=1) <= 0)
    if len(bad):
        i, j = bad[0]
        raise ValidationError(f"enthalpy not increasing in T at p={p[i]:g} Pa, T={t[j]:g} K")
    if not (table.gas_constant_specific > 0 and math.isfinite(table.gas_constant_specific)):
        raise ValidationError("specific gas constant must be positive")


# ---------------------------------------------------------------------------
# I/O


def load_table(path, gas_constant: float | None = None) -> PropertyTable:
    """Read a property-table CSV.

    The specific gas constant comes from a ``#R=<value>`` comment line or, if
    given, from ``gas_constant`` (which takes precedence).
    """
    path = Path(path)
    text = path.read_text()
    r_value = None
    rows = []
    header = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            key, _, val = stripped[1:].partition("=")
            if key.strip() == "R":
                try:
                    r_value = float(val)
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: bad gas constant {val!r}") from None
            continue
        fields = next(csv.reader([stripped]))
        if header is None:
            header = [f.strip() for f in fields]
            if header != CSV_HEADER:
                raise ParseError(f"{path}:{lineno}: header {header} does not match {CSV_HEADER}")
            continue
        if len(fields) != len(CSV_HEADER):
            raise ParseError(f"{path}:{lineno}: expected {len(CSV_HEADER)} fields, got {len(fields)}")
        try:
            rows.append([float(f) for f in fields])
        except ValueError:
            raise ParseError(f"{path}:{lineno}: non-numeric field in {stripped!r}") from None
    if header is None or not rows:
        raise ParseError(f"{path}: no data rows")
    if gas_constant is not None:
        r_value = gas_constant
    if r_value is None:
        raise ParseError(f"{path}: no '#R=' line and no gas constant supplied")

    data = np.array(rows)
    # axis order as encountered; validation catches descending axes
    p_axis = list(dict.fromkeys(data[:, 0].tolist()))
    t_axis = list(dict.fromkeys(data[:, 1].tolist()))
    n_p, n_t = len(p_axis), len(t_axis)
    if len(data) != n_p * n_t:
        raise ParseError(f"{path}: incomplete grid, {len(data)} rows for {n_p}x{n_t} nodes")
    expected_p = np.repeat(p_axis, n_t)
    expected_t = np.tile(t_axis, n_p)
    if not (np.array_equal(data[:, 0], expected_p) and np.array_equal(data[:, 1], expected_t)):
        raise ParseError(f"{path}: rows are not ordered pressure-major then temperature")
    grids = {name: data[:, 2 + i].reshape(n_p, n_t) for i, name in enumerate(PROPERTY_NAMES)}
    return PropertyTable(
        pressures=np.array(p_axis),
        temperatures=np.array(t_axis),
        gas_constant_specific=float(r_value),
        **grids,
    )


def save_table(table: PropertyTable, path) -> None:
    path = Path(path)
    lines = [f"#R={table.gas_constant_specific!r}", ",".join(CSV_HEADER)]
    for i, p in enumerate(table.pressures):
        for j, t in enumerate(table.temperatures):
            vals = [p, t] + [getattr(table, n)[i, j] for n in PROPERTY_NAMES]
            lines.append(",".join(repr(float(v)) for v in vals))
    path.write_text("\n".join(lines) + "\n")


def load_bundled_table() -> PropertyTable:
    return load_table(BUNDLED_TABLE)


# ---------------------------------------------------------------------------
# Analytic pseudo-fluid


R_METHANE = 8.314462618 / 0.01604246
PSEUDO_P_AXIS = np.arange(45.0, 241.0, 5.0) * 1e5
PSEUDO_T_AXIS = np.linspace(100.0, 625.0, 60)
_CP0 = 3000.0
_T_REF = 100.0


def pseudo_critical_temperature(p):
    """Pseudo-critical line of the analytic fluid [K], ``p`` in Pa."""
    return 190.0 + 0.06 * (np.asarray(p) / 1e5 - 46.0)


def _peak(p):
    dp = np.asarray(p) / 1e5 - 46.0
    height = 30000.0 * np.exp(-dp / 50.0)
    width = 3.0 + 0.08 * dp
    return height, width


def _blend(p, T):
    # logistic switch from liquid-like to gas-like; narrow enough that the
    # liquid share is below 1e-17 at 625 K for every tabulated pressure
    dp = np.asarray(p) / 1e5 - 46.0
    width = 2.0 + 0.04 * dp
    return 0.5 * (1.0 + np.tanh((np.asarray(T) - pseudo_critical_temperature(p)) / (2.0 * width)))


def pseudo_cp(p, T):
    height, width = _peak(p)
    x = (np.asarray(T) - pseudo_critical_temperature(p)) / width
    return _CP0 + height / (1.0 + x**2)


def pseudo_h(p, T):
    """Closed-form antiderivative of :func:`pseudo_cp` in T, plus a pressure offset."""
    height, width = _peak(p)
    t_pc = pseudo_critical_temperature(p)
    T = np.asarray(T)
    return (
        (np.asarray(p) - 46e5) / 400.0
        + _CP0 * (T - _T_REF)
        + height * width * (np.arctan((T - t_pc) / width) - np.arctan((_T_REF - t_pc) / width))
    )


def pseudo_rho(p, T):
    p, T = np.asarray(p), np.asarray(T)
    s = _blend(p, T)
    rho_liq = (430.0 + 0.4 * (p / 1e5 - 46.0)) * np.exp(-(T - 100.0) / 350.0)
    # real-gas densification that vanishes exactly at the hot edge of the table
    rho_gas = p / (R_METHANE * T) * (1.0 + 0.004 * (p / 1e5) * (1.0 - T / 625.0) ** 2)
    return (1.0 - s) * rho_liq + s * rho_gas


def pseudo_mu(p, T):
    p, T = np.asarray(p), np.asarray(T)
    dp = p / 1e5 - 46.0
    s = _blend(p, T)
    mu_liq = 1.1e-4 * np.exp(-(T - 100.0) / 55.0) * (1.0 + 0.002 * dp)
    mu_gas = 1.15e-5 * (T / 300.0) ** 0.75 * (1.0 + 0.003 * dp)
    return (1.0 - s) * mu_liq + s * mu_gas


def pseudo_k(p, T):
    p, T = np.asarray(p), np.asarray(T)
    dp = p / 1e5 - 46.0
    s = _blend(p, T)
    k_liq = 0.2 * np.exp(-(T - 100.0) / 180.0)
    k_gas = 0.035 * (T / 300.0) ** 1.25
    return ((1.0 - s) * k_liq + s * k_gas) * (1.0 + 0.002 * dp)


def make_pseudo_fluid() -> PropertyTable:
    """Methane-like analytic table on a 40 x 60 grid (45-240 bar, 100-625 K).

    cp has a Lorentzian peak on the line ``T_pc(p) = 190 K + 0.06 K/bar (p - 46 bar)``
    and h is its exact antiderivative. Density drops across the same line and
    reaches the ideal-gas value exactly at 625 K, the hot end of the table.
    """
    P, T = np.meshgrid(PSEUDO_P_AXIS, PSEUDO_T_AXIS, indexing="ij")
    return PropertyTable(
        pressures=PSEUDO_P_AXIS.copy(),
        temperatures=PSEUDO_T_AXIS.copy(),
        rho=pseudo_rho(P, T),
        h=pseudo_h(P, T),
        mu=pseudo_mu(P, T),
        k=pseudo_k(P, T),
        cp=pseudo_cp(P, T),
        gas_constant_specific=R_METHANE,
    )


# ---------------------------------------------------------------------------
# Queries


def _pressure_cell(table: PropertyTable, p: float) -> tuple[int, float]:
    axis = table._p_axis
    if not (axis[0] <= p <= axis[-1]):
        raise OutOfRangeError(f"pressure {p:.6g} Pa outside table range [{axis[0]:.6g}, {axis[-1]:.6g}]")
    i = min(bisect.bisect_right(axis, p) - 1, len(axis) - 2)
    return i, (p - axis[i]) / (axis[i + 1] - axis[i])


def _edge_values(table: PropertyTable, i: int, wp: float) -> np.ndarray:
    col = table._stacked[:, i : i + 2, -1]
    return (1.0 - wp) * col[:, 0] + wp * col[:, 1]


def query(table: PropertyTable, p: float, T: float) -> PropertyState:
    """Properties at (p, T).

    Bilinear on the grid up to the last tabulated temperature. Above it the
    fluid is treated as an ideal gas: rho = p/(R T), h extrapolated with the
    edge cp, mu and k frozen at their edge values.
    """
    p, T = float(p), float(T)
    i, wp = _pressure_cell(table, p)
    t_axis = table._t_axis
    if not (T >= t_axis[0]) or not math.isfinite(T):
        raise OutOfRangeError(f"temperature {T:.6g} K below table minimum {t_axis[0]:.6g} K")
    if T > t_axis[-1]:
        rho, h, mu, k, cp = _edge_values(table, i, wp)
        t_edge = t_axis[-1]
        return PropertyState(
            rho=p / (table.gas_constant_specific * T),
            h=float(h + cp * (T - t_edge)),
            mu=float(mu),
            k=float(k),
            cp=float(cp),
            T=T,
            p=p,
        )
    j = min(bisect.bisect_right(t_axis, T) - 1, len(t_axis) - 2)
    wt = (T - t_axis[j]) / (t_axis[j + 1] - t_axis[j])
    c = table._stacked[:, i : i + 2, j : j + 2]
    v = (
        (1.0 - wp) * (1.0 - wt) * c[:, 0, 0]
        + (1.0 - wp) * wt * c[:, 0, 1]
        + wp * (1.0 - wt) * c[:, 1, 0]
        + wp * wt * c[:, 1, 1]
    )
    return PropertyState(
        rho=float(v[0]), h=float(v[1]), mu=float(v[2]), k=float(v[3]), cp=float(v[4]), T=T, p=p
    )


def enthalpy_bounds(table: PropertyTable, p: float) -> tuple[float, float]:
    """Admissible enthalpy bracket at ``p`` for :func:`temperature_from_enthalpy`."""
    i, wp = _pressure_cell(table, float(p))
    h_col = (1.0 - wp) * table.h[i] + wp * table.h[i + 1]
    _, h_edge, _, _, cp_edge = _edge_values(table, i, wp)
    return float(h_col[0]), float(h_edge + cp_edge * (T_MAX_EXTENDED - table.t_max_table))


def temperature_from_enthalpy(table: PropertyTable, p: float, h: float) -> float:
    """Invert ``query(table, p, T).h == h`` for T.

    At fixed pressure the interpolated enthalpy is piecewise linear in T with
    breakpoints at the temperature nodes, so a binary search over the nodes
    brackets the cell and one linear solve inside it gives T exactly (to
    rounding). Monotonicity of h in T makes the bracket unique.
    """
    p, h = float(p), float(h)
    i, wp = _pressure_cell(table, p)
    h_col = (1.0 - wp) * table.h[i] + wp * table.h[i + 1]
    h_lo = float(h_col[0])
    if not (h >= h_lo - ENTHALPY_TOL):
        raise OutOfRangeError(f"enthalpy {h:.6g} J/kg below table minimum {h_lo:.6g} J/kg at p={p:.6g} Pa")
    t_axis = table._t_axis
    h_top = float(h_col[-1])
    if h <= h_top:
        j = int(np.searchsorted(h_col, h, side="right")) - 1
        j = min(max(j, 0), len(t_axis) - 2)
        frac = (h - h_col[j]) / (h_col[j + 1] - h_col[j])
        return float(t_axis[j] + max(frac, 0.0) * (t_axis[j + 1] - t_axis[j]))
    cp_edge = _edge_values(table, i, wp)[4]
    T = t_axis[-1] + (h - h_top) / cp_edge
    if T > T_MAX_EXTENDED + ENTHALPY_TOL / cp_edge:
        raise OutOfRangeError(f"enthalpy {h:.6g} J/kg maps above {T_MAX_EXTENDED} K at p={p:.6g} Pa")
    return float(T)
