"""Circular-orbit geometry: Walker Delta shells, ECI propagation and contact windows.

Distances are kilometers, angles radians, times seconds since the simulation
epoch. Earth is a sphere rotating uniformly about the ECI z-axis with zero
Greenwich angle at t = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, minimize_scalar

EARTH_RADIUS_KM = 6371.0
MU_EARTH = 398600.4418  # km^3 / s^2
EARTH_ROTATION_RATE = 7.2921159e-5  # rad / s, sidereal

TWO_PI = 2.0 * math.pi

# Coarse scan step and root tolerance for contact window search.
SCAN_STEP_S = 10.0
REFINE_TOL_S = 1e-3
# Elevation changes by well under this between two scan steps at LEO altitudes.
_GRAZE_PROBE_RAD = 0.5


@dataclass(frozen=True)
class SatelliteSpec:
    id: int
    semi_major_axis: float
    inclination: float
    raan: float
    initial_phase: float
    shell_id: int = 0

    def __post_init__(self):
        if not math.isfinite(self.semi_major_axis) or self.semi_major_axis <= EARTH_RADIUS_KM:
            raise ValueError(f"semi-major axis must exceed Earth radius, got {self.semi_major_axis}")
        if not 0.0 <= self.inclination <= math.pi:
            raise ValueError(f"inclination must lie in [0, pi], got {self.inclination}")
        for name in ("raan", "initial_phase"):
            value = getattr(self, name)
            if not 0.0 <= value < TWO_PI:
                raise ValueError(f"{name} must lie in [0, 2pi), got {value}")

    @property
    def period(self) -> float:
        return orbital_period(self.semi_major_axis)


@dataclass(frozen=True)
class GroundStation:
    latitude: float
    longitude: float
    altitude: float = 0.0
    min_elevation: float = 0.0
    name: str = ""

    def __post_init__(self):
        if not -math.pi / 2 <= self.latitude <= math.pi / 2:
            raise ValueError(f"latitude must lie in [-pi/2, pi/2], got {self.latitude}")
        if not 0.0 <= self.min_elevation < math.pi / 2:
            raise ValueError(f"min elevation must lie in [0, pi/2), got {self.min_elevation}")


@dataclass(frozen=True)
class WalkerSpec:
    """Walker Delta pattern ``total/planes/phasing`` at a common altitude."""

    total: int
    planes: int
    phasing: int
    inclination: float
    altitude: float
    raan_offset: float = 0.0

    def __post_init__(self):
        if self.total < 0 or self.planes < 1:
            raise ValueError("walker total must be >= 0 and planes >= 1")
        if self.total % self.planes:
            raise ValueError(f"planes ({self.planes}) must divide total ({self.total})")
        if not 0 <= self.phasing < self.planes:
            raise ValueError(f"phasing must lie in [0, planes), got {self.phasing}")


@dataclass(frozen=True)
class ContactWindow:
    satellite_id: int
    rise_time: float
    set_time: float

    @property
    def duration(self) -> float:
        return self.set_time - self.rise_time


def orbital_period(semi_major_axis: float) -> float:
    """Circular orbital period from Kepler's third law, in seconds."""
    if not math.isfinite(semi_major_axis) or semi_major_axis <= EARTH_RADIUS_KM:
        raise ValueError(f"semi-major axis must be finite and exceed {EARTH_RADIUS_KM} km")
    return TWO_PI * math.sqrt(semi_major_axis**3 / MU_EARTH)


def propagate_satellite(spec: SatelliteSpec, t):
    """ECI position of a satellite on its circular orbit.

    ``t`` may be a scalar or an array of times; the result has shape
    ``(3,)`` or ``(len(t), 3)`` accordingly.
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("propagation time must be non-negative")
    mean_motion = math.sqrt(MU_EARTH / spec.semi_major_axis**3)
    # Reduce the argument of latitude modulo 2pi so that t and t + T map to the same angle.
    u = np.mod(spec.initial_phase + mean_motion * t_arr, TWO_PI)
    cu, su = np.cos(u), np.sin(u)
    co, so = math.cos(spec.raan), math.sin(spec.raan)
    ci, si = math.cos(spec.inclination), math.sin(spec.inclination)
    a = spec.semi_major_axis
    pos = np.stack(
        [
            a * (cu * co - su * ci * so),
            a * (cu * so + su * ci * co),
            a * (su * si),
        ],
        axis=-1,
    )
    return pos


def propagate_ground_station(gs: GroundStation, t):
    """ECI position of a ground station carried by Earth's rotation."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("propagation time must be non-negative")
    r = EARTH_RADIUS_KM + gs.altitude
    theta = np.mod(gs.longitude + EARTH_ROTATION_RATE * t_arr, TWO_PI)
    clat = math.cos(gs.latitude)
    z = np.full_like(theta, r * math.sin(gs.latitude))
    return np.stack([r * clat * np.cos(theta), r * clat * np.sin(theta), z], axis=-1)


def elevation_angle(gs_pos, sat_pos):
    """Elevation of ``sat_pos`` above the local horizon at ``gs_pos``.

    Computed as pi/2 minus the angle between the station's radius vector and
    the line of sight. Broadcasts over leading axes.
    """
    g = np.asarray(gs_pos, dtype=float)
    los = np.asarray(sat_pos, dtype=float) - g
    g_norm = np.linalg.norm(g, axis=-1)
    los_norm = np.linalg.norm(los, axis=-1)
    if np.any(g_norm == 0) or np.any(los_norm == 0):
        raise ValueError("elevation undefined for zero station vector or coincident positions")
    cross = np.linalg.norm(np.cross(g, los), axis=-1)
    dot = np.sum(g * los, axis=-1)
    angle = np.arctan2(cross, dot)
    out = math.pi / 2 - angle
    return float(out) if np.ndim(out) == 0 else out


def is_visible(gs: GroundStation, sat: SatelliteSpec, t: float) -> bool:
    elev = elevation_angle(propagate_ground_station(gs, t), propagate_satellite(sat, t))
    return bool(elev >= gs.min_elevation)


def _margin(gs: GroundStation, sat: SatelliteSpec, t):
    return elevation_angle(propagate_ground_station(gs, t), propagate_satellite(sat, t)) - gs.min_elevation


def contact_windows(
    gs: GroundStation,
    sat: SatelliteSpec,
    t0: float,
    t1: float,
    step: float = SCAN_STEP_S,
) -> list[ContactWindow]:
    """Visibility intervals of ``sat`` from ``gs`` within ``[t0, t1]``.

    A coarse scan brackets sign changes of the elevation margin, which are then
    refined with Brent's method. Local maxima of the margin that stay below zero
    on the grid are probed with a bounded maximization so that grazing passes
    shorter than one scan step are not lost. Windows touching the horizon
    boundaries are clipped to ``t0``/``t1``.
    """
    if not t0 < t1:
        raise ValueError("t0 must be strictly less than t1")
    n = max(2, int(math.ceil((t1 - t0) / step)) + 1)
    times = np.linspace(t0, t1, n)
    margin = _margin(gs, sat, times)
    f = lambda t: float(_margin(gs, sat, t))  # noqa: E731

    crossings: list[tuple[float, bool]] = []  # (time, rising)
    visible = margin >= 0
    for k in range(n - 1):
        if visible[k] != visible[k + 1]:
            root = brentq(f, times[k], times[k + 1], xtol=REFINE_TOL_S)
            crossings.append((root, bool(visible[k + 1])))
        elif (
            not visible[k]
            and margin[k] > -_GRAZE_PROBE_RAD
            and (k == 0 or margin[k] >= margin[k - 1])
            and margin[k] >= margin[k + 1]
        ):
            # Grid maximum below threshold: check for a pass hidden between samples.
            lo, hi = times[max(k - 1, 0)], times[k + 1]
            res = minimize_scalar(lambda t: -f(t), bounds=(lo, hi), method="bounded",
                                  options={"xatol": REFINE_TOL_S})
            if -res.fun > 0:
                peak = float(res.x)
                rise = brentq(f, lo, peak, xtol=REFINE_TOL_S) if f(lo) < 0 else lo
                fall = brentq(f, peak, hi, xtol=REFINE_TOL_S) if f(hi) < 0 else hi
                crossings.append((rise, True))
                crossings.append((fall, False))
    crossings.sort()

    windows: list[ContactWindow] = []
    start = t0 if visible[0] else None
    for when, rising in crossings:
        if rising:
            start = when
        elif start is not None:
            if when > start:
                windows.append(ContactWindow(sat.id, start, when))
            start = None
    if start is not None and t1 > start:
        windows.append(ContactWindow(sat.id, start, t1))
    return _merge(windows)


def _merge(windows: list[ContactWindow]) -> list[ContactWindow]:
    merged: list[ContactWindow] = []
    for w in windows:
        if merged and w.rise_time <= merged[-1].set_time:
            last = merged.pop()
            w = ContactWindow(w.satellite_id, last.rise_time, max(last.set_time, w.set_time))
        merged.append(w)
    return merged


def generate_walker(spec: WalkerSpec, id_base: int = 0, shell_id: int = 0) -> list[SatelliteSpec]:
    """Expand a Walker Delta pattern into individual satellites.

    Plane ``p`` has RAAN ``raan_offset + 2 pi p / P``; satellite ``q`` in that plane
    sits at argument of latitude ``2 pi q P / T + 2 pi F p / T``.
    """
    per_plane = spec.total // spec.planes
    a = EARTH_RADIUS_KM + spec.altitude
    sats = []
    for p in range(spec.planes):
        raan = math.fmod(spec.raan_offset + TWO_PI * p / spec.planes, TWO_PI) % TWO_PI
        for q in range(per_plane):
            phase = (TWO_PI * q * spec.planes / spec.total + TWO_PI * spec.phasing * p / spec.total) % TWO_PI
            sats.append(
                SatelliteSpec(
                    id=id_base + p * per_plane + q,
                    semi_major_axis=a,
                    inclination=spec.inclination,
                    raan=raan,
                    initial_phase=phase,
                    shell_id=shell_id,
                )
            )
    return sats


def build_constellation(shells: list[WalkerSpec]) -> list[SatelliteSpec]:
    """Concatenate several Walker shells with consecutive satellite ids."""
    sats: list[SatelliteSpec] = []
    for shell_id, shell in enumerate(shells):
        sats.extend(generate_walker(shell, id_base=len(sats), shell_id=shell_id))
    return sats


def revisit_gaps(windows: list[ContactWindow]) -> list[float]:
    """Out-of-contact gaps between consecutive windows of one satellite."""
    return [b.rise_time - a.set_time for a, b in zip(windows, windows[1:])]
