"""Reference geometry, collocation sampling and the moving-domain map.

The axisymmetric vessel is described in a signed-radius meridian plane:
the physical annulus 0 <= rho <= R(z) at each axial station maps to the
strip -R(z) <= r <= R(z). Wall samples sit on both signed sides. The
radial unit direction at signed coordinate r points away from the axis,
so it is +1 for r >= 0 and -1 for r < 0.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import autodiff as ad


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class PlaqueShape:
    """Half-elliptical wall deposit bulging into the lumen."""

    long_radius: float   # cm, axial half-extent
    short_radius: float  # cm, radial protrusion
    center_z: float      # cm


@dataclass(frozen=True)
class VesselGeometry:
    """Straight reference vessel segment, CGS units."""

    radius: float = 0.25       # cm
    length: float = 2.0        # cm
    wall_thickness: float = 0.05  # cm
    horizon: float = 2.0       # s
    plaque: PlaqueShape | None = None

    def __post_init__(self):
        if min(self.radius, self.length, self.wall_thickness, self.horizon) <= 0:
            raise GeometryError("geometry lengths and horizon must be positive")
        p = self.plaque
        if p is not None:
            if not 0 < p.short_radius < self.radius:
                raise GeometryError("plaque short radius must lie inside the lumen")
            if p.long_radius <= 0:
                raise GeometryError("plaque long radius must be positive")
            if p.center_z - p.long_radius <= 0 or p.center_z + p.long_radius >= self.length:
                raise GeometryError("plaque must sit strictly inside the segment")


class RegionTag(Enum):
    FLUID_INTERIOR = "fluid_interior"
    WALL = "wall"              # whole interface
    WALL_UPSTREAM = "wall_upstream"
    WALL_PLAQUE = "wall_plaque"
    WALL_DOWNSTREAM = "wall_downstream"
    INLET = "inlet"
    OUTLET = "outlet"
    WALL_ENDPOINTS = "wall_endpoints"


WALL_SUBTAGS = (RegionTag.WALL_UPSTREAM, RegionTag.WALL_PLAQUE, RegionTag.WALL_DOWNSTREAM)


def reference_radius(geometry: VesselGeometry, z) -> "float | np.ndarray":
    """Lumen radius of the undeformed wall at axial position z."""
    p = geometry.plaque
    if p is None:
        return np.full_like(np.asarray(z, dtype=np.float64), geometry.radius) \
            if isinstance(z, np.ndarray) else geometry.radius
    z_arr = np.asarray(z, dtype=np.float64)
    inside = np.abs(z_arr - p.center_z) <= p.long_radius
    dent = np.zeros_like(z_arr)
    ratio = (p.short_radius / p.long_radius) ** 2
    local = p.short_radius**2 - ratio * (z_arr - p.center_z) ** 2
    dent = np.where(inside, np.sqrt(np.maximum(local, 0.0)), 0.0)
    out = geometry.radius - dent
    return out if isinstance(z, np.ndarray) else float(out)


def wall_subtag(geometry: VesselGeometry, z: float) -> RegionTag:
    p = geometry.plaque
    if p is None:
        return RegionTag.WALL
    if z < p.center_z - p.long_radius:
        return RegionTag.WALL_UPSTREAM
    if z > p.center_z + p.long_radius:
        return RegionTag.WALL_DOWNSTREAM
    return RegionTag.WALL_PLAQUE


@dataclass(frozen=True)
class SampleSet:
    """Tagged collocation points in reference coordinates, one time each."""

    r: np.ndarray
    z: np.ndarray
    t: np.ndarray
    region: RegionTag
    seed: int
    subtags: tuple[RegionTag, ...] | None = None  # per-point wall sub-tags

    def __len__(self):
        return len(self.r)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["r_cm", "z_cm", "t_s", "region"])
            subtags = self.subtags or [self.region] * len(self)
            for r, z, t, tag in zip(self.r, self.z, self.t, subtags):
                writer.writerow([repr(float(r)), repr(float(z)), repr(float(t)), tag.value])


def sample(geometry: VesselGeometry, region: RegionTag, count: int, seed: int,
           at_initial_time: bool = False) -> SampleSet:
    """Uniform independent draws over a region, paired one-to-one with
    uniform times over [0, horizon] (or all zeros for initial-condition sets).

    Interior points are rejection-sampled from the bounding strip so they
    fall strictly inside the undeformed lumen even past a plaque."""
    if count <= 0:
        raise GeometryError("sample count must be positive")
    rng = np.random.default_rng(seed)
    r0, length = geometry.radius, geometry.length
    subtags = None
    if region == RegionTag.FLUID_INTERIOR:
        rs = np.empty(count)
        zs = np.empty(count)
        filled = 0
        while filled < count:
            cand_r = rng.uniform(-r0, r0, size=2 * (count - filled))
            cand_z = rng.uniform(0.0, length, size=2 * (count - filled))
            keep = np.abs(cand_r) < reference_radius(geometry, cand_z)
            kept = min(int(keep.sum()), count - filled)
            idx = np.flatnonzero(keep)[:kept]
            rs[filled:filled + kept] = cand_r[idx]
            zs[filled:filled + kept] = cand_z[idx]
            filled += kept
    elif region == RegionTag.WALL:
        zs = rng.uniform(0.0, length, size=count)
        signs = np.where(rng.random(count) < 0.5, -1.0, 1.0)
        rs = signs * reference_radius(geometry, zs)
        subtags = tuple(wall_subtag(geometry, z) for z in zs)
    elif region == RegionTag.INLET:
        zs = np.zeros(count)
        rs = rng.uniform(-r0, r0, size=count)
    elif region == RegionTag.OUTLET:
        zs = np.full(count, length)
        rs = rng.uniform(-r0, r0, size=count)
    elif region == RegionTag.WALL_ENDPOINTS:
        corner = rng.integers(0, 4, size=count)
        rs = np.where(corner % 2 == 0, r0, -r0)
        zs = np.where(corner < 2, 0.0, length)
    else:
        raise GeometryError(f"unknown sampling region {region}")
    ts = np.zeros(count) if at_initial_time else rng.uniform(0.0, geometry.horizon, size=count)
    return SampleSet(rs, zs, ts, region, seed, subtags)


def radial_direction(r) -> "float | np.ndarray":
    """Outward unit direction along the signed radial coordinate; +1 at r=0."""
    if isinstance(r, np.ndarray):
        return np.where(r >= 0.0, 1.0, -1.0)
    return 1.0 if r >= 0.0 else -1.0


def ale_map(x0: tuple, t: float, displacement) -> tuple:
    """Current-frame coordinates of reference point x0=(r, z) at time t.

    `displacement` maps (r, z, t) to the radial displacement magnitude;
    displacement acts along the outward radial direction, the axial
    coordinate is unchanged."""
    r, z = x0
    eta = displacement(r, z, t)
    return (r + radial_direction(r) * eta, z)


def clamp_radius(r, eps_r: float):
    """Signed radius pushed away from the axis: |1/clamp| <= 1/eps_r.

    Equal to r when |r| >= eps_r. The sign at exactly 0 is taken as +1 so
    the clamp never returns 0. Works on numbers and recorded scalars; for
    recorded scalars the sign is frozen at the current value."""
    if eps_r <= 0:
        raise GeometryError("eps_r must be positive")
    if isinstance(r, ad.DiffScalar):
        direction = radial_direction(r.value)
        dir_node = r.tape.batch_constant(direction) if isinstance(direction, np.ndarray) \
            else r.tape.constant(direction)
        return dir_node * (ad.relu(dir_node * r - eps_r) + eps_r)
    direction = radial_direction(r)
    return direction * (np.maximum(direction * r - eps_r, 0.0) + eps_r)
