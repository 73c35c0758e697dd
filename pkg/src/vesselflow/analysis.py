"""Post-processing: error metric, physical observables and field export.

Everything here treats trained networks as immutable functions accessed
through the same field adapters the residuals use. Reference solutions
are closed-form oracles or saved field files, never a live solve.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .domain import VesselGeometry, radial_direction, reference_radius


class AnalysisError(ValueError):
    pass


# ----------------------------------------------------------------------
# evaluation grid and the relative error metric

@dataclass(frozen=True)
class EvaluationGrid:
    """Cell-centred (r, z) tiling of the reference fluid meridian with
    annular volume weights, plus a uniform time sampling."""

    r_centers: np.ndarray
    z_centers: np.ndarray
    volumes: np.ndarray      # flattened cell volumes, len n_r * n_z
    times: np.ndarray
    time_step: float

    @classmethod
    def build(cls, geometry: VesselGeometry, n_r: int = 64, n_z: int = 64,
              n_t: int = 50) -> "EvaluationGrid":
        if min(n_r, n_z, n_t) < 1:
            raise AnalysisError("grid resolutions must be positive")
        r_edges = np.linspace(0.0, geometry.radius, n_r + 1)
        z_edges = np.linspace(0.0, geometry.length, n_z + 1)
        r_mid = 0.5 * (r_edges[:-1] + r_edges[1:])
        z_mid = 0.5 * (z_edges[:-1] + z_edges[1:])
        dz = z_edges[1] - z_edges[0]
        ring = np.pi * (r_edges[1:] ** 2 - r_edges[:-1] ** 2) * dz
        rr, zz = np.meshgrid(r_mid, z_mid, indexing="ij")
        vol = np.repeat(ring[:, None], n_z, axis=1)
        # drop cells whose centre lies outside a dented lumen
        inside = rr <= reference_radius(geometry, zz)
        time_step = geometry.horizon / n_t
        times = time_step * np.arange(1, n_t + 1)
        return cls(rr[inside], zz[inside], vol[inside], times, time_step)

    def __len__(self):
        return len(self.volumes)


def relative_error(field: Callable, reference: Callable, grid: EvaluationGrid) -> float:
    """Volume-weighted squared mismatch ratio, summed over time slices and
    scaled by the time step.

    `field` and `reference` map (r array, z array, t) to nodal values.
    Identical fields give exactly zero. A reference that vanishes on a
    whole slice is rejected."""
    total = 0.0
    for t in grid.times:
        got = np.asarray(field(grid.r_centers, grid.z_centers, t), dtype=np.float64)
        ref = np.asarray(reference(grid.r_centers, grid.z_centers, t), dtype=np.float64)
        num = float(np.sum(grid.volumes * (got - ref) ** 2))
        den = float(np.sum(grid.volumes * ref**2))
        if den == 0.0:
            raise AnalysisError(f"reference field vanishes on the slice t={t}")
        total += num / den
    return grid.time_step * total


# ----------------------------------------------------------------------
# closed-form oracles

def poiseuille_oracle(r, u_max: float, r0: float):
    """Axial velocity of the parabolic profile."""
    return u_max * (1.0 - np.asarray(r, dtype=np.float64) ** 2 / r0**2)


def pressure_drop_oracle(z, u_max: float, r0: float, mu: float):
    """Pressure relative to the inlet for fully developed tube flow."""
    return -4.0 * mu * u_max / r0**2 * np.asarray(z, dtype=np.float64)


# ----------------------------------------------------------------------
# observables

def _flow_with_gradients(flow, r_val, z_val, t_val):
    """Velocity, pressure and current-frame first derivatives at points
    given directly in current coordinates."""
    tape = ad.Tape()
    to_leaf = tape.batch if isinstance(r_val, np.ndarray) else tape.scalar
    r = to_leaf(r_val)
    z = to_leaf(np.asarray(z_val, dtype=np.float64)
                if isinstance(r_val, np.ndarray) else z_val)
    t = to_leaf(np.asarray(t_val, dtype=np.float64)
                if isinstance(r_val, np.ndarray) else t_val)
    u_z, u_r, p = flow.velocity_pressure(tape, r, z, t)
    duz = tape.grad(u_z, [r, z])
    dur = tape.grad(u_r, [r, z])
    return {
        "u_z": u_z.value, "u_r": u_r.value, "p": p.value,
        "duz_dr": duz[0].value, "duz_dz": duz[1].value,
        "dur_dr": dur[0].value, "dur_dz": dur[1].value,
    }


def traction_norm(flow, point, normal, fluid) -> float:
    """Euclidean norm of the fluid traction sigma . n at a current-frame
    surface point, sigma = -P I + 2 mu D(u)."""
    r, z, t = point
    f = _flow_with_gradients(flow, r, z, t)
    mu = fluid.viscosity
    n_r, n_z = normal
    norm = np.hypot(n_r, n_z)
    if norm == 0:
        raise AnalysisError("surface normal must be nonzero")
    n_r, n_z = n_r / norm, n_z / norm
    s_rr = -f["p"] + 2.0 * mu * f["dur_dr"]
    s_zz = -f["p"] + 2.0 * mu * f["duz_dz"]
    s_rz = mu * (f["dur_dz"] + f["duz_dr"])
    t_r = s_rr * n_r + s_rz * n_z
    t_z = s_rz * n_r + s_zz * n_z
    return float(np.hypot(t_r, t_z))


def displacement_value(displacement, r, z, t) -> float:
    tape = ad.Tape()
    return float(displacement.radial(tape, tape.scalar(r), tape.scalar(z),
                                     tape.scalar(t)).value)


def outlet_flux(flow, displacement, t: float, geometry: VesselGeometry,
                n_quad: int = 256) -> float:
    """Volumetric flux through the current outlet section.

    Composite trapezoid in the squared-radius variable: with s = r^2 the
    integral is pi * int u_z(sqrt(s)) ds, so parabolic profiles integrate
    exactly and the annular area weighting is built into the substitution."""
    wall_eta = displacement_value(displacement, geometry.radius, geometry.length, t)
    radius_now = reference_radius(geometry, geometry.length) + wall_eta
    s = np.linspace(0.0, radius_now**2, n_quad)
    rho = np.sqrt(s)
    tape = ad.Tape()
    r = tape.batch(rho)
    z = tape.batch(np.full(n_quad, geometry.length))
    tt = tape.batch(np.full(n_quad, t))
    u_z, _, _ = flow.velocity_pressure(tape, r, z, tt)
    integrand = np.pi * np.broadcast_to(
        np.asarray(u_z.value, dtype=np.float64), (n_quad,))
    return float(np.trapezoid(integrand, s))


def cycle_integrated_flux(flow, displacement, geometry: VesselGeometry,
                          times: np.ndarray, n_quad: int = 256) -> float:
    series = np.array([outlet_flux(flow, displacement, t, geometry, n_quad)
                       for t in times])
    return float(np.trapezoid(series, times))


@dataclass
class ProbeSeries:
    location: tuple[float, float]
    times: np.ndarray
    velocity_magnitude: np.ndarray
    pressure: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise AnalysisError("probe times must strictly increase")


def default_probes(geometry: VesselGeometry) -> list[tuple[float, float]]:
    """Centerline probes at the inlet, middle and outlet."""
    return [(0.0, 0.0), (0.0, geometry.length / 2.0), (0.0, geometry.length)]


def probe(points: Sequence[tuple], times: np.ndarray, flow, displacement) -> list[ProbeSeries]:
    """Field histories at the current-frame images of reference points."""
    times = np.asarray(times, dtype=np.float64)
    out = []
    for (r0_pt, z0_pt) in points:
        tape = ad.Tape()
        r = tape.batch(np.full(len(times), r0_pt))
        z = tape.batch(np.full(len(times), z0_pt))
        t = tape.batch(times)
        eta = displacement.radial(tape, r, z, t)
        r_t = r + _dir_const(tape, r) * eta
        z_t = tape.batch(np.full(len(times), z0_pt))
        t_p = tape.batch(times)
        u_z, u_r, p = flow.velocity_pressure(tape, r_t, z_t, t_p)
        speed = np.hypot(np.asarray(u_z.value, dtype=np.float64),
                         np.asarray(u_r.value, dtype=np.float64))
        out.append(ProbeSeries((r0_pt, z0_pt), times, speed,
                               np.asarray(p.value, dtype=np.float64) + np.zeros(len(times))))
    return out


def _dir_const(tape, r):
    d = radial_direction(r.value)
    return tape.batch_constant(d) if isinstance(d, np.ndarray) else tape.constant(d)


def speed_field(flow, displacement) -> Callable:
    """(r array, z array, t) -> velocity magnitude at the current-frame
    images of the reference points; one record per time slice."""

    def field(r_arr, z_arr, t):
        n = len(r_arr)
        tape = ad.Tape()
        r = tape.batch(r_arr)
        z = tape.batch(z_arr)
        tt = tape.batch(np.full(n, float(t)))
        eta = displacement.radial(tape, r, z, tt)
        r_t = r + _dir_const(tape, r) * eta
        z_t = tape.batch(z_arr)
        t_p = tape.batch(np.full(n, float(t)))
        u_z, u_r, _ = flow.velocity_pressure(tape, r_t, z_t, t_p)
        return np.hypot(np.broadcast_to(np.asarray(u_z.value, dtype=np.float64), (n,)),
                        np.broadcast_to(np.asarray(u_r.value, dtype=np.float64), (n,)))

    return field


# ----------------------------------------------------------------------
# exports

def export_fields(path, flow, displacement, grid: EvaluationGrid) -> None:
    """Field snapshot CSV: one row per (t, cell centre)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_s", "r_cm", "z_cm", "u_z_cm_per_s", "u_r_cm_per_s",
                         "p_dyn_per_cm2", "eta_cm"])
        n = len(grid.r_centers)
        for t in grid.times:
            tape = ad.Tape()
            r = tape.batch(grid.r_centers)
            z = tape.batch(grid.z_centers)
            tt = tape.batch(np.full(n, t))
            eta = displacement.radial(tape, r, z, tt)
            r_t = r + _dir_const(tape, r) * eta
            z_t = tape.batch(grid.z_centers)
            t_p = tape.batch(np.full(n, t))
            u_z, u_r, p = flow.velocity_pressure(tape, r_t, z_t, t_p)
            cols = [np.broadcast_to(np.asarray(c, dtype=np.float64), (n,))
                    for c in (u_z.value, u_r.value, p.value, eta.value)]
            for k in range(n):
                writer.writerow([repr(float(t)), repr(float(grid.r_centers[k])),
                                 repr(float(grid.z_centers[k])),
                                 repr(float(cols[0][k])), repr(float(cols[1][k])),
                                 repr(float(cols[2][k])), repr(float(cols[3][k]))])


def write_probe_csv(path, series: Sequence[ProbeSeries]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["r_cm", "z_cm", "t_s", "speed_cm_per_s", "p_dyn_per_cm2"])
        for s in series:
            for t, v, p in zip(s.times, s.velocity_magnitude, s.pressure):
                writer.writerow([repr(s.location[0]), repr(s.location[1]),
                                 repr(float(t)), repr(float(v)), repr(float(p))])


def write_flux_csv(path, flow, displacement, geometry: VesselGeometry,
                   times: np.ndarray, n_quad: int = 256) -> None:
    """Outlet flux over time plus its running cycle integral."""
    times = np.asarray(times, dtype=np.float64)
    series = np.array([outlet_flux(flow, displacement, t, geometry, n_quad)
                       for t in times])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_s", "flux_cm3_per_s", "integrated_flux_cm3"])
        running = 0.0
        for k, t in enumerate(times):
            if k:
                running += 0.5 * (series[k] + series[k - 1]) * (times[k] - times[k - 1])
            writer.writerow([repr(float(t)), repr(float(series[k])), repr(float(running))])
