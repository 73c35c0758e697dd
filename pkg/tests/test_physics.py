"""Residual verification against closed-form manufactured fields."""

import numpy as np
import pytest

from vesselflow import autodiff as ad
from vesselflow import nets, physics
from vesselflow.domain import PlaqueShape, RegionTag, VesselGeometry
from vesselflow.physics import (
    AnalyticDisplacement, AnalyticFlow, CollocationSamples, FluidLossGraph,
    FluidProperties, LossBreakdown, LossWeights, NetworkDisplacement,
    NetworkFlow, SolidLossGraph, WallProperties, ZeroDisplacement,
    assemble_fluid_loss, assemble_solid_loss, discrete_norm, draw_samples,
    fluid_bc_residual, harmonic_residual, initial_residuals,
    ns_residual_axisym, ns_residual_cartesian, stress_continuity_residual,
)

GEOM = VesselGeometry()
FLUID = FluidProperties()
WALL = WallProperties()
EPS_R = GEOM.radius / 100.0  # axis clamp width
U_MAX, R0 = 20.0, 0.25

REST_FLOW = AnalyticFlow(lambda r, z, t: 0.0, lambda r, z, t: 0.0, lambda r, z, t: 7.0)
ZERO_DISP = ZeroDisplacement()


def poiseuille_flow(u_max=U_MAX, r0=R0, mu=FLUID.viscosity, p0=100.0):
    dpdz = -4.0 * mu * u_max / r0**2
    return AnalyticFlow(
        lambda r, z, t: u_max * (1.0 - (r * r) * (1.0 / r0**2)),
        lambda r, z, t: 0.0,
        lambda r, z, t: p0 + dpdz * z,
    )


def interior_points(count, seed, min_abs_r=2 * EPS_R):
    rng = np.random.default_rng(seed)
    pts = []
    while len(pts) < count:
        r = rng.uniform(-R0, R0)
        if abs(r) < min_abs_r:
            continue
        pts.append((r, rng.uniform(0, 2.0), rng.uniform(0, 2.0)))
    return pts


class TestAxisymmetricResiduals:
    def test_rest_state_vanishes(self):
        for point in interior_points(20, seed=0):
            res = ns_residual_axisym(REST_FLOW, ZERO_DISP, point, FLUID, EPS_R)
            assert all(abs(c.value) == 0.0 for c in res)

    def test_poiseuille_annihilates_residual(self):
        flow = poiseuille_flow()
        worst = 0.0
        for point in interior_points(200, seed=1):
            res = ns_residual_axisym(flow, ZERO_DISP, point, FLUID, EPS_R)
            worst = max(worst, max(abs(c.value) for c in res))
        assert worst < 1e-8

    def test_linear_axial_field_hand_values(self):
        # u_z = z, u_r = 0, P = 0: divergence 1, axial residual rho*z.
        flow = AnalyticFlow(lambda r, z, t: z, lambda r, z, t: 0.0, lambda r, z, t: 0.0)
        point = (0.1, 0.73, 0.2)
        res_z, res_r, res_div = ns_residual_axisym(flow, ZERO_DISP, point, FLUID, EPS_R)
        assert res_div.value == pytest.approx(1.0, abs=1e-14)
        assert res_z.value == pytest.approx(FLUID.density * 0.73, rel=1e-14)
        assert res_r.value == pytest.approx(0.0, abs=1e-14)

    def test_batched_matches_per_point(self):
        flow = poiseuille_flow()
        pts = interior_points(16, seed=3)
        arr = tuple(np.array(col) for col in zip(*pts))
        batched = ns_residual_axisym(flow, ZERO_DISP, arr, FLUID, EPS_R)
        for k, point in enumerate(pts):
            single = ns_residual_axisym(flow, ZERO_DISP, point, FLUID, EPS_R)
            for bc, sc in zip(batched, single):
                assert bc.value[k] == pytest.approx(sc.value, abs=1e-12)


class TestCartesianResiduals:
    def test_rest_state(self):
        flow = AnalyticFlow2D((lambda x, y, t: 0.0, lambda x, y, t: 0.0),
                              lambda x, y, t: 3.0)
        res = ns_residual_cartesian(flow, (0.2, -0.4, 0.1), FLUID)
        assert all(abs(c.value) == 0.0 for c in res)

    def test_constant_advection(self):
        flow = AnalyticFlow2D((lambda x, y, t: 1.7, lambda x, y, t: 0.0),
                              lambda x, y, t: 5.0)
        res = ns_residual_cartesian(flow, (0.3, 0.9, 0.5), FLUID)
        assert all(abs(c.value) < 1e-14 for c in res)

    def test_divergence_of_identity_field(self):
        flow = AnalyticFlow2D((lambda x, y, t: x, lambda x, y, t: y),
                              lambda x, y, t: 0.0)
        *_, div = ns_residual_cartesian(flow, (0.3, 0.9, 0.5), FLUID)
        assert div.value == pytest.approx(2.0, abs=1e-14)


class AnalyticFlow2D:
    """Planar closed-form fields for the Cartesian residual."""

    def __init__(self, components, pressure):
        self.components = components
        self.pressure = pressure

    def velocity_pressure(self, tape, *coords_and_time):
        *coords, t = coords_and_time

        def wrap(v):
            return v if isinstance(v, ad.DiffScalar) else tape.constant(float(v))

        us = [wrap(f(*coords, t)) for f in self.components]
        return (*us, wrap(self.pressure(*coords, t)))


class TestHarmonicResidual:
    def test_zero_displacement(self):
        assert harmonic_residual(ZERO_DISP, (0.1, 0.5, 0.2), EPS_R).value == 0.0

    def test_linear_field_is_harmonic(self):
        disp = AnalyticDisplacement(lambda r, z, t: z)
        for point in interior_points(50, seed=4):
            assert abs(harmonic_residual(disp, point, EPS_R).value) < 1e-10

    def test_quadratic_field_hand_value(self):
        disp = AnalyticDisplacement(lambda r, z, t: z * z)
        res = harmonic_residual(disp, (0.12, 0.8, 0.1), EPS_R)
        assert res.value == pytest.approx(2.0, abs=1e-12)


class TestStressContinuity:
    def test_all_quiet_vanishes(self):
        disp = AnalyticDisplacement(lambda r, z, t: 0.0)
        flow = AnalyticFlow(lambda r, z, t: 0.0, lambda r, z, t: 0.0, lambda r, z, t: 0.0)
        res = stress_continuity_residual(flow, disp, (R0, 1.0, 0.4), WALL, FLUID, GEOM)
        assert res.value == 0.0

    def test_free_oscillation_mode(self):
        b = WALL.restoring_coefficient
        omega = np.sqrt(b)
        disp = AnalyticDisplacement(lambda r, z, t: ad.cos(omega * t))
        flow = AnalyticFlow(lambda r, z, t: 0.0, lambda r, z, t: 0.0, lambda r, z, t: 0.0)
        worst = 0.0
        for t in np.linspace(0.0, 2.0, 40):
            res = stress_continuity_residual(flow, disp, (R0, 0.7, t), WALL, FLUID, GEOM)
            worst = max(worst, abs(res.value))
        assert worst < 1e-8

    def test_constant_displacement_gives_restoring_term(self):
        # b = E / (rho (1-xi^2) R0^2) = 5e5 / (1.2 * 0.75 * 0.0625)
        b_by_hand = 5e5 / (1.2 * 0.75 * 0.0625)
        assert b_by_hand == pytest.approx(8888888.888888889)
        c = 3e-4
        disp = AnalyticDisplacement(lambda r, z, t: c)
        flow = AnalyticFlow(lambda r, z, t: 0.0, lambda r, z, t: 0.0, lambda r, z, t: 0.0)
        res = stress_continuity_residual(flow, disp, (-R0, 1.3, 0.9), WALL, FLUID, GEOM)
        assert res.value == pytest.approx(b_by_hand * c, rel=1e-12)

    def test_pressure_load_sign_and_scale(self):
        # Static wall, uniform pressure: residual = -(R/R0) P / (rho_s h0) with R = R0.
        p0 = 1000.0
        disp = AnalyticDisplacement(lambda r, z, t: 0.0)
        flow = AnalyticFlow(lambda r, z, t: 0.0, lambda r, z, t: 0.0, lambda r, z, t: p0)
        res = stress_continuity_residual(flow, disp, (R0, 1.0, 0.1), WALL, FLUID, GEOM)
        want = -p0 / (WALL.density * WALL.thickness)
        assert res.value == pytest.approx(want, rel=1e-12)

    def test_plaque_segment_uses_dented_radius(self):
        geom = VesselGeometry(plaque=PlaqueShape(0.15, 0.1, 1.0))
        plaque_wall = WallProperties(density=1.1, youngs_modulus=1e6,
                                     poisson_ratio=0.5, thickness=0.05,
                                     reference_radius=0.25)
        c = 1e-3
        disp = AnalyticDisplacement(lambda r, z, t: c)
        flow = AnalyticFlow(lambda r, z, t: 0.0, lambda r, z, t: 0.0, lambda r, z, t: 0.0)
        z = 1.0  # apex, R_p = 0.15
        res = stress_continuity_residual(
            flow, disp, (0.15, z, 0.2), plaque_wall, FLUID, geom,
            segment=RegionTag.WALL_PLAQUE)
        want = 1e6 / (1.1 * 0.75 * 0.15**2) * c
        assert res.value == pytest.approx(want, rel=1e-12)


class TestFluidBoundaryResiduals:
    def inlet_factor(self, ts):
        return 10.0 - 10.0 * np.cos(2.0 * np.pi * ts)

    def test_inlet_peak_on_centerline(self):
        flow = AnalyticFlow(lambda r, z, t: 20.0, lambda r, z, t: 0.0, lambda r, z, t: 0.0)
        res = fluid_bc_residual(flow, ZERO_DISP, (0.0, 0.0, 0.5), RegionTag.INLET,
                                GEOM, FLUID, self.inlet_factor)
        assert all(abs(c.value) < 1e-12 for c in res)

    def test_inlet_wall_edge_zero_velocity(self):
        flow = AnalyticFlow(lambda r, z, t: 0.0, lambda r, z, t: 0.0, lambda r, z, t: 0.0)
        res = fluid_bc_residual(flow, ZERO_DISP, (R0, 0.0, 0.77), RegionTag.INLET,
                                GEOM, FLUID, self.inlet_factor)
        assert all(abs(c.value) < 1e-12 for c in res)

    def test_outlet_traction_free_for_poiseuille_shearless_axis(self):
        # On the centerline the parabolic profile has zero shear; the normal
        # stress balance needs P = 2 mu du_z/dz = 0.
        flow = poiseuille_flow(p0=4.0 * FLUID.viscosity * U_MAX / R0**2 * GEOM.length)
        res_r, res_z = fluid_bc_residual(flow, ZERO_DISP, (0.0, GEOM.length, 0.3),
                                         RegionTag.OUTLET, GEOM, FLUID, self.inlet_factor)
        assert abs(res_r.value) < 1e-12
        assert abs(res_z.value) < 1e-10  # P(l) = 0 by the chosen inlet pressure

    def test_interface_rest_wall(self):
        flow = AnalyticFlow(lambda r, z, t: 0.0, lambda r, z, t: 0.0, lambda r, z, t: 0.0)
        disp = AnalyticDisplacement(lambda r, z, t: 0.01)  # time-constant
        res = fluid_bc_residual(flow, disp, (R0, 0.6, 0.2), RegionTag.WALL,
                                GEOM, FLUID, self.inlet_factor)
        assert all(abs(c.value) < 1e-14 for c in res)

    def test_interface_moving_wall_matches_velocity(self):
        speed = 0.35
        disp = AnalyticDisplacement(lambda r, z, t: speed * t)
        flow = AnalyticFlow(lambda r, z, t: 0.0, lambda r, z, t: speed, lambda r, z, t: 0.0)
        res = fluid_bc_residual(flow, disp, (R0, 0.6, 0.2), RegionTag.WALL,
                                GEOM, FLUID, self.inlet_factor)
        assert all(abs(c.value) < 1e-14 for c in res)
        # mirrored side needs the signed radial component
        flow_neg = AnalyticFlow(lambda r, z, t: 0.0, lambda r, z, t: -speed, lambda r, z, t: 0.0)
        res = fluid_bc_residual(flow_neg, disp, (-R0, 0.6, 0.2), RegionTag.WALL,
                                GEOM, FLUID, self.inlet_factor)
        assert all(abs(c.value) < 1e-14 for c in res)


class TestInitialResiduals:
    def test_rest_fluid(self):
        res = initial_residuals(REST_FLOW, ZERO_DISP, (0.1, 0.3, 0.0), "fluid")
        assert [c.value for c in res] == [0.0, 0.0]

    def test_rest_solid(self):
        res = initial_residuals(REST_FLOW, ZERO_DISP, (R0, 0.3, 0.0), "solid")
        assert [c.value for c in res] == [0.0]

    def test_unit_axial_start(self):
        flow = AnalyticFlow(lambda r, z, t: 1.0, lambda r, z, t: 0.0, lambda r, z, t: 0.0)
        res = initial_residuals(flow, ZERO_DISP, (0.1, 0.3, 0.0), "fluid")
        assert np.hypot(res[0].value, res[1].value) == pytest.approx(1.0)


class TestDiscreteNorm:
    def test_constant_scalar(self):
        assert discrete_norm([3.0, 3.0, 3.0]) == 9.0

    def test_hand_case(self):
        assert discrete_norm([1.0, 2.0]) == 2.5

    def test_vector_magnitudes(self):
        assert discrete_norm([(3.0, 4.0)]) == 25.0

    def test_empty_rejected(self):
        with pytest.raises(physics.PhysicsError):
            discrete_norm([])


def make_nets(seed=0):
    u = nets.build(4, 8, 3, 2, seed=seed, name="u")
    p = nets.build(4, 4, 3, 1, seed=seed + 1, name="p")
    d = nets.build(4, 8, 3, 1, seed=seed + 2, name="d")
    return u, p, d


def tiny_samples(geometry=GEOM, seed=0):
    return draw_samples(geometry, interior_count=12, wall_count=8, port_count=8,
                        seed=seed)


def steady_factor(ts):
    return np.full_like(ts, 20.0)


class TestLossAssembly:
    def test_all_weights_zero_total_zero(self):
        weights = LossWeights(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        u, p, d = make_nets()
        flow, disp = NetworkFlow(u, p), NetworkDisplacement(d)
        samples = tiny_samples()
        fluid = assemble_fluid_loss(flow, disp, samples, GEOM, FLUID,
                                    steady_factor, weights, EPS_R)
        solid = assemble_solid_loss(flow, disp, samples, GEOM,
                                    {RegionTag.WALL: WALL}, FLUID, weights, EPS_R)
        assert fluid.fluid_total == 0.0
        assert solid.solid_total == 0.0

    def test_perfect_bc_satisfaction_zeroes_fluid_total(self):
        # alpha_ns = 0 and fields that satisfy boundary and initial data
        # exactly: rest flow with zero inlet drive.
        weights = LossWeights(ns=0.0, fluid_bdr=1.0, fluid_init=0.1)
        flow = AnalyticFlow(lambda r, z, t: 0.0, lambda r, z, t: 0.0, lambda r, z, t: 0.0)
        samples = tiny_samples()
        breakdown = assemble_fluid_loss(flow, ZERO_DISP, samples, GEOM, FLUID,
                                        lambda ts: np.zeros_like(ts), weights, EPS_R)
        assert breakdown.fluid_total == 0.0

    def test_doubling_harmonic_weight_doubles_contribution(self):
        u, p, d = make_nets(seed=5)
        flow, disp = NetworkFlow(u, p), NetworkDisplacement(d)
        samples = tiny_samples()
        w1 = LossWeights(harmonic=10.0, stress=0.0, solid_bdr=0.0, solid_init=0.0)
        w2 = LossWeights(harmonic=20.0, stress=0.0, solid_bdr=0.0, solid_init=0.0)
        s1 = assemble_solid_loss(flow, disp, samples, GEOM, {RegionTag.WALL: WALL},
                                 FLUID, w1, EPS_R)
        s2 = assemble_solid_loss(flow, disp, samples, GEOM, {RegionTag.WALL: WALL},
                                 FLUID, w2, EPS_R)
        assert s2.solid_total == pytest.approx(2.0 * s1.solid_total, rel=1e-15)
        assert s2.harmonic == s1.harmonic

    def test_breakdown_totals_recompute_exactly(self):
        u, p, d = make_nets(seed=9)
        flow, disp = NetworkFlow(u, p), NetworkDisplacement(d)
        samples = tiny_samples()
        weights = LossWeights(ns=1e-5)
        fluid = FluidLossGraph(flow, disp, samples, GEOM, FLUID, steady_factor,
                               weights, EPS_R)
        got = fluid.breakdown()
        assert got.fluid_total == LossBreakdown.fluid_sum(
            LossWeights(ns=1e-5, fluid_bdr=1.0, fluid_init=0.1),
            got.ns, got.fluid_bdr, got.fluid_init)
        assert got.fluid_total == float(fluid.total.value)

        solid = SolidLossGraph(flow, disp, samples, GEOM, {RegionTag.WALL: WALL},
                               FLUID, weights, EPS_R)
        sgot = solid.breakdown()
        assert sgot.solid_total == LossBreakdown.solid_sum(
            weights, sgot.stress, sgot.harmonic, sgot.solid_bdr, sgot.solid_init)
        assert sgot.solid_total == float(solid.total.value)

    def test_per_point_residuals_invariant_under_permutation(self):
        flow = poiseuille_flow()
        pts = interior_points(10, seed=8)
        arr = tuple(np.array(col) for col in zip(*pts))
        res = ns_residual_axisym(flow, ZERO_DISP, arr, FLUID, EPS_R)
        perm = np.random.default_rng(0).permutation(10)
        arr_p = tuple(col[perm] for col in arr)
        res_p = ns_residual_axisym(flow, ZERO_DISP, arr_p, FLUID, EPS_R)
        for a, b in zip(res, res_p):
            assert np.array_equal(np.asarray(a.value)[perm], np.asarray(b.value))


class TestDetachPolicy:
    def test_solid_total_has_zero_flow_gradients(self):
        u, p, d = make_nets(seed=2)
        flow, disp = NetworkFlow(u, p), NetworkDisplacement(d)
        samples = tiny_samples()
        graph = SolidLossGraph(flow, disp, samples, GEOM, {RegionTag.WALL: WALL},
                               FLUID, LossWeights(), EPS_R)
        grads = graph.param_grads(["u", "p", "d"])
        assert np.all(grads["u"] == 0.0)
        assert np.all(grads["p"] == 0.0)
        assert np.any(grads["d"] != 0.0)

    def test_interface_target_detached_in_fluid_loss(self):
        # Zero the flow networks so the velocity-matching residual reduces to
        # the wall-velocity target alone. Detached, it contributes no
        # displacement gradient; un-detached it does.
        u, p, d = make_nets(seed=3)
        nets.zero_init_output(u)
        nets.zero_init_output(p)
        flow, disp = NetworkFlow(u, p), NetworkDisplacement(d)

        def wall_loss(detach):
            point = (np.array([R0, -R0, R0]), np.array([0.2, 0.9, 1.7]),
                     np.array([0.1, 0.4, 0.8]))
            res = fluid_bc_residual(flow, disp, point, RegionTag.WALL, GEOM,
                                    FLUID, steady_factor,
                                    detach_interface_target=detach)
            tape = res[0].tape
            loss = physics.mean_square(tape, res)
            return ad.param_grad(loss, "d")

        assert np.all(wall_loss(True) == 0.0)
        assert np.any(wall_loss(False) != 0.0)

    def test_coordinate_path_stays_live(self):
        # With live flow networks the displacement still steers where the
        # fields are evaluated, so its fluid-loss gradient is nonzero.
        u, p, d = make_nets(seed=4)
        flow, disp = NetworkFlow(u, p), NetworkDisplacement(d)
        samples = tiny_samples()
        graph = FluidLossGraph(flow, disp, samples, GEOM, FLUID, steady_factor,
                               LossWeights(ns=1e-3), EPS_R)
        grads = graph.param_grads(["d", "u", "p"])
        assert np.any(grads["d"] != 0.0)
        assert np.any(grads["u"] != 0.0)
        assert np.any(grads["p"] != 0.0)


class TestLossGraphReplay:
    def test_replay_tracks_parameter_updates(self):
        u, p, d = make_nets(seed=6)
        flow, disp = NetworkFlow(u, p), NetworkDisplacement(d)
        samples = tiny_samples()
        graph = FluidLossGraph(flow, disp, samples, GEOM, FLUID, steady_factor,
                               LossWeights(ns=1e-4), EPS_R)
        before = float(graph.total.value)
        u.theta += 1e-3
        graph.replay()
        after = float(graph.total.value)
        assert after != before

        fresh = FluidLossGraph(NetworkFlow(u, p), disp, samples, GEOM, FLUID,
                               steady_factor, LossWeights(ns=1e-4), EPS_R)
        assert float(fresh.total.value) == pytest.approx(after, rel=1e-12)

    def test_alpha_ladder_updates_total(self):
        u, p, d = make_nets(seed=7)
        flow, disp = NetworkFlow(u, p), NetworkDisplacement(d)
        samples = tiny_samples()
        graph = FluidLossGraph(flow, disp, samples, GEOM, FLUID, steady_factor,
                               LossWeights(ns=0.0), EPS_R)
        base = graph.breakdown()
        graph.set_alpha_ns(1e-3)
        graph.replay()
        raised = graph.breakdown()
        assert raised.fluid_total > base.fluid_total
        assert raised.ns == base.ns  # the unweighted term itself is unchanged
