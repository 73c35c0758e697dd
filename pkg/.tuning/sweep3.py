import time
import numpy as np
from vesselflow.config import ScenarioConfig, TrainingSettings, InletSettings, WeightSettings
from vesselflow.trainer import Trainer, build_networks
from vesselflow import analysis
from vesselflow.physics import NetworkFlow, ZeroDisplacement

def run(lr_u, lr_p, wp=10, wu=20, depth=6, eps=1e-3, seed=0):
    cfg = ScenarioConfig(
        name="sweep",
        inlet=InletSettings(mode="steady", steady_value_cm_per_s=20.0),
        weights=WeightSettings(fluid_initial=0.0),
        training=TrainingSettings(
            interior_points=256, wall_points=128, port_points=128,
            learning_rate=lr_u, pressure_learning_rate=lr_p,
            fluid_epochs=2000, velocity_epochs=80,
            pressure_epochs=20, ladder_steps=5, max_alternations=0,
            convergence_threshold=eps, rigid_wall=True,
            network_depth=depth, velocity_width=wu, pressure_width=wp,
        ))
    networks = build_networks(cfg, seed=seed)
    tr = Trainer(cfg, networks, seed=seed)
    t0 = time.time()
    hist = tr.run()
    dt = time.time() - t0
    flow = NetworkFlow(networks["u"], networks["p"])
    disp = ZeroDisplacement()
    geom = cfg.vessel_geometry()
    grid = analysis.EvaluationGrid.build(geom, 32, 32, 8)
    err = analysis.relative_error(analysis.speed_field(flow, disp),
        lambda r, z, t: np.abs(analysis.poiseuille_oracle(r, 20.0, geom.radius)), grid)
    flux = analysis.outlet_flux(flow, disp, 1.0, geom) / (0.625 * np.pi)
    pts = np.array([[0.0, 0.0, 1.0], [0.0, 2.0, 1.0]])
    pvals = networks["p"].evaluate(pts)[:, 0]
    print(f"lr_u={lr_u} lr_p={lr_p} wp={wp} d={depth} eps={eps} seed={seed}: "
          f"err={err:.4f} flux_ratio={flux:.3f} dP={pvals[0]-pvals[1]:8.3f} "
          f"end={hist.fluid_totals()[-1]:.3g} ep={len(hist)} [{dt/60:.1f}m]", flush=True)

run(1e-2, 1e-1, depth=4)
run(1e-2, 1e-1, depth=6)
run(1e-2, 1e-1, wp=20, depth=4)
