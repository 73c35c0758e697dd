import time
import numpy as np
from vesselflow.config import ScenarioConfig, TrainingSettings
from vesselflow.trainer import Trainer, build_networks

def run(depth=12, wu=20, wp=10, lr=1e-3, seed=0, interior=128, wall=64, port=64):
    cfg = ScenarioConfig(
        name="cylinder-reduced",
        training=TrainingSettings(
            interior_points=interior, wall_points=wall, port_points=port,
            learning_rate=lr, fluid_epochs=200, velocity_epochs=80,
            pressure_epochs=20, ladder_steps=5, max_alternations=0,
            convergence_threshold=0.0, network_depth=depth,
            velocity_width=wu, pressure_width=wp, displacement_width=wu,
        ))
    networks = build_networks(cfg, seed=seed)
    tr = Trainer(cfg, networks, seed=seed)
    t0 = time.time()
    hist = tr.run()
    dt = time.time() - t0
    print(f"depth={depth} lr={lr} seed={seed}: {len(hist)} epochs in {dt/60:.1f} min", flush=True)
    stages = hist.stages()
    prev_end = None
    jumps_up = 0
    drops = 0
    for stage in stages:
        totals = hist.fluid_totals(stage)
        start, end = totals[0], totals[-1]
        tag = ""
        if stage.startswith("ladder-"):
            if prev_end is not None and start > prev_end:
                jumps_up += 1
                tag += " JUMP"
            if end < start:
                drops += 1
                tag += " DROP"
        print(f"  {stage}: {start:.6g} -> {end:.6g}{tag}", flush=True)
        prev_end = end
    print(f"  => jumps {jumps_up}/5, in-segment drops {drops}/5", flush=True)

run(seed=0)
run(seed=1)
