"""Command-line entry points: training runs, evaluation and diagnostics."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import analysis, autodiff as ad, nets as nets_mod
from .config import ConfigError, PRESET_NAMES, ScenarioConfig, load_config, preset
from .physics import NetworkDisplacement, NetworkFlow, ZeroDisplacement
from .trainer import TrainingPlan, Trainer, build_networks


class CliError(RuntimeError):
    pass


def _scenario_from_args(args) -> ScenarioConfig:
    if getattr(args, "config", None):
        return load_config(args.config)
    return preset(args.preset)


def _add_scenario_options(parser):
    group = parser.add_mutually_exclusive_group()
    group.add_argument("--preset", choices=PRESET_NAMES, default="cylinder",
                       help="built-in scenario")
    group.add_argument("--config", help="path to a scenario config JSON file")


def _add_grid_options(parser):
    parser.add_argument("--grid-r", type=int, default=64)
    parser.add_argument("--grid-z", type=int, default=64)
    parser.add_argument("--grid-t", type=int, default=50)


def _load_run_networks(args, config: ScenarioConfig):
    loaded, _ = nets_mod.load_networks(args.checkpoint)
    t = config.training
    expected = {
        "u": [3] + [t.velocity_width] * (t.network_depth - 1) + [2],
        "p": [3] + [t.pressure_width] * (t.network_depth - 1) + [1],
        "d": [3] + [t.displacement_width] * (t.network_depth - 1) + [1],
    }
    for name, widths in expected.items():
        if name not in loaded:
            raise CliError(f"checkpoint is missing the {name!r} network")
        if loaded[name].widths != widths:
            raise CliError(
                f"checkpoint/architecture mismatch for {name!r}: "
                f"expected widths {widths}, found {loaded[name].widths}")
    return loaded


def _adapters(networks, config: ScenarioConfig):
    flow = NetworkFlow(networks["u"], networks["p"])
    disp = (ZeroDisplacement() if config.training.rigid_wall
            else NetworkDisplacement(networks["d"]))
    return flow, disp


# ----------------------------------------------------------------------
# commands

def _cmd_train(args) -> int:
    config = _scenario_from_args(args)
    plan = TrainingPlan.from_config(config)
    overrides = {}
    for field_name, arg_name in (
            ("fluid_epochs", "fluid_epochs"), ("solid_epochs", "solid_epochs"),
            ("ladder_steps", "ladder_steps"), ("max_alternations", "alternations")):
        value = getattr(args, arg_name)
        if value is not None:
            overrides[field_name] = value
    if overrides:
        from dataclasses import replace
        plan = replace(plan, **overrides)
    os.makedirs(args.out_dir, exist_ok=True)
    config.save(os.path.join(args.out_dir, "config.json"))
    networks = build_networks(config, args.seed)
    trainer = Trainer(config, networks, plan, seed=args.seed,
                      out_dir=args.out_dir,
                      checkpoint_interval=args.checkpoint_interval,
                      shards=args.workers)
    history = trainer.run()
    geometry = config.vessel_geometry()
    flow, disp = _adapters(networks, config)
    times = np.linspace(geometry.horizon / 50, geometry.horizon, 50)
    analysis.write_probe_csv(
        os.path.join(args.out_dir, "probes.csv"),
        analysis.probe(analysis.default_probes(geometry), times, flow, disp))
    analysis.write_flux_csv(os.path.join(args.out_dir, "flux.csv"),
                            flow, disp, geometry, times)
    fields_dir = os.path.join(args.out_dir, "fields")
    os.makedirs(fields_dir, exist_ok=True)
    grid = analysis.EvaluationGrid.build(geometry, 32, 32, 5)
    analysis.export_fields(os.path.join(fields_dir, "snapshot.csv"),
                           flow, disp, grid)
    print(f"trained {len(history)} epochs; artifacts in {args.out_dir}")
    return 0


def _cmd_evaluate(args) -> int:
    config = _scenario_from_args(args)
    networks = _load_run_networks(args, config)
    geometry = config.vessel_geometry()
    flow, disp = _adapters(networks, config)
    grid = analysis.EvaluationGrid.build(geometry, args.grid_r, args.grid_z,
                                         args.grid_t)
    speed_field = analysis.speed_field(flow, disp)

    if args.reference:
        ref_field = _reference_from_csv(args.reference)
        err = analysis.relative_error(speed_field, ref_field, grid)
        print(f"relative velocity-magnitude error vs {args.reference}: {err:.6e}")
    else:
        u_max = args.u_max
        r0 = geometry.radius

        def oracle(r, z, t):
            return np.abs(analysis.poiseuille_oracle(r, u_max, r0))

        err = analysis.relative_error(speed_field, oracle, grid)
        print(f"relative velocity-magnitude error vs parabolic oracle: {err:.6e}")
    return 0


def _reference_from_csv(path):
    """Nodal lookup for a field snapshot written by export-fields."""
    import csv as _csv

    table = {}
    with open(path) as fh:
        for row in _csv.DictReader(fh):
            key = (round(float(row["t_s"]), 12), round(float(row["r_cm"]), 12),
                   round(float(row["z_cm"]), 12))
            table[key] = np.hypot(float(row["u_z_cm_per_s"]),
                                  float(row["u_r_cm_per_s"]))

    def field(r, z, t):
        out = np.empty(len(r))
        for k, (ri, zi) in enumerate(zip(r, z)):
            key = (round(float(t), 12), round(float(ri), 12), round(float(zi), 12))
            if key not in table:
                raise CliError(f"reference file has no node at {key}")
            out[k] = table[key]
        return out

    return field


def _cmd_probe(args) -> int:
    config = _scenario_from_args(args)
    networks = _load_run_networks(args, config)
    geometry = config.vessel_geometry()
    flow, disp = _adapters(networks, config)
    if args.points:
        points = []
        for chunk in args.points.split(";"):
            r_str, z_str = chunk.split(",")
            points.append((float(r_str), float(z_str)))
    else:
        points = analysis.default_probes(geometry)
    times = np.linspace(geometry.horizon / args.times, geometry.horizon, args.times)
    series = analysis.probe(points, times, flow, disp)
    analysis.write_probe_csv(args.out, series)
    print(f"wrote {len(series)} probe series to {args.out}")
    return 0


def _cmd_export_fields(args) -> int:
    config = _scenario_from_args(args)
    networks = _load_run_networks(args, config)
    geometry = config.vessel_geometry()
    flow, disp = _adapters(networks, config)
    grid = analysis.EvaluationGrid.build(geometry, args.grid_r, args.grid_z,
                                         args.grid_t)
    analysis.export_fields(args.out, flow, disp, grid)
    print(f"wrote field snapshots to {args.out}")
    return 0


def _cmd_param_count(args) -> int:
    spec = args.arch.strip().lower()
    single = spec.endswith("-single")
    trimmed = spec.removesuffix("-single").removesuffix("-split")
    try:
        depth_str, width_str = trimmed.split("x")
        depth, width = int(depth_str), int(width_str)
    except ValueError:
        raise CliError(
            f"cannot parse architecture {args.arch!r}; "
            "expected e.g. 12x30-split or 12x30-single")
    count = (nets_mod.single_param_count(depth, width) if single
             else nets_mod.split_param_count(depth, width))
    print(count)
    return 0


def _cmd_grad_check(args) -> int:
    rng = np.random.default_rng(args.seed)

    def composite(x, y, z):
        return ad.exp(x * y * 0.3) + ad.sqrt(z + 3.0) * ad.sin(x) + ad.relu(y) / (z + 4.0)

    worst_primitive = 0.0
    for _ in range(10):
        pt = rng.uniform(-1.5, 1.5, size=3)
        if min(abs(pt[1]), abs(np.sin(pt[0]))) < 1e-3:
            continue
        worst_primitive = max(worst_primitive, ad.fd_check(composite, pt, 1e-5))

    net = nets_mod.build(12, 20, 3, 2, seed=args.seed, name="u")

    def net_out(r, z, t):
        return net.forward(r.tape, [r, z, t])[0]

    def feval(pt):
        return float(net.evaluate(np.asarray(pt)[None, :])[0, 0])

    worst_second = 0.0
    checked = 0
    while checked < 5:
        pt = rng.uniform(-1.0, 1.0, size=3)
        if net.relu_margin(pt) < 1e-6:
            continue
        for i in range(3):
            got = ad.second_derivative(net_out, pt, i, i)
            h = 1e-4
            hi, lo = pt.copy(), pt.copy()
            hi[i] += h
            lo[i] -= h
            fd = (feval(hi) - 2 * feval(pt) + feval(lo)) / h**2
            rel = abs(got - fd) / max(abs(got), abs(fd), 1.0)
            worst_second = max(worst_second, rel)
        checked += 1

    worst = max(worst_primitive, worst_second)
    print(f"max first/second-derivative discrepancy vs finite differences: {worst:.3e}")
    if worst >= 1e-3:
        print("FAIL: discrepancy above 1e-3", file=sys.stderr)
        return 1
    return 0


# ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vesselflow",
        description="Mesh-free neural solver for flow in deformable axisymmetric vessels",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the staged training schedule")
    _add_scenario_options(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--checkpoint-interval", type=int, default=0)
    p.add_argument("--workers", type=int, default=1,
                   help="gradient-averaging shards (deterministic)")
    p.add_argument("--fluid-epochs", type=int, default=None)
    p.add_argument("--solid-epochs", type=int, default=None)
    p.add_argument("--ladder-steps", type=int, default=None)
    p.add_argument("--alternations", type=int, default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="relative error on the evaluation grid")
    _add_scenario_options(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--reference", help="field snapshot CSV to compare against")
    p.add_argument("--u-max", type=float, default=20.0,
                   help="oracle peak velocity when no reference file is given")
    _add_grid_options(p)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("probe", help="field histories at reference points")
    _add_scenario_options(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--points", help="semicolon-separated r,z pairs")
    p.add_argument("--times", type=int, default=50)
    p.add_argument("--out", default="probes.csv")
    p.set_defaults(func=_cmd_probe)

    p = sub.add_parser("export-fields", help="field snapshot CSV on a grid")
    _add_scenario_options(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default="fields.csv")
    _add_grid_options(p)
    p.set_defaults(func=_cmd_export_fields)

    p = sub.add_parser("param-count", help="parameter count of an architecture")
    p.add_argument("arch", help="e.g. 12x30-split, 12x60-split, 12x30-single")
    p.set_defaults(func=_cmd_param_count)

    p = sub.add_parser("grad-check", help="finite-difference derivative check")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_grad_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
