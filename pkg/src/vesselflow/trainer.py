"""Staged training scheduler and the data-parallel gradient contract.

The schedule has three stages. First the flow networks are fitted to
boundary and initial data alone (momentum weight zero). Then the
momentum-residual weight climbs a factor-of-ten ladder, with a capped
block of flow epochs at each rung. Finally the wall and flow problems
alternate: a solid phase updates the displacement network against the
ring model while flow quantities enter as constants, then a flow block
re-fits velocity and pressure on the moved domain.

Inside every flow block the velocity and pressure optimizers take turns
in fixed-size runs, so exactly one parameter vector changes per epoch.
Collocation points are drawn once per stage from stage-indexed seeds.
Any phase stops early once the best loss improvement over a full
trailing window drops below the threshold.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import nets as nets_mod
from .config import ScenarioConfig
from .optim import AdamState
from .physics import (
    CollocationSamples, FluidLossGraph, LossBreakdown, LossWeights,
    NetworkDisplacement, NetworkFlow, SolidLossGraph, ZeroDisplacement,
    draw_samples,
)


class PlanError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    """Loss left the finite range; carries the last good checkpoint path."""

    def __init__(self, message: str, checkpoint: "str | None"):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass(frozen=True)
class TrainingPlan:
    fluid_epochs: int = 2000
    solid_epochs: int = 500
    u_epochs: int = 80
    p_epochs: int = 20
    ladder_steps: int = 5
    max_alternations: int = 6
    convergence_threshold: float = 0.1
    convergence_window: int = 100
    ladder_start: float = 1e-8

    def __post_init__(self):
        if min(self.fluid_epochs, self.solid_epochs, self.u_epochs,
               self.p_epochs, self.convergence_window) <= 0:
            raise PlanError("epoch counts and window must be positive")
        if self.ladder_steps < 0 or self.max_alternations < 0:
            raise PlanError("ladder steps and alternation cap cannot be negative")
        if self.fluid_epochs % (self.u_epochs + self.p_epochs) != 0:
            raise PlanError("fluid epochs must divide into whole u/p rounds")

    @classmethod
    def from_config(cls, config: ScenarioConfig) -> "TrainingPlan":
        t = config.training
        return cls(t.fluid_epochs, t.solid_epochs, t.velocity_epochs,
                   t.pressure_epochs, t.ladder_steps, t.max_alternations,
                   t.convergence_threshold, t.convergence_window)


def converged(losses: Sequence[float], threshold: float, window: int) -> bool:
    """True once a full window of history shows best improvement below the
    threshold. Short histories never count as converged."""
    if len(losses) < window:
        return False
    tail = losses[-window:]
    return tail[0] - min(tail) < threshold


def parallel_grad(evaluate_shard: Callable, shards: Sequence) -> np.ndarray:
    """Average of per-shard gradients, accumulated in shard order.

    With equal shard sizes (and shard losses that are means over their
    points) this equals the gradient of the mean loss over the union.
    Unequal shards weight every shard the same regardless of size, which
    biases the average toward small shards; partitions should be equal."""
    if not len(shards):
        raise PlanError("at least one shard is required")
    for k, shard in enumerate(shards):
        if _shard_len(shard) == 0:
            raise PlanError(f"shard {k} is empty")
    total = None
    for shard in shards:
        g = np.asarray(evaluate_shard(shard), dtype=np.float64)
        total = g.copy() if total is None else total + g
    return total / len(shards)


def _shard_len(shard):
    try:
        return len(shard)
    except TypeError:
        return 1


# ----------------------------------------------------------------------
# history

HISTORY_COLUMNS = ["epoch", "stage", "phase", "alpha_ns", "ns", "fluid_bdr",
                   "fluid_init", "fluid_total", "stress", "harmonic",
                   "solid_bdr", "solid_init", "solid_total"]


@dataclass
class EpochRecord:
    epoch: int
    stage: str
    phase: str
    alpha_ns: float
    breakdown: LossBreakdown


@dataclass
class TrainingHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def append(self, record: EpochRecord) -> None:
        if self.records and record.epoch <= self.records[-1].epoch:
            raise PlanError("epochs must strictly increase")
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def stages(self) -> list[str]:
        out = []
        for rec in self.records:
            if not out or out[-1] != rec.stage:
                out.append(rec.stage)
        return out

    def alpha_sequence(self) -> list[float]:
        """Distinct momentum weights of flow stages, in first-use order."""
        out = []
        for rec in self.records:
            if rec.phase in ("u", "p") and (not out or rec.alpha_ns != out[-1]):
                out.append(rec.alpha_ns)
        return out

    def fluid_totals(self, stage: "str | None" = None) -> list[float]:
        return [r.breakdown.fluid_total for r in self.records
                if r.phase in ("u", "p") and (stage is None or r.stage == stage)]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(HISTORY_COLUMNS)
            for rec in self.records:
                b = rec.breakdown
                row = [rec.epoch, rec.stage, rec.phase, repr(rec.alpha_ns)]
                for name in HISTORY_COLUMNS[4:]:
                    v = getattr(b, name)
                    row.append("" if isinstance(v, float) and math.isnan(v) else repr(v))
                writer.writerow(row)

    @classmethod
    def read_csv(cls, path) -> "TrainingHistory":
        history = cls()
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                kwargs = {}
                for name in HISTORY_COLUMNS[4:]:
                    raw = row[name]
                    kwargs[name] = float(raw) if raw else float("nan")
                history.append(EpochRecord(
                    epoch=int(row["epoch"]), stage=row["stage"], phase=row["phase"],
                    alpha_ns=float(row["alpha_ns"]), breakdown=LossBreakdown(**kwargs),
                ))
        return history


# ----------------------------------------------------------------------
# the scheduler

class Trainer:
    """Runs the staged scheme for one scenario over one network triple."""

    def __init__(self, config: ScenarioConfig, networks: dict,
                 plan: "TrainingPlan | None" = None, seed: int = 0,
                 out_dir: "str | None" = None, checkpoint_interval: int = 0,
                 shards: int = 1):
        self.config = config
        self.networks = networks
        self.plan = plan or TrainingPlan.from_config(config)
        self.seed = seed
        self.out_dir = out_dir
        self.checkpoint_interval = checkpoint_interval
        self.shards = shards
        rates = config.learning_rates()
        self.optimizers = {
            name: AdamState(len(net.theta), learning_rate=rates[name])
            for name, net in networks.items()
        }
        self.flow = NetworkFlow(networks["u"], networks["p"])
        # A rigid wall pins the displacement to zero: the displacement
        # network never enters any record and solid stages are skipped.
        self.displacement = (ZeroDisplacement() if config.training.rigid_wall
                             else NetworkDisplacement(networks["d"]))
        self.history = TrainingHistory()
        self.epoch = 0
        self.last_checkpoint: "str | None" = None
        self._stage_counter = 0
        if out_dir:
            os.makedirs(os.path.join(out_dir, "checkpoints"), exist_ok=True)

    # -- public entry ---------------------------------------------------

    def run(self) -> TrainingHistory:
        plan = self.plan
        rigid = self.config.training.rigid_wall
        nets_mod.zero_init_output(self.networks["d"])

        self.fluid_block("fluid-init", alpha_ns=0.0)

        # The ladder is one sampling stage: a single collocation draw whose
        # momentum weight climbs in place, so each raise strictly lifts the
        # recorded loss before optimization pulls it back down.
        alpha = plan.ladder_start
        ladder_graphs = None
        if plan.ladder_steps:
            ladder_graphs = self._fluid_graphs(self._stage_samples(),
                                               10.0 * plan.ladder_start)
        for rung in range(1, plan.ladder_steps + 1):
            alpha = 10.0 * alpha
            for g in ladder_graphs:
                g.set_alpha_ns(alpha)
            self.fluid_block(f"ladder-{rung}", alpha_ns=alpha, graphs=ladder_graphs)

        if not rigid:
            for i in range(1, plan.max_alternations + 1):
                solid_quick = self.solid_phase(f"couple-{i}-solid")
                fluid_quick = self.fluid_block(f"couple-{i}-fluid", alpha_ns=alpha)
                if solid_quick and fluid_quick:
                    break
        self._checkpoint(force=True)
        if self.out_dir:
            self.history.write_csv(os.path.join(self.out_dir, "history.csv"))
        return self.history

    # -- stages ----------------------------------------------------------

    def _stage_samples(self) -> CollocationSamples:
        t = self.config.training
        samples = draw_samples(self.config.vessel_geometry(), t.interior_points,
                               t.wall_points, t.port_points,
                               seed=self.seed + 1000 * self._stage_counter)
        self._stage_counter += 1
        return samples

    def _fluid_graphs(self, samples: CollocationSamples, alpha_ns: float):
        weights_stage = LossWeights(
            ns=alpha_ns,
            fluid_bdr=self.config.weights.fluid_boundary,
            fluid_init=self.config.weights.fluid_initial,
        )
        parts = _partition_samples(samples, self.shards)
        return [
            FluidLossGraph(self.flow, self.displacement, part,
                           self.config.vessel_geometry(),
                           self.config.fluid_properties(),
                           self.config.inlet_factor(), weights_stage,
                           self.config.eps_r)
            for part in parts
        ]

    def fluid_block(self, stage: str, alpha_ns: float, graphs=None) -> bool:
        """One capped block of alternating velocity/pressure epochs.
        Returns True when the block stopped early on convergence."""
        plan = self.plan
        if graphs is None:
            graphs = self._fluid_graphs(self._stage_samples(), alpha_ns)
        losses: list[float] = []
        rounds = plan.fluid_epochs // (plan.u_epochs + plan.p_epochs)
        for _ in range(rounds):
            for phase, count in (("u", plan.u_epochs), ("p", plan.p_epochs)):
                for _ in range(count):
                    if self._fluid_epoch(stage, phase, graphs, losses):
                        return True
        return False

    def _fluid_epoch(self, stage, phase, graphs, losses) -> bool:
        for g in graphs:
            g.replay()
        breakdown = _mean_fluid_breakdown(graphs)
        self._record(stage, phase, graphs[0].alpha_ns, breakdown)
        self._guard_finite(breakdown.fluid_total)
        grad = parallel_grad(lambda g: g.param_grads([phase])[phase], graphs)
        net = self.networks[phase]
        self.optimizers[phase].step(net.theta, grad)
        losses.append(breakdown.fluid_total)
        return converged(losses, self.plan.convergence_threshold,
                         self.plan.convergence_window)

    def solid_phase(self, stage: str) -> bool:
        """Displacement updates against the wall problem; flow frozen.
        Returns True when stopped early on convergence."""
        plan = self.plan
        samples = self._stage_samples()
        parts = _partition_samples(samples, self.shards)
        graphs = [
            SolidLossGraph(self.flow, self.displacement, part,
                           self.config.vessel_geometry(),
                           self.config.wall_segments(),
                           self.config.fluid_properties(),
                           self.config.loss_weights(), self.config.eps_r)
            for part in parts
        ]
        losses: list[float] = []
        for _ in range(plan.solid_epochs):
            for g in graphs:
                g.replay()
            breakdown = _mean_solid_breakdown(graphs)
            self._record(stage, "d", 0.0, breakdown)
            self._guard_finite(breakdown.solid_total)
            grad = parallel_grad(lambda g: g.param_grads(["d"])["d"], graphs)
            self.optimizers["d"].step(self.networks["d"].theta, grad)
            losses.append(breakdown.solid_total)
            if converged(losses, plan.convergence_threshold, plan.convergence_window):
                return True
        return False

    # -- bookkeeping ------------------------------------------------------

    def _record(self, stage, phase, alpha_ns, breakdown) -> None:
        self.history.append(EpochRecord(self.epoch, stage, phase, alpha_ns, breakdown))
        self.epoch += 1
        if (self.checkpoint_interval and self.out_dir
                and self.epoch % self.checkpoint_interval == 0):
            self._checkpoint()

    def _guard_finite(self, total: float) -> None:
        if not math.isfinite(total):
            raise TrainingDiverged(
                f"loss became non-finite at epoch {self.epoch - 1}",
                checkpoint=self.last_checkpoint)

    def _checkpoint(self, force: bool = False) -> None:
        if not self.out_dir:
            return
        path = os.path.join(self.out_dir, "checkpoints",
                            "final.npz" if force else f"epoch{self.epoch:07d}.npz")
        extras = {"cursor": np.array([float(self.epoch), float(self._stage_counter)])}
        for name, opt in self.optimizers.items():
            snap = opt.state_arrays()
            extras[f"adam_m_{name}"] = snap["m"]
            extras[f"adam_v_{name}"] = snap["v"]
            extras[f"adam_scalars_{name}"] = snap["scalars"]
        nets_mod.save_networks(path, self.networks, extras)
        self.last_checkpoint = path


def _mean_fluid_breakdown(graphs) -> LossBreakdown:
    if len(graphs) == 1:
        return graphs[0].breakdown()
    parts = [g.breakdown() for g in graphs]
    n = len(parts)
    return LossBreakdown(
        ns=sum(p.ns for p in parts) / n,
        fluid_bdr=sum(p.fluid_bdr for p in parts) / n,
        fluid_init=sum(p.fluid_init for p in parts) / n,
        fluid_total=sum(p.fluid_total for p in parts) / n,
    )


def _mean_solid_breakdown(graphs) -> LossBreakdown:
    if len(graphs) == 1:
        return graphs[0].breakdown()
    parts = [g.breakdown() for g in graphs]
    n = len(parts)
    return LossBreakdown(
        stress=sum(p.stress for p in parts) / n,
        harmonic=sum(p.harmonic for p in parts) / n,
        solid_bdr=sum(p.solid_bdr for p in parts) / n,
        solid_init=sum(p.solid_init for p in parts) / n,
        solid_total=sum(p.solid_total for p in parts) / n,
    )


def _partition_samples(samples: CollocationSamples, shards: int):
    """Equal contiguous split of every collocation set across shards."""
    if shards <= 1:
        return [samples]
    sets = {name: getattr(samples, name) for name in
            ("interior", "inlet", "outlet", "wall", "interior_t0", "wall_t0",
             "endpoints")}
    for name, s in sets.items():
        if len(s) % shards:
            raise PlanError(
                f"{name} count {len(s)} does not split into {shards} equal shards")
    out = []
    for k in range(shards):
        pieces = {}
        for name, s in sets.items():
            size = len(s) // shards
            sl = slice(k * size, (k + 1) * size)
            subtags = s.subtags[sl] if s.subtags is not None else None
            pieces[name] = type(s)(s.r[sl], s.z[sl], s.t[sl], s.region, s.seed, subtags)
        out.append(CollocationSamples(**pieces))
    return out


def build_networks(config: ScenarioConfig, seed: int) -> dict:
    """Fresh velocity/pressure/displacement triple for a scenario."""
    t = config.training
    return {
        "u": nets_mod.build(t.network_depth, t.velocity_width, 3, 2,
                            seed=seed, name="u"),
        "p": nets_mod.build(t.network_depth, t.pressure_width, 3, 1,
                            seed=seed + 1, name="p"),
        "d": nets_mod.build(t.network_depth, t.displacement_width, 3, 1,
                            seed=seed + 2, name="d"),
    }


def run_fsi(config: ScenarioConfig, networks: dict,
            plan: "TrainingPlan | None" = None, seed: int = 0,
            out_dir: "str | None" = None, checkpoint_interval: int = 0,
            shards: int = 1):
    """Train a network triple through the full staged schedule."""
    trainer = Trainer(config, networks, plan, seed, out_dir,
                      checkpoint_interval, shards)
    history = trainer.run()
    return networks, history
