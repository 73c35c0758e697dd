"""Scenario configuration in CGS units, presets and file round trip.

Config files are JSON with one object per section (geometry, fluid,
wall, optional plaque, inlet, weights, training). Keys carry their units
so a file can never silently mix systems. Unknown keys are rejected.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .domain import PlaqueShape, RegionTag, VesselGeometry
from .physics import FluidProperties, LossWeights, WallProperties


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GeometrySettings:
    radius_cm: float = 0.25
    length_cm: float = 2.0
    wall_thickness_cm: float = 0.05
    horizon_s: float = 2.0


@dataclass(frozen=True)
class FluidSettings:
    density_g_per_cm3: float = 1.025
    viscosity_poise: float = 0.035


@dataclass(frozen=True)
class WallSettings:
    density_g_per_cm3: float = 1.2
    youngs_modulus_dyn_per_cm2: float = 0.5e6
    poisson_ratio: float = 0.5


@dataclass(frozen=True)
class PlaqueSettings:
    long_radius_cm: float = 0.15
    short_radius_cm: float = 0.1
    center_z_cm: float = 1.0
    density_g_per_cm3: float = 1.1
    youngs_modulus_dyn_per_cm2: float = 1.0e6
    poisson_ratio: float = 0.5


@dataclass(frozen=True)
class InletSettings:
    """Axial inflow profile: parabolic in radius, scaled by a time factor.

    pulsatile: amplitude * (1 - cos(omega t)), peaking at twice the
    amplitude once per cycle. steady: a constant factor."""

    mode: str = "pulsatile"
    amplitude_cm_per_s: float = 10.0
    angular_frequency_rad_per_s: float = 2.0 * math.pi
    steady_value_cm_per_s: float = 20.0

    def factor(self):
        if self.mode == "steady":
            value = self.steady_value_cm_per_s
            return lambda ts: np.full_like(np.asarray(ts, dtype=np.float64), value)
        amp, omega = self.amplitude_cm_per_s, self.angular_frequency_rad_per_s
        return lambda ts: amp * (1.0 - np.cos(omega * np.asarray(ts, dtype=np.float64)))


@dataclass(frozen=True)
class WeightSettings:
    navier_stokes: float = 0.0  # schedule-managed; stage value, not the ladder
    fluid_boundary: float = 1.0
    fluid_initial: float = 0.1
    stress_continuity: float = 1.0
    harmonic_extension: float = 10.0
    solid_boundary: float = 0.1
    solid_initial: float = 0.01


@dataclass(frozen=True)
class TrainingSettings:
    interior_points: int = 1000
    wall_points: int = 1000
    port_points: int = 1000
    learning_rate: float = 1e-3
    velocity_learning_rate: "float | None" = None      # default: learning_rate
    pressure_learning_rate: "float | None" = None
    displacement_learning_rate: "float | None" = None
    fluid_epochs: int = 2000
    solid_epochs: int = 500
    velocity_epochs: int = 80
    pressure_epochs: int = 20
    ladder_steps: int = 5
    max_alternations: int = 6
    convergence_threshold: float = 0.1
    convergence_window: int = 100
    axis_clamp_fraction: float = 0.01
    rigid_wall: bool = False
    network_depth: int = 12
    velocity_width: int = 20
    pressure_width: int = 10
    displacement_width: int = 20


_SECTIONS = {
    "geometry": GeometrySettings,
    "fluid": FluidSettings,
    "wall": WallSettings,
    "plaque": PlaqueSettings,
    "inlet": InletSettings,
    "weights": WeightSettings,
    "training": TrainingSettings,
}


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "cylinder"
    geometry: GeometrySettings = field(default_factory=GeometrySettings)
    fluid: FluidSettings = field(default_factory=FluidSettings)
    wall: WallSettings = field(default_factory=WallSettings)
    plaque: PlaqueSettings | None = None
    inlet: InletSettings = field(default_factory=InletSettings)
    weights: WeightSettings = field(default_factory=WeightSettings)
    training: TrainingSettings = field(default_factory=TrainingSettings)

    def __post_init__(self):
        self.vessel_geometry()  # geometry constraints, plaque-in-lumen checks
        if self.inlet.mode not in ("pulsatile", "steady"):
            raise ConfigError(f"unknown inlet mode {self.inlet.mode!r}")
        if self.training.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")
        if not 0 < self.training.axis_clamp_fraction < 1:
            raise ConfigError("axis clamp fraction must sit in (0, 1)")

    # -- derived objects ------------------------------------------------

    def vessel_geometry(self) -> VesselGeometry:
        plaque = None
        if self.plaque is not None:
            plaque = PlaqueShape(self.plaque.long_radius_cm,
                                 self.plaque.short_radius_cm,
                                 self.plaque.center_z_cm)
        return VesselGeometry(self.geometry.radius_cm, self.geometry.length_cm,
                              self.geometry.wall_thickness_cm,
                              self.geometry.horizon_s, plaque)

    def fluid_properties(self) -> FluidProperties:
        return FluidProperties(self.fluid.density_g_per_cm3, self.fluid.viscosity_poise)

    def wall_segments(self) -> dict[RegionTag, WallProperties]:
        base = WallProperties(
            density=self.wall.density_g_per_cm3,
            youngs_modulus=self.wall.youngs_modulus_dyn_per_cm2,
            poisson_ratio=self.wall.poisson_ratio,
            thickness=self.geometry.wall_thickness_cm,
            reference_radius=self.geometry.radius_cm,
        )
        segments = {RegionTag.WALL: base}
        if self.plaque is not None:
            segments[RegionTag.WALL_PLAQUE] = replace(
                base,
                density=self.plaque.density_g_per_cm3,
                youngs_modulus=self.plaque.youngs_modulus_dyn_per_cm2,
                poisson_ratio=self.plaque.poisson_ratio,
            )
        return segments

    def loss_weights(self) -> LossWeights:
        w = self.weights
        return LossWeights(w.navier_stokes, w.fluid_boundary, w.fluid_initial,
                           w.stress_continuity, w.harmonic_extension,
                           w.solid_boundary, w.solid_initial)

    def inlet_factor(self):
        return self.inlet.factor()

    def learning_rates(self) -> dict[str, float]:
        """Per-network step lengths; unset entries fall back to the shared rate."""
        t = self.training
        return {
            "u": t.velocity_learning_rate or t.learning_rate,
            "p": t.pressure_learning_rate or t.learning_rate,
            "d": t.displacement_learning_rate or t.learning_rate,
        }

    @property
    def eps_r(self) -> float:
        return self.training.axis_clamp_fraction * self.geometry.radius_cm

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        data = {"name": self.name}
        for section in _SECTIONS:
            value = getattr(self, section)
            if value is None:
                continue
            data[section] = asdict(value)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        if not isinstance(data, dict):
            raise ConfigError("config root must be an object")
        unknown = set(data) - set(_SECTIONS) - {"name"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {"name": data.get("name", "custom")}
        for section, section_cls in _SECTIONS.items():
            if section not in data:
                continue
            body = data[section]
            if not isinstance(body, dict):
                raise ConfigError(f"section {section!r} must be an object")
            allowed = set(section_cls.__dataclass_fields__)
            bad = set(body) - allowed
            if bad:
                raise ConfigError(
                    f"unknown keys in section {section!r}: {sorted(bad)} "
                    f"(allowed: {sorted(allowed)})")
            kwargs[section] = section_cls(**body)
        try:
            return cls(**kwargs)
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def load_config(path) -> ScenarioConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    return ScenarioConfig.from_dict(data)


# ----------------------------------------------------------------------
# presets

def _plaque_preset(name: str, short_radius: float) -> ScenarioConfig:
    return ScenarioConfig(
        name=name,
        plaque=PlaqueSettings(short_radius_cm=short_radius),
    )


def preset(name: str) -> ScenarioConfig:
    builders = {
        "cylinder": lambda: ScenarioConfig(name="cylinder"),
        "plaque-mild": lambda: _plaque_preset("plaque-mild", 0.05),
        "plaque-moderate": lambda: _plaque_preset("plaque-moderate", 0.1),
        "plaque-severe": lambda: _plaque_preset("plaque-severe", 0.15),
        "one-pulse": lambda: ScenarioConfig(
            name="one-pulse",
            geometry=GeometrySettings(radius_cm=1.0, length_cm=25.0,
                                      wall_thickness_cm=0.2, horizon_s=0.2),
            wall=WallSettings(youngs_modulus_dyn_per_cm2=0.8e7),
            inlet=InletSettings(angular_frequency_rad_per_s=20.0 * math.pi),
        ),
        "poiseuille-rigid": lambda: ScenarioConfig(
            name="poiseuille-rigid",
            inlet=InletSettings(mode="steady", steady_value_cm_per_s=20.0),
            weights=WeightSettings(fluid_initial=0.0),
            training=TrainingSettings(
                interior_points=256, wall_points=128, port_points=128,
                rigid_wall=True, fluid_epochs=2000,
            ),
        ),
    }
    if name not in builders:
        raise ConfigError(f"unknown preset {name!r} (have: {sorted(builders)})")
    return builders[name]()


PRESET_NAMES = ("cylinder", "plaque-mild", "plaque-moderate", "plaque-severe",
                "one-pulse", "poiseuille-rigid")
