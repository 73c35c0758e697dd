"""Fully connected field networks with an alternating activation schedule.

A network of depth L is a chain of L affine maps. Hidden maps are
activated (first map sigmoid, then relu and sigmoid alternating); the
final affine map has no activation so outputs can take any scale. Hidden
widths are uniform. Parameters live in one flat float64 vector, laid out
layer by layer as row-major weights followed by the bias, which is also
the ordering used by parameter gradients and checkpoints.
"""

from __future__ import annotations

import json

import numpy as np

from . import autodiff as ad

SCHEDULES = ("alternating", "sigmoid")


def _activation_tags(depth: int, schedule: str) -> list[str]:
    if schedule not in SCHEDULES:
        raise ValueError(f"unknown schedule {schedule!r}")
    tags = []
    for layer in range(1, depth):
        if schedule == "sigmoid" or layer % 2 == 1:
            tags.append("sigmoid")
        else:
            tags.append("relu")
    tags.append("none")
    return tags


class FieldNetwork:
    """One coordinate network (velocity, pressure or displacement role).

    widths holds in_dim, the uniform hidden widths, and out_dim, so its
    length is depth + 1.
    """

    def __init__(self, name: str, depth: int, widths, schedule: str, theta: np.ndarray):
        self.name = name
        self.depth = depth
        self.widths = list(widths)
        self.schedule = schedule
        self.theta = theta
        self._offsets = []
        off = 0
        for layer in range(depth):
            fan_in, fan_out = self.widths[layer], self.widths[layer + 1]
            self._offsets.append((off, off + fan_in * fan_out))
            off += fan_in * fan_out + fan_out
        self._size = off
        self.activations = _activation_tags(depth, schedule)
        if len(theta) != self._size:
            raise ValueError(f"parameter vector has {len(theta)} entries, need {self._size}")

    def weight(self, layer: int) -> np.ndarray:
        """Row-major weight view of affine layer `layer` (0-based)."""
        w_off, b_off = self._offsets[layer]
        fan_in, fan_out = self.widths[layer], self.widths[layer + 1]
        return self.theta[w_off:b_off].reshape(fan_out, fan_in)

    def bias(self, layer: int) -> np.ndarray:
        w_off, b_off = self._offsets[layer]
        fan_out = self.widths[layer + 1]
        return self.theta[b_off:b_off + fan_out]

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    def forward(self, tape: ad.Tape, inputs) -> list[ad.DiffScalar]:
        """Record the network evaluation at `inputs` (DiffScalar, length in_dim)."""
        if len(inputs) != self.in_dim:
            raise ValueError(f"{self.name}: expected {self.in_dim} inputs, got {len(inputs)}")
        tape.register_params(self.name, self.theta)
        xs = list(inputs)
        for layer in range(self.depth):
            w_off, b_off = self._offsets[layer]
            fan_in, fan_out = self.widths[layer], self.widths[layer + 1]
            pre = [
                tape.lincomb(
                    [(tape.param(self.name, w_off + i * fan_in + j), xs[j]) for j in range(fan_in)]
                )
                for i in range(fan_out)
            ]
            pre = [p + tape.param(self.name, b_off + i) for i, p in enumerate(pre)]
            act = self.activations[layer]
            if act == "sigmoid":
                xs = [ad.sigmoid(p) for p in pre]
            elif act == "relu":
                xs = [ad.relu(p) for p in pre]
            else:
                xs = pre
        return xs

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Plain numpy forward over rows of `points`, shape (n, in_dim) -> (n, out_dim)."""
        x = np.asarray(points, dtype=np.float64).T
        for layer in range(self.depth):
            x = self.weight(layer) @ x + self.bias(layer)[:, None]
            act = self.activations[layer]
            if act == "sigmoid":
                x = 1.0 / (1.0 + np.exp(-x))
            elif act == "relu":
                x = np.maximum(x, 0.0)
        return x.T

    def relu_margin(self, point) -> float:
        """Smallest |pre-activation| seen by any relu unit at `point`.

        Useful for keeping finite-difference probes away from kinks."""
        x = np.asarray(point, dtype=np.float64)
        margin = np.inf
        for layer in range(self.depth):
            x = self.weight(layer) @ x + self.bias(layer)
            act = self.activations[layer]
            if act == "relu":
                margin = min(margin, float(np.min(np.abs(x))))
                x = np.maximum(x, 0.0)
            elif act == "sigmoid":
                x = 1.0 / (1.0 + np.exp(-x))
        return margin


def build(depth: int, hidden_width: int, in_dim: int, out_dim: int, seed: int,
          name: str = "net", schedule: str = "alternating") -> FieldNetwork:
    """Scaled-uniform initialized network; biases start at zero."""
    if depth < 2:
        raise ValueError("depth must be at least 2 affine layers")
    widths = [in_dim] + [hidden_width] * (depth - 1) + [out_dim]
    rng = np.random.default_rng(seed)
    chunks = []
    for layer in range(depth):
        fan_in, fan_out = widths[layer], widths[layer + 1]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    theta = np.concatenate(chunks)
    return FieldNetwork(name, depth, widths, schedule, theta)


def zero_init_output(net: FieldNetwork) -> None:
    """Zero the final affine map so the network output is identically zero."""
    net.weight(net.depth - 1)[:] = 0.0
    net.bias(net.depth - 1)[:] = 0.0


def param_count(net: FieldNetwork) -> int:
    return int(sum(
        net.widths[l + 1] * (net.widths[l] + 1) for l in range(net.depth)
    ))


def split_param_count(depth: int, total_width: int, in_dim: int = 3) -> int:
    """Combined size of the velocity/pressure pair at a given total width.

    The velocity network takes two thirds of the width and two outputs,
    the pressure network the remaining third and one output."""
    wu, wp = 2 * total_width // 3, total_width // 3
    nu = build(depth, wu, in_dim, 2, seed=0)
    np_ = build(depth, wp, in_dim, 1, seed=0)
    return param_count(nu) + param_count(np_)


def single_param_count(depth: int, width: int, in_dim: int = 3) -> int:
    """Size of the single-network variant emitting (u_z, u_r, P) together."""
    return param_count(build(depth, width, in_dim, 3, seed=0))


# ----------------------------------------------------------------------
# checkpointing

def save_networks(path, networks: dict[str, FieldNetwork], extras: dict | None = None) -> None:
    """Write networks (plus optional float64 arrays) to one npz archive.

    The header records depth, widths and the activation schedule per
    network; parameter vectors round-trip bit-exactly."""
    meta = {
        name: {"depth": n.depth, "widths": n.widths, "schedule": n.schedule}
        for name, n in networks.items()
    }
    payload = {f"theta_{name}": n.theta for name, n in networks.items()}
    if extras:
        for key, arr in extras.items():
            payload[f"extra_{key}"] = np.asarray(arr)
    payload["header"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    np.savez(path, **payload)


def load_networks(path) -> tuple[dict[str, FieldNetwork], dict[str, np.ndarray]]:
    with np.load(path) as data:
        meta = json.loads(bytes(data["header"]).decode())
        nets = {}
        extras = {}
        for name, info in meta.items():
            nets[name] = FieldNetwork(
                name, info["depth"], info["widths"], info["schedule"],
                data[f"theta_{name}"].copy(),
            )
        for key in data.files:
            if key.startswith("extra_"):
                extras[key[len("extra_"):]] = data[key].copy()
    return nets, extras
