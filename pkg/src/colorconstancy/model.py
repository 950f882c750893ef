"""LeNet-style encoder f and projection head g."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .engine import Tensor, affine, conv2d, flatten, maxpool2, relu
from .engine.autodiff import ShapeError

IMAGE_SHAPE = (3, 32, 32)
LAYERS = ("x", "l1", "l2", "l3", "h", "z")
HIDDEN_PROJ = 128

ENCODER_SHAPES = {
    "conv1.weight": (6, 3, 5, 5), "conv1.bias": (6,),
    "conv2.weight": (16, 6, 5, 5), "conv2.bias": (16,),
    "fc3.weight": (120, 400), "fc3.bias": (120,),
    "fc4.weight": (84, 120), "fc4.bias": (84,),
}


def projection_shapes(d_z: int) -> dict[str, tuple[int, ...]]:
    return {"proj1.weight": (HIDDEN_PROJ, 84), "proj1.bias": (HIDDEN_PROJ,),
            "proj2.weight": (d_z, HIDDEN_PROJ), "proj2.bias": (d_z,)}


def layer_widths(d_z: int = 64) -> dict[str, int]:
    return {"x": 3072, "l1": 1176, "l2": 400, "l3": 120, "h": 84, "z": d_z}


def kaiming_uniform_bound(fan_in: int) -> float:
    # gain sqrt(2) for relu: bound = sqrt(2) * sqrt(3 / fan_in)
    return math.sqrt(6.0 / fan_in)


def bias_bound(fan_in: int) -> float:
    return 1.0 / math.sqrt(fan_in)


def init_params(seed: int, d_z: int = 64, n_classes: int | None = None) -> dict[str, np.ndarray]:
    """Kaiming-uniform fan-in weights, biases uniform in +-1/sqrt(fan_in); float32, deterministic per seed.

    Nonzero biases keep a black input (every light off) away from the zero
    embedding, where cosine similarity is undefined. With ``n_classes`` a
    linear classifier ``cls`` (84 -> n_classes) is added for the supervised
    baseline.
    """
    shapes = dict(ENCODER_SHAPES)
    shapes.update(projection_shapes(d_z))
    if n_classes:
        shapes.update({"cls.weight": (n_classes, 84), "cls.bias": (n_classes,)})
    gen = rng.generator(seed, rng.STREAM_INIT)
    params = {}
    for name, shape in shapes.items():
        if name.endswith(".bias"):
            continue
        fan_in = int(np.prod(shape[1:]))
        params[name] = gen.uniform(-kaiming_uniform_bound(fan_in), kaiming_uniform_bound(fan_in),
                                   size=shape).astype(np.float32)
        bias = name.replace(".weight", ".bias")
        params[bias] = gen.uniform(-bias_bound(fan_in), bias_bound(fan_in), size=shapes[bias]).astype(np.float32)
    return {k: params[k] for k in shapes}


def count_params(params: dict[str, np.ndarray], prefix: tuple[str, ...] | None = None) -> int:
    return sum(v.size for k, v in params.items() if prefix is None or k.startswith(prefix))


def params_digest(params: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for k in sorted(params):
        h.update(k.encode())
        h.update(np.ascontiguousarray(params[k]).tobytes())
    return h.hexdigest()


@dataclass
class Activations:
    """Intermediate activations of one forward pass (tensors keep the graph)."""
    x: Tensor
    l1: Tensor
    l2: Tensor
    l3: Tensor
    h: Tensor
    z: Tensor | None = None

    def features(self, layer: str) -> np.ndarray:
        """Flattened (batch, width) numpy view of one layer."""
        t = getattr(self, layer)
        if t is None:
            raise KeyError(f"layer {layer} was not computed")
        return t.data.reshape(t.shape[0], -1)


class Network:
    """Holds parameters as Tensors; the same object serves training and frozen evaluation."""

    def __init__(self, params: dict[str, np.ndarray], trainable: bool = True):
        self.tensors = {k: Tensor(np.array(v, dtype=np.float32), requires_grad=trainable, name=k)
                        for k, v in params.items()}

    @classmethod
    def initialize(cls, seed: int, d_z: int = 64, n_classes: int | None = None) -> "Network":
        return cls(init_params(seed, d_z, n_classes))

    @property
    def d_z(self) -> int:
        return self.tensors["proj2.weight"].shape[0]

    def parameters(self, prefixes: tuple[str, ...] | None = None) -> list[Tensor]:
        return [t for k, t in self.tensors.items() if prefixes is None or k.startswith(prefixes)]

    def state(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.tensors.items()}

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def encode(self, images) -> Activations:
        """Encoder f: conv-relu-pool, conv-relu-pool, fc-relu, fc -> h."""
        x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=np.float32))
        if x.data.ndim != 4 or x.shape[1:] != IMAGE_SHAPE:
            raise ShapeError(f"encoder expects (batch, 3, 32, 32), got {x.shape}")
        p = self.tensors
        l1 = maxpool2(relu(conv2d(x, p["conv1.weight"], p["conv1.bias"])))
        l2 = maxpool2(relu(conv2d(l1, p["conv2.weight"], p["conv2.bias"])))
        l3 = relu(affine(flatten(l2), p["fc3.weight"], p["fc3.bias"]))
        h = affine(l3, p["fc4.weight"], p["fc4.bias"])
        return Activations(x, l1, l2, l3, h)

    def project(self, h: Tensor) -> Tensor:
        """Projection head g: fc(84->128)-relu-fc(128->d_z)."""
        if h.data.ndim != 2 or h.shape[1] != 84:
            raise ShapeError(f"projection head expects (batch, 84), got {h.shape}")
        p = self.tensors
        return affine(relu(affine(h, p["proj1.weight"], p["proj1.bias"])), p["proj2.weight"], p["proj2.bias"])

    def classify(self, h: Tensor) -> Tensor:
        p = self.tensors
        return affine(h, p["cls.weight"], p["cls.bias"])

    def forward(self, images, with_projection: bool = True) -> Activations:
        acts = self.encode(images)
        if with_projection:
            acts.z = self.project(acts.h)
        return acts


def describe(d_z: int = 64) -> str:
    """Layer shapes and parameter counts, for the ``inspect`` command."""
    params = init_params(0, d_z)
    rows = [
        "x   input            3x32x32  -> 3072",
        "l1  conv(6,5,1,0)    6x28x28  -> pool 6x14x14 = 1176",
        "l2  conv(16,5,1,0)   16x10x10 -> pool 16x5x5 = 400",
        "l3  fc 400->120 relu          120",
        "h   fc 120->84                84",
        f"z   fc 84->128 relu, fc 128->{d_z}   {d_z}",
        "",
    ]
    for k, v in params.items():
        rows.append(f"{k:14s} {str(v.shape):18s} {v.size:7d}")
    enc = count_params(params, ("conv", "fc"))
    proj = count_params(params, ("proj",))
    rows.append(f"encoder parameters:    {enc}")
    rows.append(f"projection parameters: {proj}")
    return "\n".join(rows)
