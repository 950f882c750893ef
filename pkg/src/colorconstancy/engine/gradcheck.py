"""Central finite-difference checks of the autodiff primitives."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class GradCheckError(AssertionError):
    pass


@dataclass
class GradCheckReport:
    name: str
    instances: int
    max_rel_error: float
    worst: tuple  # (instance, input index, flat coordinate)

    def __str__(self) -> str:
        return f"{self.name}: max rel err {self.max_rel_error:.2e} over {self.instances} instances"


def numeric_grad(fn: Callable[..., Tensor], arrays: list[np.ndarray], which: int, h: float = 1e-5) -> np.ndarray:
    base = arrays[which]
    out = np.zeros_like(base)
    flat = base.reshape(-1)
    gflat = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn(*[Tensor(a) for a in arrays]).item()
        flat[i] = orig - h
        fm = fn(*[Tensor(a) for a in arrays]).item()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return out


def analytic_grads(fn: Callable[..., Tensor], arrays: list[np.ndarray]) -> list[np.ndarray]:
    ts = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    fn(*ts).backward()
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in ts]


def relative_error(a: np.ndarray, n: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def grad_check(name: str, fn: Callable[..., Tensor], sampler: Callable[[np.random.Generator], list[np.ndarray]],
               instances: int = 5, tolerance: float = 1e-4, seed: int = 0, h: float = 1e-5) -> GradCheckReport:
    """Compare backward() against central differences on ``instances`` random inputs (float64).

    ``fn`` maps input tensors to a scalar tensor; ``sampler`` draws input arrays.
    """
    gen = np.random.default_rng(seed)
    worst_err, worst = 0.0, (0, 0, 0)
    for inst in range(instances):
        arrays = [np.asarray(a, dtype=np.float64) for a in sampler(gen)]
        analytic = analytic_grads(fn, arrays)
        for j in range(len(arrays)):
            num = numeric_grad(fn, arrays, j, h)
            err = relative_error(analytic[j], num)
            if err.size and err.max() > worst_err:
                worst_err = float(err.max())
                worst = (inst, j, int(err.argmax()))
    report = GradCheckReport(name, instances, worst_err, worst)
    if worst_err >= tolerance:
        inst, j, coord = worst
        raise GradCheckError(f"{name}: relative error {worst_err:.3e} >= {tolerance:g} "
                             f"at instance {inst}, input {j}, coordinate {coord}")
    return report


def _proj(gen, shape):
    return gen.standard_normal(shape)


def _away_from_zero(gen, shape, margin=1e-2):
    x = gen.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin * 2, x)


def _distinct(gen, shape):
    # max-pool windows with well separated entries so no tie sits within h
    x = gen.permutation(int(np.prod(shape))).reshape(shape).astype(np.float64)
    return x * 0.1 + gen.uniform(-0.01, 0.01, shape)


def registry() -> dict[str, tuple[Callable, Callable]]:
    """name -> (scalar fn of tensors, input sampler) for every differentiable primitive."""
    r = {}
    p_conv = np.random.default_rng(101).standard_normal((2, 4, 3, 3))
    r["conv2d"] = (
        lambda x, w, b: ad.weighted_sum(ad.conv2d(x, w, b, stride=1, padding=0), p_conv),
        lambda g: [g.standard_normal((2, 3, 5, 5)), g.standard_normal((4, 3, 3, 3)), g.standard_normal(4)],
    )
    p_conv_s = np.random.default_rng(102).standard_normal((2, 2, 3, 3))
    r["conv2d_stride2_pad1"] = (
        lambda x, w, b: ad.weighted_sum(ad.conv2d(x, w, b, stride=2, padding=1), p_conv_s),
        lambda g: [g.standard_normal((2, 2, 5, 5)), g.standard_normal((2, 2, 3, 3)), g.standard_normal(2)],
    )
    p_pool = np.random.default_rng(103).standard_normal((2, 3, 2, 3))
    r["maxpool2"] = (
        lambda x: ad.weighted_sum(ad.maxpool2(x), p_pool),
        lambda g: [_distinct(g, (2, 3, 4, 6))],
    )
    p_aff = np.random.default_rng(104).standard_normal((4, 5))
    r["affine"] = (
        lambda x, w, b: ad.weighted_sum(ad.affine(x, w, b), p_aff),
        lambda g: [g.standard_normal((4, 7)), g.standard_normal((5, 7)), g.standard_normal(5)],
    )
    p_relu = np.random.default_rng(105).standard_normal((3, 6))
    r["relu"] = (
        lambda x: ad.weighted_sum(ad.relu(x), p_relu),
        lambda g: [_away_from_zero(g, (3, 6))],
    )
    p_flat = np.random.default_rng(106).standard_normal((2, 12))
    r["flatten"] = (
        lambda x: ad.weighted_sum(ad.flatten(x), p_flat),
        lambda g: [g.standard_normal((2, 3, 2, 2))],
    )
    p_cos = np.random.default_rng(107).standard_normal((6, 6))
    r["cosine_similarity_matrix"] = (
        lambda z: ad.weighted_sum(ad.cosine_similarity_matrix(z), p_cos),
        lambda g: [g.standard_normal((6, 4))],
    )

    targets_ce = np.eye(5)[np.random.default_rng(108).integers(0, 5, 6)]
    r["softmax_cross_entropy"] = (
        lambda x: ad.softmax_cross_entropy(x, targets_ce),
        lambda g: [g.standard_normal((6, 5)) * 2],
    )
    targets_bce = (np.random.default_rng(109).random((6, 24)) < 0.5).astype(np.float64)
    r["bce_with_logits"] = (
        lambda x: ad.bce_with_logits(x, targets_bce),
        lambda g: [g.standard_normal((6, 24)) * 3],
    )
    # zero projection on the diagonal keeps the -1e9 fill out of the finite differences
    p_mask = np.random.default_rng(110).standard_normal((5, 5)) * (1 - np.eye(5))
    r["mask_diagonal"] = (
        lambda x: ad.weighted_sum(ad.mask_diagonal(x), p_mask),
        lambda g: [g.standard_normal((5, 5))],
    )
    p_scale = np.random.default_rng(111).standard_normal((3, 4))
    r["scale"] = (lambda x: ad.weighted_sum(ad.scale(x, -2.5), p_scale), lambda g: [g.standard_normal((3, 4))])
    p_add = np.random.default_rng(112).standard_normal((3, 4))
    r["add"] = (
        lambda a, b: ad.weighted_sum(ad.add(a, b), p_add),
        lambda g: [g.standard_normal((3, 4)), g.standard_normal((3, 4))],
    )
    return r


def check_all(instances: int = 5, tolerance: float = 1e-4) -> list[GradCheckReport]:
    return [grad_check(name, fn, sampler, instances, tolerance)
            for name, (fn, sampler) in registry().items()]
