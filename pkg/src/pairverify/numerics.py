"""Dense float64 building blocks: seeded RNG, linear layers with exact
analytic gradients, Adam with decoupled weight decay, a cosine learning-rate
schedule, and a central-difference gradient oracle.

Everything here is deterministic: the same seed and inputs give bit-identical
outputs on the same build. Vectors and matrices are plain float64 ndarrays.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Callable, Mapping, Union

import numpy as np

from .errors import NumericError, ShapeError, UsageError

_MASK64 = (1 << 64) - 1

ACTIVATIONS = ("identity", "tanh")

# A parameter set is either a single array or a dict of named blocks.
ParamLike = Union[np.ndarray, dict]


def _label_key(label: str) -> int:
    # Stable across processes (unlike hash()), so substreams are reproducible.
    digest = hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class RngState:
    """Counter-based (Philox) random stream, splittable by label.

    Two instances built from the same seed produce identical streams;
    ``substream(label)`` derives an independent stream for each distinct
    label, so parallel consumers never share state.
    """

    __slots__ = ("seed", "_path", "_gen")

    def __init__(self, seed: int, _path: tuple = ()):
        self.seed = int(seed) & _MASK64
        self._path = tuple(_path)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self._path)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def substream(self, label: str) -> "RngState":
        """Independent child stream identified by ``label``."""
        return RngState(self.seed, self._path + (_label_key(label),))

    def __getattr__(self, name):
        # Delegate draws (uniform, normal, integers, permutation, ...) to numpy.
        return getattr(object.__getattribute__(self, "_gen"), name)

    def __repr__(self):
        return f"RngState(seed={self.seed}, path={self._path})"


def seeded_rng(seed: int) -> RngState:
    """Deterministic generator for ``seed``; equal seeds give equal streams."""
    return RngState(seed)


@dataclass
class LinearLayer:
    """Affine map ``x -> weight @ x + bias`` with weight (out_dim, in_dim)."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.ndim != 1:
            raise ShapeError("weight must be 2-D and bias 1-D")
        if self.weight.shape[0] != self.bias.shape[0]:
            raise ShapeError(
                f"bias length {self.bias.shape[0]} != out_dim {self.weight.shape[0]}"
            )

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]


@dataclass
class LinearCache:
    """What ``linear_backward`` needs from the matching forward call."""

    layer: LinearLayer
    x: np.ndarray
    out: np.ndarray
    activation: str


def linear_forward(layer: LinearLayer, x: np.ndarray, activation: str = "identity"):
    """Apply ``act(weight @ x + bias)``.

    ``x`` may be a single vector (in_dim,) or a batch (n, in_dim); the output
    has the matching shape. Returns ``(output, cache)``.
    """
    if activation not in ACTIVATIONS:
        raise UsageError(f"unknown activation {activation!r}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != layer.in_dim:
        raise ShapeError(
            f"input of shape {x.shape} incompatible with in_dim {layer.in_dim}"
        )
    pre = x @ layer.weight.T + layer.bias
    out = np.tanh(pre) if activation == "tanh" else pre
    return out, LinearCache(layer, x, out, activation)


def linear_backward(cache: LinearCache, grad_output: np.ndarray):
    """Exact gradients of the forward map: ``(grad_weight, grad_bias, grad_input)``."""
    grad_output = np.asarray(grad_output, dtype=np.float64)
    if grad_output.shape != cache.out.shape:
        raise ShapeError(
            f"grad_output shape {grad_output.shape} != output shape {cache.out.shape}"
        )
    if cache.activation == "tanh":
        dpre = grad_output * (1.0 - cache.out**2)
    else:
        dpre = grad_output
    if cache.x.ndim == 1:
        grad_weight = np.outer(dpre, cache.x)
        grad_bias = dpre.copy()
    else:
        grad_weight = dpre.T @ cache.x
        grad_bias = dpre.sum(axis=0)
    grad_input = dpre @ cache.layer.weight
    return grad_weight, grad_bias, grad_input


@dataclass
class AdamState:
    """Optimizer moments per named parameter block, plus hyperparameters."""

    first_moment: dict
    second_moment: dict
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0


def init_adam_state(
    blocks: Mapping[str, np.ndarray],
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
    weight_decay: float = 0.0,
) -> AdamState:
    """Zero-moment state matching the shapes of ``blocks``."""
    return AdamState(
        first_moment={k: np.zeros_like(v) for k, v in blocks.items()},
        second_moment={k: np.zeros_like(v) for k, v in blocks.items()},
        step_count=0,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
        weight_decay=weight_decay,
    )


def adam_step(
    blocks: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> AdamState:
    """One Adam update with bias correction, in place on ``blocks``.

    Decoupled weight decay shrinks parameters by ``1 - lr * weight_decay``
    before the Adam delta is applied. Raises NumericError naming the block if
    any gradient entry is non-finite.
    """
    if lr <= 0:
        raise UsageError(f"lr must be positive, got {lr}")
    if set(blocks) != set(grads):
        missing = set(blocks) ^ set(grads)
        raise ShapeError(f"parameter/gradient block names disagree: {sorted(missing)}")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, param in blocks.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != param.shape:
            raise ShapeError(f"gradient shape {g.shape} != param shape {param.shape} in block '{name}'")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in block '{name}'")
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        if state.weight_decay != 0.0:
            param *= 1.0 - lr * state.weight_decay
        param -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return state


def cosine_lr(step: int, total_steps: int, lr_init: float, lr_min: float) -> float:
    """Cosine decay from ``lr_init`` at step 0 to ``lr_min`` at ``total_steps``.

    No warmup. Steps past ``total_steps`` clamp to ``lr_min``.
    """
    if total_steps < 1:
        raise UsageError(f"total_steps must be >= 1, got {total_steps}")
    if step < 0:
        raise UsageError(f"step must be >= 0, got {step}")
    if not (lr_init >= lr_min >= 0.0):
        raise UsageError(f"need lr_init >= lr_min >= 0, got {lr_init}, {lr_min}")
    if step > total_steps:
        return lr_min
    return lr_min + 0.5 * (lr_init - lr_min) * (1.0 + math.cos(math.pi * step / total_steps))


def finite_diff_grad(
    loss_fn: Callable[[ParamLike], float], params: ParamLike, h: float
) -> ParamLike:
    """Central-difference gradient estimate, one coordinate at a time.

    ``params`` is either an ndarray or a dict of named ndarrays; the estimate
    has the same structure. ``loss_fn`` must be deterministic.
    """
    if h <= 0:
        raise UsageError(f"h must be positive, got {h}")
    if isinstance(params, np.ndarray):
        wrapped = {"_": params}
        result = finite_diff_grad(lambda p: loss_fn(p["_"]), wrapped, h)
        return result["_"]
    work = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    grads = {k: np.zeros_like(v) for k, v in work.items()}
    for name, block in work.items():
        flat = block.reshape(-1)
        gflat = grads[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn(work)
            flat[i] = orig - h
            down = loss_fn(work)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
    return grads
