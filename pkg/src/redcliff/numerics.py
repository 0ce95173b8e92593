"""Scalar penalties, Adam, and seeded random sources shared by every module."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, einsum, ensure_tensor

COSINE_EPS = 1e-12


def relu(x):
    return np.maximum(x, 0.0) if np.ndim(x) else (x if x > 0 else 0.0)


def nrelu(x):
    """Negative ReLU: passes values below zero, clamps the rest to 0."""
    return np.minimum(x, 0.0) if np.ndim(x) else (x if x < 0 else 0.0)


def _check_same_shape(a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def broadcast_mul(v, z) -> Tensor:
    """Weighted sum of the leading-axis slices of ``z``: sum_n v[n] * z[n]."""
    v, z = ensure_tensor(v), ensure_tensor(z)
    if v.ndim != 1 or z.ndim != 3 or v.shape[0] != z.shape[0]:
        raise ValueError(f"broadcast_mul needs v:(N,) and Z:(N,P,Q); got {v.shape} and {z.shape}")
    return einsum("n,npq->pq", v, z)


def mse(a, b) -> Tensor:
    a, b = ensure_tensor(a), ensure_tensor(b)
    _check_same_shape(a, b)
    diff = a - b
    return (diff * diff).mean()


def l1_norm(a) -> Tensor:
    return ensure_tensor(a).abs().sum()


def cosine_sim(a, b) -> Tensor:
    """Cosine similarity of the flattened inputs; 0 if either norm is below 1e-12."""
    a, b = ensure_tensor(a), ensure_tensor(b)
    _check_same_shape(a, b)
    a = a.reshape(-1)
    b = b.reshape(-1)
    na = float(np.linalg.norm(a.data))
    nb = float(np.linalg.norm(b.data))
    if na < COSINE_EPS or nb < COSINE_EPS:
        return Tensor(0.0)
    return (a * b).sum() / ((a * a).sum().sqrt() * (b * b).sum().sqrt())


# -- optimizer ----------------------------------------------------------------


@dataclass
class AdamState:
    learning_rate: float = 0.0005
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-4
    weight_decay: float = 0.0
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)

    def copy(self) -> "AdamState":
        return AdamState(
            self.learning_rate,
            self.beta1,
            self.beta2,
            self.epsilon,
            self.weight_decay,
            self.step_count,
            [m.copy() for m in self.first_moment],
            [v.copy() for v in self.second_moment],
        )


def adam_step(params: list[Tensor], grads: list, state: AdamState) -> None:
    """One in-place Adam update with bias correction and coupled L2 weight decay.

    A ``None`` gradient counts as zero (the parameter still sees weight decay).
    """
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p.data) for p in params]
        state.second_moment = [np.zeros_like(p.data) for p in params]
    if len(state.first_moment) != len(params):
        raise ValueError("optimizer state was built for a different parameter list")

    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        g = np.zeros_like(p.data) if g is None else np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape or m.shape != p.data.shape:
            raise ValueError(f"shape mismatch in adam_step: param {p.shape}, grad {g.shape}")
        if state.weight_decay:
            g = g + state.weight_decay * p.data
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)


# -- random sources -------------------------------------------------------------


class Rng:
    """Seeded generator backed by numpy's counter-based Philox bit generator.

    Philox output is defined by the algorithm, not the platform, so a seed
    reproduces the same draws everywhere numpy runs.
    """

    algorithm = "philox4x64-10"

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.generator = np.random.Generator(np.random.Philox(self.seed))

    def spawn(self, key: int) -> "Rng":
        """Independent child stream, deterministic in (seed, key)."""
        return Rng(int(np.random.SeedSequence([self.seed, int(key)]).generate_state(1, np.uint64)[0]))


def draw_uniform(rng: Rng, shape, low: float = 0.0, high: float = 1.0) -> Tensor:
    return Tensor(rng.generator.uniform(low, high, size=shape))


def draw_gaussian(rng: Rng, mean, std, shape) -> Tensor:
    if np.any(np.asarray(std) < 0):
        raise ValueError("std must be non-negative")
    return Tensor(rng.generator.normal(mean, std, size=shape))
