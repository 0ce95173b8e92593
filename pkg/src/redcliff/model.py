"""Conditionally weighted factor model for dynamic Granger-causal graphs.

Each factor is a component-wise MLP whose first-layer weight groups give a
lagged adjacency estimate. A state model scores the factors from a longer
history window; its first ``B`` raw scores also drive label predictions
through an invertible head.

Shapes: windows are ``(N, n_c, L)`` with time running oldest to newest along
the last axis. Lag index ``t`` in any adjacency tensor means "t+1 steps ago".
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import Rng, cosine_sim, mse
from .tensor import Tensor, einsum, stack

SCALE_FLOOR = 1e-3


def _uniform_init(gen: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(gen.uniform(-bound, bound, size=shape), requires_grad=True)


class FactorNet:
    """Component-wise MLP: one small network per output channel, evaluated jointly.

    ``w1[i, h, j, t]`` connects channel j at lag t+1 to hidden unit h of the
    network predicting channel i.
    """

    def __init__(self, n_c: int, tau_in: int, hidden=(25,), rng: Rng | None = None):
        if not hidden:
            raise ValueError("a factor needs at least one hidden layer")
        self.n_c, self.tau_in, self.hidden = n_c, tau_in, tuple(hidden)
        gen = (rng or Rng(0)).generator
        fan_in = n_c * tau_in
        self.w1 = _uniform_init(gen, (n_c, hidden[0], n_c, tau_in), fan_in)
        self.b1 = _uniform_init(gen, (n_c, hidden[0]), fan_in)
        self.layers = []
        for prev, nxt in zip(hidden[:-1], hidden[1:]):
            self.layers.append((_uniform_init(gen, (n_c, nxt, prev), prev), _uniform_init(gen, (n_c, nxt), prev)))
        self.w_out = _uniform_init(gen, (n_c, hidden[-1]), hidden[-1])
        self.b_out = _uniform_init(gen, (n_c,), hidden[-1])

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = [("w1", self.w1), ("b1", self.b1)]
        for n, (w, b) in enumerate(self.layers):
            out += [(f"hidden{n}.w", w), (f"hidden{n}.b", b)]
        return out + [("w_out", self.w_out), ("b_out", self.b_out)]

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def forward(self, x) -> Tensor:
        """Batched one-step forecast: ``(N, n_c, tau_in)`` -> ``(N, n_c)``."""
        x = np.asarray(x, dtype=float)
        if x.ndim != 3 or x.shape[1:] != (self.n_c, self.tau_in):
            raise ValueError(f"factor expects (N, {self.n_c}, {self.tau_in}), got {x.shape}")
        lagged = x[:, :, ::-1]
        h = (einsum("ihjt,njt->nih", self.w1, lagged) + self.b1).relu()
        for w, b in self.layers:
            h = (einsum("igh,nih->nig", w, h) + b).relu()
        return einsum("ih,nih->ni", self.w_out, h) + self.b_out

    def adjacency(self) -> Tensor:
        """Differentiable lagged adjacency: L2 norm over hidden units of ``w1``."""
        return self.w1.norm(axis=1)


def factor_forward(f: FactorNet, x) -> np.ndarray:
    """Forecast for a single ``(n_c, tau_in)`` window, shaped ``(n_c, 1)``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (f.n_c, f.tau_in):
        raise ValueError(f"expected window {(f.n_c, f.tau_in)}, got {x.shape}")
    return f.forward(x[None]).data.reshape(f.n_c, 1)


def extract_adjacency(f: FactorNet) -> np.ndarray:
    return f.adjacency().data.copy()


def lag_sum(a) -> np.ndarray:
    return np.asarray(a, dtype=float).sum(axis=2)


class InvertibleAffine:
    """Elementwise ``v -> scale * v + bias`` with ``|scale| >= 1e-3``."""

    def __init__(self, size: int):
        self.scale = Tensor(np.ones(size), requires_grad=True)
        self.bias = Tensor(np.zeros(size), requires_grad=True)

    def __call__(self, v: Tensor) -> Tensor:
        return v * self.scale + self.bias

    def inverse(self, v) -> np.ndarray:
        return (np.asarray(v, dtype=float) - self.bias.data) / self.scale.data

    def project(self) -> None:
        s = self.scale.data
        small = np.abs(s) < SCALE_FLOOR
        s[small] = np.where(s[small] < 0, -SCALE_FLOOR, SCALE_FLOOR)


class StateModel:
    """Dense trunk over the flattened context window plus the two invertible heads."""

    def __init__(
        self,
        n_c: int,
        n_k: int,
        B: int,
        tau_in: int,
        tau_cl: int,
        hidden=(100,),
        rng: Rng | None = None,
        alpha_sigmoid: bool = False,
    ):
        if tau_cl < 1:
            raise ValueError("tau_cl must be >= 1")
        if B > n_k:
            raise ValueError(f"B={B} exceeds n_k={n_k}")
        self.n_c, self.n_k, self.B = n_c, n_k, B
        self.tau_in, self.tau_cl = tau_in, tau_cl
        self.hidden = tuple(hidden)
        self.alpha_sigmoid = alpha_sigmoid
        gen = (rng or Rng(0)).generator
        sizes = [n_c * (tau_in + tau_cl), *self.hidden, n_k]
        self.trunk = [
            (_uniform_init(gen, (o, i), i), _uniform_init(gen, (o,), i)) for i, o in zip(sizes[:-1], sizes[1:])
        ]
        self.g_alpha = InvertibleAffine(n_k)
        self.g_y = InvertibleAffine(B)

    @property
    def context(self) -> int:
        return self.tau_in + self.tau_cl

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for n, (w, b) in enumerate(self.trunk):
            out += [(f"trunk{n}.w", w), (f"trunk{n}.b", b)]
        return out + [
            ("g_alpha.scale", self.g_alpha.scale),
            ("g_alpha.bias", self.g_alpha.bias),
            ("g_y.scale", self.g_y.scale),
            ("g_y.bias", self.g_y.bias),
        ]

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def raw_scores(self, x) -> Tensor:
        x = np.asarray(x, dtype=float)
        if x.ndim != 3 or x.shape[1:] != (self.n_c, self.context):
            raise ValueError(f"state model expects (N, {self.n_c}, {self.context}), got {x.shape}")
        h = Tensor(x.reshape(len(x), -1))
        for n, (w, b) in enumerate(self.trunk):
            h = einsum("oi,ni->no", w, h) + b
            if n < len(self.trunk) - 1:
                h = h.relu()
        return h

    def forward(self, x) -> tuple[Tensor, Tensor]:
        """Returns ``(alpha, y_hat)`` shaped ``(N, n_k)`` and ``(N, B)``."""
        raw = self.raw_scores(x)
        alpha = self.g_alpha(raw)
        if self.alpha_sigmoid:
            alpha = alpha.sigmoid()
        y_hat = self.g_y(raw[:, : self.B])
        return alpha, y_hat

    def alpha_to_raw(self, alpha) -> np.ndarray:
        alpha = np.asarray(alpha, dtype=float)
        if self.alpha_sigmoid:
            alpha = np.log(alpha) - np.log1p(-alpha)
        return self.g_alpha.inverse(alpha)

    def project(self) -> None:
        self.g_alpha.project()
        self.g_y.project()


def state_forward(s: StateModel, x) -> tuple[np.ndarray, np.ndarray]:
    alpha, y_hat = s.forward(np.asarray(x, dtype=float)[None])
    return alpha.data[0], y_hat.data[0]


@dataclass
class Forward:
    x_hat: Tensor  # (N, n_c)
    alpha: Tensor  # (N, n_k) state-model scores
    y_hat: Tensor  # (N, B)
    factor_out: Tensor  # (N, n_k, n_c)


class RedcliffModel:
    def __init__(
        self,
        n_c: int,
        n_k: int,
        B: int,
        tau_in: int = 4,
        tau_cl: int = 12,
        gen_hidden=(25,),
        embed_hidden=(100,),
        seed: int = 0,
        alpha_pinned: bool = False,
        alpha_sigmoid: bool = False,
    ):
        if B > n_k:
            raise ValueError(f"B={B} exceeds n_k={n_k}")
        self.n_c, self.n_k, self.B = n_c, n_k, B
        self.tau_in, self.tau_cl = tau_in, tau_cl
        self.gen_hidden, self.embed_hidden = tuple(gen_hidden), tuple(embed_hidden)
        self.seed = seed
        self.alpha_pinned = alpha_pinned
        rng = Rng(seed)
        self.factors = [FactorNet(n_c, tau_in, gen_hidden, rng.spawn(k)) for k in range(n_k)]
        self.state = StateModel(
            n_c, n_k, B, tau_in, tau_cl, embed_hidden, rng.spawn(n_k), alpha_sigmoid=alpha_sigmoid
        )

    # -- parameters --------------------------------------------------------------
    def architecture(self) -> dict:
        return {
            "name": "redcliff-cmlp",
            "n_c": self.n_c,
            "n_k": self.n_k,
            "B": self.B,
            "tau_in": self.tau_in,
            "tau_cl": self.tau_cl,
            "gen_hidden": list(self.gen_hidden),
            "embed_hidden": list(self.embed_hidden),
            "seed": self.seed,
            "alpha_pinned": self.alpha_pinned,
            "alpha_sigmoid": self.state.alpha_sigmoid,
        }

    @classmethod
    def from_architecture(cls, arch: dict) -> "RedcliffModel":
        return cls(
            arch["n_c"],
            arch["n_k"],
            arch["B"],
            arch["tau_in"],
            arch["tau_cl"],
            arch["gen_hidden"],
            arch["embed_hidden"],
            arch.get("seed", 0),
            arch.get("alpha_pinned", False),
            arch.get("alpha_sigmoid", False),
        )

    def factor_parameters(self) -> list[Tensor]:
        return [p for f in self.factors for p in f.parameters()]

    def state_parameters(self) -> list[Tensor]:
        return self.state.parameters()

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = [(f"factor{k}.{n}", p) for k, f in enumerate(self.factors) for n, p in f.named_parameters()]
        return out + [(f"state.{n}", p) for n, p in self.state.named_parameters()]

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def snapshot(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.parameters()]

    def restore(self, values: list[np.ndarray]) -> None:
        for p, v in zip(self.parameters(), values):
            p.data[...] = v

    # -- computation -------------------------------------------------------------
    @property
    def context(self) -> int:
        return self.tau_in + self.tau_cl

    def forward(self, x) -> Forward:
        x = np.asarray(x, dtype=float)
        if x.ndim != 3 or x.shape[1:] != (self.n_c, self.context):
            raise ValueError(f"model expects (N, {self.n_c}, {self.context}), got {x.shape}")
        alpha, y_hat = self.state.forward(x)
        trailing = x[:, :, -self.tau_in :]
        outs = stack([f.forward(trailing) for f in self.factors], axis=1)
        weights = Tensor(np.ones(alpha.shape)) if self.alpha_pinned else alpha
        x_hat = einsum("nk,nkc->nc", weights, outs)
        return Forward(x_hat, alpha, y_hat, outs)

    def lagged_adjacencies(self) -> list[Tensor]:
        return [f.adjacency() for f in self.factors]

    def graphs(self) -> list[np.ndarray]:
        """Lag-summed adjacency estimate per factor (n_c x n_c, diagonal kept)."""
        return [lag_sum(f.adjacency().data) for f in self.factors]

    def project(self) -> None:
        self.state.project()


def redcliff_forward(m: RedcliffModel, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Single window ``(n_c, tau_in + tau_cl)`` -> ``(x_hat (n_c, 1), alpha, y_hat)``."""
    out = m.forward(np.asarray(x, dtype=float)[None])
    return out.x_hat.data.reshape(m.n_c, 1), out.alpha.data[0], out.y_hat.data[0]


# -- objective terms ----------------------------------------------------------------


@dataclass
class Batch:
    inputs: np.ndarray  # (N, n_c, tau_in + tau_cl)
    targets: np.ndarray  # (N, n_c)
    labels: np.ndarray  # (N, B)

    def __len__(self) -> int:
        return len(self.inputs)

    def subset(self, idx) -> "Batch":
        return Batch(self.inputs[idx], self.targets[idx], self.labels[idx])


def lag_weights(tau_in: int) -> np.ndarray:
    """log(t + 1) for lags t = 1..tau_in (natural log)."""
    return np.log(np.arange(1, tau_in + 1) + 1.0)


def sparsity_penalty(m: RedcliffModel) -> Tensor:
    """sum_k sum_t log(t+1) * ||A_k[:, :, t]||_1 over the lagged adjacency estimates."""
    w = Tensor(lag_weights(m.tau_in))
    total = Tensor(0.0)
    for a in m.lagged_adjacencies():
        total = total + (a.sum(axis=(0, 1)) * w).sum()
    return total


def similarity_penalty(m: RedcliffModel) -> Tensor:
    """sum_{p<q} CosSim(A~_p - I, A~_q - I)."""
    eye = np.eye(m.n_c)
    summed = [a.sum(axis=2) - eye for a in m.lagged_adjacencies()]
    total = Tensor(0.0)
    for p in range(len(summed)):
        for q in range(p + 1, len(summed)):
            total = total + cosine_sim(summed[p], summed[q])
    return total


def loss_f(m: RedcliffModel, batch: Batch, eta: float, omega: float, rho: float, out: Forward | None = None) -> Tensor:
    out = out or m.forward(batch.inputs)
    loss = omega * mse(out.x_hat, batch.targets)
    if eta:
        loss = loss + eta * sparsity_penalty(m)
    if rho:
        loss = loss + rho * similarity_penalty(m)
    return loss


def loss_g(alpha: Tensor, gamma: float) -> Tensor:
    """gamma * (-1 + sum_n ||alpha_n||_1), summed over the batch."""
    return gamma * (alpha.abs().sum() - 1.0)


def label_loss(y_hat: Tensor, labels) -> Tensor:
    if y_hat.shape[1] == 0:
        return Tensor(0.0)
    return mse(y_hat, labels)


def total_loss(
    m: RedcliffModel,
    batch: Batch,
    eta: float,
    omega: float,
    rho: float,
    gamma: float,
    lam: float,
    out: Forward | None = None,
) -> Tensor:
    out = out or m.forward(batch.inputs)
    loss = loss_f(m, batch, eta, omega, rho, out) + loss_g(out.alpha, gamma)
    if lam:
        loss = loss + lam * label_loss(out.y_hat, batch.labels)
    return loss


def naive_state_prediction(B: int) -> np.ndarray:
    if B < 1:
        raise ValueError("B must be >= 1")
    return np.ones(B)


def behavior_presence(y_hat, c) -> np.ndarray:
    y_hat, c = np.asarray(y_hat, dtype=float), np.asarray(c, dtype=float)
    if y_hat.shape[-1] != c.shape[-1]:
        raise ValueError("y_hat and thresholds differ in length")
    return y_hat > c


def windows_to_batch(ds, context: int, forecast_steps: int = 1) -> Batch:
    """Turn labelled windows into forecasting examples.

    The last ``forecast_steps`` time points of each window become targets,
    each predicted from the ``context`` steps before it; every example
    inherits its window's label.
    """
    x = np.asarray(ds.x, dtype=float)
    N, n_c, T = x.shape
    if T < context + forecast_steps:
        raise ValueError(f"windows of length {T} are too short for context {context} + {forecast_steps} targets")
    inputs, targets, labels = [], [], []
    for s in range(T - forecast_steps, T):
        inputs.append(x[:, :, s - context : s])
        targets.append(x[:, :, s])
        labels.append(ds.y)
    # sample-major ordering: all targets of window 0 first
    inputs = np.stack(inputs, axis=1).reshape(N * forecast_steps, n_c, context)
    targets = np.stack(targets, axis=1).reshape(N * forecast_steps, n_c)
    labels = np.stack(labels, axis=1).reshape(N * forecast_steps, -1)
    return Batch(inputs, targets, labels)
