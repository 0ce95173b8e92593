"""Ground-truth multi-state systems, simulation, labelling, and fold combination.

A system is a set of lagged VAR factors. Each factor is simulated on its own,
the recordings are weighted by a piecewise-linear trajectory, summed, and
corrupted with Gaussian noise. Windows are labelled by the trajectory's
argmax at their final step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import Rng, nrelu, relu

ACTIVATIONS = ("linear", "relu", "nrelu")
_ACT_FUNCS = {"linear": lambda v: v, "relu": relu, "nrelu": nrelu}

STABILITY_RADIUS = 0.95
DEFAULT_BURN_IN = 50
DEFAULT_KNOT_SPACING = 100
DEFAULT_MIX_NOISE = 0.1
LOW_MAX = 7.0
MODERATE_MAX = 13.0


def base_frequencies(n_c: int) -> np.ndarray:
    return np.pi * np.array([i * 707 + i % 2 for i in range(n_c)], dtype=float) / 120000


@dataclass
class VarFactorSpec:
    """One VAR factor. ``adjacency[i, j, t]`` weights node j at lag t+1 into node i."""

    adjacency: np.ndarray
    edge_activation: np.ndarray
    amp: np.ndarray
    innov_mu: np.ndarray
    innov_var: np.ndarray
    base_freq: np.ndarray

    @property
    def n_c(self) -> int:
        return self.adjacency.shape[0]

    @property
    def tau(self) -> int:
        return self.adjacency.shape[2]

    def lag_summed(self) -> np.ndarray:
        return self.adjacency.sum(axis=2)

    def binary_graph(self) -> np.ndarray:
        """Off-diagonal presence mask of inter-variable edges."""
        present = np.any(self.adjacency != 0, axis=2)
        np.fill_diagonal(present, False)
        return present

    def to_dict(self) -> dict:
        return {
            "adjacency": self.adjacency.tolist(),
            "edge_activation": self.edge_activation.tolist(),
            "amp": self.amp.tolist(),
            "innov_mu": self.innov_mu.tolist(),
            "innov_var": self.innov_var.tolist(),
            "base_freq": self.base_freq.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VarFactorSpec":
        return cls(
            adjacency=np.array(d["adjacency"], dtype=float),
            edge_activation=np.array(d["edge_activation"], dtype=object),
            amp=np.array(d["amp"], dtype=float),
            innov_mu=np.array(d["innov_mu"], dtype=float),
            innov_var=np.array(d["innov_var"], dtype=float),
            base_freq=np.array(d["base_freq"], dtype=float),
        )


@dataclass
class SystemSpec:
    n_c: int
    n_e: int
    factors: list[VarFactorSpec]
    mix_noise_std: float = DEFAULT_MIX_NOISE
    burn_in: int = DEFAULT_BURN_IN
    seed: int | None = None

    @property
    def n_k(self) -> int:
        return len(self.factors)

    def true_graphs(self) -> list[np.ndarray]:
        """Lag-summed true adjacency of each factor, diagonal included."""
        return [f.lag_summed() for f in self.factors]

    def to_dict(self) -> dict:
        return {
            "n_c": self.n_c,
            "n_e": self.n_e,
            "mix_noise_std": self.mix_noise_std,
            "burn_in": self.burn_in,
            "seed": self.seed,
            "factors": [f.to_dict() for f in self.factors],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SystemSpec":
        return cls(
            n_c=d["n_c"],
            n_e=d["n_e"],
            factors=[VarFactorSpec.from_dict(f) for f in d["factors"]],
            mix_noise_std=d["mix_noise_std"],
            burn_in=d["burn_in"],
            seed=d.get("seed"),
        )


@dataclass
class WeightTrajectory:
    weights: np.ndarray  # K x T, values in [0, 1]

    def labels(self) -> np.ndarray:
        """Argmax factor per step; np.argmax already breaks ties toward index 0."""
        return np.argmax(self.weights, axis=0)


@dataclass
class WindowedDataset:
    """Labelled windows: ``x`` is (N, n_c, T_window), ``y`` is one-hot (N, B)."""

    x: np.ndarray
    y: np.ndarray
    split: str = "train"
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.x.ndim != 3 or self.y.ndim != 2 or len(self.x) != len(self.y):
            raise ValueError(f"bad dataset shapes x={self.x.shape} y={self.y.shape}")

    def __len__(self) -> int:
        return len(self.x)

    def __getitem__(self, i):
        return self.x[i], self.y[i]

    @property
    def n_c(self) -> int:
        return self.x.shape[1]

    @property
    def t_window(self) -> int:
        return self.x.shape[2]

    @property
    def B(self) -> int:
        return self.y.shape[1]

    def class_counts(self) -> list[int]:
        if self.B == 0:
            return []
        return np.bincount(np.argmax(self.y, axis=1), minlength=self.B).tolist()


# -- construction ----------------------------------------------------------------


def _scale_to_stable(adjacency: np.ndarray) -> np.ndarray:
    # |A| summed over lags bounds every edge activation (all are 1-Lipschitz
    # through the origin), so radius < 1 there keeps the recurrence contractive.
    radius = np.max(np.abs(np.linalg.eigvals(np.abs(adjacency).sum(axis=2))))
    if radius > STABILITY_RADIUS:
        adjacency = adjacency * (STABILITY_RADIUS / radius)
    return adjacency


def build_system(
    n_c: int,
    n_e: int,
    n_k: int,
    seed: int,
    tau: int = 2,
    mix_noise_std: float = DEFAULT_MIX_NOISE,
    burn_in: int = DEFAULT_BURN_IN,
    innov_amp: float = 1.0,
    innov_mu: float = 0.0,
    innov_var: float = 0.0,
    min_edge_weight: float = 0.0,
) -> SystemSpec:
    """Random system of ``n_k`` VAR factors, each with self-loops and ``n_e`` edges.

    Innovation defaults follow the published synthetic setup (unit amplitude,
    zero mean, zero variance); raise ``innov_var`` for stochastic dynamics.
    Inter-variable edge weights have magnitude in ``[min_edge_weight, 1)``
    before stability scaling.
    """
    if n_c < 1 or n_k < 1 or tau < 1:
        raise ValueError("n_c, n_k and tau must be positive")
    if not 0.0 <= min_edge_weight < 1.0:
        raise ValueError("min_edge_weight must lie in [0, 1)")
    if not 0 <= n_e <= n_c * n_c - n_c:
        raise ValueError(f"n_e={n_e} outside [0, {n_c * n_c - n_c}] for n_c={n_c}")
    rng = Rng(seed).generator
    off_diag = [(i, j) for i in range(n_c) for j in range(n_c) if i != j]
    factors = []
    for _ in range(n_k):
        adjacency = np.zeros((n_c, n_c, tau))
        activation = np.full((n_c, n_c, tau), "linear", dtype=object)
        for i in range(n_c):
            w = rng.uniform(-1.0, 1.0)
            while w == 0.0:
                w = rng.uniform(-1.0, 1.0)
            adjacency[i, i, 0] = w
        chosen = rng.choice(len(off_diag), size=n_e, replace=False) if n_e else []
        for idx in chosen:
            i, j = off_diag[idx]
            lag = rng.integers(tau)
            w = rng.uniform(-1.0, 1.0)
            while w == 0.0:
                w = rng.uniform(-1.0, 1.0)
            if min_edge_weight > 0.0:
                w = np.sign(w) * (min_edge_weight + (1.0 - min_edge_weight) * abs(w))
            adjacency[i, j, lag] = w
            activation[i, j, lag] = ACTIVATIONS[rng.integers(len(ACTIVATIONS))]
        factors.append(
            VarFactorSpec(
                adjacency=_scale_to_stable(adjacency),
                edge_activation=activation,
                amp=np.full(n_c, innov_amp),
                innov_mu=np.full(n_c, innov_mu),
                innov_var=np.full(n_c, innov_var),
                base_freq=base_frequencies(n_c),
            )
        )
    return SystemSpec(n_c, n_e, factors, mix_noise_std=mix_noise_std, burn_in=burn_in, seed=seed)


def complexity_rating(n_c: int, n_e: int) -> tuple[float, str]:
    """Inverse edge density (n_c^2 - n_c) / n_e with its Low/Moderate/High band."""
    if n_c < 2:
        raise ValueError("complexity rating needs n_c >= 2")
    if n_e == 0:
        raise ValueError("complexity rating is undefined for n_e = 0")
    if not 0 < n_e <= n_c * n_c - n_c:
        raise ValueError(f"n_e={n_e} out of range for n_c={n_c}")
    value = (n_c * n_c - n_c) / n_e
    if value <= LOW_MAX:
        category = "Low"
    elif value <= MODERATE_MAX:
        category = "Moderate"
    else:
        category = "High"
    return value, category


# -- simulation -----------------------------------------------------------------


def simulate_factor(
    factor: VarFactorSpec,
    T: int,
    rng: Rng,
    burn_in: int = DEFAULT_BURN_IN,
    initial_state: np.ndarray | None = None,
) -> np.ndarray:
    """Run one VAR factor for ``burn_in + T`` steps and return the last T (n_c x T)."""
    n_c, tau = factor.n_c, factor.tau
    gen = rng.generator
    if initial_state is None:
        initial_state = gen.uniform(-1.0, 1.0, size=n_c)
    # history[:, 0] is the most recent value
    history = np.tile(np.asarray(initial_state, dtype=float)[:, None], (1, tau))
    flat = {
        name: np.where(factor.edge_activation == name, factor.adjacency, 0.0).reshape(n_c, n_c * tau)
        for name in ACTIVATIONS
    }
    active = [(flat[name], _ACT_FUNCS[name]) for name in ACTIVATIONS if flat[name].any()]
    total = burn_in + T
    drive = factor.amp[:, None] * np.sin(factor.base_freq[:, None] * np.arange(total)[None, :])
    u = gen.uniform(0.0, 1.0, size=(total, n_c))
    g = gen.normal(factor.innov_mu, np.sqrt(factor.innov_var), size=(total, n_c))
    innovation = (factor.amp * u * g).T
    out = np.empty((n_c, T))
    for step in range(total):
        new = drive[:, step] + innovation[:, step]
        for w, act in active:
            new = new + w @ act(history).ravel()
        history = np.concatenate([new[:, None], history[:, :-1]], axis=1)
        if step >= burn_in:
            out[:, step - burn_in] = new
    return out


def random_trajectory(n_k: int, T: int, rng: Rng, knot_spacing: int = DEFAULT_KNOT_SPACING) -> WeightTrajectory:
    """Linear interpolation between U(0,1) knots placed every ``knot_spacing`` steps."""
    knots_t = np.arange(0, T + knot_spacing, knot_spacing)
    knots_v = rng.generator.uniform(0.0, 1.0, size=(n_k, len(knots_t)))
    steps = np.arange(T)
    weights = np.stack([np.interp(steps, knots_t, kv) for kv in knots_v])
    return WeightTrajectory(weights)


def mix_recordings(
    recordings: np.ndarray, trajectory: WeightTrajectory, noise_std: float, rng: Rng
) -> np.ndarray:
    """Weight per-factor recordings (K x n_c x T) by the trajectory, sum, add noise."""
    mixed = np.einsum("kt,kct->ct", trajectory.weights, recordings)
    if noise_std > 0:
        mixed = mixed + rng.generator.normal(0.0, noise_std, size=mixed.shape)
    return mixed


def simulate_recording(
    spec: SystemSpec,
    T: int,
    rng: Rng,
    trajectory: WeightTrajectory | None = None,
    knot_spacing: int = DEFAULT_KNOT_SPACING,
) -> tuple[np.ndarray, WeightTrajectory]:
    """Simulate every factor, mix by a (given or fresh) trajectory; returns (x, trajectory)."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if trajectory is None:
        trajectory = random_trajectory(spec.n_k, T, rng, knot_spacing)
    if trajectory.weights.shape != (spec.n_k, T):
        raise ValueError(f"trajectory shape {trajectory.weights.shape} != {(spec.n_k, T)}")
    recordings = np.stack([simulate_factor(f, T, rng, spec.burn_in) for f in spec.factors])
    return mix_recordings(recordings, trajectory, spec.mix_noise_std, rng), trajectory


def label_windows(
    x: np.ndarray,
    trajectory: WeightTrajectory,
    T_window: int = 100,
    stride: int | None = None,
    split: str = "train",
) -> WindowedDataset:
    """Cut ``x`` into windows labelled one-hot by the trajectory argmax at their last step."""
    n_c, T = x.shape
    if T_window > T:
        raise ValueError(f"T_window={T_window} exceeds recording length {T}")
    stride = T_window if stride is None else stride
    starts = range(0, T - T_window + 1, stride)
    labels = trajectory.labels()
    K = trajectory.weights.shape[0]
    xs = np.stack([x[:, s : s + T_window] for s in starts])
    ys = np.zeros((len(xs), K))
    for n, s in enumerate(starts):
        ys[n, labels[s + T_window - 1]] = 1.0
    return WindowedDataset(xs, ys, split=split)


def generate_dataset(
    spec: SystemSpec,
    per_class: int,
    seed: int,
    T_window: int = 100,
    recording_windows: int = 10,
    split: str = "train",
    max_recordings: int = 100000,
) -> WindowedDataset:
    """Simulate recordings until every factor label has ``per_class`` windows."""
    rng = Rng(seed)
    K = spec.n_k
    counts = np.zeros(K, dtype=int)
    xs, ys = [], []
    for _ in range(max_recordings):
        if counts.min() >= per_class:
            break
        x, traj = simulate_recording(spec, T_window * recording_windows, rng)
        ds = label_windows(x, traj, T_window, split=split)
        for xw, yw in zip(ds.x, ds.y):
            k = int(np.argmax(yw))
            if counts[k] < per_class:
                counts[k] += 1
                xs.append(xw)
                ys.append(yw)
    else:
        raise RuntimeError(f"could not fill {per_class} windows per class; got {counts.tolist()}")
    return WindowedDataset(np.stack(xs), np.stack(ys), split=split, seed=seed)


def combine_folds(
    recordings,
    dominant_index: int,
    dominant_coeff: float = 10.0,
    background_coeff: float = 0.1,
) -> np.ndarray:
    """dominant_coeff * recordings[dominant] + background_coeff * sum(other recordings)."""
    recordings = [np.asarray(r, dtype=float) for r in recordings]
    if not recordings:
        raise ValueError("no recordings to combine")
    shape = recordings[0].shape
    if any(r.shape != shape for r in recordings):
        raise ValueError("all recordings must share one shape")
    if not 0 <= dominant_index < len(recordings):
        raise IndexError(f"dominant_index {dominant_index} out of range")
    out = dominant_coeff * recordings[dominant_index]
    for i, r in enumerate(recordings):
        if i != dominant_index:
            out = out + background_coeff * r
    return out


SNR_BACKGROUND = {"HSNR": 0.0, "MSNR": 0.1, "LSNR": 1.0}
