"""Three-phase training schedule, validation stopping criterion, and ablations."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .io import save_checkpoint, write_json
from .model import (
    Batch,
    RedcliffModel,
    label_loss,
    loss_f,
    loss_g,
    similarity_penalty,
    sparsity_penalty,
    total_loss,
)
from .numerics import AdamState, Rng, adam_step, cosine_sim, mse

log = logging.getLogger(__name__)

ABLATIONS = ("rho_zero", "single_factor", "alpha_pinned_one", "lambda_zero")
NORMALIZE_EPS = 1e-12


class DivergenceError(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


def default_rho(n_k: int) -> float:
    denom = sum(range(1, n_k))
    return 1.0 / denom if denom else 0.0


def default_eta(n_k: int, n_c: int) -> float:
    return 0.1 / (n_k * math.sqrt(n_c * n_c - 1))


@dataclass
class TrainConfig:
    n_k: int = 2
    B: int | None = None  # defaults to n_k
    eta: float | None = None
    omega: float = 10.0
    rho: float | None = None
    gamma: float = 0.001
    lam: float = 100.0
    gen_lr: float = 0.0005
    embed_lr: float = 0.0005
    weight_decay: float = 0.0001
    eps: float = 0.0001
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 128
    max_iter: int = 300
    pretrain_epochs: int = 100
    acclimation_epochs: int = 100
    tau_in: int = 4
    tau_cl: int = 12
    gen_hidden: tuple = (25,)
    embed_hidden: tuple = (100,)
    forecast_steps: int = 1
    criterion_cos_multiplier: float = 1.0
    alpha_sigmoid: bool = False
    rho_zero: bool = False
    single_factor: bool = False
    alpha_pinned_one: bool = False
    lambda_zero: bool = False
    seed: int = 0

    def resolved(self, n_c: int) -> "TrainConfig":
        """Fill the n_k/n_c dependent defaults (B, eta, rho)."""
        cfg = dataclasses.replace(self)
        if cfg.B is None:
            cfg.B = cfg.n_k
        if cfg.eta is None:
            cfg.eta = default_eta(cfg.n_k, n_c)
        if cfg.rho is None:
            cfg.rho = default_rho(cfg.n_k)
        return cfg

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["gen_hidden"] = list(self.gen_hidden)
        d["embed_hidden"] = list(self.embed_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        d = dict(d)
        for key in ("gen_hidden", "embed_hidden"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def apply_ablation(cfg: TrainConfig) -> TrainConfig:
    """Resolve the (at most one) ablation flag into concrete settings."""
    flags = [name for name in ABLATIONS if getattr(cfg, name)]
    if len(flags) > 1:
        raise ConfigError(f"only one ablation per run, got {flags}")
    cfg = dataclasses.replace(cfg)
    if cfg.rho_zero:
        cfg.rho = 0.0
    if cfg.lambda_zero:
        cfg.lam = 0.0
    if cfg.single_factor:
        # a lone factor with unit weight is the plain forecasting model
        cfg.n_k, cfg.B, cfg.lam, cfg.rho = 1, 0, 0.0, 0.0
    return cfg


def build_model(cfg: TrainConfig, n_c: int) -> RedcliffModel:
    return RedcliffModel(
        n_c,
        cfg.n_k,
        cfg.B,
        cfg.tau_in,
        cfg.tau_cl,
        cfg.gen_hidden,
        cfg.embed_hidden,
        seed=cfg.seed,
        alpha_pinned=cfg.alpha_pinned_one or cfg.single_factor,
        alpha_sigmoid=cfg.alpha_sigmoid,
    )


def prepare(cfg: TrainConfig, n_c: int, B_data: int) -> TrainConfig:
    """Resolve defaults and ablations, and check the config against the data."""
    cfg = apply_ablation(cfg.resolved(n_c))
    if cfg.lam > 0 and cfg.B > 0 and B_data == 0:
        raise ConfigError("lambda > 0 needs state labels but the dataset has B = 0")
    if cfg.B > cfg.n_k:
        raise ConfigError(f"B={cfg.B} exceeds n_k={cfg.n_k}")
    if cfg.B and B_data and cfg.B != B_data:
        raise ConfigError(f"config B={cfg.B} but dataset labels have B={B_data}")
    for name in ("eta", "omega", "rho", "gamma", "lam"):
        if getattr(cfg, name) < 0:
            raise ConfigError(f"{name} must be non-negative")
    return cfg


def _labels_for(model: RedcliffModel, batch: Batch) -> np.ndarray:
    return batch.labels[:, : model.B]


# -- per-phase steps ------------------------------------------------------------


def _batches(n: int, batch_size: int, rng: Rng):
    order = rng.generator.permutation(n)
    for lo in range(0, n, batch_size):
        yield order[lo : lo + batch_size]


def _check_finite(loss, where: str) -> None:
    if not np.isfinite(loss.data):
        raise DivergenceError(f"non-finite loss during {where}: {loss.data}")


def _step(model: RedcliffModel, loss, params, state: AdamState, where: str, project: bool) -> None:
    _check_finite(loss, where)
    model.zero_grad()
    loss.backward()
    adam_step(params, [p.grad for p in params], state)
    if project:
        model.project()


def _state_opt(cfg: TrainConfig) -> AdamState:
    return AdamState(cfg.embed_lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay)


def _factor_opt(cfg: TrainConfig) -> AdamState:
    return AdamState(cfg.gen_lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay)


def pretrain_state(model: RedcliffModel, data: Batch, cfg: TrainConfig, rng: Rng | None = None, epochs=None):
    """Fit only the state model to gamma * L_g + lambda * label MSE. Returns per-epoch label MSE."""
    if len(data) == 0:
        raise ValueError("empty training set")
    rng = rng or Rng(cfg.seed).spawn(1)
    epochs = cfg.pretrain_epochs if epochs is None else epochs
    params = model.state_parameters()
    opt = _state_opt(cfg)
    history = []
    for _ in range(epochs):
        for idx in _batches(len(data), cfg.batch_size, rng):
            b = data.subset(idx)
            alpha, y_hat = model.state.forward(b.inputs)
            loss = loss_g(alpha, cfg.gamma)
            if cfg.lam:
                loss = loss + cfg.lam * label_loss(y_hat, _labels_for(model, b))
            _step(model, loss, params, opt, "pretraining", project=True)
        history.append(_label_mse(model, data))
    return history


def acclimate_factors(model: RedcliffModel, data: Batch, cfg: TrainConfig, rng: Rng | None = None, epochs=None):
    """Fit only the factors to L_f under the frozen state model. Returns per-epoch forecast MSE."""
    if len(data) == 0:
        raise ValueError("empty training set")
    rng = rng or Rng(cfg.seed).spawn(2)
    epochs = cfg.acclimation_epochs if epochs is None else epochs
    params = model.factor_parameters()
    opt = _factor_opt(cfg)
    history = []
    for _ in range(epochs):
        for idx in _batches(len(data), cfg.batch_size, rng):
            b = data.subset(idx)
            loss = loss_f(model, b, cfg.eta, cfg.omega, cfg.rho)
            _step(model, loss, params, opt, "acclimation", project=False)
        history.append(_forecast_mse(model, data))
    return history


def _forecast_mse(model: RedcliffModel, data: Batch) -> float:
    return float(mse(model.forward(data.inputs).x_hat, data.targets))


def _label_mse(model: RedcliffModel, data: Batch) -> float:
    if model.B == 0:
        return 0.0
    _, y_hat = model.state.forward(data.inputs)
    return float(mse(y_hat, _labels_for(model, data)))


# -- stopping criterion -----------------------------------------------------------


def normalized_similarity(model: RedcliffModel) -> float:
    """sum_{p<q} CosSim(A~_p / max A~_p, A~_q / max A~_q); all-zero graphs contribute 0."""
    graphs = []
    for g in model.graphs():
        top = g.max()
        graphs.append(g / top if top >= NORMALIZE_EPS else np.zeros_like(g))
    total = 0.0
    for p in range(len(graphs)):
        for q in range(p + 1, len(graphs)):
            total += float(cosine_sim(graphs[p], graphs[q]))
    return total


def criterion_components(model: RedcliffModel, val: Batch) -> tuple[float, float, float]:
    """(mean forecast MSE, mean label MSE, graph similarity) on validation data."""
    if len(val) == 0:
        raise ValueError("empty validation set")
    out = model.forward(val.inputs)
    forecast = float(mse(out.x_hat, val.targets))
    label = float(mse(out.y_hat, _labels_for(model, val))) if model.B else 0.0
    return forecast, label, normalized_similarity(model)


def combine_criterion(components, cfg: TrainConfig) -> float:
    forecast, label, sim = components
    return cfg.omega * forecast + cfg.lam * label + cfg.rho * cfg.criterion_cos_multiplier * sim


def stopping_criterion(model: RedcliffModel, val: Batch, cfg: TrainConfig) -> float:
    return combine_criterion(criterion_components(model, val), cfg)


# -- joint training ------------------------------------------------------------------


@dataclass
class CheckpointRecord:
    epoch: int
    criterion_value: float
    component_values: tuple[float, float, float]
    path: str | None = None


@dataclass
class TrainResult:
    records: list[CheckpointRecord]
    history: list[dict]
    best_epoch: int
    best_params: list = field(repr=False, default_factory=list)


def select_checkpoint(records: list[CheckpointRecord]) -> CheckpointRecord:
    """Lowest criterion; the earliest epoch wins ties."""
    return min(records, key=lambda r: (r.criterion_value, r.epoch))


def _epoch_terms(model: RedcliffModel, data: Batch, cfg: TrainConfig) -> dict:
    out = model.forward(data.inputs)
    terms = {
        "forecast_mse": float(mse(out.x_hat, data.targets)),
        "sparsity": float(sparsity_penalty(model)),
        "similarity": float(similarity_penalty(model)),
        "alpha_l1": float(np.abs(out.alpha.data).sum(axis=1).mean()),
        "label_mse": float(label_loss(out.y_hat, _labels_for(model, data))) if model.B else 0.0,
    }
    return terms


def joint_train(
    model: RedcliffModel,
    data: Batch,
    val: Batch,
    cfg: TrainConfig,
    rng: Rng | None = None,
    out_dir=None,
) -> TrainResult:
    """Update every parameter on the full objective; score the criterion each epoch.

    With ``out_dir`` set, the best-so-far checkpoint goes to ``out_dir/best``
    and the last epoch to ``out_dir/final``.
    """
    if len(data) == 0:
        raise ValueError("empty training set")
    rng = rng or Rng(cfg.seed).spawn(3)
    factor_params, state_params = model.factor_parameters(), model.state_parameters()
    f_opt, s_opt = _factor_opt(cfg), _state_opt(cfg)
    records: list[CheckpointRecord] = []
    history: list[dict] = []
    best: CheckpointRecord | None = None
    best_params = model.snapshot()
    for epoch in range(cfg.max_iter):
        running, count = 0.0, 0
        for idx in _batches(len(data), cfg.batch_size, rng):
            b = data.subset(idx)
            loss = total_loss(model, b, cfg.eta, cfg.omega, cfg.rho, cfg.gamma, cfg.lam)
            _check_finite(loss, f"joint epoch {epoch}")
            model.zero_grad()
            loss.backward()
            adam_step(factor_params, [p.grad for p in factor_params], f_opt)
            adam_step(state_params, [p.grad for p in state_params], s_opt)
            model.project()
            running += float(loss) * len(idx)
            count += len(idx)
        components = criterion_components(model, val)
        crit = combine_criterion(components, cfg)
        if not np.isfinite(crit):
            raise DivergenceError(f"non-finite stopping criterion at epoch {epoch}")
        record = CheckpointRecord(epoch, crit, components)
        records.append(record)
        history.append(
            {
                "epoch": epoch,
                "train_loss": running / count,
                **_epoch_terms(model, data, cfg),
                "criterion": crit,
                "crit_forecast": components[0],
                "crit_label": components[1],
                "crit_similarity": components[2],
            }
        )
        if best is None or crit < best.criterion_value:
            best = record
            best_params = model.snapshot()
            if out_dir is not None:
                record.path = str(Path(out_dir) / "best")
                save_checkpoint(model, record.path, {"epoch": epoch, "criterion": crit})
        log.debug("epoch %d loss %.6g criterion %.6g", epoch, running / count, crit)
    if out_dir is not None and records:
        final = Path(out_dir) / "final"
        save_checkpoint(model, final, {"epoch": records[-1].epoch, "criterion": records[-1].criterion_value})
        if records[-1].path is None:
            records[-1].path = str(final)
    best_epoch = best.epoch if best else -1
    return TrainResult(records, history, best_epoch, best_params)


def train(model: RedcliffModel, data: Batch, val: Batch, cfg: TrainConfig, out_dir=None) -> TrainResult:
    """Pretrain the state model, acclimate the factors, then train jointly.

    The model is left holding the parameters of the selected (lowest
    criterion) epoch.
    """
    root = Rng(cfg.seed)
    pretrain_state(model, data, cfg, root.spawn(1))
    acclimate_factors(model, data, cfg, root.spawn(2))
    result = joint_train(model, data, val, cfg, root.spawn(3), out_dir)
    if result.records:
        model.restore(result.best_params)
    return result


HISTORY_COLUMNS = [
    "epoch",
    "train_loss",
    "forecast_mse",
    "sparsity",
    "similarity",
    "alpha_l1",
    "label_mse",
    "criterion",
    "crit_forecast",
    "crit_label",
    "crit_similarity",
]


def write_history(history: list[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in history:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def write_train_config(cfg: TrainConfig, path) -> None:
    write_json(path, cfg.to_dict())
