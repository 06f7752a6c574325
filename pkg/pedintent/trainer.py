"""\
.. currentmodule:: pedintent.trainer

Training and evaluation of the intention network.

The loss of a mini-batch is::

    BCE(ŷ, y) + λ · MSE(offsets, true offsets)
      + l1_lstm · Σ|θ_lstm| + l2_ic_stream · Σθ_ic² + l2_lc_stream · Σθ_lc²

The appearance encoder only feeds the intention stream, so its weights
share the ``l2_ic_stream`` penalty.

where offsets are the predicted future positions relative to the last
observed target center in image-size units. Parameters are updated by plain
stochastic gradient descent, ``θ′ = θ − lr · g``, with the gradient averaged
over the mini-batch. Every source of randomness (initialization, shuffling)
derives from :attr:`TrainConfig.seed`, so that two runs with the same
configuration give the same loss sequence and parameters, bit for bit.

When no learning rate is given, :func:`resolve_learning_rate` picks one
from the number of graph nodes of the dataset:

>>> [resolve_learning_rate(n) for n in (2, 5, 8)]
[0.001, 0.0007, 0.0005]

Crossing is decided when ``ŷ > 0.5``; a probability of exactly 0.5 counts as
not crossing.


API Reference
-------------

.. autoclass:: TrainConfig
.. autoclass:: Checkpoint
.. autoclass:: EpochLog
.. autofunction:: resolve_learning_rate
.. autofunction:: regularization
.. autofunction:: total_loss
.. autofunction:: loss_and_gradients
.. autofunction:: sgd_step
.. autofunction:: train
.. autofunction:: evaluate
.. autofunction:: standstill_ade
.. autofunction:: repeat_experiment
.. autofunction:: write_loss_log
"""

from __future__ import annotations

import csv
import logging
from collections.abc import Callable, Mapping, Sequence
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from ._helpers import config_from_dict
from .errors import NonFiniteError, ParameterError, ValidationError
from .metrics import MetricsReport, ade, classification_metrics, fde, mean_report
from .net import (
    Batch,
    ModelConfig,
    ModelParams,
    collate,
    forward_batch,
    to_positions,
)
from .scene import SceneSequence

logger = logging.getLogger(__name__)

# Node count upper bounds and their learning rate.
LEARNING_RATES = ((3, 1e-3), (6, 7e-4))
DEFAULT_LEARNING_RATE = 5e-4


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings.

    With ``ablate_signals``, signal state features are zeroed in every
    batch, for training and evaluation alike.
    """

    learning_rate: float = DEFAULT_LEARNING_RATE
    epochs: int = 30
    batch_size: int = 128
    l1_lstm: float = 0.01
    l2_ic_stream: float = 0.05
    l2_lc_stream: float = 0.001
    traj_loss_weight: float = 1.0
    seed: int = 0
    shuffle: bool = True
    ablate_signals: bool = False

    def __post_init__(self) -> None:
        for name in (
            "learning_rate",
            "l1_lstm",
            "l2_ic_stream",
            "l2_lc_stream",
            "traj_loss_weight",
        ):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ParameterError(f"{name} must be finite and ≥ 0, got {value}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be ≥ 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ParameterError(f"epochs must be ≥ 1, got {self.epochs}")

    def as_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> TrainConfig:
        return config_from_dict(cls, data, "train_config")


class EpochLog(NamedTuple):
    epoch: int
    train_loss: float
    val_loss: float | None = None


@dataclass(frozen=True)
class Checkpoint:
    """Trained parameters with the configurations that produced them.

    ``history`` is the per-epoch loss log of the training run; it is not
    part of the checkpoint file.
    """

    params: ModelParams
    config: ModelConfig
    train_config: TrainConfig
    epoch: int
    history: list[EpochLog] = field(default_factory=list, compare=False)


def resolve_learning_rate(n_nodes: int) -> float:
    if n_nodes < 1:
        raise ParameterError(f"node count must be ≥ 1, got {n_nodes}")
    for bound, rate in LEARNING_RATES:
        if n_nodes <= bound:
            return rate
    return DEFAULT_LEARNING_RATE


def _group(name: str) -> str:
    return name.split(".", 1)[0]


def regularization(weights: Mapping[str, Tensor], cfg: TrainConfig) -> Tensor:
    """L1 penalty of LSTM weights and L2 penalties of both streams.

    Appearance encoder weights are penalized with the intention stream.

    >>> w = {"lstm.weight": Tensor([[2.0]]), "ic.0.fc.weight": Tensor([1.0])}
    >>> cfg = TrainConfig(l1_lstm=0.01, l2_ic_stream=0.0)
    >>> round(float(regularization(w, cfg).value), 12)
    0.02
    """
    coefficients = {
        "lstm": (cfg.l1_lstm, ad.absolute),
        "encoder": (cfg.l2_ic_stream, ad.square),
        "ic": (cfg.l2_ic_stream, ad.square),
        "lc": (cfg.l2_lc_stream, ad.square),
    }
    terms = []
    for name, weight in weights.items():
        coefficient, penalty = coefficients.get(_group(name), (0.0, ad.square))
        if coefficient:
            terms.append(ad.mul(coefficient, ad.total(penalty(weight))))
    penalty_sum: Tensor = Tensor(0.0)
    for term in terms:
        penalty_sum = ad.add(penalty_sum, term)
    return penalty_sum


def total_loss(
    y_hat: Tensor,
    y: np.ndarray | Sequence[int],
    traj_hat: Tensor,
    traj_true: np.ndarray,
    weights: Mapping[str, Tensor],
    cfg: TrainConfig,
) -> Tensor:
    """Training objective of a batch, as a scalar tensor."""
    loss = ad.bce_loss(y_hat, y)
    if cfg.traj_loss_weight:
        mse = ad.mse_loss(traj_hat, traj_true)
        loss = ad.add(loss, ad.mul(cfg.traj_loss_weight, mse))
    return ad.add(loss, regularization(weights, cfg))


def _batch_loss(
    weights: Mapping[str, Tensor],
    batch: Batch,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
) -> Tensor:
    y_hat, offsets = forward_batch(batch, weights, model_cfg)
    return total_loss(y_hat, batch.labels, offsets, batch.offsets, weights, train_cfg)


def loss_and_gradients(
    params: ModelParams,
    batch: Batch,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss of ``batch`` and its gradient for every parameter.

    :raises NonFiniteError: if the loss is NaN or infinite.
    """
    weights = params.tensors(requires_grad=True)
    loss = _batch_loss(weights, batch, model_cfg, train_cfg)
    value = float(loss.value)
    if not np.isfinite(value):
        raise NonFiniteError(f"loss is {value}")
    ad.backward(loss, wrt=weights.values())
    grads = {
        name: t.grad if t.grad is not None else np.zeros_like(t.value)
        for name, t in weights.items()
    }
    return value, grads


def sgd_step(
    params: ModelParams, grads: Mapping[str, np.ndarray], lr: float
) -> ModelParams:
    """``θ′ = θ − lr · g`` for every parameter.

    Parameters without gradient are kept.

    :raises NonFiniteError: naming the first parameter with a NaN or
        infinite gradient.
    """
    if lr < 0:
        raise ParameterError(f"learning rate must be ≥ 0, got {lr}")
    updated = {}
    for name, value in params.items():
        if name not in grads:
            updated[name] = value
            continue
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != value.shape:
            raise ValidationError(
                f"gradient of shape {g.shape} for parameter of shape {value.shape}",
                name,
            )
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("non-finite gradient", name)
        updated[name] = value - lr * g
    return ModelParams(updated)


def _batches(
    dataset: Sequence[SceneSequence], order: Sequence[int], size: int
) -> list[list[SceneSequence]]:
    return [
        [dataset[i] for i in order[start : start + size]]
        for start in range(0, len(order), size)
    ]


def dataset_loss(
    params: ModelParams,
    dataset: Sequence[SceneSequence],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
) -> float:
    """Mean loss over ``dataset`` without gradient, weighted by batch size."""
    weights = params.tensors()
    loss = 0.0
    for chunk in _batches(dataset, range(len(dataset)), train_cfg.batch_size):
        batch = collate(chunk, model_cfg, ablate_signals=train_cfg.ablate_signals)
        value = _batch_loss(weights, batch, model_cfg, train_cfg).value
        loss += len(batch) * float(value)
    return loss / len(dataset)


def train(
    dataset: Sequence[SceneSequence],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    *,
    validation: Sequence[SceneSequence] = (),
    on_epoch: Callable[[EpochLog], None] | None = None,
) -> Checkpoint:
    """Train a freshly initialized network on ``dataset``.

    ``on_epoch`` is called with the loss log of each completed epoch. With a
    ``validation`` set, its loss is computed after every epoch.

    :raises ValidationError: if ``dataset`` is empty.
    """
    if not dataset:
        raise ValidationError("no scene to train on", "dataset")
    params = ModelParams.init(model_cfg, train_cfg.seed)
    rng = np.random.default_rng([train_cfg.seed, 1])
    lr = train_cfg.learning_rate
    logger.debug(
        "training %d parameters on %d scenes, lr=%g.", params.size, len(dataset), lr
    )
    history = []
    for epoch in range(1, train_cfg.epochs + 1):
        if train_cfg.shuffle:
            order = rng.permutation(len(dataset)).tolist()
        else:
            order = list(range(len(dataset)))
        running = 0.0
        for i, chunk in enumerate(_batches(dataset, order, train_cfg.batch_size)):
            batch = collate(chunk, model_cfg, ablate_signals=train_cfg.ablate_signals)
            loss, grads = loss_and_gradients(params, batch, model_cfg, train_cfg)
            logger.debug("epoch %d batch %d: loss %.6f.", epoch, i, loss)
            params = sgd_step(params, grads, lr)
            running += len(batch) * loss
        val_loss = None
        if validation:
            val_loss = dataset_loss(params, validation, model_cfg, train_cfg)
        log = EpochLog(epoch, running / len(dataset), val_loss)
        if val_loss is None:
            logger.info("Epoch %d: train loss %.6f.", epoch, log.train_loss)
        else:
            logger.info(
                "Epoch %d: train loss %.6f, validation loss %.6f.",
                epoch,
                log.train_loss,
                val_loss,
            )
        history.append(log)
        if on_epoch:
            on_epoch(log)
    return Checkpoint(params, model_cfg, train_cfg, train_cfg.epochs, history)


def predict_dataset(
    checkpoint: Checkpoint, dataset: Sequence[SceneSequence]
) -> tuple[np.ndarray, np.ndarray]:
    """Crossing probabilities ``[B]`` and future positions ``[B, Δt, 2]``."""
    config = checkpoint.config
    checkpoint.params.validate(config)
    weights = checkpoint.params.tensors()
    ablate = checkpoint.train_config.ablate_signals
    probabilities = []
    positions = []
    size = checkpoint.train_config.batch_size
    for chunk in _batches(dataset, range(len(dataset)), size):
        batch = collate(chunk, config, ablate_signals=ablate)
        y_hat, offsets = forward_batch(batch, weights, config)
        probabilities.append(y_hat.value)
        positions.append(
            to_positions(offsets.value, batch.last_centers, batch.image_dims)
        )
    return np.concatenate(probabilities), np.concatenate(positions)


def evaluate(checkpoint: Checkpoint, dataset: Sequence[SceneSequence]) -> MetricsReport:
    """Classification and displacement metrics of ``checkpoint`` on ``dataset``.

    :raises ShapeError: if scenes do not fit the checkpoint configuration.
    """
    if not dataset:
        raise ValidationError("no scene to evaluate", "dataset")
    probabilities, positions = predict_dataset(checkpoint, dataset)
    preds = (probabilities > checkpoint.config.threshold).astype(int).tolist()
    labels = [seq.label_crossing for seq in dataset]
    *_, counts = classification_metrics(preds, labels)
    truth = np.array([seq.label_future for seq in dataset], dtype=np.float64)
    return MetricsReport.from_counts(
        counts, ade(positions, truth), fde(positions, truth)
    )


def standstill_ade(
    dataset: Sequence[SceneSequence], *, crossing_only: bool = False
) -> float:
    """ADE of predicting that the target stays at its last observed center."""
    scenes = [s for s in dataset if s.label_crossing or not crossing_only]
    if not scenes:
        raise ValidationError("no scene to score", "dataset")
    truth = np.array([s.label_future for s in scenes], dtype=np.float64)
    last = np.array([s.last_center for s in scenes], dtype=np.float64)
    return ade(np.broadcast_to(last[:, None, :], truth.shape), truth)


def repeat_experiment(
    train_set: Sequence[SceneSequence],
    test_set: Sequence[SceneSequence],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    repeats: int,
    *,
    validation: Sequence[SceneSequence] = (),
) -> tuple[list[MetricsReport], MetricsReport]:
    """Train and evaluate ``repeats`` times with seeds ``seed``, ``seed + 1``…

    Returns the report of every run and their pooled mean.
    """
    if repeats < 1:
        raise ParameterError(f"repeats must be ≥ 1, got {repeats}")
    reports = []
    for run in range(repeats):
        cfg = replace(train_cfg, seed=train_cfg.seed + run)
        logger.info("Run %d/%d with seed %d.", run + 1, repeats, cfg.seed)
        checkpoint = train(train_set, model_cfg, cfg, validation=validation)
        reports.append(evaluate(checkpoint, test_set))
    return reports, mean_report(reports)


LOSS_LOG_COLUMNS = ("epoch", "train_loss", "val_loss")


def write_loss_log(history: Sequence[EpochLog], path: str | Path) -> None:
    """Append epoch losses to CSV file ``path``.

    The header line is written when the file does not exist yet. Losses are
    written with full precision; a missing validation loss is left empty.
    """
    path = Path(path)
    new = not path.exists()
    with path.open("a", encoding="utf-8", newline="") as fo:
        writer = csv.writer(fo, lineterminator="\n")
        if new:
            writer.writerow(LOSS_LOG_COLUMNS)
        for log in history:
            writer.writerow(
                [
                    log.epoch,
                    repr(log.train_loss),
                    "" if log.val_loss is None else repr(log.val_loss),
                ]
            )


def max_node_count(dataset: Sequence[SceneSequence]) -> int:
    return max(seq.node_count for seq in dataset)

