"""\
.. currentmodule:: pedintent.net

The traffic-aware spatio-temporal graph network.

Two streams process the scene graph in parallel. The image-class stream
starts from ``[appearance ‖ class]`` node features, the appearance being
encoded from object patches by a small convolutional encoder. The
location-class stream starts from ``[location ‖ class]``. Each stream stacks
ST-Graph layers, each made of:

1. feature convolution: per-node linear map and ReLU (``1 × 1`` convolution);
2. spatial message passing: ``ReLU((W_imp ⊙ Ã_N) · H · W)`` per frame;
3. temporal message passing: causal convolution over frames and ReLU.

The target pedestrian rows (slot 0) of both streams are concatenated frame by
frame and unrolled through an LSTM. Its final state goes through a one
hidden layer network and two heads: the crossing probability
``σ(w · h + b)`` and ``Δt`` future offsets ``W_o · h`` from the last observed
target center, in image-size units.

Padded slots stay zero through every layer: biases and temporal outputs are
masked to real slots, and normalized adjacency rows of padded slots are zero.


Parameters
----------

Parameters are plain named numpy arrays gathered in :class:`ModelParams`.
Names are dotted paths such as ``ic.0.smp.weight``; weight matrices are laid
out ``[fan_in, fan_out]`` and multiply row vectors.

>>> specs = param_specs(ModelConfig())
>>> specs["ic.0.fc.weight"].shape
(15, 16)
>>> specs["trajectory.weight"].shape
(32, 30)


API Reference
-------------

.. autoclass:: ModelConfig
.. autoclass:: ModelParams
.. autoclass:: Batch
.. autofunction:: collate
.. autofunction:: appearance_encoder
.. autofunction:: feature_convolution
.. autofunction:: spatial_message_pass
.. autofunction:: temporal_message_pass
.. autofunction:: st_graph_layer
.. autofunction:: fuse_streams
.. autofunction:: temporal_encoder
.. autofunction:: predict_intention
.. autofunction:: predict_trajectory
.. autofunction:: forward_batch
.. autofunction:: forward
"""

from __future__ import annotations

import logging
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import asdict, dataclass, fields
from typing import Any, Callable, NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from ._helpers import config_from_dict
from .errors import ParameterError, ShapeError, ValidationError
from .scene import CLASS_DIM, LOCATION_DIM, SceneSequence, build_graph

logger = logging.getLogger(__name__)

Weights = Mapping[str, Tensor]


@dataclass(frozen=True)
class ModelConfig:
    """Network dimensions.

    ``hidden_dims`` gives the output width of each ST-Graph layer, for both
    streams; it must have ``st_layers_per_stream`` entries.
    """

    appearance_dim: int = 8
    patch_size: int = 32
    encoder_channels: tuple[int, ...] = (4, 8)
    st_layers_per_stream: int = 2
    hidden_dims: tuple[int, ...] = (16, 16)
    tmp_kernel: int = 3
    lstm_hidden: int = 32
    fcn_hidden: int = 32
    horizon: int = 15
    max_nodes: int = 8
    threshold: float = 0.5

    def __post_init__(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            values = value if isinstance(value, tuple) else (value,)
            if not values or any(v <= 0 for v in values):
                raise ParameterError(f"{f.name} must be positive, got {value!r}")
        if len(self.hidden_dims) != self.st_layers_per_stream:
            raise ParameterError(
                f"{self.st_layers_per_stream} ST-Graph layers"
                f" but {len(self.hidden_dims)} hidden dimensions"
            )
        if len(self.encoder_channels) != 2:
            raise ParameterError("appearance encoder has exactly two stages")
        if self.encoder_grid < 1:
            raise ParameterError(f"patch size {self.patch_size} is too small")
        if not 0 < self.threshold < 1:
            raise ParameterError(f"threshold must be in (0, 1), got {self.threshold}")

    @property
    def encoder_grid(self) -> int:
        # Side of the feature map after two conv3x3 + pool2x2 stages.
        return ((self.patch_size - 2) // 2 - 2) // 2

    @property
    def stream_input_dims(self) -> dict[str, int]:
        return {
            "ic": self.appearance_dim + CLASS_DIM,
            "lc": LOCATION_DIM + CLASS_DIM,
        }

    def as_dict(self) -> dict[str, Any]:
        return {
            k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ModelConfig:
        return config_from_dict(cls, data, "config")


class ParamSpec(NamedTuple):
    shape: tuple[int, ...]
    fan_in: int
    group: str
    init: str = "uniform"


def param_specs(config: ModelConfig) -> dict[str, ParamSpec]:
    """Name, shape, initialization and regularization group of parameters."""
    c1, c2 = config.encoder_channels
    flat = c2 * config.encoder_grid**2
    dim = config.appearance_dim
    specs = {
        "encoder.conv1.weight": ParamSpec((c1, 1, 3, 3), 9, "encoder", "relu"),
        "encoder.conv1.bias": ParamSpec((c1,), 9, "encoder", "zeros"),
        "encoder.conv2.weight": ParamSpec(
            (c2, c1, 3, 3), 9 * c1, "encoder", "relu"
        ),
        "encoder.conv2.bias": ParamSpec((c2,), 9 * c1, "encoder", "zeros"),
        "encoder.proj.weight": ParamSpec((flat, dim), flat, "encoder"),
        "encoder.proj.bias": ParamSpec((dim,), flat, "encoder", "zeros"),
    }
    k = config.tmp_kernel
    for stream, width in config.stream_input_dims.items():
        for layer, out in enumerate(config.hidden_dims):
            prefix = f"{stream}.{layer}"
            specs[f"{prefix}.fc.weight"] = ParamSpec(
                (width, out), width, stream, "relu"
            )
            specs[f"{prefix}.fc.bias"] = ParamSpec((out,), width, stream, "zeros")
            specs[f"{prefix}.smp.weight"] = ParamSpec(
                (out, out), out, stream, "relu"
            )
            specs[f"{prefix}.tmp.weight"] = ParamSpec(
                (k, out, out), k * out, stream, "relu"
            )
            width = out
    n = config.max_nodes
    specs["importance"] = ParamSpec((n, n), n, "importance", "ones")
    fused = 2 * config.hidden_dims[-1]
    d_h = config.lstm_hidden
    specs["lstm.weight"] = ParamSpec((fused + d_h, 4 * d_h), fused + d_h, "lstm")
    specs["lstm.bias"] = ParamSpec((4 * d_h,), fused + d_h, "lstm", "zeros")
    hidden = config.fcn_hidden
    specs["fcn.weight"] = ParamSpec((d_h, hidden), d_h, "fcn", "relu")
    specs["fcn.bias"] = ParamSpec((hidden,), d_h, "fcn", "zeros")
    specs["intention.weight"] = ParamSpec((hidden, 1), hidden, "head")
    specs["intention.bias"] = ParamSpec((1,), hidden, "head", "zeros")
    specs["trajectory.weight"] = ParamSpec((hidden, 2 * config.horizon), hidden, "head")
    return specs


class ModelParams(Mapping[str, np.ndarray]):
    """Named parameter arrays of the network.

    Arrays are read-only: an update builds a new :class:`ModelParams`.
    Equality is bit-exact.

    .. automethod:: init
    .. automethod:: zeros
    .. automethod:: validate
    .. automethod:: tensors
    """

    def __init__(self, values: Mapping[str, np.ndarray]) -> None:
        self._values: dict[str, np.ndarray] = {}
        for name, value in values.items():
            array = np.array(value, dtype=np.float64)
            array.setflags(write=False)
            self._values[name] = array

    def __getitem__(self, name: str) -> np.ndarray:
        return self._values[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def __repr__(self) -> str:
        return f"<{self.__class__.__name__} {len(self)} arrays, {self.size} values>"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ModelParams):
            return NotImplemented
        return list(self) == list(other) and all(
            self[k].shape == other[k].shape and self[k].tobytes() == other[k].tobytes()
            for k in self
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def size(self) -> int:
        return sum(v.size for v in self._values.values())

    @classmethod
    def init(cls, config: ModelConfig, seed: int) -> ModelParams:
        """Seeded initialization, uniform in ``±1/√fan_in``.

        Weights feeding a ReLU are drawn in ``±√(6/fan_in)`` instead, which
        keeps activations at the same scale from layer to layer. Biases start
        at zero, the importance matrix at ones.
        """
        rng = np.random.default_rng(seed)
        values = {}
        for name, spec in param_specs(config).items():
            if spec.init == "zeros":
                values[name] = np.zeros(spec.shape)
            elif spec.init == "ones":
                values[name] = np.ones(spec.shape)
            elif spec.init == "relu":
                bound = np.sqrt(6.0 / spec.fan_in)
                values[name] = rng.uniform(-bound, bound, spec.shape)
            else:
                bound = 1.0 / np.sqrt(spec.fan_in)
                values[name] = rng.uniform(-bound, bound, spec.shape)
        return cls(values)

    @classmethod
    def zeros(cls, config: ModelConfig) -> ModelParams:
        return cls({n: np.zeros(s.shape) for n, s in param_specs(config).items()})

    def validate(self, config: ModelConfig) -> None:
        """Check names and shapes against ``config``.

        :raises ShapeError: naming the first offending parameter.
        """
        specs = param_specs(config)
        for name in self:
            if name not in specs:
                raise ShapeError(f"unexpected parameter {name!r}")
        for name, spec in specs.items():
            if name not in self:
                raise ShapeError(f"missing parameter {name!r}")
            if self[name].shape != spec.shape:
                raise ShapeError(
                    f"parameter {name!r} has shape {self[name].shape},"
                    f" expected {spec.shape}"
                )
            if not np.all(np.isfinite(self[name])):
                raise ShapeError(f"parameter {name!r} has non-finite values")

    def tensors(self, requires_grad: bool = False) -> dict[str, Tensor]:
        """Leaf tensors of the parameters.

        Trainable tensors hold writable copies, the others share the
        read-only arrays.
        """
        return {
            name: Tensor(
                value.copy() if requires_grad else value,
                requires_grad=requires_grad,
                name=name,
            )
            for name, value in self._values.items()
        }

    def replace(self, **updates: np.ndarray) -> ModelParams:
        return ModelParams({**self._values, **updates})

    def as_dict(self) -> dict[str, np.ndarray]:
        return dict(self._values)


# Network operations.


def _linear(x: Tensor, weight: Tensor) -> Tensor:
    if x.value.ndim == 1:
        return ad.reshape(ad.matmul(ad.reshape(x, (1, -1)), weight), weight.shape[1:])
    return ad.matmul(x, weight)


def appearance_encoder(
    patches: Tensor | np.ndarray, weights: Weights, config: ModelConfig
) -> Tensor:
    """Encode grayscale patches into appearance vectors.

    Two stages of 3×3 convolution, ReLU and 2×2 mean pooling, then a linear
    projection to ``appearance_dim``. ``patches`` is ``[P, S, S]`` (or a
    single ``[S, S]`` patch) with values in ``[0, 1]``.

    :raises ShapeError: if the patch side is not ``config.patch_size``.
    """
    x = ad.as_tensor(patches)
    single = x.value.ndim == 2
    size = config.patch_size
    if x.shape[-2:] != (size, size) or x.value.ndim not in (2, 3):
        raise ShapeError(f"patches must be {size}×{size}, got shape {x.shape}")
    if x.value.size and (x.value.min() < 0 or x.value.max() > 1):
        raise ValidationError("patch values must be within [0, 1]", "appearance")
    x = ad.reshape(x, (-1, 1, size, size))
    for stage in ("conv1", "conv2"):
        bias = weights[f"encoder.{stage}.bias"]
        x = ad.conv2d(x, weights[f"encoder.{stage}.weight"])
        x = ad.relu(ad.add(x, ad.reshape(bias, (1, -1, 1, 1))))
        x = ad.mean_pool2d(x, 2)
    x = ad.reshape(x, (x.shape[0], -1))
    out = ad.matmul(x, weights["encoder.proj.weight"])
    out = ad.add(out, weights["encoder.proj.bias"])
    return ad.reshape(out, (config.appearance_dim,)) if single else out


def patch_encoder(
    params: ModelParams, config: ModelConfig
) -> Callable[[np.ndarray], np.ndarray]:
    """Numpy callable encoding one patch, for :func:`scene.assemble_streams`."""
    weights = params.tensors()

    def encode(patch: np.ndarray) -> np.ndarray:
        return appearance_encoder(patch, weights, config).value

    return encode


def _real(mask: np.ndarray | None, x: Tensor) -> np.ndarray:
    if mask is None:
        return np.ones(x.shape[:-1] + (1,))
    return np.asarray(mask, dtype=np.float64)[..., None]


def feature_convolution(
    x: Tensor, weight: Tensor, bias: Tensor, mask: np.ndarray | None = None
) -> Tensor:
    """Per-node linear map and ReLU; the bias only reaches real slots."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"features {x.shape} do not match weight {weight.shape}")
    return ad.relu(ad.add(ad.matmul(x, weight), ad.mul(_real(mask, x), bias)))


def spatial_message_pass(
    x: Tensor,
    normalized: np.ndarray,
    weight: Tensor,
    importance: Tensor | None = None,
) -> Tensor:
    """``ReLU((W_imp ⊙ Ã_N[t]) · H[t] · W)`` for every frame ``t``.

    ``x`` is ``[..., T, N, d]`` and ``normalized`` ``[..., T, N, N]``.
    Without ``importance`` the plain normalized adjacency is used.
    """
    if normalized.shape[:-1] != x.shape[:-1] or normalized.shape[-1] != x.shape[-2]:
        raise ShapeError(
            f"adjacency {normalized.shape} does not match node features {x.shape}"
        )
    adjacency: Tensor = ad.as_tensor(normalized)
    if importance is not None:
        adjacency = ad.mul(adjacency, importance)
    return ad.relu(ad.matmul(ad.matmul(adjacency, x), weight))


def temporal_message_pass(
    x: Tensor, kernel: Tensor, k: int, mask: np.ndarray | None = None
) -> Tensor:
    """Causal convolution over frames for every node, then ReLU.

    ``x`` is ``[..., T, N, d]`` and ``kernel`` ``[k, d', d]``. Frame ``t``
    of the output only depends on frames ``t - k + 1`` to ``t``.
    """
    nd = x.value.ndim
    lead = list(range(nd - 3))
    to_channels = lead + [nd - 2, nd - 1, nd - 3]
    y = ad.conv1d_time(ad.transpose(x, to_channels), kernel, k)
    y = ad.transpose(y, lead + [nd - 1, nd - 3, nd - 2])
    return ad.mul(ad.relu(y), _real(mask, y))


def st_graph_layer(
    x: Tensor,
    normalized: np.ndarray,
    weights: Weights,
    prefix: str,
    config: ModelConfig,
    mask: np.ndarray | None = None,
    importance: Tensor | None = None,
) -> Tensor:
    """Feature convolution, spatial then temporal message passing."""
    x = feature_convolution(
        x, weights[f"{prefix}.fc.weight"], weights[f"{prefix}.fc.bias"], mask
    )
    x = spatial_message_pass(x, normalized, weights[f"{prefix}.smp.weight"], importance)
    return temporal_message_pass(
        x, weights[f"{prefix}.tmp.weight"], config.tmp_kernel, mask
    )


def run_stream(
    x: Tensor,
    stream: str,
    normalized: np.ndarray,
    mask: np.ndarray,
    weights: Weights,
    config: ModelConfig,
) -> Tensor:
    importance = weights.get("importance")
    for layer in range(config.st_layers_per_stream):
        x = st_graph_layer(
            x, normalized, weights, f"{stream}.{layer}", config, mask, importance
        )
    return x


def fuse_streams(
    h_ic: Tensor,
    h_lc: Tensor,
    mask: np.ndarray | None = None,
    target_index: int = 0,
) -> Tensor:
    """Concatenate the target rows of both streams, frame by frame.

    :raises ValidationError: if the target slot is masked in some frame.
    """
    if h_ic.shape[:-1] != h_lc.shape[:-1]:
        raise ShapeError(f"cannot fuse streams of shapes {h_ic.shape} and {h_lc.shape}")
    if mask is not None and not np.all(np.asarray(mask)[..., target_index]):
        raise ValidationError("target pedestrian is masked in some frame", "mask")
    key = (..., target_index, slice(None))
    return ad.concat([ad.index(h_ic, key), ad.index(h_lc, key)], axis=-1)


def temporal_encoder(fused: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Unroll the LSTM over frames from a zero state; return the last ``h``.

    ``fused`` is ``[..., T, d]``.
    """
    frames = fused.shape[-2]
    if frames < 1:
        raise ShapeError("temporal encoder needs at least one frame")
    d_h = bias.shape[0] // 4
    state = fused.shape[:-2] + (d_h,)
    h: Tensor = Tensor(np.zeros(state))
    c: Tensor = Tensor(np.zeros(state))
    for t in range(frames):
        x_t = ad.index(fused, (..., t, slice(None)))
        h, c = ad.lstm_cell(x_t, h, c, weight, bias)
    return h


def fully_connected(h: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return ad.relu(ad.add(_linear(h, weight), bias))


def predict_intention(h: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Crossing probability ``σ(w · h + b)``, one per leading index."""
    logit = ad.add(_linear(h, weight), bias)
    return ad.sigmoid(ad.reshape(logit, h.shape[:-1]))


def predict_trajectory(h: Tensor, weight: Tensor, horizon: int) -> Tensor:
    """``W_o · h`` reshaped to ``horizon`` (x, y) offsets."""
    if weight.shape[1] != 2 * horizon:
        raise ShapeError(f"trajectory weight {weight.shape} for horizon {horizon}")
    return ad.reshape(_linear(h, weight), h.shape[:-1] + (horizon, 2))


# Batching and full pipeline.


@dataclass(frozen=True)
class Batch:
    """Stacked network inputs and targets of several scenes.

    ``offsets`` are future target positions relative to the last observed
    center, divided by image width and height.
    """

    patches: np.ndarray
    patch_index: np.ndarray
    classes: np.ndarray
    locations: np.ndarray
    normalized: np.ndarray
    mask: np.ndarray
    labels: np.ndarray
    offsets: np.ndarray
    last_centers: np.ndarray
    image_dims: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)


def collate(
    sequences: Sequence[SceneSequence],
    config: ModelConfig,
    *,
    ablate_signals: bool = False,
) -> Batch:
    """Build a :class:`Batch`, padding every scene to ``config.max_nodes``.

    :raises ShapeError: on scenes that do not fit ``config`` or each other.
    """
    if not sequences:
        raise ShapeError("cannot collate an empty batch")
    frames = len(sequences[0])
    size = config.patch_size
    graphs = []
    for i, seq in enumerate(sequences):
        if len(seq) != frames:
            raise ShapeError(f"scene {i} has {len(seq)} frames, expected {frames}")
        if len(seq.label_future) != config.horizon:
            raise ShapeError(
                f"scene {i} has a {len(seq.label_future)} frames future,"
                f" model horizon is {config.horizon}"
            )
        if seq.node_count > config.max_nodes:
            raise ShapeError(
                f"scene {i} has {seq.node_count} nodes, model has"
                f" {config.max_nodes} slots"
            )
        graphs.append(build_graph(seq, config.max_nodes, ablate_signals=ablate_signals))

    patches: list[np.ndarray] = []
    indexes = []
    for i, graph in enumerate(graphs):
        for patch in graph.patches:
            if np.shape(patch) != (size, size):
                raise ShapeError(
                    f"scene {i} has a patch of shape {np.shape(patch)},"
                    f" model expects {size}×{size}"
                )
        index = graph.patch_index
        indexes.append(np.where(index < 0, -1, index + len(patches)))
        patches.extend(graph.patches)

    dims = np.array([seq.image_dims for seq in sequences], dtype=np.float64)
    last = np.array([seq.last_center for seq in sequences], dtype=np.float64)
    future = np.array([seq.label_future for seq in sequences], dtype=np.float64)
    return Batch(
        patches=np.stack(patches).astype(np.float64),
        patch_index=np.stack(indexes),
        classes=np.stack([g.classes for g in graphs]),
        locations=np.stack([g.locations for g in graphs]),
        normalized=np.stack([g.adjacency.normalized for g in graphs]),
        mask=np.stack([g.mask for g in graphs]),
        labels=np.array([seq.label_crossing for seq in sequences], dtype=np.float64),
        offsets=(future - last[:, None, :]) / dims[:, None, :],
        last_centers=last,
        image_dims=dims,
    )


def forward_batch(
    batch: Batch, weights: Weights, config: ModelConfig
) -> tuple[Tensor, Tensor]:
    """Crossing probabilities ``[B]`` and normalized offsets ``[B, Δt, 2]``."""
    encoded = appearance_encoder(batch.patches, weights, config)
    appearance = ad.gather(encoded, batch.patch_index)
    x_ic = ad.concat([appearance, batch.classes], axis=-1)
    x_lc = Tensor(np.concatenate([batch.locations, batch.classes], axis=-1))
    h_ic = run_stream(x_ic, "ic", batch.normalized, batch.mask, weights, config)
    h_lc = run_stream(x_lc, "lc", batch.normalized, batch.mask, weights, config)
    fused = fuse_streams(h_ic, h_lc, batch.mask)
    h = temporal_encoder(fused, weights["lstm.weight"], weights["lstm.bias"])
    h = fully_connected(h, weights["fcn.weight"], weights["fcn.bias"])
    probability = predict_intention(
        h, weights["intention.weight"], weights["intention.bias"]
    )
    offsets = predict_trajectory(h, weights["trajectory.weight"], config.horizon)
    return probability, offsets


def to_positions(
    offsets: np.ndarray, last_centers: np.ndarray, image_dims: np.ndarray
) -> np.ndarray:
    """Absolute pixel positions from normalized offsets."""
    return last_centers[..., None, :] + offsets * image_dims[..., None, :]


class Prediction(NamedTuple):
    probability: float
    trajectory: np.ndarray


def forward(
    seq: SceneSequence,
    params: ModelParams,
    config: ModelConfig,
    *,
    ablate_signals: bool = False,
) -> Prediction:
    """Crossing probability and future pixel positions of one scene."""
    batch = collate([seq], config, ablate_signals=ablate_signals)
    probability, offsets = forward_batch(batch, params.tensors(), config)
    positions = to_positions(offsets.value, batch.last_centers, batch.image_dims)
    return Prediction(float(probability.value[0]), positions[0])
