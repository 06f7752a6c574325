"""\
.. currentmodule:: pedintent.scene

Scene types and graph construction. A :class:`SceneSequence` is a short
observation of an urban scene: ``T`` frames of objects (pedestrians, traffic
lights, vehicles, crosswalks) around one target pedestrian. Graph
construction turns it into per-frame node features for the two streams of
the network and a per-frame normalized adjacency.

Node slots
----------

Objects are assigned to slots by their stable identifier. The target
pedestrian always takes slot 0; other objects follow in order of first
appearance. Slot count is fixed (padding slots carry zero features and a
false mask) so that every frame, and every scene of a batch, has the same
shape. An object missing from a frame is masked in that frame.

Class encoding
--------------

The class vector of a node is ``[kind one-hot (4) ‖ signal one-hot (3)]``.
Kind order is pedestrian, traffic light, vehicle, crosswalk. Signal order is
red, yellow, green; objects other than traffic lights have an all-zero
signal block.

>>> encode_class(SceneObject(0, ObjectKind.traffic_light, BoundingBox(0, 0, 1, 1),
...                          SignalState.red)).tolist()
[0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0]

Edges
-----

Each frame is a complete graph among its real nodes. Self loops are added
during normalization: ``Ã = A + I`` on real slots and
``Ã_N = D^-1/2 Ã D^-1/2``. A learned importance matrix, initialized to ones,
later modulates ``Ã_N`` elementwise. Temporal coupling is left to the
temporal message passing of the network, there are no temporal edges.


API Reference
-------------

.. autoclass:: ObjectKind
.. autoclass:: SignalState
.. autoclass:: BoundingBox
.. autoclass:: SceneObject
.. autoclass:: SceneSequence
.. autoclass:: AdjacencyStack
.. autoclass:: SceneGraph
.. autofunction:: encode_class
.. autofunction:: location_features
.. autofunction:: build_adjacency
.. autofunction:: normalize_adjacency
.. autofunction:: build_graph
.. autofunction:: assemble_streams
"""

from __future__ import annotations

import enum
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

CLASS_DIM = 7
LOCATION_DIM = 5
SIGNAL_BLOCK = slice(4, 7)
DEFAULT_FRAMES = 15


@enum.unique
class ObjectKind(enum.Enum):
    """Object class, in one-hot encoding order."""

    pedestrian = "pedestrian"
    traffic_light = "traffic_light"
    vehicle = "vehicle"
    crosswalk = "crosswalk"


@enum.unique
class SignalState(enum.Enum):
    """Traffic signal state, in one-hot encoding order."""

    red = "red"
    yellow = "yellow"
    green = "green"
    not_applicable = "n/a"


_KINDS = list(ObjectKind)
_SIGNALS = [SignalState.red, SignalState.yellow, SignalState.green]


@dataclass(frozen=True)
class BoundingBox:
    """Box corners in image pixels."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        if not all(np.isfinite([self.x1, self.y1, self.x2, self.y2])):
            raise ValidationError("coordinates must be finite", path="bbox")
        if not self.x1 < self.x2:
            raise ValidationError("x1 must be lower than x2", path="bbox")
        if not self.y1 < self.y2:
            raise ValidationError("y1 must be lower than y2", path="bbox")

    @property
    def center(self) -> tuple[float, float]:
        return (self.x1 + self.x2) / 2, (self.y1 + self.y2) / 2

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    def within(self, dims: tuple[float, float]) -> bool:
        width, height = dims
        return 0 <= self.x1 and 0 <= self.y1 and self.x2 <= width and self.y2 <= height


@dataclass(frozen=True)
class SceneObject:
    """One object of a frame.

    .. attribute:: appearance

        Grayscale image patch of the object, values in ``[0, 1]``.
    """

    id: int
    kind: ObjectKind
    bbox: BoundingBox
    signal: SignalState = SignalState.not_applicable
    appearance: np.ndarray = field(
        default_factory=lambda: np.zeros((0, 0)), compare=False, repr=False
    )

    def validate(self) -> None:
        is_light = self.kind is ObjectKind.traffic_light
        if is_light and self.signal is SignalState.not_applicable:
            raise ValidationError("traffic light without signal state", "signal")
        if not is_light and self.signal is not SignalState.not_applicable:
            raise ValidationError(
                f"{self.kind.value} cannot carry a signal state", "signal"
            )


@dataclass(frozen=True)
class SceneSequence:
    """Observed frames of a scene with the target pedestrian labels.

    .. attribute:: target_index

        Position of the target pedestrian in the object list of every frame.

    .. attribute:: label_future

        Target centers, in pixels, over the prediction horizon.
    """

    frames: tuple[tuple[SceneObject, ...], ...]
    image_dims: tuple[int, int]
    target_index: int
    label_crossing: int
    label_future: tuple[tuple[float, float], ...]

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def target(self) -> list[SceneObject]:
        return [objects[self.target_index] for objects in self.frames]

    @property
    def last_center(self) -> tuple[float, float]:
        return self.frames[-1][self.target_index].bbox.center

    @property
    def node_count(self) -> int:
        return len({o.id for objects in self.frames for o in objects})

    def validate(self) -> None:
        """Check scene invariants.

        :raises ValidationError: with the path of the first offending field.
        """
        width, height = self.image_dims
        if width <= 0 or height <= 0:
            raise ValidationError("image dimensions must be positive", "image_dims")
        if not self.frames:
            raise ValidationError("at least one frame is required", "frames")
        if self.label_crossing not in (0, 1):
            raise ValidationError("crossing label must be 0 or 1", "label.crossing")
        if not self.label_future:
            raise ValidationError("future trajectory is empty", "label.future")
        target_id = None
        for t, objects in enumerate(self.frames):
            ids = set()
            for n, obj in enumerate(objects):
                path = f"frames[{t}].objects[{n}]"
                try:
                    obj.validate()
                except ValidationError as e:
                    raise e.within(path)
                if not obj.bbox.within(self.image_dims):
                    raise ValidationError("box outside of image", f"{path}.bbox")
                if obj.id in ids:
                    raise ValidationError(f"duplicate id {obj.id}", f"{path}.id")
                ids.add(obj.id)
            if not 0 <= self.target_index < len(objects):
                raise ValidationError(
                    "target pedestrian missing from frame", f"frames[{t}]"
                )
            target = objects[self.target_index]
            path = f"frames[{t}].objects[{self.target_index}]"
            if target.kind is not ObjectKind.pedestrian:
                raise ValidationError("target must be a pedestrian", f"{path}.kind")
            if target_id is None:
                target_id = target.id
            elif target.id != target_id:
                raise ValidationError("target identity changes", f"{path}.id")


@dataclass(frozen=True)
class AdjacencyStack:
    """Per-frame normalized adjacency of a scene.

    .. attribute:: normalized

        ``T × N × N`` array of ``Ã_N`` matrices.

    .. attribute:: mask

        ``T × N`` booleans, true for real nodes.

    .. attribute:: importance

        ``N × N`` importance matrix at construction, all ones. The trained
        importance lives with the model parameters.
    """

    normalized: np.ndarray
    mask: np.ndarray
    importance: np.ndarray


@dataclass(frozen=True)
class SceneGraph:
    """Graph inputs of a scene, before appearance encoding.

    ``patch_index[t, n]`` points into ``patches`` (``-1`` for masked slots).
    Identical patches are stored once.
    """

    classes: np.ndarray
    locations: np.ndarray
    adjacency: AdjacencyStack
    patches: list[np.ndarray]
    patch_index: np.ndarray

    @property
    def mask(self) -> np.ndarray:
        return self.adjacency.mask


def encode_class(obj: SceneObject) -> np.ndarray:
    """Class vector ``[kind one-hot ‖ signal one-hot]`` of length 7.

    :raises ValidationError: on a signal state that does not fit the kind.
    """
    obj.validate()
    vector = np.zeros(CLASS_DIM)
    vector[_KINDS.index(obj.kind)] = 1.0
    if obj.signal is not SignalState.not_applicable:
        vector[4 + _SIGNALS.index(obj.signal)] = 1.0
    return vector


def location_features(bbox: BoundingBox, dims: tuple[float, float]) -> np.ndarray:
    """Normalized ``[cx, cy, w, h, area]`` of a box.

    Box size stands for proximity to the camera: a pedestrian walking toward
    the vehicle grows.

    >>> location_features(BoundingBox(10, 10, 30, 50), (100, 100)).tolist()
    [0.2, 0.3, 0.2, 0.4, 0.08]
    """
    if not bbox.within(dims):
        raise ValidationError("box outside of image", "bbox")
    width, height = dims
    cx, cy = bbox.center
    return np.array(
        [
            cx / width,
            cy / height,
            bbox.width / width,
            bbox.height / height,
            (bbox.width * bbox.height) / (width * height),
        ]
    )


def build_adjacency(mask: Sequence[bool] | np.ndarray) -> np.ndarray:
    """Complete graph among real slots, without self loops.

    >>> build_adjacency([True, True, False]).tolist()
    [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]
    """
    real = np.asarray(mask, dtype=bool)
    adjacency = np.outer(real, real).astype(np.float64)
    np.fill_diagonal(adjacency, 0.0)
    return adjacency


def normalize_adjacency(
    adjacency: np.ndarray, mask: Sequence[bool] | np.ndarray | None = None
) -> np.ndarray:
    """Symmetric normalization ``D^-1/2 (A + I) D^-1/2`` over real slots.

    Masked slots keep all-zero rows and columns.

    >>> normalize_adjacency(np.array([[0.0, 1.0], [1.0, 0.0]])).tolist()
    [[0.5, 0.5], [0.5, 0.5]]

    :raises ValidationError: on an asymmetric or negative matrix.
    """
    a = np.asarray(adjacency, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"adjacency must be square, got {a.shape}")
    if not np.array_equal(a, a.T):
        raise ValidationError("adjacency must be symmetric")
    if np.any(a < 0):
        raise ValidationError("adjacency must be nonnegative")
    real = np.ones(len(a), dtype=bool) if mask is None else np.asarray(mask, bool)
    a = a * np.outer(real, real)
    a = a + np.diag(real.astype(np.float64))
    # Masked rows are all zero, any positive degree keeps them so.
    degree = np.where(real, a.sum(axis=1), 1.0)
    return a / np.sqrt(np.outer(degree, degree))


def _slot_order(seq: SceneSequence) -> list[int]:
    target_id = seq.frames[0][seq.target_index].id
    order = [target_id]
    for objects in seq.frames:
        for obj in objects:
            if obj.id not in order:
                order.append(obj.id)
    return order


def build_graph(
    seq: SceneSequence,
    n_slots: int | None = None,
    *,
    ablate_signals: bool = False,
) -> SceneGraph:
    """Slot layout, class and location features, adjacency of ``seq``.

    With ``ablate_signals``, the signal block of every class vector is
    zeroed.

    :raises ValidationError: if the scene is invalid or has more objects
        than ``n_slots``.
    """
    seq.validate()
    order = _slot_order(seq)
    n_slots = len(order) if n_slots is None else n_slots
    if len(order) > n_slots:
        raise ValidationError(
            f"scene has {len(order)} objects, more than {n_slots} node slots",
            "frames",
        )
    slots = {obj_id: n for n, obj_id in enumerate(order)}
    frames = len(seq.frames)
    classes = np.zeros((frames, n_slots, CLASS_DIM))
    locations = np.zeros((frames, n_slots, LOCATION_DIM))
    mask = np.zeros((frames, n_slots), dtype=bool)
    patch_index = np.full((frames, n_slots), -1, dtype=np.intp)
    patches: list[np.ndarray] = []
    known: dict[int, int] = {}
    for t, objects in enumerate(seq.frames):
        for obj in objects:
            n = slots[obj.id]
            mask[t, n] = True
            classes[t, n] = encode_class(obj)
            locations[t, n] = location_features(obj.bbox, seq.image_dims)
            # Synthetic patches are shared across frames, dedupe by identity.
            key = id(obj.appearance)
            if key not in known:
                known[key] = len(patches)
                patches.append(obj.appearance)
            patch_index[t, n] = known[key]
    if ablate_signals:
        classes[..., SIGNAL_BLOCK] = 0.0
    normalized = np.stack(
        [normalize_adjacency(build_adjacency(m), m) for m in mask]
    )
    adjacency = AdjacencyStack(normalized, mask, np.ones((n_slots, n_slots)))
    return SceneGraph(classes, locations, adjacency, patches, patch_index)


@dataclass(frozen=True)
class Streams:
    image_class: np.ndarray
    location_class: np.ndarray
    adjacency: AdjacencyStack


def assemble_streams(
    seq: SceneSequence,
    appearance_dim: int,
    encode: Callable[[np.ndarray], np.ndarray],
    n_slots: int | None = None,
    *,
    ablate_signals: bool = False,
) -> Streams:
    """Node features of both streams.

    ``image_class[t, n] = [appearance ‖ class]`` and
    ``location_class[t, n] = [location ‖ class]``; padded slots are zero
    rows. ``encode`` maps an appearance patch to its ``appearance_dim``
    feature vector.
    """
    graph = build_graph(seq, n_slots, ablate_signals=ablate_signals)
    encoded = np.zeros((len(graph.patches) + 1, appearance_dim))
    for i, patch in enumerate(graph.patches):
        vector = np.asarray(encode(patch), dtype=np.float64)
        if vector.shape != (appearance_dim,):
            raise ValidationError(
                f"appearance encoded to shape {vector.shape},"
                f" expected ({appearance_dim},)",
                "appearance",
            )
        encoded[i] = vector
    appearance = encoded[graph.patch_index]
    return Streams(
        np.concatenate([appearance, graph.classes], axis=-1),
        np.concatenate([graph.locations, graph.classes], axis=-1),
        graph.adjacency,
    )
