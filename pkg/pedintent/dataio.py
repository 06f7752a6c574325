"""\
.. currentmodule:: pedintent.dataio

JSON file formats of scenes, datasets and checkpoints.

Every document carries a ``version`` field; only version 1 is known. Loading
is strict: unknown or missing fields, wrong types and scene invariant
violations raise :class:`~pedintent.errors.ValidationError` with the path of
the offending field, e.g. ``frames[3].objects[1].bbox``. Unparseable files
and unsupported versions raise :class:`~pedintent.errors.FormatError`.

Files are written to a temporary sibling then renamed, so a reader never
sees a partial file.

Scene file
----------

.. code:: json

    {"version": 1, "image_dims": [1920, 1080], "target_index": 0,
     "frames": [{"objects": [{"id": 0, "kind": "pedestrian",
                              "bbox": [900.5, 700.0, 940.5, 800.0],
                              "signal": "n/a", "appearance": [[0, 1], [1, 0]]}]}],
     "label": {"crossing": 1, "future": [[920.5, 750.0]]}}

``kind`` is one of ``pedestrian``, ``traffic_light``, ``vehicle``,
``crosswalk``; ``signal`` is ``red``, ``yellow``, ``green`` for traffic
lights and ``n/a`` otherwise. ``appearance`` is a square grayscale patch with
values in ``[0, 1]``.

Checkpoint file
---------------

.. code:: json

    {"version": 1, "config": {...}, "train_config": {...},
     "params": {"lstm.bias": {"shape": [128], "values": [0.0, ...]}},
     "epoch": 30}

Parameter values are written as the shortest decimal that reads back to the
same double, never more than 17 significant digits, so that loading a saved
checkpoint gives bit-identical parameters. Values that need fewer digits are
not padded to 17.

Dataset directory
-----------------

A dataset is a directory of scene files ``scene_00000.json``… and a
``manifest.json`` listing them with their split membership:

.. code:: json

    {"version": 1, "files": ["scene_00000.json", ...],
     "splits": {"train": [...], "val": [...], "test": [...]}}


API Reference
-------------

.. autofunction:: save_scene
.. autofunction:: load_scene
.. autofunction:: scene_to_dict
.. autofunction:: scene_from_dict
.. autofunction:: save_checkpoint
.. autofunction:: load_checkpoint
.. autofunction:: split_indices
.. autofunction:: save_dataset
.. autofunction:: load_manifest
.. autofunction:: load_dataset
"""

from __future__ import annotations

import json
import logging
from collections.abc import Collection, Sequence
from pathlib import Path
from typing import Any

import numpy as np

from ._helpers import atomic_write, open_or_return
from .errors import FormatError, ShapeError, ValidationError
from .net import ModelConfig, ModelParams
from .scene import BoundingBox, ObjectKind, SceneObject, SceneSequence, SignalState
from .trainer import Checkpoint, TrainConfig

logger = logging.getLogger(__name__)

VERSION = 1
MANIFEST = "manifest.json"
SPLITS = ("train", "val", "test")


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _object(
    doc: Any, path: str, required: Collection[str], optional: Collection[str] = ()
) -> dict[str, Any]:
    if not isinstance(doc, dict):
        raise ValidationError("expected an object", path)
    for key in doc:
        if key not in required and key not in optional:
            raise ValidationError("unknown field", _join(path, key))
    for key in required:
        if key not in doc:
            raise ValidationError("missing field", _join(path, key))
    return doc


def _mapping(doc: Any, path: str) -> dict[str, Any]:
    if not isinstance(doc, dict):
        raise ValidationError("expected an object", path)
    return doc


def _list(doc: Any, path: str) -> list[Any]:
    if not isinstance(doc, list):
        raise ValidationError("expected a list", path)
    return doc


def _integer(doc: Any, path: str) -> int:
    if isinstance(doc, bool) or not isinstance(doc, int):
        raise ValidationError("expected an integer", path)
    return doc


def _numbers(doc: Any, path: str) -> np.ndarray:
    """Nested lists of numbers as a float array."""
    try:
        array = np.array(doc, dtype=np.float64)
    except (TypeError, ValueError):
        raise ValidationError("expected numbers", path)
    if not np.all(np.isfinite(array)):
        raise ValidationError("numbers must be finite", path)
    return array


def _check_version(doc: Any, path: str = "") -> None:
    if not isinstance(doc, dict) or "version" not in doc:
        raise FormatError("missing version field", _join(path, "version"))
    if doc["version"] != VERSION:
        raise FormatError(
            f"unsupported version {doc['version']!r}", _join(path, "version")
        )


def _compact(array: np.ndarray) -> list[Any]:
    # Binary textures are written as integers.
    if np.array_equal(array, np.round(array)):
        return array.astype(np.int64).tolist()  # type: ignore[no-any-return]
    return array.tolist()  # type: ignore[no-any-return]


def _read_json(fo: str | Path, what: str) -> Any:
    with open_or_return(fo) as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise FormatError(f"invalid {what} file {fo}: {e}")


def _write_json(doc: Any, path: str | Path, *, indent: int | None = None) -> None:
    separators = (",", ":") if indent is None else (",", ": ")
    with atomic_write(path) as fo:
        json.dump(doc, fo, indent=indent, separators=separators, allow_nan=False)
        fo.write("\n")


# Scenes.


def _object_to_dict(
    obj: SceneObject, previous: dict[int, np.ndarray]
) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "id": obj.id,
        "kind": obj.kind.value,
        "bbox": obj.bbox.as_list(),
        "signal": obj.signal.value,
    }
    appearance = np.asarray(obj.appearance)
    last = previous.get(obj.id)
    if last is None or not np.array_equal(last, appearance):
        doc["appearance"] = _compact(appearance)
        previous[obj.id] = appearance
    return doc


def scene_to_dict(seq: SceneSequence) -> dict[str, Any]:
    """JSON document of a scene.

    The appearance of an object is omitted when it is the same as in the
    previous frame holding the object.
    """
    previous: dict[int, np.ndarray] = {}
    return {
        "version": VERSION,
        "image_dims": list(seq.image_dims),
        "target_index": seq.target_index,
        "frames": [
            {"objects": [_object_to_dict(obj, previous) for obj in objects]}
            for objects in seq.frames
        ],
        "label": {
            "crossing": seq.label_crossing,
            "future": [list(point) for point in seq.label_future],
        },
    }


class _PatchCache:
    # Identical patches load as one shared read-only array.
    def __init__(self) -> None:
        self.patches: dict[tuple[tuple[int, ...], bytes], np.ndarray] = {}

    def get(self, doc: Any, path: str) -> np.ndarray:
        array = _numbers(doc, path)
        if array.size == 0:
            array = array.reshape(0, 0)
        if array.ndim != 2 or array.shape[0] != array.shape[1]:
            raise ValidationError("appearance must be a square patch", path)
        if array.size and (array.min() < 0 or array.max() > 1):
            raise ValidationError("appearance values must be within [0, 1]", path)
        key = (array.shape, array.tobytes())
        if key not in self.patches:
            array.setflags(write=False)
            self.patches[key] = array
        return self.patches[key]


def _scene_object(
    doc: Any, path: str, patches: _PatchCache, previous: dict[int, np.ndarray]
) -> SceneObject:
    doc = _object(doc, path, ("id", "kind", "bbox"), ("signal", "appearance"))
    obj_id = _integer(doc["id"], _join(path, "id"))
    if "appearance" in doc:
        appearance = patches.get(doc["appearance"], _join(path, "appearance"))
        previous[obj_id] = appearance
    else:
        appearance = previous.get(obj_id, patches.get([], path))
    try:
        kind = ObjectKind(doc["kind"])
    except ValueError:
        raise ValidationError(f"unknown kind {doc['kind']!r}", _join(path, "kind"))
    try:
        signal = SignalState(doc.get("signal", SignalState.not_applicable.value))
    except ValueError:
        raise ValidationError(
            f"unknown signal {doc['signal']!r}", _join(path, "signal")
        )
    bbox = _numbers(doc["bbox"], _join(path, "bbox"))
    if bbox.shape != (4,):
        raise ValidationError("bbox must be [x1, y1, x2, y2]", _join(path, "bbox"))
    try:
        box = BoundingBox(*(float(v) for v in bbox))
    except ValidationError as e:
        raise e.within(path)
    return SceneObject(obj_id, kind, box, signal, appearance)


def scene_from_dict(doc: Any) -> SceneSequence:
    """Validate a scene document and build its :class:`SceneSequence`.

    >>> scene_from_dict({"version": 2})
    Traceback (most recent call last):
    ...
    pedintent.errors.FormatError: version: unsupported version 2
    """
    _check_version(doc)
    doc = _object(
        doc, "", ("version", "image_dims", "target_index", "frames", "label")
    )
    dims = _list(doc["image_dims"], "image_dims")
    if len(dims) != 2:
        raise ValidationError("expected [width, height]", "image_dims")
    width, height = (_integer(v, f"image_dims[{i}]") for i, v in enumerate(dims))
    patches = _PatchCache()
    previous: dict[int, np.ndarray] = {}
    frames = []
    for t, frame in enumerate(_list(doc["frames"], "frames")):
        path = f"frames[{t}]"
        frame = _object(frame, path, ("objects",))
        objects = _list(frame["objects"], f"{path}.objects")
        frames.append(
            tuple(
                _scene_object(obj, f"{path}.objects[{n}]", patches, previous)
                for n, obj in enumerate(objects)
            )
        )
    label = _object(doc["label"], "label", ("crossing", "future"))
    future = _numbers(label["future"], "label.future")
    if future.ndim != 2 or future.shape[1] != 2:
        raise ValidationError("expected a list of [x, y] points", "label.future")
    seq = SceneSequence(
        frames=tuple(frames),
        image_dims=(width, height),
        target_index=_integer(doc["target_index"], "target_index"),
        label_crossing=_integer(label["crossing"], "label.crossing"),
        label_future=tuple((float(x), float(y)) for x, y in future),
    )
    seq.validate()
    return seq


def save_scene(seq: SceneSequence, path: str | Path) -> None:
    _write_json(scene_to_dict(seq), path)


def load_scene(path: str | Path) -> SceneSequence:
    return scene_from_dict(_read_json(path, "scene"))


# Checkpoints.


def checkpoint_to_dict(checkpoint: Checkpoint) -> dict[str, Any]:
    return {
        "version": VERSION,
        "config": checkpoint.config.as_dict(),
        "train_config": checkpoint.train_config.as_dict(),
        "params": {
            name: {"shape": list(value.shape), "values": value.ravel().tolist()}
            for name, value in checkpoint.params.items()
        },
        "epoch": checkpoint.epoch,
    }


def checkpoint_from_dict(doc: Any) -> Checkpoint:
    """Validate a checkpoint document.

    :raises ShapeError: naming the parameter whose shape does not match the
        configuration.
    """
    _check_version(doc)
    doc = _object(doc, "", ("version", "config", "train_config", "params", "epoch"))
    config = ModelConfig.from_dict(_mapping(doc["config"], "config"))
    train_config = TrainConfig.from_dict(_mapping(doc["train_config"], "train_config"))
    params_doc = _mapping(doc["params"], "params")
    values = {}
    for name, entry in params_doc.items():
        path = f"params.{name}"
        entry = _object(entry, path, ("shape", "values"))
        shape = tuple(
            _integer(v, f"{path}.shape[{i}]")
            for i, v in enumerate(_list(entry["shape"], f"{path}.shape"))
        )
        flat = _numbers(entry["values"], f"{path}.values")
        if flat.ndim != 1 or flat.size != int(np.prod(shape)):
            raise ShapeError(
                f"parameter {name!r} has {flat.size} values for shape {shape}"
            )
        values[name] = flat.reshape(shape)
    params = ModelParams(values)
    params.validate(config)
    epoch = _integer(doc["epoch"], "epoch")
    return Checkpoint(params, config, train_config, epoch)


def save_checkpoint(checkpoint: Checkpoint, path: str | Path) -> None:
    _write_json(checkpoint_to_dict(checkpoint), path)
    logger.debug("Wrote checkpoint %s.", path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    return checkpoint_from_dict(_read_json(path, "checkpoint"))


# Datasets.


def split_indices(n: int, seed: int) -> dict[str, list[int]]:
    """Seeded 70/10/20 train/val/test split of ``n`` scene numbers.

    >>> {k: len(v) for k, v in split_indices(10, seed=1).items()}
    {'train': 7, 'val': 1, 'test': 2}
    """
    order = np.random.default_rng(seed).permutation(n).tolist()
    n_train = n * 7 // 10
    n_val = n // 10
    return {
        "train": sorted(order[:n_train]),
        "val": sorted(order[n_train : n_train + n_val]),
        "test": sorted(order[n_train + n_val :]),
    }


def scene_filename(index: int) -> str:
    return f"scene_{index:05d}.json"


def save_dataset(
    scenes: Sequence[SceneSequence], directory: str | Path, seed: int
) -> dict[str, Any]:
    """Write scene files and the manifest of a dataset, return the manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = [scene_filename(i) for i in range(len(scenes))]
    for name, seq in zip(files, scenes):
        save_scene(seq, directory / name)
    manifest = {
        "version": VERSION,
        "files": files,
        "splits": {
            split: [files[i] for i in indices]
            for split, indices in split_indices(len(scenes), seed).items()
        },
    }
    _write_json(manifest, directory / MANIFEST, indent=2)
    logger.info("Wrote %d scenes to %s.", len(scenes), directory)
    return manifest


def load_manifest(directory: str | Path) -> dict[str, Any]:
    doc = _read_json(Path(directory) / MANIFEST, "manifest")
    _check_version(doc)
    doc = _object(doc, "", ("version", "files", "splits"))
    files = _list(doc["files"], "files")
    for i, name in enumerate(files):
        if not isinstance(name, str) or Path(name).name != name:
            raise ValidationError("expected a file name", f"files[{i}]")
    splits = _object(doc["splits"], "splits", SPLITS)
    known = set(files)
    for split in SPLITS:
        for i, name in enumerate(_list(splits[split], f"splits.{split}")):
            if name not in known:
                raise ValidationError(
                    f"{name!r} is not listed in files", f"splits.{split}[{i}]"
                )
    return doc


def load_dataset(
    directory: str | Path, split: str | None = None
) -> list[SceneSequence]:
    """Load the scenes of a dataset directory, all or those of ``split``."""
    directory = Path(directory)
    manifest = load_manifest(directory)
    if split is None:
        names = manifest["files"]
    elif split in SPLITS:
        names = manifest["splits"][split]
    else:
        raise ValidationError(f"unknown split {split!r}", "splits")
    scenes = []
    for name in names:
        try:
            scenes.append(load_scene(directory / name))
        except ValidationError as e:
            raise e.__class__(f"{e.args[0]} (in {name})", e.path) from e
    logger.debug("Loaded %d scenes from %s.", len(scenes), directory)
    return scenes
