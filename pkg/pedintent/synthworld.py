"""\
.. currentmodule:: pedintent.synthworld

Synthetic traffic scenes with a known crossing rule.

Every scene shows a target pedestrian approaching the road near a crosswalk,
a traffic light, and optionally bystanders and passing vehicles. The light
follows a :class:`SignalFSM` cycling green, yellow, red. The target crosses
(label 1) when the light is red for vehicles at the last observed frame; the
label is then flipped with probability ``noise``. A classifier reading the
signal state of the last frame thus scores ``1 - noise`` at best.

The approach of the target (speed, bounding box growth) is drawn
independently of the signal, so that geometry alone carries no information
about the label.

After the last observed frame, a crossing target walks up the image, toward
the road, ``cross_speed`` pixels per frame. Any other target stands near its
last position.

>>> fsm = SignalFSM(green=60, yellow=15, red=45)
>>> [signal_state(fsm, t).value for t in (0, 60, 75, 120)]
['green', 'yellow', 'red', 'green']

Scenes are pure functions of a configuration and a scene seed. Datasets
derive scene seeds from a dataset seed and the scene number, so that a
scene does not depend on how many scenes precede it.


Configuration file
------------------

:class:`WorldConfig` can be read from the ``[world]`` section of an INI
file:

.. code:: ini

    [world]
    noise = 0.1
    max_vehicles = 1


API Reference
-------------

.. autoclass:: SignalFSM
.. autoclass:: WorldConfig
.. autofunction:: signal_state
.. autofunction:: scene_seed
.. autofunction:: texture
.. autofunction:: generate_scene
.. autofunction:: generate_dataset
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import IO, Any

import numpy as np

from ._helpers import config_from_dict, read_ini_section
from .errors import ParameterError
from .scene import BoundingBox, ObjectKind, SceneObject, SceneSequence, SignalState

logger = logging.getLogger(__name__)

# Target, traffic light and crosswalk.
FIXED_NODES = 3
PEDESTRIAN_ASPECT = 0.4
VEHICLE_ASPECT = 0.6


@dataclass(frozen=True)
class SignalFSM:
    """Fixed time traffic light, durations in frames."""

    green: int = 60
    yellow: int = 15
    red: int = 45
    offset: int = 0

    def __post_init__(self) -> None:
        for name in ("green", "yellow", "red"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} duration must be ≥ 1 frame")

    @property
    def cycle(self) -> int:
        return self.green + self.yellow + self.red


def signal_state(fsm: SignalFSM, t: int) -> SignalState:
    if t < 0:
        raise ParameterError(f"frame must be ≥ 0, got {t}")
    phase = (t + fsm.offset) % fsm.cycle
    if phase < fsm.green:
        return SignalState.green
    if phase < fsm.green + fsm.yellow:
        return SignalState.yellow
    return SignalState.red


@dataclass(frozen=True)
class WorldConfig:
    """Synthetic world settings.

    Sizes are in pixels and speeds in pixels per frame. ``growth_rate`` is
    the mean relative growth of the target box side per frame.
    """

    image_width: int = 1920
    image_height: int = 1080
    frames: int = 15
    horizon: int = 15
    noise: float = 0.05
    max_bystanders: int = 2
    max_vehicles: int = 2
    growth_rate: float = 0.02
    walk_speed: float = 4.0
    cross_speed: float = 8.0
    jitter: float = 1.0
    patch_size: int = 32
    max_nodes: int = 8
    green: int = 60
    yellow: int = 15
    red: int = 45
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.noise < 0.5:
            raise ParameterError(f"noise must be in [0, 0.5), got {self.noise}")
        if self.image_width < 640 or self.image_height < 480:
            raise ParameterError("image must be at least 640×480")
        for name in ("frames", "horizon", "patch_size"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be ≥ 1")
        for name in ("max_bystanders", "max_vehicles"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be ≥ 0")
        for name in ("walk_speed", "cross_speed", "jitter"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be ≥ 0")
        if not 0 < self.growth_rate <= 0.1:
            raise ParameterError(
                f"growth_rate must be in (0, 0.1], got {self.growth_rate}"
            )
        if FIXED_NODES + self.max_bystanders + self.max_vehicles > self.max_nodes:
            raise ParameterError(
                f"scenes may hold up to {self.max_node_count} objects,"
                f" more than {self.max_nodes} node slots"
            )
        # Checks light durations.
        self.signal()

    @property
    def image_dims(self) -> tuple[int, int]:
        return self.image_width, self.image_height

    @property
    def max_node_count(self) -> int:
        return FIXED_NODES + self.max_bystanders + self.max_vehicles

    def signal(self, offset: int = 0) -> SignalFSM:
        return SignalFSM(self.green, self.yellow, self.red, offset)

    def as_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> WorldConfig:
        return config_from_dict(cls, data, "world")

    @classmethod
    def from_ini(cls, fo: str | Path | IO[str], **overrides: Any) -> WorldConfig:
        """Read the ``[world]`` section of an INI file.

        Keyword arguments not ``None`` take precedence over file values.
        """
        values = read_ini_section(fo, "world", cls().as_dict())
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(values)


def scene_seed(seed: int, index: int) -> int:
    """Seed of scene ``index`` of a dataset seeded with ``seed``."""
    state = np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint64)
    return int(state[0])


def texture(kind: ObjectKind, rng: np.random.Generator, size: int) -> np.ndarray:
    """Binary texture of an object, with a pattern specific to its kind.

    The array is read-only: one texture is shared by every frame of the
    object.
    """
    rows, cols = np.indices((size, size))
    period = int(rng.integers(3, 6))
    phase = int(rng.integers(0, period))
    if kind is ObjectKind.pedestrian:
        pattern = (cols + phase) // period % 2
    elif kind is ObjectKind.traffic_light:
        pattern = (rows + phase) // period % 2
    elif kind is ObjectKind.vehicle:
        pattern = ((rows + phase) // period + (cols + phase) // period) % 2
    else:
        pattern = (rows + cols + phase) // period % 2
    flips = rng.random((size, size)) < 0.05
    patch = np.where(flips, 1 - pattern, pattern).astype(np.float64)
    patch.setflags(write=False)
    return patch


def _box(
    cx: float, cy: float, width: float, height: float, dims: tuple[int, int]
) -> BoundingBox:
    w, h = dims
    x1 = float(np.clip(round(cx - width / 2, 2), 0, w - 2))
    y1 = float(np.clip(round(cy - height / 2, 2), 0, h - 2))
    x2 = float(np.clip(round(cx + width / 2, 2), x1 + 1, w))
    y2 = float(np.clip(round(cy + height / 2, 2), y1 + 1, h))
    return BoundingBox(x1, y1, x2, y2)


def _final_phase(
    rng: np.random.Generator, fsm: SignalFSM, final_red: bool | None
) -> int:
    not_red = fsm.green + fsm.yellow
    if final_red is None:
        return int(rng.integers(0, fsm.cycle))
    if final_red:
        return int(rng.integers(not_red, fsm.cycle))
    return int(rng.integers(0, not_red))


def generate_scene(
    cfg: WorldConfig, seed: int, *, final_red: bool | None = None
) -> SceneSequence:
    """Draw one scene.

    With ``final_red``, the light state at the last observed frame is
    forced red (``True``) or not red (``False``); otherwise the light phase
    is drawn uniformly over the cycle.
    """
    rng = np.random.default_rng(seed)
    dims = cfg.image_dims
    width, height = dims
    frames = cfg.frames
    size = cfg.patch_size

    cycle = cfg.signal().cycle
    offset = (_final_phase(rng, cfg.signal(), final_red) - (frames - 1)) % cycle
    fsm = cfg.signal(offset)
    red = signal_state(fsm, frames - 1) is SignalState.red
    flipped = bool(rng.random() < cfg.noise)
    crossing = int(red != flipped)

    # Target approach, drawn independently of the signal.
    road_top = 0.45 * height
    feet = rng.uniform(0.78, 0.85) * height
    side = rng.uniform(0.12, 0.16) * height
    growth = cfg.growth_rate * rng.uniform(0.5, 1.5)
    cx = rng.uniform(0.3, 0.7) * width
    heading = rng.choice([-1.0, 1.0])
    speed = cfg.walk_speed * rng.uniform(0.5, 1.5)
    target_texture = texture(ObjectKind.pedestrian, rng, size)
    targets = []
    for t in range(frames):
        h = side * (1 + growth) ** t
        x = cx + heading * speed * t
        targets.append(
            SceneObject(
                0,
                ObjectKind.pedestrian,
                _box(x, feet - h / 2, PEDESTRIAN_ASPECT * h, h, dims),
                appearance=target_texture,
            )
        )

    light_x = rng.uniform(0.1, 0.9) * width
    light_y = rng.uniform(0.05, 0.2) * height
    light_texture = texture(ObjectKind.traffic_light, rng, size)
    crosswalk_box = _box(cx, road_top + 0.1 * height, 240.0, 0.2 * height, dims)
    crosswalk_texture = texture(ObjectKind.crosswalk, rng, size)

    bystanders = []
    for i in range(int(rng.integers(0, cfg.max_bystanders + 1))):
        bx = rng.uniform(0.1, 0.9) * width
        by = rng.uniform(0.72, 0.88) * height
        bh = rng.uniform(0.08, 0.14) * height
        patch = texture(ObjectKind.pedestrian, rng, size)
        track = bx + rng.normal(0.0, cfg.jitter, frames)
        bystanders.append(
            [
                SceneObject(
                    FIXED_NODES + i,
                    ObjectKind.pedestrian,
                    _box(track[t], by, PEDESTRIAN_ASPECT * bh, bh, dims),
                    appearance=patch,
                )
                for t in range(frames)
            ]
        )

    vehicles = []
    first_vehicle = FIXED_NODES + len(bystanders)
    for i in range(int(rng.integers(0, cfg.max_vehicles + 1))):
        vw = rng.uniform(0.08, 0.13) * width
        vy = rng.uniform(0.5, 0.6) * height
        vx = rng.uniform(0.15, 0.55) * width
        vspeed = rng.uniform(5.0, 15.0)
        patch = texture(ObjectKind.vehicle, rng, size)
        vehicles.append(
            [
                SceneObject(
                    first_vehicle + i,
                    ObjectKind.vehicle,
                    _box(vx + vspeed * t, vy, vw, VEHICLE_ASPECT * vw, dims),
                    appearance=patch,
                )
                for t in range(frames)
            ]
        )

    scene_frames = []
    for t in range(frames):
        objects = [
            targets[t],
            SceneObject(
                1,
                ObjectKind.traffic_light,
                _box(light_x, light_y, 20.0, 50.0, dims),
                signal_state(fsm, t),
                appearance=light_texture,
            ),
            SceneObject(
                2, ObjectKind.crosswalk, crosswalk_box, appearance=crosswalk_texture
            ),
        ]
        objects.extend(frames_of[t] for frames_of in bystanders)
        objects.extend(frames_of[t] for frames_of in vehicles)
        scene_frames.append(tuple(objects))

    last = np.array(targets[-1].bbox.center)
    steps = np.arange(1, cfg.horizon + 1, dtype=np.float64)[:, None]
    if crossing:
        future = last + steps * cfg.cross_speed * np.array([0.0, -1.0])
    else:
        future = last + rng.normal(0.0, cfg.jitter, (cfg.horizon, 2))
    future = np.round(future, 2)

    return SceneSequence(
        frames=tuple(scene_frames),
        image_dims=dims,
        target_index=0,
        label_crossing=crossing,
        label_future=tuple((float(x), float(y)) for x, y in future),
    )


def generate_dataset(
    cfg: WorldConfig, n: int, seed: int | None = None
) -> list[SceneSequence]:
    """Draw ``n`` scenes, half of them ending on a red light.

    Scene ``i`` ends on red when ``i`` is even. ``seed`` defaults to
    ``cfg.seed``.
    """
    if n < 1:
        raise ParameterError(f"scene count must be ≥ 1, got {n}")
    seed = cfg.seed if seed is None else seed
    scenes = [
        generate_scene(cfg, scene_seed(seed, i), final_red=i % 2 == 0)
        for i in range(n)
    ]
    crossing = sum(s.label_crossing for s in scenes)
    logger.debug("Generated %d scenes, %d crossing.", n, crossing)
    return scenes
