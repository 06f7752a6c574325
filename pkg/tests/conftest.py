import numpy as np
import pytest


@pytest.fixture
def tiny_model():
    from pedintent.net import ModelConfig

    return ModelConfig(
        appearance_dim=3,
        patch_size=10,
        encoder_channels=(2, 2),
        st_layers_per_stream=1,
        hidden_dims=(4,),
        tmp_kernel=2,
        lstm_hidden=4,
        fcn_hidden=4,
        horizon=3,
        max_nodes=5,
    )


@pytest.fixture
def tiny_world():
    from pedintent.synthworld import WorldConfig

    return WorldConfig(
        image_width=640,
        image_height=480,
        frames=4,
        horizon=3,
        noise=0.0,
        max_bystanders=1,
        max_vehicles=1,
        patch_size=10,
        max_nodes=5,
    )


@pytest.fixture
def make_scene():
    """Factory of hand-made scenes: a walking target and a traffic light."""
    from pedintent.scene import (
        BoundingBox,
        ObjectKind,
        SceneObject,
        SceneSequence,
        SignalState,
    )

    def make(
        frames=4,
        horizon=3,
        patch_size=10,
        signal=SignalState.red,
        crossing=1,
        light=True,
        seed=0,
    ):
        rng = np.random.default_rng(seed)
        walker = rng.random((patch_size, patch_size))
        lamp = rng.random((patch_size, patch_size))
        scene_frames = []
        for t in range(frames):
            objects = [
                SceneObject(
                    7,
                    ObjectKind.pedestrian,
                    BoundingBox(10 + 2 * t, 40, 20 + 2 * t, 70 + t),
                    appearance=walker,
                )
            ]
            if light:
                objects.append(
                    SceneObject(
                        3,
                        ObjectKind.traffic_light,
                        BoundingBox(80, 5, 90, 25),
                        signal,
                        appearance=lamp,
                    )
                )
            scene_frames.append(tuple(objects))
        last_x = 15 + 2 * (frames - 1)
        return SceneSequence(
            frames=tuple(scene_frames),
            image_dims=(100, 100),
            target_index=0,
            label_crossing=crossing,
            label_future=tuple(
                (float(last_x + 3 * (i + 1)), 60.0) for i in range(horizon)
            ),
        )

    return make
