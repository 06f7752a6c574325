import logging

import numpy as np
import pytest


@pytest.fixture
def tiny_dataset(tiny_world):
    from pedintent.synthworld import generate_dataset

    return generate_dataset(tiny_world, 8, seed=4)


@pytest.fixture
def tiny_train():
    from pedintent.trainer import TrainConfig

    return TrainConfig(learning_rate=0.05, epochs=2, batch_size=3, seed=7)


def test_train_config():
    from pedintent.errors import ParameterError, ValidationError
    from pedintent.trainer import TrainConfig

    cfg = TrainConfig(learning_rate=0.01, shuffle=False)
    assert cfg == TrainConfig.from_dict(cfg.as_dict())

    with pytest.raises(ParameterError):
        TrainConfig(learning_rate=-1.0)
    with pytest.raises(ParameterError):
        TrainConfig(l1_lstm=float("nan"))
    with pytest.raises(ParameterError):
        TrainConfig(batch_size=0)
    with pytest.raises(ParameterError):
        TrainConfig(epochs=0)
    with pytest.raises(ValidationError) as ei:
        TrainConfig.from_dict({"momentum": 0.9})
    assert "train_config.momentum" == ei.value.path


def test_resolve_learning_rate():
    from pedintent.errors import ParameterError
    from pedintent.trainer import resolve_learning_rate

    assert 1e-3 == resolve_learning_rate(1)
    assert 1e-3 == resolve_learning_rate(3)
    assert 7e-4 == resolve_learning_rate(4)
    assert 7e-4 == resolve_learning_rate(6)
    assert 5e-4 == resolve_learning_rate(7)
    with pytest.raises(ParameterError):
        resolve_learning_rate(0)


def test_total_loss():
    from pedintent.autodiff import Tensor
    from pedintent.trainer import TrainConfig, total_loss

    zero = np.zeros((1, 2, 2))
    plain = TrainConfig(traj_loss_weight=0.0)
    loss = total_loss(Tensor([0.25]), [1], Tensor(zero), zero, {}, plain)
    assert 1.386294 == round(float(loss.value), 6)

    # Perfect predictions and zero weights.
    weights = {"lstm.weight": Tensor(np.zeros((2, 4)))}
    loss = total_loss(Tensor([1.0, 0.0]), [1, 0], Tensor(zero), zero, weights, plain)
    assert float(loss.value) < 1e-6

    traj = Tensor(np.ones((1, 2, 2)))
    cfg = TrainConfig(traj_loss_weight=2.0)
    loss = total_loss(Tensor([0.25]), [1], traj, zero, {}, cfg)
    assert 1.386294 + 2.0 == pytest.approx(float(loss.value), abs=1e-6)


def test_regularization_gradients():
    from pedintent.autodiff import Tensor, backward
    from pedintent.trainer import TrainConfig, regularization

    cfg = TrainConfig(l1_lstm=0.01, l2_ic_stream=0.05, l2_lc_stream=0.001)
    weights = {
        "lstm.weight": Tensor([[2.0, -3.0]], requires_grad=True),
        "ic.0.fc.weight": Tensor([1.0, -2.0], requires_grad=True),
        "lc.0.smp.weight": Tensor([4.0], requires_grad=True),
        "encoder.proj.weight": Tensor([[3.0]], requires_grad=True),
        "fcn.weight": Tensor([5.0], requires_grad=True),
    }
    reg = regularization(weights, cfg)
    expected = 0.01 * 5 + 0.05 * 5 + 0.001 * 16 + 0.05 * 9
    assert expected == pytest.approx(float(reg.value))
    backward(reg, wrt=weights.values())
    np.testing.assert_allclose([[0.01, -0.01]], weights["lstm.weight"].grad)
    np.testing.assert_allclose([0.1, -0.2], weights["ic.0.fc.weight"].grad)
    np.testing.assert_allclose([0.008], weights["lc.0.smp.weight"].grad)
    # Encoder weights share the intention stream penalty.
    np.testing.assert_allclose([[0.3]], weights["encoder.proj.weight"].grad)
    # Unregularized groups.
    assert weights["fcn.weight"].grad is None


def test_sgd_step():
    from pedintent.errors import NonFiniteError, ParameterError, ValidationError
    from pedintent.net import ModelParams
    from pedintent.trainer import sgd_step

    params = ModelParams({"w": [1.0], "frozen": [3.0]})
    stepped = sgd_step(params, {"w": np.array([2.0])}, 0.5)
    assert [0.0] == stepped["w"].tolist()
    assert [3.0] == stepped["frozen"].tolist()
    assert params == sgd_step(params, {"w": np.array([2.0])}, 0.0)

    # Gradient of θ²/2 is θ.
    theta = params
    for _ in range(2):
        theta = sgd_step(theta, {"w": theta["w"]}, 0.1)
    assert 0.81 == pytest.approx(theta["w"][0], abs=1e-12)

    with pytest.raises(ParameterError):
        sgd_step(params, {}, -0.1)
    with pytest.raises(NonFiniteError) as ei:
        sgd_step(params, {"w": np.array([np.inf])}, 0.1)
    assert "w" == ei.value.name
    with pytest.raises(ValidationError) as ei:
        sgd_step(params, {"w": np.zeros(2)}, 0.1)
    assert "w" == ei.value.path


def test_loss_and_gradients(make_scene, tiny_model):
    from pedintent.errors import NonFiniteError
    from pedintent.net import ModelParams, collate
    from pedintent.trainer import TrainConfig, loss_and_gradients

    batch = collate([make_scene(), make_scene(crossing=0, seed=1)], tiny_model)
    params = ModelParams.init(tiny_model, seed=0)
    cfg = TrainConfig()
    loss, grads = loss_and_gradients(params, batch, tiny_model, cfg)
    assert np.isfinite(loss)
    assert set(params) == set(grads)
    for name, grad in grads.items():
        assert params[name].shape == grad.shape

    # The update of a batch does not depend on scene order.
    swapped = collate([make_scene(crossing=0, seed=1), make_scene()], tiny_model)
    loss2, grads2 = loss_and_gradients(params, swapped, tiny_model, cfg)
    assert loss == pytest.approx(loss2, abs=1e-12)
    for name in grads:
        np.testing.assert_allclose(grads[name], grads2[name], atol=1e-10)

    broken = params.replace(**{"intention.bias": np.array([np.nan])})
    with pytest.raises(NonFiniteError):
        loss_and_gradients(broken, batch, tiny_model, cfg)


def test_fixed_batch_descent(tiny_dataset, tiny_model):
    from pedintent.net import ModelParams, collate
    from pedintent.trainer import TrainConfig, loss_and_gradients, sgd_step

    batch = collate(tiny_dataset[:4], tiny_model)
    params = ModelParams.init(tiny_model, seed=0)
    cfg = TrainConfig()
    first, _ = loss_and_gradients(params, batch, tiny_model, cfg)
    for _ in range(100):
        loss, grads = loss_and_gradients(params, batch, tiny_model, cfg)
        params = sgd_step(params, grads, 0.05)
    assert loss < first


def test_train_deterministic(tiny_dataset, tiny_model, tiny_train, caplog):
    from dataclasses import replace

    from pedintent.trainer import train

    logs = []
    with caplog.at_level(logging.INFO, logger="pedintent.trainer"):
        first = train(
            tiny_dataset[:6],
            tiny_model,
            tiny_train,
            validation=tiny_dataset[6:],
            on_epoch=logs.append,
        )
    second = train(
        tiny_dataset[:6], tiny_model, tiny_train, validation=tiny_dataset[6:]
    )
    assert first.params == second.params
    assert first.history == second.history
    assert first.history == logs
    assert [1, 2] == [log.epoch for log in first.history]
    assert all(log.val_loss is not None for log in first.history)
    assert 2 == first.epoch
    assert "Epoch 2: train loss" in caplog.text

    other = train(tiny_dataset[:6], tiny_model, replace(tiny_train, seed=8))
    assert first.params != other.params


def test_train_null_rate(tiny_dataset, tiny_model):
    from pedintent.net import ModelParams
    from pedintent.trainer import TrainConfig, train

    cfg = TrainConfig(learning_rate=0.0, epochs=3, batch_size=3, shuffle=False)
    checkpoint = train(tiny_dataset, tiny_model, cfg)
    assert ModelParams.init(tiny_model, cfg.seed) == checkpoint.params
    losses = {log.train_loss for log in checkpoint.history}
    assert 1 == len(losses)


def test_train_empty(tiny_model):
    from pedintent.errors import ValidationError
    from pedintent.trainer import TrainConfig, train

    with pytest.raises(ValidationError):
        train([], tiny_model, TrainConfig())


def test_evaluate_constant_model(tiny_dataset, tiny_model):
    from pedintent.net import ModelParams
    from pedintent.trainer import Checkpoint, TrainConfig, evaluate, standstill_ade

    checkpoint = Checkpoint(
        ModelParams.zeros(tiny_model), tiny_model, TrainConfig(batch_size=3), 0
    )
    report = evaluate(checkpoint, tiny_dataset)
    positives = sum(s.label_crossing for s in tiny_dataset)
    # Probability 0.5 everywhere counts as not crossing.
    assert (0, 0, positives, 8 - positives) == tuple(report.counts)
    assert 8 == report.total
    assert report.ade == pytest.approx(standstill_ade(tiny_dataset), abs=1e-9)
    assert report.f1 == 0.0


def test_evaluate_oracle(make_scene, tiny_model):
    from pedintent.net import ModelParams
    from pedintent.scene import SceneSequence
    from pedintent.trainer import Checkpoint, TrainConfig, evaluate

    # Standstill scenes, intention bias pushing every prediction to crossing.
    scenes = []
    for seed in range(3):
        seq = make_scene(seed=seed)
        scenes.append(
            SceneSequence(
                frames=seq.frames,
                image_dims=seq.image_dims,
                target_index=0,
                label_crossing=1,
                label_future=(seq.last_center,) * 3,
            )
        )
    params = ModelParams.zeros(tiny_model).replace(
        **{"intention.bias": np.array([10.0])}
    )
    report = evaluate(Checkpoint(params, tiny_model, TrainConfig(), 0), scenes)
    assert 1.0 == report.accuracy
    assert 1.0 == report.f1
    assert 0.0 == report.ade
    assert 0.0 == report.fde


def test_standstill_ade(make_scene):
    from pedintent.errors import ValidationError
    from pedintent.trainer import standstill_ade

    # Future steps move 3, 6 and 9 pixels along x and 3.5 along y.
    expected = np.mean([np.hypot(dx, 3.5) for dx in (3, 6, 9)])
    assert expected == pytest.approx(standstill_ade([make_scene()]))
    with pytest.raises(ValidationError):
        standstill_ade([make_scene(crossing=0)], crossing_only=True)


def test_repeat_experiment(tiny_dataset, tiny_model, tiny_train):
    from dataclasses import replace

    from pedintent.errors import ParameterError
    from pedintent.trainer import repeat_experiment

    cfg = replace(tiny_train, epochs=1)
    reports, mean = repeat_experiment(
        tiny_dataset[:5], tiny_dataset[5:], tiny_model, cfg, 2
    )
    assert 2 == len(reports)
    assert 6 == mean.total
    assert sum(r.tp for r in reports) == mean.tp
    assert np.mean([r.ade for r in reports]) == pytest.approx(mean.ade)

    with pytest.raises(ParameterError):
        repeat_experiment(tiny_dataset, tiny_dataset, tiny_model, cfg, 0)


def test_write_loss_log(tmp_path):
    from pedintent.trainer import EpochLog, write_loss_log

    path = tmp_path / "losses.csv"
    write_loss_log([EpochLog(1, 0.5, 0.25), EpochLog(2, 0.1)], path)
    write_loss_log([EpochLog(1, 1 / 3)], path)
    assert [
        "epoch,train_loss,val_loss",
        "1,0.5,0.25",
        "2,0.1,",
        "1,0.3333333333333333,",
    ] == path.read_text().splitlines()


def test_max_node_count(make_scene):
    from pedintent.trainer import max_node_count

    assert 2 == max_node_count([make_scene(light=False), make_scene()])


# Plain SGD over 2000 scenes and 30 epochs. The default step and penalties do
# not converge within that budget.
DESK_TRAINING = dict(
    learning_rate=0.05,
    batch_size=32,
    l1_lstm=1e-4,
    l2_ic_stream=5e-4,
    l2_lc_stream=1e-5,
)


@pytest.mark.slow
def test_synthetic_learning():
    from pedintent.net import ModelConfig
    from pedintent.synthworld import WorldConfig, generate_dataset
    from pedintent.trainer import TrainConfig, evaluate, train

    world = WorldConfig(noise=0.05, max_bystanders=1, max_vehicles=1)
    scenes = generate_dataset(world, 2500, seed=1)
    model = ModelConfig(horizon=world.horizon)
    checkpoint = train(scenes[:2000], model, TrainConfig(**DESK_TRAINING))
    report = evaluate(checkpoint, scenes[2000:])
    assert report.accuracy >= 0.90


@pytest.mark.slow
def test_signal_ablation():
    from dataclasses import replace

    from pedintent.net import ModelConfig
    from pedintent.synthworld import WorldConfig, generate_dataset
    from pedintent.trainer import TrainConfig, evaluate, train

    world = WorldConfig(noise=0.05, max_bystanders=1, max_vehicles=1)
    scenes = generate_dataset(world, 2500, seed=2)
    model = ModelConfig(horizon=world.horizon)
    cfg = TrainConfig(**DESK_TRAINING)
    full = evaluate(train(scenes[:2000], model, cfg), scenes[2000:])
    ablated_cfg = replace(cfg, ablate_signals=True)
    ablated = evaluate(train(scenes[:2000], model, ablated_cfg), scenes[2000:])
    assert full.accuracy - ablated.accuracy >= 0.15


@pytest.mark.slow
def test_trajectory_beats_standstill():
    from pedintent.metrics import ade
    from pedintent.net import ModelConfig
    from pedintent.synthworld import WorldConfig, generate_dataset
    from pedintent.trainer import TrainConfig, predict_dataset, standstill_ade, train

    world = WorldConfig(noise=0.0, max_bystanders=1, max_vehicles=1)
    scenes = generate_dataset(world, 2500, seed=3)
    model = ModelConfig(horizon=world.horizon)
    checkpoint = train(scenes[:2000], model, TrainConfig(**DESK_TRAINING))
    crossing = [s for s in scenes[2000:] if s.label_crossing]
    _, positions = predict_dataset(checkpoint, crossing)
    truth = np.array([s.label_future for s in crossing])
    assert ade(positions, truth) < 0.5 * standstill_ade(crossing)
