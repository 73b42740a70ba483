"""Dataset generation, gradients and the training loop."""

import numpy as np
import pytest
from conftest import make_random_weights

from lstm_nmpc.errors import TrainingDivergedError
from lstm_nmpc.nn_core import NetworkWeights, Normalization
from lstm_nmpc.surrogate_plant import PlantParams
from lstm_nmpc.trainer import (
    Dataset,
    FitReport,
    TrainConfig,
    cosine_learning_rate,
    evaluate,
    fit_normalization,
    generate_dataset,
    loss_and_gradient,
    predict_sequence,
    train,
)


@pytest.fixture(scope="module")
def plant_dataset():
    return generate_dataset(PlantParams(), 1000, seed=0)


def _random_input_dataset(n=1000, seed=0, outputs=None):
    rng = np.random.default_rng(seed)
    inputs = rng.uniform(0.0, 1.0, (n, 5)) * [6, 20, 1.5, 1, 210] + [0, -5, 0, 0, 150]
    if outputs is None:
        outputs = np.tile([3.0, 6.0, 100.0, 3.0], (n, 1))
    return Dataset(inputs, outputs)


def test_dataset_is_reproducible(plant_dataset):
    again = generate_dataset(PlantParams(), 1000, seed=0)
    np.testing.assert_array_equal(again.inputs, plant_dataset.inputs)
    np.testing.assert_array_equal(again.outputs, plant_dataset.outputs)


def test_feedback_fields_carry_previous_measurement(plant_dataset):
    assert len(plant_dataset) == 1000
    np.testing.assert_array_equal(plant_dataset.inputs[1:, :2], plant_dataset.outputs[:-1, :2])


def test_dataset_actuations_respect_bounds(plant_dataset):
    actuations = plant_dataset.inputs[:, 2:]
    assert np.all(actuations >= [0.0, 0.0, 150.0])
    assert np.all(actuations <= [1.5, 1.0, 360.0])


def test_short_dataset_rejected():
    with pytest.raises(ValueError):
        generate_dataset(PlantParams(), 999, seed=0)


def test_split_is_contiguous(plant_dataset):
    assert plant_dataset.split_index == 800


def test_csv_round_trip(tmp_path, plant_dataset):
    path = plant_dataset.to_csv(tmp_path / "dataset.csv")
    loaded = Dataset.read_csv(path)
    np.testing.assert_array_equal(loaded.inputs, plant_dataset.inputs)
    np.testing.assert_array_equal(loaded.outputs, plant_dataset.outputs)


def test_normalization_uses_training_split_only():
    outputs = np.tile([3.0, 6.0, 100.0, 3.0], (1000, 1))
    outputs[800:, 0] = 50.0
    normalization = fit_normalization(_random_input_dataset(outputs=outputs))
    assert normalization.output_offset[0] == pytest.approx(3.0)


def test_normalization_round_trip(plant_dataset):
    normalization = fit_normalization(plant_dataset)
    outputs = plant_dataset.outputs
    restored = normalization.denormalize_output(normalization.normalize_output(outputs))
    np.testing.assert_allclose(restored, outputs, rtol=1e-12, atol=1e-12 * np.abs(outputs).max())
    train = normalization.normalize_input(plant_dataset.inputs[: plant_dataset.split_index])
    np.testing.assert_allclose(train.mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(train.std(axis=0), 1.0, rtol=1e-10)
    assert Normalization.from_vector(normalization.as_vector()) == normalization


def test_gradient_matches_finite_differences(small_spec):
    rng = np.random.default_rng(3)
    vector = make_random_weights(small_spec, seed=3).to_vector()
    inputs = rng.standard_normal((4, 2, 5))
    targets = rng.standard_normal((4, 2, 4))
    c0 = 0.1 * rng.standard_normal((2, 4))
    h0 = 0.1 * rng.standard_normal((2, 4))
    _, grad = loss_and_gradient(small_spec, vector, inputs, targets, c0, h0)
    step = 1e-6
    numeric = np.empty_like(vector)
    for index in range(vector.size):
        bumped = vector.copy()
        bumped[index] += step
        upper, _ = loss_and_gradient(small_spec, bumped, inputs, targets, c0, h0)
        bumped[index] -= 2 * step
        lower, _ = loss_and_gradient(small_spec, bumped, inputs, targets, c0, h0)
        numeric[index] = (upper - lower) / (2 * step)
    np.testing.assert_allclose(grad, numeric, rtol=1e-5, atol=1e-7)


def test_zero_loss_when_targets_are_the_predictions(small_spec):
    weights = make_random_weights(small_spec, seed=4)
    rng = np.random.default_rng(4)
    inputs = rng.standard_normal((200, 5))
    dataset = Dataset(inputs, predict_sequence(weights, inputs))
    report = evaluate(weights, dataset)
    np.testing.assert_array_equal(report.rmse_train, np.zeros(4))
    np.testing.assert_array_equal(report.rmse_validation, np.zeros(4))


def test_nrmse_is_rmse_over_range():
    report = FitReport(
        rmse_train=np.array([0.1, 0.5, 5.0, 0.2]),
        rmse_validation=np.array([0.2, 1.0, 10.0, 0.4]),
        output_range=np.array([4.0, 20.0, 500.0, 0.0]),
    )
    np.testing.assert_allclose(report.nrmse_train[:3], [2.5, 2.5, 1.0], rtol=0, atol=1e-12)
    # zero range falls back to a normaliser of one
    assert report.nrmse_validation[3] == pytest.approx(40.0)
    frame = report.to_frame()
    assert set(frame["split"]) == {"train", "validation"}
    assert "imep" in report.summary()


def test_fit_report_save_writes_tables(tmp_path):
    report = FitReport(np.ones(4), np.ones(4), np.ones(4))
    report.save(tmp_path)
    for name in ("fit_report.csv", "training_history.csv", "fit_summary.txt"):
        assert (tmp_path / name).exists()


def test_cosine_schedule_endpoints():
    config = TrainConfig(learning_rate=1e-2, min_learning_rate=1e-4, max_epochs=11)
    assert cosine_learning_rate(config, 0) == pytest.approx(1e-2)
    assert cosine_learning_rate(config, 10) == pytest.approx(1e-4)
    assert cosine_learning_rate(config, 5) == pytest.approx(0.5 * (1e-2 + 1e-4))


def test_training_fits_a_constant_map(small_spec):
    config = TrainConfig(
        window=8, batch_size=1, learning_rate=0.02, min_learning_rate=1e-4, max_epochs=10
    )
    weights, report = train(_random_input_dataset(), small_spec, config)
    assert isinstance(weights, NetworkWeights)
    assert len(report.history) == 10
    assert np.all(report.rmse_validation < 0.1)


def test_training_is_deterministic(small_spec):
    config = TrainConfig(window=8, batch_size=4, max_epochs=2, seed=7)
    dataset = _random_input_dataset(seed=1, outputs=None)
    first, report_a = train(dataset, small_spec, config)
    second, report_b = train(dataset, small_spec, config)
    assert first == second
    assert [r.train_loss for r in report_a.history] == [r.train_loss for r in report_b.history]


def test_best_validation_loss_never_increases(small_spec):
    config = TrainConfig(window=8, batch_size=4, max_epochs=4)
    _, report = train(_random_input_dataset(seed=2), small_spec, config)
    best = [record.best_validation_loss for record in report.history]
    assert best == sorted(best, reverse=True)


def test_non_finite_targets_abort_training(small_spec):
    outputs = np.tile([3.0, 6.0, 100.0, 3.0], (1000, 1))
    outputs[10, 2] = np.nan
    config = TrainConfig(window=8, batch_size=1, max_epochs=3)
    with pytest.raises(TrainingDivergedError) as excinfo:
        train(_random_input_dataset(outputs=outputs), small_spec, config)
    assert excinfo.value.epoch == 0


@pytest.mark.parametrize(
    "overrides",
    [
        {"window": 2},
        {"batch_size": 0},
        {"learning_rate": 1e-5, "min_learning_rate": 1e-4},
        {"grad_clip": 0.0},
    ],
)
def test_invalid_train_config(overrides):
    with pytest.raises(ValueError):
        TrainConfig(**overrides)
