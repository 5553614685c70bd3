import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from perfclust.core import Dataset, InvalidInputError, InvalidStateError, LossKind, UnsupportedLossError
from perfclust.ensemble import (
    EnsembleState,
    batch_gradient,
    ensemble_predict,
    init_weights,
    model_outputs,
    observe_batch,
    predict_batch,
    project_simplex,
    replay_trajectory,
    stream_evaluate,
    update_weights,
)
from perfclust.learners import RegressorSpec, TrainedModel, linear_model, predict
from perfclust.pipeline import make_batches


def random_models(rng, k, d):
    models = []
    for j in range(k):
        if j % 2:
            spec = RegressorSpec(kind="mlp", hidden_sizes=(3,), activation="tanh")
            models.append(TrainedModel(spec, rng.normal(size=spec.n_parameters(d)), d))
        else:
            models.append(linear_model(rng.normal(size=d), rng.normal()))
    return models


def changepoint_stream(rng, n_batches=20, batch_size=50, change=10):
    """Batches from y = 2x before the change and y = -3x after it."""
    batches = []
    for t in range(n_batches):
        x = rng.standard_normal(batch_size)
        slope = 2.0 if t < change else -3.0
        batches.append(Dataset(x[:, None], slope * x))
    return batches


class TestWeights:
    @pytest.mark.parametrize("k", [1, 4, 7])
    def test_uniform(self, k):
        w = init_weights(k)
        assert np.all(w == 1.0 / k)
        assert w.sum() == pytest.approx(1.0)

    def test_invalid(self):
        with pytest.raises(InvalidInputError):
            init_weights(0)

    def test_state_checks(self):
        with pytest.raises(InvalidInputError):
            EnsembleState([0.5], [linear_model([1.0])] * 2, 0.1)
        with pytest.raises(InvalidStateError):
            EnsembleState([np.nan], [linear_model([1.0])], 0.1)
        with pytest.raises(InvalidInputError):
            EnsembleState([1.0], [linear_model([1.0])], -0.1)


class TestPredict:
    def test_one_hot(self, rng):
        models = random_models(rng, 3, 2)
        x = rng.normal(size=2)
        for k in range(3):
            state = EnsembleState(np.eye(3)[k], models, 0.1)
            assert ensemble_predict(state, x) == predict(models[k], x)

    def test_average(self):
        state = EnsembleState([0.5, 0.5], [linear_model([0.0], 1.0), linear_model([0.0], 3.0)], 0.1)
        assert ensemble_predict(state, [7.0]) == 2.0

    def test_matches_per_model_oracle(self, rng):
        models = random_models(rng, 4, 3)
        w = rng.normal(size=4)
        state = EnsembleState(w, models, 0.1)
        X = rng.normal(size=(10, 3))
        batch = predict_batch(state, X)
        for i, x in enumerate(X):
            outs = [predict(m, x) for m in models]
            assert batch[i] == pytest.approx(sum(a * b for a, b in zip(w, outs)), rel=1e-12, abs=1e-12)

    def test_dimension_mismatch(self):
        state = EnsembleState.start([linear_model([1.0, 2.0])], 0.1)
        with pytest.raises(InvalidInputError):
            ensemble_predict(state, [1.0])


class TestGradient:
    def test_zero_residual(self):
        state = EnsembleState.start([linear_model([1.0]), linear_model([1.0])], 0.1)
        batch = Dataset([[1.0], [2.0]], [1.0, 2.0])
        np.testing.assert_array_equal(batch_gradient(state, batch, predict_batch(state, batch.X)), [0.0, 0.0])

    def test_hand_values(self):
        state = EnsembleState([0.5, 0.5], [linear_model([1.0]), linear_model([2.0])], 0.1)
        batch = Dataset([[1.0]], [2.0])
        preds = predict_batch(state, batch.X)
        assert preds.tolist() == [1.5]
        np.testing.assert_allclose(batch_gradient(state, batch, preds), [-1.0, -2.0])

    def test_rejects_absolute_loss(self):
        state = EnsembleState.start([linear_model([1.0])], 0.1)
        batch = Dataset([[1.0]], [2.0])
        with pytest.raises(UnsupportedLossError):
            batch_gradient(state, batch, [1.0], LossKind.ABSOLUTE)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(2024)
        h = 1e-5
        for _ in range(100):
            k, d, n = rng.integers(1, 5), rng.integers(1, 4), rng.integers(1, 30)
            models = random_models(rng, k, d)
            w = rng.normal(size=k)
            batch = Dataset(rng.normal(size=(n, d)), rng.normal(size=n))
            G = model_outputs(models, batch.X)

            def loss(v):
                return np.mean((G @ v - batch.y) ** 2)

            state = EnsembleState(w, models, 0.1)
            grad = batch_gradient(state, batch, predict_batch(state, batch.X))
            for j, e in enumerate(np.eye(k)):
                numeric = (loss(w + h * e) - loss(w - h * e)) / (2 * h)
                assert abs(grad[j] - numeric) <= 1e-6 * max(abs(numeric), 1.0)


class TestUpdate:
    def test_zero_gradient(self):
        state = EnsembleState([0.3, 0.9], [linear_model([1.0])] * 2, 0.5)
        np.testing.assert_array_equal(update_weights(state, [0.0, 0.0]), [0.3, 0.9])

    def test_hand_values(self):
        state = EnsembleState([0.5, 0.5], [linear_model([1.0])] * 2, 0.1)
        np.testing.assert_allclose(update_weights(state, [-1.0, -2.0]), [0.6, 0.7])

    def test_not_normalised(self):
        state = EnsembleState([0.5, 0.5], [linear_model([1.0])] * 2, 1.0)
        assert update_weights(state, [-1.0, -1.0]).sum() == pytest.approx(3.0)

    def test_rejects_bad_gradient(self):
        state = EnsembleState.start([linear_model([1.0])] * 2, 0.1)
        with pytest.raises(InvalidStateError):
            update_weights(state, [np.inf, 0.0])
        with pytest.raises(InvalidInputError):
            update_weights(state, [0.0])

    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=8))
    def test_simplex_projection(self, v):
        p = project_simplex(np.array(v))
        assert np.all(p >= 0) and p.sum() == pytest.approx(1.0)

    def test_optional_projection(self):
        state = EnsembleState([0.5, 0.5], [linear_model([1.0])] * 2, 1.0, project_to_simplex=True)
        np.testing.assert_allclose(update_weights(state, [-1.0, 1.0]), [1.0, 0.0])


class TestStream:
    def test_trajectory_grows_by_one(self, rng):
        models = random_models(rng, 2, 1)
        state = EnsembleState.start(models, 0.01)
        for t in range(4):
            b = Dataset(rng.normal(size=(5, 1)), rng.normal(size=5))
            state = observe_batch(state, b, predict_batch(state, b.X))
            assert len(state.trajectory) == t + 1 and state.trajectory[-1].batch_index == t

    def test_zero_rate_freezes_weights(self, rng):
        models = random_models(rng, 3, 2)
        batches = [Dataset(rng.normal(size=(8, 2)), rng.normal(size=8)) for _ in range(6)]
        r = stream_evaluate(models, batches, 0.0)
        assert all(e.weights == (1 / 3,) * 3 for e in r.trajectory)

    def test_single_model(self, rng):
        m = linear_model([2.0], 1.0)
        batches = [Dataset(rng.normal(size=(5, 1)), rng.normal(size=5)) for _ in range(3)]
        r = stream_evaluate([m], batches, 0.05)
        np.testing.assert_array_equal(r.predictions[:5], [predict(m, x) for x in batches[0].X])
        for t in (1, 2):
            w = r.trajectory[t - 1].weights[0]
            np.testing.assert_allclose(r.predictions[5 * t:5 * t + 5], w * model_outputs([m], batches[t].X)[:, 0])

    def test_causality_replay(self, rng):
        models = random_models(rng, 3, 2)
        batches = [Dataset(rng.normal(size=(7, 2)), rng.normal(size=7)) for _ in range(5)]
        r = stream_evaluate(models, batches, 0.05)
        replayed = replay_trajectory(models, batches, r.trajectory)
        np.testing.assert_array_equal(np.concatenate(replayed), r.predictions)
        # changing a batch's targets leaves that batch's predictions alone
        tampered = list(batches)
        tampered[3] = Dataset(batches[3].X, batches[3].y + 100.0)
        r2 = stream_evaluate(models, tampered, 0.05)
        np.testing.assert_array_equal(r2.predictions[: 4 * 7], r.predictions[: 4 * 7])

    def test_replay_reproduces_final_weights(self, rng):
        models = random_models(rng, 2, 1)
        batches = [Dataset(rng.normal(size=(6, 1)), rng.normal(size=6)) for _ in range(4)]
        a = stream_evaluate(models, batches, 0.02)
        b = stream_evaluate(models, batches, 0.02)
        np.testing.assert_array_equal(a.final_state.weights, b.final_state.weights)
        assert a.trajectory[-1].weights == tuple(a.final_state.weights)

    def test_batch_loss_matches_predictions(self, rng):
        models = random_models(rng, 2, 1)
        data = Dataset(rng.normal(size=(23, 1)), rng.normal(size=23))
        batches = make_batches(data, 10)
        r = stream_evaluate(models, batches, 0.02)
        assert len(r.batch_losses) == 3
        assert r.batch_losses[2] == pytest.approx(np.mean((r.predictions[20:] - data.y[20:]) ** 2))
        assert r.mse == pytest.approx(np.mean((r.predictions - data.y) ** 2))

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidInputError):
            stream_evaluate([linear_model([1.0])], [Dataset([[1.0, 2.0]], [1.0])], 0.1)

    def test_true_generator_gains_weight(self, rng):
        models = [linear_model([2.0]), linear_model([-1.0])]
        batches = []
        for _ in range(10):
            x = rng.standard_normal(40)
            batches.append(Dataset(x[:, None], 2.0 * x))
        r = stream_evaluate(models, batches, 0.02)
        w0 = [0.5] + [e.weights[0] for e in r.trajectory]
        assert np.all(np.diff(w0) > 0)
        assert np.all(np.diff(r.batch_losses) < 0)

    def test_changepoint_shift(self, rng):
        models = [linear_model([2.0]), linear_model([-3.0])]
        r = stream_evaluate(models, changepoint_stream(rng), 0.02)
        w_b = [e.weights[1] for e in r.trajectory]
        assert np.all(np.diff(w_b[9:]) > 0)
