import json
import math

import numpy as np
import pytest

from eyecontact import net
from eyecontact.data import Split
from eyecontact.net import NetworkArch
from eyecontact.pose import Subset
from eyecontact.training import (
    AdamState,
    TrainConfig,
    TrainSample,
    adam_step,
    saliency,
    train,
    write_history,
)


def scalar_params() -> net.NetworkParams:
    """Abuse a 1x1 head-only view: a tiny arch whose tensors we poke directly."""
    arch = NetworkArch(input_dim=2, hidden_dim=2, n_residual_blocks=0, dropout_rate=0.0)
    return net.init_network(arch, 0)


def zero_grads(params) -> dict:
    return {name: np.zeros_like(t) for name, t in params.trainable_items()}


class TestAdamStep:
    def test_zero_gradient_fixed_point(self):
        params = scalar_params()
        state = AdamState.zeros(params)
        new_params, new_state = adam_step(params, zero_grads(params), state, TrainConfig())
        assert new_state.t == 1
        for name, t in params.trainable_items():
            assert np.array_equal(new_params.tensors[name], t)

    def test_first_step_magnitude(self):
        # Bias correction makes the first update ~ -lr * sign(g).
        params = scalar_params()
        grads = zero_grads(params)
        grads["head.b"][0] = 0.3
        _, state = params, AdamState.zeros(params)
        new_params, _ = adam_step(params, grads, state, TrainConfig(learning_rate=1e-4))
        delta = new_params.tensors["head.b"][0] - params.tensors["head.b"][0]
        assert delta == pytest.approx(-1e-4, rel=1e-6)

    def test_constant_gradient_decreases_monotonically(self):
        # Hand-iterating the recurrence with g = 0.1 gives a ~lr decrease per step.
        params = scalar_params()
        state = AdamState.zeros(params)
        cfg = TrainConfig(learning_rate=1e-4)
        grads = zero_grads(params)
        grads["head.b"][0] = 0.1
        values = [params.tensors["head.b"][0]]
        for _ in range(2):
            params, state = adam_step(params, grads, state, cfg)
            values.append(params.tensors["head.b"][0])
        assert values[1] - values[0] == pytest.approx(-1e-4, rel=1e-6)
        assert values[2] - values[1] == pytest.approx(-1e-4, rel=1e-4)

    def test_shape_mismatch_rejected(self):
        params = scalar_params()
        grads = zero_grads(params)
        grads["head.w"] = np.zeros((2, 2))
        with pytest.raises(ValueError, match="shape"):
            adam_step(params, grads, AdamState.zeros(params), TrainConfig())


class TestTrainConfig:
    def test_defaults_follow_reference_schedule(self):
        cfg = TrainConfig()
        assert cfg.learning_rate == 1e-4
        assert cfg.batch_size == 64
        assert cfg.epochs == 20

    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=1)
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)


def tiny_dataset(n=64, width=6, seed=0):
    rng = np.random.default_rng(seed)
    xs = rng.normal(size=(n, width))
    ys = (xs[:, 0] > 0).astype(int)
    return [TrainSample(x=x, y=int(y)) for x, y in zip(xs, ys)]


TINY_ARCH = NetworkArch(input_dim=6, hidden_dim=16, n_residual_blocks=1, dropout_rate=0.1)


class TestTrainLoop:
    def test_deterministic_checkpoints(self):
        data = tiny_dataset()
        cfg = TrainConfig(batch_size=16, epochs=3, seed=11)
        p1, h1 = train(data, data[:16], cfg, TINY_ARCH)
        p2, h2 = train(data, data[:16], cfg, TINY_ARCH)
        for name in p1.tensors:
            assert np.array_equal(p1.tensors[name], p2.tensors[name])
        assert [e.train_loss for e in h1] == [e.train_loss for e in h2]
        assert [e.val_ap for e in h1] == [e.val_ap for e in h2]

    def test_rejects_single_class(self):
        data = [TrainSample(x=np.zeros(6), y=1) for _ in range(8)]
        with pytest.raises(ValueError, match="both classes"):
            train(data, [], TrainConfig(), TINY_ARCH)

    def test_rejects_empty(self):
        with pytest.raises(ValueError, match="empty"):
            train([], [], TrainConfig(), TINY_ARCH)

    def test_loss_finite_every_epoch(self):
        data = tiny_dataset(128)
        _, history = train(data, [], TrainConfig(batch_size=32, epochs=4, seed=0), TINY_ARCH)
        assert len(history) == 4
        assert all(math.isfinite(e.train_loss) for e in history)
        assert all(e.elapsed_ms >= 0 for e in history)

    def test_short_final_batch_dropped_when_single_row(self):
        # 65 samples at batch 64 leave a 1-row tail that cannot feed batch
        # norm; the epoch must still run on the first 64.
        data = tiny_dataset(65)
        _, history = train(data, [], TrainConfig(batch_size=64, epochs=1, seed=0), TINY_ARCH)
        assert math.isfinite(history[0].train_loss)

    def test_epoch_callback_sees_every_epoch(self):
        seen = []
        data = tiny_dataset()
        train(
            data,
            [],
            TrainConfig(batch_size=32, epochs=3, seed=0),
            TINY_ARCH,
            epoch_callback=lambda epoch, params: seen.append(epoch),
        )
        assert seen == [1, 2, 3]

    def test_history_jsonl_schema(self, tmp_path):
        data = tiny_dataset()
        _, history = train(data, data[:16], TrainConfig(batch_size=32, epochs=2, seed=0), TINY_ARCH)
        path = tmp_path / "history.jsonl"
        write_history(history, path)
        lines = path.read_text().splitlines()
        assert len(lines) == 2
        entry = json.loads(lines[0])
        assert set(entry) == {"epoch", "train_loss", "val_ap", "elapsed_ms"}


class TestTrainOnSeparableSet:
    def test_loss_collapses_within_20_epochs(self, separable_samples):
        # The noise-free generator is separable through the facial
        # confidence channels; a dropout-free run at the reference schedule
        # must push the train loss well below chance.
        arch = NetworkArch(input_dim=51, dropout_rate=0.0)
        params, history = train(
            separable_samples[Split.TRAIN],
            separable_samples[Split.VAL],
            TrainConfig(seed=0),
            arch,
        )
        assert history[-1].train_loss < 0.1 * math.log(2)
        assert history[-1].val_ap >= 0.95


class TestSaliency:
    def test_zeroed_stem_gives_zero_impact(self):
        arch = NetworkArch(input_dim=51)
        params = net.init_network(arch, 0)
        params.tensors["stem.fc.w"][:] = 0.0
        data = tiny_dataset(16, width=51)
        report = saliency(params, data, Subset.FULL)
        assert np.all(report.impact == 0.0)
        assert np.all(report.impact_normalized == 0.0)

    def test_nonnegative_and_normalized(self):
        params = net.init_network(NetworkArch(input_dim=51), 1)
        report = saliency(params, tiny_dataset(32, width=51), Subset.FULL)
        assert np.all(report.impact >= 0.0)
        assert report.impact_normalized.max() == pytest.approx(1.0)
        assert len(report.keypoint_names) == 17

    def test_permutation_equivariance(self):
        # Permuting keypoint channels in both the data and the stem weight
        # columns permutes the reported impacts identically.
        arch = NetworkArch(input_dim=51)
        params = net.init_network(arch, 2)
        data = tiny_dataset(24, width=51)
        base = saliency(params, data, Subset.FULL)

        kp_perm = np.random.default_rng(0).permutation(17)
        col_perm = np.concatenate([[3 * k, 3 * k + 1, 3 * k + 2] for k in kp_perm])
        permuted_params = params.copy()
        permuted_params.tensors["stem.fc.w"] = params.tensors["stem.fc.w"][:, col_perm]
        permuted_data = [TrainSample(x=s.x[col_perm], y=s.y) for s in data]
        permuted = saliency(permuted_params, permuted_data, Subset.FULL)
        assert np.allclose(permuted.impact, base.impact[kp_perm], atol=1e-12)

    def test_head_dominates_after_training_on_head_driven_labels(self, converged_model, separable_samples):
        params, _ = converged_model
        report = saliency(params, separable_samples[Split.TRAIN], Subset.FULL)
        head = report.impact[:5].sum()
        body = report.impact[5:].sum()
        assert head > body

    def test_csv_shape(self):
        params = net.init_network(NetworkArch(input_dim=15), 1)
        data = tiny_dataset(8, width=15)
        report = saliency(params, data, Subset.HEAD)
        lines = report.to_csv().strip().splitlines()
        assert lines[0] == "keypoint_name,impact,impact_normalized"
        assert len(lines) == 6
        assert lines[1].startswith("nose,")

    def test_width_mismatch_rejected(self):
        params = net.init_network(NetworkArch(input_dim=15), 1)
        with pytest.raises(ValueError, match="width"):
            saliency(params, tiny_dataset(8, width=51), Subset.FULL)

    def test_empty_dataset_rejected(self):
        params = net.init_network(NetworkArch(input_dim=15), 1)
        with pytest.raises(ValueError, match="empty"):
            saliency(params, [], Subset.HEAD)
