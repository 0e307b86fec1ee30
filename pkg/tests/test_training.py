"""Tests for the optimizer step, schedule and pretraining loop."""

import math

from unittest.mock import MagicMock

import numpy as np
import pytest
import torch

from src.core.errors import MissingInputError, NumericalAbort, NumericalError, ShapeError
from src.models.training import MaskStrategyConfig, OptimizerConfig, TrainConfig
from src.network import EmimModel
from src.services import training
from src.services.masking import RandomMaskGenerator
from src.services.training import (
    PretrainService,
    adam_step,
    build_optimizer,
    build_scheduler,
    evaluate_reconstruction,
    lr_at,
)


@pytest.fixture
def train_config(small_encoder_config):
    return TrainConfig(
        encoder=small_encoder_config,
        total_steps=4,
        eval_every=2,
        batch_size=4,
        probe_size=4,
        eval_draws=50,
        seed=0,
    )


def _reference_adamw(param, grads, lr, betas, eps, weight_decay):
    """Plain numpy AdamW with bias correction, one update per gradient."""
    b1, b2 = betas
    m = np.zeros_like(param)
    v = np.zeros_like(param)
    for t, g in enumerate(grads, start=1):
        param = param * (1 - lr * weight_decay)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        denom = np.sqrt(v) / math.sqrt(1 - b2**t) + eps
        param = param - (lr / (1 - b1**t)) * m / denom
    return param


class TestSchedule:
    def test_warmup_is_linear(self):
        assert lr_at(0, 1.0, 10, 100) == pytest.approx(0.1)
        assert lr_at(4, 1.0, 10, 100) == pytest.approx(0.5)
        assert lr_at(9, 1.0, 10, 100) == pytest.approx(1.0)

    def test_cosine_decay(self):
        assert lr_at(10, 2.0, 10, 110) == pytest.approx(2.0)
        assert lr_at(60, 2.0, 10, 110) == pytest.approx(1.0)
        assert lr_at(110, 2.0, 10, 110) == pytest.approx(0.0, abs=1e-12)

    def test_no_warmup(self):
        assert lr_at(0, 1.0, 0, 10) == pytest.approx(1.0)

    def test_default_warmup_is_ten_percent(self):
        assert TrainConfig(total_steps=15).warmup_steps == 2
        assert TrainConfig(total_steps=2000).warmup_steps == 200

    def test_scheduler_applies_factor(self):
        param = torch.nn.Parameter(torch.zeros(1, dtype=torch.float64))
        optimizer = build_optimizer([param], OptimizerConfig(learning_rate=0.5))
        build_scheduler(optimizer, warmup_steps=5, total_steps=50)
        assert optimizer.param_groups[0]["lr"] == pytest.approx(0.1)


class TestAdamStep:
    def _optimizer(self, param, **overrides):
        config = OptimizerConfig(weight_decay=0.0, **overrides)
        return build_optimizer([param], config)

    def test_zero_gradient_leaves_parameters(self):
        param = torch.nn.Parameter(torch.tensor([0.3, -1.2], dtype=torch.float64))
        optimizer = self._optimizer(param)
        adam_step(optimizer, [param], [torch.zeros(2, dtype=torch.float64)])
        assert param.tolist() == [0.3, -1.2]

    def test_first_step_moves_by_learning_rate(self):
        param = torch.nn.Parameter(torch.tensor([1.0, 1.0], dtype=torch.float64))
        optimizer = self._optimizer(param, learning_rate=0.01)
        adam_step(optimizer, [param], [torch.tensor([2.0, -0.5], dtype=torch.float64)])
        np.testing.assert_allclose(param.detach().numpy(), [0.99, 1.01], atol=1e-8)

    def test_matches_reference_trace(self):
        rng = np.random.default_rng(0)
        start = rng.normal(size=5)
        grads = [rng.normal(size=5) for _ in range(10)]
        config = OptimizerConfig(learning_rate=0.01, weight_decay=0.05)
        param = torch.nn.Parameter(torch.from_numpy(start.copy()))
        optimizer = build_optimizer([param], config)
        for g in grads:
            adam_step(optimizer, [param], [torch.from_numpy(g)])
        expected = _reference_adamw(
            start, grads, 0.01, (config.beta1, config.beta2), config.eps, 0.05
        )
        np.testing.assert_allclose(param.detach().numpy(), expected, rtol=0, atol=1e-12)

    def test_rejects_mismatched_gradients(self):
        param = torch.nn.Parameter(torch.zeros(2, dtype=torch.float64))
        optimizer = self._optimizer(param)
        with pytest.raises(ShapeError):
            adam_step(optimizer, [param], [torch.zeros(3, dtype=torch.float64)])
        with pytest.raises(ShapeError):
            adam_step(optimizer, [param], [])


class TestPretrain:
    def test_run_log_layout(self, train_config, labelled_dataset):
        result = PretrainService(train_config).pretrain(labelled_dataset)
        log = result.run_log
        assert [s.step for s in log.steps] == [0, 1, 2, 3]
        assert [e.step for e in log.evals] == [0, 2, 4]
        assert all(len(e.top_singular_values) == 5 for e in log.evals)
        assert all(s.l_pbt_total > 0 for s in log.steps)

    def test_runs_are_reproducible(self, train_config, labelled_dataset):
        first = PretrainService(train_config).pretrain(labelled_dataset)
        second = PretrainService(train_config).pretrain(labelled_dataset)
        assert first.run_log == second.run_log
        state = second.model.state_dict()
        assert all(torch.equal(v, state[k]) for k, v in first.model.state_dict().items())

    def test_zero_learning_rate_freezes_model(self, train_config, labelled_dataset):
        config = train_config.model_copy(
            update={
                "optimizer": OptimizerConfig(learning_rate=0.0),
                "mask": MaskStrategyConfig(ratio=1.0),
                "batch_size": len(labelled_dataset),
            }
        )
        result = PretrainService(config).pretrain(labelled_dataset)
        fresh = EmimModel(config.encoder).state_dict()
        state = result.model.state_dict()
        assert all(torch.equal(v, state[k]) for k, v in fresh.items())
        overall = {s.l_overall for s in result.run_log.steps}
        assert len(overall) == 1

    def test_pbt_disabled_logs_zero(self, train_config, labelled_dataset):
        config = train_config.model_copy(update={"pbt_enabled": False})
        result = PretrainService(config).pretrain(labelled_dataset)
        assert all(s.l_pbt_total == 0.0 for s in result.run_log.steps)
        assert all(s.l_overall == s.l_mim for s in result.run_log.steps)

    def test_numerical_abort_reports_step(self, train_config, labelled_dataset, monkeypatch):
        real = training.compute_losses
        calls = {"count": 0}

        def failing(*args, **kwargs):
            calls["count"] += 1
            if calls["count"] == 3:
                raise NumericalError("non-finite loss component")
            return real(*args, **kwargs)

        monkeypatch.setattr(training, "compute_losses", failing)
        with pytest.raises(NumericalAbort) as excinfo:
            PretrainService(train_config).pretrain(labelled_dataset)
        assert excinfo.value.step == 2

    def test_loads_from_repository(self, train_config, labelled_dataset, tmp_path):
        repo = MagicMock()
        repo.load.return_value = labelled_dataset
        config = train_config.model_copy(update={"dataset_dir": tmp_path, "total_steps": 1})
        PretrainService(config, dataset_repo=repo).pretrain()
        repo.load.assert_called_once_with(tmp_path)

    def test_missing_dataset(self, train_config):
        with pytest.raises(MissingInputError):
            PretrainService(train_config).pretrain()

    def test_rejects_shape_mismatch(self, tiny_encoder_config, labelled_dataset):
        config = TrainConfig(encoder=tiny_encoder_config, total_steps=1)
        with pytest.raises(ShapeError):
            PretrainService(config).pretrain(labelled_dataset)


class TestEvaluateReconstruction:
    def test_deterministic_and_finite(self, small_encoder_config, small_dataset):
        model = EmimModel(small_encoder_config)
        generator = RandomMaskGenerator(ratio=0.5)
        first = evaluate_reconstruction(model, small_dataset, generator, np.random.default_rng(0))
        second = evaluate_reconstruction(model, small_dataset, generator, np.random.default_rng(0))
        assert first == second
        assert math.isfinite(first) and first > 0
