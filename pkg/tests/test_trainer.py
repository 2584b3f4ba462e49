"""
Tests for the training loop, augmented and multiscale training, evaluation series and checkpoints
"""

import logging
import math

import pytest
import torch
import yaml

from connectors.splitter import load_splits
from core.random import make_generator
from generators.sampler import generate
from generators.schema_compiler import load_bundled_schema
from metrics.zip_stats import fit_zip_stats, record_pvalues, summarize_pvalues
from tests.conftest import CONFIG_DIR
from training.trainer import VAETrainer, build_plan, load_trained_model, sampling_tracker
from training.latent_tracker import LatentMomentTracker
from utils.config import RunConfig
from utils.errors import CheckpointError, ConfigError


def make_trainer(config, **train_updates):
    if train_updates:
        train = config.train.model_copy(update=train_updates)
        config = config.model_copy(update={"train": train})
    split = load_splits(config.data, config.seed)
    return VAETrainer(config, load_bundled_schema("address"), split.train, split.test)


def run_steps(trainer, steps):
    for step in range(steps):
        trainer.train_step(trainer.next_batch(), step)
        trainer.step = step + 1
    return trainer.loss_trace()


class TestTrainStep:
    def test_same_seed_same_trace(self, tiny_config):
        a = run_steps(make_trainer(tiny_config, steps=100), 100)
        b = run_steps(make_trainer(tiny_config, steps=100), 100)
        assert len(a) == 100
        assert a == b

    def test_loss_goes_down(self, tiny_config):
        trainer = make_trainer(tiny_config, steps=150, warmup_steps=0, beta_start=0.0, beta_mid=0.0,
                               beta_end=0.0, learning_rate=5e-3)
        trace = run_steps(trainer, 150)
        assert sum(trace[-10:]) / 10 < sum(trace[:10]) / 10

    def test_tracker_follows_sampled_latents(self, tiny_config):
        trainer = make_trainer(tiny_config)
        report = trainer.train_step(trainer.next_batch(), 0)
        assert trainer.tracker.updates == 1
        assert torch.allclose(trainer.tracker.mean, report.latents.mean(dim=0))

    def test_trace_rows(self, tiny_config):
        trainer = make_trainer(tiny_config)
        run_steps(trainer, 2)
        row = trainer.trace[-1]
        assert row["step"] == 1
        assert row["batch"] == 8
        assert row["lr"] == pytest.approx(2.5e-4 * 0.99 ** (1 / 1000))


class TestFit:
    def test_evaluation_series(self, tiny_config):
        trainer = make_trainer(tiny_config)
        metrics = trainer.fit()
        assert trainer.step == 10
        assert {row["step"] for row in metrics} == {0, 5, 10}
        assert {row["split"] for row in metrics} == {"train", "test", "generated"}
        assert all(math.isfinite(row["loss"]) for row in metrics)

    def test_zero_steps_only_evaluates(self, tiny_config):
        trainer = make_trainer(tiny_config, steps=0, warmup_steps=0)
        metrics = trainer.fit()
        assert trainer.trace == []
        assert {row["step"] for row in metrics} == {0}

    def test_untrained_tracker_falls_back_to_prior(self):
        tracker = sampling_tracker(LatentMomentTracker(3))
        assert torch.equal(tracker.cov, torch.eye(3))


class TestAugmentedTraining:
    def test_variants_join_the_batch(self, tiny_config):
        trainer = make_trainer(tiny_config, n_augmented=4, gen_start_step=2, p_sampled=0.5)
        trainer.fit()
        batches = [row["batch"] for row in trainer.trace]
        assert batches[:3] == [8, 8, 8]
        assert batches[3:] == [12] * 7
        assert trainer.pools[0].initialized

    def test_pool_larger_than_batch(self, tiny_config):
        with pytest.raises(ConfigError):
            make_trainer(tiny_config, n_augmented=9)


class TestMultiscaleTraining:
    def test_round_robin_levels(self, tiny_config):
        trainer = make_trainer(tiny_config, multiscale="linear", n_kl_weight=3, steps=6, warmup_steps=0,
                               beta_max_start=0.6, beta_max_end=0.6)
        run_steps(trainer, 6)
        assert [row["level"] for row in trainer.trace] == [0, 1, 2, 0, 1, 2]
        assert [row["beta"] for row in trainer.trace[:3]] == pytest.approx([0.2, 0.4, 0.6])

    def test_inactive_levels_do_not_move(self, tiny_config):
        trainer = make_trainer(tiny_config, multiscale="geometric", n_kl_weight=2)
        before = [p.detach().clone() for p in trainer.bank.levels[1].stddev.parameters()]
        trained_before = [p.detach().clone() for p in trainer.bank.levels[0].stddev.parameters()]
        trainer.train_step(trainer.next_batch(), 0)
        after = list(trainer.bank.levels[1].stddev.parameters())
        assert all(torch.equal(a, b) for a, b in zip(before, after))
        moved = list(trainer.bank.levels[0].stddev.parameters())
        assert any(not torch.equal(a, b) for a, b in zip(trained_before, moved))


class TestCheckpoint:
    def test_round_trip(self, tiny_config, tmp_path):
        trainer = make_trainer(tiny_config)
        run_steps(trainer, 3)
        path = trainer.save(tmp_path / "model.pt")
        loaded = load_trained_model(path)
        assert loaded.step == 3
        assert loaded.model.vocab == trainer.vocab
        assert torch.equal(loaded.tracker.mean, trainer.tracker.mean)
        records = trainer.train_records[:4]
        with torch.no_grad():
            assert torch.allclose(loaded.model.encode(records), trainer.model.encode(records))
        a = generate(loaded.model, loaded.tracker, make_generator(0, "g"), 5)
        b = generate(trainer.model, trainer.tracker, make_generator(0, "g"), 5)
        assert a == b

    def test_missing_checkpoint(self, tmp_path):
        with pytest.raises(CheckpointError, match="missing checkpoint"):
            load_trained_model(tmp_path / "absent.pt")

    def test_incomplete_checkpoint(self, tmp_path):
        torch.save({"format": 1}, tmp_path / "broken.pt")
        with pytest.raises(CheckpointError, match="lacks"):
            load_trained_model(tmp_path / "broken.pt")


@pytest.mark.parametrize("variant", ["pass_through", "text_concat"])
def test_other_variants_train(tiny_config, variant):
    config = tiny_config.model_copy(update={"model": tiny_config.model.model_copy(update={"variant": variant})})
    trainer = make_trainer(config, steps=3, warmup_steps=1)
    trainer.fit()
    assert len(trainer.trace) == 3
    assert all(math.isfinite(row["loss"]) for row in trainer.trace)


def _generated_pvalue_mean(trainer, table, n):
    records = generate(trainer.model, sampling_tracker(trainer.tracker),
                       make_generator(trainer.config.seed, "acceptance"), n)
    return summarize_pvalues(record_pvalues(records, table)).mean


@pytest.mark.slow
def test_toy_run_learns_the_data(toy_run_config, toy_acceptance):
    config = toy_run_config
    assert (config.data.toy.n_records, config.data.toy.n_zips) == (1000, 10)
    assert (config.model.latent_dim, config.model.state_dim) == (32, 32)
    assert (config.train.steps, config.train.batch_size) == (20000, 64)

    split = load_splits(config.data, config.seed)
    trainer = VAETrainer(config, load_bundled_schema("address"), split.train, split.test)
    table = fit_zip_stats(split.train)
    untrained = _generated_pvalue_mean(trainer, table, toy_acceptance["n_generated"])

    trainer.fit()
    trace = trainer.loss_trace()
    early = sum(trace[100:200]) / 100
    late = sum(trace[-100:]) / 100
    assert late <= (1 - toy_acceptance["loss_drop"]) * early

    trained = _generated_pvalue_mean(trainer, table, toy_acceptance["n_generated"])
    assert trained >= untrained + toy_acceptance["pvalue_gain"]

    series = {(row["step"], row["split"]) for row in trainer.metrics}
    for split_name in ("train", "test", "generated"):
        assert (config.train.steps, split_name) in series
    assert all(math.isfinite(row["bpc"]) for row in trainer.metrics)


class TestBuildPlan:
    def test_default_tuple_plan_is_quiet(self, tiny_config, caplog):
        assert tiny_config.model.omit_fields == []
        with caplog.at_level(logging.WARNING, logger="generators.schema_compiler"):
            plan = build_plan(load_bundled_schema("address"), tiny_config)
        assert plan.arity == 8
        assert "ignored" not in caplog.text

    @pytest.mark.parametrize("variant", ["pass_through", "text_concat"])
    def test_variant_configs_leave_out_empty_fields(self, variant):
        data = yaml.safe_load((CONFIG_DIR / f"toy_{variant}.yaml").read_text())
        config = RunConfig.model_validate(data)
        plan = build_plan(load_bundled_schema("address"), config)
        assert plan.omit_fields == ("unit", "district", "region")
