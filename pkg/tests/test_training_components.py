"""
Tests for the latent moment tracker, the augmented pool and the multiscale bank
"""

import pytest
import torch

from core.random import make_generator
from training.augmented import AugmentedPool, simulate_pool_lifetimes
from training.latent_tracker import LatentMomentTracker
from training.multiscale import multiscale_assign, p_sampled_levels
from training.objectives import ObjectiveMode
from utils.config import TrainConfig
from utils.errors import ConfigError, DataError, ShapeError


class TestLatentMomentTracker:
    def test_first_update_adopts_batch(self):
        tracker = LatentMomentTracker(2)
        z = torch.tensor([[0.0, 1.0], [2.0, 3.0], [4.0, 2.0]])
        tracker.update(z)
        assert torch.allclose(tracker.mean, z.mean(dim=0))
        assert torch.allclose(tracker.cov, torch.cov(z.T))

    def test_moving_average(self):
        tracker = LatentMomentTracker.standard_normal(2)
        tracker.update(torch.tensor([[1.0, 1.0], [1.0, 1.0]]))
        assert torch.allclose(tracker.mean, torch.full((2,), 0.001))
        assert torch.allclose(tracker.cov, 0.999 * torch.eye(2))

    def test_standard_normal_sampling(self):
        tracker = LatentMomentTracker.standard_normal(3)
        z = tracker.sample(50_000, make_generator(0, "gen"))
        assert z.mean(dim=0).abs().max().item() < 0.03
        assert torch.allclose(torch.cov(z.T), torch.eye(3), atol=0.03)

    def test_fixed_seed_same_samples(self):
        tracker = LatentMomentTracker.standard_normal(4)
        a = tracker.sample(5, make_generator(1, "gen"))
        b = tracker.sample(5, make_generator(1, "gen"))
        assert torch.equal(a, b)

    def test_singular_covariance_gets_jitter(self):
        tracker = LatentMomentTracker(2)
        tracker.set_moments(torch.zeros(2), torch.tensor([[1.0, 1.0], [1.0, 1.0]]))
        factor = tracker.cholesky()
        assert torch.isfinite(factor).all()

    def test_indefinite_covariance_fails(self):
        tracker = LatentMomentTracker(2)
        tracker.set_moments(torch.zeros(2), torch.tensor([[1.0, 0.0], [0.0, -1.0]]))
        with pytest.raises(DataError):
            tracker.cholesky()

    def test_needs_updates(self):
        with pytest.raises(DataError):
            LatentMomentTracker(2).sample(1)

    def test_shape_checks(self):
        tracker = LatentMomentTracker(2)
        with pytest.raises(ShapeError):
            tracker.update(torch.zeros(4, 3))
        with pytest.raises(DataError):
            tracker.update(torch.zeros(1, 2))

    def test_state_round_trip(self):
        tracker = LatentMomentTracker(2)
        tracker.update(torch.tensor([[0.0, 1.0], [2.0, 5.0], [1.0, 1.0]]))
        restored = LatentMomentTracker(2)
        restored.load_state_dict(tracker.state_dict())
        assert torch.equal(restored.mean, tracker.mean)
        assert torch.equal(restored.cov, tracker.cov)
        assert restored.updates == 1


class TestAugmentedPool:
    @pytest.mark.parametrize("p_sampled", [1 / 8, 1 / 5, 1 / 3, 1 / 2, 1.0])
    def test_mean_lifetime(self, p_sampled):
        lifetime = simulate_pool_lifetimes(p_sampled, steps=20_000, size=64,
                                           generator=make_generator(0, "pool"))
        assert lifetime == pytest.approx(1 / p_sampled, rel=0.02)

    def test_full_reset_every_step(self):
        pool = AugmentedPool(2, 1.0)
        batch = torch.tensor([[1.0], [2.0], [3.0]])
        pool.initialize(batch, 0, make_generator(0, "pool"))
        n_reset = pool.replace(batch, torch.full((2, 1), 9.0), 1, make_generator(1, "pool"))
        assert n_reset == 2
        assert not (pool.latents == 9.0).any()

    def test_entries_follow_variants_without_resets(self):
        pool = AugmentedPool(3, 1e-9)
        batch = torch.arange(4.0).unsqueeze(1)
        pool.initialize(batch, 0, make_generator(0, "pool"))
        variants = torch.full((3, 1), 7.0)
        assert pool.replace(batch, variants, 1, make_generator(1, "pool")) == 0
        assert torch.equal(pool.latents, variants)

    def test_forced_resets(self):
        pool = AugmentedPool(2, 1e-9)
        batch = torch.tensor([[1.0], [2.0]])
        pool.initialize(batch, 0, make_generator(0, "pool"))
        forced = torch.tensor([True, False])
        pool.replace(batch, torch.full((2, 1), 9.0), 1, make_generator(1, "pool"), force_reset=forced)
        assert pool.latents[0].item() in (1.0, 2.0)
        assert pool.latents[1].item() == 9.0

    def test_initialized_from_distinct_batch_rows(self):
        pool = AugmentedPool(4, 0.2)
        batch = torch.arange(4.0).unsqueeze(1)
        pool.initialize(batch, 0, make_generator(0, "pool"))
        assert sorted(pool.latents.squeeze(1).tolist()) == [0.0, 1.0, 2.0, 3.0]

    def test_pool_larger_than_batch(self):
        pool = AugmentedPool(5, 0.2)
        with pytest.raises(DataError):
            pool.initialize(torch.zeros(3, 1), 0)

    def test_bad_settings(self):
        with pytest.raises(ConfigError):
            AugmentedPool(0, 0.5)
        with pytest.raises(ConfigError):
            AugmentedPool(4, 0.0)


class TestMultiscale:
    def test_linear_spacing(self):
        bank = multiscale_assign(TrainConfig(multiscale="linear", n_kl_weight=32), 4)
        assert len(bank) == 32
        assert bank.weights(bank.levels[0], 0.64).beta == pytest.approx(0.02)
        assert bank.weights(bank.levels[31], 0.64).beta == pytest.approx(0.64)
        assert bank.levels[5].beta == pytest.approx(6 / 32)

    def test_geometric_spacing(self):
        bank = multiscale_assign(TrainConfig(multiscale="geometric", n_kl_weight=32, ratio=0.9), 4)
        assert bank.levels[0].beta == pytest.approx(0.9 ** 31)
        assert bank.levels[0].beta == pytest.approx(0.03817, abs=1e-5)
        assert bank.levels[31].beta == pytest.approx(1.0)

    def test_capacity_levels(self):
        bank = multiscale_assign(TrainConfig(multiscale="capacity", capacity_min=10, capacity_increment=0.5), 4)
        assert bank.mode == ObjectiveMode.CAPACITY
        assert bank.levels[0].capacity == pytest.approx(10.0)
        assert bank.levels[31].capacity == pytest.approx(25.5)
        weights = bank.weights(bank.levels[31], 0.64)
        assert weights.capacity == pytest.approx(25.5)
        assert weights.gamma == 128.0

    def test_inverted_mode(self):
        bank = multiscale_assign(TrainConfig(multiscale="inverted", n_kl_weight=4), 4)
        assert bank.mode == ObjectiveMode.INVERTED

    @pytest.mark.parametrize("mode", ["linear", "geometric", "capacity"])
    def test_levels_ordered_with_distinct_networks(self, mode):
        bank = multiscale_assign(TrainConfig(multiscale=mode, n_kl_weight=8), 3, make_generator(0, "init"))
        betas = [level.beta for level in bank.levels]
        assert betas == sorted(betas)
        assert len({id(level.stddev) for level in bank.levels}) == 8
        assert len(list(bank.stddev_networks.parameters())) == 8 * 8

    def test_round_robin_levels(self):
        bank = multiscale_assign(TrainConfig(multiscale="linear", n_kl_weight=4), 2)
        assert [bank.level_for_step(t).index for t in range(6)] == [0, 1, 2, 3, 0, 1]

    def test_off_is_single_level(self):
        bank = multiscale_assign(TrainConfig(), 4)
        assert len(bank) == 1
        assert bank.weights(bank.levels[0], 0.384).beta == pytest.approx(0.384)

    def test_non_positive_beta_max(self):
        bank = multiscale_assign(TrainConfig(multiscale="linear", n_kl_weight=2), 2)
        with pytest.raises(ValueError):
            bank.weights(bank.levels[0], 0.0)

    def test_p_sampled_spacing(self):
        linear = p_sampled_levels(TrainConfig(p_sampled_spacing="linear", p_min=0.2, p_max=1.0), 4)
        assert linear == pytest.approx([0.4, 0.6, 0.8, 1.0])
        geometric = p_sampled_levels(TrainConfig(p_sampled_spacing="geometric", p_min=0.2, p_max=1.0), 4)
        assert geometric[-1] == pytest.approx(1.0)
        assert all(a < b for a, b in zip(geometric, geometric[1:]))
        assert p_sampled_levels(TrainConfig(p_sampled=0.3), 3) == [0.3, 0.3, 0.3]
