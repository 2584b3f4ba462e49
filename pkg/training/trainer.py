"""
Training loop for Record Weaver
Scheduled VAE steps, augmented and multiscale training, evaluation series and checkpoints
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import torch

from core.diff import backward, clip_global_norm
from core.parameters import OptimizerSettings, ParameterStore, load_checkpoint, save_checkpoint
from core.random import make_generator, make_numpy_rng
from generators.sampler import generate
from generators.schema_compiler import (ModelPlan, Schema, compile_schema, parse_schema, print_schema,
                                        schema_hash)
from metrics.text_metrics import MalformedRecord
from models.record_model import RecordModel, build_record_model, vocabulary_corpus
from models.vocabulary import Vocabulary
from training.augmented import AugmentedPool
from training.latent_tracker import LatentMomentTracker
from training.multiscale import Level, MultiscaleBank, multiscale_assign
from training.objectives import LossReport, ObjectiveWeights, generated_loss_eval, vae_loss
from training.schedules import beta_max_schedule, beta_schedule, decoder_modes
from utils.config import RunConfig, TrainConfig, config_to_dict
from utils.errors import CheckpointError, ConfigError, NonFiniteError

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1
EVAL_SPLITS = ("train", "test")
METRIC_COLUMNS = ("step", "split", "loss", "bpc", "kl", "beta", "p_gt", "level")
TRACE_COLUMNS = ("step", "loss", "recon", "kl", "beta", "p_gt", "lr", "level", "batch")


def optimizer_settings(cfg: TrainConfig) -> OptimizerSettings:
    return OptimizerSettings(
        learning_rate=cfg.learning_rate,
        beta1=cfg.adam_beta1,
        beta2=cfg.adam_beta2,
        epsilon=cfg.adam_epsilon,
        decay_rate=cfg.decay_rate,
        decay_steps=cfg.decay_steps,
    )


def build_plan(schema: Schema, config: RunConfig) -> ModelPlan:
    model_cfg = config.model
    return compile_schema(schema, model_cfg.latent_dim, model_cfg.variant, model_cfg.omit_fields,
                          model_cfg.state_dim)


@dataclass
class TrainedModel:
    """Everything generation and evaluation need from a checkpoint"""

    model: RecordModel
    bank: MultiscaleBank
    tracker: LatentMomentTracker
    schema: Schema
    config: RunConfig
    step: int

    @property
    def plan(self) -> ModelPlan:
        return self.model.plan

    def eval_weights(self, step: Optional[int] = None) -> ObjectiveWeights:
        return level_weights(self.config.train, self.bank, self.bank.levels[0], self.step if step is None else step)


def sampling_tracker(tracker: LatentMomentTracker) -> LatentMomentTracker:
    """The tracker itself, or the N(0, I) prior when it has never been updated"""
    if tracker.updates > 0:
        return tracker
    logger.warning("Latent tracker has no updates; sampling from the prior")
    return LatentMomentTracker.standard_normal(tracker.dim)


def level_weights(cfg: TrainConfig, bank: MultiscaleBank, level: Level, step: int) -> ObjectiveWeights:
    """Objective weights of a level at a step; the single level of plain training follows beta_schedule"""
    if cfg.multiscale == "off":
        return ObjectiveWeights(beta=beta_schedule(cfg, step))
    return bank.weights(level, beta_max_schedule(cfg, step))


class VAETrainer:
    """
    Single-writer training loop

    Batch t trains multiscale level t mod n with that level's stddev network.
    Real records update the scalar statistics and the latent moment tracker;
    augmented variants only contribute to the loss.
    """

    def __init__(self, config: RunConfig, schema: Schema, train_records: Sequence[Dict],
                 test_records: Sequence[Dict] = (), vocab: Optional[Vocabulary] = None):
        self.config = config
        self.cfg = config.train
        self.schema = schema
        self.plan = build_plan(schema, config)
        self.train_records = list(train_records)
        self.test_records = list(test_records)
        if self.cfg.n_augmented > self.cfg.batch_size:
            raise ConfigError(f"n_augmented ({self.cfg.n_augmented}) exceeds batch_size ({self.cfg.batch_size})")
        if vocab is None:
            vocab = Vocabulary.build(vocabulary_corpus(self.plan, self.train_records + self.test_records))
        self.vocab = vocab

        seed = config.seed
        self.model = build_record_model(self.plan, vocab, seed, schema.field_names, config.model.max_len)
        self.bank = multiscale_assign(self.cfg, self.plan.latent_dim, make_generator(seed, "stddev"))
        settings = optimizer_settings(self.cfg)
        self.model_store = ParameterStore.from_modules({"model": self.model}, settings)
        self.level_stores = [ParameterStore.from_modules({f"level{level.index}": level.stddev}, settings)
                             for level in self.bank.levels]
        self.tracker = LatentMomentTracker(self.plan.latent_dim, self.cfg.latent_decay)
        self.pools: Dict[int, AugmentedPool] = {}

        self.train_rng = make_generator(seed, "train")
        self.pool_rng = make_generator(seed, "pool")
        self.batch_rng = make_numpy_rng(seed, "batches")
        self._order: np.ndarray = np.empty(0, dtype=int)
        self._cursor = 0

        self.step = 0
        self.metrics: List[Dict[str, Any]] = []
        self.trace: List[Dict[str, Any]] = []
        if len(self.train_records) >= 2:
            self.model.seed_stats(self.train_records)
        logger.info("Trainer ready: %s variant, %d train / %d test records, vocabulary of %d symbols",
                    self.plan.variant.value, len(self.train_records), len(self.test_records), vocab.size)

    def next_batch(self) -> List[Dict]:
        """Batch of real records from a reshuffled pass over the training split"""
        size = min(self.cfg.batch_size, len(self.train_records))
        if self._cursor + size > len(self._order):
            self._order = self.batch_rng.permutation(len(self.train_records))
            self._cursor = 0
        indices = self._order[self._cursor : self._cursor + size]
        self._cursor += size
        return [self.train_records[i] for i in indices]

    def weights_for(self, level: Level, step: int) -> ObjectiveWeights:
        return level_weights(self.cfg, self.bank, level, step)

    def augmenting(self, step: int) -> bool:
        return self.cfg.n_augmented > 0 and step >= self.cfg.gen_start_step

    def _pool(self, level: Level) -> AugmentedPool:
        if level.index not in self.pools:
            self.pools[level.index] = AugmentedPool(self.cfg.n_augmented, level.p_sampled or self.cfg.p_sampled)
        return self.pools[level.index]

    def _optimize(self, report: LossReport, level: Level, step: int) -> float:
        level_store = self.level_stores[level.index]
        parameters = {**self.model_store.parameters, **level_store.parameters}
        grads = clip_global_norm(backward(report.total, parameters), self.cfg.clip_norm)
        lr = self.model_store.adam_step({k: grads[k] for k in self.model_store.parameters}, step)
        level_store.adam_step({k: grads[k] for k in level_store.parameters}, step)
        return lr

    def _run(self, batch: Sequence[Dict], step: int, variants: Sequence = ()) -> LossReport:
        level = self.bank.level_for_step(step)
        weights = self.weights_for(level, step)
        modes = decoder_modes(self.cfg, step)
        records = list(batch) + list(variants)
        try:
            report = vae_loss(self.model, records, weights, level.stddev, modes, self.train_rng,
                              field_weights=self.cfg.field_weights, skew_in_average=self.cfg.skew_in_average)
            lr = self._optimize(report, level, step)
        except NonFiniteError as e:
            logger.error("Aborting at step %d (level %d, beta %.5g, p_gt %.3f): %s",
                         step, level.index, weights.beta, modes.string_p_gt, e)
            raise

        real_z = report.latents[: len(batch)]
        self.model.update_stats(batch)
        if not self.cfg.tracker_lowest_level_only or level.index == 0:
            self.tracker.update(real_z)

        self.trace.append({
            "step": step, "loss": report.loss, "recon": report.recon_avg, "kl": report.kl,
            "beta": weights.beta, "p_gt": modes.string_p_gt, "lr": lr, "level": level.index,
            "batch": len(records),
        })
        if step % self.cfg.log_every == 0:
            logger.info("step %d loss %.5f recon %.5f kl %.4f beta %.5g p_gt %.3f lr %.3g level %d",
                        step, report.loss, report.recon_avg, report.kl, weights.beta,
                        modes.string_p_gt, lr, level.index)
        return report

    def train_step(self, batch: Sequence[Dict], step: int) -> LossReport:
        """Forward, backward, clip and Adam on one batch of real records"""
        return self._run(batch, step)

    def augmented_step(self, batch: Sequence[Dict], step: int) -> LossReport:
        """
        Train on the batch plus one generated variant per pool entry

        The first augmented step of a level only fills its pool from the batch's
        sampled latents. Afterwards the pool advances with AugmentedPool.replace.
        """
        level = self.bank.level_for_step(step)
        pool = self._pool(level)
        if not pool.initialized:
            report = self._run(batch, step)
            pool.initialize(report.latents[: len(batch)], step, self.pool_rng)
            return report

        with torch.no_grad():
            decoded = self.model.decode(pool.latents, self.train_rng)
        usable = torch.tensor([not isinstance(r, MalformedRecord) for r in decoded])
        variants = [r for r in decoded if not isinstance(r, MalformedRecord)]
        report = self._run(batch, step, variants)

        variant_z = torch.zeros_like(pool.latents)
        variant_z[usable] = report.latents[len(batch):].to(variant_z.dtype)
        pool.replace(report.latents[: len(batch)], variant_z, step, self.pool_rng, force_reset=~usable)
        return report

    def _sample(self, records: Sequence[Dict], size: int, rng: np.random.Generator) -> List[Dict]:
        if len(records) <= size:
            return list(records)
        return [records[i] for i in rng.choice(len(records), size=size, replace=False)]

    def evaluate(self, step: int) -> List[Dict[str, Any]]:
        """
        Teacher-forced losses on train and test samples plus the generated loss

        Uses the lowest level's stddev network and beta.
        """
        level = self.bank.levels[0]
        weights = self.weights_for(level, step)
        p_gt = decoder_modes(self.cfg, step).string_p_gt
        rng = make_numpy_rng(self.config.seed, f"eval:{step}")
        generator = make_generator(self.config.seed, f"eval:{step}")
        rows = []
        splits = {"train": self.train_records, "test": self.test_records}
        for split in EVAL_SPLITS:
            records = self._sample(splits[split], self.cfg.eval_batch_size, rng)
            if len(records) == 0:
                continue
            report = vae_loss(self.model, records, weights, level.stddev, generator=generator,
                              field_weights=self.cfg.field_weights,
                              skew_in_average=self.cfg.skew_in_average, train=False)
            rows.append(self._row(step, split, report, p_gt, level.index))

        generated = generate(self.model, sampling_tracker(self.tracker), generator,
                             self.cfg.generated_eval_size)
        report = generated_loss_eval(self.model, generated, weights, level.stddev, generator,
                                     self.cfg.field_weights, self.cfg.skew_in_average)
        if report is not None:
            rows.append(self._row(step, "generated", report, p_gt, level.index))
        self.metrics.extend(rows)
        return rows

    @staticmethod
    def _row(step: int, split: str, report: LossReport, p_gt: float, level: int) -> Dict[str, Any]:
        return {"step": step, "split": split, "loss": report.loss, "bpc": report.bpc, "kl": report.kl,
                "beta": report.beta, "p_gt": p_gt, "level": level}

    def fit(self) -> List[Dict[str, Any]]:
        """Run to cfg.steps, evaluating at step 0, every eval_every steps and at the end"""
        if self.step == 0 and self.train_records:
            self.evaluate(0)
        for step in range(self.step, self.cfg.steps):
            batch = self.next_batch()
            if self.augmenting(step):
                self.augmented_step(batch, step)
            else:
                self.train_step(batch, step)
            self.step = step + 1
            if self.step % self.cfg.eval_every == 0 or self.step == self.cfg.steps:
                self.evaluate(self.step)
        return self.metrics

    def loss_trace(self) -> List[float]:
        return [row["loss"] for row in self.trace]

    def checkpoint_payload(self) -> Dict[str, Any]:
        return {
            "format": CHECKPOINT_FORMAT,
            "step": self.step,
            "schema_text": print_schema(self.schema),
            "schema_hash": schema_hash(self.schema),
            "variant": self.plan.variant.value,
            "omit_fields": list(self.plan.omit_fields),
            "vocab": self.vocab.to_list(),
            "config": config_to_dict(self.config),
            "model": self.model.state_dict(),
            "bank": self.bank.state_dict(),
            "tracker": self.tracker.state_dict(),
            "optimizer": self.model_store.state_dict(),
            "level_optimizers": [store.state_dict() for store in self.level_stores],
        }

    def save(self, path: Path) -> Path:
        return save_checkpoint(path, self.checkpoint_payload())

    def trained(self) -> TrainedModel:
        return TrainedModel(self.model, self.bank, self.tracker, self.schema, self.config, self.step)


def load_trained_model(path: Path) -> TrainedModel:
    """
    Rebuild the model, level bank and tracker stored in a checkpoint

    The checkpoint's own schema and config echo are used, not the caller's.
    """
    payload = load_checkpoint(path)
    required = ("format", "schema_text", "vocab", "config", "model", "bank", "tracker", "step")
    missing = [key for key in required if key not in payload]
    if missing:
        raise CheckpointError(f"checkpoint {path} lacks {missing}")
    if payload["format"] != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unsupported checkpoint format {payload['format']}")

    config = RunConfig.model_validate(payload["config"])
    schema = parse_schema(payload["schema_text"])
    if schema_hash(schema) != payload.get("schema_hash", schema_hash(schema)):
        raise CheckpointError("checkpoint schema text does not match its hash")
    plan = build_plan(schema, config)
    if plan.variant.value != payload.get("variant", plan.variant.value):
        raise CheckpointError("checkpoint variant does not match its config")

    vocab = Vocabulary.from_list(payload["vocab"])
    model = RecordModel(plan, vocab, schema.field_names, max_len=config.model.max_len)
    bank = multiscale_assign(config.train, plan.latent_dim)
    tracker = LatentMomentTracker(plan.latent_dim, config.train.latent_decay)
    try:
        model.load_state_dict(payload["model"])
        bank.load_state_dict(payload["bank"])
        tracker.load_state_dict(payload["tracker"])
    except (RuntimeError, KeyError, ValueError) as e:
        raise CheckpointError(f"checkpoint {path} does not fit its own plan: {e}") from e
    model.eval()
    logger.info("Loaded %s model at step %d from %s", plan.variant.value, payload["step"], path)
    return TrainedModel(model, bank, tracker, schema, config, int(payload["step"]))
