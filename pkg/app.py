"""
Record Weaver - Command Handlers
Ingest, fit, train, generate and evaluate schema-driven record VAEs
"""

import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Sequence

import numpy as np
import pandas as pd
import torch

from connectors.splitter import DatasetSplit, load_splits, write_split_cache
from core.random import make_generator, make_numpy_rng
from generators.sampler import generate, interpolate, repeated_encode_decode
from generators.schema_compiler import Schema, load_bundled_schema, load_schema
from metrics.text_metrics import MalformedRecord, mean_levenshtein_per_char, street_name_membership
from metrics.zip_stats import boxplot_summary, fit_zip_stats, record_pvalues, summarize_pvalues
from models.record_model import vocabulary_corpus
from models.vocabulary import Vocabulary
from training.objectives import generated_loss_eval, vae_loss
from training.trainer import (METRIC_COLUMNS, TRACE_COLUMNS, TrainedModel, VAETrainer, build_plan,
                              load_trained_model, sampling_tracker)
from utils.config import RunConfig
from utils.errors import (CheckpointError, ConfigError, OutputExistsError, RecordWeaverError,
                          SchemaError)
from utils.report_manager import ReportManager

logger = logging.getLogger(__name__)

COMMANDS: Dict[str, Callable[[RunConfig, ReportManager], Dict[str, Any]]] = {}
USAGE_ERRORS = (ConfigError, CheckpointError, OutputExistsError, SchemaError)
CHECKPOINT_NAME = "model.pt"
STREET_FIELD = "street"


def command(name: str):
    """Register a handler for a CLI command"""
    def register(handler):
        COMMANDS[name] = handler
        return handler
    return register


def load_model_schema(name: str) -> Schema:
    """A schema file path, or the name of a bundled schema"""
    path = Path(name)
    if path.suffix == ".schema" or path.exists():
        return load_schema(path)
    return load_bundled_schema(name)


def checkpoint_path(config: RunConfig) -> Path:
    if config.eval.checkpoint:
        return Path(config.eval.checkpoint)
    return Path(config.output.dir) / "train" / CHECKPOINT_NAME


def load_checkpointed(config: RunConfig) -> TrainedModel:
    path = checkpoint_path(config)
    if not path.exists():
        raise CheckpointError(f"missing checkpoint: {path}")
    return load_trained_model(path)


def _valid(records: Sequence) -> List[Dict]:
    return [r for r in records if not isinstance(r, MalformedRecord)]


def _sample(records: Sequence, size: int, rng: np.random.Generator) -> List:
    if len(records) <= size:
        return list(records)
    return [records[i] for i in rng.choice(len(records), size=size, replace=False)]


def _pvalue_rows(records: Sequence, pvalues: np.ndarray, zip_field: str) -> List[Dict[str, Any]]:
    rows = []
    for index, (record, p) in enumerate(zip(records, pvalues)):
        malformed = isinstance(record, MalformedRecord)
        rows.append({
            "index": index,
            "zip": "" if malformed else record.get(zip_field, ""),
            "pvalue": float(p),
            "malformed": record.reason if malformed else "",
        })
    return rows


@command("ingest")
def ingest(config: RunConfig, reports: ReportManager) -> Dict[str, Any]:
    """Load the configured data source and cache the split as JSONL"""
    split = load_splits(config.data, config.seed)
    paths = write_split_cache(split, reports.report_dir)
    reports.write_json("stats.json", {"sizes": split.sizes(), "source": config.data.source})
    return {
        'status': 'success',
        'message': f"Cached {sum(split.sizes().values())} records",
        'files': [str(p) for p in paths.values()],
    }


@command("stats")
def stats(config: RunConfig, reports: ReportManager) -> Dict[str, Any]:
    """Per-zip statistics of the training split and its p-value self-test"""
    split = load_splits(config.data, config.seed)
    table = fit_zip_stats(split.train)
    pvalues = record_pvalues(split.train, table)
    summary = summarize_pvalues(pvalues)

    reports.write_csv("zip_stats.csv", table.to_frame())
    reports.write_csv("pvalues.csv", _pvalue_rows(split.train, pvalues, table.zip_field))
    reports.write_json("stats.json", {"self_test": summary.to_dict(), "n_zips": len(table),
                                      "n_train": len(split.train)})
    logger.info("Self-test p-values: mean %.6f median %.6f stddev %.6f",
                summary.mean, summary.median, summary.stddev)
    return {'status': 'success', 'message': 'Statistics written', 'self_test': summary.to_dict()}


@command("train")
def train(config: RunConfig, reports: ReportManager) -> Dict[str, Any]:
    """Train a model and save the checkpoint with its loss series"""
    split = load_splits(config.data, config.seed)
    schema = load_model_schema(config.model.schema_name)
    plan = build_plan(schema, config)
    vocab = Vocabulary.build(vocabulary_corpus(plan, split.all_records()))

    trainer = VAETrainer(config, schema, split.train, split.test, vocab)
    metrics = trainer.fit()
    path = trainer.save(reports.path(CHECKPOINT_NAME))
    reports.write_csv("metrics.csv", metrics, columns=METRIC_COLUMNS)
    reports.write_csv("trace.csv", trainer.trace, columns=TRACE_COLUMNS)
    last = trainer.trace[-1]["loss"] if trainer.trace else None
    return {'status': 'success', 'message': f"Trained {trainer.step} steps", 'checkpoint': str(path),
            'final_loss': last}


def _generated(trained: TrainedModel, config: RunConfig, n: int, stream: str) -> List:
    generator = make_generator(config.seed, stream)
    return generate(trained.model, sampling_tracker(trained.tracker), generator, n,
                    argmax=config.eval.argmax, batch_size=config.eval.batch_size)


def _membership(records: Sequence, split: DatasetSplit) -> Dict[str, float]:
    names = {r.get(STREET_FIELD, "") for r in split.train}
    count, proportion = street_name_membership(records, names, STREET_FIELD)
    return {"count": count, "proportion": proportion}


@command("generate")
def generate_records(config: RunConfig, reports: ReportManager) -> Dict[str, Any]:
    """Sample records from a checkpoint and score them against the training split"""
    trained = load_checkpointed(config)
    split = load_splits(config.data, config.seed)
    table = fit_zip_stats(split.train)
    records = _generated(trained, config, config.eval.n_generate, "generate")
    pvalues = record_pvalues(records, table)

    reports.write_records("generated.csv", records, trained.schema.field_names)
    reports.write_csv("pvalues.csv", _pvalue_rows(records, pvalues, table.zip_field))
    summary = summarize_pvalues(pvalues)
    reports.write_json("stats.json", {
        "generated": summary.to_dict(),
        "membership": _membership(records, split),
        "malformed": len(records) - len(_valid(records)),
    })
    return {'status': 'success', 'message': f"Generated {len(records)} records", 'pvalues': summary.to_dict()}


def _split_loss(trained: TrainedModel, records: Sequence[Dict], config: RunConfig) -> Dict[str, float]:
    """Teacher-forced loss of a split, averaged over evaluation batches"""
    level = trained.bank.levels[0]
    weights = trained.eval_weights()
    generator = make_generator(config.seed, "eval")
    totals = {"loss": 0.0, "kl": 0.0, "recon": 0.0}
    count = 0
    bpcs = []
    for start in range(0, len(records), config.eval.batch_size):
        batch = records[start : start + config.eval.batch_size]
        report = vae_loss(trained.model, batch, weights, level.stddev, generator=generator,
                          field_weights=trained.config.train.field_weights,
                          skew_in_average=trained.config.train.skew_in_average, train=False)
        totals["loss"] += report.loss * len(batch)
        totals["kl"] += report.kl * len(batch)
        totals["recon"] += report.recon_avg * len(batch)
        bpcs.append((report.bpc, len(batch)))
        count += len(batch)
    if not count:
        return {}
    result = {k: v / count for k, v in totals.items()}
    result["bpc"] = sum(b * n for b, n in bpcs) / count
    result["beta"] = weights.beta
    return result


def _street_levenshtein(trained: TrainedModel, split: DatasetSplit, config: RunConfig) -> float:
    """Mean per-character edit distance of street names reconstructed through the mean latent"""
    rng = make_numpy_rng(config.seed, "levenshtein")
    originals = _sample(split.train, config.eval.n_levenshtein, rng)
    if not originals:
        return float("nan")
    rounds = repeated_encode_decode(trained.model, originals, 2, make_generator(config.seed, "levenshtein"),
                                    argmax=config.eval.argmax, batch_size=config.eval.batch_size)
    pairs = []
    for original, reconstruction in zip(originals, rounds[1]):
        decoded = "" if isinstance(reconstruction, MalformedRecord) else reconstruction.get(STREET_FIELD, "")
        pairs.append((original.get(STREET_FIELD, ""), decoded))
    return mean_levenshtein_per_char(pairs)


@command("eval")
def evaluate(config: RunConfig, reports: ReportManager) -> Dict[str, Any]:
    """Split losses, generated loss, p-values, street-name metrics of a checkpoint"""
    trained = load_checkpointed(config)
    split = load_splits(config.data, config.seed)
    table = fit_zip_stats(split.train)

    records = _generated(trained, config, config.eval.n_pvalue, "eval-generate")
    pvalues = record_pvalues(records, table)
    generated_report = generated_loss_eval(
        trained.model, records[: config.eval.batch_size], trained.eval_weights(), trained.bank.levels[0].stddev,
        make_generator(config.seed, "eval-generated"), trained.config.train.field_weights,
        trained.config.train.skew_in_average)

    payload = {
        "step": trained.step,
        "split": config.eval.split,
        "split_loss": _split_loss(trained, split.get(config.eval.split), config),
        "generated_loss": generated_report.to_row() if generated_report else None,
        "pvalues": summarize_pvalues(pvalues).to_dict(),
        "membership": _membership(records, split),
        "malformed": len(records) - len(_valid(records)),
        "street_levenshtein_per_char": _street_levenshtein(trained, split, config),
    }
    reports.write_json("eval.json", payload)
    return {'status': 'success', 'message': 'Evaluation written', 'eval': payload}


@command("repeat")
def repeat(config: RunConfig, reports: ReportManager) -> Dict[str, Any]:
    """Repeated mean-latent encode/decode of generated records, one p-value box per round"""
    trained = load_checkpointed(config)
    split = load_splits(config.data, config.seed)
    table = fit_zip_stats(split.train)
    start = _generated(trained, config, config.eval.repeat_size, "repeat-generate")
    rounds = repeated_encode_decode(trained.model, start, config.eval.repeat_rounds,
                                    make_generator(config.seed, "repeat"), config.eval.argmax,
                                    config.eval.batch_size)

    boxes, membership, pvalue_rows = {}, [], []
    for index, records in enumerate(rounds):
        pvalues = record_pvalues(records, table)
        boxes[f"round_{index}"] = boxplot_summary(pvalues)
        counts = _membership(records, split)
        membership.append({"round": index, **counts, "malformed": len(records) - len(_valid(records))})
        pvalue_rows.extend({"round": index, **row} for row in _pvalue_rows(records, pvalues, table.zip_field))

    frame = _boxplot_frame(boxes)
    reports.write_csv("boxplot.csv", frame)
    reports.write_csv("street_names.csv", membership, columns=["round", "count", "proportion", "malformed"])
    reports.write_csv("pvalues.csv", pvalue_rows, columns=["round", "index", "zip", "pvalue", "malformed"])
    return {'status': 'success', 'message': f"{len(rounds)} rounds written"}


def _boxplot_frame(boxes: Dict[str, Dict[str, float]]) -> pd.DataFrame:
    """One row per statistic, one column per round"""
    frame = pd.DataFrame(boxes)
    frame.index.name = "stat"
    return frame.reset_index()


@command("interpolate")
def interpolate_records(config: RunConfig, reports: ReportManager) -> Dict[str, Any]:
    """Decode a straight latent path between two training records"""
    trained = load_checkpointed(config)
    split = load_splits(config.data, config.seed)
    first, second = config.eval.interpolate_pair
    if max(first, second) >= len(split.train) or min(first, second) < 0:
        raise ConfigError(f"interpolate_pair {config.eval.interpolate_pair} outside the training split")
    points = interpolate(trained.model, split.train[first], split.train[second], config.eval.interpolate_k,
                         make_generator(config.seed, "interpolate"), config.eval.argmax)
    path = reports.write_geojson("interpolation.geojson", points, trained.plan.scalar_fields[:2])
    return {'status': 'success', 'message': f"{len(points)} interpolation points", 'file': str(path)}


def configure_precision(config: RunConfig) -> None:
    torch.set_default_dtype(torch.float64 if config.precision == "float64" else torch.float32)


def run(command_name: str, config: RunConfig, force: bool = False) -> Dict[str, Any]:
    """
    Run one command and report the outcome

    Returns:
        Dict: status, message and exit_code (0 success, 2 usage/config, 1 runtime)
    """
    handler = COMMANDS.get(command_name)
    if handler is None:
        return {'status': 'error', 'message': f"unknown command: {command_name}", 'exit_code': 2}
    try:
        configure_precision(config)
        reports = ReportManager(config, command_name, force)
        reports.write_config()
        result = handler(config, reports)
        result.setdefault('exit_code', 0)
        result['output_dir'] = str(reports.report_dir)
        return result
    except USAGE_ERRORS as e:
        logger.debug("Usage error in %s", command_name, exc_info=True)
        return {'status': 'error', 'message': str(e), 'exit_code': 2}
    except RecordWeaverError as e:
        logger.debug("Failure in %s", command_name, exc_info=True)
        return {'status': 'error', 'message': str(e), 'exit_code': 1}
    except Exception as e:
        logger.exception("Unexpected failure in %s", command_name)
        return {'status': 'error', 'message': f"{command_name} failed: {e}", 'exit_code': 1}
