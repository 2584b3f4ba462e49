"""
Dataset splits for Record Weaver
Deterministic 8:1:1 hashing split and loading of every supported data source
"""

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from connectors.address_record import Record
from connectors.csv_connector import CSVConnector, read_jsonl, write_jsonl
from connectors.toy_dataset import make_toy_dataset
from utils.config import DataConfig
from utils.errors import ConfigError

logger = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "test", "validation")
TRAIN_FRACTION = 0.8
TEST_FRACTION = 0.1


@dataclass
class DatasetSplit:
    train: List[Record] = field(default_factory=list)
    test: List[Record] = field(default_factory=list)
    validation: List[Record] = field(default_factory=list)
    seed: Optional[int] = None

    def get(self, name: str) -> List[Record]:
        if name not in SPLIT_NAMES:
            raise ValueError(f"unknown split: {name}")
        return getattr(self, name)

    def sizes(self) -> Dict[str, int]:
        return {name: len(self.get(name)) for name in SPLIT_NAMES}

    def all_records(self) -> List[Record]:
        return self.train + self.test + self.validation


def split_bucket(seed: int, index: int) -> float:
    """Uniform value in [0, 1) fixed by (seed, index)"""
    digest = hashlib.blake2b(f"{seed}:{index}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") / 2 ** 64


def split_8_1_1(records: Sequence[Record], seed: int) -> DatasetSplit:
    """Assign every record independently to train/test/validation with probabilities 0.8/0.1/0.1"""
    split = DatasetSplit(seed=seed)
    for index, record in enumerate(records):
        u = split_bucket(seed, index)
        if u < TRAIN_FRACTION:
            split.train.append(record)
        elif u < TRAIN_FRACTION + TEST_FRACTION:
            split.test.append(record)
        else:
            split.validation.append(record)
    logger.info("Split %d records into %s", len(records), split.sizes())
    return split


def write_split_cache(split: DatasetSplit, directory: Path) -> Dict[str, Path]:
    directory = Path(directory)
    return {name: write_jsonl(split.get(name), directory / f"{name}.jsonl") for name in SPLIT_NAMES}


def load_splits(cfg: DataConfig, seed: int) -> DatasetSplit:
    """
    Load the train/test/validation records a config points at

    toy: generated records, split 8:1:1
    csv: one OpenAddresses file, split 8:1:1
    split: pre-split CSV files (validation optional)
    cache: train/test/validation JSONL files written by ingest
    """
    split_seed = cfg.split_seed if cfg.split_seed is not None else seed
    if cfg.source == "toy":
        return split_8_1_1(make_toy_dataset(cfg.toy.n_records, cfg.toy.n_zips, seed), split_seed)

    connector = CSVConnector(cfg.column_map)
    if cfg.source == "csv":
        return split_8_1_1(connector.parse_csv(cfg.csv_path), split_seed)
    if cfg.source == "split":
        return DatasetSplit(
            train=connector.parse_csv(cfg.train_path),
            test=connector.parse_csv(cfg.test_path),
            validation=connector.parse_csv(cfg.validation_path) if cfg.validation_path else [],
        )
    if cfg.source == "cache":
        directory = Path(cfg.cache_dir)
        validation = directory / "validation.jsonl"
        return DatasetSplit(
            train=read_jsonl(directory / "train.jsonl"),
            test=read_jsonl(directory / "test.jsonl"),
            validation=read_jsonl(validation) if validation.exists() else [],
        )
    raise ConfigError(f"unknown data source: {cfg.source}")
