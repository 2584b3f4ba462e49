"""
Synthetic address data for desk-scale runs
Per-zip Gaussian coordinates and street names drawn from a zip-specific slice of a small lexicon
"""

import logging
from typing import List

import numpy as np

from connectors.address_record import AddressRecord, Record
from core.random import make_numpy_rng

logger = logging.getLogger(__name__)

MIN_RECORDS_PER_ZIP = 10
STREET_WORDS = (
    "MAIN", "MAPLE", "CHURCH", "RIVER", "HILL", "PINE", "ELM", "SCHOOL", "LAKE", "NORTH",
    "SOUTH", "MILL", "PARK", "BRIDGE", "CEDAR", "OAK", "FOREST", "MEADOW", "SPRING", "VALLEY",
    "PAINT WORKS", "BIRCH", "SUMMIT", "POND",
)
STREET_SUFFIXES = ("ST", "RD", "AVE", "LN", "DR")
CITY_NAMES = (
    "BARRE", "MONTPELIER", "BURLINGTON", "RUTLAND", "STOWE", "MIDDLEBURY", "BRATTLEBORO",
    "NEWPORT", "ESSEX", "WINOOSKI", "BENNINGTON", "NORWICH",
)
LAT_RANGE = (42.8, 44.9)
LONG_RANGE = (-73.3, -71.6)
SPREAD = 0.02


def make_toy_dataset(n_records: int, n_zips: int, seed: int) -> List[Record]:
    """
    Generate records over n_zips synthetic 5-digit zip codes

    Args:
        n_records: Total records, at least 10 per zip
        n_zips: Number of distinct zip codes, at least 2
        seed: Run seed

    Returns:
        List[Record]: Shuffled address dicts with empty unit/district/region
    """
    if n_zips < 2:
        raise ValueError(f"n_zips must be at least 2, got {n_zips}")
    if n_records < MIN_RECORDS_PER_ZIP * n_zips:
        raise ValueError(f"n_records must be at least {MIN_RECORDS_PER_ZIP} * n_zips, got {n_records}")

    rng = make_numpy_rng(seed, "toy")
    codes = rng.choice(np.arange(1000, 100000), size=n_zips, replace=False)
    zips = [f"{int(code):05d}" for code in codes]
    means = np.column_stack([rng.uniform(*LAT_RANGE, n_zips), rng.uniform(*LONG_RANGE, n_zips)])
    factors = rng.normal(0.0, SPREAD, size=(n_zips, 2, 2))
    covs = factors @ factors.transpose(0, 2, 1) + 1e-6 * np.eye(2)

    streets = []
    for _ in range(n_zips):
        words = rng.choice(len(STREET_WORDS), size=int(rng.integers(3, 6)), replace=False)
        streets.append([f"{STREET_WORDS[w]} {STREET_SUFFIXES[rng.integers(len(STREET_SUFFIXES))]}" for w in words])
    cities = [CITY_NAMES[i % len(CITY_NAMES)] for i in rng.permutation(n_zips)]

    assignment = np.concatenate([
        np.repeat(np.arange(n_zips), MIN_RECORDS_PER_ZIP),
        rng.integers(0, n_zips, size=n_records - MIN_RECORDS_PER_ZIP * n_zips),
    ])
    rng.shuffle(assignment)

    records: List[Record] = []
    for z in assignment:
        lat, long = rng.multivariate_normal(means[z], covs[z])
        record = AddressRecord(
            lat=float(lat),
            long=float(long),
            number=str(int(rng.integers(1, 2000))),
            street=streets[z][int(rng.integers(len(streets[z])))],
            city=cities[z],
            postcode=zips[z],
        )
        records.append(record.to_dict())
    logger.info("Generated %d toy records over %d zips", n_records, n_zips)
    return records
