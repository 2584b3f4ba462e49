"""
Per-zip coordinate statistics for Record Weaver
Fits a 2-D Gaussian per zip code and scores coordinates with chi-squared p-values
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import chi2

from metrics.text_metrics import MalformedRecord

logger = logging.getLogger(__name__)

MIN_ZIP_COUNT = 2
RIDGE_SCALE = 1e-9
CHI2_DOF = 2
DEFAULT_ZIP_FIELD = "postcode"
DEFAULT_COORDINATES = ("lat", "long")


@dataclass(frozen=True)
class ZipStats:
    count: int
    mean: np.ndarray
    cov: np.ndarray


class ZipStatsTable:
    """Zip code -> (count, mean, unbiased sample covariance) of its coordinates"""

    def __init__(self, entries: Dict[str, ZipStats], zip_field: str = DEFAULT_ZIP_FIELD,
                 coordinates: Tuple[str, str] = DEFAULT_COORDINATES):
        self.entries = entries
        self.zip_field = zip_field
        self.coordinates = coordinates

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, zip_code: str) -> bool:
        return zip_code in self.entries

    def __iter__(self) -> Iterator[str]:
        return iter(self.entries)

    def get(self, zip_code: str) -> Optional[ZipStats]:
        return self.entries.get(zip_code)

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {
                "zip": zip_code,
                "count": s.count,
                "mean_0": s.mean[0],
                "mean_1": s.mean[1],
                "cov_00": s.cov[0, 0],
                "cov_01": s.cov[0, 1],
                "cov_11": s.cov[1, 1],
            }
            for zip_code, s in self.entries.items()
        ]
        return pd.DataFrame(rows, columns=["zip", "count", "mean_0", "mean_1", "cov_00", "cov_01", "cov_11"])


@dataclass(frozen=True)
class PValueStats:
    mean: float
    median: float
    stddev: float
    count: int

    def to_dict(self) -> Dict[str, float]:
        return {"mean": self.mean, "median": self.median, "stddev": self.stddev, "count": self.count}


def _valid_records(records: Iterable) -> list:
    return [r for r in records if not isinstance(r, MalformedRecord)]


def fit_zip_stats(records: Iterable, zip_field: str = DEFAULT_ZIP_FIELD,
                  coordinates: Tuple[str, str] = DEFAULT_COORDINATES) -> ZipStatsTable:
    """
    Group records by zip and fit mean and sample covariance of the coordinates

    Zips with fewer than two records are dropped.
    """
    rows = _valid_records(records)
    if not rows:
        return ZipStatsTable({}, zip_field, coordinates)

    frame = pd.DataFrame(rows, columns=[zip_field, *coordinates])
    frame[list(coordinates)] = frame[list(coordinates)].astype(float)
    entries: Dict[str, ZipStats] = {}
    dropped = 0
    for zip_code, group in frame.groupby(zip_field, sort=True):
        if len(group) < MIN_ZIP_COUNT:
            dropped += 1
            continue
        values = group[list(coordinates)].to_numpy(dtype=float)
        cov = np.cov(values, rowvar=False, ddof=1)
        entries[str(zip_code)] = ZipStats(
            count=len(group),
            mean=values.mean(axis=0),
            cov=(cov + cov.T) / 2,
        )
    if dropped:
        logger.debug("Dropped %d zips with fewer than %d records", dropped, MIN_ZIP_COUNT)
    logger.info("Fitted coordinate statistics for %d zips", len(entries))
    return ZipStatsTable(entries, zip_field, coordinates)


def _mahalanobis_rows(diffs: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Squared Mahalanobis distances of (m, 2) offsets; inf when sigma stays singular"""
    sigma = np.asarray(sigma, dtype=float)
    ridge = RIDGE_SCALE * np.trace(sigma) / 2
    try:
        inverse = np.linalg.inv(sigma + ridge * np.eye(sigma.shape[0]))
    except np.linalg.LinAlgError:
        logger.warning("Singular coordinate covariance even after ridge; treating zip as unseen")
        return np.full(len(diffs), np.inf)
    d_sq = np.einsum("ij,jk,ik->i", diffs, inverse, diffs)
    return np.maximum(d_sq, 0.0)


def mahalanobis_sq(x: Sequence[float], mu: Sequence[float], sigma: np.ndarray) -> float:
    """(x - mu)^T Sigma^-1 (x - mu) with a small ridge on Sigma"""
    diff = np.asarray(x, dtype=float) - np.asarray(mu, dtype=float)
    return float(_mahalanobis_rows(diff[None, :], sigma)[0])


def chi2_pvalue(d_sq: float) -> float:
    """Upper tail of the chi-squared distribution with two degrees of freedom"""
    if d_sq < 0 or math.isnan(d_sq):
        raise ValueError(f"squared distance must be non-negative, got {d_sq}")
    return float(chi2.sf(d_sq, df=CHI2_DOF))


def record_pvalues(records: Sequence, table: ZipStatsTable) -> np.ndarray:
    """
    p-value of every record's coordinates under its zip's Gaussian

    Unseen zips and malformed records score 0.
    """
    records = list(records)
    pvalues = np.zeros(len(records))
    by_zip: Dict[str, list] = {}
    for i, record in enumerate(records):
        if isinstance(record, MalformedRecord):
            continue
        zip_code = str(record.get(table.zip_field, ""))
        if zip_code in table:
            by_zip.setdefault(zip_code, []).append(i)

    lat_field, long_field = table.coordinates
    for zip_code, indices in by_zip.items():
        stats = table.get(zip_code)
        coords = np.array([[float(records[i][lat_field]), float(records[i][long_field])] for i in indices])
        d_sq = _mahalanobis_rows(coords - stats.mean, stats.cov)
        pvalues[indices] = chi2.sf(d_sq, df=CHI2_DOF)

    unseen = len(records) - sum(len(v) for v in by_zip.values())
    if unseen:
        logger.debug("%d of %d records have an unseen zip or are malformed", unseen, len(records))
    return pvalues


def summarize_pvalues(pvalues: Sequence[float]) -> PValueStats:
    values = np.asarray(pvalues, dtype=float)
    if values.size == 0:
        return PValueStats(0.0, 0.0, 0.0, 0)
    return PValueStats(
        mean=float(values.mean()),
        median=float(np.median(values)),
        stddev=float(values.std()),
        count=int(values.size),
    )


def pvalue_stats(records: Sequence, table: ZipStatsTable) -> PValueStats:
    """Mean, median and standard deviation of record_pvalues"""
    return summarize_pvalues(record_pvalues(records, table))


def boxplot_summary(pvalues: Sequence[float]) -> Dict[str, float]:
    """Five-number summary plus mean, as plotted per repeated encode/decode round"""
    values = np.asarray(pvalues, dtype=float)
    if values.size == 0:
        return {key: math.nan for key in ("min", "q1", "median", "q3", "max", "mean")}
    q1, median, q3 = np.quantile(values, [0.25, 0.5, 0.75])
    return {
        "min": float(values.min()),
        "q1": float(q1),
        "median": float(median),
        "q3": float(q3),
        "max": float(values.max()),
        "mean": float(values.mean()),
    }
