"""
CSV Connector for Record Weaver
Reads OpenAddresses-style CSV files into records and writes them back
"""

import json
import logging
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Union

import pandas as pd

from connectors.address_record import ADDRESS_SCALAR_FIELDS, COORDINATE_RANGES, Record
from utils.config import OPENADDRESSES_COLUMNS
from utils.errors import DataError

logger = logging.getLogger(__name__)


class CSVConnector:
    """CSV reader/writer with a configurable field -> column mapping"""

    def __init__(self, column_map: Optional[Mapping[str, str]] = None,
                 scalar_fields: Sequence[str] = ADDRESS_SCALAR_FIELDS):
        self.column_map: Dict[str, str] = dict(column_map or OPENADDRESSES_COLUMNS)
        self.scalar_fields = tuple(scalar_fields)
        self.skipped = 0

    def parse_csv(self, path: Union[str, Path]) -> List[Record]:
        """
        Read records from a CSV file

        Args:
            path: CSV file with a header row

        Returns:
            List[Record]: One dict per retained row; rows whose scalar columns do not
            parse (or fall outside the coordinate range) are skipped and counted
        """
        path = Path(path)
        try:
            frame = pd.read_csv(path, dtype=str, keep_default_na=False)
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise DataError(f"unreadable CSV file {path}: {e}") from e

        missing = [column for column in self.column_map.values() if column not in frame.columns]
        if missing:
            raise DataError(f"{path} is missing mapped columns: {missing}")

        frame = frame[list(self.column_map.values())]
        frame.columns = list(self.column_map.keys())
        valid = pd.Series(True, index=frame.index)
        numeric = {}
        for name in self.scalar_fields:
            values = pd.to_numeric(frame[name].str.strip(), errors="coerce")
            valid &= values.notna()
            if name in COORDINATE_RANGES:
                low, high = COORDINATE_RANGES[name]
                valid &= values.between(low, high)
            numeric[name] = values

        skipped = int((~valid).sum())
        self.skipped += skipped
        if skipped:
            logger.warning("Skipped %d rows of %s with unparseable coordinates", skipped, path)

        for name, values in numeric.items():
            frame[name] = values
        records = frame[valid].to_dict(orient="records")
        logger.info("Read %d records from %s", len(records), path)
        return records

    def write_csv(self, records: Sequence[Mapping], path: Union[str, Path]) -> Path:
        """Write records with the mapped column headers (inverse of parse_csv)"""
        path = Path(path)
        frame = pd.DataFrame(list(records), columns=list(self.column_map.keys()))
        frame.columns = list(self.column_map.values())
        frame.to_csv(path, index=False)
        return path


def write_jsonl(records: Sequence[Mapping], path: Union[str, Path]) -> Path:
    """Line-delimited JSON cache of records"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(dict(record), ensure_ascii=False) + "\n")
    return path


def read_jsonl(path: Union[str, Path]) -> List[Record]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing record cache: {path}")
    records = []
    with path.open(encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{number}: invalid JSON: {e}") from e
    return records
