"""
Report Manager for Record Weaver
Handles the per-command output directory and every report file written into it
"""

import json
import logging
import shutil
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import pandas as pd

from metrics.text_metrics import MalformedRecord
from utils.config import RunConfig, config_hash, config_to_yaml
from utils.errors import OutputExistsError

logger = logging.getLogger(__name__)

HASH_PREFIX = "# config_hash="


class ReportManager:
    """Writes the reports of one command into <output dir>/<command>/"""

    def __init__(self, config: RunConfig, command: str, force: bool = False):
        self.config = config
        self.command = command
        self.config_hash = config_hash(config)
        self.report_dir = Path(config.output.dir) / command
        self.ensure_report_dir(force)
        self.written: List[Path] = []

    def ensure_report_dir(self, force: bool) -> None:
        """Create the command directory, refusing to reuse a non-empty one without force"""
        if self.report_dir.exists() and any(self.report_dir.iterdir()):
            if not force:
                raise OutputExistsError(f"output directory {self.report_dir} already exists; use --force")
            logger.warning("Overwriting %s", self.report_dir)
            shutil.rmtree(self.report_dir)
        self.report_dir.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        return self.report_dir / name

    def _track(self, path: Path) -> Path:
        self.written.append(path)
        logger.info("Wrote %s", path)
        return path

    def write_config(self) -> Path:
        """resolved_config.yaml, re-loadable with --config"""
        path = self.path("resolved_config.yaml")
        path.write_text(f"{HASH_PREFIX}{self.config_hash}\n" + config_to_yaml(self.config))
        return self._track(path)

    def write_csv(self, name: str, rows: Union[pd.DataFrame, Sequence[Mapping]],
                  columns: Optional[Sequence[str]] = None) -> Path:
        """
        CSV report whose first line is the config hash comment

        Args:
            name: File name inside the command directory
            rows: DataFrame or list of dicts
            columns: Column order for dict rows

        Returns:
            Path: Written file
        """
        frame = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(list(rows), columns=columns)
        path = self.path(name)
        with path.open("w", encoding="utf-8", newline="") as handle:
            handle.write(f"{HASH_PREFIX}{self.config_hash}\n")
            frame.to_csv(handle, index=False)
        return self._track(path)

    def write_json(self, name: str, payload: Mapping[str, Any]) -> Path:
        path = self.path(name)
        body = {"config_hash": self.config_hash, "created": datetime.now().isoformat(timespec="seconds"),
                **payload}
        path.write_text(json.dumps(body, indent=2, default=_jsonable))
        return self._track(path)

    def write_records(self, name: str, records: Iterable, field_names: Sequence[str]) -> Path:
        """Generated records, one row each; malformed text lines keep their reason and raw line"""
        rows = []
        for record in records:
            if isinstance(record, MalformedRecord):
                rows.append({"malformed": record.reason, "line": record.line})
            else:
                rows.append({**{k: record.get(k, "") for k in field_names}, "malformed": "", "line": ""})
        return self.write_csv(name, rows, columns=[*field_names, "malformed", "line"])

    def write_geojson(self, name: str, points: Sequence, coordinates: Tuple[str, str] = ("lat", "long")) -> Path:
        """
        FeatureCollection with one Point feature per interpolation step

        Malformed records get a null geometry.
        """
        lat_field, long_field = coordinates
        features = []
        for index, point in enumerate(points):
            record = point.record
            if isinstance(record, MalformedRecord):
                geometry = None
                properties = {"malformed": record.reason, "line": record.line}
            else:
                geometry = {"type": "Point", "coordinates": [float(record[long_field]), float(record[lat_field])]}
                properties = dict(record)
            properties.update({"index": index, "weight": point.weight})
            features.append({"type": "Feature", "geometry": geometry, "properties": properties})
        collection = {"type": "FeatureCollection", "config_hash": self.config_hash, "features": features}
        path = self.path(name)
        path.write_text(json.dumps(collection, indent=2, default=_jsonable))
        return self._track(path)


def _jsonable(value: Any) -> Any:
    if hasattr(value, "tolist"):
        return value.tolist()
    if hasattr(value, "item"):
        return value.item()
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def read_report_csv(path: Union[str, Path], dtype: Any = None) -> Tuple[pd.DataFrame, Optional[str]]:
    """Read a CSV report back as (frame, config hash)"""
    path = Path(path)
    with path.open(encoding="utf-8") as handle:
        first = handle.readline().rstrip("\n")
    if first.startswith(HASH_PREFIX):
        return pd.read_csv(path, skiprows=1, dtype=dtype, keep_default_na=False), first[len(HASH_PREFIX):]
    return pd.read_csv(path, dtype=dtype, keep_default_na=False), None
