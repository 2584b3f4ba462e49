"""
String-level metrics for Record Weaver
Levenshtein distance per character, street-name membership and malformed-text detection
"""

import logging
import math
import re
from dataclasses import dataclass
from typing import Dict, Iterable, Sequence, Set, Tuple, Union

import Levenshtein

from connectors.text_codec import ADDRESS_TEXT_COLUMNS

logger = logging.getLogger(__name__)

TOO_FEW_FIELDS = "too_few_fields"
BAD_FLOAT = "bad_float"
_DECIMAL = re.compile(r"[-+]?(?:\d+(?:\.\d*)?|\.\d+)")


@dataclass(frozen=True)
class MalformedRecord:
    """A generated text line that could not be read back as a record"""

    reason: str
    line: str


def levenshtein_per_char(original: str, reconstruction: str) -> float:
    """Edit distance divided by the length of the original"""
    if not original:
        raise ValueError("original string must be non-empty")
    return Levenshtein.distance(original, reconstruction) / len(original)


def mean_levenshtein_per_char(pairs: Iterable[Tuple[str, str]]) -> float:
    """
    Average levenshtein_per_char over (original, reconstruction) pairs

    Pairs with an empty original are skipped. Returns NaN when nothing is left.
    """
    total, count, skipped = 0.0, 0, 0
    for original, reconstruction in pairs:
        if not original:
            skipped += 1
            continue
        total += levenshtein_per_char(original, reconstruction)
        count += 1
    if skipped:
        logger.warning("Skipped %d pairs with an empty original", skipped)
    return total / count if count else math.nan


def street_name_membership(generated: Sequence, training_names: Set[str],
                           field: str = "street") -> Tuple[int, float]:
    """
    Count generated records whose street name appears verbatim in the training set

    Malformed records count as non-members.

    Returns:
        (count, proportion): proportion is 0.0 for an empty batch
    """
    count = 0
    for record in generated:
        if isinstance(record, MalformedRecord):
            continue
        if record.get(field, "") in training_names:
            count += 1
    return count, (count / len(generated) if generated else 0.0)


def _parse_float(text: str) -> Union[float, None]:
    """Plain decimal literal only: no exponent, whitespace, underscores, inf or nan"""
    if not _DECIMAL.fullmatch(text):
        return None
    value = float(text)
    return value if math.isfinite(value) else None


def malformed_check(line: str, columns: Sequence[str] = ADDRESS_TEXT_COLUMNS,
                    scalar_fields: Sequence[str] = ("lat", "long")) -> Union[Dict, MalformedRecord]:
    """
    Read a comma-separated line back into a record

    The line needs at least len(columns) values. The trailing values are the
    scalar columns and must parse as finite floats. The string columns take the
    leading values, except the last one, which takes the value just before the
    scalars; surplus values in between are dropped.

    Returns:
        Dict | MalformedRecord: Record on success, otherwise the failure reason
    """
    values = line.split(",")
    if len(values) < len(columns):
        return MalformedRecord(TOO_FEW_FIELDS, line)

    string_columns = [c for c in columns if c not in scalar_fields]
    scalar_columns = [c for c in columns if c in scalar_fields]
    n_scalars = len(scalar_columns)
    head, tail = values[: len(values) - n_scalars], values[len(values) - n_scalars:]

    record: Dict = {}
    for name, text in zip(scalar_columns, tail):
        value = _parse_float(text)
        if value is None:
            return MalformedRecord(BAD_FLOAT, line)
        record[name] = value

    if string_columns:
        fixed = len(string_columns) - 1
        for name, text in zip(string_columns[:fixed], head[:fixed]):
            record[name] = text
        record[string_columns[-1]] = head[-1]
    return record
