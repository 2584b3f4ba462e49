"""
Comma-separated text form of a record, used by the text_concat model
"""

from typing import Mapping, Sequence

from utils.errors import DataError

ADDRESS_TEXT_COLUMNS = ("number", "street", "city", "postcode", "lat", "long")
COORDINATE_DECIMALS = 5


def serialize_text(record: Mapping, columns: Sequence[str] = ADDRESS_TEXT_COLUMNS,
                   scalar_fields: Sequence[str] = ("lat", "long")) -> str:
    """
    Join the selected columns with commas, coordinates fixed to five decimals

    Args:
        record: Field name -> value
        columns: Output order; scalar columns are formatted as floats

    Returns:
        str: One text line
    """
    parts = []
    for name in columns:
        value = record.get(name, "")
        if name in scalar_fields:
            parts.append(f"{float(value):.{COORDINATE_DECIMALS}f}")
            continue
        text = "" if value is None else str(value)
        if "," in text:
            raise DataError(f"field {name!r} contains a comma: {text!r}")
        parts.append(text)
    return ",".join(parts)
