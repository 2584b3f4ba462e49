"""
Address record type for Record Weaver
Two coordinates plus seven optional string fields, in schema order
"""

from dataclasses import asdict, dataclass
from typing import Any, Dict, Mapping, Union

from utils.errors import DataError

Record = Dict[str, Union[str, float]]

ADDRESS_FIELDS = ("lat", "long", "number", "street", "unit", "city", "district", "region", "postcode")
ADDRESS_STRING_FIELDS = ADDRESS_FIELDS[2:]
ADDRESS_SCALAR_FIELDS = ("lat", "long")


@dataclass(frozen=True)
class AddressRecord:
    lat: float
    long: float
    number: str = ""
    street: str = ""
    unit: str = ""
    city: str = ""
    district: str = ""
    region: str = ""
    postcode: str = ""

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise DataError(f"latitude out of range: {self.lat}")
        if not -180.0 <= self.long <= 180.0:
            raise DataError(f"longitude out of range: {self.long}")

    def to_dict(self) -> Record:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "AddressRecord":
        """Build from a mapping; missing strings become empty, coordinates are required"""
        try:
            lat = float(data["lat"])
            long = float(data["long"])
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"record needs numeric lat/long: {e}") from e
        strings = {name: "" if data.get(name) is None else str(data.get(name))
                   for name in ADDRESS_STRING_FIELDS}
        return cls(lat=lat, long=long, **strings)


COORDINATE_RANGES = {"lat": (-90.0, 90.0), "long": (-180.0, 180.0)}
