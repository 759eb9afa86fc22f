from __future__ import annotations

import hashlib
import json
import platform
from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class HardwareProfile:
    """Execution parameters of the emulated device.

    Defaults describe a Tesla C1060: 30 SMs with up to 32 resident warps of
    32 lanes each, global memory striped over 8 partitions of 256 bytes.
    """

    warp_size: int = 32
    num_sm: int = 30
    max_active_warps_per_sm: int = 32
    partitions: int = 8
    partition_width_bytes: int = 256

    def __post_init__(self):
        for name, value in asdict(self).items():
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")

    @property
    def max_active_total(self) -> int:
        return self.num_sm * self.max_active_warps_per_sm

    def fingerprint(self, host=True) -> str:
        """Stable hash of the profile, optionally salted with the host architecture."""
        payload = asdict(self)
        if host:
            payload["machine"] = platform.machine()
            payload["processor"] = platform.processor()
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: int(v) for k, v in d.items() if k in cls.__dataclass_fields__})

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


TESLA_C1060 = HardwareProfile()
