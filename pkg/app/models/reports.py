"""Report records and the JSON encoding shared by every artifact."""

from __future__ import annotations

import math
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, Field

INF = "inf"


def encode_extended(value: Any) -> Any:
    """
    JSON-safe copy of a report value.

    +inf and -inf become the strings "inf" and "-inf", NaN becomes None,
    and numpy scalars and arrays become plain Python values.
    """
    if isinstance(value, dict):
        return {str(k): encode_extended(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [encode_extended(v) for v in value]
    if isinstance(value, np.ndarray):
        return encode_extended(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return None
        if math.isinf(value):
            return INF if value > 0 else "-" + INF
        return value
    return value


def decode_extended(value: Any) -> Any:
    if value == INF:
        return math.inf
    if value == "-" + INF:
        return -math.inf
    return value


class ExperimentReport(BaseModel):
    """The deterministic part of one run; timestamps live in RunMetadata."""

    schema_version: str = Field("1", alias="schema")
    command: str
    status: str
    passed: Optional[bool] = None
    summary: str
    fingerprint: str
    seed: int
    caveats: List[Dict[str, Any]] = Field(default_factory=list)
    result: Dict[str, Any] = Field(default_factory=dict)

    model_config = {"populate_by_name": True}

    def to_json_dict(self) -> Dict[str, Any]:
        return encode_extended(self.model_dump(by_alias=True))


class RunMetadata(BaseModel):
    started_at: str
    finished_at: str
    duration_seconds: float
    threads: int
    config_path: Optional[str] = None
    exit_status: int = 0
