"""Serializable run records for the estimation pipelines.

Every pipeline returns an EstimatorReport so experiment drivers can log,
compare, and re-serialize runs bit-exactly. Wall time is recorded but kept
out of the canonical byte form, which must be reproducible under a fixed
seed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Any, Optional

import numpy as np

# Fields excluded from the canonical serialization: they vary across
# machines/runs even under a fixed seed.
CANONICAL_EXCLUDE = ("wall_ms",)


def _plain(value):
    """Recursively convert numpy containers/scalars to JSON-native types."""
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


@dataclass
class StageRecord:
    """One pipeline stage: rows it consumed and budget it was charged."""

    name: str
    rows: int
    raw_rows: int
    epsilon: float
    delta: float
    detail: dict = field(default_factory=dict)


@dataclass
class EstimatorReport:
    """Full record of one estimation run.

    theta is the estimate in the family's own coordinates; `error` is filled
    only when the driver knows the ground truth. epsilon/delta are the
    configured budget, *_spent the ledger totals (parallel chunk groups
    counted once).
    """

    task: str
    theta: Any
    n_raw: int
    alpha: float
    beta: float
    epsilon: float
    delta: float
    epsilon_spent: float
    delta_spent: float
    seed: int
    chunks: int = 1
    boost_confident: bool = True
    iterations: int = 0
    stages: list = field(default_factory=list)
    error: Optional[float] = None
    wall_ms: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_dict(self, canonical: bool = False) -> dict:
        d = _plain(asdict(self))
        if canonical:
            for key in CANONICAL_EXCLUDE:
                d.pop(key, None)
        return d

    def to_json(self, canonical: bool = False) -> str:
        """Stable JSON; canonical form drops run-to-run-variable fields."""
        return json.dumps(
            self.to_dict(canonical=canonical), sort_keys=True, separators=(",", ":")
        )

    @classmethod
    def from_json(cls, text: str) -> "EstimatorReport":
        d = json.loads(text)
        d.setdefault("wall_ms", 0.0)
        d["stages"] = [
            StageRecord(**s) if isinstance(s, dict) else s for s in d.get("stages", [])
        ]
        return cls(**d)
