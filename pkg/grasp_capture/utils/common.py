from __future__ import annotations

from collections import namedtuple
from pathlib import Path

import numpy as np
import torch

# Geometry runs in double precision throughout.
DTYPE = torch.float64
DATA_DIR = Path(__file__).parents[2] / "data"

SolveReport = namedtuple(
    "SolveReport",
    "cost iterations converged reason history",
    defaults=[0, True, "", ()],
)


def as_tensor(x, dtype: torch.dtype = DTYPE) -> torch.Tensor:
    """Converts array-likes (lists, numpy arrays, tensors) to a float64 tensor."""
    if isinstance(x, torch.Tensor):
        return x.to(dtype=dtype)
    return torch.as_tensor(np.asarray(x, dtype=np.float64), dtype=dtype)


def report_dict(report: SolveReport, prefix: str) -> dict[str, float | int | bool | str]:
    """Flattens a solve report into `prefix/key` metrics (history excluded)."""
    return {
        f"{prefix}/cost": float(report.cost),
        f"{prefix}/iterations": int(report.iterations),
        f"{prefix}/converged": bool(report.converged),
        f"{prefix}/reason": str(report.reason),
    }
