from __future__ import annotations

import math

from omegaconf import OmegaConf


def deg2rad(degrees: float) -> float:
    return math.radians(degrees)


OmegaConf.register_new_resolver("deg2rad", deg2rad, replace=True)
