"""Radial blending function used by all blended coupling models.

beta is 0 inside radius r0 (pure atomistic), 1 outside r1 (pure continuum),
and transitions by a cubic (C1) or quintic (C2) polynomial of the scaled
radius in between.  It depends on |x| only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PROFILES = ("cubic", "quintic")


@dataclass(frozen=True)
class BlendProfile:
    r0: float
    r1: float
    profile: str = "quintic"

    def __post_init__(self):
        if self.r0 < 0 or self.r1 <= self.r0:
            raise ValueError(f"need 0 <= r0 < r1, got r0={self.r0}, r1={self.r1}")
        if self.profile not in PROFILES:
            raise ValueError(f"unknown blend profile {self.profile!r}")

    def radial(self, r):
        """beta as a function of radius (vectorized)."""
        r = np.asarray(r, dtype=float)
        t = np.clip((r - self.r0) / (self.r1 - self.r0), 0.0, 1.0)
        if self.profile == "cubic":
            val = t * t * (3.0 - 2.0 * t)
        else:
            val = t**3 * (10.0 + t * (-15.0 + 6.0 * t))
        return val[()] if np.ndim(val) == 0 else val

    def __call__(self, x):
        """beta at 3D point(s) x of shape (..., 3)."""
        x = np.asarray(x, dtype=float)
        return self.radial(np.linalg.norm(x, axis=-1))


def blend_value(b: BlendProfile, x) -> float | np.ndarray:
    return b(x)
