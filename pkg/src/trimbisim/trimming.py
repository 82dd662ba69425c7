"""Open axis-aligned boxes and L-infinity trimming."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError


@dataclass(frozen=True)
class OpenBox:
    """Open hyper-rectangle ``]lower, upper[``.

    An empty box is a distinguished value (``empty=True``) that keeps its
    dimension but contains nothing.
    """

    lower: tuple
    upper: tuple
    empty: bool = False

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(hi) or not lo:
            raise DimensionError("box bounds must be non-empty and of equal length")
        if not all(np.isfinite(lo)) or not all(np.isfinite(hi)):
            raise DomainError("box bounds must be finite")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if not self.empty and any(h <= l for l, h in zip(lo, hi)):
            object.__setattr__(self, "empty", True)

    @classmethod
    def from_pairs(cls, pairs) -> "OpenBox":
        """Build from per-dimension ``(lo, hi)`` pairs, the config literal form."""
        pairs = [tuple(p) for p in pairs]
        return cls(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs))

    def pairs(self) -> list:
        return [[l, h] for l, h in zip(self.lower, self.upper)]

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.lower)

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.upper)

    def half_widths(self) -> np.ndarray:
        return 0.5 * (self.hi - self.lo)

    def center(self) -> np.ndarray:
        return 0.5 * (self.hi + self.lo)

    def sup_norm_bound(self) -> float:
        """Max L-infinity norm over the closure: max over dims of max(|lo|, |hi|)."""
        return float(np.max(np.maximum(np.abs(self.lo), np.abs(self.hi))))

    def distance_to_boundary(self, p) -> float:
        p = np.asarray(p, dtype=float).reshape(-1)
        return float(np.min(np.minimum(p - self.lo, self.hi - p)))

    def __contains__(self, p) -> bool:
        return contains(self, p)


def trim_box(box: OpenBox, rho: float) -> OpenBox:
    """Points whose closed L-infinity ball of radius ``rho`` fits inside ``box``."""
    if rho < 0:
        raise DomainError(f"trimming radius must be non-negative, got {rho}")
    if box.empty:
        return box
    if rho == 0:
        return box
    lo = tuple(l + rho for l in box.lower)
    hi = tuple(h - rho for h in box.upper)
    return OpenBox(lo, hi)


def contains(box: OpenBox, p) -> bool:
    p = np.asarray(p, dtype=float).reshape(-1)
    if p.shape[0] != box.dim:
        raise DimensionError(f"point has dimension {p.shape[0]}, box has {box.dim}")
    if box.empty:
        return False
    return bool(np.all(p > box.lo) and np.all(p < box.hi))


def contains_all(box: OpenBox, points) -> bool:
    """Vectorised ``contains`` over the rows of ``points``."""
    pts = np.asarray(points, dtype=float).reshape(-1, box.dim)
    if box.empty:
        return pts.shape[0] == 0
    return bool(np.all(pts > box.lo) and np.all(pts < box.hi))


def trajectory_in_trimmed_set(u, box: OpenBox, rho: float) -> bool:
    """Membership of a piecewise-constant trajectory in the trimmed trajectory set.

    A trajectory lies in the rho-trimming of the trajectory space exactly when
    every value it takes lies in the rho-trimmed box, so checking the segment
    values suffices.
    """
    values = getattr(u, "values", u)
    return contains_all(trim_box(box, rho), values)
