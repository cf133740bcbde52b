"""Measurement model: display numbers, received power and field amplitude.

The receiver reports an integer display number ``Z`` in ``[Zm, ZM]`` that is
linked to received power ``Y`` through::

    atanh((Z - Zm) / (ZM - Zm)) = b * ln(Y / P0 + 1)

The received power of a target at state ``x`` with a unit normal noise draw
``gamma`` is ``(xi(x) + sqrt(P0) * gamma) ** 2``, where ``xi`` is the
noiseless field amplitude supplied by the antenna's pattern model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from numba import njit

from .errors import DegenerateGeometryError

# Saturated readings (Z == ZM) are converted as if they read ZM - margin.
SATURATION_MARGIN = 0.5


@dataclass(frozen=True)
class Calibration:
    """Display-number link constants. Defaults are a field calibration of the receiver."""

    b: float = 0.3012
    P0: float = 4.3458e-11
    Zm: float = 0.0
    ZM: float = 255.0

    def __post_init__(self):
        if not (self.b > 0 and self.P0 > 0):
            raise ValueError(f"calibration needs b > 0 and P0 > 0, got b={self.b}, P0={self.P0}")
        if not self.Zm < self.ZM:
            raise ValueError(f"calibration needs Zm < ZM, got {self.Zm}, {self.ZM}")


def is_saturated(Z, cal=Calibration()):
    return np.asarray(Z) >= cal.ZM


def display_to_power(Z, cal=Calibration()):
    """Convert display number(s) to received power in watts.

    Values above ``ZM - 0.5`` (in practice the saturated reading ``ZM``) are
    clamped to ``ZM - 0.5`` so the result stays finite.
    """
    Zarr = np.asarray(Z, dtype=float)
    if np.any(~np.isfinite(Zarr)) or np.any(Zarr < cal.Zm) or np.any(Zarr > cal.ZM):
        bad = Zarr[~((Zarr >= cal.Zm) & (Zarr <= cal.ZM))]
        raise ValueError(f"display number outside [{cal.Zm:g}, {cal.ZM:g}]: {bad.ravel()[0]!r}")
    Zc = np.minimum(Zarr, cal.ZM - SATURATION_MARGIN)
    u = (Zc - cal.Zm) / (cal.ZM - cal.Zm)
    Y = cal.P0 * np.expm1(np.arctanh(u) / cal.b)
    return Y if Y.ndim else float(Y)


def power_to_display(Y, cal=Calibration()):
    """Real-valued display number for received power ``Y >= 0``."""
    Yarr = np.asarray(Y, dtype=float)
    if np.any(~(Yarr >= 0)):
        bad = Yarr[~(Yarr >= 0)]
        raise ValueError(f"received power must be >= 0, got {bad.ravel()[0]!r}")
    Z = cal.Zm + (cal.ZM - cal.Zm) * np.tanh(cal.b * np.log1p(Yarr / cal.P0))
    return Z if Z.ndim else float(Z)


class FieldModel(Protocol):
    """Anything that maps target positions to noiseless field amplitude."""

    def amplitude(self, antenna: AntennaConfig, positions: np.ndarray) -> np.ndarray:
        ...


@njit(cache=True)
def cosine_lobe_amplitude(dx, dy, dz, sin_az, cos_az, A, p, floor):
    """Scalar default-pattern amplitude for an offset ``(dx, dy, dz)``.

    Inverse-distance amplitude scaled by the square root of the gain
    ``max(cos(theta), floor) ** p``, where ``theta`` is the horizontal angle
    between the boresight and the target bearing. A target directly above
    the antenna is treated as on boresight. Returns ``nan`` at zero range.
    """
    rh2 = dx * dx + dy * dy
    r = math.sqrt(rh2 + dz * dz)
    if r == 0.0:
        return math.nan
    if rh2 > 0.0:
        c = (dx * sin_az + dy * cos_az) / math.sqrt(rh2)
    else:
        c = 1.0
    if c < floor:
        c = floor
    return math.sqrt(A * c ** p) / r


@dataclass(frozen=True)
class CosineLobePattern:
    """Default field model: ``xi = sqrt(A * g(theta)) / r``.

    ``g(theta) = max(cos(theta), floor) ** p`` with ``theta`` the azimuth of
    the target measured from the antenna boresight.
    """

    A: float = 1e-4
    p: float = 2.0
    floor: float = 0.05

    def __post_init__(self):
        if not (self.A > 0 and self.p > 0 and 0 < self.floor <= 1):
            raise ValueError(f"invalid pattern parameters A={self.A}, p={self.p}, floor={self.floor}")

    def amplitude(self, antenna, positions):
        positions = np.asarray(positions, dtype=float)
        d = positions - np.asarray(antenna.position)
        dx, dy, dz = d[..., 0], d[..., 1], d[..., 2]
        rh = np.hypot(dx, dy)
        r = np.sqrt(rh * rh + dz * dz)
        if np.any(r == 0.0):
            raise DegenerateGeometryError(f"target coincides with antenna {antenna.id!r}")
        sin_az, cos_az = math.sin(antenna.boresight_azimuth), math.cos(antenna.boresight_azimuth)
        with np.errstate(invalid="ignore", divide="ignore"):
            c = np.where(rh > 0, (dx * sin_az + dy * cos_az) / rh, 1.0)
        g = np.maximum(c, self.floor) ** self.p
        return np.sqrt(self.A * g) / r


@dataclass(frozen=True)
class AntennaConfig:
    """A receiving antenna.

    ``boresight_azimuth`` is in radians, clockwise from the +y (north) axis.
    """

    id: str
    position: tuple
    boresight_azimuth: float = 0.0
    pattern: FieldModel = field(default_factory=CosineLobePattern)

    def __post_init__(self):
        pos = tuple(float(v) for v in self.position)
        if len(pos) != 3 or not all(math.isfinite(v) for v in pos):
            raise ValueError(f"antenna {self.id!r} position must be 3 finite values")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "id", str(self.id))


def _positions(state):
    state = np.asarray(state, dtype=float)
    return np.stack([state[..., 0], state[..., 2], state[..., 4]], axis=-1)


def field_amplitude(state, antenna):
    """Noiseless amplitude ``xi`` for one state or a stack of states."""
    xi = antenna.pattern.amplitude(antenna, _positions(state))
    return xi if np.ndim(xi) else float(xi)


def received_power(state, gamma, antenna, cal=Calibration()):
    """Noisy received power ``(xi(state) + sqrt(P0) * gamma) ** 2``."""
    xi = field_amplitude(state, antenna)
    h = (xi + math.sqrt(cal.P0) * np.asarray(gamma, dtype=float)) ** 2
    return h if np.ndim(h) else float(h)


def nearest_antenna(position, towers):
    """Closest antenna by 3-D distance; ties go to the lowest id."""
    position = np.asarray(position, dtype=float)
    best = None
    for ant in sorted(towers, key=lambda a: a.id):
        d = float(np.sum((np.asarray(ant.position) - position) ** 2))
        if best is None or d < best[0]:
            best = (d, ant)
    if best is None:
        raise ValueError("no antennas configured")
    return best[1]


@dataclass(frozen=True)
class Detection:
    """One raw record: detection time, detecting antenna, display number."""

    t: float
    antenna_id: str
    Z: int


@dataclass(frozen=True)
class PowerObservation:
    t: float
    antenna: str
    Z: float
    Y: float
    saturated: bool = False

    @classmethod
    def from_display(cls, t, antenna, Z, cal=Calibration()):
        return cls(float(t), str(antenna), Z, display_to_power(Z, cal), bool(is_saturated(Z, cal)))
