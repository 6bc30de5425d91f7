"""Named analytic potentials, so configs can refer to them as text."""
from __future__ import annotations

import math

import numpy as np

from .geometry import PotentialField


def constant(value=1.0):
    v = float(value)
    return PotentialField(lambda p: np.full(len(p), v), abs(v), 0.0, f"constant({v!r})")


def affine(a=0.0, b=(1.0, 0.0), extent=1.0):
    """``a + b . x``; bounds assume points in [0, extent]^2."""
    a, b = float(a), np.asarray(b, dtype=float)
    lip = float(np.hypot(*b))
    sup = abs(a) + float(np.sum(np.abs(b))) * extent
    return PotentialField(lambda p: a + p @ b, sup, lip, f"affine({a!r},{b.tolist()!r})")


def signed_affine(extent=1.0):
    """``x1 - extent/2``, changing sign along the vertical midline."""
    c = 0.5 * float(extent)
    return PotentialField(lambda p: p[:, 0] - c, c, 1.0, "signed_affine")


def trig(a0=0.0, amp=1.0, kx=1, ky=0, period=1.0, phase=0.0):
    """``a0 + amp * sin(2 pi (kx x1 + ky x2) / period + phase)``, periodic."""
    w = 2.0 * math.pi / float(period)
    k = np.array([kx, ky], dtype=float) * w
    lip = abs(amp) * float(np.hypot(*k))
    return PotentialField(lambda p: a0 + amp * np.sin(p @ k + phase), abs(a0) + abs(amp), lip,
                          f"trig({a0!r},{amp!r},{kx},{ky})")


def gaussian(a0=0.0, amp=1.0, center=(0.5, 0.5), width=0.2):
    c, s = np.asarray(center, dtype=float), float(width)
    lip = abs(amp) / s * math.exp(-0.5)
    return PotentialField(lambda p: a0 + amp * np.exp(-np.sum((p - c) ** 2, axis=1) / (2 * s * s)),
                          abs(a0) + abs(amp), lip, f"gaussian({a0!r},{amp!r},{c.tolist()!r},{s!r})")


REGISTRY = {
    "constant": constant,
    "affine": affine,
    "signed_affine": signed_affine,
    "trig": trig,
    "gaussian": gaussian,
}


def make(name: str, **params) -> PotentialField:
    try:
        return REGISTRY[name](**params)
    except KeyError:
        raise ValueError(f"unknown potential {name!r}; choose from {sorted(REGISTRY)}") from None
