"""White-balance error metrics: MSE on the 8-bit scale, mean angular error in
degrees, CIEDE2000 color difference, and quartile summaries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .image import as_array
from .refspaces import rgb_to_lab_raw


@dataclass
class MetricSummary:
    mean: float
    q1: float
    q2: float
    q3: float


def _paired(pred, gt) -> tuple:
    p, g = as_array(pred), as_array(gt)
    if p.shape != g.shape:
        raise ContractViolation(f"image shapes differ: {p.shape} vs {g.shape}")
    if p.shape[-1] != 3:
        raise ContractViolation(f"metrics expect 3 channels, got {p.shape[-1]}")
    return p, g


def mse(pred, gt) -> float:
    """Mean squared error on the 0-255 scale, over all pixels and channels."""
    p, g = _paired(pred, gt)
    d = 255.0 * p - 255.0 * g
    return float(np.mean(d * d))


def angular_mae(pred, gt) -> float:
    """Mean per-pixel angle between RGB vectors, in degrees.

    Pixels where either vector has near-zero norm contribute 0.
    """
    p, g = _paired(pred, gt)
    dot = np.sum(p * g, axis=-1)
    np_ = np.linalg.norm(p, axis=-1)
    ng = np.linalg.norm(g, axis=-1)
    ok = (np_ >= 1e-9) & (ng >= 1e-9)
    denom = np.where(ok, np_ * ng, 1.0)
    cosv = np.clip(dot / denom, -1.0, 1.0)
    ang = np.where(ok, np.degrees(np.arccos(cosv)), 0.0)
    return float(np.mean(ang))


def ciede2000_lab(lab1: np.ndarray, lab2: np.ndarray) -> np.ndarray:
    """CIEDE2000 difference between (..., 3) CIELAB arrays, kL = kC = kH = 1.

    Implements the hue-mean and hue-difference boundary cases and the
    rotation term R_T of the standard formulation.
    """
    lab1 = np.asarray(lab1, dtype=np.float64)
    lab2 = np.asarray(lab2, dtype=np.float64)
    L1, a1, b1 = lab1[..., 0], lab1[..., 1], lab1[..., 2]
    L2, a2, b2 = lab2[..., 0], lab2[..., 1], lab2[..., 2]

    C1 = np.hypot(a1, b1)
    C2 = np.hypot(a2, b2)
    Cbar = 0.5 * (C1 + C2)
    c7 = Cbar**7
    G = 0.5 * (1.0 - np.sqrt(c7 / (c7 + 25.0**7)))
    a1p = (1.0 + G) * a1
    a2p = (1.0 + G) * a2
    C1p = np.hypot(a1p, b1)
    C2p = np.hypot(a2p, b2)

    def hue(ap, b):
        h = np.degrees(np.arctan2(b, ap))
        h = np.where(h < 0.0, h + 360.0, h)
        return np.where((ap == 0.0) & (b == 0.0), 0.0, h)

    h1p = hue(a1p, b1)
    h2p = hue(a2p, b2)

    dLp = L2 - L1
    dCp = C2p - C1p

    prod = C1p * C2p
    diff = h2p - h1p
    dhp = np.where(
        prod == 0.0,
        0.0,
        np.where(np.abs(diff) <= 180.0, diff,
                 np.where(diff > 180.0, diff - 360.0, diff + 360.0)),
    )
    dHp = 2.0 * np.sqrt(prod) * np.sin(np.radians(dhp) / 2.0)

    Lbp = 0.5 * (L1 + L2)
    Cbp = 0.5 * (C1p + C2p)
    hsum = h1p + h2p
    habs = np.abs(h1p - h2p)
    hbp = np.where(
        prod == 0.0,
        hsum,
        np.where(habs <= 180.0, 0.5 * hsum,
                 np.where(hsum < 360.0, 0.5 * (hsum + 360.0), 0.5 * (hsum - 360.0))),
    )

    T = (1.0
         - 0.17 * np.cos(np.radians(hbp - 30.0))
         + 0.24 * np.cos(np.radians(2.0 * hbp))
         + 0.32 * np.cos(np.radians(3.0 * hbp + 6.0))
         - 0.20 * np.cos(np.radians(4.0 * hbp - 63.0)))
    dtheta = 30.0 * np.exp(-(((hbp - 275.0) / 25.0) ** 2))
    cb7 = Cbp**7
    RC = 2.0 * np.sqrt(cb7 / (cb7 + 25.0**7))
    SL = 1.0 + 0.015 * (Lbp - 50.0) ** 2 / np.sqrt(20.0 + (Lbp - 50.0) ** 2)
    SC = 1.0 + 0.045 * Cbp
    SH = 1.0 + 0.015 * Cbp * T
    RT = -np.sin(np.radians(2.0 * dtheta)) * RC

    tL = dLp / SL
    tC = dCp / SC
    tH = dHp / SH
    return np.sqrt(tL * tL + tC * tC + tH * tH + RT * tC * tH)


def delta_e2000(pred, gt) -> float:
    """Mean per-pixel CIEDE2000 between two sRGB images."""
    p, g = _paired(pred, gt)
    return float(np.mean(ciede2000_lab(rgb_to_lab_raw(p), rgb_to_lab_raw(g))))


def summarize(errors) -> MetricSummary:
    """Mean plus Q1/Q2/Q3 by linear interpolation on the sorted values."""
    arr = np.asarray(list(errors), dtype=np.float64)
    if arr.size == 0:
        raise ContractViolation("cannot summarize an empty error list")
    if not np.all(np.isfinite(arr)):
        raise ContractViolation("error list contains non-finite values")
    q1, q2, q3 = np.percentile(arr, [25.0, 50.0, 75.0])
    return MetricSummary(mean=float(arr.mean()), q1=float(q1), q2=float(q2), q3=float(q3))
