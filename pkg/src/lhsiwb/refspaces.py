"""Fixed reference color spaces used as ablation baselines: HSV, CIELAB, HVI,
and the classical HSI construction.

All functions are pure numpy over (..., 3) arrays (or PlanarImage) and accept
sRGB in [0, 1]. rgb_to_lab / lab_to_rgb speak the network-facing normalized
representation (L*/100, a*/128, b*/128); the raw CIELAB helpers used by the
color-difference metric are exposed separately.
"""

from __future__ import annotations

import numpy as np

from . import colorspace
from .image import PlanarImage, as_array

# IEC 61966-2-1 sRGB primaries, D65 white point
RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
XYZ_TO_RGB = np.linalg.inv(RGB_TO_XYZ)
D65_WHITE = np.array([0.95047, 1.0, 1.08883])


def _wrap(fn):
    """Lift an array->array transform to also accept/return PlanarImage."""

    def call(img, *a, **kw):
        arr = as_array(img)
        out = fn(arr, *a, **kw)
        return PlanarImage(out) if isinstance(img, PlanarImage) else out

    call.__name__ = fn.__name__
    call.__doc__ = fn.__doc__
    return call


# ---------------------------------------------------------------------------
# HSV (hexcone), H normalized to [0, 1)


def _rgb_to_hsv_arr(rgb: np.ndarray) -> np.ndarray:
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = np.max(rgb, axis=-1)
    minc = np.min(rgb, axis=-1)
    c = maxc - minc
    v = maxc
    s = np.where(maxc > 0.0, c / np.where(maxc > 0.0, maxc, 1.0), 0.0)
    safe = np.where(c > 0.0, c, 1.0)
    hr = np.mod((g - b) / safe, 6.0)
    hg = (b - r) / safe + 2.0
    hb = (r - g) / safe + 4.0
    h6 = np.select([c == 0.0, maxc == r, maxc == g], [0.0, hr, hg], default=hb)
    h = h6 / 6.0
    h = np.where(h >= 1.0, h - 1.0, h)
    return np.stack([h, s, v], axis=-1)


def _hsv_to_rgb_arr(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    h6 = np.mod(h, 1.0) * 6.0
    i = np.minimum(np.floor(h6), 5.0)
    f = h6 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64)
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


rgb_to_hsv = _wrap(_rgb_to_hsv_arr)
hsv_to_rgb = _wrap(_hsv_to_rgb_arr)
rgb_to_hsv.__doc__ = "Standard hexcone HSV; gray pixels get H=0, S=0."
hsv_to_rgb.__doc__ = "Exact inverse of rgb_to_hsv."


# ---------------------------------------------------------------------------
# CIELAB (D65), plus the normalized network-facing form

_LAB_DELTA = 6.0 / 29.0


def srgb_to_linear(c: np.ndarray) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(c: np.ndarray) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    c = np.clip(c, 0.0, 1.0)
    return np.where(c <= 0.0031308, c * 12.92, 1.055 * c ** (1.0 / 2.4) - 0.055)


def _lab_f(t: np.ndarray) -> np.ndarray:
    return np.where(t > _LAB_DELTA**3, np.cbrt(t), t / (3 * _LAB_DELTA**2) + 4.0 / 29.0)


def _lab_f_inv(t: np.ndarray) -> np.ndarray:
    return np.where(t > _LAB_DELTA, t**3, 3 * _LAB_DELTA**2 * (t - 4.0 / 29.0))


def _rgb_to_lab_raw_arr(rgb: np.ndarray) -> np.ndarray:
    xyz = srgb_to_linear(rgb) @ RGB_TO_XYZ.T
    fx, fy, fz = (_lab_f(xyz[..., i] / D65_WHITE[i]) for i in range(3))
    L = 116.0 * fy - 16.0
    a = 500.0 * (fx - fy)
    b = 200.0 * (fy - fz)
    return np.stack([L, a, b], axis=-1)


def _lab_raw_to_rgb_arr(lab: np.ndarray) -> np.ndarray:
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    xyz = np.stack(
        [_lab_f_inv(fx) * D65_WHITE[0], _lab_f_inv(fy) * D65_WHITE[1],
         _lab_f_inv(fz) * D65_WHITE[2]],
        axis=-1,
    )
    return linear_to_srgb(xyz @ XYZ_TO_RGB.T)


rgb_to_lab_raw = _wrap(_rgb_to_lab_raw_arr)
lab_raw_to_rgb = _wrap(_lab_raw_to_rgb_arr)
rgb_to_lab_raw.__doc__ = "CIELAB in native units: L* in [0,100], a*/b* unbounded."
lab_raw_to_rgb.__doc__ = "Native-unit CIELAB back to sRGB, clamped to gamut."


def _rgb_to_lab_arr(rgb: np.ndarray) -> np.ndarray:
    lab = _rgb_to_lab_raw_arr(rgb)
    out = np.empty_like(lab)
    out[..., 0] = lab[..., 0] / 100.0
    out[..., 1] = np.clip(lab[..., 1] / 128.0, -1.0, 1.0)
    out[..., 2] = np.clip(lab[..., 2] / 128.0, -1.0, 1.0)
    return out


def _lab_to_rgb_arr(lab: np.ndarray) -> np.ndarray:
    raw = np.empty_like(lab)
    raw[..., 0] = np.clip(lab[..., 0], 0.0, 1.0) * 100.0
    raw[..., 1] = np.clip(lab[..., 1], -1.0, 1.0) * 128.0
    raw[..., 2] = np.clip(lab[..., 2], -1.0, 1.0) * 128.0
    return _lab_raw_to_rgb_arr(raw)


rgb_to_lab = _wrap(_rgb_to_lab_arr)
lab_to_rgb = _wrap(_lab_to_rgb_arr)
rgb_to_lab.__doc__ = "CIELAB normalized for the network: L*/100 in [0,1], a*,b*/128 in [-1,1]."
lab_to_rgb.__doc__ = "Inverse of the normalized CIELAB representation, clamped to gamut."


# ---------------------------------------------------------------------------
# HVI: intensity max(R,G,B) plus polarized hexcone hue/saturation


def _rgb_to_hvi_arr(rgb: np.ndarray) -> np.ndarray:
    hsv = _rgb_to_hsv_arr(rgb)
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    ang = colorspace.TWO_PI * h
    return np.stack([v, s * np.sin(ang), s * np.cos(ang)], axis=-1)


def _hvi_to_rgb_arr(hvi: np.ndarray) -> np.ndarray:
    v = hvi[..., 0]
    s = np.hypot(hvi[..., 1], hvi[..., 2])
    h = np.mod(np.arctan2(hvi[..., 1], hvi[..., 2]) / colorspace.TWO_PI, 1.0)
    hsv = np.stack([h, np.clip(s, 0.0, 1.0), np.clip(v, 0.0, 1.0)], axis=-1)
    return _hsv_to_rgb_arr(hsv)


rgb_to_hvi = _wrap(_rgb_to_hvi_arr)
hvi_to_rgb = _wrap(_hvi_to_rgb_arr)
rgb_to_hvi.__doc__ = "Fixed polarized construction (I, S sin(2 pi H), S cos(2 pi H))."
hvi_to_rgb.__doc__ = "Inverse of rgb_to_hvi."


# ---------------------------------------------------------------------------
# classical HSI = the learnable space pinned to the gray diagonal


def _classic_params() -> colorspace.LhsiParams:
    return colorspace.LhsiParams.classic_hsi()


def _rgb_to_hsi_classic_arr(rgb: np.ndarray) -> np.ndarray:
    return colorspace.rgb_to_lhsi(rgb, _classic_params())


def _hsi_classic_to_rgb_arr(rep: np.ndarray) -> np.ndarray:
    return colorspace.lhsi_to_rgb(rep, _classic_params())


rgb_to_hsi_classic = _wrap(_rgb_to_hsi_classic_arr)
hsi_classic_to_rgb = _wrap(_hsi_classic_to_rgb_arr)
rgb_to_hsi_classic.__doc__ = "Diagonal-axis, identity-map instance of the learnable space."
hsi_classic_to_rgb.__doc__ = "Inverse of rgb_to_hsi_classic."
