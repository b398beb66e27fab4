"""Color-space adapters that plug the correction network into a space.

Every adapter exposes the representation as (intensity, chroma1, chroma2) in
channel order 0..2, the convention the dual-branch network expects. The
forward direction only needs gradients for the learnable space (the input
image is a constant); the inverse direction is differentiable for every
space, since training losses backpropagate through reconstruction to sRGB.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import colorspace, refspaces
from .autodiff import Tensor
from .errors import ContractViolation

SPACE_NAMES = ("lhsi", "hsv", "lab", "hvi", "hsi")


def _wrap_unit_t(t: Tensor) -> Tensor:
    return ad.sub(t, np.floor(t.data))


def _chroma_limit_t(c1: Tensor, c2: Tensor) -> tuple:
    """Scale a chroma pair so its radius is at most 1 (differentiable)."""
    r = ad.sqrt(ad.add(ad.mul(c1, c1), ad.mul(c2, c2)))
    safe = ad.maximum(r, 1e-12)
    fac = ad.div(ad.clamp(r, 0.0, 1.0), safe)
    return ad.mul(c1, fac), ad.mul(c2, fac)


def _channels(rep: Tensor) -> tuple:
    ax = rep.data.ndim - 1
    return (ad.narrow(rep, ax, 0, 1), ad.narrow(rep, ax, 1, 1), ad.narrow(rep, ax, 2, 1))


def hsv_to_rgb_t(h: Tensor, s: Tensor, v: Tensor) -> Tensor:
    """Differentiable hexcone inverse; the sector index is data-driven and
    constant on the tape, matching refspaces.hsv_to_rgb exactly."""
    h6 = ad.mul(_wrap_unit_t(h), 6.0)
    i = np.minimum(np.floor(h6.data), 5.0)
    f = ad.sub(h6, i)
    p = ad.mul(v, ad.sub(1.0, s))
    q = ad.mul(v, ad.sub(1.0, ad.mul(s, f)))
    t = ad.mul(v, ad.sub(1.0, ad.mul(s, ad.sub(1.0, f))))
    cands = {"v": v, "p": p, "q": q, "t": t}
    layout = [("v", "t", "p"), ("q", "v", "p"), ("p", "v", "t"),
              ("p", "q", "v"), ("t", "p", "v"), ("v", "p", "q")]
    outs = []
    for ch in range(3):
        acc = None
        for sector in range(6):
            mask = (i == sector).astype(np.float64)
            term = ad.mul(cands[layout[sector][ch]], mask)
            acc = term if acc is None else ad.add(acc, term)
        outs.append(acc)
    return ad.concat(outs, axis=h.data.ndim - 1)


def lab_to_rgb_t(rep: Tensor) -> Tensor:
    """Differentiable inverse of the normalized CIELAB representation."""
    ln, an, bn = _channels(rep)
    L = ad.mul(ad.clamp(ln, 0.0, 1.0), 100.0)
    a = ad.mul(ad.clamp(an, -1.0, 1.0), 128.0)
    b = ad.mul(ad.clamp(bn, -1.0, 1.0), 128.0)
    fy = ad.mul(ad.add(L, 16.0), 1.0 / 116.0)
    fx = ad.add(fy, ad.mul(a, 1.0 / 500.0))
    fz = ad.sub(fy, ad.mul(b, 1.0 / 200.0))
    d = refspaces._LAB_DELTA

    def f_inv(t: Tensor) -> Tensor:
        hi = (t.data > d).astype(np.float64)
        cube = ad.mul(ad.mul(ad.mul(t, t), t), hi)
        lin = ad.mul(ad.mul(ad.sub(t, 4.0 / 29.0), 3.0 * d * d), 1.0 - hi)
        return ad.add(cube, lin)

    xyz = ad.concat(
        [ad.mul(f_inv(fx), refspaces.D65_WHITE[0]),
         ad.mul(f_inv(fy), refspaces.D65_WHITE[1]),
         ad.mul(f_inv(fz), refspaces.D65_WHITE[2])],
        axis=rep.data.ndim - 1,
    )
    flat = ad.reshape(xyz, (-1, 3))
    lin = ad.matmul(flat, Tensor(refspaces.XYZ_TO_RGB.T))
    lin = ad.clamp(ad.reshape(lin, xyz.data.shape), 0.0, 1.0)
    low = (lin.data <= 0.0031308).astype(np.float64)
    srgb = ad.add(
        ad.mul(ad.mul(lin, 12.92), low),
        ad.mul(ad.sub(ad.mul(ad.power(ad.maximum(lin, 1e-12), 1.0 / 2.4), 1.055), 0.055),
               1.0 - low),
    )
    return ad.clamp(srgb, 0.0, 1.0)


class SpaceAdapter:
    """Base adapter: numpy transforms plus tape-level inverse and sanitize."""

    name = "base"
    has_params = False

    def learnables(self) -> list:
        return []

    # numpy paths
    def to_rep(self, arr: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def from_rep(self, arr: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    # tape paths
    def to_rep_t(self, rgb: Tensor) -> Tensor:
        # fixed spaces treat the input image as a constant
        return Tensor(self.to_rep(rgb.data))

    def from_rep_t(self, rep: Tensor) -> Tensor:
        raise NotImplementedError

    def sanitize_rep_t(self, rep: Tensor) -> Tensor:
        raise NotImplementedError


class LhsiAdapter(SpaceAdapter):
    name = "lhsi"
    has_params = True

    def __init__(self, params: colorspace.LhsiParams):
        self.params = params

    def learnables(self) -> list:
        if self.params.axis.raw.requires_grad:
            return self.params.learnables()
        return []

    def to_rep(self, arr):
        return colorspace.rgb_to_lhsi(arr, self.params)

    def from_rep(self, arr):
        return colorspace.lhsi_to_rgb(arr, self.params)

    def to_rep_t(self, rgb):
        return colorspace.rgb_to_lhsi_t(rgb, self.params)

    def from_rep_t(self, rep):
        return colorspace.lhsi_to_rgb_t(rep, self.params)

    def sanitize_rep_t(self, rep):
        tp, c1, c2 = _channels(rep)
        c1, c2 = _chroma_limit_t(c1, c2)
        return ad.concat([ad.clamp(tp, 0.0, 1.0), c1, c2], axis=rep.data.ndim - 1)


class HsiAdapter(LhsiAdapter):
    name = "hsi"
    has_params = False

    def __init__(self):
        super().__init__(colorspace.LhsiParams.classic_hsi())

    def learnables(self):
        return []


class HsvAdapter(SpaceAdapter):
    """Network rep is (V, H, S): the hexcone value acts as the I-map."""

    name = "hsv"

    def to_rep(self, arr):
        hsv = refspaces.rgb_to_hsv(arr)
        return np.stack([hsv[..., 2], hsv[..., 0], hsv[..., 1]], axis=-1)

    def from_rep(self, arr):
        hsv = np.stack(
            [np.mod(arr[..., 1], 1.0), np.clip(arr[..., 2], 0.0, 1.0),
             np.clip(arr[..., 0], 0.0, 1.0)],
            axis=-1,
        )
        return refspaces.hsv_to_rgb(hsv)

    def from_rep_t(self, rep):
        v, h, s = _channels(rep)
        return hsv_to_rgb_t(_wrap_unit_t(h), ad.clamp(s, 0.0, 1.0), ad.clamp(v, 0.0, 1.0))

    def sanitize_rep_t(self, rep):
        v, h, s = _channels(rep)
        return ad.concat(
            [ad.clamp(v, 0.0, 1.0), _wrap_unit_t(h), ad.clamp(s, 0.0, 1.0)],
            axis=rep.data.ndim - 1,
        )


class LabAdapter(SpaceAdapter):
    name = "lab"

    def to_rep(self, arr):
        return refspaces.rgb_to_lab(arr)

    def from_rep(self, arr):
        return refspaces.lab_to_rgb(arr)

    def from_rep_t(self, rep):
        return lab_to_rgb_t(rep)

    def sanitize_rep_t(self, rep):
        ln, an, bn = _channels(rep)
        return ad.concat(
            [ad.clamp(ln, 0.0, 1.0), ad.clamp(an, -1.0, 1.0), ad.clamp(bn, -1.0, 1.0)],
            axis=rep.data.ndim - 1,
        )


class HviAdapter(SpaceAdapter):
    name = "hvi"

    def to_rep(self, arr):
        return refspaces.rgb_to_hvi(arr)

    def from_rep(self, arr):
        return refspaces.hvi_to_rgb(arr)

    def from_rep_t(self, rep):
        iv, c1, c2 = _channels(rep)
        s = ad.sqrt(ad.add(ad.mul(c1, c1), ad.mul(c2, c2)))
        h = _wrap_unit_t(ad.mul(ad.atan2(c1, c2), 1.0 / colorspace.TWO_PI))
        return hsv_to_rgb_t(h, ad.clamp(s, 0.0, 1.0), ad.clamp(iv, 0.0, 1.0))

    def sanitize_rep_t(self, rep):
        iv, c1, c2 = _channels(rep)
        c1, c2 = _chroma_limit_t(c1, c2)
        return ad.concat([ad.clamp(iv, 0.0, 1.0), c1, c2], axis=rep.data.ndim - 1)


def make_adapter(space: str, lhsi_params=None) -> SpaceAdapter:
    if space == "lhsi":
        if lhsi_params is None:
            lhsi_params = colorspace.LhsiParams.identity()
        return LhsiAdapter(lhsi_params)
    if space == "hsv":
        return HsvAdapter()
    if space == "lab":
        return LabAdapter()
    if space == "hvi":
        return HviAdapter()
    if space == "hsi":
        return HsiAdapter()
    raise ContractViolation(f"unknown color space {space!r}; expected one of {SPACE_NAMES}")
