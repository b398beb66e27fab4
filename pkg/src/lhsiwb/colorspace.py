"""The learnable HSI color space.

A pixel is projected onto a learnable luminance axis n (a unit vector in the
nonnegative octant); the residual in the orthogonal plane gives saturation
(radius) and hue (angle). All three cylindrical coordinates are normalized to
[0, 1] and passed through learnable strictly-increasing piecewise-linear maps,
and the result is emitted in polarized form (t', r'·sin(2*pi*theta'),
r'·cos(2*pi*theta')). Every step is differentiable with respect to both the
image and the parameters, and the whole transform is a bijection, so images
survive a round trip exactly (up to clamping of out-of-gamut inputs).
"""

from __future__ import annotations

import warnings

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractViolation
from .image import PlanarImage, as_array

TWO_PI = 2.0 * np.pi

DEFAULT_INTERVALS = 32
DEFAULT_ALPHA_MIN = 0.1
DEFAULT_ALPHA_MAX = 10.0


class OutOfGamutWarning(UserWarning):
    """Raised when an inverse transform receives a radius beyond the gamut."""


class PiecewiseMonotoneMap:
    """A strictly increasing piecewise-linear bijection of [0, 1].

    The unit interval is split into m equal pieces. Each piece has slope
    alpha_i = alpha_min + (alpha_max - alpha_min) * sigmoid(u_i) derived from
    an unbounded raw parameter, and the accumulated area is normalized so the
    map pins 0 -> 0 and 1 -> 1 exactly for any parameter values.
    """

    def __init__(self, m: int = DEFAULT_INTERVALS,
                 alpha_min: float = DEFAULT_ALPHA_MIN,
                 alpha_max: float = DEFAULT_ALPHA_MAX,
                 u=None, requires_grad: bool = True):
        if m < 1:
            raise ContractViolation(f"interval count must be positive, got {m}")
        if not 0.0 < alpha_min < alpha_max:
            raise ContractViolation(
                f"slope bounds must satisfy 0 < alpha_min < alpha_max, "
                f"got ({alpha_min}, {alpha_max})"
            )
        self.m = int(m)
        self.alpha_min = float(alpha_min)
        self.alpha_max = float(alpha_max)
        if u is None:
            u = np.zeros(self.m)
        if isinstance(u, Tensor):
            if u.data.shape != (self.m,):
                raise ContractViolation(f"u must have shape ({self.m},), got {u.data.shape}")
            self.u = u
        else:
            u = np.asarray(u, dtype=np.float64)
            if u.shape != (self.m,):
                raise ContractViolation(f"u must have shape ({self.m},), got {u.shape}")
            self.u = Tensor(u.copy(), requires_grad=requires_grad)

    @classmethod
    def from_slopes(cls, slopes, alpha_min: float = DEFAULT_ALPHA_MIN,
                    alpha_max: float = DEFAULT_ALPHA_MAX, **kw) -> "PiecewiseMonotoneMap":
        """Build a map whose realized slopes match the given values."""
        slopes = np.asarray(slopes, dtype=np.float64)
        if np.any(slopes <= alpha_min) or np.any(slopes >= alpha_max):
            raise ContractViolation("requested slopes must lie strictly inside the bounds")
        frac = (slopes - alpha_min) / (alpha_max - alpha_min)
        u = np.log(frac) - np.log1p(-frac)
        return cls(m=len(slopes), alpha_min=alpha_min, alpha_max=alpha_max, u=u, **kw)

    def slopes(self) -> Tensor:
        """Realized slopes, each in (alpha_min, alpha_max)."""
        span = self.alpha_max - self.alpha_min
        return ad.add(ad.mul(ad.sigmoid(self.u), span), self.alpha_min)

    def state_dict(self) -> dict:
        return {
            "m": self.m,
            "alpha_min": self.alpha_min,
            "alpha_max": self.alpha_max,
            "u": [float(v) for v in self.u.data],
        }

    @classmethod
    def from_state(cls, state: dict, requires_grad: bool = True) -> "PiecewiseMonotoneMap":
        return cls(m=state["m"], alpha_min=state["alpha_min"],
                   alpha_max=state["alpha_max"], u=np.asarray(state["u"]),
                   requires_grad=requires_grad)


def slope_from_raw(u: float, alpha_min: float, alpha_max: float) -> float:
    """Map one unbounded raw value to a slope in (alpha_min, alpha_max)."""
    if not 0.0 < alpha_min < alpha_max:
        raise ContractViolation(
            f"slope bounds must satisfy 0 < alpha_min < alpha_max, "
            f"got ({alpha_min}, {alpha_max})"
        )
    s = 1.0 / (1.0 + np.exp(-float(u)))
    return alpha_min + (alpha_max - alpha_min) * s


def _map_tables(pm: PiecewiseMonotoneMap):
    """Shared per-call tables: slopes, per-piece areas, prefix sums, total."""
    alphas = pm.slopes()
    delta = 1.0 / pm.m
    seg = ad.mul(alphas, delta)
    cum = ad.cumsum(seg, axis=0)
    total = ad.narrow(cum, 0, pm.m - 1, 1)
    if pm.m > 1:
        prefix = ad.concat([Tensor(np.zeros(1)), ad.narrow(cum, 0, 0, pm.m - 1)], 0)
    else:
        prefix = Tensor(np.zeros(1))
    return alphas, seg, cum, prefix, total


def _check_unit_domain(values: np.ndarray, what: str):
    if np.any(values < 0.0) or np.any(values > 1.0):
        raise ContractViolation(f"{what} must lie in [0, 1]")


def map_forward(pm: PiecewiseMonotoneMap, v) -> Tensor:
    """Evaluate the map. Accepts a Tensor or array of any shape in [0, 1]."""
    v = v if isinstance(v, Tensor) else Tensor(np.asarray(v, dtype=np.float64))
    _check_unit_domain(v.data, "map_forward input")
    alphas, _, _, prefix, total = _map_tables(pm)
    pos = ad.mul(v, float(pm.m))
    k = np.minimum(np.floor(pos.data).astype(np.int64), pm.m - 1)
    k = np.maximum(k, 0)
    frac = ad.sub(pos, k.astype(np.float64))
    num = ad.add(ad.gather1d(prefix, k),
                 ad.mul(ad.mul(ad.gather1d(alphas, k), frac), 1.0 / pm.m))
    return ad.div(num, _scalarize(total))


def _scalarize(t: Tensor) -> Tensor:
    """Reshape a (1,) tensor to () so it broadcasts against any shape."""
    return ad.reshape(t, ())


def map_inverse(pm: PiecewiseMonotoneMap, y) -> Tensor:
    """Invert the map by locating the output piece and solving the line."""
    y = y if isinstance(y, Tensor) else Tensor(np.asarray(y, dtype=np.float64))
    _check_unit_domain(y.data, "map_inverse input")
    alphas, seg, cum, prefix, total = _map_tables(pm)
    bounds = cum.data / total.data[0]
    k = np.searchsorted(bounds, y.data, side="left")
    k = np.minimum(np.maximum(k, 0), pm.m - 1)
    raw = ad.sub(ad.mul(y, _scalarize(total)), ad.gather1d(prefix, k))
    frac = ad.div(raw, ad.gather1d(seg, k))
    return ad.mul(ad.add(frac, k.astype(np.float64)), 1.0 / pm.m)


class AxisParam:
    """Learnable luminance axis: a raw 3-vector squashed to a unit vector in
    the nonnegative octant via componentwise absolute value."""

    def __init__(self, raw=(1.0, 1.0, 1.0), requires_grad: bool = True):
        if isinstance(raw, Tensor):
            if raw.data.shape != (3,):
                raise ContractViolation(
                    f"axis raw parameter must be a 3-vector, got {raw.data.shape}")
            self.raw = raw
            return
        arr = np.asarray(raw, dtype=np.float64)
        if arr.shape != (3,):
            raise ContractViolation(f"axis raw parameter must be a 3-vector, got {arr.shape}")
        self.raw = Tensor(arr.copy(), requires_grad=requires_grad)

    def unit(self) -> Tensor:
        return normalize_axis(self.raw)

    def unit_array(self) -> np.ndarray:
        return normalize_axis(Tensor(self.raw.data)).data

    def state_dict(self) -> dict:
        return {"raw": [float(v) for v in self.raw.data]}


def normalize_axis(raw) -> Tensor:
    """|raw| / ||raw||: a unit vector with nonnegative components."""
    raw = raw if isinstance(raw, Tensor) else Tensor(np.asarray(raw, dtype=np.float64))
    if not np.any(raw.data != 0.0):
        raise ContractViolation("axis raw parameter must be nonzero")
    norm = ad.sqrt(ad.tsum(ad.mul(raw, raw)))
    return ad.div(ad.absolute(raw), norm)


def orthobasis(n) -> tuple:
    """Deterministic orthonormal basis (e1, e2) of the plane orthogonal to n.

    e1 is Gram-Schmidt of (1,0,0) against n, falling back to (0,1,0) when the
    axis is nearly collinear with the first reference; e2 = n x e1, making
    {e1, e2, n} right-handed.
    """
    n = n if isinstance(n, Tensor) else Tensor(np.asarray(n, dtype=np.float64))
    ref = np.array([1.0, 0.0, 0.0])
    if abs(float(n.data[0])) > 0.9:
        ref = np.array([0.0, 1.0, 0.0])
    d = ad.tsum(ad.mul(n, ref))
    v = ad.sub(Tensor(ref), ad.mul(n, d))
    e1 = ad.div(v, ad.sqrt(ad.tsum(ad.mul(v, v))))
    e2 = _cross(n, e1)
    return e1, e2


def _cross(a: Tensor, b: Tensor) -> Tensor:
    def comp(t, i):
        return ad.narrow(t, 0, i, 1)

    c0 = ad.sub(ad.mul(comp(a, 1), comp(b, 2)), ad.mul(comp(a, 2), comp(b, 1)))
    c1 = ad.sub(ad.mul(comp(a, 2), comp(b, 0)), ad.mul(comp(a, 0), comp(b, 2)))
    c2 = ad.sub(ad.mul(comp(a, 0), comp(b, 1)), ad.mul(comp(a, 1), comp(b, 0)))
    return ad.concat([c0, c1, c2], 0)


_CUBE_CORNERS = np.array(
    [[r, g, b] for r in (0.0, 1.0) for g in (0.0, 1.0) for b in (0.0, 1.0)]
)


def max_radius(n) -> Tensor:
    """Largest distance from the luminance axis over the RGB cube corners."""
    n = n if isinstance(n, Tensor) else Tensor(np.asarray(n, dtype=np.float64))
    proj = ad.tsum(ad.mul(Tensor(_CUBE_CORNERS), n), axis=1, keepdims=True)
    perp = ad.sub(Tensor(_CUBE_CORNERS), ad.mul(proj, n))
    d = ad.sqrt(ad.tsum(ad.mul(perp, perp), axis=1))
    best = int(np.argmax(d.data))
    return _scalarize(ad.narrow(d, 0, best, 1))


class LhsiParams:
    """All learnable state of the color space: axis plus three channel maps."""

    def __init__(self, axis: AxisParam = None,
                 map_t: PiecewiseMonotoneMap = None,
                 map_r: PiecewiseMonotoneMap = None,
                 map_theta: PiecewiseMonotoneMap = None,
                 intervals: int = DEFAULT_INTERVALS,
                 requires_grad: bool = True):
        self.axis = axis or AxisParam(requires_grad=requires_grad)
        self.map_t = map_t or PiecewiseMonotoneMap(intervals, requires_grad=requires_grad)
        self.map_r = map_r or PiecewiseMonotoneMap(intervals, requires_grad=requires_grad)
        self.map_theta = map_theta or PiecewiseMonotoneMap(intervals, requires_grad=requires_grad)

    @classmethod
    def identity(cls, intervals: int = DEFAULT_INTERVALS,
                 requires_grad: bool = True) -> "LhsiParams":
        """Defaults: axis raw (1,1,1) and all-zero u, i.e. three identity maps."""
        return cls(intervals=intervals, requires_grad=requires_grad)

    @classmethod
    def classic_hsi(cls, intervals: int = DEFAULT_INTERVALS) -> "LhsiParams":
        """The fixed configuration equal to the classical HSI construction."""
        return cls(intervals=intervals, requires_grad=False)

    def learnables(self) -> list:
        return [self.axis.raw, self.map_t.u, self.map_r.u, self.map_theta.u]

    def state_dict(self) -> dict:
        return {
            "axis_raw": [float(v) for v in self.axis.raw.data],
            "maps": {
                "t": self.map_t.state_dict(),
                "r": self.map_r.state_dict(),
                "theta": self.map_theta.state_dict(),
            },
        }

    @classmethod
    def from_state(cls, state: dict, requires_grad: bool = True) -> "LhsiParams":
        return cls(
            axis=AxisParam(np.asarray(state["axis_raw"]), requires_grad=requires_grad),
            map_t=PiecewiseMonotoneMap.from_state(state["maps"]["t"], requires_grad),
            map_r=PiecewiseMonotoneMap.from_state(state["maps"]["r"], requires_grad),
            map_theta=PiecewiseMonotoneMap.from_state(state["maps"]["theta"], requires_grad),
        )


class _Frame:
    """Per-call geometric quantities derived from the axis."""

    def __init__(self, params: LhsiParams):
        self.n = params.axis.unit()
        self.e1, self.e2 = orthobasis(self.n)
        self.radius = max_radius(self.n)
        self.tdenom = ad.tsum(self.n)


def _wrap_unit(t: Tensor) -> Tensor:
    """Shift values into [0, 1] by subtracting the (constant) integer part."""
    return ad.sub(t, np.floor(t.data))


def rgb_to_lhsi_t(rgb: Tensor, params: LhsiParams) -> Tensor:
    """Differentiable forward transform on a (..., 3) tensor in [0, 1]."""
    if rgb.data.shape[-1] != 3:
        raise ContractViolation(f"expected 3 channels, got {rgb.data.shape[-1]}")
    fr = _Frame(params)
    dots = ad.tsum(ad.mul(rgb, fr.n), axis=-1, keepdims=True)
    t = ad.clamp(ad.div(dots, fr.tdenom), 0.0, 1.0)
    px = ad.tsum(ad.mul(rgb, fr.e1), axis=-1, keepdims=True)
    py = ad.tsum(ad.mul(rgb, fr.e2), axis=-1, keepdims=True)
    # pixels on the axis pick up O(eps) chroma from rounded basis vectors;
    # snap them to exactly achromatic
    chromatic = np.maximum(np.abs(px.data), np.abs(py.data)) > 1e-14
    px = ad.mul(px, chromatic.astype(np.float64))
    py = ad.mul(py, chromatic.astype(np.float64))
    rr = ad.sqrt(ad.add(ad.mul(px, px), ad.mul(py, py)))
    r = ad.clamp(ad.div(rr, fr.radius), 0.0, 1.0)
    theta = _wrap_unit(ad.mul(ad.atan2(py, px), 1.0 / TWO_PI))
    tp = map_forward(params.map_t, t)
    rp = map_forward(params.map_r, r)
    thp = map_forward(params.map_theta, theta)
    ang = ad.mul(thp, TWO_PI)
    return ad.concat([tp, ad.mul(rp, ad.sin(ang)), ad.mul(rp, ad.cos(ang))], axis=-1)


def lhsi_to_rgb_t(rep: Tensor, params: LhsiParams) -> Tensor:
    """Differentiable inverse transform; out-of-gamut radii warn and clamp."""
    if rep.data.shape[-1] != 3:
        raise ContractViolation(f"expected 3 channels, got {rep.data.shape[-1]}")
    fr = _Frame(params)
    tp = ad.narrow(rep, rep.data.ndim - 1, 0, 1)
    c1 = ad.narrow(rep, rep.data.ndim - 1, 1, 1)
    c2 = ad.narrow(rep, rep.data.ndim - 1, 2, 1)
    rp = ad.sqrt(ad.add(ad.mul(c1, c1), ad.mul(c2, c2)))
    if np.any(rp.data > 1.0 + 1e-6):
        warnings.warn("saturation radius beyond gamut; clamping",
                      OutOfGamutWarning, stacklevel=2)
    rp = ad.clamp(rp, 0.0, 1.0)
    thp = _wrap_unit(ad.mul(ad.atan2(c1, c2), 1.0 / TWO_PI))
    t = map_inverse(params.map_t, ad.clamp(tp, 0.0, 1.0))
    r = map_inverse(params.map_r, rp)
    theta = map_inverse(params.map_theta, thp)
    traw = ad.mul(t, fr.tdenom)
    rraw = ad.mul(r, fr.radius)
    ang = ad.mul(theta, TWO_PI)
    chroma = ad.add(ad.mul(ad.mul(rraw, ad.cos(ang)), fr.e1),
                    ad.mul(ad.mul(rraw, ad.sin(ang)), fr.e2))
    return ad.clamp(ad.add(ad.mul(traw, fr.n), chroma), 0.0, 1.0)


def rgb_to_lhsi(img, params: LhsiParams):
    """Array-level forward transform (no tape). Accepts PlanarImage or array."""
    arr = as_array(img)
    out = rgb_to_lhsi_t(Tensor(arr), params).data
    return PlanarImage(out) if isinstance(img, PlanarImage) else out


def lhsi_to_rgb(img, params: LhsiParams):
    """Array-level inverse transform (no tape)."""
    arr = as_array(img)
    out = lhsi_to_rgb_t(Tensor(arr), params).data
    return PlanarImage(out) if isinstance(img, PlanarImage) else out
