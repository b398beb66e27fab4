"""Dual-branch chromatic/luminance attention network.

The network runs in a cylindrical color representation: channel 0 is the
intensity map, channels 1-2 the chroma maps. Each branch is a stream of
Mamba-attention blocks inside a two-branch U-shaped encoder/decoder; a block
is a MambaVision module (depthwise conv + selective state-space scan) per
branch followed by a cross-attention module that lets each branch query the
other. Residual heads are zero-initialized, so the untrained network is the
identity up to the color-space round trip.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .colorspace import LhsiParams
from .errors import ContractViolation
from .image import PlanarImage, as_array
from .spaces import SpaceAdapter, make_adapter


@dataclass
class DclanConfig:
    """Architecture hyperparameters. Defaults are the desk-scale network."""

    scales: int = 2
    widths: tuple = (16, 32)
    blocks_per_scale: int = 1
    expand: int = 2
    kernel_size: int = 3
    heads: int = 2
    state_size: int = 8
    attn_window: int = 64
    map_intervals: int = 32
    space: str = "lhsi"

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if self.scales < 1:
            raise ContractViolation("scales must be >= 1")
        if len(self.widths) != self.scales:
            raise ContractViolation(
                f"widths {self.widths} must list one width per scale ({self.scales})"
            )
        for w in self.widths:
            if w % 2 != 0:
                raise ContractViolation(f"channel width {w} must be even")
            if w % self.heads != 0:
                raise ContractViolation(f"width {w} not divisible by {self.heads} heads")
            if (w * self.expand) % 2 != 0:
                raise ContractViolation("expanded width must split into two halves")
        if self.kernel_size % 2 != 1:
            raise ContractViolation("depthwise kernel size must be odd")
        if self.attn_window < 1 or (self.attn_window & (self.attn_window - 1)) != 0:
            raise ContractViolation("attn_window must be a positive power of two")

    @property
    def spatial_divisor(self) -> int:
        """Input H and W must be multiples of this (downsampling plus the
        raster-window constraint of the attention module)."""
        win_dim = 1
        while win_dim * win_dim < self.attn_window:
            win_dim *= 2
        return win_dim * (2 ** (self.scales - 1))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DclanConfig":
        d = dict(d)
        d["widths"] = tuple(d.get("widths", (16, 32)))
        return cls(**d)


def ssm_discretize(A_diag, B, delta):
    """Zero-order-hold discretization: Abar = exp(delta*A),
    Bbar = ((exp(delta*A) - 1)/A) * B. Elementwise on conforming shapes."""
    A_diag = A_diag if isinstance(A_diag, Tensor) else Tensor(np.asarray(A_diag, float))
    B = B if isinstance(B, Tensor) else Tensor(np.asarray(B, dtype=np.float64))
    delta = delta if isinstance(delta, Tensor) else Tensor(np.asarray(delta, float))
    if np.any(delta.data <= 0.0):
        raise ContractViolation("ZOH discretization requires delta > 0")
    if np.any(A_diag.data >= 0.0):
        raise ContractViolation("ZOH discretization requires diagonal A < 0")
    abar = ad.exp(ad.mul(delta, A_diag))
    bbar = ad.mul(ad.div(ad.sub(abar, 1.0), A_diag), B)
    return abar, bbar


# ---------------------------------------------------------------------------
# parameter containers


class _Registry:
    """Insertion-ordered name -> Tensor table for checkpointing."""

    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)
        self.table: dict[str, Tensor] = {}

    def linear_init(self, name, d_in, d_out, zero=False):
        if zero:
            w = np.zeros((d_in, d_out))
        else:
            w = self.rng.normal(0.0, 1.0 / np.sqrt(d_in), (d_in, d_out))
        return self.add(name, w)

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.table:
            raise ContractViolation(f"duplicate parameter name {name}")
        t = Tensor(np.asarray(value, dtype=np.float64), requires_grad=True)
        self.table[name] = t
        return t


class Linear:
    def __init__(self, reg: _Registry, name: str, d_in: int, d_out: int, zero=False):
        self.w = reg.linear_init(f"{name}.w", d_in, d_out, zero=zero)
        self.b = reg.add(f"{name}.b", np.zeros(d_out))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.affine(x, self.w, self.b)


class LayerNorm:
    def __init__(self, reg: _Registry, name: str, dim: int):
        self.gamma = reg.add(f"{name}.gamma", np.ones(dim))
        self.beta = reg.add(f"{name}.beta", np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.mul(ad.layer_norm(x), self.gamma), self.beta)


class Mlp:
    def __init__(self, reg: _Registry, name: str, dim: int, hidden: int):
        self.fc1 = Linear(reg, f"{name}.fc1", dim, hidden)
        self.fc2 = Linear(reg, f"{name}.fc2", hidden, dim)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ad.silu(self.fc1(x)))


class DepthwiseConv1d:
    def __init__(self, reg: _Registry, name: str, dim: int, kernel: int):
        w = reg.rng.normal(0.0, 1.0 / np.sqrt(kernel), (kernel, dim))
        self.w = reg.add(f"{name}.w", w)
        self.b = reg.add(f"{name}.b", np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.dwconv1d(x, self.w), self.b)


class Ssm:
    """Content-aware diagonal state-space layer over token sequences."""

    def __init__(self, reg: _Registry, name: str, dim: int, state: int):
        self.dim = dim
        self.state = state
        a0 = -np.tile(np.arange(1.0, state + 1.0), (dim, 1))
        self.A = reg.add(f"{name}.A", a0)
        self.w_b = reg.linear_init(f"{name}.w_b", dim, state)
        self.w_c = reg.linear_init(f"{name}.w_c", dim, state)
        self.w_dt = reg.linear_init(f"{name}.w_dt", dim, dim)
        dt0 = np.exp(reg.rng.uniform(np.log(0.01), np.log(0.1), dim))
        self.b_dt = reg.add(f"{name}.b_dt", np.log(np.expm1(dt0)))

    def __call__(self, x: Tensor) -> Tensor:
        if np.any(self.A.data >= 0.0):
            raise ContractViolation("SSM transition matrix must stay negative")
        delta = ad.add(ad.softplus(ad.add(ad.matmul(x, self.w_dt), self.b_dt)), 1e-8)
        bm = ad.matmul(x, self.w_b)
        cm = ad.matmul(x, self.w_c)
        return ad.selective_scan_core(delta, self.A, bm, cm, x)


def selective_scan(x, ssm: Ssm) -> Tensor:
    """Run a token sequence (L, C) or batch (B, L, C) through an Ssm layer."""
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    squeeze = x.data.ndim == 2
    if squeeze:
        x = ad.reshape(x, (1,) + x.data.shape)
    y = ssm(x)
    return ad.reshape(y, y.data.shape[1:]) if squeeze else y


class Mvm:
    """MambaVision module: conv branch plus selective-scan branch."""

    def __init__(self, reg: _Registry, name: str, dim: int, cfg: DclanConfig):
        if dim % 2 != 0:
            raise ContractViolation(f"MVM width must be even, got {dim}")
        self.dim = dim
        inner = dim * cfg.expand
        self.half = inner // 2
        self.norm1 = LayerNorm(reg, f"{name}.norm1", dim)
        self.in_proj = Linear(reg, f"{name}.in_proj", dim, inner)
        self.conv_local = DepthwiseConv1d(reg, f"{name}.conv_local", self.half, cfg.kernel_size)
        self.conv_scan = DepthwiseConv1d(reg, f"{name}.conv_scan", self.half, cfg.kernel_size)
        self.ssm = Ssm(reg, f"{name}.ssm", self.half, cfg.state_size)
        self.fuse = Linear(reg, f"{name}.fuse", inner, dim)
        self.norm2 = LayerNorm(reg, f"{name}.norm2", dim)
        self.mlp = Mlp(reg, f"{name}.mlp", dim, inner)

    def __call__(self, x: Tensor) -> Tensor:
        z = self.in_proj(self.norm1(x))
        ax = z.data.ndim - 1
        f_local = ad.narrow(z, ax, 0, self.half)
        f_scan = ad.narrow(z, ax, self.half, self.half)
        f_local = ad.silu(self.conv_local(f_local))
        f_scan = ad.silu(self.conv_scan(f_scan))
        f_scan = self.ssm(f_scan)
        fused = self.fuse(ad.concat([f_local, f_scan], axis=ax))
        x = ad.add(x, fused)
        return ad.add(x, self.mlp(self.norm2(x)))


def mvm_forward(x, mvm: Mvm) -> Tensor:
    """Apply one MambaVision module to (L, C) or (B, L, C) tokens."""
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    squeeze = x.data.ndim == 2
    if squeeze:
        x = ad.reshape(x, (1,) + x.data.shape)
    y = mvm(x)
    return ad.reshape(y, y.data.shape[1:]) if squeeze else y


class _AttentionPath:
    """One direction of cross attention: queries from `qx`, keys and values
    from `kvx`, followed by the residual + MLP refinement."""

    def __init__(self, reg: _Registry, name: str, dim: int, cfg: DclanConfig):
        self.dim = dim
        self.heads = cfg.heads
        self.dk = dim // cfg.heads
        self.window = cfg.attn_window
        self.q = Linear(reg, f"{name}.q", dim, dim)
        self.k = Linear(reg, f"{name}.k", dim, dim)
        self.v = Linear(reg, f"{name}.v", dim, dim)
        self.out = Linear(reg, f"{name}.out", dim, dim)
        self.norm = LayerNorm(reg, f"{name}.norm", dim)
        self.mlp = Mlp(reg, f"{name}.mlp", dim, dim * cfg.expand)

    def _heads(self, t: Tensor, B: int, nw: int, w: int) -> Tensor:
        t = ad.reshape(t, (B, nw, w, self.heads, self.dk))
        return ad.transpose(t, (0, 1, 3, 2, 4))

    def __call__(self, qx: Tensor, kvx: Tensor) -> Tensor:
        B, L, C = qx.data.shape
        w = self.window if (L >= self.window and L % self.window == 0) else L
        nw = L // w
        q = self._heads(self.q(qx), B, nw, w)
        k = self._heads(self.k(kvx), B, nw, w)
        v = self._heads(self.v(kvx), B, nw, w)
        scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 2, 4, 3))),
                        1.0 / np.sqrt(self.dk))
        attn = ad.matmul(ad.softmax(scores), v)
        attn = ad.reshape(ad.transpose(attn, (0, 1, 3, 2, 4)), (B, L, C))
        refined = ad.add(self.out(attn), qx)
        return ad.add(refined, self.mlp(self.norm(refined)))


class Cam:
    """Cross-attention module; the two paths are structurally identical but
    have independent weights."""

    def __init__(self, reg: _Registry, name: str, dim: int, cfg: DclanConfig):
        if dim % cfg.heads != 0:
            raise ContractViolation(f"width {dim} not divisible by {cfg.heads} heads")
        self.i_path = _AttentionPath(reg, f"{name}.i_path", dim, cfg)
        self.hs_path = _AttentionPath(reg, f"{name}.hs_path", dim, cfg)

    def __call__(self, hs: Tensor, iv: Tensor) -> tuple:
        return self.hs_path(hs, iv), self.i_path(iv, hs)


def cam_forward(hs, iv, cam: Cam) -> tuple:
    """Apply cross attention to (L, C) or (B, L, C) token pairs."""
    hs = hs if isinstance(hs, Tensor) else Tensor(np.asarray(hs, dtype=np.float64))
    iv = iv if isinstance(iv, Tensor) else Tensor(np.asarray(iv, dtype=np.float64))
    squeeze = hs.data.ndim == 2
    if squeeze:
        hs = ad.reshape(hs, (1,) + hs.data.shape)
        iv = ad.reshape(iv, (1,) + iv.data.shape)
    ho, io = cam(hs, iv)
    if squeeze:
        return ad.reshape(ho, ho.data.shape[1:]), ad.reshape(io, io.data.shape[1:])
    return ho, io


class Mab:
    """Mamba-attention block: one MVM per branch, then cross attention."""

    def __init__(self, reg: _Registry, name: str, dim: int, cfg: DclanConfig):
        self.mvm_hs = Mvm(reg, f"{name}.mvm_hs", dim, cfg)
        self.mvm_i = Mvm(reg, f"{name}.mvm_i", dim, cfg)
        self.cam = Cam(reg, f"{name}.cam", dim, cfg)

    def __call__(self, hs: Tensor, iv: Tensor) -> tuple:
        return self.cam(self.mvm_hs(hs), self.mvm_i(iv))


def mab_forward(hs, iv, mab: Mab) -> tuple:
    """Apply one Mamba-attention block to (L, C) or (B, L, C) token pairs."""
    hs = hs if isinstance(hs, Tensor) else Tensor(np.asarray(hs, dtype=np.float64))
    iv = iv if isinstance(iv, Tensor) else Tensor(np.asarray(iv, dtype=np.float64))
    squeeze = hs.data.ndim == 2
    if squeeze:
        hs = ad.reshape(hs, (1,) + hs.data.shape)
        iv = ad.reshape(iv, (1,) + iv.data.shape)
    ho, io = mab(hs, iv)
    if squeeze:
        return ad.reshape(ho, ho.data.shape[1:]), ad.reshape(io, io.data.shape[1:])
    return ho, io


class _Branch:
    """Per-branch spatial machinery: stem, down/up resampling, head."""

    def __init__(self, reg: _Registry, name: str, in_ch: int, out_ch: int,
                 cfg: DclanConfig):
        ws = cfg.widths
        self.stem = Linear(reg, f"{name}.stem", in_ch, ws[0])
        self.down = [Linear(reg, f"{name}.down{s}", 4 * ws[s], ws[s + 1])
                     for s in range(cfg.scales - 1)]
        self.up = [Linear(reg, f"{name}.up{s}", ws[s + 1], ws[s])
                   for s in range(cfg.scales - 1)]
        self.head = Linear(reg, f"{name}.head", ws[0], out_ch, zero=True)


def _tokens(x: Tensor) -> Tensor:
    B, H, W, C = x.data.shape
    return ad.reshape(x, (B, H * W, C))


def _spatial(x: Tensor, H: int, W: int) -> Tensor:
    B, L, C = x.data.shape
    return ad.reshape(x, (B, H, W, C))


def _patch_merge(x: Tensor, proj: Linear) -> Tensor:
    """2x2 stride-2 downsample realized as patch flattening + linear."""
    B, H, W, C = x.data.shape
    x = ad.reshape(x, (B, H // 2, 2, W // 2, 2, C))
    x = ad.transpose(x, (0, 1, 3, 2, 4, 5))
    x = ad.reshape(x, (B, (H // 2) * (W // 2), 4 * C))
    return proj(x)


_UP_ONES = np.ones((1, 1, 2, 1, 2, 1))


def _upsample(x: Tensor, proj: Linear) -> Tensor:
    """Nearest 2x upsample followed by a pointwise linear."""
    B, H, W, C = x.data.shape
    x = ad.reshape(x, (B, H, 1, W, 1, C))
    x = ad.mul(x, _UP_ONES)
    x = ad.reshape(x, (B, (2 * H) * (2 * W), C))
    return proj(x)


class DclanModel:
    """The full network plus its color-space adapter and learnable space."""

    def __init__(self, config: DclanConfig = None, seed: int = 0):
        self.config = config or DclanConfig()
        cfg = self.config
        reg = _Registry(seed)
        self.lhsi_params = LhsiParams.identity(
            cfg.map_intervals, requires_grad=(cfg.space == "lhsi")
        )
        self.adapter: SpaceAdapter = make_adapter(cfg.space, self.lhsi_params)
        self.hs_branch = _Branch(reg, "hs", 2, 2, cfg)
        self.i_branch = _Branch(reg, "i", 3, 1, cfg)
        self.enc = [[Mab(reg, f"enc{s}.mab{b}", cfg.widths[s], cfg)
                     for b in range(cfg.blocks_per_scale)]
                    for s in range(cfg.scales - 1)]
        self.bottleneck = [Mab(reg, f"mid.mab{b}", cfg.widths[-1], cfg)
                           for b in range(cfg.blocks_per_scale)]
        self.dec = [[Mab(reg, f"dec{s}.mab{b}", cfg.widths[s], cfg)
                     for b in range(cfg.blocks_per_scale)]
                    for s in range(cfg.scales - 1)]
        self._table = reg.table

    # -- parameter access ---------------------------------------------------

    def named_parameters(self) -> list:
        return list(self._table.items())

    def learnables(self) -> list:
        named = [t for _, t in self._table.items()]
        return self.adapter.learnables() + named

    def named_learnables(self) -> list:
        out = []
        if self.adapter.learnables():
            out = [("lhsi.axis_raw", self.lhsi_params.axis.raw),
                   ("lhsi.map_t.u", self.lhsi_params.map_t.u),
                   ("lhsi.map_r.u", self.lhsi_params.map_r.u),
                   ("lhsi.map_theta.u", self.lhsi_params.map_theta.u)]
        return out + list(self._table.items())

    # -- forward ------------------------------------------------------------

    def _check_dims(self, H: int, W: int):
        d = self.config.spatial_divisor
        if H % d or W % d:
            raise ContractViolation(
                f"input {H}x{W} not divisible by the network's spatial divisor {d}"
            )

    def forward_t(self, rgb: Tensor) -> dict:
        """Run a (B, H, W, 3) sRGB tensor; returns rgb/rep outputs and inputs."""
        if rgb.data.ndim != 4 or rgb.data.shape[-1] != 3:
            raise ContractViolation(f"expected (B, H, W, 3), got {rgb.data.shape}")
        B, H, W, _ = rgb.data.shape
        self._check_dims(H, W)
        cfg = self.config

        rep_in = self.adapter.to_rep_t(rgb)
        i_map = ad.narrow(rep_in, 3, 0, 1)
        hs_map = ad.narrow(rep_in, 3, 1, 2)

        hs = self.hs_branch.stem(_tokens(hs_map))
        iv = self.i_branch.stem(_tokens(ad.concat([hs_map, i_map], axis=3)))

        dims = [(H // (2**s), W // (2**s)) for s in range(cfg.scales)]
        skips = []
        for s in range(cfg.scales - 1):
            for mab in self.enc[s]:
                hs, iv = mab(hs, iv)
            skips.append((hs, iv))
            h, w = dims[s]
            hs = _patch_merge(_spatial(hs, h, w), self.hs_branch.down[s])
            iv = _patch_merge(_spatial(iv, h, w), self.i_branch.down[s])
        for mab in self.bottleneck:
            hs, iv = mab(hs, iv)
        for s in reversed(range(cfg.scales - 1)):
            h, w = dims[s + 1]
            hs = ad.add(_upsample(_spatial(hs, h, w), self.hs_branch.up[s]), skips[s][0])
            iv = ad.add(_upsample(_spatial(iv, h, w), self.i_branch.up[s]), skips[s][1])
            for mab in self.dec[s]:
                hs, iv = mab(hs, iv)

        res_hs = _spatial(self.hs_branch.head(hs), H, W)
        res_i = _spatial(self.i_branch.head(iv), H, W)
        rep_out = self.adapter.sanitize_rep_t(
            ad.concat([ad.add(i_map, res_i), ad.add(hs_map, res_hs)], axis=3)
        )
        rgb_out = ad.clamp(self.adapter.from_rep_t(rep_out), 0.0, 1.0)
        return {"rgb": rgb_out, "rep": rep_out, "rep_in": rep_in}

    def correct(self, img) -> np.ndarray:
        """Tape-free inference on one HxWx3 array or PlanarImage."""
        arr = as_array(img)
        out = self.forward_t(Tensor(arr[None]))["rgb"].data[0]
        return out


def dclan_forward(img, model: DclanModel):
    """Correct one image; accepts and returns PlanarImage or array."""
    out = model.correct(img)
    return PlanarImage(out) if isinstance(img, PlanarImage) else out
