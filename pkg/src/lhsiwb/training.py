"""End-to-end optimization of the color space and network.

The loop follows (crop -> corrupt -> forward -> loss -> backward -> Adam) per
batch, with a multi-step learning-rate schedule. Checkpoints and training
reports serialize to canonical JSON, so identical configs and seeds produce
byte-identical artifacts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .colorspace import LhsiParams
from .errors import CheckpointError, ContractViolation, NumericsError
from .image import as_array, crop_pair, resize_bilinear
from .metrics import delta_e2000
from .network import DclanConfig, DclanModel

CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    weight_decay: float = 0.0
    epochs: int = 30
    milestones: tuple = (40, 70, 90, 110)
    lr_decay: float = 0.5
    crop: int = 32
    batch_size: int = 2
    seed: int = 0
    w_rgb: float = 0.9
    w_lhsi: float = 0.1
    grad_clip: float = 1.0
    val_every: int = 5
    synth_corrupt: bool = True
    arch: DclanConfig = field(default_factory=DclanConfig)

    def __post_init__(self):
        if isinstance(self.arch, dict):
            self.arch = DclanConfig.from_dict(self.arch)
        self.milestones = tuple(int(m) for m in self.milestones)
        if list(self.milestones) != sorted(set(self.milestones)):
            raise ContractViolation("milestones must be strictly increasing")
        if abs(self.w_rgb + self.w_lhsi - 1.0) > 1e-12:
            raise ContractViolation("loss weights must sum to 1")

    def to_dict(self) -> dict:
        return {
            "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2,
            "weight_decay": self.weight_decay, "epochs": self.epochs,
            "milestones": list(self.milestones), "lr_decay": self.lr_decay,
            "crop": self.crop, "batch_size": self.batch_size, "seed": self.seed,
            "w_rgb": self.w_rgb, "w_lhsi": self.w_lhsi,
            "grad_clip": self.grad_clip, "val_every": self.val_every,
            "synth_corrupt": self.synth_corrupt, "arch": self.arch.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "milestones" in d:
            d["milestones"] = tuple(d["milestones"])
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        return cls.from_dict(json.loads(text))


def lr_at_epoch(config: TrainConfig, epoch: int) -> float:
    """Initial lr decayed once per milestone that has been reached."""
    if epoch < 0:
        raise ContractViolation("epoch must be nonnegative")
    hits = sum(1 for m in config.milestones if m <= epoch)
    return config.lr * config.lr_decay**hits


class AdamState:
    """First/second moment accumulators, one slot per parameter."""

    def __init__(self, params: list):
        self.m = [np.zeros_like(t.data) for t in params]
        self.v = [np.zeros_like(t.data) for t in params]
        self.t = 0


def adam_step(params: list, grads: list, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.99, eps: float = 1e-8,
              weight_decay: float = 0.0):
    """One in-place Adam update with bias correction."""
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise NumericsError(f"non-finite gradient for parameter {i}; step aborted")
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if weight_decay:
            g = g + weight_decay * p.data
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def clip_gradients(grads: list, max_norm: float) -> list:
    """Scale the whole gradient list so its global L2 norm is <= max_norm."""
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total > max_norm > 0.0:
        scale = max_norm / total
        return [g * scale for g in grads]
    return grads


def total_loss(pred_rgb: Tensor, gt_rgb: Tensor, pred_rep: Tensor, gt_rep: Tensor,
               w_rgb: float = 0.9, w_lhsi: float = 0.1) -> Tensor:
    """Weighted mean-absolute-error in sRGB and in the working color space."""
    if pred_rgb.data.shape != gt_rgb.data.shape:
        raise ContractViolation("RGB prediction/target shapes differ")
    if pred_rep.data.shape != gt_rep.data.shape:
        raise ContractViolation("representation prediction/target shapes differ")
    l_rgb = ad.absolute(ad.sub(pred_rgb, gt_rgb)).mean()
    l_rep = ad.absolute(ad.sub(pred_rep, gt_rep)).mean()
    return ad.add(ad.mul(l_rgb, w_rgb), ad.mul(l_rep, w_lhsi))


def synth_corrupt(img, seed: int):
    """Apply seeded per-channel white-balance gains in linear space."""
    arr = as_array(img)
    rng = np.random.default_rng(seed)
    gains = rng.uniform(0.6, 1.4, 3)
    lin = np.clip(arr, 0.0, 1.0) ** 2.2
    lin = np.clip(lin * gains, 0.0, 1.0)
    return lin ** (1.0 / 2.2)


def make_synthetic_images(count: int, size: int, seed: int) -> list:
    """Smooth random color fields used as desk-scale clean targets.

    Each image is balanced so its linear-space channel means are (nearly)
    equal; without that neutrality prior a white-balance cast cannot be
    identified from a single image at all.
    """
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        g = int(rng.integers(2, 7))
        base = rng.uniform(0.05, 0.95, (g, g, 3))
        img = resize_bilinear(base, size, size)
        img += rng.normal(0.0, 0.015, img.shape)
        lin = np.clip(img, 0.0, 1.0) ** 2.2
        level = rng.uniform(0.2, 0.4)
        jitter = rng.uniform(0.97, 1.03, 3)
        lin = lin * (level * jitter / np.maximum(lin.mean(axis=(0, 1)), 1e-6))
        img = np.clip(lin, 0.0, 1.0) ** (1.0 / 2.2)
        out.append(np.clip(img, 0.02, 0.98))
    return out


def make_val_pairs(clean_images: list, seed: int) -> list:
    """Fixed corrupted/clean pairs for held-out evaluation."""
    return [(synth_corrupt(img, seed + 1000 + i), as_array(img))
            for i, img in enumerate(clean_images)]


@dataclass
class TrainResult:
    model: DclanModel
    config: TrainConfig
    report: list
    checkpoint_bytes: bytes
    report_bytes: bytes


def _validate_dataset(dataset, config: TrainConfig):
    if not dataset:
        raise ContractViolation("training dataset is empty")
    for inp, tgt in dataset:
        t = as_array(tgt)
        if inp is not None and as_array(inp).shape != t.shape:
            raise ContractViolation("paired input/target shapes differ")
        if config.crop > min(t.shape[0], t.shape[1]):
            raise ContractViolation(
                f"crop {config.crop} exceeds image {t.shape[0]}x{t.shape[1]}"
            )


def validate_de2000(model: DclanModel, pairs: list) -> float:
    """Mean per-image CIEDE2000 of corrected outputs against targets."""
    errs = [delta_e2000(model.correct(inp), tgt) for inp, tgt in pairs]
    return float(np.mean(errs))


def train_loop(config: TrainConfig, dataset: list, val_pairs=None, log=None):
    """Optimize a fresh model on (input, target) pairs.

    dataset entries are (input, target) arrays; a None input means the target
    is a clean image and the input is synthesized per step with seeded
    white-balance corruption. Returns a TrainResult whose checkpoint and
    report bytes are deterministic functions of (config, dataset).
    """
    _validate_dataset(dataset, config)
    say = log if log is not None else (lambda msg: None)
    model = DclanModel(config.arch, seed=config.seed)
    named = model.named_learnables()
    params = [t for _, t in named]
    state = AdamState(params)
    rng = np.random.default_rng(config.seed)
    report = []

    def record_val(epoch: int, entry: dict):
        if val_pairs:
            entry["val_de2000"] = validate_de2000(model, val_pairs)
            say(f"epoch {epoch}: val dE2000 {entry['val_de2000']:.4f}")

    entry0 = {"epoch": 0, "lr": lr_at_epoch(config, 0), "train_loss": None}
    record_val(0, entry0)
    report.append(entry0)

    for epoch in range(config.epochs):
        lr = lr_at_epoch(config, epoch)
        order = rng.permutation(len(dataset))
        losses = []
        for start in range(0, len(order), config.batch_size):
            idxs = order[start : start + config.batch_size]
            xs, ys = [], []
            for idx in idxs:
                inp, tgt = dataset[idx]
                tgt = as_array(tgt)
                if inp is None:
                    tgt_c, _ = crop_pair(tgt, tgt, config.crop, rng)
                    inp_c = synth_corrupt(tgt_c, int(rng.integers(2**62)))
                else:
                    inp_c, tgt_c = crop_pair(as_array(inp), tgt, config.crop, rng)
                xs.append(inp_c)
                ys.append(tgt_c)
            x = np.stack(xs)
            y = np.stack(ys)
            with ad.Tape() as tape:
                out = model.forward_t(Tensor(x))
                gt_rep = model.adapter.to_rep_t(Tensor(y))
                loss = total_loss(out["rgb"], Tensor(y), out["rep"], gt_rep,
                                  config.w_rgb, config.w_lhsi)
            lval = loss.item()
            if not np.isfinite(lval):
                raise NumericsError(
                    f"non-finite loss at epoch {epoch}, step {start // config.batch_size}"
                )
            grads = tape.backward(loss)
            glist = [grads.wrt(p) for p in params]
            if config.grad_clip and config.grad_clip > 0:
                glist = clip_gradients(glist, config.grad_clip)
            adam_step(params, glist, state, lr, config.beta1, config.beta2,
                      weight_decay=config.weight_decay)
            losses.append(lval)
        entry = {"epoch": epoch + 1, "lr": lr, "train_loss": float(np.mean(losses))}
        say(f"epoch {epoch + 1}: lr {lr:.2e} train loss {entry['train_loss']:.6f}")
        if val_pairs and ((epoch + 1) % config.val_every == 0
                          or epoch + 1 == config.epochs):
            record_val(epoch + 1, entry)
        report.append(entry)

    ckpt = checkpoint_bytes(model, config, config.epochs)
    rep = report_bytes(report)
    return TrainResult(model=model, config=config, report=report,
                       checkpoint_bytes=ckpt, report_bytes=rep)


# ---------------------------------------------------------------------------
# serialization


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode() + b"\n"


def report_bytes(report: list) -> bytes:
    return _canonical({"report": report})


def checkpoint_dict(model: DclanModel, config: TrainConfig, epoch: int) -> dict:
    lhsi = model.lhsi_params.state_dict()
    return {
        "version": CHECKPOINT_VERSION,
        "axis_raw": lhsi["axis_raw"],
        "maps": lhsi["maps"],
        "weights": {
            name: {"shape": list(t.data.shape), "data": t.data.reshape(-1).tolist()}
            for name, t in model.named_parameters()
        },
        "config": config.to_dict(),
        "epoch": int(epoch),
    }


def checkpoint_bytes(model: DclanModel, config: TrainConfig, epoch: int) -> bytes:
    return _canonical(checkpoint_dict(model, config, epoch))


def save_checkpoint(path, model: DclanModel, config: TrainConfig, epoch: int):
    with open(path, "wb") as f:
        f.write(checkpoint_bytes(model, config, epoch))


def load_checkpoint(path):
    """Restore (model, config, epoch) from a checkpoint file."""
    try:
        with open(path, "rb") as f:
            data = json.loads(f.read().decode())
    except (OSError, ValueError, UnicodeDecodeError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from None
    for key in ("version", "axis_raw", "maps", "weights", "config", "epoch"):
        if key not in data:
            raise CheckpointError(f"checkpoint missing field {key!r}")
    if data["version"] != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {data['version']} "
            f"(expected {CHECKPOINT_VERSION})"
        )
    config = TrainConfig.from_dict(data["config"])
    model = DclanModel(config.arch, seed=config.seed)
    restored = LhsiParams.from_state(
        {"axis_raw": data["axis_raw"], "maps": data["maps"]},
        requires_grad=model.lhsi_params.axis.raw.requires_grad,
    )
    _assign(model.lhsi_params.axis.raw, restored.axis.raw.data, "axis_raw")
    for name in ("map_t", "map_r", "map_theta"):
        _assign(getattr(model.lhsi_params, name).u,
                getattr(restored, name).u.data, name)
    table = dict(model.named_parameters())
    names = set(table)
    got = set(data["weights"])
    if names != got:
        missing = sorted(names - got)[:3]
        extra = sorted(got - names)[:3]
        raise CheckpointError(
            f"weight names do not match the architecture "
            f"(missing {missing}, unexpected {extra})"
        )
    for name, spec in data["weights"].items():
        arr = np.asarray(spec["data"], dtype=np.float64).reshape(spec["shape"])
        _assign(table[name], arr, name)
    return model, config, int(data["epoch"])


def _assign(tensor: Tensor, value: np.ndarray, name: str):
    if tensor.data.shape != value.shape:
        raise CheckpointError(
            f"shape mismatch for {name}: checkpoint {value.shape} "
            f"vs model {tensor.data.shape}"
        )
    tensor.data = np.ascontiguousarray(value, dtype=np.float64)
