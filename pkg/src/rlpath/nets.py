"""Sampling-importance UNet, latent encoder CNN, denoiser UNet and the value critic."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .scenegen import rng
from .tensorgrad import Parameter, Tensor, ops
from .tensorgrad.checkpoint import config_hash

LATENT = 32
AUX = 7
SAMPLES = 24
KINDS = ("importance", "encoder", "denoiser", "critic")
SIZES = ("small", "normal", "large")


class NetError(ValueError):
    pass


@dataclass(frozen=True)
class NetConfig:
    kind: str
    size: str
    in_ch: int
    out_ch: int
    channels: tuple[int, ...]
    arch: str  # "unet" or "plain"
    kernel: int = 3
    final: str = "none"  # "tanh" or "none"
    extra: dict = field(default_factory=dict)

    @property
    def levels(self) -> int:
        return len(self.channels) if self.arch == "unet" else 1

    @property
    def divisor(self) -> int:
        return 2 ** (self.levels - 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        d = dict(d)
        d["channels"] = tuple(d["channels"])
        return cls(**d)

    def hash(self) -> str:
        return config_hash(self.to_dict())


def build_variant(kind: str, size: str = "normal") -> NetConfig:
    if kind not in KINDS:
        raise NetError(f"unknown network kind {kind!r}; expected one of {KINDS}")
    if size not in SIZES:
        raise NetError(f"unknown size {size!r}; expected one of {SIZES}")
    if kind == "importance":
        inc = LATENT + AUX
        if size == "small":
            return NetConfig(kind, size, inc, 1, (1, 1, 1), "plain", 3, "tanh")
        sched = (4, 8, 16, 32, 64) if size == "normal" else (64, 128, 256, 512, 1024)
        return NetConfig(kind, size, inc, 1, sched, "unet", 3, "tanh")
    if kind == "encoder":
        inc = LATENT + SAMPLES
        if size == "small":
            return NetConfig(kind, size, inc, LATENT, (48, 40, 32, LATENT), "plain", 1, "tanh")
        if size == "normal":
            return NetConfig(kind, size, inc, LATENT, (48, 40, 32, LATENT), "plain", 3, "tanh")
        return NetConfig(kind, size, inc, LATENT, (48, 40, 32, 32, 32, LATENT), "plain", 3, "tanh")
    if kind == "denoiser":
        base = (32, 48, 64, 80, 112)
        scale = {"small": 0.5, "normal": 1.0, "large": 2.0}[size]
        return NetConfig(kind, size, LATENT, 3, tuple(int(c * scale) for c in base), "unet", 3, "none")
    return NetConfig(kind, size, LATENT + AUX, 1, (16, 8, 1), "plain", 3, "none")


def _layer_shapes(cfg: NetConfig) -> list[tuple[str, int, int, int]]:
    """(name, in_ch, out_ch, kernel) of every conv in order."""
    k = cfg.kernel
    if cfg.arch == "plain":
        out, prev = [], cfg.in_ch
        for n, c in enumerate(cfg.channels):
            out.append((f"conv{n}", prev, c, k))
            prev = c
        return out
    ch = cfg.channels
    out = [("enc0", cfg.in_ch, ch[0], k)]
    for lv in range(1, len(ch)):
        out.append((f"enc{lv}", ch[lv - 1], ch[lv], k))
    for lv in range(len(ch) - 2, -1, -1):
        out.append((f"dec{lv}", ch[lv + 1] + ch[lv], ch[lv], k))
    out.append(("head", ch[0], cfg.out_ch, k))
    return out


def param_count(cfg: NetConfig) -> int:
    return sum(o * i * k * k + o for _, i, o, k in _layer_shapes(cfg))


class Network:
    """A convolutional network described by a :class:`NetConfig`."""

    def __init__(self, cfg: NetConfig, seed: int = 0, dtype=np.float32, zero: bool = False):
        self.cfg = cfg
        self.layers: dict[str, tuple[Parameter, Parameter]] = {}
        gen = np.random.default_rng(rng.derive_seed(seed, rng.DOMAIN_INIT, KINDS.index(cfg.kind)))
        for name, i, o, k in _layer_shapes(cfg):
            limit = np.sqrt(6.0 / ((i + o) * k * k))
            w = np.zeros((o, i, k, k)) if zero else gen.uniform(-limit, limit, size=(o, i, k, k))
            self.layers[name] = (
                Parameter(w, f"{cfg.kind}.{name}.w", dtype=dtype),
                Parameter(np.zeros(o), f"{cfg.kind}.{name}.b", dtype=dtype),
            )

    @property
    def params(self) -> list[Parameter]:
        return [p for pair in self.layers.values() for p in pair]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.data for p in self.params}

    def load_state_dict(self, tensors: dict[str, np.ndarray]) -> None:
        for p in self.params:
            if p.name not in tensors:
                raise NetError(f"missing tensor {p.name}")
            arr = tensors[p.name]
            if arr.shape != p.shape:
                raise NetError(f"{p.name}: shape {arr.shape} does not match {p.shape}")
            p.data = arr.astype(p.dtype).copy()

    def astype(self, dtype) -> "Network":
        for p in self.params:
            p.data = p.data.astype(dtype)
        return self

    def num_params(self) -> int:
        return sum(p.data.size for p in self.params)

    def _conv(self, name: str, x: Tensor) -> Tensor:
        w, b = self.layers[name]
        return ops.conv2d(x, w, b, padding=self.cfg.kernel // 2)

    def _check(self, x: Tensor) -> None:
        if x.data.ndim != 4:
            raise NetError(f"{self.cfg.kind}: expected (B, C, H, W), got {x.shape}")
        if x.shape[1] != self.cfg.in_ch:
            raise NetError(f"{self.cfg.kind}: expected {self.cfg.in_ch} input channels, got {x.shape[1]}")
        d = self.cfg.divisor
        H, W = x.shape[2:]
        if H % d or W % d:
            raise NetError(
                f"{self.cfg.kind}: resolution {H}x{W} must be divisible by {d}; pad the input to a multiple of {d}"
            )

    def __call__(self, x: Tensor, apply_final: bool = True) -> Tensor:
        self._check(x)
        cfg = self.cfg
        if cfg.arch == "plain":
            names = list(self.layers)
            h = x
            for n, name in enumerate(names):
                h = self._conv(name, h)
                if n < len(names) - 1:
                    h = ops.relu(h)
        else:
            L = len(cfg.channels)
            skips = []
            h = ops.relu(self._conv("enc0", x))
            skips.append(h)
            for lv in range(1, L):
                h = ops.relu(self._conv(f"enc{lv}", ops.maxpool2(h)))
                skips.append(h)
            for lv in range(L - 2, -1, -1):
                h = ops.concat_channels(ops.upsample2(h), skips[lv])
                h = ops.relu(self._conv(f"dec{lv}", h))
            h = self._conv("head", h)
        if apply_final and cfg.final == "tanh":
            h = ops.tanh(h)
        return h


def importance_forward(net: Network, latent: Tensor, aux: Tensor) -> Tensor:
    """Heatmap in (-1, 1) from the warped latent and the aux features."""
    return net(ops.concat_channels(latent, aux))


def importance_logits(net: Network, latent: Tensor, aux: Tensor) -> Tensor:
    """The pre-tanh output; the policy mean."""
    return net(ops.concat_channels(latent, aux), apply_final=False)


def encode(net: Network, warped: Tensor, samples: Tensor) -> Tensor:
    return net(ops.concat_channels(warped, samples))


def denoise(net: Network, latent: Tensor) -> Tensor:
    return net(latent)


def critic_value(net: Network, latent: Tensor, aux: Tensor) -> Tensor:
    """Scalar value per batch item, shape (B,)."""
    v = net(ops.concat_channels(latent, aux))
    return ops.mean(ops.reshape(v, (v.shape[0], -1)), axis=1)
