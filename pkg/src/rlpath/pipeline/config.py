"""Run configuration for the closed-loop trainer and the learning-rate schedule."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..budget import round_half_away

MODES = ("ours", "A1_grad_approx", "A2_uniform", "B1_no_encoder", "B2_no_temporal", "C_averaged", "small")
EVAL_BUDGETS = (0.01, 0.1, 0.3, 0.5, 1.0, 2.0, 4.0)
SCENES = ("sphere_box", "mirror", "flicker", "checker")


class ConfigError(ValueError):
    pass


class SubSampleBudgetError(ConfigError):
    """A variant that needs at least one sample per pixel got a budget below 1 spp."""


_SUB1_REASON = {
    "A1_grad_approx": (
        "the numerical gradient (I_ref - I_s) / s is undefined at s = 0, so every pixel needs "
        "at least one sample and the average budget must be >= 1 spp"
    ),
    "A2_uniform": "uniform sampling cannot spend less than one sample on every pixel; the average budget must be >= 1 spp",
}


def check_budget(mode: str, spp: float) -> None:
    if spp < 0 or not math.isfinite(spp):
        raise ConfigError(f"spp budget must be a finite value >= 0, got {spp}")
    if mode in _SUB1_REASON and spp < 1.0:
        raise SubSampleBudgetError(f"{mode} rejects budget {spp} spp: {_SUB1_REASON[mode]}")


@dataclass
class VariantConfig:
    mode: str = "ours"
    spp_budget_avg: float = 2.0
    resolution: tuple[int, int] = (64, 64)
    epochs: int = 30
    batch: int = 4
    seed: int = 0
    lr_max: float = 1e-3
    lr_min: float = 1e-8
    warmup_frac: float = 0.15
    policy_lr_scale: float = 1.0
    ppo_epochs: int = 4
    ppo_minibatch: int = 4
    clip: float = 0.2
    pixel_ratio: bool = False
    entropy_coef: float = 1e-3
    gamma: float = 0.99
    lam: float = 0.95
    log_std_init: float = -1.0
    head_bias: float = 0.0
    max_grad_norm: float = 1.0
    interleave: int = 1
    augment: bool = True
    warp_mode: str = "bilinear"
    cap: int = 8
    train_scenes: tuple[str, ...] = ("sphere_box", "mirror", "flicker")
    test_scenes: tuple[str, ...] = ("checker",)
    eval_budgets: tuple[float, ...] = EVAL_BUDGETS
    stochastic_eval: bool = True
    staged: bool = False
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.resolution = tuple(self.resolution)
        self.train_scenes = tuple(self.train_scenes)
        self.test_scenes = tuple(self.test_scenes)
        self.eval_budgets = tuple(float(b) for b in self.eval_budgets)
        self.validate()

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"unknown variant {self.mode!r}; expected one of {MODES}")
        check_budget(self.mode, self.spp_budget_avg)
        if self.epochs < 1 or self.batch < 1:
            raise ConfigError("epochs and batch must be >= 1")
        if not (0 < self.lr_min <= self.lr_max):
            raise ConfigError("need 0 < lr_min <= lr_max")
        if not (0.0 <= self.warmup_frac < 1.0):
            raise ConfigError("warmup_frac must be in [0, 1)")
        h, w = self.resolution
        if h % 16 or w % 16:
            raise ConfigError(f"resolution {h}x{w} must be divisible by 16")
        if self.spp_budget_avg > self.cap:
            raise ConfigError(f"average budget {self.spp_budget_avg} exceeds the per-pixel cap {self.cap}")
        if self.warp_mode not in ("bilinear", "nearest"):
            raise ConfigError(f"unknown warp mode {self.warp_mode!r}")
        if self.interleave < 1:
            raise ConfigError("interleave must be >= 1")
        if set(self.train_scenes) & set(self.test_scenes):
            raise ConfigError("train and test scenes overlap")

    # ---- derived switches

    @property
    def net_size(self) -> str:
        return "small" if self.mode == "small" else "normal"

    @property
    def uses_policy(self) -> bool:
        return self.mode in ("ours", "B1_no_encoder", "B2_no_temporal", "C_averaged", "small")

    @property
    def uses_encoder(self) -> bool:
        return self.mode not in ("B1_no_encoder", "B2_no_temporal")

    @property
    def temporal(self) -> bool:
        return self.mode != "B2_no_temporal"

    @property
    def averaged(self) -> bool:
        return self.mode == "C_averaged"

    def budget_total(self, spp: float | None = None) -> int:
        h, w = self.resolution
        s = self.spp_budget_avg if spp is None else spp
        return int(round_half_away(s * h * w))

    # ---- serialization

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("resolution", "train_scenes", "test_scenes", "eval_budgets"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "VariantConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "VariantConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(d.get("variant", d))

    def replace(self, **kw) -> "VariantConfig":
        d = self.to_dict()
        d.update(kw)
        return VariantConfig.from_dict(d)


def lr_schedule(step: int, total_steps: int, lr_max: float, lr_min: float, warmup_frac: float = 0.15) -> float:
    """Linear warmup from ``lr_min`` to ``lr_max``, then exponential decay back to ``lr_min``."""
    if total_steps <= 0:
        return lr_max
    s = min(max(step, 0), total_steps)
    warm = warmup_frac * total_steps
    if s <= warm and warm > 0:
        return lr_min + (lr_max - lr_min) * (s / warm)
    frac = (s - warm) / (total_steps - warm)
    return lr_max * math.exp(frac * math.log(lr_min / lr_max))
