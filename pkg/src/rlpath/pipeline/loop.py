"""The closed sampling loop: warp, allocate, sample, encode, denoise, learn."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import budget, nets, policy, quality, reservoir
from ..dataset import Clip, Dataset
from ..scenegen import rng
from ..tensorgrad import Adam, Tensor, backward, checkpoint
from .augment import augment_clip
from .config import VariantConfig, check_budget, lr_schedule

CHECKPOINT = "checkpoint.bin"
METRICS = "metrics.csv"
TELEMETRY = "telemetry.csv"
SPLITS = ("train", "test")


class DivergenceError(FloatingPointError):
    pass


# ---- models


@dataclass
class Models:
    cfg: VariantConfig
    importance: nets.Network
    encoder: nets.Network | None
    denoiser: nets.Network
    critic: nets.Network
    policy: policy.Policy
    opt_sup: Adam
    opt_policy: Adam
    opt_critic: Adam
    value_norm: policy.ReturnNorm = field(default_factory=policy.ReturnNorm)

    def networks(self) -> list[nets.Network]:
        return [n for n in (self.importance, self.encoder, self.denoiser, self.critic) if n is not None]

    def supervised_params(self):
        enc = self.encoder.params if self.encoder is not None else []
        return enc + self.denoiser.params

    def net_configs(self) -> dict:
        return {n.cfg.kind: n.cfg.to_dict() for n in self.networks()}

    def config_dict(self) -> dict:
        return {"variant": self.cfg.to_dict(), "nets": self.net_configs()}

    def config_hash(self) -> str:
        return checkpoint.config_hash(self.config_dict())

    def optimizers(self) -> dict[str, Adam]:
        return {"sup": self.opt_sup, "policy": self.opt_policy, "critic": self.opt_critic}

    def tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for n in self.networks():
            out.update(n.state_dict())
        out["policy.log_std"] = self.policy.log_std.data
        for tag, opt in self.optimizers().items():
            for k, a in opt.state_arrays().items():
                out[f"{tag}.{k}"] = a
        return out

    def load_tensors(self, tensors: dict[str, np.ndarray], adam_t: dict[str, int] | None = None) -> None:
        for n in self.networks():
            n.load_state_dict(tensors)
        self.policy.log_std.data = tensors["policy.log_std"].astype(np.float32).copy()
        for tag, opt in self.optimizers().items():
            pre = f"{tag}."
            arrs = {k[len(pre) :]: v for k, v in tensors.items() if k.startswith(pre + "adam.")}
            opt.load_state_arrays(arrs, (adam_t or {}).get(tag, 0))


def build_models(cfg: VariantConfig) -> Models:
    size = cfg.net_size
    imp = nets.Network(nets.build_variant("importance", size), seed=cfg.seed)
    if cfg.head_bias:
        head_b = imp.layers[list(imp.layers)[-1]][1]
        head_b.data = np.full_like(head_b.data, cfg.head_bias)
    enc = nets.Network(nets.build_variant("encoder", size), seed=cfg.seed) if cfg.uses_encoder else None
    den = nets.Network(nets.build_variant("denoiser", size), seed=cfg.seed)
    critic = nets.Network(nets.build_variant("critic", "normal"), seed=cfg.seed)
    pol = policy.Policy(imp, cfg.log_std_init)
    pol.log_std.data = pol.log_std.data.astype(np.float32)
    sup = (enc.params if enc is not None else []) + den.params
    return Models(
        cfg,
        imp,
        enc,
        den,
        critic,
        pol,
        Adam(sup, max_grad_norm=cfg.max_grad_norm),
        Adam(pol.params, max_grad_norm=cfg.max_grad_norm),
        Adam(critic.params, max_grad_norm=cfg.max_grad_norm),
    )


# ---- one frame


def feature_latent(buf: reservoir.SampleBuffer, warped: np.ndarray) -> np.ndarray:
    """Fixed 32-channel state used when there is no learned encoder.

    Channels: 24 squashed sample slots (sentinel kept at -1), the first two
    warped slots of the previous state, the sample-count code and its warped
    previous value.
    """
    s = buf.data
    phi = np.where(s >= 0, s / (1.0 + np.maximum(s, 0)), -1.0)
    code = buf.valid_count.astype(np.float32)[:, None] / reservoir.SLOTS * 2.0 - 1.0
    return np.concatenate([phi, warped[:, 0:6], code, warped[:, 30:31]], axis=1).astype(np.float32)


@dataclass
class FrameInputs:
    ref: np.ndarray  # (B, 3, H, W)
    aux: np.ndarray  # (B, 7, H, W)
    motion: np.ndarray  # (B, 2, H, W)
    bank: np.ndarray  # (B, 8, 3, H, W)


@dataclass
class StepOutput:
    warped: np.ndarray
    counts: np.ndarray
    buffer: reservoir.SampleBuffer
    samples: Tensor
    latent: Tensor
    denoised: Tensor
    loss: quality.LossValue
    frame_losses: np.ndarray
    rewards: np.ndarray
    action: policy.ActionSample | None = None
    heat: Tensor | None = None


def frame_inputs(clips: list[Clip], t: int) -> FrameInputs:
    return FrameInputs(
        np.stack([c.ref[t] for c in clips]),
        np.stack([c.aux[t] for c in clips]),
        np.stack([c.motion[t] for c in clips]),
        np.stack([c.bank[t] for c in clips]),
    )


def step_frame(
    cfg: VariantConfig,
    models: Models,
    inp: FrameInputs,
    t: int,
    carried: np.ndarray,
    seed: int,
    spp: float | None = None,
    train: bool = False,
) -> StepOutput:
    """Advance every clip of a lockstep batch by one frame."""
    B, _, H, W = inp.ref.shape
    total = cfg.budget_total(spp)
    if cfg.temporal and t > 0:
        warped = reservoir.warp(carried, inp.motion, mode=cfg.warp_mode)
    else:
        warped = np.zeros((B, nets.LATENT, H, W), dtype=np.float32)
    act = None
    heat = None
    if t == 0 or cfg.mode == "A2_uniform":
        counts = budget.uniform_counts((B, H, W), total, cfg.cap)
    elif cfg.mode == "A1_grad_approx":
        heat = nets.importance_forward(models.importance, Tensor(warped), Tensor(inp.aux))
        counts = budget.allocate(heat.data[:, 0], total, cfg.cap).counts
    else:
        deterministic = not train and not cfg.stochastic_eval
        act = policy.sample_action(models.policy, warped, inp.aux, seed, deterministic=deterministic)
        counts = budget.allocate(act.action[:, 0], total, cfg.cap).counts
    if cfg.mode == "A1_grad_approx":
        counts = budget.enforce_min_count(counts, 1)
    buf = reservoir.pack_from_bank(inp.bank, counts)
    if train and cfg.augment:
        buf = reservoir.permute_valid(buf, rng.derive_seed(seed, rng.DOMAIN_PERMUTE))
    if cfg.averaged:
        buf = reservoir.average_samples(buf)
    samples = Tensor(buf.data, requires_grad=train and cfg.mode == "A1_grad_approx")
    if cfg.uses_encoder:
        latent = nets.encode(models.encoder, Tensor(warped), samples)
    else:
        latent = Tensor(feature_latent(buf, warped))
    denoised = nets.denoise(models.denoiser, latent)
    loss = quality.mixed_loss(denoised, Tensor(inp.ref))
    if not math.isfinite(loss.item()):
        raise DivergenceError(f"mixed loss is {loss.item()} at frame {t}")
    frame_losses = quality.mixed_loss_per_image(denoised.data, inp.ref)
    rewards = np.asarray(quality.reward(frame_losses), dtype=np.float64)
    return StepOutput(warped, counts, buf, samples, latent, denoised, loss, frame_losses, rewards, act, heat)


def a1_sampler_grads(cfg: VariantConfig, models: Models, out: StepOutput, ref: np.ndarray, spp: float | None = None):
    """Sampler gradient through the finite-sample chain ``dI/ds = (I_ref - I_s) / s``."""
    g_slots = out.samples.grad
    if g_slots is None:
        return {p.name: np.zeros_like(p.data) for p in models.policy.params}
    B, _, H, W = g_slots.shape
    mask = reservoir.slot_mask(out.buffer.valid_count)[:, :, None]
    g = np.where(mask, g_slots.reshape(B, reservoir.SLOTS, 3, H, W), 0.0).sum(axis=1)  # dL/dI_s
    i_s = out.buffer.mean()
    dI_ds = budget.grad_approx(ref, i_s, out.counts[:, None])
    g_s = (g * dI_ds).sum(axis=1)
    g_x = budget.allocation_vjp(out.heat.data[:, 0].astype(np.float64), cfg.budget_total(spp), g_s)
    grads = backward(out.heat, models.importance.params, seed_grad=g_x[:, None].astype(out.heat.dtype))
    grads["policy.log_std"] = np.zeros_like(models.policy.log_std.data)
    return grads


# ---- training


@dataclass
class TrainResult:
    models: Models
    metrics: list[dict] = field(default_factory=list)
    telemetry: list[dict] = field(default_factory=list)
    epochs_run: int = 0


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _write_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        keys = list(rows[0])
        w.writerow(keys)
        for r in rows:
            w.writerow([_fmt(r[k]) for k in keys])


def _read_csv(path: Path) -> list[dict]:
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def save_checkpoint(path: Path, models: Models, epoch: int, step: int) -> None:
    extra = {
        "epoch": epoch,
        "step": step,
        "adam_t": {k: o.state.get("t", 0) for k, o in models.optimizers().items()},
        # float64 statistics go in the JSON header; tensors are stored as float32
        "value_norm": [float(v) for v in models.value_norm.state()],
    }
    checkpoint.save(path, models.tensors(), models.config_dict(), extra)


def load_checkpoint(path: Path, models: Models) -> dict:
    header, tensors = checkpoint.load(path, expect_hash=models.config_hash())
    models.load_tensors(tensors, header["extra"].get("adam_t"))
    if "value_norm" in header["extra"]:
        models.value_norm.load_state(header["extra"]["value_norm"])
    return header["extra"]


def _batches(n: int, size: int, gen: np.random.Generator) -> list[np.ndarray]:
    order = gen.permutation(n)
    return [order[k : k + size] for k in range(0, n, size)]


def train(
    cfg: VariantConfig,
    data: Dataset,
    out_dir: str | Path | None = None,
    resume: bool = True,
    log=None,
    stop_after_epoch: int | None = None,
) -> TrainResult:
    """Closed-loop training; one checkpoint and one metrics row per split each epoch."""
    if tuple(data.resolution) != tuple(cfg.resolution):
        raise ValueError(f"dataset resolution {data.resolution} differs from config {cfg.resolution}")
    clips = data.clips(cfg.train_scenes)
    T = min(c.length for c in clips)
    n_batches = math.ceil(len(clips) / cfg.batch)
    total_steps = cfg.epochs * n_batches * T
    models = build_models(cfg)
    result = TrainResult(models)
    out = Path(out_dir) if out_dir is not None else None
    start_epoch = 0
    step = 0
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(models.config_dict(), indent=1, sort_keys=True))
        if resume and (out / CHECKPOINT).exists():
            extra = load_checkpoint(out / CHECKPOINT, models)
            start_epoch = extra["epoch"] + 1
            step = extra["step"]
            result.metrics = [r for r in _read_csv(out / METRICS) if int(r["epoch"]) < start_epoch]
            result.telemetry = [r for r in _read_csv(out / TELEMETRY) if int(r["epoch"]) < start_epoch]
    update = len({(r["epoch"], r["batch"]) for r in result.telemetry})
    for epoch in range(start_epoch, cfg.epochs):
        gen = np.random.default_rng(rng.derive_seed(cfg.seed, rng.DOMAIN_AUGMENT, epoch))
        sums = {"psnr": 0.0, "loss": 0.0, "reward": 0.0, "n": 0}
        for bi, idx in enumerate(_batches(len(clips), cfg.batch, gen)):
            batch = [clips[k] for k in idx]
            if cfg.augment:
                batch = [augment_clip(c, gen) for c in batch]
            B = len(batch)
            carried = np.zeros((B, nets.LATENT) + tuple(cfg.resolution), dtype=np.float32)
            records = []
            for t in range(T):
                lr = lr_schedule(step, total_steps, cfg.lr_max, cfg.lr_min, cfg.warmup_frac)
                inp = frame_inputs(batch, t)
                fseed = rng.derive_seed(cfg.seed, epoch, bi, t)
                o = step_frame(cfg, models, inp, t, carried, fseed, train=True)
                grads = backward(o.loss.mixed, models.supervised_params())
                try:
                    models.opt_sup.step(grads, lr)
                except FloatingPointError as exc:
                    raise DivergenceError(f"epoch {epoch} frame {t}: {exc}") from exc
                if cfg.mode == "A1_grad_approx" and o.heat is not None:
                    models.opt_policy.step(a1_sampler_grads(cfg, models, o, inp.ref), lr * cfg.policy_lr_scale)
                if o.action is not None:
                    values = policy.critic_values(models.critic, o.warped, inp.aux, models.value_norm)
                    records.append((o.warped, inp.aux, o.action, o.rewards, values))
                carried = o.latent.data.astype(np.float32) if cfg.temporal else carried
                for b in range(B):
                    sums["psnr"] += quality.psnr(np.maximum(o.denoised.data[b], 0.0), inp.ref[b])
                sums["loss"] += float(o.frame_losses.sum())
                sums["reward"] += float(o.rewards.sum())
                sums["n"] += B
                step += 1
            if records and cfg.uses_policy:
                lr = lr_schedule(step, total_steps, cfg.lr_max, cfg.lr_min, cfg.warmup_frac) * cfg.policy_lr_scale
                stats, mean_r = _ppo_phase(cfg, models, records, lr, rng.derive_seed(cfg.seed, epoch, bi, 99991))
                row = {
                    "update": update,
                    "epoch": epoch,
                    "batch": bi,
                    "mean_reward": mean_r,
                    "policy_loss": stats.policy_loss,
                    "value_loss": stats.value_loss,
                    "entropy": stats.entropy,
                    "log_std": stats.log_std,
                    "clip_fraction": stats.clip_fraction,
                }
                result.telemetry.append(row)
                update += 1
        n = max(sums["n"], 1)
        result.metrics.append(
            {"epoch": epoch, "split": "train", "psnr": sums["psnr"] / n, "loss": sums["loss"] / n,
             "reward": sums["reward"] / n}
        )
        ev = evaluate(cfg, models, data, [cfg.spp_budget_avg], seed=rng.derive_seed(cfg.seed, 7, epoch))[0]
        result.metrics.append(
            {"epoch": epoch, "split": "test", "psnr": ev["psnr"], "loss": ev["loss"], "reward": ev["reward"]}
        )
        if log:
            log(f"epoch {epoch}: train psnr {sums['psnr'] / n:.3f} loss {sums['loss'] / n:.4f}  test psnr {ev['psnr']:.3f}")
        if out is not None:
            save_checkpoint(out / CHECKPOINT, models, epoch, step)
            _write_csv(out / METRICS, result.metrics)
            _write_csv(out / TELEMETRY, result.telemetry)
        result.epochs_run += 1
        if stop_after_epoch is not None and epoch >= stop_after_epoch:
            break
    return result


def _ppo_phase(cfg: VariantConfig, models: Models, records, lr: float, seed: int):
    """GAE per clip over the policy-driven frames, then one PPO update."""
    rewards = np.stack([r[3] for r in records])  # (T', B)
    values = np.stack([r[4] for r in records])
    adv, ret = policy.gae(rewards, values, cfg.gamma, cfg.lam)
    models.value_norm.update(ret)
    transitions = []
    for k, (warped, aux, act, rew, val) in enumerate(records):
        for b in range(warped.shape[0]):
            transitions.append(
                policy.Transition(
                    warped[b], aux[b], act.u[b], float(act.logprob[b]), float(rew[b]),
                    float(val[b]), k == len(records) - 1, float(adv[k, b]), float(ret[k, b]),
                    act.pixel_logprob[b],
                )
            )
    stats = policy.ppo_update(
        models.policy,
        transitions,
        models.opt_policy,
        lr,
        epochs=cfg.ppo_epochs,
        minibatch=cfg.ppo_minibatch,
        seed=seed,
        critic=models.critic,
        critic_opt=models.opt_critic,
        clip=cfg.clip,
        entropy_coef=cfg.entropy_coef,
        value_norm=models.value_norm,
        per_pixel=cfg.pixel_ratio,
    )
    return stats, float(rewards.mean())


# ---- evaluation


def evaluate(
    cfg: VariantConfig,
    models: Models,
    data: Dataset,
    budgets,
    seed: int = 0,
    scenes=None,
    keep_frames: bool = False,
) -> list[dict]:
    """Mean PSNR over every frame of the held-out scenes for each budget."""
    for b in budgets:
        check_budget(cfg.mode, float(b))
    clips = data.clips(scenes or cfg.test_scenes)
    rows = []
    for spp in budgets:
        spp = float(spp)
        if spp > cfg.cap:
            raise ValueError(f"budget {spp} exceeds the per-pixel cap {cfg.cap}")
        psnrs, losses, rewards, frames = [], [], [], []
        T = min(c.length for c in clips)
        for bi in range(0, len(clips), cfg.batch):
            batch = clips[bi : bi + cfg.batch]
            carried = np.zeros((len(batch), nets.LATENT) + tuple(cfg.resolution), dtype=np.float32)
            for t in range(T):
                inp = frame_inputs(batch, t)
                o = step_frame(cfg, models, inp, t, carried, rng.derive_seed(seed, bi, t), spp=spp, train=False)
                carried = o.latent.data.astype(np.float32) if cfg.temporal else carried
                img = np.maximum(o.denoised.data, 0.0)
                for b in range(len(batch)):
                    psnrs.append(quality.psnr(img[b], inp.ref[b]))
                    if keep_frames:
                        frames.append((batch[b].scene, batch[b].start + t, img[b], o.counts[b]))
                losses.extend(o.frame_losses.tolist())
                rewards.extend(o.rewards.tolist())
        row = {"budget": spp, "psnr": float(np.mean(psnrs)), "loss": float(np.mean(losses)),
               "reward": float(np.mean(rewards)), "frames": len(psnrs)}
        if keep_frames:
            row["frame_data"] = frames
        rows.append(row)
    return rows
