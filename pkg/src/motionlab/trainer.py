"""Training loops: observation pre-training, head-swapped fine-tuning on
actions at a reduced learning rate, and the from-scratch action baseline.

Optimization follows the minGPT conventions: Adam with beta = (0.9, 0.95),
decoupled weight decay 0.1 on projection matrices only, gradient clipping at
1.0, linear warmup over the first 5% of the budget, then cosine decay to 10%
of the peak rate. Batches sample (episode, start) pairs uniformly; episodes
shorter than the window are front-padded with their first frame and the
padded positions are masked out of the loss.

Everything is driven by one seeded Generator, so runs are bit-reproducible.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from motionlab.dataset import DatasetFraction, DatasetStore
from motionlab.errors import MotionLabError, TrainingDivergedError
from motionlab.gptcore.checkpoint import (
    ModelCheckpoint,
    PHASE_FINETUNED,
    PHASE_PRETRAINED,
    PHASE_SCRATCH,
    save_checkpoint,
)
from motionlab.gptcore.discretize import Discretizer
from motionlab.gptcore.model import (
    HEAD_ACTION,
    HEAD_OBSERVATION,
    LOSS_CROSS_ENTROPY,
    ModelConfig,
    backbone_names,
    forward,
    init_params,
    loss_and_grads,
    swap_head,
)

TARGET_NEXT_OBS = "next-observation"
TARGET_ACTION = "action"

FINETUNE_BUDGET_DIVISOR = 5      # fine-tune steps default to pretrain/5
FINETUNE_LR_DIVISOR = 100.0      # fine-tune LR defaults to pretrain/100


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 3000
    batch_size: int = 8
    lr: float = 3e-4
    lr_finetune: float | None = None     # None: lr / FINETUNE_LR_DIVISOR
    betas: tuple[float, float] = (0.9, 0.95)
    weight_decay: float = 0.1
    warmup_frac: float = 0.05
    min_lr_frac: float = 0.1
    grad_clip: float = 1.0
    freeze_backbone: bool = False
    loss_kind: str = LOSS_CROSS_ENTROPY
    val_interval: int = 500
    val_max_windows: int = 128
    seed: int = 0
    checkpoint_interval: int | None = None

    def __post_init__(self):
        if self.steps < 1:
            raise MotionLabError("step budget must be >= 1")
        if self.lr <= 0 or (self.lr_finetune is not None and self.lr_finetune <= 0):
            raise MotionLabError("learning rates must be > 0")

    @property
    def finetune_lr(self) -> float:
        return self.lr_finetune if self.lr_finetune is not None else self.lr / FINETUNE_LR_DIVISOR


@dataclass
class TrainLog:
    records: list[dict] = field(default_factory=list)

    def add(self, step: int, ce_loss: float, val_mse: float | None, lr: float, seconds: float):
        self.records.append({"step": step, "ce_loss": float(ce_loss),
                             "val_mse": None if val_mse is None else float(val_mse),
                             "lr": float(lr), "seconds": seconds})

    def to_csv(self) -> str:
        lines = ["step,ce_loss,val_mse,lr,seconds"]
        for r in self.records:
            val = "" if r["val_mse"] is None else repr(r["val_mse"])
            lines.append(f"{r['step']},{r['ce_loss']!r},{val},{r['lr']!r},{r['seconds']:.3f}")
        return "\n".join(lines) + "\n"


class WindowSampler:
    """Uniform sampling over every (episode, start) pair of a split."""

    def __init__(self, store: DatasetStore, episode_ids, window: int, target_kind: str):
        self.window = window
        self.target_kind = target_kind
        self.obs = []
        self.act = []
        self.starts = []
        for eid in episode_ids:
            obs, act = store.read_episode(eid)
            self.obs.append(obs.astype(np.float64))
            self.act.append(act.astype(np.float64))
            t = obs.shape[0]
            self.starts.append(max(t - window, 0) + 1)
        if not self.obs:
            raise MotionLabError("sampler got an empty episode list")
        self.cum = np.cumsum(self.starts)
        self.total = int(self.cum[-1])

    def sample_batch(self, batch_size: int, rng: np.random.Generator):
        """(inputs, targets, mask): inputs raw observations (B, W, D_obs);
        targets raw continuous values per target kind; mask marks positions
        that contribute to the loss."""
        w = self.window
        d_obs = self.obs[0].shape[1]
        d_tgt = d_obs if self.target_kind == TARGET_NEXT_OBS else self.act[0].shape[1]
        xs = np.zeros((batch_size, w, d_obs))
        ys = np.zeros((batch_size, w, d_tgt))
        mask = np.zeros((batch_size, w))
        flat = rng.integers(0, self.total, size=batch_size)
        for bi, f in enumerate(flat):
            ei = int(np.searchsorted(self.cum, f, side="right"))
            start = int(f - (self.cum[ei - 1] if ei else 0))
            obs, act = self.obs[ei], self.act[ei]
            t = obs.shape[0]
            if t >= w:
                xs[bi] = obs[start:start + w]
                if self.target_kind == TARGET_NEXT_OBS:
                    n_valid = min(w, t - start - 1)
                    if n_valid > 0:
                        ys[bi, :n_valid] = obs[start + 1:start + 1 + n_valid]
                        mask[bi, :n_valid] = 1.0
                else:
                    ys[bi] = act[start:start + w]
                    mask[bi] = 1.0
            else:
                pad = w - t
                xs[bi, :pad] = obs[0]
                xs[bi, pad:] = obs
                if self.target_kind == TARGET_NEXT_OBS:
                    ys[bi, pad:pad + t - 1] = obs[1:]
                    mask[bi, pad:pad + t - 1] = 1.0
                else:
                    ys[bi, pad:] = act
                    mask[bi, pad:] = 1.0
        return xs, ys, mask


def _train_ids(store: DatasetStore, fraction: DatasetFraction | None) -> list[str]:
    if fraction is not None:
        if fraction.base_dataset_id != store.dataset_id:
            raise MotionLabError(
                f"fraction was built from dataset {fraction.base_dataset_id}, "
                f"not {store.dataset_id}")
        return sorted(fraction.episode_ids)
    return store.episode_ids(split="train")


def _adam_groups(params: dict[str, np.ndarray]):
    """Decoupled weight decay applies to projection matrices only (not
    biases, layer norms, or the positional table)."""
    return {name: (arr.ndim >= 2 and name != "pos") for name, arr in params.items()}


def _lr_at(step: int, cfg: TrainConfig, base_lr: float) -> float:
    warm = max(1, int(round(cfg.warmup_frac * cfg.steps)))
    if step < warm:
        return base_lr * (step + 1) / warm
    span = max(1, cfg.steps - warm)
    frac = (step - warm) / span
    lo = cfg.min_lr_frac * base_lr
    return lo + 0.5 * (base_lr - lo) * (1.0 + np.cos(np.pi * frac))


def _clip_grads(grads: dict[str, np.ndarray], limit: float) -> float:
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if limit > 0 and total > limit:
        s = limit / total
        for g in grads.values():
            g *= s
    return total


def _run_loop(ckpt: ModelCheckpoint, store: DatasetStore, target_kind: str,
              cfg: TrainConfig, base_lr: float, fraction: DatasetFraction | None,
              frozen: set[str], checkpoint_dir=None) -> TrainLog:
    sampler = WindowSampler(store, _train_ids(store, fraction),
                            ckpt.config.context_len, target_kind)
    rng = np.random.default_rng(cfg.seed)
    decay_mask = _adam_groups(ckpt.params)
    m = {k: np.zeros_like(v) for k, v in ckpt.params.items()}
    v = {k: np.zeros_like(vv) for k, vv in ckpt.params.items()}
    b1, b2 = cfg.betas
    eps = 1e-8
    log = TrainLog()
    t0 = time.perf_counter()

    for step in range(cfg.steps):
        xs, ys, mask = sampler.sample_batch(cfg.batch_size, rng)
        xn = ckpt.normalize_obs(xs)
        tgt = ckpt.discretizer.bin_index(ys)
        loss, grads = loss_and_grads(
            ckpt.params, ckpt.config, xn, tgt, mask=mask, loss_kind=cfg.loss_kind,
            discretizer=ckpt.discretizer, frozen=frozen, rng=rng, train=True)
        if not np.isfinite(loss):
            raise TrainingDivergedError(f"non-finite loss {loss} at step {step}")
        _clip_grads(grads, cfg.grad_clip)
        lr = _lr_at(step, cfg, base_lr)
        tbias1 = 1.0 - b1 ** (step + 1)
        tbias2 = 1.0 - b2 ** (step + 1)
        for name, p in ckpt.params.items():
            if name in frozen:
                continue
            g = grads[name]
            m[name] = b1 * m[name] + (1 - b1) * g
            v[name] = b2 * v[name] + (1 - b2) * g * g
            upd = (m[name] / tbias1) / (np.sqrt(v[name] / tbias2) + eps)
            if decay_mask[name] and cfg.weight_decay > 0:
                upd = upd + cfg.weight_decay * p
            p -= lr * upd

        last = step == cfg.steps - 1
        if step % cfg.val_interval == 0 or last:
            if not all(np.all(np.isfinite(p)) for p in ckpt.params.values()):
                bad = [k for k, p in ckpt.params.items() if not np.all(np.isfinite(p))]
                raise TrainingDivergedError(f"non-finite weights {bad} at step {step}")
            val = validate(ckpt, store, split="validation", max_windows=cfg.val_max_windows,
                           target_kind=target_kind)
            log.add(step, loss / ckpt.config.output_dim, val, lr, time.perf_counter() - t0)
        if checkpoint_dir is not None and cfg.checkpoint_interval and \
                (step + 1) % cfg.checkpoint_interval == 0 and not last:
            save_checkpoint(ckpt, checkpoint_dir / f"step{step + 1:07d}.ckpt")
    return log


def validate(ckpt: ModelCheckpoint, store: DatasetStore, split: str = "validation",
             max_windows: int = 128, target_kind: str | None = None) -> float:
    """MSE between probability-weighted decoded predictions and ground-truth
    continuous values over deterministic non-overlapping windows."""
    if target_kind is None:
        target_kind = TARGET_NEXT_OBS if ckpt.head_kind == HEAD_OBSERVATION else TARGET_ACTION
    ids = store.episode_ids(split=split)
    if not ids:
        raise MotionLabError(f"validation split {split!r} is empty")
    w = ckpt.config.context_len
    total_se = 0.0
    total_n = 0
    used = 0
    for eid in ids:
        obs, act = store.read_episode(eid)
        obs = obs.astype(np.float64)
        act = act.astype(np.float64)
        t = obs.shape[0]
        for start in range(0, max(t - w, 0) + 1, w):
            if used >= max_windows:
                break
            xs = obs[start:start + w]
            if xs.shape[0] < w:
                break
            if target_kind == TARGET_NEXT_OBS:
                n_valid = min(w, t - start - 1)
                if n_valid <= 0:
                    continue
                target = obs[start + 1:start + 1 + n_valid]
            else:
                n_valid = w
                target = act[start:start + w]
            logits, _ = forward(ckpt.params, ckpt.config, ckpt.normalize_obs(xs), train=False)
            probs = _softmax_np(logits.data)
            decoded = ckpt.discretizer.decode(probs)[:n_valid]
            total_se += float(((decoded - target) ** 2).sum())
            total_n += decoded.size
            used += 1
        if used >= max_windows:
            break
    if total_n == 0:
        raise MotionLabError("no usable validation windows")
    return total_se / total_n


def _softmax_np(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=-1, keepdims=True)


def _build_checkpoint(store: DatasetStore, model_cfg: ModelConfig, seed: int,
                      target_kind: str, phase: str) -> ModelCheckpoint:
    norm = store.normalization()
    key = "obs" if target_kind == TARGET_NEXT_OBS else "act"
    disc = Discretizer.from_stats(norm[f"{key}_mean"], norm[f"{key}_std"], model_cfg.n_bins)
    return ModelCheckpoint(
        config=model_cfg,
        params=init_params(model_cfg, seed),
        discretizer=disc,
        obs_mean=norm["obs_mean"],
        obs_std=norm["obs_std"],
        provenance={"phase": phase, "dataset_id": store.dataset_id, "seed": seed, "steps": 0},
    )


def pretrain(store: DatasetStore, model_cfg: ModelConfig, cfg: TrainConfig):
    """Next-observation pre-training on the training split."""
    if model_cfg.head_kind != HEAD_OBSERVATION:
        raise MotionLabError("pretraining uses an observation head")
    model_cfg = replace(model_cfg, input_dim=store.d_obs, output_dim=store.d_obs)
    ckpt = _build_checkpoint(store, model_cfg, cfg.seed, TARGET_NEXT_OBS, PHASE_PRETRAINED)
    log = _run_loop(ckpt, store, TARGET_NEXT_OBS, cfg, cfg.lr, None, frozenset())
    ckpt.provenance["steps"] = cfg.steps
    return ckpt, log


def finetune(source: ModelCheckpoint, store: DatasetStore, cfg: TrainConfig,
             fraction: DatasetFraction | None = None):
    """Swap the output head for actions and train at the reduced rate."""
    if source.phase != PHASE_PRETRAINED:
        raise MotionLabError(f"fine-tuning needs a pretrained checkpoint, got phase {source.phase!r}")
    if source.head_kind != HEAD_OBSERVATION:
        raise MotionLabError("source checkpoint head was already swapped")
    if store.d_act < 1:
        raise MotionLabError("dataset has no actions to fine-tune on")
    norm = store.normalization()
    params, model_cfg = swap_head(source.params, source.config, store.d_act, seed=cfg.seed)
    ckpt = ModelCheckpoint(
        config=model_cfg,
        params=params,
        discretizer=Discretizer.from_stats(norm["act_mean"], norm["act_std"],
                                           model_cfg.n_bins),
        obs_mean=source.obs_mean,
        obs_std=source.obs_std,
        provenance={"phase": PHASE_PRETRAINED, "dataset_id": store.dataset_id,
                    "seed": cfg.seed, "steps": 0,
                    "pretrained_from": source.provenance.get("dataset_id")},
    )
    frozen = frozenset(backbone_names(ckpt.params)) if cfg.freeze_backbone else frozenset()
    log = _run_loop(ckpt, store, TARGET_ACTION, cfg, cfg.finetune_lr, fraction, frozen)
    ckpt.provenance["phase"] = PHASE_FINETUNED
    ckpt.provenance["steps"] = cfg.steps
    ckpt.provenance["fraction"] = fraction.fraction if fraction else 1.0
    return ckpt, log


def train_scratch(store: DatasetStore, model_cfg: ModelConfig, cfg: TrainConfig):
    """Action-head training from random initialization: the same objective
    as fine-tuning but with the pretraining schedule and full budget."""
    if store.d_act < 1:
        raise MotionLabError("dataset has no actions to train on")
    model_cfg = replace(model_cfg, input_dim=store.d_obs, output_dim=store.d_act,
                        head_kind=HEAD_ACTION)
    ckpt = _build_checkpoint(store, model_cfg, cfg.seed, TARGET_ACTION, PHASE_SCRATCH)
    log = _run_loop(ckpt, store, TARGET_ACTION, cfg, cfg.lr, None, frozenset())
    ckpt.provenance["steps"] = cfg.steps
    return ckpt, log
