"""Decoder-only transformer over continuous sensor windows.

Inputs are z-scored observation (or observation+action) vectors embedded by
one affine map plus learned positional embeddings; outputs are per-dimension
categorical logits over K uniform bins. Pre-norm blocks, tanh-GELU MLPs with
a 4x hidden width, and causal attention. All math runs through the autodiff
engine in float64; evaluation-mode calls build no tape.

Parameter naming: ``in.w``, ``in.b``, ``pos``, per block ``h{i}.ln1.g`` /
``h{i}.attn.wqkv`` / ... , ``lnf.g``, ``lnf.b``, ``head.w``, ``head.b``.
The backbone is everything except ``head.*`` - swap_head() replaces only the
head, which is what makes the pretrain-then-retarget workflow possible.
"""

from __future__ import annotations

from dataclasses import dataclass, replace, asdict

import numpy as np

from motionlab.errors import MotionLabError, NumericError
from motionlab.gptcore import autodiff as ad
from motionlab.gptcore.autodiff import Tensor
from motionlab.gptcore.discretize import Discretizer

HEAD_OBSERVATION = "observation"
HEAD_ACTION = "action"

INIT_STD = 0.02


@dataclass(frozen=True)
class ModelConfig:
    context_len: int = 32
    embed_dim: int = 64
    n_layers: int = 2
    n_heads: int = 4
    n_bins: int = 64
    input_dim: int = 30
    output_dim: int = 30
    head_kind: str = HEAD_OBSERVATION
    dropout: float = 0.1

    def __post_init__(self):
        if self.embed_dim % self.n_heads != 0:
            raise MotionLabError("embed_dim must be divisible by n_heads")
        if self.context_len < 1 or self.n_bins < 2 or self.output_dim < 1:
            raise MotionLabError("invalid model config")

    def to_doc(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_doc(doc: dict) -> "ModelConfig":
        return ModelConfig(**doc)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    """Every tensor shape is a pure function of the config."""
    e = cfg.embed_dim
    shapes = {"in.w": (cfg.input_dim, e), "in.b": (e,), "pos": (cfg.context_len, e)}
    for i in range(cfg.n_layers):
        p = f"h{i}."
        shapes.update({
            p + "ln1.g": (e,), p + "ln1.b": (e,),
            p + "attn.wqkv": (e, 3 * e), p + "attn.bqkv": (3 * e,),
            p + "attn.wo": (e, e), p + "attn.bo": (e,),
            p + "ln2.g": (e,), p + "ln2.b": (e,),
            p + "mlp.w1": (e, 4 * e), p + "mlp.b1": (4 * e,),
            p + "mlp.w2": (4 * e, e), p + "mlp.b2": (e,),
        })
    shapes.update({
        "lnf.g": (e,), "lnf.b": (e,),
        "head.w": (e, cfg.output_dim * cfg.n_bins), "head.b": (cfg.output_dim * cfg.n_bins,),
    })
    return shapes


def init_params(cfg: ModelConfig, seed: int) -> dict[str, np.ndarray]:
    """Gaussian(std 0.02) projections, zero biases/shifts, unit LN scales."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".g"):
            params[name] = np.ones(shape)
        elif name.endswith((".b", ".bqkv", ".bo", ".b1", ".b2")):
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.normal(0.0, INIT_STD, size=shape)
    return params


BACKBONE_EXCLUDES = ("head.w", "head.b")


def backbone_names(params: dict) -> list[str]:
    return [n for n in params if n not in BACKBONE_EXCLUDES]


def _causal_mask(t: int) -> np.ndarray:
    # -1e30 underflows to an exact zero attention weight after softmax
    mask = np.triu(np.full((t, t), -1e30), k=1)
    return mask[None, None, :, :]


def forward(params: dict[str, Tensor | np.ndarray], cfg: ModelConfig, window: np.ndarray,
            *, train: bool = False, rng: np.random.Generator | None = None,
            head_last_only: bool = False):
    """Run the network on a normalized window (B, T, D_in) or (T, D_in).

    Returns (logits, hiddens): logits (B, T, D_out, K) - or (B, 1, D_out, K)
    with head_last_only - and the per-block hidden activations. Logits at
    step t depend only on inputs 0..t. Training mode applies dropout and
    needs an rng; eval mode is deterministic.
    """
    x = np.asarray(window, dtype=np.float64)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.ndim != 3 or x.shape[2] != cfg.input_dim:
        raise MotionLabError(f"window shape {window.shape} does not match input_dim {cfg.input_dim}")
    b, t, _ = x.shape
    if t > cfg.context_len:
        raise MotionLabError(f"window length {t} exceeds context length {cfg.context_len}")
    if t < 1:
        raise MotionLabError("window must contain at least one step")
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite value in model input window")
    if train and rng is None:
        raise MotionLabError("training-mode forward needs an rng for dropout")

    p = {k: (v if isinstance(v, Tensor) else Tensor(v)) for k, v in params.items()}
    drop = cfg.dropout if train else 0.0
    e = cfg.embed_dim
    nh = cfg.n_heads
    hd = e // nh
    mask = _causal_mask(t)

    # weight projections run on (B*T, .) so gradients need no batch reduction
    flat = ad.matmul(ad.reshape(Tensor(x), (b * t, cfg.input_dim)), p["in.w"])
    h = ad.add(ad.reshape(ad.add(flat, p["in.b"]), (b, t, e)),
               ad.getitem(p["pos"], (slice(0, t),)))
    h = ad.dropout(h, drop, rng)

    hiddens = []
    for i in range(cfg.n_layers):
        pre = f"h{i}."
        ln1 = ad.layer_norm(h, p[pre + "ln1.g"], p[pre + "ln1.b"])
        qkv = ad.add(ad.matmul(ad.reshape(ln1, (b * t, e)), p[pre + "attn.wqkv"]),
                     p[pre + "attn.bqkv"])
        qkv = ad.transpose(ad.reshape(qkv, (b, t, 3, nh, hd)), (2, 0, 3, 1, 4))
        q = ad.getitem(qkv, (0,))
        k = ad.getitem(qkv, (1,))
        v = ad.getitem(qkv, (2,))
        att = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(hd))
        att = ad.softmax_last(ad.add(att, Tensor(mask)))
        att = ad.dropout(att, drop, rng)
        y = ad.matmul(att, v)                              # (B, nh, T, hd)
        y = ad.reshape(ad.transpose(y, (0, 2, 1, 3)), (b * t, e))
        y = ad.add(ad.matmul(y, p[pre + "attn.wo"]), p[pre + "attn.bo"])
        h = ad.add(h, ad.dropout(ad.reshape(y, (b, t, e)), drop, rng))

        ln2 = ad.layer_norm(h, p[pre + "ln2.g"], p[pre + "ln2.b"])
        m = ad.gelu(ad.add(ad.matmul(ad.reshape(ln2, (b * t, e)), p[pre + "mlp.w1"]),
                           p[pre + "mlp.b1"]))
        m = ad.add(ad.matmul(m, p[pre + "mlp.w2"]), p[pre + "mlp.b2"])
        h = ad.add(h, ad.dropout(ad.reshape(m, (b, t, e)), drop, rng))
        hiddens.append(h)

    hf = ad.layer_norm(h, p["lnf.g"], p["lnf.b"])
    t_out = t
    if head_last_only:
        hf = ad.getitem(hf, (slice(None), slice(t - 1, t)))
        t_out = 1
    logits = ad.add(ad.matmul(ad.reshape(hf, (b * t_out, e)), p["head.w"]), p["head.b"])
    logits = ad.reshape(logits, (b, t_out, cfg.output_dim, cfg.n_bins))
    if squeeze:
        logits = ad.getitem(logits, (0,))
        hiddens = [ad.getitem(hh, (0,)) for hh in hiddens]
    return logits, hiddens


LOSS_CROSS_ENTROPY = "cross-entropy"
LOSS_MSE_DECODED = "mse-on-decoded"


def loss_and_grads(params: dict[str, np.ndarray], cfg: ModelConfig, window: np.ndarray,
                   target_idx: np.ndarray, *, mask: np.ndarray | None = None,
                   loss_kind: str = LOSS_CROSS_ENTROPY, discretizer: Discretizer | None = None,
                   frozen: set[str] = frozenset(), rng: np.random.Generator | None = None,
                   train: bool = True):
    """Loss summed over output dimensions and averaged over (unmasked)
    steps, plus the gradient for every parameter tensor. Frozen tensors get
    exact zero gradients.
    """
    target_idx = np.asarray(target_idx)
    if target_idx.max() >= cfg.n_bins or target_idx.min() < 0:
        raise MotionLabError(
            f"target bin index out of range [0, {cfg.n_bins}): "
            f"[{target_idx.min()}, {target_idx.max()}]")
    if loss_kind not in (LOSS_CROSS_ENTROPY, LOSS_MSE_DECODED):
        raise MotionLabError(f"unknown loss kind {loss_kind!r}")

    tensors = {k: Tensor(v, requires_grad=k not in frozen) for k, v in params.items()}
    x = np.asarray(window, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
        target_idx = target_idx[None]
    b, t, _ = x.shape
    if mask is None:
        mask = np.ones((b, t))
    mask = np.asarray(mask, dtype=np.float64).reshape(b, t)
    denom = float(mask.sum())
    if denom <= 0:
        raise MotionLabError("loss mask excludes every step")

    logits, _ = forward(tensors, cfg, x, train=train, rng=rng)
    if loss_kind == LOSS_CROSS_ENTROPY:
        ce = ad.cross_entropy_logits(logits, target_idx)   # (B, T, D_out)
        per_step = ad.sum_last(ce)                         # (B, T)
    else:
        if discretizer is None:
            raise MotionLabError("mse-on-decoded needs the discretizer")
        probs = ad.softmax_last(logits)
        decoded = ad.sum_last(ad.mul(probs, Tensor(discretizer.centers())))
        err = ad.add(decoded, Tensor(-discretizer.centers()[
            np.arange(cfg.output_dim), target_idx]))
        per_step = ad.sum_last(ad.mul(err, err))
    loss = ad.scale(sum_masked(per_step, mask), 1.0 / denom)
    loss.backward()

    grads = {}
    for name, tensor in tensors.items():
        if name in frozen or tensor.grad is None:
            grads[name] = np.zeros_like(params[name])
        else:
            grads[name] = tensor.grad
    return float(loss.data), grads


def sum_masked(per_step: Tensor, mask: np.ndarray) -> Tensor:
    return ad.sum_all(ad.mul(per_step, Tensor(mask)))


def swap_head(params: dict[str, np.ndarray], cfg: ModelConfig, new_output_dim: int,
              *, seed: int) -> tuple[dict[str, np.ndarray], ModelConfig]:
    """Replace the output head with a freshly initialized one sized for
    new_output_dim, keeping every backbone tensor bit-identical."""
    if new_output_dim < 1:
        raise MotionLabError("new output dim must be >= 1")
    if cfg.head_kind == HEAD_ACTION:
        raise MotionLabError("head already swapped to actions")
    new_cfg = replace(cfg, output_dim=new_output_dim, head_kind=HEAD_ACTION)
    rng = np.random.default_rng(seed)
    out = {k: v.copy() for k, v in params.items() if k not in BACKBONE_EXCLUDES}
    out["head.w"] = rng.normal(0.0, INIT_STD, size=(cfg.embed_dim, new_output_dim * cfg.n_bins))
    out["head.b"] = np.zeros(new_output_dim * cfg.n_bins)
    return out, new_cfg
