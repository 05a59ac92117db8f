"""Encoder, spatial attention, and classifier heads on the gradient tape.

Parameters live in a flat name -> float64 array dict so checkpoints and
the optimizer can treat the model as a bag of named tensors. Running
batch-norm statistics are stored in the same dict under ``.bn_rm`` /
``.bn_rv`` names but are excluded from gradient updates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class ArchConfig:
    """Shape of the encoder/attention/head stack.

    Even-numbered conv blocks (1-based) downsample with stride 2, so each
    spatial dim shrinks by floor-halving once per even block. Input dims
    must survive all downsamples with at least one voxel per axis.
    """

    in_channels: int = 1
    widths: tuple[int, ...] = (8, 16, 32, 32)
    kernel: int = 3
    attn_kernel: int = 7
    head_hidden: tuple[int, ...] = (128, 64)
    n_classes: int = 2
    dropout: float = 0.5
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5

    def __post_init__(self):
        if not self.widths:
            raise ValueError("widths must name at least one conv block")
        if self.kernel % 2 == 0 or self.attn_kernel % 2 == 0:
            raise ValueError("kernels must be odd for centered padding")
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if not (0.0 < self.bn_momentum < 1.0):
            raise ValueError(f"bn_momentum must lie in (0, 1), got {self.bn_momentum}")

    def block_stride(self, i: int) -> int:
        """Stride of 1-based block i: 2 on even blocks, 1 on odd."""
        return 2 if (i + 1) % 2 == 0 else 1

    @property
    def n_downsamples(self) -> int:
        return len(self.widths) // 2


HEAD_NAMES = ("head_cls", "head_int", "head_dom")


class ShapeError(ValueError):
    pass


@dataclass
class Model:
    arch: ArchConfig
    ndim: int  # spatial rank, 2 or 3
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def trainable_names(self) -> list[str]:
        return [n for n in self.params if not n.endswith(("bn_rm", "bn_rv"))]

    def has(self, prefix: str) -> bool:
        return any(n.startswith(prefix + ".") for n in self.params)

    def clone_params(self) -> dict[str, np.ndarray]:
        return {n: v.copy() for n, v in self.params.items()}


def _fan_in_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    limit = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-limit, limit, size=shape)


def init_encoder(model: Model, prefix: str, rng: np.random.Generator) -> None:
    a = model.arch
    k = (a.kernel,) * model.ndim
    c_in = a.in_channels
    for i, width in enumerate(a.widths):
        fan = c_in * int(np.prod(k))
        model.params[f"{prefix}.b{i}.w"] = _fan_in_uniform(rng, (width, c_in) + k, fan)
        model.params[f"{prefix}.b{i}.b"] = np.zeros(width)
        model.params[f"{prefix}.b{i}.bn_g"] = np.ones(width)
        model.params[f"{prefix}.b{i}.bn_b"] = np.zeros(width)
        model.params[f"{prefix}.b{i}.bn_rm"] = np.zeros(width)
        model.params[f"{prefix}.b{i}.bn_rv"] = np.ones(width)
        c_in = width


def init_attention(model: Model, rng: np.random.Generator) -> None:
    a = model.arch
    k = (a.attn_kernel,) * model.ndim
    fan = 2 * int(np.prod(k))
    model.params["attn.w"] = _fan_in_uniform(rng, (1, 2) + k, fan)
    model.params["attn.b"] = np.zeros(1)


def init_head(model: Model, name: str, rng: np.random.Generator) -> None:
    a = model.arch
    sizes = (a.widths[-1],) + tuple(a.head_hidden) + (a.n_classes,)
    for i in range(len(sizes) - 1):
        model.params[f"{name}.fc{i}.w"] = _fan_in_uniform(
            rng, (sizes[i], sizes[i + 1]), sizes[i]
        )
        model.params[f"{name}.fc{i}.b"] = np.zeros(sizes[i + 1])


def init_model(
    arch: ArchConfig,
    ndim: int,
    rng: np.random.Generator,
    encoders: tuple[str, ...] = ("enc_s",),
    heads: tuple[str, ...] = HEAD_NAMES,
) -> Model:
    if ndim not in (2, 3):
        raise ValueError(f"spatial rank must be 2 or 3, got {ndim}")
    model = Model(arch=arch, ndim=ndim)
    for enc in encoders:
        init_encoder(model, enc, rng)
    init_attention(model, rng)
    for h in heads:
        init_head(model, h, rng)
    return model


def add_target_encoder(model: Model, rng: np.random.Generator, copy_source: bool = True) -> None:
    """Create enc_t, either copying enc_s weights or freshly initialized."""
    if model.has("enc_t"):
        return
    if copy_source:
        src = {n: v for n, v in model.params.items() if n.startswith("enc_s.")}
        for n, v in src.items():
            model.params["enc_t" + n[len("enc_s"):]] = v.copy()
    else:
        init_encoder(model, "enc_t", rng)


def wrap(model: Model, names: list[str] | None = None) -> dict[str, ad.Tensor]:
    """Wrap trainable arrays as tape leaves for one forward/backward pass."""
    if names is None:
        names = model.trainable_names()
    return {n: ad.Tensor(model.params[n]) for n in names}


def encoder_forward(
    model: Model,
    leaves: dict[str, ad.Tensor],
    prefix: str,
    x: ad.Tensor,
    mode: str,
    trace: list | None = None,
) -> ad.Tensor:
    """Conv -> batch norm -> relu per block; stride 2 on even blocks.

    In train mode batch statistics are used and running statistics are
    updated in place with momentum; in eval mode running statistics are
    used and nothing is written.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    a = model.arch
    if x.value.ndim != model.ndim + 2:
        raise ShapeError(
            f"expected (batch, {a.in_channels}, *spatial) with {model.ndim} spatial "
            f"dims, got shape {x.value.shape}"
        )
    if x.value.shape[1] != a.in_channels:
        raise ShapeError(f"expected {a.in_channels} input channels, got {x.value.shape[1]}")
    h = x
    for i in range(len(a.widths)):
        stride = a.block_stride(i)
        if stride > 1 and any(s < 2 for s in h.value.shape[2:]):
            raise ShapeError(
                f"block {i + 1} of {prefix} cannot downsample spatial dims "
                f"{h.value.shape[2:]}; input volume is too small"
            )
        h = ad.conv(h, leaves[f"{prefix}.b{i}.w"], leaves[f"{prefix}.b{i}.b"], stride)
        g = leaves[f"{prefix}.b{i}.bn_g"]
        bt = leaves[f"{prefix}.b{i}.bn_b"]
        if mode == "train":
            h, bmean, bvar = ad.batchnorm_train(h, g, bt, a.bn_eps)
            mom = a.bn_momentum
            rm = model.params[f"{prefix}.b{i}.bn_rm"]
            rv = model.params[f"{prefix}.b{i}.bn_rv"]
            rm *= mom
            rm += (1.0 - mom) * np.atleast_1d(bmean)
            rv *= mom
            rv += (1.0 - mom) * np.atleast_1d(bvar)
        else:
            h = ad.batchnorm_eval(
                h,
                g,
                bt,
                model.params[f"{prefix}.b{i}.bn_rm"],
                model.params[f"{prefix}.b{i}.bn_rv"],
                a.bn_eps,
            )
        h = ad.relu(h, trace)
    return h


def spatial_attention(
    model: Model,
    leaves: dict[str, ad.Tensor],
    f: ad.Tensor,
    trace: list | None = None,
) -> tuple[ad.Tensor, ad.Tensor]:
    """Channel max/mean pooling -> conv -> sigmoid gate; returns (gate, gated)."""
    mp = ad.channel_max(f, trace)
    ap = ad.channel_mean(f)
    pooled = ad.concat_channels(mp, ap)
    s = ad.sigmoid(ad.conv(pooled, leaves["attn.w"], leaves["attn.b"], 1))
    return s, ad.mul(s, f)


def head_forward(
    model: Model,
    leaves: dict[str, ad.Tensor],
    name: str,
    feat: ad.Tensor,
    mode: str,
    rng: np.random.Generator | None = None,
    trace: list | None = None,
) -> ad.Tensor:
    """Fully connected stack with relu + dropout after each hidden layer."""
    a = model.arch
    n_layers = len(a.head_hidden) + 1
    h = feat
    for i in range(n_layers):
        h = ad.add(ad.matmul(h, leaves[f"{name}.fc{i}.w"]), leaves[f"{name}.fc{i}.b"])
        if i < n_layers - 1:
            h = ad.relu(h, trace)
            if mode == "train" and a.dropout > 0.0:
                if rng is None:
                    raise ValueError("train-mode head needs an rng for dropout")
                h = ad.dropout(h, a.dropout, rng)
    return h


def encode_and_attend(
    model: Model,
    leaves: dict[str, ad.Tensor],
    prefix: str,
    x: np.ndarray,
    mode: str,
    trace: list | None = None,
) -> tuple[ad.Tensor, ad.Tensor]:
    """Volumes (N, *S) -> (attentive feature map, pooled feature vector)."""
    xt = ad.Tensor(x[:, None])
    f = encoder_forward(model, leaves, prefix, xt, mode, trace)
    _, f_att = spatial_attention(model, leaves, f, trace)
    return f_att, ad.global_mean_pool(f_att)


def classify(
    model: Model,
    x: np.ndarray,
    prefix: str = "enc_s",
    head: str = "head_cls",
) -> np.ndarray:
    """Eval-mode class-1 probabilities for a stack of volumes (N, *S)."""
    leaves = wrap(model)
    _, pooled = encode_and_attend(model, leaves, prefix, x, "eval")
    logits = head_forward(model, leaves, head, pooled, "eval")
    shifted = logits.value - logits.value.max(axis=1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    return probs[:, 1]


def pretrain_loss(
    model: Model,
    leaves: dict[str, ad.Tensor],
    x: np.ndarray,
    labels_cls: np.ndarray,
    labels_int: np.ndarray | None,
    rng: np.random.Generator,
    trace: list | None = None,
    reverse: bool = True,
) -> tuple[ad.Tensor, dict[str, float]]:
    """Stage-1 objective on a batch of source volumes.

    ``labels_int`` marks each sample 0 (original) or 1 (intensity shifted);
    pass None during warmup to train the classifier alone. The intensity
    branch sits behind a gradient reversal with factor 1, so minimizing the
    returned tensor maximizes intensity confusion in the encoder while the
    intensity head itself still learns to discriminate. ``reverse=False``
    drops the reversal, giving the plain differentiable composite that the
    finite-difference checker needs.
    """
    _, pooled = encode_and_attend(model, leaves, "enc_s", x, "train", trace)
    logits = head_forward(model, leaves, "head_cls", pooled, "train", rng, trace)
    l_cls, _ = ad.softmax_cross_entropy(logits, labels_cls)
    if labels_int is None:
        return l_cls, {"l_cls": float(l_cls.value), "l_int": 0.0}
    branch = ad.grad_reverse(pooled, 1.0) if reverse else pooled
    logits_int = head_forward(model, leaves, "head_int", branch, "train", rng, trace)
    l_int, _ = ad.softmax_cross_entropy(logits_int, labels_int)
    total = ad.add_weighted([(1.0, l_cls), (1.0, l_int)])
    return total, {"l_cls": float(l_cls.value), "l_int": float(l_int.value)}


def adapt_loss(
    model: Model,
    leaves: dict[str, ad.Tensor],
    x_src: np.ndarray,
    labels_src: np.ndarray,
    x_mix: np.ndarray,
    lambda1: float,
    lambda2: float,
    rng: np.random.Generator,
    trace: list | None = None,
    reverse: bool = True,
) -> tuple[ad.Tensor, dict[str, float]]:
    """Stage-2 objective on paired source volumes and mixed target volumes.

    Classification is supervised by source labels only. The domain branch
    sits behind a gradient reversal with factor lambda2, so the optimizer
    ascends the domain loss through the encoders at exactly that weight.
    ``reverse=False`` replaces the reversal with a plain lambda2-weighted
    domain term, giving the differentiable composite used by the
    finite-difference checker.
    """
    if lambda1 < 0 or lambda2 < 0:
        raise ValueError("loss weights must be >= 0")
    f_s, pooled_s = encode_and_attend(model, leaves, "enc_s", x_src, "train", trace)
    f_t, pooled_t = encode_and_attend(model, leaves, "enc_t", x_mix, "train", trace)
    logits = head_forward(model, leaves, "head_cls", pooled_s, "train", rng, trace)
    l_cls, _ = ad.softmax_cross_entropy(logits, labels_src)
    l_att = ad.channelwise_l2_mean(f_s, f_t)
    both = ad.concat_batch(pooled_s, pooled_t)
    branch = ad.grad_reverse(both, lambda2) if reverse else both
    logits_dom = head_forward(model, leaves, "head_dom", branch, "train", rng, trace)
    labels_dom = np.concatenate(
        [np.zeros(len(x_src), dtype=np.int64), np.ones(len(x_mix), dtype=np.int64)]
    )
    l_dom, _ = ad.softmax_cross_entropy(logits_dom, labels_dom)
    dom_weight = 1.0 if reverse else lambda2
    total = ad.add_weighted([(1.0, l_cls), (lambda1, l_att), (dom_weight, l_dom)])
    parts = {
        "l_cls": float(l_cls.value),
        "l_att": float(l_att.value),
        "l_dom": float(l_dom.value),
    }
    return total, parts


def domain_branch_grads(
    model: Model,
    x_src: np.ndarray,
    x_mix: np.ndarray,
    lambda2: float,
    reverse: bool,
) -> dict[str, np.ndarray]:
    """Gradients of the domain loss alone w.r.t. encoder/attention params.

    Runs in eval mode (no dropout, running statistics, no side effects) so
    the reversed and unreversed passes see identical forward values. With
    ``reverse`` the encoder gradients must equal -lambda2 times the
    unreversed ones; the head gradients are downstream of the reversal and
    unaffected.
    """
    leaves = wrap(model)
    _, pooled_s = encode_and_attend(model, leaves, "enc_s", x_src, "eval")
    _, pooled_t = encode_and_attend(model, leaves, "enc_t", x_mix, "eval")
    both = ad.concat_batch(pooled_s, pooled_t)
    branch = ad.grad_reverse(both, lambda2) if reverse else both
    logits = head_forward(model, leaves, "head_dom", branch, "eval")
    labels = np.concatenate(
        [np.zeros(len(x_src), dtype=np.int64), np.ones(len(x_mix), dtype=np.int64)]
    )
    l_dom, _ = ad.softmax_cross_entropy(logits, labels)
    ad.backward(l_dom)
    picks = {}
    for n, t in leaves.items():
        if n.startswith(("enc_s.", "enc_t.", "attn.")):
            picks[n] = t.grad if t.grad is not None else np.zeros_like(t.value)
    return picks


def stage1_report(l_cls: float, l_int: float) -> float:
    """Reported stage-1 total: classification minus intensity confusion."""
    return l_cls - l_int


def stage2_report(l_cls: float, l_att: float, l_dom: float, lambda1: float, lambda2: float) -> float:
    """Reported stage-2 total: l_cls + lambda1*l_att - lambda2*l_dom."""
    if lambda1 < 0 or lambda2 < 0:
        raise ValueError("loss weights must be >= 0")
    return l_cls + lambda1 * l_att - lambda2 * l_dom
