"""Two-stage adaptation pipeline, baselines, and the benchmark harness.

Stage 1 (pretrain) learns intensity-robust source features: a classifier
warmup followed by co-training against an intensity discriminator fed
bias-field recombined copies of each batch. Stage 2 (adapt) trains a
target encoder on amplitude-mixed target volumes while the mixing region
is scheduled from validation AUC.

Determinism contract: one Generator per run, seeded from the run seed and
a stage tag, drives every stochastic choice (shuffles, mixing weights,
bias fields, dropout). Validation draws come from a separate generator
derived from (seed, epoch), so the two probe evaluations of an epoch see
identical pairings and a resumed run revalidates identically. Checkpoints
carry parameters, optimizer moments, scheduler state, and the generator
state, making resume bit-exact.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import network
from .checkpoint import load_checkpoint, rng_from_state, rng_state, save_checkpoint
from .data import DatasetManifest, GuardedDataset, load_split, read_manifest
from .freq_augment import (
    BiasFieldParams,
    amplitude_mixup,
    apr_recombine,
    fda_transfer,
    random_bias_field,
)
from .metrics import EvalReport, auc, evaluate_scores
from .network import ArchConfig, Model
from .optim import AdamState, adam_update
from .scheduler import (
    DyMixConfig,
    DyMixState,
    ProbeRequested,
    new_scheduler,
    resolve_probe,
    state_from_dict,
    state_to_dict,
    step,
)
from .spatial_augment import cutmix, cutout, mixup_images, sample_box
from .volume import Volume

AUG_METHODS = ("mixup", "cutout", "cutmix", "apr", "fda", "dymix")
SUPERVISED_BASELINES = ("source_only", "target_only")
ABLATIONS = ("dymix_noint", "dymix_noatt")
ALL_METHODS = SUPERVISED_BASELINES + AUG_METHODS + ABLATIONS

METRICS_HEADER = "# epoch\tbeta\tl_cls\tl_att\tl_dom\tval_auc\tevent"


@dataclass(frozen=True)
class RunConfig:
    """Hyperparameters and paths for one training run.

    Epoch counts, loss weights, and scheduler steps default to desk scale,
    tuned on the bundled synthetic benchmark; the reference configuration
    trains far longer (classifier warmup of 50 epochs, lr 1e-4, batch 4)
    with lambda1=0.5 and the conservative scheduler (tau=0.05, patience=5).
    At desk scale the attention-consistency weight had to come down: with
    tiny batches it otherwise dominates the encoder gradient.
    """

    data_dir: str
    out_dir: str
    seed: int = 1
    lr: float = 1e-4
    batch_size: int = 4
    warmup_epochs: int = 4
    adversarial_epochs: int = 20
    adapt_epochs: int = 12
    lambda1: float = 0.1
    lambda2: float = 0.1
    bias_order: int = 3
    bias_sigma: float = 0.8
    fda_beta: float = 1.0
    eval_batch: int = 64
    threshold: float = 0.5
    dymix: DyMixConfig = field(default_factory=lambda: DyMixConfig(tau=0.1, patience=2))
    arch: ArchConfig = field(default_factory=ArchConfig)

    def __post_init__(self):
        if not self.data_dir or not self.out_dir:
            raise ValueError("data_dir and out_dir are required")
        if self.lr <= 0 or self.batch_size < 1 or self.eval_batch < 1:
            raise ValueError("lr must be > 0 and batch sizes >= 1")
        if min(self.warmup_epochs, self.adversarial_epochs, self.adapt_epochs) < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be >= 0")
        if not (0.0 <= self.fda_beta <= 1.0):
            raise ValueError(f"fda_beta must lie in [0, 1], got {self.fda_beta}")


@dataclass
class StageResult:
    checkpoint_path: Path
    metrics_path: Path
    history: list[dict]
    best_auc: float
    best_epoch: int
    target_guard: GuardedDataset | None = None


class MetricsWriter:
    """Append-only epoch records; one fixed-format line per epoch."""

    def __init__(self, path: str | Path, resume: bool):
        self.path = Path(path)
        if not (resume and self.path.exists()):
            self.path.write_text(METRICS_HEADER + "\n")

    def line(self, epoch: int, beta, l_cls, l_att, l_dom, val_auc, event: str) -> None:
        def num(x, digits=6):
            return "-" if x is None else f"{x:.{digits}f}"

        rec = (
            f"epoch={epoch}\tbeta={num(beta, 4)}\tl_cls={num(l_cls)}\t"
            f"l_att={num(l_att)}\tl_dom={num(l_dom)}\tval_auc={num(val_auc)}\t"
            f"event={event}"
        )
        with self.path.open("a") as fh:
            fh.write(rec + "\n")


def _train_rng(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, tag]))


def _eval_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 101, epoch]))


def apply_method(
    method: str,
    carrier: np.ndarray,
    other: np.ndarray | None,
    rng: np.random.Generator,
    cfg: RunConfig,
    beta: float,
) -> np.ndarray:
    """One augmented volume; the carrier keeps its structure and label.

    ``other`` is a volume from the opposite domain. Draw order per method
    is fixed so identical generator states give identical outputs.
    """
    cv = Volume(carrier)
    if method == "dymix":
        lam = float(rng.uniform())
        return amplitude_mixup(Volume(other), cv, beta, lam).values
    if method == "mixup":
        lam = float(rng.uniform())
        return mixup_images(cv, Volume(other), lam).values
    if method == "cutout":
        box = sample_box(cv.dims, rng)
        return cutout(cv, box).values
    if method == "cutmix":
        box = sample_box(cv.dims, rng)
        mixed, _ = cutmix(cv, Volume(other), box)
        return mixed.values
    if method == "apr":
        return apr_recombine(cv, Volume(other)).values
    if method == "fda":
        return fda_transfer(Volume(other), cv, cfg.fda_beta).values
    raise ValueError(f"unknown augmentation method {method!r}; valid: {AUG_METHODS}")


def _forward_scores(model: Model, prefix: str, volumes: np.ndarray, batch: int) -> np.ndarray:
    chunks = [
        network.classify(model, volumes[i:i + batch], prefix)
        for i in range(0, len(volumes), batch)
    ]
    return np.concatenate(chunks)


def _plain_val_auc(model: Model, prefix: str, ds: GuardedDataset, cfg: RunConfig) -> float:
    scores = _forward_scores(model, prefix, ds.volumes, cfg.eval_batch)
    return auc(scores, ds.labels)


def _mixed_val_auc(
    model: Model,
    method: str,
    beta: float,
    src_val: GuardedDataset,
    tgt_volumes: np.ndarray,
    cfg: RunConfig,
    epoch: int,
) -> float:
    """Validation AUC on manipulated source hold-out volumes.

    Each labeled source-val volume keeps its structure and is mixed
    against a randomly drawn target volume, then scored through the
    target encoder. The generator is derived from (seed, epoch), so the
    probe evaluations of one epoch reuse identical pairings and weights,
    and only beta differs between them.
    """
    rng = _eval_rng(cfg.seed, epoch)
    idx = rng.integers(0, len(tgt_volumes), size=len(src_val))
    mixed = np.stack(
        [
            apply_method(method, src_val.volumes[i], tgt_volumes[idx[i]], rng, cfg, beta)
            for i in range(len(src_val))
        ]
    )
    scores = _forward_scores(model, "enc_t", mixed, cfg.eval_batch)
    return auc(scores, src_val.labels)


def _check_two_classes(ds: GuardedDataset, what: str) -> None:
    labels = ds.labels
    if len(np.unique(labels)) < 2:
        raise ValueError(f"{what} contains a single class; need both labels")


def _batches(order: np.ndarray, size: int):
    for i in range(0, len(order), size):
        yield order[i:i + size]


def _collect_grads(leaves: dict[str, ad.Tensor]) -> dict[str, np.ndarray]:
    return {n: t.grad for n, t in leaves.items() if t.grad is not None}


def _save_stage_checkpoint(
    path: Path,
    model: Model,
    best_params: dict[str, np.ndarray],
    adam: AdamState,
    meta: dict,
) -> None:
    tensors: dict[str, np.ndarray] = {}
    for n, v in model.params.items():
        tensors[f"cur.{n}"] = v
    for n, v in best_params.items():
        tensors[f"best.{n}"] = v
    for n, v in adam.m.items():
        tensors[f"adam.m.{n}"] = v
    for n, v in adam.v.items():
        tensors[f"adam.v.{n}"] = v
    meta = dict(meta)
    meta["adam_t"] = adam.t
    meta["arch"] = dataclasses.asdict(model.arch)
    meta["ndim"] = model.ndim
    save_checkpoint(path, tensors, meta)


def _load_stage_checkpoint(path: str | Path) -> tuple[Model, dict[str, np.ndarray], AdamState, dict]:
    tensors, meta = load_checkpoint(path)
    arch_d = dict(meta["arch"])
    arch_d["widths"] = tuple(arch_d["widths"])
    arch_d["head_hidden"] = tuple(arch_d["head_hidden"])
    arch = ArchConfig(**arch_d)
    model = Model(arch=arch, ndim=int(meta["ndim"]))
    best: dict[str, np.ndarray] = {}
    adam = AdamState(t=int(meta.get("adam_t", 0)))
    for name, v in tensors.items():
        kind, rest = name.split(".", 1)
        if kind == "cur":
            model.params[rest] = v
        elif kind == "best":
            best[rest] = v
        elif kind == "adam":
            sub, pname = rest.split(".", 1)
            (adam.m if sub == "m" else adam.v)[pname] = v
    return model, best, adam, meta


def model_from_checkpoint(path: str | Path, panel: str = "best") -> Model:
    model, best, _, _ = _load_stage_checkpoint(path)
    if panel == "best":
        model.params = best
    elif panel != "cur":
        raise ValueError(f"panel must be 'best' or 'cur', got {panel!r}")
    return model


def pretrain_stage(
    cfg: RunConfig,
    variant: str = "full",
    resume: str | Path | None = None,
    metrics_path: str | Path | None = None,
    checkpoint_path: str | Path | None = None,
) -> StageResult:
    """Stage 1: source-supervised training with intensity-adversarial phase.

    Phase A (warmup epochs) trains encoder, attention, and classifier on
    plain cross-entropy. Phase B additionally feeds each batch its
    bias-field recombined copies; with variant "full" an intensity
    discriminator behind a gradient reversal makes the encoder erase the
    original/shifted distinction, with "noint" the copies act as plain
    augmentation (ablation), and with "plain" phase B is identical to
    phase A (supervised reference).
    """
    if variant not in ("full", "noint", "plain"):
        raise ValueError(f"unknown pretrain variant {variant!r}")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = Path(checkpoint_path) if checkpoint_path else out / f"pretrain_{variant}.ckpt"
    mpath = Path(metrics_path) if metrics_path else out / f"pretrain_{variant}_metrics.tsv"

    manifest = read_manifest(cfg.data_dir)
    src_train = load_split(manifest, "source", "train")
    src_val = load_split(manifest, "source", "val")
    _check_two_classes(src_train, "source train split")
    _check_two_classes(src_val, "source val split")
    ndim = len(src_train.dims)
    total_epochs = cfg.warmup_epochs + cfg.adversarial_epochs

    if resume is not None:
        model, best_params, adam, meta = _load_stage_checkpoint(resume)
        if meta.get("stage") != "pretrain" or meta.get("variant") != variant:
            raise ValueError(
                f"resume checkpoint is {meta.get('stage')}/{meta.get('variant')}, "
                f"expected pretrain/{variant}"
            )
        rng = rng_from_state(meta["rng"])
        start_epoch = int(meta["epoch_next"])
        best_auc = float(meta["best"]["auc"])
        best_epoch = int(meta["best"]["epoch"])
        writer = MetricsWriter(mpath, resume=True)
    else:
        rng = _train_rng(cfg.seed, 11)
        model = network.init_model(cfg.arch, ndim, rng)
        best_params = model.clone_params()
        adam = AdamState()
        start_epoch = 1
        best_auc = -1.0
        best_epoch = 0
        writer = MetricsWriter(mpath, resume=False)

    bias = BiasFieldParams(order=cfg.bias_order, sigma=cfg.bias_sigma, seed=0)
    history: list[dict] = []
    for epoch in range(start_epoch, total_epochs + 1):
        phase_b = epoch > cfg.warmup_epochs and variant != "plain"
        order = rng.permutation(len(src_train))
        sum_cls = 0.0
        sum_int = 0.0
        n_steps = 0
        for batch in _batches(order, cfg.batch_size):
            xs = src_train.volumes[batch]
            ys = src_train.labels[batch]
            if phase_b:
                seeds = rng.integers(2**31, size=len(batch))
                shifted = np.stack(
                    [
                        apr_recombine(
                            Volume(x), random_bias_field(Volume(x), replace(bias, seed=int(s)))
                        ).values
                        for x, s in zip(xs, seeds)
                    ]
                )
                x_all = np.concatenate([xs, shifted])
                y_all = np.concatenate([ys, ys])
                prov = None
                if variant == "full":
                    prov = np.concatenate(
                        [np.zeros(len(batch), dtype=np.int64), np.ones(len(batch), dtype=np.int64)]
                    )
            else:
                x_all, y_all, prov = xs, ys, None
            leaves = network.wrap(model)
            total, parts = network.pretrain_loss(model, leaves, x_all, y_all, prov, rng)
            ad.backward(total)
            adam_update(model.params, _collect_grads(leaves), adam, cfg.lr)
            sum_cls += parts["l_cls"]
            sum_int += parts["l_int"]
            n_steps += 1
        val_auc = _plain_val_auc(model, "enc_s", src_val, cfg)
        event = "-"
        if val_auc > best_auc:
            best_auc = val_auc
            best_epoch = epoch
            best_params = model.clone_params()
            event = "best"
        l_cls = sum_cls / max(n_steps, 1)
        l_int = sum_int / max(n_steps, 1) if phase_b and variant == "full" else None
        writer.line(epoch, None, l_cls, None, l_int, val_auc, event)
        history.append(
            {"epoch": epoch, "l_cls": l_cls, "l_int": l_int, "val_auc": val_auc, "event": event}
        )
        _save_stage_checkpoint(
            ckpt_path, model, best_params, adam,
            {
                "stage": "pretrain", "variant": variant, "seed": cfg.seed,
                "epoch_next": epoch + 1, "rng": rng_state(rng),
                "best": {"auc": best_auc, "epoch": best_epoch}, "scheduler": None,
            },
        )
    if resume is None and total_epochs == 0:
        _save_stage_checkpoint(
            ckpt_path, model, best_params, adam,
            {
                "stage": "pretrain", "variant": variant, "seed": cfg.seed,
                "epoch_next": 1, "rng": rng_state(rng),
                "best": {"auc": best_auc, "epoch": best_epoch}, "scheduler": None,
            },
        )
    return StageResult(ckpt_path, mpath, history, best_auc, best_epoch)


def adapt_stage(
    cfg: RunConfig,
    pretrained: str | Path | None,
    method: str = "dymix",
    resume: str | Path | None = None,
    metrics_path: str | Path | None = None,
    checkpoint_path: str | Path | None = None,
) -> StageResult:
    """Stage 2: adversarial adaptation on augmented target volumes.

    Every step pairs a labeled source batch with unlabeled target volumes
    (independent shuffles, target stream cycled), builds the augmented
    batch with ``method``, and minimizes classification + attention
    consistency + reversed domain confusion. With method "dymix" the
    mixing region beta follows the plateau/probe schedule; other methods
    have nothing to schedule and run a fixed protocol (beta=1 where the
    augmentation takes a region). Target training labels stay locked
    behind the dataset guard throughout.
    """
    if method not in AUG_METHODS:
        raise ValueError(f"unknown adaptation method {method!r}; valid: {AUG_METHODS}")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = Path(checkpoint_path) if checkpoint_path else out / f"adapt_{method}.ckpt"
    mpath = Path(metrics_path) if metrics_path else out / f"adapt_{method}_metrics.tsv"

    manifest = read_manifest(cfg.data_dir)
    src_train = load_split(manifest, "source", "train")
    src_val = load_split(manifest, "source", "val")
    tgt_train = load_split(manifest, "target", "train", allow_labels=False)
    _check_two_classes(src_train, "source train split")
    scheduled = method == "dymix"

    if resume is not None:
        model, best_params, adam, meta = _load_stage_checkpoint(resume)
        if meta.get("stage") != "adapt" or meta.get("method") != method:
            raise ValueError(
                f"resume checkpoint is {meta.get('stage')}/{meta.get('method')}, "
                f"expected adapt/{method}"
            )
        rng = rng_from_state(meta["rng"])
        start_epoch = int(meta["epoch_next"])
        best_auc = float(meta["best"]["auc"])
        best_epoch = int(meta["best"]["epoch"])
        sched = state_from_dict(meta["scheduler"]) if meta.get("scheduler") else None
        writer = MetricsWriter(mpath, resume=True)
    else:
        if pretrained is None:
            raise ValueError("adapt_stage needs a pretrained checkpoint (or resume)")
        if not Path(pretrained).exists():
            raise FileNotFoundError(f"pretrained checkpoint {pretrained} does not exist")
        model = model_from_checkpoint(pretrained, panel="best")
        rng = _train_rng(cfg.seed, 12)
        network.add_target_encoder(model, rng, copy_source=True)
        # fresh domain head: the pretrained one never saw gradients
        network.init_head(model, "head_dom", rng)
        best_params = model.clone_params()
        adam = AdamState()
        start_epoch = 1
        best_auc = -1.0
        best_epoch = 0
        sched = new_scheduler(cfg.dymix) if scheduled else None
        writer = MetricsWriter(mpath, resume=False)

    history: list[dict] = []
    for epoch in range(start_epoch, cfg.adapt_epochs + 1):
        beta = sched.beta if sched is not None else 1.0
        src_order = rng.permutation(len(src_train))
        tgt_order = np.resize(rng.permutation(len(tgt_train)), len(src_train))
        sums = {"l_cls": 0.0, "l_att": 0.0, "l_dom": 0.0}
        n_steps = 0
        for i, batch in enumerate(_batches(src_order, cfg.batch_size)):
            xs = src_train.volumes[batch]
            ys = src_train.labels[batch]
            t_idx = tgt_order[i * cfg.batch_size:i * cfg.batch_size + len(batch)]
            x_mix = np.stack(
                [
                    apply_method(method, tgt_train.volumes[t], xs[j], rng, cfg, beta)
                    for j, t in enumerate(t_idx)
                ]
            )
            leaves = network.wrap(model)
            total, parts = network.adapt_loss(
                model, leaves, xs, ys, x_mix, cfg.lambda1, cfg.lambda2, rng
            )
            ad.backward(total)
            adam_update(model.params, _collect_grads(leaves), adam, cfg.lr)
            for k in sums:
                sums[k] += parts[k]
            n_steps += 1
        val_auc = _mixed_val_auc(model, method, beta, src_val, tgt_train.volumes, cfg, epoch)
        event = "-"
        if val_auc > best_auc:
            best_auc = val_auc
            best_epoch = epoch
            best_params = model.clone_params()
            event = "best"
        if sched is not None:
            decision = step(sched, val_auc)
            if isinstance(decision, ProbeRequested):
                eval_plus = _mixed_val_auc(
                    model, method, decision.beta_plus, src_val, tgt_train.volumes, cfg, epoch
                )
                eval_minus = _mixed_val_auc(
                    model, method, decision.beta_minus, src_val, tgt_train.volumes, cfg, epoch
                )
                new_beta = resolve_probe(sched, eval_plus, eval_minus)
                event = (
                    f"probe(plus={eval_plus:.6f},minus={eval_minus:.6f})"
                    f"->beta={new_beta:.4f}"
                )
        means = {k: v / max(n_steps, 1) for k, v in sums.items()}
        writer.line(
            epoch,
            beta if scheduled else None,
            means["l_cls"],
            means["l_att"],
            means["l_dom"],
            val_auc,
            event,
        )
        history.append({"epoch": epoch, "beta": beta, **means, "val_auc": val_auc, "event": event})
        _save_stage_checkpoint(
            ckpt_path, model, best_params, adam,
            {
                "stage": "adapt", "method": method, "seed": cfg.seed,
                "epoch_next": epoch + 1, "rng": rng_state(rng),
                "best": {"auc": best_auc, "epoch": best_epoch},
                "scheduler": state_to_dict(sched) if sched is not None else None,
            },
        )
    if resume is None and cfg.adapt_epochs == 0:
        _save_stage_checkpoint(
            ckpt_path, model, best_params, adam,
            {
                "stage": "adapt", "method": method, "seed": cfg.seed,
                "epoch_next": 1, "rng": rng_state(rng),
                "best": {"auc": best_auc, "epoch": best_epoch},
                "scheduler": state_to_dict(sched) if sched is not None else None,
            },
        )
    return StageResult(ckpt_path, mpath, history, best_auc, best_epoch, target_guard=tgt_train)


def supervised_stage(
    cfg: RunConfig,
    domain: str,
    metrics_path: str | Path | None = None,
    checkpoint_path: str | Path | None = None,
) -> StageResult:
    """Plain supervised training on one domain (reference bounds).

    domain="source" is the no-adaptation lower bound; domain="target"
    deliberately unlocks target labels and is the supervised upper bound.
    """
    if domain not in ("source", "target"):
        raise ValueError(f"domain must be source or target, got {domain!r}")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = "source_only" if domain == "source" else "target_only"
    ckpt_path = Path(checkpoint_path) if checkpoint_path else out / f"{name}.ckpt"
    mpath = Path(metrics_path) if metrics_path else out / f"{name}_metrics.tsv"

    manifest = read_manifest(cfg.data_dir)
    if domain == "source":
        train = load_split(manifest, "source", "train")
        val = load_split(manifest, "source", "val")
    else:
        # supervised oracle: explicitly unlocked target labels
        train = load_split(manifest, "target", "train", allow_labels=False).unlocked()
        val = load_split(manifest, "target", "val")
    _check_two_classes(train, f"{domain} train split")
    ndim = len(train.dims)

    rng = _train_rng(cfg.seed, 13 if domain == "source" else 14)
    model = network.init_model(cfg.arch, ndim, rng)
    best_params = model.clone_params()
    adam = AdamState()
    best_auc = -1.0
    best_epoch = 0
    writer = MetricsWriter(mpath, resume=False)
    history: list[dict] = []
    total_epochs = cfg.warmup_epochs + cfg.adversarial_epochs
    for epoch in range(1, total_epochs + 1):
        order = rng.permutation(len(train))
        sum_cls = 0.0
        n_steps = 0
        for batch in _batches(order, cfg.batch_size):
            leaves = network.wrap(model)
            total, parts = network.pretrain_loss(
                model, leaves, train.volumes[batch], train.labels[batch], None, rng
            )
            ad.backward(total)
            adam_update(model.params, _collect_grads(leaves), adam, cfg.lr)
            sum_cls += parts["l_cls"]
            n_steps += 1
        val_auc = _plain_val_auc(model, "enc_s", val, cfg)
        event = "-"
        if val_auc > best_auc:
            best_auc, best_epoch = val_auc, epoch
            best_params = model.clone_params()
            event = "best"
        writer.line(epoch, None, sum_cls / max(n_steps, 1), None, None, val_auc, event)
        history.append({"epoch": epoch, "val_auc": val_auc, "event": event})
        _save_stage_checkpoint(
            ckpt_path, model, best_params, adam,
            {
                "stage": name, "seed": cfg.seed, "epoch_next": epoch + 1,
                "rng": rng_state(rng), "best": {"auc": best_auc, "epoch": best_epoch},
                "scheduler": None,
            },
        )
    if total_epochs == 0:
        _save_stage_checkpoint(
            ckpt_path, model, best_params, adam,
            {
                "stage": name, "seed": cfg.seed, "epoch_next": 1,
                "rng": rng_state(rng), "best": {"auc": best_auc, "epoch": best_epoch},
                "scheduler": None,
            },
        )
    return StageResult(ckpt_path, mpath, history, best_auc, best_epoch)


def evaluate_model(
    checkpoint: str | Path,
    data_dir: str | Path,
    domain: str = "target",
    split: str = "test",
    threshold: float = 0.5,
    eval_batch: int = 64,
) -> EvalReport:
    """Eval-mode scoring of the checkpoint's best panel on one split.

    Scores flow through the target encoder when the checkpoint has one
    (adapted models), otherwise through the source encoder.
    """
    model = model_from_checkpoint(checkpoint, panel="best")
    manifest = read_manifest(data_dir)
    ds = load_split(manifest, domain, split)
    prefix = "enc_t" if model.has("enc_t") else "enc_s"
    scores = _forward_scores(model, prefix, ds.volumes, eval_batch)
    return evaluate_scores(scores, ds.labels, threshold)


def run_baseline(
    cfg: RunConfig,
    which: str,
    pretrained: str | Path | None = None,
) -> tuple[EvalReport, StageResult]:
    """Train one method end to end and evaluate it on the target test split.

    Augmentation baselines reuse ``pretrained`` when given (the pretrain
    stage is deterministic per seed, so sharing it across methods changes
    nothing); otherwise they pretrain first.
    """
    if which not in ALL_METHODS:
        raise ValueError(f"unknown baseline {which!r}; valid: {ALL_METHODS}")
    if which == "source_only":
        stage = supervised_stage(cfg, "source")
    elif which == "target_only":
        stage = supervised_stage(cfg, "target")
    else:
        variant = "noint" if which == "dymix_noint" else "full"
        method = "dymix" if which in ABLATIONS else which
        run_cfg = replace(cfg, lambda1=0.0) if which == "dymix_noatt" else cfg
        if pretrained is None:
            pretrained = pretrain_stage(cfg, variant=variant).checkpoint_path
        stage = adapt_stage(
            run_cfg,
            pretrained,
            method=method,
            metrics_path=Path(cfg.out_dir) / f"{which}_metrics.tsv",
            checkpoint_path=Path(cfg.out_dir) / f"{which}.ckpt",
        )
    report = evaluate_model(
        stage.checkpoint_path, cfg.data_dir, "target", "test", cfg.threshold, cfg.eval_batch
    )
    return report, stage


def run_benchmark(
    cfg: RunConfig,
    methods: tuple[str, ...],
    seeds: tuple[int, ...],
    results_path: str | Path | None = None,
) -> dict:
    """The comparison study: every method trained per seed, one table out.

    Per seed, methods that start from stage 1 share one pretrain per
    variant (full/noint); supervised baselines train from scratch. Rows
    are (method, seed, acc, sen, spe, auc); per-method means appended
    with seed column "mean". Returns rows, means, and guard audit counts.
    """
    for m in methods:
        if m not in ALL_METHODS:
            raise ValueError(f"unknown method {m!r}; valid: {ALL_METHODS}")
    out_root = Path(cfg.out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    rows: list[tuple[str, int, float, float, float, float]] = []
    label_reads = 0
    for seed in seeds:
        seed_cfg = replace(cfg, seed=seed, out_dir=str(out_root / f"seed{seed}"))
        pre_cache: dict[str, Path] = {}
        for which in methods:
            if which in SUPERVISED_BASELINES:
                pre = None
            else:
                variant = "noint" if which == "dymix_noint" else "full"
                if variant not in pre_cache:
                    pre_cache[variant] = pretrain_stage(seed_cfg, variant=variant).checkpoint_path
                pre = pre_cache[variant]
            report, stage = run_baseline(seed_cfg, which, pretrained=pre)
            if stage.target_guard is not None:
                label_reads += stage.target_guard.label_reads
            rows.append((which, seed, report.acc, report.sen, report.spe, report.auc))
    path = Path(results_path) if results_path else out_root / "results.tsv"
    means = write_results_table(rows, methods, path)
    return {"rows": rows, "means": means, "results_path": path, "target_label_reads": label_reads}


def write_results_table(
    rows: list[tuple[str, int, float, float, float, float]],
    methods: tuple[str, ...],
    path: str | Path,
) -> dict[str, dict[str, float]]:
    """TSV of per-seed rows plus per-method means; returns the means."""
    means: dict[str, dict[str, float]] = {}
    for m in methods:
        sel = [r for r in rows if r[0] == m]
        means[m] = {
            "acc": float(np.mean([r[2] for r in sel])),
            "sen": float(np.mean([r[3] for r in sel])),
            "spe": float(np.mean([r[4] for r in sel])),
            "auc": float(np.mean([r[5] for r in sel])),
        }
    lines = ["method\tseed\tacc\tsen\tspe\tauc"]
    for m, seed, a, s, p, u in rows:
        lines.append(f"{m}\t{seed}\t{a:.6f}\t{s:.6f}\t{p:.6f}\t{u:.6f}")
    for m in methods:
        mm = means[m]
        lines.append(
            f"{m}\tmean\t{mm['acc']:.6f}\t{mm['sen']:.6f}\t{mm['spe']:.6f}\t{mm['auc']:.6f}"
        )
    Path(path).write_text("\n".join(lines) + "\n")
    return means
