"""Training loop, AdamW, and evaluation metrics."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import losses
from .config import ExperimentConfig
from .encoders import MLP, encode, encoder_backward, init_encoder, init_projection_head
from .errors import NonFinite, NonFiniteLoss
from .losses import TAU_MAX, TAU_MIN, NcsSpec
from .schedules import lambda_at_epoch, lr_at_step
from .synthdata import augment_batch, generate_dataset, sample_batches

log = logging.getLogger(__name__)

SCALE_KEY = "logit_scale"


@dataclass
class OptimizerState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(state: OptimizerState, params, grads, lr, weight_decay=0.0, decay_keys=None):
    """Decoupled-weight-decay Adam, updating ``params`` arrays in place.

    ``decay_keys`` limits weight decay to those entries (all when None).
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for key, p in params.items():
        g = grads[key]
        m = state.m.setdefault(key, np.zeros_like(p))
        v = state.v.setdefault(key, np.zeros_like(p))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if weight_decay and (decay_keys is None or key in decay_keys):
            p *= 1.0 - lr * weight_decay
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def eval_retrieval(z_images, z_texts) -> tuple[float, float]:
    """Recall@1 image->text and text->image; ties go to the lowest index."""
    zi, zt = np.asarray(z_images), np.asarray(z_texts)
    s = zi @ zt.T
    idx = np.arange(len(zi))
    i2t = float(np.mean(np.argmax(s, axis=1) == idx))
    t2i = float(np.mean(np.argmax(s, axis=0) == idx))
    return i2t, t2i


def eval_alignment(z_images, class_ids, prototypes) -> float:
    """Fraction of images whose most similar class prototype is their own."""
    s = np.asarray(z_images) @ np.asarray(prototypes).T
    return float(np.mean(np.argmax(s, axis=1) == np.asarray(class_ids)))


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    loss_i2t: float
    loss_t2i: float
    loss_ncs: float
    lam: float
    tau: float
    lr: float
    positives_image: float
    positives_text: float
    diag_share_image: float
    recall_i2t: float
    recall_t2i: float
    align_acc: float
    seconds: float

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class Model:
    image: MLP
    text: MLP
    head: MLP | None
    scale: np.ndarray  # shape (1,): -log(tau)

    @property
    def tau(self) -> float:
        return math.exp(-float(self.scale[0]))

    def params(self, learn_tau: bool) -> dict[str, np.ndarray]:
        out = {**self.image.named_arrays("image"), **self.text.named_arrays("text")}
        if self.head is not None:
            out.update(self.head.named_arrays("head"))
        if learn_tau:
            out[SCALE_KEY] = self.scale
        return out


def init_model(cfg: ExperimentConfig, seed: int) -> Model:
    ss = np.random.SeedSequence([seed, 7])
    s_img, s_txt, s_head = ss.spawn(3)
    d = cfg.embed_dim
    head = init_projection_head(s_head, d, cfg.head_hidden) if cfg.uses_ncs else None
    return Model(
        image=init_encoder(s_img, cfg.image_dim, cfg.image_hidden, d),
        text=init_encoder(s_txt, cfg.text_dim, cfg.text_hidden, d),
        head=head,
        scale=np.array([-math.log(cfg.tau_init)]),
    )


def _named(grads, prefix):
    out = {}
    for k, (gw, gb) in enumerate(grads):
        out[f"{prefix}.{k}.weight"] = gw
        out[f"{prefix}.{k}.bias"] = gb
    return out


def _add(acc, grads):
    return [(a[0] + b[0], a[1] + b[1]) for a, b in zip(acc, grads)]


def training_step(cfg: ExperimentConfig, model: Model, images, texts, lam, rng):
    """Loss and parameter gradients for one batch.

    Returns (LossOutput, dict of gradients keyed like ``Model.params``).
    """
    z_t, c_t = encode(model.text, texts, with_cache=True)
    tau = model.tau
    if cfg.loss_kind == "mv_simcon":
        v1, v2 = augment_batch(images, cfg.view_config(), rng)
        z1, c1 = encode(model.image, v1, with_cache=True)
        z2, c2 = encode(model.image, v2, with_cache=True)
        if cfg.uses_ncs:
            out = losses.total_loss(
                z1, z2, z_t, tau, lam, NcsSpec(model.head),
                joint_positives=cfg.use_joint_positives, include_self=cfg.include_self,
            )
        else:
            out = losses.mv_simcon(
                z1, z2, z_t, tau, lam,
                joint_positives=cfg.use_joint_positives, include_self=cfg.include_self,
            )
        g_img = _add(
            encoder_backward(model.image, c1, out.grads["z_i1"]),
            encoder_backward(model.image, c2, out.grads["z_i2"]),
        )
    else:
        z_i, c_i = encode(model.image, images, with_cache=True)
        if cfg.loss_kind == "simcon":
            p_i, p_t = losses.positive_masks(
                z_i.matrix @ z_i.matrix.T, z_t.matrix @ z_t.matrix.T, lam
            )
            out = losses.simcon(z_i, z_t, p_i, p_t, tau, include_self=cfg.include_self)
        else:
            out = losses.info_nce(z_i, z_t, tau)
        g_img = encoder_backward(model.image, c_i, out.grads["z_i"])
    grads = {**_named(g_img, "image"), **_named(encoder_backward(model.text, c_t, out.grads["z_t"]), "text")}
    if out.head_grads is not None:
        grads.update(_named(out.head_grads, "head"))
    # tau = exp(-s)  =>  dL/ds = -tau dL/dtau
    grads[SCALE_KEY] = np.array([-tau * out.grad_tau])
    return out, grads


def evaluate(model: Model, eval_set) -> tuple[float, float, float]:
    zi = encode(model.image, eval_set.images)
    zt = encode(model.text, eval_set.texts)
    protos = encode(model.text, eval_set.prototypes.text)
    r_i2t, r_t2i = eval_retrieval(zi, zt)
    return r_i2t, r_t2i, eval_alignment(zi, eval_set.class_ids, protos)


def train(cfg: ExperimentConfig, seed: int | None = None, model: Model | None = None) -> list[EpochMetrics]:
    seed = cfg.seeds[0] if seed is None else seed
    train_set = generate_dataset(cfg.dataset_spec(seed, "train"), "train")
    eval_set = generate_dataset(cfg.dataset_spec(seed, "eval"), "eval")
    model = model or init_model(cfg, seed)
    params = model.params(cfg.learn_tau)
    decay_keys = {k for k in params if k.endswith(".weight")}
    opt = OptimizerState()
    lam_sched, lr_sched = cfg.lambda_schedule(), cfg.lr_schedule()
    steps_per_epoch = len(train_set) // cfg.batch_size
    log_min_tau, log_max_tau = -math.log(TAU_MAX), -math.log(TAU_MIN)

    history = []
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        lam = lambda_at_epoch(lam_sched, epoch) if cfg.uses_masks else float("nan")
        aug_rng = np.random.default_rng([seed, epoch, 1])
        sums: dict[str, float] = {}
        lr = lr_sched.init_lr
        for batch in sample_batches(len(train_set), cfg.batch_size, [seed, epoch, 0]):
            lr = lr_at_step(lr_sched, step, steps_per_epoch)
            try:
                out, grads = training_step(
                    cfg, model, train_set.images[batch], train_set.texts[batch], lam, aug_rng
                )
            except NonFinite as exc:
                raise NonFiniteLoss(step, {"epoch": epoch, "error": str(exc), "tau": model.tau}) from exc
            if not math.isfinite(out.value) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise NonFiniteLoss(step, {"epoch": epoch, "loss": out.value, "tau": model.tau})
            adamw_step(opt, params, grads, lr, cfg.weight_decay, decay_keys)
            np.clip(model.scale, log_min_tau, log_max_tau, out=model.scale)
            sums["loss"] = sums.get("loss", 0.0) + out.value
            for k, v in out.diagnostics.items():
                sums[k] = sums.get(k, 0.0) + v
            step += 1
        mean = {k: v / steps_per_epoch for k, v in sums.items()}
        r_i2t, r_t2i, acc = evaluate(model, eval_set)
        history.append(
            EpochMetrics(
                epoch=epoch,
                loss=mean["loss"],
                loss_i2t=mean.get("loss_i2t", float("nan")),
                loss_t2i=mean.get("loss_t2i", float("nan")),
                loss_ncs=mean.get("loss_ncs", float("nan")),
                lam=lam,
                tau=model.tau,
                lr=lr,
                positives_image=mean.get("positives_image", 1.0),
                positives_text=mean.get("positives_text", 1.0),
                diag_share_image=mean.get("diag_share_image", float("nan")),
                recall_i2t=r_i2t,
                recall_t2i=r_t2i,
                align_acc=acc,
                seconds=time.perf_counter() - t0,
            )
        )
        log.info(
            "seed %d epoch %d loss %.4f tau %.4f R@1 i2t %.3f t2i %.3f acc %.3f",
            seed, epoch, mean["loss"], model.tau, r_i2t, r_t2i, acc,
        )
    return history
