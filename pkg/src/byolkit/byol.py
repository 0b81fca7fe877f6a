"""BYOL pretraining: leaky-rectifier MLP heads, EMA target, symmetric loss.

The online network (backbone + projector + predictor) gets gradients; the
target network (backbone + projector) is updated only by the exponential
moving average th' <- tau*th' + (1-tau)*th and never enters the autodiff
graph. The MLP head is linear -> batchnorm -> leaky rectifier(alpha) ->
linear; alpha=0 reproduces the zero-for-negatives head bit for bit.
"""

import copy
import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .augment import build_pipeline, two_views
from .backbone import Backbone, BackboneConfig
from .nn import BatchNorm, Linear, Module, Tensor, rng_for
from .optim import AdamW

regression_loss = ad.cosine_pair_loss


class NonFiniteLossError(RuntimeError):
    def __init__(self, message, batch_index=None, seed=None):
        super().__init__(message)
        self.batch_index = batch_index
        self.seed = seed


class MlpHead(Module):
    """linear(d_in->d_hidden) -> batchnorm -> leaky_rect(alpha) -> linear."""

    def __init__(self, d_in, d_hidden, d_out, alpha, rng, dtype=np.float32):
        super().__init__()
        if alpha < 0:
            raise ValueError("alpha must be >= 0")
        self.fc1 = Linear(d_in, d_hidden, rng, dtype=dtype)
        self.bn = BatchNorm(d_hidden, dtype=dtype)
        self.fc2 = Linear(d_hidden, d_out, rng, dtype=dtype)
        self.alpha = alpha

    def __call__(self, x):
        return self.fc2(ad.leaky_relu(self.bn(self.fc1(x)), self.alpha))


def leaky_rect(x, alpha):
    """Scalar/array form: x if x >= 0 else alpha*x."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    x = np.asarray(x)
    return np.where(x >= 0, x, alpha * x)


@dataclass(frozen=True)
class ByolConfig:
    backbone: str = "r18"
    width_multiplier: float = 0.125
    proj_hidden: int = 512
    proj_out: int = 64
    alpha: float = 0.01
    tau: float = 0.99
    tau_ramp: bool = False
    lr: float = 1e-4
    weight_decay: float = 5e-2
    batch_size: int = 16
    epochs: int = 50
    aug: str = "data_aug_5"
    save_every: int = 0  # 0 = only final checkpoint

    def backbone_config(self):
        return BackboneConfig(self.backbone, self.width_multiplier)


class ByolState:
    def __init__(self, config, seed, dtype=np.float32):
        self.config = config
        self.seed = seed
        rng = rng_for(seed, 20)
        bcfg = config.backbone_config()
        self.backbone = Backbone(bcfg, rng, dtype=dtype)
        d = self.backbone.out_dim
        self.projector = MlpHead(d, config.proj_hidden, config.proj_out, config.alpha, rng, dtype)
        self.predictor = MlpHead(config.proj_out, config.proj_hidden, config.proj_out,
                                 config.alpha, rng, dtype)
        self.target_backbone = copy.deepcopy(self.backbone)
        self.target_projector = copy.deepcopy(self.projector)
        for m in (self.target_backbone, self.target_projector):
            for _, p in m.named_parameters():
                p.requires_grad = False
        self.tau = config.tau
        self.step = 0

    def online_modules(self):
        return {"backbone": self.backbone, "projector": self.projector,
                "predictor": self.predictor}

    def named_online_parameters(self):
        for mod_name, mod in self.online_modules().items():
            yield from mod.named_parameters(mod_name + ".")

    def state_dict(self):
        d = {}
        for mod_name, mod in self.online_modules().items():
            for k, v in mod.state_dict().items():
                d[f"online.{mod_name}.{k}"] = v
        for mod_name, mod in (("backbone", self.target_backbone),
                              ("projector", self.target_projector)):
            for k, v in mod.state_dict().items():
                d[f"target.{mod_name}.{k}"] = v
        return d

    def load_state_dict(self, d):
        for mod_name, mod in self.online_modules().items():
            prefix = f"online.{mod_name}."
            mod.load_state_dict({k[len(prefix):]: v for k, v in d.items() if k.startswith(prefix)})
        for mod_name, mod in (("backbone", self.target_backbone),
                              ("projector", self.target_projector)):
            prefix = f"target.{mod_name}."
            mod.load_state_dict({k[len(prefix):]: v for k, v in d.items() if k.startswith(prefix)})

    def online_project(self, x):
        """x: Tensor batch -> predictor(projector(pooled features))."""
        return self.predictor(self.projector(self.backbone.pooled(x)))

    def target_project(self, x):
        return self.target_projector(self.target_backbone.pooled(x)).data


def ema_update(online_module, target_module, tau):
    """th' <- tau*th' + (1-tau)*th over parameters and buffers alike."""
    if not (0.0 <= tau <= 1.0):
        raise ValueError("tau must be in [0,1]")
    src = online_module.state_dict()
    dst_params = dict(target_module.named_parameters())
    dst_bufs = dict(target_module.named_buffers())
    if set(src) != set(dst_params) | set(dst_bufs):
        raise ValueError("online/target parameter structures differ")
    for name, s in src.items():
        t = dst_params[name] if name in dst_params else dst_bufs[name]
        if t.data.shape != s.shape:
            raise ValueError(f"shape mismatch for {name}")
        t.data = tau * t.data + (1.0 - tau) * s


def make_views(images, spec, rngs):
    """Per-sample independent two-view augmentation; returns two batches."""
    v1, v2 = [], []
    for img, rng in zip(images, rngs):
        a, b = two_views(spec, img, rng)
        v1.append(a)
        v2.append(b)
    return (np.stack(v1).astype(np.float32, copy=False),
            np.stack(v2).astype(np.float32, copy=False))


def byol_step(state, image_batch, spec, rngs, optimizer, tau=None):
    """One symmetric BYOL step. Returns the scalar loss; mutates state."""
    if len(image_batch) == 0:
        raise ValueError("empty batch")
    v1, v2 = make_views(image_batch, spec, rngs)
    x1, x2 = Tensor(v1), Tensor(v2)
    q1 = state.online_project(x1)
    q2 = state.online_project(x2)
    z1 = state.target_project(x1)
    z2 = state.target_project(x2)
    loss = ad.add(regression_loss(q1, z2), regression_loss(q2, z1))
    value = loss.item()
    if not math.isfinite(value):
        raise NonFiniteLossError(
            f"non-finite pretraining loss {value} at step {state.step}",
            batch_index=state.step, seed=state.seed,
        )
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    t = state.tau if tau is None else tau
    ema_update(state.backbone, state.target_backbone, t)
    ema_update(state.projector, state.target_projector, t)
    state.step += 1
    return value


def tau_at(config, step, total_steps):
    if not config.tau_ramp or total_steps <= 0:
        return config.tau
    return 1.0 - (1.0 - config.tau) * (math.cos(math.pi * step / total_steps) + 1.0) / 2.0


def pretrain(dataset, config, seed, out_dir=None, resume=None, history=None):
    """Run BYOL pretraining; returns (state, history rows).

    history rows: dicts with epoch/split/loss/lr/wall_seconds. Determinism:
    shuffling uses rng_for(seed, 21, epoch) and augmentation
    rng_for(seed, 22, epoch, dataset_index), so a resumed run consumes
    exactly the streams the unbroken run would.
    """
    from . import checkpoint as ckpt

    if len(dataset) == 0:
        raise ValueError("empty dataset")
    state = ByolState(config, seed)
    opt = AdamW(dict(state.named_online_parameters()), lr=config.lr,
                weight_decay=config.weight_decay)
    start_epoch = 0
    rows = list(history) if history else []
    if resume is not None:
        meta, tensors = ckpt.load_checkpoint(resume)
        if meta["kind"] != "byol":
            raise ckpt.CheckpointError(f"expected a byol checkpoint, got {meta['kind']}")
        state, opt, start_epoch, rows = load_byol_training(meta, tensors, config, seed)
    n = len(dataset)
    spec = build_pipeline(config.aug)
    steps_per_epoch = max(1, n // config.batch_size + (1 if n % config.batch_size >= 2 else 0))
    total_steps = config.epochs * steps_per_epoch
    for epoch in range(start_epoch, config.epochs):
        t0 = time.time()
        perm = rng_for(seed, 21, epoch).permutation(n)
        losses = []
        for lo in range(0, n, config.batch_size):
            idx = perm[lo : lo + config.batch_size]
            if len(idx) < 2:
                continue  # batchnorm needs >= 2 samples
            rngs = [rng_for(seed, 22, epoch, int(i)) for i in idx]
            tau = tau_at(config, state.step, total_steps)
            losses.append(byol_step(state, dataset.images[idx], spec, rngs, opt, tau=tau))
        rows.append({
            "epoch": epoch + 1, "split": "pretrain", "top1": "",
            "loss": float(np.mean(losses)), "lr": config.lr,
            "wall_seconds": time.time() - t0,
        })
        if out_dir is not None:
            last = epoch + 1 == config.epochs
            if last or (config.save_every and (epoch + 1) % config.save_every == 0):
                save_byol_training(out_dir, state, opt, epoch + 1, rows, config, seed,
                                   final=last)
    return state, rows


def _config_meta(config, seed):
    from .config import config_hash

    cfg = asdict(config)
    return {"config": cfg, "config_hash": config_hash(cfg), "seed": seed}


def save_byol_training(out_dir, state, opt, epoch, rows, config, seed, final=False):
    import os

    from . import checkpoint as ckpt

    meta = _config_meta(config, seed)
    meta.update({"kind": "byol", "tau": state.tau, "step": state.step,
                 "epoch": epoch, "history": rows})
    tensors = dict(state.state_dict())
    tensors.update({f"opt.{k}": np.asarray(v) for k, v in opt.state_dict().items()})
    name = "byol_final.ckpt" if final else f"byol_epoch{epoch:04d}.ckpt"
    path = os.path.join(out_dir, name)
    ckpt.save_checkpoint(path, meta, tensors)
    return path


def load_byol_training(meta, tensors, config, seed):
    """Rebuild (state, optimizer, start_epoch, history) from checkpoint parts."""
    from .config import config_hash

    expect = _config_meta(config, seed)
    if meta["config_hash"] != expect["config_hash"]:
        from .checkpoint import CheckpointError

        raise CheckpointError(
            f"checkpoint config hash {meta['config_hash']} != expected {expect['config_hash']}"
        )
    state = ByolState(config, seed)
    state.load_state_dict({k: v for k, v in tensors.items() if not k.startswith("opt.")})
    state.tau = float(meta["tau"])
    state.step = int(meta["step"])
    opt = AdamW(dict(state.named_online_parameters()), lr=config.lr,
                weight_decay=config.weight_decay)
    opt.load_state_dict({k[len("opt."):]: v for k, v in tensors.items() if k.startswith("opt.")})
    return state, opt, int(meta["epoch"]), list(meta["history"])


def load_byol_state(path):
    """Load a pretraining checkpoint into a fresh ByolState."""
    from . import checkpoint as ckpt

    meta, tensors = ckpt.load_checkpoint(path)
    if meta["kind"] != "byol":
        raise ckpt.CheckpointError(f"expected a byol checkpoint, got {meta['kind']}")
    config = ByolConfig(**meta["config"])
    state = ByolState(config, meta["seed"])
    state.load_state_dict({k: v for k, v in tensors.items() if not k.startswith("opt.")})
    state.tau = float(meta["tau"])
    state.step = int(meta["step"])
    return state
