"""Supervised fine-tuning of hybrid (frozen extractor + head) and ConvNet models.

The extractor never enters the autodiff graph: its parameters are
requires_grad=False and its BN layers run with locked statistics, so the
freeze contract (bit-identical extractor bytes across a fine-tune) holds by
construction. Determinism: batch order comes from rng_for(seed, 51, epoch),
per-sample augmentation from rng_for(seed, 52, epoch, dataset_index), so a
checkpoint-resumed run consumes exactly the streams of an unbroken run.
"""

import copy
import csv
import io
import math
import os
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt
from .augment import apply as aug_apply
from .augment import build_pipeline, eval_view
from .backbone import Backbone, TAPS, feature_shape, freeze_through
from .byol import NonFiniteLossError
from .config import config_hash
from .nn import Linear, Module, Tensor, freeze_module, rng_for
from .optim import AdamW
from .transformers import TransformerClassifier

METRICS_HEADER = "epoch,split,top1,loss,lr,wall_seconds"

# optimizer-step counter, used by sweep idempotence checks
STEP_COUNTER = 0


@dataclass(frozen=True)
class TrainHp:
    lr: float = 1e-4
    weight_decay: float = 5e-2
    batch_size: int = 128
    epochs: int = 100
    aug_name: str = "aug_3"
    seed: int = 0
    label_smoothing: float = 0.0
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size <= 0 or self.epochs < 0:
            raise ValueError("lr/batch_size must be positive, epochs >= 0")


class HybridModel(Module):
    """Frozen extractor through a tap point + freshly initialized head."""

    def __init__(self, extractor, tap, head):
        super().__init__()
        self.extractor = extractor
        self.tap = tap
        self.head = head

    def features(self, x):
        """x: (N,3,H,W) ndarray -> detached feature Tensor."""
        return self.extractor(Tensor(np.ascontiguousarray(x)), tap=self.tap)

    def __call__(self, x):
        return self.head(self.features(x))

    def trainable_parameters(self):
        return {f"head.{n}": p for n, p in self.head.named_parameters()}

    def extractor_hash(self):
        return self.extractor.param_nbytes_hash()


class ConvNetClassifier(Module):
    """Backbone + global average pool + linear classifier."""

    def __init__(self, backbone, n_classes, seed, dtype=np.float32):
        super().__init__()
        self.backbone = backbone
        self.fc = Linear(backbone.out_dim, n_classes, rng_for(seed, 31), dtype=dtype)

    def __call__(self, x):
        if not isinstance(x, Tensor):
            x = Tensor(np.ascontiguousarray(x))
        return self.fc(ad.mean(self.backbone(x), axis=(2, 3)))

    def trainable_parameters(self):
        return {n: p for n, p in self.named_parameters() if p.requires_grad}


def attach_frontend(byol_state, tap, head_config, seed=0, input_hw=96):
    """Clone the online backbone, freeze through `tap`, attach a fresh head."""
    if tap not in TAPS:
        raise ValueError(f"unknown tap {tap!r}")
    extractor = copy.deepcopy(byol_state.backbone)
    freeze_module(extractor)
    shape = feature_shape(extractor.config, tap, input_hw)
    head = TransformerClassifier(head_config, shape, seed)
    return HybridModel(extractor, tap, head)


def scratch_transformer(head_config, in_shape, seed=0):
    """From-scratch transformer over raw images (no extractor)."""
    return TransformerClassifier(head_config, in_shape, seed)


def _forward(model, batch):
    if isinstance(model, TransformerClassifier):
        return model(Tensor(np.ascontiguousarray(batch)))
    return model(batch)


def _trainable(model):
    if hasattr(model, "trainable_parameters"):
        return model.trainable_parameters()
    return {n: p for n, p in model.named_parameters() if p.requires_grad}


def _augment_batch(images, spec, seed, epoch, indices):
    out = [aug_apply(spec, img, rng_for(seed, 52, epoch, int(i)))
           for img, i in zip(images, indices)]
    return np.stack(out).astype(np.float32, copy=False)


def stratified_split(dataset, val_fraction, seed):
    """Seeded stratified split; returns (train_idx, val_idx)."""
    rng = rng_for(seed, 50)
    train_idx, val_idx = [], []
    for c in sorted(set(dataset.labels.tolist())):
        idx = np.flatnonzero(dataset.labels == c)
        idx = idx[rng.permutation(len(idx))]
        n_val = int(round(val_fraction * len(idx)))
        val_idx.append(idx[:n_val])
        train_idx.append(idx[n_val:])
    return (np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(val_idx)))


def evaluate(model, dataset, batch_size=256, view=None):
    """(top1, mean cross-entropy). Pure: no parameter or rng mutation."""
    was_training = getattr(model, "training", False)
    model.eval()
    n = len(dataset)
    correct = 0
    loss_sum = 0.0
    for lo in range(0, n, batch_size):
        batch = dataset.images[lo : lo + batch_size]
        labels = dataset.labels[lo : lo + batch_size]
        if view is not None and view.transforms:
            dummy = rng_for(0, 0)
            batch = np.stack([aug_apply(view, img, dummy) for img in batch])
        logits = _forward(model, batch).data
        pred = logits.argmax(axis=1)  # ties break to the lowest class index
        correct += int((pred == labels).sum())
        shifted = logits - logits.max(axis=1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        loss_sum += float(-logp[np.arange(len(labels)), labels].sum())
    if was_training:
        model.train()
    return correct / n, loss_sum / n


def finetune(model, dataset, hp, out_dir=None, resume=None):
    """Cross-entropy fine-tune with per-epoch train/val metrics.

    Returns MetricsHistory rows; the best-val-top1 model state is retained
    (written to out_dir when given, kept on `model.best_state` otherwise).
    """
    global STEP_COUNTER
    if dataset.labels is None:
        raise ValueError("labeled dataset required")
    params = _trainable(model)
    opt = AdamW(params, lr=hp.lr, weight_decay=hp.weight_decay)
    rows = []
    start_epoch = 0
    best = {"top1": -1.0, "state": None}
    if resume is not None:
        meta, tensors = ckpt.load_checkpoint(resume)
        if meta["config_hash"] != _hp_hash(hp):
            raise ckpt.CheckpointError(
                f"checkpoint hp hash {meta['config_hash']} != expected {_hp_hash(hp)}"
            )
        model.load_state_dict({k[len("model."):]: v for k, v in tensors.items()
                               if k.startswith("model.")})
        opt.load_state_dict({k[len("opt."):]: v for k, v in tensors.items()
                             if k.startswith("opt.")})
        start_epoch = int(meta["epoch"])
        rows = list(meta["history"])
        best["top1"] = float(meta["best_top1"])
    train_idx, val_idx = stratified_split(dataset, hp.val_fraction, hp.seed)
    spec = build_pipeline(hp.aug_name)
    eval_spec = eval_view(spec)
    images, labels = dataset.images, dataset.labels
    n = len(train_idx)
    for epoch in range(start_epoch, hp.epochs):
        t0 = time.time()
        model.train()
        perm = train_idx[rng_for(hp.seed, 51, epoch).permutation(n)]
        correct = 0
        seen = 0
        loss_sum = 0.0
        for lo in range(0, n, hp.batch_size):
            idx = perm[lo : lo + hp.batch_size]
            if len(idx) == 0:
                continue
            batch = _augment_batch(images[idx], spec, hp.seed, epoch, idx)
            target = labels[idx]
            logits = _forward(model, batch)
            loss = ad.cross_entropy(logits, target, hp.label_smoothing)
            value = loss.item()
            if not math.isfinite(value):
                raise NonFiniteLossError(
                    f"non-finite fine-tune loss at epoch {epoch} offset {lo}",
                    batch_index=lo, seed=hp.seed,
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            STEP_COUNTER += 1
            correct += int((logits.data.argmax(axis=1) == target).sum())
            seen += len(idx)
            loss_sum += value * len(idx)
        wall = time.time() - t0
        rows.append({"epoch": epoch + 1, "split": "train", "top1": correct / max(seen, 1),
                     "loss": loss_sum / max(seen, 1), "lr": hp.lr, "wall_seconds": wall})
        if len(val_idx):
            from .data_io import Dataset

            val_ds = Dataset(images[val_idx], labels[val_idx], dataset.class_names, "val")
            vt0 = time.time()
            vtop1, vloss = evaluate(model, val_ds, view=eval_spec)
            rows.append({"epoch": epoch + 1, "split": "val", "top1": vtop1,
                         "loss": vloss, "lr": hp.lr, "wall_seconds": time.time() - vt0})
            if vtop1 > best["top1"]:
                best["top1"] = vtop1
                best["state"] = {k: v.copy() for k, v in model.state_dict().items()}
                if out_dir is not None:
                    _save_finetune(os.path.join(out_dir, "best.ckpt"), model, opt,
                                   epoch + 1, rows, hp, best["top1"])
        if out_dir is not None:
            _save_finetune(os.path.join(out_dir, "last.ckpt"), model, opt,
                           epoch + 1, rows, hp, best["top1"])
    model.best_state = best["state"]
    model.best_top1 = best["top1"]
    return rows


def _hp_hash(hp):
    return config_hash(asdict(hp))


def _save_finetune(path, model, opt, epoch, rows, hp, best_top1):
    meta = {"kind": "finetune", "config": asdict(hp), "config_hash": _hp_hash(hp),
            "epoch": epoch, "history": rows, "best_top1": best_top1}
    tensors = {f"model.{k}": v for k, v in model.state_dict().items()}
    tensors.update({f"opt.{k}": np.asarray(v) for k, v in opt.state_dict().items()})
    ckpt.save_checkpoint(path, meta, tensors)


def finetune_supervised_convnet(byol_state, tap, dataset, hp, n_classes=None,
                                backbone_config=None, out_dir=None, resume=None):
    """ConvNet fine-tune; tap=None trains from scratch (no transfer).

    With a tap, the stem..tap stages come frozen from the BYOL online
    backbone; later stages and the classifier train. The scratch baseline
    (tap=None) takes its architecture from byol_state when given, else from
    backbone_config.
    """
    n_classes = n_classes if n_classes is not None else dataset.n_classes
    if tap is None:
        if backbone_config is None:
            if byol_state is None:
                raise ValueError("scratch training needs byol_state or backbone_config")
            backbone_config = byol_state.config.backbone_config()
        backbone = Backbone(backbone_config, rng_for(hp.seed, 32))
    else:
        if byol_state is None:
            raise ValueError(f"tap {tap} requires a BYOL state to transfer from")
        backbone = copy.deepcopy(byol_state.backbone)
        freeze_through(backbone, tap)
    model = ConvNetClassifier(backbone, n_classes, hp.seed)
    rows = finetune(model, dataset, hp, out_dir=out_dir, resume=resume)
    return model, rows


def history_to_csv(rows, path=None):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_HEADER.split(","))
    for r in rows:
        writer.writerow([r["epoch"], r["split"], r["top1"], r["loss"], r["lr"],
                         r["wall_seconds"]])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w") as f:
            f.write(text)
    return text


def history_from_csv(path):
    rows = []
    with open(path) as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != METRICS_HEADER.split(","):
            raise ValueError(f"unexpected metrics header in {path}")
        for r in reader:
            rows.append({
                "epoch": int(r["epoch"]), "split": r["split"],
                "top1": float(r["top1"]) if r["top1"] != "" else "",
                "loss": float(r["loss"]), "lr": float(r["lr"]),
                "wall_seconds": float(r["wall_seconds"]),
            })
    return rows
