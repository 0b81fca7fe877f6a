"""Config files (YAML), CLI override merging, stable hashing.

The resolved config is a nested dict validated against the per-section key
schema below; unknown keys are rejected by name. The hash is sha256 over a
canonical (sorted-keys) JSON dump, so key order never changes identity.
"""

import hashlib
import json

import yaml


class ConfigError(ValueError):
    pass


DATA_KEYS = {
    "source": str,          # synthetic | stl10
    "root": str,            # stl10 binary directory
    "split": str,           # train | test | unlabeled
    "n": int,               # synthetic image count
    "n_classes": int,
    "hw": int,
    "class_filter": list,
    "fraction": float,
    "seed": int,
}

PRETRAIN_KEYS = {
    "backbone": str,
    "width_multiplier": float,
    "proj_hidden": int,
    "proj_out": int,
    "alpha": float,
    "tau": float,
    "tau_ramp": bool,
    "lr": float,
    "weight_decay": float,
    "batch_size": int,
    "epochs": int,
    "aug": str,
    "save_every": int,
}

FINETUNE_KEYS = {
    "head": str,            # vit | cvt | cct | convnet
    "source": str,          # feature | raw
    "tap": str,
    "patch": int,
    "depth": int,
    "heads": int,
    "dim": int,
    "mlp_ratio": float,
    "conv_layers": int,
    "conv_kernel": int,
    "epochs": int,
    "batch_size": int,
    "lr": float,
    "weight_decay": float,
    "aug": str,
    "label_smoothing": float,
    "val_fraction": float,
    "checkpoint": str,      # byol checkpoint path (hybrid / convnet transfer)
    "freeze_tap": str,      # convnet transfer freeze point; "none" = scratch
}

SWEEP_KEYS = {
    "kind": str,
    "seeds": list,
    "axis": (list, dict),
}

SECTIONS = {
    "data": DATA_KEYS,
    "eval_data": DATA_KEYS,
    "pretrain": PRETRAIN_KEYS,
    "finetune": FINETUNE_KEYS,
    "sweep": SWEEP_KEYS,
}

TOP_KEYS = {"seed": int, "out": str, **{k: dict for k in SECTIONS}}


def validate_config(cfg):
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a mapping")
    for key, val in cfg.items():
        if key not in TOP_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        if key in SECTIONS:
            if not isinstance(val, dict):
                raise ConfigError(f"section {key!r} must be a mapping")
            schema = SECTIONS[key]
            for sub, sval in val.items():
                if sub not in schema:
                    raise ConfigError(f"unknown config key {key}.{sub!r}")
                want = schema[sub]
                want = want if isinstance(want, tuple) else (want,)
                if want == (float,):
                    want = (float, int)
                if not isinstance(sval, want) or isinstance(sval, bool) and bool not in want:
                    raise ConfigError(
                        f"config key {key}.{sub} expects {'/'.join(w.__name__ for w in want)},"
                        f" got {type(sval).__name__}"
                    )
    return cfg


def load_config(path):
    with open(path) as f:
        try:
            cfg = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: {e}") from e
    return validate_config(cfg)


def _parse_scalar(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg, pairs):
    """pairs: iterable of 'section.key=value' (or 'seed=3') strings."""
    out = json.loads(json.dumps(cfg))  # deep copy
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not key=value")
        key, _, value = pair.partition("=")
        parts = key.split(".")
        node = out
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} crosses a non-mapping key")
        node[parts[-1]] = _parse_scalar(value)
    return validate_config(out)


def config_hash(cfg):
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]


def dump_config(cfg, path):
    with open(path, "w") as f:
        yaml.safe_dump(cfg, f, sort_keys=True)
