"""Stochastic image transforms and named pipelines.

Every transform is a pure function of (descriptor params, image, rng state).
`apply` draws one uniform per descriptor to decide firing, then parameter
draws only if fired, so firing statistics are exactly binomial per
transform. Images are (3,H,W) float32 in [0,1] until a normalize step.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

KINDS = (
    "resized_crop", "color_jitter", "hflip", "grayscale", "gaussian_blur",
    "solarize", "cutout", "rotation", "normalize", "center_crop", "resize",
    "padded_crop",
)


@dataclass(frozen=True)
class TransformDescriptor:
    kind: str
    probability: float = 1.0
    params: tuple = ()  # sorted (key, value) pairs

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if not (0.0 <= self.probability <= 1.0):
            raise ValueError(f"probability {self.probability} outside [0,1]")

    @property
    def p(self):
        return dict(self.params)


def _t(kind, probability=1.0, **params):
    return TransformDescriptor(kind, probability, tuple(sorted(params.items())))


@dataclass(frozen=True)
class AugSpec:
    name: str
    transforms: tuple


def _jitter(strength_b, strength_c, strength_s, strength_h):
    return _t("color_jitter", 0.8, brightness=strength_b, contrast=strength_c,
              saturation=strength_s, hue=strength_h)


_BYOL_TAIL = (
    _t("hflip", 0.5),
    _t("grayscale", 0.2),
)
_NORM = _t("normalize", 1.0, mean=IMAGENET_MEAN, std=IMAGENET_STD)


def _byol_pipeline(head, jitter, blur_p, solarize, normalize):
    parts = list(head)
    parts.append(_t("resized_crop", 1.0, size=96, scale=(0.08, 1.0)))
    parts.append(jitter)
    parts.extend(_BYOL_TAIL)
    parts.append(_t("gaussian_blur", blur_p, sigma=(0.1, 2.0)))
    if solarize:
        parts.append(_t("solarize", 0.2, threshold=0.5))
    if normalize:
        parts.append(_NORM)
    return tuple(parts)


_PIPELINES = {
    "baseline": _byol_pipeline((), _jitter(0.8, 0.8, 0.8, 0.2), 0.2, False, True),
    "data_aug_1": _byol_pipeline((), _jitter(0.4, 0.4, 0.4, 0.1), 0.5, True, True),
    "data_aug_2": _byol_pipeline((_t("rotation", 1.0, degrees=15),),
                                 _jitter(0.4, 0.4, 0.4, 0.1), 0.5, True, True),
    "data_aug_3": _byol_pipeline((_t("cutout", 0.5, nb=1, length=8),),
                                 _jitter(0.4, 0.4, 0.4, 0.1), 0.5, True, True),
    "data_aug_4": _byol_pipeline(
        (_t("rotation", 1.0, degrees=15), _t("cutout", 0.5, nb=1, length=8)),
        _jitter(0.4, 0.4, 0.4, 0.1), 0.5, True, True),
    "data_aug_5": _byol_pipeline((), _jitter(0.4, 0.4, 0.4, 0.1), 0.5, True, False),
    "no_aug": (),
    "aug_0": (
        _t("resize", 1.0, size=96),
        _t("resized_crop", 1.0, size=96, scale=(0.05, 1.0)),
    ),
    "aug_1": (
        _t("resize", 1.0, size=96),
        _t("resized_crop", 1.0, size=96, scale=(0.05, 1.0)),
        _t("rotation", 1.0, degrees=15),
    ),
    "aug_2": (
        _t("resize", 1.0, size=96),
        _t("resized_crop", 1.0, size=96, scale=(0.05, 1.0)),
        _t("rotation", 1.0, degrees=15),
        _t("gaussian_blur", 0.2, sigma=(0.1, 2.0)),
    ),
    "aug_3": (
        _t("padded_crop", 1.0, size=96, pad=4),
        _t("hflip", 0.5),
    ),
    "aug_4": (
        _t("padded_crop", 1.0, size=96, pad=4),
        _t("hflip", 0.5),
        _t("gaussian_blur", 0.2, sigma=(0.1, 2.0)),
    ),
    "aug_5": (
        _t("padded_crop", 1.0, size=96, pad=4),
        _t("hflip", 0.5),
        _t("gaussian_blur", 0.2, sigma=(0.1, 2.0)),
        _t("rotation", 1.0, degrees=15),
    ),
}

PIPELINE_NAMES = tuple(_PIPELINES)


def build_pipeline(name):
    if name not in _PIPELINES:
        raise ValueError(
            f"unknown pipeline {name!r}; choose one of {', '.join(PIPELINE_NAMES)}"
        )
    return AugSpec(name, _PIPELINES[name])


def eval_view(spec):
    """Deterministic tail of a train pipeline: resize/center_crop/normalize only."""
    keep = tuple(t for t in spec.transforms if t.kind in ("resize", "center_crop", "normalize"))
    return AugSpec(spec.name + "[eval]", keep)


# ------------------------------------------------------------- transform ops


def _affine_resize(img, top, left, h, w, out_size):
    """Crop box (top,left,h,w) then bilinear-resize to out_size x out_size."""
    oh = ow = out_size
    sx = w / ow
    sy = h / oh
    m = np.array(
        [[sx, 0.0, left + 0.5 * sx - 0.5], [0.0, sy, top + 0.5 * sy - 0.5]],
        dtype=np.float64,
    )
    return kernels.bilinear_warp(img, m, oh, ow, 0.0)


def resize(img, size):
    return _affine_resize(img, 0, 0, img.shape[1], img.shape[2], size)


def center_crop(img, size):
    h, w = img.shape[1:]
    top = (h - size) // 2
    left = (w - size) // 2
    return np.ascontiguousarray(img[:, top : top + size, left : left + size])


def resized_crop(img, rng, size, scale, ratio=(3.0 / 4.0, 4.0 / 3.0)):
    h, w = img.shape[1:]
    area = h * w
    for _ in range(10):
        target = area * rng.uniform(scale[0], scale[1])
        log_r = rng.uniform(math.log(ratio[0]), math.log(ratio[1]))
        ar = math.exp(log_r)
        cw = int(round(math.sqrt(target * ar)))
        ch = int(round(math.sqrt(target / ar)))
        if 0 < cw <= w and 0 < ch <= h:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            return _affine_resize(img, top, left, ch, cw, size)
    side = min(h, w)
    return _affine_resize(img, (h - side) // 2, (w - side) // 2, side, side, size)


def hflip(img):
    return np.ascontiguousarray(img[:, :, ::-1])


def to_grayscale(img):
    luma = 0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2]
    return np.ascontiguousarray(np.broadcast_to(luma, img.shape)).astype(img.dtype)


def color_jitter(img, rng, brightness, contrast, saturation, hue):
    ops = rng.permutation(4)
    out = img
    for op in ops:
        if op == 0 and brightness > 0:
            f = rng.uniform(max(0.0, 1 - brightness), 1 + brightness)
            out = np.clip(out * f, 0.0, 1.0)
        elif op == 1 and contrast > 0:
            f = rng.uniform(max(0.0, 1 - contrast), 1 + contrast)
            m = (0.299 * out[0] + 0.587 * out[1] + 0.114 * out[2]).mean()
            out = np.clip((out - m) * f + m, 0.0, 1.0)
        elif op == 2 and saturation > 0:
            f = rng.uniform(max(0.0, 1 - saturation), 1 + saturation)
            g = 0.299 * out[0] + 0.587 * out[1] + 0.114 * out[2]
            out = np.clip((out - g) * f + g, 0.0, 1.0)
        elif op == 3 and hue > 0:
            shift = rng.uniform(-hue, hue)
            out = _shift_hue(out, shift)
    return out.astype(img.dtype, copy=False)


def _rgb_to_hsv(img):
    r, g, b = img[0], img[1], img[2]
    maxc = np.maximum(np.maximum(r, g), b)
    minc = np.minimum(np.minimum(r, g), b)
    v = maxc
    delta = maxc - minc
    s = np.where(maxc > 0, delta / np.maximum(maxc, 1e-12), 0.0)
    dz = np.maximum(delta, 1e-12)
    rc = (maxc - r) / dz
    gc = (maxc - g) / dz
    bc = (maxc - b) / dz
    h = np.where(maxc == r, bc - gc, np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(delta > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, v])


def _hsv_to_rgb(hsv):
    h, s, v = hsv[0], hsv[1], hsv[2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64) % 6
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b])


def _shift_hue(img, shift):
    hsv = _rgb_to_hsv(img.astype(np.float64))
    hsv[0] = (hsv[0] + shift) % 1.0
    return np.clip(_hsv_to_rgb(hsv), 0.0, 1.0).astype(img.dtype)


def gaussian_blur(img, rng, sigma_range):
    sigma = rng.uniform(sigma_range[0], sigma_range[1])
    k = int(0.1 * min(img.shape[1], img.shape[2]))
    k = max(3, k + (k + 1) % 2)  # odd, at least 3
    r = k // 2
    xs = np.arange(-r, r + 1, dtype=np.float64)
    k1 = np.exp(-(xs**2) / (2.0 * sigma**2))
    k1 /= k1.sum()
    return kernels.blur_separable(img, k1.astype(img.dtype))


def solarize(img, threshold=0.5):
    return np.where(img >= threshold, 1.0 - img, img).astype(img.dtype)


def cutout(img, rng, nb, length):
    out = img.copy()
    h, w = img.shape[1:]
    for _ in range(nb):
        cy = int(rng.integers(0, h))
        cx = int(rng.integers(0, w))
        y0, y1 = max(0, cy - length // 2), min(h, cy + (length + 1) // 2)
        x0, x1 = max(0, cx - length // 2), min(w, cx + (length + 1) // 2)
        out[:, y0:y1, x0:x1] = 0.0
    return out


def rotate(img, rng, degrees):
    angle = math.radians(rng.uniform(-degrees, degrees))
    h, w = img.shape[1:]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    cos, sin = math.cos(angle), math.sin(angle)
    # inverse map: rotate output coords by -angle about center
    m = np.array(
        [[cos, sin, cx - cos * cx - sin * cy], [-sin, cos, cy + sin * cx - cos * cy]],
        dtype=np.float64,
    )
    return kernels.bilinear_warp(img, m, h, w, 0.0)


def normalize(img, mean, std):
    mean = np.asarray(mean, dtype=img.dtype).reshape(3, 1, 1)
    std = np.asarray(std, dtype=img.dtype).reshape(3, 1, 1)
    return (img - mean) / std


def padded_crop(img, rng, size, pad):
    h, w = img.shape[1:]
    padded = np.pad(img, ((0, 0), (pad, pad), (pad, pad)))
    top = int(rng.integers(0, h + 2 * pad - size + 1))
    left = int(rng.integers(0, w + 2 * pad - size + 1))
    return np.ascontiguousarray(padded[:, top : top + size, left : left + size])


def _apply_one(t, img, rng):
    p = t.p
    if t.kind == "resized_crop":
        return resized_crop(img, rng, p["size"], p["scale"])
    if t.kind == "color_jitter":
        return color_jitter(img, rng, p["brightness"], p["contrast"], p["saturation"], p["hue"])
    if t.kind == "hflip":
        return hflip(img)
    if t.kind == "grayscale":
        return to_grayscale(img)
    if t.kind == "gaussian_blur":
        return gaussian_blur(img, rng, p["sigma"])
    if t.kind == "solarize":
        return solarize(img, p["threshold"])
    if t.kind == "cutout":
        return cutout(img, rng, p["nb"], p["length"])
    if t.kind == "rotation":
        return rotate(img, rng, p["degrees"])
    if t.kind == "normalize":
        return normalize(img, p["mean"], p["std"])
    if t.kind == "center_crop":
        return center_crop(img, p["size"])
    if t.kind == "resize":
        return resize(img, p["size"])
    if t.kind == "padded_crop":
        return padded_crop(img, rng, p["size"], p["pad"])
    raise AssertionError(t.kind)


def apply(spec, img, rng, record=None):
    """Run the pipeline; each descriptor fires iff its own uniform < probability."""
    out = img
    for t in spec.transforms:
        fired = bool(rng.uniform() < t.probability)
        if record is not None:
            record.append((t.kind, fired))
        if fired:
            out = _apply_one(t, out, rng)
    return out


def two_views(spec, img, rng):
    return apply(spec, img, rng), apply(spec, img, rng)
