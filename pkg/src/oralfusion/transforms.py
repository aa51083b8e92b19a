"""Pixel normalization and the random transform recipe.

All random transforms consume draws only from the generator they are
handed, so an identical (spec, image, rng state) triple always produces an
identical output. Images are RGB uint8 HxWx3 throughout; normalization to
float happens at batch assembly, after augmentation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import cv2
import numpy as np

from .dataset import IMAGE_SIZE
from .errors import ConfigError, InvalidImageError, PlanError

# Widely published large-corpus channel statistics; configuration defaults,
# echoed into every run manifest.
DEFAULT_CHANNEL_MEAN = (0.485, 0.456, 0.406)
DEFAULT_CHANNEL_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class NormalizationParams:
    mean: tuple[float, float, float] = DEFAULT_CHANNEL_MEAN
    std: tuple[float, float, float] = DEFAULT_CHANNEL_STD

    def __post_init__(self):
        if len(self.mean) != 3 or len(self.std) != 3:
            raise ConfigError("normalization mean/std must be 3-vectors")
        if any(s <= 0 for s in self.std):
            raise ConfigError(f"normalization std must be strictly positive, got {self.std}")


def scale_to_unit(image: np.ndarray) -> np.ndarray:
    """Map integer pixel values in [0, 255] to floats in [0, 1]."""
    arr = np.asarray(image)
    if arr.size == 0:
        raise InvalidImageError("empty image")
    if arr.min() < 0 or arr.max() > 255:
        raise InvalidImageError(
            f"pixel values outside [0, 255]: min={arr.min()}, max={arr.max()}"
        )
    return arr.astype(np.float32) / 255.0


def standardize(image: np.ndarray, params: NormalizationParams) -> np.ndarray:
    """Channel-wise (x - mean) / std on an already unit-scaled image."""
    if any(s <= 0 for s in params.std):
        raise ConfigError(f"std must be strictly positive, got {params.std}")
    arr = np.asarray(image, dtype=np.float32)
    mean = np.asarray(params.mean, dtype=np.float32)
    std = np.asarray(params.std, dtype=np.float32)
    return (arr - mean) / std


TRANSFORM_KINDS = (
    "h_flip",
    "v_flip",
    "rot90",
    "shift_scale_rotate",
    "brightness_contrast",
    "hue_saturation",
    "random_resized_crop",
    "gaussian_blur",
    "clahe",
    "coarse_dropout",
)

# Conventional magnitudes; none are dictated by the dataset.
DEFAULT_MAGNITUDES: dict[str, dict] = {
    "h_flip": {},
    "v_flip": {},
    "rot90": {},
    "shift_scale_rotate": {"shift_limit": 0.10, "scale_limit": 0.10, "rotate_limit": 30.0},
    "brightness_contrast": {"brightness_limit": 0.20, "contrast_limit": 0.20},
    "hue_saturation": {"hue_shift_limit": 10, "sat_shift_limit": 15},
    "random_resized_crop": {"scale": (0.7, 1.0), "ratio": (0.75, 4.0 / 3.0)},
    "gaussian_blur": {"kernel_range": (3, 7)},
    "clahe": {"clip_limit": 2.0, "tile_grid": (8, 8)},
    "coarse_dropout": {"max_holes": 8, "hole_height": 30, "hole_width": 30},
}


@dataclass(frozen=True)
class TransformSpec:
    kind: str
    probability: float = 0.5
    magnitude: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in TRANSFORM_KINDS:
            raise PlanError(f"unsupported transform kind '{self.kind}'")
        if not 0.0 <= self.probability <= 1.0:
            raise PlanError(
                f"{self.kind}: probability must be in [0, 1], got {self.probability}"
            )
        merged = dict(DEFAULT_MAGNITUDES[self.kind])
        unknown = set(self.magnitude) - set(merged)
        if unknown:
            raise PlanError(f"{self.kind}: unknown magnitude key(s) {sorted(unknown)}")
        merged.update(self.magnitude)
        object.__setattr__(self, "magnitude", merged)
        self._validate_magnitude()

    def _validate_magnitude(self):
        m = self.magnitude
        if self.kind == "random_resized_crop":
            lo, hi = m["scale"]
            if (lo, hi) != (0.7, 1.0):
                raise PlanError(
                    f"random_resized_crop scale range is fixed to (0.7, 1.0), got {(lo, hi)}"
                )
        elif self.kind == "coarse_dropout":
            if m["max_holes"] > 8:
                raise PlanError(f"coarse_dropout max_holes must be <= 8, got {m['max_holes']}")
            if m["hole_height"] > 30 or m["hole_width"] > 30:
                raise PlanError(
                    "coarse_dropout hole size must be <= 30x30, got "
                    f"{m['hole_height']}x{m['hole_width']}"
                )
        elif self.kind == "gaussian_blur":
            lo, hi = m["kernel_range"]
            if lo < 3 or hi < lo or lo % 2 == 0 or hi % 2 == 0:
                raise PlanError(f"gaussian_blur kernel_range must be odd and >= 3, got {(lo, hi)}")


def default_recipe() -> list[TransformSpec]:
    """The full transform list: geometric, photometric, crop, blur/contrast,
    occlusion. The crop is always applied since it doubles as the crop-to-224
    step; everything else fires at probability 0.5."""
    specs = []
    for kind in TRANSFORM_KINDS:
        p = 1.0 if kind == "random_resized_crop" else 0.5
        specs.append(TransformSpec(kind=kind, probability=p))
    return specs


def _check_input(image: np.ndarray) -> np.ndarray:
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise InvalidImageError(
            f"transforms expect uint8 HxWx3 images, got {arr.dtype} {arr.shape}"
        )
    return arr


def apply_transform(spec: TransformSpec, image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Apply one transform with its configured probability.

    The gate draw happens first; parameter draws only when the gate passes.
    Output is always uint8 HxWx3 at the model input size for crop kinds, and
    the input size otherwise.
    """
    arr = _check_input(image)
    if rng.uniform() >= spec.probability:
        # random_resized_crop at p<1 must still deliver the contract size
        if spec.kind == "random_resized_crop" and arr.shape[:2] != (IMAGE_SIZE, IMAGE_SIZE):
            return cv2.resize(arr, (IMAGE_SIZE, IMAGE_SIZE), interpolation=cv2.INTER_LINEAR)
        return arr.copy()
    return _TRANSFORM_FUNCS[spec.kind](arr, spec.magnitude, rng)


def apply_recipe(
    specs: list[TransformSpec], image: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    out = _check_input(image)
    for spec in specs:
        out = apply_transform(spec, out, rng)
    return np.ascontiguousarray(out)


def _t_h_flip(img, m, rng):
    return np.ascontiguousarray(np.flip(img, axis=1))


def _t_v_flip(img, m, rng):
    return np.ascontiguousarray(np.flip(img, axis=0))


def _t_rot90(img, m, rng):
    k = int(rng.integers(0, 4))
    return np.ascontiguousarray(np.rot90(img, k))


def _t_shift_scale_rotate(img, m, rng):
    h, w = img.shape[:2]
    angle = rng.uniform(-m["rotate_limit"], m["rotate_limit"])
    scale = 1.0 + rng.uniform(-m["scale_limit"], m["scale_limit"])
    dx = rng.uniform(-m["shift_limit"], m["shift_limit"])
    dy = rng.uniform(-m["shift_limit"], m["shift_limit"])
    matrix = cv2.getRotationMatrix2D((w / 2.0, h / 2.0), angle, scale)
    matrix[0, 2] += dx * w
    matrix[1, 2] += dy * h
    return cv2.warpAffine(
        img, matrix, (w, h), flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REFLECT_101
    )


def _t_brightness_contrast(img, m, rng):
    contrast = 1.0 + rng.uniform(-m["contrast_limit"], m["contrast_limit"])
    brightness = rng.uniform(-m["brightness_limit"], m["brightness_limit"]) * 255.0
    out = img.astype(np.float32) * contrast + brightness
    return np.clip(out, 0, 255).astype(np.uint8)


def _t_hue_saturation(img, m, rng):
    dh = int(rng.integers(-m["hue_shift_limit"], m["hue_shift_limit"] + 1))
    ds = int(rng.integers(-m["sat_shift_limit"], m["sat_shift_limit"] + 1))
    hsv = cv2.cvtColor(img, cv2.COLOR_RGB2HSV).astype(np.int16)
    hsv[..., 0] = (hsv[..., 0] + dh) % 180  # cv2 uint8 hue lives in [0, 179]
    hsv[..., 1] = np.clip(hsv[..., 1] + ds, 0, 255)
    return cv2.cvtColor(hsv.astype(np.uint8), cv2.COLOR_HSV2RGB)


def _t_random_resized_crop(img, m, rng):
    h, w = img.shape[:2]
    area_frac = rng.uniform(*m["scale"])
    log_lo, log_hi = math.log(m["ratio"][0]), math.log(m["ratio"][1])
    aspect = math.exp(rng.uniform(log_lo, log_hi))
    target_area = area_frac * h * w
    crop_w = min(w, max(1, int(round(math.sqrt(target_area * aspect)))))
    crop_h = min(h, max(1, int(round(math.sqrt(target_area / aspect)))))
    x0 = int(rng.integers(0, w - crop_w + 1))
    y0 = int(rng.integers(0, h - crop_h + 1))
    crop = img[y0:y0 + crop_h, x0:x0 + crop_w]
    return cv2.resize(crop, (IMAGE_SIZE, IMAGE_SIZE), interpolation=cv2.INTER_LINEAR)


def _t_gaussian_blur(img, m, rng):
    lo, hi = m["kernel_range"]
    k = int(rng.choice(np.arange(lo, hi + 1, 2)))
    return cv2.GaussianBlur(img, (k, k), 0)


def _t_clahe(img, m, rng):
    clahe = cv2.createCLAHE(clipLimit=m["clip_limit"], tileGridSize=tuple(m["tile_grid"]))
    lab = cv2.cvtColor(img, cv2.COLOR_RGB2LAB)
    lab[..., 0] = clahe.apply(lab[..., 0])
    return cv2.cvtColor(lab, cv2.COLOR_LAB2RGB)


def _t_coarse_dropout(img, m, rng):
    h, w = img.shape[:2]
    out = img.copy()
    n_holes = int(rng.integers(1, m["max_holes"] + 1))
    hole_h = min(m["hole_height"], h)
    hole_w = min(m["hole_width"], w)
    for _ in range(n_holes):
        y0 = int(rng.integers(0, h - hole_h + 1))
        x0 = int(rng.integers(0, w - hole_w + 1))
        out[y0:y0 + hole_h, x0:x0 + hole_w] = 0
    return out


_TRANSFORM_FUNCS = {
    "h_flip": _t_h_flip,
    "v_flip": _t_v_flip,
    "rot90": _t_rot90,
    "shift_scale_rotate": _t_shift_scale_rotate,
    "brightness_contrast": _t_brightness_contrast,
    "hue_saturation": _t_hue_saturation,
    "random_resized_crop": _t_random_resized_crop,
    "gaussian_blur": _t_gaussian_blur,
    "clahe": _t_clahe,
    "coarse_dropout": _t_coarse_dropout,
}
