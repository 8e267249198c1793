"""Affine and morphological distortions for ink-polarity line images."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

MORPH_OPS = ("none", "erode", "dilate")


@dataclass(frozen=True)
class AugmentRanges:
    rotation: float = 3.0  # degrees, symmetric
    shear: float = 0.3
    translation: float = 5.0  # pixels, symmetric
    scale_min: float = 0.9
    scale_max: float = 1.1
    max_radius: int = 1


@dataclass(frozen=True)
class AugmentParams:
    rotation: float = 0.0
    shear: float = 0.0
    tx: float = 0.0
    ty: float = 0.0
    scale_x: float = 1.0
    scale_y: float = 1.0
    morph: str = "none"
    radius: int = 0

    def is_identity(self) -> bool:
        return (self.rotation == 0 and self.shear == 0 and self.tx == 0 and self.ty == 0
                and self.scale_x == 1 and self.scale_y == 1 and (self.morph == "none" or self.radius == 0))

    def affine_is_identity(self) -> bool:
        return (self.rotation == 0 and self.shear == 0 and self.tx == 0 and self.ty == 0
                and self.scale_x == 1 and self.scale_y == 1)

    def validate(self, ranges: AugmentRanges = AugmentRanges()) -> None:
        checks = [
            ("rotation", abs(self.rotation) <= ranges.rotation),
            ("shear", abs(self.shear) <= ranges.shear),
            ("tx", abs(self.tx) <= ranges.translation),
            ("ty", abs(self.ty) <= ranges.translation),
            ("scale_x", ranges.scale_min <= self.scale_x <= ranges.scale_max),
            ("scale_y", ranges.scale_min <= self.scale_y <= ranges.scale_max),
            ("morph", self.morph in MORPH_OPS),
            ("radius", isinstance(self.radius, (int, np.integer)) and 0 <= self.radius <= ranges.max_radius),
        ]
        bad = [name for name, ok in checks if not ok]
        if bad:
            raise ValueError(f"augmentation parameters out of range: {', '.join(bad)} in {self}")


def random_params(rng: np.random.Generator, ranges: AugmentRanges = AugmentRanges()) -> AugmentParams:
    morph = MORPH_OPS[int(rng.integers(len(MORPH_OPS)))]
    return AugmentParams(
        rotation=float(rng.uniform(-ranges.rotation, ranges.rotation)),
        shear=float(rng.uniform(-ranges.shear, ranges.shear)),
        tx=float(rng.uniform(-ranges.translation, ranges.translation)),
        ty=float(rng.uniform(-ranges.translation, ranges.translation)),
        scale_x=float(rng.uniform(ranges.scale_min, ranges.scale_max)),
        scale_y=float(rng.uniform(ranges.scale_min, ranges.scale_max)),
        morph=morph,
        radius=int(rng.integers(0, ranges.max_radius + 1)) if morph != "none" else 0,
    )


def affine_matrix(params: AugmentParams) -> np.ndarray:
    """Forward map in (row, col) coordinates about the image centre:
    rotation @ horizontal shear @ scale."""
    th = np.deg2rad(params.rotation)
    rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    shear = np.array([[1.0, 0.0], [params.shear, 1.0]])  # col += shear * row
    scale = np.diag([params.scale_y, params.scale_x])
    return rot @ shear @ scale


def augment(image: np.ndarray, params: AugmentParams, ranges: AugmentRanges = AugmentRanges()) -> np.ndarray:
    """Distort an ink-polarity [H, W] image; output keeps the input shape.

    Sampling is bilinear with background (0) fill, followed by optional
    erosion or dilation with a (2r+1)x(2r+1) square.
    """
    params.validate(ranges)
    out = np.array(image, dtype=np.float64, copy=True)
    if not params.affine_is_identity():
        fwd = affine_matrix(params)
        inv = np.linalg.inv(fwd)
        centre = (np.array(out.shape, dtype=np.float64) - 1.0) / 2.0
        shift = np.array([params.ty, params.tx])
        offset = centre - inv @ (centre + shift)
        out = ndimage.affine_transform(out, inv, offset=offset, order=1, mode="constant", cval=0.0)
    if params.morph != "none" and params.radius > 0:
        size = 2 * params.radius + 1
        op = ndimage.grey_dilation if params.morph == "dilate" else ndimage.grey_erosion
        out = op(out, size=(size, size), mode="constant", cval=0.0)
    return out


def random_augment(image: np.ndarray, rng: np.random.Generator,
                   ranges: AugmentRanges = AugmentRanges()) -> np.ndarray:
    return augment(image, random_params(rng, ranges), ranges)
