"""Seeded image augmentation with two named policies.

The strong policy (contrastive pretraining) combines random resized crop,
rotation, horizontal flip and full color jitter; the weak policy
(supervised stages) keeps only mild brightness/contrast jitter and the
flip.  Transforms always apply in the fixed order crop, rotate, flip,
color, and every parameter is drawn from the supplied RngState in that
same order, so a policy with identity settings draws the same number of
variates as an active one.

Geometry uses bilinear interpolation with align-corners coordinate
mapping; rotation fills outside the source bounds with zero.  Hue shifts
are expressed as fractions of a full revolution in HSV space.  Each
component transform short-circuits at its identity parameter (factor 1,
angle 0, full-frame crop) so an all-identity policy returns the input
bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import RngState

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class EmptyImageError(ValueError):
    """Raised for images with a zero-sized dimension."""


@dataclass(frozen=True)
class AugmentationPolicy:
    """Jitter half-ranges plus geometric transform bounds.

    brightness/contrast/saturation of 0.4 means a factor drawn uniformly
    from [0.6, 1.4]; hue of 0.1 means a shift in [-0.1, 0.1] revolutions.
    """

    name: str
    brightness: float = 0.0
    contrast: float = 0.0
    saturation: float = 0.0
    hue: float = 0.0
    crop_scale_min: float = 1.0
    rotation_max: float = 0.0
    hflip_prob: float = 0.0

    def validate(self) -> None:
        for field in ("brightness", "contrast", "saturation", "hue"):
            v = getattr(self, field)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"policy {self.name!r}: {field} must be in [0, 1), got {v}")
        if not 0.0 < self.crop_scale_min <= 1.0:
            raise ValueError(
                f"policy {self.name!r}: crop_scale_min must be in (0, 1], got {self.crop_scale_min}"
            )
        if self.rotation_max < 0.0:
            raise ValueError(
                f"policy {self.name!r}: rotation_max must be nonnegative, got {self.rotation_max}"
            )
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise ValueError(
                f"policy {self.name!r}: hflip_prob must be in [0, 1], got {self.hflip_prob}"
            )


STRONG_POLICY = AugmentationPolicy(
    "strong",
    brightness=0.4,
    contrast=0.4,
    saturation=0.4,
    hue=0.1,
    crop_scale_min=0.6,
    rotation_max=30.0,
    hflip_prob=0.5,
)

WEAK_POLICY = AugmentationPolicy(
    "weak",
    brightness=0.2,
    contrast=0.2,
    hflip_prob=0.5,
)

POLICIES = {p.name: p for p in (STRONG_POLICY, WEAK_POLICY)}


def policy_by_name(name: str) -> AugmentationPolicy:
    try:
        return POLICIES[name]
    except KeyError:
        raise ValueError(f"unknown augmentation policy {name!r}, expected one of "
                         f"{sorted(POLICIES)}") from None


def _check_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 3:
        raise ValueError(f"expected a (C, H, W) image, got shape {image.shape}")
    if image.size == 0:
        raise EmptyImageError(f"empty image of shape {image.shape}")
    return image


def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize (C, H, W) -> (C, out_h, out_w) with align-corners bilinear."""
    image = _check_image(image)
    c, in_h, in_w = image.shape
    if out_h <= 0 or out_w <= 0:
        raise ValueError(f"target size must be positive, got {(out_h, out_w)}")
    if (in_h, in_w) == (out_h, out_w):
        return image.copy()
    ys = np.linspace(0.0, in_h - 1.0, out_h) if out_h > 1 else np.zeros(1)
    xs = np.linspace(0.0, in_w - 1.0, out_w) if out_w > 1 else np.zeros(1)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return _bilinear_sample(image, yy, xx)


def _bilinear_sample(image: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample (C, H, W) at float coordinates, clamped to the frame edges."""
    c, h, w = image.shape
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0).astype(np.float32)
    wx = (xs - x0).astype(np.float32)
    flat = image.reshape(c, h * w)
    tl = flat[:, (y0 * w + x0).ravel()]
    tr = flat[:, (y0 * w + x1).ravel()]
    bl = flat[:, (y1 * w + x0).ravel()]
    br = flat[:, (y1 * w + x1).ravel()]
    wxf = wx.ravel()
    wyf = wy.ravel()
    top = tl * (1.0 - wxf) + tr * wxf
    bot = bl * (1.0 - wxf) + br * wxf
    out = top * (1.0 - wyf) + bot * wyf
    return out.reshape((c,) + ys.shape).astype(np.float32)


def _warp_crop_rotate(
    image: np.ndarray,
    side_h: int,
    side_w: int,
    off_y: int,
    off_x: int,
    angle_deg: float,
) -> np.ndarray:
    """Crop-resize and rotation composed into one bilinear resampling.

    Destination pixels are rotated about the frame center by the inverse
    angle, mapped through the align-corners crop scaling, and sampled
    once; points whose rotated position leaves the frame become zero.
    """
    c, h, w = image.shape
    theta = np.deg2rad(angle_deg)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(
        np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij"
    )
    dy, dx = yy - cy, xx - cx
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    ry = cy + dy * cos_t - dx * sin_t
    rx = cx + dy * sin_t + dx * cos_t
    inside = (ry >= 0.0) & (ry <= h - 1.0) & (rx >= 0.0) & (rx <= w - 1.0)
    sy = off_y + (ry * (side_h - 1) / (h - 1) if h > 1 else ry * 0.0)
    sx = off_x + (rx * (side_w - 1) / (w - 1) if w > 1 else rx * 0.0)
    out = _bilinear_sample(image, sy, sx)
    out[:, ~inside] = 0.0
    return out


def _rgb_to_hsv(image: np.ndarray) -> np.ndarray:
    r, g, b = image[0], image[1], image[2]
    maxc = np.maximum(np.maximum(r, g), b)
    minc = np.minimum(np.minimum(r, g), b)
    delta = maxc - minc
    safe = np.where(delta == 0.0, 1.0, delta)
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = np.where(maxc == r, bc - gc, np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(delta == 0.0, 0.0, (h / 6.0) % 1.0)
    s = np.where(maxc == 0.0, 0.0, delta / np.where(maxc == 0.0, 1.0, maxc))
    return np.stack([h, s, maxc])


def _hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    """Inverse conversion via the k-offset form of the sextant formula."""
    h, s, v = hsv[0], hsv[1], hsv[2]

    def channel(n: float) -> np.ndarray:
        k = np.mod(n + h * 6.0, 6.0)
        return v - v * s * np.clip(np.minimum(k, 4.0 - k), 0.0, 1.0)

    return np.stack([channel(5.0), channel(3.0), channel(1.0)]).astype(np.float32)


def adjust_brightness(image: np.ndarray, factor: float) -> np.ndarray:
    if factor == 1.0:
        return image
    return np.clip(image * np.float32(factor), 0.0, 1.0)


def adjust_contrast(image: np.ndarray, factor: float) -> np.ndarray:
    if factor == 1.0:
        return image
    mean = np.float32(image.mean())
    return np.clip(mean + (image - mean) * np.float32(factor), 0.0, 1.0)


def adjust_saturation(image: np.ndarray, factor: float) -> np.ndarray:
    if factor == 1.0:
        return image
    wr, wg, wb = LUMA_WEIGHTS
    luma = (wr * image[0] + wg * image[1] + wb * image[2]).astype(np.float32)
    return np.clip(luma[None] + (image - luma[None]) * np.float32(factor), 0.0, 1.0)


def adjust_hue(image: np.ndarray, shift: float) -> np.ndarray:
    """Shift hue by `shift` revolutions in HSV space."""
    if shift == 0.0:
        return image
    hsv = _rgb_to_hsv(np.clip(image, 0.0, 1.0))
    hsv[0] = (hsv[0] + shift) % 1.0
    return np.clip(_hsv_to_rgb(hsv), 0.0, 1.0)


def augment(image: np.ndarray, policy: AugmentationPolicy, rng: RngState) -> np.ndarray:
    """Apply one random draw of the policy to a (C, H, W) image in [0, 1]."""
    policy.validate()
    image = _check_image(image)
    c, h, w = image.shape
    gen = rng.generator()

    # parameter draws, fixed order: crop, rotation, flip, color
    scale = float(gen.uniform(policy.crop_scale_min, 1.0))
    side_h = max(1, int(round(scale * h)))
    side_w = max(1, int(round(scale * w)))
    off_y = int(gen.integers(0, h - side_h + 1))
    off_x = int(gen.integers(0, w - side_w + 1))
    angle = float(gen.uniform(-policy.rotation_max, policy.rotation_max))
    flip = bool(gen.uniform(0.0, 1.0) < policy.hflip_prob)
    f_bright = float(gen.uniform(1.0 - policy.brightness, 1.0 + policy.brightness))
    f_contrast = float(gen.uniform(1.0 - policy.contrast, 1.0 + policy.contrast))
    f_sat = float(gen.uniform(1.0 - policy.saturation, 1.0 + policy.saturation))
    hue_shift = float(gen.uniform(-policy.hue, policy.hue))

    out = image
    if angle != 0.0:
        out = _warp_crop_rotate(out, side_h, side_w, off_y, off_x, angle)
    elif (side_h, side_w) != (h, w):
        out = bilinear_resize(out[:, off_y:off_y + side_h, off_x:off_x + side_w], h, w)
    if flip:
        out = out[:, :, ::-1]
    out = adjust_brightness(out, f_bright)
    out = adjust_contrast(out, f_contrast)
    out = adjust_saturation(out, f_sat)
    out = adjust_hue(out, hue_shift)
    return np.ascontiguousarray(out, dtype=np.float32)


def make_view_pair(image: np.ndarray, policy: AugmentationPolicy, rng: RngState):
    """Two independent augmented views of one image (distinct substreams)."""
    view_a = augment(image, policy, rng.substream("view", 0))
    view_b = augment(image, policy, rng.substream("view", 1))
    return view_a, view_b
