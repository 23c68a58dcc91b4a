"""Synthetic hazy/clear pair generation and dataset handling.

Haze follows the atmospheric scattering model I = J*t + A*(1-t) with a
smooth low-frequency transmission field t and a per-image airlight A.
Clear sources are procedural textures so no dataset download is needed;
a directory of PNG pairs (`<root>/input/*.png`, `<root>/gt/*.png`) can be
used instead.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

T_FLOOR = 0.05


@dataclass
class HazeParams:
    airlight: float               # scalar in [0.7, 1.0]
    transmission: np.ndarray      # [H, W] in (T_FLOOR, 1.0]


def bilinear_resize(img, h, w):
    """Bilinear upsampling of a 2D array to (h, w), corner-aligned."""
    img = np.asarray(img, dtype=np.float64)
    sh, sw = img.shape
    ys = np.linspace(0, sh - 1, h)
    xs = np.linspace(0, sw - 1, w)
    y0 = np.clip(np.floor(ys).astype(int), 0, sh - 2) if sh > 1 else np.zeros(h, int)
    x0 = np.clip(np.floor(xs).astype(int), 0, sw - 2) if sw > 1 else np.zeros(w, int)
    fy = (ys - y0) if sh > 1 else np.zeros(h)
    fx = (xs - x0) if sw > 1 else np.zeros(w)
    y1 = np.minimum(y0 + 1, sh - 1)
    x1 = np.minimum(x0 + 1, sw - 1)
    top = img[np.ix_(y0, x0)] * (1 - fx) + img[np.ix_(y0, x1)] * fx
    bot = img[np.ix_(y1, x0)] * (1 - fx) + img[np.ix_(y1, x1)] * fx
    return top * (1 - fy)[:, None] + bot * fy[:, None]


def make_transmission(rng, h, w, grid=4, strength=0.6):
    """Smooth transmission field from a bilinearly upsampled coarse grid.

    `strength` in [0, 1] controls how dense the haze may get (min t).
    """
    t_min = max(T_FLOOR, 1.0 - strength)
    coarse = rng.uniform(t_min, 1.0, size=(grid, grid))
    t = bilinear_resize(coarse, h, w)
    return np.clip(t, T_FLOOR, 1.0)


def make_haze_params(rng, h, w, grid=4, strength=0.6) -> HazeParams:
    return HazeParams(
        airlight=float(rng.uniform(0.7, 1.0)),
        transmission=make_transmission(rng, h, w, grid=grid, strength=strength),
    )


def synthesize_haze(clear, params: HazeParams):
    """Apply the scattering model to a [3, H, W] clear image in [0, 1]."""
    j = np.asarray(clear, dtype=np.float64)
    t = params.transmission[None]
    hazy = j * t + params.airlight * (1.0 - t)
    return np.clip(hazy, 0.0, 1.0)


def _checkerboard(rng, h, w):
    cell = int(rng.integers(4, 17))
    yy, xx = np.mgrid[0:h, 0:w]
    mask = ((yy // cell + xx // cell) % 2).astype(np.float64)
    lo, hi = np.sort(rng.uniform(0, 1, size=(2, 3)), axis=0)
    return lo[:, None, None] * (1 - mask) + hi[:, None, None] * mask


def _gradient(rng, h, w):
    ang = rng.uniform(0, 2 * np.pi)
    yy, xx = np.mgrid[0:h, 0:w]
    ramp = (np.cos(ang) * xx / max(w - 1, 1) + np.sin(ang) * yy / max(h - 1, 1))
    ramp = (ramp - ramp.min()) / max(np.ptp(ramp), 1e-9)
    c0, c1 = rng.uniform(0, 1, size=(2, 3))
    return c0[:, None, None] * (1 - ramp) + c1[:, None, None] * ramp


def _band_noise(rng, h, w):
    grid = int(rng.integers(4, 13))
    img = np.stack([bilinear_resize(rng.uniform(0, 1, (grid, grid)), h, w) for _ in range(3)])
    return np.clip(img, 0.0, 1.0)


def _blobs(rng, h, w):
    img = np.zeros((3, h, w))
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(int(rng.integers(3, 8))):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        r = rng.uniform(min(h, w) * 0.1, min(h, w) * 0.4)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r**2))
        img += rng.uniform(0, 1, 3)[:, None, None] * blob
    return np.clip(img / max(img.max(), 1e-9), 0.0, 1.0)


_GENERATORS = (_checkerboard, _gradient, _band_noise, _blobs)


def random_clear_image(rng, h, w):
    """A procedural [3, H, W] texture in [0, 1]."""
    gen = _GENERATORS[int(rng.integers(len(_GENERATORS)))]
    return gen(rng, h, w)


def make_pairs(n, h, w, seed, strength=0.6):
    """n aligned (hazy, clear) image pairs, each derived from (seed, index)."""
    pairs = []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        clear = random_clear_image(rng, h, w)
        hazy = synthesize_haze(clear, make_haze_params(rng, h, w, strength=strength))
        pairs.append((hazy.astype(np.float32), clear.astype(np.float32)))
    return pairs


def sample_patches(pairs, patch, n, seed):
    """n aligned random crops; identical windows on both pair members."""
    if patch % 4 != 0:
        raise ValueError("patch size must be divisible by 4")
    rng = np.random.default_rng(seed)
    hazy_out = np.empty((n, 3, patch, patch), dtype=np.float32)
    clear_out = np.empty_like(hazy_out)
    for i in range(n):
        hazy, clear = pairs[int(rng.integers(len(pairs)))]
        h, w = hazy.shape[1:]
        if patch > h or patch > w:
            raise ValueError(f"patch {patch} larger than image {h}x{w}")
        y = int(rng.integers(h - patch + 1))
        x = int(rng.integers(w - patch + 1))
        hazy_out[i] = hazy[:, y : y + patch, x : x + patch]
        clear_out[i] = clear[:, y : y + patch, x : x + patch]
    return hazy_out, clear_out


# ---------------------------------------------------------------------------
# PNG I/O (8-bit RGB, linear map to [0, 1])


def read_png(path):
    img = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(img.transpose(2, 0, 1))


def write_png(path, img):
    arr = np.clip(np.asarray(img), 0.0, 1.0)
    arr = np.round(arr.transpose(1, 2, 0) * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def load_dataset_dir(root):
    """Aligned pairs from `<root>/input/*.png` and `<root>/gt/*.png`."""
    in_dir = os.path.join(root, "input")
    gt_dir = os.path.join(root, "gt")
    if not os.path.isdir(in_dir) or not os.path.isdir(gt_dir):
        raise FileNotFoundError(f"expected {in_dir} and {gt_dir}")
    pairs = []
    for name in sorted(os.listdir(in_dir)):
        if not name.lower().endswith(".png"):
            continue
        gt_path = os.path.join(gt_dir, name)
        if not os.path.isfile(gt_path):
            raise FileNotFoundError(f"missing ground truth for {name}")
        pairs.append((read_png(os.path.join(in_dir, name)), read_png(gt_path)))
    if not pairs:
        raise FileNotFoundError(f"no PNG pairs found under {root}")
    return pairs


def write_dataset_dir(root, pairs):
    os.makedirs(os.path.join(root, "input"), exist_ok=True)
    os.makedirs(os.path.join(root, "gt"), exist_ok=True)
    for i, (hazy, clear) in enumerate(pairs):
        write_png(os.path.join(root, "input", f"{i:04d}.png"), hazy)
        write_png(os.path.join(root, "gt", f"{i:04d}.png"), clear)
