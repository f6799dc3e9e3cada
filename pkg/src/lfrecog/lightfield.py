"""Multi-view sub-aperture arrays: container I/O, vignetting masks,
synthetic scene generation, and shared crop + resize."""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import kernels


class ContainerError(Exception):
    """Raised on malformed or inconsistent SA containers."""


@dataclass
class MultiViewSAArray:
    """U×V grid of RGB sub-aperture views with a validity (vignetting) mask.

    ``views`` maps (u, v) to an H×W×3 uint8 image for every valid position;
    vignetted positions carry no pixel data and must never be read.
    """

    views_u: int
    views_v: int
    width: int
    height: int
    valid_mask: np.ndarray  # bool, shape (views_u, views_v)
    views: dict = field(default_factory=dict)
    image_id: str = ""

    def view(self, u, v):
        if not self.valid_mask[u, v]:
            raise ValueError(f"view ({u}, {v}) is vignetted")
        return self.views[(u, v)]

    def valid_positions(self):
        return [
            (u, v)
            for u in range(self.views_u)
            for v in range(self.views_v)
            if self.valid_mask[u, v]
        ]


@dataclass
class CropBox:
    left: int
    top: int
    width: int
    height: int

    def validate(self, view_w, view_h):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"crop box must have positive dims, got {self}")
        if (
            self.left < 0
            or self.top < 0
            or self.left + self.width > view_w
            or self.top + self.height > view_h
        ):
            raise ValueError(
                f"crop box {self} outside {view_w}x{view_h} view"
            )


@dataclass
class SyntheticSceneSpec:
    """Procedural scene: a smooth texture whose per-view translation encodes
    disparity, with optional per-image gaussian noise."""

    subject_seed: int
    base_pattern: int
    disparity_px_per_view: float
    noise_sigma: float = 0.0
    noise_seed: int = 0


def default_vignette_mask(views_u, views_v):
    """Validity mask marking the 3-cell corner L at each grid corner invalid.

    Grids smaller than 5×5 are fully valid.
    """
    if views_u < 1 or views_v < 1:
        raise ValueError("grid dims must be >= 1")
    mask = np.ones((views_u, views_v), dtype=bool)
    if views_u < 5 or views_v < 5:
        return mask
    for cu in (0, views_u - 1):
        for cv in (0, views_v - 1):
            du = 1 if cu == 0 else -1
            dv = 1 if cv == 0 else -1
            mask[cu, cv] = False
            mask[cu, cv + dv] = False
            mask[cu + du, cv] = False
    return mask


def save_sa_container(array, path):
    """Write the directory container: manifest.json plus one PNG per valid view."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "views_u": array.views_u,
        "views_v": array.views_v,
        "width": array.width,
        "height": array.height,
        "valid_mask": [int(b) for b in array.valid_mask.reshape(-1)],
        "image_id": array.image_id,
    }
    with open(path / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=0, sort_keys=True)
    for (u, v), img in sorted(array.views.items()):
        Image.fromarray(img, mode="RGB").save(path / f"sa_{u:02d}_{v:02d}.png")


def load_sa_container(path):
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.is_file():
        raise ContainerError(f"missing manifest.json in {path}")
    try:
        with open(mpath) as fh:
            manifest = json.load(fh)
        views_u = int(manifest["views_u"])
        views_v = int(manifest["views_v"])
        width = int(manifest["width"])
        height = int(manifest["height"])
        mask_flat = manifest["valid_mask"]
        image_id = manifest.get("image_id", "")
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise ContainerError(f"malformed manifest in {path}: {exc}") from exc
    if len(mask_flat) != views_u * views_v:
        raise ContainerError(
            f"valid_mask length {len(mask_flat)} != {views_u}x{views_v}"
        )
    mask = np.asarray(mask_flat, dtype=bool).reshape(views_u, views_v)
    views = {}
    for u in range(views_u):
        for v in range(views_v):
            if not mask[u, v]:
                continue
            fpath = path / f"sa_{u:02d}_{v:02d}.png"
            if not fpath.is_file():
                raise ContainerError(f"missing view file {fpath}")
            img = np.asarray(Image.open(fpath).convert("RGB"))
            if img.shape != (height, width, 3):
                raise ContainerError(
                    f"view {fpath} has shape {img.shape}, "
                    f"manifest declares {height}x{width}x3"
                )
            views[(u, v)] = img
    return MultiViewSAArray(
        views_u=views_u,
        views_v=views_v,
        width=width,
        height=height,
        valid_mask=mask,
        views=views,
        image_id=image_id,
    )


def _pattern_components(spec, channels=3, num_waves=8):
    # texture is a pure function of the pattern id so distinct subjects can
    # share a base pattern while differing in disparity
    rng = np.random.default_rng([spec.base_pattern, 0xA11CE])
    amps = rng.uniform(0.4, 1.0, size=(channels, num_waves))
    freqs = rng.uniform(0.05, 0.6, size=(channels, num_waves, 2))
    phases = rng.uniform(0.0, 2.0 * math.pi, size=(channels, num_waves))
    return amps, freqs, phases


def _render_pattern(amps, freqs, phases, ys, xs):
    """Evaluate the sinusoid mixture on a (ys × xs) grid, one image channel
    per component row; output in [0, 255] float."""
    channels, num_waves = amps.shape
    yy = ys[:, None]
    xx = xs[None, :]
    out = np.zeros((ys.size, xs.size, channels))
    for ch in range(channels):
        acc = np.zeros((ys.size, xs.size))
        for k in range(num_waves):
            acc += amps[ch, k] * np.sin(
                freqs[ch, k, 0] * yy + freqs[ch, k, 1] * xx + phases[ch, k]
            )
        total = amps[ch].sum()
        out[:, :, ch] = (acc / total + 1.0) * 127.5
    return out


def synth_lightfield(spec, views_u, views_v, width, height, valid_mask=None,
                     image_id=""):
    """Render a deterministic synthetic light field.

    The view at grid offset (du, dv) from the center samples the continuous
    base texture translated by (du·d, dv·d) pixels, so noise-free renders
    satisfy the exact translation property at integer disparities.
    """
    max_off = max(views_u, views_v) / 2.0
    if abs(spec.disparity_px_per_view) * max_off >= width / 4.0:
        raise ValueError(
            f"disparity {spec.disparity_px_per_view} too large for "
            f"{width}px views on a {views_u}x{views_v} grid"
        )
    if valid_mask is None:
        valid_mask = default_vignette_mask(views_u, views_v)
    amps, freqs, phases = _pattern_components(spec)
    cu, cv = views_u // 2, views_v // 2
    d = spec.disparity_px_per_view
    noise_rng = np.random.default_rng(
        [spec.subject_seed, spec.noise_seed, 0x5EED]
    )
    views = {}
    for u in range(views_u):
        for v in range(views_v):
            if not valid_mask[u, v]:
                continue
            ys = np.arange(height, dtype=np.float64) + (u - cu) * d
            xs = np.arange(width, dtype=np.float64) + (v - cv) * d
            img = _render_pattern(amps, freqs, phases, ys, xs)
            if spec.noise_sigma > 0:
                img = img + noise_rng.normal(0.0, spec.noise_sigma, img.shape)
            views[(u, v)] = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return MultiViewSAArray(
        views_u=views_u,
        views_v=views_v,
        width=width,
        height=height,
        valid_mask=valid_mask.copy(),
        views=views,
        image_id=image_id,
    )


def crop_and_resize(array, box, target_w, target_h):
    """Apply one shared crop box to every valid view, then bilinearly resize.

    Vignetted positions stay untouched.
    """
    if target_w < 1 or target_h < 1:
        raise ValueError("target dims must be >= 1")
    box.validate(array.width, array.height)
    out_views = {}
    for (u, v), img in array.views.items():
        cropped = img[
            box.top : box.top + box.height, box.left : box.left + box.width
        ].astype(np.float64)
        resized = kernels.bilinear_resize(cropped, target_h, target_w)
        out_views[(u, v)] = np.clip(np.rint(resized), 0, 255).astype(np.uint8)
    return MultiViewSAArray(
        views_u=array.views_u,
        views_v=array.views_v,
        width=target_w,
        height=target_h,
        valid_mask=array.valid_mask.copy(),
        views=out_views,
        image_id=array.image_id,
    )
