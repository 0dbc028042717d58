"""Layered synthetic stereograms with dense ground truth, and on-disk datasets.

A scene is a textured background plus ``n_layers`` fronto-parallel shapes,
each at its own integer disparity. Both views are rendered from the same
layered scene (larger disparity = nearer, drawn last), so every visible,
unoccluded left pixel reappears exactly ``d`` columns to the left in the
right view.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import codecs

EDGE_THRESHOLD = 0.5
TEXTURES = ("value-noise", "random-dot")


@dataclass
class StereoSample:
    left: np.ndarray          # [3, H, W] in [0, 1]
    right: np.ndarray         # [3, H, W] in [0, 1]
    gt_disparity: np.ndarray  # [1, H, W], pixels
    valid_mask: np.ndarray    # [1, H, W], bool
    gt_edges: np.ndarray      # [1, H, W], {0, 1}


def _box_blur(x: np.ndarray) -> np.ndarray:
    p = np.pad(x, ((0, 0), (1, 1), (1, 1)), mode="edge")
    h, w = x.shape[-2:]
    return sum(p[:, i:i + h, j:j + w] for i in range(3) for j in range(3)) / 9.0


def _texture(rng: np.random.Generator, h: int, w: int, kind: str) -> np.ndarray:
    if kind == "value-noise":
        base = rng.uniform(0.25, 0.75, size=(3, 1, 1))
        noise = _box_blur(rng.uniform(0.0, 1.0, size=(3, h, w)))
        return np.clip(base + 2.5 * (noise - 0.5), 0.0, 1.0)
    if kind == "random-dot":
        dots = (rng.uniform(size=(1, h, w)) < 0.5).astype(np.float64)
        tint = rng.uniform(0.5, 1.0, size=(3, 1, 1))
        return dots * tint
    raise ValueError(f"unknown texture {kind!r}; choose from {TEXTURES}")


def _shape_mask(rng: np.random.Generator, h: int, w_ext: int, w_view: int) -> np.ndarray:
    cy = rng.uniform(0.15, 0.85) * h
    cx = rng.uniform(0.1, 0.9) * w_view
    ry = rng.uniform(0.15, 0.35) * h
    rx = rng.uniform(0.1, 0.3) * w_view
    yy, xx = np.mgrid[0:h, 0:w_ext] + 0.5
    if rng.uniform() < 0.5:
        return (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def disparity_edges(disp: np.ndarray, threshold: float = EDGE_THRESHOLD) -> np.ndarray:
    """1 where the forward-difference magnitude of ``disp`` exceeds ``threshold``."""
    d = np.asarray(disp, dtype=np.float64)
    gx = np.zeros_like(d)
    gy = np.zeros_like(d)
    gx[..., :, :-1] = d[..., :, 1:] - d[..., :, :-1]
    gy[..., :-1, :] = d[..., 1:, :] - d[..., :-1, :]
    return (np.hypot(gx, gy) > threshold).astype(np.float32)


def generate_stereogram(seed: int, height: int, width: int, d_max: int, n_layers: int,
                        texture: str = "value-noise", background_disp: int = 0) -> StereoSample:
    """Render one layered stereo pair; deterministic in ``seed``."""
    if height < 1 or width < 1:
        raise ValueError("image extents must be positive")
    if not 0 <= d_max < width / 4:
        raise ValueError(f"d_max={d_max} must be below width/4={width / 4:g}")
    if n_layers < 0:
        raise ValueError("n_layers must be non-negative")
    if not 0 <= background_disp <= d_max:
        raise ValueError("background disparity must lie in [0, d_max]")
    if n_layers > d_max - background_disp:
        raise ValueError(f"cannot place {n_layers} distinct integer disparities in "
                         f"({background_disp}, {d_max}]")
    if texture not in TEXTURES:
        raise ValueError(f"unknown texture {texture!r}; choose from {TEXTURES}")
    rng = np.random.default_rng(seed)
    w_ext = width + d_max
    layer_d = np.sort(rng.choice(np.arange(background_disp + 1, d_max + 1), size=n_layers,
                                 replace=False)) if n_layers else np.zeros(0, int)
    layers = [(int(background_disp), np.ones((height, w_ext), bool), _texture(rng, height, w_ext, texture))]
    for d in layer_d:
        layers.append((int(d), _shape_mask(rng, height, w_ext, width),
                       _texture(rng, height, w_ext, texture)))

    left = np.zeros((3, height, width))
    right = np.zeros((3, height, width))
    disp = np.zeros((height, width))
    owner_l = np.zeros((height, width), int)
    owner_r = np.zeros((height, width), int)
    for k, (d, mask, tex) in enumerate(layers):  # far to near
        ml = mask[:, :width]
        left[:, ml] = tex[:, :, :width][:, ml]
        disp[ml] = d
        owner_l[ml] = k
        mr = mask[:, d:d + width]
        right[:, mr] = tex[:, :, d:d + width][:, mr]
        owner_r[mr] = k

    xs = np.arange(width)[None, :] - disp.astype(int)
    inside = xs >= 0
    yi = np.arange(height)[:, None].repeat(width, 1)
    seen = np.zeros_like(inside)
    seen[inside] = owner_r[yi[inside], xs[inside]] == owner_l[inside]
    return StereoSample(
        left=left.astype(np.float32),
        right=right.astype(np.float32),
        gt_disparity=disp[None].astype(np.float32),
        valid_mask=seen[None],
        gt_edges=disparity_edges(disp)[None],
    )


def sample_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def generate_dataset(n: int, seed: int, height: int = 32, width: int = 64, d_max: int = 8,
                     max_layers: int = 3, texture: str = "value-noise",
                     random_background: bool = True) -> list[StereoSample]:
    """``n`` scenes with 1..max_layers layers and a random background disparity."""
    samples = []
    for i in range(n):
        s = sample_seed(seed, i)
        rng = np.random.default_rng(s)
        bg = int(rng.integers(0, d_max // 2 + 1)) if random_background else 0
        layers = int(rng.integers(1, min(max_layers, d_max - bg) + 1)) if d_max > bg else 0
        samples.append(generate_stereogram(s, height, width, d_max, layers, texture, bg))
    return samples


@dataclass
class StereoBatch:
    left: np.ndarray
    right: np.ndarray
    gt: np.ndarray
    valid: np.ndarray
    edges: np.ndarray

    @classmethod
    def stack(cls, samples: list[StereoSample]) -> "StereoBatch":
        return cls(
            np.stack([s.left for s in samples]),
            np.stack([s.right for s in samples]),
            np.stack([s.gt_disparity for s in samples]),
            np.stack([s.valid_mask for s in samples]),
            np.stack([s.gt_edges for s in samples]),
        )


# -- on-disk layout ---------------------------------------------------------

MANIFEST = "manifest.json"


def save_dataset(out_dir, samples: list[StereoSample], meta: dict | None = None) -> Path:
    """Write images as PNG, disparity as PFM, masks/edges as PNG plus a manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, s in enumerate(samples):
        sid = f"{i:05d}"
        files = {
            "id": sid,
            "left": f"{sid}_left.png",
            "right": f"{sid}_right.png",
            "disparity": f"{sid}_disp.pfm",
            "valid": f"{sid}_valid.png",
            "edges": f"{sid}_edges.png",
        }
        codecs.write_rgb(out / files["left"], s.left)
        codecs.write_rgb(out / files["right"], s.right)
        codecs.pfm_write(out / files["disparity"], s.gt_disparity[0])
        codecs.write_gray(out / files["valid"], s.valid_mask[0].astype(np.float32))
        codecs.write_gray(out / files["edges"], s.gt_edges[0])
        entries.append(files)
    manifest = {"format": "edgestereo-dataset", "version": 1, "meta": meta or {},
                "samples": entries}
    path = out / MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_manifest(path) -> tuple[Path, list[dict]]:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST
    manifest = json.loads(path.read_text())
    if manifest.get("format") != "edgestereo-dataset":
        raise ValueError(f"{os.fspath(path)} is not a dataset manifest")
    return path.parent, manifest["samples"]


def load_dataset(path) -> list[StereoSample]:
    root, entries = load_manifest(path)
    samples = []
    for e in entries:
        samples.append(StereoSample(
            left=codecs.read_rgb(root / e["left"]),
            right=codecs.read_rgb(root / e["right"]),
            gt_disparity=codecs.pfm_read(root / e["disparity"])[None],
            valid_mask=(codecs.read_gray(root / e["valid"]) > 0.5)[None],
            gt_edges=(codecs.read_gray(root / e["edges"]) > 0.5).astype(np.float32)[None],
        ))
    return samples
