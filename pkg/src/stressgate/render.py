"""300x300 PNG renderings of density (grayscale) and stress (jet) fields."""
from __future__ import annotations

import io
from functools import lru_cache
from importlib import resources

import numpy as np
from PIL import Image

from .fea import Mesh
from .stress import SOLID_THRESHOLD

IMAGE_SIZE = 300
BORDER = 6
WHITE = (255, 255, 255)


@lru_cache(maxsize=1)
def jet_lut() -> np.ndarray:
    text = resources.files("stressgate").joinpath("data/jet256.txt").read_text()
    rows = [line.split() for line in text.splitlines() if line and not line.startswith("#")]
    lut = np.array(rows, dtype=np.uint8)
    if lut.shape != (256, 3):
        raise RuntimeError("jet lookup table must have 256 RGB rows")
    return lut


def _plane(mesh: Mesh, values) -> np.ndarray:
    """(nx, ny) image plane; 3D fields use the max over depth."""
    grid = mesh.grid(values)
    return grid.max(axis=2) if mesh.ndim == 3 else grid


def _rasterize(plane_rgb: np.ndarray) -> np.ndarray:
    """Place an (nx, ny, 3) element-color grid into a white, aspect-preserving canvas."""
    nx, ny = plane_rgb.shape[:2]
    avail = IMAGE_SIZE - 2 * BORDER
    scale = avail / max(nx, ny)
    w, h = max(1, round(nx * scale)), max(1, round(ny * scale))
    ox, oy = (IMAGE_SIZE - w) // 2, (IMAGE_SIZE - h) // 2
    cols = np.minimum(nx - 1, (np.arange(w) * nx) // w)
    rows = ny - 1 - np.minimum(ny - 1, (np.arange(h) * ny) // h)
    canvas = np.full((IMAGE_SIZE, IMAGE_SIZE, 3), 255, dtype=np.uint8)
    canvas[oy:oy + h, ox:ox + w] = plane_rgb[cols[None, :], rows[:, None]]
    return canvas


def _encode(canvas: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(canvas, mode="RGB").save(buf, format="PNG", compress_level=6, optimize=False)
    return buf.getvalue()


def density_rgb(mesh: Mesh, densities) -> np.ndarray:
    gray = np.round(255 * (1 - np.clip(_plane(mesh, densities), 0, 1))).astype(np.uint8)
    return np.repeat(gray[..., None], 3, axis=-1)


def stress_colors(mesh: Mesh, sigma_vm, densities) -> np.ndarray:
    """Jet colors normalized to the solid-element maximum (global max if no solids)."""
    sigma = np.asarray(sigma_vm, dtype=float)
    solid = np.asarray(densities) > SOLID_THRESHOLD
    ref = sigma[solid].max() if solid.any() else sigma.max(initial=0.0)
    if not ref > 0:
        idx = np.zeros(sigma.shape, dtype=int)
    else:
        idx = np.round(255 * np.clip(sigma / ref, 0, 1)).astype(int)
    lut = jet_lut()
    if mesh.ndim == 3:
        idx = _plane(mesh, idx).ravel()
        return lut[idx].reshape(mesh.dims[0], mesh.dims[1], 3)
    return lut[idx].reshape(*mesh.dims, 3)


def render_field_png(field: str, mesh: Mesh, densities, stress=None) -> bytes:
    """Render ``field`` ("density" or "stress") as deterministic PNG bytes."""
    densities = np.asarray(densities, dtype=float).ravel()
    if densities.size == 0:
        raise ValueError("cannot render an empty field")
    if field == "density":
        rgb = density_rgb(mesh, densities)
    elif field == "stress":
        if stress is None:
            raise ValueError("stress rendering needs a stress field")
        sigma = getattr(stress, "sigma_vm", stress)
        rgb = stress_colors(mesh, sigma, densities)
    else:
        raise ValueError(f"unknown field {field!r}")
    return _encode(_rasterize(rgb))
