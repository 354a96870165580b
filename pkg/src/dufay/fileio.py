"""Deterministic file persistence: multi-page TIFF, JSON, PNG.

JSON is written with sorted keys and no timestamps so that fixed-seed runs
produce byte-identical files.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import tifffile
from PIL import Image


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")


def write_json(path, obj) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, default=_jsonable)
    Path(path).write_text(text + "\n", encoding="utf-8", newline="\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_tiff(path, pages: np.ndarray, description: str | None = None) -> None:
    """Write a (pages, H, W) or (H, W) array as a grayscale multi-page TIFF."""
    tifffile.imwrite(path, pages, photometric="minisblack",
                     description=description)


def read_tiff(path) -> tuple[np.ndarray, str | None]:
    with tifffile.TiffFile(path) as tif:
        data = tif.asarray()
        desc = tif.pages[0].description or None
    return data, desc


def write_xyz_tiff(path, xyz: np.ndarray) -> None:
    """Store an (H, W, 3) XYZ image as three float32 pages (X, Y, Z)."""
    arr = np.ascontiguousarray(np.moveaxis(np.asarray(xyz, np.float32), -1, 0))
    write_tiff(path, arr, description='{"colorspace": "XYZ", "planes": "XYZ"}')


def read_xyz_tiff(path) -> np.ndarray:
    data, _ = read_tiff(path)
    if data.ndim != 3 or data.shape[0] != 3:
        raise ValueError(f"{path}: expected 3 planes, got shape {data.shape}")
    return np.moveaxis(data.astype(np.float64), 0, -1)


def write_srgb16_tiff(path, srgb: np.ndarray) -> None:
    """Store an (H, W, 3) sRGB image in [0, 1] as 16-bit RGB TIFF."""
    arr = np.round(np.clip(srgb, 0.0, 1.0) * 65535.0).astype(np.uint16)
    tifffile.imwrite(path, arr, photometric="rgb")


def write_png8(path, rgb_uint8: np.ndarray) -> None:
    Image.fromarray(np.asarray(rgb_uint8, np.uint8), mode="RGB").save(path, format="PNG")
