"""Synthetic Dufaycolor scans (RGB + infrared) with known ground truth.

The generator exposes a linear scene through a screen map, records the
per-element transmittances (the ground truth), renders what an idealized
RGB+IR scanner would see, then applies configurable degradations: geometric
distortion, spatially varying Gaussian blur, and additive noise before 16-bit
quantization.  All randomness flows from one explicit seed.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import colorimetry as cm
from . import fileio
from . import reseau as rs
from .errors import ConfigError, ExtentMismatch

WHITE_LEVEL = 65535
DEFAULT_PIXELS_PER_UM = 0.157   # ~4000 PPI film scanner
DEFAULT_SUPERSAMPLE = 4

# 6x4 test chart: two smooth chromatic gradients against a receding blue
# base, spanning dark warm tones to bright cool ones.  Neighboring patches
# stay moderately separated so demosaic transition bands remain comparable
# between reconstruction routes.
DEFAULT_PALETTE = tuple(
    (0.15 + 0.70 * c / 5.0, 0.15 + 0.70 * r / 3.0,
     0.80 - 0.25 * (c / 5.0) - 0.25 * (r / 3.0))
    for r in range(4) for c in range(6)
)

# The same chart pulled 55% toward mid-gray: saturations typical of
# photographed scenes rather than of pure filter colors.
MUTED_PALETTE = tuple(tuple(0.45 * v + 0.275 for v in color)
                      for color in DEFAULT_PALETTE)


@dataclass(frozen=True)
class DegradationSpec:
    """Scan degradation model.

    ``affine`` maps destination (x, y) scan pixels to source sampling
    positions as ((a, b, tx), (c, d, ty)); None means identity.  Blur is an
    isotropic Gaussian whose sigma varies linearly from image center to
    corner.  Noise is additive Gaussian in normalized units, applied before
    quantization.
    """

    psf_sigma_px: float = 0.0
    psf_sigma_corner_px: float | None = None
    affine: tuple | None = None
    displacement_amplitude_px: float = 0.0
    displacement_cells: int = 4
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.psf_sigma_px < 0 or self.noise_sigma < 0:
            raise ConfigError("blur sigma and noise sigma must be >= 0")
        if self.psf_sigma_corner_px is not None and self.psf_sigma_corner_px < 0:
            raise ConfigError("corner sigma must be >= 0")
        if self.displacement_amplitude_px < 0 or self.displacement_cells < 2:
            raise ConfigError("displacement amplitude >= 0 and >= 2 control cells required")

    @property
    def identity_geometry(self) -> bool:
        return self.affine is None and self.displacement_amplitude_px == 0.0

    def to_dict(self) -> dict:
        return {
            "psf_sigma_px": self.psf_sigma_px,
            "psf_sigma_corner_px": self.psf_sigma_corner_px,
            "affine": None if self.affine is None else [list(r) for r in self.affine],
            "displacement_amplitude_px": self.displacement_amplitude_px,
            "displacement_cells": self.displacement_cells,
            "noise_sigma": self.noise_sigma,
        }

    @staticmethod
    def from_dict(d: dict) -> "DegradationSpec":
        aff = d.get("affine")
        return DegradationSpec(
            psf_sigma_px=float(d.get("psf_sigma_px", 0.0)),
            psf_sigma_corner_px=d.get("psf_sigma_corner_px"),
            affine=None if aff is None else tuple(tuple(r) for r in aff),
            displacement_amplitude_px=float(d.get("displacement_amplitude_px", 0.0)),
            displacement_cells=int(d.get("displacement_cells", 4)),
            noise_sigma=float(d.get("noise_sigma", 0.0)),
        )


class ScanImage:
    """Four co-registered linear 16-bit planes: R, G, B and infrared."""

    def __init__(self, channels: np.ndarray, pixels_per_um: float):
        ch = np.ascontiguousarray(channels)
        if ch.ndim != 3 or ch.shape[0] != 4 or ch.dtype != np.uint16:
            raise ValueError(f"expected (4, H, W) uint16 channels, got {ch.shape} {ch.dtype}")
        self.channels = ch
        self.pixels_per_um = float(pixels_per_um)

    @property
    def shape(self):
        return self.channels.shape[1:]

    r = property(lambda self: self.channels[0])
    g = property(lambda self: self.channels[1])
    b = property(lambda self: self.channels[2])
    ir = property(lambda self: self.channels[3])

    def rgb_float(self) -> np.ndarray:
        """(H, W, 3) view of the color planes scaled to [0, 1]."""
        return np.moveaxis(self.channels[:3], 0, -1).astype(np.float64) / WHITE_LEVEL

    def save(self, path, *, seed: int | None = None,
             degradation: DegradationSpec | None = None) -> None:
        """Write the TIFF (pages R, G, B, IR) and its JSON sidecar."""
        path = Path(path)
        fileio.write_tiff(path, self.channels)
        sidecar = {
            "pixels_per_um": self.pixels_per_um,
            "seed": seed,
            "degradation": (degradation or DegradationSpec()).to_dict(),
        }
        fileio.write_json(path.with_suffix(".json"), sidecar)

    @staticmethod
    def load(path) -> tuple["ScanImage", dict]:
        path = Path(path)
        data, _ = fileio.read_tiff(path)
        sidecar_path = path.with_suffix(".json")
        if not sidecar_path.exists():
            raise ConfigError(f"missing sidecar {sidecar_path}")
        sidecar = fileio.read_json(sidecar_path)
        return ScanImage(data.astype(np.uint16), float(sidecar["pixels_per_um"])), sidecar


@dataclass
class GroundTruth:
    """Per-element transmittances on the screen's cell grid.

    ``intensities[label, i, j]`` is the mean scene value behind the element of
    that label in cell (i, j); ``coverage`` counts contributing raster pixels
    (zero along the raster border where a cell is clipped).
    """

    intensities: np.ndarray
    coverage: np.ndarray
    screen: rs.ScreenMap
    cell_origin: tuple[int, int]

    def save(self, path_prefix) -> None:
        prefix = Path(path_prefix)
        g = self.screen.geometry
        fileio.write_json(prefix.with_suffix(".json"), {
            "cell_origin": list(self.cell_origin),
            "resolution_px_per_um": self.screen.resolution_px_per_um,
            "shape": list(self.screen.shape),
            "geometry": {
                "line_density_per_mm": g.line_density_per_mm,
                "print_angle_deg": g.print_angle_deg,
                "red_line_fraction": g.red_line_fraction,
                "green_blue_ratio": g.green_blue_ratio,
                "square_width_um": g.square_width_um,
            },
        })
        np.save(prefix.with_suffix(".npy"),
                np.stack([self.intensities, self.coverage.astype(np.float64)]))

    @staticmethod
    def load(path_prefix) -> "GroundTruth":
        prefix = Path(path_prefix)
        meta = fileio.read_json(prefix.with_suffix(".json"))
        arr = np.load(prefix.with_suffix(".npy"))
        geom = rs.ReseauGeometry(**meta["geometry"])
        ny, nx = meta["shape"]
        res = float(meta["resolution_px_per_um"])
        screen = rs.build_screen(geom, res, (nx / res, ny / res))
        return GroundTruth(arr[0], arr[1].astype(np.int64), screen,
                           tuple(meta["cell_origin"]))


def _cell_indices(screen: rs.ScreenMap):
    cu, cv = rs.grid_coordinates(screen.geometry, screen.resolution_px_per_um,
                                 screen.shape)
    return np.floor(cu).astype(np.int64), np.floor(cv).astype(np.int64)


def expose(scene: np.ndarray, screen: rs.ScreenMap) -> GroundTruth:
    """Average each scene channel over the footprint of each matching element.

    ``scene`` is a linear (H, W, 3) image in screen-primary space whose raster
    must cover the screen map's raster.
    """
    scene = np.asarray(scene, dtype=np.float64)
    ny, nx = screen.shape
    if scene.ndim != 3 or scene.shape[2] != 3 or scene.shape[0] < ny or scene.shape[1] < nx:
        raise ExtentMismatch(
            f"scene {scene.shape} does not cover screen raster {(ny, nx, 3)}")
    if scene.size and (scene.min() < -1e-9 or scene.max() > 1.0 + 1e-9):
        raise ValueError("scene values must lie in [0, 1]")
    scene = scene[:ny, :nx]

    cj, ci = _cell_indices(screen)
    i0, j0 = int(ci.min()), int(cj.min())
    ni = int(ci.max()) - i0 + 1
    nj = int(cj.max()) - j0 + 1
    labels = screen.labels

    flat = ((labels.astype(np.int64) * ni + (ci - i0)) * nj + (cj - j0)).ravel()
    size = 3 * ni * nj
    counts = np.bincount(flat, minlength=size)
    matching = np.take_along_axis(scene, labels[..., None].astype(np.intp), axis=2)[..., 0]
    sums = np.bincount(flat, weights=matching.ravel(), minlength=size)
    with np.errstate(invalid="ignore"):
        means = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
    return GroundTruth(means.reshape(3, ni, nj), counts.reshape(3, ni, nj),
                       screen, (i0, j0))


def checker_target(screen: rs.ScreenMap, patch_colors) -> np.ndarray:
    """Tile a list of linear RGB patches over the screen extent.

    The layout is the most-square factorization of the patch count with more
    columns than rows (24 patches become a 6x4 chart).
    """
    colors = np.asarray(patch_colors, dtype=np.float64).reshape(-1, 3)
    n = colors.shape[0]
    if n < 1:
        raise ConfigError("need at least one patch color")
    rows = int(np.floor(np.sqrt(n)))
    while n % rows:
        rows -= 1
    cols = n // rows
    ny, nx = screen.shape
    if ny == 0 or nx == 0:
        return np.zeros((ny, nx, 3))
    ri = np.minimum((np.arange(ny) * rows) // max(ny, 1), rows - 1)
    cij = np.minimum((np.arange(nx) * cols) // max(nx, 1), cols - 1)
    idx = ri[:, None] * cols + cij[None, :]
    return colors[idx]


def scanner_primary_rgb(primaries: rs.BalancedPrimaries) -> np.ndarray:
    """Idealized scanner response: one linear-RGB triple per element label.

    The balanced primaries are adapted from the balance target to D65 and
    projected through the sRGB matrix; the result is clipped to non-negative
    and normalized so the brightest component equals one (the scan white
    level at unit transmittance).
    """
    xyz = primaries.scaled_set().xyz_array()
    wp = cm.xyy_to_xyz(cm.XyY(primaries.target_whitepoint, 1.0))
    m = cm.XYZ_TO_SRGB @ cm.bradford_matrix(wp, cm.XYZ.from_array(cm.SRGB_WHITE_XYZ))
    rgb = np.maximum(xyz @ m.T, 0.0)
    peak = rgb.max()
    if peak <= 0:
        raise ConfigError("primaries render to an all-black scanner response")
    return rgb / peak


def sampling_coords(deg: DegradationSpec, shape: tuple[int, int],
                    seed: int) -> np.ndarray | None:
    """Source sampling positions (2, H, W) in (row, col) order, or None.

    This is the map used to warp the rendered film into the scan raster; the
    displacement component is reproducible from the degradation parameters
    and the seed alone.
    """
    if deg.identity_geometry:
        return None
    ny, nx = shape
    yy, xx = np.mgrid[0:ny, 0:nx].astype(np.float64)
    if deg.affine is not None:
        (a, b, tx), (c, d, ty) = deg.affine
        sx = a * xx + b * yy + tx
        sy = c * xx + d * yy + ty
    else:
        sx, sy = xx, yy
    if deg.displacement_amplitude_px > 0:
        rng = np.random.Generator(np.random.Philox(
            np.random.SeedSequence(seed).spawn(2)[0]))
        k = deg.displacement_cells
        ctrl = rng.uniform(-deg.displacement_amplitude_px,
                           deg.displacement_amplitude_px, size=(2, k, k))
        py = yy / max(ny - 1, 1) * (k - 1)
        px = xx / max(nx - 1, 1) * (k - 1)
        disp_y = ndimage.map_coordinates(ctrl[0], [py, px], order=3, mode="nearest")
        disp_x = ndimage.map_coordinates(ctrl[1], [py, px], order=3, mode="nearest")
        sy = sy + disp_y
        sx = sx + disp_x
    return np.stack([sy, sx])


def _radial_blend_blur(plane: np.ndarray, sigma_center: float,
                       sigma_corner: float) -> np.ndarray:
    """Blur varying linearly with radial distance from the image center."""
    if sigma_center == sigma_corner:
        return ndimage.gaussian_filter(plane, sigma_center) if sigma_center > 0 else plane
    ny, nx = plane.shape
    cy, cx = (ny - 1) / 2.0, (nx - 1) / 2.0
    yy, xx = np.mgrid[0:ny, 0:nx]
    r = np.hypot(yy - cy, xx - cx) / np.hypot(cy, cx)
    center = ndimage.gaussian_filter(plane, sigma_center) if sigma_center > 0 else plane
    corner = ndimage.gaussian_filter(plane, sigma_corner) if sigma_corner > 0 else plane
    return (1.0 - r) * center + r * corner


def render_scan(gt: GroundTruth, primaries: rs.BalancedPrimaries,
                deg: DegradationSpec = DegradationSpec(), seed: int = 0,
                supersample: int = DEFAULT_SUPERSAMPLE,
                scanner_rgb: np.ndarray | None = None) -> ScanImage:
    """Render the scanner's view of the exposed screen.

    The color planes carry each element's scanner color scaled by the
    element's recorded intensity; the infrared plane carries intensity only
    (the screen is transparent in infrared).  All four planes receive the
    same distortion and blur; noise is added before 16-bit quantization.
    """
    screen = gt.screen
    ny, nx = screen.shape
    if ny % supersample or nx % supersample:
        raise ConfigError(f"screen raster {screen.shape} not divisible by "
                          f"supersample factor {supersample}")
    response = scanner_primary_rgb(primaries) if scanner_rgb is None \
        else np.asarray(scanner_rgb, np.float64)

    cj, ci = _cell_indices(screen)
    i0, j0 = gt.cell_origin
    labels = screen.labels.astype(np.intp)
    intensity = gt.intensities[labels, ci - i0, cj - j0]

    planes = np.empty((4, ny // supersample, nx // supersample))
    ir_and_rgb = [intensity * response[labels, c] for c in range(3)]
    ir_and_rgb.append(intensity)
    for k, plane in enumerate(ir_and_rgb):
        planes[k] = plane.reshape(ny // supersample, supersample,
                                  nx // supersample, supersample).mean(axis=(1, 3))

    coords = sampling_coords(deg, planes.shape[1:], seed)
    if coords is not None:
        for k in range(4):
            planes[k] = ndimage.map_coordinates(planes[k], coords, order=3,
                                                mode="nearest")
    sigma_c = deg.psf_sigma_px
    sigma_k = deg.psf_sigma_corner_px if deg.psf_sigma_corner_px is not None else sigma_c
    if sigma_c > 0 or sigma_k > 0:
        for k in range(4):
            planes[k] = _radial_blend_blur(planes[k], sigma_c, sigma_k)
    if deg.noise_sigma > 0:
        rng = np.random.Generator(np.random.Philox(
            np.random.SeedSequence(seed).spawn(2)[1]))
        planes = planes + rng.normal(0.0, deg.noise_sigma, planes.shape)

    quantized = np.round(np.clip(planes, 0.0, 1.0) * WHITE_LEVEL).astype(np.uint16)
    return ScanImage(quantized, screen.resolution_px_per_um / supersample)


def generate(geometry: rs.ReseauGeometry, primaries: rs.BalancedPrimaries,
             size_px: tuple[int, int] = (512, 512),
             pixels_per_um: float = DEFAULT_PIXELS_PER_UM,
             patch_colors=DEFAULT_PALETTE,
             deg: DegradationSpec = DegradationSpec(), seed: int = 0,
             supersample: int = DEFAULT_SUPERSAMPLE):
    """Build screen, chart scene and scan in one call.

    Returns ``(scan, ground_truth, scene)`` where the scene raster is at the
    supersampled screen resolution.
    """
    width_px, height_px = size_px
    if width_px <= 0 or height_px <= 0:
        raise ConfigError(f"scan size {size_px} must be positive")
    res_ss = pixels_per_um * supersample
    extent = (width_px / pixels_per_um, height_px / pixels_per_um)
    screen = rs.build_screen(geometry, res_ss, extent)
    scene = checker_target(screen, patch_colors)
    gt = expose(scene, screen)
    scan = render_scan(gt, primaries, deg, seed, supersample)
    return scan, gt, scene
