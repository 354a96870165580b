"""Reconstruction pipeline: from an RGB+IR scan to a colorimetric image.

Stages, in pipeline order:

1. :func:`register_grid` locates the screen lattice by frequency analysis of
   the color planes, fits an affine base map and refines a coarse residual
   displacement mesh from local pattern phases.
2. :func:`estimate_dot_spread` searches, per region, for the Gaussian blur
   radius whose simulated scan of the known pattern best matches the observed
   color contrast, and derives per-region element mixing matrices.
3. :func:`extract_intensities` averages the infrared plane over each mapped
   element footprint (edges down-weighted).
4. :func:`demosaic` interpolates the three element-intensity planes to the
   output raster with a Catmull-Rom bicubic kernel.
5. :func:`compensate_saturation` unmixes each pixel with the interpolated
   inverse of the local element-mixing matrix.
6. :func:`to_colorimetric` applies the primaries to produce XYZ, normalized
   so unit input maps to the screen mixture at luminance one.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import colorimetry as cm
from . import reseau as rs
from . import synth as sy
from .errors import InsufficientData, RegistrationFailed

logger = logging.getLogger(__name__)

# Peak magnitude over annulus median below which no pattern is declared.
MIN_PEAK_SNR = 8.0


# ---------------------------------------------------------------------------
# Grid model

@dataclass
class GridModel:
    """Affine lattice map plus a smooth residual displacement field.

    Cell coordinates (cu, cv) count one green+blue period along the lines and
    one line pitch across them; fractional parts select the element.  The
    forward map is ``px(c) = A @ (c - phi) + D`` with the displacement ``D``
    bilinearly interpolated from a coarse node mesh; the inverse subtracts
    ``D`` at the query position before applying ``K = A^-1``.
    """

    k_matrix: np.ndarray            # rows: wavevectors k_u, k_v (cycles/px)
    phi: np.ndarray                 # cell-coordinate offsets (phi_u, phi_v)
    geometry: rs.ReseauGeometry
    scan_shape: tuple[int, int]
    mesh_y: np.ndarray = field(default_factory=lambda: np.zeros(1))
    mesh_x: np.ndarray = field(default_factory=lambda: np.zeros(1))
    mesh_d: np.ndarray = field(default_factory=lambda: np.zeros((2, 1, 1)))
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.a_matrix = np.linalg.inv(self.k_matrix)
        if not self.jacobian_positive():
            raise RegistrationFailed("grid map is not orientation-preserving",
                                     {"det": float(np.linalg.det(self.a_matrix))})

    @property
    def periods_px(self) -> tuple[float, float]:
        """(along, across) lattice periods in scan pixels."""
        return (1.0 / float(np.hypot(*self.k_matrix[0])),
                1.0 / float(np.hypot(*self.k_matrix[1])))

    @property
    def angle_deg(self) -> float:
        """Direction of the red lines relative to the raster x axis."""
        kv = self.k_matrix[1]
        return float(np.degrees(np.arctan2(kv[1], kv[0]))) - 90.0

    def displacement_at(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Mesh displacement (2, ...) at scan positions, bilinear, edge-clamped."""
        if self.mesh_d.shape[1] < 2 or self.mesh_d.shape[2] < 2:
            return np.zeros((2,) + np.shape(x))
        fy = np.interp(y, self.mesh_y, np.arange(self.mesh_y.size))
        fx = np.interp(x, self.mesh_x, np.arange(self.mesh_x.size))
        out = np.empty((2,) + np.shape(x))
        for k in range(2):
            out[k] = ndimage.map_coordinates(self.mesh_d[k], [fy, fx],
                                             order=1, mode="nearest")
        return out

    def px_to_cell(self, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Continuous cell coordinates for scan positions (x = col, y = row)."""
        d = self.displacement_at(x, y)
        xs = x - d[0]
        ys = y - d[1]
        cu = self.k_matrix[0, 0] * xs + self.k_matrix[0, 1] * ys + self.phi[0]
        cv = self.k_matrix[1, 0] * xs + self.k_matrix[1, 1] * ys + self.phi[1]
        return cu, cv

    def cell_to_px(self, cu: np.ndarray, cv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        c = np.stack([np.asarray(cu, float) - self.phi[0],
                      np.asarray(cv, float) - self.phi[1]])
        base = np.tensordot(self.a_matrix, c, axes=(1, 0))
        d = self.displacement_at(base[0], base[1])
        return base[0] + d[0], base[1] + d[1]

    def label_offsets(self) -> np.ndarray:
        """(3, 2) intra-cell (cu, cv) element centers for red, green, blue."""
        g = self.geometry
        f_r, gs = g.red_line_fraction, g.green_share
        return np.array([
            [0.5, f_r / 2.0],
            [gs / 2.0, f_r + (1.0 - f_r) / 2.0],
            [(1.0 + gs) / 2.0, f_r + (1.0 - f_r) / 2.0],
        ])

    def jacobian_positive(self) -> bool:
        """Positive Jacobian determinant of the forward map on the mesh."""
        if np.linalg.det(self.a_matrix) <= 0:
            return False
        if self.mesh_d.shape[1] >= 2 and self.mesh_d.shape[2] >= 2:
            sy_ = np.gradient(self.mesh_y) if self.mesh_y.size > 1 else [1.0]
            gx = np.gradient(self.mesh_d[0], self.mesh_x, axis=1)
            gy = np.gradient(self.mesh_d[1], self.mesh_y, axis=0)
            gxy = np.gradient(self.mesh_d[0], self.mesh_y, axis=0)
            gyx = np.gradient(self.mesh_d[1], self.mesh_x, axis=1)
            det = (1.0 + gx) * (1.0 + gy) - gxy * gyx
            if np.any(det <= 0):
                return False
        return True


# ---------------------------------------------------------------------------
# Registration

def _hann2(shape):
    wy = np.hanning(shape[0])
    wx = np.hanning(shape[1])
    return wy[:, None] * wx[None, :]


def _zoom_dft(img: np.ndarray, xs: np.ndarray, ys: np.ndarray,
              kx: np.ndarray, ky: np.ndarray) -> np.ndarray:
    """Exact DFT of ``img`` at a small grid of 2-D frequencies (separable)."""
    ex = np.exp(-2j * np.pi * np.outer(xs, kx))
    ey = np.exp(-2j * np.pi * np.outer(ys, ky))
    return ey.T @ (img @ ex)


def _refine_peak(img, xs, ys, k0, bin_size):
    """Two zoom-DFT passes around k0; returns (k, complex amplitude)."""
    k = np.asarray(k0, float)
    for step in (0.1 * bin_size, 0.01 * bin_size):
        kxs = k[0] + step * np.arange(-5, 6)
        kys = k[1] + step * np.arange(-5, 6)
        z = _zoom_dft(img, xs, ys, kxs, kys)
        iy, ix = np.unravel_index(np.argmax(np.abs(z)), z.shape)
        k = np.array([kxs[ix], kys[iy]])
        amp = z[iy, ix]
    return k, amp


def _find_pattern_peak(img, xs, ys, f_expect, direction=None, cone_deg=30.0):
    """Strongest FFT peak in the annulus around the expected frequency.

    Returns (wavevector, complex amplitude, snr).  The wavevector is
    canonicalized to ky >= 0.
    """
    ny, nx = img.shape
    F = np.fft.fft2(img)
    fy = np.fft.fftfreq(ny)[:, None]
    fx = np.fft.fftfreq(nx)[None, :]
    fmag = np.hypot(fx, fy)
    mask = (fmag >= 0.72 * f_expect) & (fmag <= 1.32 * f_expect)
    mask &= (fy >= 0)  # one of each conjugate pair
    if direction is not None:
        ang = np.arctan2(fy, fx)
        d = np.mod(ang - direction + np.pi / 2, np.pi) - np.pi / 2
        mask &= np.abs(d) <= np.radians(cone_deg)
    mag = np.abs(F)
    vals = np.where(mask, mag, 0.0)
    if not np.any(mask):
        raise RegistrationFailed("empty frequency search annulus",
                                 {"f_expect": f_expect})
    idx = np.unravel_index(np.argmax(vals), vals.shape)
    peak = float(mag[idx])
    floor = float(np.median(mag[mask]))
    snr = peak / max(floor, 1e-12)
    k0 = np.array([fx[0, idx[1]], fy[idx[0], 0]])
    bin_size = 1.0 / max(ny, nx)
    k, amp = _refine_peak(img, xs, ys, k0, bin_size * 10)
    if k[1] < 0 or (k[1] == 0 and k[0] < 0):
        k = -k
        amp = np.conj(amp)
    return k, amp, snr


def _local_phase(img, xs, ys, k):
    """Complex amplitude of the single frequency k over a windowed tile."""
    ex = np.exp(-2j * np.pi * xs * k[0])
    ey = np.exp(-2j * np.pi * ys * k[1])
    return complex(ey @ (img @ ex))


def _fill_invalid(values: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Replace invalid entries by nearest valid values (grid metric)."""
    if valid.all():
        return values
    if not valid.any():
        return np.zeros_like(values)
    idx = ndimage.distance_transform_edt(~valid, return_distances=False,
                                         return_indices=True)
    return values[tuple(idx)]


def register_grid(scan: sy.ScanImage, geometry: rs.ReseauGeometry) -> GridModel:
    """Locate the screen lattice in a scan.

    Estimates the two lattice wavevectors from FFT peaks of the line- and
    square-contrast channels, anchors the element phases, then refines a
    coarse displacement mesh from local pattern phases; the linear trend of
    the mesh is absorbed back into the affine map.  Raises
    :class:`RegistrationFailed` when no sufficiently strong periodic pattern
    exists (peak SNR below {snr}).
    """
    ppu = scan.pixels_per_um
    p_u_px = geometry.pitch_along_um * ppu
    p_v_px = geometry.pitch_across_um * ppu
    if min(p_u_px, p_v_px) * min(geometry.red_line_fraction,
                                 1 - geometry.red_line_fraction) < 2.0:
        raise RegistrationFailed(
            f"scan resolution too low: {min(p_u_px, p_v_px):.2f} px/period",
            {"periods_px": (p_u_px, p_v_px)})
    rgb = scan.rgb_float()
    d_line = rgb[..., 0] - 0.5 * (rgb[..., 1] + rgb[..., 2])
    d_sq = rgb[..., 1] - rgb[..., 2]

    ny, nx = d_line.shape
    side = min(1024, 1 << int(np.log2(min(ny, nx))))
    y0 = (ny - side) // 2
    x0 = (nx - side) // 2
    win = _hann2((side, side))
    xs = x0 + np.arange(side)
    ys = y0 + np.arange(side)

    line_w = d_line[y0:y0 + side, x0:x0 + side] * win
    sq_w = d_sq[y0:y0 + side, x0:x0 + side] * win

    k_v, amp_v, snr_v = _find_pattern_peak(line_w, xs, ys, 1.0 / p_v_px)
    dir_u = np.arctan2(k_v[1], k_v[0]) + np.pi / 2.0
    k_u, amp_u, snr_u = _find_pattern_peak(sq_w, xs, ys, 1.0 / p_u_px,
                                           direction=dir_u)
    diagnostics = {
        "peak_snr": (float(snr_v), float(snr_u)),
        "expected_periods_px": (p_u_px, p_v_px),
        "found_periods_px": (float(1 / np.hypot(*k_u)), float(1 / np.hypot(*k_v))),
    }
    if min(snr_v, snr_u) < MIN_PEAK_SNR:
        raise RegistrationFailed(
            f"pattern peak SNR {min(snr_v, snr_u):.1f} below {MIN_PEAK_SNR}",
            diagnostics)

    if np.linalg.det(np.array([k_u, k_v])) < 0:
        k_u = -k_u
        amp_u = np.conj(amp_u)

    # Anchor phases so red stripes span cv in [0, f_r) and green squares span
    # cu in [0, green_share): the measured fundamental peaks at the element
    # centers, whose Fourier phase is -pi * width.
    f_r = geometry.red_line_fraction
    gs = geometry.green_share
    phi_v = (np.angle(amp_v) / (2 * np.pi) + f_r / 2.0) % 1.0
    phi_u = (np.angle(amp_u) / (2 * np.pi) + gs / 2.0) % 1.0
    K = np.array([k_u, k_v])
    phi = np.array([phi_u, phi_v])

    # Residual mesh from local phases.
    spacing = max(24, side // 16)
    tile = int(spacing * 1.75)
    node_y = np.arange(tile // 2, ny - tile // 2 + 1, spacing, dtype=float)
    node_x = np.arange(tile // 2, nx - tile // 2 + 1, spacing, dtype=float)
    if node_y.size < 2 or node_x.size < 2:
        node_y = np.array([ny / 2.0 - 1, ny / 2.0 + 1])
        node_x = np.array([nx / 2.0 - 1, nx / 2.0 + 1])
    A = np.linalg.inv(K)
    eps = np.zeros((2, node_y.size, node_x.size))
    conf = np.zeros((node_y.size, node_x.size), bool)
    tile_win = _hann2((tile, tile))
    floor_line = float(np.median(np.abs(line_w))) + 1e-9
    for iy, cyv in enumerate(node_y):
        for ix, cxv in enumerate(node_x):
            ty = int(cyv) - tile // 2
            tx = int(cxv) - tile // 2
            ty = min(max(ty, 0), ny - tile)
            tx = min(max(tx, 0), nx - tile)
            tys = ty + np.arange(tile)
            txs = tx + np.arange(tile)
            t_line = d_line[ty:ty + tile, tx:tx + tile] * tile_win
            t_sq = d_sq[ty:ty + tile, tx:tx + tile] * tile_win
            z_v = _local_phase(t_line, txs, tys, k_v)
            z_u = _local_phase(t_sq, txs, tys, k_u)
            amp_min = 0.02 * tile * tile * floor_line
            if abs(z_v) < amp_min or abs(z_u) < amp_min:
                continue
            dv = (np.angle(z_v) / (2 * np.pi) + f_r / 2.0 - phi_v + 0.5) % 1.0 - 0.5
            du = (np.angle(z_u) / (2 * np.pi) + gs / 2.0 - phi_u + 0.5) % 1.0 - 0.5
            eps[:, iy, ix] = (du, dv)
            conf[iy, ix] = True

    if conf.any():
        for kk in range(2):
            eps[kk] = _fill_invalid(eps[kk], conf)
    # Pattern shifted by +eps in cell coordinates sits at -A @ eps in pixels.
    disp = -np.tensordot(A, eps, axes=(1, 0))

    # Absorb the linear trend of the displacement field into the affine map.
    gy, gx = np.meshgrid(node_y, node_x, indexing="ij")
    basis = np.stack([gx.ravel(), gy.ravel(), np.ones(gx.size)], axis=1)
    coef, *_ = np.linalg.lstsq(basis, disp.reshape(2, -1).T, rcond=None)
    linear = (basis @ coef).T.reshape(disp.shape)
    residual = disp - linear
    # px_new(c) = px_old(c) + L(px_old(c)) with L(x) = G x + t.
    G = coef[:2].T
    t_lin = coef[2]
    M = np.eye(2) + G
    K_new = K @ np.linalg.inv(M)
    phi_new = phi - K_new @ t_lin
    mean_residual = float(np.mean(np.hypot(residual[0], residual[1])))
    diagnostics.update({
        "mean_residual_px": mean_residual,
        "mean_displacement_px": float(np.mean(np.hypot(disp[0], disp[1]))),
        "low_confidence_nodes": int((~conf).sum()),
        "nodes": (node_y.size, node_x.size),
    })
    model = GridModel(K_new, phi_new, geometry, (ny, nx),
                      mesh_y=node_y, mesh_x=node_x, mesh_d=residual,
                      diagnostics=diagnostics)
    logger.info("registered grid: angle %.2f deg, periods (%.3f, %.3f) px, "
                "residual %.3f px", model.angle_deg, *model.periods_px,
                mean_residual)
    return model


register_grid.__doc__ = register_grid.__doc__.format(snr=MIN_PEAK_SNR)


# ---------------------------------------------------------------------------
# Element footprints shared by extraction and mixing-matrix simulation

def _element_weights(frac_u, frac_v, geometry: rs.ReseauGeometry,
                     periods_px: tuple[float, float]):
    """Per-pixel (label, weight): interior weighting of element footprints.

    Weight is the product of per-axis tapers that are zero within a dead zone
    of ~0.75 px from the element boundary (where scan pixels mix neighboring
    elements) and ramp to full weight ~1 px further in.  Both margins shrink
    for elements too small to afford them.
    """
    f_r, gs = geometry.red_line_fraction, geometry.green_share
    labels = rs.labels_from_cell_fractions(frac_u, frac_v, geometry)
    p_u_px, p_v_px = periods_px

    def taper(t, a, b, period_px):
        half = (b - a) / 2.0 * period_px
        dead = min(0.75, 0.4 * half)
        ramp = min(1.0, 0.4 * half)
        dist = half - np.abs(t - (a + b) / 2.0) * period_px
        return np.clip((dist - dead) / ramp, 0.0, 1.0)

    w_red = taper(frac_v, 0.0, f_r, p_v_px) * taper(frac_u, 0.0, 1.0, p_u_px)
    w_band_v = taper(frac_v, f_r, 1.0, p_v_px)
    w_green = w_band_v * taper(frac_u, 0.0, gs, p_u_px)
    w_blue = w_band_v * taper(frac_u, gs, 1.0, p_u_px)
    weights = np.choose(labels, [w_red, w_green, w_blue])
    return labels, weights


@dataclass
class ElementIntensities:
    """Per-element intensity planes on the registered cell grid.

    ``values[label, i, j]`` is normalized to [0, 1] by the scan white level;
    ``missing`` marks elements without enough in-bounds footprint, whose
    values are infilled from neighbors.
    """

    values: np.ndarray
    missing: np.ndarray
    cell_origin: tuple[int, int]

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("element intensities must be finite")

    @property
    def shape(self):
        return self.values.shape[1:]


def _infill_missing(values: np.ndarray, missing: np.ndarray) -> np.ndarray:
    out = values.copy()
    for p in range(values.shape[0]):
        out[p] = _fill_invalid(out[p], ~missing[p])
    return out


def extract_intensities(ir_plane: np.ndarray, grid: GridModel,
                        white_level: float = sy.WHITE_LEVEL) -> ElementIntensities:
    """Weighted per-element averages of the infrared plane.

    Edge samples of each footprint are down-weighted; elements whose total
    footprint weight is too small (outside the scan, or clipped at its
    border) are marked missing and infilled from neighbors.
    """
    ir = np.asarray(ir_plane, dtype=np.float64) / white_level
    ny, nx = ir.shape
    yy, xx = np.mgrid[0:ny, 0:nx].astype(np.float64)
    cu, cv = grid.px_to_cell(xx, yy)
    cj = np.floor(cu).astype(np.int64)
    ci = np.floor(cv).astype(np.int64)
    labels, weights = _element_weights(cu - cj, cv - ci, grid.geometry,
                                       grid.periods_px)

    i0, j0 = int(ci.min()), int(cj.min())
    ni = int(ci.max()) - i0 + 1
    nj = int(cj.max()) - j0 + 1
    flat = ((labels.astype(np.int64) * ni + (ci - i0)) * nj + (cj - j0)).ravel()
    size = 3 * ni * nj
    wsum = np.bincount(flat, weights=weights.ravel(), minlength=size)
    vsum = np.bincount(flat, weights=(weights * ir).ravel(), minlength=size)

    wsum = wsum.reshape(3, ni, nj)
    vsum = vsum.reshape(3, ni, nj)
    # Clipped or out-of-bounds footprints collect far less weight than the
    # typical interior element of the same label.
    w_min = np.array([max(1e-6, 0.25 * np.median(w[w > 0])) if (w > 0).any()
                      else 1e-6 for w in wsum])
    missing = wsum <= w_min[:, None, None]
    with np.errstate(invalid="ignore"):
        values = np.where(missing, 0.0, vsum / np.maximum(wsum, 1e-12))
    values = _infill_missing(values, missing)
    return ElementIntensities(values, missing, (i0, j0))


# ---------------------------------------------------------------------------
# Dot spread

@dataclass
class DotSpread:
    """Per-region blur estimates and element mixing matrices.

    ``mixing[iy, ix]`` maps true local per-channel element intensities to the
    extracted ones; rows are the observed label, columns the source label,
    and each row sums to one.
    """

    region_y: np.ndarray
    region_x: np.ndarray
    sigma: np.ndarray
    mixing: np.ndarray
    low_confidence: np.ndarray

    def interpolated_sigma(self, x, y) -> np.ndarray:
        fy = np.interp(y, self.region_y, np.arange(self.region_y.size))
        fx = np.interp(x, self.region_x, np.arange(self.region_x.size))
        return ndimage.map_coordinates(self.sigma, [np.atleast_1d(fy),
                                                    np.atleast_1d(fx)],
                                       order=1, mode="nearest")


def identity_dot_spread(scan_shape) -> DotSpread:
    """A no-blur DotSpread (identity mixing everywhere)."""
    ny, nx = scan_shape
    eye = np.broadcast_to(np.eye(3), (2, 2, 3, 3)).copy()
    return DotSpread(np.array([0.0, ny - 1.0]), np.array([0.0, nx - 1.0]),
                     np.zeros((2, 2)), eye, np.zeros((2, 2), bool))


def mixing_matrix_for_sigma(sigma: float, grid: GridModel,
                            cells: int = 5, oversample: int = 4) -> np.ndarray:
    """Element mixing induced by a Gaussian PSF over the modeled pattern.

    Simulates the blur on an oversampled local patch of the screen and
    integrates each blurred label indicator over the extraction footprints of
    the central cells.  Rows sum to one by construction.
    """
    p_u_px, p_v_px = grid.periods_px
    # Work on an axis-aligned (u, v) patch; blur is isotropic so ignoring the
    # lattice orientation only neglects the small shear between the axes.
    w = int(round(cells * p_u_px * oversample))
    h = int(round(cells * p_v_px * oversample))
    uu = (np.arange(w) + 0.5) / (p_u_px * oversample)
    vv = (np.arange(h) + 0.5) / (p_v_px * oversample)
    cu = np.broadcast_to(uu[None, :], (h, w))
    cv = np.broadcast_to(vv[:, None], (h, w))
    cj = np.floor(cu).astype(int)
    ci = np.floor(cv).astype(int)
    labels, weights = _element_weights(cu - cj, cv - ci, grid.geometry,
                                       grid.periods_px)
    indicators = np.stack([(labels == k).astype(float) for k in range(3)])
    if sigma > 0:
        for k in range(3):
            indicators[k] = ndimage.gaussian_filter(indicators[k],
                                                    sigma * oversample,
                                                    mode="wrap")
    # Footprint weights of the central cell block (avoid patch borders).
    lo, hi = cells // 2, cells // 2 + 1
    central = ((ci >= lo) & (ci < hi) & (cj >= lo) & (cj < hi))
    m = np.empty((3, 3))
    for obs in range(3):
        wmask = np.where(central & (labels == obs), weights, 0.0)
        total = wmask.sum()
        for src in range(3):
            m[obs, src] = (wmask * indicators[src]).sum() / total
    return m / m.sum(axis=1, keepdims=True)


def _apertured_pattern(grid: GridModel, ys: slice, xsl: slice,
                       elements: "ElementIntensities",
                       oversample: int = 4) -> np.ndarray:
    """Per-label pattern planes integrated over each scan pixel's aperture.

    Point-sampled indicators would pretend a pixel sees only the element
    under its center; real pixels integrate over their footprint, which acts
    as a ~0.3 px box blur that must be part of the zero-sigma model.  Each
    label's indicator is weighted by the (piecewise-constant) per-element
    intensity so element-scale scene alternation is modeled sharply.
    """
    ny = ys.stop - ys.start
    nx = xsl.stop - xsl.start
    sub = (np.arange(oversample) + 0.5) / oversample - 0.5
    yy = (ys.start + np.arange(ny))[:, None] + sub[None, :]
    xx = (xsl.start + np.arange(nx))[:, None] + sub[None, :]
    yf = np.repeat(yy.ravel()[:, None], nx * oversample, axis=1)
    xf = np.repeat(xx.ravel()[None, :], ny * oversample, axis=0)
    cu, cv = grid.px_to_cell(xf, yf)
    cj = np.floor(cu).astype(np.int64)
    ci = np.floor(cv).astype(np.int64)
    labels = rs.labels_from_cell_fractions(cu - cj, cv - ci, grid.geometry)
    i0, j0 = elements.cell_origin
    vals = elements.values
    gi = np.clip(ci - i0, 0, vals.shape[1] - 1)
    gj = np.clip(cj - j0, 0, vals.shape[2] - 1)
    intensity = vals[labels.astype(np.intp), gi, gj]
    ind = np.stack([np.where(labels == k, intensity, 0.0) for k in range(3)])
    return ind.reshape(3, ny, oversample, nx, oversample).mean(axis=(2, 4))


def _region_sigma(rgb, grid, elements, bounds, margin, sigmas_coarse):
    """Best-fit blur sigma for one scan region, or None if degenerate."""
    ys, xsl, ys_m, xs_m = bounds
    trim_y = slice(ys.start - ys_m.start, ys.stop - ys_m.start)
    trim_x = slice(xsl.start - xs_m.start, xsl.stop - xs_m.start)

    regress = _apertured_pattern(grid, ys_m, xs_m, elements)
    obs = rgb[ys, xsl].reshape(-1, 3)
    if regress.sum() < 1e-6 or np.ptp(obs) < 1e-3:
        return None

    def misfit(s):
        sim = regress if s <= 0 else np.stack(
            [ndimage.gaussian_filter(r, s) for r in regress])
        sim = sim[:, trim_y, trim_x]
        x_mat = np.concatenate([sim.reshape(3, -1),
                                np.ones((1, obs.shape[0]))]).T
        resid = 0.0
        for c in range(3):
            coef, res, *_ = np.linalg.lstsq(x_mat, obs[:, c], rcond=None)
            r = res[0] if res.size else float(
                np.sum((obs[:, c] - x_mat @ coef) ** 2))
            resid += r
        return resid

    costs = np.array([misfit(s) for s in sigmas_coarse])
    best = int(np.argmin(costs))
    s_best = sigmas_coarse[best]
    if 0 < best < len(sigmas_coarse) - 1:
        # Parabolic refinement on the three bracketing samples.
        c0, c1, c2 = costs[best - 1:best + 2]
        denom = c0 - 2 * c1 + c2
        if denom > 1e-12:
            step = sigmas_coarse[1] - sigmas_coarse[0]
            s_best += step * 0.5 * (c0 - c2) / denom
    return max(0.0, float(s_best))


def estimate_dot_spread(scan: sy.ScanImage, grid: GridModel,
                        regions: tuple[int, int] = (4, 4),
                        sigma_max: float = 3.0, threads: int = 1) -> DotSpread:
    """Per-region PSF sigma by matching simulated to observed color contrast.

    For each region the modeled pattern (pixel-aperture label indicators
    weighted by preliminary per-element intensities) is blurred over a 1-D
    grid of sigmas; per-channel linear regression of the observed plane onto
    the blurred pattern gives the fit residual, and the sigma minimizing it
    wins.  Regions without usable contrast are marked low-confidence and
    filled from neighbors.
    """
    ny, nx = scan.shape
    ry, rx = regions
    edges_y = np.linspace(0, ny, ry + 1).astype(int)
    edges_x = np.linspace(0, nx, rx + 1).astype(int)
    centers_y = 0.5 * (edges_y[:-1] + edges_y[1:])
    centers_x = 0.5 * (edges_x[:-1] + edges_x[1:])

    rgb = scan.rgb_float()

    # Preliminary per-element intensities drive the pattern simulation; their
    # blur-mixed levels are uniform within a label and absorbed by the
    # per-label regression gains.
    elements = extract_intensities(scan.ir, grid)

    sigmas_coarse = np.arange(0.0, sigma_max + 1e-9, 0.25)
    sigma = np.zeros((ry, rx))
    low_conf = np.zeros((ry, rx), bool)

    # Simulate on margin-expanded tiles: the real blur ran over the whole
    # image, so blurring an isolated crop would get all tile borders wrong.
    margin = int(np.ceil(4.0 * sigma_max))
    tasks = []
    for iy in range(ry):
        for ix in range(rx):
            ys = slice(edges_y[iy], edges_y[iy + 1])
            xsl = slice(edges_x[ix], edges_x[ix + 1])
            ys_m = slice(max(0, ys.start - margin), min(ny, ys.stop + margin))
            xs_m = slice(max(0, xsl.start - margin), min(nx, xsl.stop + margin))
            tasks.append(((iy, ix), (ys, xsl, ys_m, xs_m)))

    def solve(task):
        return task[0], _region_sigma(rgb, grid, elements, task[1], margin,
                                      sigmas_coarse)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(solve, tasks))
    else:
        results = [solve(t) for t in tasks]
    for (iy, ix), value in results:
        if value is None:
            low_conf[iy, ix] = True
        else:
            sigma[iy, ix] = value

    sigma = _fill_invalid(sigma, ~low_conf)
    mixing = np.empty((ry, rx, 3, 3))
    cache: dict[float, np.ndarray] = {}
    for iy in range(ry):
        for ix in range(rx):
            key = round(float(sigma[iy, ix]), 3)
            if key not in cache:
                cache[key] = mixing_matrix_for_sigma(key, grid)
            mixing[iy, ix] = cache[key]
    return DotSpread(centers_y, centers_x, sigma, mixing, low_conf)


# ---------------------------------------------------------------------------
# Demosaic

def _catmull_rom_1d(t: np.ndarray) -> np.ndarray:
    """(4, N) tap weights of the a = -0.5 cubic kernel for fractional t."""
    t2 = t * t
    t3 = t2 * t
    return np.stack([
        -0.5 * t3 + t2 - 0.5 * t,
        1.5 * t3 - 2.5 * t2 + 1.0,
        -1.5 * t3 + 2.0 * t2 + 0.5 * t,
        0.5 * t3 - 0.5 * t2,
    ])


def _interp_plane(plane: np.ndarray, pi: np.ndarray, pj: np.ndarray) -> np.ndarray:
    """Catmull-Rom interpolation of a 2-D plane at fractional positions.

    Indices are clamped at the borders, so constants are reproduced exactly
    everywhere and ramps away from the borders.
    """
    ni, nj = plane.shape
    i0 = np.floor(pi).astype(np.int64)
    j0 = np.floor(pj).astype(np.int64)
    wi = _catmull_rom_1d(pi - i0)
    wj = _catmull_rom_1d(pj - j0)
    out = np.zeros(pi.shape)
    for a in range(4):
        ii = np.clip(i0 + a - 1, 0, ni - 1)
        row = np.zeros(pi.shape)
        for b in range(4):
            jj = np.clip(j0 + b - 1, 0, nj - 1)
            row += wj[b] * plane[ii, jj]
        out += wi[a] * row
    return out


def demosaic(elements: ElementIntensities, grid: GridModel,
             output_shape: tuple[int, int] | None = None) -> np.ndarray:
    """Interpolate the three element planes to a full-raster RGB image.

    Each channel's regular cell lattice is sampled at the output pixel's cell
    coordinate minus the channel's intra-cell element offset, with a
    Catmull-Rom bicubic kernel.
    """
    ni, nj = elements.shape
    if ni < 4 or nj < 4:
        raise InsufficientData(f"{ni}x{nj} elements; need at least 4x4")
    ny, nx = output_shape or grid.scan_shape
    yy, xx = np.mgrid[0:ny, 0:nx].astype(np.float64)
    cu, cv = grid.px_to_cell(xx, yy)
    i0, j0 = elements.cell_origin
    offsets = grid.label_offsets()
    out = np.empty((ny, nx, 3))
    for ch in range(3):
        pj = cu - offsets[ch, 0] - j0
        pi = cv - offsets[ch, 1] - i0
        out[..., ch] = _interp_plane(elements.values[ch], pi, pj)
    return out


# ---------------------------------------------------------------------------
# Saturation compensation

def compensate_saturation(img: np.ndarray, ds: DotSpread,
                          clamp_max: float = 1.5) -> tuple[np.ndarray, dict]:
    """Unmix each pixel with the inverse of the local element-mixing matrix.

    Matrices are inverted per region (ill-conditioned ones fall back to
    identity with a warning) and bilinearly interpolated between region
    centers.  Output is clamped to [0, clamp_max]; the clamp fraction is
    reported.
    """
    ry, rx = ds.sigma.shape
    inv = np.empty_like(ds.mixing)
    fallbacks = 0
    for iy in range(ry):
        for ix in range(rx):
            m = ds.mixing[iy, ix]
            if np.linalg.cond(m) >= 1e4:
                inv[iy, ix] = np.eye(3)
                fallbacks += 1
            else:
                inv[iy, ix] = np.linalg.inv(m)
    if fallbacks:
        logger.warning("%d ill-conditioned mixing matrices replaced by identity",
                       fallbacks)

    ny, nx = img.shape[:2]
    yy, xx = np.mgrid[0:ny, 0:nx].astype(np.float64)
    fy = np.interp(yy, ds.region_y, np.arange(ry))
    fx = np.interp(xx, ds.region_x, np.arange(rx))
    field_m = np.empty((ny, nx, 3, 3))
    for a in range(3):
        for b in range(3):
            field_m[..., a, b] = ndimage.map_coordinates(
                inv[..., a, b], [fy, fx], order=1, mode="nearest")
    out = np.einsum("hwab,hwb->hwa", field_m, img)
    clipped = int(np.count_nonzero((out < 0.0) | (out > clamp_max)))
    out = np.clip(out, 0.0, clamp_max)
    info = {"clamp_fraction": clipped / out.size if out.size else 0.0,
            "identity_fallbacks": fallbacks}
    return out, info


# ---------------------------------------------------------------------------
# Colorimetric conversion

@dataclass(frozen=True)
class ReconstructionParams:
    """Primaries, area fractions and illuminant context for the conversion."""

    primaries: rs.BalancedPrimaries | rs.PrimarySet
    fractions: rs.AreaFractions
    simulation_illuminant: cm.Illuminant
    exposure_normalization: bool = True
    saturation_compensation: bool = True
    chromatic_gain: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def primary_matrix(self) -> np.ndarray:
        """Columns are the balanced, area-weighted primary XYZs.

        With exposure normalization the unit input (1, 1, 1) maps to the
        screen mixture with luminance one.
        """
        pset = rs._as_primary_set(self.primaries)
        m = (self.fractions.as_array()[:, None] * pset.xyz_array()).T
        if self.exposure_normalization:
            mixture_y = float(m[1].sum())
            if mixture_y <= 0:
                raise ValueError("screen mixture has zero luminance")
            m = m / mixture_y
        return m


def to_colorimetric(img: np.ndarray, params: ReconstructionParams) -> np.ndarray:
    """Linear map from screen-primary RGB to an XYZ image."""
    m = params.primary_matrix()
    rgb = np.asarray(img, dtype=np.float64) * np.asarray(params.chromatic_gain)
    return rgb @ m.T


def to_srgb(xyz_img: np.ndarray, params: ReconstructionParams) -> tuple[np.ndarray, float]:
    """Render an XYZ image to sRGB, adapting from the simulation illuminant."""
    wp = params.simulation_illuminant.whitepoint_xyz()
    return cm.xyz_image_to_srgb(xyz_img, wp)


# ---------------------------------------------------------------------------
# Pipeline

class StageFailure(Exception):
    """Wraps a stage error together with the partial run report."""

    def __init__(self, stage: str, error: Exception, report: dict):
        super().__init__(f"pipeline stage {stage!r} failed: {error}")
        self.stage = stage
        self.error = error
        self.report = report


def run_pipeline(scan: sy.ScanImage, geometry: rs.ReseauGeometry,
                 params: ReconstructionParams,
                 threads: int = 1) -> tuple[np.ndarray, dict]:
    """Full reconstruction; returns the XYZ image and the run report.

    The first failing stage aborts with :class:`StageFailure` carrying the
    partial report.
    """
    report: dict = {"stages": [], "timings_s": {}}

    def run_stage(name, fn):
        t0 = time.perf_counter()
        try:
            result = fn()
        except Exception as exc:
            report["stages"].append({"name": name, "status": "failed",
                                     "error": str(exc)})
            raise StageFailure(name, exc, report) from exc
        report["timings_s"][name] = time.perf_counter() - t0
        report["stages"].append({"name": name, "status": "ok"})
        return result

    grid = run_stage("register_grid", lambda: register_grid(scan, geometry))
    report["registration"] = dict(grid.diagnostics)
    report["registration"]["angle_deg"] = grid.angle_deg
    report["registration"]["periods_px"] = list(grid.periods_px)

    ds = run_stage("estimate_dot_spread",
                   lambda: estimate_dot_spread(scan, grid, threads=threads))
    report["dot_spread"] = {
        "sigma_px": ds.sigma.tolist(),
        "low_confidence_regions": int(ds.low_confidence.sum()),
    }

    elements = run_stage("extract_intensities",
                         lambda: extract_intensities(scan.ir, grid))
    report["extraction"] = {
        "grid_cells": list(elements.shape),
        "missing_elements": int(elements.missing.sum()),
    }

    rgb = run_stage("demosaic", lambda: demosaic(elements, grid))
    if params.saturation_compensation:
        def comp():
            return compensate_saturation(rgb, ds)
        rgb, comp_info = run_stage("compensate_saturation", comp)
        report["compensation"] = comp_info

    xyz = run_stage("to_colorimetric", lambda: to_colorimetric(rgb, params))
    report["output"] = {"shape": list(xyz.shape)}
    return xyz, report


# ---------------------------------------------------------------------------
# Oracle support: the exactly-known grid of a synthetic scan

def true_grid(gt: sy.GroundTruth, deg: sy.DegradationSpec, seed: int,
              scan_shape: tuple[int, int],
              supersample: int = sy.DEFAULT_SUPERSAMPLE) -> GridModel:
    """Grid model of a synthetic scan built from the synthesis parameters.

    Used by tests and comparisons to evaluate reconstruction against the
    known element lattice rather than the registered estimate.
    """
    g = gt.screen.geometry
    ppu = gt.screen.resolution_px_per_um / supersample
    e_u, e_v = rs.grid_axes(g)
    p_u = g.pitch_along_um * ppu
    p_v = g.pitch_across_um * ppu
    i0, j0 = gt.cell_origin
    # Scan pixel x maps to film coordinate (x + 0.5) / ppu um.
    K = np.array([e_u / p_u, e_v / p_v])
    phi = np.array([0.5 * (e_u[0] + e_u[1]) / p_u - j0,
                    0.5 * (e_v[0] + e_v[1]) / p_v - i0])

    coords = sy.sampling_coords(deg, scan_shape, seed)
    if coords is None:
        return GridModel(K, phi, g, scan_shape)
    # Represent the warp as a residual mesh: c(x) = K' (x - D(x)) + phi'.
    if deg.affine is not None:
        (a, b, tx), (c, d, ty) = deg.affine
        A_aff = np.array([[a, b], [c, d]])
        t_aff = np.array([tx, ty])
    else:
        A_aff = np.eye(2)
        t_aff = np.zeros(2)
    K2 = K @ A_aff
    phi2 = phi + K @ t_aff
    ny, nx = scan_shape
    node_y = np.linspace(0, ny - 1, 17)
    node_x = np.linspace(0, nx - 1, 17)
    gy, gx = np.meshgrid(node_y, node_x, indexing="ij")
    sample_y = ndimage.map_coordinates(coords[0], [gy, gx], order=1, mode="nearest")
    sample_x = ndimage.map_coordinates(coords[1], [gy, gx], order=1, mode="nearest")
    disp = np.stack([sample_x - (A_aff[0, 0] * gx + A_aff[0, 1] * gy + t_aff[0]),
                     sample_y - (A_aff[1, 0] * gx + A_aff[1, 1] * gy + t_aff[1])])
    mesh_d = -np.tensordot(np.linalg.inv(A_aff), disp, axes=(1, 0))
    return GridModel(K2, phi2, g, scan_shape,
                     mesh_y=node_y, mesh_x=node_x, mesh_d=mesh_d)


def reference_xyz(gt: sy.GroundTruth, deg: sy.DegradationSpec, seed: int,
                  scan_shape: tuple[int, int], params: ReconstructionParams,
                  supersample: int = sy.DEFAULT_SUPERSAMPLE) -> np.ndarray:
    """Ground-truth XYZ image on the scan raster.

    Demosaics the true per-element intensities through the true grid and
    applies the same colorimetric conversion as the pipeline, yielding the
    reference a reconstruction of the same scan should approach.
    """
    grid = true_grid(gt, deg, seed, scan_shape, supersample)
    missing = gt.coverage == 0
    elements = ElementIntensities(_infill_missing(gt.intensities, missing),
                                  missing, (0, 0))
    rgb = demosaic(elements, grid, scan_shape)
    return to_colorimetric(rgb, params)
