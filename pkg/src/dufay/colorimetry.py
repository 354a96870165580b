"""CIE colorimetry: conversions, spectral integration, dominant wavelength,
chromatic adaptation, CIEDE2000 and sRGB display encoding.

All operations are pure functions over immutable inputs.  Scalar color values
are small frozen dataclasses; the image-scale variants (``*_image``) operate
on numpy arrays with the color axis last.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

import numpy as np

from .errors import (
    AdaptationSingularity,
    DegenerateChromaticity,
    DegenerateColor,
    SpectralRangeMismatch,
    UndefinedDominantWavelength,
    UnsupportedCCT,
)

logger = logging.getLogger(__name__)

# Bradford cone-response matrix (linear transform, no nonlinearity).
BRADFORD = np.array([
    [0.8951, 0.2664, -0.1614],
    [-0.7502, 1.7135, 0.0367],
    [0.0389, -0.0685, 1.0296],
])
BRADFORD_INV = np.linalg.inv(BRADFORD)

# IEC 61966-2-1 XYZ -> linear sRGB, D65 reference white.
XYZ_TO_SRGB = np.array([
    [3.2404542, -1.5371385, -0.4985314],
    [-0.9692660, 1.8760108, 0.0415560],
    [0.0556434, -0.2040259, 1.0572252],
])
SRGB_WHITE_XYZ = np.array([0.95047, 1.00000, 1.08883])

_LAB_DELTA = 6.0 / 29.0


@dataclass(frozen=True)
class Chromaticity:
    """CIE 1931 (x, y) chromaticity coordinates."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise DegenerateChromaticity(f"non-finite chromaticity ({self.x}, {self.y})")
        # x = 0 and x + y = 1 occur on the diagram boundary (e.g. the pure-Y
        # axis), so bounds are non-strict there.
        if self.x < 0 or self.y <= 0 or self.x + self.y > 1 + 1e-12:
            raise DegenerateChromaticity(f"chromaticity ({self.x}, {self.y}) outside diagram")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def distance(self, other: "Chromaticity") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class XYZ:
    """CIE tristimulus values; Y is relative luminance."""

    X: float
    Y: float
    Z: float

    def __post_init__(self):
        vals = (self.X, self.Y, self.Z)
        if not all(math.isfinite(v) for v in vals):
            raise DegenerateColor(f"non-finite tristimulus {vals}")
        if any(v < 0 for v in vals):
            raise DegenerateColor(f"negative tristimulus {vals}")

    def as_array(self) -> np.ndarray:
        return np.array([self.X, self.Y, self.Z])

    @staticmethod
    def from_array(a) -> "XYZ":
        return XYZ(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class XyY:
    """Chromaticity plus relative luminance."""

    chroma: Chromaticity
    Y: float

    def __post_init__(self):
        if not math.isfinite(self.Y) or self.Y < 0:
            raise DegenerateColor(f"invalid luminance {self.Y}")


@dataclass(frozen=True)
class Lab:
    """CIELAB coordinates relative to some stated whitepoint.

    L is nominally in [0, 100]; pipeline images may exceed the top end after
    highlight compensation, so the range is not enforced here.
    """

    L: float
    a: float
    b: float


class SpectralCurve:
    """A sampled curve of value vs wavelength (nm).

    Wavelengths must be strictly increasing, within [300, 830] nm, with at
    least two samples.  The same container holds transmissions, observer
    color-matching functions and illuminant power distributions; the
    transmission-specific bound of [0, 1.05] is checked by consumers that
    require a transmission curve.
    """

    __slots__ = ("wavelengths", "values")

    def __init__(self, wavelengths, values):
        w = np.asarray(wavelengths, dtype=float)
        v = np.asarray(values, dtype=float)
        if w.ndim != 1 or w.shape != v.shape or w.size < 2:
            raise ValueError("need matching 1-D arrays with >= 2 samples")
        if np.any(np.diff(w) <= 0):
            raise ValueError("wavelengths must be strictly increasing")
        if w[0] < 300 - 1e-9 or w[-1] > 830 + 1e-9:
            raise ValueError("wavelengths must lie within [300, 830] nm")
        if not (np.all(np.isfinite(v)) and np.all(v >= 0)):
            raise ValueError("curve values must be finite and non-negative")
        self.wavelengths = w
        self.values = v
        w.setflags(write=False)
        v.setflags(write=False)

    def __repr__(self):
        return (f"SpectralCurve({self.wavelengths[0]:g}-{self.wavelengths[-1]:g} nm, "
                f"{self.wavelengths.size} samples)")

    def validate_transmission(self):
        """Raise unless all values fit a transmission curve ([0, 1.05])."""
        if np.any(self.values > 1.05):
            raise ValueError("transmission values must lie in [0, 1.05]")
        return self

    def resample(self, grid) -> np.ndarray:
        """Linear interpolation onto ``grid``; clamps to endpoint values outside."""
        return np.interp(np.asarray(grid, float), self.wavelengths, self.values)

    @staticmethod
    def from_csv(path) -> "SpectralCurve":
        """Read a ``wavelength_nm,value`` CSV file."""
        wls, vals = [], []
        with open(path, newline="", encoding="utf-8") as f:
            reader = csv.reader(f)
            header = next(reader)
            if [h.strip() for h in header[:2]] != ["wavelength_nm", "value"]:
                raise ValueError(f"{path}: expected header 'wavelength_nm,value'")
            for row in reader:
                if not row:
                    continue
                wls.append(float(row[0]))
                vals.append(float(row[1]))
        return SpectralCurve(wls, vals)

    def to_csv(self, path):
        with open(path, "w", newline="\n", encoding="utf-8") as f:
            f.write("wavelength_nm,value\n")
            for w, v in zip(self.wavelengths, self.values):
                f.write(f"{w:g},{v:.6f}\n")


class Observer:
    """CIE standard observer: three color-matching functions on a shared grid."""

    def __init__(self, xbar: SpectralCurve, ybar: SpectralCurve, zbar: SpectralCurve):
        if not (np.array_equal(xbar.wavelengths, ybar.wavelengths)
                and np.array_equal(xbar.wavelengths, zbar.wavelengths)):
            raise ValueError("color-matching functions must share one wavelength grid")
        self.xbar = xbar
        self.ybar = ybar
        self.zbar = zbar
        self.grid = xbar.wavelengths
        # (N, 3) stack used by the integrators.
        self.cmf = np.stack([xbar.values, ybar.values, zbar.values], axis=1)
        s = self.cmf.sum(axis=1)
        self.locus_xy = self.cmf[:, :2] / s[:, None]


@dataclass(frozen=True)
class Illuminant:
    """A named illuminant: whitepoint chromaticity plus optional SPD.

    When an SPD is present it must reproduce the stored whitepoint within
    0.001 in x and y under the 1931 2-degree observer.
    """

    name: str
    whitepoint: Chromaticity
    spd: SpectralCurve | None = field(default=None)

    def __post_init__(self):
        if self.spd is not None:
            xyz = spectrum_to_xyz(_FLAT_UNIT, self, cie_1931_observer(),
                                  _skip_transmission_check=True)
            wp = xyz_to_xyy(xyz).chroma
            if (abs(wp.x - self.whitepoint.x) > 1e-3
                    or abs(wp.y - self.whitepoint.y) > 1e-3):
                raise ValueError(
                    f"illuminant {self.name}: SPD whitepoint ({wp.x:.4f}, {wp.y:.4f}) "
                    f"disagrees with stored ({self.whitepoint.x:.4f}, {self.whitepoint.y:.4f})")

    def whitepoint_xyz(self, Y: float = 1.0) -> XYZ:
        return xyy_to_xyz(XyY(self.whitepoint, Y))


def xyy_to_xyz(c: XyY) -> XYZ:
    """Lift xyY to tristimulus values: X = xY/y, Z = (1-x-y)Y/y."""
    x, y = c.chroma.x, c.chroma.y
    if y <= 0:
        raise DegenerateChromaticity("y = 0 has no tristimulus image")
    return XYZ(x * c.Y / y, c.Y, max(0.0, (1.0 - x - y)) * c.Y / y)


def xyz_to_xyy(t: XYZ) -> XyY:
    """Project tristimulus values to chromaticity, keeping Y."""
    total = t.X + t.Y + t.Z
    if total <= 0:
        raise DegenerateColor("all-zero tristimulus input has no chromaticity")
    return XyY(Chromaticity(t.X / total, t.Y / total), t.Y)


_DATA_FILES = {
    "A": "illuminant_a.csv",
    "B": "illuminant_b.csv",
    "C": "illuminant_c.csv",
    "D65": "illuminant_d65.csv",
    "E": "illuminant_e.csv",
}

# Published 1931 2-degree whitepoints; B per the historical quality-control
# viewing illuminant (CCT ~4874 K).
_WHITEPOINTS = {
    "A": Chromaticity(0.4476, 0.4074),
    "B": Chromaticity(0.3485, 0.3517),
    "C": Chromaticity(0.3101, 0.3162),
    "D65": Chromaticity(0.3127, 0.3290),
    "E": Chromaticity(1.0 / 3.0, 1.0 / 3.0),
}


def _data_path(name: str):
    return resources.files("dufay").joinpath("data", name)


@lru_cache(maxsize=None)
def cie_1931_observer() -> Observer:
    """The bundled CIE 1931 2-degree observer, 380-780 nm at 5 nm."""
    curves = [SpectralCurve.from_csv(_data_path(f"observer_1931_2deg_{n}.csv"))
              for n in ("xbar", "ybar", "zbar")]
    return Observer(*curves)


@lru_cache(maxsize=None)
def illuminant(name: str) -> Illuminant:
    """A bundled illuminant (A, B, C, D65 or E) with SPD and whitepoint."""
    key = name.upper()
    if key not in _DATA_FILES:
        raise KeyError(f"unknown illuminant {name!r}; have {sorted(_DATA_FILES)}")
    spd = SpectralCurve.from_csv(_data_path(_DATA_FILES[key]))
    return Illuminant(key, _WHITEPOINTS[key], spd)


_FLAT_UNIT = SpectralCurve([300.0, 830.0], [1.0, 1.0])


def spectrum_to_xyz(transmission: SpectralCurve, illum: Illuminant,
                    observer: Observer, *, _skip_transmission_check=False) -> XYZ:
    """Integrate transmission x SPD x CMF over the observer grid.

    Normalized so a perfect transmitter has Y = 100 under any illuminant.
    The transmission curve is resampled to the observer grid by linear
    interpolation and clamped to its endpoint values outside its range.
    """
    if illum.spd is None:
        raise SpectralRangeMismatch(f"illuminant {illum.name} has no SPD")
    if not _skip_transmission_check:
        transmission.validate_transmission()
    grid = observer.grid
    if transmission.wavelengths[-1] < grid[0] or transmission.wavelengths[0] > grid[-1]:
        raise SpectralRangeMismatch(
            f"transmission range {transmission.wavelengths[0]:g}-"
            f"{transmission.wavelengths[-1]:g} nm does not overlap observer grid")
    t = transmission.resample(grid)
    s = illum.spd.resample(grid)
    norm = float(s @ observer.ybar.values)
    if norm <= 0:
        raise SpectralRangeMismatch("illuminant SPD integrates to zero against ybar")
    k = 100.0 / norm
    raw = (s * t) @ observer.cmf
    return XYZ(*np.maximum(k * raw, 0.0))


def dominant_wavelength(sample: Chromaticity, whitepoint: Chromaticity,
                        observer: Observer) -> float:
    """Wavelength where the ray whitepoint->sample exits the spectral locus.

    Colors on the purple side return the complementary wavelength, negated.
    The intersection is located by a brute-force scan over consecutive locus
    segments with linear interpolation inside the winning segment.
    """
    dx = sample.x - whitepoint.x
    dy = sample.y - whitepoint.y
    if math.hypot(dx, dy) <= 1e-6:
        raise UndefinedDominantWavelength("sample coincides with whitepoint")
    grid = observer.grid
    locus = observer.locus_xy
    for sign in (1.0, -1.0):
        rx, ry = sign * dx, sign * dy
        best_t = math.inf
        best_wl = None
        ax, ay = locus[:-1, 0], locus[:-1, 1]
        bx = locus[1:, 0] - ax
        by = locus[1:, 1] - ay
        det = rx * (-by) - ry * (-bx)
        cx = ax - whitepoint.x
        cy = ay - whitepoint.y
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (cx * (-by) - cy * (-bx)) / det
            u = (rx * cy - ry * cx) / det
        hits = (np.abs(det) > 1e-14) & (t > 1e-9) & (u >= -1e-9) & (u <= 1 + 1e-9)
        if np.any(hits):
            idx = np.flatnonzero(hits)
            j = idx[np.argmin(t[idx])]
            if t[j] < best_t:
                best_t = t[j]
                best_wl = grid[j] + u[j] * (grid[j + 1] - grid[j])
        if best_wl is not None:
            return float(sign * best_wl)
    raise UndefinedDominantWavelength("ray does not intersect the spectral locus")


def bradford_matrix(src_wp: XYZ, dst_wp: XYZ) -> np.ndarray:
    """3x3 XYZ->XYZ matrix adapting from src to dst whitepoint.

    Whitepoints should be supplied at a common luminance scale; the matrix
    maps src_wp to dst_wp exactly.
    """
    if src_wp.Y <= 0 or dst_wp.Y <= 0:
        raise AdaptationSingularity("whitepoints must have positive luminance")
    src_cone = BRADFORD @ src_wp.as_array()
    dst_cone = BRADFORD @ dst_wp.as_array()
    if np.any(np.abs(src_cone) < 1e-12):
        raise AdaptationSingularity(f"zero cone response in source whitepoint {src_wp}")
    return BRADFORD_INV @ np.diag(dst_cone / src_cone) @ BRADFORD


def bradford_adapt(color: XYZ, src_wp: XYZ, dst_wp: XYZ) -> XYZ:
    """Adapt a color between illuminant whitepoints via cone-response scaling."""
    out = bradford_matrix(src_wp, dst_wp) @ color.as_array()
    return XYZ(*np.maximum(out, 0.0))


def _lab_f(t: np.ndarray) -> np.ndarray:
    cube = _LAB_DELTA**3
    return np.where(t > cube, np.cbrt(np.maximum(t, 0.0)),
                    t / (3 * _LAB_DELTA**2) + 4.0 / 29.0)


def xyz_image_to_lab(xyz: np.ndarray, whitepoint: XYZ) -> np.ndarray:
    """CIELAB over an (..., 3) array; negative inputs are clamped to zero."""
    if whitepoint.Y <= 0:
        raise AdaptationSingularity("Lab whitepoint must have positive luminance")
    arr = np.asarray(xyz, dtype=float)
    neg = int(np.count_nonzero(arr < 0))
    if neg:
        logger.warning("clamped %d negative tristimulus values before CIELAB", neg)
        arr = np.maximum(arr, 0.0)
    f = _lab_f(arr / whitepoint.as_array())
    out = np.empty_like(arr)
    out[..., 0] = 116.0 * f[..., 1] - 16.0
    out[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    out[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return out


def xyz_to_lab(t: XYZ, whitepoint: XYZ) -> Lab:
    """Standard CIELAB with the two-branch transfer function."""
    return Lab(*xyz_image_to_lab(t.as_array(), whitepoint))


def delta_e_2000_image(lab_a: np.ndarray, lab_b: np.ndarray) -> np.ndarray:
    """CIEDE2000 over (..., 3) Lab arrays with kL = kC = kH = 1."""
    a = np.asarray(lab_a, dtype=float)
    b = np.asarray(lab_b, dtype=float)
    l1, a1, b1 = a[..., 0], a[..., 1], a[..., 2]
    l2, a2, b2 = b[..., 0], b[..., 1], b[..., 2]

    c1 = np.hypot(a1, b1)
    c2 = np.hypot(a2, b2)
    cm7 = ((c1 + c2) / 2.0) ** 7
    g = 0.5 * (1.0 - np.sqrt(cm7 / (cm7 + 25.0**7)))
    a1p = a1 * (1.0 + g)
    a2p = a2 * (1.0 + g)
    c1p = np.hypot(a1p, b1)
    c2p = np.hypot(a2p, b2)
    h1p = np.degrees(np.arctan2(b1, a1p)) % 360.0
    h2p = np.degrees(np.arctan2(b2, a2p)) % 360.0

    dlp = l2 - l1
    dcp = c2p - c1p
    dh = h2p - h1p
    dh = np.where(dh > 180.0, dh - 360.0, dh)
    dh = np.where(dh < -180.0, dh + 360.0, dh)
    dh = np.where(c1p * c2p == 0.0, 0.0, dh)
    dhp = 2.0 * np.sqrt(c1p * c2p) * np.sin(np.radians(dh) / 2.0)

    lbp = (l1 + l2) / 2.0
    cbp = (c1p + c2p) / 2.0
    hsum = h1p + h2p
    habs = np.abs(h1p - h2p)
    hbp = np.where(habs <= 180.0, hsum / 2.0,
                   np.where(hsum < 360.0, (hsum + 360.0) / 2.0, (hsum - 360.0) / 2.0))
    hbp = np.where(c1p * c2p == 0.0, hsum, hbp)

    t = (1.0 - 0.17 * np.cos(np.radians(hbp - 30.0))
         + 0.24 * np.cos(np.radians(2.0 * hbp))
         + 0.32 * np.cos(np.radians(3.0 * hbp + 6.0))
         - 0.20 * np.cos(np.radians(4.0 * hbp - 63.0)))
    dtheta = 30.0 * np.exp(-(((hbp - 275.0) / 25.0) ** 2))
    cbp7 = cbp**7
    rc = 2.0 * np.sqrt(cbp7 / (cbp7 + 25.0**7))
    sl = 1.0 + 0.015 * (lbp - 50.0) ** 2 / np.sqrt(20.0 + (lbp - 50.0) ** 2)
    sc = 1.0 + 0.045 * cbp
    sh = 1.0 + 0.015 * cbp * t
    rt = -np.sin(np.radians(2.0 * dtheta)) * rc

    return np.sqrt((dlp / sl) ** 2 + (dcp / sc) ** 2 + (dhp / sh) ** 2
                   + rt * (dcp / sc) * (dhp / sh))


def delta_e_2000(a: Lab, b: Lab) -> float:
    """CIEDE2000 color difference between two Lab colors."""
    return float(delta_e_2000_image(np.array([a.L, a.a, a.b]),
                                    np.array([b.L, b.a, b.b])))


def _srgb_encode(linear: np.ndarray) -> np.ndarray:
    return np.where(linear <= 0.0031308, 12.92 * linear,
                    1.055 * np.power(np.maximum(linear, 0.0), 1.0 / 2.4) - 0.055)


def xyz_image_to_srgb(xyz: np.ndarray, simulation_wp: XYZ) -> tuple[np.ndarray, float]:
    """Encode an (..., 3) XYZ array as sRGB in [0, 1].

    Bradford-adapts from the simulation whitepoint to D65, applies the linear
    sRGB matrix, clips out-of-gamut values, then the transfer curve.  Returns
    the encoded array and the fraction of clipped components.
    """
    m = XYZ_TO_SRGB @ bradford_matrix(simulation_wp, XYZ.from_array(SRGB_WHITE_XYZ))
    lin = np.asarray(xyz, dtype=float) @ m.T
    clipped = int(np.count_nonzero((lin < 0.0) | (lin > 1.0)))
    frac = clipped / lin.size if lin.size else 0.0
    return _srgb_encode(np.clip(lin, 0.0, 1.0)), frac


def xyz_to_srgb(t: XYZ, simulation_wp: XYZ) -> tuple[float, float, float]:
    """Encode one color as sRGB; clip fraction is logged when nonzero."""
    rgb, frac = xyz_image_to_srgb(t.as_array(), simulation_wp)
    if frac:
        logger.debug("sRGB encoding clipped %.1f%% of components", 100 * frac)
    return tuple(float(v) for v in rgb)


def daylight_whitepoint(cct: float) -> Chromaticity:
    """CIE daylight-locus chromaticity for a CCT in [4000, 25000] K."""
    if not 4000.0 <= cct <= 25000.0:
        raise UnsupportedCCT(f"CCT {cct} K outside [4000, 25000]")
    t = float(cct)
    if t <= 7000.0:
        x = 0.244063 + 0.09911e3 / t + 2.9678e6 / t**2 - 4.6070e9 / t**3
    else:
        x = 0.237040 + 0.24748e3 / t + 1.9018e6 / t**2 - 2.0064e9 / t**3
    y = -3.000 * x * x + 2.870 * x - 0.275
    return Chromaticity(x, y)


@lru_cache(maxsize=None)
def _daylight_basis():
    rows = np.loadtxt(_data_path("daylight_basis.csv"), delimiter=",", skiprows=1)
    return rows[:, 0], rows[:, 1:]


def daylight_spd(cct: float) -> SpectralCurve:
    """CIE daylight SPD reconstructed from the S0/S1/S2 basis functions."""
    wp = daylight_whitepoint(cct)
    m = 0.0241 + 0.2562 * wp.x - 0.7341 * wp.y
    m1 = (-1.3515 - 1.7703 * wp.x + 5.9114 * wp.y) / m
    m2 = (0.0300 - 31.4424 * wp.x + 30.0717 * wp.y) / m
    grid, basis = _daylight_basis()
    vals = basis[:, 0] + m1 * basis[:, 1] + m2 * basis[:, 2]
    return SpectralCurve(grid, np.maximum(vals, 0.0))


def illuminant_from_cct(cct: float) -> Illuminant:
    """A daylight illuminant at the given correlated color temperature."""
    return Illuminant(f"D{round(cct)}", daylight_whitepoint(cct), daylight_spd(cct))
