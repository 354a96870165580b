"""Parametric model of the Dufaycolor color screen.

The screen is a mosaic of red lines interleaved with rows of alternating
green and blue squares, printed at an angle to the film edge.  This module
models its geometry, the colorimetric primary sets, additive mixtures of the
elements, white-balance solving and rendering of the simulated screen.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import colorimetry as cm
from .errors import ConfigError, GamutInfeasible, ResolutionTooCoarse, SingularSystem

# Label values used in ScreenMap rasters.
RED, GREEN, BLUE = 0, 1, 2
LABEL_NAMES = ("red", "green", "blue")


@dataclass(frozen=True)
class PrimarySet:
    """The three element colors of a screen, as xyY under a stated illuminant.

    Collinear chromaticities are admitted (three identical flat spectra
    produce them) but flagged via :attr:`collinear`; white balancing then
    refuses to solve.
    """

    red: cm.XyY
    green: cm.XyY
    blue: cm.XyY
    source_label: str = "unnamed"
    measurement_illuminant: cm.Illuminant | None = None
    stated_dominant_wavelengths_nm: tuple | None = None

    @property
    def chromaticities(self) -> np.ndarray:
        return np.array([[p.chroma.x, p.chroma.y] for p in self])

    @property
    def triangle_area(self) -> float:
        (x0, y0), (x1, y1), (x2, y2) = self.chromaticities
        return abs((x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)) / 2.0

    @property
    def collinear(self) -> bool:
        return self.triangle_area <= 1e-6

    def __iter__(self):
        return iter((self.red, self.green, self.blue))

    def xyz_array(self) -> np.ndarray:
        """(3, 3) array of the primaries' tristimulus values, rows R/G/B."""
        return np.array([cm.xyy_to_xyz(p).as_array() for p in self])

    def scaled(self, scale) -> "PrimarySet":
        """A copy with each primary's luminance multiplied by ``scale``."""
        s = np.asarray(scale, dtype=float)
        prims = [cm.XyY(p.chroma, p.Y * si) for p, si in zip(self, s)]
        return PrimarySet(*prims, source_label=self.source_label,
                          measurement_illuminant=self.measurement_illuminant,
                          stated_dominant_wavelengths_nm=self.stated_dominant_wavelengths_nm)


@dataclass(frozen=True)
class ReseauGeometry:
    """Screen layout parameters.

    ``red_line_fraction`` is the portion of the pitch across red lines that
    the red line covers; ``green_blue_ratio`` is green square width over blue
    square width along the lines.  Historical screens used 19-25 lines/mm
    and squares of roughly 28.9 um.  The two print passes were roughly but
    not exactly orthogonal; ``cross_angle_offset_deg`` skews the green/blue
    alternation axis away from the red-line direction (0 = orthogonal
    passes).
    """

    line_density_per_mm: float = 20.0
    print_angle_deg: float = 23.0
    red_line_fraction: float = 0.421
    green_blue_ratio: float = 26.5 / 31.4
    square_width_um: float = 28.9
    cross_angle_offset_deg: float = 0.0

    def __post_init__(self):
        if self.line_density_per_mm <= 0:
            raise ConfigError("line density must be positive")
        if not 0 < self.red_line_fraction < 1:
            raise ConfigError("red_line_fraction must lie in (0, 1)")
        if self.green_blue_ratio <= 0 or self.square_width_um <= 0:
            raise ConfigError("green_blue_ratio and square_width_um must be positive")
        if abs(self.cross_angle_offset_deg) >= 45:
            raise ConfigError("cross_angle_offset_deg must stay within (-45, 45)")

    @property
    def pitch_across_um(self) -> float:
        """Distance between red line centers, perpendicular to the lines."""
        return 1000.0 / self.line_density_per_mm

    @property
    def pitch_along_um(self) -> float:
        """One green + one blue square along the line direction."""
        return 2.0 * self.square_width_um

    @property
    def green_share(self) -> float:
        """Green fraction of the along-line period."""
        r = self.green_blue_ratio
        return r / (1.0 + r)

    @property
    def min_element_um(self) -> float:
        p_v = self.pitch_across_um
        p_u = self.pitch_along_um
        return min(self.red_line_fraction * p_v,
                   (1.0 - self.red_line_fraction) * p_v,
                   self.green_share * p_u,
                   (1.0 - self.green_share) * p_u)


@dataclass(frozen=True)
class AreaFractions:
    """Portions of screen area covered by red, green and blue elements."""

    red: float
    green: float
    blue: float

    def __post_init__(self):
        vals = self.as_array()
        if np.any(vals <= 0) or np.any(vals >= 1):
            raise ConfigError(f"area fractions {tuple(vals)} must lie in (0, 1)")
        if abs(vals.sum() - 1.0) > 1e-9:
            raise ConfigError(f"area fractions {tuple(vals)} must sum to 1")

    def as_array(self) -> np.ndarray:
        return np.array([self.red, self.green, self.blue])


class ScreenMap:
    """Raster of element labels plus the geometry it was generated from."""

    def __init__(self, labels: np.ndarray, resolution_px_per_um: float,
                 geometry: ReseauGeometry):
        self.labels = np.ascontiguousarray(labels, dtype=np.uint8)
        self.resolution_px_per_um = float(resolution_px_per_um)
        self.geometry = geometry

    @property
    def shape(self):
        return self.labels.shape

    def measured_fractions(self) -> np.ndarray:
        """Observed (red, green, blue) label fractions of the raster."""
        if self.labels.size == 0:
            return np.zeros(3)
        counts = np.bincount(self.labels.ravel(), minlength=3)
        return counts / self.labels.size


def fractions_from_geometry(g: ReseauGeometry) -> AreaFractions:
    """Area fractions implied by the layout parameters; sums to one exactly."""
    red = g.red_line_fraction
    band = 1.0 - red
    return AreaFractions(red, band * g.green_share, band * (1.0 - g.green_share))


def labels_from_cell_fractions(frac_u: np.ndarray, frac_v: np.ndarray,
                               g: ReseauGeometry) -> np.ndarray:
    """Element labels for intra-cell positions (fractions of one period)."""
    return np.where(frac_v < g.red_line_fraction, RED,
                    np.where(frac_u < g.green_share, GREEN, BLUE)).astype(np.uint8)


def grid_axes(g: ReseauGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Unit row vectors of the u (along lines) and v (across lines) axes.

    With a nonzero cross-pass offset the u axis tilts relative to the red
    lines, turning the cells into parallelograms.
    """
    theta = math.radians(g.print_angle_deg)
    theta_u = theta + math.radians(g.cross_angle_offset_deg)
    return (np.array([math.cos(theta_u), math.sin(theta_u)]),
            np.array([-math.sin(theta), math.cos(theta)]))


def grid_coordinates(g: ReseauGeometry, resolution_px_per_um: float,
                     shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Continuous cell coordinates (cu, cv) for every pixel of a raster.

    One unit of cu is one green+blue period along the lines; one unit of cv is
    one pitch across the red lines.  Element labels follow from the fractional
    parts via :func:`labels_from_cell_fractions`.
    """
    ny, nx = shape
    e_u, e_v = grid_axes(g)
    xs = (np.arange(nx) + 0.5) / resolution_px_per_um
    ys = (np.arange(ny) + 0.5) / resolution_px_per_um
    u = e_u[0] * xs[None, :] + e_u[1] * ys[:, None]
    v = e_v[0] * xs[None, :] + e_v[1] * ys[:, None]
    return u / g.pitch_along_um, v / g.pitch_across_um


def build_screen(g: ReseauGeometry, resolution_px_per_um: float,
                 extent_um: tuple[float, float]) -> ScreenMap:
    """Deterministic label raster of the screen over ``extent_um`` (w, h).

    Red lines run at ``print_angle_deg`` to the raster's horizontal axis with
    alternating green/blue squares between them.  Requires at least 4 px per
    smallest element dimension.
    """
    if resolution_px_per_um * g.min_element_um < 4.0:
        raise ResolutionTooCoarse(
            f"{resolution_px_per_um} px/um gives "
            f"{resolution_px_per_um * g.min_element_um:.2f} px per smallest element; need >= 4")
    width_um, height_um = extent_um
    nx = int(round(width_um * resolution_px_per_um))
    ny = int(round(height_um * resolution_px_per_um))
    if nx <= 0 or ny <= 0:
        return ScreenMap(np.zeros((max(ny, 0), max(nx, 0)), np.uint8),
                         resolution_px_per_um, g)

    e_u, e_v = grid_axes(g)
    p_u, p_v = g.pitch_along_um, g.pitch_across_um

    xs = (np.arange(nx) + 0.5) / resolution_px_per_um
    ys = (np.arange(ny) + 0.5) / resolution_px_per_um
    labels = np.empty((ny, nx), np.uint8)
    # Row blocks keep the coordinate planes small for large extents.
    block = max(1, int(4e6 / max(nx, 1)))
    for row0 in range(0, ny, block):
        yb = ys[row0:row0 + block, None]
        u = e_u[0] * xs[None, :] + e_u[1] * yb
        v = e_v[0] * xs[None, :] + e_v[1] * yb
        labels[row0:row0 + block] = labels_from_cell_fractions(
            np.mod(u / p_u, 1.0), np.mod(v / p_v, 1.0), g)
    return ScreenMap(labels, resolution_px_per_um, g)


@dataclass(frozen=True)
class BalancedPrimaries:
    """A primary set with per-primary luminance multipliers solved so the
    area-weighted mixture hits ``target_whitepoint`` with luminance 1."""

    base: PrimarySet
    scale: tuple[float, float, float]
    target_whitepoint: cm.Chromaticity
    fractions: AreaFractions

    def __post_init__(self):
        if any(s <= 0 for s in self.scale):
            raise GamutInfeasible(f"non-positive scales {self.scale}")
        mix = cm.xyz_to_xyy(mixture_xyz(self, self.fractions))
        if (abs(mix.chroma.x - self.target_whitepoint.x) > 1e-6
                or abs(mix.chroma.y - self.target_whitepoint.y) > 1e-6):
            raise GamutInfeasible(
                f"scaled mixture ({mix.chroma.x:.7f}, {mix.chroma.y:.7f}) misses target "
                f"({self.target_whitepoint.x:.7f}, {self.target_whitepoint.y:.7f})")

    @property
    def source_label(self) -> str:
        return self.base.source_label

    def scaled_set(self) -> PrimarySet:
        return self.base.scaled(self.scale)


def _as_primary_set(p) -> PrimarySet:
    return p.scaled_set() if isinstance(p, BalancedPrimaries) else p


def mixture_xyz(p, a: AreaFractions) -> cm.XYZ:
    """Area-weighted additive mixture of the three element colors."""
    xyz = _as_primary_set(p).xyz_array()
    return cm.XYZ.from_array(a.as_array() @ xyz)


def white_balance(p: PrimarySet, a: AreaFractions,
                  target: cm.Chromaticity) -> BalancedPrimaries:
    """Solve luminance multipliers so the mixture is neutral at ``target``.

    The solved mixture has chromaticity ``target`` (to 1e-6) and luminance
    exactly one.  Targets outside the primaries' triangle give negative
    multipliers and raise :class:`GamutInfeasible`.
    """
    if p.collinear:
        raise SingularSystem(
            f"primaries of {p.source_label!r} are collinear (area {p.triangle_area:.2e})")
    m = (a.as_array()[:, None] * p.xyz_array()).T       # columns: a_i * XYZ_i
    w = cm.xyy_to_xyz(cm.XyY(target, 1.0)).as_array()
    try:
        s = np.linalg.solve(m, w)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from None
    if np.any(s <= 0):
        raise GamutInfeasible(
            f"target ({target.x:.4f}, {target.y:.4f}) outside the "
            f"{p.source_label!r} primaries' triangle (scales {s})")
    mixture_y = float(m[1] @ s)
    s = s / mixture_y
    return BalancedPrimaries(p, tuple(float(v) for v in s), target, a)


def primaries_from_spectra(red: cm.SpectralCurve, green: cm.SpectralCurve,
                           blue: cm.SpectralCurve, backlight: cm.Illuminant,
                           observer: cm.Observer,
                           source_label: str = "spectral") -> PrimarySet:
    """Integrate three transmission curves under a backlight into a primary set."""
    prims = [cm.xyz_to_xyy(cm.spectrum_to_xyz(c, backlight, observer))
             for c in (red, green, blue)]
    return PrimarySet(*prims, source_label=source_label,
                      measurement_illuminant=backlight)


def render_reseau(screen: ScreenMap, p, simulation_wp: cm.XYZ) -> np.ndarray:
    """Paint each element label with its primary's sRGB color.

    Exposure is normalized so the largest linear display component over the
    three element colors is one; only out-of-gamut negatives are clipped.
    Returns an (H, W, 3) uint8 image matching the map size.
    """
    pset = _as_primary_set(p)
    xyz = pset.xyz_array()
    m = cm.XYZ_TO_SRGB @ cm.bradford_matrix(simulation_wp,
                                            cm.XYZ.from_array(cm.SRGB_WHITE_XYZ))
    lin = xyz @ m.T
    peak = lin.max()
    if peak > 0:
        lin = lin / peak
    palette = np.round(255.0 * cm._srgb_encode(np.clip(lin, 0.0, 1.0)))
    palette = palette.astype(np.uint8)
    if screen.labels.size == 0:
        return np.zeros(screen.labels.shape + (3,), np.uint8)
    return palette[screen.labels]


# ---------------------------------------------------------------------------
# Config files

def _search_paths(kind: str, name: str):
    filename = name if name.endswith(".toml") else f"{name}.toml"
    env = os.environ.get("DUFAY_DATA_DIR")
    if env:
        yield Path(env) / kind / filename
        yield Path(env) / filename
    yield resources.files("dufay").joinpath("data", kind, filename)


def _read_toml(kind: str, name: str) -> dict:
    p = Path(name)
    if p.suffix == ".toml" and p.exists():
        with open(p, "rb") as f:
            return tomllib.load(f)
    for cand in _search_paths(kind, name):
        try:
            with cand.open("rb") as f:  # type: ignore[union-attr]
                return tomllib.load(f)
        except (FileNotFoundError, NotADirectoryError):
            continue
    raise ConfigError(f"no {kind} config named {name!r}")


def bundled_primary_sets() -> list[str]:
    files = resources.files("dufay").joinpath("data", "primaries")
    return sorted(f.name[:-5] for f in files.iterdir() if f.name.endswith(".toml"))


def load_primary_set(name: str) -> PrimarySet:
    """Load a primary set by bundled name (tab1, tab2, srgb) or TOML path."""
    data = _read_toml("primaries", name)
    try:
        prims = []
        stated = []
        for key in LABEL_NAMES:
            row = data[key]
            prims.append(cm.XyY(cm.Chromaticity(float(row["x"]), float(row["y"])),
                                float(row["Y"])))
            stated.append(row.get("stated_dominant_wavelength_nm"))
        illum_name = data.get("measurement_illuminant")
        illum = cm.illuminant(illum_name) if illum_name else None
        return PrimarySet(*prims,
                          source_label=str(data.get("source_label", name)),
                          measurement_illuminant=illum,
                          stated_dominant_wavelengths_nm=tuple(stated))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad primary-set config {name!r}: {exc}") from None


def load_geometry(name: str = "default") -> ReseauGeometry:
    """Load screen geometry by bundled name or TOML path."""
    data = _read_toml("geometry", name)
    try:
        return ReseauGeometry(
            line_density_per_mm=float(data["line_density_per_mm"]),
            print_angle_deg=float(data["print_angle_deg"]),
            red_line_fraction=float(data["red_line_fraction"]),
            green_blue_ratio=float(data["green_blue_ratio"]),
            square_width_um=float(data["square_width_um"]),
            cross_angle_offset_deg=float(data.get("cross_angle_offset_deg", 0.0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad geometry config {name!r}: {exc}") from None


def default_geometry() -> ReseauGeometry:
    return load_geometry("default")
