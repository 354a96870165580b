"""Exception types raised across the package."""


class DufayError(Exception):
    """Base class for all errors raised by this package."""


class DegenerateChromaticity(DufayError):
    """Chromaticity with y = 0 cannot be lifted to tristimulus values."""


class DegenerateColor(DufayError):
    """All-zero tristimulus input has no chromaticity."""


class SpectralRangeMismatch(DufayError):
    """Spectral curves share no wavelength overlap with the observer grid."""


class UndefinedDominantWavelength(DufayError):
    """Sample coincides with the whitepoint; the ray direction is undefined."""


class AdaptationSingularity(DufayError):
    """Source whitepoint maps to a zero cone response."""


class UnsupportedCCT(DufayError):
    """Correlated color temperature outside the daylight-locus domain."""


class ResolutionTooCoarse(DufayError):
    """Raster resolution gives fewer than 4 px per smallest screen element."""


class GamutInfeasible(DufayError):
    """White-balance target lies outside the primaries' chromaticity triangle."""


class SingularSystem(DufayError):
    """Collinear primaries make the white-balance system unsolvable."""


class ExtentMismatch(DufayError):
    """Scene raster does not cover the screen-map extent."""


class RegistrationFailed(DufayError):
    """No periodic screen pattern could be located in the scan.

    Carries a ``diagnostics`` dict (peak SNR, expected/found periods).
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class InsufficientData(DufayError):
    """Too few grid elements for interpolation."""


class DimensionMismatch(DufayError):
    """Images being compared do not share dimensions."""


class EmptyInput(DufayError):
    """An operation received an empty array."""


class ConfigError(DufayError):
    """Invalid run configuration (bad file, unknown name, out-of-range value)."""
