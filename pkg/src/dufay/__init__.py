"""Dufaycolor color-screen simulation and reconstruction toolkit.

Subpackages:

- :mod:`dufay.colorimetry` -- CIE math (conversions, spectral integration,
  dominant wavelength, Bradford adaptation, CIEDE2000, sRGB encoding).
- :mod:`dufay.reseau` -- the parametric color-screen model: geometry,
  primary sets, additive mixtures, white balancing, screen rendering.
- :mod:`dufay.synth` -- synthetic scan generation (RGB + IR) with known
  ground truth.
- :mod:`dufay.reconstruct` -- the scan-to-color pipeline: grid registration,
  dot-spread estimation, IR intensity extraction, demosaicing, saturation
  compensation, colorimetric conversion.
- :mod:`dufay.metrics` -- trimmed Delta E 2000 statistics and pairwise
  comparison matrices.
- :mod:`dufay.cli` -- the ``dufay`` command-line interface.
"""

__version__ = "0.1.0"
