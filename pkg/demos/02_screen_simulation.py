#!/usr/bin/env python3
"""Simulate the color screen: geometry, area fractions, white balance.

Renders the mosaic with the corrected element colors, before and after
solving the luminance multipliers that make the area-weighted mixture
neutral, and writes both PNGs next to this script.
"""
from pathlib import Path

import numpy as np

from dufay import colorimetry as cm
from dufay import fileio
from dufay import reseau as rs

out_dir = Path(__file__).parent / "output"
out_dir.mkdir(exist_ok=True)

geometry = rs.default_geometry()
fractions = rs.fractions_from_geometry(geometry)
print(f"geometry: {geometry.line_density_per_mm} lines/mm at "
      f"{geometry.print_angle_deg} deg, squares ~{geometry.square_width_um} um")
print(f"area fractions: red {fractions.red:.3f}, green {fractions.green:.3f}, "
      f"blue {fractions.blue:.3f}")

tab2 = rs.load_primary_set("tab2")
mix = cm.xyz_to_xyy(rs.mixture_xyz(tab2, fractions))
print(f"unbalanced mixture chromaticity: ({mix.chroma.x:.4f}, {mix.chroma.y:.4f})")

d65 = cm.illuminant("D65")
balanced = rs.white_balance(tab2, fractions, d65.whitepoint)
print("luminance multipliers:", np.round(balanced.scale, 4))
mix_b = cm.xyz_to_xyy(rs.mixture_xyz(balanced, fractions))
print(f"balanced mixture chromaticity:   ({mix_b.chroma.x:.4f}, {mix_b.chroma.y:.4f})"
      f"  (target D65 = ({d65.whitepoint.x}, {d65.whitepoint.y}))")

screen = rs.build_screen(geometry, 1.0, (400, 400))
for label, prims in (("unbalanced", tab2), ("balanced", balanced)):
    img = rs.render_reseau(screen, prims, d65.whitepoint_xyz())
    path = out_dir / f"reseau_{label}.png"
    fileio.write_png8(path, img)
    print(f"wrote {path} ({img.shape[1]}x{img.shape[0]})")

print()
print("measured label fractions on the raster:",
      np.round(screen.measured_fractions(), 4))
