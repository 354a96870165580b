#!/usr/bin/env python3
"""Reconstruct one scan under every bundled primary set and compare.

Reproduces the comparison-table structure over pairwise trimmed Delta E 2000:
raw primary sets disagree mostly by overall color cast; white-balancing the
screen collapses that disagreement by an order of magnitude.
"""
from dufay import colorimetry as cm
from dufay import metrics as mx
from dufay import reconstruct as rc
from dufay import reseau as rs
from dufay import synth

geometry = rs.default_geometry()
fractions = rs.fractions_from_geometry(geometry)
d65 = cm.illuminant("D65")
film = rs.white_balance(rs.load_primary_set("tab2"), fractions, d65.whitepoint)

scan, _, _ = synth.generate(geometry, film, size_px=(384, 384),
                            patch_colors=synth.MUTED_PALETTE, seed=5)

sets = rs.bundled_primary_sets()
print("primary sets:", ", ".join(sets))

reconstructions = {}
for balanced in (False, True):
    images = []
    for name in sets:
        pset = rs.load_primary_set(name)
        prims = (rs.white_balance(pset, fractions, d65.whitepoint)
                 if balanced else pset)
        params = rc.ReconstructionParams(primaries=prims, fractions=fractions,
                                         simulation_illuminant=d65)
        xyz, _ = rc.run_pipeline(scan, geometry, params)
        images.append((name, xyz))
    reconstructions[balanced] = images

wp = d65.whitepoint_xyz()
for balanced, images in reconstructions.items():
    matrix = mx.pairwise_matrix(images, wp, trim_fraction=0.01)
    title = "screen white-balanced" if balanced else "raw primary sets"
    print(f"\npairwise trimmed Delta E 2000 -- {title}:")
    print(matrix.to_text())
