"""Image comparison: per-pixel Delta E 2000 maps, trimmed statistics and
pairwise matrices over sets of reconstructions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from io import StringIO

import numpy as np

from . import colorimetry as cm
from .errors import DimensionMismatch, EmptyInput


@dataclass(frozen=True)
class DeltaEReport:
    """Trimmed mean and max of a Delta E plane."""

    avg: float
    max: float
    trim_fraction: float
    pixel_count: int

    def __post_init__(self):
        if not 0.0 <= self.trim_fraction < 0.5:
            raise ValueError(f"trim fraction {self.trim_fraction} outside [0, 0.5)")
        if self.avg > self.max + 1e-12:
            raise ValueError("trimmed mean exceeds trimmed max")


def delta_e_map(a: np.ndarray, b: np.ndarray, whitepoint: cm.XYZ) -> np.ndarray:
    """Per-pixel CIEDE2000 between two XYZ images of equal dimensions."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    lab_a = cm.xyz_image_to_lab(a, whitepoint)
    lab_b = cm.xyz_image_to_lab(b, whitepoint)
    return cm.delta_e_2000_image(lab_a, lab_b)


def trimmed_stats(plane: np.ndarray, trim_fraction: float = 0.01) -> DeltaEReport:
    """Drop the ceil(trim * N) largest values, report mean and max of the rest.

    Matches a full-sort oracle exactly: the retained multiset is the N - k
    smallest values (ties broken by pixel index).
    """
    values = np.asarray(plane, dtype=np.float64).ravel()
    if values.size == 0:
        raise EmptyInput("cannot compute statistics of an empty plane")
    if not 0.0 <= trim_fraction < 0.5:
        raise ValueError(f"trim fraction {trim_fraction} outside [0, 0.5)")
    drop = math.ceil(trim_fraction * values.size) if trim_fraction > 0 else 0
    kept = np.sort(values, kind="stable")[:values.size - drop]
    if kept.size == 0:
        raise EmptyInput(f"trim {trim_fraction} drops all {values.size} pixels")
    return DeltaEReport(float(kept.mean()), float(kept[-1]),
                        trim_fraction, int(kept.size))


@dataclass
class PairwiseMatrix:
    """Lower-triangular grid of trimmed reports for labeled reconstructions."""

    labels: list[str]
    entries: dict[tuple[int, int], DeltaEReport]

    def get(self, a: str, b: str) -> DeltaEReport:
        i, j = self.labels.index(a), self.labels.index(b)
        if i == j:
            raise KeyError("diagonal entries are not stored")
        return self.entries[(max(i, j), min(i, j))]

    def to_csv(self) -> str:
        out = StringIO()
        out.write("label_a,label_b,avg_de,max_de,trim,pixels\n")
        for (i, j), rep in sorted(self.entries.items()):
            out.write(f"{self.labels[i]},{self.labels[j]},{rep.avg:.4f},"
                      f"{rep.max:.4f},{rep.trim_fraction:g},{rep.pixel_count}\n")
        return out.getvalue()

    def to_text(self) -> str:
        """Row/column table with Avg and Max columns per pair."""
        cols = self.labels[:-1]
        width = max(12, max(len(c) for c in self.labels) + 2)
        out = StringIO()
        out.write(" " * width)
        for c in cols:
            out.write(f"{c:>{2 * 9}s}")
        out.write("\n" + " " * width)
        for _ in cols:
            out.write(f"{'Avg':>9s}{'Max':>9s}")
        out.write("\n")
        for i in range(1, len(self.labels)):
            out.write(f"{self.labels[i]:<{width}s}")
            for j in range(len(cols)):
                if j < i:
                    rep = self.entries[(i, j)]
                    out.write(f"{rep.avg:9.2f}{rep.max:9.2f}")
                else:
                    out.write(" " * 18)
            out.write("\n")
        return out.getvalue()


def pairwise_matrix(images: list[tuple[str, np.ndarray]], whitepoint: cm.XYZ,
                    trim_fraction: float = 0.01) -> PairwiseMatrix:
    """Trimmed Delta E reports between every pair of labeled XYZ images."""
    if len(images) < 2:
        raise EmptyInput("need at least two images to compare")
    labels = [lbl for lbl, _ in images]
    shape = np.asarray(images[0][1]).shape
    for lbl, img in images[1:]:
        if np.asarray(img).shape != shape:
            raise DimensionMismatch(f"{lbl}: shape {np.asarray(img).shape} != {shape}")
    labs = [cm.xyz_image_to_lab(np.asarray(img, np.float64), whitepoint)
            for _, img in images]
    entries = {}
    for i in range(1, len(images)):
        for j in range(i):
            plane = cm.delta_e_2000_image(labs[i], labs[j])
            entries[(i, j)] = trimmed_stats(plane, trim_fraction)
    return PairwiseMatrix(labels, entries)
