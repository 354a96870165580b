from pathlib import Path

import pytest

from dufay import colorimetry as cm
from dufay import reconstruct as rc
from dufay import reseau as rs
from dufay import synth

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def observer():
    return cm.cie_1931_observer()


@pytest.fixture(scope="session")
def illum_e():
    return cm.illuminant("E")


@pytest.fixture(scope="session")
def illum_d65():
    return cm.illuminant("D65")


@pytest.fixture(scope="session")
def geometry():
    return rs.default_geometry()


@pytest.fixture(scope="session")
def fractions(geometry):
    return rs.fractions_from_geometry(geometry)


@pytest.fixture(scope="session")
def tab1():
    return rs.load_primary_set("tab1")


@pytest.fixture(scope="session")
def tab2():
    return rs.load_primary_set("tab2")


@pytest.fixture(scope="session")
def srgb_set():
    return rs.load_primary_set("srgb")


@pytest.fixture(scope="session")
def balanced_tab2(tab2, fractions, illum_d65):
    return rs.white_balance(tab2, fractions, illum_d65.whitepoint)


@pytest.fixture(scope="session")
def recon_params(balanced_tab2, fractions, illum_d65):
    return rc.ReconstructionParams(primaries=balanced_tab2, fractions=fractions,
                                   simulation_illuminant=illum_d65)


@pytest.fixture(scope="session")
def clean_scan(geometry, balanced_tab2):
    """512 px synthetic chart scan with no degradation, plus its truth."""
    deg = synth.DegradationSpec()
    scan, gt, scene = synth.generate(geometry, balanced_tab2,
                                     size_px=(512, 512), deg=deg, seed=101)
    return scan, gt, deg, 101


@pytest.fixture(scope="session")
def degraded_scan(geometry, balanced_tab2):
    """512 px scan with 1.5 px blur, 2 px smooth distortion and mild noise."""
    deg = synth.DegradationSpec(psf_sigma_px=1.5, displacement_amplitude_px=2.0,
                                noise_sigma=0.002)
    scan, gt, scene = synth.generate(geometry, balanced_tab2,
                                     size_px=(512, 512), deg=deg, seed=102)
    return scan, gt, deg, 102


@pytest.fixture(scope="session")
def photo_scan(geometry, balanced_tab2):
    """Chart scan at photographic saturation levels (for cross-set comparisons)."""
    scan, gt, scene = synth.generate(geometry, balanced_tab2,
                                     size_px=(512, 512),
                                     patch_colors=synth.MUTED_PALETTE, seed=77)
    return scan, gt, synth.DegradationSpec(), 77


@pytest.fixture(scope="session")
def spectra_paths():
    return {name: DATA / f"{name}_transmission.csv"
            for name in ("red", "green", "blue")}
