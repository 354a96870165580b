import numpy as np
import pytest

from dufay import colorimetry as cm
from dufay import reseau as rs
from dufay.errors import ConfigError, GamutInfeasible, ResolutionTooCoarse, SingularSystem


class TestFractions:
    def test_published_split(self):
        g = rs.ReseauGeometry(red_line_fraction=0.421,
                              green_blue_ratio=26.5 / 31.4)
        f = rs.fractions_from_geometry(g)
        assert f.red == pytest.approx(0.421, abs=1e-9)
        assert f.green == pytest.approx(0.265, abs=5e-4)
        assert f.blue == pytest.approx(0.314, abs=5e-4)

    def test_symmetric(self):
        g = rs.ReseauGeometry(red_line_fraction=1 / 3, green_blue_ratio=1.0)
        f = rs.fractions_from_geometry(g)
        assert np.allclose(f.as_array(), 1 / 3)

    def test_formula(self):
        g = rs.ReseauGeometry(red_line_fraction=0.5, green_blue_ratio=3.0)
        f = rs.fractions_from_geometry(g)
        assert np.allclose(f.as_array(), [0.5, 0.375, 0.125])

    def test_sum_exact(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            g = rs.ReseauGeometry(red_line_fraction=rng.uniform(0.05, 0.95),
                                  green_blue_ratio=rng.uniform(0.1, 10))
            assert abs(rs.fractions_from_geometry(g).as_array().sum() - 1) <= 1e-9

    def test_skewed_passes_keep_fractions(self, fractions):
        g = rs.ReseauGeometry(cross_angle_offset_deg=4.0)
        assert np.allclose(rs.fractions_from_geometry(g).as_array(),
                           fractions.as_array())
        screen = rs.build_screen(g, 0.25, (60 * g.pitch_along_um,
                                           60 * g.pitch_across_um))
        assert np.allclose(screen.measured_fractions(), fractions.as_array(),
                           atol=0.01)

    def test_invalid_fractions_rejected(self):
        with pytest.raises(ConfigError):
            rs.AreaFractions(0.5, 0.5, 0.1)
        with pytest.raises(ConfigError):
            rs.AreaFractions(1.0, -0.1, 0.1)


class TestBuildScreen:
    def test_symmetric_converges(self):
        g = rs.ReseauGeometry(red_line_fraction=1 / 3, green_blue_ratio=1.0)
        screen = rs.build_screen(g, 0.25, (60 * g.pitch_along_um,
                                           60 * g.pitch_across_um))
        assert np.allclose(screen.measured_fractions(), 1 / 3, atol=0.01)

    def test_published_geometry_converges(self, geometry, fractions):
        screen = rs.build_screen(geometry, 0.25, (60 * geometry.pitch_along_um,
                                                  60 * geometry.pitch_across_um))
        assert np.allclose(screen.measured_fractions(), fractions.as_array(),
                           atol=0.01)

    def test_deterministic(self, geometry):
        a = rs.build_screen(geometry, 0.3, (500, 500))
        b = rs.build_screen(geometry, 0.3, (500, 500))
        assert np.array_equal(a.labels, b.labels)

    def test_zero_angle_gives_horizontal_lines(self):
        g = rs.ReseauGeometry(print_angle_deg=0.0)
        screen = rs.build_screen(g, 0.3, (400, 400))
        red_rows = np.all(screen.labels == rs.RED, axis=1)
        assert red_rows.any()
        # every row is either all red or contains no red at all
        has_red = (screen.labels == rs.RED).any(axis=1)
        assert np.array_equal(red_rows, has_red)

    def test_resolution_too_coarse(self, geometry):
        with pytest.raises(ResolutionTooCoarse):
            rs.build_screen(geometry, 0.05, (500, 500))

    def test_zero_extent(self, geometry):
        screen = rs.build_screen(geometry, 0.3, (0, 0))
        assert screen.labels.size == 0


class TestMixture:
    def test_tab1_is_greenish(self, tab1, fractions, observer, illum_e):
        mix = cm.xyz_to_xyy(rs.mixture_xyz(tab1, fractions))
        assert mix.chroma.x == pytest.approx(0.369, abs=0.002)
        assert mix.chroma.y == pytest.approx(0.392, abs=0.002)
        wl = cm.dominant_wavelength(mix.chroma, illum_e.whitepoint, observer)
        assert 550 <= wl <= 590

    def test_tab2_is_nearly_neutral(self, tab2, fractions):
        mix = cm.xyz_to_xyy(rs.mixture_xyz(tab2, fractions))
        assert mix.chroma.x == pytest.approx(0.32, abs=0.005)
        assert mix.chroma.y == pytest.approx(0.31, abs=0.005)
        assert mix.chroma.distance(cm.illuminant("C").whitepoint) < 0.025

    def test_equal_primaries(self, fractions):
        white = cm.XyY(cm.Chromaticity(1 / 3, 1 / 3), 100.0)
        p = rs.PrimarySet(white, white, white)
        mix = cm.xyz_to_xyy(rs.mixture_xyz(p, fractions))
        assert mix.chroma.distance(cm.Chromaticity(1 / 3, 1 / 3)) < 1e-12

    def test_linear_in_luminance(self, tab2, fractions):
        base = rs.mixture_xyz(tab2, fractions).as_array()
        doubled = rs.mixture_xyz(tab2.scaled([2.0, 2.0, 2.0]), fractions).as_array()
        assert np.allclose(doubled, 2 * base, rtol=1e-12)


class TestWhiteBalance:
    def test_already_balanced_target(self, tab2, fractions):
        mix = cm.xyz_to_xyy(rs.mixture_xyz(tab2, fractions))
        bal = rs.white_balance(tab2, fractions, mix.chroma)
        s = np.array(bal.scale)
        assert np.allclose(s, s[0], rtol=1e-9)

    def test_solves_to_target(self, tab2, fractions):
        target = cm.illuminant("C").whitepoint
        bal = rs.white_balance(tab2, fractions, target)
        mix = rs.mixture_xyz(bal, fractions)
        xyy = cm.xyz_to_xyy(mix)
        assert xyy.chroma.distance(target) <= 1e-6
        assert mix.Y == pytest.approx(1.0, abs=1e-9)

    def test_outside_triangle(self, tab2, fractions):
        with pytest.raises(GamutInfeasible):
            rs.white_balance(tab2, fractions, cm.Chromaticity(0.9, 0.05))

    def test_collinear_rejected(self, fractions):
        a = cm.XyY(cm.Chromaticity(0.30, 0.30), 10.0)
        b = cm.XyY(cm.Chromaticity(0.35, 0.35), 20.0)
        c = cm.XyY(cm.Chromaticity(0.40, 0.40), 30.0)
        p = rs.PrimarySet(a, b, c)
        assert p.collinear
        with pytest.raises(SingularSystem):
            rs.white_balance(p, fractions, cm.Chromaticity(0.35, 0.34))

    def test_common_scale_absorbed(self, tab2, fractions, illum_e):
        bal1 = rs.white_balance(tab2, fractions, illum_e.whitepoint)
        bal2 = rs.white_balance(tab2.scaled([7.0, 7.0, 7.0]), fractions,
                                illum_e.whitepoint)
        m1 = rs.mixture_xyz(bal1, fractions).as_array()
        m2 = rs.mixture_xyz(bal2, fractions).as_array()
        assert np.allclose(m1, m2, rtol=1e-9)


class TestPrimariesFromSpectra:
    def test_flat_curves_degenerate(self, observer, illum_d65):
        flat = cm.SpectralCurve([380.0, 780.0], [1.0, 1.0])
        p = rs.primaries_from_spectra(flat, flat, flat, illum_d65, observer)
        assert p.collinear
        assert p.red.Y == pytest.approx(100.0, abs=1e-6)
        assert p.red.chroma.distance(illum_d65.whitepoint) < 1e-3

    def test_dye_curves_match_published_red(self, observer, illum_d65,
                                            spectra_paths):
        curves = [cm.SpectralCurve.from_csv(spectra_paths[n])
                  for n in ("red", "green", "blue")]
        p = rs.primaries_from_spectra(*curves, backlight=illum_d65,
                                      observer=observer, source_label="dyes")
        assert p.red.chroma.distance(cm.Chromaticity(0.633, 0.365)) < 0.02
        assert not p.collinear

    def test_backlight_dependence(self, observer, illum_d65, illum_e,
                                  spectra_paths):
        curve = cm.SpectralCurve.from_csv(spectra_paths["red"])
        under_d65 = cm.xyz_to_xyy(cm.spectrum_to_xyz(curve, illum_d65, observer))
        under_e = cm.xyz_to_xyy(cm.spectrum_to_xyz(curve, illum_e, observer))
        assert under_d65.chroma.distance(under_e.chroma) > 0.003


class TestRenderReseau:
    def test_pure_srgb_primaries_three_colors(self, illum_d65):
        g = rs.ReseauGeometry(red_line_fraction=1 / 3, green_blue_ratio=1.0)
        screen = rs.build_screen(g, 0.3, (500, 500))
        p = rs.PrimarySet(cm.XyY(cm.Chromaticity(0.64, 0.33), 21.26),
                          cm.XyY(cm.Chromaticity(0.30, 0.60), 71.52),
                          cm.XyY(cm.Chromaticity(0.15, 0.06), 7.22),
                          source_label="sRGB")
        img = rs.render_reseau(screen, p, illum_d65.whitepoint_xyz())
        colors = np.unique(img.reshape(-1, 3), axis=0)
        assert len(colors) == 3

    def test_structure_matches_map(self, geometry, tab2, illum_d65):
        screen = rs.build_screen(geometry, 0.3, (400, 400))
        img = rs.render_reseau(screen, tab2, illum_d65.whitepoint_xyz())
        assert img.shape == screen.shape + (3,)
        colors = np.unique(img.reshape(-1, 3), axis=0)
        assert len(colors) == 3
        # pixels of equal label share a color
        for lab in range(3):
            patch = img[screen.labels == lab]
            assert (patch == patch[0]).all()

    def test_zero_extent(self, geometry, tab2, illum_d65):
        screen = rs.build_screen(geometry, 0.3, (0, 100))
        img = rs.render_reseau(screen, tab2, illum_d65.whitepoint_xyz())
        assert img.size == 0


class TestConfigs:
    def test_bundled_names(self):
        assert set(rs.bundled_primary_sets()) >= {"tab1", "tab2", "srgb"}

    def test_tab1_values(self, tab1):
        assert tab1.blue.chroma.x == 0.14
        assert tab1.blue.Y == 3.7
        assert tab1.stated_dominant_wavelengths_nm == (601.7, 549.6, 466.0)

    def test_tab2_corrections(self, tab2):
        assert tab2.blue.chroma.x == 0.164
        assert tab2.blue.Y == 8.7

    def test_unknown_name(self):
        with pytest.raises(ConfigError):
            rs.load_primary_set("nonesuch")

    def test_path_load(self, tmp_path, tab2):
        p = tmp_path / "custom.toml"
        p.write_text(
            'source_label = "custom"\n'
            '[red]\nx = 0.6\ny = 0.35\nY = 20.0\n'
            '[green]\nx = 0.25\ny = 0.6\nY = 40.0\n'
            '[blue]\nx = 0.16\ny = 0.1\nY = 8.0\n')
        pset = rs.load_primary_set(str(p))
        assert pset.source_label == "custom"
        assert pset.green.Y == 40.0

    def test_data_dir_search(self, tmp_path, monkeypatch):
        d = tmp_path / "primaries"
        d.mkdir()
        (d / "mine.toml").write_text(
            'source_label = "mine"\n'
            '[red]\nx = 0.6\ny = 0.35\nY = 20.0\n'
            '[green]\nx = 0.25\ny = 0.6\nY = 40.0\n'
            '[blue]\nx = 0.16\ny = 0.1\nY = 8.0\n')
        monkeypatch.setenv("DUFAY_DATA_DIR", str(tmp_path))
        assert rs.load_primary_set("mine").source_label == "mine"

    def test_bad_config(self, tmp_path):
        p = tmp_path / "broken.toml"
        p.write_text('[red]\nx = 0.6\n')
        with pytest.raises(ConfigError):
            rs.load_primary_set(str(p))

    def test_geometry_validation(self):
        with pytest.raises(ConfigError):
            rs.ReseauGeometry(red_line_fraction=1.2)
        with pytest.raises(ConfigError):
            rs.ReseauGeometry(line_density_per_mm=-1)
