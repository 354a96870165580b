"""The ``dufay`` command line: screen simulation, primary analysis, synthetic
scan generation, reconstruction and reconstruction comparison.

Every subcommand accepts ``--config FILE`` with TOML keys matching its option
names (dashes as underscores); explicit flags override the file.  Exit codes:
0 success, 1 runtime or pipeline failure, 2 configuration or usage error.
"""
from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import colorimetry as cm
from . import fileio
from . import metrics as mx
from . import reconstruct as rc
from . import reseau as rs
from . import synth as sy
from .errors import ConfigError, DufayError


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def _merged(ctx, config: dict):
    """Option values with config-file fallback for non-explicit flags."""
    out = {}
    for key, value in ctx.params.items():
        src = ctx.get_parameter_source(key)
        if (src is not None and src.name != "COMMANDLINE"
                and key in config):
            out[key] = config[key]
        else:
            out[key] = value
    return out


def _parse_whitepoint(text: str) -> cm.Chromaticity:
    """Whitepoint from an illuminant name, a CCT in kelvin, or 'x,y'."""
    if "," in text:
        x, y = (float(v) for v in text.split(","))
        return cm.Chromaticity(x, y)
    try:
        return cm.illuminant(text).whitepoint
    except KeyError:
        pass
    try:
        cct = float(text)
    except ValueError:
        raise ConfigError(f"unknown whitepoint {text!r}") from None
    return cm.daylight_whitepoint(cct)


def _parse_illuminant(text: str) -> cm.Illuminant:
    try:
        return cm.illuminant(text)
    except KeyError:
        pass
    try:
        cct = float(text)
    except ValueError:
        raise ConfigError(f"unknown illuminant {text!r}") from None
    return cm.illuminant_from_cct(cct)


def _load_primaries(name, spectra, illum) -> rs.PrimarySet:
    if spectra:
        curves = [cm.SpectralCurve.from_csv(p) for p in spectra]
        return rs.primaries_from_spectra(*curves, backlight=illum,
                                         observer=cm.cie_1931_observer(),
                                         source_label="spectral:" +
                                         ",".join(Path(p).stem for p in spectra))
    return rs.load_primary_set(name)


def _balance(pset, geometry, target_text):
    fractions = rs.fractions_from_geometry(geometry)
    if target_text in (None, "", "none"):
        return pset, fractions
    target = _parse_whitepoint(target_text)
    return rs.white_balance(pset, fractions, target), fractions


def run_guarded(fn):
    """Run a command body mapping package errors onto exit codes."""
    try:
        fn()
    except (ConfigError, tomllib.TOMLDecodeError) as exc:
        _fail(2, str(exc))
    except rc.StageFailure as exc:
        _fail(1, str(exc))
    except DufayError as exc:
        _fail(1, str(exc))
    except FileNotFoundError as exc:
        _fail(2, str(exc))


@click.group()
@click.option("--threads", type=int, default=1, show_default=True,
              help="Cap on worker threads for region-parallel stages.")
@click.pass_context
def main(ctx, threads):
    """Color-screen simulation and reconstruction for Dufaycolor scans."""
    ctx.ensure_object(dict)
    ctx.obj["threads"] = max(1, threads)


@main.command("simulate-reseau")
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--primaries", default="tab2", show_default=True,
              help="Bundled set name or TOML path.")
@click.option("--spectra", nargs=3, type=click.Path(exists=True), default=None,
              help="Red, green, blue transmission CSVs (overrides --primaries).")
@click.option("--geometry", default="default", show_default=True)
@click.option("--resolution", type=float, default=1.0, show_default=True,
              help="Raster resolution in px/um.")
@click.option("--extent", default="500x500", show_default=True,
              help="Simulated area in um, WxH.")
@click.option("--white-balance", default=None,
              help="Neutral target (illuminant name, CCT, or x,y).")
@click.option("--illuminant", default="D65", show_default=True,
              help="Simulation illuminant (name or CCT).")
@click.option("--out", type=click.Path(), required=True)
@click.pass_context
def simulate_reseau(ctx, **kwargs):
    """Render the simulated color screen to an 8-bit PNG."""

    def body():
        p = _merged(ctx, _load_config(kwargs["config"]))
        geometry = rs.load_geometry(p["geometry"])
        illum = _parse_illuminant(p["illuminant"])
        pset = _load_primaries(p["primaries"], p["spectra"], illum)
        prims, _ = _balance(pset, geometry, p["white_balance"])
        try:
            w, h = (float(v) for v in str(p["extent"]).lower().split("x"))
        except ValueError:
            raise ConfigError(f"bad extent {p['extent']!r}; expected WxH") from None
        screen = rs.build_screen(geometry, float(p["resolution"]), (w, h))
        img = rs.render_reseau(screen, prims, illum.whitepoint_xyz())
        fileio.write_png8(p["out"], img)
        click.echo(f"wrote {p['out']} ({img.shape[1]}x{img.shape[0]} px)")

    run_guarded(body)


@main.command("analyze-primaries")
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--primaries", default="tab2", show_default=True)
@click.option("--spectra", nargs=3, type=click.Path(exists=True), default=None)
@click.option("--geometry", default="default", show_default=True)
@click.option("--whitepoint", default="E", show_default=True,
              help="Dominant-wavelength reference whitepoint.")
@click.option("--illuminant", default="D65", show_default=True,
              help="Backlight for spectral primaries.")
@click.pass_context
def analyze_primaries(ctx, **kwargs):
    """Report per-primary XYZ, dominant wavelengths and mixture neutrality."""

    def body():
        p = _merged(ctx, _load_config(kwargs["config"]))
        geometry = rs.load_geometry(p["geometry"])
        illum = _parse_illuminant(p["illuminant"])
        pset = _load_primaries(p["primaries"], p["spectra"], illum)
        wp = _parse_whitepoint(p["whitepoint"])
        observer = cm.cie_1931_observer()
        fractions = rs.fractions_from_geometry(geometry)

        click.echo(f"primary set: {pset.source_label}")
        click.echo(f"area fractions: red {fractions.red:.3f}, "
                   f"green {fractions.green:.3f}, blue {fractions.blue:.3f}")
        stated = pset.stated_dominant_wavelengths_nm or (None, None, None)
        for name, prim, hist in zip(rs.LABEL_NAMES, pset, stated):
            xyz = cm.xyy_to_xyz(prim)
            wl = cm.dominant_wavelength(prim.chroma, wp, observer)
            line = (f"{name:>5s}: x={prim.chroma.x:.3f} y={prim.chroma.y:.3f} "
                    f"Y={prim.Y:.1f}  XYZ=({xyz.X:.2f}, {xyz.Y:.2f}, {xyz.Z:.2f})  "
                    f"dominant {wl:.1f} nm")
            if hist is not None and abs(wl - hist) > 1.0:
                line += f"  [differs from stated {hist:.1f} nm]"
            click.echo(line)

        mix = cm.xyz_to_xyy(rs.mixture_xyz(pset, fractions))
        dist = mix.chroma.distance(wp)
        flag = "neutral" if dist <= 0.02 else "non-neutral"
        click.echo(f"mixture: x={mix.chroma.x:.4f} y={mix.chroma.y:.4f} "
                   f"distance to whitepoint {dist:.4f} ({flag})")
        try:
            wl = cm.dominant_wavelength(mix.chroma, wp, observer)
            click.echo(f"mixture dominant wavelength: {wl:.1f} nm")
        except DufayError:
            click.echo("mixture dominant wavelength: undefined (at whitepoint)")

    run_guarded(body)


@main.command("synth")
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--out", type=click.Path(), required=True,
              help="Output TIFF (R, G, B, IR pages); sidecar JSON beside it.")
@click.option("--gt-out", type=click.Path(), default=None,
              help="Ground-truth prefix (.json/.npy); default: <out>_gt.")
@click.option("--primaries", default="tab2", show_default=True)
@click.option("--geometry", default="default", show_default=True)
@click.option("--white-balance", default="D65", show_default=True)
@click.option("--size", default="512x512", show_default=True, help="Scan size in px.")
@click.option("--pixels-per-um", type=float, default=sy.DEFAULT_PIXELS_PER_UM,
              show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--sigma", type=float, default=0.0, show_default=True,
              help="Blur sigma at image center, px.")
@click.option("--sigma-corner", type=float, default=None,
              help="Blur sigma at corners (default: same as center).")
@click.option("--displacement", type=float, default=0.0, show_default=True,
              help="Smooth distortion amplitude, px.")
@click.option("--noise", type=float, default=0.0, show_default=True,
              help="Additive Gaussian noise sigma, normalized units.")
@click.pass_context
def synth_cmd(ctx, **kwargs):
    """Generate a synthetic scan of a color chart with known ground truth."""

    def body():
        p = _merged(ctx, _load_config(kwargs["config"]))
        geometry = rs.load_geometry(p["geometry"])
        pset = rs.load_primary_set(p["primaries"])
        prims, _ = _balance(pset, geometry, p["white_balance"] or "D65")
        try:
            w, h = (int(v) for v in str(p["size"]).lower().split("x"))
        except ValueError:
            raise ConfigError(f"bad size {p['size']!r}; expected WxH") from None
        deg = sy.DegradationSpec(
            psf_sigma_px=float(p["sigma"]),
            psf_sigma_corner_px=p["sigma_corner"],
            displacement_amplitude_px=float(p["displacement"]),
            noise_sigma=float(p["noise"]),
        )
        scan, gt, _ = sy.generate(geometry, prims, size_px=(w, h),
                                  pixels_per_um=float(p["pixels_per_um"]),
                                  deg=deg, seed=int(p["seed"]))
        out = Path(p["out"])
        scan.save(out, seed=int(p["seed"]), degradation=deg)
        gt_prefix = Path(p["gt_out"]) if p["gt_out"] else out.with_name(out.stem + "_gt")
        gt.save(gt_prefix)
        click.echo(f"wrote {out} + sidecar and {gt_prefix}.json/.npy")

    run_guarded(body)


@main.command("reconstruct")
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--scan", type=click.Path(exists=True), required=True,
              help="Scan TIFF with JSON sidecar.")
@click.option("--primaries", default="tab2", show_default=True)
@click.option("--spectra", nargs=3, type=click.Path(exists=True), default=None)
@click.option("--geometry", default="default", show_default=True)
@click.option("--illuminant", default="D65", show_default=True)
@click.option("--white-balance", default="D65", show_default=True,
              help="Neutral target, or 'none' for unbalanced primaries.")
@click.option("--gain", default="1,1,1", show_default=True,
              help="Manual chromatic gain triple r,g,b.")
@click.option("--no-saturation-compensation", is_flag=True, default=False)
@click.option("--no-exposure-normalization", is_flag=True, default=False)
@click.option("--out-xyz", type=click.Path(), required=True)
@click.option("--out-srgb", type=click.Path(), default=None,
              help="sRGB rendering (.tif 16-bit or .png 8-bit).")
@click.option("--report", "report_path", type=click.Path(), default=None)
@click.pass_context
def reconstruct_cmd(ctx, **kwargs):
    """Run the reconstruction pipeline on a scan."""

    def body():
        p = _merged(ctx, _load_config(kwargs["config"]))
        geometry = rs.load_geometry(p["geometry"])
        illum = _parse_illuminant(p["illuminant"])
        pset = _load_primaries(p["primaries"], p["spectra"], illum)
        prims, fractions = _balance(pset, geometry, p["white_balance"])
        try:
            gain = tuple(float(v) for v in str(p["gain"]).split(","))
            if len(gain) != 3:
                raise ValueError
        except ValueError:
            raise ConfigError(f"bad gain {p['gain']!r}; expected r,g,b") from None
        params = rc.ReconstructionParams(
            primaries=prims, fractions=fractions, simulation_illuminant=illum,
            exposure_normalization=not p["no_exposure_normalization"],
            saturation_compensation=not p["no_saturation_compensation"],
            chromatic_gain=gain)
        scan, _ = sy.ScanImage.load(p["scan"])
        try:
            xyz, report = rc.run_pipeline(scan, geometry, params,
                                          threads=ctx.obj.get("threads", 1))
        except rc.StageFailure as exc:
            if p["report_path"]:
                fileio.write_json(p["report_path"], exc.report)
            raise
        fileio.write_xyz_tiff(p["out_xyz"], xyz)
        if p["out_srgb"]:
            srgb, clip_frac = rc.to_srgb(xyz, params)
            report["srgb_clip_fraction"] = clip_frac
            if str(p["out_srgb"]).lower().endswith(".png"):
                fileio.write_png8(p["out_srgb"], np.round(srgb * 255).astype(np.uint8))
            else:
                fileio.write_srgb16_tiff(p["out_srgb"], srgb)
        if p["report_path"]:
            fileio.write_json(p["report_path"], report)
        click.echo(f"wrote {p['out_xyz']}"
                   + (f" and {p['out_srgb']}" if p["out_srgb"] else ""))

    run_guarded(body)


@main.command("compare")
@click.argument("inputs", nargs=-1, type=click.Path(exists=True))
@click.option("--labels", default=None, help="Comma-separated labels.")
@click.option("--trim", type=float, default=0.01, show_default=True)
@click.option("--whitepoint", default="D65", show_default=True)
@click.option("--csv", "csv_path", type=click.Path(), default=None)
@click.pass_context
def compare_cmd(ctx, inputs, labels, trim, whitepoint, csv_path):
    """Pairwise trimmed Delta E 2000 matrix over XYZ TIFF reconstructions."""

    def body():
        if len(inputs) < 2:
            raise ConfigError(f"need at least two inputs, got {len(inputs)}")
        names = ([s.strip() for s in labels.split(",")] if labels
                 else [Path(p).stem for p in inputs])
        if len(names) != len(inputs):
            raise ConfigError(f"{len(names)} labels for {len(inputs)} inputs")
        images = []
        shape = None
        for name, path in zip(names, inputs):
            img = fileio.read_xyz_tiff(path)
            if shape is None:
                shape = img.shape
            elif img.shape != shape:
                raise ConfigError(
                    f"{path}: shape {img.shape[:2]} differs from {shape[:2]}")
            images.append((name, img))
        wp = cm.xyy_to_xyz(cm.XyY(_parse_whitepoint(whitepoint), 1.0))
        matrix = mx.pairwise_matrix(images, wp, trim)
        click.echo(matrix.to_text())
        if csv_path:
            Path(csv_path).write_text(matrix.to_csv(), encoding="utf-8",
                                      newline="\n")
            click.echo(f"wrote {csv_path}")

    run_guarded(body)


if __name__ == "__main__":
    main()
