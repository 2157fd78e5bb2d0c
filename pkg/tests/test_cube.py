"""Cube container: file round trips, calibration, band masking."""

import numpy as np
import pytest

from hyperfield import cube as hc
from hyperfield.errors import (
    CubeParseError,
    CubeSizeError,
    DegeneratePanelError,
    EmptyBandMaskError,
    ShapeMismatchError,
    UnsupportedFormatError,
)


def random_cube(rng, rows=10, cols=10, bands=19, dtype=np.float32, units="radiance"):
    data = rng.uniform(0.0, 2.0, size=(rows, cols, bands)).astype(dtype)
    if dtype == np.uint16:
        data = rng.integers(0, 4096, size=(rows, cols, bands), dtype=np.uint16)
        units = "raw"
    wl = 400.0 + 2.2 * np.arange(bands)
    return hc.HyperCube(data=data, wavelengths=wl, units=units)


@pytest.mark.parametrize("interleave", ["bip", "bil", "bsq"])
@pytest.mark.parametrize("dtype", [np.float32, np.float64, np.uint16])
def test_round_trip_is_exact(tmp_path, interleave, dtype):
    rng = np.random.default_rng(42)
    cube = random_cube(rng, dtype=dtype)
    hdr = hc.write_cube(cube, tmp_path / "c", interleave=interleave)
    back = hc.read_cube(hdr)
    assert back.data.dtype == cube.data.dtype
    assert np.array_equal(back.data, cube.data)
    assert back.units == cube.units
    # wavelengths are quantised to 0.1 nm in the header
    assert np.max(np.abs(back.wavelengths - cube.wavelengths)) <= 0.05


def test_all_interleaves_store_the_same_cube(tmp_path):
    rng = np.random.default_rng(7)
    cube = random_cube(rng, rows=5, cols=8, bands=11)
    loaded = []
    for il in ("bip", "bil", "bsq"):
        hc.write_cube(cube, tmp_path / il, interleave=il)
        loaded.append(hc.read_cube(tmp_path / (il + ".hdr")))
    assert np.array_equal(loaded[0].data, loaded[1].data)
    assert np.array_equal(loaded[0].data, loaded[2].data)


def test_band_labels_round_trip(tmp_path):
    data = np.zeros((2, 3, 4), dtype=np.float32)
    cube = hc.HyperCube(
        data=data,
        wavelengths=np.arange(4.0),
        units="abundance",
        band_labels=("spike", "leaf", "soil", "shadow"),
    )
    hc.write_cube(cube, tmp_path / "a")
    back = hc.read_cube(tmp_path / "a")
    assert back.band_labels == ("spike", "leaf", "soil", "shadow")


def test_malformed_header_reports_line(tmp_path):
    rng = np.random.default_rng(0)
    hdr = hc.write_cube(random_cube(rng), tmp_path / "c")
    lines = open(hdr).read().splitlines()
    lines.insert(2, "this line has no equals sign")
    open(hdr, "w").write("\n".join(lines) + "\n")
    with pytest.raises(CubeParseError) as err:
        hc.read_cube(hdr)
    assert err.value.line == 3


def test_missing_header_key_is_a_parse_error(tmp_path):
    rng = np.random.default_rng(0)
    hdr = hc.write_cube(random_cube(rng), tmp_path / "c")
    lines = [l for l in open(hdr).read().splitlines() if not l.startswith("units")]
    open(hdr, "w").write("\n".join(lines) + "\n")
    with pytest.raises(CubeParseError, match="units"):
        hc.read_cube(hdr)


def test_wavelength_count_mismatch_is_a_parse_error(tmp_path):
    rng = np.random.default_rng(0)
    hdr = hc.write_cube(random_cube(rng, bands=5), tmp_path / "c")
    text = open(hdr).read().replace("bands = 5", "bands = 6")
    open(hdr, "w").write(text)
    with pytest.raises((CubeParseError, CubeSizeError)):
        hc.read_cube(hdr)


@pytest.mark.parametrize("delta", [-7, +13])
def test_payload_size_mismatch_is_a_size_error(tmp_path, delta):
    rng = np.random.default_rng(0)
    hdr = hc.write_cube(random_cube(rng), tmp_path / "c")
    raw = str(tmp_path / "c.raw")
    blob = open(raw, "rb").read()
    blob = blob[:delta] if delta < 0 else blob + b"\0" * delta
    open(raw, "wb").write(blob)
    with pytest.raises(CubeSizeError, match="bytes"):
        hc.read_cube(hdr)


def test_unsupported_interleave_and_dtype(tmp_path):
    rng = np.random.default_rng(0)
    cube = random_cube(rng)
    with pytest.raises(UnsupportedFormatError):
        hc.write_cube(cube, tmp_path / "c", interleave="bix")
    hdr = hc.write_cube(cube, tmp_path / "c")
    text = open(hdr).read().replace("interleave = bsq", "interleave = weird")
    open(hdr, "w").write(text)
    with pytest.raises(UnsupportedFormatError):
        hc.read_cube(hdr)
    text = open(hdr).read().replace("interleave = weird", "interleave = bsq")
    text = text.replace("data type = float32", "data type = int8")
    open(hdr, "w").write(text)
    with pytest.raises(UnsupportedFormatError):
        hc.read_cube(hdr)


def test_cube_validation_rejects_bad_shapes():
    with pytest.raises(ShapeMismatchError):
        hc.HyperCube(np.zeros((4, 4)), np.arange(4.0), "raw")
    with pytest.raises(ShapeMismatchError):
        hc.HyperCube(np.zeros((2, 2, 3)), np.arange(4.0), "raw")
    with pytest.raises(ShapeMismatchError):
        hc.HyperCube(np.zeros((2, 2, 3)), np.array([1.0, 3.0, 2.0]), "raw")
    with pytest.raises(UnsupportedFormatError):
        hc.HyperCube(np.zeros((2, 2, 3)), np.arange(3.0), "counts")
    bad = np.zeros((2, 2, 3))
    bad[0, 0, 0] = np.nan
    with pytest.raises(ShapeMismatchError):
        hc.HyperCube(bad, np.arange(3.0), "raw")


# ---------------------------------------------------------------------------
# reflectance conversion


def scene_with_panel(reflectance, illumination, panel_reflectance, region):
    """Radiance scene from planted reflectance: panel pixels included."""
    top, left, h, w = region
    refl = reflectance.copy()
    refl[top : top + h, left : left + w, :] = panel_reflectance
    return refl * illumination, refl


def test_panel_pixels_recover_panel_reflectance():
    rng = np.random.default_rng(5)
    bands = 12
    wl = 500.0 + 3.0 * np.arange(bands)
    illum = 0.7 + 0.5 * rng.uniform(size=bands)
    panel_refl = np.full(bands, 0.4)
    region = (1, 1, 3, 3)
    refl = rng.uniform(0.05, 0.9, size=(8, 8, bands))
    radiance, planted = scene_with_panel(refl, illum, panel_refl, region)
    cube = hc.HyperCube(radiance, wl, "radiance")
    out = hc.to_reflectance(cube, region, panel_refl)
    assert out.units == "reflectance"
    top, left, h, w = region
    assert np.allclose(out.data[top : top + h, left : left + w], 0.4, atol=1e-12)
    assert np.max(np.abs(out.data - planted)) < 1e-6


def test_reflectance_is_scale_invariant():
    rng = np.random.default_rng(6)
    bands = 9
    wl = np.arange(bands, dtype=float)
    data = rng.uniform(0.1, 1.0, size=(6, 6, bands))
    panel_refl = rng.uniform(0.3, 0.6, size=bands)
    region = (0, 0, 2, 2)
    a = hc.to_reflectance(hc.HyperCube(data, wl, "radiance"), region, panel_refl)
    b = hc.to_reflectance(hc.HyperCube(data * 37.5, wl, "radiance"), region, panel_refl)
    assert np.max(np.abs(a.data - b.data)) < 1e-12


def test_reflectance_clamps_below_zero_and_keeps_above_one():
    wl = np.arange(3.0)
    data = np.ones((2, 2, 3))
    data[1, 1] = [-0.5, 5.0, 1.0]
    cube = hc.HyperCube(np.abs(data) * 0 + data, wl, "radiance")
    # panel occupies the top row; mean signal 1.0 per band
    out = hc.to_reflectance(cube, (0, 0, 1, 2), np.full(3, 0.5))
    assert out.data[1, 1, 0] == 0.0
    assert out.data[1, 1, 1] == pytest.approx(2.5)
    assert out.data.min() >= 0.0


def test_degenerate_panel_raises():
    wl = np.arange(4.0)
    data = np.ones((4, 4, 4))
    data[:2, :2, 2] = 0.0  # dead band over the panel
    cube = hc.HyperCube(data, wl, "radiance")
    with pytest.raises(DegeneratePanelError, match="band 2"):
        hc.to_reflectance(cube, (0, 0, 2, 2), np.full(4, 0.4))


def test_panel_region_must_fit():
    cube = hc.HyperCube(np.ones((4, 4, 2)), np.arange(2.0), "radiance")
    with pytest.raises(ShapeMismatchError):
        hc.to_reflectance(cube, (3, 3, 2, 2), np.full(2, 0.4))
    with pytest.raises(ShapeMismatchError):
        hc.to_reflectance(cube, (0, 0, 0, 2), np.full(2, 0.4))


def test_uint16_input_converts():
    rng = np.random.default_rng(8)
    data = rng.integers(100, 4000, size=(5, 5, 6), dtype=np.uint16)
    cube = hc.HyperCube(data, np.arange(6.0), "raw")
    out = hc.to_reflectance(cube, (0, 0, 2, 2), np.full(6, 0.5))
    assert out.data.dtype == np.float64
    assert np.all(np.isfinite(out.data))


# ---------------------------------------------------------------------------
# band masking


def test_default_mask_keeps_190_of_240():
    mask = hc.band_mask_from_windows(hc.default_wavelengths())
    assert mask.keep.size == 240
    assert mask.kept == 190


def test_mask_drops_range_edges_and_windows():
    wl = np.array([420.0, 430.0, 600.0, 760.0, 764.9, 765.1, 820.0, 870.0, 880.0])
    mask = hc.band_mask_from_windows(wl)
    assert list(mask.keep) == [False, True, True, False, False, True, False, True, False]


def test_mask_and_convert_commute():
    rng = np.random.default_rng(11)
    bands = 24
    wl = 400.0 + 20.0 * np.arange(bands)
    data = rng.uniform(0.05, 1.5, size=(7, 7, bands))
    region = (0, 0, 3, 3)
    panel_refl = rng.uniform(0.3, 0.5, size=bands)
    mask = hc.band_mask_from_windows(wl, keep_range=(430.0, 810.0))
    cube = hc.HyperCube(data, wl, "radiance")

    a = hc.apply_band_mask(hc.to_reflectance(cube, region, panel_refl), hc.BandMask(mask.keep))
    sub = hc.apply_band_mask(cube, mask)
    b = hc.to_reflectance(sub, region, panel_refl[mask.keep])
    rel = np.max(np.abs(a.data - b.data) / (np.abs(b.data) + 1e-30))
    assert rel < 1e-12
    assert np.array_equal(a.wavelengths, b.wavelengths)


def test_empty_mask_raises():
    cube = hc.HyperCube(np.ones((2, 2, 5)), 400.0 + np.arange(5.0), "radiance")
    with pytest.raises(EmptyBandMaskError):
        hc.apply_band_mask(cube, hc.BandMask(np.zeros(5, dtype=bool)))
    keep_one = np.zeros(5, dtype=bool)
    keep_one[2] = True
    with pytest.raises(EmptyBandMaskError):
        hc.apply_band_mask(cube, hc.BandMask(keep_one))
    with pytest.raises(ShapeMismatchError):
        hc.apply_band_mask(cube, hc.BandMask(np.ones(4, dtype=bool)))


def test_crop_bounds():
    cube = hc.HyperCube(np.arange(24.0).reshape(4, 3, 2), np.arange(2.0), "radiance")
    sub = cube.crop(1, 1, 2, 2)
    assert sub.data.shape == (2, 2, 2)
    assert np.array_equal(sub.data, cube.data[1:3, 1:3])
    with pytest.raises(ShapeMismatchError):
        cube.crop(3, 0, 2, 2)


def test_panel_csv_round_trip(tmp_path):
    path = tmp_path / "panel.csv"
    wavelengths = hc.default_wavelengths()
    reflectance = np.full(wavelengths.size, 0.4)
    hc.write_panel_reflectance_csv(path, wavelengths, reflectance)
    wl, refl = hc.read_panel_reflectance_csv(path)
    assert np.array_equal(refl, reflectance)
    # wavelengths round-trip through the one-decimal file format
    np.testing.assert_allclose(wl, wavelengths, atol=0.05)


def test_panel_csv_shape_check(tmp_path):
    with pytest.raises(ShapeMismatchError):
        hc.write_panel_reflectance_csv(
            tmp_path / "p.csv", np.arange(3.0), np.arange(4.0)
        )


def test_panel_csv_rejects_bad_files(tmp_path):
    from hyperfield.errors import DataError

    bad_header = tmp_path / "h.csv"
    bad_header.write_text("nm,value\n400.0,0.4\n")
    with pytest.raises(DataError, match="header"):
        hc.read_panel_reflectance_csv(bad_header)

    empty = tmp_path / "e.csv"
    empty.write_text("wavelength,reflectance\n")
    with pytest.raises(DataError):
        hc.read_panel_reflectance_csv(empty)

    unsorted = tmp_path / "u.csv"
    unsorted.write_text("wavelength,reflectance\n500.0,0.4\n400.0,0.4\n")
    with pytest.raises(DataError, match="increasing"):
        hc.read_panel_reflectance_csv(unsorted)
