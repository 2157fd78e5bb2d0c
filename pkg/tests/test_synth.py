"""Generator checks: planted truth must be exactly self-consistent."""

import functools

import numpy as np
import pytest

from hyperfield.cube import apply_band_mask, band_mask_from_windows, to_reflectance
from hyperfield.endmember import svmax
from hyperfield.errors import ConfigError
from hyperfield.mlp import (
    SplitSpec,
    TrainConfig,
    predict,
    r2_score,
    records_to_arrays,
    stratified_split,
    train,
)
from hyperfield.subplot import SubPlotRecord, middle_third_ratio, window_grid_shape
from hyperfield.synth import (
    CROP_LABELS,
    LIBRARY_LABELS,
    SCENE_LABELS,
    RegressionSpec,
    SynthSpec,
    endmember_library,
    generate_reference_cube,
    generate_regression_set,
    generate_scene,
    illumination_spectrum,
)
from hyperfield.unmix import unmix_cube


@functools.lru_cache(maxsize=None)
def small_scene():
    spec = SynthSpec(
        seed=3,
        grid_rows=2,
        grid_cols=3,
        plot_height_px=24,
        plot_width_px=45,
        alley_px=10,
        jitter_px=2,
        snr_db=35.0,
        target_subplot_r2=0.85,
        keep_noise=True,
    )
    return spec, *generate_scene(spec)


# ---------------------------------------------------------------------------
# spec validation

@pytest.mark.parametrize(
    "kwargs",
    [
        dict(grid_rows=0),
        dict(plot_height_px=10, window_px=15),
        dict(alley_px=1),
        dict(jitter_px=6, alley_px=12),
        dict(density_range=(0.0, 0.5)),
        dict(density_range=(0.6, 0.4)),
        dict(density_range=(0.3, 1.0)),
        dict(margin_boost=0.8),
        dict(side_heavy_fraction=1.2),
        dict(snr_db=0.0),
        dict(yield_per_sl_pixel=0.0),
        dict(target_subplot_r2=0.85, yield_noise_sigma=0.1),
        dict(target_subplot_r2=1.0),
        dict(yield_noise_sigma=-0.1),
    ],
)
def test_spec_rejects_bad_values(kwargs):
    with pytest.raises(ConfigError):
        SynthSpec(**kwargs)


def test_scene_shape_accounts_for_margins_and_alleys():
    spec = SynthSpec(grid_rows=2, grid_cols=3, plot_height_px=30,
                     plot_width_px=90, alley_px=12)
    rows, cols = spec.scene_shape
    assert rows == 40 + 2 * 30 + 12 + 16
    assert cols == 16 + 3 * 90 + 2 * 12 + 16


def test_library_labels_and_positivity():
    lib = endmember_library()
    assert lib.labels == LIBRARY_LABELS
    assert np.all(lib.spectra > 0)
    assert np.all(lib.spectra < 1)
    illum = illumination_spectrum(lib.wavelengths)
    assert np.all(illum > 0)


# ---------------------------------------------------------------------------
# planted truth consistency

def test_same_seed_is_bit_identical():
    spec = small_scene()[0]
    cube_a, truth_a = generate_scene(spec)
    cube_b, truth_b = generate_scene(spec)
    assert np.array_equal(cube_a.data, cube_b.data)
    assert truth_a.plot_yields == truth_b.plot_yields
    for pid in truth_a.boxes:
        assert truth_a.boxes[pid] == truth_b.boxes[pid]


def test_window_yields_sum_to_plot_yield():
    _, _, truth = small_scene()
    for pid, plot_yield in truth.plot_yields.items():
        total = float(truth.window_yields[pid].sum())
        assert abs(total - plot_yield) <= 1e-9 * max(plot_yield, 1.0)


def test_cube_minus_noise_is_exact_mixture():
    _, cube, truth = small_scene()
    assert truth.noiseless is not None and truth.noise is not None
    assert np.array_equal(cube.data, truth.noiseless + truth.noise)
    rebuilt = np.einsum(
        "rce,be->rcb", truth.abundances.values, truth.endmembers.spectra
    )
    rebuilt *= truth.illumination
    assert np.array_equal(rebuilt, truth.noiseless)


def test_realized_snr_close_to_requested():
    spec, _, truth = small_scene()
    assert abs(truth.realized_snr_db - spec.snr_db) < 0.5


def test_noiseless_scene_has_no_noise_bookkeeping():
    _, truth = generate_scene(SynthSpec(
        seed=1, grid_rows=1, grid_cols=2, plot_height_px=20,
        plot_width_px=40, window_px=10, alley_px=8,
    ))
    assert truth.realized_snr_db is None
    assert truth.yield_noise_sigma == 0.0
    assert truth.theoretical_r2 is None


def test_sl_mask_matches_abundance_rule():
    _, _, truth = small_scene()
    values = truth.abundances.values
    spike = values[:, :, SCENE_LABELS.index("spike")]
    leaf = values[:, :, SCENE_LABELS.index("leaf")]
    assert np.array_equal(truth.sl_mask, spike + leaf > 0.5)


def test_abundances_live_on_the_simplex():
    _, _, truth = small_scene()
    values = truth.abundances.values
    assert np.all(values >= 0)
    np.testing.assert_allclose(values.sum(axis=2), 1.0, atol=1e-12)


def test_panel_region_is_pure_panel():
    _, _, truth = small_scene()
    top, left, h, w = truth.panel_region
    patch = truth.abundances.values[top : top + h, left : left + w]
    assert np.all(patch[:, :, SCENE_LABELS.index("panel")] == 1.0)
    assert np.all(truth.panel_reflectance == 0.4)


def test_boxes_stay_inside_scene_and_apart():
    spec, cube, truth = small_scene()
    rows, cols = cube.data.shape[:2]
    boxes = list(truth.boxes.values())
    for box in boxes:
        assert 0 <= box.top and box.top + box.height <= rows
        assert 0 <= box.left and box.left + box.width <= cols
        assert (box.height, box.width) == (spec.plot_height_px, spec.plot_width_px)
    for i, a in enumerate(boxes):
        for b in boxes[i + 1 :]:
            row_gap = a.top + a.height <= b.top or b.top + b.height <= a.top
            col_gap = a.left + a.width <= b.left or b.left + b.width <= a.left
            assert row_gap or col_gap


def test_boxes_jitter_is_bounded():
    spec, _, truth = small_scene()
    for pid, box in truth.boxes.items():
        gr, gc = truth.plot_map.positions[pid]
        nominal_top = 40 + gr * spec.pitch_row_px
        nominal_left = 16 + gc * spec.pitch_col_px
        assert abs(box.top - nominal_top) <= spec.jitter_px
        assert abs(box.left - nominal_left) <= spec.jitter_px


def test_plot_ids_cover_the_grid():
    spec, _, truth = small_scene()
    assert sorted(truth.boxes) == sorted(truth.plot_map.positions)
    assert len(truth.boxes) == spec.grid_rows * spec.grid_cols
    assert "P0000" in truth.boxes
    assert f"P{spec.grid_rows - 1:02d}{spec.grid_cols - 1:02d}" in truth.boxes


def test_window_yield_grids_match_tiling():
    spec, _, truth = small_scene()
    shape = window_grid_shape(spec.plot_height_px, spec.plot_width_px, spec.window_px)
    for pid, grid in truth.window_yields.items():
        assert grid.shape == shape
        assert np.all(grid >= 0)


def test_target_ratio_solves_the_noise_level():
    spec, _, truth = small_scene()
    assert truth.theoretical_r2 == pytest.approx(spec.target_subplot_r2, abs=1e-12)
    counts = []
    for pid, grid in truth.window_yields.items():
        # recover counts: per-window yield / (ypp * plot factor); use the
        # stored mask instead, it is the ground truth
        box = truth.boxes[pid]
        crop = truth.sl_mask[box.top : box.top + box.height,
                             box.left : box.left + box.width]
        from hyperfield.subplot import tile_plot

        for w in tile_plot(box.height, box.width, spec.window_px):
            n = int(crop[w.top : w.top + w.height, w.left : w.left + w.width].sum())
            if n > 0:
                counts.append(n)
    counts = np.asarray(counts, dtype=np.float64)
    var_n, mean_sq = counts.var(), np.mean(counts**2)
    expected = var_n / (var_n + mean_sq * truth.yield_noise_sigma**2)
    assert expected == pytest.approx(spec.target_subplot_r2, abs=1e-12)


def test_explicit_noise_sigma_reports_its_ratio():
    _, truth = generate_scene(SynthSpec(
        seed=9, grid_rows=1, grid_cols=2, plot_height_px=20, plot_width_px=40,
        window_px=10, alley_px=8, yield_noise_sigma=0.25,
    ))
    assert truth.yield_noise_sigma == 0.25
    assert 0.0 < truth.theoretical_r2 < 1.0


# ---------------------------------------------------------------------------
# downstream recovery on noiseless scenes

def test_unmix_recovers_planted_abundances():
    spec = SynthSpec(seed=5, grid_rows=2, grid_cols=2, plot_height_px=24,
                     plot_width_px=45, alley_px=10, jitter_px=2)
    cube, truth = generate_scene(spec)
    reflectance = to_reflectance(cube, truth.panel_region, truth.panel_reflectance)
    estimate, _ = unmix_cube(reflectance, truth.endmembers)
    err = np.max(np.abs(estimate.values - truth.abundances.values))
    assert err < 1e-6


def _records_from_truth(truth, window_px):
    from hyperfield.subplot import tile_plot

    records = []
    for pid, box in truth.boxes.items():
        crop = truth.sl_mask[box.top : box.top + box.height,
                             box.left : box.left + box.width]
        grid = truth.window_yields[pid]
        for w in tile_plot(box.height, box.width, window_px):
            n = int(crop[w.top : w.top + w.height, w.left : w.left + w.width].sum())
            if n == 0:
                continue
            wr, wc = w.row, w.col
            records.append(SubPlotRecord(
                plot_id=pid, window_row=wr, window_col=wc, n_sl=n,
                yield_g=float(grid[wr, wc]),
                features=np.array([float(n)]),
            ))
    return records


def test_uniform_density_classifies_uniform():
    spec = SynthSpec(seed=21, grid_rows=4, grid_cols=4)
    _, truth = generate_scene(spec)
    shape = window_grid_shape(spec.plot_height_px, spec.plot_width_px, spec.window_px)
    records = _records_from_truth(truth, spec.window_px)
    labels = []
    for pid in truth.boxes:
        plot_records = [r for r in records if r.plot_id == pid]
        _, label = middle_third_ratio(plot_records, *shape)
        labels.append(label)
    uniform = sum(1 for v in labels if v == "uniform")
    assert uniform >= 0.7 * len(labels)


def test_margin_boost_classifies_side_heavy():
    spec = SynthSpec(seed=22, grid_rows=4, grid_cols=4, margin_boost=1.8,
                     side_heavy_fraction=1.0)
    _, truth = generate_scene(spec)
    assert all(truth.side_heavy.values())
    shape = window_grid_shape(spec.plot_height_px, spec.plot_width_px, spec.window_px)
    records = _records_from_truth(truth, spec.window_px)
    labels = []
    for pid in truth.boxes:
        plot_records = [r for r in records if r.plot_id == pid]
        _, label = middle_third_ratio(plot_records, *shape)
        labels.append(label)
    heavy = sum(1 for v in labels if v == "one-side-heavy")
    assert heavy >= 0.7 * len(labels)


def test_side_heavy_fraction_counts_plots():
    spec = SynthSpec(seed=23, grid_rows=2, grid_cols=3, plot_height_px=24,
                     plot_width_px=45, alley_px=10, margin_boost=1.5,
                     side_heavy_fraction=0.5)
    _, truth = generate_scene(spec)
    assert sum(truth.side_heavy.values()) == 3


# ---------------------------------------------------------------------------
# reference cube

def test_reference_cube_contains_exact_pure_patches():
    cube, endmembers, regions = generate_reference_cube(seed=4)
    assert endmembers.labels == CROP_LABELS
    assert cube.units == "reflectance"
    for i, label in enumerate(CROP_LABELS):
        top, left, h, w = regions[label]
        patch = cube.data[top : top + h, left : left + w]
        assert np.array_equal(patch, np.broadcast_to(
            endmembers.spectra[:, i], patch.shape))


def test_reference_cube_pixels_stay_in_hull():
    cube, endmembers, _ = generate_reference_cube(seed=4)
    flat = cube.data.reshape(-1, cube.data.shape[2])
    lo = endmembers.spectra.min(axis=1) - 1e-12
    hi = endmembers.spectra.max(axis=1) + 1e-12
    assert np.all(flat >= lo) and np.all(flat <= hi)


def test_volume_extraction_finds_the_patches():
    cube, endmembers, _ = generate_reference_cube(seed=8)
    flat = cube.data.reshape(-1, cube.data.shape[2]).T
    found = svmax(flat, count=len(CROP_LABELS), wavelengths=cube.wavelengths)
    planted = {tuple(endmembers.spectra[:, i]) for i in range(len(CROP_LABELS))}
    recovered = {tuple(found.spectra[:, i]) for i in range(found.spectra.shape[1])}
    assert planted == recovered


def test_reference_cube_rejects_tiny_patches():
    with pytest.raises(ConfigError):
        generate_reference_cube(patch_px=1)


# ---------------------------------------------------------------------------
# planted-target regression sets

def test_regression_spec_validation():
    with pytest.raises(ConfigError):
        RegressionSpec(target_r2=0.8, noise_sigma=0.1)
    with pytest.raises(ConfigError):
        RegressionSpec(target_r2=1.5)
    with pytest.raises(ConfigError):
        RegressionSpec(noise_sigma=-1.0)


def test_regression_targets_follow_the_planted_map():
    records, truth = generate_regression_set(RegressionSpec(seed=6, noise_sigma=0.0))
    assert truth.noise_sigma == 0.0
    assert truth.theoretical_r2 == 1.0
    x, y, _ = records_to_arrays(records)
    d = truth.mean_coefficients.size
    signal = truth.intercept + x[:, :d] @ truth.mean_coefficients
    signal += truth.count_coefficient * x[:, -1]
    np.testing.assert_allclose(y, signal, rtol=1e-12)


def test_regression_pure_noise_has_zero_map():
    records, truth = generate_regression_set(RegressionSpec(seed=6, pure_noise=True))
    assert np.all(truth.mean_coefficients == 0)
    assert truth.count_coefficient == 0.0
    assert truth.theoretical_r2 == 0.0
    assert truth.noise_sigma == 1.0


def test_regression_theoretical_ratio_matches_request():
    _, truth = generate_regression_set(RegressionSpec(seed=6, target_r2=0.8))
    assert truth.theoretical_r2 == pytest.approx(0.8, abs=1e-12)


def _fit_and_score(spec):
    records, truth = generate_regression_set(spec)
    x, y, ids = records_to_arrays(records)
    split = stratified_split(y, ids, SplitSpec(seed=5, test_plots=8))
    config = TrainConfig(epochs=500, batch_size=32, seed=3)
    model, _ = train(
        x[split.train], y[split.train],
        x[split.validation], y[split.validation],
        hidden_sizes=(64, 32), config=config,
    )
    return truth, r2_score(y[split.test], predict(model, x[split.test]))


def test_model_on_noiseless_target_is_nearly_exact():
    truth, score = _fit_and_score(RegressionSpec(seed=2, noise_sigma=0.0))
    assert truth.theoretical_r2 == 1.0
    assert score >= 0.99


def test_model_on_pure_noise_finds_nothing():
    _, score = _fit_and_score(RegressionSpec(seed=2, pure_noise=True))
    assert score <= 0.05


def test_model_lands_near_the_planted_ratio():
    truth, score = _fit_and_score(RegressionSpec(seed=2, target_r2=0.8))
    assert truth.theoretical_r2 == pytest.approx(0.8, abs=1e-12)
    assert 0.7 <= score <= 0.85
