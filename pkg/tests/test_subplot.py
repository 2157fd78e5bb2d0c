"""Window tiling, yield allocation, and feature extraction."""

import numpy as np
import pytest

from hyperfield.errors import DataError, EmptyPlotError, ShapeMismatchError
from hyperfield.subplot import (
    SubPlotRecord,
    Window,
    allocate_yield,
    build_records,
    count_sl,
    extract_features,
    feature_length,
    identical_yield_fraction,
    middle_third_ratio,
    read_records_csv,
    tile_plot,
    window_grid_shape,
    write_records_csv,
)


def _random_plot(rng, rows=33, cols=71, bands=7, density=0.4):
    data = rng.uniform(0.0, 1.0, size=(rows, cols, bands))
    mask = rng.uniform(size=(rows, cols)) < density
    return data, mask


class TestTiling:
    def test_window_grid_counts(self):
        assert len(tile_plot(30, 75, 15)) == 2 * 5
        assert len(tile_plot(30, 72, 15)) == 2 * 5
        assert len(tile_plot(31, 76, 15)) == 3 * 6
        assert window_grid_shape(31, 76, 15) == (3, 6)

    def test_row_major_order(self):
        windows = tile_plot(20, 30, 10)
        assert [(w.row, w.col) for w in windows] == [
            (r, c) for r in range(2) for c in range(3)
        ]

    def test_edge_windows_are_clipped(self):
        windows = tile_plot(25, 32, 15)
        last = windows[-1]
        assert last == Window(row=1, col=2, top=15, left=30, height=10, width=2)

    def test_every_pixel_in_exactly_one_window(self):
        rows, cols = 47, 61
        cover = np.zeros((rows, cols), dtype=int)
        for w in tile_plot(rows, cols, 10):
            cover[w.top : w.top + w.height, w.left : w.left + w.width] += 1
        assert np.all(cover == 1)

    def test_counts_match_padded_tiling(self):
        # Clipping the edge windows must agree with padding the mask
        # to a multiple of the window and tiling fully.
        rng = np.random.default_rng(11)
        mask = rng.uniform(size=(28, 44)) < 0.5
        w = 15
        counts = count_sl(mask, tile_plot(*mask.shape, w))
        padded = np.zeros((30, 45), dtype=bool)
        padded[:28, :44] = mask
        expected = [
            int(padded[r : r + w, c : c + w].sum())
            for r in range(0, 30, w)
            for c in range(0, 45, w)
        ]
        assert counts.tolist() == expected

    def test_rejects_bad_arguments(self):
        with pytest.raises(ShapeMismatchError):
            tile_plot(30, 30, 0)
        with pytest.raises(ShapeMismatchError):
            tile_plot(0, 30, 10)


class TestAllocation:
    def test_proportional_and_conserving(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            counts = rng.integers(0, 50, size=12)
            if counts.sum() == 0:
                counts[0] = 1
            y = float(rng.uniform(100.0, 900.0))
            alloc = allocate_yield(counts, y)
            assert alloc.sum() == pytest.approx(y, rel=1e-12)
            n = counts.sum()
            for a, c in zip(alloc, counts):
                assert a == pytest.approx(y * c / n, rel=1e-12)

    def test_zero_count_window_gets_zero(self):
        alloc = allocate_yield(np.array([0, 3, 1]), 8.0)
        assert alloc[0] == 0.0
        assert alloc.sum() == pytest.approx(8.0)

    def test_empty_plot_raises(self):
        with pytest.raises(EmptyPlotError):
            allocate_yield(np.zeros(6, dtype=int), 5.0)
        with pytest.raises(EmptyPlotError):
            allocate_yield(np.array([]), 5.0)

    def test_negative_count_rejected(self):
        with pytest.raises(DataError):
            allocate_yield(np.array([2, -1]), 5.0)


class TestFeatures:
    def test_matches_two_pass_oracle(self):
        rng = np.random.default_rng(7)
        data, mask = _random_plot(rng)
        for window in tile_plot(*mask.shape, 15):
            sub_mask = mask[
                window.top : window.top + window.height,
                window.left : window.left + window.width,
            ]
            if not sub_mask.any():
                continue
            got = extract_features(data, mask, window)
            pixels = data[
                window.top : window.top + window.height,
                window.left : window.left + window.width,
            ][sub_mask]
            expected = np.concatenate(
                [pixels.mean(axis=0), pixels.std(axis=0), [pixels.shape[0]]]
            )
            assert got == pytest.approx(expected, rel=1e-10, abs=1e-12)

    def test_background_pixels_do_not_leak(self):
        rng = np.random.default_rng(9)
        data, mask = _random_plot(rng, rows=15, cols=15)
        window = tile_plot(15, 15, 15)[0]
        if not mask.any():
            mask[3, 4] = True
        base = extract_features(data, mask, window)
        poisoned = data.copy()
        poisoned[~mask] = 1e9
        assert extract_features(poisoned, mask, window) == pytest.approx(base)

    def test_length_and_count_entry(self):
        assert feature_length(190) == 381
        data = np.ones((10, 10, 4))
        mask = np.zeros((10, 10), dtype=bool)
        mask[:3, :2] = True
        feats = extract_features(data, mask, tile_plot(10, 10, 10)[0])
        assert feats.size == feature_length(4)
        assert feats[-1] == 6.0
        assert feats[:4] == pytest.approx(np.ones(4))
        assert feats[4:8] == pytest.approx(np.zeros(4))

    def test_empty_window_raises(self):
        data = np.ones((10, 10, 3))
        mask = np.zeros((10, 10), dtype=bool)
        with pytest.raises(DataError):
            extract_features(data, mask, tile_plot(10, 10, 10)[0])


class TestBuildRecords:
    def test_orders_and_excludes_empty_windows(self):
        rng = np.random.default_rng(21)
        data, mask = _random_plot(rng, rows=30, cols=45, density=0.3)
        mask[:, 15:30] = False  # middle column of windows is empty
        records = build_records("p7", data, mask, 120.0, window_px=15)
        keys = [(r.window_row, r.window_col) for r in records]
        assert keys == sorted(keys)
        assert all(c != 1 for _, c in keys)
        assert all(r.n_sl >= 1 for r in records)

    def test_surviving_records_conserve_yield(self):
        rng = np.random.default_rng(22)
        data, mask = _random_plot(rng, rows=31, cols=64, density=0.25)
        records = build_records("p1", data, mask, 333.25, window_px=10)
        assert sum(r.yield_g for r in records) == pytest.approx(333.25, rel=1e-12)

    def test_yield_tracks_pixel_count(self):
        rng = np.random.default_rng(23)
        data, mask = _random_plot(rng, rows=30, cols=60)
        records = build_records("p1", data, mask, 90.0, window_px=15)
        total = sum(r.n_sl for r in records)
        for r in records:
            assert r.yield_g == pytest.approx(90.0 * r.n_sl / total, rel=1e-12)

    def test_all_background_raises(self):
        data = np.ones((20, 20, 3))
        mask = np.zeros((20, 20), dtype=bool)
        with pytest.raises(EmptyPlotError):
            build_records("p1", data, mask, 50.0)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeMismatchError):
            build_records("p1", np.ones((5, 5, 2)), np.ones((6, 5), dtype=bool), 1.0)


class TestRecordsCsv:
    def test_round_trip_is_exact(self, tmp_path):
        rng = np.random.default_rng(31)
        data, mask = _random_plot(rng, rows=30, cols=45, bands=5)
        records = build_records("plot-03", data, mask, 217.4, window_px=15)
        path = tmp_path / "records.csv"
        write_records_csv(path, records)
        back = read_records_csv(path)
        assert back == records

    def test_header_checked(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(DataError):
            read_records_csv(path)

    def test_empty_list_rejected(self, tmp_path):
        with pytest.raises(DataError):
            write_records_csv(tmp_path / "none.csv", [])


def _record(plot_id, row, col, y, n=1):
    return SubPlotRecord(
        plot_id=plot_id,
        window_row=row,
        window_col=col,
        n_sl=n,
        yield_g=y,
        features=np.zeros(3),
    )


class TestMiddleThird:
    def test_uniform_plot_is_exactly_one_third(self):
        # 6 window columns split 2/2/2; equal yields put 1/3 in the middle.
        records = [_record("p", 0, c, 10.0) for c in range(6)]
        fraction, label = middle_third_ratio(records, 1, 6)
        assert fraction == pytest.approx(1.0 / 3.0)
        assert label == "uniform"

    def test_side_heavy_detection(self):
        records = [_record("p", 0, c, y) for c, y in enumerate([30, 5, 5, 5, 5, 30])]
        fraction, label = middle_third_ratio(records, 1, 6)
        assert fraction < 1.0 / 3.0 - 0.05
        assert label == "one-side-heavy"

    def test_middle_heavy_detection(self):
        records = [_record("p", 0, c, y) for c, y in enumerate([5, 5, 30, 30, 5, 5])]
        fraction, label = middle_third_ratio(records, 1, 6)
        assert fraction > 1.0 / 3.0 + 0.05
        assert label == "middle-heavy"

    def test_remainder_windows_join_the_middle(self):
        # 7 columns split 2/3/2: only indices 2..4 count as middle.
        records = [_record("p", 0, c, 1.0) for c in range(7)]
        fraction, _ = middle_third_ratio(records, 1, 7)
        assert fraction == pytest.approx(3.0 / 7.0)

    def test_long_axis_is_rows_when_taller(self):
        records = [_record("p", r, 0, y) for r, y in enumerate([1, 10, 10, 10, 1, 1])]
        fraction, label = middle_third_ratio(records, 6, 1)
        assert fraction == pytest.approx(20.0 / 33.0)
        assert label == "middle-heavy"

    def test_tie_uses_columns(self):
        # 2x2 grid: yields vary across columns only; a row split would
        # see one half, the column split sees the outer columns.
        records = [
            _record("p", 0, 0, 10.0),
            _record("p", 0, 1, 1.0),
            _record("p", 1, 0, 10.0),
            _record("p", 1, 1, 1.0),
        ]
        fraction, _ = middle_third_ratio(records, 2, 2)
        # 2 columns: base 0, middle = [0, 2) = everything.
        assert fraction == pytest.approx(1.0)

    def test_tau_widens_the_uniform_band(self):
        records = [_record("p", 0, c, y) for c, y in enumerate([12, 10, 10, 10, 10, 12])]
        _, wide = middle_third_ratio(records, 1, 6, tau=0.2)
        _, tight = middle_third_ratio(records, 1, 6, tau=0.001)
        assert wide == "uniform"
        assert tight == "one-side-heavy"

    def test_no_records_rejected(self):
        with pytest.raises(DataError):
            middle_third_ratio([], 1, 6)


class TestIdenticalYieldFraction:
    def test_hand_example(self):
        records = [
            _record("a", 0, 0, 5.0),
            _record("a", 0, 1, 5.0),
            _record("a", 0, 2, 7.0),
            _record("b", 0, 0, 5.0),
            _record("b", 0, 1, 3.0),
        ]
        # Duplicates within a plot: the two 5.0 records of plot a.
        assert identical_yield_fraction(records) == pytest.approx(2.0 / 5.0)

    def test_all_distinct_is_zero(self):
        records = [_record("a", 0, c, float(c)) for c in range(5)]
        assert identical_yield_fraction(records) == 0.0

    def test_duplicates_counted_per_plot_not_across(self):
        records = [_record("a", 0, 0, 5.0), _record("b", 0, 0, 5.0)]
        assert identical_yield_fraction(records) == 0.0

    def test_smaller_windows_collide_more(self):
        # A dithered density mask: smaller windows see fewer distinct
        # counts, so more allocations repeat.
        rng = np.random.default_rng(41)
        fractions = {}
        for w in (10, 20):
            records = []
            for p in range(12):
                mask = rng.uniform(size=(60, 60)) < 0.35
                data = np.ones((60, 60, 2))
                records += build_records(f"p{p}", data, mask, 100.0, window_px=w)
            fractions[w] = identical_yield_fraction(records)
        assert fractions[10] > fractions[20]
