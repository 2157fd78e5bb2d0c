"""Stage orchestration: run, skip, resume, and record provenance.

Each stage reads its inputs from files, writes its outputs under the
output directory, and records a manifest (content hashes of inputs,
the relevant config slice, and output hashes). A stage whose manifest
still matches is skipped, which makes reruns cheap and interrupted
pipelines resumable. Nothing in a manifest depends on absolute paths
or timestamps, so two runs from the same inputs produce byte-identical
trees.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os

import numpy as np

from . import __version__
from .config import PipelineConfig
from .cube import (
    apply_band_mask,
    band_mask_from_windows,
    read_cube,
    read_panel_reflectance_csv,
    to_reflectance,
    write_cube,
    write_panel_reflectance_csv,
)
from .endmember import (
    read_endmembers_csv,
    refine_by_neighborhood,
    relabel_by_reference,
    svmax,
    write_endmembers_csv,
)
from .errors import ConfigError, DataError, DependencyError
from .gridmap import (
    Anchor,
    assign_ids,
    build_grid,
    read_assignment_csv,
    read_plot_map,
    write_assignment_csv,
    write_plot_map,
)
from .mlp import (
    evaluate,
    load_model,
    predict,
    records_to_arrays,
    save_model,
    stratified_split,
    train,
    write_training_log_csv,
)
from .netpbm import read_pbm, write_pbm, write_pgm
from .segment import (
    binary_open,
    extract_plots,
    fill_holes,
    ndpsi,
    otsu_threshold,
    read_boxes_csv,
    threshold_mask,
    write_boxes_csv,
)
from .subplot import (
    PlotYieldRecord,
    build_records,
    middle_third_ratio,
    read_records_csv,
    read_yields_csv,
    window_grid_shape,
    write_records_csv,
    write_yields_csv,
)
from .synth import generate_reference_cube, generate_scene
from .unmix import AbundanceMap, sl_mask, unmix_cube, write_score_ppm

log = logging.getLogger("hyperfield.pipeline")

STAGE_ORDER = (
    "calibrate",
    "segment",
    "gridmap",
    "endmembers",
    "unmix",
    "dataset",
    "train",
    "evaluate",
    "report",
)

# Output files, relative to the output directory. Cube entries are
# stems; the container writes <stem>.hdr plus <stem>.raw.
F_SCENE = "synth/scene"
F_PANEL = "synth/panel.csv"
F_PLOT_MAP = "synth/plot_map.csv"
F_YIELDS = "synth/yields.csv"
F_TRUTH_MASK = "synth/truth_sl_mask.pbm"
F_TRUTH_BOXES = "synth/truth_boxes.csv"
F_TRUTH_JSON = "synth/truth.json"
F_REFERENCE = "synth/reference"
F_REFERENCE_EMS = "synth/reference_endmembers.csv"
F_REFLECTANCE = "calibrate/reflectance"
F_BOXES = "segment/boxes.csv"
F_SEG_MASK = "segment/mask.pbm"
F_SEG_SCORE = "segment/score.pgm"
F_SEG_THRESHOLD = "segment/threshold.txt"
F_ASSIGNMENT = "gridmap/assignment.csv"
F_ENDMEMBERS = "endmembers/endmembers.csv"
F_ABUNDANCES = "unmix/abundances"
F_SL_MASK = "unmix/sl_mask.pbm"
F_RESIDUAL = "unmix/residual.txt"
F_RECORDS = "dataset/records.csv"
F_MODEL = "train/model.ckpt"
F_TRAIN_LOG = "train/training_log.csv"
F_SPLIT = "train/split.csv"
F_PREDICTIONS = "evaluate/predictions.csv"
F_METRICS = "evaluate/metrics.csv"
F_REPORT_METRICS = "report/metrics.csv"
F_SCATTER = "report/scatter.csv"
F_MIDDLE_THIRDS = "report/middle_thirds.csv"
D_SL_MAPS = "report/sl_maps"
F_SUMMARY = "report/summary.txt"

# Which stage produces which file; used to name the missing stage in
# dependency errors. Input files with these relative names come from
# the synth stage by default.
_PRODUCERS = {
    F_SCENE + ".hdr": "synth",
    F_SCENE + ".raw": "synth",
    F_PANEL: "synth",
    F_PLOT_MAP: "synth",
    F_YIELDS: "synth",
    F_REFERENCE + ".hdr": "synth",
    F_REFERENCE + ".raw": "synth",
    F_REFERENCE_EMS: "synth",
    F_REFLECTANCE + ".hdr": "calibrate",
    F_REFLECTANCE + ".raw": "calibrate",
    F_BOXES: "segment",
    F_ASSIGNMENT: "gridmap",
    F_ENDMEMBERS: "endmembers",
    F_ABUNDANCES + ".hdr": "unmix",
    F_ABUNDANCES + ".raw": "unmix",
    F_SL_MASK: "unmix",
    F_RECORDS: "dataset",
    F_MODEL: "train",
    F_SPLIT: "train",
    F_PREDICTIONS: "evaluate",
    F_METRICS: "evaluate",
}

# Config sections each stage's behaviour depends on; the manifest keys
# on their digest, so edits invalidate exactly the affected stages.
_STAGE_SECTIONS = {
    "synth": ("synth",),
    "calibrate": ("input", "calibrate"),
    "segment": ("segment",),
    "gridmap": ("input", "gridmap"),
    "endmembers": ("input", "endmembers"),
    "unmix": ("unmix",),
    "dataset": ("input", "dataset"),
    "train": ("split", "model", "train"),
    "evaluate": (),
    "report": ("dataset", "unmix"),
}


# ---------------------------------------------------------------------------
# manifests

def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _section_hash(config: PipelineConfig, sections: tuple[str, ...]) -> str:
    h = hashlib.sha256()
    for section in sections:
        for key in sorted(config.values[section]):
            h.update(f"[{section}] {key} = {config.values[section][key]}\n".encode())
    return h.hexdigest()


def _manifest_path(out_dir: str, stage: str) -> str:
    return os.path.join(out_dir, "manifests", f"{stage}.json")


def _hash_inputs(inputs: dict[str, str]) -> dict[str, str]:
    """{manifest key: resolved path} -> {manifest key: content hash}."""
    return {key: _sha256(path) for key, path in sorted(inputs.items())}


def _should_skip(
    out_dir: str,
    stage: str,
    inputs: dict[str, str],
    config_hash: str,
    outputs: list[str],
) -> bool:
    path = _manifest_path(out_dir, stage)
    if not os.path.exists(path):
        return False
    try:
        with open(path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError):
        return False
    if manifest.get("config_hash") != config_hash:
        return False
    if set(manifest.get("inputs", {})) != set(inputs):
        return False
    for key, resolved in inputs.items():
        if not os.path.exists(resolved):
            return False
        if _sha256(resolved) != manifest["inputs"][key]:
            return False
    recorded = manifest.get("outputs", {})
    if set(recorded) != set(outputs):
        return False
    for rel, digest in recorded.items():
        target = os.path.join(out_dir, rel)
        if not os.path.exists(target) or _sha256(target) != digest:
            return False
    return True


def _write_manifest(
    out_dir: str,
    stage: str,
    inputs: dict[str, str],
    config_hash: str,
    outputs: list[str],
) -> None:
    manifest = {
        "stage": stage,
        "version": __version__,
        "config_hash": config_hash,
        "inputs": _hash_inputs(inputs),
        "outputs": {rel: _sha256(os.path.join(out_dir, rel)) for rel in sorted(outputs)},
    }
    path = _manifest_path(out_dir, stage)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _require(stage: str, key: str, resolved: str) -> None:
    """Fail with the producing stage's name when an upstream file is absent."""
    if os.path.exists(resolved):
        return
    producer = _PRODUCERS.get(key)
    if producer is not None:
        raise DependencyError(
            f"stage {stage!r} needs {key!r}, which stage {producer!r} produces; "
            f"run {producer!r} first"
        )
    raise DataError(f"stage {stage!r}: required input not found: {resolved}")


def _out_path(out_dir: str, rel: str) -> str:
    path = os.path.join(out_dir, rel)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    return path


def _cube_files(stem: str) -> list[str]:
    return [stem + ".hdr", stem + ".raw"]


def _input_key(config: PipelineConfig, key: str) -> tuple[str, str]:
    """(manifest key, resolved path) for an [input] entry."""
    return config.get("input", key), config.input_path(key)


class _Stage:
    """Input/output bookkeeping shared by every stage body."""

    def __init__(self, name: str, config: PipelineConfig, force: bool):
        self.name = name
        self.config = config
        self.force = force
        self.out_dir = config.out_dir()
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []

    def need(self, key: str, resolved: str | None = None) -> str:
        """Register an input file; returns its resolved path."""
        resolved = os.path.join(self.out_dir, key) if resolved is None else resolved
        _require(self.name, key, resolved)
        self.inputs[key] = resolved
        return resolved

    def need_cube(self, stem_key: str, resolved_stem: str | None = None) -> str:
        stem = (
            os.path.join(self.out_dir, stem_key)
            if resolved_stem is None
            else resolved_stem
        )
        for key, resolved in zip(_cube_files(stem_key), _cube_files(stem)):
            self.need(key, resolved)
        return stem

    def emit(self, rel: str) -> str:
        self.outputs.append(rel)
        return _out_path(self.out_dir, rel)

    def emit_cube(self, stem_rel: str) -> str:
        for rel in _cube_files(stem_rel):
            self.outputs.append(rel)
        return _out_path(self.out_dir, stem_rel)

    @property
    def config_hash(self) -> str:
        return _section_hash(self.config, _STAGE_SECTIONS[self.name])

    def skip(self) -> bool:
        if self.force:
            return False
        return _should_skip(
            self.out_dir, self.name, self.inputs, self.config_hash, self.outputs
        )

    def finish(self) -> None:
        _write_manifest(
            self.out_dir, self.name, self.inputs, self.config_hash, self.outputs
        )


def _float_line(path: str, value: float) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(repr(float(value)) + "\n")


# ---------------------------------------------------------------------------
# stage bodies

def _stage_synth(st: _Stage) -> None:
    spec = st.config.synth_spec()
    scene_stem = st.emit_cube(F_SCENE)
    panel_path = st.emit(F_PANEL)
    map_path = st.emit(F_PLOT_MAP)
    yields_path = st.emit(F_YIELDS)
    mask_path = st.emit(F_TRUTH_MASK)
    boxes_path = st.emit(F_TRUTH_BOXES)
    truth_path = st.emit(F_TRUTH_JSON)
    ref_stem = st.emit_cube(F_REFERENCE)
    ref_ems_path = st.emit(F_REFERENCE_EMS)
    if st.skip():
        log.info("synth: manifest up to date, skipping")
        return

    cube, truth = generate_scene(spec)
    write_cube(cube, scene_stem)
    write_panel_reflectance_csv(panel_path, cube.wavelengths, truth.panel_reflectance)
    write_plot_map(map_path, truth.plot_map)
    write_yields_csv(
        yields_path,
        [PlotYieldRecord(pid, truth.plot_yields[pid]) for pid in sorted(truth.plot_yields)],
    )
    write_pbm(mask_path, truth.sl_mask)
    write_boxes_csv(boxes_path, [truth.boxes[pid] for pid in sorted(truth.boxes)])
    payload = {
        "boxes": {
            pid: [b.top, b.left, b.height, b.width]
            for pid, b in sorted(truth.boxes.items())
        },
        "panel_region": list(truth.panel_region),
        "plot_yields": dict(sorted(truth.plot_yields.items())),
        "realized_snr_db": truth.realized_snr_db,
        "side_heavy": dict(sorted(truth.side_heavy.items())),
        "theoretical_r2": truth.theoretical_r2,
        "window_px": truth.window_px,
        "yield_noise_sigma": truth.yield_noise_sigma,
    }
    with open(truth_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")

    ref_cube, ref_ems, _ = generate_reference_cube(
        seed=st.config.getint("synth", "reference_seed")
    )
    write_cube(ref_cube, ref_stem)
    write_endmembers_csv(ref_ems_path, ref_ems)
    st.finish()


def _stage_calibrate(st: _Stage) -> None:
    cube_stem = st.need_cube(*_input_key(st.config, "cube"))
    panel_path = st.need(*_input_key(st.config, "panel_reflectance"))
    out_stem = st.emit_cube(F_REFLECTANCE)
    if st.skip():
        log.info("calibrate: manifest up to date, skipping")
        return

    cube = read_cube(cube_stem)
    _, panel = read_panel_reflectance_csv(panel_path)
    if panel.size != cube.bands:
        raise DataError(
            f"panel reflectance has {panel.size} bands, cube has {cube.bands}"
        )
    reflectance = to_reflectance(cube, st.config.panel_region(), panel)
    mask = band_mask_from_windows(
        reflectance.wavelengths,
        keep_range=st.config.window_nm("calibrate", "keep_nm"),
        drop_windows=st.config.drop_windows_nm(),
    )
    write_cube(apply_band_mask(reflectance, mask), out_stem)
    st.finish()


def _stage_segment(st: _Stage) -> None:
    stem = st.need_cube(F_REFLECTANCE)
    boxes_path = st.emit(F_BOXES)
    mask_path = st.emit(F_SEG_MASK)
    score_path = st.emit(F_SEG_SCORE)
    threshold_path = st.emit(F_SEG_THRESHOLD)
    if st.skip():
        log.info("segment: manifest up to date, skipping")
        return

    cube = read_cube(stem)
    plane = ndpsi(
        cube,
        red_window=st.config.window_nm("segment", "red_window_nm"),
        blue_window=st.config.window_nm("segment", "blue_window_nm"),
    )
    threshold = st.config.segment_threshold()
    if threshold is None:
        threshold = otsu_threshold(plane)
    mask = threshold_mask(plane, threshold)
    se = (st.config.getint("segment", "se_rows"), st.config.getint("segment", "se_cols"))
    mask = binary_open(fill_holes(mask), se=se)
    boxes = extract_plots(mask, st.config.getint("segment", "min_area_px"))
    write_pgm(score_path, plane)
    write_pbm(mask_path, mask)
    write_boxes_csv(boxes_path, boxes)
    _float_line(threshold_path, threshold)
    log.info("segment: %d plots above the area floor", len(boxes))
    st.finish()


def _stage_gridmap(st: _Stage) -> None:
    boxes_path = st.need(F_BOXES)
    map_path = st.need(*_input_key(st.config, "plot_map"))
    out_path = st.emit(F_ASSIGNMENT)
    if st.skip():
        log.info("gridmap: manifest up to date, skipping")
        return

    boxes = read_boxes_csv(boxes_path)
    plot_map = read_plot_map(map_path)
    row_lines, col_lines = build_grid(
        boxes,
        st.config.getfloat("gridmap", "pitch_row_px"),
        st.config.getfloat("gridmap", "pitch_col_px"),
    )
    anchor = Anchor(
        plot_id=st.config.get("gridmap", "anchor_plot"),
        cell=st.config.anchor_cell(),
    )
    assignment = assign_ids(boxes, row_lines, col_lines, plot_map, anchor)
    write_assignment_csv(out_path, assignment)
    log.info("gridmap: %d boxes labelled", len(assignment.assigned()))
    st.finish()


def _stage_endmembers(st: _Stage) -> None:
    source = st.config.get("endmembers", "source").strip().lower()
    out_path = st.emit(F_ENDMEMBERS)
    if source == "csv":
        raw = st.config.get("endmembers", "csv").strip()
        if not raw:
            raise ConfigError("[endmembers] source = csv needs [endmembers] csv = <path>")
        resolved = raw if os.path.isabs(raw) else os.path.join(st.out_dir, raw)
        csv_path = st.need(raw, resolved)
        if st.skip():
            log.info("endmembers: manifest up to date, skipping")
            return
        ems = read_endmembers_csv(csv_path)
    elif source == "cube":
        ref_stem = st.need_cube(*_input_key(st.config, "reference_cube"))
        ref_ems_path = st.need(*_input_key(st.config, "reference_endmembers"))
        if st.skip():
            log.info("endmembers: manifest up to date, skipping")
            return
        cube = read_cube(ref_stem)
        pixels = cube.pixels()
        found = svmax(
            pixels,
            count=st.config.getint("endmembers", "count"),
            wavelengths=cube.wavelengths,
        )
        k = st.config.getint("endmembers", "refine_k")
        if k > 1:
            found = refine_by_neighborhood(found, pixels, k=k)
        reference = read_endmembers_csv(ref_ems_path)
        ems = relabel_by_reference(found, reference)
    else:
        raise ConfigError(f"[endmembers] source = {source!r}; expected 'cube' or 'csv'")
    write_endmembers_csv(out_path, ems)
    st.finish()


def _stage_unmix(st: _Stage) -> None:
    stem = st.need_cube(F_REFLECTANCE)
    ems_path = st.need(F_ENDMEMBERS)
    abund_stem = st.emit_cube(F_ABUNDANCES)
    mask_path = st.emit(F_SL_MASK)
    residual_path = st.emit(F_RESIDUAL)
    if st.skip():
        log.info("unmix: manifest up to date, skipping")
        return

    cube = read_cube(stem)
    endmembers = read_endmembers_csv(ems_path)
    if endmembers.wavelengths.size != cube.bands or not np.allclose(
        endmembers.wavelengths, cube.wavelengths, atol=0.05, rtol=0.0
    ):
        endmembers = endmembers.subset_for_wavelengths(cube.wavelengths)
    abundances, residual = unmix_cube(
        cube,
        endmembers,
        threads=st.config.getint("unmix", "threads"),
        chunk=st.config.getint("unmix", "chunk"),
    )
    foreground = sl_mask(
        abundances,
        spike_label=st.config.get("unmix", "spike_label"),
        leaf_label=st.config.get("unmix", "leaf_label"),
        threshold=st.config.getfloat("unmix", "sl_threshold"),
    )
    write_cube(abundances.to_cube(), abund_stem)
    write_pbm(mask_path, foreground.mask)
    _float_line(residual_path, residual)
    log.info("unmix: residual %.6g, %d foreground pixels",
             residual, int(foreground.mask.sum()))
    st.finish()


def _stage_dataset(st: _Stage) -> None:
    stem = st.need_cube(F_REFLECTANCE)
    mask_path = st.need(F_SL_MASK)
    assignment_path = st.need(F_ASSIGNMENT)
    yields_path = st.need(*_input_key(st.config, "yields"))
    out_path = st.emit(F_RECORDS)
    if st.skip():
        log.info("dataset: manifest up to date, skipping")
        return

    cube = read_cube(stem)
    mask = read_pbm(mask_path)
    if mask.shape != (cube.rows, cube.cols):
        raise DataError(
            f"foreground mask {mask.shape} does not match cube "
            f"{(cube.rows, cube.cols)}"
        )
    assigned = read_assignment_csv(assignment_path)
    yields = read_yields_csv(yields_path)
    window_px = st.config.getint("dataset", "window_px")
    records = []
    for plot in sorted(assigned, key=lambda p: p.plot_id):
        if plot.plot_id not in yields:
            raise DataError(f"no measured yield for plot {plot.plot_id!r}")
        box = plot.box
        data = cube.data[box.top : box.top + box.height, box.left : box.left + box.width]
        crop = mask[box.top : box.top + box.height, box.left : box.left + box.width]
        records.extend(
            build_records(plot.plot_id, data, crop, yields[plot.plot_id], window_px)
        )
    write_records_csv(out_path, records)
    log.info("dataset: %d sub-plot records from %d plots", len(records), len(assigned))
    st.finish()


def _read_split_csv(path: str) -> dict[str, np.ndarray]:
    roles: dict[str, list[int]] = {"train": [], "validation": [], "test": []}
    with open(path, encoding="utf-8", newline="") as fh:
        import csv as _csv

        reader = _csv.reader(fh)
        header = next(reader, None)
        if header != ["index", "role"]:
            raise DataError(f"{path}: expected header index,role")
        for row in reader:
            if row[1] not in roles:
                raise DataError(f"{path}: unknown split role {row[1]!r}")
            roles[row[1]].append(int(row[0]))
    return {role: np.asarray(idx, dtype=np.intp) for role, idx in roles.items()}


def _stage_train(st: _Stage) -> None:
    records_path = st.need(F_RECORDS)
    model_path = st.emit(F_MODEL)
    log_path = st.emit(F_TRAIN_LOG)
    split_path = st.emit(F_SPLIT)
    if st.skip():
        log.info("train: manifest up to date, skipping")
        return

    records = read_records_csv(records_path)
    x, y, ids = records_to_arrays(records)
    split = stratified_split(y, ids, st.config.split_spec())
    model, logbook = train(
        x[split.train],
        y[split.train],
        x[split.validation],
        y[split.validation],
        hidden_sizes=st.config.hidden_sizes(),
        config=st.config.train_config(),
    )
    save_model(model, model_path)
    write_training_log_csv(log_path, logbook)
    with open(split_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("index,role\n")
        rows = [(int(i), "train") for i in split.train]
        rows += [(int(i), "validation") for i in split.validation]
        rows += [(int(i), "test") for i in split.test]
        for index, role in sorted(rows):
            fh.write(f"{index},{role}\n")
    log.info(
        "train: %d/%d/%d records (train/val/test), best epoch %d",
        split.train.size, split.validation.size, split.test.size, model.best_epoch,
    )
    st.finish()


def _stage_evaluate(st: _Stage) -> None:
    model_path = st.need(F_MODEL)
    records_path = st.need(F_RECORDS)
    split_path = st.need(F_SPLIT)
    predictions_path = st.emit(F_PREDICTIONS)
    metrics_path = st.emit(F_METRICS)
    if st.skip():
        log.info("evaluate: manifest up to date, skipping")
        return

    model = load_model(model_path)
    records = read_records_csv(records_path)
    x, y, ids = records_to_arrays(records)
    roles = _read_split_csv(split_path)
    if roles["test"].size:
        held_out, split_name = roles["test"], "test"
    elif roles["validation"].size:
        held_out, split_name = roles["validation"], "validation"
    else:
        raise DataError("no held-out records; set [split] test_plots or validation_fraction")

    result = evaluate(
        model,
        x[held_out],
        y[held_out],
        [ids[i] for i in held_out],
    )

    role_of = {}
    for role, indices in roles.items():
        for i in indices:
            role_of[int(i)] = role
    predicted = np.maximum(predict(model, x), 0.0)
    with open(predictions_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("plot_id,window_row,window_col,role,actual_g,predicted_g\n")
        for i, record in enumerate(records):
            fh.write(
                f"{record.plot_id},{record.window_row},{record.window_col},"
                f"{role_of.get(i, 'train')},{y[i]!r},{predicted[i]!r}\n"
            )
    with open(metrics_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("metric,value\n")
        fh.write(f"split,{split_name}\n")
        fh.write(f"subplot_r2,{result.subplot.r2!r}\n")
        fh.write(f"subplot_rmse_g,{result.subplot.rmse!r}\n")
        fh.write(f"subplot_nrmse,{result.subplot.nrmse!r}\n")
        fh.write(f"plot_r2,{result.plot.r2!r}\n")
        fh.write(f"plot_rmse_g,{result.plot.rmse!r}\n")
        fh.write(f"plot_nrmse,{result.plot.nrmse!r}\n")
        fh.write(f"field_actual_g,{result.field_actual!r}\n")
        fh.write(f"field_predicted_g,{result.field_predicted!r}\n")
        fh.write(f"field_percent_error,{result.field_percent_error!r}\n")
    log.info(
        "evaluate: %s split, sub-plot R2 %.4f, plot R2 %.4f",
        split_name, result.subplot.r2, result.plot.r2,
    )
    st.finish()


def read_metrics_csv(path: str | os.PathLike) -> dict[str, str]:
    """Key/value metrics as written by the evaluate stage."""
    import csv as _csv

    out: dict[str, str] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = _csv.reader(fh)
        header = next(reader, None)
        if header != ["metric", "value"]:
            raise DataError(f"{path}: expected header metric,value")
        for row in reader:
            out[row[0]] = row[1]
    return out


def _stage_report(st: _Stage) -> None:
    metrics_path = st.need(F_METRICS)
    predictions_path = st.need(F_PREDICTIONS)
    records_path = st.need(F_RECORDS)
    assignment_path = st.need(F_ASSIGNMENT)
    abund_stem = st.need_cube(F_ABUNDANCES)

    records = read_records_csv(records_path)
    assigned = sorted(read_assignment_csv(assignment_path), key=lambda p: p.plot_id)

    out_metrics = st.emit(F_REPORT_METRICS)
    scatter_path = st.emit(F_SCATTER)
    middle_path = st.emit(F_MIDDLE_THIRDS)
    summary_path = st.emit(F_SUMMARY)
    map_paths = {
        plot.plot_id: st.emit(f"{D_SL_MAPS}/{plot.plot_id}.ppm") for plot in assigned
    }
    if st.skip():
        log.info("report: manifest up to date, skipping")
        return

    # metrics: same content as the evaluate stage, under the report roof
    with open(metrics_path, "rb") as src, open(out_metrics, "wb") as dst:
        dst.write(src.read())

    # scatter data: one row per record, for external plotting
    import csv as _csv

    with open(predictions_path, encoding="utf-8", newline="") as fh:
        reader = _csv.reader(fh)
        pred_header = next(reader)
        pred_rows = list(reader)
    idx = {name: pred_header.index(name) for name in ("role", "actual_g", "predicted_g")}
    with open(scatter_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("actual_g,predicted_g,role\n")
        for row in pred_rows:
            fh.write(f"{row[idx['actual_g']]},{row[idx['predicted_g']]},{row[idx['role']]}\n")

    # middle-third yield share per plot
    window_px = st.config.getint("dataset", "window_px")
    tau = st.config.getfloat("dataset", "middle_tau")
    by_plot: dict[str, list] = {}
    for record in records:
        by_plot.setdefault(record.plot_id, []).append(record)
    with open(middle_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("plot_id,middle_fraction,label\n")
        for plot in assigned:
            plot_records = by_plot.get(plot.plot_id)
            if not plot_records:
                continue
            shape = window_grid_shape(plot.box.height, plot.box.width, window_px)
            fraction, label = middle_third_ratio(plot_records, *shape, tau=tau)
            fh.write(f"{plot.plot_id},{fraction!r},{label}\n")

    # per-plot foreground-score colormaps
    abund = AbundanceMap.from_cube(read_cube(abund_stem))
    score = abund.plane(st.config.get("unmix", "spike_label"))
    score = score + abund.plane(st.config.get("unmix", "leaf_label"))
    for plot in assigned:
        box = plot.box
        crop = score[box.top : box.top + box.height, box.left : box.left + box.width]
        write_score_ppm(map_paths[plot.plot_id], crop)

    # human-readable summary
    metrics = read_metrics_csv(metrics_path)
    lines = [
        f"held-out split: {metrics['split']}",
        f"sub-plot  R2 {float(metrics['subplot_r2']):.4f}  "
        f"RMSE {float(metrics['subplot_rmse_g']):.2f} g  "
        f"nRMSE {float(metrics['subplot_nrmse']):.4f}",
        f"plot      R2 {float(metrics['plot_r2']):.4f}  "
        f"RMSE {float(metrics['plot_rmse_g']):.2f} g  "
        f"nRMSE {float(metrics['plot_nrmse']):.4f}",
        f"field     actual {float(metrics['field_actual_g']):.1f} g  "
        f"predicted {float(metrics['field_predicted_g']):.1f} g  "
        f"error {float(metrics['field_percent_error']):.2f}%",
        f"plots reported: {len(assigned)}",
        f"sub-plot records: {len(records)}",
    ]
    with open(summary_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    st.finish()


_STAGE_BODIES = {
    "synth": _stage_synth,
    "calibrate": _stage_calibrate,
    "segment": _stage_segment,
    "gridmap": _stage_gridmap,
    "endmembers": _stage_endmembers,
    "unmix": _stage_unmix,
    "dataset": _stage_dataset,
    "train": _stage_train,
    "evaluate": _stage_evaluate,
    "report": _stage_report,
}


def run_stage(name: str, config: PipelineConfig, force: bool = False) -> None:
    """Run one stage (or skip it when its manifest is still valid)."""
    if name not in _STAGE_BODIES:
        raise ConfigError(f"unknown stage {name!r}")
    log.info("stage %s: starting", name)
    _STAGE_BODIES[name](_Stage(name, config, force))


def run_all(config: PipelineConfig, force: bool = False) -> None:
    """All pipeline stages in order. The synth stage is not included."""
    for name in STAGE_ORDER:
        run_stage(name, config, force)
