"""Command line entry point: one subcommand per pipeline stage plus ``pipeline``.

Failures print one line to stderr::

    error code=<code> stage=<stage> message="<text>"

and exit with status 1, or 2 when the configuration is at fault.
"""

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .augment import DEFAULT_RANGES, apply_effects, image_seed, sample_params
from .camera import CameraIntrinsics, UndistortConfig, correct_frame, undistort_points
from .counting import (blob_count, count_metrics, count_points, metrics_table, read_points, residual_svg,
                       scatter_svg, write_metrics)
from .images import read_image, write_png
from .ingest import (ManifestError, assign_frames, read_assignments, read_frames, read_windows, read_yields,
                     resolve_path, write_assignments)
from .ranking import (DEFAULT_FRACTIONS, parse_confusion, report_table, scores, selection_report, write_report,
                      write_venn)
from .sampler import SamplingError, read_samples, sample_plot, write_samples
from .spatial import FieldGrid, adjust, read_field, write_adjusted, write_summary
from .synthfield import SynthConfig, TrendSpec, read_frame_truth, write_synth_dataset
from .tensornet import GraphError
from .yieldnet import (FileExtractor, ReferenceExtractor, TrainConfig, fit_regressor, fuse, load_model,
                       save_model)

log = logging.getLogger("soyyield")

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


# ---------------------------------------------------------------- errors

class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage, code, message):
        super().__init__(message)
        self.stage = stage
        self.code = code


def _code_for(exc):
    if isinstance(exc, ConfigError):
        return "config"
    if isinstance(exc, ManifestError):
        return "manifest"
    if isinstance(exc, SamplingError):
        return "sampling"
    if isinstance(exc, GraphError):
        return "graph"
    if isinstance(exc, (FileNotFoundError, IsADirectoryError, PermissionError)):
        return "io"
    if isinstance(exc, (ValueError, KeyError)):
        return "invalid"
    if isinstance(exc, OSError):
        return "io"
    return "internal"


@contextmanager
def stage(name):
    """Tag any failure inside the block with the pipeline stage it came from."""
    try:
        yield
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else str(exc)
        raise StageError(name, _code_for(exc), str(msg) or type(exc).__name__) from exc


def _error_line(code, stage_name, message):
    msg = " ".join(str(message).split())
    return f"error code={code} stage={stage_name} message={json.dumps(msg)}"


# ---------------------------------------------------------------- config

_F, _I = float, int
CONFIG_SCHEMA = {
    "camera": {"fx": _F, "fy": _F, "px": _F, "py": _F, "k1": _F, "k2": _F, "k3": _F, "k4": _F,
               "width": _I, "height": _I},
    "undistort": {"focal": _F, "size": (_I, 2), "center": (_F, 2), "crop": (_I, 2)},
    "augment": {name: (_F, 2) for name in DEFAULT_RANGES},
    "train": {"batch_size": _I, "epochs": _I, "lr": _F, "seed": _I, "holdout_every": _I},
    "extractor": {"channels": _I, "seed": _I},
    "count": {"threshold": _F, "min_area": _I},
    "ranking": {"fractions": (_F, None)},
    "synth": {"n_range": _I, "n_pass": _I, "frames_per_seq": _I, "alley_frames": _I, "frame_size": _I,
              "seeds_per_t_ha": _F, "mean_yield": _F, "genotype_sd": _F, "noise_sd": _F,
              "bad_quality_fraction": _F, "range_slope": _F, "pass_slope": _F, "quadratic": _F},
}


def _coerce(section, key, value, kind):
    where = f"[{section}] {key}"
    if isinstance(kind, tuple):
        base, n = kind
        if not isinstance(value, list) or (n is not None and len(value) != n):
            want = f"a list of {n}" if n else "a list"
            raise ConfigError(f"{where} must be {want} numbers")
        return tuple(_coerce(section, key, v, base) for v in value)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where} must be a number, got {value!r}")
    if kind is int and int(value) != value:
        raise ConfigError(f"{where} must be an integer, got {value!r}")
    return kind(value)


def validate_config(raw):
    cfg = {}
    for section, body in raw.items():
        if section not in CONFIG_SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(body, dict):
            raise ConfigError(f"[{section}] must be a table")
        schema = CONFIG_SCHEMA[section]
        cfg[section] = {}
        for key, value in body.items():
            if key not in schema:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            cfg[section][key] = _coerce(section, key, value, schema[key])
    return cfg


def load_config(path):
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return validate_config(raw)


def merge_config(base, over):
    out = {k: dict(v) for k, v in base.items()}
    for section, body in over.items():
        out.setdefault(section, {}).update(body)
    return out


def camera_from(cfg):
    try:
        return CameraIntrinsics(**cfg.get("camera", {}))
    except ValueError as exc:
        raise ConfigError(f"[camera] {exc}") from None


def undistort_from(cfg, crop=None):
    u = dict(cfg.get("undistort", {}))
    if crop is not None:
        u["crop"] = tuple(crop)
    return UndistortConfig(**u)


def train_from(cfg, args):
    t = dict(cfg.get("train", {}))
    t.pop("holdout_every", None)
    for name in ("batch_size", "epochs", "lr"):
        v = getattr(args, name, None)
        if v is not None:
            t[name] = v
    if args.seed is not None:
        t["seed"] = args.seed
    tc = TrainConfig(**t)
    if tc.batch_size < 1 or tc.epochs < 1 or not tc.lr > 0:
        raise ConfigError("[train] batch_size and epochs must be >= 1 and lr > 0")
    return tc


def count_opts(cfg, args):
    c = dict(cfg.get("count", {}))
    threshold = args.threshold if getattr(args, "threshold", None) is not None else c.get("threshold", 0.5)
    min_area = args.min_area if getattr(args, "min_area", None) is not None else c.get("min_area", 5)
    return threshold, min_area


def fractions_from(cfg, args):
    fr = getattr(args, "fractions", None) or cfg.get("ranking", {}).get("fractions") or DEFAULT_FRACTIONS
    fr = tuple(float(f) for f in fr)
    if any(not 0 < f <= 1 for f in fr):
        raise ConfigError(f"[ranking] fractions must lie in (0, 1], got {list(fr)}")
    return fr


def extractor_from(cfg, seed=None):
    e = dict(cfg.get("extractor", {}))
    if seed is not None and "seed" not in e:
        e["seed"] = seed
    return ReferenceExtractor(channels=e.get("channels", 32), seed=e.get("seed", 0))


def synth_from(cfg, seed):
    s = dict(cfg.get("synth", {}))
    trend = TrendSpec(s.pop("range_slope", 0.12), s.pop("pass_slope", -0.08), s.pop("quadratic", 0.0))
    return SynthConfig(**s, trend=trend, seed=seed)


# ---------------------------------------------------------------- helpers

def _limit_threads(n):
    """Cap BLAS threads at ``n``; returns the controller, or None.

    Only ever lowers the count: raising OpenBLAS above the thread count it
    was initialised with is not safe.
    """
    try:
        from threadpoolctl import threadpool_info, threadpool_limits
    except ImportError:  # pragma: no cover
        return None
    current = [i["num_threads"] for i in threadpool_info()]
    if not current or n >= min(current):
        return None
    return threadpool_limits(limits=n)


def pmap(fn, items, threads):
    """Ordered map; results do not depend on the thread count."""
    items = list(items)
    if threads <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _fmt(v):
    return repr(float(v))


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_values(path, column):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if "plot_id" not in (reader.fieldnames or []) or column not in (reader.fieldnames or []):
            raise ValueError(f"{path}: needs columns plot_id and {column}")
        return {r["plot_id"]: float(r[column]) for r in reader}


def _image_files(paths):
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(sorted(q for q in p.iterdir() if q.suffix.lower() in (".png", ".fimg")))
        elif p.exists():
            out.append(p)
        else:
            raise FileNotFoundError(f"no such file or directory: {p}")
    return out


def _load_plot_images(samples, root, threads):
    """``{plot_id: (images_a, images_b)}`` for a sample manifest."""
    ids = sorted(samples)
    paths = [(pid, side, p) for pid in ids for side in ("A", "B") for p in samples[pid][side]]
    imgs = pmap(lambda t: read_image(resolve_path(t[2], root)), paths, threads)
    out = {pid: ([], []) for pid in ids}
    for (pid, side, _), img in zip(paths, imgs):
        out[pid][0 if side == "A" else 1].append(img)
    return {pid: (np.stack(a), np.stack(b)) for pid, (a, b) in out.items()}


def _plot_features(samples, root, extractor, threads, use_fimg=False):
    if use_fimg:
        fx = FileExtractor()
        return {pid: fuse(fx.extract_batch([str(resolve_path(p, root)) for p in s["A"]]),
                          fx.extract_batch([str(resolve_path(p, root)) for p in s["B"]]))
                for pid, s in sorted(samples.items())}
    images = _load_plot_images(samples, root, threads)
    feats = pmap(lambda pid: fuse(extractor.extract_batch(images[pid][0]), extractor.extract_batch(images[pid][1])),
                 sorted(images), threads)
    return dict(zip(sorted(images), feats))


def _split(ids, holdout_every):
    """Deterministic train/holdout split of sorted ids; every k-th id is held out."""
    ids = sorted(ids)
    if holdout_every < 2:
        return ids, []
    hold = [p for i, p in enumerate(ids) if i % holdout_every == holdout_every - 1]
    return [p for p in ids if p not in set(hold)], hold


def _train(feats, targets, ids, tc):
    x = np.stack([feats[p] for p in ids])
    y = np.array([targets[p] for p in ids])
    return fit_regressor(x, y, config=tc)


def _write_history(path, history):
    _write_csv(path, ["epoch", "loss"], [(i + 1, _fmt(v)) for i, v in enumerate(history)])


def _write_predictions(path, preds):
    _write_csv(path, ["plot_id", "est_yield"], [(p, _fmt(v)) for p, v in sorted(preds.items())])


def _count_frames(paths, root, threshold, min_area, threads, points=None):
    if points is not None:
        missing = [p for p in paths if p not in points]
        if missing:
            raise KeyError(f"points file has no detections entry for {missing[0]}")
        return [count_points(points[p], threshold) for p in paths]
    return pmap(lambda p: blob_count(read_image(resolve_path(p, root)), threshold, min_area), paths, threads)


def _report_count_metrics(prefix, truth, est, label):
    with_mape = all(t != 0 for t in truth)
    m = count_metrics(truth, est, with_mape=with_mape)
    prefix = Path(prefix)
    write_metrics(prefix.with_suffix(".json"), m)
    prefix.with_suffix(".txt").write_text(metrics_table(m, label), encoding="utf-8")
    prefix.with_suffix(".svg").write_text(scatter_svg(truth, est, f"{label}: estimated vs ground truth"),
                                          encoding="utf-8")
    Path(f"{prefix}_residuals.svg").write_text(residual_svg(truth, est, f"{label}: residual vs ground truth"),
                                               encoding="utf-8")
    return m


# ---------------------------------------------------------------- subcommands

def cmd_undistort(args, cfg):
    intr = camera_from(cfg)
    ucfg = undistort_from(cfg, args.crop)
    if args.identity_check:
        focal, _, center = ucfg.resolve(intr)
        probe = undistort_points(np.array([intr.px, intr.py]), intr, focal, center)
        offset = float(np.hypot(probe[0] - center[0], probe[1] - center[1]))
        print(f"identity-check offset={offset:.6g}")
        if offset > 1e-9:
            raise ValueError(f"principal point moved by {offset} px")
        if not args.input:
            return
    if not args.input or not args.output:
        raise ValueError("undistort needs --input and --output (or --identity-check)")
    files = _image_files(args.input)
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)

    def run(p):
        res = correct_frame(read_image(p), intr, ucfg)
        write_png(out_dir / (p.stem + ".png"), res.image)
        return res.failed_pixels

    failed = pmap(run, files, args.threads)
    print(f"undistorted {len(files)} frame(s) into {out_dir}; unmappable pixels per frame: {max(failed, default=0)}")


def cmd_assign(args, cfg):
    sets, unassigned = assign_frames(read_frames(args.frames), read_windows(args.windows))
    write_assignments(args.output, sets)
    print(f"assigned frames to {len(sets)} plot(s); {len(unassigned)} frame(s) outside every window")


def cmd_sample(args, cfg):
    sets = read_assignments(args.assignments)
    samples = [sample_plot(sets[pid]) for pid in sorted(sets)]
    write_samples(args.output, samples)
    print(f"sampled {len(samples)} plot(s), 20 frames each")


def cmd_augment(args, cfg):
    ranges = dict(DEFAULT_RANGES, **cfg.get("augment", {}))
    files = [p for p in _image_files(args.input) if not p.stem.endswith("_aug")]
    base = 0 if args.seed is None else args.seed

    def run(item):
        i, p = item
        params = sample_params(image_seed(base, i), ranges)
        out = p.with_name(p.stem + "_aug.png")
        write_png(out, apply_effects(read_image(p), params))
        p.with_name(p.stem + "_aug.json").write_text(params.to_json() + "\n", encoding="utf-8")

    pmap(run, list(enumerate(files)), args.threads)
    print(f"augmented {len(files)} image(s)")


def cmd_train_yield(args, cfg):
    tc = train_from(cfg, args)
    samples = read_samples(args.samples)
    yields = {r.plot_id: r for r in read_yields(args.yields)}
    ids = sorted(p for p in samples if p in yields and (args.all_quality or yields[p].quality == 1))
    if not ids:
        raise ValueError("no plot has both sampled frames and a usable yield record")
    ext = None if args.fimg else extractor_from(cfg, args.seed)
    feats = _plot_features({p: samples[p] for p in ids}, args.root, ext, args.threads, args.fimg)
    res = _train(feats, {p: yields[p].yield_t_ha for p in ids}, ids, tc)
    save_model(args.output, res.regressor, ext)
    if args.history:
        _write_history(args.history, res.history)
    print(f"trained on {len(ids)} plot(s); loss {res.history[0]:.6g} -> {res.history[-1]:.6g}")


def cmd_predict(args, cfg):
    reg, ext = load_model(args.model)
    if ext is None and not args.fimg:
        raise ValueError("model has no stored extractor; pass --fimg to use precomputed feature maps")
    samples = read_samples(args.samples)
    feats = _plot_features(samples, args.root, ext, args.threads, args.fimg)
    preds = {pid: max(0.0, reg.predict(f)) for pid, f in feats.items()}
    _write_predictions(args.output, preds)
    print(f"predicted yield for {len(preds)} plot(s)")


def cmd_count(args, cfg):
    threshold, min_area = count_opts(cfg, args)
    samples = read_samples(args.samples)
    points = read_points(args.points) if args.points else None
    paths = [(pid, p) for pid in sorted(samples) for side in ("A", "B") for p in samples[pid][side]]
    counts = _count_frames([p for _, p in paths], args.root, threshold, min_area, args.threads, points)
    tsc = {}
    for (pid, _), c in zip(paths, counts):
        tsc[pid] = tsc.get(pid, 0) + c
    _write_csv(args.output, ["plot_id", "tsc"], sorted(tsc.items()))
    if args.frame_counts:
        _write_csv(args.frame_counts, ["frame_path", "count"], [(p, c) for (_, p), c in zip(paths, counts)])
    if args.truth:
        truth = read_frame_truth(args.truth)
        keys = [p for _, p in paths]
        missing = [k for k in keys if k not in truth]
        if missing:
            raise KeyError(f"truth file has no entry for {missing[0]}")
        m = _report_count_metrics(args.metrics or Path(args.output).with_suffix(".metrics"),
                                  [truth[k] for k in keys], counts, "frames")
        sys.stdout.write(metrics_table(m, "frames"))
    print(f"counted seeds in {len(paths)} frame(s) across {len(tsc)} plot(s)")


def cmd_adjust(args, cfg):
    grid = read_field(args.input, args.column)
    res = adjust(grid)
    write_adjusted(args.output, grid, res)
    if args.summary:
        write_summary(args.summary, res)
    print(f"b={res.b:.6g} xbar={res.xbar:.6g} plots={len(grid.plot_ids)}")


def cmd_rank(args, cfg):
    if args.confusion:
        s = scores(parse_confusion(args.confusion))
        f = lambda v: "n/a" if v is None else f"{v:.4f}"  # noqa: E731
        print(f"accuracy={f(s.accuracy)} sensitivity={f(s.sensitivity)} specificity={f(s.specificity)}")
        return
    if not (args.truth and args.pred):
        raise ValueError("rank needs --confusion, or both --truth and --pred")
    truth = _read_values(args.truth, args.truth_column)
    pred = _read_values(args.pred, args.pred_column)
    reports = selection_report(truth, pred, fractions_from(cfg, args))
    sys.stdout.write(report_table(reports))
    if args.output:
        write_report(args.output, reports)
    if args.venn_dir:
        d = Path(args.venn_dir)
        d.mkdir(parents=True, exist_ok=True)
        for r in reports:
            write_venn(d / f"venn_{round(r.fraction * 100):02d}.csv", r)


def cmd_synth(args, cfg):
    scfg = synth_from(cfg, 0 if args.seed is None else args.seed)
    out = write_synth_dataset(args.output, scfg)
    print(f"wrote synthetic trial ({scfg.n_range}x{scfg.n_pass} plots) to {out}")


def _adjust_values(grid, values, out_dir, name):
    g = grid.with_values([values[p] for p in grid.plot_ids])
    res = adjust(g)
    write_adjusted(out_dir / f"adjusted_{name}.csv", g, res)
    write_summary(out_dir / f"adjusted_{name}.json", res)
    return dict(zip(g.plot_ids, res.adjusted.tolist())), res


def cmd_pipeline(args, cfg):
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    seed = 0 if args.seed is None else args.seed
    threads = args.threads

    if args.synth:
        with stage("synth"):
            data = out / "synth"
            write_synth_dataset(data, synth_from(cfg, seed))
            cfg = merge_config(load_config(data / "camera.toml"), cfg)
            frames_csv, windows_csv, yields_csv = data / "frames.csv", data / "windows.csv", data / "yields.csv"
            root, truth_csv = data, data / "frame_truth.csv"
    else:
        if not (args.frames and args.windows and args.yields):
            raise StageError("pipeline", "invalid", "pipeline needs --synth or --frames, --windows and --yields")
        frames_csv, windows_csv, yields_csv = Path(args.frames), Path(args.windows), Path(args.yields)
        root = Path(args.root) if args.root else frames_csv.parent
        truth_csv = Path(args.truth) if args.truth else None

    with stage("config"):
        intr = camera_from(cfg)
        ucfg = undistort_from(cfg, args.crop)
        ucfg.resolve(intr)
        tc = train_from(cfg, args)
        threshold, min_area = count_opts(cfg, args)
        fractions = fractions_from(cfg, args)
        holdout_every = cfg.get("train", {}).get("holdout_every", 4)

    with stage("assign"):
        sets, _ = assign_frames(read_frames(frames_csv), read_windows(windows_csv))
        write_assignments(out / "assignments.csv", sets)
    with stage("sample"):
        samples = [sample_plot(sets[pid]) for pid in sorted(sets)]
        write_samples(out / "samples.csv", samples)

    with stage("undistort"):
        corrected = out / "corrected"
        corrected.mkdir(exist_ok=True)
        originals = sorted({f.path for s in samples for f in s.frames()})
        new_path = {p: f"corrected/{Path(p).stem}.png" for p in originals}
        if len(set(new_path.values())) != len(new_path):
            raise ValueError("sampled frames do not have unique file names")

        def correct(p):
            res = correct_frame(read_image(resolve_path(p, root)), intr, ucfg)
            write_png(out / new_path[p], res.image)
            return res.failed_pixels

        pmap(correct, originals, threads)
        rows = [(s.plot_id, side, slot, new_path[f.path])
                for s in samples for side, fl in s.by_side().items() for slot, f in enumerate(fl)]
        _write_csv(out / "samples_corrected.csv", ["plot_id", "side", "slot", "frame_path"], rows)
        csamples = read_samples(out / "samples_corrected.csv")

    with stage("count"):
        paths = [(pid, s["A"] + s["B"]) for pid, s in sorted(csamples.items())]
        flat = [p for _, ps in paths for p in ps]
        counts = dict(zip(flat, _count_frames(flat, out, threshold, min_area, threads)))
        tsc = {pid: sum(counts[p] for p in ps) for pid, ps in paths}
        _write_csv(out / "tsc.csv", ["plot_id", "tsc"], sorted(tsc.items()))
        count_summary = None
        if truth_csv is not None:
            truth = read_frame_truth(truth_csv)
            inv = {v: k for k, v in new_path.items()}
            m = _report_count_metrics(out / "count_metrics", [truth[inv[p]] for p in flat],
                                      [counts[p] for p in flat], "frames")
            count_summary = m.to_dict()
            count_summary.pop("residuals")

    with stage("train-yield"):
        records = {r.plot_id: r for r in read_yields(yields_csv)}
        missing = sorted(set(tsc) - set(records))
        if missing:
            raise ManifestError(f"plot {missing[0]} has frames but no yield record")
        good = sorted(p for p in tsc if records[p].quality == 1)
        observed = {p: records[p].yield_t_ha for p in good}
        ext = extractor_from(cfg, seed)
        feats = _plot_features(csamples, out, ext, threads)
        train_ids, hold_ids = _split(good, holdout_every)
        res = _train(feats, observed, train_ids, tc)
        save_model(out / "model.ywts", res.regressor, ext)
        _write_history(out / "history.csv", res.history)

    with stage("predict"):
        # predict from the checkpoint so results match a later `predict` run
        reg, ext = load_model(out / "model.ywts")
        feats = _plot_features(csamples, out, ext, threads)
        preds = {pid: max(0.0, reg.predict(f)) for pid, f in feats.items()}
        _write_predictions(out / "predictions.csv", preds)
        holdout = None
        if len(hold_ids) >= 2:
            m = count_metrics([observed[p] for p in hold_ids], [preds[p] for p in hold_ids])
            holdout = {"n": len(hold_ids), "mse": m.mse, "mae": m.mae, "mape": m.mape, "r2": m.r2}

    with stage("adjust"):
        grid = FieldGrid(good, [records[p].range for p in good], [records[p].pass_ for p in good],
                         [observed[p] for p in good])
        adj_obs, r_obs = _adjust_values(grid, observed, out, "yield")
        adj_tsc, r_tsc = _adjust_values(grid, {p: float(tsc[p]) for p in good}, out, "tsc")
        adj_pred, r_pred = _adjust_values(grid, preds, out, "est_yield")

    with stage("rank"):
        doc = {
            "seed": seed,
            "n_plots": len(good),
            "fractions": list(fractions),
            "adjustment_b": {"yield": r_obs.b, "tsc": r_tsc.b, "est_yield": r_pred.b},
            "training": {"n_train": len(train_ids), "epochs": tc.epochs, "first_loss": res.history[0],
                         "final_loss": res.history[-1], "holdout": holdout},
            "count_metrics": count_summary,
            "selection": {},
        }
        if args.raw:
            kind, truth_vals = "raw", observed
            cands = (("tsc", {p: float(tsc[p]) for p in good}), ("est_yield", {p: preds[p] for p in good}))
        else:
            kind, truth_vals = "adjusted", adj_obs
            cands = (("tsc", adj_tsc), ("est_yield", adj_pred))
        doc["values"] = kind
        text = []
        for name, pred in cands:
            reports = selection_report(truth_vals, pred, fractions)
            doc["selection"][name] = [r.to_dict() for r in reports]
            text.append(report_table(reports, f"selection by {kind} {name} vs {kind} observed yield"))
            for r in reports:
                write_venn(out / f"venn_{name}_{round(r.fraction * 100):02d}.csv", r)
        with open(out / "selection_report.json", "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        (out / "selection_report.txt").write_text("\n".join(text), encoding="utf-8")
    sys.stdout.write("\n".join(text))
    print(f"pipeline outputs in {out}")


# ---------------------------------------------------------------- parser

def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config with per-stage sections")
    common.add_argument("--seed", type=int, help="seed for every random draw")
    common.add_argument("--threads", type=_positive_int, default=1, help="worker threads within a stage")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="soyyield", description="Plot-level soybean yield estimation from ground frames.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[common], help=help_, description=help_)
        sp.set_defaults(func=fn)
        return sp

    def crop_arg(sp):
        sp.add_argument("--crop", type=int, nargs=2, metavar=("W", "H"), help="central window kept after correction")

    def train_args(sp):
        sp.add_argument("--epochs", type=_positive_int)
        sp.add_argument("--batch-size", dest="batch_size", type=_positive_int)
        sp.add_argument("--lr", type=float)

    def count_args(sp):
        sp.add_argument("--threshold", type=float, help="luma threshold (blobs) or confidence threshold (points)")
        sp.add_argument("--min-area", dest="min_area", type=int)

    sp = add("undistort", cmd_undistort, "Correct fisheye frames and keep the central crop.")
    sp.add_argument("--input", nargs="*", help="image files or directories")
    sp.add_argument("--output", help="output directory")
    sp.add_argument("--identity-check", action="store_true", help="verify the principal point maps to itself")
    crop_arg(sp)

    sp = add("assign", cmd_assign, "Assign frames to plots by timestamp windows.")
    sp.add_argument("--frames", required=True)
    sp.add_argument("--windows", required=True)
    sp.add_argument("--output", required=True)

    sp = add("sample", cmd_sample, "Pick 20 frames per plot from an assignment file.")
    sp.add_argument("--assignments", required=True)
    sp.add_argument("--output", required=True)

    sp = add("augment", cmd_augment, "Write one sensor-effect augmented copy beside each image.")
    sp.add_argument("--input", nargs="+", required=True)

    sp = add("train-yield", cmd_train_yield, "Train the yield regression head on sampled frames.")
    sp.add_argument("--samples", required=True)
    sp.add_argument("--yields", required=True)
    sp.add_argument("--root", help="directory that frame paths are relative to")
    sp.add_argument("--output", required=True, help="checkpoint path")
    sp.add_argument("--history", help="per-epoch loss CSV")
    sp.add_argument("--fimg", action="store_true", help="read precomputed <frame>.fimg feature maps")
    sp.add_argument("--all-quality", action="store_true", help="also train on plots flagged quality=0")
    train_args(sp)

    sp = add("predict", cmd_predict, "Predict plot yield with a trained checkpoint.")
    sp.add_argument("--model", required=True)
    sp.add_argument("--samples", required=True)
    sp.add_argument("--root")
    sp.add_argument("--output", required=True)
    sp.add_argument("--fimg", action="store_true")

    sp = add("count", cmd_count, "Total seed count per plot from sampled frames.")
    sp.add_argument("--samples", required=True)
    sp.add_argument("--root")
    sp.add_argument("--points", help="points.csv with detections keyed by frame path")
    sp.add_argument("--output", required=True)
    sp.add_argument("--frame-counts", dest="frame_counts")
    sp.add_argument("--truth", help="CSV frame_path,seed_count for count metrics")
    sp.add_argument("--metrics", help="path prefix for metrics .json/.txt/.svg")
    count_args(sp)

    sp = add("adjust", cmd_adjust, "Moving-grid spatial adjustment of a plot phenotype.")
    sp.add_argument("--input", required=True)
    sp.add_argument("--column", default="value")
    sp.add_argument("--output", required=True)
    sp.add_argument("--summary")

    sp = add("rank", cmd_rank, "Selection agreement at top-fraction thresholds.")
    sp.add_argument("--confusion", help="tp=..,tn=..,fp=..,fn=..")
    sp.add_argument("--truth")
    sp.add_argument("--truth-column", dest="truth_column", default="value")
    sp.add_argument("--pred")
    sp.add_argument("--pred-column", dest="pred_column", default="value")
    sp.add_argument("--fractions", type=float, nargs="+")
    sp.add_argument("--output")
    sp.add_argument("--venn-dir", dest="venn_dir")

    sp = add("synth", cmd_synth, "Generate a synthetic trial with known truth.")
    sp.add_argument("--output", required=True)

    sp = add("pipeline", cmd_pipeline, "Run every stage from manifests to selection report.")
    sp.add_argument("--synth", action="store_true", help="generate a synthetic trial first")
    sp.add_argument("--frames")
    sp.add_argument("--windows")
    sp.add_argument("--yields")
    sp.add_argument("--root")
    sp.add_argument("--truth", help="frame_path,seed_count CSV for count metrics")
    sp.add_argument("--output", required=True)
    sp.add_argument("--fractions", type=float, nargs="+")
    sp.add_argument("--raw", action="store_true", help="rank unadjusted values instead of spatially adjusted ones")
    crop_arg(sp)
    train_args(sp)
    count_args(sp)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(_error_line("config", args.command, exc), file=sys.stderr)
        return 2
    log.debug("kernel backend: %s", kernels.BACKEND)
    limiter = _limit_threads(args.threads)
    try:
        with stage(args.command):
            args.func(args, cfg)
    except StageError as exc:
        print(_error_line(exc.code, exc.stage, exc), file=sys.stderr)
        return 2 if exc.code == "config" else 1
    finally:
        if limiter is not None:
            limiter.unregister()
    return 0


if __name__ == "__main__":
    sys.exit(main())
