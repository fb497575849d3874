"""Command-line entry point: ``eventdart <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import classify as clf
from . import dart, elot, encoding, matching, metrics, render, synth
from .config import PipelineConfig, format_config, load_config
from .errors import DartError
from .events import (AnnotationInterval, AnnotationTrack, BoundingBox, EventStream,
                     format_annotations, parse_annotations, read_events, write_events)
from .filtering import cascade

log = logging.getLogger("eventdart")

EVENT_SUFFIXES = (".bin", ".aer", ".txt")


# -- helpers ---------------------------------------------------------------------

def _config(args) -> PipelineConfig:
    overrides = {}
    for item in args.set or ():
        if "=" not in item:
            raise DartError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    for flag, key in (("theta_noise_us", "theta_noise_us"), ("theta_ref_us", "theta_ref_us"),
                      ("seed", "seed")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = str(value)
    cfg = load_config(args.config, overrides)
    if args.emit_effective_config:
        Path(args.emit_effective_config).write_text(format_config(cfg))
    return cfg


def _read(path, args=None) -> EventStream:
    w = getattr(args, "width", None)
    h = getattr(args, "height", None)
    return read_events(path, w, h)


def _pair(text: str) -> tuple[int, int]:
    try:
        a, b = (int(float(v)) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected t0,t1 in microseconds, got {text!r}")
    if b <= a:
        raise argparse.ArgumentTypeError("interval end must exceed its start")
    return a, b


def load_labelled(root, per_class: Optional[int] = None) -> tuple[list[Path], list[int]]:
    """``root/<integer label>/<recording>`` files, sorted, optionally capped per class."""
    root = Path(root)
    if not root.is_dir():
        raise DartError(f"{root}: not a directory")
    files, labels = [], []
    for d in sorted((p for p in root.iterdir() if p.is_dir() and p.name.lstrip("-").isdigit()),
                    key=lambda p: int(p.name)):
        recs = sorted(p for p in d.iterdir() if p.suffix in EVENT_SUFFIXES)
        recs = recs[:per_class] if per_class else recs
        files += recs
        labels += [int(d.name)] * len(recs)
    if not files:
        raise DartError(f"{root}: no labelled recordings found")
    return files, labels


def _model_paths(prefix) -> tuple[Path, Path, Path]:
    p = str(prefix)
    return Path(p + ".cbk"), Path(p + ".svm"), Path(p + ".cfg")


def save_classifier(prefix, pipe: clf.ClassifierPipeline, cfg: PipelineConfig) -> None:
    cb, sv, cf = _model_paths(prefix)
    encoding.write_codebook(cb, pipe.codebook, pipe.forest)
    clf.write_model(sv, pipe.model)
    cf.write_text(format_config(cfg))


def load_classifier(prefix, cfg: Optional[PipelineConfig] = None) -> clf.ClassifierPipeline:
    cb, sv, cf = _model_paths(prefix)
    if cfg is None:
        cfg = load_config(cf if cf.exists() else None)
    codebook, forest = encoding.read_codebook(cb)
    return clf.ClassifierPipeline(codebook, clf.read_model(sv), forest, **cfg.pipeline_settings())


def benchmark_extract(duration_us: int = 2_000_000, seed: int = 0,
                      cfg: Optional[PipelineConfig] = None) -> tuple[int, float]:
    """Time descriptor extraction over a generated scene; returns (events, events/s)."""
    cfg = cfg or PipelineConfig()
    scene = synth.make_scene("translate", "triangle", duration_us)
    stream, _, _ = synth.synth_generate(scene, seed)
    grid = cfg.grid()
    # compile outside the timed region
    dart.DartEngine(grid, stream.width, stream.height, cfg.fifo_size).describe(
        stream.select(slice(0, 100)))
    eng = dart.DartEngine(grid, stream.width, stream.height, cfg.fifo_size)
    t0 = time.perf_counter()
    eng.describe(stream)
    dt = time.perf_counter() - t0
    return len(stream), len(stream) / dt


# -- subcommands -------------------------------------------------------------------

def cmd_convert(args) -> int:
    write_events(_read(args.input, args), args.output)
    return 0


def cmd_filter(args) -> int:
    cfg = _config(args)
    s = _read(args.input, args)
    out = cascade(s, cfg.theta_noise_us, cfg.theta_ref_us)
    write_events(out, args.output)
    print(f"kept {len(out)} of {len(s)} events")
    return 0


def cmd_extract(args) -> int:
    cfg = _config(args)
    if args.benchmark:
        n, rate = benchmark_extract(int(args.benchmark_ms * 1000), cfg.seed, cfg)
        print(f"extracted {n} events at {rate:.0f} events/s")
        return 0
    if not args.input or not args.output:
        raise DartError("extract needs INPUT and OUTPUT (or --benchmark)")
    s = _read(args.input, args)
    kept = cascade(s, cfg.theta_noise_us, cfg.theta_ref_us)
    desc = dart.DartEngine(cfg.grid(), s.width, s.height, cfg.fifo_size).describe(kept)
    if str(args.output).endswith(".csv"):
        Path(args.output).write_text(dart.descriptors_to_csv(kept, desc))
    else:
        dart.write_descriptors(args.output, desc, cfg.n_rings, cfg.n_wedges)
    print(f"{len(desc)} descriptors from {len(s)} events")
    return 0


def cmd_train_codebook(args) -> int:
    cfg = _config(args)
    pipe = clf.ClassifierPipeline(None, **cfg.pipeline_settings())  # type: ignore[arg-type]
    streams = [_read(p, args) for p in args.inputs]
    X = clf.sample_descriptors(pipe, streams, cfg.max_descriptors, cfg.seed)
    K = args.k or cfg.k_classify
    cb = encoding.kmeans_train(X, K, cfg.kmeans_iters, cfg.seed)
    forest = encoding.build_forest(cb, cfg.n_trees, cfg.seed, cfg.max_checks) if args.forest else None
    encoding.write_codebook(args.output, cb, forest)
    print(f"codebook K={cb.K} from {len(X)} descriptors")
    return 0


def cmd_train_classifier(args) -> int:
    cfg = _config(args)
    files, labels = load_labelled(args.data, args.per_class)
    streams = [_read(p, args) for p in files]
    pipe = clf.train_classifier(streams, labels, args.k or cfg.k_classify, cfg.seed,
                                cfg.max_descriptors, cfg.kmeans_iters, cfg.svm_c,
                                cfg.svm_epochs, cfg.classify_forest, cfg.max_checks,
                                **cfg.pipeline_settings())
    save_classifier(args.model, pipe, cfg)
    print(f"trained on {len(streams)} recordings, {len(set(labels))} classes")
    return 0


def cmd_classify(args) -> int:
    pipe = load_classifier(args.model, _config(args) if args.config or args.set else None)
    for p in args.inputs:
        print(f"{p}\t{pipe.classify(_read(p, args))}")
    return 0


def cmd_eval_classify(args) -> int:
    pipe = load_classifier(args.model, _config(args) if args.config or args.set else None)
    files, labels = load_labelled(args.data, args.per_class)
    ends = [int(ms * 1000) for ms in args.prefix_ms] if args.prefix_ms else []
    preds: dict[str, list[int]] = {"full": []}
    for e in ends:
        preds[f"{e // 1000}ms"] = []
    for p in files:
        s = _read(p, args)
        preds["full"].append(pipe.model.predict(pipe.represent(s)))
        if ends:
            for e, psi in zip(ends, pipe.represent_prefixes(s, ends)):
                preds[f"{e // 1000}ms"].append(pipe.model.predict(psi))
    rows = ["window,accuracy,class_averaged"]
    for name, pr in preds.items():
        rep = metrics.accuracy(labels, pr, pipe.model.labels)
        rows.append(f"{name},{rep.overall:.4f},{rep.class_averaged:.4f}")
        print(f"{name:>6}: accuracy {rep.overall:.4f}  class-averaged {rep.class_averaged:.4f}")
        if name == "full":
            print("confusion (rows actual, columns predicted):")
            for lab, row in zip(rep.labels, rep.confusion):
                print(f"{lab:>4} " + " ".join(f"{v:>4}" for v in row))
    if args.output:
        Path(args.output).write_text("\n".join(rows) + "\n")
    return 0


def _roi_from(path) -> BoundingBox:
    track = parse_annotations(Path(path).read_text())
    for iv in track:
        if iv.box is not None:
            return iv.box
    raise DartError(f"{path}: no box to initialize from")


def cmd_track(args) -> int:
    cfg = _config(args)
    s = _read(args.input, args)
    res = elot.elot_run(s, _roi_from(args.roi), cfg.elot())
    Path(args.output).write_text(elot.format_track_csv(res))
    modes = {m: sum(r.mode == m for r in res) for m in ("tracked", "lost", "detected")}
    print(", ".join(f"{k} {v}" for k, v in modes.items()))
    return 0


def cmd_match(args) -> int:
    cfg = _config(args)
    s = _read(args.input, args)
    grid = cfg.grid()
    kw = dict(grid=grid, fifo_size=cfg.fifo_size, theta_noise=cfg.theta_noise_us,
              theta_ref=cfg.theta_ref_us, every=cfg.match_every)
    A = matching.slice_features(s, *args.slice_a, **kw)
    B = matching.slice_features(s, *args.slice_b, **kw)
    forest = (matching.build_match_forest(B, cfg.n_trees, cfg.seed, cfg.max_checks)
              if args.ann else None)
    pairs = matching.match_sets(A, B, args.ratio or cfg.match_ratio, forest, args.mutual)
    Path(args.output).write_text(matching.format_match_csv(A, B, pairs))
    print(f"{len(pairs)} matches from {len(A)} x {len(B)} features")
    return 0


def predictions_from_csv(text: str, gt: AnnotationTrack) -> list[Optional[BoundingBox]]:
    res = elot.parse_track_csv(text)
    return elot.boxes_for_intervals(res, [(iv.t_start, iv.t_end) for iv in gt])


def cmd_eval_track(args) -> int:
    cfg = _config(args)
    s = _read(args.input, args)
    gt = parse_annotations(Path(args.gt).read_text())
    pred_text = Path(args.pred).read_text()
    if pred_text.startswith("t_decision_us"):
        preds = predictions_from_csv(pred_text, gt)
    else:
        # an annotation-format prediction: one box per interval
        ptrack = parse_annotations(pred_text)
        preds = [ptrack.box_at(iv.t_start) for iv in gt]
    events = s if args.raw_events else cascade(s, cfg.theta_noise_us, cfg.theta_ref_us)
    rep = metrics.evaluate_track(events, gt, preds)
    rows = [(Path(args.input).stem, rep)]
    print(metrics.format_summary(rows), end="")
    if args.output:
        Path(args.output).write_text(metrics.format_metrics_csv(rows))
    return 0


def cmd_synth(args) -> int:
    cfg = _config(args)
    scene = synth.make_scene(args.scene, args.shape, int(args.duration_ms * 1000), args.edge_rate,
                             args.noise_fraction, not args.no_distractors)
    stream, gt, _ = synth.synth_generate(scene, cfg.seed)
    out = Path(args.output)
    write_events(stream, out)
    gt_path = Path(args.gt) if args.gt else out.with_suffix(".gt")
    gt_path.write_text(format_annotations(gt))
    first = next((iv.box for iv in gt if iv.box is not None), None)
    if first is not None:
        roi = first.padded(1, 1, stream.width, stream.height)
        roi_path = out.with_suffix(".roi")
        roi_path.write_text(format_annotations(AnnotationTrack(
            (AnnotationInterval(gt.intervals[0].t_start, gt.intervals[0].t_end, roi),))))
    print(f"{len(stream)} events, {len(gt)} intervals")
    return 0


def cmd_render(args) -> int:
    s = _read(args.input, args)
    boxes = []
    if args.boxes:
        text = Path(args.boxes).read_text()
        if text.startswith("t_decision_us"):
            res = elot.parse_track_csv(text)
            boxes = [b for b in elot.boxes_for_intervals(res, [(args.t0, args.t1)]) if b]
        else:
            b = parse_annotations(text).box_at(args.t0)
            boxes = [b] if b else []
    lines = []
    if args.matches:
        for row in csv.DictReader(Path(args.matches).read_text().splitlines()):
            lines.append(((int(row["xa"]), int(row["ya"])), (int(row["xb"]), int(row["yb"]))))
    render.render_overlay(s, args.t0, args.t1, args.output, boxes, lines)
    return 0


# -- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one configuration key (repeatable)")
    common.add_argument("--emit-effective-config", metavar="PATH",
                        help="write every configuration value in force to PATH")
    common.add_argument("--seed", type=int)
    common.add_argument("--theta-noise-us", type=int)
    common.add_argument("--theta-ref-us", type=int)
    common.add_argument("--width", type=int, help="sensor width for inputs")
    common.add_argument("--height", type=int, help="sensor height for inputs")

    p = argparse.ArgumentParser(prog="eventdart",
                                description="DART descriptors for event cameras.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(func=fn)
        return sp

    sp = add("convert", cmd_convert, "convert between AER (.bin/.aer) and text events")
    sp.add_argument("input")
    sp.add_argument("output")

    sp = add("filter", cmd_filter, "apply the refractory and noise filters")
    sp.add_argument("input")
    sp.add_argument("output")

    sp = add("extract", cmd_extract, "DART descriptors of filtered events")
    sp.add_argument("input", nargs="?")
    sp.add_argument("output", nargs="?", help=".drt binary dump or .csv")
    sp.add_argument("--benchmark", action="store_true",
                    help="time extraction on generated events instead")
    sp.add_argument("--benchmark-ms", type=float, default=2000.0)

    sp = add("train-codebook", cmd_train_codebook, "k-means codebook from recordings")
    sp.add_argument("inputs", nargs="+")
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("-k", type=int)
    sp.add_argument("--forest", action="store_true", help="store kd-forest parameters too")

    sp = add("train-classifier", cmd_train_classifier, "codebook plus one-vs-rest SVMs")
    sp.add_argument("data", help="directory of <label>/<recording> files")
    sp.add_argument("-m", "--model", required=True, help="output prefix")
    sp.add_argument("-k", type=int)
    sp.add_argument("--per-class", type=int)

    sp = add("classify", cmd_classify, "label recordings with a trained classifier")
    sp.add_argument("inputs", nargs="+")
    sp.add_argument("-m", "--model", required=True)

    sp = add("eval-classify", cmd_eval_classify, "accuracy on a labelled directory")
    sp.add_argument("data")
    sp.add_argument("-m", "--model", required=True)
    sp.add_argument("--per-class", type=int)
    sp.add_argument("--prefix-ms", type=float, nargs="*",
                    help="also classify the first N ms of every recording")
    sp.add_argument("-o", "--output")

    sp = add("track", cmd_track, "long-term tracking from an initial box")
    sp.add_argument("input")
    sp.add_argument("--roi", required=True, help="annotation file; its first box starts tracking")
    sp.add_argument("-o", "--output", required=True)

    sp = add("match", cmd_match, "match DART features between two time slices")
    sp.add_argument("input")
    sp.add_argument("--slice-a", type=_pair, required=True, metavar="T0,T1")
    sp.add_argument("--slice-b", type=_pair, required=True, metavar="T2,T3")
    sp.add_argument("--ratio", type=float)
    sp.add_argument("--ann", action="store_true", help="search with a kd-forest")
    sp.add_argument("--mutual", action="store_true")
    sp.add_argument("-o", "--output", required=True)

    sp = add("eval-track", cmd_eval_track, "OS, CLE and event IoU against ground truth")
    sp.add_argument("input")
    sp.add_argument("--gt", required=True)
    sp.add_argument("--pred", required=True, help="track CSV or annotation file")
    sp.add_argument("--raw-events", action="store_true",
                    help="count unfiltered events instead of filtered ones")
    sp.add_argument("-o", "--output")

    sp = add("synth", cmd_synth, "generate a synthetic scene with ground truth")
    sp.add_argument("-o", "--output", required=True, help="event file (.txt or .bin)")
    sp.add_argument("--gt", help="annotation output (default: OUTPUT with .gt suffix)")
    sp.add_argument("--scene", choices=synth.SCENES, default="translate")
    sp.add_argument("--shape", choices=sorted(synth.SHAPES), default="triangle")
    sp.add_argument("--duration-ms", type=float, default=2000.0)
    sp.add_argument("--edge-rate", type=float, default=0.2, help="events per edge pixel per ms")
    sp.add_argument("--noise-fraction", type=float, default=0.1)
    sp.add_argument("--no-distractors", action="store_true")

    sp = add("render", cmd_render, "PPM overlay of a time window")
    sp.add_argument("input")
    sp.add_argument("--t0", type=int, required=True)
    sp.add_argument("--t1", type=int, required=True)
    sp.add_argument("--boxes", help="track CSV or annotation file")
    sp.add_argument("--matches", help="match CSV")
    sp.add_argument("-o", "--output", required=True)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (DartError, ValueError, OSError) as exc:
        print(f"eventdart {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
