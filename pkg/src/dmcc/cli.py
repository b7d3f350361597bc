"""``dmcc`` command line.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""
import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import io, nn
from ._accel import backend, configure_threads
from .augment import AugmentConfig
from .calibration import SensorMap, calibrate_diagonal, calibrate_full
from .features import extract_features
from .imaging import DataError, Illuminant, LinearImage, subtract_black_level
from .metrics import BASELINES, summarize
from .pipeline import PreprocessConfig, evaluate_baseline, evaluate_model, featurize, prepare
from .synth import SyntheticWorldConfig, generate_world
from .trainer import TrainingConfig, build_training_set, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("dmcc")


class UsageError(Exception):
    pass


def _triple(text):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected r,g,b but got {text!r}") from None
    if len(vals) != 3:
        raise argparse.ArgumentTypeError(f"expected 3 comma-separated values, got {text!r}")
    return vals


def _white_arg(text):
    """``r,g,b`` or the path of a manifest carrying ``sensor.d65_white``."""
    p = Path(text)
    if p.is_file():
        doc = json.loads(p.read_text())
        white = (doc.get("sensor") or {}).get("d65_white")
        if white is None:
            raise DataError(f"{p} has no sensor.d65_white")
        return white
    return _triple(text)


def _pre_from_args(args):
    return PreprocessConfig(args.sat_fraction, args.dark_fraction)


def _pre_from_model(model):
    d = model.meta.get("preprocess") or {}
    return PreprocessConfig(**d) if d else PreprocessConfig()


def _emit(args, summary, payload):
    if args.json:
        print(json.dumps(payload, indent=1, allow_nan=False))
    else:
        print(summary)


def cmd_calibrate(args):
    if args.full:
        if not args.pairs:
            raise UsageError("--full needs --pairs")
        with open(args.pairs, newline="") as fh:
            rows = [[float(v) for v in row] for row in csv.reader(fh)
                    if row and not row[0].lstrip().startswith("#")]
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[1] != 6:
            raise DataError("pairs file needs rows of s_r,s_g,s_b,t_r,t_g,t_b")
        m = calibrate_full(rows[:, :3], rows[:, 3:])
    else:
        if args.source_white is None or args.target_white is None:
            raise UsageError("--source-white and --target-white are required")
        m = calibrate_diagonal(_white_arg(args.source_white), _white_arg(args.target_white))
    io.save_calibration(args.out, m)
    text = "\n".join(" ".join(f"{v: .6f}" for v in row) for row in m.matrix)
    _emit(args, f"{m.kind} calibration -> {args.out}\n{text}",
          {"kind": m.kind, "matrix": m.matrix.tolist(), "out": str(args.out)})


def cmd_train(args):
    dataset = io.load_dataset(args.dataset).select(args.split)
    m = io.load_calibration(args.calib) if args.calib else SensorMap.identity()
    pre = _pre_from_args(args)
    aug = AugmentConfig(args.radius, args.aug_per_image, args.seed)
    cfg = TrainingConfig(batch_size=args.batch, epochs=args.epochs, learning_rate=args.lr,
                         l1_lambda=args.l1, early_stopping_patience=args.patience,
                         validation_fraction=args.val_frac, rng_seed=args.seed)
    split = build_training_set(dataset, m, aug, cfg.validation_fraction, pre)
    log.info("training on %d entries (%d validation), backend %s", split.n_train,
             len(split.val_ids), backend())
    model, report = train(split, cfg)
    model.meta.update({
        "calibration": m.fingerprint(),
        "preprocess": pre.to_dict(),
        "augment": {"radius": aug.radius, "samples_per_image": aug.samples_per_image},
        "training": {"epochs": cfg.epochs, "batch_size": cfg.batch_size,
                     "learning_rate": cfg.learning_rate, "l1_lambda": cfg.l1_lambda},
    })
    io.save_model(args.out, model)
    report_path = Path(args.report) if args.report else Path(str(args.out) + ".report.json")
    rep = report.to_dict()
    rep.update({"n_train": split.n_train, "n_val": len(split.val_ids),
                "failures": split.failures})
    io.save_json(report_path, rep)
    if args.curve_csv:
        io.save_curve_csv(args.curve_csv, report)
    _emit(args,
          f"model -> {args.out}\nbest epoch {report.best_epoch}, validation error "
          f"{report.best_val_error:.4f} deg, {report.seconds:.1f} s",
          {"model": str(args.out), "report": str(report_path), "best_epoch": report.best_epoch,
           "best_val_error": report.best_val_error, "seconds": report.seconds})


def _time_inference(model, image, pre, repeat):
    theta = model.theta()
    sizes = model.arch.sizes
    nn.predict_theta(theta, sizes, featurize(image, pre))  # warm-up
    times = []
    for _ in range(max(1, repeat)):
        t0 = time.perf_counter()
        rg = nn.predict_theta(theta, sizes, featurize(image, pre))
        times.append(time.perf_counter() - t0)
    return rg[0], float(np.median(times)) * 1e3


def cmd_estimate(args):
    model = io.load_model(args.model)
    image = io.read_raster(args.image)
    (r, g), ms = _time_inference(model, image, _pre_from_model(model), args.repeat)
    b = 1.0 - r - g
    rgb = nn.chroma_to_rgb(np.array([[r, g]]))[0]
    _emit(args, f"r={r:.6f} g={g:.6f} b={b:.6f}  rgb={np.round(rgb, 6).tolist()}  "
                f"latency={ms:.3f} ms",
          {"chromaticity": [float(r), float(g), float(b)], "rgb": rgb.tolist(),
           "latency_ms": ms, "backend": backend()})


def cmd_evaluate(args):
    if not args.model and not args.baseline:
        raise UsageError("need --model or --baseline")
    dataset = io.load_dataset(args.dataset).select(args.split)
    if args.baseline:
        kwargs = {"p": args.p} if args.baseline == "shades-of-gray" else {}
        ids, errs = evaluate_baseline(BASELINES[args.baseline], dataset, _pre_from_args(args),
                                      **kwargs)
        method = args.baseline
    else:
        model = io.load_model(args.model)
        ids, errs = evaluate_model(model, dataset, _pre_from_model(model))
        method = "dmcc"
    summary = summarize(errs)
    doc = io.evaluation_report(ids, errs, summary, method=method)
    if args.report:
        io.save_json(args.report, doc)
    s = summary
    _emit(args, f"{method}: n={s.n} mean={s.mean:.3f} median={s.median:.3f} "
                f"trimean={s.trimean:.3f} best25={s.best25:.3f} worst25={s.worst25:.3f}",
          {k: v for k, v in doc.items() if k != "per_image"})


def cmd_synth(args):
    if args.config:
        cfg = SyntheticWorldConfig.from_dict(json.loads(Path(args.config).read_text()))
    elif args.preset == "perturbed":
        cfg = SyntheticWorldConfig.perturbed()
    else:
        cfg = SyntheticWorldConfig()
    if args.seed is not None:
        cfg.rng_seed = args.seed
    if args.scenes is not None:
        cfg.scene_count = args.scenes
    src, tgt, true_map, (ws, wt) = generate_world(cfg)
    out = Path(args.out_dir)
    io.save_dataset(src, out / "source.json")
    io.save_dataset(tgt, out / "target.json")
    truth = {"true_map": true_map.fingerprint(), "source_white": ws.tolist(),
             "target_white": wt.tolist(), "config": cfg.to_dict()}
    io.save_json(out / "truth.json", truth)
    _emit(args, f"{len(src)} scenes -> {out}",
          {"out_dir": str(out), "scenes": len(src), "source": str(out / "source.json"),
           "target": str(out / "target.json"), "truth": str(out / "truth.json")})


def cmd_apply(args):
    model = io.load_model(args.model)
    image = subtract_black_level(io.read_raster(args.image))
    pre = _pre_from_model(model)
    rg = nn.forward_batch(model, featurize(image, pre))
    est = Illuminant(nn.chroma_to_rgb(rg)[0])
    gains = est.g_normalized()
    corrected = LinearImage(image.pixels / gains, np.zeros(3), image.saturation_level)
    io.write_raster(args.out, corrected)
    _emit(args, f"illuminant {np.round(est.rgb, 6).tolist()} -> {args.out}",
          {"rgb": est.rgb.tolist(), "gains": gains.tolist(), "out": str(args.out)})


def cmd_features(args):
    dataset = io.load_dataset(args.dataset).select(args.split)
    m = io.load_calibration(args.calib) if args.calib else None
    pre = _pre_from_args(args)
    feats = [extract_features(*prepare(e.load_image(), pre, m)) for e in dataset]
    io.save_features_csv(args.out, [e.id for e in dataset], feats)
    _emit(args, f"{len(feats)} feature rows -> {args.out}", {"rows": len(feats), "out": str(args.out)})


def _add_pre_flags(p):
    p.add_argument("--sat-fraction", type=float, default=PreprocessConfig.sat_fraction)
    p.add_argument("--dark-fraction", type=float, default=PreprocessConfig.dark_fraction)


def build_parser():
    parser = argparse.ArgumentParser(prog="dmcc", description="Dual-mapping color constancy.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--json", action="store_true", help="machine-readable output on stdout")
        return p

    p = common(sub.add_parser("calibrate", help="derive the sensor map from D65 white points"))
    p.add_argument("--source-white", help="r,g,b or a manifest with sensor.d65_white")
    p.add_argument("--target-white", help="r,g,b or a manifest with sensor.d65_white")
    p.add_argument("--full", action="store_true", help="least-squares 3x3 map from --pairs")
    p.add_argument("--pairs", help="CSV rows s_r,s_g,s_b,t_r,t_g,t_b")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = common(sub.add_parser("train", help="train the MLP on mapped source data"))
    p.add_argument("--dataset", required=True)
    p.add_argument("--calib", help="calibration JSON (identity if omitted)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", help="only use entries with this split tag")
    p.add_argument("--epochs", type=int, default=TrainingConfig.epochs)
    p.add_argument("--lr", type=float, default=TrainingConfig.learning_rate)
    p.add_argument("--batch", type=int, default=TrainingConfig.batch_size)
    p.add_argument("--l1", type=float, default=TrainingConfig.l1_lambda)
    p.add_argument("--radius", type=float, default=AugmentConfig.radius)
    p.add_argument("--aug-per-image", type=int, default=AugmentConfig.samples_per_image)
    p.add_argument("--val-frac", type=float, default=TrainingConfig.validation_fraction)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--report", help="training report JSON (default: <out>.report.json)")
    p.add_argument("--curve-csv", help="per-epoch loss/validation CSV")
    _add_pre_flags(p)
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("estimate", help="estimate the illuminant of one raster"))
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--repeat", type=int, default=20, help="timed runs for the latency median")
    p.set_defaults(func=cmd_estimate)

    p = common(sub.add_parser("evaluate", help="angular-error statistics on a dataset"))
    p.add_argument("--model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--report")
    p.add_argument("--split")
    p.add_argument("--baseline", choices=sorted(BASELINES))
    p.add_argument("--p", type=float, default=6.0, help="shades-of-gray Minkowski order")
    _add_pre_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = common(sub.add_parser("synth", help="generate a synthetic two-sensor world"))
    p.add_argument("--config", help="world config JSON")
    p.add_argument("--preset", choices=("diagonal", "perturbed"), default="diagonal")
    p.add_argument("--seed", type=int)
    p.add_argument("--scenes", type=int)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = common(sub.add_parser("apply", help="white-balance a raster with the model estimate"))
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_apply)

    p = common(sub.add_parser("features", help="dump feature vectors as CSV"))
    p.add_argument("--dataset", required=True)
    p.add_argument("--calib")
    p.add_argument("--split")
    p.add_argument("--out", required=True)
    _add_pre_flags(p)
    p.set_defaults(func=cmd_features)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    configure_threads()
    try:
        args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"dmcc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except nn.DivergenceError as exc:
        print(f"dmcc: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ValueError, OSError, KeyError) as exc:
        print(f"dmcc: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
