"""Command-line interface: ``irisrcnn <command> ...``.

Exit codes: 0 on success, 1 on runtime or I/O failure, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .dataio import load_dataset, read_pgm, write_pgm
from .geometry import anchor_grid
from .matcher import MaskedFeatureMap, pairwise_shifted_distances
from .metrics import eer_roc, err_seg, iou_seg, rasterize_double_circle
from .pipeline import LOSS_COLUMNS, NORM_SHAPE, IrisRCNN
from .rubbersheet import unwrap_mask
from .synthgen import SynthParams, generate_dataset

logger = logging.getLogger("irisrcnn")


class UsageError(Exception):
    pass


def loss_log_path(weights_path) -> Path:
    p = Path(weights_path)
    return p.with_name(p.name + ".losses.csv")


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _float_list(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _image_size(text):
    try:
        h, w = (int(t) for t in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError("image size must be positive")
    return h, w


def _fmt(x: float) -> str:
    return "inf" if np.isinf(x) else repr(float(x))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(args):
    params = SynthParams.from_json(args.params) if args.params else SynthParams()
    records = generate_dataset(args.train, args.test, args.identities, params, args.seed, args.out)
    print(f"wrote {len(records)} records to {args.out}")


def _split_or_all(ds, name):
    return ds.split(name) if name in ds.splits else ds


def cmd_train(args):
    ds = _split_or_all(load_dataset(args.data), "train")
    kwargs = dict(
        epochs=args.epochs,
        learning_rate=args.lr,
        reg_lambda=args.lam,
        random_state=args.seed,
        paper_scale=args.paper_scale,
        verbose=args.verbose,
    )
    model = IrisRCNN(**kwargs)
    model.fit(ds.images, list(zip(ds.circles, ds.masks)))
    model.save(args.out)
    log_path = loss_log_path(args.out)
    with open(log_path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(LOSS_COLUMNS)
        for row in model.loss_log_:
            w.writerow([row[0], *(repr(float(v)) for v in row[1:])])
    print(f"wrote {args.out} and {log_path}")


def cmd_segment(args):
    model = IrisRCNN.load(args.weights)
    image = read_pgm(args.image)
    res = model.segment(image)
    prefix = str(args.out_prefix)
    if res is None:
        Path(prefix + ".circles.json").write_text(json.dumps({"detection": None}) + "\n")
        print("no detection")
        return
    doc = {"detection": res.dc.to_dict(), "circles": res.dc.to_array().tolist(), "score": res.score}
    Path(prefix + ".circles.json").write_text(json.dumps(doc, indent=1) + "\n")
    write_pgm(prefix + ".norm.pgm", res.normalized_iris)
    write_pgm(prefix + ".mask.pgm", res.normalized_mask)
    print(f"score {res.score:.4f}")


def evaluate_segmentation(model, ds):
    """Per-image ``(iou_seg, err_seg, detected)``; a miss scores IoU 0 and error 1."""
    rows = []
    for img, mask in zip(ds.images, ds.masks):
        res = model.segment(img)
        if res is None:
            rows.append((0.0, 1.0, False))
            continue
        region = rasterize_double_circle(res.dc.to_array(), *img.shape[1:])
        label = unwrap_mask(mask, res.dc, *res.normalized_mask.shape[1:]).data
        rows.append((iou_seg(region, mask), err_seg(res.normalized_mask, label), True))
    return rows


def cmd_eval_seg(args):
    model = IrisRCNN.load(args.weights)
    ds = load_dataset(args.data)
    split = "test" if "test" in ds.splits else "all"
    idx = ds.splits.get(split, list(range(len(ds))))
    rows = evaluate_segmentation(model, ds.subset(idx))
    ious = np.array([r[0] for r in rows])
    errs = np.array([r[1] for r in rows])
    with open(args.report, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["index", "iou_seg", "err_seg", "detected"])
        for i, (iou, err, det) in zip(idx, rows):
            w.writerow([i, repr(iou), repr(err), int(det)])
        w.writerow(["mean", repr(float(ious.mean())), repr(float(errs.mean())), sum(r[2] for r in rows)])
        w.writerow(["std", repr(float(ious.std())), repr(float(errs.std())), ""])
    print(
        f"IoU_SEG {ious.mean():.4f} +- {ious.std():.4f}  "
        f"Err_SEG {errs.mean():.4f} +- {errs.std():.4f}  ({len(rows)} images)"
    )


def match_distances(model, ds, max_shift):
    """Segment every image and return the pairwise distance matrix.

    A failed segmentation gets an empty mask, so all its distances are infinite.
    """
    maps = []
    for img in ds.images:
        res = model.segment(img)
        if res is None:
            empty = np.zeros((1,) + NORM_SHAPE)
            maps.append(MaskedFeatureMap(empty, empty))
        else:
            maps.append(MaskedFeatureMap(res.normalized_iris, res.normalized_mask))
    return pairwise_shifted_distances(maps, max_shift)


def genuine_imposter(dist, identities):
    ids = np.asarray(identities)
    iu, ju = np.triu_indices(len(ids), k=1)
    same = ids[iu] == ids[ju]
    d = dist[iu, ju]
    return d[same], d[~same], (iu, ju)


def cmd_match(args):
    model = IrisRCNN.load(args.weights)
    ds = load_dataset(args.data)
    if "test" in ds.splits:
        ds = ds.split("test")
    dist = match_distances(model, ds, args.max_shift)
    genuine, imposter, (iu, ju) = genuine_imposter(dist, ds.identities)
    if genuine.size == 0 or imposter.size == 0:
        raise RuntimeError("need at least one genuine and one imposter pair")
    eer, curve = eer_roc(genuine, imposter)
    with open(args.report, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["kind", "a", "b", "c"])
        w.writerow(["eer", repr(eer), len(genuine), len(imposter)])
        for p in curve:
            w.writerow(["roc", _fmt(p.threshold), repr(float(p.far)), repr(float(p.frr))])
        for i, j in zip(iu, ju):
            w.writerow(["distance", i, j, _fmt(dist[i, j])])
    print(f"EER {eer:.4f}  genuine {len(genuine)}  imposter {len(imposter)}")


def cmd_anchors(args):
    h, w = args.image_size
    fh, fw = -(-h // args.stride), -(-w // args.stride)
    try:
        anchors = anchor_grid(fw, fh, args.stride, args.radii, args.ratios)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    doc = {
        "image_size": [h, w],
        "feature_size": [fh, fw],
        "stride": args.stride,
        "radii": args.radii,
        "ratios": args.ratios,
        "layout": ["x_iris", "y_iris", "x_pupil", "y_pupil", "r_iris", "r_pupil"],
        "anchors": anchors.tolist(),
    }
    json.dump(doc, sys.stdout)
    sys.stdout.write("\n")


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="irisrcnn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic eye dataset")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--train", required=True, type=_positive_int)
    p.add_argument("--test", required=True, type=_positive_int)
    p.add_argument("--identities", required=True, type=_positive_int)
    p.add_argument("--seed", required=True, type=_nonneg_int)
    p.add_argument("--params", type=Path, help="JSON file with SynthParams overrides")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--epochs", type=_positive_int, default=60)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--seed", type=_nonneg_int, default=0)
    scale = p.add_mutually_exclusive_group()
    scale.add_argument("--toy", dest="paper_scale", action="store_false", help="small head widths (default)")
    scale.add_argument("--paper-scale", dest="paper_scale", action="store_true", help="512/1024-wide heads")
    p.set_defaults(func=cmd_train, paper_scale=False)

    p = sub.add_parser("segment", help="segment one PGM image")
    p.add_argument("--weights", required=True, type=Path)
    p.add_argument("--image", required=True, type=Path)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("eval-seg", help="IoU_SEG / Err_SEG report on the test split")
    p.add_argument("--weights", required=True, type=Path)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--report", required=True, type=Path)
    p.set_defaults(func=cmd_eval_seg)

    p = sub.add_parser("match", help="all-pairs matching, EER and ROC on the test split")
    p.add_argument("--weights", required=True, type=Path)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--max-shift", type=_nonneg_int, default=8)
    p.add_argument("--report", required=True, type=Path)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("anchors", help="dump the anchor grid as JSON")
    p.add_argument("--image-size", required=True, type=_image_size)
    p.add_argument("--stride", required=True, type=_positive_int)
    p.add_argument("--radii", required=True, type=_float_list)
    p.add_argument("--ratios", required=True, type=_float_list)
    p.set_defaults(func=cmd_anchors)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s"
    )
    try:
        if getattr(args, "max_shift", None) is not None and args.max_shift >= NORM_SHAPE[1]:
            raise UsageError(f"--max-shift must be smaller than {NORM_SHAPE[1]}")
        args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"irisrcnn {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"irisrcnn {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
