"""Command-line front end: ``harunet {synth,train,predict,postprocess,eval,viz}``.

Exit codes: 0 success, 2 usage or configuration error, 3 unreadable or
malformed data, 4 non-finite numbers during training or inference.

Every command writes ``manifest.txt`` into its output directory before
producing anything else. See FORMATS.md for all file layouts.
"""

from __future__ import annotations

import argparse
import colorsys
import shlex
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from . import data as D
from .errors import ConfigurationError, DataError, DimensionError, NumericError, UsageError
from .loss import LossWeights
from .network import NetworkConfig, build
from .postprocess import binarize, connected_components, segment_probabilities
from .tensor import no_grad

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
MANIFEST = "manifest.txt"
GOLDEN = 0.6180339887498949

# keys accepted in a --config file, with their parsers
_NET_KEYS = {
    "in_channels": int, "widths": "ints", "mids": "ints", "heights": "ints", "dilated": "bools",
    "reduction": int, "spatial_kernel": int, "cf_hidden": int, "fusion": str,
    "bn_momentum": float, "net_seed": int,
}
_TRAIN_KEYS = {
    "lr": float, "batch_size": int, "epochs": int, "decay_factor": float, "patience": int,
    "momentum": float, "seed": int, "augment": "bool", "bce_mean": "bool", "edge_width": int,
    "max_steps": int, "w_mask": float, "w_edge": float, "w_side": "floats",
}


# ---------------------------------------------------------------- config files


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def _convert(key: str, kind, text: str):
    try:
        if kind == "ints":
            return tuple(int(v) for v in text.split(","))
        if kind == "floats":
            return tuple(float(v) for v in text.split(","))
        if kind == "bools":
            return tuple(_parse_bool(v) for v in text.split(","))
        if kind == "bool":
            return _parse_bool(text)
        return kind(text.strip())
    except ValueError as exc:
        raise UsageError(f"bad value for {key}: {text!r} ({exc})") from exc


def read_config(path) -> Dict[str, object]:
    """Flat ``key = value`` file; ``#`` starts a comment, blank lines are ignored."""
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    known = {**_NET_KEYS, **_TRAIN_KEYS}
    out = {}
    for number, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{number}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise UsageError(f"{path}:{number}: unknown key {key!r}")
        out[key] = _convert(key, known[key], value)
    return out


def format_config(values: Dict[str, object]) -> str:
    lines = []
    for key in sorted(values):
        v = values[key]
        if isinstance(v, tuple):
            v = ",".join(str(x).lower() if isinstance(x, bool) else repr(x) if isinstance(x, float) else str(x)
                         for x in v)
        elif isinstance(v, bool):
            v = str(v).lower()
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{key} = {v}\n")
    return "".join(lines)


def resolve_train_settings(file_values: Dict[str, object], flags: Dict[str, object]):
    """Merge defaults < config file < command-line flags into the two config objects."""
    values = dict(file_values)
    values.update({k: v for k, v in flags.items() if v is not None})
    seed = int(values.get("seed", 0))
    net_kwargs = {k: values[k] for k in _NET_KEYS if k in values and k != "net_seed"}
    net_kwargs["seed"] = int(values.get("net_seed", seed))
    try:
        net_cfg = NetworkConfig(**net_kwargs)
        weights = LossWeights(
            mask=values.get("w_mask", 1.0), edge=values.get("w_edge", 1.0),
            side=values.get("w_side", (1.0,) * 6),
        )
        from .trainer import TrainConfig

        train_kwargs = {k: values[k] for k in _TRAIN_KEYS
                        if k in values and k not in ("w_mask", "w_edge", "w_side")}
        train_cfg = TrainConfig(weights=weights, **train_kwargs)
    except TypeError as exc:
        raise UsageError(str(exc)) from exc
    return net_cfg, train_cfg, values


def config_snapshot(net_cfg: NetworkConfig, train_cfg) -> Dict[str, object]:
    """Every resolved setting under its config-file key, so a manifest doubles as a config file."""
    out: Dict[str, object] = {}
    for key, value in net_cfg.to_dict().items():
        if value is None:
            continue
        out["net_seed" if key == "seed" else key] = tuple(value) if isinstance(value, list) else value
    for key in _TRAIN_KEYS:
        value = getattr(train_cfg, key, None)
        if value is not None:
            out[key] = value
    w = train_cfg.weights
    out.update(w_mask=float(w.mask), w_edge=float(w.edge), w_side=tuple(w.side))
    return out


# ---------------------------------------------------------------- manifests


def write_manifest(out_dir: Path, command: str, argv: List[str], settings: Dict[str, object],
                   inputs: Dict[str, str], outputs: Dict[str, str], seed: Optional[int] = None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [
        f"tool = harunet {__version__}",
        f"command = {command}",
        f"argv = {shlex.join(['harunet'] + argv)}",
        f"seed = {seed if seed is not None else 'none'}",
    ]
    lines += [f"input.{k} = {v}" for k, v in sorted(inputs.items())]
    lines += [f"output.{k} = {v}" for k, v in sorted(outputs.items())]
    lines += [f"config.{line}" for line in format_config(settings).splitlines()]
    (out_dir / MANIFEST).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------- commands


def cmd_synth(args, argv) -> None:
    out = Path(args.out)
    settings = {"n": args.n, "size": args.size, "density": args.density, "overlap": args.overlap,
                "prune": not args.no_prune}
    write_manifest(out, "synth", argv, settings, {}, {"images": str(out / "images"), "labels": str(out / "labels")},
                   args.seed)
    samples = D.synth_generate(args.n, args.size, args.density, args.overlap, args.seed, prune=not args.no_prune)
    D.save_dataset(samples, out)
    counts = "\n".join(f"{s.id}\t{s.meta['requested']}\t{s.meta['placed']}" for s in samples)
    (out / "counts.txt").write_text("id\trequested\tplaced\n" + counts + "\n")


def cmd_train(args, argv) -> None:
    from .trainer import resume, train

    file_values = read_config(args.config) if args.config else {}
    flags = {"lr": args.lr, "epochs": args.epochs, "batch_size": args.batch_size, "seed": args.seed,
             "max_steps": args.max_steps, "momentum": args.momentum}
    if args.no_augment:
        flags["augment"] = False
    net_cfg, train_cfg, _ = resolve_train_settings(file_values, flags)
    settings = config_snapshot(net_cfg, train_cfg)
    out = Path(args.out)
    train_cfg.checkpoint_dir = str(out)
    write_manifest(out, "train", argv, settings, {"data": args.data, "config": args.config or "none"},
                   {"checkpoint": str(out / "last.ckpt"), "log": str(out / "train_log.txt")}, train_cfg.seed)
    dataset = D.load_dataset(args.data)
    net = build(net_cfg)
    state = optimizer = None
    if args.resume:
        state, optimizer = resume(args.resume, net, train_cfg)
    state = train(net, dataset, train_cfg, state, optimizer)
    print(f"trained {state.epoch} epochs, {state.step} steps, final lr {state.lr!r}, "
          f"last epoch loss {state.history[-1]!r}")


def _pad_to_multiple(image: np.ndarray, multiple: int) -> np.ndarray:
    h, w = image.shape[:2]
    ph, pw = -h % multiple, -w % multiple
    if h + ph == 0 or w + pw == 0:
        raise DataError("empty image")
    return np.pad(image, ((0, ph), (0, pw), (0, 0)), mode="symmetric")


def predict_image(net, image: np.ndarray) -> dict:
    """Network probabilities for one H×W×3 image (padded internally to a valid size)."""
    h, w = image.shape[:2]
    padded = _pad_to_multiple(image, net.config.size_multiple)
    with no_grad():
        out = net(padded.transpose(2, 0, 1)[None])
    maps = {"mask": out.s_mask, "edge": out.s_edge}
    maps.update({f"mask_side{i + 1}": s for i, s in enumerate(out.mask_sides)})
    maps.update({f"edge_side{i + 1}": s for i, s in enumerate(out.edge_sides)})
    result = {}
    for name, t in maps.items():
        arr = t.data[0, 0, :h, :w]
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite values in predicted {name} map")
        result[name] = arr
    return result


def _image_paths(images: Path) -> List[Path]:
    if images.is_file():
        return [images]
    folder = images / "images" if (images / "images").is_dir() else images
    paths = sorted(folder.glob("*.png"))
    if not paths:
        raise DataError(f"no PNG images in {folder}")
    return paths


def cmd_predict(args, argv) -> None:
    from .checkpoint import load_network

    out = Path(args.out)
    paths = _image_paths(Path(args.images))
    write_manifest(out, "predict", argv, {"sides": args.sides},
                   {"checkpoint": args.checkpoint, "images": args.images}, {"maps": str(out)})
    net, _ = load_network(args.checkpoint)
    net.eval()
    for path in paths:
        maps = predict_image(net, D.read_image(path))
        for name, arr in maps.items():
            if args.sides or name in ("mask", "edge"):
                D.write_prob(out / f"{path.stem}_{name}.png", arr)


def _postprocess_one(mask_path: Path, edge_path: Optional[Path], args) -> np.ndarray:
    mask = D.read_prob(mask_path)
    if args.components:
        return connected_components(binarize(mask, args.threshold))[0]
    edge = D.read_prob(edge_path)
    if edge.shape != mask.shape:
        raise DataError(f"{edge_path} is {edge.shape}, {mask_path} is {mask.shape}")
    return segment_probabilities(mask, edge, args.threshold, args.erosion_iters)


def cmd_postprocess(args, argv) -> None:
    settings = {"threshold": args.threshold, "erosion_iters": args.erosion_iters, "components": args.components}
    if args.pred_dir:
        if args.mask or args.edge or args.out_png:
            raise UsageError("give either --pred-dir/--out-dir or MASK EDGE OUT, not both")
        if not args.out_dir:
            raise UsageError("--pred-dir needs --out-dir")
        pred, out = Path(args.pred_dir), Path(args.out_dir)
        masks = sorted(pred.glob("*_mask.png"))
        if not masks:
            raise DataError(f"no *_mask.png files in {pred}")
        write_manifest(out, "postprocess", argv, settings, {"predictions": str(pred)}, {"labels": str(out)})
        for m in masks:
            stem = m.name[: -len("_mask.png")]
            edge = pred / f"{stem}_edge.png"
            if not args.components and not edge.exists():
                raise DataError(f"missing edge map {edge}")
            D.write_labels(out / f"{stem}.png", _postprocess_one(m, edge, args))
        return
    if args.components and args.out_png is None:
        args.edge, args.out_png = None, args.edge  # MASK OUT form
    if not (args.mask and args.out_png and (args.edge or args.components)):
        raise UsageError("postprocess needs MASK EDGE OUT (or --pred-dir and --out-dir)")
    out_png = Path(args.out_png)
    write_manifest(out_png.parent, "postprocess", argv, settings,
                   {"mask": args.mask, "edge": args.edge or "none"}, {"labels": str(out_png)})
    D.write_labels(out_png, _postprocess_one(Path(args.mask), Path(args.edge) if args.edge else None, args))


def _label_dir(path: Path) -> Path:
    return path / "labels" if (path / "labels").is_dir() else path


def cmd_eval(args, argv) -> None:
    from .metrics import evaluate_dataset

    pred_dir, gt_dir = Path(args.pred), _label_dir(Path(args.gt))
    report_path = Path(args.report)
    gt_paths = sorted(gt_dir.glob("*.png"))
    if not gt_paths:
        raise DataError(f"no ground-truth label maps in {gt_dir}")
    kv_path = report_path.with_suffix(".kv")
    write_manifest(report_path.parent, "eval", argv, {}, {"predictions": str(pred_dir), "ground_truth": str(gt_dir)},
                   {"table": str(report_path), "key_values": str(kv_path)})
    preds, gts, ids = [], [], []
    for g in gt_paths:
        p = pred_dir / g.name
        if not p.exists():
            raise DataError(f"no prediction for {g.stem} in {pred_dir}")
        pred, gt = D.read_labels(p), D.read_labels(g)
        if pred.shape != gt.shape:
            raise DataError(f"{g.stem}: prediction {pred.shape} vs ground truth {gt.shape}")
        preds.append(pred)
        gts.append(gt)
        ids.append(g.stem)
    report = evaluate_dataset(preds, gts, ids)
    report.write(report_path, kv_path)
    means = report.means
    print(" ".join(f"{k}={means[k]:.4f}" for k in means))


def label_colors(labels: np.ndarray) -> np.ndarray:
    """RGB uint8 colour per label id (row k for label k, row 0 black), golden-ratio hue steps."""
    n = int(labels.max(initial=0))
    table = np.zeros((n + 1, 3), dtype=np.uint8)
    for k in range(1, n + 1):
        r, g, b = colorsys.hsv_to_rgb((k * GOLDEN) % 1.0, 0.75, 0.95)
        table[k] = np.rint(np.array([r, g, b]) * 255)
    return table


def render_labels(labels: np.ndarray, boundary: bool = False) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.min(initial=0) < 0:
        raise DataError("label maps cannot hold negative ids")
    rgb = label_colors(labels)[labels]
    if boundary:
        rgb[D.boundary_pixels(labels)] = 255
    return rgb


def cmd_viz(args, argv) -> None:
    out_png = Path(args.out_png)
    write_manifest(out_png.parent, "viz", argv, {"boundary": args.boundary}, {"labels": args.instances},
                   {"image": str(out_png)})
    D.write_image(out_png, render_labels(D.read_labels(args.instances), args.boundary) / 255.0)


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="harunet",
        description="Nucleus instance segmentation pipeline. Exit codes: 0 ok, 2 usage, 3 data, 4 numeric.",
    )
    p.add_argument("--version", action="version", version=f"harunet {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic nuclei dataset (images/ + labels/)")
    s.add_argument("--out", required=True, help="output dataset directory")
    s.add_argument("--n", type=int, default=20, help="number of images (default 20)")
    s.add_argument("--size", type=int, default=96, help="image side length in pixels (default 96)")
    s.add_argument("--density", type=float, default=0.3, help="target nucleus area fraction (default 0.3)")
    s.add_argument("--overlap", type=float, default=0.2,
                   help="largest share of a nucleus that may cover earlier ones (default 0.2)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--no-prune", action="store_true", help="keep drawing until every requested nucleus fits")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a network; writes last.ckpt and train_log.txt",
                       description="Settings come from built-in defaults, then --config, then flags.")
    t.add_argument("--data", required=True, help="dataset directory with images/ and labels/")
    t.add_argument("--out", required=True, help="directory for checkpoint, log and manifest")
    t.add_argument("--config", help="flat key = value settings file (see FORMATS.md)")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--lr", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--max-steps", type=int)
    t.add_argument("--momentum", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--no-augment", action="store_true")
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="write 16-bit probability PNGs <id>_mask.png and <id>_edge.png")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--images", required=True, help="PNG file, folder of PNGs, or dataset directory")
    pr.add_argument("--out", required=True)
    pr.add_argument("--sides", action="store_true", help="also write the 12 side maps")
    pr.set_defaults(func=cmd_predict)

    pp = sub.add_parser("postprocess", help="probability maps to a 16-bit instance label PNG")
    pp.add_argument("mask", nargs="?", help="mask probability PNG")
    pp.add_argument("edge", nargs="?", help="edge probability PNG (omitted with --components)")
    pp.add_argument("out_png", nargs="?", help="output label PNG")
    pp.add_argument("--pred-dir", help="process every <id>_mask.png / <id>_edge.png pair in this folder")
    pp.add_argument("--out-dir", help="where --pred-dir results go, as <id>.png")
    pp.add_argument("--threshold", type=float, default=0.5)
    pp.add_argument("--erosion-iters", type=int, default=0, help="3×3 erosions applied to the seeds")
    pp.add_argument("--components", action="store_true",
                    help="baseline: plain connected components of the binarized mask, edge ignored")
    pp.set_defaults(func=cmd_postprocess)

    ev = sub.add_parser("eval", help="Dice, AJI and PQ per image and on average")
    ev.add_argument("--pred", required=True, help="folder of predicted label PNGs named <id>.png")
    ev.add_argument("--gt", required=True, help="dataset directory or folder of ground-truth label PNGs")
    ev.add_argument("--report", required=True, help="text table path; key-value file goes next to it as .kv")
    ev.set_defaults(func=cmd_eval)

    v = sub.add_parser("viz", help="colour-coded rendering of a label map")
    v.add_argument("instances", help="16-bit instance label PNG")
    v.add_argument("out_png")
    v.add_argument("--boundary", action="store_true", help="draw instance boundaries in white")
    v.set_defaults(func=cmd_viz)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.func(args, argv)
    except (UsageError, ConfigurationError) as exc:
        print(f"harunet {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DimensionError, KeyError, OSError) as exc:
        print(f"harunet {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"harunet {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
