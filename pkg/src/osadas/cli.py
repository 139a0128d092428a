"""Command line entry point: ``osadas explain | evaluate | compare``.

Exit codes: 0 success, 2 usage/config error, 3 model load or capability
error, 4 runtime failure during inference.

Every option can also come from ``--config FILE``.  The file is TOML (or
JSON when it ends in ``.json``) with flat ``key = value`` pairs whose keys
are the long option names with dashes or underscores, e.g.::

    model = "oracle:32x32@(96,96)"
    mask-size = 64
    augmentations = 32
    policy = "trivial"

Flags given on the command line win over the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from . import artifacts
from .augment import OP_KINDS, AugmentationPolicy
from .backend import IMAGENET_MEAN, IMAGENET_STD, InputSpec, load_model
from .errors import CapabilityError, ConfigError, ModelLoadError, OsaDasError
from .explain import METHODS, ExplainerConfig, explain
from .metrics import MetricConfig, deletion, evaluate, insertion, minimal_size_contour, minimal_size_plain, overall

log = logging.getLogger("osadas")

EXIT_OK, EXIT_USAGE, EXIT_MODEL, EXIT_RUNTIME = 0, 2, 3, 4
CONTROL_METHOD = "random"
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")

# options that describe where things live rather than how to compute
_PATH_KEYS = {"command", "config", "image", "heatmap", "corpus", "out", "from_report", "handler"}


class UsageError(OsaDasError):
    pass


class InferenceFailure(OsaDasError):
    pass


def _csv_floats(text):
    return tuple(float(t) for t in str(text).split(",")) if not isinstance(text, (list, tuple)) else tuple(text)


def _csv_ints(text):
    return tuple(int(t) for t in str(text).split(",")) if not isinstance(text, (list, tuple)) else tuple(text)


def _add_model_options(p):
    g = p.add_argument_group("model")
    g.add_argument("--model", help="ONNX file or toy name such as 'oracle:32x32@(96,96)'")
    g.add_argument("--input-name")
    g.add_argument("--feature-output", help="name of the deep feature tensor")
    g.add_argument("--logits-output")
    g.add_argument("--input-shape", type=_csv_ints, default=(224, 224, 3), help="H,W,C")
    g.add_argument("--layout", choices=("NCHW", "NHWC"), default="NCHW")
    g.add_argument("--mean", type=_csv_floats, default=IMAGENET_MEAN)
    g.add_argument("--std", type=_csv_floats, default=IMAGENET_STD)
    g.add_argument("--resize", type=int, default=256)
    g.add_argument("--crop", type=int, default=224)


def _add_explainer_options(p, method=True):
    g = p.add_argument_group("explainer")
    if method:
        g.add_argument("--method", choices=METHODS, default="osa-das")
    g.add_argument("--masks", type=int, default=256, help="number of masks n_m")
    g.add_argument("--mask-size", type=int, default=64, help="mask side l in pixels")
    g.add_argument("--mask-mode", choices=("sliding", "random", "gradient"), default="gradient")
    g.add_argument("--overlap-iou", type=float, default=0.5)
    g.add_argument("--stride", type=int, default=1)
    g.add_argument("--augmentations", type=int, default=32, help="augmentations per occlusion n_a")
    g.add_argument("--angles", type=int, default=32, help="canonical angles n_c")
    g.add_argument("--policy", choices=("trivial", "randaugment", "none"), default="trivial")
    g.add_argument("--n-ops", type=int, default=2)
    g.add_argument("--mag", type=float, default=0.5)
    g.add_argument("--ops", help="comma separated op pool (default: all)")
    g.add_argument("--similarity", choices=("mean", "sum"), default="mean")
    g.add_argument("--draw-sharing", choices=("shared", "independent"), default="shared")
    g.add_argument("--p-order", type=float, default=2.0)
    g.add_argument("--saliency-scalar", choices=("norm", "max-logit"), default="norm")
    g.add_argument("--class-index", type=int)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--workers", type=int, default=1)


def _add_metric_options(p, metric=True):
    g = p.add_argument_group("metrics")
    if metric:
        g.add_argument("--metric", default="all",
                       choices=("deletion", "insertion", "minimal-size", "overall", "all"))
    g.add_argument("--steps", type=int, default=32)
    g.add_argument("--tolerance", type=float, default=1e-2)
    g.add_argument("--tolerance-norm", choices=("max", "l1"), default="max")
    g.add_argument("--deletion-baseline", choices=("zero", "blur"), default="zero")
    g.add_argument("--insertion-baseline", choices=("zero", "blur"), default="zero")
    g.add_argument("--contour-levels", type=int)
    g.add_argument("--minimal-size-method", choices=("plain", "contour"), default="plain")


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(prog="osadas", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("explain", help="compute an explanation heatmap")
    p.add_argument("image", type=Path)
    p.add_argument("--out", type=Path, default=Path("out"))
    p.add_argument("--config", type=Path)
    _add_model_options(p)
    _add_explainer_options(p)
    p.set_defaults(handler=cmd_explain)
    subs = {"explain": p}

    p = sub.add_parser("evaluate", help="score a heatmap artifact")
    p.add_argument("heatmap", type=Path, nargs="?", help="raw .f32 heatmap file")
    p.add_argument("image", type=Path, nargs="?")
    p.add_argument("--out", type=Path, help="report path (default: stdout)")
    p.add_argument("--from-report", type=Path, help="read stored metrics instead of recomputing")
    p.add_argument("--config", type=Path)
    _add_model_options(p)
    _add_metric_options(p)
    p.set_defaults(handler=cmd_evaluate)
    subs["evaluate"] = p

    p = sub.add_parser("compare", help="compare explainers over an image corpus")
    p.add_argument("corpus", type=Path)
    p.add_argument("--methods", default="osa-das,random",
                   help=f"comma separated, from {', '.join(METHODS + (CONTROL_METHOD,))}")
    p.add_argument("--out", type=Path, default=Path("compare_out"))
    p.add_argument("--config", type=Path)
    _add_model_options(p)
    _add_explainer_options(p, method=False)
    _add_metric_options(p, metric=False)
    p.set_defaults(handler=cmd_compare)
    subs["compare"] = p
    return parser, subs


def load_config_file(path: Path) -> dict:
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(path.read_text())
        else:
            try:
                import tomllib
            except ModuleNotFoundError:  # python < 3.11
                import tomli as tomllib
            data = tomllib.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must be a table of key/value pairs")
    return {str(k).replace("-", "_"): v for k, v in data.items()}


def _parse(argv) -> argparse.Namespace:
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        values = load_config_file(args.config)
        sp = subs[args.command]
        known = {a.dest for a in sp._actions}
        unknown = sorted(set(values) - known - {"command"})
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        converters = {a.dest: a.type for a in sp._actions if a.type in (_csv_ints, _csv_floats)}
        for k, conv in converters.items():
            if k in values:
                values[k] = conv(values[k])
        values.pop("command", None)
        sp.set_defaults(**values)
        args = parser.parse_args(argv)
    return args


def effective_config(args) -> dict:
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in _PATH_KEYS or k == "verbose":
            continue
        out[k] = list(v) if isinstance(v, tuple) else v
    return out


def input_spec(args) -> InputSpec:
    return InputSpec(
        shape=tuple(args.input_shape),
        input_name=args.input_name,
        feature_output=args.feature_output,
        logits_output=args.logits_output,
        mean=tuple(args.mean),
        std=tuple(args.std),
        layout=args.layout,
    )


def explainer_config(args) -> ExplainerConfig:
    ops = tuple(o.strip() for o in args.ops.split(",")) if args.ops else OP_KINDS
    try:
        policy = AugmentationPolicy(mode=args.policy, n_ops=args.n_ops, mag=args.mag, seed=args.seed, ops=ops)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return ExplainerConfig(
        n_m=args.masks, n_a=args.augmentations, n_c=args.angles, l=args.mask_size, policy=policy,
        mask_mode=args.mask_mode, stride=args.stride, overlap_iou=args.overlap_iou,
        p_order=args.p_order, normalization=args.similarity, draw_sharing=args.draw_sharing,
        saliency_scalar=args.saliency_scalar, seed=args.seed, workers=args.workers,
    )


def metric_config(args) -> MetricConfig:
    return MetricConfig(
        steps=args.steps, tolerance=args.tolerance, tolerance_norm=args.tolerance_norm,
        deletion_baseline=args.deletion_baseline, insertion_baseline=args.insertion_baseline,
        contour_levels=args.contour_levels, minimal_size_method=args.minimal_size_method,
    )


def _load_backend(args):
    if not args.model:
        raise ConfigError("--model is required")
    return load_model(args.model, input_spec(args))


def _read_image(path: Path, args) -> np.ndarray:
    try:
        image = artifacts.read_image(path)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read image {path}: {exc}") from exc
    try:
        image = artifacts.preprocess(image, args.resize, args.crop)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if image.shape != tuple(args.input_shape):
        raise UsageError(f"image {path} has shape {image.shape}, model expects {tuple(args.input_shape)}")
    return image


def _run(component: str, fn, *a, **kw):
    """Call into the engine, tagging runtime failures with the component name."""
    try:
        return fn(*a, **kw)
    except (ConfigError, ModelLoadError, CapabilityError, UsageError):
        raise
    except (OsaDasError, ValueError, ArithmeticError, RuntimeError) as exc:
        raise InferenceFailure(f"{component}: {exc}") from exc


def cmd_explain(args) -> int:
    config = explainer_config(args)
    image = _read_image(args.image, args)
    backend = _load_backend(args)
    if args.method == "osa" and not backend.capabilities.has_probabilities:
        raise CapabilityError("backend lacks classification head")
    heatmap = _run("explain", explain, image, backend, args.method, config, args.class_index)
    eff = effective_config(args)
    stem = args.out / f"{args.image.stem}.{args.method}"
    paths = artifacts.save_heatmap(stem, heatmap.grid, normalized=heatmap.normalized,
                                   explainer=args.method, config=eff, seed=args.seed, image=image)
    artifacts.write_json(args.out / "run_config.json", eff)
    print(paths.raw)
    return EXIT_OK


def report_schema() -> dict:
    text = resources.files("osadas").joinpath("schemas/metric_report.schema.json").read_text()
    return json.loads(text)


def validate_report(report: dict) -> None:
    import jsonschema

    jsonschema.validate(report, report_schema())


def _emit(obj, out: Path | None) -> None:
    if out is None:
        print(json.dumps(obj, indent=2, sort_keys=True))
    else:
        artifacts.write_json(out, obj)


def cmd_evaluate(args) -> int:
    if args.from_report is not None:
        try:
            stored = json.loads(args.from_report.read_text())
            ins, dele, ms = (float(stored[k]) for k in ("insertion", "deletion", "minimal_size"))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise UsageError(f"cannot read stored metrics from {args.from_report}: {exc}") from exc
        if args.metric not in ("overall", "all"):
            raise UsageError("--from-report only supports --metric overall")
        try:
            _emit({"overall": overall(ins, dele, ms)}, args.out)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        return EXIT_OK

    if args.heatmap is None or args.image is None:
        raise UsageError("evaluate needs a heatmap file and an image")
    config = metric_config(args)
    try:
        grid, meta = artifacts.load_heatmap(args.heatmap)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read heatmap {args.heatmap}: {exc}") from exc
    image = _read_image(args.image, args)
    if grid.shape != image.shape[:2]:
        raise UsageError(f"heatmap {grid.shape} does not match image {image.shape[:2]}")
    backend = _load_backend(args)
    if args.metric in ("deletion", "insertion", "overall", "all") and not backend.capabilities.has_probabilities:
        raise CapabilityError("backend lacks classification head")
    grid = grid.astype(np.float64)

    if args.metric in ("overall", "all"):
        report = _run("metrics", evaluate, image, grid, backend, config).to_dict()
        report["image"] = str(args.image)
        report["heatmap"] = str(args.heatmap)
        validate_report(report)
        if args.metric == "overall":
            report = {k: report[k] for k in ("schema_version", "insertion", "deletion", "minimal_size", "overall")}
        _emit(report, args.out)
        return EXIT_OK

    out = {"schema_version": "1.0"}
    if args.metric == "deletion":
        c = _run("metrics", deletion, image, grid, backend, config)
        out.update(deletion=c.auc, curves={"deletion": c.to_dict()})
    elif args.metric == "insertion":
        c = _run("metrics", insertion, image, grid, backend, config)
        out.update(insertion=c.auc, curves={"insertion": c.to_dict()})
    else:
        fn = minimal_size_plain if config.minimal_size_method == "plain" else minimal_size_contour
        out["minimal_size"] = _run("metrics", fn, image, grid, backend, config)
    _emit(out, args.out)
    return EXIT_OK


def random_heatmap(shape, seed: int) -> np.ndarray:
    h = np.random.default_rng(seed).random(shape)
    return h / h.sum()


def _compare_row(job, args, backend, econf, mconf):
    method, path, image = job
    if method == CONTROL_METHOD:
        grid = random_heatmap(image.shape[:2], args.seed)
    else:
        grid = _run("explain", explain, image, backend, method, econf, args.class_index).grid
    rep = _run("metrics", evaluate, image, grid, backend, mconf)
    return {
        "method": method,
        "image": str(path),
        "deletion": rep.deletion,
        "insertion": rep.insertion,
        "minimal_size": rep.minimal_size,
        "overall": rep.overall,
    }


def summarize(rows) -> list[dict]:
    out = []
    for method in sorted({r["method"] for r in rows}):
        sel = [r for r in rows if r["method"] == method]
        mean = {k: float(np.mean([r[k] for r in sel])) for k in ("deletion", "insertion", "minimal_size", "overall")}
        out.append({
            "method": method,
            "images": len(sel),
            "deletion": mean["deletion"],
            "insertion": mean["insertion"],
            "minimal_size": mean["minimal_size"],
            "overall_per_image_mean": mean["overall"],
            "overall_of_means": overall(mean["insertion"], mean["deletion"], mean["minimal_size"]),
        })
    return out


def format_table(rows, summary) -> str:
    lines = [f"{'method':<20} {'image':<32} {'deletion':>9} {'insertion':>9} {'min_size':>9} {'overall':>9}"]
    for r in rows:
        lines.append(f"{r['method']:<20} {Path(r['image']).name:<32} {r['deletion']:>9.4f} "
                     f"{r['insertion']:>9.4f} {r['minimal_size']:>9.4f} {r['overall']:>9.4f}")
    lines.append("")
    lines.append(f"{'method':<20} {'n':>4} {'deletion':>9} {'insertion':>9} {'min_size':>9} "
                 f"{'ovr(img)':>9} {'ovr(avg)':>9}")
    for s in summary:
        lines.append(f"{s['method']:<20} {s['images']:>4} {s['deletion']:>9.4f} {s['insertion']:>9.4f} "
                     f"{s['minimal_size']:>9.4f} {s['overall_per_image_mean']:>9.4f} {s['overall_of_means']:>9.4f}")
    return "\n".join(lines) + "\n"


def cmd_compare(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS + (CONTROL_METHOD,)]
    if not methods or bad:
        raise UsageError(f"unknown methods {bad}" if bad else "no methods given")
    if not args.corpus.is_dir():
        raise UsageError(f"corpus {args.corpus} is not a directory")
    paths = sorted(p for p in args.corpus.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not paths:
        raise UsageError(f"corpus {args.corpus} contains no PNG/JPEG images")
    econf, mconf = explainer_config(args), metric_config(args)
    images = {p: _read_image(p, args) for p in paths}
    backend = _load_backend(args)
    if not backend.capabilities.has_probabilities:
        raise CapabilityError("backend lacks classification head")

    jobs = [(m, p, images[p]) for m in sorted(methods) for p in paths]
    with ThreadPoolExecutor(max_workers=max(1, args.workers)) as pool:
        rows = list(pool.map(lambda j: _compare_row(j, args, backend, econf, mconf), jobs))
    summary = summarize(rows)
    result = {"schema_version": "1.0", "rows": rows, "summary": summary, "config": effective_config(args)}
    artifacts.write_json(args.out / "compare.json", result)
    table = format_table(rows, summary)
    artifacts._atomic_write(args.out / "compare.txt", table.encode())
    sys.stdout.write(table)
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    try:
        args = _parse(argv)
        if args.verbose:
            logging.getLogger().setLevel(logging.INFO)
        return args.handler(args)
    except (ConfigError, UsageError) as exc:
        print(f"osadas: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ModelLoadError, CapabilityError) as exc:
        print(f"osadas: model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except InferenceFailure as exc:
        print(f"osadas: runtime error in {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OsaDasError as exc:
        print(f"osadas: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
