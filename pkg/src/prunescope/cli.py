"""Command-line front door.

Wires the library into the usual workflow: synth/export -> score ->
hierarchy -> plan -> dca -> distill-loss -> probe.  Every command is
deterministic given identical inputs and seeds; anything random takes a
mandatory --seed.  Outputs are JSON (written through jsonio, so repeated
runs are byte-identical) or .npy arrays.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
Failures print a machine-readable error object to stderr.
"""

import argparse
import contextlib
import os
import sys

import numpy as np

from . import dca as dcamod
from . import hierarchy as hiermod
from . import jsonio
from . import metrics as metmod
from . import planner as planmod
from . import synth as synthmod
from . import tensorio
from .errors import (
    DataError,
    InvalidSpec,
    MissingReport,
    NumericalError,
    PrunescopeError,
    ShapeMismatch,
)

# Canonical metric spelling, keyed by lowercase CLI token. The generalized
# metrics also accept their bare names (sd == g-sd).
_METRIC_ALIASES = {m.lower(): m for m in metmod.METRICS}
_METRIC_ALIASES.update(
    {m.lower()[2:]: m for m in metmod.METRICS if m.startswith("G-")}
)

_USAGE_EXIT = 2
_DATA_EXIT = 3
_NUMERIC_EXIT = 4


def _emit(obj):
    sys.stdout.write(jsonio.dumps(obj))


def _need(parser, args, *names):
    # Required-but-config-fillable options: argparse itself treats them as
    # optional so --config can supply them; absence is still a usage error.
    missing = [n for n in names if getattr(args, n.replace("-", "_")) is None]
    if missing:
        parser.error("missing required argument(s): " + ", ".join("--" + n for n in missing))


def _metric_from(parser, token):
    canon = _METRIC_ALIASES.get(str(token).lower())
    if canon is None:
        parser.error("unknown metric %r (choose from %s)" % (token, ", ".join(metmod.METRICS)))
    return canon


@contextlib.contextmanager
def _thread_cap(n):
    if n is None:
        yield
        return
    import threadpoolctl

    with threadpoolctl.threadpool_limits(limits=int(n)):
        yield


# ---------------------------------------------------------------------------
# run-dir helpers


def _fine_classes(manifest, labels):
    declared = manifest.get("num_classes")
    if declared is not None:
        return int(declared)
    return int(labels.max()) + 1


def _select_layers(manifest, wanted):
    layers = list(manifest["layers"])
    if not wanted:
        return layers
    unknown = sorted(set(wanted) - set(layers))
    if unknown:
        raise InvalidSpec("layer(s) not in run manifest", layers=unknown)
    chosen = set(wanted)
    return [name for name in layers if name in chosen]


def _load_mapping(path):
    return hiermod.CoarseMapping.from_obj(jsonio.load(path))


def _scheme_and_labels(args, manifest, fine_labels, *, default_fine="fine", default_coarse="coarse"):
    """Resolve the label scheme for a command: fine labels from the run, or
    coarse labels through a --mapping file."""
    fine_y = _fine_classes(manifest, fine_labels)
    mapping_path = getattr(args, "mapping", None)
    if mapping_path is None:
        name = getattr(args, "scheme_name", None) or default_fine
        return tensorio.LabelScheme("fine", fine_y, name), fine_labels
    q = _load_mapping(mapping_path)
    coarse = hiermod.apply_mapping(fine_labels, q)
    name = getattr(args, "scheme_name", None) or default_coarse
    return tensorio.LabelScheme("coarse", q.num_coarse, name), coarse


def _layer_acts(run_dir, layer, labels, num_classes):
    data = tensorio.load_array(os.path.join(run_dir, layer, "activations.npy"))
    return tensorio.ActivationSet(data, labels, num_classes)


def _features_matrix(path):
    arr = tensorio.load_array(path)
    if arr.ndim == 4:
        arr = arr.reshape(arr.shape[0], -1)
    if arr.ndim != 2:
        raise ShapeMismatch("expected a rank-2 or rank-4 array", path=path, shape=list(arr.shape))
    return np.ascontiguousarray(arr, dtype=np.float64)


def _feature_source(parser, args):
    """Either --features/--labels files or --run/--layer."""
    if args.features is not None:
        _need(parser, args, "labels")
        x = _features_matrix(args.features)
        labels = tensorio.load_labels(args.labels, n=x.shape[0])
        return x, labels, None
    _need(parser, args, "run", "layer")
    manifest = tensorio.read_manifest(args.run)
    fine = tensorio.load_labels(os.path.join(args.run, "labels.npy"))
    scheme, labels = _scheme_and_labels(args, manifest, fine)
    acts = _layer_acts(args.run, args.layer, labels, scheme.num_classes)
    return dcamod.flatten_activations(acts), labels, scheme


# ---------------------------------------------------------------------------
# subcommands


def _cmd_score(args, parser):
    _need(parser, args, "run", "metric", "out-dir")
    metric = _metric_from(parser, args.metric)
    if metric == "Random" and args.seed is None:
        parser.error("--metric Random requires --seed")
    manifest = tensorio.read_manifest(args.run)
    fine = tensorio.load_labels(os.path.join(args.run, "labels.npy"))
    scheme, labels = _scheme_and_labels(args, manifest, fine)
    layers = _select_layers(manifest, args.layer)

    out_paths = []
    out_base = os.path.join(args.out_dir, scheme.name)
    os.makedirs(out_base, exist_ok=True)
    for layer in layers:
        acts = _layer_acts(args.run, layer, labels, scheme.num_classes)
        report = metmod.score_layer(
            metric,
            acts,
            scheme,
            eps=args.eps,
            sigma=args.sigma,
            rho=args.rho,
            seed=args.seed,
            layer=layer,
        )
        path = os.path.join(out_base, layer + ".json")
        jsonio.dump(report.to_obj(), path)
        out_paths.append(path)
    _emit({"metric": metric, "scheme": scheme.to_obj(), "reports": out_paths})
    return 0


def _cmd_hierarchy(args, parser):
    _need(parser, args, "coarse-classes", "seed", "out")
    if args.method == "kmeans":
        _need(parser, args, "run")
        manifest = tensorio.read_manifest(args.run)
        labels = tensorio.load_labels(os.path.join(args.run, "labels.npy"))
        fine_y = _fine_classes(manifest, labels)
        layer = args.layer or manifest["layers"][-1]
        acts = _layer_acts(args.run, layer, labels, fine_y)
        centroids = hiermod.class_centroids(acts)
        mapping = hiermod.kmeans_mapping(centroids, args.coarse_classes, args.seed)
    elif args.method == "spectral":
        if args.confusion is not None:
            confusion = tensorio.load_matrix(args.confusion)
        else:
            _need(parser, args, "run")
            manifest = tensorio.read_manifest(args.run)
            logit_set = tensorio.load_run_logits(args.run)
            fine_y = _fine_classes(manifest, logit_set.labels)
            confusion = hiermod.confusion_matrix(logit_set, fine_y)
        mapping = hiermod.spectral_mapping(confusion, args.coarse_classes, args.seed)
    else:  # pragma: no cover - argparse choices guard this
        parser.error("unknown method %r" % args.method)
    jsonio.dump(mapping.to_obj(), args.out)
    _emit(
        {
            "out": args.out,
            "method": mapping.method,
            "num_fine": mapping.num_fine,
            "num_coarse": mapping.num_coarse,
        }
    )
    return 0


def _load_report(reports_dir, role, layer):
    path = os.path.join(reports_dir, role, layer + ".json")
    if not os.path.isfile(path):
        raise MissingReport("no score report for layer under role", layer=layer, role=role, path=path)
    return metmod.ChannelScoreReport.from_obj(jsonio.load(path))


def _cmd_plan(args, parser):
    _need(parser, args, "run", "reports-dir", "mode", "out")
    if args.ratios is None and args.ratio is None:
        parser.error("missing required argument(s): --ratio (or --ratios)")
    manifest = tensorio.read_manifest(args.run)
    layers = list(manifest["layers"])
    roles, _watersheds = planmod.mode_roles(args.mode, len(layers), args.alpha)

    reports = []
    for layer, role in zip(layers, roles):
        reports.append({role: _load_report(args.reports_dir, role, layer)})
    if args.ratios is not None:
        ratios = [float(tok) for tok in args.ratios.split(",") if tok != ""]
    else:
        ratios = args.ratio
    plan = planmod.build_plan(
        reports,
        args.mode,
        ratios,
        alpha=args.alpha,
        rounding=args.rounding,
    )
    jsonio.dump(plan.to_obj(), args.out)
    _emit(
        {
            "out": args.out,
            "mode": plan.mode,
            "metric": plan.metric,
            "watersheds": list(plan.watersheds),
            "layers": [entry["layer"] for entry in plan.layers],
        }
    )
    return 0


def _cmd_dca(args, parser):
    _need(parser, args, "out")
    x, labels, scheme = _feature_source(parser, args)
    if args.kind == "dca":
        proj = dcamod.dca_components(x, labels, rho=args.rho, scheme=scheme)
    else:
        k = args.k if args.k is not None else int(np.unique(labels).size)
        proj = dcamod.pca_components(x, k, scheme=scheme)
    dcamod.save_projection(proj, args.out)
    _emit(
        {
            "out": args.out,
            "kind": proj.kind,
            "dim": proj.dim,
            "components": proj.k,
            "ridge": proj.ridge,
            "eigenvalues": proj.eigenvalues,
        }
    )
    return 0


def _cmd_distill_loss(args, parser):
    _need(parser, args, "teacher-acts", "student-acts", "teacher-proj", "student-proj")
    a_t = _features_matrix(args.teacher_acts)
    a_s = _features_matrix(args.student_acts)
    w_t = dcamod.load_projection(args.teacher_proj)
    w_s = dcamod.load_projection(args.student_proj)
    inter = dcamod.inter_kd_loss(a_t, w_t, a_s, w_s)

    out_loss = None
    if args.teacher_logits is not None or args.student_logits is not None:
        _need(parser, args, "teacher-logits", "student-logits")
        lt = _features_matrix(args.teacher_logits)
        ls = _features_matrix(args.student_logits)
        out_loss = dcamod.output_kd_loss(lt, ls, temperature=args.temperature)

    ce = None
    if args.labels is not None:
        if args.student_logits is None:
            parser.error("--labels requires --student-logits for the cross-entropy term")
        labels = tensorio.load_labels(args.labels)
        ce = dcamod.cross_entropy(_features_matrix(args.student_logits), labels)

    combined = None
    if out_loss is not None and ce is not None:
        combined = dcamod.combined_loss(ce, inter, out_loss, lam=args.lam, gamma=args.gamma)

    result = {
        "inter": inter,
        "output": out_loss,
        "ce": ce,
        "combined": combined,
        "lambda": args.lam,
        "gamma": args.gamma,
        "temperature": args.temperature,
    }
    if args.out is not None:
        jsonio.dump(result, args.out)
    _emit(result)
    return 0


def _cmd_probe(args, parser):
    _need(parser, args, "seed")
    x, labels, _scheme = _feature_source(parser, args)
    proj_kind = None
    if args.proj is not None:
        proj = dcamod.load_projection(args.proj)
        x = dcamod.project(x, proj)
        proj_kind = proj.kind
    accuracy = dcamod.linear_probe(x, labels, reg=args.reg, seed=args.seed, train_frac=args.train_frac)
    result = {
        "accuracy": accuracy,
        "num_samples": int(x.shape[0]),
        "dim": int(x.shape[1]),
        "num_classes": int(np.unique(labels).size),
        "projection": proj_kind,
        "seed": args.seed,
        "reg": args.reg,
        "train_frac": args.train_frac,
    }
    if args.out is not None:
        jsonio.dump(result, args.out)
    _emit(result)
    return 0


def _cmd_synth(args, parser):
    _need(parser, args, "out", "classes", "per-class", "seed")
    specs = synthmod.layer_specs(
        args.signal,
        args.noise,
        args.constant,
        separation=args.separation,
        noise_std=args.noise_std,
    )
    layer_names = ["conv%d" % (i + 1) for i in range(args.layers)]
    os.makedirs(args.out, exist_ok=True)

    labels = None
    for i, name in enumerate(layer_names):
        acts = synthmod.gaussian_channels(
            specs,
            args.per_class,
            args.classes,
            (args.height, args.width),
            args.seed,
            stream_base=i * (2 ** 20),
        )
        layer_dir = os.path.join(args.out, name)
        os.makedirs(layer_dir, exist_ok=True)
        tensorio.save_activations(acts, os.path.join(layer_dir, "activations.npy"))
        labels = acts.labels
    tensorio.save_labels(labels, os.path.join(args.out, "labels.npy"))
    if args.logits:
        logits = synthmod.make_logits(
            labels,
            args.classes,
            margin=args.logit_margin,
            noise_std=args.noise_std,
            seed=args.seed,
        )
        tensorio.save_matrix(logits, os.path.join(args.out, "logits.npy"))
    manifest = {
        "layers": layer_names,
        "num_samples": int(labels.size),
        "num_classes": args.classes,
        "seed": args.seed,
        "source": "synth",
        "channels": {
            "signal": args.signal,
            "noise": args.noise,
            "constant": args.constant,
            "separation": args.separation,
            "noise_std": args.noise_std,
        },
    }
    jsonio.dump(manifest, os.path.join(args.out, "manifest.json"))
    _emit({"out": args.out, "layers": layer_names, "num_samples": int(labels.size), "num_classes": args.classes})
    return 0


def _cmd_validate(args, parser):
    _need(parser, args, "run")
    manifest = tensorio.read_manifest(args.run)
    labels = tensorio.load_labels(os.path.join(args.run, "labels.npy"))
    fine_y = _fine_classes(manifest, labels)
    layer_infos = []
    for layer in manifest["layers"]:
        acts = _layer_acts(args.run, layer, labels, fine_y)
        layer_infos.append(
            {
                "layer": layer,
                "channels": acts.channels,
                "height": int(acts.data.shape[2]),
                "width": int(acts.data.shape[3]),
            }
        )
    has_logits = os.path.isfile(os.path.join(args.run, "logits.npy"))
    if has_logits:
        tensorio.load_run_logits(args.run)
    _emit(
        {
            "run": args.run,
            "valid": True,
            "num_samples": int(labels.size),
            "num_classes": fine_y,
            "logits": has_logits,
            "layers": layer_infos,
        }
    )
    return 0


# ---------------------------------------------------------------------------
# parser assembly


def _build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE", help="JSON file supplying default values for any flag")
    common.add_argument("--threads", type=int, metavar="N", help="cap BLAS/LAPACK thread pools at N")

    parser = argparse.ArgumentParser(
        prog="prunescope",
        description="Score channels, learn label hierarchies, plan pruning, and compute distillation losses on exported activations.",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("score", parents=[common], help="write per-layer channel score reports")
    p.add_argument("--run", metavar="DIR", help="activation run directory")
    p.add_argument("--metric", metavar="NAME", help="one of %s (case-insensitive)" % ", ".join(metmod.METRICS))
    p.add_argument("--out-dir", metavar="DIR", help="directory receiving <scheme>/<layer>.json reports")
    p.add_argument("--layer", action="append", metavar="NAME", help="restrict to this layer (repeatable; default all)")
    p.add_argument("--mapping", metavar="FILE", help="coarse mapping JSON; scores against coarse labels")
    p.add_argument("--scheme-name", metavar="NAME", help="directory name for the report scheme (default fine/coarse)")
    p.add_argument("--eps", type=float, default=metmod.DEFAULT_EPS, help="variance floor (default %(default)s)")
    p.add_argument("--sigma", type=float, default=metmod.DEFAULT_SIGMA, help="rbf bandwidth (default %(default)s)")
    p.add_argument("--rho", type=float, default=metmod.DEFAULT_RHO, help="scatter ridge (default %(default)s)")
    p.add_argument("--seed", type=int, help="seed for --metric Random")
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("hierarchy", parents=[common], help="learn a fine-to-coarse label mapping")
    p.add_argument("--method", choices=("kmeans", "spectral"), default="kmeans")
    p.add_argument("--run", metavar="DIR", help="run directory (centroids for kmeans, logits for spectral)")
    p.add_argument("--layer", metavar="NAME", help="layer for centroids (default: last in manifest)")
    p.add_argument("--confusion", metavar="FILE", help="precomputed confusion matrix .npy (spectral only)")
    p.add_argument("--coarse-classes", type=int, metavar="C", help="number of coarse classes")
    p.add_argument("--seed", type=int, help="clustering seed")
    p.add_argument("--out", metavar="FILE", help="mapping JSON output path")
    p.set_defaults(func=_cmd_hierarchy)

    p = sub.add_parser("plan", parents=[common], help="build a hierarchical pruning plan from score reports")
    p.add_argument("--run", metavar="DIR", help="run directory (fixes layer order)")
    p.add_argument("--reports-dir", metavar="DIR", help="directory holding <role>/<layer>.json score reports")
    p.add_argument("--mode", choices=planmod.MODES, help="which label scheme each depth uses")
    p.add_argument("--ratio", type=float, metavar="R", help="pruning ratio applied to every layer")
    p.add_argument("--ratios", metavar="R1,R2,...", help="comma-separated per-layer ratios (overrides --ratio)")
    p.add_argument("--alpha", type=float, default=0.5, help="watershed fraction (default %(default)s)")
    p.add_argument("--rounding", choices=planmod.ROUNDINGS, default="none", help="keep-count rounding rule")
    p.add_argument("--out", metavar="FILE", help="plan JSON output path")
    p.set_defaults(func=_cmd_plan)

    p = sub.add_parser("dca", parents=[common], help="fit a discriminant (or PCA) projection for a layer")
    p.add_argument("--run", metavar="DIR", help="run directory")
    p.add_argument("--layer", metavar="NAME", help="layer to project")
    p.add_argument("--features", metavar="FILE", help="rank-2/rank-4 .npy feature matrix (alternative to --run)")
    p.add_argument("--labels", metavar="FILE", help="labels .npy (required with --features)")
    p.add_argument("--mapping", metavar="FILE", help="coarse mapping JSON; fit against coarse labels")
    p.add_argument("--scheme-name", metavar="NAME", help="scheme name recorded in the sidecar")
    p.add_argument("--kind", choices=("dca", "pca"), default="dca")
    p.add_argument("--rho", type=float, default=dcamod.DEFAULT_RHO, help="within-scatter ridge (default %(default)s)")
    p.add_argument("--k", type=int, help="component count for --kind pca (default: number of classes)")
    p.add_argument("--out", metavar="BASE", help="output base path (writes BASE.npy + BASE.json)")
    p.set_defaults(func=_cmd_dca)

    p = sub.add_parser("distill-loss", parents=[common], help="evaluate distillation losses between teacher and student")
    p.add_argument("--teacher-acts", metavar="FILE", help="teacher activations .npy (rank 2 or 4)")
    p.add_argument("--student-acts", metavar="FILE", help="student activations .npy (rank 2 or 4)")
    p.add_argument("--teacher-proj", metavar="BASE", help="teacher projection base path")
    p.add_argument("--student-proj", metavar="BASE", help="student projection base path")
    p.add_argument("--teacher-logits", metavar="FILE", help="teacher logits .npy")
    p.add_argument("--student-logits", metavar="FILE", help="student logits .npy")
    p.add_argument("--labels", metavar="FILE", help="labels .npy for the cross-entropy term")
    p.add_argument("--temperature", type=float, default=dcamod.DEFAULT_TEMPERATURE, help="softening temperature (default %(default)s)")
    p.add_argument("--lambda", dest="lam", type=float, default=dcamod.DEFAULT_LAMBDA, help="subspace loss weight (default %(default)s)")
    p.add_argument("--gamma", type=float, default=dcamod.DEFAULT_GAMMA, help="output loss weight (default %(default)s)")
    p.add_argument("--out", metavar="FILE", help="also write the loss JSON here")
    p.set_defaults(func=_cmd_distill_loss)

    p = sub.add_parser("probe", parents=[common], help="linear-probe accuracy of (projected) features")
    p.add_argument("--run", metavar="DIR", help="run directory")
    p.add_argument("--layer", metavar="NAME", help="layer to probe")
    p.add_argument("--features", metavar="FILE", help="feature matrix .npy (alternative to --run)")
    p.add_argument("--labels", metavar="FILE", help="labels .npy (required with --features)")
    p.add_argument("--mapping", metavar="FILE", help="coarse mapping JSON; probe coarse labels")
    p.add_argument("--scheme-name", metavar="NAME", help="unused label for symmetry with score")
    p.add_argument("--proj", metavar="BASE", help="projection base path applied before probing")
    p.add_argument("--seed", type=int, help="train/test split seed")
    p.add_argument("--reg", type=float, default=dcamod.DEFAULT_PROBE_REG, help="ridge strength (default %(default)s)")
    p.add_argument("--train-frac", type=float, default=0.8, help="training fraction (default %(default)s)")
    p.add_argument("--out", metavar="FILE", help="also write the accuracy JSON here")
    p.set_defaults(func=_cmd_probe)

    p = sub.add_parser("synth", parents=[common], help="generate a deterministic synthetic activation run")
    p.add_argument("--out", metavar="DIR", help="run directory to create")
    p.add_argument("--classes", type=int, metavar="Y", help="number of classes")
    p.add_argument("--per-class", type=int, metavar="N", help="samples per class")
    p.add_argument("--layers", type=int, default=1, help="number of layers (default %(default)s)")
    p.add_argument("--signal", type=int, default=1, help="signal channels per layer (default %(default)s)")
    p.add_argument("--noise", type=int, default=2, help="noise channels per layer (default %(default)s)")
    p.add_argument("--constant", type=int, default=0, help="constant channels per layer (default %(default)s)")
    p.add_argument("--separation", type=float, default=3.0, help="class mean separation in noise-std units (default %(default)s)")
    p.add_argument("--noise-std", type=float, default=1.0, help="channel noise scale (default %(default)s)")
    p.add_argument("--height", type=int, default=2, help="spatial height (default %(default)s)")
    p.add_argument("--width", type=int, default=2, help="spatial width (default %(default)s)")
    p.add_argument("--logits", action="store_true", help="also write noisy logits")
    p.add_argument("--logit-margin", type=float, default=4.0, help="true-class logit margin (default %(default)s)")
    p.add_argument("--seed", type=int, help="generator seed")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("validate", parents=[common], help="check a run directory against the layout conventions")
    p.add_argument("--run", metavar="DIR", help="run directory")
    p.set_defaults(func=_cmd_validate)

    return parser


def _apply_config(parser, argv):
    """Pre-scan argv for --config and install its values as parser defaults
    so explicit flags still win."""
    path = None
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif tok.startswith("--config="):
            path = tok[len("--config="):]
    if path is None:
        return
    try:
        cfg = jsonio.load(path)
    except (OSError, ValueError) as exc:
        parser.error("cannot read config file %s: %s" % (path, exc))
    if not isinstance(cfg, dict):
        parser.error("config file must hold a JSON object")
    defaults = {}
    for key, value in cfg.items():
        defaults[str(key).replace("-", "_")] = value
    # "lambda" is a reserved word; the flag stores into "lam".
    if "lambda_" in defaults:
        defaults["lam"] = defaults.pop("lambda_")
    if "lambda" in defaults:
        defaults["lam"] = defaults.pop("lambda")
    for action in parser._subparsers._group_actions:  # noqa: SLF001 - argparse offers no public hook
        for sp in action.choices.values():
            sp.set_defaults(**defaults)


def main(argv=None):
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = _build_parser()
    _apply_config(parser, argv)
    args = parser.parse_args(argv)
    if getattr(args, "func", None) is None:
        parser.print_help(sys.stderr)
        return _USAGE_EXIT
    try:
        with _thread_cap(args.threads):
            return args.func(args, parser)
    except NumericalError as err:
        sys.stderr.write(jsonio.dumps(err.to_obj()))
        return _NUMERIC_EXIT
    except DataError as err:
        sys.stderr.write(jsonio.dumps(err.to_obj()))
        return _DATA_EXIT
    except PrunescopeError as err:  # pragma: no cover - base class safety net
        sys.stderr.write(jsonio.dumps(err.to_obj()))
        return _DATA_EXIT


if __name__ == "__main__":
    sys.exit(main())
