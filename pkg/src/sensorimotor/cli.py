"""Batch command-line surface.

Subcommands: synth, preprocess, train, eval, gradcheck, baseline. Exit
codes: 0 success, 1 data/runtime error, 2 usage error (including malformed
architecture specs). ``--config file.json`` layers defaults under flags;
every run with an --out directory writes its fully resolved configuration
there as run_config.json. The SENSORIMOTOR_OUT environment variable sets
the default output root.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import ops
from .archspec import ArchSpecError, parse_arch_spec
from .dataio import (DataError, load_manifest, load_split, save_split,
                     split_by_subject)
from .experiments import (load_prepared, prepare_dataset, samples_for_graph,
                          save_prepared)
from .frontend import ColorizationRange, FrontendError, SegmentationThresholds
from .netgraph import (ConfigError, NetworkGraph, ScaleConfig,
                       build_appearance_cnn, build_fused, build_st_cnn_lstm,
                       build_tm_cnn, capture_layer, forward)
from .optim import grad_check
from .snapshot import SnapshotError, load_container, save_container
from .synthgen import SynthConfig, synth_generate
from .taxonomy import TAXONOMY
from .tensor import DimensionError, Tensor
from .traineval import (TrainConfig, TrainingError, evaluate,
                        render_confusion_heatmap, train)
from . import baselines as bl


def _out_root() -> Path:
    return Path(os.environ.get("SENSORIMOTOR_OUT", "."))


def _parse_ratios(text: str):
    try:
        parts = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"ratios must be three floats, got {text!r}")
    if len(parts) != 3 or any(p < 0 for p in parts) or abs(sum(parts) - 1.0) > 1e-9:
        raise argparse.ArgumentTypeError(
            f"ratios must be three nonnegative values summing to 1, got {text!r}")
    return parts


def _scale_from_args(args) -> ScaleConfig:
    if getattr(args, "scale_json", None):
        return ScaleConfig(**json.loads(Path(args.scale_json).read_text()))
    return ScaleConfig.paper() if args.scale == "paper" else ScaleConfig.desk()


def _write_run_config(out: Path, args) -> None:
    out.mkdir(parents=True, exist_ok=True)
    resolved = {k: (str(v) if isinstance(v, Path) else v)
                for k, v in vars(args).items() if k != "func"}
    (out / "run_config.json").write_text(json.dumps(resolved, indent=2, default=str))


def _build_graph(arch: str, cfg: ScaleConfig, seed: int) -> NetworkGraph:
    if arch == "appearance":
        return build_appearance_cnn(cfg, seed)
    if arch == "tm":
        return build_tm_cnn(cfg, seed)
    if arch == "st":
        return build_st_cnn_lstm(cfg, seed)
    return build_fused(parse_arch_spec(arch), cfg, seed)


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    out = Path(args.out)
    cfg = SynthConfig(frame_side=args.frame_side, min_frames=args.min_frames,
                      max_frames=args.max_frames)
    clips = synth_generate(out, args.subjects, args.per_combo, cfg, args.seed)
    split = split_by_subject(clips, args.ratios, args.seed)
    save_split(out / "split.tsv", split)
    _write_run_config(out, args)
    print(f"wrote {len(clips)} clips to {out} "
          f"(subjects {args.subjects}, {args.per_combo}/combo)")
    return 0


# ---------------------------------------------------------------------------
# preprocess


def cmd_preprocess(args) -> int:
    clips = load_manifest(args.manifest)
    if not clips:
        print("manifest lists no clips; nothing to do")
        return 0
    cfg = SynthConfig(frame_side=clips[0].load_frame(0).depth.shape[0])
    cam = cfg.camera()
    crange = None
    if args.range:
        lo, hi = (float(x) for x in args.range.split(","))
        crange = ColorizationRange(lo, hi)
    prepared, crange = prepare_dataset(clips, cam, SegmentationThresholds(),
                                       args.crop_side, args.samples, crange)
    out = Path(args.out)
    save_prepared(out, prepared, crange)
    _write_run_config(out, args)
    print(f"prepared {len(prepared)} clips -> {out} "
          f"(streams {args.samples}+{args.samples}+1 per clip, "
          f"depth range [{crange.d_min:.0f},{crange.d_max:.0f}]mm)")
    return 0


# ---------------------------------------------------------------------------
# train


def _load_buckets(args, graph):
    what = "all" if graph.recurrent else "gtm"
    prepared = load_prepared(args.data, what)
    if args.split:
        split = load_split(args.split)
    else:
        from .dataio import InteractionClip
        stubs = [InteractionClip(p.id, p.subject, p.object_label,
                                 p.affordance_label, Path("."), Path("."), 1)
                 for p in prepared]
        split = split_by_subject(stubs, args.ratios, args.split_seed)
    buckets = {}
    for name in ("train", "val", "test"):
        members = getattr(split, name)
        sel = [p for p in prepared if p.subject in members]
        buckets[name] = samples_for_graph(sel, graph, args.tm_input)
    return buckets, split


def cmd_train(args) -> int:
    scale = _scale_from_args(args)
    graph = _build_graph(args.arch, scale, args.seed)
    if args.tau is not None or args.agg is not None:
        spec = parse_arch_spec(args.arch)  # only fused specs take these
        if args.tau is not None:
            spec.delay_tau = args.tau
        if args.agg is not None:
            spec.aggregation = "all_frames" if args.agg == "all" else "last_frame"
        graph = build_fused(spec, scale, args.seed)
    buckets, split = _load_buckets(args, graph)
    if not buckets["train"]:
        raise DataError("train split selected no clips")
    crop = args.crop_side or scale.input_side
    tcfg = TrainConfig(lr=args.lr, epochs=args.epochs, crop_side=crop,
                       seed=args.seed, batch_size=args.batch_size,
                       plateau_patience=args.patience)
    out = Path(args.out)
    _write_run_config(out, args)
    print(f"training {args.arch} on {len(buckets['train'])} clips "
          f"(val {len(buckets['val'])}, test {len(buckets['test'])})")
    result = train(graph, buckets["train"], tcfg, buckets["val"])
    save_container(out / "checkpoint.smtm", graph.state_dict())
    (out / "checkpoint.json").write_text(json.dumps({
        "arch": args.arch, "scale": asdict(scale),
        "class_count": graph.class_count, "crop_side": crop,
        "tm_input": args.tm_input, "seed": args.seed}, indent=2))
    (out / "curves.tsv").write_text("\n".join(result.curve_lines()) + "\n")
    save_split(out / "split.tsv", split)
    print(f"best val loss {result.best_val_loss:.6f} at epoch {result.best_epoch}; "
          f"checkpoint -> {out / 'checkpoint.smtm'}")
    return 0


def _load_checkpoint(path, seed_override=None):
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    scale = ScaleConfig(**{k: tuple(v) if isinstance(v, list) else v
                           for k, v in meta["scale"].items()})
    graph = _build_graph(meta["arch"], scale, meta.get("seed", 0))
    graph.load_state_dict(load_container(path))
    return graph, meta


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    graph, meta = _load_checkpoint(args.checkpoint)
    args.tm_input = meta.get("tm_input", "flow")
    buckets, _ = _load_buckets(args, graph)
    samples = buckets[args.bucket]
    if not samples:
        raise DataError(f"{args.bucket} split selected no clips")
    mode = "all_frames" if (args.agg or "all") == "all" else "last_frame"
    report = evaluate(graph, samples, meta["crop_side"], mode, tag=meta["arch"])
    out = Path(args.out)
    _write_run_config(out, args)
    names = TAXONOMY.objects if graph.class_count == 14 else TAXONOMY.affordances
    (out / "report.tsv").write_text("\n".join(report.lines(names)) + "\n")
    render_confusion_heatmap(report, out / "confusion.png", names)
    print(f"{meta['arch']} {args.bucket} accuracy: {report.accuracy:.4f} "
          f"({int(report.confusion.sum())} clips); report -> {out}")
    return 0


# ---------------------------------------------------------------------------
# gradcheck


GRADCHECK_FAMILIES = {
    "appearance": (None, 4, 1),
    "tm": (None, 4, 1),
    "st": (None, 2, 20),
    "gtm_ls_fc6": ("GTM_LS(FC6)", 4, 1),
    "gtm_ls_rl53": ("GTM_LS(RL5_3,tail=1c2f)", 3, 1),
    "gtm_ssl": ("GTM_SSL(RL4_3:app,RL4_3:aff)", 3, 1),
    "gtm_sml": ("GTM_SML(RL5_3:app,RL5_3:aff,RL6)", 3, 1),
    "gst_ls": ("GST_LS()", 1, 8),
    "gst_la": ("GST_LA(tau=2)", 1, 8),
    "gst_ssl": ("GST_SSL()", 1, 8),
}


def _family_graph(name: str, cfg: ScaleConfig, seed: int) -> NetworkGraph:
    spec, _, _ = GRADCHECK_FAMILIES[name]
    if spec is None:
        return _build_graph(name, cfg, seed)
    return build_fused(parse_arch_spec(spec), cfg, seed)


def gradcheck_family(name: str, cfg: ScaleConfig, seed: int = 0,
                     samples: int | None = None, frames: int | None = None,
                     tolerance: float = 1e-3, fd_step: float = 1e-7):
    """Loss closure on a fixed random input; finite differences vs autodiff.

    Full graphs use a smaller step than the per-primitive default of 1e-4:
    with tens of thousands of relu/pool units the coarser secant regularly
    straddles an activation kink or an argmax flip and measures the wrong
    linear piece. Parameters are also jittered off their init before the
    check: zero-initialized biases park whole relu plateaus exactly on the
    kink (conv of an all-zero patch equals the bias), where one-sided pieces
    make finite differences ill-defined no matter the step.
    """
    _, default_samples, default_frames = GRADCHECK_FAMILIES[name]
    samples = samples or default_samples
    frames = frames or default_frames
    graph = _family_graph(name, cfg, seed)
    rng = np.random.default_rng(seed + 99)
    for p in graph.parameters():
        p.data += rng.normal(0.0, 1e-3, p.data.shape)
    side = cfg.input_side

    def mk():
        return Tensor(rng.random((3, side, side)))

    if graph.recurrent:
        inputs = {s: [mk() for _ in range(frames)] for s in graph.input_streams}
    else:
        inputs = {s: mk() for s in graph.input_streams}
    target = int(rng.integers(0, graph.class_count))

    def loss_fn():
        out = forward(graph, inputs)
        if graph.recurrent:
            from functools import reduce
            losses = [ops.nll_loss(o, target) for o in out]
            return ops.mul(reduce(ops.add, losses), Tensor(1.0 / len(losses)))
        return ops.nll_loss(out, target)

    return grad_check(loss_fn, graph.parameters(), tolerance=tolerance, h=fd_step,
                      samples_per_tensor=samples, seed=seed, reject_kinks=True)


def _corrupt_linear():
    orig = ops.linear

    def bad(x, w, b):
        out = orig(x, w, b)
        inner = out._backward
        out._backward = lambda grad: inner(grad * 1.05)
        return out

    ops.linear = bad
    return orig


def cmd_gradcheck(args) -> int:
    cfg = _scale_from_args(args)
    names = list(GRADCHECK_FAMILIES) if args.families == ["all"] else args.families
    unknown = [n for n in names if n not in GRADCHECK_FAMILIES]
    if unknown:
        raise DataError(f"unknown gradcheck families {unknown}; "
                        f"pick from {sorted(GRADCHECK_FAMILIES)}")
    restore = _corrupt_linear() if args.corrupt else None
    failures = 0
    try:
        for name in names:
            t0 = time.perf_counter()
            report = gradcheck_family(name, cfg, args.seed, args.samples,
                                      args.frames, args.tolerance, args.fd_step)
            dt = time.perf_counter() - t0
            status = "PASS" if report.passed else "FAIL"
            print(f"{status} {name:<14s} max_rel_err={report.max_rel_err:.3e} "
                  f"tol={args.tolerance:.0e} ({dt:.1f}s)")
            if args.verbose:
                print(report.summary())
            failures += 0 if report.passed else 1
    finally:
        if restore is not None:
            ops.linear = restore
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# baselines


def _extract_features(graph, samples, side, layer):
    feats = []
    for s in samples:
        from .traineval import _batch_inputs
        inputs = _batch_inputs([s], side, rng=None)
        _, captured = capture_layer(graph, inputs, layer)
        if isinstance(captured, list):
            captured = captured[-1]
        feats.append(captured.data.reshape(-1))
    return feats


def _posteriors(graph, samples, side):
    posts = []
    for s in samples:
        from .traineval import _batch_inputs
        out = forward(graph, _batch_inputs([s], side, rng=None))
        if isinstance(out, list):
            out = Tensor(np.mean([o.data for o in out], axis=0))
        posts.append(out.data.reshape(-1))
    return posts


def cmd_baseline(args) -> int:
    app_graph, app_meta = _load_checkpoint(args.app_checkpoint)
    aff_graph, aff_meta = _load_checkpoint(args.aff_checkpoint)
    side = app_meta["crop_side"]
    args.tm_input = aff_meta.get("tm_input", "flow")
    app_buckets, _ = _load_buckets(args, app_graph)
    aff_buckets, _ = _load_buckets(args, aff_graph)

    test_labels = [s.label for s in app_buckets["test"]]
    if args.method == "product":
        obj_posts = _posteriors(app_graph, app_buckets["test"], side)
        aff_posts = _posteriors(aff_graph, aff_buckets["test"], side)
        preds = [int(np.argmax(bl.product_rule_fuse(o, a)))
                 for o, a in zip(obj_posts, aff_posts)]
    else:
        aff_layer = (f"LSTM{aff_graph.cfg.lstm_layers}:aff"
                     if aff_graph.recurrent else "RL7:aff")
        pairs = {}
        for bucket in ("train", "test"):
            app_f = _extract_features(app_graph, app_buckets[bucket], side, "RL7:app")
            aff_f = _extract_features(aff_graph, aff_buckets[bucket], side, aff_layer)
            labels = [s.label for s in app_buckets[bucket]]
            pairs[bucket] = [bl.FeaturePair(a, f, l)
                             for a, f, l in zip(app_f, aff_f, labels)]
        if args.method == "bayes":
            model = bl.nb_fit(pairs["train"])
            preds = [int(np.argmax(bl.nb_predict(model, p))) for p in pairs["test"]]
        else:
            model = bl.svm_fit(pairs["train"], epochs=args.svm_epochs)
            preds = [bl.svm_predict(model, p) for p in pairs["test"]]

    from .traineval import report_from_predictions
    report = report_from_predictions(test_labels, preds, 14, f"baseline-{args.method}")
    out = Path(args.out)
    _write_run_config(out, args)
    (out / "report.tsv").write_text("\n".join(report.lines(TAXONOMY.objects)) + "\n")
    print(f"baseline {args.method}: test accuracy {report.accuracy:.4f} "
          f"({len(test_labels)} clips); report -> {out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser(extra_defaults: dict | None = None) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sensorimotor",
        description="Affordance-grounded sensorimotor object recognition")
    parser.add_argument("--config", help="JSON file layered under the flags")
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers = []
    _orig_add = sub.add_parser

    def add_parser(*args, **kwargs):
        p = _orig_add(*args, **kwargs)
        subparsers.append(p)
        return p

    sub.add_parser = add_parser

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", default=str(_out_root() / "synth"))
    p.add_argument("--subjects", type=int, default=4)
    p.add_argument("--per-combo", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frame-side", type=int, default=96)
    p.add_argument("--min-frames", type=int, default=16)
    p.add_argument("--max-frames", type=int, default=24)
    p.add_argument("--ratios", type=_parse_ratios, default=(0.25, 0.25, 0.5))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="run the visual front-end over a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default=str(_out_root() / "prepared"))
    p.add_argument("--crop-side", type=int, default=80)
    p.add_argument("--samples", type=int, default=20)
    p.add_argument("--range", help="override global depth range, 'dmin,dmax' in mm")
    p.set_defaults(func=cmd_preprocess)

    def add_data_flags(p):
        p.add_argument("--data", required=True, help="preprocessed tree root")
        p.add_argument("--split", help="split.tsv to reuse")
        p.add_argument("--split-seed", type=int, default=0)
        p.add_argument("--ratios", type=_parse_ratios, default=(0.25, 0.25, 0.5))
        p.add_argument("--tm-input", choices=("flow", "hand"), default="flow")

    p = sub.add_parser("train", help="train an architecture")
    add_data_flags(p)
    p.add_argument("--arch", required=True,
                   help="appearance | tm | st | GAT_FT(...) spec string")
    p.add_argument("--out", default=str(_out_root() / "run"))
    p.add_argument("--scale", choices=("desk", "paper"), default="desk")
    p.add_argument("--scale-json", help="ScaleConfig overrides as a JSON file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--lr", type=float, default=5e-3)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--crop-side", type=int)
    p.add_argument("--tau", type=int)
    p.add_argument("--agg", choices=("last", "all"))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    add_data_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--bucket", choices=("train", "val", "test"), default="test")
    p.add_argument("--agg", choices=("last", "all"))
    p.add_argument("--out", default=str(_out_root() / "eval"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--families", nargs="+", default=["all"])
    p.add_argument("--scale", choices=("desk", "paper"), default="desk")
    p.add_argument("--scale-json")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, help="probes per parameter tensor")
    p.add_argument("--frames", type=int, help="sequence length for recurrent families")
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.add_argument("--fd-step", type=float, default=1e-7,
                   help="finite-difference step (per-primitive default is 1e-4)")
    p.add_argument("--corrupt", action="store_true",
                   help="debug: corrupt a backward rule; the check must fail")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("baseline", help="probabilistic fusion baselines")
    add_data_flags(p)
    p.add_argument("--method", required=True, choices=("product", "bayes", "svm"))
    p.add_argument("--app-checkpoint", required=True)
    p.add_argument("--aff-checkpoint", required=True)
    p.add_argument("--svm-epochs", type=int, default=200)
    p.add_argument("--out", default=str(_out_root() / "baseline"))
    p.set_defaults(func=cmd_baseline)

    if extra_defaults:
        # config-file layering: replace argument defaults everywhere, after
        # all arguments exist (set_defaults rewrites matching action defaults)
        for p in subparsers:
            p.set_defaults(**extra_defaults)
    return parser


def main(argv=None) -> int:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    defaults = None
    if known.config:
        try:
            defaults = json.loads(Path(known.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            print(f"error: cannot read config {known.config}: {e}", file=sys.stderr)
            return 2
    parser = build_parser(defaults)
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except ArchSpecError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (DataError, FrontendError, TrainingError, SnapshotError, ConfigError,
            DimensionError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())
