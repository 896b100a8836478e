"""Dataset preparation and the desk-scale fusion experiment.

``prepare_dataset`` runs the visual front-end over a manifest's clips and
yields per-clip stream bundles; ``save_prepared``/``load_prepared`` move
those bundles through a directory tree of PNGs with an index file, which is
the on-disk interface between the preprocess and train commands.

``run_desk_experiment`` is the headline experiment: train the appearance
CNN and the multi-level slow fusion net on a synthetic corpus over several
seeds and compare overall and confusable-pair test accuracy.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .archspec import parse_arch_spec
from .dataio import (DataError, InteractionClip, read_rgb_png, save_split,
                     split_by_subject, write_rgb_png)
from .frontend import (ColorizationRange, CameraModel, SegmentationThresholds,
                       run_pipeline, voi_filter)
from .netgraph import NetworkGraph, ScaleConfig, build_appearance_cnn, build_fused
from .synthgen import CONFUSABLE_PAIRS, SynthConfig, synth_generate
from .taxonomy import TAXONOMY
from .traineval import Sample, TrainConfig, evaluate, predict, train
from . import traineval


@dataclass
class PreparedClip:
    id: str
    subject: str
    object_label: int
    affordance_label: int
    object_maps: List[np.ndarray] = field(default_factory=list)
    hand_maps: List[np.ndarray] = field(default_factory=list)
    template: Optional[np.ndarray] = None


def compute_depth_range(clips: Sequence[InteractionClip],
                        cam: CameraModel) -> ColorizationRange:
    """Global min/max over all VOI-filtered valid depths in the dataset."""
    lo, hi = np.inf, -np.inf
    for clip in clips:
        for t in range(clip.frame_count):
            d = voi_filter(clip.load_frame(t), cam).depth
            vals = d[d > 0]
            if vals.size:
                lo = min(lo, float(vals.min()))
                hi = max(hi, float(vals.max()))
    if not np.isfinite(lo) or hi <= lo:
        raise DataError("dataset has no valid depth inside the volume of interest")
    return ColorizationRange(lo, hi)


def prepare_clip(clip: InteractionClip, cam: CameraModel,
                 th: SegmentationThresholds, crange: ColorizationRange,
                 crop_side: int, n_samples: int = 20) -> PreparedClip:
    streams = run_pipeline(clip.load_frames(), cam, th, crange, crop_side, n_samples)
    return PreparedClip(clip.id, clip.subject, clip.object_label,
                        clip.affordance_label, streams.object_maps,
                        streams.hand_maps, streams.flow_template)


def prepare_dataset(clips: Sequence[InteractionClip], cam: CameraModel,
                    th: SegmentationThresholds, crop_side: int,
                    n_samples: int = 20,
                    crange: Optional[ColorizationRange] = None):
    if crange is None:
        crange = compute_depth_range(clips, cam)
    return [prepare_clip(c, cam, th, crange, crop_side, n_samples) for c in clips], crange


INDEX_FIELDS = ("id", "subject", "object", "affordance", "n_samples")


def save_prepared(root, prepared: Sequence[PreparedClip],
                  crange: ColorizationRange) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    lines = ["#" + "\t".join(INDEX_FIELDS)]
    for p in prepared:
        d = root / "clips" / p.id
        d.mkdir(parents=True, exist_ok=True)
        for t, img in enumerate(p.object_maps):
            write_rgb_png(d / f"obj_{t:03d}.png", img)
        for t, img in enumerate(p.hand_maps):
            write_rgb_png(d / f"hand_{t:03d}.png", img)
        write_rgb_png(d / "flow.png", p.template)
        lines.append("\t".join([p.id, p.subject, TAXONOMY.objects[p.object_label],
                                TAXONOMY.affordances[p.affordance_label],
                                str(len(p.object_maps))]))
    (root / "index.tsv").write_text("\n".join(lines) + "\n")
    (root / "range.json").write_text(
        json.dumps({"d_min": crange.d_min, "d_max": crange.d_max}))


def load_prepared(root, what: str = "all") -> List[PreparedClip]:
    """Read a preprocessed tree; ``what`` limits IO: 'gtm' loads only the
    first object map plus the flow template, 'all' everything."""
    root = Path(root)
    index = root / "index.tsv"
    if not index.exists():
        raise DataError(f"no index.tsv under {root}")
    out: List[PreparedClip] = []
    for raw in index.read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        cid, subject, obj, aff, n = line.split("\t")
        d = root / "clips" / cid
        p = PreparedClip(cid, subject, TAXONOMY.object_index(obj),
                         TAXONOMY.affordance_index(aff))
        n = int(n)
        p.template = read_rgb_png(d / "flow.png")
        if what == "gtm":
            p.object_maps = [read_rgb_png(d / "obj_000.png")]
        else:
            p.object_maps = [read_rgb_png(d / f"obj_{t:03d}.png") for t in range(n)]
            p.hand_maps = [read_rgb_png(d / f"hand_{t:03d}.png") for t in range(n)]
        out.append(p)
    return out


def samples_for_graph(prepared: Sequence[PreparedClip], graph: NetworkGraph,
                      tm_input: str = "flow") -> List[Sample]:
    """Select the stream images each graph family consumes.

    GTM appearance input is the first sampled frame's object map; the
    template stream is the accumulated-flow image by default or the middle
    hand depth map with ``tm_input='hand'``. Recurrent graphs take the full
    sampled sequences.
    """
    use_objects = graph.class_count == 14
    samples = []
    for p in prepared:
        label = p.object_label if use_objects else p.affordance_label
        streams: Dict[str, object] = {}
        for s in graph.input_streams:
            if graph.recurrent:
                streams[s] = list(p.object_maps if s == "app" else p.hand_maps)
            elif s == "app":
                streams[s] = p.object_maps[0]
            elif tm_input == "flow":
                streams[s] = p.template
            else:
                streams[s] = p.hand_maps[len(p.hand_maps) // 2]
        samples.append(Sample(label, streams, p.id, p.subject))
    return samples


# ---------------------------------------------------------------------------
# the desk experiment


@dataclass
class DeskExperimentConfig:
    """Everything the fusion-vs-appearance experiment pins down."""

    n_subjects: int = 8
    clips_per_combo: int = 2
    data_seed: int = 7
    model_seeds: tuple = (0, 1, 2)
    fused_arch: str = "GTM_SML(RL5_3:app,RL5_3:aff,RL6)"
    synth: SynthConfig = field(default_factory=lambda: SynthConfig(
        frame_side=56, border=4, min_frames=14, max_frames=20))
    stream_side: int = 40
    scale: ScaleConfig = field(default_factory=lambda: ScaleConfig(
        input_side=32, group_channels=(8, 16, 24, 32, 32),
        convs_per_group=(1, 1, 2, 2, 3), fc_width=64,
        lstm_layers=1, lstm_hidden=48))
    epochs: int = 40
    lr: float = 5e-3
    batch_size: int = 8
    plateau_patience: int = 4


@dataclass
class SeedOutcome:
    seed: int
    app_accuracy: float
    fused_accuracy: float
    app_pair_accuracy: float
    fused_pair_accuracy: float
    app_seconds: float = 0.0
    fused_seconds: float = 0.0


def pair_indices() -> List[int]:
    idx = []
    for a, b in CONFUSABLE_PAIRS:
        idx.extend([TAXONOMY.object_index(a), TAXONOMY.object_index(b)])
    return idx


def _pair_accuracy(samples: Sequence[Sample], preds: np.ndarray) -> float:
    members = pair_indices()
    mask = np.array([s.label in members for s in samples])
    if not mask.any():
        return 0.0
    labels = np.array([s.label for s in samples])
    return float((preds[mask] == labels[mask]).mean())


def _train_and_eval(graph: NetworkGraph, train_s, val_s, test_s,
                    cfg: DeskExperimentConfig, seed: int):
    tcfg = TrainConfig(lr=cfg.lr, epochs=cfg.epochs, crop_side=cfg.scale.input_side,
                       seed=seed, batch_size=cfg.batch_size,
                       plateau_patience=cfg.plateau_patience)
    t0 = time.perf_counter()
    train(graph, train_s, tcfg, val_s)
    elapsed = time.perf_counter() - t0
    preds = predict(graph, test_s, cfg.scale.input_side)
    labels = np.array([s.label for s in test_s])
    acc = float((preds == labels).mean())
    return acc, _pair_accuracy(test_s, preds), elapsed, preds


def run_desk_experiment(workdir, cfg: DeskExperimentConfig = DeskExperimentConfig(),
                        log=print) -> List[SeedOutcome]:
    """Generate (or reuse) the corpus, then per seed train the appearance CNN
    and the fused net on identical data and compare test accuracy."""
    workdir = Path(workdir)
    data_dir = workdir / "synth"
    prep_dir = workdir / "prepared"
    if not (prep_dir / "index.tsv").exists():
        log(f"generating corpus under {data_dir} ...")
        clips = synth_generate(data_dir, cfg.n_subjects, cfg.clips_per_combo,
                               cfg.synth, cfg.data_seed)
        cam = cfg.synth.camera()
        log(f"preprocessing {len(clips)} clips ...")
        prepared, crange = prepare_dataset(clips, cam, SegmentationThresholds(),
                                           cfg.stream_side)
        save_prepared(prep_dir, prepared, crange)
    prepared = load_prepared(prep_dir, what="gtm")

    split = split_by_subject(
        [InteractionClip(p.id, p.subject, p.object_label, p.affordance_label,
                         Path("."), Path("."), 1) for p in prepared],
        seed=cfg.data_seed)
    save_split(workdir / "split.tsv", split)
    buckets = {name: [p for p in prepared if p.subject in getattr(split, name)]
               for name in ("train", "val", "test")}
    log(f"subjects: train={sorted(split.train)} val={sorted(split.val)} "
        f"test={sorted(split.test)}")

    spec = parse_arch_spec(cfg.fused_arch)
    outcomes: List[SeedOutcome] = []
    for seed in cfg.model_seeds:
        app = build_appearance_cnn(cfg.scale, seed=seed)
        app_sets = {k: samples_for_graph(v, app) for k, v in buckets.items()}
        app_acc, app_pair, app_dt, _ = _train_and_eval(
            app, app_sets["train"], app_sets["val"], app_sets["test"], cfg, seed)
        log(f"seed {seed}: appearance acc={app_acc:.4f} pair={app_pair:.4f} "
            f"({app_dt:.0f}s)")

        fused = build_fused(spec, cfg.scale, seed=seed)
        fused_sets = {k: samples_for_graph(v, fused) for k, v in buckets.items()}
        fused_acc, fused_pair, fused_dt, _ = _train_and_eval(
            fused, fused_sets["train"], fused_sets["val"], fused_sets["test"], cfg, seed)
        log(f"seed {seed}: fused      acc={fused_acc:.4f} pair={fused_pair:.4f} "
            f"({fused_dt:.0f}s)")
        outcomes.append(SeedOutcome(seed, app_acc, fused_acc, app_pair, fused_pair,
                                    app_dt, fused_dt))

    (workdir / "results.json").write_text(json.dumps(
        [asdict(o) for o in outcomes], indent=2))
    return outcomes
