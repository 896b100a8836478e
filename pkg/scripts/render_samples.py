#!/usr/bin/env python3
"""Render a contact sheet of synthetic clips and their front-end streams.

Handy for eyeballing what the networks actually see: one row per clip with
the raw RGB, the colorized object/hand depth maps, and the accumulated
flow-magnitude template.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from sensorimotor.experiments import prepare_clip
from sensorimotor.frontend import ColorizationRange, SegmentationThresholds
from sensorimotor.dataio import load_manifest
from sensorimotor.synthgen import SynthConfig, synth_generate
from sensorimotor.taxonomy import TAXONOMY


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="samples.png")
    ap.add_argument("--corpus", help="existing corpus dir (default: tiny throwaway)")
    ap.add_argument("--rows", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    if args.corpus:
        clips = load_manifest(Path(args.corpus) / "manifest.tsv")
        cfg = SynthConfig(frame_side=clips[0].load_frame(0).depth.shape[0])
    else:
        tmp = Path("_samples_corpus")
        cfg = SynthConfig(frame_side=72, border=5, min_frames=12, max_frames=16)
        clips = synth_generate(tmp, 1, 1, cfg, seed=args.seed)

    rng = np.random.default_rng(args.seed)
    picks = [clips[i] for i in rng.choice(len(clips), args.rows, replace=False)]
    cam = cfg.camera()
    crange = ColorizationRange(1000, 1210)
    crop = cfg.frame_side - 2 * cfg.border - 2

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(args.rows, 4, figsize=(7, 1.8 * args.rows))
    for row, clip in enumerate(picks):
        streams = prepare_clip(clip, cam, SegmentationThresholds(), crange,
                               crop_side=crop, n_samples=4)
        mid = clip.load_frame(clip.frame_count // 2)
        panels = [mid.rgb, streams.object_maps[0], streams.hand_maps[2],
                  streams.template]
        titles = ["rgb", "object map", "hand map", "flow template"]
        label = (f"{TAXONOMY.objects[clip.object_label]}/"
                 f"{TAXONOMY.affordances[clip.affordance_label]}")
        for col, (img, title) in enumerate(zip(panels, titles)):
            ax = axes[row, col] if args.rows > 1 else axes[col]
            ax.imshow(img)
            ax.set_xticks([])
            ax.set_yticks([])
            if row == 0:
                ax.set_title(title, fontsize=9)
            if col == 0:
                ax.set_ylabel(label, fontsize=7)
    fig.tight_layout()
    fig.savefig(args.out, dpi=130)
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
