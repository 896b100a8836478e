"""Deterministic synthetic interaction corpus.

Each clip renders a desk scene viewed frontally: a green tablecloth, a
static object whose silhouette and height-above-desk encode the object
class, and a moving skin-colored elliptical hand whose trajectory encodes
the affordance class. A gray backdrop ring outside the desk sits beyond the
volume of interest so the VOI filter has something to remove.

Two design points matter for experiments:

* ``Pen`` and ``Brush`` share an identical silhouette and height, so
  appearance alone cannot separate them. Their grip styles differ (side vs
  top approach), and each has one unique affordance (Write vs Paint), so
  motion evidence can. ``CONFUSABLE_PAIRS`` names them.
* All jitter flows from ``numpy.random.SeedSequence(seed, spawn_key=...)``,
  making the generator a bijection from (seed, parameters) to bytes.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple

import numpy as np

from .dataio import InteractionClip, save_manifest, write_depth_png, write_rgb_png
from .frontend import CameraModel
from .taxonomy import TAXONOMY

CONFUSABLE_PAIRS: Tuple[Tuple[str, str], ...] = (("Pen", "Brush"),)

CLOTH_RGB = (51, 128, 51)      # hue 120, sat 0.6: caught by the cloth gate
OBJECT_RGB = (41, 95, 204)     # hue ~220: fails both cloth and skin gates
HAND_RGB = (191, 134, 105)     # hue ~20, sat 0.45, val 0.75: skin gate
BACKDROP_RGB = (120, 120, 120)

DESK_DEPTH_MM = 1200
HAND_DEPTH_MM = 1050
BACKDROP_DEPTH_MM = 2000

# height above the desk per object class, mm; Pen == Brush by design
OBJECT_HEIGHTS_MM = (120, 30, 90, 80, 25, 60, 55, 45, 12, 15, 25, 110, 18, 40)

# approach direction for grasp-style contact, degrees; Pen vs Brush maximally apart
GRIP_ANGLES_DEG = (0, 30, 0, 45, 90, 30, 0, 45, 30, 0, 0, 45, 30, 0)


@dataclass(frozen=True)
class SynthConfig:
    """Rendering geometry. Defaults suit the desk ScaleConfig (64px inputs)."""

    frame_side: int = 96
    border: int = 6
    min_frames: int = 16
    max_frames: int = 24

    def camera(self) -> CameraModel:
        s = self.frame_side
        return CameraModel(fx=float(s), fy=float(s), cx=s / 2.0, cy=s / 2.0,
                           voi_min=(-1.0, -1.0, 0.9), voi_max=(1.0, 1.0, 1.35))


def _disc(dx, dy, r):
    return dx * dx + dy * dy <= r * r


def _rect(dx, dy, hw, hh):
    return (np.abs(dx) <= hw) & (np.abs(dy) <= hh)


def object_silhouette(obj: int, dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Class-coded silhouette; dx/dy are offsets from the object center in
    units of the base radius."""
    name = TAXONOMY.objects[obj]
    if name == "Ball":
        return _disc(dx, dy, 1.5)
    if name == "Book":
        return _rect(dx, dy, 1.4, 0.9)
    if name == "Bottle":
        return _rect(dx, dy - 0.35, 0.55, 1.05) | _rect(dx, dy + 1.15, 0.28, 0.45)
    if name == "Box":
        return _rect(dx, dy, 0.95, 0.95)
    if name in ("Brush", "Pen"):  # the confusable pair: identical sticks
        return _rect(dx, dy, 0.22, 1.3)
    if name == "Can":
        return _disc(dx, dy, 1.0)
    if name == "Cup":
        return _rect(dx, dy, 0.7, 0.7) | _rect(dx - 0.95, dy, 0.35, 0.18)
    if name == "Hammer":
        return _rect(dx, dy + 0.8, 1.1, 0.35) | _rect(dx, dy - 0.3, 0.25, 1.05)
    if name == "Key":
        return _disc(dx, dy + 0.7, 0.6) | _rect(dx, dy - 0.55, 0.18, 0.7)
    if name == "Knife":
        return (dx >= -1.4) & (dx <= 1.4) & (np.abs(dy) <= 0.25 * (1.4 - dx))
    if name == "Pitcher":
        body = _rect(dx, dy, 1.0, 1.1)
        spout = (dx >= -1.7) & (dx <= -0.95) & (dy >= -1.05) & (dy <= -1.05 + (dx + 1.7) * 0.8)
        return body | spout
    if name == "Smartphone":
        return _rect(dx, dy, 0.55, 1.0)
    if name == "Sponge":
        return _rect(dx, dy, 0.9, 0.6) & (np.abs(dx) / 0.9 + np.abs(dy) / 0.6 <= 1.45)
    raise ValueError(f"no silhouette for object {obj}")


def _grip_dir(angle_deg: float) -> np.ndarray:
    rad = np.deg2rad(angle_deg)
    return np.array([np.cos(rad), -np.sin(rad)])  # image y grows downward


def trajectory(aff: int, t: np.ndarray, grip_deg: float) -> np.ndarray:
    """Hand center path, shape (T,2), in base-radius units relative to the
    object center. Shapes are chosen so accumulated-magnitude templates are
    visually distinct per affordance."""
    name = TAXONOMY.affordances[aff]
    d = _grip_dir(grip_deg)
    z = np.zeros_like(t)
    if name == "Grasp":
        reach = 3.4 - 2.6 * t
        return np.stack([d[0] * reach, d[1] * reach], axis=-1)
    if name == "Lift":
        start = d * 1.1
        return np.stack([start[0] + z, start[1] + 0.4 - 3.6 * t], axis=-1)
    if name == "Push":
        return np.stack([-3.4 + 6.8 * t, 0.3 + z], axis=-1)
    if name == "Rotate":
        ang = 2 * np.pi * t
        return np.stack([2.3 * np.cos(ang), 2.3 * np.sin(ang)], axis=-1)
    if name == "Open":
        first = t < 0.5
        x = np.where(first, 3.2 - 4.4 * t, 1.0)
        y = np.where(first, 0.0, -4.4 * (t - 0.5))
        return np.stack([x, y], axis=-1)
    if name == "Hammer":
        return np.stack([0.3 + z, -0.4 - 2.4 * np.abs(np.sin(2.5 * np.pi * t))], axis=-1)
    if name == "Cut":
        return np.stack([0.9 * np.sin(6 * np.pi * t), -0.8 + 1.6 * t], axis=-1)
    if name == "Pour":
        ang = -np.pi / 2 - 0.45 * np.pi * t
        return np.stack([2.4 * np.cos(ang), 2.4 * np.sin(ang)], axis=-1)
    if name == "Squeeze":
        reach = 1.0 + 0.8 * np.abs(np.sin(2 * np.pi * t))
        return np.stack([d[0] * reach, d[1] * reach], axis=-1)
    if name == "Unlock":
        ang = 3 * np.pi * t
        return np.stack([0.8 * np.cos(ang), 0.8 * np.sin(ang)], axis=-1)
    if name == "Paint":
        return np.stack([1.5 * np.sin(3 * np.pi * t), -2.0 + 4.0 * t], axis=-1)
    if name == "Write":
        return np.stack([-1.1 + 2.2 * t, 1.9 + 0.35 * np.sin(10 * np.pi * t)], axis=-1)
    if name == "Type":
        return np.stack([0.9 + z, 1.7 - 0.35 * np.abs(np.sin(8 * np.pi * t))], axis=-1)
    raise ValueError(f"no trajectory for affordance {aff}")


@dataclass
class _ClipPlan:
    subject_idx: int
    obj: int
    aff: int
    k: int
    n_frames: int
    obj_center: np.ndarray
    obj_scale: float
    hand_axes: Tuple[float, float]
    traj_offset: np.ndarray
    traj_scale: float
    grip_deg: float
    depth_jitter: float
    phase: float


def _plan_clip(seed: int, subject_idx: int, obj: int, aff: int, k: int,
               cfg: SynthConfig) -> _ClipPlan:
    sub_rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, subject_idx)))
    subject_bias = sub_rng.uniform(-0.2, 0.2, size=2)
    subject_tempo = sub_rng.uniform(0.92, 1.08)
    subject_hand = sub_rng.uniform(0.9, 1.1)

    rng = np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(2, subject_idx, obj, aff, k)))
    s = cfg.frame_side
    base_r = 0.11 * s
    return _ClipPlan(
        subject_idx=subject_idx, obj=obj, aff=aff, k=k,
        n_frames=int(rng.integers(cfg.min_frames, cfg.max_frames + 1)),
        obj_center=np.array([s / 2.0, s / 2.0]) + rng.uniform(-0.04, 0.04, 2) * s,
        obj_scale=base_r * rng.uniform(0.92, 1.08),
        hand_axes=(1.0 * base_r * subject_hand, 0.7 * base_r * subject_hand),
        traj_offset=(subject_bias + rng.uniform(-0.1, 0.1, 2)) * base_r,
        traj_scale=subject_tempo * rng.uniform(0.95, 1.05),
        grip_deg=GRIP_ANGLES_DEG[obj] + rng.uniform(-8.0, 8.0),
        depth_jitter=rng.uniform(-6.0, 6.0),
        phase=rng.uniform(0, 2 * np.pi),
    )


def render_clip(plan: _ClipPlan, cfg: SynthConfig):
    """Render (rgb_frames, depth_frames) for one planned clip."""
    s = cfg.frame_side
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
    border = cfg.border
    desk = ((xx >= border) & (xx < s - border) & (yy >= border) & (yy < s - border))

    odx = (xx - plan.obj_center[0]) / plan.obj_scale
    ody = (yy - plan.obj_center[1]) / plan.obj_scale
    obj_mask = object_silhouette(plan.obj, odx, ody) & desk
    obj_depth = DESK_DEPTH_MM - OBJECT_HEIGHTS_MM[plan.obj] + plan.depth_jitter

    ts = np.linspace(0.0, 1.0, plan.n_frames)
    path = trajectory(plan.aff, ts, plan.grip_deg) * plan.traj_scale
    centers = plan.obj_center + path * plan.obj_scale + plan.traj_offset
    lo, hi = border + 2.0, s - border - 3.0
    centers = np.clip(centers, lo, hi)

    rgbs, depths = [], []
    for i in range(plan.n_frames):
        rgb = np.empty((s, s, 3), dtype=np.uint8)
        rgb[:] = BACKDROP_RGB
        depth = np.full((s, s), BACKDROP_DEPTH_MM, dtype=np.uint16)
        rgb[desk] = CLOTH_RGB
        depth[desk] = DESK_DEPTH_MM
        rgb[obj_mask] = OBJECT_RGB
        depth[obj_mask] = int(round(obj_depth))

        hx, hy = centers[i]
        hand = (((xx - hx) / plan.hand_axes[0]) ** 2
                + ((yy - hy) / plan.hand_axes[1]) ** 2 <= 1.0) & desk
        hand_depth = HAND_DEPTH_MM + 12.0 * np.sin(plan.phase + 4.0 * np.pi * ts[i])
        rgb[hand] = HAND_RGB
        depth[hand] = int(round(hand_depth))
        rgbs.append(rgb)
        depths.append(depth)
    return rgbs, depths


def synth_generate(out_dir, n_subjects: int, clips_per_combo: int,
                   cfg: SynthConfig = SynthConfig(), seed: int = 0) -> List[InteractionClip]:
    """Write frames plus a manifest under ``out_dir``; returns the clips.

    Emits every valid object-affordance combination, uniformly:
    n_subjects * clips_per_combo * 54 clips in total.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    clips: List[InteractionClip] = []
    for subject_idx in range(n_subjects):
        subject = f"subj{subject_idx:02d}"
        for obj, aff in TAXONOMY.valid_pairs():
            for k in range(clips_per_combo):
                plan = _plan_clip(seed, subject_idx, obj, aff, k, cfg)
                cid = f"s{subject_idx:02d}_o{obj:02d}_a{aff:02d}_k{k}"
                clip_dir = out_dir / "clips" / cid
                clip_dir.mkdir(parents=True, exist_ok=True)
                rgbs, depths = render_clip(plan, cfg)
                for t, (rgb, depth) in enumerate(zip(rgbs, depths)):
                    write_depth_png(clip_dir / f"d_{t:05d}.png", depth)
                    write_rgb_png(clip_dir / f"c_{t:05d}.png", rgb)
                clips.append(InteractionClip(
                    id=cid, subject=subject, object_label=obj, affordance_label=aff,
                    depth_dir=clip_dir, rgb_dir=clip_dir,
                    frame_count=plan.n_frames, view=0))
    save_manifest(out_dir / "manifest.tsv", clips)
    return clips
