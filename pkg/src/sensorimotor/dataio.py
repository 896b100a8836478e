"""Dataset manifests, subject splits, frame image IO, and checkpoints.

A manifest is line-delimited text, one clip per line, tab-separated fields::

    id  subject  view  object  affordance  depth_dir  rgb_dir  frame_count

Paths are relative to the manifest file. Frame files are 16-bit grayscale
PNGs ``d_%05d.png`` (depth, millimeters) and 8-bit RGB PNGs ``c_%05d.png``.
Lines starting with ``#`` are comments.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np
from PIL import Image

from .frontend import RgbdFrame
from .taxonomy import TAXONOMY, Taxonomy

MANIFEST_FIELDS = ("id", "subject", "view", "object", "affordance",
                   "depth_dir", "rgb_dir", "frame_count")


class DataError(ValueError):
    """Malformed manifest, invalid combination, or missing frame file."""


@dataclass
class InteractionClip:
    """One human-object interaction: frame references plus labels."""

    id: str
    subject: str
    object_label: int
    affordance_label: int
    depth_dir: Path
    rgb_dir: Path
    frame_count: int
    view: int = 0

    def frame_paths(self, t: int):
        return (self.depth_dir / f"d_{t:05d}.png", self.rgb_dir / f"c_{t:05d}.png")

    def load_frame(self, t: int) -> RgbdFrame:
        dpath, cpath = self.frame_paths(t)
        depth = np.asarray(Image.open(dpath), dtype=np.uint16)
        rgb = np.asarray(Image.open(cpath).convert("RGB"), dtype=np.uint8)
        return RgbdFrame(rgb, depth, t)

    def load_frames(self) -> List[RgbdFrame]:
        return [self.load_frame(t) for t in range(self.frame_count)]


def write_depth_png(path, depth_mm: np.ndarray) -> None:
    Image.fromarray(depth_mm.astype(np.uint16)).save(path)


def write_rgb_png(path, rgb: np.ndarray) -> None:
    Image.fromarray(rgb.astype(np.uint8), mode="RGB").save(path)


def read_rgb_png(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.uint8)


def save_manifest(path, clips: Sequence[InteractionClip]) -> None:
    path = Path(path)
    root = path.parent
    lines = ["#" + "\t".join(MANIFEST_FIELDS)]
    for c in clips:
        obj = TAXONOMY.objects[c.object_label]
        aff = TAXONOMY.affordances[c.affordance_label]
        lines.append("\t".join([
            c.id, c.subject, str(c.view), obj, aff,
            str(c.depth_dir.relative_to(root)), str(c.rgb_dir.relative_to(root)),
            str(c.frame_count),
        ]))
    path.write_text("\n".join(lines) + "\n")


def load_manifest(path, check_frames: bool = True,
                  taxonomy: Taxonomy = TAXONOMY) -> List[InteractionClip]:
    """Parse a manifest, validating labels against the taxonomy and, by
    default, that the first and last frame file of every clip exist."""
    path = Path(path)
    root = path.parent
    clips: List[InteractionClip] = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != len(MANIFEST_FIELDS):
            raise DataError(f"{path}:{lineno}: expected {len(MANIFEST_FIELDS)} "
                            f"tab-separated fields, got {len(parts)}")
        cid, subject, view, obj, aff, ddir, cdir, count = parts
        try:
            oi = taxonomy.object_index(obj)
            ai = taxonomy.affordance_index(aff)
            view_i = int(view)
            count_i = int(count)
        except (KeyError, ValueError) as e:
            raise DataError(f"{path}:{lineno}: {e}") from None
        if not taxonomy.is_valid(oi, ai):
            raise DataError(f"{path}:{lineno}: ({obj!r}, {aff!r}) is not a valid "
                            f"object-affordance combination")
        if count_i < 1:
            raise DataError(f"{path}:{lineno}: clip needs at least one frame")
        clip = InteractionClip(cid, subject, oi, ai, root / ddir, root / cdir,
                               count_i, view_i)
        if check_frames:
            for t in (0, count_i - 1):
                for p in clip.frame_paths(t):
                    if not p.exists():
                        raise DataError(f"{path}:{lineno}: clip {cid!r} missing "
                                        f"frame file {p}")
        clips.append(clip)
    return clips


@dataclass
class SplitAssignment:
    """Disjoint train/val/test subject sets."""

    train: set = field(default_factory=set)
    val: set = field(default_factory=set)
    test: set = field(default_factory=set)

    def bucket_of(self, subject: str) -> str:
        for name in ("train", "val", "test"):
            if subject in getattr(self, name):
                return name
        raise KeyError(f"subject {subject!r} not in split")

    def select(self, clips: Sequence[InteractionClip], bucket: str):
        members = getattr(self, bucket)
        return [c for c in clips if c.subject in members]


def split_by_subject(clips: Sequence[InteractionClip],
                     ratios=(0.25, 0.25, 0.5), seed: int = 0) -> SplitAssignment:
    """Shuffle subjects with a seeded PRNG and partition by the given ratios.

    Rounding: floor for train and val, remainder to test. A single-subject
    dataset degenerates to everything in train (with a warning).
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"ratios must be three nonnegative values summing to 1, got {ratios}")
    subjects = sorted({c.subject for c in clips})
    rng = np.random.default_rng(seed)
    order = [subjects[i] for i in rng.permutation(len(subjects))]
    n = len(order)
    if n == 1:
        warnings.warn("single subject: assigning it to train; val/test empty")
        return SplitAssignment(train=set(order))
    n_train = int(np.floor(ratios[0] * n))
    n_val = int(np.floor(ratios[1] * n))
    return SplitAssignment(
        train=set(order[:n_train]),
        val=set(order[n_train:n_train + n_val]),
        test=set(order[n_train + n_val:]),
    )


def save_split(path, split: SplitAssignment) -> None:
    lines = ["#subject\tbucket"]
    for name in ("train", "val", "test"):
        for s in sorted(getattr(split, name)):
            lines.append(f"{s}\t{name}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_split(path) -> SplitAssignment:
    split = SplitAssignment()
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            subject, bucket = line.split("\t")
            getattr(split, bucket).add(subject)
        except (ValueError, AttributeError):
            raise DataError(f"{path}:{lineno}: malformed split line {line!r}") from None
    return split


# checkpoint = snapshot container of named parameters (see snapshot.py)

def save_snapshot(path, tensors: Dict[str, np.ndarray]) -> None:
    from .snapshot import save_container
    save_container(path, tensors)


def load_snapshot(path) -> Dict[str, np.ndarray]:
    from .snapshot import load_container, SnapshotError
    try:
        return load_container(path)
    except SnapshotError as e:
        raise DataError(str(e)) from e
