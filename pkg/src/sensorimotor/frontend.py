"""RGB-D visual front-end.

Turns registered RGB-D frame sequences into the three network input streams:
colorized object depth maps, colorized hand depth maps, and one colorized
accumulated hand-flow-magnitude template per clip.

Processing order per frame: volume-of-interest filtering in 3D camera
coordinates, center crop, HSV segmentation into cloth / hand / object, then
depth colorization. Flow uses a fixed-pixel backprojection proxy (the change
of the backprojected 3D point at each pixel between consecutive frames);
precomputed dense flow fields can be loaded from tensor snapshots instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .snapshot import load_tensor


class FrontendError(ValueError):
    """Bad front-end configuration or mismatched frame geometry."""


@dataclass
class RgbdFrame:
    """One registered RGB-D frame: rgb HxWx3 uint8, depth HxW uint16 mm (0 = invalid)."""

    rgb: np.ndarray
    depth: np.ndarray
    timestamp: int = 0

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb, dtype=np.uint8)
        self.depth = np.asarray(self.depth, dtype=np.uint16)
        if self.rgb.shape[:2] != self.depth.shape:
            raise FrontendError(
                f"rgb {self.rgb.shape[:2]} and depth {self.depth.shape} grids differ")


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics plus the 3D volume of interest (meters, closed box)."""

    fx: float
    fy: float
    cx: float
    cy: float
    voi_min: tuple = (-1.0, -1.0, 0.5)
    voi_max: tuple = (1.0, 1.0, 1.5)

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise FrontendError("focal lengths must be positive")
        if not all(a < b for a, b in zip(self.voi_min, self.voi_max)):
            raise FrontendError("voi_min must be strictly below voi_max per axis")

    def shifted(self, dx: float, dy: float) -> "CameraModel":
        """Principal point after cropping dx columns / dy rows from the top-left."""
        return replace(self, cx=self.cx - dx, cy=self.cy - dy)


@dataclass(frozen=True)
class SegmentationThresholds:
    """HSV gates. Hue in degrees [0,360), saturation/value in [0,1].

    The source material gives no numeric thresholds, so these defaults are
    tuned to the synthetic corpus and fully configurable.
    """

    cloth_hue: tuple = (90.0, 150.0)
    cloth_sat_min: float = 0.3
    skin_hue: tuple = ((0.0, 50.0), (340.0, 360.0))
    skin_sat: tuple = (0.2, 0.7)
    skin_val_min: float = 0.35


@dataclass(frozen=True)
class ColorizationRange:
    """Global depth normalization range in millimeters."""

    d_min: float
    d_max: float

    def __post_init__(self):
        if not self.d_min < self.d_max:
            raise FrontendError(f"need d_min < d_max, got [{self.d_min}, {self.d_max}]")


def backproject(depth_mm: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Depth image (mm) to HxWx3 camera-space points in meters (invalid -> 0)."""
    h, w = depth_mm.shape
    z = depth_mm.astype(np.float64) / 1000.0
    us = np.arange(w, dtype=np.float64)[None, :]
    vs = np.arange(h, dtype=np.float64)[:, None]
    x = (us - cam.cx) * z / cam.fx
    y = (vs - cam.cy) * z / cam.fy
    return np.stack([x, y, z], axis=-1)


def voi_filter(frame: RgbdFrame, cam: CameraModel) -> RgbdFrame:
    """Zero rgb+depth wherever the backprojected point leaves the closed VOI box."""
    pts = backproject(frame.depth, cam)
    lo = np.asarray(cam.voi_min)
    hi = np.asarray(cam.voi_max)
    inside = np.all((pts >= lo) & (pts <= hi), axis=-1) & (frame.depth > 0)
    rgb = np.where(inside[..., None], frame.rgb, 0).astype(np.uint8)
    depth = np.where(inside, frame.depth, 0).astype(np.uint16)
    return RgbdFrame(rgb, depth, frame.timestamp)


def crop_offsets(height: int, width: int, side: int) -> Tuple[int, int]:
    if side > height or side > width:
        raise FrontendError(f"crop side {side} exceeds frame {width}x{height}")
    return (width - side) // 2, (height - side) // 2


def crop_center(frame: RgbdFrame, side: int) -> RgbdFrame:
    ox, oy = crop_offsets(frame.depth.shape[0], frame.depth.shape[1], side)
    return RgbdFrame(frame.rgb[oy:oy + side, ox:ox + side],
                     frame.depth[oy:oy + side, ox:ox + side], frame.timestamp)


def rgb_to_hsv(rgb: np.ndarray):
    """Hexcone HSV: H in degrees [0,360), S and V in [0,1]."""
    arr = rgb.astype(np.float64) / 255.0
    r, g, b = arr[..., 0], arr[..., 1], arr[..., 2]
    mx = arr.max(axis=-1)
    mn = arr.min(axis=-1)
    d = mx - mn
    with np.errstate(divide="ignore", invalid="ignore"):
        hr = np.mod((g - b) / d, 6.0)
        hg = (b - r) / d + 2.0
        hb = (r - g) / d + 4.0
        h = np.select([d == 0, mx == r, mx == g], [0.0, hr, hg], default=hb) * 60.0
        s = np.where(mx > 0, d / mx, 0.0)
    return h, s, mx


def _in_hue(h: np.ndarray, interval) -> np.ndarray:
    lo, hi = interval
    return (h >= lo) & (h < hi) if lo <= hi else (h >= lo) | (h < hi)


def hsv_segment(frame: RgbdFrame, th: SegmentationThresholds):
    """Split valid pixels into (object_mask, hand_mask); cloth lands in neither."""
    h, s, v = rgb_to_hsv(frame.rgb)
    valid = frame.depth > 0
    cloth = _in_hue(h, th.cloth_hue) & (s >= th.cloth_sat_min)
    skin_h = np.zeros_like(cloth)
    for interval in th.skin_hue:
        skin_h |= _in_hue(h, interval)
    skin = (skin_h & (s >= th.skin_sat[0]) & (s <= th.skin_sat[1])
            & (v >= th.skin_val_min))
    hand = valid & ~cloth & skin
    obj = valid & ~cloth & ~skin
    return obj, hand


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5)  # nonnegative inputs only


def hot_colormap(v: np.ndarray) -> np.ndarray:
    """Hot map on integer levels v in 0..255: black->red->yellow->white.

    Channel c at u = v/255: R = 255*min(3u,1), G = 255*clamp(3u-1,0,1),
    B = 255*clamp(3u-2,0,1), rounded half away from zero.
    """
    v = np.asarray(v, dtype=np.float64)
    u = v / 255.0
    r = _round_half_away(255.0 * np.minimum(3.0 * u, 1.0))
    g = _round_half_away(255.0 * np.clip(3.0 * u - 1.0, 0.0, 1.0))
    b = _round_half_away(255.0 * np.clip(3.0 * u - 2.0, 0.0, 1.0))
    return np.stack([r, g, b], axis=-1).astype(np.uint8)


def colorize_depth(depth_mm: np.ndarray, rng: ColorizationRange,
                   valid: Optional[np.ndarray] = None) -> np.ndarray:
    """Linear [0,255] normalization of depth then the hot colormap.

    Invalid pixels (depth 0, or excluded by the ``valid`` mask) come out black.
    """
    d = np.asarray(depth_mm, dtype=np.float64)
    ok = d > 0
    if valid is not None:
        ok &= valid.astype(bool)
    scale = 255.0 * (d - rng.d_min) / (rng.d_max - rng.d_min)
    v = _round_half_away(np.clip(scale, 0.0, 255.0))
    img = hot_colormap(v)
    img[~ok] = 0
    return img


def flow_field(prev: RgbdFrame, cur: RgbdFrame, cam: CameraModel) -> np.ndarray:
    """Fixed-pixel 3D displacement proxy, HxWx3 meters/frame; invalid pairs -> 0."""
    if prev.depth.shape != cur.depth.shape:
        raise FrontendError(
            f"flow needs equal resolutions, got {prev.depth.shape} vs {cur.depth.shape}")
    both = (prev.depth > 0) & (cur.depth > 0)
    f = backproject(cur.depth, cam) - backproject(prev.depth, cam)
    return np.where(both[..., None], f, 0.0)


def load_flow_field(path) -> np.ndarray:
    """Precomputed dense flow from a tensor snapshot (rank-3, HxWx3, f32 m/frame)."""
    arr = load_tensor(path)
    if arr.ndim != 3 or arr.shape[-1] != 3:
        raise FrontendError(f"flow snapshot must be HxWx3, got {arr.shape}")
    return arr


FLOW_QUANTUM = 2.0 ** -32  # meters; see note in accumulate_flow_magnitude


def accumulate_flow_magnitude(fields: Sequence[np.ndarray],
                              hand_masks: Sequence[np.ndarray]) -> np.ndarray:
    """Per-pixel sum over frames of |F_t|, restricted to that frame's hand mask.

    Magnitudes are accumulated on a fixed sub-nanometer grid: the per-frame
    terms become exact integers in double precision, so the sum is exactly
    associative and commutative. That makes frame-order permutation
    invariance and additivity over split sequences hold bit-for-bit, which
    plain float accumulation cannot guarantee.
    """
    if len(fields) == 0:
        raise FrontendError("cannot accumulate an empty flow sequence")
    if len(fields) != len(hand_masks):
        raise FrontendError(f"{len(fields)} fields vs {len(hand_masks)} masks")
    acc = np.zeros(fields[0].shape[:2], dtype=np.float64)
    for f, m in zip(fields, hand_masks):
        quanta = np.round(np.linalg.norm(f, axis=-1) / FLOW_QUANTUM)
        acc += quanta * m.astype(np.float64)
    return acc * FLOW_QUANTUM


def colorize_magnitude(mag: np.ndarray) -> np.ndarray:
    """Template image: hot map over the clip's own min/max magnitude range.

    A flat (all-equal) map renders black; unlike depth there is no global
    range to normalize against.
    """
    lo, hi = float(mag.min()), float(mag.max())
    if hi <= lo:
        return np.zeros(mag.shape + (3,), dtype=np.uint8)
    v = _round_half_away(255.0 * (mag - lo) / (hi - lo))
    return hot_colormap(v)


def sample_frames_uniform(n_frames: int, n: int = 20) -> List[int]:
    """Indices round(i*(T-1)/(n-1)); duplicates appear when T < n."""
    if n_frames < 1:
        raise FrontendError("clip has no frames")
    if n < 1:
        raise FrontendError("must sample at least one frame")
    if n == 1:
        return [0]
    return [int(_round_half_away(np.float64(i) * (n_frames - 1) / (n - 1)))
            for i in range(n)]


@dataclass
class ClipStreams:
    """Front-end output for one clip."""

    object_maps: List[np.ndarray]   # n_samples colorized HxWx3 images
    hand_maps: List[np.ndarray]
    flow_template: np.ndarray       # one colorized HxWx3 image
    sampled_indices: List[int] = field(default_factory=list)


def run_pipeline(frames: Sequence[RgbdFrame], cam: CameraModel,
                 th: SegmentationThresholds, rng: ColorizationRange,
                 crop_side: int, n_samples: int = 20,
                 flow_fields: Optional[Sequence[np.ndarray]] = None) -> ClipStreams:
    """VOI filter -> center crop -> HSV segment -> colorize all three streams.

    Flow is accumulated over every consecutive frame pair of the whole clip
    (or taken from ``flow_fields`` when supplied); the per-frame streams keep
    only the uniformly sampled frames.
    """
    if len(frames) == 0:
        raise FrontendError("clip has no frames")
    filtered = [crop_center(voi_filter(f, cam), crop_side) for f in frames]
    h0, w0 = frames[0].depth.shape
    ox, oy = crop_offsets(h0, w0, crop_side)
    crop_cam = cam.shifted(ox, oy)

    masks = [hsv_segment(f, th) for f in filtered]
    if flow_fields is None:
        flow_fields = [flow_field(filtered[t - 1], filtered[t], crop_cam)
                       for t in range(1, len(filtered))]
    if len(filtered) > 1:
        mag = accumulate_flow_magnitude(flow_fields, [m[1] for m in masks][1:])
    else:
        mag = np.zeros((crop_side, crop_side))
    template = colorize_magnitude(mag)

    picks = sample_frames_uniform(len(filtered), n_samples)
    object_maps, hand_maps = [], []
    for t in picks:
        obj_mask, hand_mask = masks[t]
        object_maps.append(colorize_depth(filtered[t].depth, rng, obj_mask))
        hand_maps.append(colorize_depth(filtered[t].depth, rng, hand_mask))
    return ClipStreams(object_maps, hand_maps, template, picks)
