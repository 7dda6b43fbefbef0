"""Procedural stick-figure world: scenes, scene-consistent poses, layout
images (scene + skeleton overlay) and "human" images (scene + filled figure).

Everything is a pure function of (inputs, seed). Images are float32 arrays of
shape [H, W, 3] whose values always sit on the 1/255 grid, so PNG roundtrips
are bit-exact and pixel comparisons can use ==.

Pose geometry: figures are built from a torso-length template with jittered
limb angles, snapped to integer pixel coordinates, and rejection-sampled until
every invariant holds:

  - all joints inside [3, W-4] x [3, H-4]
  - every bone length inside skeleton.BONE_LENGTH_RANGES
  - standing ankles within 2 px of the floor line, sitting hip midpoints on
    the bench top edge
  - any two joints (same or different person) at least 3 px apart, so the
    radius-2 joint discs in the layout stay decodable to sub-pixel centroids
"""

from __future__ import annotations

import colorsys
import hashlib
import json
import math
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
from PIL import Image

from . import skeleton as sk


class WorldError(Exception):
    """Base class for world-generation failures."""


class ConfigError(WorldError):
    pass


class PromptInconsistencyError(WorldError):
    pass


class UnsupportedPersonCountError(WorldError):
    pass


class PoseSamplingError(WorldError):
    pass


# --------------------------------------------------------------------------
# domain types
# --------------------------------------------------------------------------

ACTIONS = ("standing", "sitting")
LOCATIONS = ("left", "center", "right")

# token table: index 0..2 derived from the prompt, index 3 is a task slot
# (PAD in stored prompts; training substitutes TOKEN_TASK_*).
TOKEN_PAD = 0
TOKEN_ACTION = {"standing": 1, "sitting": 2}
TOKEN_LOCATION = {"left": 3, "center": 4, "right": 5}
TOKEN_COUNT = {1: 6, 2: 7}
TOKEN_TASK_LAYOUT = 8
TOKEN_TASK_HUMAN = 9
TEXT_VOCAB_SIZE = 10
TEXT_LEN = 4


@dataclass(frozen=True)
class BackgroundStyle:
    palette: int
    top_mix: float
    bottom_mix: float


@dataclass(frozen=True)
class SceneSpec:
    width: int
    height: int
    floor_y: int
    bench: Optional[tuple[int, int, int, int]]  # (x0, y0, x1, y1), y1 == floor_y
    background_style: BackgroundStyle
    seed: int


@dataclass(frozen=True)
class PromptSpec:
    action: str
    location: str
    count: int

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise ValueError(f"unknown action {self.action!r}")
        if self.location not in LOCATIONS:
            raise ValueError(f"unknown location {self.location!r}")
        if self.count not in (1, 2):
            raise ValueError(f"count must be 1 or 2, got {self.count}")

    @property
    def token_ids(self) -> tuple[int, int, int, int]:
        return (
            TOKEN_ACTION[self.action],
            TOKEN_LOCATION[self.location],
            TOKEN_COUNT[self.count],
            TOKEN_PAD,
        )


@dataclass(frozen=True)
class Pose:
    joints: dict  # joint name -> (x, y) floats in pixel coordinates
    person_index: int

    def joint_array(self) -> np.ndarray:
        return np.array([self.joints[n] for n in sk.JOINT_NAMES], dtype=np.float64)

    def pelvis(self) -> tuple[float, float]:
        rh = self.joints["r_hip"]
        lh = self.joints["l_hip"]
        return ((rh[0] + lh[0]) / 2.0, (rh[1] + lh[1]) / 2.0)


@dataclass
class Sample:
    scene: np.ndarray
    layout: np.ndarray
    human: np.ndarray
    poses: list
    prompt: PromptSpec
    id: int
    seed: int
    scene_spec: SceneSpec = None
    mask: np.ndarray = None


@dataclass(frozen=True)
class WorldConfig:
    width: int = 64
    height: int = 64
    patch_size: int = 8
    bench_probability: float = 0.55
    sitting_probability: float = 0.45  # applied only when a bench exists
    two_person_probability: float = 0.3

    def validate(self):
        if self.width % self.patch_size or self.height % self.patch_size:
            raise ConfigError(
                f"image size {self.width}x{self.height} must be a multiple of "
                f"patch size {self.patch_size}"
            )


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary labeled parts."""
    h = hashlib.blake2b(":".join(str(p) for p in parts).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little") & 0x7FFF_FFFF_FFFF_FFFF


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def from_uint8(img: np.ndarray) -> np.ndarray:
    return img.astype(np.float32) / np.float32(255.0)


# --------------------------------------------------------------------------
# scene generation
# --------------------------------------------------------------------------

# (top, bottom, floor, bench) colors, all channels inside BACKGROUND_BAND.
_BG_PALETTES = [
    ((150, 144, 136), (118, 114, 110), (104, 100, 98), (128, 112, 100)),
    ((140, 150, 156), (112, 120, 126), (100, 106, 110), (110, 122, 132)),
    ((152, 140, 130), (124, 114, 106), (108, 100, 96), (134, 120, 104)),
    ((136, 148, 140), (110, 120, 112), (98, 106, 100), (118, 132, 120)),
    ((148, 138, 150), (120, 112, 122), (106, 100, 108), (126, 116, 130)),
    ((142, 142, 128), (116, 116, 104), (102, 102, 96), (124, 124, 108)),
]
_BAND_LO, _BAND_HI = sk.BACKGROUND_BAND


def _band_clip(c):
    return tuple(int(np.clip(v, _BAND_LO, _BAND_HI)) for v in c)


def render_scene(spec: SceneSpec) -> np.ndarray:
    """Rasterize a SceneSpec to a float image, deterministically."""
    top, bottom, floor_c, bench_c = _BG_PALETTES[spec.background_style.palette]
    h, w = spec.height, spec.width
    img = np.zeros((h, w, 3), dtype=np.uint8)

    t0 = spec.background_style.top_mix
    t1 = spec.background_style.bottom_mix
    wall_rows = max(spec.floor_y, 1)
    for r in range(wall_rows):
        t = t0 + (t1 - t0) * (r / max(wall_rows - 1, 1))
        col = [int(round(top[c] + (bottom[c] - top[c]) * t)) for c in range(3)]
        img[r, :, :] = _band_clip(col)

    img[spec.floor_y:, :, :] = _band_clip(floor_c)
    # ground line, one shade darker than the floor
    img[spec.floor_y, :, :] = _band_clip(tuple(v - 10 for v in floor_c))

    if spec.bench is not None:
        x0, y0, x1, y1 = spec.bench
        img[y0:y1 + 1, x0:x1 + 1, :] = _band_clip(bench_c)
        border = _band_clip(tuple(v - 14 for v in bench_c))
        img[y0, x0:x1 + 1, :] = border
        img[y0:y1 + 1, x0, :] = border
        img[y0:y1 + 1, x1, :] = border
    return from_uint8(img)


def sample_scene(seed: int, config: WorldConfig = WorldConfig()) -> tuple[SceneSpec, np.ndarray]:
    """Draw a random scene. Deterministic for a fixed (seed, config)."""
    config.validate()
    rng = np.random.default_rng(derive_seed("scene", seed))
    h, w = config.height, config.width
    floor_y = int(rng.integers(math.ceil(0.65 * h), math.floor(0.9 * h) + 1))
    floor_y = min(floor_y, h - 4)

    bench = None
    if rng.random() < config.bench_probability:
        # bench top capped at row 46 so seated legs always fit above the
        # bottom margin
        bench_h = int(rng.integers(max(7, floor_y - 46), 12))
        x0 = int(rng.integers(4, 9))
        x1 = int(rng.integers(w - 9, w - 4))
        bench = (x0, floor_y - bench_h, x1, floor_y)

    style = BackgroundStyle(
        palette=int(rng.integers(0, len(_BG_PALETTES))),
        top_mix=float(np.round(rng.uniform(0.0, 0.25), 4)),
        bottom_mix=float(np.round(rng.uniform(0.75, 1.0), 4)),
    )
    spec = SceneSpec(width=w, height=h, floor_y=floor_y, bench=bench,
                     background_style=style, seed=seed)
    return spec, render_scene(spec)


# --------------------------------------------------------------------------
# pose sampling
# --------------------------------------------------------------------------

_MARGIN = 2  # min distance of any joint from the image border
_MIN_JOINT_GAP_SQ = 9.0  # squared; keeps radius-2 discs decodable
_MIN_PELVIS_SEP = 8.0


# per-side limb parameter bands (degrees): arm swing alpha, forearm delta,
# sitting thigh angle phi below horizontal
_SOLO_SIDE = {
    "standing": {"alpha": (15.0, 30.0), "delta": (-8.0, 8.0), "phi": (40.0, 50.0)},
    "sitting": {"alpha": (18.0, 40.0), "delta": (-8.0, 8.0), "phi": (40.0, 50.0)},
}
# in a pair, the side facing the other person is tucked in
_PAIR_OUTER = {
    "standing": {"alpha": (15.0, 22.0), "delta": (-8.0, 8.0), "phi": (40.0, 50.0)},
    "sitting": {"alpha": (16.0, 24.0), "delta": (-8.0, 8.0), "phi": (40.0, 50.0)},
}
_PAIR_INNER = {
    "standing": {"alpha": (8.0, 12.0), "delta": (10.0, 20.0), "phi": (40.0, 50.0)},
    "sitting": {"alpha": (8.0, 12.0), "delta": (10.0, 20.0), "phi": (55.0, 65.0)},
}


def _build_figure(rng, action: str, torso: float, side_params: dict,
                  max_depth: float = 1e9):
    """Joint offsets relative to the support line (x right, y down): for
    standing the figure hangs from ankles on the line, for sitting the hip
    midpoint sits on it. max_depth caps how far sitting feet may reach below
    the bench top (canvas-bound budget). side_params maps 'r'/'l' to angle
    bands. Returns dict name -> (dx, dy)."""
    T = torso
    j = {}

    if action == "standing":
        drops = []
        legs = {}
        for side, s in (("r", -1.0), ("l", 1.0)):
            th_t = math.radians(rng.uniform(2.0, 8.0))
            th_s = math.radians(rng.uniform(0.0, 6.0))
            hip = (s * 0.30 * T, 0.0)
            knee = (hip[0] + s * 0.75 * T * math.sin(th_t), 0.75 * T * math.cos(th_t))
            ankle = (knee[0] + s * 0.75 * T * math.sin(th_s), knee[1] + 0.75 * T * math.cos(th_s))
            legs[side] = (hip, knee, ankle)
            drops.append(ankle[1])
        drop = (drops[0] + drops[1]) / 2.0
        for side in ("r", "l"):
            hip, knee, ankle = legs[side]
            j[f"{side}_hip"] = (hip[0], hip[1] - drop)
            j[f"{side}_knee"] = (knee[0], knee[1] - drop)
            j[f"{side}_ankle"] = (ankle[0], ankle[1] - drop)
        pelvis_dy = -drop
    else:
        # sitting: deep-bent legs (thigh steeply down, shin tucked inward)
        # keep the knees narrow and leave the hip band clear for the arms;
        # the shin angle is clamped so the feet respect max_depth
        for side, s in (("r", -1.0), ("l", 1.0)):
            phi = math.radians(rng.uniform(*side_params[side]["phi"]))
            budget = max_depth / (0.75 * T) - math.sin(phi)
            tau_lo = math.degrees(math.acos(min(max(budget, 0.30), math.cos(math.radians(25.0)))))
            tau = math.radians(rng.uniform(tau_lo, max(50.0, tau_lo + 0.5)))
            hip = (s * 0.30 * T, 0.0)
            knee = (hip[0] + s * 0.75 * T * math.cos(phi), 0.75 * T * math.sin(phi))
            ankle = (knee[0] - s * 0.75 * T * math.sin(tau), knee[1] + 0.75 * T * math.cos(tau))
            j[f"{side}_hip"] = hip
            j[f"{side}_knee"] = knee
            j[f"{side}_ankle"] = ankle
        pelvis_dy = 0.0

    neck = (rng.uniform(-0.05, 0.05) * T, pelvis_dy - T)
    j["neck"] = neck
    j["head"] = (neck[0] + rng.uniform(-0.06, 0.06) * T, neck[1] - 0.5 * T)

    for side, s in (("r", -1.0), ("l", 1.0)):
        alpha = math.radians(rng.uniform(*side_params[side]["alpha"]))
        beta = alpha + math.radians(rng.uniform(*side_params[side]["delta"]))
        sh = (neck[0] + s * 0.45 * T, neck[1] + 0.10 * T)
        el = (sh[0] + s * 0.50 * T * math.sin(alpha), sh[1] + 0.50 * T * math.cos(alpha))
        wr = (el[0] + s * 0.45 * T * math.sin(beta), el[1] + 0.45 * T * math.cos(beta))
        j[f"{side}_shoulder"] = sh
        j[f"{side}_elbow"] = el
        j[f"{side}_wrist"] = wr
    return j


def _snap(offsets: dict, px: float, py: float) -> dict:
    return {n: (float(round(px + dx)), float(round(py + dy))) for n, (dx, dy) in offsets.items()}


def _check_person(joints: dict, w: int, h: int) -> bool:
    pts = np.array([joints[n] for n in sk.JOINT_NAMES])
    if pts[:, 0].min() < _MARGIN or pts[:, 0].max() > w - 1 - _MARGIN:
        return False
    if pts[:, 1].min() < _MARGIN or pts[:, 1].max() > h - 1 - _MARGIN:
        return False
    for (a, b), name in zip(sk.BONES, sk.BONE_NAMES):
        lo, hi = sk.BONE_LENGTH_RANGES[name]
        d = math.dist(joints[a], joints[b])
        if not lo <= d <= hi:
            return False
    # pairwise joint gap within the person
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
    np.fill_diagonal(d2, np.inf)
    return bool(d2.min() >= _MIN_JOINT_GAP_SQ)


def _cross_person_ok(a: dict, b: dict) -> bool:
    pa = np.array([a[n] for n in sk.JOINT_NAMES])
    pb = np.array([b[n] for n in sk.JOINT_NAMES])
    d2 = ((pa[:, None, :] - pb[None, :, :]) ** 2).sum(-1)
    return bool(d2.min() >= _MIN_JOINT_GAP_SQ)


def _location_band(location: str, w: int) -> tuple[float, float]:
    if location == "left":
        return (0.0, w / 3.0 - 0.5)
    if location == "right":
        return (2.0 * w / 3.0 + 0.5, float(w))
    return (w / 3.0 + 0.5, 2.0 * w / 3.0 - 0.5)


def sample_poses(scene: SceneSpec, prompt: PromptSpec, seed: int) -> list:
    """Sample prompt.count poses consistent with the scene.

    Raises PromptInconsistencyError for a sitting prompt without a bench.
    For count == 2 the location constrains the mean pelvis x; for count == 1
    it constrains the pelvis x directly.
    """
    if prompt.action == "sitting" and scene.bench is None:
        raise PromptInconsistencyError("sitting prompt requires a scene with a bench")

    rng = np.random.default_rng(derive_seed("poses", seed))
    w, h = scene.width, scene.height
    band_lo, band_hi = _location_band(prompt.location, w)
    sitting = prompt.action == "sitting"
    support_y = scene.bench[1] if sitting else scene.floor_y

    if prompt.count == 1:
        params = [{"r": _SOLO_SIDE[prompt.action], "l": _SOLO_SIDE[prompt.action]}]
        depth_factor = 1.06
    else:
        # figure 0 sits left of figure 1; each tucks the side facing the other
        params = [
            {"r": _PAIR_OUTER[prompt.action], "l": _PAIR_INNER[prompt.action]},
            {"r": _PAIR_INNER[prompt.action], "l": _PAIR_OUTER[prompt.action]},
        ]
        depth_factor = 1.16 if sitting else 1.06

    # per-person support offsets (within the +-2 px contact invariant) break
    # the mirror symmetry between two figures and open vertical gaps
    if sitting:
        off_hi = int(min(2, (h - 1 - _MARGIN) - support_y - 9.2 * depth_factor))
    else:
        off_hi = 2
    off_lo = -2
    off_hi = max(off_hi, off_lo)

    for attempt in range(400):
        offs = [int(rng.integers(off_lo, off_hi + 1)) for _ in range(prompt.count)]
        figs = []
        for pi, off in enumerate(offs):
            if sitting:
                depth = (h - 1 - _MARGIN) - (support_y + off)
                t_hi = min(11.5 if prompt.count == 1 else 10.5, depth / depth_factor)
                t_lo = min(10.0 if prompt.count == 1 else 9.5, max(9.2, t_hi - 0.8))
            else:
                t_cap = (scene.floor_y + off - 4.5) / 3.0
                t_hi = min(13.0 if prompt.count == 1 else 10.5, t_cap)
                t_lo = 10.5 if prompt.count == 1 else 9.5
            t_hi = max(t_hi, t_lo + 0.01)
            depth = ((h - 1 - _MARGIN) - (support_y + off)) if sitting else 1e9
            figs.append(_build_figure(rng, prompt.action, rng.uniform(t_lo, t_hi),
                                      params[pi], depth))
        spans = []
        for f in figs:
            xs = [dx for dx, _ in f.values()]
            spans.append((min(xs), max(xs)))

        if prompt.count == 1:
            lo = max(_MARGIN - spans[0][0], band_lo)
            hi = min(w - 1 - _MARGIN - spans[0][1], band_hi)
            if sitting:
                lo = max(lo, scene.bench[0] + 2)
                hi = min(hi, scene.bench[2] - 2)
            if lo > hi:
                continue
            centers = [rng.uniform(lo, hi)]
        else:
            lo0 = _MARGIN - spans[0][0]
            hi1 = w - 1 - _MARGIN - spans[1][1]
            if sitting:
                lo0 = max(lo0, scene.bench[0] + 2)
                hi1 = min(hi1, scene.bench[2] - 2)
            # prefer fully disjoint figures; fall back to interleaved arms
            # when the location band is too narrow for that
            sep_disjoint = max(_MIN_PELVIS_SEP, spans[0][1] - spans[1][0] + 4.2)
            use_disjoint = (attempt % 2 == 0
                            and max(band_lo, lo0 + sep_disjoint / 2)
                            <= min(band_hi, hi1 - sep_disjoint / 2))
            if use_disjoint:
                sep_hi = min(sep_disjoint + 8.0, hi1 - lo0)
                sep = rng.uniform(sep_disjoint, max(sep_disjoint + 0.1, sep_hi))
            else:
                sep = rng.uniform(_MIN_PELVIS_SEP,
                                  max(_MIN_PELVIS_SEP + 0.1, min(24.0, hi1 - lo0)))
            c_lo = max(band_lo, lo0 + sep / 2)
            c_hi = min(band_hi, hi1 - sep / 2)
            if c_lo > c_hi:
                continue
            c = rng.uniform(c_lo, c_hi)
            centers = [c - sep / 2, c + sep / 2]

        snapped = [_snap(f, cx, support_y + off)
                   for f, cx, off in zip(figs, centers, offs)]
        if not all(_check_person(s, w, h) for s in snapped):
            continue
        if prompt.count == 2:
            if not _cross_person_ok(snapped[0], snapped[1]):
                continue
            p0 = (snapped[0]["r_hip"][0] + snapped[0]["l_hip"][0]) / 2
            p1 = (snapped[1]["r_hip"][0] + snapped[1]["l_hip"][0]) / 2
            if abs(p1 - p0) < _MIN_PELVIS_SEP:
                continue
        # support contact
        ok = True
        for s in snapped:
            if prompt.action == "standing":
                if abs(s["r_ankle"][1] - scene.floor_y) > 2 or abs(s["l_ankle"][1] - scene.floor_y) > 2:
                    ok = False
            else:
                mid_y = (s["r_hip"][1] + s["l_hip"][1]) / 2
                if abs(mid_y - support_y) > 2:
                    ok = False
        if not ok:
            continue
        # location check on snapped pelvises
        pel_x = [(s["r_hip"][0] + s["l_hip"][0]) / 2 for s in snapped]
        cx = sum(pel_x) / len(pel_x)
        if prompt.location == "left" and not cx < w / 3.0:
            continue
        if prompt.location == "right" and not cx > 2.0 * w / 3.0:
            continue
        if prompt.location == "center" and not (w / 3.0 <= cx <= 2.0 * w / 3.0):
            continue

        order = np.argsort(pel_x, kind="stable")
        return [Pose(joints=snapped[i], person_index=rank)
                for rank, i in enumerate(order)]

    raise PoseSamplingError(
        f"could not place {prompt.count} {prompt.action} figure(s) at "
        f"{prompt.location} in scene (floor_y={scene.floor_y}, bench={scene.bench})"
    )


# --------------------------------------------------------------------------
# rasterization
# --------------------------------------------------------------------------

def _draw_capsule(img: np.ndarray, p0, p1, radius: float, color) -> np.ndarray:
    """Set pixels within `radius` of segment p0-p1 to color; returns the
    boolean footprint. Pixel centers are at integer coordinates."""
    h, w = img.shape[:2]
    x0 = max(int(math.floor(min(p0[0], p1[0]) - radius - 1)), 0)
    x1 = min(int(math.ceil(max(p0[0], p1[0]) + radius + 1)), w - 1)
    y0 = max(int(math.floor(min(p0[1], p1[1]) - radius - 1)), 0)
    y1 = min(int(math.ceil(max(p0[1], p1[1]) + radius + 1)), h - 1)
    if x0 > x1 or y0 > y1:
        return np.zeros((h, w), dtype=bool)
    ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    vx, vy = p1[0] - p0[0], p1[1] - p0[1]
    ln2 = vx * vx + vy * vy
    if ln2 == 0:
        d2 = (xs - p0[0]) ** 2 + (ys - p0[1]) ** 2
    else:
        t = np.clip(((xs - p0[0]) * vx + (ys - p0[1]) * vy) / ln2, 0.0, 1.0)
        d2 = (xs - (p0[0] + t * vx)) ** 2 + (ys - (p0[1] + t * vy)) ** 2
    hit = d2 <= radius * radius
    footprint = np.zeros((h, w), dtype=bool)
    footprint[y0:y1 + 1, x0:x1 + 1] = hit
    img[footprint] = color
    return footprint


def render_layout(scene: np.ndarray, poses: list) -> np.ndarray:
    """Overlay skeletons on the scene: 2-px bones then radius-2 joint discs,
    with the palette hue-rotated per person_index."""
    if len(poses) > sk.MAX_PERSONS:
        raise UnsupportedPersonCountError(
            f"{len(poses)} persons exceed the {sk.MAX_PERSONS}-person palette budget"
        )
    img = to_uint8(scene).copy()
    for pose in poses:
        bp = sk.bone_palette(pose.person_index)
        for i, (a, b) in enumerate(sk.BONES):
            _draw_capsule(img, pose.joints[a], pose.joints[b], sk.BONE_HALF_WIDTH, bp[i])
    for pose in poses:
        jp = sk.joint_palette(pose.person_index)
        for i, name in enumerate(sk.JOINT_NAMES):
            p = pose.joints[name]
            _draw_capsule(img, p, p, sk.JOINT_RADIUS, jp[i])
    return from_uint8(img)


_SKIN = np.array([221, 178, 140], dtype=np.uint8)


def render_human(scene: np.ndarray, poses: list, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Render filled stick persons (capsule limbs + head disc) over the scene.

    Returns (image, alpha_mask); the scene is untouched outside the mask.
    """
    if len(poses) > sk.MAX_PERSONS:
        raise UnsupportedPersonCountError(
            f"{len(poses)} persons exceed the {sk.MAX_PERSONS}-person palette budget"
        )
    rng = np.random.default_rng(derive_seed("human", seed))
    img = to_uint8(scene).copy()
    h, w = img.shape[:2]
    mask = np.zeros((h, w), dtype=bool)
    for pose in poses:
        hue = rng.uniform(0.0, 1.0)
        sat = rng.uniform(0.8, 1.0)
        val = rng.uniform(0.75, 0.95)
        clothing = np.array([int(round(255 * c)) for c in colorsys.hsv_to_rgb(hue, sat, val)],
                            dtype=np.uint8)
        for a, b in sk.BONES:
            mask |= _draw_capsule(img, pose.joints[a], pose.joints[b],
                                  sk.LIMB_HALF_WIDTH, clothing)
        head = pose.joints["head"]
        mask |= _draw_capsule(img, head, head, sk.HEAD_RADIUS, _SKIN)
    return from_uint8(img), mask


def render_silhouette(joints_list: list, width: int, height: int,
                      dilate: float = 0.0) -> np.ndarray:
    """Boolean person mask rendered from joint coordinate dicts, using the
    same capsule geometry as render_human, optionally dilated."""
    canvas = np.zeros((height, width, 3), dtype=np.uint8)
    mask = np.zeros((height, width), dtype=bool)
    for joints in joints_list:
        for a, b in sk.BONES:
            mask |= _draw_capsule(canvas, joints[a], joints[b],
                                  sk.LIMB_HALF_WIDTH + dilate, (1, 1, 1))
        head = joints["head"]
        mask |= _draw_capsule(canvas, head, head, sk.HEAD_RADIUS + dilate, (1, 1, 1))
    return mask


# --------------------------------------------------------------------------
# dataset
# --------------------------------------------------------------------------

def sample_prompt(rng: np.random.Generator, scene: SceneSpec,
                  config: WorldConfig) -> PromptSpec:
    count = 2 if rng.random() < config.two_person_probability else 1
    if scene.bench is not None and rng.random() < config.sitting_probability:
        action = "sitting"
    else:
        action = "standing"
    location = LOCATIONS[int(rng.integers(0, 3))]
    return PromptSpec(action=action, location=location, count=count)


def save_png(img: np.ndarray, path: str):
    Image.fromarray(to_uint8(img)).save(path, format="PNG")


def load_png(path: str) -> np.ndarray:
    with Image.open(path) as im:
        return from_uint8(np.asarray(im.convert("RGB")))


def generate_sample(sample_id: int, seed: int, config: WorldConfig = WorldConfig()) -> Sample:
    """One fully-assembled training sample, deterministic in (sample_id, seed)."""
    s_seed = derive_seed("sample", seed, sample_id)
    spec, scene = sample_scene(s_seed, config)
    rng = np.random.default_rng(derive_seed("prompt", s_seed))
    prompt = sample_prompt(rng, spec, config)
    poses = sample_poses(spec, prompt, s_seed)
    layout = render_layout(scene, poses)
    human, mask = render_human(scene, poses, s_seed)
    return Sample(scene=scene, layout=layout, human=human, poses=poses,
                  prompt=prompt, id=sample_id, seed=s_seed, scene_spec=spec,
                  mask=mask)


def build_dataset(count: int, seed: int, out_dir: str,
                  config: WorldConfig = WorldConfig()) -> str:
    """Write `count` samples (scene/layout/human PNGs + JSON-lines manifest).

    Returns the manifest path. Byte-identical output for identical
    (count, seed, config).
    """
    from .keypoints import encode_keypoint_doc, doc_to_json

    config.validate()
    img_dir = os.path.join(out_dir, "images")
    try:
        os.makedirs(img_dir, exist_ok=True)
    except OSError as e:
        raise WorldError(f"cannot create output directory {img_dir}: {e}") from e

    manifest_path = os.path.join(out_dir, "manifest.jsonl")
    lines = []
    for i in range(count):
        sample = generate_sample(i, seed, config)
        rel = {}
        for kind, img in (("scene", sample.scene), ("layout", sample.layout),
                          ("human", sample.human)):
            rel[kind] = os.path.join("images", f"{i:05d}_{kind}.png")
            try:
                save_png(img, os.path.join(out_dir, rel[kind]))
            except OSError as e:
                raise WorldError(f"failed writing {rel[kind]}: {e}") from e
        doc = encode_keypoint_doc(sample.poses, (config.width, config.height))
        spec = sample.scene_spec
        record = {
            "id": i,
            "seed": sample.seed,
            "scene": rel["scene"],
            "layout": rel["layout"],
            "human": rel["human"],
            "prompt": {
                "action": sample.prompt.action,
                "location": sample.prompt.location,
                "count": sample.prompt.count,
                "token_ids": list(sample.prompt.token_ids),
            },
            "keypoints": json.loads(doc_to_json(doc)),
            "scene_spec": {
                "width": spec.width,
                "height": spec.height,
                "floor_y": spec.floor_y,
                "bench": list(spec.bench) if spec.bench else None,
                "background_style": [spec.background_style.palette,
                                     spec.background_style.top_mix,
                                     spec.background_style.bottom_mix],
                "seed": spec.seed,
            },
        }
        lines.append(json.dumps(record, sort_keys=True))
    try:
        with open(manifest_path, "w", encoding="utf-8") as f:
            for line in lines:
                f.write(line + "\n")
    except OSError as e:
        raise WorldError(f"failed writing manifest {manifest_path}: {e}") from e
    return manifest_path


def load_manifest(manifest_path: str) -> list:
    records = []
    with open(manifest_path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def load_sample(record: dict, root: str) -> Sample:
    """Reload a manifest record into a Sample (images + poses + prompt)."""
    prompt = PromptSpec(action=record["prompt"]["action"],
                        location=record["prompt"]["location"],
                        count=record["prompt"]["count"])
    poses = []
    for p in record["keypoints"]["persons"]:
        joints = {n: (float(p["joints"][n]["x"]), float(p["joints"][n]["y"]))
                  for n in sk.JOINT_NAMES}
        poses.append(Pose(joints=joints, person_index=p["person_index"]))
    ss = record["scene_spec"]
    spec = SceneSpec(width=ss["width"], height=ss["height"], floor_y=ss["floor_y"],
                     bench=tuple(ss["bench"]) if ss["bench"] else None,
                     background_style=BackgroundStyle(*ss["background_style"]),
                     seed=ss["seed"])
    return Sample(
        scene=load_png(os.path.join(root, record["scene"])),
        layout=load_png(os.path.join(root, record["layout"])),
        human=load_png(os.path.join(root, record["human"])),
        poses=poses, prompt=prompt, id=record["id"], seed=record["seed"],
        scene_spec=spec,
    )
