"""Skeleton topology and color palette shared by the world generator and the
layout inverter.

The figure is a 14-joint / 13-bone stick person. Joint and bone colors are
fully saturated (every palette color has at least one channel at 0 and one at
255 before value scaling), which keeps them at Chebyshev distance >= 96/255
from any background pixel: backgrounds are restricted to the low-saturation
band [96, 160] per channel. Additional persons reuse the same palette rotated
in hue by 120 degrees per person index.
"""

from __future__ import annotations

import colorsys

import numpy as np

JOINT_NAMES = (
    "head",
    "neck",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_hip",
    "r_knee",
    "r_ankle",
    "l_hip",
    "l_knee",
    "l_ankle",
)

# (joint_a, joint_b) pairs; order defines the bone color assignment.
BONES = (
    ("head", "neck"),
    ("neck", "r_shoulder"),
    ("neck", "l_shoulder"),
    ("r_shoulder", "r_elbow"),
    ("r_elbow", "r_wrist"),
    ("l_shoulder", "l_elbow"),
    ("l_elbow", "l_wrist"),
    ("neck", "r_hip"),
    ("neck", "l_hip"),
    ("r_hip", "r_knee"),
    ("r_knee", "r_ankle"),
    ("l_hip", "l_knee"),
    ("l_knee", "l_ankle"),
)

BONE_NAMES = tuple(f"{a}-{b}" for a, b in BONES)

N_JOINTS = len(JOINT_NAMES)
N_BONES = len(BONES)

# Rendering geometry (pixels).
JOINT_RADIUS = 2.0
BONE_HALF_WIDTH = 1.0
LIMB_HALF_WIDTH = 3.0
HEAD_RADIUS = 3.5

MAX_PERSONS = 3
HUE_STEP_DEG = 360.0 / MAX_PERSONS

# Background colors live in this per-channel band (uint8). Any saturated
# palette color has a zero channel, so the Chebyshev distance to a background
# pixel is at least BACKGROUND_BAND[0]/255 > 64/255.
BACKGROUND_BAND = (96, 160)
PALETTE_MIN_DISTANCE = 64 / 255.0
DECODE_THRESHOLD = 32 / 255.0

# Bone length ranges [min, max] in pixels enforced by the pose sampler and
# checked by validate_skeleton. Derived from the sampler's template ratio
# bands over its torso-length range, padded for integer snapping.
BONE_LENGTH_RANGES = {
    "head-neck": (3.5, 8.5),
    "neck-r_shoulder": (3.0, 8.0),
    "neck-l_shoulder": (3.0, 8.0),
    "r_shoulder-r_elbow": (3.3, 8.5),
    "r_elbow-r_wrist": (3.0, 8.0),
    "l_shoulder-l_elbow": (3.3, 8.5),
    "l_elbow-l_wrist": (3.0, 8.0),
    "neck-r_hip": (8.0, 16.5),
    "neck-l_hip": (8.0, 16.5),
    "r_hip-r_knee": (5.5, 12.5),
    "r_knee-r_ankle": (5.5, 12.5),
    "l_hip-l_knee": (5.5, 12.5),
    "l_knee-l_ankle": (5.5, 12.5),
}


def _hsv_to_rgb8(h: float, s: float, v: float) -> tuple[int, int, int]:
    r, g, b = colorsys.hsv_to_rgb(h % 1.0, s, v)
    return (int(round(r * 255)), int(round(g * 255)), int(round(b * 255)))


def _base_joint_hues() -> list[float]:
    return [i / N_JOINTS for i in range(N_JOINTS)]


def _base_bone_hues() -> list[float]:
    return [(i + 0.5) / N_BONES for i in range(N_BONES)]


def joint_palette(person_index: int) -> np.ndarray:
    """Joint colors for one person as a [14, 3] uint8 array.

    Joints use full-value saturated hues; the hue wheel is rotated by
    person_index * 120 degrees.
    """
    if not 0 <= person_index < MAX_PERSONS:
        raise ValueError(f"person_index {person_index} outside supported range 0..{MAX_PERSONS - 1}")
    shift = person_index * HUE_STEP_DEG / 360.0
    return np.array(
        [_hsv_to_rgb8(h + shift, 1.0, 1.0) for h in _base_joint_hues()], dtype=np.uint8
    )


def bone_palette(person_index: int) -> np.ndarray:
    """Bone colors for one person as a [13, 3] uint8 array (value-dimmed hues)."""
    if not 0 <= person_index < MAX_PERSONS:
        raise ValueError(f"person_index {person_index} outside supported range 0..{MAX_PERSONS - 1}")
    shift = person_index * HUE_STEP_DEG / 360.0
    return np.array(
        [_hsv_to_rgb8(h + shift, 1.0, 0.62) for h in _base_bone_hues()], dtype=np.uint8
    )


def full_palette() -> list[tuple[int, str, np.ndarray]]:
    """All (person_index, kind:name, rgb) entries over the 3 supported hue bands."""
    entries = []
    for p in range(MAX_PERSONS):
        jp = joint_palette(p)
        for i, name in enumerate(JOINT_NAMES):
            entries.append((p, f"joint:{name}", jp[i]))
        bp = bone_palette(p)
        for i, name in enumerate(BONE_NAMES):
            entries.append((p, f"bone:{name}", bp[i]))
    return entries
