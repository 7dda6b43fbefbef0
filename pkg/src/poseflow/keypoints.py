"""Keypoint document codec and the deterministic layout inverter.

The keypoint document is the editable JSON bridge between layout images and
structured pose data:

    {
      "canvas": {"width": 64, "height": 64},
      "persons": [
        {"person_index": 0,
         "joints": {"head": {"x": 31.0, "y": 8.0}, ... 14 entries ...}}
      ]
    }

parse_keypoint_doc is total: any byte input yields either a KeypointDoc or a
KeypointSchemaError naming the offending path. invert_layout recovers joints
from a rendered layout by palette classification (nearest palette color,
per-channel threshold 32/255) followed by per-color blob centroids.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import skeleton as sk


class KeypointSchemaError(ValueError):
    """Schema violation; `path` points at the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


@dataclass
class PersonKeypoints:
    person_index: int
    joints: dict  # joint name -> (x, y)


@dataclass
class KeypointDoc:
    canvas: tuple[int, int]  # (width, height)
    persons: list = field(default_factory=list)
    warnings: list = field(default_factory=list)


def encode_keypoint_doc(poses: list, canvas: tuple[int, int]) -> KeypointDoc:
    """Build a KeypointDoc from Pose objects (or anything with .joints and
    .person_index)."""
    persons = [
        PersonKeypoints(
            person_index=p.person_index,
            joints={n: (float(p.joints[n][0]), float(p.joints[n][1])) for n in sk.JOINT_NAMES},
        )
        for p in poses
    ]
    persons.sort(key=lambda p: p.person_index)
    return KeypointDoc(canvas=(int(canvas[0]), int(canvas[1])), persons=persons)


def doc_to_json(doc: KeypointDoc) -> str:
    payload = {
        "canvas": {"width": doc.canvas[0], "height": doc.canvas[1]},
        "persons": [
            {
                "person_index": p.person_index,
                "joints": {n: {"x": p.joints[n][0], "y": p.joints[n][1]}
                           for n in sk.JOINT_NAMES},
            }
            for p in doc.persons
        ],
    }
    return json.dumps(payload, sort_keys=True)


def _require_keys(obj: dict, allowed: set, required: set, path: str):
    for k in obj:
        if k not in allowed:
            raise KeypointSchemaError(f"{path}.{k}", "unknown field")
    for k in required:
        if k not in obj:
            raise KeypointSchemaError(f"{path}.{k}", "missing field")


def _as_number(v, path: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise KeypointSchemaError(path, f"expected a number, got {type(v).__name__}")
    f = float(v)
    if not math.isfinite(f):
        raise KeypointSchemaError(path, "coordinate must be finite")
    return f


def parse_keypoint_doc(text) -> KeypointDoc:
    """Parse and validate a keypoint document from str/bytes.

    Never raises anything but KeypointSchemaError, regardless of input.
    """
    if isinstance(text, (bytes, bytearray)):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as e:
            raise KeypointSchemaError("$", f"not valid UTF-8: {e}") from None
    if isinstance(text, dict):
        data = text
    else:
        try:
            data = json.loads(text)
        except (json.JSONDecodeError, TypeError) as e:
            raise KeypointSchemaError("$", f"not valid JSON: {e}") from None

    if not isinstance(data, dict):
        raise KeypointSchemaError("$", "document root must be an object")
    _require_keys(data, {"canvas", "persons"}, {"canvas", "persons"}, "$")

    canvas = data["canvas"]
    if not isinstance(canvas, dict):
        raise KeypointSchemaError("canvas", "must be an object")
    _require_keys(canvas, {"width", "height"}, {"width", "height"}, "canvas")
    width = _as_number(canvas["width"], "canvas.width")
    height = _as_number(canvas["height"], "canvas.height")
    if width != int(width) or height != int(height) or width < 1 or height < 1:
        raise KeypointSchemaError("canvas", "width/height must be positive integers")
    width, height = int(width), int(height)

    raw_persons = data["persons"]
    if not isinstance(raw_persons, list):
        raise KeypointSchemaError("persons", "must be a list")

    persons = []
    seen_idx = set()
    for i, rp in enumerate(raw_persons):
        path = f"persons[{i}]"
        if not isinstance(rp, dict):
            raise KeypointSchemaError(path, "must be an object")
        _require_keys(rp, {"person_index", "joints"}, {"person_index", "joints"}, path)
        idx = rp["person_index"]
        if isinstance(idx, bool) or not isinstance(idx, int) or idx < 0:
            raise KeypointSchemaError(f"{path}.person_index", "must be a non-negative integer")
        if idx in seen_idx:
            raise KeypointSchemaError(f"{path}.person_index", f"duplicate person_index {idx}")
        seen_idx.add(idx)

        raw_joints = rp["joints"]
        if not isinstance(raw_joints, dict):
            raise KeypointSchemaError(f"{path}.joints", "must be an object")
        for k in raw_joints:
            if k not in sk.JOINT_NAMES:
                raise KeypointSchemaError(f"{path}.joints.{k}", "unknown joint name")
        joints = {}
        for name in sk.JOINT_NAMES:
            if name not in raw_joints:
                raise KeypointSchemaError(f"{path}.joints.{name}", "missing joint")
            jv = raw_joints[name]
            jpath = f"{path}.joints.{name}"
            if not isinstance(jv, dict):
                raise KeypointSchemaError(jpath, "must be an object")
            _require_keys(jv, {"x", "y"}, {"x", "y"}, jpath)
            x = _as_number(jv["x"], f"{jpath}.x")
            y = _as_number(jv["y"], f"{jpath}.y")
            if not (0.0 <= x <= width - 1) or not (0.0 <= y <= height - 1):
                raise KeypointSchemaError(jpath, f"coordinate ({x}, {y}) outside canvas "
                                                 f"{width}x{height}")
            joints[name] = (x, y)
        persons.append(PersonKeypoints(person_index=idx, joints=joints))

    if seen_idx and sorted(seen_idx) != list(range(len(seen_idx))):
        raise KeypointSchemaError("persons", "person_index values must be contiguous from 0")
    persons.sort(key=lambda p: p.person_index)
    return KeypointDoc(canvas=(width, height), persons=persons)


# --------------------------------------------------------------------------
# layout inversion
# --------------------------------------------------------------------------

_MIN_JOINTS_PER_PERSON = 10


def _label_blobs(mask: np.ndarray) -> list:
    """4-connected components of a boolean mask as lists of (y, x) arrays."""
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    blobs = []
    ys, xs = np.nonzero(mask)
    for y0, x0 in zip(ys.tolist(), xs.tolist()):
        if seen[y0, x0]:
            continue
        stack = [(y0, x0)]
        seen[y0, x0] = True
        pix = []
        while stack:
            y, x = stack.pop()
            pix.append((y, x))
            for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                ny, nx = y + dy, x + dx
                if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not seen[ny, nx]:
                    seen[ny, nx] = True
                    stack.append((ny, nx))
        blobs.append(np.array(pix, dtype=np.float64))
    return blobs


def invert_layout(layout: np.ndarray) -> KeypointDoc:
    """Decode a layout image back into a keypoint document.

    Pixels are matched to the nearest palette entry within a 32/255
    per-channel threshold. Persons with fewer than 10 detected joints are
    dropped; detected persons are re-indexed left to right by pelvis x.
    Ambiguous joints (multiple blobs of one color) keep the largest blob and
    add a warning string.
    """
    h, w = layout.shape[:2]
    if h < 16 or w < 16:
        raise ValueError(f"unsupported canvas {w}x{h}: must be at least 16x16")
    img = np.round(np.clip(layout, 0.0, 1.0) * 255.0).astype(np.int16)

    entries = sk.full_palette()
    colors = np.array([e[2] for e in entries], dtype=np.int16)  # [n, 3]
    # chebyshev distance of every pixel to every palette color
    dist = np.abs(img[:, :, None, :] - colors[None, None, :, :]).max(axis=-1)
    nearest = dist.argmin(axis=-1)
    within = dist.min(axis=-1) <= int(round(sk.DECODE_THRESHOLD * 255))

    warnings = []
    detected = []
    for p in range(sk.MAX_PERSONS):
        joints = {}
        for ji, name in enumerate(sk.JOINT_NAMES):
            entry_idx = p * (sk.N_JOINTS + sk.N_BONES) + ji
            mask = within & (nearest == entry_idx)
            if not mask.any():
                continue
            blobs = _label_blobs(mask)
            if len(blobs) > 1:
                blobs.sort(key=len, reverse=True)
                if len(blobs[1]) == len(blobs[0]):
                    # stable tie-break: keep the upper-left blob
                    blobs.sort(key=lambda b: (len(b), -b[:, 0].min(), -b[:, 1].min()),
                               reverse=True)
                warnings.append(f"person {p}: joint {name} split into {len(blobs)} blobs; "
                                f"kept largest")
            blob = blobs[0]
            joints[name] = (float(blob[:, 1].mean()), float(blob[:, 0].mean()))
        if len(joints) >= _MIN_JOINTS_PER_PERSON:
            detected.append(joints)

    def pelvis_x(joints: dict) -> float:
        xs = [joints[n][0] for n in ("r_hip", "l_hip") if n in joints]
        if xs:
            return sum(xs) / len(xs)
        return sum(v[0] for v in joints.values()) / len(joints)

    detected.sort(key=pelvis_x)
    persons = []
    for rank, joints in enumerate(detected):
        # fill any missing joints at the centroid of the found ones so the
        # document stays schema-complete; record which were missing
        if len(joints) < sk.N_JOINTS:
            cy = sum(v[1] for v in joints.values()) / len(joints)
            cx = sum(v[0] for v in joints.values()) / len(joints)
            for name in sk.JOINT_NAMES:
                if name not in joints:
                    warnings.append(f"person {rank}: joint {name} not detected; "
                                    f"filled with person centroid")
                    joints[name] = (cx, cy)
        clipped = {n: (min(max(v[0], 0.0), w - 1.0), min(max(v[1], 0.0), h - 1.0))
                   for n, v in joints.items()}
        persons.append(PersonKeypoints(person_index=rank, joints=clipped))

    return KeypointDoc(canvas=(w, h), persons=persons, warnings=warnings)


# --------------------------------------------------------------------------
# skeleton validation
# --------------------------------------------------------------------------

@dataclass
class PersonValidity:
    person_index: int
    valid: bool
    violations: list  # (bone name, length, lo, hi)


@dataclass
class ValidityReport:
    persons: list
    valid: bool  # every person valid (vacuously true for zero persons)


def validate_skeleton(doc: KeypointDoc, tolerance: float = 0.0) -> ValidityReport:
    """Check every bone length against the world sampler's ranges expanded by
    +-tolerance (fractional)."""
    reports = []
    for p in doc.persons:
        violations = []
        for (a, b), name in zip(sk.BONES, sk.BONE_NAMES):
            lo, hi = sk.BONE_LENGTH_RANGES[name]
            lo_t = lo * (1.0 - tolerance)
            hi_t = hi * (1.0 + tolerance)
            d = math.dist(p.joints[a], p.joints[b])
            if not lo_t <= d <= hi_t:
                violations.append((name, d, lo_t, hi_t))
        reports.append(PersonValidity(person_index=p.person_index,
                                      valid=not violations,
                                      violations=violations))
    return ValidityReport(persons=reports, valid=all(r.valid for r in reports))
