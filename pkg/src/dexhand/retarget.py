"""Map 21-keypoint 2.5D operator hand landmarks onto robot fingertip targets.

Index, middle and ring curl along the image y axis, linearly interpolated
between calibrated extrema; the robot thumb follows the operator's pinky tip
through a calibrated image quadrilateral mapped bilinearly onto a robot xy
region. Depth values are ignored; every output sits on a fixed plane above
the palm and is clamped into the per-finger workspace boxes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import yaml

from .errors import (
    CalibrationIncompleteError,
    DegenerateCalibrationError,
    InvalidInputError,
)
from .hand_model import FingertipTargets, HandModel

N_KEYPOINTS = 21
# fingertip keypoint ids in the standard 21-point hand layout
TIP_KEYPOINTS = {"thumb": 4, "index": 8, "middle": 12, "ring": 16, "pinky": 20}

MAPPED_FINGERS = ("index", "middle", "ring")  # robot fingers 0..2
FINGER_INDEX = {"index": 0, "middle": 1, "ring": 2, "thumb": 3}

CAL_LABELS = (
    "index_extended",
    "index_curled",
    "middle_extended",
    "middle_curled",
    "ring_extended",
    "ring_curled",
    "thumb_corner_0",
    "thumb_corner_1",
    "thumb_corner_2",
    "thumb_corner_3",
)

DEFAULT_Z_PLANE = 0.06
DEFAULT_CONFIDENCE_MIN = 0.5


@dataclass(frozen=True)
class LandmarkFrame:
    """One timestamped 21-keypoint observation in normalized image coords."""

    timestamp: float
    keypoints: np.ndarray  # (21, 3); x, y in [0, 1], z relative depth
    confidence: float = 1.0

    def __post_init__(self):
        kp = np.asarray(self.keypoints, dtype=float)
        if kp.shape != (N_KEYPOINTS, 3):
            raise InvalidInputError(f"expected (21, 3) keypoints, got {kp.shape}")
        object.__setattr__(self, "keypoints", kp)

    def valid(self) -> bool:
        return bool(np.all(np.isfinite(self.keypoints[:, :2])))


@dataclass(frozen=True)
class FingerMap:
    """Linear map from an image-axis interval to a robot segment."""

    human_min: float
    human_max: float
    robot_min: np.ndarray  # (3,)
    robot_max: np.ndarray  # (3,)


@dataclass(frozen=True)
class Calibration:
    fingers: dict  # name -> FingerMap for index/middle/ring
    thumb_quad: np.ndarray  # (4, 2) image vertices, convex, counterclockwise
    thumb_robot: np.ndarray  # (4, 2) paired robot xy corners
    z_plane: float = DEFAULT_Z_PLANE
    confidence_min: float = DEFAULT_CONFIDENCE_MIN

    def validate(self) -> None:
        for name in MAPPED_FINGERS:
            fm = self.fingers.get(name)
            if fm is None:
                raise CalibrationIncompleteError([name])
            if not fm.human_min < fm.human_max:
                raise DegenerateCalibrationError(
                    f"finger {name}: human extrema must satisfy min < max"
                )
        quad = np.asarray(self.thumb_quad, dtype=float)
        if quad.shape != (4, 2):
            raise DegenerateCalibrationError("thumb quadrilateral needs 4 vertices")
        area2 = 0.0
        for i in range(4):
            ax, ay = quad[i]
            bx, by = quad[(i + 1) % 4]
            cx, cy = quad[(i + 2) % 4]
            cross = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
            if cross <= 1e-12:
                raise DegenerateCalibrationError(
                    "thumb quadrilateral must be convex and counterclockwise"
                )
            area2 += ax * by - bx * ay
        if abs(area2) < 1e-9:
            raise DegenerateCalibrationError("thumb quadrilateral is degenerate")


@dataclass
class RetargetState:
    """Hold-last-output state for occlusion robustness."""

    last_targets: FingertipTargets
    last_accept_time: float = 0.0


def make_retarget_state(model: HandModel, cal: Calibration) -> RetargetState:
    """Initial state: every finger at the middle of its mapped range."""
    mid = np.zeros((4, 3))
    for name in MAPPED_FINGERS:
        fm = cal.fingers[name]
        mid[FINGER_INDEX[name]] = 0.5 * (fm.robot_min + fm.robot_max)
    thumb_xy = cal.thumb_robot.mean(axis=0)
    mid[3] = (thumb_xy[0], thumb_xy[1], cal.z_plane)
    return RetargetState(last_targets=FingertipTargets.clamped(model, mid))


# ---------------------------------------------------------------------------
# Calibration


def calibrate(reference_frames, model: HandModel, z_plane: float = DEFAULT_Z_PLANE, edge_pad: float = 0.025, confidence_min: float = DEFAULT_CONFIDENCE_MIN) -> Calibration:
    """Build a Calibration from labeled extreme-pose frames.

    ``reference_frames`` is an iterable of (LandmarkFrame, label) with labels
    from CAL_LABELS. Human extrema come from the labeled frames; robot-side
    extrema are derived from the hand model's declared workspace boxes (a
    padded curl segment per finger at the z plane, and a padded xy rectangle
    for the thumb).
    """
    by_label = {}
    for frame, label in reference_frames:
        if label not in CAL_LABELS:
            raise InvalidInputError(f"unknown calibration label {label!r}")
        by_label[label] = frame
    missing = [label for label in CAL_LABELS if label not in by_label]
    if missing:
        raise CalibrationIncompleteError(missing)

    boxes = model.workspace_boxes()
    fingers = {}
    for name in MAPPED_FINGERS:
        idx = FINGER_INDEX[name]
        tip = TIP_KEYPOINTS[name]
        y_ext = float(by_label[f"{name}_extended"].keypoints[tip, 1])
        y_curl = float(by_label[f"{name}_curled"].keypoints[tip, 1])
        if math.isclose(y_ext, y_curl, abs_tol=1e-9):
            raise DegenerateCalibrationError(
                f"finger {name}: extended and curled extrema coincide"
            )
        lo, hi = boxes[idx]
        y_mid = float(model.fingers[idx].base_pos[1])
        extended_pt = np.array([hi[0] - edge_pad, y_mid, z_plane])
        curled_pt = np.array([lo[0] + edge_pad, y_mid, z_plane])
        # order the pair by image coordinate, carrying the paired robot points
        if y_ext < y_curl:
            fm = FingerMap(human_min=y_ext, human_max=y_curl, robot_min=extended_pt, robot_max=curled_pt)
        else:
            fm = FingerMap(human_min=y_curl, human_max=y_ext, robot_min=curled_pt, robot_max=extended_pt)
        fingers[name] = fm

    pinky = TIP_KEYPOINTS["pinky"]
    quad = np.array(
        [by_label[f"thumb_corner_{i}"].keypoints[pinky, :2] for i in range(4)], dtype=float
    )
    tlo, thi = boxes[FINGER_INDEX["thumb"]]
    pad = 0.03
    x0, x1 = tlo[0] + pad, thi[0] - pad
    y0, y1 = tlo[1] + pad, thi[1] - pad
    thumb_robot = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    cal = Calibration(
        fingers=fingers,
        thumb_quad=quad,
        thumb_robot=thumb_robot,
        z_plane=z_plane,
        confidence_min=confidence_min,
    )
    cal.validate()
    return cal


# ---------------------------------------------------------------------------
# Thumb quadrilateral mapping


def _inside_quad(quad, p) -> bool:
    for i in range(4):
        a = quad[i]
        b = quad[(i + 1) % 4]
        if (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) < 0.0:
            return False
    return True


def _clamp_to_quad(quad, p):
    """Nearest point on the quad boundary (used when p falls outside)."""
    best = None
    best_d = math.inf
    for i in range(4):
        a = quad[i]
        b = quad[(i + 1) % 4]
        ab = b - a
        denom = float(ab @ ab)
        t = 0.0 if denom == 0.0 else float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
        cand = a + t * ab
        d = float((p - cand) @ (p - cand))
        if d < best_d:
            best_d = d
            best = cand
    return best


def invert_bilinear(quad, p, iters: int = 25) -> tuple:
    """Unit-square (s, t) with bilinear(quad, s, t) == p; Newton iteration.

    Exact at the corners; for convex quads the map is invertible inside.
    """
    v0, v1, v2, v3 = (np.asarray(v, dtype=float) for v in quad)
    s = 0.5
    t = 0.5
    for _ in range(iters):
        b = (
            (1 - s) * (1 - t) * v0
            + s * (1 - t) * v1
            + s * t * v2
            + (1 - s) * t * v3
        )
        r = b - p
        if float(r @ r) < 1e-24:
            break
        dbds = (1 - t) * (v1 - v0) + t * (v2 - v3)
        dbdt = (1 - s) * (v3 - v0) + s * (v2 - v1)
        det = dbds[0] * dbdt[1] - dbds[1] * dbdt[0]
        if abs(det) < 1e-15:
            break
        ds = (r[0] * dbdt[1] - r[1] * dbdt[0]) / det
        dt = (dbds[0] * r[1] - dbds[1] * r[0]) / det
        s = min(1.0, max(0.0, s - ds))
        t = min(1.0, max(0.0, t - dt))
    return s, t


def bilinear(corners, s: float, t: float) -> np.ndarray:
    v0, v1, v2, v3 = (np.asarray(v, dtype=float) for v in corners)
    return (1 - s) * (1 - t) * v0 + s * (1 - t) * v1 + s * t * v2 + (1 - s) * t * v3


# ---------------------------------------------------------------------------
# Retargeting


def retarget(frame: LandmarkFrame, cal: Calibration, state: RetargetState, model: HandModel) -> FingertipTargets:
    """One landmark frame to fingertip targets; updates state in place.

    Low-confidence or invalid frames leave the previous output unchanged
    (operators recover through visual feedback rather than the hand jumping).
    """
    if frame.confidence < cal.confidence_min or not frame.valid():
        return state.last_targets

    out = np.zeros((4, 3))
    for name in MAPPED_FINGERS:
        fm = cal.fingers[name]
        u = float(frame.keypoints[TIP_KEYPOINTS[name], 1])
        frac = (u - fm.human_min) / (fm.human_max - fm.human_min)
        frac = min(1.0, max(0.0, frac))
        out[FINGER_INDEX[name]] = fm.robot_min + frac * (fm.robot_max - fm.robot_min)
        out[FINGER_INDEX[name], 2] = cal.z_plane

    p = frame.keypoints[TIP_KEYPOINTS["pinky"], :2].astype(float)
    quad = np.asarray(cal.thumb_quad, dtype=float)
    if not _inside_quad(quad, p):
        p = _clamp_to_quad(quad, p)
    s, t = invert_bilinear(quad, p)
    xy = bilinear(cal.thumb_robot, s, t)
    out[3] = (xy[0], xy[1], cal.z_plane)

    targets = FingertipTargets.clamped(model, out)
    state.last_targets = targets
    state.last_accept_time = frame.timestamp
    return targets


class TargetSmoother:
    """Exponential moving average over target streams; alpha = 1 is identity."""

    def __init__(self, alpha: float = 0.5):
        if not 0.0 < alpha <= 1.0:
            raise InvalidInputError("alpha must be in (0, 1]")
        self.alpha = alpha
        self._value = None

    def apply(self, targets) -> np.ndarray:
        arr = np.asarray(targets, dtype=float)
        if self._value is None:
            self._value = arr.copy()
        else:
            self._value = self.alpha * arr + (1.0 - self.alpha) * self._value
        return self._value.copy()


def smooth(target_stream, alpha: float = 0.5):
    """Generator form of TargetSmoother for offline streams."""
    sm = TargetSmoother(alpha)
    for targets in target_stream:
        yield sm.apply(targets)


# ---------------------------------------------------------------------------
# Files: calibration (YAML) and landmark streams (JSON lines)


def save_calibration(cal: Calibration, path) -> None:
    doc = {
        "format": "calibration/1",
        "z_plane": float(cal.z_plane),
        "confidence_min": float(cal.confidence_min),
        "fingers": {
            name: {
                "human_min": float(fm.human_min),
                "human_max": float(fm.human_max),
                "robot_min": [float(v) for v in fm.robot_min],
                "robot_max": [float(v) for v in fm.robot_max],
            }
            for name, fm in sorted(cal.fingers.items())
        },
        "thumb_quad": [[float(v) for v in row] for row in cal.thumb_quad],
        "thumb_robot": [[float(v) for v in row] for row in cal.thumb_robot],
    }
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=True)


def load_calibration(path) -> Calibration:
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict) or doc.get("format") != "calibration/1":
        raise InvalidInputError("not a calibration file (expected format: calibration/1)")
    fingers = {
        name: FingerMap(
            human_min=float(node["human_min"]),
            human_max=float(node["human_max"]),
            robot_min=np.array(node["robot_min"], dtype=float),
            robot_max=np.array(node["robot_max"], dtype=float),
        )
        for name, node in doc["fingers"].items()
    }
    cal = Calibration(
        fingers=fingers,
        thumb_quad=np.array(doc["thumb_quad"], dtype=float),
        thumb_robot=np.array(doc["thumb_robot"], dtype=float),
        z_plane=float(doc.get("z_plane", DEFAULT_Z_PLANE)),
        confidence_min=float(doc.get("confidence_min", DEFAULT_CONFIDENCE_MIN)),
    )
    cal.validate()
    return cal


def default_calibration(model: HandModel, z_plane: float = DEFAULT_Z_PLANE) -> Calibration:
    """Calibration from synthetic reference frames of a nominal operator hand.

    Stands in when no operator calibration has been recorded: finger curl
    spans image y in [0.25, 0.75] and the pinky quadrilateral is a centered
    image-space square.
    """
    frames = []
    base = np.full((N_KEYPOINTS, 3), 0.5)
    for name in MAPPED_FINGERS:
        tip = TIP_KEYPOINTS[name]
        ext = base.copy()
        ext[tip, 1] = 0.25
        curl = base.copy()
        curl[tip, 1] = 0.75
        frames.append((LandmarkFrame(0.0, ext), f"{name}_extended"))
        frames.append((LandmarkFrame(0.0, curl), f"{name}_curled"))
    corners = [(0.3, 0.3), (0.7, 0.3), (0.7, 0.7), (0.3, 0.7)]
    for i, (x, y) in enumerate(corners):
        fr = base.copy()
        fr[TIP_KEYPOINTS["pinky"], 0] = x
        fr[TIP_KEYPOINTS["pinky"], 1] = y
        frames.append((LandmarkFrame(0.0, fr), f"thumb_corner_{i}"))
    return calibrate(frames, model, z_plane=z_plane)


def write_landmark_stream(frames, path) -> None:
    import json as _json

    with open(path, "w") as fh:
        fh.write(_json.dumps({"format": "landmark-stream", "version": 1}) + "\n")
        for fr in frames:
            row = {
                "ts": float(fr.timestamp),
                "kp": [[float(v) for v in p] for p in fr.keypoints],
                "conf": float(fr.confidence),
            }
            fh.write(_json.dumps(row, separators=(",", ":")) + "\n")


def read_landmark_stream(path):
    import json as _json

    frames = []
    with open(path) as fh:
        header = _json.loads(fh.readline())
        if header.get("format") != "landmark-stream":
            raise InvalidInputError("not a landmark stream file")
        prev_ts = -math.inf
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = _json.loads(line)
            if row["ts"] <= prev_ts:
                raise InvalidInputError("landmark timestamps must be strictly increasing")
            prev_ts = row["ts"]
            frames.append(
                LandmarkFrame(timestamp=float(row["ts"]), keypoints=np.array(row["kp"], dtype=float), confidence=float(row.get("conf", 1.0)))
            )
    return frames
