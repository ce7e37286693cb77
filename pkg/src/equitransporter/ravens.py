"""Synthetic planar pick-and-place tasks, oracle demonstrations and the pose metric.

Scenes are 2 x 64 x 64: channel 0 is the object height mask, channel 1 the
target marker.  One pixel is 0.5 cm, so the 1 cm translation threshold is 2 px.
Object and target orientations lie on a grid of ``angle_bins`` rotations.
"""
from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from .fields import FeatureField, FormatError, field_to_bytes, read_field_stream, rotate_array, rotate_pixel
from .groups import GroupElement, from_angle
from .transporter import PickAction, PlaceAction

__all__ = [
    "TASKS",
    "SCENE_SIZE",
    "TAU_PX",
    "OMEGA",
    "Pose",
    "Scene",
    "Demonstration",
    "EvalResult",
    "make_rng",
    "generate",
    "rotate_scene",
    "oracle",
    "evaluate",
    "dataset_to_bytes",
    "dataset_from_bytes",
    "dataset_write",
    "dataset_read",
]

TASKS = ("insert-L", "box-in-bowl", "align-corner")
SCENE_SIZE = 64
BORDER = 12  # place-crop radius
STENCIL = 21
CM_PER_PX = 0.5
TAU_PX = 1.0 / CM_PER_PX
OMEGA = math.pi / 12
TWO_PI = 2.0 * math.pi
MAX_TRIES = 200


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox4x64 generator keyed by ``(seed, stream)``."""
    key = (int(seed) % 2**64) | ((int(stream) % 2**64) << 64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class Pose:
    u: int
    v: int
    theta: float


@dataclass(frozen=True, eq=False)
class Scene:
    task: str
    seed: int
    shape: str
    size: tuple  # shape parameters (rows, cols) of the block
    object_pose: Pose
    target_pose: Pose
    symmetry_order: int  # 0 means any rotation is acceptable
    grasp_period: float
    angle_bins: int
    image: FeatureField
    object_mask: np.ndarray

    @property
    def grasp_axis(self) -> float:
        return self.object_pose.theta % self.grasp_period


@dataclass(frozen=True, eq=False)
class Demonstration:
    observation: FeatureField
    pick: PickAction
    place: PlaceAction
    task: str = ""
    seed: int = -1

    def __eq__(self, other):
        return (
            isinstance(other, Demonstration)
            and (self.pick, self.place, self.task, self.seed) == (other.pick, other.place, other.task, other.seed)
            and self.observation.rep == other.observation.rep
            and np.array_equal(self.observation.data, other.observation.data)
        )


@dataclass(frozen=True)
class EvalResult:
    success: int
    translation_error: float
    rotation_error: float
    pick_ok: bool = True


# ----------------------------------------------------------------------------
# stencils


def _canvas():
    h = STENCIL // 2
    rows, cols = np.mgrid[-h : h + 1, -h : h + 1]
    return rows, cols


def _box(rows, cols, r0, r1, c0, c1):
    return (rows >= r0) & (rows <= r1) & (cols >= c0) & (cols <= c1)


def _l_block():
    # L pentomino of 3x3 px cells; origin is the pixel nearest the centroid
    rows, cols = _canvas()
    m = _box(rows, cols, -6, 5, -2, 0) | _box(rows, cols, 3, 5, 1, 3)
    return m


def _rect(h, w):
    rows, cols = _canvas()
    return _box(rows, cols, -(h // 2), h // 2, -(w // 2), w // 2)


def _disk(radius):
    rows, cols = _canvas()
    return rows**2 + cols**2 <= radius**2


def _corner_marker(h, w):
    # L-shaped marker hugging the (top, right) corner of an h x w footprint
    rows, cols = _canvas()
    top, right = -(h // 2), w // 2
    arm = 4
    horiz = _box(rows, cols, top - 2, top - 1, right - arm, right + 2)
    vert = _box(rows, cols, top - 2, top + arm, right + 1, right + 2)
    return horiz | vert


def _stamp(stencil: np.ndarray, pose: Pose, bins: int) -> np.ndarray:
    """Render ``stencil`` rotated by ``pose.theta`` and centered at ``(u, v)``."""
    g = from_angle(pose.theta, bins)
    rot = rotate_array(stencil.astype(np.float64)[None], g, "bilinear")[0] > 0.5
    out = np.zeros((SCENE_SIZE, SCENE_SIZE), dtype=bool)
    h = STENCIL // 2
    out[pose.u - h : pose.u + h + 1, pose.v - h : pose.v + h + 1] = rot
    return out


def _shape_spec(task: str, rng: np.random.Generator):
    """(shape id, size, symmetry order, grasp period) for one scene."""
    if task == "insert-L":
        return "L", (12, 6), 1, math.pi
    if task == "box-in-bowl":
        return "square", (7, 7), 0, math.pi / 2
    if task == "align-corner":
        h, w = [(5, 11), (7, 11), (7, 13), (5, 9)][int(rng.integers(4))]
        return "rect", (h, w), 2, math.pi
    raise ValueError(f"unknown task {task!r}; choose from {TASKS}")


def _stencils(shape: str, size) -> tuple[np.ndarray, np.ndarray]:
    """Object stencil and target stencil."""
    if shape == "L":
        block = _l_block()
        return block, block
    if shape == "square":
        return _rect(*size), _disk(7)
    return _rect(*size), _corner_marker(*size)


def _render(obj_stencil, tgt_stencil, obj: Pose, tgt: Pose, bins):
    obj_mask = _stamp(obj_stencil, obj, bins)
    tgt_mask = _stamp(tgt_stencil, tgt, bins)
    img = np.stack([obj_mask, tgt_mask]).astype(np.float32)
    return img, obj_mask, tgt_mask


def _dilate(mask: np.ndarray) -> np.ndarray:
    out = mask.copy()
    out[1:] |= mask[:-1]
    out[:-1] |= mask[1:]
    out[:, 1:] |= mask[:, :-1]
    out[:, :-1] |= mask[:, 1:]
    return out


def _task_index(task: str) -> int:
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; choose from {TASKS}")
    return TASKS.index(task)


def generate(seed: int, task: str = "insert-L", angle_bins: int = 8) -> Scene:
    """Deterministic scene for ``(seed, task)``.

    The object pose is uniform over the valid region; the target is
    rejection-sampled until its footprint (and the object placed there) keeps
    a one-pixel gap from the object.
    """
    ti = _task_index(task)
    lo, hi = BORDER, SCENE_SIZE - 1 - BORDER
    for attempt in range(1000):
        rng = make_rng(seed, 1 + ti + 16 * attempt)
        shape, size, sym, period = _shape_spec(task, rng)
        obj_st, tgt_st = _stencils(shape, size)
        ou, ov = (int(x) for x in rng.integers(lo, hi + 1, size=2))
        oth = TWO_PI * int(rng.integers(angle_bins)) / angle_bins
        obj = Pose(ou, ov, oth)
        obj_mask = _stamp(obj_st, obj, angle_bins)
        grown = _dilate(obj_mask)
        for _ in range(MAX_TRIES):
            tu, tv = (int(x) for x in rng.integers(lo, hi + 1, size=2))
            tth = TWO_PI * int(rng.integers(angle_bins)) / angle_bins
            if sym == 0:
                tth = oth  # bowl: orientation carries no information
            tgt = Pose(tu, tv, tth)
            footprint = _stamp(tgt_st, tgt, angle_bins) | _stamp(obj_st, tgt, angle_bins)
            if not (footprint & grown).any():
                img, obj_mask, _ = _render(obj_st, tgt_st, obj, tgt, angle_bins)
                return Scene(task, int(seed), shape, size, obj, tgt, sym, period, angle_bins,
                             FeatureField(img), obj_mask)
    raise RuntimeError(f"could not place a target for seed {seed}")  # pragma: no cover


def rotate_scene(scene: Scene, g: GroupElement) -> Scene:
    """The same scene with every pose rotated about the workspace center."""
    def rot(p: Pose) -> Pose:
        r, c = rotate_pixel((p.u, p.v), g, SCENE_SIZE)
        return Pose(int(round(r)), int(round(c)), (p.theta + g.angle) % TWO_PI)

    obj, tgt = rot(scene.object_pose), rot(scene.target_pose)
    obj_st, tgt_st = _stencils(scene.shape, scene.size)
    img, obj_mask, _ = _render(obj_st, tgt_st, obj, tgt, scene.angle_bins)
    return Scene(scene.task, scene.seed, scene.shape, scene.size, obj, tgt, scene.symmetry_order,
                 scene.grasp_period, scene.angle_bins, FeatureField(img), obj_mask)


# ----------------------------------------------------------------------------
# oracle and metric


def oracle(scene: Scene) -> Demonstration:
    """Pick at the object origin along its grasp axis; place on the target."""
    o, t = scene.object_pose, scene.target_pose
    theta_pick = scene.grasp_axis
    delta = (t.theta - o.theta) % TWO_PI
    if scene.symmetry_order > 1:
        delta %= TWO_PI / scene.symmetry_order
    pick = PickAction(o.u, o.v, theta_pick)
    place = PlaceAction(t.u, t.v, (theta_pick + delta) % TWO_PI)
    return Demonstration(scene.image, pick, place, scene.task, scene.seed)


def _rotate_offset(dr: float, dc: float, theta: float) -> tuple[float, float]:
    x, y = dc, -dr
    c, s = math.cos(theta), math.sin(theta)
    return -(s * x + c * y), c * x - s * y


def _circ(err: float, period: float) -> float:
    e = err % period
    return min(e, period - e)


def evaluate(scene: Scene, pick: PickAction, place: PlaceAction) -> EvalResult:
    """Pose success: grasp inside the object along its axis, final pose within
    ``TAU_PX`` pixels and ``OMEGA`` radians (modulo the object symmetry)."""
    o, t = scene.object_pose, scene.target_pose
    inside = (0 <= pick.u < SCENE_SIZE and 0 <= pick.v < SCENE_SIZE
              and bool(scene.object_mask[pick.u, pick.v]))
    grasp_err = _circ(pick.theta - scene.grasp_axis, scene.grasp_period)
    pick_ok = inside and grasp_err <= OMEGA + 1e-9
    delta = place.theta - pick.theta
    dr, dc = _rotate_offset(o.u - pick.u, o.v - pick.v, delta)
    trans = math.hypot(place.u + dr - t.u, place.v + dc - t.v)
    s = scene.symmetry_order
    rot = 0.0 if s == 0 else _circ(o.theta + delta - t.theta, TWO_PI / s)
    ok = pick_ok and trans <= TAU_PX + 1e-9 and rot <= OMEGA + 1e-9
    return EvalResult(int(ok), trans, rot, pick_ok)


# ----------------------------------------------------------------------------
# ETPD dataset container

_DATA_MAGIC = b"ETPD"
_VERSION = 1


def _record(demo: Demonstration) -> bytes:
    rec = {
        "task": demo.task,
        "seed": demo.seed,
        "pick": [demo.pick.u, demo.pick.v, demo.pick.theta],
        "place": [demo.place.u, demo.place.v, demo.place.theta],
    }
    return json.dumps(rec, sort_keys=True).encode()


def dataset_to_bytes(demos) -> bytes:
    demos = list(demos)
    parts = [_DATA_MAGIC, struct.pack("<II", _VERSION, len(demos))]
    for d in demos:
        rec = _record(d)
        parts += [struct.pack("<I", len(rec)), rec, field_to_bytes(d.observation)]
    return b"".join(parts)


def dataset_from_bytes(buf: bytes) -> list[Demonstration]:
    stream = io.BytesIO(buf)

    def take(k):
        b = stream.read(k)
        if len(b) != k:
            raise FormatError("truncated dataset")
        return b

    if take(4) != _DATA_MAGIC:
        raise FormatError("bad dataset magic")
    version, count = struct.unpack("<II", take(8))
    if version != _VERSION:
        raise FormatError(f"unsupported dataset version {version}")
    demos = []
    for _ in range(count):
        (rlen,) = struct.unpack("<I", take(4))
        try:
            rec = json.loads(take(rlen))
            pick = PickAction(int(rec["pick"][0]), int(rec["pick"][1]), float(rec["pick"][2]))
            place = PlaceAction(int(rec["place"][0]), int(rec["place"][1]), float(rec["place"][2]))
        except (KeyError, ValueError, TypeError, IndexError) as exc:
            raise FormatError(f"bad action record: {exc}") from exc
        obs = read_field_stream(stream)
        demos.append(Demonstration(obs, pick, place, rec.get("task", ""), int(rec.get("seed", -1))))
    if stream.read(1):
        raise FormatError("trailing bytes after last episode")
    return demos


def dataset_write(demos, path) -> bytes:
    buf = dataset_to_bytes(demos)
    with open(path, "wb") as fh:
        fh.write(buf)
    return buf


def dataset_read(path) -> list[Demonstration]:
    with open(path, "rb") as fh:
        return dataset_from_bytes(fh.read())
