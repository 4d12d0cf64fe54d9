"""Synthetic tabletop grasping task.

A cup sits on a table at one of the positions of an evenly spaced grid with a
held-out central block. Each retained position gets exactly one scripted
demonstration: the end-effector travels from a fixed home pose to the cup
along a straight line with a raised approach arc, closing the gripper over
the last few steps. Observations pair a fixed overhead third-person render
with a wrist-camera render plus the end-effector pose. Rendering is
procedural flat shading: a function of (configuration, scene) with no hidden
state, so datasets regenerate bit-identically from their manifest.

Scenario generators produce the query families used by the memorization
study: exact training positions, interpolations between them, paths through
the held-out block, paths leaving the camera frustum, added distractor
glyphs, and task-unrelated procedural textures replacing the third view.

On disk a dataset is a directory holding ``manifest.json`` plus one binary
blob per trajectory (see ``save_dataset`` for the exact byte layout).
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

# flat-shading palette; unrelated textures deliberately avoid all of these
BACKGROUND = np.array([0.08, 0.08, 0.10])
TABLE = np.array([0.62, 0.66, 0.60])
CUP = np.array([0.85, 0.12, 0.10])
GRIPPER = np.array([0.95, 0.80, 0.15])
DISTRACTOR_COLORS = (
    np.array([0.55, 0.10, 0.60]),
    np.array([0.10, 0.55, 0.60]),
    np.array([0.90, 0.45, 0.05]),
    np.array([0.25, 0.25, 0.25]),
)

SCENARIO_KINDS = ("ind", "ind-interpolate", "ood-interpolate",
                  "ood-extrapolate", "ood-distractor", "ood-unrelated")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class TaskConfig:
    rows: int = 6
    cols: int = 6
    held_out: tuple[int, int, int, int] = (2, 4, 2, 5)  # (r0, r1, c0, c1), half-open
    horizon: int = 32
    resolution: int = 48
    seed: int = 0
    grid_half: float = 0.25       # grid spans [-grid_half, grid_half]^2
    table_half: float = 0.30
    cup_radius: float = 0.07
    gripper_radius: float = 0.03
    grasp_z: float = 0.02
    home: tuple[float, float, float] = (0.0, -0.40, 0.30)
    arc_height: float = 0.08
    third_eye_z: float = 0.90
    third_focal: float = 65.0
    hand_offset_z: float = 0.06
    hand_focal: float = 40.0

    def cell_xy(self, row: int, col: int) -> tuple[float, float]:
        sx = 2 * self.grid_half / (self.cols - 1)
        sy = 2 * self.grid_half / (self.rows - 1)
        return (-self.grid_half + col * sx, -self.grid_half + row * sy)

    def retained_cells(self) -> list[tuple[int, int]]:
        r0, r1, c0, c1 = self.held_out
        return [(r, c) for r in range(self.rows) for c in range(self.cols)
                if not (r0 <= r < r1 and c0 <= c < c1)]

    def is_held_out(self, row: int, col: int) -> bool:
        r0, r1, c0, c1 = self.held_out
        return r0 <= row < r1 and c0 <= col < c1

    def as_dict(self) -> dict:
        return {
            "rows": self.rows, "cols": self.cols, "held_out": list(self.held_out),
            "horizon": self.horizon, "resolution": self.resolution, "seed": self.seed,
            "grid_half": self.grid_half, "table_half": self.table_half,
            "cup_radius": self.cup_radius, "gripper_radius": self.gripper_radius,
            "grasp_z": self.grasp_z, "home": list(self.home),
            "arc_height": self.arc_height, "third_eye_z": self.third_eye_z,
            "third_focal": self.third_focal, "hand_offset_z": self.hand_offset_z,
            "hand_focal": self.hand_focal,
        }

    @staticmethod
    def from_dict(d: dict) -> "TaskConfig":
        d = dict(d)
        d["held_out"] = tuple(d["held_out"])
        d["home"] = tuple(d["home"])
        return TaskConfig(**d)


@dataclass
class Observation:
    hand_image: np.ndarray   # (H, W, 3) in [0, 1]
    third_image: np.ndarray  # (H, W, 3) in [0, 1]
    pose: np.ndarray         # (7,) position + unit quaternion

    def as_vector(self) -> np.ndarray:
        """Flattened raw observation (pixels then pose), for raw-space search."""
        return np.concatenate([self.hand_image.ravel(), self.third_image.ravel(), self.pose])

    def equals(self, other: "Observation") -> bool:
        return (np.array_equal(self.hand_image, other.hand_image)
                and np.array_equal(self.third_image, other.third_image)
                and np.array_equal(self.pose, other.pose))


@dataclass
class Demonstration:
    traj_id: int
    observations: list[Observation]
    actions: np.ndarray      # (T, 8): position, quaternion, gripper
    object_cell: tuple[int, int]
    object_xy: tuple[float, float]


@dataclass
class Distractor:
    shape: str               # square | cross | triangle
    x: float
    y: float
    size: float
    color: int               # palette index


def _pixel_world_grids(cfg: TaskConfig, eye_x: float, eye_y: float, eye_z: float,
                       focal: float):
    """World (X, Y) of every pixel center back-projected onto the table z=0."""
    n = cfg.resolution
    c = n / 2.0
    idx = np.arange(n) + 0.5
    u, v = np.meshgrid(idx, idx)
    X = eye_x + (u - c) * eye_z / focal
    Y = eye_y + (v - c) * eye_z / focal
    return X, Y


def _project(cfg: TaskConfig, eye_x, eye_y, eye_z, focal, px, py, pz):
    """Pinhole projection of a world point to pixel coordinates + depth."""
    depth = eye_z - pz
    c = cfg.resolution / 2.0
    return (c + focal * (px - eye_x) / depth,
            c + focal * (py - eye_y) / depth, depth)


def _paint_plane_scene(cfg: TaskConfig, img, X, Y, object_xy, distractors):
    table = (np.abs(X) <= cfg.table_half) & (np.abs(Y) <= cfg.table_half)
    img[table] = TABLE
    for d in distractors:
        dx, dy = X - d.x, Y - d.y
        if d.shape == "square":
            mask = (np.abs(dx) <= d.size) & (np.abs(dy) <= d.size)
        elif d.shape == "cross":
            w = d.size / 3.0
            mask = ((np.abs(dx) <= d.size) & (np.abs(dy) <= w)) | \
                   ((np.abs(dy) <= d.size) & (np.abs(dx) <= w))
        elif d.shape == "triangle":
            mask = (dy >= -d.size) & (dy <= d.size) & \
                   (np.abs(dx) <= (d.size - dy) / 2.0)
        else:
            raise ScenarioError(f"unknown distractor shape {d.shape!r}")
        img[mask] = DISTRACTOR_COLORS[d.color % len(DISTRACTOR_COLORS)]
    if object_xy is not None:
        mask = (X - object_xy[0]) ** 2 + (Y - object_xy[1]) ** 2 <= cfg.cup_radius ** 2
        img[mask] = CUP


def _unrelated_texture(cfg: TaskConfig, seed: int) -> np.ndarray:
    """Smooth random texture whose channel ranges are disjoint from the scene
    palette (R, G capped below 0.45; B at least 0.5)."""
    gen = np.random.Generator(np.random.PCG64(seed))
    coarse = gen.random((6, 6, 3))
    n = cfg.resolution
    t = np.linspace(0, 5, n)
    i0 = np.floor(t).astype(int).clip(0, 4)
    frac = t - i0
    # separable bilinear upsample to n x n
    a = coarse[i0] * (1 - frac)[:, None, None] + coarse[i0 + 1] * frac[:, None, None]
    b = a[:, i0] * (1 - frac)[None, :, None] + a[:, i0 + 1] * frac[None, :, None]
    tex = np.empty((n, n, 3))
    tex[..., 0] = 0.45 * b[..., 0]
    tex[..., 1] = 0.45 * b[..., 1]
    tex[..., 2] = 0.5 + 0.5 * b[..., 2]
    return tex


def render_observation(cfg: TaskConfig, object_xy, ee_pose: np.ndarray,
                       distractors: tuple[Distractor, ...] = (),
                       lighting: float = 1.0,
                       unrelated_seed: int | None = None) -> Observation:
    """Render both camera views for one world state.

    `object_xy` may be None (no cup in the scene). When `unrelated_seed` is
    set, the third view is replaced by a procedural task-unrelated texture.
    """
    ee_pose = np.asarray(ee_pose, dtype=np.float64)
    ex, ey, ez = ee_pose[0], ee_pose[1], ee_pose[2]

    # third-person: fixed camera above the table center
    third = np.empty((cfg.resolution, cfg.resolution, 3))
    third[:] = BACKGROUND
    X, Y = _pixel_world_grids(cfg, 0.0, 0.0, cfg.third_eye_z, cfg.third_focal)
    _paint_plane_scene(cfg, third, X, Y, object_xy, distractors)
    depth = cfg.third_eye_z - ez
    if depth > 1e-6:
        u0, v0, _ = _project(cfg, 0.0, 0.0, cfg.third_eye_z, cfg.third_focal, ex, ey, ez)
        rad = cfg.third_focal * cfg.gripper_radius / depth
        idx = np.arange(cfg.resolution) + 0.5
        U, V = np.meshgrid(idx, idx)
        third[(U - u0) ** 2 + (V - v0) ** 2 <= rad ** 2] = GRIPPER
    if unrelated_seed is not None:
        third = _unrelated_texture(cfg, unrelated_seed)

    # wrist camera: rides above the gripper looking down; the gripper itself
    # is out of its own frame
    hand = np.empty((cfg.resolution, cfg.resolution, 3))
    hand[:] = BACKGROUND
    cam_z = ez + cfg.hand_offset_z
    Xh, Yh = _pixel_world_grids(cfg, ex, ey, cam_z, cfg.hand_focal)
    _paint_plane_scene(cfg, hand, Xh, Yh, object_xy, distractors)

    if lighting != 1.0:
        third = np.clip(third * lighting, 0.0, 1.0)
        hand = np.clip(hand * lighting, 0.0, 1.0)
    # snap pixel values to the float32 grid once, so disk round-trips are
    # lossless and rendered vs reloaded frames compare bit-equal
    hand = hand.astype(np.float32).astype(np.float64)
    third = third.astype(np.float32).astype(np.float64)
    return Observation(hand_image=hand, third_image=third, pose=ee_pose.copy())


def _demo_path(cfg: TaskConfig, target_xy) -> np.ndarray:
    """(T, 8) action rows: straight line home->grasp with a raised z arc,
    gripper closing over the last four steps."""
    t = np.linspace(0.0, 1.0, cfg.horizon)
    home = np.asarray(cfg.home)
    grasp = np.array([target_xy[0], target_xy[1], cfg.grasp_z])
    pos = home[None, :] + t[:, None] * (grasp - home)[None, :]
    pos[:, 2] += cfg.arc_height * np.sin(np.pi * t)
    quat = np.tile([1.0, 0.0, 0.0, 0.0], (cfg.horizon, 1))
    grip = np.zeros(cfg.horizon)
    grip[-4:] = np.linspace(0.25, 1.0, 4)
    return np.concatenate([pos, quat, grip[:, None]], axis=1)


def make_demonstration(cfg: TaskConfig, traj_id: int, cell: tuple[int, int]) -> Demonstration:
    xy = cfg.cell_xy(*cell)
    actions = _demo_path(cfg, xy)
    obs = [render_observation(cfg, xy, actions[i, :7]) for i in range(cfg.horizon)]
    return Demonstration(traj_id=traj_id, observations=obs, actions=actions,
                         object_cell=cell, object_xy=xy)


@dataclass
class TaskDataset:
    cfg: TaskConfig
    demos: list[Demonstration]

    def demo_by_id(self, traj_id: int) -> Demonstration:
        for d in self.demos:
            if d.traj_id == traj_id:
                return d
        raise KeyError(f"no trajectory {traj_id}")

    def frame_arrays(self):
        """Stacked (hand, third, pose, traj_ids, frame_ids) over all frames."""
        hand = np.stack([o.hand_image for d in self.demos for o in d.observations])
        third = np.stack([o.third_image for d in self.demos for o in d.observations])
        pose = np.stack([o.pose for d in self.demos for o in d.observations])
        tids = np.array([d.traj_id for d in self.demos for _ in d.observations], dtype=np.int64)
        fids = np.array([i for d in self.demos for i in range(len(d.observations))], dtype=np.int64)
        return hand, third, pose, tids, fids

    def manifest(self) -> dict:
        return {
            "format_version": 1,
            "config": self.cfg.as_dict(),
            "cells": [list(d.object_cell) for d in self.demos],
            "files": [f"traj_{d.traj_id:03d}.bin" for d in self.demos],
        }

    def manifest_hash(self) -> str:
        blob = json.dumps(self.manifest(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def generate_dataset(cfg: TaskConfig) -> TaskDataset:
    """One demonstration per retained grid cell (the default layout keeps 30
    of 36 cells)."""
    cells = cfg.retained_cells()
    if not cells:
        raise ScenarioError("held-out region covers the whole grid")
    demos = [make_demonstration(cfg, i, cell) for i, cell in enumerate(cells)]
    return TaskDataset(cfg=cfg, demos=demos)


# ---------------------------------------------------------------------------
# scenarios

@dataclass
class ScenarioQuery:
    obs: Observation
    kind: str
    object_xy: tuple[float, float] | None
    meta: dict = field(default_factory=dict)


@dataclass
class Scenario:
    kind: str
    queries: list[ScenarioQuery]
    params: dict


def _require_retained(cfg: TaskConfig, cell, what: str):
    r, c = cell
    if not (0 <= r < cfg.rows and 0 <= c < cfg.cols):
        raise ScenarioError(f"{what} cell {cell} outside the grid")
    if cfg.is_held_out(r, c):
        raise ScenarioError(f"{what} cell {cell} is in the held-out region")


def _home_pose(cfg: TaskConfig) -> np.ndarray:
    return np.array([*cfg.home, 1.0, 0.0, 0.0, 0.0])


DISTRACTOR_LEVELS = {
    1: ([Distractor("square", 0.15, -0.18, 0.05, 0)], 1.0),
    2: ([Distractor("square", 0.15, -0.18, 0.05, 0),
         Distractor("cross", -0.20, 0.10, 0.06, 1)], 1.0),
    3: ([Distractor("square", 0.15, -0.18, 0.05, 0),
         Distractor("cross", -0.20, 0.10, 0.06, 1),
         Distractor("triangle", 0.05, 0.20, 0.07, 2)], 0.9),
    4: ([Distractor("square", 0.15, -0.18, 0.05, 0),
         Distractor("cross", -0.20, 0.10, 0.06, 1),
         Distractor("triangle", 0.05, 0.20, 0.07, 2),
         Distractor("square", -0.07, -0.07, 0.06, 3),
         Distractor("cross", 0.18, 0.12, 0.05, 1)], 0.8),
}


def make_scenario(kind: str, cfg: TaskConfig, **params) -> Scenario:
    """Build the query sequence for one scenario family.

    ind               cells=[...] (default: all retained cells)
    ind-interpolate   anchor=(r, c): centroid of the fully retained 2x2 block
    ood-interpolate   start, end cells, steps (default 9): straight path
    ood-extrapolate   start cell, direction, steps, max_offset
    ood-distractor    cell, level in 1..4
    ood-unrelated     cell, count: texture catalog seeded from the dataset seed
    """
    if kind not in SCENARIO_KINDS:
        raise ScenarioError(f"unknown scenario kind {kind!r}; choose from {SCENARIO_KINDS}")
    home = _home_pose(cfg)
    queries: list[ScenarioQuery] = []

    if kind == "ind":
        cells = params.get("cells") or cfg.retained_cells()
        for cell in cells:
            _require_retained(cfg, cell, "ind")
            xy = cfg.cell_xy(*cell)
            queries.append(ScenarioQuery(render_observation(cfg, xy, home), kind, xy,
                                         {"cell": list(cell)}))

    elif kind == "ind-interpolate":
        r, c = params.get("anchor", (0, 0))
        block = [(r, c), (r, c + 1), (r + 1, c), (r + 1, c + 1)]
        for cell in block:
            _require_retained(cfg, cell, "ind-interpolate")
        corners = np.array([cfg.cell_xy(*cell) for cell in block])
        xy = tuple(corners.mean(axis=0))
        queries.append(ScenarioQuery(render_observation(cfg, xy, home), kind, xy,
                                     {"block": [list(b) for b in block]}))

    elif kind == "ood-interpolate":
        start = tuple(params.get("start", (2, 1)))
        end = tuple(params.get("end", (2, 5)))
        steps = int(params.get("steps", 9))
        _require_retained(cfg, start, "ood-interpolate start")
        _require_retained(cfg, end, "ood-interpolate end")
        if steps < 3:
            raise ScenarioError("ood-interpolate needs at least 3 steps")
        a = np.array(cfg.cell_xy(*start))
        b = np.array(cfg.cell_xy(*end))
        for i, t in enumerate(np.linspace(0.0, 1.0, steps)):
            xy = tuple(a + t * (b - a))
            lab = kind if 0 < i < steps - 1 else "ind"
            queries.append(ScenarioQuery(render_observation(cfg, xy, home), lab, xy,
                                         {"step": i, "of": steps}))

    elif kind == "ood-extrapolate":
        start = tuple(params.get("start", (0, 0)))
        _require_retained(cfg, start, "ood-extrapolate start")
        direction = np.asarray(params.get("direction", (-1.0, 0.0)), dtype=np.float64)
        direction = direction / np.linalg.norm(direction)
        steps = int(params.get("steps", 6))
        max_offset = float(params.get("max_offset", 0.60))
        a = np.array(cfg.cell_xy(*start))
        for i, t in enumerate(np.linspace(0.0, 1.0, steps)):
            xy = tuple(a + t * max_offset * direction)
            lab = "ind" if i == 0 else kind
            queries.append(ScenarioQuery(render_observation(cfg, xy, home), lab, xy,
                                         {"step": i, "offset": t * max_offset}))

    elif kind == "ood-distractor":
        cell = tuple(params.get("cell", (4, 4)))
        level = int(params.get("level", 1))
        _require_retained(cfg, cell, "ood-distractor")
        if level not in DISTRACTOR_LEVELS:
            raise ScenarioError(f"distractor level must be in {sorted(DISTRACTOR_LEVELS)}")
        glyphs, lighting = DISTRACTOR_LEVELS[level]
        xy = cfg.cell_xy(*cell)
        queries.append(ScenarioQuery(
            render_observation(cfg, xy, home, tuple(glyphs), lighting), kind, xy,
            {"cell": list(cell), "level": level}))

    elif kind == "ood-unrelated":
        cell = tuple(params.get("cell", (4, 4)))
        count = int(params.get("count", 5))
        _require_retained(cfg, cell, "ood-unrelated")
        xy = cfg.cell_xy(*cell)
        for i in range(count):
            seed = cfg.seed * 10007 + 1000 + i
            queries.append(ScenarioQuery(
                render_observation(cfg, xy, home, unrelated_seed=seed), kind, xy,
                {"cell": list(cell), "texture_seed": seed}))

    return Scenario(kind=kind, queries=queries, params=dict(params))


# ---------------------------------------------------------------------------
# dataset IO
#
# Trajectory blob layout (little-endian):
#   offset 0:  8-byte magic "ALTTRAJ1"
#   offset 8:  u32 format version (1)
#   offset 12: u32 trajectory id
#   offset 16: u32 horizon T; u16 height H; u16 width W; u16 channels C; u16 zero pad
#   offset 28: float32 hand images  (T*H*W*C values)
#              float32 third images (T*H*W*C values)
#              float64 poses        (T*7 values)
#              float64 actions      (T*8 values)
# Images are stored float32 to halve disk size; they are exact snapshots of
# the rendered float64 values rounded once, identically on every platform.

TRAJ_MAGIC = b"ALTTRAJ1"


class DatasetIOError(ValueError):
    pass


def _traj_bytes(cfg: TaskConfig, demo: Demonstration) -> bytes:
    t, h, w, c = cfg.horizon, cfg.resolution, cfg.resolution, 3
    head = TRAJ_MAGIC + struct.pack("<III HHHH", 1, demo.traj_id, t, h, w, c, 0)
    hand = np.stack([o.hand_image for o in demo.observations]).astype("<f4")
    third = np.stack([o.third_image for o in demo.observations]).astype("<f4")
    pose = np.stack([o.pose for o in demo.observations]).astype("<f8")
    acts = demo.actions.astype("<f8")
    return head + hand.tobytes() + third.tobytes() + pose.tobytes() + acts.tobytes()


def save_dataset(ds: TaskDataset, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = ds.manifest()
    for demo, fname in zip(ds.demos, manifest["files"]):
        (out / fname).write_bytes(_traj_bytes(ds.cfg, demo))
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))
    return out


def load_dataset(path) -> TaskDataset:
    root = Path(path)
    manifest = json.loads((root / "manifest.json").read_text())
    if manifest.get("format_version") != 1:
        raise DatasetIOError(f"unsupported dataset format {manifest.get('format_version')}")
    cfg = TaskConfig.from_dict(manifest["config"])
    demos = []
    for fname, cell in zip(manifest["files"], manifest["cells"]):
        raw = (root / fname).read_bytes()
        if raw[:8] != TRAJ_MAGIC:
            raise DatasetIOError(f"{fname}: bad magic")
        ver, tid, t, h, w, c, _ = struct.unpack("<III HHHH", raw[8:28])
        if ver != 1:
            raise DatasetIOError(f"{fname}: unsupported version {ver}")
        img_n = t * h * w * c
        need = 28 + 2 * img_n * 4 + t * 7 * 8 + t * 8 * 8
        if len(raw) != need:
            raise DatasetIOError(f"{fname}: truncated at byte {len(raw)} (expected {need})")
        off = 28
        hand = np.frombuffer(raw, "<f4", img_n, off).reshape(t, h, w, c).astype(np.float64)
        off += img_n * 4
        third = np.frombuffer(raw, "<f4", img_n, off).reshape(t, h, w, c).astype(np.float64)
        off += img_n * 4
        pose = np.frombuffer(raw, "<f8", t * 7, off).reshape(t, 7).copy()
        off += t * 7 * 8
        acts = np.frombuffer(raw, "<f8", t * 8, off).reshape(t, 8).copy()
        obs = [Observation(hand[i], third[i], pose[i]) for i in range(t)]
        demos.append(Demonstration(traj_id=tid, observations=obs, actions=acts,
                                   object_cell=tuple(cell),
                                   object_xy=cfg.cell_xy(*cell)))
    return TaskDataset(cfg=cfg, demos=demos)
