"""World construction: flattened segment geometry arrays and the multi-world grid.

Scenes are re-centered, z-flattened and chopped into oriented box segments;
W worlds are laid out on a 400 m pitch grid and their per-world segment
arrays padded to a common length with a validity mask.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .scenario import Polyline, ScenarioSpec, shift_scenario

SEGMENT_GAP = 3.0          # consecutive points farther apart are a discontinuity
SEGMENT_HALF_WIDTH = 0.05  # oriented boxes are 0.10 m wide; height dropped (planar)
GRID_PITCH = 400.0         # 200 x 200 m cell + 200 m padding between world centers
EXPORT_VERSION = 1


@dataclass(frozen=True)
class SegmentArray:
    """Flat per-world segment geometry (all arrays share leading length P)."""

    midpoints: np.ndarray     # (P, 2)
    directions: np.ndarray    # (P, 2) unit vectors
    type_codes: np.ndarray    # (P,) int32
    half_lengths: np.ndarray  # (P,)
    half_widths: np.ndarray   # (P,)

    def __len__(self) -> int:
        return self.midpoints.shape[0]


@dataclass(frozen=True)
class WorldBatch:
    """Padded, masked geometry for W worlds on the layout grid."""

    midpoints: np.ndarray     # (W, P_max, 2)
    directions: np.ndarray    # (W, P_max, 2)
    type_codes: np.ndarray    # (W, P_max) int32
    half_lengths: np.ndarray  # (W, P_max)
    half_widths: np.ndarray   # (W, P_max)
    mask: np.ndarray          # (W, P_max) bool
    grid_offsets: np.ndarray  # (W, 2)
    scenario_ids: list[str]

    @property
    def num_worlds(self) -> int:
        return self.midpoints.shape[0]

    @property
    def p_max(self) -> int:
        return self.midpoints.shape[1]


def recenter(spec: ScenarioSpec) -> tuple[ScenarioSpec, tuple[float, float]]:
    """Shift a scenario so the mean of all polyline points sits at the origin.

    Returns the shifted spec and the removed center (XY).
    """
    all_pts = np.concatenate([p.points[:, :2] for p in spec.polylines], axis=0)
    if all_pts.size == 0:
        raise ValueError("scenario has no polyline points")
    cx, cy = all_pts.mean(axis=0)
    return shift_scenario(spec, -cx, -cy), (float(cx), float(cy))


def flatten_z(spec: ScenarioSpec) -> tuple[ScenarioSpec, list[np.ndarray]]:
    """Collapse all polyline z to 0; returns the original z arrays separately."""
    original_z = [p.points[:, 2].copy() for p in spec.polylines]
    flattened = []
    for p in spec.polylines:
        pts = p.points.copy()
        pts[:, 2] = 0.0
        flattened.append(Polyline(p.type_code, pts))
    return ScenarioSpec(spec.scenario_id, flattened, spec.agents), original_z


def segmentize(
    polyline: Polyline,
    gap: float = SEGMENT_GAP,
    bbox_half: float = 100.0,
) -> SegmentArray:
    """Convert one polyline into oriented segments over consecutive point pairs.

    Pairs farther apart than ``gap`` or with an endpoint outside ``±bbox_half``
    are skipped.
    """
    pts = polyline.points[:, :2]
    a, b = pts[:-1], pts[1:]
    diff = b - a
    dist = np.sqrt((diff**2).sum(axis=1))
    inside = (np.abs(a) <= bbox_half).all(axis=1) & (np.abs(b) <= bbox_half).all(axis=1)
    keep = (dist > 0.0) & (dist <= gap) & inside

    a, b, diff, dist = a[keep], b[keep], diff[keep], dist[keep]
    midpoints = 0.5 * (a + b)
    directions = diff / dist[:, None]
    n = len(dist)
    return SegmentArray(
        midpoints=midpoints,
        directions=directions,
        type_codes=np.full(n, polyline.type_code, dtype=np.int32),
        half_lengths=0.5 * dist,
        half_widths=np.full(n, SEGMENT_HALF_WIDTH),
    )


def scene_segments(spec: ScenarioSpec, gap: float = SEGMENT_GAP, bbox_half: float = 100.0) -> SegmentArray:
    """All segments of a (re-centered, flattened) scene in polyline order."""
    parts = [segmentize(p, gap=gap, bbox_half=bbox_half) for p in spec.polylines]
    return SegmentArray(
        midpoints=np.concatenate([s.midpoints for s in parts]) if parts else np.zeros((0, 2)),
        directions=np.concatenate([s.directions for s in parts]) if parts else np.zeros((0, 2)),
        type_codes=np.concatenate([s.type_codes for s in parts]) if parts else np.zeros(0, dtype=np.int32),
        half_lengths=np.concatenate([s.half_lengths for s in parts]) if parts else np.zeros(0),
        half_widths=np.concatenate([s.half_widths for s in parts]) if parts else np.zeros(0),
    )


def grid_offsets(num_worlds: int, pitch: float = GRID_PITCH) -> np.ndarray:
    """Row-major 2D grid with cols = ceil(sqrt(W))."""
    cols = int(np.ceil(np.sqrt(num_worlds)))
    idx = np.arange(num_worlds)
    return np.stack([(idx % cols) * pitch, (idx // cols) * pitch], axis=1).astype(np.float64)


def assign_scenes(num_worlds: int, num_scenes: int, mode: str, seed: int = 42) -> np.ndarray:
    """World -> scene index assignment.

    ``fixed`` tiles the pool in order; ``random_fill`` shuffles the pool with a
    counter-based generator (Philox) so a given seed reproduces across hosts.
    """
    if num_scenes == 0:
        raise ValueError("empty scene list")
    if mode == "fixed":
        return np.arange(num_worlds) % num_scenes
    if mode == "random_fill":
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0])))
        order = rng.permutation(num_scenes)
        return order[np.arange(num_worlds) % num_scenes]
    raise ValueError(f"unknown assignment mode {mode!r}")


def build_world_batch(
    scenes: list[ScenarioSpec],
    num_worlds: int,
    mode: str = "random_fill",
    seed: int = 42,
    gap: float = SEGMENT_GAP,
    bbox_half: float = 100.0,
) -> tuple[WorldBatch, np.ndarray]:
    """Assemble W worlds from a scene pool; scenes must be pre-centered/flattened.

    Returns the batch plus the world->scene assignment used (needed by the
    engine to place each world's agents).
    """
    assignment = assign_scenes(num_worlds, len(scenes), mode, seed)
    per_scene = [scene_segments(s, gap=gap, bbox_half=bbox_half) for s in scenes]
    p_max = max(1, max(len(per_scene[i]) for i in set(assignment.tolist())))

    W = num_worlds
    midpoints = np.zeros((W, p_max, 2))
    directions = np.zeros((W, p_max, 2))
    type_codes = np.zeros((W, p_max), dtype=np.int32)
    half_lengths = np.zeros((W, p_max))
    half_widths = np.zeros((W, p_max))
    mask = np.zeros((W, p_max), dtype=bool)
    ids = []
    for w, s_idx in enumerate(assignment):
        seg = per_scene[s_idx]
        n = len(seg)
        midpoints[w, :n] = seg.midpoints
        directions[w, :n] = seg.directions
        type_codes[w, :n] = seg.type_codes
        half_lengths[w, :n] = seg.half_lengths
        half_widths[w, :n] = seg.half_widths
        mask[w, :n] = True
        ids.append(scenes[s_idx].scenario_id)

    batch = WorldBatch(
        midpoints=midpoints,
        directions=directions,
        type_codes=type_codes,
        half_lengths=half_lengths,
        half_widths=half_widths,
        mask=mask,
        grid_offsets=grid_offsets(W),
        scenario_ids=ids,
    )
    return batch, assignment


# ---------- binary export ----------

def export_world_batch(batch: WorldBatch, path) -> None:
    """Write the batch as little-endian header + arrays + packed mask bits."""
    with open(path, "wb") as f:
        f.write(struct.pack("<III", batch.num_worlds, batch.p_max, EXPORT_VERSION))
        f.write(batch.midpoints.astype("<f4").tobytes())
        f.write(batch.directions.astype("<f4").tobytes())
        f.write(batch.type_codes.astype("<i4").tobytes())
        f.write(batch.half_lengths.astype("<f4").tobytes())
        f.write(batch.half_widths.astype("<f4").tobytes())
        f.write(np.packbits(batch.mask.reshape(-1)).tobytes())
        f.write(batch.grid_offsets.astype("<f4").tobytes())


def import_world_batch(path) -> WorldBatch:
    with open(path, "rb") as f:
        data = f.read()
    W, P, version = struct.unpack_from("<III", data, 0)
    if version != EXPORT_VERSION:
        raise ValueError(f"unsupported export version {version}")
    off = 12

    def take(count, dtype):
        nonlocal off
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=off)
        off += arr.nbytes
        return arr

    midpoints = take(W * P * 2, "<f4").reshape(W, P, 2).astype(np.float64)
    directions = take(W * P * 2, "<f4").reshape(W, P, 2).astype(np.float64)
    type_codes = take(W * P, "<i4").reshape(W, P).astype(np.int32)
    half_lengths = take(W * P, "<f4").reshape(W, P).astype(np.float64)
    half_widths = take(W * P, "<f4").reshape(W, P).astype(np.float64)
    nbits = W * P
    mask_bytes = take((nbits + 7) // 8, np.uint8)
    mask = np.unpackbits(mask_bytes, count=nbits).reshape(W, P).astype(bool)
    offsets = take(W * 2, "<f4").reshape(W, 2).astype(np.float64)
    return WorldBatch(midpoints, directions, type_codes, half_lengths, half_widths,
                      mask, offsets, scenario_ids=["?"] * W)
