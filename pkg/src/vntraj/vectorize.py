"""Scene -> vectorized polyline subgraphs.

Pipeline: agent-frame transform, box clipping, 2 m resampling of map
polylines, inversion of each polyline into vector nodes, and feature packing.
Each node row is ``(p_start, p_end, f)`` with ``f`` laid out as

    [0] timestamp (s, latest = 0)   [1:3] velocity   [3:5] acceleration
    [5] yaw                          [6] maxspeed     [7] priority   [8] available

Agent kinds use slots 0-5, lanes use 6-8, crosswalks none.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np

from vntraj.scene import DT, AgentTrack, Crosswalk, Lane, Scene, State, wrap_angle

FEATURE_DIM = 9
NODE_DIM = 2 + 2 + FEATURE_DIM + 4
BOX_HALF_SIZE = 60.0
RESAMPLE_STEP = 2.0


class PolylineKind(enum.IntEnum):
    LANE = 0
    CROSSWALK = 1
    TARGET_AGENT = 2
    OTHER_AGENT = 3

    def onehot(self) -> np.ndarray:
        v = np.zeros(4)
        v[int(self)] = 1.0
        return v


class VectorNode(NamedTuple):
    p_start: tuple[float, float]
    p_end: tuple[float, float]
    f: tuple[float, ...]


@dataclass(frozen=True)
class Frame:
    """Rigid frame: local = R(-yaw) (world - origin)."""

    origin: tuple[float, float] = (0.0, 0.0)
    yaw: float = 0.0

    def _rot(self, angle: float) -> np.ndarray:
        c, s = math.cos(angle), math.sin(angle)
        return np.array([[c, -s], [s, c]])

    def to_local(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return (p - np.asarray(self.origin)) @ self._rot(-self.yaw).T

    def to_world(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p @ self._rot(self.yaw).T + np.asarray(self.origin)

    def vec_to_local(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=np.float64) @ self._rot(-self.yaw).T


@dataclass(frozen=True)
class PolylineSubgraph:
    kind: PolylineKind
    p_start: np.ndarray
    p_end: np.ndarray
    features: np.ndarray

    @property
    def kind_onehot(self) -> np.ndarray:
        return self.kind.onehot()

    @property
    def num_nodes(self) -> int:
        return len(self.p_start)

    @property
    def nodes(self) -> list[VectorNode]:
        return [VectorNode(tuple(a), tuple(b), tuple(f))
                for a, b, f in zip(self.p_start, self.p_end, self.features)]

    def node_matrix(self) -> np.ndarray:
        """Encoder input rows ``p_start | p_end | f | kind one-hot`` (width 17)."""
        onehot = np.broadcast_to(self.kind_onehot, (self.num_nodes, 4))
        return np.hstack([self.p_start, self.p_end, self.features, onehot])


@dataclass(frozen=True)
class VectorizedScene:
    scene_id: str
    subgraphs: tuple[PolylineSubgraph, ...]
    target_index: int
    frame: Frame

    def to_json(self) -> str:
        return json.dumps({
            "scene_id": self.scene_id,
            "target_index": self.target_index,
            "frame": {"origin": list(self.frame.origin), "yaw": self.frame.yaw},
            "subgraphs": [{
                "kind": sg.kind.name,
                "kind_onehot": sg.kind_onehot.tolist(),
                "nodes": [{"p_start": list(n.p_start), "p_end": list(n.p_end), "f": list(n.f)}
                          for n in sg.nodes],
            } for sg in self.subgraphs],
        }, separators=(",", ":"))


# ---------------------------------------------------------------- frame


def agent_frame_transform(scene: Scene) -> tuple[Scene, Frame]:
    """Move the target's last observed state to the origin, heading along +x.

    Returns the transformed scene and the frame that maps local coordinates
    back to the world (``frame.to_world``).
    """
    target = scene.target
    if not target.states:
        raise ValueError(f"scene {scene.scene_id!r}: target has no past states")
    last = target.states[-1]
    frame = Frame((last.x, last.y), last.yaw)

    def tr_track(track: AgentTrack) -> AgentTrack:
        if not track.states:
            return track
        arr = np.array([s[1:] for s in track.states])
        pos = frame.to_local(arr[:, 0:2])
        vel = frame.vec_to_local(arr[:, 2:4])
        acc = frame.vec_to_local(arr[:, 4:6])
        yaw = np.atleast_1d(wrap_angle(arr[:, 6] - frame.yaw))
        states = tuple(State(s.t, *map(float, (p[0], p[1], v[0], v[1], a[0], a[1], w)))
                       for s, p, v, a, w in zip(track.states, pos, vel, acc, yaw))
        return replace(track, states=states)

    def pts(points):
        return tuple((float(x), float(y)) for x, y in frame.to_local(np.asarray(points).reshape(-1, 2)))

    tracks = list(tr_track(t) for t in scene.tracks)
    # the defining state is exactly the origin, not merely within rounding
    idx = next(i for i, t in enumerate(tracks) if t.is_target)
    fixed = tracks[idx].states[-1]._replace(x=0.0, y=0.0, yaw=0.0)
    tracks[idx] = replace(tracks[idx], states=tracks[idx].states[:-1] + (fixed,))
    tracks = tuple(tracks)
    lanes = tuple(replace(ln, points=pts(ln.points)) for ln in scene.lanes)
    cws = tuple(replace(cw, polygon=pts(cw.polygon)) for cw in scene.crosswalks)
    future = None if scene.ground_truth_future is None else pts(scene.ground_truth_future)
    return replace(scene, tracks=tracks, lanes=lanes, crosswalks=cws, ground_truth_future=future), frame


# ---------------------------------------------------------------- clipping


def _clip_segment(p: np.ndarray, q: np.ndarray, h: float) -> tuple[float, float] | None:
    """Liang-Barsky clip of p + t (q - p), t in [0, 1], against [-h, h]^2."""
    t0, t1 = 0.0, 1.0
    d = q - p
    for axis in range(2):
        for sign in (-1.0, 1.0):
            # constraint: sign * (p + t d) <= h
            num = h - sign * p[axis]
            den = sign * d[axis]
            if den == 0.0:
                if num < 0.0:
                    return None
                continue
            t = num / den
            if den > 0.0:
                t1 = min(t1, t)
            else:
                t0 = max(t0, t)
            if t0 > t1:
                return None
    return t0, t1


def clip_polyline(points, half_size: float = BOX_HALF_SIZE) -> list[np.ndarray]:
    """Clip an open polyline to the closed box; re-entry starts a new piece."""
    pts = np.asarray(points, dtype=np.float64)
    pieces: list[list[np.ndarray]] = []
    current: list[np.ndarray] | None = None
    for a, b in zip(pts[:-1], pts[1:]):
        clip = _clip_segment(a, b, half_size)
        if clip is None:
            current = None
            continue
        t0, t1 = clip
        start = a if t0 == 0.0 else a + t0 * (b - a)
        end = b if t1 == 1.0 else a + t1 * (b - a)
        if current is None or t0 > 0.0:
            current = [start]
            pieces.append(current)
        if np.linalg.norm(end - current[-1]) > 1e-9:
            current.append(end)
        if t1 < 1.0:
            current = None
    return [np.array(p) for p in pieces if len(p) >= 2]


def _in_box(x: float, y: float, h: float) -> bool:
    return -h <= x <= h and -h <= y <= h


def bbox_filter(scene: Scene, half_size: float = BOX_HALF_SIZE) -> Scene:
    """Clip map polylines to the box around the origin and drop out-of-box states.

    Crosswalk rings that leave the box become open chains (``closed=False``).
    """
    lanes = []
    for ln in scene.lanes:
        for piece in clip_polyline(ln.points, half_size):
            lanes.append(replace(ln, points=tuple(map(tuple, piece.tolist()))))
    cws = []
    for cw in scene.crosswalks:
        ring = np.asarray(cw.polygon, dtype=np.float64)
        if not cw.closed:
            chains = clip_polyline(ring, half_size)
        elif all(_in_box(x, y, half_size) for x, y in ring):
            cws.append(cw)
            continue
        else:
            if np.linalg.norm(ring[-1] - ring[0]) <= 1e-9:
                ring = ring[:-1]
            # start the walk outside the box so an in-box run is never cut at the seam
            first_out = next(i for i, (x, y) in enumerate(ring) if not _in_box(x, y, half_size))
            ring = np.roll(ring, -first_out, axis=0)
            chains = clip_polyline(np.vstack([ring, ring[:1]]), half_size)
        cws.extend(Crosswalk(tuple(map(tuple, c.tolist())), closed=False) for c in chains)
    tracks = tuple(replace(tr, states=tuple(s for s in tr.states if _in_box(s.x, s.y, half_size)))
                   for tr in scene.tracks)
    return replace(scene, tracks=tracks, lanes=tuple(lanes), crosswalks=tuple(cws))


# ---------------------------------------------------------------- resampling


def resample_polyline(points, d: float = RESAMPLE_STEP) -> np.ndarray:
    """Equally spaced points along the polyline with spacing L / ceil(L / d) <= d.

    First and last input points are reproduced exactly.
    """
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) < 2:
        raise ValueError("resampling needs at least 2 points")
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total <= 1e-9:
        raise ValueError(f"degenerate polyline (length {total:.3g} m)")
    n = max(1, math.ceil(total / d - 1e-9))
    targets = np.arange(n + 1) * (total / n)
    k = np.clip(np.searchsorted(cum, targets, side="right") - 1, 0, len(seg) - 1)
    keep = seg[k] > 0
    frac = np.where(keep, (targets - cum[k]) / np.where(keep, seg[k], 1.0), 0.0)
    out = pts[k] + frac[:, None] * (pts[k + 1] - pts[k])
    out[0] = pts[0]
    out[-1] = pts[-1]
    return out


# ---------------------------------------------------------------- packing / inversion


def pack_features(kind: PolylineKind, **attrs) -> np.ndarray:
    """Node feature vector for ``kind``.

    Agent kinds take ``t`` (seconds), ``vx``, ``vy``, ``ax``, ``ay``, ``yaw``;
    LANE takes ``maxspeed``, ``priority``, ``available``; CROSSWALK takes nothing.
    """
    f = np.zeros(FEATURE_DIM)
    if kind in (PolylineKind.TARGET_AGENT, PolylineKind.OTHER_AGENT):
        f[0:6] = [attrs["t"], attrs["vx"], attrs["vy"], attrs["ax"], attrs["ay"], attrs["yaw"]]
    elif kind == PolylineKind.LANE:
        f[6:9] = [attrs["maxspeed"], attrs["priority"], 1.0 if attrs["available"] else 0.0]
    elif attrs:
        raise ValueError(f"{kind.name} takes no attributes, got {sorted(attrs)}")
    if not np.isfinite(f).all():
        raise ValueError(f"non-finite feature for {kind.name}: {f}")
    return f


def invert_polyline(points, kind: PolylineKind, source_features: np.ndarray) -> PolylineSubgraph:
    """Turn P points into P - 1 vector nodes.

    ``source_features`` has one packed row per point, or a single row shared by
    all points; node ``i`` takes the row of its end point ``i + 1``.
    """
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) < 2:
        raise ValueError("a polyline needs at least 2 points to form a node")
    feats = np.asarray(source_features, dtype=np.float64)
    if feats.ndim == 1:
        feats = np.broadcast_to(feats, (len(pts), FEATURE_DIM))
    return PolylineSubgraph(kind, pts[:-1].copy(), pts[1:].copy(), np.array(feats[1:]))


def _track_subgraph(track: AgentTrack, kind: PolylineKind) -> PolylineSubgraph:
    feats = np.array([pack_features(kind, t=s.t * DT, vx=s.vx, vy=s.vy, ax=s.ax, ay=s.ay, yaw=s.yaw)
                      for s in track.states])
    return invert_polyline(track.positions(), kind, feats)


def vectorize_scene(scene: Scene, half_size: float = BOX_HALF_SIZE,
                    d: float = RESAMPLE_STEP) -> VectorizedScene:
    local, frame = agent_frame_transform(scene)
    boxed = bbox_filter(local, half_size)
    subgraphs: list[PolylineSubgraph] = []
    target_index = -1
    for tr in boxed.tracks:
        if len(tr.states) < 2:
            if tr.is_target:
                raise ValueError(f"scene {scene.scene_id!r}: target needs >= 2 in-box states")
            continue
        if tr.is_target:
            target_index = len(subgraphs)
        subgraphs.append(_track_subgraph(tr, PolylineKind.TARGET_AGENT if tr.is_target
                                         else PolylineKind.OTHER_AGENT))
    for ln in boxed.lanes:
        f = pack_features(PolylineKind.LANE, maxspeed=ln.maxspeed, priority=ln.priority, available=ln.available)
        subgraphs.append(invert_polyline(resample_polyline(ln.points, d), PolylineKind.LANE, f))
    for cw in boxed.crosswalks:
        ring = np.asarray(cw.polygon, dtype=np.float64)
        if cw.closed and np.linalg.norm(ring[-1] - ring[0]) > 1e-9:
            ring = np.vstack([ring, ring[:1]])
        subgraphs.append(invert_polyline(resample_polyline(ring, d), PolylineKind.CROSSWALK,
                                         np.zeros(FEATURE_DIM)))
    return VectorizedScene(scene.scene_id, tuple(subgraphs), target_index, frame)


def vectorize_many(scenes: Sequence[Scene]) -> list[VectorizedScene]:
    return [vectorize_scene(s) for s in scenes]
