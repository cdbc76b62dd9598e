"""Raw scenes: types, JSON (de)serialization, and a seeded synthetic generator.

Timestep is 0.2 s, so 25 steps cover 5 s of past or future.  Past states use
step indices ``t <= 0`` with ``t = 0`` the latest observation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

DT = 0.2
PAST_LEN = 25
FUTURE_LEN = 25


class SceneError(ValueError):
    """Base class for scene loading problems; carries scene id and field path."""

    def __init__(self, message: str, scene_id: str | None = None, path: str | None = None):
        self.scene_id = scene_id
        self.path = path
        where = ", ".join(x for x in (scene_id and f"scene {scene_id!r}", path and f"field {path}") if x)
        super().__init__(f"{message} ({where})" if where else message)


class SceneParseError(SceneError):
    pass


class SceneSchemaError(SceneError):
    pass


class SceneInvariantError(SceneSchemaError):
    pass


class State(NamedTuple):
    t: int
    x: float
    y: float
    vx: float
    vy: float
    ax: float
    ay: float
    yaw: float


@dataclass(frozen=True)
class AgentTrack:
    agent_id: int
    states: tuple[State, ...]
    is_target: bool = False

    def positions(self) -> np.ndarray:
        return np.array([(s.x, s.y) for s in self.states], dtype=np.float64).reshape(-1, 2)


@dataclass(frozen=True)
class Lane:
    points: tuple[tuple[float, float], ...]
    maxspeed: float
    priority: int
    available: bool


@dataclass(frozen=True)
class Crosswalk:
    """Crosswalk ring; ``closed=False`` marks an open chain left by box clipping."""

    polygon: tuple[tuple[float, float], ...]
    closed: bool = True


@dataclass(frozen=True)
class Scene:
    scene_id: str
    tracks: tuple[AgentTrack, ...]
    lanes: tuple[Lane, ...] = ()
    crosswalks: tuple[Crosswalk, ...] = ()
    ground_truth_future: tuple[tuple[float, float], ...] | None = None
    past_len: int = PAST_LEN
    future_len: int = FUTURE_LEN

    @property
    def target(self) -> AgentTrack:
        return next(tr for tr in self.tracks if tr.is_target)

    def future_array(self) -> np.ndarray:
        if self.ground_truth_future is None:
            raise ValueError(f"scene {self.scene_id!r} has no ground-truth future")
        return np.array(self.ground_truth_future, dtype=np.float64)


# ---------------------------------------------------------------- validation


def _segments_intersect(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return 0 if abs(v) < 1e-12 else (1 if v > 0 else -1)

    def on_seg(a, b, c):
        return (min(a[0], b[0]) - 1e-12 <= c[0] <= max(a[0], b[0]) + 1e-12
                and min(a[1], b[1]) - 1e-12 <= c[1] <= max(a[1], b[1]) + 1e-12)

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    return ((o1 == 0 and on_seg(p1, p2, q1)) or (o2 == 0 and on_seg(p1, p2, q2))
            or (o3 == 0 and on_seg(q1, q2, p1)) or (o4 == 0 and on_seg(q1, q2, p2)))


def ring_is_simple(points: Sequence[tuple[float, float]]) -> bool:
    n = len(points)
    edges = [(points[i], points[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_intersect(*edges[i], *edges[j]):
                return False
    return True


def validate_scene(scene: Scene) -> None:
    sid = scene.scene_id
    targets = [i for i, tr in enumerate(scene.tracks) if tr.is_target]
    if len(targets) != 1:
        raise SceneInvariantError(f"expected exactly one target track, found {len(targets)}", sid, "tracks")
    for i, tr in enumerate(scene.tracks):
        base = f"tracks[{i}]"
        if not tr.states and tr.is_target:
            raise SceneInvariantError("target track has no past states", sid, f"{base}.states")
        if len(tr.states) > scene.past_len:
            raise SceneInvariantError(f"past longer than {scene.past_len} steps", sid, f"{base}.states")
        ts = [s.t for s in tr.states]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise SceneInvariantError("state steps must be strictly increasing", sid, f"{base}.states")
        if any(b != a + 1 for a, b in zip(ts, ts[1:])):
            raise SceneInvariantError("gaps in track states are not allowed", sid, f"{base}.states")
        if ts and (ts[-1] > 0 or ts[0] <= -scene.past_len):
            raise SceneInvariantError("state steps outside the past window", sid, f"{base}.states")
        for j, s in enumerate(tr.states):
            if not all(math.isfinite(v) for v in s[1:]):
                raise SceneInvariantError("non-finite state value", sid, f"{base}.states[{j}]")
            if not -math.pi < s.yaw <= math.pi:
                raise SceneInvariantError("yaw outside (-pi, pi]", sid, f"{base}.states[{j}].yaw")
    for i, lane in enumerate(scene.lanes):
        if len(lane.points) < 2:
            raise SceneInvariantError("lane needs at least 2 points", sid, f"lanes[{i}].points")
        pts = np.asarray(lane.points)
        if np.any(np.linalg.norm(np.diff(pts, axis=0), axis=1) <= 1e-9):
            raise SceneInvariantError("coincident consecutive lane points", sid, f"lanes[{i}].points")
    for i, cw in enumerate(scene.crosswalks):
        if not cw.closed:
            if len(cw.polygon) < 2:
                raise SceneInvariantError("crosswalk chain needs at least 2 points", sid, f"crosswalks[{i}].points")
            continue
        if len(cw.polygon) < 3:
            raise SceneInvariantError("crosswalk needs at least 3 points", sid, f"crosswalks[{i}].points")
        if not ring_is_simple(cw.polygon):
            raise SceneInvariantError("crosswalk ring self-intersects", sid, f"crosswalks[{i}].points")
    if scene.ground_truth_future is not None and len(scene.ground_truth_future) != scene.future_len:
        raise SceneInvariantError(
            f"future has {len(scene.ground_truth_future)} rows, expected {scene.future_len}", sid, "future")


# ---------------------------------------------------------------- JSON


def scene_to_dict(scene: Scene) -> dict:
    d = {
        "scene_id": scene.scene_id,
        "past_len": scene.past_len,
        "future_len": scene.future_len,
        "tracks": [
            {"agent_id": tr.agent_id, "is_target": tr.is_target,
             "states": [{"t": s.t, "x": s.x, "y": s.y, "vx": s.vx, "vy": s.vy,
                         "ax": s.ax, "ay": s.ay, "yaw": s.yaw} for s in tr.states]}
            for tr in scene.tracks
        ],
        "lanes": [{"points": [list(p) for p in ln.points], "maxspeed": ln.maxspeed,
                   "priority": ln.priority, "available": ln.available} for ln in scene.lanes],
        "crosswalks": [{"points": [list(p) for p in cw.polygon]} for cw in scene.crosswalks],
    }
    if scene.ground_truth_future is not None:
        d["future"] = [list(p) for p in scene.ground_truth_future]
    return d


def _req(obj, key, kind, sid, path):
    where = f"{path}.{key}" if path else key
    if not isinstance(obj, dict) or key not in obj:
        raise SceneSchemaError(f"missing field {key!r}", sid, where)
    v = obj[key]
    ok = isinstance(v, kind) and not (kind in (int, (int, float)) and isinstance(v, bool))
    if not ok:
        raise SceneSchemaError(f"field {key!r} has wrong type {type(v).__name__}", sid, where)
    return v


def _point(p, sid, path) -> tuple[float, float]:
    if not isinstance(p, list) or len(p) != 2 or not all(
            isinstance(c, (int, float)) and not isinstance(c, bool) for c in p):
        raise SceneSchemaError("point must be [x, y]", sid, path)
    return (float(p[0]), float(p[1]))


def scene_from_dict(d: dict) -> Scene:
    if not isinstance(d, dict):
        raise SceneSchemaError("scene entry must be an object")
    sid = _req(d, "scene_id", str, None, "")
    num = (int, float)
    tracks = []
    for i, tr in enumerate(_req(d, "tracks", list, sid, "")):
        base = f"tracks[{i}]"
        states = []
        for j, s in enumerate(_req(tr, "states", list, sid, base)):
            sp = f"{base}.states[{j}]"
            states.append(State(
                _req(s, "t", int, sid, sp),
                *(float(_req(s, k, num, sid, sp)) for k in ("x", "y", "vx", "vy", "ax", "ay", "yaw"))))
        tracks.append(AgentTrack(_req(tr, "agent_id", int, sid, base), tuple(states),
                                 _req(tr, "is_target", bool, sid, base)))
    lanes = []
    for i, ln in enumerate(_req(d, "lanes", list, sid, "")):
        base = f"lanes[{i}]"
        pts = tuple(_point(p, sid, f"{base}.points[{k}]") for k, p in enumerate(_req(ln, "points", list, sid, base)))
        lanes.append(Lane(pts, float(_req(ln, "maxspeed", num, sid, base)),
                          _req(ln, "priority", int, sid, base), _req(ln, "available", bool, sid, base)))
    cws = []
    for i, cw in enumerate(_req(d, "crosswalks", list, sid, "")):
        base = f"crosswalks[{i}]"
        cws.append(Crosswalk(tuple(_point(p, sid, f"{base}.points[{k}]")
                                   for k, p in enumerate(_req(cw, "points", list, sid, base)))))
    future = None
    if "future" in d:
        fut = _req(d, "future", list, sid, "")
        future = tuple(_point(p, sid, f"future[{k}]") for k, p in enumerate(fut))
    scene = Scene(sid, tuple(tracks), tuple(lanes), tuple(cws), future,
                  _req(d, "past_len", int, sid, ""), _req(d, "future_len", int, sid, ""))
    validate_scene(scene)
    return scene


def dumps_scenes(scenes: Sequence[Scene]) -> str:
    return json.dumps({"scenes": [scene_to_dict(s) for s in scenes]}, separators=(",", ":"))


def loads_scenes(text: str) -> list[Scene]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneParseError(f"malformed JSON: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("scenes"), list):
        raise SceneSchemaError("top level must be an object with a 'scenes' list")
    return [scene_from_dict(d) for d in doc["scenes"]]


def load_scenes(path: str | Path) -> list[Scene]:
    return loads_scenes(Path(path).read_text(encoding="utf-8"))


def save_scenes(scenes: Sequence[Scene], path: str | Path) -> None:
    for s in scenes:
        validate_scene(s)
    Path(path).write_text(dumps_scenes(scenes), encoding="utf-8")


# ---------------------------------------------------------------- synthetic generator


@dataclass(frozen=True)
class ShiftConfig:
    """Synthetic dataset recipe.

    ``shift_level`` scales speed and curvature by ``1 + shift`` and the
    observation noise std by ``1 + 2 * shift``; zero gives the in-distribution
    generator.
    """

    seed: int = 0
    n_scenes: int = 100
    shift_level: float = 0.0

    def __post_init__(self):
        if self.n_scenes < 1:
            raise ValueError(f"n_scenes must be >= 1, got {self.n_scenes}")
        if not 0.0 <= self.shift_level <= 1.0:
            raise ValueError(f"shift_level must lie in [0, 1], got {self.shift_level}")


@dataclass(frozen=True)
class GeneratorParams:
    speed_range: tuple[float, float] = (4.0, 11.0)
    turn_speed_range: tuple[float, float] = (3.0, 7.0)
    curvature_range: tuple[float, float] = (0.04, 0.09)
    accel_range: tuple[float, float] = (-0.6, 0.6)
    max_lateral_accel: float = 6.0
    pos_noise: float = 0.02
    vel_noise: float = 0.05
    acc_noise: float = 0.1
    yaw_noise: float = 0.005
    maneuver_probs: dict = field(default_factory=lambda: {
        "stationary": 0.15, "straight": 0.45, "left": 0.2, "right": 0.2})
    lane_piece: float = 20.0

    def shifted(self, shift: float) -> "GeneratorParams":
        k, n = 1.0 + shift, 1.0 + 2.0 * shift
        return GeneratorParams(
            speed_range=tuple(v * k for v in self.speed_range),
            turn_speed_range=tuple(v * k for v in self.turn_speed_range),
            curvature_range=tuple(v * k for v in self.curvature_range),
            accel_range=self.accel_range, max_lateral_accel=self.max_lateral_accel,
            pos_noise=self.pos_noise * n, vel_noise=self.vel_noise * n,
            acc_noise=self.acc_noise * n, yaw_noise=self.yaw_noise * n,
            maneuver_probs=dict(self.maneuver_probs), lane_piece=self.lane_piece)


def wrap_angle(a):
    """Map angles to (-pi, pi]."""
    out = np.mod(np.asarray(a, dtype=np.float64) + np.pi, 2.0 * np.pi) - np.pi
    out = np.where(out <= -np.pi, out + 2.0 * np.pi, out)
    return float(out) if np.ndim(out) == 0 else out


class _Path:
    """Straight approach along +x to the junction at the origin, then an optional
    quarter arc of radius ``radius`` (sign = turn direction), then straight."""

    def __init__(self, turn: int, radius: float):
        self.turn = turn
        self.radius = radius
        self.arc_len = 0.5 * math.pi * radius if turn else 0.0

    def at(self, s: np.ndarray):
        s = np.asarray(s, dtype=np.float64)
        x = np.where(s <= 0, s, 0.0)
        y = np.zeros_like(s)
        heading = np.zeros_like(s)
        curv = np.zeros_like(s)
        if not self.turn:
            return np.stack([s, y], -1), heading, curv
        r, g = self.radius, self.turn
        on_arc = (s > 0) & (s <= self.arc_len)
        phi = np.clip(s, 0.0, self.arc_len) / r
        arc_x, arc_y = r * np.sin(phi), g * r * (1.0 - np.cos(phi))
        after = s - self.arc_len
        x = np.where(s <= 0, s, np.where(on_arc, arc_x, r))
        y = np.where(s <= 0, 0.0, np.where(on_arc, arc_y, g * (r + after)))
        heading = np.where(s <= 0, 0.0, g * phi)
        curv = np.where(on_arc, g / r, 0.0)
        return np.stack([x, y], -1), heading, curv


def _arc_points(cx, cy, r, a0, a1, step=2.0):
    n = max(2, int(math.ceil(abs(a1 - a0) * r / step)) + 1)
    a = np.linspace(a0, a1, n)
    return np.stack([cx + r * np.cos(a), cy + r * np.sin(a)], -1)


def _split_pieces(points: np.ndarray, piece: float) -> list[np.ndarray]:
    """Cut a densified polyline into consecutive pieces of about ``piece`` meters."""
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    n = max(1, int(round(total / piece)))
    cuts = np.linspace(0.0, total, n + 1)
    pieces = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        inner = points[(cum > a + 1e-9) & (cum < b - 1e-9)]
        pa, pb = np.interp(a, cum, points[:, 0]), np.interp(a, cum, points[:, 1])
        qa, qb = np.interp(b, cum, points[:, 0]), np.interp(b, cum, points[:, 1])
        pieces.append(np.vstack([[pa, pb], inner, [qa, qb]]))
    return pieces


def _straight(p0, p1, step=5.0):
    n = max(2, int(math.ceil(np.hypot(p1[0] - p0[0], p1[1] - p0[1]) / step)) + 1)
    return np.stack([np.linspace(p0[0], p1[0], n), np.linspace(p0[1], p1[1], n)], -1)


def _clipped_noise(rng, std, size):
    return np.clip(rng.normal(0.0, std, size=size), -2.0 * std, 2.0 * std)


def _make_states(rng, params, pos, vel, acc, yaw, steps) -> tuple[State, ...]:
    n = len(steps)
    pos = pos + _clipped_noise(rng, params.pos_noise, (n, 2))
    vel = vel + _clipped_noise(rng, params.vel_noise, (n, 2))
    acc = acc + _clipped_noise(rng, params.acc_noise, (n, 2))
    yaw = wrap_angle(yaw + _clipped_noise(rng, params.yaw_noise, n))
    return tuple(State(int(t), float(p[0]), float(p[1]), float(v[0]), float(v[1]),
                       float(a[0]), float(a[1]), float(w))
                 for t, p, v, a, w in zip(steps, pos, vel, acc, yaw))


def _simulate_target(rng, params: GeneratorParams, maneuver: str):
    """Return local-frame kinematics for steps -24..25 following the maneuver path."""
    steps = np.arange(-(PAST_LEN - 1), FUTURE_LEN + 1)
    tt = steps * DT
    if maneuver == "stationary":
        s0 = rng.uniform(-30.0, -5.0)
        path = _Path(0, 1.0)
        s = np.full(len(steps), s0)
        v = np.zeros(len(steps))
        a_long = np.zeros(len(steps))
    else:
        turn = {"straight": 0, "left": 1, "right": -1}[maneuver]
        lo, hi = params.turn_speed_range if turn else params.speed_range
        v0 = rng.uniform(lo, hi)
        a = rng.uniform(*params.accel_range)
        # speed profile bounded below by zero
        v = np.maximum(v0 + a * tt, 0.0)
        a_long = np.where(v > 0, a, 0.0)
        disp = np.where(v0 + a * tt > 0, v0 * tt + 0.5 * a * tt ** 2,
                        -v0 ** 2 / (2 * a) if a < 0 else 0.0)
        radius = 1.0
        if turn:
            kappa = rng.uniform(*params.curvature_range)
            vmax = float(v.max())
            kappa = min(kappa, params.max_lateral_accel / max(vmax, 1e-6) ** 2)
            radius = 1.0 / kappa
        path = _Path(turn, radius)
        s0 = rng.uniform(-1.0, 0.2) * max(v0 * 5.0, 10.0)
        s = s0 + disp
    pos, heading, curv = path.at(s)
    tangent = np.stack([np.cos(heading), np.sin(heading)], -1)
    normal = np.stack([-np.sin(heading), np.cos(heading)], -1)
    vel = v[:, None] * tangent
    acc = a_long[:, None] * tangent + (v ** 2 * curv)[:, None] * normal
    return steps, pos, vel, acc, heading, path


def _rotate(points: np.ndarray, theta: float, offset: np.ndarray) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    R = np.array([[c, -s], [s, c]])
    return points @ R.T + offset


def _generate_one(rng: np.random.Generator, params: GeneratorParams, scene_id: str) -> Scene:
    names = list(params.maneuver_probs)
    probs = np.array([params.maneuver_probs[k] for k in names])
    maneuver = names[rng.choice(len(names), p=probs / probs.sum())]
    steps, pos, vel, acc, heading, path = _simulate_target(rng, params, maneuver)

    # lane layout in the junction frame
    r_left = path.radius if path.turn == 1 else 1.0 / rng.uniform(*params.curvature_range)
    r_right = path.radius if path.turn == -1 else 1.0 / rng.uniform(*params.curvature_range)
    reach = 70.0
    layouts = {
        "approach": _straight((-reach, 0.0), (0.0, 0.0)),
        "through": _straight((0.0, 0.0), (reach, 0.0)),
        "left": np.vstack([_arc_points(0.0, r_left, r_left, -0.5 * math.pi, 0.0)[:-1],
                           _straight((r_left, r_left), (r_left, r_left + reach * 0.6))]),
        "right": np.vstack([_arc_points(0.0, -r_right, r_right, 0.5 * math.pi, 0.0)[:-1],
                            _straight((r_right, -r_right), (r_right, -r_right - reach * 0.6))]),
        "parallel": _straight((-reach, -3.5), (reach, -3.5)),
        "oncoming": _straight((reach, 3.5), (-reach, 3.5)),
        "cross": _straight((12.0, -reach * 0.6), (12.0, reach * 0.6)),
        "cross_back": _straight((18.0, reach * 0.6), (18.0, -reach * 0.6)),
    }
    required = ["approach", "through"] + ({1: ["left"], -1: ["right"]}.get(path.turn, []))
    optional = [k for k in layouts if k not in required]
    n_extra = int(rng.integers(max(0, 3 - len(required)), 8 - len(required) + 1))
    extra = [optional[i] for i in sorted(rng.choice(len(optional), size=n_extra, replace=False))]
    chosen = required + extra

    theta = float(rng.uniform(-math.pi, math.pi))
    origin = rng.uniform(-1000.0, 1000.0, size=2)

    lanes = []
    for key in chosen:
        maxspeed = float(rng.choice([8.33, 11.11, 13.89, 16.67]))
        priority = int(rng.integers(0, 3))
        available = bool(rng.random() < 0.8)
        for piece in _split_pieces(layouts[key], params.lane_piece):
            world = _rotate(piece, theta, origin)
            lanes.append(Lane(tuple((float(x), float(y)) for x, y in world), maxspeed, priority, available))

    crosswalks = []
    for k in range(int(rng.integers(0, 3))):
        x0 = -6.0 - 4.0 * k - rng.uniform(0.0, 6.0)
        rect = np.array([[x0, -7.0], [x0 + 4.0, -7.0], [x0 + 4.0, 7.0], [x0, 7.0]])
        world = _rotate(rect, theta, origin)
        crosswalks.append(Crosswalk(tuple((float(x), float(y)) for x, y in world)))

    past = slice(0, PAST_LEN)
    zero = np.zeros(2)
    tracks = [AgentTrack(0, _make_states(
        rng, params, _rotate(pos[past], theta, origin), _rotate(vel[past], theta, zero),
        _rotate(acc[past], theta, zero),
        heading[past] + theta, steps[past]), True)]
    future_w = _rotate(pos[PAST_LEN:], theta, origin) + _clipped_noise(rng, params.pos_noise, (FUTURE_LEN, 2))

    straight_lanes = {"approach": ((1, 0), 0.0), "through": ((1, 0), 0.0), "parallel": ((1, 0), -3.5),
                      "oncoming": ((-1, 0), 3.5), "cross": ((0, 1), 12.0), "cross_back": ((0, -1), 18.0)}
    hosts = [k for k in chosen if k in straight_lanes]
    present = pos[PAST_LEN - 1]
    for aid in range(1, int(rng.integers(1, 4)) + 1):
        (dx, dy), off = straight_lanes[hosts[int(rng.integers(len(hosts)))]]
        d = np.array([dx, dy], dtype=np.float64)
        speed = 0.0 if rng.random() < 0.25 else rng.uniform(*params.speed_range)
        along = rng.uniform(-35.0, 35.0)
        base = np.array([present[0] + along, off]) if dx else np.array([off, present[1] + along])
        n_states = PAST_LEN
        t = np.arange(-(n_states - 1), 1) * DT
        p = base + t[:, None] * speed * d
        tracks.append(AgentTrack(aid, _make_states(
            rng, params, _rotate(p, theta, origin), np.tile(_rotate(speed * d[None], theta, zero), (n_states, 1)),
            np.zeros((n_states, 2)), np.full(n_states, math.atan2(dy, dx) + theta),
            np.arange(-(n_states - 1), 1)), False))

    scene = Scene(scene_id, tuple(tracks), tuple(lanes), tuple(crosswalks),
                  tuple((float(x), float(y)) for x, y in future_w))
    validate_scene(scene)
    return scene


def generate_synthetic(cfg: ShiftConfig, params: GeneratorParams | None = None) -> list[Scene]:
    """Deterministic synthetic scenes; scene ``i`` depends only on (seed, i, shift)."""
    params = (params or GeneratorParams()).shifted(cfg.shift_level)
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.n_scenes)
    return [_generate_one(np.random.default_rng(ss), params, f"syn-{cfg.seed}-{i:05d}")
            for i, ss in enumerate(children)]


def maneuver_of(scene: Scene) -> str:
    """Coarse maneuver label of the target's future (used for diagnostics)."""
    tr = scene.target
    last = tr.states[-1]
    fut = scene.future_array()
    c, s = math.cos(-last.yaw), math.sin(-last.yaw)
    rel = fut - np.array([last.x, last.y])
    local = rel @ np.array([[c, s], [-s, c]])
    end = local[-1]
    if np.hypot(*end) < 2.0:
        return "stationary"
    ang = math.atan2(end[1], end[0])
    return "left" if ang > 0.35 else ("right" if ang < -0.35 else "straight")
