"""Deterministic 2D navigation world.

Occupancy-grid map, scripted pedestrians with gait phase, skeleton synthesis,
visibility and path queries, and the stepped simulation state. Everything here
is a pure function of its inputs; there is no hidden global state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from heapq import heappop, heappush
from typing import NamedTuple

import numpy as np
from scipy import ndimage

GRID_RES = 0.1          # m per occupancy cell
DEFAULT_DT = 0.25       # s per simulation step
AGENT_SPEED = 1.0       # m/s along chosen segments
AGENT_RADIUS = 0.2      # m, grid inflation for planning
COLLISION_RADIUS = 0.5  # m, center distance counted as contact
LOS_STEP = 0.05         # m, ray march sample spacing
STRIDE_LENGTH = 0.7     # m of travel per gait cycle
N_BEARINGS = 12
SECTOR_WIDTH = 2.0 * math.pi / N_BEARINGS
CANDIDATE_RADII = (0.75, 1.5, 2.25, 3.0)   # m
CANDIDATE_CLEARANCE = 0.3                  # m
SQRT2 = math.sqrt(2.0)


class NoPathError(Exception):
    """Start and goal are not connected on the inflated grid."""


class EpisodeInvalid(Exception):
    """An episode violates a structural invariant."""


# ---------------------------------------------------------------------------
# pedestrian scripts


@dataclass(frozen=True)
class Stand:
    position: tuple
    heading: float = 0.0


@dataclass(frozen=True)
class Pace:
    a: tuple
    b: tuple
    speed: float  # m/s


@dataclass(frozen=True)
class WalkPath:
    points: tuple  # ((x, y), ...) at least two vertices
    speed: float   # m/s
    loop: bool = False


@dataclass(frozen=True)
class GroupDiscuss:
    center: tuple
    radius: float      # m, ring radius
    member_index: int  # fixed 60 degree slot on the ring


@dataclass(frozen=True)
class Pedestrian:
    ped_id: int
    script: object
    activity: str
    body_scale: float = 1.0


class PedState(NamedTuple):
    position: np.ndarray  # (2,) m
    heading: float        # rad
    phase: float          # gait phase in [0, 1)


def _unit_heading(vec) -> float:
    return math.atan2(vec[1], vec[0])


def pedestrian_state_at(script, t: int, dt: float) -> PedState:
    """State of a scripted pedestrian at integer step t.

    Pure function of (script, t, dt). For Pace the state depends only on the
    position within the out-and-back cycle, so it is exactly periodic with
    period 2L / (speed * dt) steps. At the A endpoint (cycle position 0) the
    heading is the reflected direction: the pacer is mid-turnaround there,
    which also fixes the state at t = 0.
    """
    if isinstance(script, Stand):
        return PedState(np.asarray(script.position, dtype=float), float(script.heading), 0.0)

    if isinstance(script, GroupDiscuss):
        angle = script.member_index * (math.pi / 3.0)
        center = np.asarray(script.center, dtype=float)
        pos = center + script.radius * np.array([math.cos(angle), math.sin(angle)])
        return PedState(pos, _wrap_angle(angle + math.pi), 0.0)

    if isinstance(script, Pace):
        a = np.asarray(script.a, dtype=float)
        b = np.asarray(script.b, dtype=float)
        leg = float(np.linalg.norm(b - a))
        if leg == 0.0:
            return PedState(a, 0.0, 0.0)
        s = script.speed * t * dt
        u = math.fmod(s, 2.0 * leg)
        if u == 0.0:
            # turnaround at A: heading points back the way the return leg came
            return PedState(a.copy(), _unit_heading(a - b), 0.0)
        if u <= leg:
            pos = a + (u / leg) * (b - a)
            heading = _unit_heading(b - a)
        else:
            pos = b + ((u - leg) / leg) * (a - b)
            heading = _unit_heading(a - b)
        return PedState(pos, heading, (u / STRIDE_LENGTH) % 1.0)

    if isinstance(script, WalkPath):
        pts = np.asarray(script.points, dtype=float)
        if pts.shape[0] < 2:
            raise ValueError("WalkPath needs at least two vertices")
        if script.loop and not np.array_equal(pts[0], pts[-1]):
            pts = np.vstack([pts, pts[0]])   # close the circuit, no teleport
        seg = np.diff(pts, axis=0)
        seg_len = np.linalg.norm(seg, axis=1)
        if np.any(seg_len == 0.0):
            raise ValueError("WalkPath has a zero-length segment")
        cums = np.concatenate([[0.0], np.cumsum(seg_len)])
        total = float(cums[-1])
        s = script.speed * t * dt
        u = math.fmod(s, total) if script.loop else min(s, total)
        idx = int(np.searchsorted(cums, u, side="right")) - 1
        idx = min(max(idx, 0), len(seg_len) - 1)
        frac = (u - cums[idx]) / seg_len[idx]
        pos = pts[idx] + frac * seg[idx]
        return PedState(pos, _unit_heading(seg[idx]), (u / STRIDE_LENGTH) % 1.0)

    raise TypeError(f"unknown script type {type(script).__name__}")


def _wrap_angle(a: float) -> float:
    return math.atan2(math.sin(a), math.cos(a))


# ---------------------------------------------------------------------------
# skeleton synthesis (COCO joint order, overhead planar template)

COCO_JOINTS = (
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
)

# body-frame offsets (x forward, y left), mirror-symmetric about the x axis
_TEMPLATE = np.array([
    [0.15, 0.00],               # nose
    [0.13, 0.03], [0.13, -0.03],  # eyes
    [0.08, 0.07], [0.08, -0.07],  # ears
    [0.00, 0.20], [0.00, -0.20],  # shoulders
    [0.00, 0.28], [0.00, -0.28],  # elbows
    [0.05, 0.33], [0.05, -0.33],  # wrists
    [-0.05, 0.12], [-0.05, -0.12],  # hips
    [-0.02, 0.13], [-0.02, -0.13],  # knees
    [0.00, 0.14], [0.00, -0.14],    # ankles
])

# signed forward-swing amplitude per joint; contralateral arm/leg pairing
_SWING = np.zeros(17)
_SWING[7], _SWING[8] = 0.12, -0.12    # elbows
_SWING[9], _SWING[10] = 0.22, -0.22   # wrists
_SWING[13], _SWING[14] = -0.15, 0.15  # knees
_SWING[15], _SWING[16] = -0.28, 0.28  # ankles


def skeleton_at(position, heading: float, phase: float, body_scale: float = 1.0) -> np.ndarray:
    """17 world-frame keypoints (x, y, visibility=1) for a pedestrian state.

    Limb joints swing along the heading axis by a sinusoid of the gait phase;
    left and right limbs are in antiphase, so phase p and p + 0.5 swap the
    left/right displacements exactly.
    """
    local = _TEMPLATE * body_scale
    local = local.copy()
    local[:, 0] += _SWING * body_scale * math.sin(2.0 * math.pi * phase)
    c, s = math.cos(heading), math.sin(heading)
    rot = np.array([[c, -s], [s, c]])
    world = local @ rot.T + np.asarray(position, dtype=float)
    out = np.ones((17, 3))
    out[:, :2] = world
    return out


# ---------------------------------------------------------------------------
# map


class MapObject(NamedTuple):
    object_id: str
    label: str
    position: tuple  # (x, y) m


class WorldMap:
    """Axis-aligned bounds, rectangular obstacles, labelled point objects.

    The occupancy grid marks cells an obstacle overlaps with positive area.
    Clearance is the center-to-center distance transform of that grid, so it
    is quantized at the cell size.
    """

    def __init__(self, bounds, obstacles=(), objects=(), res: float = GRID_RES):
        x0, y0, x1, y1 = (float(v) for v in bounds)
        if not (x1 > x0 and y1 > y0):
            raise ValueError("bounds must have positive extent")
        self.bounds = (x0, y0, x1, y1)
        self.res = float(res)
        self.obstacles = [tuple(float(v) for v in ob) for ob in obstacles]
        for ob in self.obstacles:
            if not (ob[0] < ob[2] and ob[1] < ob[3]):
                raise ValueError(f"degenerate obstacle {ob}")
            if ob[0] < x0 or ob[1] < y0 or ob[2] > x1 or ob[3] > y1:
                raise ValueError(f"obstacle {ob} outside bounds")
        self.nx = max(1, int(round((x1 - x0) / self.res)))
        self.ny = max(1, int(round((y1 - y0) / self.res)))
        self.cells = np.zeros((self.ny, self.nx), dtype=bool)
        eps = 1e-9
        for ox0, oy0, ox1, oy1 in self.obstacles:
            ix_lo = max(0, int(math.floor((ox0 - x0) / self.res + eps)))
            ix_hi = min(self.nx - 1, int(math.ceil((ox1 - x0) / self.res - eps)) - 1)
            iy_lo = max(0, int(math.floor((oy0 - y0) / self.res + eps)))
            iy_hi = min(self.ny - 1, int(math.ceil((oy1 - y0) / self.res - eps)) - 1)
            if ix_hi >= ix_lo and iy_hi >= iy_lo:
                self.cells[iy_lo:iy_hi + 1, ix_lo:ix_hi + 1] = True
        if self.cells.any():
            self.clearance_m = ndimage.distance_transform_edt(~self.cells) * self.res
        else:
            self.clearance_m = np.full((self.ny, self.nx), np.inf)
        self._inflated = {}
        self.objects = [MapObject(str(o[0]), str(o[1]), (float(o[2][0]), float(o[2][1])))
                        if not isinstance(o, MapObject) else o for o in objects]
        for obj in self.objects:
            if not self.is_free(obj.position):
                raise ValueError(f"object {obj.object_id} not in free space")

    def cell_index(self, p):
        x0, y0, _, _ = self.bounds
        ix = int(math.floor((p[0] - x0) / self.res))
        iy = int(math.floor((p[1] - y0) / self.res))
        if 0 <= ix < self.nx and 0 <= iy < self.ny:
            return iy, ix
        return None

    def cell_center(self, iy: int, ix: int) -> np.ndarray:
        x0, y0, _, _ = self.bounds
        return np.array([x0 + (ix + 0.5) * self.res, y0 + (iy + 0.5) * self.res])

    def in_bounds(self, p) -> bool:
        x0, y0, x1, y1 = self.bounds
        return x0 <= p[0] < x1 and y0 <= p[1] < y1

    def is_free(self, p) -> bool:
        idx = self.cell_index(p)
        return idx is not None and not self.cells[idx]

    def clearance_at(self, p) -> float:
        idx = self.cell_index(p)
        if idx is None:
            return 0.0
        return float(self.clearance_m[idx])

    def occupied_points(self, pts: np.ndarray) -> np.ndarray:
        """Vectorized occupancy lookup; out of bounds counts as occupied."""
        x0, y0, _, _ = self.bounds
        ix = np.floor((pts[:, 0] - x0) / self.res).astype(np.int64)
        iy = np.floor((pts[:, 1] - y0) / self.res).astype(np.int64)
        oob = (ix < 0) | (ix >= self.nx) | (iy < 0) | (iy >= self.ny)
        ixc = np.clip(ix, 0, self.nx - 1)
        iyc = np.clip(iy, 0, self.ny - 1)
        return self.cells[iyc, ixc] | oob

    def inflated(self, radius: float) -> np.ndarray:
        """Blocked mask for a disc of the given radius (cached)."""
        key = round(radius, 6)
        if key not in self._inflated:
            self._inflated[key] = self.clearance_m <= radius
        return self._inflated[key]


def line_of_sight(wmap: WorldMap, a, b, step: float = LOS_STEP) -> bool:
    """True when the segment a-b crosses no occupied cell (a == b is trivially clear)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = float(np.linalg.norm(b - a))
    if d == 0.0:
        return True
    n = int(math.ceil(d / step)) + 1
    ts = np.linspace(0.0, 1.0, n)
    pts = a[None, :] + ts[:, None] * (b - a)[None, :]
    return not wmap.occupied_points(pts).any()


def raycast_depths(wmap: WorldMap, origin, angles: np.ndarray,
                   max_range: float = 10.0, step: float = LOS_STEP) -> np.ndarray:
    """First-hit distance per angle, marched at `step`; max_range when clear."""
    origin = np.asarray(origin, dtype=float)
    ts = np.arange(step, max_range + step * 0.5, step)
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    pts = origin[None, None, :] + ts[None, :, None] * dirs[:, None, :]
    occ = wmap.occupied_points(pts.reshape(-1, 2)).reshape(len(angles), len(ts))
    hit = occ.any(axis=1)
    first = occ.argmax(axis=1)
    return np.where(hit, ts[first], max_range)


# ---------------------------------------------------------------------------
# shortest path (8-connected Dijkstra on the inflated grid)

_NEIGHBORS = (
    (-1, -1, True), (-1, 0, False), (-1, 1, True),
    (0, -1, False), (0, 1, False),
    (1, -1, True), (1, 0, False), (1, 1, True),
)


def grid_path_length(n_straight: int, n_diag: int, res: float = GRID_RES) -> float:
    """Canonical cost of a grid path; shared with the test-side oracle so
    equal move counts give bit-equal lengths."""
    return n_straight * res + n_diag * (res * SQRT2)


def shortest_path(wmap: WorldMap, start, goal, radius: float = AGENT_RADIUS):
    """8-connected Dijkstra on cells inflated by the agent radius.

    Returns (polyline, length). The polyline is start, visited cell centers,
    goal; the length adds the two snap segments to the canonical grid cost.
    Costs are tracked as integer (straight, diagonal) move counts and compared
    through n_s + n_d*sqrt(2), so optimal counts are unique and reproducible.
    """
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    blocked = wmap.inflated(radius)
    s = wmap.cell_index(start)
    g = wmap.cell_index(goal)
    if s is None or g is None:
        raise NoPathError("start or goal outside map bounds")
    if blocked[s]:
        raise NoPathError(f"start {tuple(start)} blocked on inflated grid")
    if blocked[g]:
        raise NoPathError(f"goal {tuple(goal)} blocked on inflated grid")
    if s == g:
        return np.stack([start, goal]), float(np.hypot(*(goal - start)))

    ny, nx = blocked.shape
    dist = np.full((ny, nx), np.inf)
    n_s = np.zeros((ny, nx), dtype=np.int64)
    n_d = np.zeros((ny, nx), dtype=np.int64)
    parent = np.full((ny, nx), -1, dtype=np.int64)
    dist[s] = 0.0
    heap = [(0.0, s[0] * nx + s[1])]
    while heap:
        f, flat = heappop(heap)
        iy, ix = divmod(flat, nx)
        if f > dist[iy, ix]:
            continue
        if (iy, ix) == g:
            break
        for dy, dx, diag in _NEIGHBORS:
            jy, jx = iy + dy, ix + dx
            if not (0 <= jy < ny and 0 <= jx < nx) or blocked[jy, jx]:
                continue
            s2 = n_s[iy, ix] + (0 if diag else 1)
            d2 = n_d[iy, ix] + (1 if diag else 0)
            f2 = s2 + d2 * SQRT2
            if f2 < dist[jy, jx]:
                dist[jy, jx] = f2
                n_s[jy, jx] = s2
                n_d[jy, jx] = d2
                parent[jy, jx] = flat
                heappush(heap, (f2, jy * nx + jx))
    if not np.isfinite(dist[g]):
        raise NoPathError("goal unreachable on inflated grid")

    centers = []
    cur = g[0] * nx + g[1]
    while cur != -1:
        iy, ix = divmod(cur, nx)
        centers.append(wmap.cell_center(iy, ix))
        cur = parent[iy, ix]
    centers.reverse()
    polyline = np.vstack([start[None, :], np.array(centers), goal[None, :]])
    length = (float(np.hypot(*(centers[0] - start)))
              + grid_path_length(int(n_s[g]), int(n_d[g]), wmap.res)
              + float(np.hypot(*(goal - centers[-1]))))
    return polyline, length


def distance_field(wmap: WorldMap, goal, radius: float = AGENT_RADIUS) -> np.ndarray:
    """Geodesic distance from every cell to the goal on the inflated grid.

    Unreachable and blocked cells hold inf. Backed by sparse Dijkstra; used
    for expert supervision, not for the oracle-checked shortest_path route.
    """
    from scipy.sparse import csr_matrix
    from scipy.sparse.csgraph import dijkstra as _sparse_dijkstra

    blocked = wmap.inflated(radius)
    free = ~blocked
    ny, nx = free.shape
    g = wmap.cell_index(goal)
    if g is None or blocked[g]:
        return np.full((ny, nx), np.inf)
    idx = np.arange(ny * nx).reshape(ny, nx)
    rows, cols, data = [], [], []
    # east, south, south-east, south-west cover all 8-connected pairs once
    shifts = (((0, 1), GRID_RES), ((1, 0), GRID_RES),
              ((1, 1), GRID_RES * SQRT2), ((1, -1), GRID_RES * SQRT2))
    for (dy, dx), cost in shifts:
        a_sl = (slice(max(0, -dy), ny - max(0, dy)),
                slice(max(0, -dx), nx - max(0, dx)))
        b_sl = (slice(max(0, dy), ny + min(0, dy) or None),
                slice(max(0, dx), nx + min(0, dx) or None))
        ok = free[a_sl] & free[b_sl]
        rows.append(idx[a_sl][ok])
        cols.append(idx[b_sl][ok])
        data.append(np.full(int(ok.sum()), cost))
    if rows:
        adj = csr_matrix((np.concatenate(data),
                          (np.concatenate(rows), np.concatenate(cols))),
                         shape=(ny * nx, ny * nx))
    else:
        adj = csr_matrix((ny * nx, ny * nx))
    dist = _sparse_dijkstra(adj, directed=False, indices=[g[0] * nx + g[1]])
    return dist.reshape(ny, nx)


def field_lookup(field: np.ndarray, wmap: WorldMap, p) -> float:
    idx = wmap.cell_index(p)
    if idx is None:
        return math.inf
    return float(field[idx])


# ---------------------------------------------------------------------------
# waypoint candidates


class Candidate(NamedTuple):
    sector: int           # bearing index, 0..11 relative to heading
    position: np.ndarray  # (2,) m


def waypoint_candidates(wmap: WorldMap, pose) -> list:
    """Farthest clear position per bearing, or nothing for fully blocked bearings.

    For each of 12 bearings at 30 degree spacing (relative to the agent
    heading) the radii 3.0, 2.25, 1.5, 0.75 m are tried farthest-first; a
    position qualifies if it is free, has 0.3 m clearance, and has line of
    sight from the agent.
    """
    x, y, heading = float(pose[0]), float(pose[1]), float(pose[2])
    origin = np.array([x, y])
    out = []
    for k in range(N_BEARINGS):
        bearing = heading + k * SECTOR_WIDTH
        direction = np.array([math.cos(bearing), math.sin(bearing)])
        for r in sorted(CANDIDATE_RADII, reverse=True):
            p = origin + r * direction
            if not wmap.is_free(p):
                continue
            if wmap.clearance_at(p) < CANDIDATE_CLEARANCE:
                continue
            if not line_of_sight(wmap, origin, p):
                continue
            out.append(Candidate(k, p))
            break
    return out


# ---------------------------------------------------------------------------
# episodes and stepped simulation


@dataclass(frozen=True)
class Instruction:
    template_id: str
    slots: dict
    text: str


@dataclass
class Episode:
    episode_id: str
    wmap: WorldMap
    start: tuple          # (x, y, heading)
    goal: tuple           # (x, y)
    pedestrians: list
    instruction: Instruction
    split: str
    seed: int


def _script_anchor_points(script):
    if isinstance(script, Stand):
        return [script.position]
    if isinstance(script, Pace):
        return [script.a, script.b]
    if isinstance(script, WalkPath):
        return list(script.points)
    if isinstance(script, GroupDiscuss):
        angle = script.member_index * (math.pi / 3.0)
        cx, cy = script.center
        return [(cx + script.radius * math.cos(angle), cy + script.radius * math.sin(angle))]
    raise TypeError(f"unknown script type {type(script).__name__}")


def _script_speed(script) -> float:
    return getattr(script, "speed", 0.0)


def validate_episode(ep: Episode, min_geodesic: float = 2.0) -> None:
    """Raise EpisodeInvalid on any structural violation."""
    wmap = ep.wmap
    start_xy = np.asarray(ep.start[:2], dtype=float)
    goal_xy = np.asarray(ep.goal, dtype=float)
    for name, p in (("start", start_xy), ("goal", goal_xy)):
        if not wmap.is_free(p):
            raise EpisodeInvalid(f"{ep.episode_id}: {name} not in free space")
        if wmap.clearance_at(p) < CANDIDATE_CLEARANCE:
            raise EpisodeInvalid(f"{ep.episode_id}: {name} clearance below {CANDIDATE_CLEARANCE}")
    try:
        _, length = shortest_path(wmap, start_xy, goal_xy)
    except NoPathError as exc:
        raise EpisodeInvalid(f"{ep.episode_id}: goal unreachable ({exc})") from exc
    if length < min_geodesic:
        raise EpisodeInvalid(f"{ep.episode_id}: geodesic {length:.2f} below {min_geodesic}")
    seen_ids = set()
    for ped in ep.pedestrians:
        if ped.ped_id in seen_ids:
            raise EpisodeInvalid(f"{ep.episode_id}: duplicate pedestrian id {ped.ped_id}")
        seen_ids.add(ped.ped_id)
        if not ped.activity:
            raise EpisodeInvalid(f"{ep.episode_id}: pedestrian {ped.ped_id} missing activity")
        speed = _script_speed(ped.script)
        if not (0.0 <= speed <= 2.0):
            raise EpisodeInvalid(f"{ep.episode_id}: pedestrian {ped.ped_id} speed {speed} out of range")
        for p in _script_anchor_points(ped.script):
            if not wmap.is_free(p):
                raise EpisodeInvalid(
                    f"{ep.episode_id}: pedestrian {ped.ped_id} anchor {tuple(p)} not free")
        if ped.activity not in ep.instruction.text:
            raise EpisodeInvalid(
                f"{ep.episode_id}: instruction does not mention pedestrian {ped.ped_id}")


class CollisionEvent(NamedTuple):
    step: int    # world step at which contact began
    ped_id: int


@dataclass(frozen=True)
class SimState:
    t: int
    dt: float
    agent: np.ndarray            # (3,) x, y, heading
    pedestrians: tuple           # PedState per pedestrian, script order
    contacts: frozenset          # ped ids currently within COLLISION_RADIUS


def _ped_states(pedestrians, t: int, dt: float):
    return tuple(pedestrian_state_at(p.script, t, dt) for p in pedestrians)


def _contact_ids(agent_xy, pedestrians, states, r: float) -> frozenset:
    out = set()
    for ped, st in zip(pedestrians, states):
        if float(np.linalg.norm(st.position - agent_xy)) < r:
            out.add(ped.ped_id)
    return frozenset(out)


def initial_state(ep: Episode, dt: float = DEFAULT_DT) -> SimState:
    agent = np.asarray(ep.start, dtype=float)
    if agent.shape == (2,):
        agent = np.append(agent, 0.0)   # default heading along +x
    states = _ped_states(ep.pedestrians, 0, dt)
    contacts = _contact_ids(agent[:2], ep.pedestrians, states, COLLISION_RADIUS)
    return SimState(t=0, dt=dt, agent=agent, pedestrians=states, contacts=contacts)


def advance(state: SimState, pedestrians, steps: int,
            r_coll: float = COLLISION_RADIUS):
    """Advance the world with the agent frozen; entering contacts emit events."""
    agent = state.agent
    contacts = state.contacts
    t = state.t
    events = []
    states = state.pedestrians
    for _ in range(steps):
        t += 1
        states = _ped_states(pedestrians, t, state.dt)
        now = _contact_ids(agent[:2], pedestrians, states, r_coll)
        for pid in sorted(now - contacts):
            events.append(CollisionEvent(step=t, ped_id=pid))
        contacts = now
    return SimState(t=t, dt=state.dt, agent=agent, pedestrians=states,
                    contacts=contacts), events


def step_agent(state: SimState, pedestrians, target,
               speed: float = AGENT_SPEED, r_coll: float = COLLISION_RADIUS):
    """Move the agent to target along a straight segment in dt sub-steps.

    Pedestrians advance each sub-step. A collision event is recorded whenever
    an agent-pedestrian distance drops below r_coll and that pedestrian was
    not already in contact on the previous sub-step (re-entry counts again).
    """
    target = np.asarray(target, dtype=float)
    pos = state.agent[:2].copy()
    vec = target - pos
    dist = float(np.linalg.norm(vec))
    heading = _unit_heading(vec) if dist > 0.0 else float(state.agent[2])
    step_len = speed * state.dt
    n_sub = max(1, int(math.ceil(dist / step_len - 1e-12)))
    direction = vec / dist if dist > 0.0 else np.zeros(2)

    contacts = state.contacts
    t = state.t
    events = []
    ped_states = state.pedestrians
    remaining = dist
    for i in range(n_sub):
        travel = min(step_len, remaining)
        remaining -= travel
        if i == n_sub - 1:
            pos = target.copy()
        else:
            pos = pos + direction * travel
        t += 1
        ped_states = _ped_states(pedestrians, t, state.dt)
        now = _contact_ids(pos, pedestrians, ped_states, r_coll)
        for pid in sorted(now - contacts):
            events.append(CollisionEvent(step=t, ped_id=pid))
        contacts = now
    agent = np.array([pos[0], pos[1], heading])
    return SimState(t=t, dt=state.dt, agent=agent, pedestrians=ped_states,
                    contacts=contacts), events
