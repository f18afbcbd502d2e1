"""Panoramic sector observations: depth rays, object histograms, detections.

The agent frame has x forward and y to the left; sector bearings are relative
to the agent heading. At sector bearing 0 the lateral coordinate equals the
camera-plane coordinate (u - cx) * d / fx, so pixel u grows toward the
agent's left. All of it is self-consistent with backproject.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import world
from .util import fnv1a_64

N_SECTORS = 12
SECTOR_WIDTH = 2.0 * math.pi / N_SECTORS
RAYS_PER_SECTOR = 16
MAX_DEPTH = 10.0        # m, depth ray range
DETECTION_RANGE = 5.0   # m, humans beyond this are not detected
N_OBJECT_CLASSES = 48
HIST_CLIP = 10.0        # counts above this saturate
STATIC_FEATURE_DIM = 64
TRACK_GATE = 0.6        # m, nearest-neighbour association gate
WINDOW_STEPS = 6        # observation frames collected during a pause
MIN_TRACK_LEN = 3


class NonPositiveDepth(Exception):
    pass


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float = 100.0
    fy: float = 100.0
    cx: float = 112.0
    cy: float = 112.0
    width: int = 224
    height: int = 224
    mount_height: float = 1.25  # m above ground


DEFAULT_INTRINSICS = CameraIntrinsics()

# nominal joint heights (m at body_scale 1) used to synthesize pixel rows
_JOINT_HEIGHTS = np.array([
    1.60, 1.62, 1.62, 1.58, 1.58,   # nose, eyes, ears
    1.45, 1.45, 1.15, 1.15,         # shoulders, elbows
    0.85, 0.85, 0.95, 0.95,         # wrists, hips
    0.50, 0.50, 0.08, 0.08,         # knees, ankles
])


@dataclass
class HumanDetection:
    sector: int
    center_px: tuple          # (u, v)
    depth: float              # m along the sector axis
    keypoints: np.ndarray     # (17, 3) pixel u, pixel v, confidence
    truth_label: str          # simulator-only; read by the rule-based interpreter
    ped_id: int               # simulator bookkeeping, never a policy input


@dataclass
class SectorObservation:
    sector: int
    depths: np.ndarray        # (16,) m
    object_hist: np.ndarray   # (48,) counts
    detections: list


@dataclass
class PanoramicObservation:
    t: int
    agent: np.ndarray         # (3,) pose at observation time
    sectors: list             # 12 SectorObservation


def observation_to_dict(obs: PanoramicObservation) -> dict:
    """JSON-ready dump of one panorama (for the remote interpreter and the
    replay tool). Floats are rounded to 9 decimals for stable serialization.
    The simulator-only truth label is not exported."""
    def r(x):
        return round(float(x), 9)
    return {
        "t": obs.t,
        "agent": [r(v) for v in obs.agent],
        "sectors": [{
            "sector": s.sector,
            "depths": [r(v) for v in s.depths],
            "object_hist": [int(v) for v in s.object_hist],
            "detections": [{
                "sector": det.sector,
                "center_px": [r(det.center_px[0]), r(det.center_px[1])],
                "depth": r(det.depth),
                "keypoints": [[r(v) for v in row] for row in det.keypoints],
            } for det in s.detections],
        } for s in obs.sectors],
    }


def wrap_angle(a: float) -> float:
    return math.atan2(math.sin(a), math.cos(a))


def sector_of_bearing(bearing: float) -> int:
    """Sector index whose 30 degree cone contains the heading-relative bearing."""
    return int(round(bearing / SECTOR_WIDTH)) % N_SECTORS


def agent_frame(agent_pose, point) -> np.ndarray:
    """World point -> (forward, lateral-left) relative to the agent pose."""
    dx = point[0] - agent_pose[0]
    dy = point[1] - agent_pose[1]
    h = agent_pose[2]
    c, s = math.cos(h), math.sin(h)
    return np.array([c * dx + s * dy, -s * dx + c * dy])


def agent_to_world(agent_pose, rel) -> np.ndarray:
    h = agent_pose[2]
    c, s = math.cos(h), math.sin(h)
    return np.array([agent_pose[0] + c * rel[0] - s * rel[1],
                     agent_pose[1] + s * rel[0] + c * rel[1]])


def project(rel: np.ndarray, intr: CameraIntrinsics, sector_bearing: float,
            height: float | None = None) -> tuple:
    """Agent-centric planar point -> (u, v, d) in the sector's camera.

    d is the coordinate along the sector axis; v comes from the point height
    (camera mount height when omitted).
    """
    c, s = math.cos(sector_bearing), math.sin(sector_bearing)
    d = c * rel[0] + s * rel[1]
    lateral = -s * rel[0] + c * rel[1]
    if d <= 0.0:
        raise NonPositiveDepth(f"point behind sector camera (d={d:.3f})")
    u = intr.cx + intr.fx * lateral / d
    if height is None:
        v = intr.cy
    else:
        v = intr.cy - intr.fy * (height - intr.mount_height) / d
    return float(u), float(v), float(d)


def backproject(u: float, v: float, d: float, intr: CameraIntrinsics,
                sector_bearing: float) -> np.ndarray:
    """Pixel + depth -> agent-centric planar position.

    Camera point ((u-cx)d/fx, (v-cy)d/fy, d) rotated into the agent frame by
    the sector bearing; only the horizontal coordinates are returned. Raises
    NonPositiveDepth for d <= 0.
    """
    if d <= 0.0:
        raise NonPositiveDepth(f"depth must be positive, got {d}")
    lateral = (u - intr.cx) * d / intr.fx
    c, s = math.cos(sector_bearing), math.sin(sector_bearing)
    return np.array([c * d - s * lateral, s * d + c * lateral])


def observe(state: world.SimState, wmap: world.WorldMap, pedestrians,
            intr: CameraIntrinsics = DEFAULT_INTRINSICS, sigma: float = 0.0,
            rng: np.random.Generator | None = None,
            nominal_depth: float | None = None) -> PanoramicObservation:
    """One panoramic observation from the current agent pose.

    sigma adds zero-mean Gaussian noise (meters) to each detection's planar
    position and to every keypoint before projection. nominal_depth, when
    set, replaces each detection's depth after projection (the rgb-only
    ablation: bearing survives, range information does not).
    """
    if sigma > 0.0 and rng is None:
        raise ValueError("noisy observations need an explicit rng")
    pose = state.agent
    origin = pose[:2]

    # depth profiles: 16 cell-centered rays per sector
    offsets = (np.arange(RAYS_PER_SECTOR) + 0.5) / RAYS_PER_SECTOR * SECTOR_WIDTH - SECTOR_WIDTH / 2
    sectors = []
    all_angles = np.concatenate(
        [pose[2] + k * SECTOR_WIDTH + offsets for k in range(N_SECTORS)])
    depths_flat = world.raycast_depths(wmap, origin, all_angles, MAX_DEPTH)

    hists = [np.zeros(N_OBJECT_CLASSES) for _ in range(N_SECTORS)]
    for obj in wmap.objects:
        rel = agent_frame(pose, obj.position)
        rng_m = float(np.hypot(rel[0], rel[1]))
        if rng_m == 0.0 or rng_m > MAX_DEPTH:
            continue
        if not world.line_of_sight(wmap, origin, obj.position):
            continue
        k = sector_of_bearing(math.atan2(rel[1], rel[0]))
        hists[k][fnv1a_64(obj.label) % N_OBJECT_CLASSES] += 1.0

    detections = [[] for _ in range(N_SECTORS)]
    for ped, pst in zip(pedestrians, state.pedestrians):
        rel = agent_frame(pose, pst.position)
        rng_m = float(np.hypot(rel[0], rel[1]))
        if rng_m == 0.0 or rng_m > DETECTION_RANGE:
            continue
        if not world.line_of_sight(wmap, origin, pst.position):
            continue
        k = sector_of_bearing(math.atan2(rel[1], rel[0]))
        bearing_k = k * SECTOR_WIDTH
        noisy_rel = rel if sigma <= 0.0 else rel + rng.normal(0.0, sigma, (2,))
        try:
            u, v, d = project(noisy_rel, intr, bearing_k)
        except NonPositiveDepth:
            continue
        skel = world.skeleton_at(pst.position, pst.heading, pst.phase, ped.body_scale)
        kps = np.zeros((17, 3))
        for j in range(17):
            krel = agent_frame(pose, skel[j, :2])
            if sigma > 0.0:
                krel = krel + rng.normal(0.0, sigma, (2,))
            try:
                ku, kv, _ = project(krel, intr, bearing_k,
                                    height=_JOINT_HEIGHTS[j] * ped.body_scale)
            except NonPositiveDepth:
                ku, kv = intr.cx, intr.cy
            kps[j] = (ku, kv, 1.0)
        if nominal_depth is not None:
            d = float(nominal_depth)
        detections[k].append(HumanDetection(
            sector=k, center_px=(u, v), depth=d, keypoints=kps,
            truth_label=ped.activity, ped_id=ped.ped_id))

    for k in range(N_SECTORS):
        sectors.append(SectorObservation(
            sector=k,
            depths=depths_flat[k * RAYS_PER_SECTOR:(k + 1) * RAYS_PER_SECTOR],
            object_hist=hists[k],
            detections=detections[k]))
    return PanoramicObservation(t=state.t, agent=pose.copy(), sectors=sectors)


# fixed random projection for the static sector feature; full rank on the
# histogram block is asserted by the tests
_PROJECTION_SEED = 20240615
_projection_cache = {}


def _projection_matrix() -> np.ndarray:
    if "P" not in _projection_cache:
        gen = np.random.default_rng(_PROJECTION_SEED)
        _projection_cache["P"] = gen.standard_normal(
            (STATIC_FEATURE_DIM, RAYS_PER_SECTOR + N_OBJECT_CLASSES)) / math.sqrt(STATIC_FEATURE_DIM)
    return _projection_cache["P"]


def static_sector_feature(sector: SectorObservation, use_depth: bool = True,
                          use_objects: bool = True) -> np.ndarray:
    """64-d embedding of one sector: seeded random projection of
    (depths / max, clipped histogram / clip)."""
    depth_block = sector.depths / MAX_DEPTH if use_depth else np.zeros(RAYS_PER_SECTOR)
    hist_block = (np.minimum(sector.object_hist, HIST_CLIP) / HIST_CLIP
                  if use_objects else np.zeros(N_OBJECT_CLASSES))
    x = np.concatenate([depth_block, hist_block])
    return _projection_matrix() @ x


# ---------------------------------------------------------------------------
# pause-and-observe window with nearest neighbour tracking


@dataclass
class Track:
    track_id: int
    positions: np.ndarray   # (L, 2) agent-centric m
    keypoints: np.ndarray   # (L, 17, 3) u, v normalized to [0, 1], confidence
    steps: list             # world step per frame
    dt: float
    truth_label: str        # interpreter-only
    ped_id: int             # simulator bookkeeping


@dataclass
class ObservationWindow:
    tracks: dict            # track_id -> Track, insertion ordered
    m: int
    agent: np.ndarray       # frozen pose during the window


class _TrackBuffer:
    __slots__ = ("positions", "keypoints", "steps", "label", "ped_id")

    def __init__(self):
        self.positions = []
        self.keypoints = []
        self.steps = []
        self.label = ""
        self.ped_id = -1


def _normalize_keypoints(kps: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    out = kps.copy()
    out[:, 0] /= intr.width
    out[:, 1] /= intr.height
    return out


def collect_window(state: world.SimState, wmap: world.WorldMap, pedestrians,
                   intr: CameraIntrinsics = DEFAULT_INTRINSICS,
                   m: int = WINDOW_STEPS, sigma: float = 0.0,
                   rng: np.random.Generator | None = None,
                   nominal_depth: float | None = None):
    """Freeze the agent, advance the world m steps, track detections.

    Association is nearest neighbour against each track's last position with
    a 0.6 m gate, ties broken by smaller distance then smaller track id.
    Tracks shorter than 3 frames are discarded. Returns (window, new_state,
    events): world time has advanced by m and entering contacts were counted.
    """
    pose = state.agent
    buffers: dict[int, _TrackBuffer] = {}
    next_id = 0
    all_events = []
    for _ in range(m):
        state, events = world.advance(state, pedestrians, 1)
        all_events.extend(events)
        obs = observe(state, wmap, pedestrians, intr, sigma=sigma, rng=rng,
                      nominal_depth=nominal_depth)
        dets = []
        for sector in obs.sectors:
            for det in sector.detections:
                rel = backproject(det.center_px[0], det.center_px[1], det.depth,
                                  intr, det.sector * SECTOR_WIDTH)
                dets.append((rel, det))
        # greedy nearest neighbour within the gate
        pairs = []
        for tid, buf in buffers.items():
            last = buf.positions[-1]
            for di, (rel, _) in enumerate(dets):
                dist = float(np.hypot(rel[0] - last[0], rel[1] - last[1]))
                if dist <= TRACK_GATE:
                    pairs.append((dist, tid, di))
        pairs.sort()
        used_tracks, used_dets = set(), set()
        assigned = {}
        for dist, tid, di in pairs:
            if tid in used_tracks or di in used_dets:
                continue
            used_tracks.add(tid)
            used_dets.add(di)
            assigned[di] = tid
        for di, (rel, det) in enumerate(dets):
            if di in assigned:
                tid = assigned[di]
            else:
                tid = next_id
                next_id += 1
                buffers[tid] = _TrackBuffer()
            buf = buffers[tid]
            buf.positions.append(np.asarray(rel, dtype=float))
            buf.keypoints.append(_normalize_keypoints(det.keypoints, intr))
            buf.steps.append(state.t)
            buf.label = det.truth_label
            buf.ped_id = det.ped_id

    tracks = {}
    for tid in sorted(buffers):
        buf = buffers[tid]
        if len(buf.positions) < MIN_TRACK_LEN:
            continue
        tracks[tid] = Track(
            track_id=tid,
            positions=np.stack(buf.positions),
            keypoints=np.stack(buf.keypoints),
            steps=list(buf.steps),
            dt=state.dt,
            truth_label=buf.label,
            ped_id=buf.ped_id)
    window = ObservationWindow(tracks=tracks, m=m, agent=pose.copy())
    return window, state, all_events
