"""Lane graph construction from map primitives, plus the map-embedding cache.

Lanes are resampled into segments of roughly ``interval`` metres; each
segment becomes a node posed at its arclength midpoint with the chord
direction as heading. Crosswalk polygons are sampled along their long axis
at the same interval.

Edge classes (``src -> dst``):

* ``succ_k`` / ``pred_k``: ``dst`` is reached from ``src`` by exactly ``k``
  successor (predecessor) hops, ``k = 1..5``.
* ``left`` / ``right``: ``dst`` lies in the left (right) neighbour lane of
  ``src``'s lane, paired by nearest arclength fraction.
* ``conflict``: symmetric; nodes of distinct entities closer than the
  conflict radius, plus consecutive nodes of the same crosswalk.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .diffmath.checkpoint import atomic_write
from .geometry import SE2

DILATIONS = (1, 2, 3, 4, 5)
EDGE_TYPES = tuple(f"succ_{k}" for k in DILATIONS) + tuple(f"pred_{k}" for k in DILATIONS) + (
    "left", "right", "conflict")
DEGREE_TYPES = ("succ_1", "pred_1", "left", "right", "conflict")

BOUNDARY_TYPES = ("solid", "dashed", "double", "none")
BOUNDARY_COLORS = ("white", "yellow", "none")

CONFLICT_RADIUS = 2.5
URBAN_INTERVAL = 3.0
HIGHWAY_INTERVAL = 10.0

FEATURE_NAMES = (
    ["length", "width", "curvature", "speed_limit"]
    + [f"left_type_{t}" for t in BOUNDARY_TYPES] + [f"left_color_{c}" for c in BOUNDARY_COLORS]
    + [f"right_type_{t}" for t in BOUNDARY_TYPES] + [f"right_color_{c}" for c in BOUNDARY_COLORS]
    + ["left_dist", "right_dist", "in_intersection", "crosswalk"]
    + [f"degree_{t}" for t in DEGREE_TYPES]
)
NUM_FEATURES = len(FEATURE_NAMES)
_SPEED_SCALE = 10.0


class MapError(ValueError):
    pass


# --------------------------------------------------------------------------
# map primitives

@dataclass
class Lane:
    id: str
    centerline: np.ndarray
    width: float = 3.7
    speed_limit: float = 13.9
    left_boundary: tuple[str, str] = ("dashed", "white")
    right_boundary: tuple[str, str] = ("solid", "white")
    in_intersection: bool = False
    successors: list[str] = field(default_factory=list)
    predecessors: list[str] = field(default_factory=list)
    left_neighbor: str | None = None
    right_neighbor: str | None = None

    def __post_init__(self):
        self.centerline = np.asarray(self.centerline, dtype=float).reshape(-1, 2)


@dataclass
class Crosswalk:
    id: str
    polygon: np.ndarray

    def __post_init__(self):
        self.polygon = np.asarray(self.polygon, dtype=float).reshape(-1, 2)


@dataclass
class MapSource:
    lanes: list[Lane] = field(default_factory=list)
    crosswalks: list[Crosswalk] = field(default_factory=list)

    def lane_by_id(self) -> dict[str, Lane]:
        return {lane.id: lane for lane in self.lanes}

    def validate(self) -> None:
        ids = [lane.id for lane in self.lanes] + [cw.id for cw in self.crosswalks]
        if len(set(ids)) != len(ids):
            raise MapError("duplicate map entity id")
        lanes = self.lane_by_id()
        for lane in self.lanes:
            if len(lane.centerline) < 2:
                raise MapError(f"lane {lane.id}: centerline needs >= 2 points")
            if polyline_length(lane.centerline) <= 0:
                raise MapError(f"lane {lane.id}: zero-length centerline")
            refs = list(lane.successors) + list(lane.predecessors)
            refs += [r for r in (lane.left_neighbor, lane.right_neighbor) if r is not None]
            for ref in refs:
                if ref not in lanes:
                    raise MapError(f"lane {lane.id}: dangling reference to {ref!r}")
            for b in (lane.left_boundary, lane.right_boundary):
                if b[0] not in BOUNDARY_TYPES or b[1] not in BOUNDARY_COLORS:
                    raise MapError(f"lane {lane.id}: unknown boundary {b}")
        for cw in self.crosswalks:
            if len(cw.polygon) < 3:
                raise MapError(f"crosswalk {cw.id}: polygon needs >= 3 points")

    def transformed(self, T: SE2) -> "MapSource":
        lanes = [Lane(**{**lane.__dict__, "centerline": T.apply_points(lane.centerline)}) for lane in self.lanes]
        cws = [Crosswalk(cw.id, T.apply_points(cw.polygon)) for cw in self.crosswalks]
        return MapSource(lanes, cws)

    def scaled(self, s: float) -> "MapSource":
        lanes = [Lane(**{**lane.__dict__, "centerline": lane.centerline * s, "width": lane.width * s,
                         "speed_limit": lane.speed_limit * s}) for lane in self.lanes]
        return MapSource(lanes, [Crosswalk(cw.id, cw.polygon * s) for cw in self.crosswalks])

    def points(self) -> np.ndarray:
        parts = [lane.centerline for lane in self.lanes] + [cw.polygon for cw in self.crosswalks]
        return np.vstack(parts) if parts else np.zeros((0, 2))


# --------------------------------------------------------------------------
# map JSON-lines

def lane_to_record(lane: Lane) -> dict:
    return {
        "type": "lane",
        "id": lane.id,
        "centerline": lane.centerline.tolist(),
        "width": lane.width,
        "speed_limit": lane.speed_limit,
        "left_boundary": {"type": lane.left_boundary[0], "color": lane.left_boundary[1]},
        "right_boundary": {"type": lane.right_boundary[0], "color": lane.right_boundary[1]},
        "in_intersection": lane.in_intersection,
        "successors": list(lane.successors),
        "predecessors": list(lane.predecessors),
        "left_neighbor": lane.left_neighbor,
        "right_neighbor": lane.right_neighbor,
    }


def crosswalk_to_record(cw: Crosswalk) -> dict:
    return {"type": "crosswalk", "id": cw.id, "polygon": cw.polygon.tolist()}


def map_to_records(m: MapSource) -> list[dict]:
    return [lane_to_record(lane) for lane in m.lanes] + [crosswalk_to_record(cw) for cw in m.crosswalks]


def map_from_records(records: Iterable[dict]) -> MapSource:
    m = MapSource()
    for rec in records:
        kind = rec.get("type")
        if kind == "lane":
            lb, rb = rec.get("left_boundary", {}), rec.get("right_boundary", {})
            m.lanes.append(Lane(
                id=str(rec["id"]),
                centerline=rec["centerline"],
                width=float(rec.get("width", 3.7)),
                speed_limit=float(rec.get("speed_limit", 13.9)),
                left_boundary=(lb.get("type", "none"), lb.get("color", "none")),
                right_boundary=(rb.get("type", "none"), rb.get("color", "none")),
                in_intersection=bool(rec.get("in_intersection", False)),
                successors=[str(s) for s in rec.get("successors", [])],
                predecessors=[str(s) for s in rec.get("predecessors", [])],
                left_neighbor=None if rec.get("left_neighbor") is None else str(rec["left_neighbor"]),
                right_neighbor=None if rec.get("right_neighbor") is None else str(rec["right_neighbor"]),
            ))
        elif kind == "crosswalk":
            m.crosswalks.append(Crosswalk(str(rec["id"]), rec["polygon"]))
        else:
            raise MapError(f"unknown map entity type {kind!r}")
    return m


def write_map_jsonl(path, m: MapSource) -> None:
    lines = [json.dumps(r, sort_keys=True) for r in map_to_records(m)]
    atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def read_map_jsonl(path) -> MapSource:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise MapError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
    m = map_from_records(records)
    m.validate()
    return m


# --------------------------------------------------------------------------
# polyline helpers

def polyline_length(poly: np.ndarray) -> float:
    return float(np.sum(np.hypot(*np.diff(poly, axis=0).T)))


def _cumlen(poly: np.ndarray) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(poly, axis=0).T))])


def interpolate(poly: np.ndarray, s) -> np.ndarray:
    """Points at arclengths ``s`` (clamped to the polyline)."""
    cum = _cumlen(poly)
    s = np.clip(np.asarray(s, dtype=float), 0.0, cum[-1])
    return np.stack([np.interp(s, cum, poly[:, 0]), np.interp(s, cum, poly[:, 1])], axis=-1)


def curvature(poly, at: float, step: float = 1.5) -> float:
    """Signed Menger curvature from three points around arclength ``at``.

    Positive for left (counter-clockwise) turns; collinear points give 0.
    """
    poly = np.asarray(poly, dtype=float)
    L = polyline_length(poly)
    if len(poly) < 3 or L <= 0:
        return 0.0
    h = min(step, L / 2)
    mid = min(max(at, h), L - h)
    a, b, c = interpolate(poly, [mid - h, mid, mid + h])
    ab, bc, ac = b - a, c - b, c - a
    denom = np.hypot(*ab) * np.hypot(*bc) * np.hypot(*ac)
    if denom < 1e-12:
        return 0.0
    k = 2.0 * (ab[0] * bc[1] - ab[1] * bc[0]) / denom
    return float(k) if abs(k) > 1e-12 else 0.0


def _crosswalk_axis(polygon: np.ndarray) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Centre, unit long axis, and axis extent of a crosswalk polygon."""
    edges = np.roll(polygon, -1, axis=0) - polygon
    lengths = np.hypot(*edges.T)
    # first edge within tolerance of the longest keeps the choice stable under rotation
    axis = edges[int(np.flatnonzero(lengths >= lengths.max() * (1 - 1e-9))[0])]
    axis = axis / np.hypot(*axis)
    centre = polygon.mean(axis=0)
    proj = (polygon - centre) @ axis
    return centre, axis, float(proj.min()), float(proj.max())


def _segment_bounds(length: float, interval: float) -> np.ndarray:
    n = max(1, int(np.floor(length / interval + 1e-6)))
    bounds = np.arange(n + 1, dtype=float) * interval
    bounds[-1] = length
    return bounds


# --------------------------------------------------------------------------
# lane graph

@dataclass
class LaneGraph:
    centroids: np.ndarray
    headings: np.ndarray
    features: np.ndarray
    entity: np.ndarray
    widths: np.ndarray
    edges: dict[str, np.ndarray]
    lane_of_node: list[str]

    @property
    def num_nodes(self) -> int:
        return len(self.centroids)

    def edge_count(self, etype: str) -> int:
        return len(self.edges[etype])

    def adjacency(self, etype: str) -> np.ndarray:
        A = np.zeros((self.num_nodes, self.num_nodes), dtype=bool)
        e = self.edges[etype]
        A[e[:, 0], e[:, 1]] = True
        return A

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for arr in (self.centroids, self.headings, self.features, self.entity, self.widths):
            h.update(np.ascontiguousarray(arr).tobytes())
        for et in EDGE_TYPES:
            h.update(et.encode())
            h.update(np.ascontiguousarray(self.edges[et], dtype=np.int64).tobytes())
        return h.hexdigest()

    def scaled(self, s: float) -> "LaneGraph":
        feats = self.features.copy()
        for name in ("length", "width", "left_dist", "right_dist", "speed_limit"):
            feats[:, FEATURE_NAMES.index(name)] *= s
        feats[:, FEATURE_NAMES.index("curvature")] /= s
        return LaneGraph(self.centroids * s, self.headings.copy(), feats, self.entity.copy(),
                         self.widths * s, {k: v.copy() for k, v in self.edges.items()},
                         list(self.lane_of_node))


def _edge_array(pairs) -> np.ndarray:
    arr = np.array(sorted(set(pairs)), dtype=np.int64).reshape(-1, 2)
    return arr


def _dilated(succ: np.ndarray, n: int, k: int) -> np.ndarray:
    """Edges ``i -> j`` with a successor path of exactly ``k`` hops (no self loops)."""
    nxt: list[list[int]] = [[] for _ in range(n)]
    for i, j in succ:
        nxt[i].append(j)
    pairs = []
    for i in range(n):
        frontier = {i}
        for _ in range(k):
            frontier = {j for f in frontier for j in nxt[f]}
            if not frontier:
                break
        pairs.extend((i, j) for j in frontier if j != i)
    return _edge_array(pairs)


def _boundary_onehot(b: tuple[str, str]) -> list[float]:
    t = [1.0 if b[0] == name else 0.0 for name in BOUNDARY_TYPES]
    c = [1.0 if b[1] == name else 0.0 for name in BOUNDARY_COLORS]
    return t + c


def build_lane_graph(m: MapSource, interval: float = URBAN_INTERVAL,
                     conflict_radius: float | None = CONFLICT_RADIUS) -> LaneGraph:
    """Resample ``m`` into a lane graph; adds conflict edges unless radius is None."""
    if interval <= 0:
        raise ValueError("interval must be positive")
    m.validate()
    lanes = m.lane_by_id()
    centroids, headings, feats, entity, widths, lane_of = [], [], [], [], [], []
    first_last: dict[str, tuple[int, int]] = {}
    lane_nodes: dict[str, list[int]] = {}
    lane_fracs: dict[str, list[float]] = {}
    succ_pairs: list[tuple[int, int]] = []
    conflict_pairs: list[tuple[int, int]] = []

    for ent, lane in enumerate(m.lanes):
        poly = lane.centerline
        L = polyline_length(poly)
        bounds = _segment_bounds(L, interval)
        ends = interpolate(poly, bounds)
        ids = []
        for k in range(len(bounds) - 1):
            chord = ends[k + 1] - ends[k]
            norm = np.hypot(*chord)
            if norm < 1e-9:
                raise MapError(f"lane {lane.id}: degenerate segment")
            mid_s = 0.5 * (bounds[k] + bounds[k + 1])
            idx = len(centroids)
            centroids.append(interpolate(poly, mid_s))
            headings.append(chord / norm)
            seg_len = bounds[k + 1] - bounds[k]
            feats.append([seg_len, lane.width, curvature(poly, mid_s, max(seg_len / 2, 0.5)),
                          lane.speed_limit / _SPEED_SCALE]
                         + _boundary_onehot(lane.left_boundary) + _boundary_onehot(lane.right_boundary)
                         + [lane.width / 2, lane.width / 2, float(lane.in_intersection), 0.0])
            entity.append(ent)
            widths.append(lane.width)
            lane_of.append(lane.id)
            if ids:
                succ_pairs.append((ids[-1], idx))
            ids.append(idx)
            lane_fracs.setdefault(lane.id, []).append(mid_s / L)
        lane_nodes[lane.id] = ids
        first_last[lane.id] = (ids[0], ids[-1])

    # lane topology: successors declared either way round
    topo = set()
    for lane in m.lanes:
        for s in lane.successors:
            topo.add((lane.id, s))
        for p in lane.predecessors:
            topo.add((p, lane.id))
    for a, b in sorted(topo):
        if a != b or len(lane_nodes[a]) > 1:
            succ_pairs.append((first_last[a][1], first_last[b][0]))

    # lateral neighbours, made symmetric
    lateral = {"left": set(), "right": set()}
    for lane in m.lanes:
        if lane.left_neighbor is not None:
            lateral["left"].add((lane.id, lane.left_neighbor))
            lateral["right"].add((lane.left_neighbor, lane.id))
        if lane.right_neighbor is not None:
            lateral["right"].add((lane.id, lane.right_neighbor))
            lateral["left"].add((lane.right_neighbor, lane.id))
    lateral_pairs = {"left": [], "right": []}
    for side, rel in lateral.items():
        for a, b in sorted(rel):
            fb = np.asarray(lane_fracs[b])
            reach = lanes[a].width + lanes[b].width
            for i, fa in zip(lane_nodes[a], lane_fracs[a]):
                j = lane_nodes[b][int(np.argmin(np.abs(fb - fa)))]
                if np.hypot(*(centroids[i] - centroids[j])) <= reach:
                    lateral_pairs[side].append((i, j))

    # crosswalk nodes
    n_lane_ents = len(m.lanes)
    for c, cw in enumerate(m.crosswalks):
        centre, axis, lo, hi = _crosswalk_axis(cw.polygon)
        bounds = _segment_bounds(hi - lo, interval)
        prev = None
        for k in range(len(bounds) - 1):
            mid = lo + 0.5 * (bounds[k] + bounds[k + 1])
            idx = len(centroids)
            centroids.append(centre + mid * axis)
            headings.append(axis.copy())
            row = [0.0] * (NUM_FEATURES - len(DEGREE_TYPES))
            row[FEATURE_NAMES.index("crosswalk")] = 1.0
            feats.append(row)
            entity.append(n_lane_ents + c)
            widths.append(float(np.max(np.abs((cw.polygon - centre) @ np.array([-axis[1], axis[0]])))) * 2)
            lane_of.append(cw.id)
            if prev is not None:
                conflict_pairs += [(prev, idx), (idx, prev)]
            prev = idx

    n = len(centroids)
    succ = _edge_array(succ_pairs)
    edges = {}
    for k in DILATIONS:
        ek = succ if k == 1 else _dilated(succ, n, k)
        edges[f"succ_{k}"] = ek
        edges[f"pred_{k}"] = _edge_array([(j, i) for i, j in ek])
    edges["left"] = _edge_array(lateral_pairs["left"])
    edges["right"] = _edge_array(lateral_pairs["right"])
    edges["conflict"] = _edge_array(conflict_pairs)

    g = LaneGraph(
        centroids=np.asarray(centroids, dtype=float).reshape(n, 2),
        headings=np.asarray(headings, dtype=float).reshape(n, 2),
        features=np.hstack([np.asarray(feats, dtype=float).reshape(n, NUM_FEATURES - len(DEGREE_TYPES)),
                            np.zeros((n, len(DEGREE_TYPES)))]),
        entity=np.asarray(entity, dtype=np.int64),
        widths=np.asarray(widths, dtype=float),
        edges=edges,
        lane_of_node=lane_of,
    )
    if conflict_radius is not None:
        return add_conflict_edges(g, conflict_radius)
    _refresh_degrees(g)
    return g


def _refresh_degrees(g: LaneGraph) -> None:
    base = NUM_FEATURES - len(DEGREE_TYPES)
    for k, et in enumerate(DEGREE_TYPES):
        deg = np.bincount(g.edges[et][:, 0], minlength=g.num_nodes) if len(g.edges[et]) else np.zeros(g.num_nodes)
        g.features[:, base + k] = deg


def conflict_pairs_bruteforce(centroids: np.ndarray, entity: np.ndarray, radius: float) -> set[tuple[int, int]]:
    out = set()
    n = len(centroids)
    for i in range(n):
        for j in range(n):
            if i != j and entity[i] != entity[j]:
                d = np.hypot(*(centroids[i] - centroids[j]))
                if d < radius:
                    out.add((i, j))
    return out


def conflict_pairs_hashed(centroids: np.ndarray, entity: np.ndarray, radius: float) -> set[tuple[int, int]]:
    """Uniform spatial hash with cell size = radius; only 3x3 neighbourhoods are compared."""
    cells: dict[tuple[int, int], list[int]] = {}
    keys = np.floor(centroids / radius).astype(np.int64)
    for i, (cx, cy) in enumerate(keys):
        cells.setdefault((int(cx), int(cy)), []).append(i)
    out = set()
    for (cx, cy), members in cells.items():
        cand = []
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                cand.extend(cells.get((cx + dx, cy + dy), ()))
        cand = np.asarray(cand)
        for i in members:
            other = cand[entity[cand] != entity[i]]
            if other.size == 0:
                continue
            diff = centroids[other] - centroids[i]
            d = np.hypot(diff[:, 0], diff[:, 1])
            for j in other[d < radius]:
                out.add((i, int(j)))
    return out


def add_conflict_edges(g: LaneGraph, radius: float = CONFLICT_RADIUS) -> LaneGraph:
    if radius <= 0:
        raise ValueError("radius must be positive")
    pairs = conflict_pairs_hashed(g.centroids, g.entity, radius)
    existing = {tuple(e) for e in g.edges["conflict"].tolist()}
    edges = dict(g.edges)
    edges["conflict"] = _edge_array(existing | pairs)
    out = LaneGraph(g.centroids, g.headings, g.features.copy(), g.entity, g.widths, edges, g.lane_of_node)
    _refresh_degrees(out)
    return out


def nearest_node(centroids: np.ndarray, points) -> np.ndarray:
    """Index of the nearest centroid for each point; ties go to the lowest index."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if len(centroids) == 0:
        raise MapError("lane graph is empty")
    d = np.sum((points[:, None, :] - centroids[None, :, :]) ** 2, axis=-1)
    return np.argmin(d, axis=1)


def distance_to_lane_graph(g: LaneGraph, points) -> np.ndarray:
    """Distance from each point to the nearest node footprint boundary.

    A node covers a disc of radius ``max(length, width) / 2`` around its
    centroid; distances inside the footprint are zero.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    length = g.features[:, FEATURE_NAMES.index("length")]
    reach = 0.5 * np.maximum(np.maximum(length, g.widths), 1e-9)
    d = np.hypot(*(points[:, None, :] - g.centroids[None, :, :]).transpose(2, 0, 1))
    return np.maximum(d - reach[None, :], 0.0).min(axis=1)


# --------------------------------------------------------------------------
# map-embedding cache

CACHE_MAGIC = b"RFMC"
CACHE_VERSION = 1


class CacheError(ValueError):
    """Raised for unreadable cache files (a stale cache is not an error)."""


@dataclass
class MapEmbeddingCache:
    graph_hash: str
    checkpoint_hash: str
    embeddings: np.ndarray


def cache_dumps(cache: MapEmbeddingCache) -> bytes:
    emb = np.ascontiguousarray(cache.embeddings)
    code = {np.dtype("float64"): 0, np.dtype("float32"): 1}[emb.dtype]
    buf = io.BytesIO()
    buf.write(CACHE_MAGIC)
    buf.write(struct.pack("<H", CACHE_VERSION))
    buf.write(bytes.fromhex(cache.graph_hash))
    buf.write(bytes.fromhex(cache.checkpoint_hash))
    buf.write(struct.pack("<BII", code, emb.shape[0], emb.shape[1]))
    raw = emb.astype(emb.dtype.newbyteorder("<")).tobytes()
    buf.write(raw)
    buf.write(hashlib.sha256(raw).digest())
    return buf.getvalue()


def cache_loads(data: bytes) -> MapEmbeddingCache:
    if len(data) < 6 or data[:4] != CACHE_MAGIC:
        raise CacheError("not a map-embedding cache file")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != CACHE_VERSION:
        raise CacheError(f"unsupported cache version {version}")
    off = 6
    if len(data) < off + 64 + 9:
        raise CacheError("truncated cache file")
    ghash = data[off:off + 32].hex()
    chash = data[off + 32:off + 64].hex()
    code, rows, cols = struct.unpack_from("<BII", data, off + 64)
    off += 64 + 9
    if code not in (0, 1):
        raise CacheError(f"unknown dtype code {code}")
    dt = np.dtype("<f8") if code == 0 else np.dtype("<f4")
    nbytes = rows * cols * dt.itemsize
    raw = data[off:off + nbytes]
    digest = data[off + nbytes:off + nbytes + 32]
    if len(raw) != nbytes or len(digest) != 32 or off + nbytes + 32 != len(data):
        raise CacheError("truncated or oversized cache file")
    if hashlib.sha256(raw).digest() != digest:
        raise CacheError("cache payload checksum mismatch")
    emb = np.frombuffer(raw, dtype=dt).reshape(rows, cols).astype(dt.newbyteorder("="))
    return MapEmbeddingCache(ghash, chash, emb)


def cache_store(path, g: LaneGraph, embeddings: np.ndarray, checkpoint_hash: str) -> None:
    embeddings = np.asarray(embeddings)
    if embeddings.ndim != 2 or embeddings.shape[0] != g.num_nodes:
        raise ValueError("one embedding row per lane-graph node required")
    atomic_write(path, cache_dumps(MapEmbeddingCache(g.content_hash(), checkpoint_hash, embeddings)))


def cache_load(path, g: LaneGraph, checkpoint_hash: str) -> np.ndarray | None:
    """Cached embeddings, or None when the graph or checkpoint no longer match."""
    cache = cache_loads(Path(path).read_bytes())
    if cache.graph_hash != g.content_hash() or cache.checkpoint_hash != checkpoint_hash:
        return None
    return cache.embeddings


def iter_edges(g: LaneGraph) -> Iterator[tuple[str, np.ndarray]]:
    for et in EDGE_TYPES:
        yield et, g.edges[et]
