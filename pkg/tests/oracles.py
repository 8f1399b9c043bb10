"""Independent reference implementations used only by the tests.

They lean on shapely geometry instead of the package's own segment math,
so agreement between the two is meaningful.
"""
from __future__ import annotations

import heapq
import math

import numpy as np
import shapely
from shapely.geometry import LineString, Point, Polygon, box

from ratenav.world import WorldMap


def solid_region(world_map: WorldMap, discs=(), margin: float = 50.0):
    """Everything a beam or robot must not enter: obstacles plus the outside of the room."""
    outside = box(-margin, -margin, world_map.width + margin, world_map.height + margin).difference(
        box(0.0, 0.0, world_map.width, world_map.height))
    parts = [outside] + [Polygon(p) for p in world_map.obstacles]
    parts += [Point(x, y).buffer(r, quad_segs=256) for x, y, r in discs]
    return shapely.union_all(parts)


def march_scan(solid, origin: np.ndarray, dirs: np.ndarray, max_range: float,
               coarse: float = 0.01) -> np.ndarray:
    """Range along each beam found by stepping until a sample comes near ``solid``.

    A coarse pass at ``coarse`` spacing tests against ``solid`` grown by
    half a coarse step, so no surface can slip between two samples. Each
    flagged stretch (one step either side of the sample) is then resolved
    by an exact GEOS line intersection, which also catches beams that clip
    a corner over less than a millimetre.
    """
    grown = solid.buffer(coarse / 2 + 1e-9)
    shapely.prepare(grown)
    n = len(dirs)
    out = np.full(n, max_range)
    t0 = np.zeros(n)
    active = np.arange(n)
    chunk = 64
    while active.size:
        ts = t0[active, None] + coarse * np.arange(1, chunk + 1)[None, :]
        pts = origin + ts[..., None] * dirs[active, None, :]
        hit = shapely.contains_xy(grown, pts[..., 0], pts[..., 1])
        still = []
        for row, beam in enumerate(active):
            resolved = False
            for col in np.flatnonzero(hit[row]):
                lo = max(t0[beam], ts[row, col] - coarse)
                hi = ts[row, col] + coarse
                t = _first_entry(solid, origin, dirs[beam], lo, hi)
                if t is not None:
                    out[beam] = min(t, max_range)
                    resolved = True
                    break
            if not resolved:
                t0[beam] = ts[row, -1]
                if t0[beam] < max_range:
                    still.append(beam)
        active = np.array(still, dtype=int)
    return out


def _first_entry(solid, origin, direction, lo: float, hi: float):
    seg = LineString([origin + lo * direction, origin + hi * direction])
    inter = solid.intersection(seg)
    if inter.is_empty:
        return None
    coords = np.asarray(shapely.get_coordinates(inter))
    return float(((coords - origin) @ direction).min())


def visibility_path_length(world_map: WorldMap, start, goal, radius: float, quad_segs: int = 64) -> float:
    """Exact-up-to-arc-discretization shortest path for a disc robot.

    Builds the visibility graph over the vertices of the inflated obstacles
    and runs Dijkstra on it.
    """
    inflated = shapely.union_all([Polygon(p).buffer(radius, quad_segs=quad_segs) for p in world_map.obstacles])
    walls = box(-1, -1, world_map.width + 1, world_map.height + 1).difference(
        box(radius, radius, world_map.width - radius, world_map.height - radius))
    blocked = shapely.union_all([inflated, walls])
    core = blocked.buffer(-1e-7)
    shapely.prepare(core)
    polys = getattr(inflated, "geoms", [inflated])
    nodes = [tuple(start), tuple(goal)]
    for poly in polys:
        for x, y in list(poly.exterior.coords)[:-1]:
            if radius <= x <= world_map.width - radius and radius <= y <= world_map.height - radius:
                nodes.append((x, y))

    def visible(a, b) -> bool:
        return not core.intersects(LineString([a, b]))

    dist = {0: 0.0}
    heap = [(0.0, 0)]
    done = set()
    while heap:
        d, i = heapq.heappop(heap)
        if i in done:
            continue
        if i == 1:
            return d
        done.add(i)
        for j in range(len(nodes)):
            if j in done or j == i:
                continue
            w = math.dist(nodes[i], nodes[j])
            if d + w < dist.get(j, math.inf) and visible(nodes[i], nodes[j]):
                dist[j] = d + w
                heapq.heappush(heap, (d + w, j))
    raise ValueError("goal not reachable in the visibility graph")


def shapely_clearance(world_map: WorldMap, pts: np.ndarray) -> np.ndarray:
    """Distance to the nearest wall or obstacle, zero inside solid space."""
    solid = solid_region(world_map)
    geoms = shapely.points(pts)
    d = shapely.distance(solid.boundary, geoms)
    return np.where(shapely.contains(solid, geoms), 0.0, d)
