"""Lane-level road network: lanes, lights, stop lines, and target chains.

A map is a set of directed centerline lanes with widths and connectivity
(successors plus left/right adjacency), signal timings, stop lines bound to
signals, and spawn points. Two hand-built towns ship with the package:
``town-a`` (training) and ``town-b`` (evaluation). Both are rectilinear
networks with signalized T-intersections, unsignalized corners, and one
passing-lane stretch so lane-change commands have somewhere to go.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from microdrive.geometry import Polyline, sample_arc, wrap_angle


class Command(enum.IntEnum):
    """High-level navigation commands, also the head/channel order."""

    TURN_LEFT = 0
    TURN_RIGHT = 1
    GO_STRAIGHT = 2
    FOLLOW_LANE = 3
    CHANGE_LEFT = 4
    CHANGE_RIGHT = 5


N_COMMANDS = len(Command)

COMMAND_NAMES = {c: c.name.lower() for c in Command}
COMMAND_BY_NAME = {v: k for k, v in COMMAND_NAMES.items()}

# Turn classification thresholds (radians) for successor selection.
_TURN_MIN = math.radians(25.0)
_STRAIGHT_MAX = math.radians(45.0)


class LightPhase(enum.IntEnum):
    GREEN = 0
    YELLOW = 1
    RED = 2


@dataclass
class Light:
    """Fixed-cycle signal. Phase is a pure function of sim time."""

    light_id: str
    cycle: float
    green: float
    yellow: float
    offset: float = 0.0

    def phase_at(self, t: float) -> LightPhase:
        u = (t - self.offset) % self.cycle
        if u < self.green:
            return LightPhase.GREEN
        if u < self.green + self.yellow:
            return LightPhase.YELLOW
        return LightPhase.RED

    def go_window(self):
        """(start, end) of the green+yellow window within the cycle."""
        return self.offset % self.cycle, (self.offset + self.green + self.yellow) % self.cycle


@dataclass
class StopLine:
    lane_id: str
    s: float
    light_id: str


@dataclass
class Lane:
    lane_id: str
    width: float
    line: Polyline
    successors: list = field(default_factory=list)
    left: str | None = None
    right: str | None = None

    @property
    def length(self) -> float:
        return self.line.length


def _windows_overlap(a0, a1, b0, b1, cycle):
    """Do two (start, end) windows on a circular timeline of `cycle` overlap?"""
    def segs(s, e):
        if s <= e:
            return [(s, e)]
        return [(s, cycle), (0.0, e)]

    for x0, x1 in segs(a0, a1):
        for y0, y1 in segs(b0, b1):
            if x0 < y1 and y0 < x1:
                return True
    return False


def _polylines_cross(pa: Polyline, pb: Polyline) -> bool:
    """Segment-intersection test between two polylines."""
    a0 = pa.points[:-1]
    a1 = pa.points[1:]
    b0 = pb.points[:-1]
    b1 = pb.points[1:]

    def cross(o, d, p):
        return d[..., 0] * (p[..., 1] - o[..., 1]) - d[..., 1] * (p[..., 0] - o[..., 0])

    da = a1 - a0
    db = b1 - b0
    A0 = a0[:, None, :]
    DA = da[:, None, :]
    B0 = b0[None, :, :]
    DB = db[None, :, :]
    d1 = cross(A0, DA, B0)
    d2 = cross(A0, DA, B0 + DB)
    d3 = cross(B0, DB, A0)
    d4 = cross(B0, DB, A0 + DA)
    hit = (d1 * d2 < 0) & (d3 * d4 < 0)
    return bool(hit.any())


class MapError(ValueError):
    """Raised for malformed or inconsistent map definitions."""


class LaneMap:
    def __init__(self, name, lanes, stop_lines=None, lights=None, spawn_points=None):
        self.name = name
        self.lanes: dict[str, Lane] = {l.lane_id: l for l in lanes}
        if len(self.lanes) != len(lanes):
            raise MapError("duplicate lane id")
        self.stop_lines: list[StopLine] = list(stop_lines or [])
        self.lights: dict[str, Light] = {l.light_id: l for l in (lights or [])}
        self.spawn_points: list[tuple[str, float]] = list(spawn_points or [])
        self.validate()
        self.lane_order = list(self.lanes)  # stable indexing for binary files
        self.lane_index = {lid: i for i, lid in enumerate(self.lane_order)}
        self._predecessors: dict[str, list[str]] = {lid: [] for lid in self.lanes}
        for lane in self.lanes.values():
            for s in lane.successors:
                self._predecessors[s].append(lane.lane_id)
        self._stop_by_lane: dict[str, list[StopLine]] = {}
        for sl in self.stop_lines:
            self._stop_by_lane.setdefault(sl.lane_id, []).append(sl)
        for sls in self._stop_by_lane.values():
            sls.sort(key=lambda s: s.s)
        self._npc_successors = self._compute_npc_successors()
        self._lane_bboxes = {
            lid: lane.line.bbox(pad=0.5 * lane.width) for lid, lane in self.lanes.items()
        }

    def validate(self):
        if not self.lanes:
            raise MapError("map has no lanes")
        for lane in self.lanes.values():
            if lane.width <= 0:
                raise MapError(f"lane {lane.lane_id}: width must be positive")
            if len(lane.line.points) < 2:
                raise MapError(f"lane {lane.lane_id}: needs at least 2 points")
            for s in lane.successors:
                if s not in self.lanes:
                    raise MapError(f"lane {lane.lane_id}: unknown successor {s!r}")
            for adj in (lane.left, lane.right):
                if adj is not None and adj not in self.lanes:
                    raise MapError(f"lane {lane.lane_id}: unknown adjacent lane {adj!r}")
        for sl in self.stop_lines:
            if sl.lane_id not in self.lanes:
                raise MapError(f"stop line on unknown lane {sl.lane_id!r}")
            if sl.light_id not in self.lights:
                raise MapError(f"stop line references unknown light {sl.light_id!r}")
            if not (0.0 <= sl.s <= self.lanes[sl.lane_id].length):
                raise MapError(f"stop line arc position off lane {sl.lane_id!r}")
        for lid, s in self.spawn_points:
            if lid not in self.lanes:
                raise MapError(f"spawn point on unknown lane {lid!r}")
            if not (0.0 <= s <= self.lanes[lid].length):
                raise MapError(f"spawn point arc position off lane {lid!r}")

    # -- topology ---------------------------------------------------------

    def predecessors(self, lane_id):
        return self._predecessors[lane_id]

    def stop_lines_on(self, lane_id):
        return self._stop_by_lane.get(lane_id, [])

    def turn_angle(self, lane_id, successor_id):
        """Net heading change from the end of a lane through a successor."""
        a = self.lanes[lane_id]
        b = self.lanes[successor_id]
        return wrap_angle(b.line.heading_at(b.length) - a.line.heading_at(a.length))

    def light_for_approach(self, lane_id):
        sls = self.stop_lines_on(lane_id)
        return sls[-1].light_id if sls else None

    def _compute_npc_successors(self):
        """Successor lists with cross-traffic-conflicting turns removed.

        A connector is unsafe for scripted traffic when its path crosses a
        connector leaving a different approach whose go-window can coincide
        with ours (same signal group, overlapping timings, or unsignalized).
        Scripted cars skip those; route-following agents may still take them.
        """
        allowed = {}
        for lane in self.lanes.values():
            if len(lane.successors) <= 1:
                allowed[lane.lane_id] = list(lane.successors)
                continue
            my_light = self.light_for_approach(lane.lane_id)
            # All connectors leaving sibling approaches that end where ours ends.
            rivals = []
            for other in self.lanes.values():
                if other.lane_id == lane.lane_id:
                    continue
                shared = set(self.lanes[s].line.points[0].tobytes() for s in other.successors) & set(
                    self.lanes[s].line.points[0].tobytes() for s in lane.successors
                )
                near_end = np.hypot(*(other.line.points[-1] - lane.line.points[-1])) < 40.0
                if shared or near_end:
                    rivals.append(other)
            ok = []
            for succ in lane.successors:
                my_turn = abs(self.turn_angle(lane.lane_id, succ))
                conflicted = False
                for other in rivals:
                    other_light = self.light_for_approach(other.lane_id)
                    if not self._go_concurrent(my_light, other_light):
                        continue
                    for osucc in other.successors:
                        crosses = _polylines_cross(self.lanes[succ].line, self.lanes[osucc].line)
                        merges = bool(
                            np.hypot(*(self.lanes[succ].line.points[-1] - self.lanes[osucc].line.points[-1])) < 1.0
                        )
                        if not (crosses or merges):
                            continue
                        # Priority: harder turns yield; on equal-angle merges
                        # the left turn yields to the right turn.
                        mine = self.turn_angle(lane.lane_id, succ)
                        theirs = self.turn_angle(other.lane_id, osucc)
                        if my_turn > abs(theirs) + 1e-6:
                            conflicted = True
                        elif abs(my_turn - abs(theirs)) <= 1e-6 and not (mine < 0.0 < theirs):
                            conflicted = True
                        if conflicted:
                            break
                    if conflicted:
                        break
                if not conflicted:
                    ok.append(succ)
            allowed[lane.lane_id] = ok if ok else list(lane.successors)
        return allowed

    def _go_concurrent(self, light_a, light_b):
        if light_a is None or light_b is None:
            return True
        if light_a == light_b:
            return True
        la, lb = self.lights[light_a], self.lights[light_b]
        if abs(la.cycle - lb.cycle) > 1e-9:
            return True
        a0, a1 = la.go_window()
        b0, b1 = lb.go_window()
        return _windows_overlap(a0, a1, b0, b1, la.cycle)

    def npc_successors(self, lane_id):
        return self._npc_successors[lane_id]

    def lanes_near(self, x, y, radius):
        """Lane ids whose padded bbox contains the disc around (x, y)."""
        out = []
        for lid, (x0, y0, x1, y1) in self._lane_bboxes.items():
            if x0 - radius <= x <= x1 + radius and y0 - radius <= y <= y1 + radius:
                out.append(lid)
        return out

    # -- lane matching and target chains ---------------------------------

    def locate(self, x, y, theta=None):
        """Best (lane_id, s, offset) for a pose.

        Prefers lanes whose centerline is within one lane width, aligned
        within 100 degrees when a heading is given; falls back to the
        globally nearest lane.
        """
        best = None
        best_key = None
        fallback = None
        fallback_key = None
        for lid, lane in self.lanes.items():
            x0, y0, x1, y1 = self._lane_bboxes[lid]
            pad = 2.0 * lane.width
            if not (x0 - pad <= x <= x1 + pad and y0 - pad <= y <= y1 + pad):
                continue
            s, off, head = lane.line.project(x, y)
            s, off, head = float(s), float(off), float(head)
            align = 0.0 if theta is None else abs(wrap_angle(theta - head))
            key = (abs(off), align)
            if fallback_key is None or key < fallback_key:
                fallback_key = key
                fallback = (lid, s, off)
            if abs(off) <= lane.width and (theta is None or align <= math.radians(100.0)):
                if best_key is None or key < best_key:
                    best_key = key
                    best = (lid, s, off)
        if best is not None:
            return best
        if fallback is not None:
            return fallback
        # Pose is far from every bbox; search everything once.
        for lid, lane in self.lanes.items():
            s, off, head = lane.line.project(x, y)
            key = (abs(float(off)), 0.0)
            if fallback_key is None or key < fallback_key:
                fallback_key = key
                fallback = (lid, float(s), float(off))
        return fallback

    def _pick_successor(self, lane_id, command, first_decision):
        succs = self.lanes[lane_id].successors
        if not succs:
            return None, False
        angles = [self.turn_angle(lane_id, s) for s in succs]
        if not first_decision or command in (Command.FOLLOW_LANE, Command.CHANGE_LEFT, Command.CHANGE_RIGHT):
            i = int(np.argmin(np.abs(angles)))
            return succs[i], True
        if command == Command.GO_STRAIGHT:
            i = int(np.argmin(np.abs(angles)))
            return succs[i], abs(angles[i]) <= _STRAIGHT_MAX
        if command == Command.TURN_LEFT:
            i = int(np.argmax(angles))
            return succs[i], angles[i] >= _TURN_MIN
        if command == Command.TURN_RIGHT:
            i = int(np.argmin(angles))
            return succs[i], angles[i] <= -_TURN_MIN
        raise ValueError(f"unhandled command {command}")

    def build_chain(self, x, y, theta, command, back=25.0, forward=70.0):
        """Target chain for a pose and command.

        Returns a TargetChain: the centerline path the command asks the
        vehicle to make progress along, stitched from the current lane, a
        command-consistent choice at the first junction ahead, and natural
        continuations. Lane changes restart the chain from the adjacent lane.
        """
        command = Command(command)
        loc = self.locate(x, y, theta)
        if loc is None:
            raise MapError("empty map")
        lane_id, s_now, _ = loc
        fallback = False
        if command in (Command.CHANGE_LEFT, Command.CHANGE_RIGHT):
            adj = self.lanes[lane_id].left if command == Command.CHANGE_LEFT else self.lanes[lane_id].right
            if adj is None:
                fallback = True
            else:
                nlane = self.lanes[adj]
                s_adj, _, _ = nlane.line.project(x, y)
                lane_id, s_now = adj, float(s_adj)

        # Walk back through predecessors to cover the grid behind the pose.
        chain_ids = [lane_id]
        lead = s_now
        while lead < back:
            preds = self.predecessors(chain_ids[0])
            if not preds:
                break
            angles = [abs(self.turn_angle(p, chain_ids[0])) for p in preds]
            p = preds[int(np.argmin(angles))]
            if p in chain_ids:
                break
            chain_ids.insert(0, p)
            lead += self.lanes[p].length

        # Walk forward, consuming the command at the first junction with a
        # real choice (or a single committed turn).
        tail = self.lanes[lane_id].length - s_now
        cur = lane_id
        pending = command in (Command.TURN_LEFT, Command.TURN_RIGHT, Command.GO_STRAIGHT)
        while tail < forward:
            nxt, ok = self._pick_successor(cur, command if pending else Command.FOLLOW_LANE, pending)
            if nxt is None:
                break
            if pending:
                # A turn command is consumed at the first junction offering a
                # choice, or at a committed bend; mid-road lane splits with a
                # single straight continuation keep it pending.
                is_choice = len(self.lanes[cur].successors) >= 2
                is_bend = abs(self.turn_angle(cur, nxt)) > _TURN_MIN
                if is_choice or is_bend:
                    if not ok:
                        fallback = True
                    pending = False
            if nxt in chain_ids:
                break
            chain_ids.append(nxt)
            tail += self.lanes[nxt].length
            cur = nxt

        pts = []
        vertex_lanes = []
        stop_events = []
        acc = 0.0
        for lid in chain_ids:
            lane = self.lanes[lid]
            p = lane.line.points
            if pts and np.hypot(*(p[0] - pts[-1])) < 1e-9:
                p = p[1:]
            for sl in self.stop_lines_on(lid):
                stop_events.append((acc + sl.s, sl.light_id))
            pts.extend(p)
            vertex_lanes.extend([lid] * len(p))
            acc += lane.length
        line = Polyline(pts)
        s_q, off_q, _ = line.project(x, y)
        return TargetChain(
            line=line,
            lane_ids=chain_ids,
            vertex_lanes=vertex_lanes,
            stop_events=stop_events,
            s_query=float(s_q),
            query_lane=lane_id,
            fallback=fallback,
            width=self.lanes[lane_id].width,
        )


@dataclass
class TargetChain:
    """Concatenated centerline for one (pose, command) query."""

    line: Polyline
    lane_ids: list
    vertex_lanes: list
    stop_events: list  # (s along chain, light_id)
    s_query: float
    query_lane: str
    fallback: bool
    width: float

    def lane_at(self, s):
        """Lane id owning the chain vertex nearest to arc position s."""
        idx = int(np.clip(np.searchsorted(self.line.cum_s, s, side="right") - 1, 0, len(self.vertex_lanes) - 1))
        return self.vertex_lanes[idx]


# -- map file format ------------------------------------------------------

MAP_MAGIC = "MAPFILE 1"


def write_map(lane_map: LaneMap, path):
    lines = [MAP_MAGIC, f"name {lane_map.name}"]
    for lane in lane_map.lanes.values():
        lines.append(f"lane {lane.lane_id}")
        lines.append(f"  width {float(lane.width)!r}")
        for x, y in lane.line.points:
            lines.append(f"  pt {float(x)!r} {float(y)!r}")
        if lane.successors:
            lines.append("  succ " + " ".join(lane.successors))
        if lane.left:
            lines.append(f"  left {lane.left}")
        if lane.right:
            lines.append(f"  right {lane.right}")
        lines.append("end")
    for l in lane_map.lights.values():
        lines.append(f"light {l.light_id} {float(l.cycle)!r} {float(l.green)!r} "
                     f"{float(l.yellow)!r} {float(l.offset)!r}")
    for sl in lane_map.stop_lines:
        lines.append(f"stopline {sl.lane_id} {float(sl.s)!r} {sl.light_id}")
    for lid, s in lane_map.spawn_points:
        lines.append(f"spawn {lid} {float(s)!r}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def read_map(path) -> LaneMap:
    with open(path) as f:
        raw = [ln.rstrip("\n") for ln in f]
    if not raw or raw[0].strip() != MAP_MAGIC:
        raise MapError(f"{path}: not a map file (missing '{MAP_MAGIC}' header)")
    name = None
    lanes = []
    lights = []
    stop_lines = []
    spawns = []
    i = 1
    while i < len(raw):
        ln = raw[i].strip()
        i += 1
        if not ln or ln.startswith("#"):
            continue
        tok = ln.split()
        try:
            if tok[0] == "name":
                name = tok[1]
            elif tok[0] == "lane":
                lane_id = tok[1]
                width = None
                pts = []
                succ = []
                left = right = None
                while i < len(raw):
                    ln2 = raw[i].strip()
                    i += 1
                    if ln2 == "end":
                        break
                    t2 = ln2.split()
                    if t2[0] == "width":
                        width = float(t2[1])
                    elif t2[0] == "pt":
                        pts.append((float(t2[1]), float(t2[2])))
                    elif t2[0] == "succ":
                        succ = t2[1:]
                    elif t2[0] == "left":
                        left = t2[1]
                    elif t2[0] == "right":
                        right = t2[1]
                    else:
                        raise MapError(f"{path}:{i}: unknown lane field {t2[0]!r}")
                if width is None:
                    raise MapError(f"{path}: lane {lane_id!r} missing width")
                lanes.append(Lane(lane_id, width, Polyline(pts), succ, left, right))
            elif tok[0] == "light":
                lights.append(Light(tok[1], float(tok[2]), float(tok[3]), float(tok[4]), float(tok[5])))
            elif tok[0] == "stopline":
                stop_lines.append(StopLine(tok[1], float(tok[2]), tok[3]))
            elif tok[0] == "spawn":
                spawns.append((tok[1], float(tok[2])))
            else:
                raise MapError(f"{path}:{i}: unknown directive {tok[0]!r}")
        except (IndexError, ValueError) as e:
            if isinstance(e, MapError):
                raise
            raise MapError(f"{path}:{i}: malformed line {ln!r}") from e
    if name is None:
        raise MapError(f"{path}: missing map name")
    return LaneMap(name, lanes, stop_lines, lights, spawns)


# -- built-in towns -------------------------------------------------------

LANE_WIDTH = 3.5
HALF_OFFSET = LANE_WIDTH / 2.0
BOX_R = 10.0


class _TownBuilder:
    def __init__(self, name):
        self.name = name
        self.lanes = []
        self.lights = []
        self.stop_lines = []
        self.spawns = []
        self._by_id = {}

    def _add(self, lane):
        self.lanes.append(lane)
        self._by_id[lane.lane_id] = lane
        return lane

    def straight(self, lane_id, p0, p1, offset=HALF_OFFSET):
        p0 = np.asarray(p0, dtype=float)
        p1 = np.asarray(p1, dtype=float)
        u = (p1 - p0) / np.hypot(*(p1 - p0))
        r = np.array([u[1], -u[0]])  # right of travel
        a = p0 + offset * r
        b = p1 + offset * r
        return self._add(Lane(lane_id, LANE_WIDTH, Polyline([a, b])))

    def path(self, lane_id, pts):
        return self._add(Lane(lane_id, LANE_WIDTH, Polyline(pts)))

    def connect(self, lane_id, src_id, dst_id, n=16):
        src = self._by_id[src_id]
        dst = self._by_id[dst_id]
        p0 = src.line.points[-1]
        t0 = src.line.heading_at(src.length)
        p1 = dst.line.points[0]
        t1 = dst.line.heading_at(0.0)
        pts = sample_arc(p0, t0, p1, t1, n=n)
        lane = self._add(Lane(lane_id, LANE_WIDTH, Polyline(pts)))
        src.successors.append(lane_id)
        lane.successors.append(dst_id)
        return lane

    def chain_succ(self, src_id, dst_id):
        self._by_id[src_id].successors.append(dst_id)

    def adjacency(self, left_id, right_id):
        # left_id is physically left of right_id for their travel direction
        self._by_id[left_id].right = right_id
        self._by_id[right_id].left = left_id

    def light(self, light_id, cycle, green, yellow, offset):
        self.lights.append(Light(light_id, cycle, green, yellow, offset))

    def stop(self, lane_id, light_id, back=0.5):
        lane = self._by_id[lane_id]
        self.stop_lines.append(StopLine(lane_id, lane.length - back, light_id))

    def spawn_along(self, lane_id, step=22.0, margin=8.0):
        lane = self._by_id[lane_id]
        s = margin
        while s <= lane.length - margin:
            self.spawns.append((lane_id, round(s, 3)))
            s += step

    def build(self):
        return LaneMap(self.name, self.lanes, self.stop_lines, self.lights, self.spawns)


def build_town_a() -> LaneMap:
    """Training town: 2x3 node ladder, two signalized T-junctions (B, E),
    four unsignalized corners, and an eastbound passing lane on A-B."""
    b = _TownBuilder("town-a")
    A, B, C = (0.0, 0.0), (90.0, 0.0), (180.0, 0.0)
    D, E, F = (0.0, 90.0), (90.0, 90.0), (180.0, 90.0)
    R = BOX_R

    # Bottom avenue eastbound (split for the passing-lane merge) and westbound.
    b.straight("aba", (A[0] + R, 0.0), (60.0, 0.0))
    b.straight("abb", (60.0, 0.0), (B[0] - R, 0.0))
    b.chain_succ("aba", "abb")
    # Passing lane: parallel to aba then tapers back onto the main line.
    b.path("ab2", [(25.0, -5.25), (50.0, -5.25), (56.0, -4.2), (60.0, -1.75)])
    b.chain_succ("ab2", "abb")
    b.adjacency("aba", "ab2")
    b.straight("ba", (B[0] - R, 0.0), (A[0] + R, 0.0))
    b.straight("bc", (B[0] + R, 0.0), (C[0] - R, 0.0))
    b.straight("cb", (C[0] - R, 0.0), (B[0] + R, 0.0))
    # Top avenue.
    b.straight("de", (D[0] + R, 90.0), (E[0] - R, 90.0))
    b.straight("ed", (E[0] - R, 90.0), (D[0] + R, 90.0))
    b.straight("ef", (E[0] + R, 90.0), (F[0] - R, 90.0))
    b.straight("fe", (F[0] - R, 90.0), (E[0] + R, 90.0))
    # Verticals.
    b.straight("ad", (0.0, A[1] + R), (0.0, D[1] - R))
    b.straight("da", (0.0, D[1] - R), (0.0, A[1] + R))
    b.straight("be", (90.0, B[1] + R), (90.0, E[1] - R))
    b.straight("eb", (90.0, E[1] - R), (90.0, B[1] + R))
    b.straight("cf", (180.0, C[1] + R), (180.0, F[1] - R))
    b.straight("fc", (180.0, F[1] - R), (180.0, C[1] + R))

    # Corner connectors (unsignalized 90-degree bends).
    b.connect("a:ba-ad", "ba", "ad")
    b.connect("a:da-ab", "da", "aba")
    b.connect("c:bc-cf", "bc", "cf")
    b.connect("c:fc-cb", "fc", "cb")
    b.connect("d:ad-de", "ad", "de")
    b.connect("d:ed-da", "ed", "da")
    b.connect("f:ef-fc", "ef", "fc")
    b.connect("f:cf-fe", "cf", "fe")

    # Signalized T at B (roads west, east, north).
    b.connect("b:abb-bc", "abb", "bc", n=4)
    b.connect("b:abb-be", "abb", "be")
    b.connect("b:cb-ba", "cb", "ba", n=4)
    b.connect("b:cb-be", "cb", "be")
    b.connect("b:eb-bc", "eb", "bc")
    b.connect("b:eb-ba", "eb", "ba")
    # Signalized T at E (roads west, east, south).
    b.connect("e:de-ef", "de", "ef", n=4)
    b.connect("e:de-eb", "de", "eb")
    b.connect("e:fe-ed", "fe", "ed", n=4)
    b.connect("e:fe-eb", "fe", "eb")
    b.connect("e:be-ed", "be", "ed")
    b.connect("e:be-ef", "be", "ef")

    # Complementary 36 s cycles with 6 s all-red clearance both ways.
    b.light("b.main", 36.0, 12.0, 2.0, 0.0)
    b.light("b.stem", 36.0, 8.0, 2.0, 20.0)
    b.light("e.main", 36.0, 12.0, 2.0, 0.0)
    b.light("e.stem", 36.0, 8.0, 2.0, 20.0)
    b.stop("abb", "b.main")
    b.stop("cb", "b.main")
    b.stop("eb", "b.stem")
    b.stop("de", "e.main")
    b.stop("fe", "e.main")
    b.stop("be", "e.stem")

    for lid in ["aba", "abb", "ba", "bc", "cb", "de", "ed", "ef", "fe", "ad", "da", "be", "eb", "cf", "fc"]:
        b.spawn_along(lid)
    return b.build()


def build_town_b() -> LaneMap:
    """Evaluation town: 100x80 ring with a mid cross-street, signalized Ts at
    G and H, and a northbound passing lane on the western edge."""
    b = _TownBuilder("town-b")
    # Nodes: P(0,0) Q(100,0) R(100,80) S(0,80), G(50,0) bottom-T, H(50,80) top-T.
    R0 = BOX_R

    b.straight("pg", (0.0 + R0, 0.0), (50.0 - R0, 0.0))
    b.straight("gp", (50.0 - R0, 0.0), (0.0 + R0, 0.0))
    b.straight("gq", (50.0 + R0, 0.0), (100.0 - R0, 0.0))
    b.straight("qg", (100.0 - R0, 0.0), (50.0 + R0, 0.0))
    b.straight("qr", (100.0, 0.0 + R0), (100.0, 80.0 - R0))
    b.straight("rq", (100.0, 80.0 - R0), (100.0, 0.0 + R0))
    b.straight("rh", (100.0 - R0, 80.0), (50.0 + R0, 80.0))
    b.straight("hr", (50.0 + R0, 80.0), (100.0 - R0, 80.0))
    b.straight("hs", (50.0 - R0, 80.0), (0.0 + R0, 80.0))
    b.straight("sh", (0.0 + R0, 80.0), (50.0 - R0, 80.0))
    # Western edge northbound split with a passing lane (22..58 of 80).
    b.straight("spa", (0.0, 80.0 - R0), (0.0, 40.0))
    b.straight("spb", (0.0, 40.0), (0.0, 0.0 + R0))
    b.chain_succ("spa", "spb")
    b.straight("psa", (0.0, 0.0 + R0), (0.0, 40.0))
    b.straight("psb", (0.0, 40.0), (0.0, 80.0 - R0))
    b.chain_succ("psa", "psb")
    b.path("ps2", [(-5.25, 16.0), (-5.25, 32.0), (-4.2, 37.0), (-1.75, 40.0)])
    b.chain_succ("ps2", "psb")
    b.adjacency("psa", "ps2")
    # Mid cross street between G and H.
    b.straight("gh", (50.0, 0.0 + R0), (50.0, 80.0 - R0))
    b.straight("hg", (50.0, 80.0 - R0), (50.0, 0.0 + R0))

    # Corners P, Q, R, S.
    b.connect("p:gp-ps", "gp", "psa")
    b.connect("p:sp-pg", "spb", "pg")
    b.connect("q:gq-qr", "gq", "qr")
    b.connect("q:rq-qg", "rq", "qg")
    b.connect("r:qr-rh", "qr", "rh")
    b.connect("r:hr-rq", "hr", "rq")
    b.connect("s:hs-sp", "hs", "spa")
    b.connect("s:ps-sh", "psb", "sh")

    # Signalized T at G (west, east, north roads).
    b.connect("g:pg-gq", "pg", "gq", n=4)
    b.connect("g:pg-gh", "pg", "gh")
    b.connect("g:qg-gp", "qg", "gp", n=4)
    b.connect("g:qg-gh", "qg", "gh")
    b.connect("g:hg-gq", "hg", "gq")
    b.connect("g:hg-gp", "hg", "gp")
    # Signalized T at H (west, east, south roads).
    b.connect("h:sh-hr", "sh", "hr", n=4)
    b.connect("h:sh-hg", "sh", "hg")
    b.connect("h:rh-hs", "rh", "hs", n=4)
    b.connect("h:rh-hg", "rh", "hg")
    b.connect("h:gh-hs", "gh", "hs")
    b.connect("h:gh-hr", "gh", "hr")

    b.light("g.main", 36.0, 12.0, 2.0, 0.0)
    b.light("g.stem", 36.0, 8.0, 2.0, 20.0)
    b.light("h.main", 36.0, 12.0, 2.0, 0.0)
    b.light("h.stem", 36.0, 8.0, 2.0, 20.0)
    b.stop("pg", "g.main")
    b.stop("qg", "g.main")
    b.stop("hg", "g.stem")
    b.stop("sh", "h.main")
    b.stop("rh", "h.main")
    b.stop("gh", "h.stem")

    for lid in ["pg", "gp", "gq", "qg", "qr", "rq", "rh", "hr", "hs", "sh", "spa", "spb", "psa", "psb", "gh", "hg"]:
        b.spawn_along(lid)
    return b.build()


_BUILTIN = {"town-a": build_town_a, "town-b": build_town_b}
_builtin_cache: dict[str, LaneMap] = {}


def load_map(name_or_path) -> LaneMap:
    """Resolve a built-in town name or a map file path."""
    key = str(name_or_path)
    if key in _BUILTIN:
        if key not in _builtin_cache:
            _builtin_cache[key] = _BUILTIN[key]()
        return _builtin_cache[key]
    return read_map(name_or_path)
