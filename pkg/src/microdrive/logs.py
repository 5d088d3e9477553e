"""Binary trajectory logs and the plain-text directory index.

One file per episode. Layout, all little-endian:

    magic line  b"WORLOG1\\n"
    u32 tick_rate_hz, u32 control_period, u32 record_spacing
    str map_name               (u16 length + utf8)
    u16 lane count, then lane ids      (each u16 length + utf8)
    u8 light count, then light ids
    records until EOF, each u32 payload-length prefixed:
        u64 tick
        f64 x, y, theta, v                 (ego)
        f64 steer, throttle; u8 brake      (action applied from this record)
        u8 command                         (route command active at the frame)
        u8 phase per light id, header order
        u16 npc count, then per NPC:
            u32 npc_id; f64 x, y, theta, v; f32 half_len, half_wid;
            u16 lane index (header order); f64 s, cruise_v; u32 trip_seed
        u8 observation flag; if set: u32 n, then n bytes of
            zlib-compressed bit-packed uint8 raster (10, 64, 64)

Records are stored once per control decision (spacing = control_period
ticks): that is the rate the fitting, labeling, and distillation stages all
consume, and the in-between ticks are reproducible by stepping the scripted
world forward from any stored snapshot.

The index file ``index.txt`` lists ``<filename> <record count>`` per line.
"""
from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from microdrive.lane_map import LaneMap, LightPhase
from microdrive.observation import OBS_CHANNELS, OBS_SIZE
from microdrive.world import Action, EgoState, NPCState, WorldSnapshot

LOG_MAGIC = b"WORLOG1\n"
INDEX_NAME = "index.txt"

_OBS_BITS = OBS_CHANNELS * OBS_SIZE * OBS_SIZE


def pack_observation(obs) -> bytes:
    return zlib.compress(np.packbits(obs.reshape(-1)).tobytes(), 6)


def unpack_observation(blob: bytes):
    bits = np.unpackbits(np.frombuffer(zlib.decompress(blob), dtype=np.uint8), count=_OBS_BITS)
    return bits.reshape(OBS_CHANNELS, OBS_SIZE, OBS_SIZE)


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<H", len(b)) + b


class LogWriter:
    def __init__(self, path, lane_map: LaneMap, tick_rate_hz: int, control_period: int):
        self.path = path
        self.lane_ids = list(lane_map.lane_order)
        self.lane_index = {lid: i for i, lid in enumerate(self.lane_ids)}
        self.light_ids = sorted(lane_map.lights)
        self.n_records = 0
        self._f = open(path, "wb")
        self._f.write(LOG_MAGIC)
        self._f.write(struct.pack("<III", int(round(tick_rate_hz)), int(control_period), int(control_period)))
        self._f.write(_pack_str(lane_map.name))
        self._f.write(struct.pack("<H", len(self.lane_ids)))
        for lid in self.lane_ids:
            self._f.write(_pack_str(lid))
        self._f.write(struct.pack("<B", len(self.light_ids)))
        for lid in self.light_ids:
            self._f.write(_pack_str(lid))

    def append(self, snapshot: WorldSnapshot, ego: EgoState, action: Action, command: int, obs=None):
        parts = [struct.pack("<Q", snapshot.tick)]
        parts.append(struct.pack("<4d", ego.x, ego.y, ego.theta, ego.v))
        parts.append(struct.pack("<2dB", action.steer, action.throttle, int(action.brake)))
        parts.append(struct.pack("<B", int(command)))
        parts.append(bytes(int(snapshot.light_phases[lid]) for lid in self.light_ids))
        parts.append(struct.pack("<H", len(snapshot.npcs)))
        for npc in snapshot.npcs:
            parts.append(struct.pack(
                "<I4d2fH2dI",
                npc.npc_id, npc.x, npc.y, npc.theta, npc.v,
                npc.half_len, npc.half_wid,
                self.lane_index[npc.lane_id], npc.s, npc.cruise_v, npc.trip_seed,
            ))
        if obs is None:
            parts.append(b"\x00")
        else:
            blob = pack_observation(obs)
            parts.append(struct.pack("<BI", 1, len(blob)) + blob)
        payload = b"".join(parts)
        self._f.write(struct.pack("<I", len(payload)))
        self._f.write(payload)
        self.n_records += 1

    def close(self):
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass
class TrajectoryLog:
    """One decoded episode, arrays indexed by record."""

    map_name: str
    tick_rate_hz: int
    control_period: int
    ticks: np.ndarray          # (N,) u64
    ego: np.ndarray            # (N, 4) f64
    actions: np.ndarray        # (N, 3) f64: steer, throttle, brake
    commands: np.ndarray       # (N,) u8
    snapshots: list            # N WorldSnapshots
    observations: list         # N entries: (10, 64, 64) uint8 or None
    path: str = ""

    def __len__(self):
        return len(self.ticks)


class LogFormatError(ValueError):
    pass


def read_log(path) -> TrajectoryLog:
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(LOG_MAGIC):
        raise LogFormatError(f"{path}: bad magic")
    off = len(LOG_MAGIC)

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        vals = struct.unpack_from(fmt, data, off)
        off += size
        return vals

    def take_str():
        nonlocal off
        (n,) = struct.unpack_from("<H", data, off)
        off += 2
        s = data[off:off + n].decode("utf-8")
        off += n
        return s

    tick_rate, control_period, spacing = take("<III")
    map_name = take_str()
    (n_lanes,) = take("<H")
    lane_ids = [take_str() for _ in range(n_lanes)]
    (n_lights,) = take("<B")
    light_ids = [take_str() for _ in range(n_lights)]

    ticks, egos, acts, cmds, snaps, obss = [], [], [], [], [], []
    while off < len(data):
        (plen,) = take("<I")
        end = off + plen
        (tick,) = take("<Q")
        ex, ey, eth, ev = take("<4d")
        steer, throttle, brake = take("<2dB")
        (command,) = take("<B")
        phases = {light_ids[i]: LightPhase(data[off + i]) for i in range(n_lights)}
        off += n_lights
        (n_npcs,) = take("<H")
        npcs = []
        for _ in range(n_npcs):
            nid, x, y, th, v, hl, hw, lidx, s, cv, seed = take("<I4d2fH2dI")
            npcs.append(NPCState(nid, x, y, th, v, float(hl), float(hw), lane_ids[lidx], s, cv, seed))
        (has_obs,) = take("<B")
        obs = None
        if has_obs:
            (blen,) = take("<I")
            obs = unpack_observation(data[off:off + blen])
            off += blen
        if off != end:
            raise LogFormatError(f"{path}: record at tick {tick} has {end - off} stray bytes")
        ticks.append(tick)
        egos.append((ex, ey, eth, ev))
        acts.append((steer, throttle, float(brake)))
        cmds.append(command)
        snaps.append(WorldSnapshot(tick=tick, map_name=map_name, npcs=npcs, light_phases=phases))
        obss.append(obs)

    return TrajectoryLog(
        map_name=map_name,
        tick_rate_hz=tick_rate,
        control_period=control_period,
        ticks=np.array(ticks, dtype=np.uint64),
        ego=np.array(egos, dtype=np.float64).reshape(-1, 4),
        actions=np.array(acts, dtype=np.float64).reshape(-1, 3),
        commands=np.array(cmds, dtype=np.uint8),
        snapshots=snaps,
        observations=obss,
        path=str(path),
    )


def write_index(log_dir, entries):
    """entries: list of (filename, record_count)."""
    with open(os.path.join(log_dir, INDEX_NAME), "w") as f:
        for name, count in entries:
            f.write(f"{name} {count}\n")


def read_index(log_dir):
    out = []
    with open(os.path.join(log_dir, INDEX_NAME)) as f:
        for ln in f:
            ln = ln.strip()
            if not ln:
                continue
            name, count = ln.rsplit(" ", 1)
            out.append((name, int(count)))
    return out


def log_files(log_dir):
    """Paths of the directory's logs, index order."""
    return [os.path.join(log_dir, name) for name, _ in read_index(log_dir)]
