"""Frames JSONL ingestion with bond-order thresholding."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple

from .errors import FrameFormatError, TrajectoryError, ValidationError
from .species import is_element_symbol


class Atom(NamedTuple):
    index: int
    element: str


class Bond(NamedTuple):
    i: int
    j: int
    bond_order: float


@dataclass(frozen=True)
class BondThreshold:
    bo_min: float

    def __post_init__(self):
        if not (isinstance(self.bo_min, (int, float)) and math.isfinite(self.bo_min) and self.bo_min > 0):
            raise ValidationError(f"bo_min must be a positive finite number, got {self.bo_min!r}")

    def keep(self, bond_order: float) -> bool:
        return bond_order > self.bo_min


@dataclass
class Frame:
    trajectory_id: str
    time_ps: int
    elements: tuple[str, ...]
    bonds: list[Bond]

    @property
    def atoms(self) -> list[Atom]:
        return [Atom(i, e) for i, e in enumerate(self.elements)]

    @property
    def n_atoms(self) -> int:
        return len(self.elements)

    def to_record(self) -> dict:
        return {
            "trajectory_id": self.trajectory_id,
            "time_ps": self.time_ps,
            "elements": list(self.elements),
            "bonds": [[b.i, b.j, b.bond_order] for b in self.bonds],
        }


@dataclass(frozen=True)
class TrajectoryManifest:
    trajectory_id: str
    frame_count: int
    interval_ps: int
    atom_count: int

    def to_record(self) -> dict:
        return {
            "trajectory_id": self.trajectory_id,
            "frame_count": self.frame_count,
            "interval_ps": self.interval_ps,
            "atom_count": self.atom_count,
        }


def apply_threshold(frame: Frame, threshold: BondThreshold) -> Frame:
    bo_min = threshold.bo_min
    return Frame(frame.trajectory_id, frame.time_ps, frame.elements,
                 [b for b in frame.bonds if b.bond_order > bo_min])


def _is_int(x) -> bool:
    return type(x) is int


_valid_elements: dict[tuple, tuple] = {}


def _checked_elements(elements, line) -> tuple[str, ...]:
    key = tuple(elements)
    known = _valid_elements.get(key)
    if known is not None:
        return known
    if not key:
        raise FrameFormatError("elements must be a non-empty list", line)
    for e in key:
        if not is_element_symbol(e):
            raise FrameFormatError(f"invalid element symbol {e!r}", line)
    if len(_valid_elements) < 4096:
        _valid_elements[key] = key
    return key


def frame_from_record(rec, threshold: BondThreshold | None = None, line: int | None = None) -> Frame:
    if not isinstance(rec, dict):
        raise FrameFormatError("record is not a JSON object", line)
    try:
        tid = rec["trajectory_id"]
        t = rec["time_ps"]
        elements = rec["elements"]
        raw_bonds = rec["bonds"]
    except KeyError as exc:
        raise FrameFormatError(f"missing field {exc.args[0]!r}", line) from None
    if not isinstance(tid, str):
        raise FrameFormatError("trajectory_id must be a string", line)
    if type(t) is not int or t < 0:
        raise FrameFormatError(f"time_ps must be a non-negative integer, got {t!r}", line)
    if not isinstance(elements, list):
        raise FrameFormatError("elements must be a non-empty list", line)
    elements = _checked_elements(elements, line)
    if not isinstance(raw_bonds, list):
        raise FrameFormatError("bonds must be a list", line)

    n = len(elements)
    bo_min = threshold.bo_min if threshold is not None else -1.0
    seen = set()
    bonds = []
    for b in raw_bonds:
        try:
            i, j, bo = b
        except (TypeError, ValueError):
            raise FrameFormatError(f"bond {b!r} is not [i, j, bo]", line) from None
        if type(b) is not list or type(i) is not int or type(j) is not int:
            raise FrameFormatError(f"bond {b!r} is not [int, int, bo]", line)
        tb = type(bo)
        if not (tb is float or tb is int) or not (0 <= bo < math.inf):
            raise FrameFormatError(f"bond {b!r} has invalid bond order", line)
        if not (0 <= i < n and 0 <= j < n):
            raise FrameFormatError(
                f"dangling bond ({i}, {j}) in frame {tid!r} t={t}: only {n} atoms", line)
        if i == j:
            raise FrameFormatError(f"self bond on atom {i} in frame {tid!r} t={t}", line)
        key = (i, j) if i < j else (j, i)
        if key in seen:
            raise FrameFormatError(f"duplicate bond {key} in frame {tid!r} t={t}", line)
        seen.add(key)
        if bo > bo_min:
            bonds.append(Bond(i, j, float(bo)))
    return Frame(tid, t, elements, bonds)


class FrameReader:
    """Iterate validated, thresholded frames from a frames JSONL file.

    Trajectories may be interleaved. ``intervals`` maps trajectory id to the
    constant frame spacing once two frames of it have been read.
    """

    def __init__(self, path, threshold: BondThreshold):
        self.path = path
        self.threshold = threshold
        self.intervals: dict[str, int] = {}
        self.frame_counts: dict[str, int] = {}
        self._last_time: dict[str, int] = {}

    def __iter__(self) -> Iterator[Frame]:
        with open(self.path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise FrameFormatError(f"malformed JSON: {exc.msg}", lineno) from None
                frame = frame_from_record(rec, self.threshold, lineno)
                self._check_timing(frame, lineno)
                yield frame

    def _check_timing(self, frame: Frame, lineno: int):
        tid = frame.trajectory_id
        prev = self._last_time.get(tid)
        if prev is not None:
            step = frame.time_ps - prev
            if step <= 0:
                raise TrajectoryError(
                    f"line {lineno}: time_ps not strictly increasing in trajectory {tid!r} "
                    f"({prev} -> {frame.time_ps})")
            known = self.intervals.get(tid)
            if known is None:
                self.intervals[tid] = step
            elif step != known:
                raise TrajectoryError(
                    f"line {lineno}: non-constant frame interval in trajectory {tid!r} "
                    f"({known} ps then {step} ps)")
        self._last_time[tid] = frame.time_ps
        self.frame_counts[tid] = self.frame_counts.get(tid, 0) + 1


def parse_frames(path, config: BondThreshold) -> FrameReader:
    return FrameReader(path, config)


def validate_trajectory(frames: Iterable[Frame]) -> TrajectoryManifest:
    tid = None
    count = 0
    atom_count = None
    prev_t = None
    interval = None
    for f in frames:
        if tid is None:
            tid = f.trajectory_id
        elif f.trajectory_id != tid:
            raise TrajectoryError(f"mixed trajectories {tid!r} and {f.trajectory_id!r}")
        if atom_count is None:
            atom_count = f.n_atoms
        elif f.n_atoms != atom_count:
            raise TrajectoryError(
                f"trajectory {tid!r}: atom count changes from {atom_count} to {f.n_atoms} "
                f"at t={f.time_ps}; atom creation/destruction is unsupported")
        if prev_t is not None:
            step = f.time_ps - prev_t
            if step <= 0:
                raise TrajectoryError(f"trajectory {tid!r}: time_ps not strictly increasing at t={f.time_ps}")
            if interval is None:
                interval = step
            elif step != interval:
                raise TrajectoryError(
                    f"trajectory {tid!r}: non-constant interval ({interval} ps then {step} ps)")
        prev_t = f.time_ps
        count += 1
    if count == 0:
        raise TrajectoryError("empty frame list")
    if count < 2:
        raise TrajectoryError(f"trajectory {tid!r}: at least 2 frames are needed to define an interval")
    return TrajectoryManifest(tid, count, interval, atom_count)


def write_frames(frames: Iterable[Frame], path, mode: str = "w") -> int:
    """Serialize frames as JSONL.

    Frames that share the same elements/bonds objects (as expanded synthetic
    trajectories do) reuse one encoded tail; the cache keeps those objects
    alive so ids stay unambiguous.
    """
    tails: dict[tuple[int, int], tuple] = {}
    n = 0
    with open(path, mode, encoding="utf-8") as fh:
        for f in frames:
            key = (id(f.elements), id(f.bonds))
            hit = tails.get(key)
            if hit is None or hit[0] is not f.elements or hit[1] is not f.bonds:
                tail = json.dumps({"elements": list(f.elements),
                                   "bonds": [[b[0], b[1], b[2]] for b in f.bonds]},
                                  separators=(",", ":"))[1:]
                hit = tails[key] = (f.elements, f.bonds, tail)
            fh.write('{"trajectory_id":%s,"time_ps":%d,%s\n' % (json.dumps(f.trajectory_id), f.time_ps, hit[2]))
            n += 1
    return n


def ingest(path, threshold: BondThreshold) -> list[TrajectoryManifest]:
    """Read a frames file and return one manifest per trajectory, in first-seen order."""
    atoms: dict[str, int] = {}
    order = []
    reader = parse_frames(path, threshold)
    for f in reader:
        tid = f.trajectory_id
        if tid not in atoms:
            atoms[tid] = f.n_atoms
            order.append(tid)
        elif atoms[tid] != f.n_atoms:
            raise TrajectoryError(
                f"trajectory {tid!r}: atom count changes from {atoms[tid]} to {f.n_atoms} at t={f.time_ps}")
    out = []
    for tid in order:
        if reader.frame_counts[tid] < 2:
            raise TrajectoryError(f"trajectory {tid!r}: at least 2 frames are needed to define an interval")
        out.append(TrajectoryManifest(tid, reader.frame_counts[tid], reader.intervals[tid], atoms[tid]))
    return out
