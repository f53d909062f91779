"""Lineage tracking, run-length event encoding and band-pass filtering."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import TrajectoryError, ValidationError
from .species import CanonicalFormula, Component, canonicalize, component_sets, formula_of


@dataclass(frozen=True, slots=True)
class MolecularEvent:
    trajectory_id: str
    lineage_id: int
    formula: CanonicalFormula
    start_ps: int
    duration_ps: int

    def to_record(self) -> dict:
        return {
            "trajectory_id": self.trajectory_id,
            "lineage_id": self.lineage_id,
            "formula": self.formula.text,
            "start_ps": self.start_ps,
            "duration_ps": self.duration_ps,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "MolecularEvent":
        dur = rec["duration_ps"]
        if not isinstance(dur, int) or dur < 1:
            raise ValidationError(f"duration_ps must be a positive integer, got {dur!r}")
        return cls(rec["trajectory_id"], int(rec["lineage_id"]), formula_of(rec["formula"]),
                   int(rec["start_ps"]), dur)


@dataclass(frozen=True)
class FilterBand:
    tau_min_ps: int = 10
    tau_max_ps: float = 500

    def __post_init__(self):
        if self.tau_min_ps <= 0 or self.tau_max_ps <= 0:
            raise ValidationError("band edges must be positive")
        if self.tau_min_ps > self.tau_max_ps:
            raise ValidationError(f"tau_min ({self.tau_min_ps}) exceeds tau_max ({self.tau_max_ps})")

    def __contains__(self, duration_ps) -> bool:
        return self.tau_min_ps <= duration_ps <= self.tau_max_ps


@dataclass
class EventSequence:
    trajectory_id: str
    lineage_id: int
    events: list[MolecularEvent] = field(default_factory=list)

    def __len__(self):
        return len(self.events)


def group_sequences(events: Iterable[MolecularEvent]) -> list[EventSequence]:
    """Group events by (trajectory, lineage); order is first appearance, events by start time."""
    seqs: dict[tuple[str, int], EventSequence] = {}
    for ev in events:
        key = (ev.trajectory_id, ev.lineage_id)
        seq = seqs.get(key)
        if seq is None:
            seq = seqs[key] = EventSequence(ev.trajectory_id, ev.lineage_id)
        seq.events.append(ev)
    for seq in seqs.values():
        seq.events.sort(key=lambda e: e.start_ps)
    return list(seqs.values())


# -- lineage tracking -------------------------------------------------------

PLAN_CACHE_SIZE = 4096


class LineageTracker:
    """Greedy maximum-overlap matching of components across frames.

    Pairs (lineage, component) with nonzero overlap are taken in order of
    decreasing overlap, ties by the lineage's smaller minimum atom index, then
    the component's. Unmatched components open new lineages in order of their
    minimum atom index; unmatched lineages end.
    """

    def __init__(self):
        self.next_id = 0
        self._live: list[tuple[int, tuple[int, ...]]] = []
        self._sig: tuple = ()
        self._ids: list[int] = []
        # (previous partition, partition) -> previous position per component or -1;
        # lineage ids never break ties since live lineages have distinct min atoms
        self._plans: dict[tuple, list[int]] = {}

    def step(self, comps: Sequence[Sequence[int]]) -> list[int]:
        """Lineage id for each component (components ordered by min index)."""
        sig = tuple(map(tuple, comps))
        if sig == self._sig:
            return self._ids
        key = (self._sig, sig)
        plan = self._plans.get(key)
        if plan is None:
            plan = self._plan(sig)
            if len(self._plans) >= PLAN_CACHE_SIZE:
                self._plans.clear()
            self._plans[key] = plan
        prev = self._ids
        ids = []
        for p in plan:
            if p < 0:
                ids.append(self.next_id)
                self.next_id += 1
            else:
                ids.append(prev[p])
        self._live = list(zip(ids, sig))
        self._sig = sig
        self._ids = ids
        return ids

    def _plan(self, sig: tuple) -> list[int]:
        owner = {}
        for ci, atoms in enumerate(sig):
            for a in atoms:
                owner[a] = ci
        pairs = []
        for li, atoms in enumerate(self._sig):
            tally: dict[int, int] = {}
            for a in atoms:
                ci = owner.get(a)
                if ci is not None:
                    tally[ci] = tally.get(ci, 0) + 1
            lmin = atoms[0]
            for ci, ov in tally.items():
                pairs.append((-ov, lmin, sig[ci][0], li, ci))
        pairs.sort()
        plan = [-1] * len(sig)
        used = set()
        for _, _, _, li, ci in pairs:
            if plan[ci] == -1 and li not in used:
                plan[ci] = li
                used.add(li)
        return plan


def track_lineages(frames: Iterable) -> Iterator[dict[int, Component]]:
    """Per frame, a mapping lineage id -> component."""
    tracker = LineageTracker()
    for frame in frames:
        sets = component_sets(frame.n_atoms, frame.bonds)
        ids = tracker.step(sets)
        elements = frame.elements
        yield {
            lid: Component(tuple(idx), canonicalize(elements[i] for i in idx))
            for lid, idx in zip(ids, sets)
        }


# -- run-length encoding ----------------------------------------------------

def rle_encode(lineage_formulas: Sequence[tuple[int, CanonicalFormula]], interval_ps: int,
               trajectory_id: str = "", lineage_id: int = 0) -> list[MolecularEvent]:
    if interval_ps <= 0:
        raise ValidationError("interval must be positive")
    events = []
    run_formula = None
    run_start = 0
    run_len = 0
    prev_t = None
    for t, f in lineage_formulas:
        if prev_t is not None and t - prev_t != interval_ps:
            raise TrajectoryError(f"frame times {prev_t} -> {t} do not follow the {interval_ps} ps interval")
        prev_t = t
        if f == run_formula:
            run_len += 1
            continue
        if run_formula is not None:
            events.append(MolecularEvent(trajectory_id, lineage_id, run_formula, run_start, run_len * interval_ps))
        run_formula, run_start, run_len = f, t, 1
    if run_formula is not None:
        events.append(MolecularEvent(trajectory_id, lineage_id, run_formula, run_start, run_len * interval_ps))
    return events


def rle_decode(events: Iterable[MolecularEvent], interval_ps: int) -> list[tuple[int, CanonicalFormula]]:
    out = []
    for ev in events:
        for k in range(ev.duration_ps // interval_ps):
            out.append((ev.start_ps + k * interval_ps, ev.formula))
    return out


class _TrajectoryState:
    __slots__ = ("tracker", "runs", "done", "first_t", "last_t", "interval", "n_atoms", "sig", "ids", "formulas",
                 "graphs")

    def __init__(self):
        self.tracker = LineageTracker()
        self.runs: dict[int, list] = {}
        self.done: list[tuple] = []
        self.first_t = None
        self.last_t = None
        self.interval = None
        self.n_atoms = None
        self.sig = None
        self.ids = None
        self.formulas = None
        self.graphs: dict[tuple, tuple] = {}


class EventExtractor:
    """Streaming frames -> events over possibly interleaved trajectories.

    Durations are run length times the trajectory's frame interval. A lineage
    that ends or changes formula closes its current run.
    """

    def __init__(self, track_element: str | None = None):
        self.track_element = track_element
        self._states: dict[str, _TrajectoryState] = {}
        self.frames_seen = 0

    def add(self, frame) -> None:
        tid = frame.trajectory_id
        st = self._states.get(tid)
        if st is None:
            st = self._states[tid] = _TrajectoryState()
            st.n_atoms = frame.n_atoms
        elif frame.n_atoms != st.n_atoms:
            raise TrajectoryError(
                f"trajectory {tid!r}: atom count changes from {st.n_atoms} to {frame.n_atoms} at t={frame.time_ps}")
        t = frame.time_ps
        if st.last_t is not None:
            step = t - st.last_t
            if step <= 0:
                raise TrajectoryError(f"trajectory {tid!r}: time_ps not strictly increasing at t={t}")
            if st.interval is None:
                st.interval = step
            elif step != st.interval:
                raise TrajectoryError(f"trajectory {tid!r}: non-constant interval ({st.interval} then {step} ps)")
        else:
            st.first_t = t
        st.last_t = t
        self.frames_seen += 1

        if frame.bonds == st.sig:
            ids, formulas = st.ids, st.formulas
        else:
            elements = frame.elements
            key = (elements, tuple(frame.bonds))
            hit = st.graphs.get(key)
            if hit is None:
                sets = component_sets(frame.n_atoms, frame.bonds)
                hit = (sets, [canonicalize(elements[i] for i in idx) for idx in sets])
                if len(st.graphs) >= PLAN_CACHE_SIZE:
                    st.graphs.clear()
                st.graphs[key] = hit
            sets, formulas = hit
            ids = st.tracker.step(sets)
            st.sig, st.ids, st.formulas = frame.bonds, ids, formulas

        runs = st.runs
        live = set(ids)
        for lid in [lid for lid in runs if lid not in live]:
            f, start, n = runs.pop(lid)
            st.done.append((lid, start, f, n))
        for lid, f in zip(ids, formulas):
            run = runs.get(lid)
            if run is None:
                runs[lid] = [f, t, 1]
            elif run[0] == f:
                run[2] += 1
            else:
                st.done.append((lid, run[1], run[0], run[2]))
                runs[lid] = [f, t, 1]

    def intervals(self) -> dict[str, int | None]:
        return {tid: st.interval for tid, st in self._states.items()}

    def finish(self, interval_ps: int | None = None) -> list[MolecularEvent]:
        """Close open runs and return events ordered by trajectory, lineage, start."""
        out = []
        for tid, st in self._states.items():
            for lid, (f, start, n) in st.runs.items():
                st.done.append((lid, start, f, n))
            st.runs = {}
            interval = st.interval if st.interval is not None else interval_ps
            if interval is None:
                raise TrajectoryError(f"trajectory {tid!r} has a single frame; interval undefined")
            st.done.sort(key=lambda r: (r[0], r[1]))
            for lid, start, f, n in st.done:
                if self.track_element is not None and f.count(self.track_element) == 0:
                    continue
                out.append(MolecularEvent(tid, lid, f, start, n * interval))
        return out


def extract_events(frames: Iterable, track_element: str | None = None) -> list[MolecularEvent]:
    ex = EventExtractor(track_element)
    for frame in frames:
        ex.add(frame)
    return ex.finish()


# -- band-pass ----------------------------------------------------------------

def bandpass_filter(events: Iterable[MolecularEvent], band: FilterBand) -> list[MolecularEvent]:
    lo, hi = band.tau_min_ps, band.tau_max_ps
    return [ev for ev in events if lo <= ev.duration_ps <= hi]


# -- stage report -------------------------------------------------------------

STAGE_NAMES = ("Raw MD", "Extracted", "Filtered", "Balanced")
STAGE_UNITS = ("events", "events", "events", "sequence pairs")


@dataclass
class StageReport:
    stages: list[tuple[str, int]]
    durations: dict[str, dict[str, float]] = field(default_factory=dict)

    def retention(self) -> list[float]:
        """Fraction kept relative to the previous stage; 0.0 where that stage was empty."""
        out = []
        for k in range(1, len(self.stages)):
            prev = self.stages[k - 1][1]
            out.append(self.stages[k][1] / prev if prev else 0.0)
        return out

    def to_dict(self) -> dict:
        return {
            "stages": [{"name": n, "count": c} for n, c in self.stages],
            "retention": self.retention(),
            "durations": self.durations,
        }

    def render(self) -> str:
        width = max(len(n) for n, _ in self.stages)
        lines = []
        for k, (name, count) in enumerate(self.stages):
            unit = STAGE_UNITS[k] if k < len(STAGE_UNITS) else "items"
            line = f"{name:<{width}}  {count:>11,} {unit}"
            if k:
                line += f"  ({100 * self.retention()[k - 1]:.2f}% of previous)"
            lines.append(line)
        if self.durations:
            lines.append("")
            lines.append(f"{'species':<10} {'n':>8} {'min':>6} {'q1':>8} {'median':>8} {'q3':>8} {'max':>6}")
            for sp, d in self.durations.items():
                lines.append(f"{sp:<10} {d['n']:>8} {d['min']:>6g} {d['q1']:>8g} {d['median']:>8g} "
                             f"{d['q3']:>8g} {d['max']:>6g}")
        return "\n".join(lines) + "\n"


def duration_summary(events: Iterable[MolecularEvent]) -> dict[str, dict[str, float]]:
    by_species: dict[str, list[int]] = {}
    for ev in events:
        by_species.setdefault(ev.formula.text, []).append(ev.duration_ps)
    out = {}
    for sp in sorted(by_species):
        arr = np.asarray(by_species[sp], dtype=float)
        q1, med, q3 = np.percentile(arr, [25, 50, 75])
        out[sp] = {"n": int(arr.size), "min": float(arr.min()), "q1": float(q1),
                   "median": float(med), "q3": float(q3), "max": float(arr.max())}
    return out


def pipeline_stats(raw: int, extracted: int, filtered: int, balanced: int,
                   events: Iterable[MolecularEvent] | None = None) -> StageReport:
    counts = (raw, extracted, filtered, balanced)
    for c in counts:
        if c < 0:
            raise ValidationError("stage counts must be non-negative")
    return StageReport(list(zip(STAGE_NAMES, counts)),
                       duration_summary(events) if events is not None else {})


# -- IO -----------------------------------------------------------------------

def write_events(events: Iterable[MolecularEvent], path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for ev in events:
            fh.write(json.dumps(ev.to_record(), separators=(",", ":")))
            fh.write("\n")
            n += 1
    return n


def read_events(path) -> list[MolecularEvent]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(MolecularEvent.from_record(json.loads(line)))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"{path}: line {lineno}: bad event record: {exc}") from None
    return out

