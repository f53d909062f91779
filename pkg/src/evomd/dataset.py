"""Balancing, windowing, trajectory-disjoint splitting and instruction formatting."""
from __future__ import annotations

import bisect
import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from .errors import ValidationError
from .events import EventSequence, MolecularEvent
from .templates import DEFAULT_TEMPLATES, PLACEHOLDER, TemplateSet

TASKS = ("forward_1", "forward_2", "backward", "potential_k")
EVAL_TASKS = TASKS + ("nstep",)
CLI_TASK_NAMES = {
    "forward1": "forward_1",
    "forward2": "forward_2",
    "backward": "backward",
    "potentialk": "potential_k",
    "nstep": "nstep",
}
TARGET_LEN = {"forward_1": 1, "forward_2": 2, "backward": 1, "potential_k": 1}


def task_name(name: str) -> str:
    if name in EVAL_TASKS:
        return name
    try:
        return CLI_TASK_NAMES[name]
    except KeyError:
        raise ValidationError(f"unknown task {name!r}; expected one of {sorted(CLI_TASK_NAMES)}") from None


# -- strata -------------------------------------------------------------------

@dataclass(frozen=True)
class DurationBins:
    """Contiguous duration bins; every bin is [lo, hi) except the last, which is closed."""

    edges: tuple[int, ...] = (10, 50, 150, 500)
    labels: tuple[str, ...] = ("short", "medium", "long")

    def __post_init__(self):
        if len(self.edges) < 2:
            raise ValidationError("need at least two bin edges")
        if any(b <= a for a, b in zip(self.edges, self.edges[1:])):
            raise ValidationError(f"bin edges must be strictly increasing: {self.edges}")
        if len(self.labels) != len(self.edges) - 1:
            raise ValidationError("need one label per bin")

    def index(self, duration_ps: int) -> int:
        if not self.edges[0] <= duration_ps <= self.edges[-1]:
            raise ValidationError(f"duration {duration_ps} ps outside bins [{self.edges[0]}, {self.edges[-1]}]")
        return min(bisect.bisect_right(self.edges, duration_ps) - 1, len(self.labels) - 1)

    def label(self, duration_ps: int) -> str:
        return self.labels[self.index(duration_ps)]


@dataclass(frozen=True, order=True)
class Stratum:
    formula: str
    duration_bin: str


def stratum_counts(events: Iterable[MolecularEvent], bins: DurationBins) -> Counter:
    return Counter(Stratum(ev.formula.text, bins.label(ev.duration_ps)) for ev in events)


def balance(events: Sequence[MolecularEvent], bins: DurationBins, cap: int, seed: int) -> list[MolecularEvent]:
    """Cap every (species, duration bin) stratum at ``cap`` events.

    Sampling is without replacement and seeded; survivors keep their input
    order, so lineage chronology is untouched.
    """
    if not isinstance(cap, int) or cap < 1:
        raise ValidationError(f"cap must be a positive integer, got {cap!r}")
    members: dict[Stratum, list[int]] = defaultdict(list)
    for k, ev in enumerate(events):
        members[Stratum(ev.formula.text, bins.label(ev.duration_ps))].append(k)
    rng = random.Random(seed)
    keep = []
    for stratum in sorted(members):
        idx = members[stratum]
        keep.extend(idx if len(idx) <= cap else rng.sample(idx, cap))
    keep.sort()
    return [events[k] for k in keep]


# -- samples ------------------------------------------------------------------

Step = tuple[str, int]


@dataclass
class PredictionSample:
    sample_id: str
    task: str
    trajectory_id: str
    lineage_id: int
    history: tuple[Step, ...]
    targets: tuple[Step, ...]
    history_start_ps: tuple[int, ...] = ()
    target_start_ps: tuple[int, ...] = ()
    split: str = ""

    def key(self) -> tuple:
        """Serialized (task, history, targets) used for leakage checks."""
        return (self.task, self.history, self.targets)

    def to_record(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "task": self.task,
            "split": self.split,
            "trajectory_id": self.trajectory_id,
            "lineage_id": self.lineage_id,
            "history": [list(s) for s in self.history],
            "targets": [list(s) for s in self.targets],
            "history_start_ps": list(self.history_start_ps),
            "target_start_ps": list(self.target_start_ps),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "PredictionSample":
        try:
            return cls(
                sample_id=rec["sample_id"],
                task=rec["task"],
                trajectory_id=rec["trajectory_id"],
                lineage_id=int(rec.get("lineage_id", 0)),
                history=tuple((str(f), int(d)) for f, d in rec["history"]),
                targets=tuple((str(f), int(d)) for f, d in rec["targets"]),
                history_start_ps=tuple(rec.get("history_start_ps", ())),
                target_start_ps=tuple(rec.get("target_start_ps", ())),
                split=rec.get("split", ""),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"bad sample record: {exc}") from None


def _steps(events: Sequence[MolecularEvent]) -> tuple[Step, ...]:
    return tuple((e.formula.text, e.duration_ps) for e in events)


def build_windows(sequences: Iterable[EventSequence], task: str,
                  history_len_range: tuple[int, int] = (3, 5), seed: int = 0,
                  horizon: int | None = None) -> tuple[list[PredictionSample], int]:
    """Stride-1 windows over each lineage.

    Each window draws its history length uniformly from ``history_len_range``;
    a window whose drawn length runs past the sequence end is dropped.
    Returns the samples and the number of sequences too short for any window.
    """
    task = task_name(task)
    hmin, hmax = history_len_range
    if not 1 <= hmin <= hmax:
        raise ValidationError(f"invalid history length range {history_len_range}")
    if task == "nstep":
        if not horizon or horizon < 1:
            raise ValidationError("nstep windows need a positive horizon")
        t = horizon
    else:
        t = TARGET_LEN[task]
    backward = task == "backward"
    rng = random.Random(seed)
    samples = []
    skipped = 0
    for seq in sequences:
        evs = seq.events
        n = len(evs)
        if n < hmin + t:
            skipped += 1
            continue
        i = 0
        while i + hmin + t <= n:
            h = hmin if hmin == hmax else rng.randint(hmin, hmax)
            if i + h + t <= n:
                if backward:
                    hist, tgt = evs[i + 1:i + 1 + h], evs[i:i + 1]
                else:
                    hist, tgt = evs[i:i + h], evs[i + h:i + h + t]
                samples.append(PredictionSample(
                    sample_id=f"{task}/{seq.trajectory_id}/{seq.lineage_id}/{i}",
                    task=task,
                    trajectory_id=seq.trajectory_id,
                    lineage_id=seq.lineage_id,
                    history=_steps(hist),
                    targets=_steps(tgt),
                    history_start_ps=tuple(e.start_ps for e in hist),
                    target_start_ps=tuple(e.start_ps for e in tgt),
                ))
            i += 1
    return samples, skipped


def split_disjoint(samples: Sequence[PredictionSample], test_fraction: float,
                   seed: int) -> tuple[list[PredictionSample], list[PredictionSample]]:
    """Assign whole trajectories to train or test."""
    if not 0 < test_fraction < 1:
        raise ValidationError(f"test fraction must lie in (0, 1), got {test_fraction}")
    tids = sorted({s.trajectory_id for s in samples})
    if len(tids) < 2:
        raise ValidationError(f"need at least 2 trajectories to split, got {len(tids)}")
    rng = random.Random(seed)
    rng.shuffle(tids)
    n_test = min(max(round(test_fraction * len(tids)), 1), len(tids) - 1)
    test_ids = set(tids[:n_test])
    train, test = [], []
    for s in samples:
        if s.trajectory_id in test_ids:
            test.append(replace(s, split="test"))
        else:
            train.append(replace(s, split="train"))
    return train, test


# -- instruction formatting ---------------------------------------------------

@dataclass(frozen=True)
class InstructionRecord:
    system: str
    instruction: str
    output: str


def render_history(history: Sequence[Step]) -> str:
    return "; ".join(f"({f},{d})" for f, d in history)


def render_targets(targets: Sequence[Step]) -> str:
    return "; ".join(f"({f}, {d})" for f, d in targets)


def format_instructions(samples: Iterable[PredictionSample],
                        templates: TemplateSet = DEFAULT_TEMPLATES) -> list[InstructionRecord]:
    templates.verify()
    out = []
    for s in samples:
        if s.task not in TASKS:
            raise ValidationError(f"unknown task {s.task!r}")
        if not s.history:
            raise ValidationError(f"sample {s.sample_id} has an empty history")
        text = templates.instruction_for(s.task).replace(PLACEHOLDER, render_history(s.history))
        out.append(InstructionRecord(templates.system, text, render_targets(s.targets)))
    return out


def dataset_records(samples: Sequence[PredictionSample],
                    templates: TemplateSet = DEFAULT_TEMPLATES) -> list[dict]:
    recs = []
    for s, ins in zip(samples, format_instructions(samples, templates)):
        rec = s.to_record()
        rec.update(system=ins.system, instruction=ins.instruction, output=ins.output)
        recs.append(rec)
    return recs


# -- Q&A mixing ---------------------------------------------------------------

QA_FIELDS = ("system", "instruction", "output")


def interleave_qa(forecast_records: Sequence[dict], qa_records: Sequence[dict], ratio: float,
                  seed: int) -> list[dict]:
    """Shuffle forecast records with ``round(ratio * len(forecast))`` Q&A records."""
    if ratio < 0:
        raise ValidationError("ratio must be non-negative")
    for k, rec in enumerate(qa_records):
        if not isinstance(rec, dict) or any(not isinstance(rec.get(f), str) for f in QA_FIELDS):
            raise ValidationError(f"Q&A record {k} lacks string fields {QA_FIELDS}")
    n_forecast = len(forecast_records)
    n_qa = round(ratio * n_forecast)
    if n_qa > len(qa_records):
        best = len(qa_records) / n_forecast if n_forecast else 0.0
        raise ValidationError(
            f"ratio {ratio} needs {n_qa} Q&A records but only {len(qa_records)} were supplied; "
            f"maximum attainable ratio is {best:.6f}")
    rng = random.Random(seed)
    chosen = sorted(rng.sample(range(len(qa_records)), n_qa))
    mixed = list(forecast_records)
    for k in chosen:
        rec = dict(qa_records[k])
        rec.setdefault("task", "qa")
        mixed.append(rec)
    rng.shuffle(mixed)
    return mixed


@dataclass
class DatasetManifest:
    seed: int
    bin_edges: list[int]
    cap: int
    counts: dict = field(default_factory=dict)
    template_hashes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "bin_edges": self.bin_edges, "cap": self.cap,
                "counts": self.counts, "template_hashes": self.template_hashes}
