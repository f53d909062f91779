"""Score prediction files against held-out samples."""
from __future__ import annotations

import csv
import json
import os
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .dataset import PredictionSample
from .errors import FormulaError, ValidationError
from .species import CanonicalFormula, parse_formula

UNPARSEABLE = "UNPARSEABLE"
TAXONOMY = ("under_sulfidation", "over_sulfidation", "oxygen_deviation", "other")
FAILURE_TAGS = ("no_tuple", "bad_formula", "bad_duration", "extra_text", "wrong_arity", "no_output")

_TUPLE_RE = re.compile(r"\(([^()]*)\)")
_INT_RE = re.compile(r"[0-9]+\Z")
_SEPARATORS = " \t\r\n;,"


@dataclass(frozen=True)
class ParseFailure:
    category: str
    detail: str = ""

    def __bool__(self):
        return False


def _as_text(raw) -> str:
    if isinstance(raw, str):
        return raw
    if isinstance(raw, (bytes, bytearray)):
        return bytes(raw).decode("utf-8", errors="replace")
    return "" if raw is None else str(raw)


def _parse_tuple(body: str):
    parts = body.split(",")
    if len(parts) != 2:
        # formula first, so "(SMo3)" reports the formula problem
        head = parts[0].strip()
        try:
            parse_formula(head, strict=True)
        except FormulaError as exc:
            return ParseFailure("bad_formula", str(exc))
        return ParseFailure("bad_duration", f"expected (formula, duration), got ({body})")
    f_txt, d_txt = parts[0].strip(), parts[1].strip()
    try:
        formula = parse_formula(f_txt, strict=True)
    except FormulaError as exc:
        return ParseFailure("bad_formula", str(exc))
    if not _INT_RE.match(d_txt) or int(d_txt) <= 0:
        return ParseFailure("bad_duration", f"duration {d_txt!r} is not a positive integer")
    return formula, int(d_txt)


def parse_output(raw, n_targets: int = 1):
    """Parse ``n_targets`` tuples separated by ``;``/``,``/whitespace.

    Returns a tuple of (formula, duration) pairs or a ParseFailure; never raises.
    """
    text = _as_text(raw).strip()
    bodies = _TUPLE_RE.findall(text)
    if not bodies:
        return ParseFailure("no_tuple", "no parenthesized tuple found")
    leftover = _TUPLE_RE.sub(" ", text).strip(_SEPARATORS)
    if leftover.translate({ord(c): None for c in _SEPARATORS}):
        return ParseFailure("extra_text", f"text outside tuples: {leftover[:40]!r}")
    out = []
    for body in bodies:
        res = _parse_tuple(body)
        if isinstance(res, ParseFailure):
            return res
        out.append(res)
    if len(out) != n_targets:
        return ParseFailure("wrong_arity", f"expected {n_targets} tuple(s), got {len(out)}")
    return tuple(out)


def parse_prediction(raw):
    """Single ``(formula, duration)`` tuple or ParseFailure."""
    res = parse_output(raw, 1)
    if isinstance(res, ParseFailure):
        if res.category == "wrong_arity":
            return ParseFailure("extra_text", res.detail)
        return res
    return res[0]


def classify_mismatch(pred: CanonicalFormula, truth: CanonicalFormula,
                      sulfur: str = "S", oxygen: str = "O") -> str:
    if pred == truth:
        raise ValidationError(f"{pred} equals the ground truth; not a mismatch")
    sp, st = pred.count(sulfur), truth.count(sulfur)
    if sp < st:
        return "under_sulfidation"
    if sp > st:
        return "over_sulfidation"
    if pred.count(oxygen) != truth.count(oxygen):
        return "oxygen_deviation"
    return "other"


@dataclass
class TaskReport:
    task: str
    n_samples: int
    hits: int
    wrong_valid: int
    parse_failures: int
    per_step_accuracy: list[float]
    accuracy: float
    missing_rate: float
    failure_categories: dict[str, int]
    potential_k: dict[int, float]
    duration_mae: float | None
    duration_within_tol: float | None
    duration_tolerance_ps: int
    taxonomy: dict[str, int]
    confusion_labels: list[str]
    confusion: list[list[int]]

    def taxonomy_shares(self) -> dict[str, float]:
        total = sum(self.taxonomy.values())
        return {k: (100.0 * v / total if total else 0.0) for k, v in self.taxonomy.items()}

    def diagonal_fraction(self) -> float:
        rows = self.confusion_labels[:-1]
        diag = sum(self.confusion[i][i] for i in range(len(rows)))
        total = sum(map(sum, self.confusion))
        return diag / total if total else 0.0

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "n_samples": self.n_samples,
            "hits": self.hits,
            "wrong_valid": self.wrong_valid,
            "parse_failures": self.parse_failures,
            "accuracy": self.accuracy,
            "missing_rate": self.missing_rate,
            "per_step_accuracy": self.per_step_accuracy,
            "failure_categories": self.failure_categories,
            "potential_k": {str(k): v for k, v in self.potential_k.items()},
            "duration_mae_ps": self.duration_mae,
            "duration_within_tol": self.duration_within_tol,
            "duration_tolerance_ps": self.duration_tolerance_ps,
            "taxonomy": self.taxonomy,
            "taxonomy_shares": self.taxonomy_shares(),
            "confusion": {"labels": self.confusion_labels, "matrix": self.confusion},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TaskReport":
        return cls(
            task=d["task"], n_samples=d["n_samples"], hits=d["hits"], wrong_valid=d["wrong_valid"],
            parse_failures=d["parse_failures"], per_step_accuracy=d["per_step_accuracy"],
            accuracy=d["accuracy"], missing_rate=d["missing_rate"],
            failure_categories=d["failure_categories"],
            potential_k={int(k): v for k, v in d["potential_k"].items()},
            duration_mae=d["duration_mae_ps"], duration_within_tol=d["duration_within_tol"],
            duration_tolerance_ps=d["duration_tolerance_ps"], taxonomy=d["taxonomy"],
            confusion_labels=d["confusion"]["labels"], confusion=d["confusion"]["matrix"],
        )


def _index_entries(entries: Iterable[dict], truth_ids: set[str]) -> dict[str, dict]:
    out = {}
    for e in entries:
        sid = e.get("sample_id")
        if not isinstance(sid, str):
            raise ValidationError(f"prediction entry without a sample_id: {e!r}")
        if sid in out:
            raise ValidationError(f"duplicate sample_id {sid!r} in predictions")
        if sid not in truth_ids:
            raise ValidationError(f"unknown sample_id {sid!r} in predictions")
        out[sid] = e
    return out


def score_task(entries: Iterable[dict], ground_truth: Sequence[PredictionSample], task: str,
               duration_tolerance_ps: int = 50, k_max: int = 5) -> TaskReport:
    """Species-level accuracy; unparseable outputs count against it.

    Headline counts (hits / wrong_valid / parse_failures, taxonomy, confusion)
    refer to the first predicted step. Multi-step accuracy is the mean of the
    per-step accuracies.
    """
    truth = [s for s in ground_truth if s.task == task]
    if not truth:
        raise ValidationError(f"no ground-truth samples for task {task!r}")
    n = len(truth)
    index = _index_entries(entries, {s.sample_id for s in truth})
    horizon = max(len(s.targets) for s in truth)

    step_hits = [0] * horizon
    step_totals = [0] * horizon
    hits = wrong = failed = 0
    fail_cats: Counter = Counter()
    taxonomy = {k: 0 for k in TAXONOMY}
    pk_hits = [0] * (k_max + 1)
    abs_err = []
    confusion_pairs: Counter = Counter()
    truth_species = set()

    for s in truth:
        e = index.get(s.sample_id)
        true_steps = [(parse_formula(f, strict=False), d) for f, d in s.targets]
        truth_species.add(true_steps[0][0].text)
        if e is None:
            parsed = ParseFailure("no_output")
            cands = []
        else:
            cands = e.get("candidates")
            raw = e.get("output")
            if raw is None:
                raw = cands[0] if cands else None
            parsed = parse_output(raw, len(true_steps)) if raw is not None else ParseFailure("no_output")
            if cands is None:
                cands = [raw] if len(true_steps) == 1 and raw is not None else []

        for j in range(len(true_steps)):
            step_totals[j] += 1
        if isinstance(parsed, ParseFailure):
            failed += 1
            fail_cats[parsed.category] += 1
            confusion_pairs[(true_steps[0][0].text, UNPARSEABLE)] += 1
        else:
            for j, ((pf, pd), (tf, td)) in enumerate(zip(parsed, true_steps)):
                if pf == tf:
                    step_hits[j] += 1
                    abs_err.append(abs(pd - td))
            pf0, tf0 = parsed[0][0], true_steps[0][0]
            confusion_pairs[(tf0.text, pf0.text)] += 1
            if pf0 == tf0:
                hits += 1
            else:
                wrong += 1
                taxonomy[classify_mismatch(pf0, tf0)] += 1

        seen = False
        target = true_steps[0][0]
        for k in range(1, k_max + 1):
            if not seen and k <= len(cands):
                c = parse_prediction(cands[k - 1])
                if not isinstance(c, ParseFailure) and c[0] == target:
                    seen = True
            if seen:
                pk_hits[k] += 1

    per_step = [100.0 * h / t if t else 0.0 for h, t in zip(step_hits, step_totals)]
    labels = sorted(truth_species | {p for _, p in confusion_pairs if p != UNPARSEABLE})
    col = {lab: i for i, lab in enumerate(labels)}
    col[UNPARSEABLE] = len(labels)
    matrix = [[0] * (len(labels) + 1) for _ in labels]
    for (t, p), c in confusion_pairs.items():
        matrix[col[t]][col[p]] += c

    return TaskReport(
        task=task, n_samples=n, hits=hits, wrong_valid=wrong, parse_failures=failed,
        per_step_accuracy=per_step,
        accuracy=float(np.mean(per_step)) if horizon > 1 else per_step[0],
        missing_rate=100.0 * failed / n,
        failure_categories=dict(sorted(fail_cats.items())),
        potential_k={k: 100.0 * pk_hits[k] / n for k in range(1, k_max + 1)},
        duration_mae=float(np.mean(abs_err)) if abs_err else None,
        duration_within_tol=float(np.mean([e <= duration_tolerance_ps for e in abs_err])) if abs_err else None,
        duration_tolerance_ps=duration_tolerance_ps,
        taxonomy=taxonomy,
        confusion_labels=labels + [UNPARSEABLE],
        confusion=matrix,
    )


def confusion_matrix(entries: Iterable[dict], ground_truth: Sequence[PredictionSample],
                     task: str | None = None) -> tuple[list[str], list[list[int]]]:
    """Rows are truth species, columns predicted species plus UNPARSEABLE."""
    if task is None:
        task = ground_truth[0].task
    rep = score_task(entries, ground_truth, task)
    return rep.confusion_labels, rep.confusion


@dataclass
class EvalReport:
    task: str
    runs: list[TaskReport]
    sources: list[str] = field(default_factory=list)

    def aggregate(self) -> dict:
        acc = [r.accuracy for r in self.runs]
        miss = [r.missing_rate for r in self.runs]
        std = (lambda xs: float(np.std(xs, ddof=1)) if len(xs) > 1 else 0.0)
        return {
            "n_runs": len(self.runs),
            "accuracy_mean": float(np.mean(acc)), "accuracy_std": std(acc),
            "missing_rate_mean": float(np.mean(miss)), "missing_rate_std": std(miss),
        }

    def to_dict(self) -> dict:
        return {"task": self.task, "sources": self.sources,
                "runs": [r.to_dict() for r in self.runs], "aggregate": self.aggregate()}

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(d["task"], [TaskReport.from_dict(r) for r in d["runs"]], list(d.get("sources", [])))


def summary_text(report: EvalReport) -> str:
    lines = [f"task: {report.task}"]
    for i, r in enumerate(report.runs):
        src = report.sources[i] if i < len(report.sources) else f"run {i}"
        lines.append(f"[{src}] n={r.n_samples}")
        lines.append(f"  accuracy      {r.accuracy:.2f}%")
        lines.append(f"  missing rate  {r.missing_rate:.2f}%")
        if len(r.per_step_accuracy) > 1:
            steps = ", ".join(f"{a:.2f}%" for a in r.per_step_accuracy)
            lines.append(f"  per step      {steps}")
        pk = ", ".join(f"k={k}: {v:.2f}%" for k, v in r.potential_k.items())
        lines.append(f"  potential-k   {pk}")
        if r.duration_mae is not None:
            lines.append(f"  duration MAE  {r.duration_mae:.2f} ps; within ±{r.duration_tolerance_ps} ps: "
                         f"{100 * r.duration_within_tol:.2f}%")
        shares = r.taxonomy_shares()
        lines.append("  mismatches    " + ", ".join(f"{k} {shares[k]:.2f}%" for k in TAXONOMY))
    if len(report.runs) > 1:
        a = report.aggregate()
        lines.append(f"mean accuracy {a['accuracy_mean']:.2f} ± {a['accuracy_std']:.2f}%, "
                     f"missing {a['missing_rate_mean']:.2f} ± {a['missing_rate_std']:.2f}%")
    return "\n".join(lines) + "\n"


def _write_csvs(r: TaskReport, out_dir: str) -> None:
    with open(os.path.join(out_dir, "confusion.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["truth"] + r.confusion_labels)
        for lab, row in zip(r.confusion_labels, r.confusion):
            w.writerow([lab] + row)
    with open(os.path.join(out_dir, "nstep_decay.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "accuracy"])
        for j, a in enumerate(r.per_step_accuracy, start=1):
            w.writerow([j, repr(a)])
    shares = r.taxonomy_shares()
    with open(os.path.join(out_dir, "error_taxonomy.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", "count", "share_percent"])
        for k in TAXONOMY:
            w.writerow([k, r.taxonomy[k], repr(shares[k])])


def emit_report(report: EvalReport, out_dir) -> list[str]:
    """Write report.json, the CSVs and summary.txt; returns written paths."""
    try:
        os.makedirs(out_dir, exist_ok=True)
        written = []
        path = os.path.join(out_dir, "report.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        written.append(path)
        if len(report.runs) == 1:
            _write_csvs(report.runs[0], out_dir)
            written += [os.path.join(out_dir, n) for n in ("confusion.csv", "nstep_decay.csv", "error_taxonomy.csv")]
        else:
            for i, r in enumerate(report.runs):
                sub = os.path.join(out_dir, f"run-{i}")
                os.makedirs(sub, exist_ok=True)
                _write_csvs(r, sub)
                written += [os.path.join(sub, n) for n in ("confusion.csv", "nstep_decay.csv", "error_taxonomy.csv")]
        path = os.path.join(out_dir, "summary.txt")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(summary_text(report))
        written.append(path)
        return written
    except OSError as exc:
        raise ValidationError(f"cannot write report to {out_dir}: {exc}") from None
