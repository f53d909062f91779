"""Config-driven end-to-end runs with content-hashed, resumable stages."""
from __future__ import annotations

import hashlib
import json
import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

from . import baselines
from .dataset import (EVAL_TASKS, TASKS, DatasetManifest, DurationBins, PredictionSample, balance,
                      build_windows, dataset_records, interleave_qa, split_disjoint, stratum_counts)
from .errors import ConfigError, StageError, ValidationError
from .evaluation import EvalReport, emit_report, score_task
from .events import (EventExtractor, FilterBand, bandpass_filter, group_sequences, pipeline_stats, read_events,
                     write_events)
from .jsonl import dumps, file_sha256, read_json, read_jsonl, write_json, write_jsonl
from .kmc import ReactionNetwork, derive_seed, expand_to_frames, generate, load_network
from .templates import DEFAULT_TEMPLATES
from .trajectory_io import BondThreshold, FrameReader, ingest, write_frames

RUN_MANIFEST = "run_manifest.json"


@dataclass
class PipelineConfig:
    work_dir: str = "run"
    network: str | None = None
    frames: str | None = None
    trajectories: int = 10
    events_per: int = 200
    interval_ps: int = 1
    bo_min: float = 0.3
    track_element: str | None = None
    tau_min: int = 10
    tau_max: int = 500
    bin_edges: list[int] = field(default_factory=lambda: [10, 50, 150, 500])
    bin_labels: list[str] = field(default_factory=lambda: ["short", "medium", "long"])
    cap: int = 50
    history_min: int = 3
    history_max: int = 5
    nstep_horizon: int = 3
    test_fraction: float = 0.2
    qa: str | None = None
    qa_ratio: float = 0.0
    seed: int | None = None
    model: str = "markov"
    order: int = 1
    alpha: float = 0.1
    k: int = 5
    duration_tolerance: int = 50

    def validate(self) -> None:
        if (self.network is None) == (self.frames is None):
            raise ConfigError("exactly one of 'network' and 'frames' must be set")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        for name in ("trajectories", "events_per", "interval_ps", "cap", "nstep_horizon", "k", "order"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.duration_tolerance < 0:
            raise ConfigError("duration_tolerance must be non-negative")
        try:
            BondThreshold(self.bo_min)
            FilterBand(self.tau_min, self.tau_max)
            DurationBins(tuple(self.bin_edges), tuple(self.bin_labels))
        except ValidationError as exc:
            raise ConfigError(str(exc)) from None
        if self.bin_edges[0] > self.tau_min or self.bin_edges[-1] < self.tau_max:
            raise ConfigError(f"bin edges {self.bin_edges} do not cover [{self.tau_min}, {self.tau_max}]")
        if not 1 <= self.history_min <= self.history_max:
            raise ConfigError(f"bad history range [{self.history_min}, {self.history_max}]")
        if not 0 < self.test_fraction < 1:
            raise ConfigError(f"test_fraction must lie in (0, 1), got {self.test_fraction}")
        if self.qa_ratio < 0 or (self.qa_ratio > 0 and self.qa is None):
            raise ConfigError("qa_ratio > 0 needs a 'qa' path")
        if self.model not in baselines.KINDS:
            raise ConfigError(f"unknown model kind {self.model!r}")
        if self.alpha <= 0:
            raise ConfigError("alpha must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict, base_dir: str = ".") -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        extra = sorted(set(d) - known)
        if extra:
            raise ConfigError(f"unknown config keys: {extra}")
        cfg = cls(**d)
        for name in ("work_dir", "network", "frames", "qa"):
            p = getattr(cfg, name)
            if p is not None and not os.path.isabs(p):
                setattr(cfg, name, os.path.normpath(os.path.join(base_dir, p)))
        return cfg


def load_config(path, seed: int | None = None) -> PipelineConfig:
    try:
        d = read_json(path)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    cfg = PipelineConfig.from_dict(d, os.path.dirname(os.path.abspath(path)))
    if seed is not None:
        cfg.seed = seed
    elif cfg.seed is None and os.environ.get("EVOMD_SEED"):
        try:
            cfg.seed = int(os.environ["EVOMD_SEED"])
        except ValueError:
            raise ConfigError(f"EVOMD_SEED is not an integer: {os.environ['EVOMD_SEED']!r}") from None
    if cfg.seed is None:
        cfg.seed = 0
    return cfg


def stage_seed(seed: int, name: str) -> int:
    return int.from_bytes(hashlib.sha256(f"{seed}/{name}".encode()).digest()[:8], "big")


# -- stage machinery ------------------------------------------------------------

@dataclass
class Stage:
    name: str
    inputs: list[str]
    outputs: list[str]
    params: dict
    run: Callable[[], dict]


@dataclass
class RunResult:
    manifest: dict
    executed: list[str]
    skipped: list[str]


class Pipeline:
    def __init__(self, config: PipelineConfig, threads: int = 1):
        config.validate()
        self.cfg = config
        self.threads = max(1, threads)
        self.dir = config.work_dir

    def path(self, rel: str) -> str:
        return os.path.join(self.dir, rel)

    def _rel(self, p: str) -> str:
        ap, ad = os.path.abspath(p), os.path.abspath(self.dir)
        return os.path.relpath(ap, ad) if ap.startswith(ad + os.sep) else os.path.basename(ap)

    def _key(self, stage: Stage) -> str:
        body = {
            "stage": stage.name,
            "params": stage.params,
            "inputs": {self._rel(p): file_sha256(p) for p in stage.inputs},
        }
        return hashlib.sha256(dumps(body).encode()).hexdigest()

    def _outputs_match(self, entry: dict) -> bool:
        for rel, digest in entry.get("outputs", {}).items():
            p = self.path(rel)
            if not os.path.isfile(p) or file_sha256(p) != digest:
                return False
        return True

    def run(self) -> RunResult:
        os.makedirs(self.dir, exist_ok=True)
        mpath = self.path(RUN_MANIFEST)
        previous = {}
        if os.path.isfile(mpath):
            try:
                previous = read_json(mpath).get("stages", {})
            except (OSError, json.JSONDecodeError, AttributeError):
                previous = {}
        manifest = {"config": self._public_config(), "stages": {}}
        executed, skipped = [], []
        for stage in self.stages():
            try:
                key = self._key(stage)
            except OSError as exc:
                raise StageError(stage.name, f"missing input: {exc}") from None
            prev = previous.get(stage.name)
            if prev and prev.get("key") == key and prev.get("status") == "complete" and self._outputs_match(prev):
                manifest["stages"][stage.name] = prev
                skipped.append(stage.name)
                continue
            try:
                counts = stage.run()
            except Exception as exc:
                manifest["stages"][stage.name] = {"key": key, "status": "invalid", "error": str(exc),
                                                  "outputs": {}, "counts": {}}
                write_json(manifest, mpath)
                raise StageError(stage.name, exc) from exc
            manifest["stages"][stage.name] = {
                "key": key,
                "status": "complete",
                "outputs": {o: file_sha256(self.path(o)) for o in stage.outputs},
                "counts": counts,
            }
            executed.append(stage.name)
            write_json(manifest, mpath)
        write_json(manifest, mpath)
        return RunResult(manifest, executed, skipped)

    def _public_config(self) -> dict:
        d = self.cfg.to_dict()
        d.pop("work_dir")
        for name in ("network", "frames", "qa"):
            if d[name] is not None:
                d[name] = os.path.basename(d[name])
        return d

    # -- stage definitions -------------------------------------------------------

    def stages(self) -> list[Stage]:
        c = self.cfg
        p = self.path
        out = []
        if c.network is not None:
            out.append(Stage("simulate", [c.network], ["frames.jsonl"],
                             {"trajectories": c.trajectories, "events_per": c.events_per,
                              "interval_ps": c.interval_ps, "seed": c.seed}, self._simulate))
            frames = p("frames.jsonl")
        else:
            frames = c.frames
        self._frames = frames
        out.append(Stage("ingest", [frames], ["ingest_manifest.json"], {"bo_min": c.bo_min}, self._ingest))
        out.append(Stage("extract", [frames, p("ingest_manifest.json")], ["events.jsonl"],
                         {"bo_min": c.bo_min, "track_element": c.track_element}, self._extract))
        out.append(Stage("filter", [p("events.jsonl")], ["filtered.jsonl"],
                         {"tau_min": c.tau_min, "tau_max": c.tau_max}, self._filter))
        out.append(Stage("balance", [p("filtered.jsonl")], ["balanced.jsonl"],
                         {"bin_edges": c.bin_edges, "bin_labels": c.bin_labels, "cap": c.cap, "seed": c.seed},
                         self._balance))
        out.append(Stage("windows", [p("balanced.jsonl")], ["windows.jsonl"],
                         {"history": [c.history_min, c.history_max], "horizon": c.nstep_horizon, "seed": c.seed},
                         self._windows))
        out.append(Stage("split", [p("windows.jsonl")], ["samples.jsonl"],
                         {"test_fraction": c.test_fraction, "seed": c.seed}, self._split))
        out.append(Stage("format", [p("samples.jsonl"), p("events.jsonl"), p("filtered.jsonl")],
                         ["dataset.jsonl", "nstep.jsonl", "manifest.json", "stats.json", "stats.txt"],
                         {"templates": DEFAULT_TEMPLATES.hashes(), "bin_edges": c.bin_edges, "cap": c.cap,
                          "tau_min": c.tau_min, "seed": c.seed}, self._format))
        mix_inputs = [p("dataset.jsonl")] + ([c.qa] if c.qa else [])
        out.append(Stage("mix", mix_inputs, ["mixed.jsonl"], {"ratio": c.qa_ratio, "seed": c.seed}, self._mix))
        out.append(Stage("fit", [p("dataset.jsonl")], [f"models/{t}.json" for t in TASKS],
                         {"kind": c.model, "order": c.order, "alpha": c.alpha, "seed": c.seed}, self._fit))
        out.append(Stage("predict", [p("dataset.jsonl"), p("nstep.jsonl")] + [p(f"models/{t}.json") for t in TASKS],
                         [f"predictions/{t}.jsonl" for t in EVAL_TASKS], {"k": c.k}, self._predict))
        report_files = [f"reports/{t}/{n}" for t in EVAL_TASKS
                        for n in ("report.json", "confusion.csv", "nstep_decay.csv", "error_taxonomy.csv", "summary.txt")]
        out.append(Stage("eval", [p("dataset.jsonl"), p("nstep.jsonl")] + [p(f"predictions/{t}.jsonl") for t in EVAL_TASKS],
                         report_files, {"k": c.k, "duration_tolerance": c.duration_tolerance}, self._eval))
        return out

    def _simulate(self) -> dict:
        c = self.cfg
        network = load_network(c.network)
        seeds = [derive_seed(c.seed, i) for i in range(c.trajectories)]
        ids = [f"{network.network_id}-{i:04d}" for i in range(c.trajectories)]
        args = [(network.to_dict(), c.events_per, s, tid) for s, tid in zip(seeds, ids)]
        if self.threads > 1 and len(args) > 1:
            with ProcessPoolExecutor(max_workers=self.threads) as pool:
                trajs = list(pool.map(_generate_one, args))
        else:
            trajs = [_generate_one(a) for a in args]
        n_frames = 0
        path = self.path("frames.jsonl")
        open(path, "w").close()
        for traj in trajs:
            n_frames += write_frames(expand_to_frames(traj, network, interval_ps=c.interval_ps), path, mode="a")
        return {"trajectories": len(trajs), "events": sum(len(t.events) for t in trajs), "frames": n_frames}

    def _ingest(self) -> dict:
        manifests = ingest(self._frames, BondThreshold(self.cfg.bo_min))
        write_json({"bo_min": self.cfg.bo_min, "trajectories": [m.to_record() for m in manifests]},
                   self.path("ingest_manifest.json"))
        return {"trajectories": len(manifests), "frames": sum(m.frame_count for m in manifests)}

    def _extract(self) -> dict:
        ex = EventExtractor(self.cfg.track_element)
        for frame in FrameReader(self._frames, BondThreshold(self.cfg.bo_min)):
            ex.add(frame)
        events = ex.finish()
        n = write_events(events, self.path("events.jsonl"))
        return {"frames": ex.frames_seen, "events": n}

    def _filter(self) -> dict:
        events = read_events(self.path("events.jsonl"))
        kept = bandpass_filter(events, FilterBand(self.cfg.tau_min, self.cfg.tau_max))
        write_events(kept, self.path("filtered.jsonl"))
        return {"in": len(events), "out": len(kept)}

    def _bins(self) -> DurationBins:
        return DurationBins(tuple(self.cfg.bin_edges), tuple(self.cfg.bin_labels))

    def _balance(self) -> dict:
        events = read_events(self.path("filtered.jsonl"))
        kept = balance(events, self._bins(), self.cfg.cap, stage_seed(self.cfg.seed, "balance"))
        write_events(kept, self.path("balanced.jsonl"))
        return {"in": len(events), "out": len(kept)}

    def _windows(self) -> dict:
        c = self.cfg
        seqs = group_sequences(read_events(self.path("balanced.jsonl")))
        samples = []
        counts = {}
        for task in EVAL_TASKS:
            got, skipped = build_windows(seqs, task, (c.history_min, c.history_max),
                                         stage_seed(c.seed, f"windows/{task}"),
                                         horizon=c.nstep_horizon if task == "nstep" else None)
            samples += got
            counts[task] = {"windows": len(got), "skipped_sequences": skipped}
        write_jsonl((s.to_record() for s in samples), self.path("windows.jsonl"))
        return counts

    def _split(self) -> dict:
        samples = [PredictionSample.from_record(r) for r in read_jsonl(self.path("windows.jsonl"))]
        train, test = split_disjoint(samples, self.cfg.test_fraction, stage_seed(self.cfg.seed, "split"))
        write_jsonl((s.to_record() for s in train + test), self.path("samples.jsonl"))
        return {"train": len(train), "test": len(test),
                "train_trajectories": len({s.trajectory_id for s in train}),
                "test_trajectories": len({s.trajectory_id for s in test})}

    def _format(self) -> dict:
        c = self.cfg
        samples = [PredictionSample.from_record(r) for r in read_jsonl(self.path("samples.jsonl"))]
        forecast = [s for s in samples if s.task != "nstep"]
        nstep = [s for s in samples if s.task == "nstep" and s.split == "test"]
        write_jsonl(dataset_records(forecast, DEFAULT_TEMPLATES), self.path("dataset.jsonl"))
        write_jsonl((s.to_record() for s in nstep), self.path("nstep.jsonl"))

        raw = read_events(self.path("events.jsonl"))
        extracted = sum(1 for ev in raw if ev.duration_ps >= c.tau_min)
        filtered = read_events(self.path("filtered.jsonl"))
        balanced_events = read_events(self.path("balanced.jsonl"))
        report = pipeline_stats(len(raw), extracted, len(filtered), len(forecast), filtered)
        write_json(report.to_dict(), self.path("stats.json"))
        with open(self.path("stats.txt"), "w", encoding="utf-8") as fh:
            fh.write(report.render())

        bins = self._bins()
        by_task_split = Counter(f"{s.task}/{s.split}" for s in samples)
        manifest = DatasetManifest(
            seed=c.seed, bin_edges=list(c.bin_edges), cap=c.cap,
            counts={
                "stages": {n: k for n, k in report.stages},
                "strata_filtered": {f"{s.formula}/{s.duration_bin}": k
                                    for s, k in sorted(stratum_counts(filtered, bins).items())},
                "strata_balanced": {f"{s.formula}/{s.duration_bin}": k
                                    for s, k in sorted(stratum_counts(balanced_events, bins).items())},
                "task_split": dict(sorted(by_task_split.items())),
            },
            template_hashes=DEFAULT_TEMPLATES.hashes(),
        )
        write_json(manifest.to_dict(), self.path("manifest.json"))
        return {"dataset": len(forecast), "nstep": len(nstep)}

    def _mix(self) -> dict:
        records = [r for r in read_jsonl(self.path("dataset.jsonl")) if r["split"] == "train"]
        qa = read_jsonl(self.cfg.qa) if self.cfg.qa else []
        mixed = interleave_qa(records, qa, self.cfg.qa_ratio, stage_seed(self.cfg.seed, "mix"))
        write_jsonl(mixed, self.path("mixed.jsonl"))
        return {"forecast": len(records), "qa": len(mixed) - len(records)}

    def _dataset(self) -> list[PredictionSample]:
        return [PredictionSample.from_record(r) for r in read_jsonl(self.path("dataset.jsonl"))]

    def _fit(self) -> dict:
        c = self.cfg
        samples = self._dataset()
        os.makedirs(self.path("models"), exist_ok=True)
        hp = {} if c.model == "regressor" else {"order": c.order, "alpha": c.alpha}
        if c.model == "freq":
            hp.pop("order")
        counts = {}
        for task in TASKS:
            train = [s for s in samples if s.task == task and s.split == "train"]
            if not train:
                raise ValidationError(f"no training samples for {task}")
            model = baselines.fit(c.model, train, hp, seed=stage_seed(c.seed, f"fit/{task}"))
            baselines.save_model(model, self.path(f"models/{task}.json"))
            counts[task] = len(train)
        return counts

    def _truth(self) -> dict[str, list[PredictionSample]]:
        samples = [s for s in self._dataset() if s.split == "test"]
        samples += [PredictionSample.from_record(r) for r in read_jsonl(self.path("nstep.jsonl"))]
        return {t: [s for s in samples if s.task == t] for t in EVAL_TASKS}

    def _predict(self) -> dict:
        os.makedirs(self.path("predictions"), exist_ok=True)
        counts = {}
        for task, samples in self._truth().items():
            model = baselines.load_model(self.path(f"models/{'forward_1' if task == 'nstep' else task}.json"))
            entries = baselines.predict_samples(model, samples, self.cfg.k)
            counts[task] = write_jsonl(entries, self.path(f"predictions/{task}.jsonl"))
        return counts

    def _eval(self) -> dict:
        counts = {}
        for task, truth in self._truth().items():
            if not truth:
                raise ValidationError(f"no test samples for {task}")
            entries = read_jsonl(self.path(f"predictions/{task}.jsonl"))
            r = score_task(entries, truth, task, self.cfg.duration_tolerance, self.cfg.k)
            emit_report(EvalReport(task, [r], [f"predictions/{task}.jsonl"]), self.path(f"reports/{task}"))
            counts[task] = {"n": r.n_samples, "accuracy": r.accuracy, "missing_rate": r.missing_rate}
        return counts


def _generate_one(args):
    net_dict, n_events, seed, tid = args
    return generate(ReactionNetwork.from_dict(net_dict), n_events, seed, trajectory_id=tid)


def run_pipeline(config: PipelineConfig, threads: int = 1) -> RunResult:
    return Pipeline(config, threads).run()
