"""evomd command line."""
from __future__ import annotations

import argparse
import os
import sys

from . import baselines
from .dataset import (DatasetManifest, DurationBins, PredictionSample, balance, build_windows, dataset_records,
                      interleave_qa, split_disjoint, stratum_counts, task_name)
from .errors import EvomdError, StageError, ValidationError
from .evaluation import EvalReport, emit_report, score_task, summary_text
from .events import (FilterBand, bandpass_filter, extract_events, group_sequences, pipeline_stats, read_events,
                     write_events)
from .jsonl import read_jsonl, write_json, write_jsonl
from .kmc import expand_to_frames, load_network, simulate
from .pipeline import load_config, run_pipeline
from .templates import DEFAULT_TEMPLATES
from .trajectory_io import BondThreshold, ingest, parse_frames, write_frames

EXIT_OK, EXIT_VALIDATION, EXIT_STAGE = 0, 2, 3


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("EVOMD_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ValidationError(f"EVOMD_SEED is not an integer: {env!r}") from None
    return 0


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _samples(path) -> list[PredictionSample]:
    return [PredictionSample.from_record(r) for r in read_jsonl(path)]


def cmd_ingest(args):
    manifests = ingest(args.frames, BondThreshold(args.bo_min))
    write_json({"bo_min": args.bo_min, "trajectories": [m.to_record() for m in manifests]}, args.out)
    print(f"{len(manifests)} trajectories, {sum(m.frame_count for m in manifests)} frames")


def cmd_extract(args):
    events = extract_events(parse_frames(args.frames, BondThreshold(args.bo_min)), args.track_element)
    n = write_events(events, args.out)
    print(f"{n} events")


def cmd_filter(args):
    events = read_events(args.events)
    band = FilterBand(args.tau_min, args.tau_max)
    kept = bandpass_filter(events, band)
    write_events(kept, args.out)
    if args.stats:
        extracted = sum(1 for ev in events if ev.duration_ps >= args.tau_min)
        report = pipeline_stats(len(events), extracted, len(kept), 0, kept)
        write_json(report.to_dict(), args.stats)
    print(f"{len(kept)} of {len(events)} events kept")


def cmd_balance(args):
    events = read_events(args.events)
    bins = DurationBins(args.bins, tuple(args.labels.split(",")))
    seed = _seed(args)
    kept = balance(events, bins, args.cap, seed)
    write_events(kept, args.out)
    if args.manifest:
        m = DatasetManifest(seed, list(bins.edges), args.cap, counts={
            "before": {f"{s.formula}/{s.duration_bin}": k for s, k in sorted(stratum_counts(events, bins).items())},
            "after": {f"{s.formula}/{s.duration_bin}": k for s, k in sorted(stratum_counts(kept, bins).items())},
        }, template_hashes=DEFAULT_TEMPLATES.hashes())
        write_json(m.to_dict(), args.manifest)
    print(f"{len(kept)} of {len(events)} events kept")


def cmd_windows(args):
    seqs = group_sequences(read_events(args.events))
    samples, skipped = build_windows(seqs, task_name(args.task), (args.history_min, args.history_max),
                                     _seed(args), horizon=args.horizon)
    write_jsonl((s.to_record() for s in samples), args.out)
    print(f"{len(samples)} windows; {skipped} sequences too short")


def cmd_split(args):
    train, test = split_disjoint(_samples(args.samples), args.test_frac, _seed(args))
    write_jsonl((s.to_record() for s in train + test), args.out)
    print(f"train {len(train)}, test {len(test)}")


def cmd_format(args):
    n = write_jsonl(dataset_records(_samples(args.samples), DEFAULT_TEMPLATES), args.out)
    print(f"{n} records")


def cmd_mix(args):
    records = read_jsonl(args.dataset)
    if args.split:
        records = [r for r in records if r.get("split") == args.split]
    qa = read_jsonl(args.qa) if args.qa else []
    mixed = interleave_qa(records, qa, args.ratio, _seed(args))
    write_jsonl(mixed, args.out)
    print(f"{len(records)} forecast + {len(mixed) - len(records)} Q&A records")


def cmd_simulate(args):
    network = load_network(args.network)
    trajs = simulate(network, args.trajectories, args.events_per, _seed(args))
    if args.out.endswith("events.jsonl") or args.format == "events":
        n = write_events((ev for t in trajs for ev in t.events), args.out)
        print(f"{n} events")
        return
    open(args.out, "w").close()
    n = 0
    for t in trajs:
        n += write_frames(expand_to_frames(t, network, interval_ps=args.interval), args.out, mode="a")
    print(f"{n} frames")


def cmd_baseline_fit(args):
    samples = _samples(args.train)
    task = task_name(args.task) if args.task else None
    samples = [s for s in samples if (task is None or s.task == task) and (not args.split or s.split == args.split)]
    hp = {}
    if args.kind in ("markov", "semimarkov"):
        hp["order"] = args.order
    if args.kind != "regressor":
        hp["alpha"] = args.alpha
    else:
        hp["lam"] = args.lam
    model = baselines.fit(args.kind, samples, hp, seed=_seed(args))
    baselines.save_model(model, args.out)
    print(f"fitted {args.kind} on {len(samples)} samples")


def cmd_baseline_predict(args):
    model = baselines.load_model(args.model)
    task = task_name(args.task)
    samples = [s for s in _samples(args.samples) if s.task == task and (not args.split or s.split == args.split)]
    n = write_jsonl(baselines.predict_samples(model, samples, args.k), args.out)
    print(f"{n} predictions")


def cmd_eval(args):
    task = task_name(args.task)
    truth = [s for s in _samples(args.truth) if s.task == task and (not args.split or s.split == args.split)]
    runs = [score_task(read_jsonl(p), truth, task, args.dur_tol, args.k) for p in args.pred]
    report = EvalReport(task, runs, [os.path.basename(p) for p in args.pred])
    if args.out:
        emit_report(report, args.out)
    sys.stdout.write(summary_text(report))


def cmd_run(args):
    cfg = load_config(args.config, args.seed)
    result = run_pipeline(cfg, args.threads)
    for name, entry in result.manifest["stages"].items():
        state = "skipped" if name in result.skipped else "done"
        print(f"{name:<10} {state}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evomd", description="MD trajectories to species event datasets, "
                                                          "baselines and evaluation")
    p.add_argument("--threads", type=int, default=1, help="worker cap for parallel stages")
    sub = p.add_subparsers(dest="command", required=True)

    def seeded(sp):
        sp.add_argument("--seed", type=int, default=None, help="root seed (default: $EVOMD_SEED or 0)")
        return sp

    sp = sub.add_parser("ingest", help="validate a frames file and write per-trajectory manifests")
    sp.add_argument("--frames", required=True)
    sp.add_argument("--bo-min", type=float, required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("extract", help="frames -> run-length encoded events")
    sp.add_argument("--frames", required=True)
    sp.add_argument("--bo-min", type=float, required=True)
    sp.add_argument("--track-element", default=None, help="keep only species containing this element")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_extract)

    sp = sub.add_parser("filter", help="band-pass filter events by duration")
    sp.add_argument("--events", required=True)
    sp.add_argument("--tau-min", type=int, default=10)
    sp.add_argument("--tau-max", type=int, default=500)
    sp.add_argument("--out", required=True)
    sp.add_argument("--stats", default=None)
    sp.set_defaults(func=cmd_filter)

    sp = seeded(sub.add_parser("balance", help="cap every (species, duration bin) stratum"))
    sp.add_argument("--events", required=True)
    sp.add_argument("--cap", type=int, default=50)
    sp.add_argument("--bins", type=_int_list, default=(10, 50, 150, 500))
    sp.add_argument("--labels", default="short,medium,long")
    sp.add_argument("--out", required=True)
    sp.add_argument("--manifest", default=None)
    sp.set_defaults(func=cmd_balance)

    sp = seeded(sub.add_parser("windows", help="sliding-window samples for one task"))
    sp.add_argument("--events", required=True)
    sp.add_argument("--task", required=True, choices=sorted(("forward1", "forward2", "backward", "potentialk", "nstep")))
    sp.add_argument("--history-min", type=int, default=3)
    sp.add_argument("--history-max", type=int, default=5)
    sp.add_argument("--horizon", type=int, default=None, help="target length for nstep")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_windows)

    sp = seeded(sub.add_parser("split", help="trajectory-disjoint train/test split"))
    sp.add_argument("--samples", required=True)
    sp.add_argument("--test-frac", type=float, default=0.2)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_split)

    sp = sub.add_parser("format", help="render instruction records")
    sp.add_argument("--samples", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_format)

    sp = seeded(sub.add_parser("mix", help="interleave Q&A records with forecast records"))
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--qa", default=None)
    sp.add_argument("--ratio", type=float, default=0.0)
    sp.add_argument("--split", default=None, help="only mix records with this split label")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_mix)

    sp = seeded(sub.add_parser("simulate", help="generate synthetic trajectories from a network"))
    sp.add_argument("--network", required=True)
    sp.add_argument("--trajectories", type=int, default=10)
    sp.add_argument("--events-per", type=int, default=1000)
    sp.add_argument("--interval", type=int, default=1, help="frame interval in ps")
    sp.add_argument("--format", choices=("frames", "events"), default=None)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_simulate)

    bp = sub.add_parser("baseline", help="fit or apply a statistical baseline")
    bsub = bp.add_subparsers(dest="baseline_command", required=True)
    sp = seeded(bsub.add_parser("fit"))
    sp.add_argument("--kind", required=True, choices=baselines.KINDS)
    sp.add_argument("--order", type=int, default=1)
    sp.add_argument("--alpha", type=float, default=0.1)
    sp.add_argument("--lam", type=float, default=1e-3)
    sp.add_argument("--train", required=True, help="samples or dataset JSONL")
    sp.add_argument("--task", default=None)
    sp.add_argument("--split", default="train")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_baseline_fit)
    sp = bsub.add_parser("predict")
    sp.add_argument("--model", required=True)
    sp.add_argument("--task", required=True)
    sp.add_argument("--samples", required=True)
    sp.add_argument("--split", default="test")
    sp.add_argument("--k", type=int, default=5)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_baseline_predict)

    sp = sub.add_parser("eval", help="score prediction files against ground truth")
    sp.add_argument("--task", required=True)
    sp.add_argument("--pred", required=True, action="append", help="repeat for several runs")
    sp.add_argument("--truth", required=True)
    sp.add_argument("--split", default="test", help="ground-truth split to score; empty string for all")
    sp.add_argument("--k", type=int, default=5)
    sp.add_argument("--dur-tol", type=int, default=50)
    sp.add_argument("--out", default=None, help="report directory")
    sp.set_defaults(func=cmd_eval)

    sp = seeded(sub.add_parser("run", help="full pipeline from a JSON config"))
    sp.add_argument("--config", required=True)
    sp.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except StageError as exc:
        print(f"evomd: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except ValidationError as exc:
        print(f"evomd: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except EvomdError as exc:
        print(f"evomd: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except OSError as exc:
        print(f"evomd: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
