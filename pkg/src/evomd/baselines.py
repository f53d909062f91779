"""Count-based and linear baselines over (species, duration) sequences."""
from __future__ import annotations

import bisect
import json
import math
from collections import Counter, defaultdict
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg

from .dataset import PredictionSample, render_targets
from .errors import ValidationError
from .species import composition_vector, formula_of

MODEL_FORMAT = "evomd-baseline"
MODEL_VERSION = 1
KINDS = ("freq", "markov", "semimarkov", "regressor")

Step = tuple[str, int]


def training_sequences(samples: Iterable[PredictionSample], direction: str):
    """(sequence, first target position) pairs in the model's reading direction."""
    for s in samples:
        if direction == "backward":
            if s.task != "backward":
                raise ValidationError(f"backward model cannot fit {s.task} sample {s.sample_id}")
            yield list(reversed(s.history)) + list(s.targets), len(s.history)
        else:
            if s.task == "backward":
                raise ValidationError(f"forward model cannot fit backward sample {s.sample_id}")
            yield list(s.history) + list(s.targets), len(s.history)


def _median_int(values: Counter) -> int:
    items = sorted(values.items())
    total = sum(c for _, c in items)
    # lower and upper middle elements of the expanded sample
    lo_rank, hi_rank = (total - 1) // 2, total // 2
    seen = 0
    lo = hi = None
    for v, c in items:
        if lo is None and seen + c > lo_rank:
            lo = v
        if seen + c > hi_rank:
            hi = v
            break
        seen += c
    return int(math.floor((lo + hi) / 2 + 0.5))


class _Base:
    kind = ""

    def __init__(self, direction: str = "forward", seed: int = 0):
        if direction not in ("forward", "backward"):
            raise ValidationError(f"direction must be forward or backward, got {direction!r}")
        self.direction = direction
        self.seed = seed
        self.vocabulary: list[str] = []
        self.target_durations: dict[str, Counter] = {}
        self.any_durations: dict[str, Counter] = {}
        self._median_cache: dict[str, int] = {}

    def _collect(self, seqs):
        vocab = set()
        tdur: dict[str, Counter] = defaultdict(Counter)
        adur: dict[str, Counter] = defaultdict(Counter)
        for seq, first in seqs:
            for k, (f, d) in enumerate(seq):
                vocab.add(f)
                adur[f][d] += 1
                if k >= first:
                    tdur[f][d] += 1
        if not vocab:
            raise ValidationError("empty training set")
        self.vocabulary = sorted(vocab)
        self.target_durations = dict(tdur)
        self.any_durations = dict(adur)
        self._median_cache = {}

    def duration_for(self, species: str) -> int:
        m = self._median_cache.get(species)
        if m is None:
            hist = self.target_durations.get(species) or self.any_durations.get(species)
            if not hist:
                raise ValidationError(f"no durations recorded for {species}")
            m = self._median_cache[species] = _median_int(hist)
        return m

    def distribution(self, history: Sequence[Step]) -> dict[str, float]:
        raise NotImplementedError

    def predict_topk(self, history: Sequence[Step], k: int) -> list[Step]:
        if k < 1:
            raise ValidationError("k must be positive")
        dist = self.distribution(history)
        ranked = sorted(self.vocabulary, key=lambda f: (-dist[f], f))
        return [(f, self.duration_for(f)) for f in ranked[:k]]

    def _durations_dict(self) -> dict:
        return {
            "target": {f: sorted([d, c] for d, c in h.items()) for f, h in sorted(self.target_durations.items())},
            "any": {f: sorted([d, c] for d, c in h.items()) for f, h in sorted(self.any_durations.items())},
        }

    def _load_durations(self, d: dict):
        self.target_durations = {f: Counter({int(a): int(c) for a, c in h}) for f, h in d["target"].items()}
        self.any_durations = {f: Counter({int(a): int(c) for a, c in h}) for f, h in d["any"].items()}


class MarkovModel(_Base):
    """Order-n species model with additive smoothing and back-off to unigram.

    ``order=0`` is the frequency baseline.
    """

    kind = "markov"

    def __init__(self, order: int = 1, alpha: float = 0.1, direction: str = "forward", seed: int = 0):
        super().__init__(direction, seed)
        if order < 0:
            raise ValidationError("order must be non-negative")
        if alpha <= 0:
            raise ValidationError("smoothing alpha must be positive")
        self.order = order
        self.alpha = alpha
        self.counts: dict[int, dict[tuple, Counter]] = {}
        self.unigram: Counter = Counter()

    def token(self, step: Step):
        return step[0]

    def fit(self, samples: Iterable[PredictionSample]) -> "MarkovModel":
        seqs = list(training_sequences(samples, self.direction))
        self._collect(seqs)
        counts = {m: defaultdict(Counter) for m in range(1, self.order + 1)}
        unigram = Counter()
        for seq, first in seqs:
            toks = [self.token(s) for s in seq]
            for j in range(first, len(seq)):
                nxt = seq[j][0]
                unigram[nxt] += 1
                for m in range(1, min(self.order, j) + 1):
                    counts[m][tuple(toks[j - m:j])][nxt] += 1
        self.counts = {m: dict(c) for m, c in counts.items()}
        self.unigram = unigram
        return self

    def _smoothed(self, c: Counter) -> dict[str, float]:
        total = sum(c.values()) + self.alpha * len(self.vocabulary)
        return {f: (c.get(f, 0) + self.alpha) / total for f in self.vocabulary}

    def context_counts(self, history: Sequence[Step]) -> tuple[int, Counter]:
        """Longest seen context suffix: (order used, next-species counts)."""
        toks = [self.token(s) for s in history]
        for m in range(min(self.order, len(toks)), 0, -1):
            c = self.counts.get(m, {}).get(tuple(toks[-m:]))
            if c:
                return m, c
        return 0, self.unigram

    def distribution(self, history: Sequence[Step]) -> dict[str, float]:
        return self._smoothed(self.context_counts(history)[1])

    def transition_matrix(self) -> np.ndarray:
        """Smoothed first-order estimate over the vocabulary (rows: current species)."""
        V = self.vocabulary
        out = np.zeros((len(V), len(V)))
        for i, f in enumerate(V):
            dist = self.distribution([(f, self.duration_for(f))])
            out[i] = [dist[g] for g in V]
        return out

    # -- persistence ------------------------------------------------------

    def _token_key(self, tok) -> str:
        return tok

    def _token_from_key(self, key: str):
        return key

    def to_dict(self) -> dict:
        rows = []
        for m in sorted(self.counts):
            for ctx in sorted(self.counts[m], key=lambda c: [self._token_key(t) for t in c]):
                rows.append([m, [self._token_key(t) for t in ctx], dict(sorted(self.counts[m][ctx].items()))])
        return {
            "format": MODEL_FORMAT, "version": MODEL_VERSION, "kind": self.kind,
            "direction": self.direction, "seed": self.seed,
            "hyperparams": self.hyperparams(),
            "vocabulary": self.vocabulary,
            "unigram": dict(sorted(self.unigram.items())),
            "counts": rows,
            "durations": self._durations_dict(),
        }

    def hyperparams(self) -> dict:
        return {"order": self.order, "alpha": self.alpha}

    def _load(self, d: dict):
        self.vocabulary = list(d["vocabulary"])
        self.unigram = Counter(d["unigram"])
        counts: dict[int, dict[tuple, Counter]] = defaultdict(dict)
        for m, ctx, nxt in d["counts"]:
            counts[int(m)][tuple(self._token_from_key(t) for t in ctx)] = Counter(nxt)
        self.counts = dict(counts)
        self._load_durations(d["durations"])


class FrequencyModel(MarkovModel):
    kind = "freq"

    def __init__(self, alpha: float = 0.1, direction: str = "forward", seed: int = 0, order: int = 0):
        super().__init__(0, alpha, direction, seed)

    def hyperparams(self) -> dict:
        return {"alpha": self.alpha}


DEFAULT_CUTS = (50, 150)


class SemiMarkovModel(MarkovModel):
    """Markov model whose context tokens pair each species with its duration bin."""

    kind = "semimarkov"

    def __init__(self, order: int = 1, alpha: float = 0.1, cuts: Sequence[int] = DEFAULT_CUTS,
                 direction: str = "forward", seed: int = 0):
        super().__init__(order, alpha, direction, seed)
        self.cuts = tuple(int(c) for c in cuts)
        if list(self.cuts) != sorted(set(self.cuts)):
            raise ValidationError("duration bin cuts must be strictly increasing")

    def token(self, step: Step):
        return (step[0], bisect.bisect_right(self.cuts, step[1]))

    def hyperparams(self) -> dict:
        return {"order": self.order, "alpha": self.alpha, "cuts": list(self.cuts)}

    def _token_key(self, tok) -> str:
        return f"{tok[0]}|{tok[1]}"

    def _token_from_key(self, key: str):
        f, b = key.rsplit("|", 1)
        return (f, int(b))


class CompositionRegressor(_Base):
    """Ridge regression from flattened history composition vectors to the next one.

    Solved through the normal equations with a Cholesky factorization; the
    bias column is penalized like every other weight. Predictions decode to the
    vocabulary by L2 distance, ties to the lexicographically smaller formula.
    """

    kind = "regressor"

    def __init__(self, history_len: int = 3, lam: float = 1e-3, direction: str = "forward", seed: int = 0):
        super().__init__(direction, seed)
        if history_len < 1:
            raise ValidationError("history_len must be positive")
        if lam < 0:
            raise ValidationError("ridge lambda must be non-negative")
        self.history_len = history_len
        self.lam = lam
        self.universe: list[str] = []
        self.weights: np.ndarray | None = None
        self.train_residual = float("nan")
        self._vocab_vecs: np.ndarray | None = None

    def _features(self, history: Sequence[Step]) -> np.ndarray:
        width = len(self.universe)
        x = np.zeros(self.history_len * width + 1)
        tail = list(history)[-self.history_len:]
        offset = (self.history_len - len(tail)) * width
        for k, (f, _) in enumerate(tail):
            x[offset + k * width: offset + (k + 1) * width] = composition_vector(formula_of(f), self.universe)
        x[-1] = 1.0
        return x

    def fit(self, samples: Iterable[PredictionSample]) -> "CompositionRegressor":
        seqs = list(training_sequences(samples, self.direction))
        self._collect(seqs)
        self.universe = sorted({e for f in self.vocabulary for e, _ in formula_of(f).terms})
        rows, ys = [], []
        for seq, first in seqs:
            for j in range(first, len(seq)):
                rows.append(self._features(seq[:j]))
                ys.append(composition_vector(formula_of(seq[j][0]), self.universe))
        X = np.asarray(rows)
        Y = np.asarray(ys, dtype=float)
        A = X.T @ X + self.lam * np.eye(X.shape[1])
        if self.lam == 0 and np.linalg.matrix_rank(A) < A.shape[0]:
            raise ValidationError("normal matrix is singular at lambda=0; use a positive ridge lambda")
        try:
            factor = scipy.linalg.cho_factor(A)
        except np.linalg.LinAlgError:
            raise ValidationError("normal matrix is not positive definite; use a positive ridge lambda") from None
        self.weights = scipy.linalg.cho_solve(factor, X.T @ Y)
        self.train_residual = float(np.sqrt(np.mean((X @ self.weights - Y) ** 2)))
        self._vocab_vecs = None
        return self

    def _vectors(self) -> np.ndarray:
        if self._vocab_vecs is None:
            self._vocab_vecs = np.asarray(
                [composition_vector(formula_of(f), self.universe) for f in self.vocabulary], dtype=float)
        return self._vocab_vecs

    def predict_vector(self, history: Sequence[Step]) -> np.ndarray:
        return self._features(history) @ self.weights

    def distribution(self, history: Sequence[Step]) -> dict[str, float]:
        d2 = ((self._vectors() - self.predict_vector(history)) ** 2).sum(axis=1)
        w = np.exp(-(d2 - d2.min()))
        w /= w.sum()
        return dict(zip(self.vocabulary, w.tolist()))

    def predict_topk(self, history: Sequence[Step], k: int) -> list[Step]:
        if k < 1:
            raise ValidationError("k must be positive")
        d2 = ((self._vectors() - self.predict_vector(history)) ** 2).sum(axis=1)
        ranked = sorted(range(len(self.vocabulary)), key=lambda i: (float(d2[i]), self.vocabulary[i]))
        return [(self.vocabulary[i], self.duration_for(self.vocabulary[i])) for i in ranked[:k]]

    def hyperparams(self) -> dict:
        return {"history_len": self.history_len, "lam": self.lam}

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT, "version": MODEL_VERSION, "kind": self.kind,
            "direction": self.direction, "seed": self.seed,
            "hyperparams": self.hyperparams(),
            "vocabulary": self.vocabulary,
            "universe": self.universe,
            "weights": self.weights.tolist(),
            "train_residual": self.train_residual,
            "durations": self._durations_dict(),
        }

    def _load(self, d: dict):
        self.vocabulary = list(d["vocabulary"])
        self.universe = list(d["universe"])
        self.weights = np.asarray(d["weights"], dtype=float)
        self.train_residual = d.get("train_residual", float("nan"))
        self._load_durations(d["durations"])


_CLASSES = {"freq": FrequencyModel, "markov": MarkovModel, "semimarkov": SemiMarkovModel,
            "regressor": CompositionRegressor}


def make_model(kind: str, direction: str = "forward", seed: int = 0, **hyperparams):
    try:
        cls = _CLASSES[kind]
    except KeyError:
        raise ValidationError(f"unknown model kind {kind!r}; expected one of {KINDS}") from None
    return cls(direction=direction, seed=seed, **hyperparams)


def fit(kind: str, samples: Sequence[PredictionSample], hyperparams: dict | None = None, seed: int = 0,
        direction: str | None = None):
    samples = list(samples)
    if not samples:
        raise ValidationError("empty training set")
    if direction is None:
        direction = "backward" if samples[0].task == "backward" else "forward"
    return make_model(kind, direction, seed, **(hyperparams or {})).fit(samples)


def model_from_dict(d: dict):
    if d.get("format") != MODEL_FORMAT:
        raise ValidationError("not a baseline model file")
    if d.get("version") != MODEL_VERSION:
        raise ValidationError(f"unsupported model version {d.get('version')}")
    model = make_model(d["kind"], d["direction"], d.get("seed", 0), **d["hyperparams"])
    model._load(d)
    return model


def save_model(model, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))


# -- prediction entry points --------------------------------------------------

def predict_topk(model, history: Sequence[Step], k: int) -> list[Step]:
    return model.predict_topk(history, k)


def predict_backward(model, future_window: Sequence[Step]) -> Step:
    if not future_window:
        raise ValidationError("empty window")
    if model.direction != "backward":
        raise ValidationError("predict_backward needs a model fitted on reversed sequences")
    return model.predict_topk(list(reversed(future_window)), 1)[0]


def rollout_nstep(model, history: Sequence[Step], n: int) -> list[Step]:
    if n < 1:
        raise ValidationError("n must be positive")
    hist = list(history)
    out = []
    for _ in range(n):
        step = model.predict_topk(hist, 1)[0]
        out.append(step)
        hist.append(step)
    return out


def predict_samples(model, samples: Iterable[PredictionSample], k: int = 5) -> list[dict]:
    """Prediction-file entries for test samples, in the external predictions format."""
    out = []
    for s in samples:
        if s.task == "backward":
            out.append({"sample_id": s.sample_id, "output": render_targets([predict_backward(model, s.history)])})
        elif s.task == "potential_k":
            cands = model.predict_topk(s.history, k)
            out.append({"sample_id": s.sample_id, "candidates": [render_targets([c]) for c in cands]})
        else:
            steps = rollout_nstep(model, s.history, len(s.targets))
            out.append({"sample_id": s.sample_id, "output": render_targets(steps)})
    return out
