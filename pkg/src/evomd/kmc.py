"""Discrete semi-Markov reaction network used as a ground-truth trajectory generator."""
from __future__ import annotations

import bisect
import hashlib
import json
import random
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import NetworkError, ValidationError
from .events import MolecularEvent
from .species import ATOMIC_NUMBER, CanonicalFormula, canonicalize, formula_of, heaviest_element
from .trajectory_io import Bond, Frame

ROW_TOL = 1e-9


def _cumulative(probs) -> list[float]:
    p = np.asarray(probs, dtype=float)
    cum = np.cumsum(p) / p.sum()
    last = int(np.flatnonzero(p > 0)[-1])
    cum[last:] = 1.0
    return cum.tolist()


def _draw(rng: random.Random, cum: list[float]) -> int:
    return bisect.bisect_right(cum, rng.random())


@dataclass
class DurationDist:
    values: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=int)
        self.probs = np.asarray(self.probs, dtype=float)
        if self.values.shape != self.probs.shape or self.values.ndim != 1 or self.values.size == 0:
            raise NetworkError("duration values and probs must be equal-length non-empty lists")
        if (self.values < 1).any():
            raise NetworkError("durations must be positive integers")
        if (self.probs < 0).any() or abs(self.probs.sum() - 1) > ROW_TOL:
            raise NetworkError(f"duration probabilities must be non-negative and sum to 1, got {self.probs.sum()!r}")
        self.cum = _cumulative(self.probs)
        self.value_list = self.values.tolist()

    def sample(self, rng: random.Random) -> int:
        return self.value_list[_draw(rng, self.cum)]

    def median(self) -> float:
        order = np.argsort(self.values, kind="stable")
        c = np.cumsum(self.probs[order])
        return float(self.values[order][np.searchsorted(c, 0.5)])


@dataclass
class ReactionNetwork:
    """Species, transitions and per-species duration laws.

    ``duration_cuts`` splits durations into bins: bin(d) = number of cuts <= d.
    ``transition_by_bin`` (optional) replaces ``transition`` with one matrix per
    bin of the current event's duration. ``durations`` is keyed by
    (species index, bin of the previous duration or None).
    """

    species: list[CanonicalFormula]
    transition: np.ndarray
    durations: dict[tuple[int, int | None], DurationDist]
    duration_cuts: tuple[int, ...] = ()
    transition_by_bin: list[np.ndarray] | None = None
    atom_maps: dict[str, dict[str, int]] = field(default_factory=dict)
    network_id: str = "network"

    def __post_init__(self):
        n = len(self.species)
        if n < 2:
            raise NetworkError("network needs at least two species")
        if len({f.text for f in self.species}) != n:
            raise NetworkError("duplicate species")
        self.transition = np.asarray(self.transition, dtype=float)
        self._check_matrix(self.transition, "transition")
        if list(self.duration_cuts) != sorted(set(self.duration_cuts)):
            raise NetworkError("duration_cuts must be strictly increasing")
        if self.transition_by_bin is not None:
            self.transition_by_bin = [np.asarray(m, dtype=float) for m in self.transition_by_bin]
            if len(self.transition_by_bin) != self.n_bins:
                raise NetworkError(f"transition_by_bin needs {self.n_bins} matrices")
            for b, m in enumerate(self.transition_by_bin):
                self._check_matrix(m, f"transition_by_bin[{b}]")
        for s in range(n):
            if (s, None) not in self.durations and any((s, c) not in self.durations for c in range(self.n_bins)):
                raise NetworkError(f"species {self.species[s]} lacks a duration distribution")
        for key in self.durations:
            if not (0 <= key[0] < n) or (key[1] is not None and not 0 <= key[1] < self.n_bins):
                raise NetworkError(f"bad duration key {key}")
        for f in self.species:
            amap = self.atom_maps.get(f.text)
            if amap is None:
                self.atom_maps[f.text] = f.counts
            else:
                atoms = [e for e, k in amap.items() for _ in range(k)]
                if not atoms or canonicalize(atoms) != f:
                    raise NetworkError(f"atom map {amap} does not realize {f}")
        self._row_cum = [_cumulative(r) for r in self.transition]
        self._bin_cum = None
        if self.transition_by_bin is not None:
            self._bin_cum = [[_cumulative(r) for r in m] for m in self.transition_by_bin]

    def _check_matrix(self, m: np.ndarray, name: str):
        n = len(self.species)
        if m.shape != (n, n):
            raise NetworkError(f"{name} must be {n}x{n}")
        if (m < 0).any():
            raise NetworkError(f"{name} has negative entries")
        if np.abs(np.diag(m)).max() > 0:
            raise NetworkError(f"{name} must have a zero diagonal")
        if np.abs(m.sum(axis=1) - 1).max() > ROW_TOL:
            raise NetworkError(f"{name} rows must sum to 1")

    @property
    def n_species(self) -> int:
        return len(self.species)

    @property
    def n_bins(self) -> int:
        return len(self.duration_cuts) + 1

    def bin_of(self, duration_ps: int) -> int:
        return bisect.bisect_right(self.duration_cuts, duration_ps)

    def duration_dist(self, s: int, context: int | None) -> DurationDist:
        d = self.durations.get((s, context))
        return d if d is not None else self.durations[(s, None)]

    def transition_for(self, s: int, b: int) -> np.ndarray:
        if self.transition_by_bin is None:
            return self.transition[s]
        return self.transition_by_bin[b][s]

    def next_cum(self, s: int, b: int) -> list[float]:
        if self._bin_cum is None:
            return self._row_cum[s]
        return self._bin_cum[b][s]

    # -- serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        durs = []
        for (s, c), d in sorted(self.durations.items(), key=lambda kv: (kv[0][0], -1 if kv[0][1] is None else kv[0][1])):
            durs.append({"species": self.species[s].text, "context_bin": c,
                         "values": d.values.tolist(), "probs": d.probs.tolist()})
        out = {
            "id": self.network_id,
            "species": [f.text for f in self.species],
            "transition": self.transition.tolist(),
            "duration_cuts": list(self.duration_cuts),
            "durations": durs,
            "atom_maps": self.atom_maps,
        }
        if self.transition_by_bin is not None:
            out["transition_by_bin"] = [m.tolist() for m in self.transition_by_bin]
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ReactionNetwork":
        try:
            species = [formula_of(s) for s in d["species"]]
            index = {f.text: k for k, f in enumerate(species)}
            durations = {}
            for entry in d["durations"]:
                s = index[formula_of(entry["species"]).text]
                if "constant" in entry:
                    values, probs = [int(entry["constant"])], [1.0]
                elif "uniform" in entry:
                    lo, hi = entry["uniform"]
                    values = list(range(int(lo), int(hi) + 1))
                    probs = [1.0 / len(values)] * len(values)
                else:
                    values, probs = entry["values"], entry["probs"]
                durations[(s, entry.get("context_bin"))] = DurationDist(values, probs)
            return cls(
                species=species,
                transition=np.asarray(d["transition"], dtype=float),
                durations=durations,
                duration_cuts=tuple(d.get("duration_cuts", ())),
                transition_by_bin=d.get("transition_by_bin"),
                atom_maps={formula_of(k).text: dict(v) for k, v in d.get("atom_maps", {}).items()},
                network_id=d.get("id", "network"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, NetworkError):
                raise
            raise NetworkError(f"malformed network config: {exc!r}") from None


def load_network(path) -> ReactionNetwork:
    with open(path, encoding="utf-8") as fh:
        return ReactionNetwork.from_dict(json.load(fh))


# -- generation ---------------------------------------------------------------

@dataclass
class SyntheticTrajectory:
    events: list[MolecularEvent]
    generator_seed: int
    network_id: str

    @property
    def trajectory_id(self) -> str:
        return self.events[0].trajectory_id if self.events else ""


def generate(network: ReactionNetwork, n_events: int, seed: int, trajectory_id: str = "traj-0000",
             initial: int | None = None, start_ps: int = 0) -> SyntheticTrajectory:
    """Duration from the current species (and previous-duration bin), then next species."""
    if not isinstance(n_events, int) or n_events < 1:
        raise ValidationError(f"n_events must be a positive integer, got {n_events!r}")
    rng = random.Random(seed)
    s = rng.randrange(network.n_species) if initial is None else initial
    ctx = None
    t = start_ps
    species = network.species
    events = []
    for _ in range(n_events):
        d = network.duration_dist(s, ctx).sample(rng)
        events.append(MolecularEvent(trajectory_id, 0, species[s], t, d))
        t += d
        b = network.bin_of(d)
        s = _draw(rng, network.next_cum(s, b))
        ctx = b
    return SyntheticTrajectory(events, seed, network.network_id)


def derive_seed(seed: int, index: int) -> int:
    digest = hashlib.sha256(f"{seed}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def simulate(network: ReactionNetwork, n_trajectories: int, events_per: int, seed: int) -> list[SyntheticTrajectory]:
    return [
        generate(network, events_per, derive_seed(seed, i), trajectory_id=f"{network.network_id}-{i:04d}")
        for i in range(n_trajectories)
    ]


# -- frame expansion ----------------------------------------------------------

class AtomLayout:
    """Fixed atom pool realizing every species as a star around its heaviest atom.

    The pool starts with the block of an element shared by all species, so the
    cluster always keeps atom 0 and wins lineage ties against leftover atoms.
    """

    def __init__(self, atom_maps: dict[str, dict[str, int]]):
        if not atom_maps:
            raise NetworkError("no atom maps")
        common = set.intersection(*(set(m) for m in atom_maps.values()))
        if not common:
            raise NetworkError("species share no common element; cluster identity across frames is ambiguous")
        anchor = heaviest_element(common)
        sizes: dict[str, int] = {}
        for m in atom_maps.values():
            for e, k in m.items():
                sizes[e] = max(sizes.get(e, 0), k)
        others = sorted((e for e in sizes if e != anchor), key=lambda e: (-_z(e), e))
        self.order = [anchor] + others
        self.elements: tuple[str, ...] = ()
        start = {}
        for e in self.order:
            start[e] = len(self.elements)
            self.elements += (e,) * sizes[e]
        self._bonds: dict[tuple[str, float], list[Bond]] = {}
        self._start = start
        self.atom_maps = atom_maps

    def bonds_for(self, species: str, bond_order: float = 1.0) -> list[Bond]:
        key = (species, bond_order)
        cached = self._bonds.get(key)
        if cached is not None:
            return cached
        amap = self.atom_maps.get(species)
        if amap is None:
            raise NetworkError(f"species {species} has no atom map")
        centre_el = heaviest_element(amap)
        centre = self._start[centre_el]
        atoms = [self._start[e] + k for e in self.order if e in amap for k in range(amap[e])]
        bonds = [Bond(centre, a, bond_order) for a in atoms if a != centre]
        self._bonds[key] = bonds
        return bonds


def _z(e: str) -> int:
    return ATOMIC_NUMBER.get(e, 0)


def expand_to_frames(trajectory: SyntheticTrajectory, network: ReactionNetwork,
                     atom_maps: dict[str, dict[str, int]] | None = None, interval_ps: int = 1,
                     bond_order: float = 1.0) -> Iterator[Frame]:
    maps = dict(network.atom_maps)
    if atom_maps:
        maps.update(atom_maps)
    for ev in trajectory.events:
        if ev.formula.text not in maps:
            raise NetworkError(f"species {ev.formula} has no atom map")
    layout = AtomLayout(maps)
    elements = layout.elements
    for ev in trajectory.events:
        if ev.duration_ps % interval_ps:
            raise ValidationError(f"duration {ev.duration_ps} is not a multiple of the {interval_ps} ps interval")
        bonds = layout.bonds_for(ev.formula.text, bond_order)
        for k in range(ev.duration_ps // interval_ps):
            yield Frame(ev.trajectory_id, ev.start_ps + k * interval_ps, elements, bonds)


# -- analytic ceilings --------------------------------------------------------

def _irreducible(adj: np.ndarray) -> bool:
    n = adj.shape[0]
    for a in (adj, adj.T):
        seen = {0}
        stack = [0]
        while stack:
            u = stack.pop()
            for v in np.flatnonzero(a[u]):
                v = int(v)
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        if len(seen) != n:
            return False
    return True


def _bin_probs(network: ReactionNetwork, s: int, c: int | None) -> np.ndarray:
    d = network.duration_dist(s, c)
    out = np.zeros(network.n_bins)
    for v, p in zip(d.value_list, d.probs):
        out[network.bin_of(v)] += p
    return out


def joint_tables(network: ReactionNetwork):
    """Stationary law over (species, context bin) and the bin/transition tables.

    Returns (pi[s, c], B[s, c, b], T[s, b, t]) with B the current-duration bin
    law and T the next-species law given the current bin.
    """
    n, nb = network.n_species, network.n_bins
    B = np.zeros((n, nb, nb))
    for s in range(n):
        for c in range(nb):
            B[s, c] = _bin_probs(network, s, c)
    T = np.zeros((n, nb, n))
    for s in range(n):
        for b in range(nb):
            T[s, b] = network.transition_for(s, b)

    # species-level reachability under any bin the durations can produce
    adj = np.zeros((n, n), dtype=bool)
    for s in range(n):
        reach = B[s].max(axis=0) > 0
        for b in np.flatnonzero(reach):
            adj[s] |= T[s, b] > 0
    if not _irreducible(adj):
        raise NetworkError("transition structure is not irreducible; no unique stationary distribution")

    # extended chain over states (s, c) -> (t, b)
    K = np.einsum("scb,sbt->scbt", B, T)
    M = np.zeros((n * nb, n * nb))
    for s in range(n):
        for c in range(nb):
            M[s * nb + c] = K[s, c].T.reshape(-1)
    pi = _stationary(M)
    return pi.reshape(n, nb), B, T


def _stationary(M: np.ndarray, tol: float = 1e-12, max_iter: int = 1_000_000) -> np.ndarray:
    lazy = 0.5 * (np.eye(M.shape[0]) + M)
    pi = np.full(M.shape[0], 1.0 / M.shape[0])
    for _ in range(max_iter):
        nxt = pi @ lazy
        nxt /= nxt.sum()
        if np.abs(nxt - pi).sum() < tol:
            return nxt
        pi = nxt
    raise NetworkError("power iteration did not converge")


def stationary_distribution(network: ReactionNetwork) -> np.ndarray:
    pi, _, _ = joint_tables(network)
    return pi.sum(axis=1)


def bayes_optimal_accuracy(network: ReactionNetwork, task: str = "forward_1", context: str = "species") -> float:
    """Best achievable top-1 accuracy for a predictor that sees ``context``.

    context "species": the last species only. "species_bin": the last species
    and the bin of its duration (forward only).
    """
    pi, B, T = joint_tables(network)
    # joint of (current s, context c, current bin b, next t)
    J = np.einsum("sc,scb,sbt->scbt", pi, B, T)
    if task in ("forward_1", "potential_k"):
        if context == "species":
            return float(J.sum(axis=(1, 2)).max(axis=1).sum())
        if context == "species_bin":
            return float(J.sum(axis=1).max(axis=2).sum())
        raise ValidationError(f"unknown context {context!r}")
    if task == "backward":
        if context != "species":
            raise ValidationError("backward ceiling is defined for species context only")
        pair = J.sum(axis=(1, 2))  # [prev, cur]
        return float(pair.max(axis=0).sum())
    raise ValidationError(f"no analytic ceiling for task {task!r}")


def effective_transition(network: ReactionNetwork) -> np.ndarray:
    """Stationary-averaged next-species law given the current species."""
    pi, B, T = joint_tables(network)
    J = np.einsum("sc,scb,sbt->st", pi, B, T)
    return J / J.sum(axis=1, keepdims=True)


def random_network(n_species: int, seed: int, species: Sequence[str] | None = None,
                   durations: tuple[int, int] = (10, 500), concentration: float = 1.0,
                   network_id: str | None = None) -> ReactionNetwork:
    """Random ergodic first-order network with zero diagonal and uniform durations."""
    gen = np.random.default_rng(seed)
    if species is None:
        species = DEFAULT_SPECIES[:n_species]
    P = gen.dirichlet(np.full(n_species - 1, concentration), size=n_species)
    full = np.zeros((n_species, n_species))
    for s in range(n_species):
        full[s, [t for t in range(n_species) if t != s]] = P[s]
    lo, hi = durations
    return ReactionNetwork.from_dict({
        "id": network_id or f"random{n_species}-{seed}",
        "species": list(species),
        "transition": full.tolist(),
        "durations": [{"species": sp, "uniform": [lo, hi]} for sp in species],
    })


DEFAULT_SPECIES = ("MoO", "MoS", "MoOS2", "MoS3", "MoS4", "MoO2", "MoS5", "Mo2S7", "MoOS4", "Mo3S13",
                   "MoO3", "MoS6", "Mo2S5", "MoOS", "MoS2", "MoOS3", "MoOS5", "Mo3S11", "Mo3S12")
