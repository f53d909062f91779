import numpy as np
import pytest

from conftest import make_network
from evomd.errors import NetworkError, ValidationError
from evomd.events import EventExtractor, FilterBand, bandpass_filter
from evomd.kmc import (ReactionNetwork, bayes_optimal_accuracy, derive_seed, expand_to_frames, generate,
                       random_network, simulate, stationary_distribution)


def eig_stationary(P):
    w, v = np.linalg.eig(np.asarray(P).T)
    x = np.real(v[:, np.argmin(np.abs(w - 1))])
    return x / x.sum()


def test_forced_alternation():
    net = make_network(["MoS", "MoS2"], [[0, 1], [1, 0]], [5, 5])
    traj = generate(net, 10, seed=3, initial=0)
    assert [e.formula.text for e in traj.events] == ["MoS", "MoS2"] * 5
    assert {e.duration_ps for e in traj.events} == {5}
    assert [e.start_ps for e in traj.events] == list(range(0, 50, 5))


def test_generate_rejects_zero_events():
    net = make_network(["MoS", "MoS2"], [[0, 1], [1, 0]], [5, 5])
    with pytest.raises(ValidationError):
        generate(net, 0, seed=0)


def test_seed_determinism():
    net = random_network(5, seed=1)
    a, b = generate(net, 500, seed=42), generate(net, 500, seed=42)
    assert a.events == b.events
    assert generate(net, 500, seed=43).events != a.events


def test_empirical_transitions_and_stationarity():
    net = random_network(5, seed=8)
    evs = generate(net, 100_000, seed=1).events
    index = {f.text: k for k, f in enumerate(net.species)}
    seq = [index[e.formula.text] for e in evs]
    C = np.zeros((5, 5))
    for a, b in zip(seq, seq[1:]):
        C[a, b] += 1
    P_hat = C / C.sum(axis=1, keepdims=True)
    assert np.abs(P_hat - net.transition).max() <= 0.02
    freq = np.bincount(seq, minlength=5) / len(seq)
    assert np.abs(freq - eig_stationary(net.transition)).max() <= 0.02
    assert np.allclose(stationary_distribution(net), eig_stationary(net.transition), atol=1e-9)


def test_ceiling_trivial_cases():
    assert bayes_optimal_accuracy(make_network(["MoS", "MoS2"], [[0, 1], [1, 0]], [5, 5])) == pytest.approx(1.0)
    P = (np.ones((4, 4)) - np.eye(4)) / 3
    net = make_network(["MoS", "MoS2", "MoS3", "MoS4"], P, [5] * 4)
    assert bayes_optimal_accuracy(net) == pytest.approx(1 / 3, abs=1e-12)


def test_ceiling_matches_monte_carlo():
    net = random_network(6, seed=21, durations=(1, 3))
    best = net.transition.argmax(axis=1)
    index = {f.text: k for k, f in enumerate(net.species)}
    seq = [index[e.formula.text] for e in generate(net, 1_000_001, seed=5).events]
    seq = np.asarray(seq)
    mc = float(np.mean(best[seq[:-1]] == seq[1:]))
    assert abs(bayes_optimal_accuracy(net) - mc) <= 0.005


def test_backward_ceiling_is_reversed_chain_ceiling():
    net = random_network(6, seed=4)
    P = net.transition
    pi = eig_stationary(P)
    P_rev = (pi[:, None] * P).T / pi[:, None]
    assert np.allclose(P_rev.sum(axis=1), 1)
    expect = float(np.sum(pi * P_rev.max(axis=1)))
    assert bayes_optimal_accuracy(net, "backward") == pytest.approx(expect, abs=1e-9)


def test_non_ergodic_rejected():
    P = [[0, 1, 0, 0], [1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]]
    net = make_network(["MoS", "MoS2", "MoS3", "MoS4"], P, [5] * 4)
    with pytest.raises(NetworkError):
        bayes_optimal_accuracy(net)


@pytest.mark.parametrize("P", [[[0, 0.5], [1, 0]], [[0.5, 0.5], [1, 0]], [[0, 1, 0]]])
def test_bad_matrices(P):
    with pytest.raises(NetworkError):
        make_network(["MoS", "MoS2"], P, [5, 5])


def test_bad_atom_map():
    d = random_network(3, seed=0).to_dict()
    d["atom_maps"] = {"MoO": {"Mo": 1, "O": 2}}
    with pytest.raises(NetworkError):
        ReactionNetwork.from_dict(d)


def test_network_dict_round_trip():
    net = random_network(4, seed=2)
    back = ReactionNetwork.from_dict(net.to_dict())
    assert back.to_dict() == net.to_dict()
    assert generate(back, 200, seed=1).events == generate(net, 200, seed=1).events


def test_expand_constant_event():
    net = make_network(["MoS", "MoS2"], [[0, 1], [1, 0]], [3, 3])
    traj = generate(net, 1, seed=0, initial=0)
    frames = list(expand_to_frames(traj, net))
    assert [f.time_ps for f in frames] == [0, 1, 2]
    assert len({(f.elements, tuple(f.bonds)) for f in frames}) == 1


def test_expand_requires_atom_maps():
    net = make_network(["MoS", "MoS2"], [[0, 1], [1, 0]], [3, 3])
    traj = generate(net, 4, seed=0)
    net.atom_maps.pop("MoS")
    with pytest.raises(NetworkError):
        list(expand_to_frames(traj, net))


def test_round_trip_and_bandpass_composition():
    net = random_network(7, seed=13, durations=(1, 40))
    for traj in simulate(net, 3, 400, seed=9):
        ex = EventExtractor()
        for f in expand_to_frames(traj, net):
            ex.add(f)
        got = [e for e in ex.finish() if e.lineage_id == 0]
        assert got == traj.events
        band = FilterBand(10, 30)
        assert bandpass_filter(got, band) == bandpass_filter(traj.events, band)


def test_derived_seeds_distinct():
    seeds = {derive_seed(7, i) for i in range(1000)}
    assert len(seeds) == 1000
    assert derive_seed(7, 3) == derive_seed(7, 3)
