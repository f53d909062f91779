import json

import numpy as np
import pytest

from evomd.kmc import DurationDist, ReactionNetwork
from evomd.species import parse_formula

ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda x: int(x.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def make_network(species, P, durations, cuts=(), by_bin=None, network_id="net"):
    """durations: per species either an int (constant) or a (values, probs) pair."""
    forms = [parse_formula(s, strict=False) for s in species]
    dd = {}
    for s, d in enumerate(durations):
        if isinstance(d, int):
            dd[(s, None)] = DurationDist([d], [1.0])
        else:
            dd[(s, None)] = DurationDist(*d)
    return ReactionNetwork(forms, np.asarray(P, dtype=float), dd, duration_cuts=tuple(cuts),
                           transition_by_bin=by_bin, network_id=network_id)


@pytest.fixture
def cycle3():
    P = [[0, 1, 0], [0, 0, 1], [1, 0, 0]]
    return make_network(["MoS2", "MoS3", "MoOS2"], P, [12, 30, 80], network_id="cycle")


@pytest.fixture
def write_jsonl(tmp_path):
    def _write(name, records):
        p = tmp_path / name
        with open(p, "w") as fh:
            for r in records:
                fh.write(r if isinstance(r, str) else json.dumps(r))
                fh.write("\n")
        return p
    return _write
