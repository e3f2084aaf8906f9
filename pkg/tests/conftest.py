import numpy as np
import pytest

from sgmatch.graph import GraphKind
from sgmatch.synth import SynthConfig, generate_dataset
from sgmatch.vectors import FeaturizedGraph


def random_graph(rng, n, dim, kind=GraphKind.SCENE, edge_prob=0.4, graph_id="g"):
    """Random featurized graph without self-loops or duplicate directed edges."""
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j and rng.random() < edge_prob]
    edge_index = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    return FeaturizedGraph(graph_id, kind, rng.normal(size=(n, dim)), edge_index,
                           rng.normal(size=(len(pairs), dim)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """12-scene synthetic dataset on disk, with one held-out description per scene."""
    root = tmp_path_factory.mktemp("synth12")
    manifest = generate_dataset(SynthConfig(num_scenes=12, descriptions_per_scene=3, heldout_per_scene=1,
                                            seed=5), root)
    return root, manifest


# one "criterion N: PASS/FAIL ..." line per acceptance check, echoed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
