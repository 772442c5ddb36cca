import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tmgad.txgraph import build_graph, set_features_labels


@pytest.fixture(scope="session")
def fixture_graph():
    """Ten nodes, two fraud-styled hubs (0 and 5) with several chain triads.

    Node 0 owns two payer-role chains with different partners and spans, so a
    type has multiple instances with distinct gaps; that is what routes
    gradient into the window learner.
    """
    edges = [
        (0, 1, 0), (1, 2, 1), (0, 2, 2),      # chain at node 0, tight
        (0, 3, 1), (3, 4, 3), (0, 4, 5),      # second chain at node 0, wider
        (5, 0, 4),                            # funding into 0
        (5, 6, 8), (6, 7, 9), (5, 7, 12),     # chain at node 5
        (7, 8, 15), (8, 9, 20), (7, 9, 22),   # chain at node 7
        (2, 6, 6), (9, 1, 25), (4, 8, 18),    # background
    ]
    src, dst, ts = zip(*edges)
    g = build_graph(10, list(src), list(dst), list(ts))
    rng = np.random.default_rng(99)
    feats = rng.normal(0.0, 1.0, size=(10, 3))
    labels = np.zeros(10, dtype=np.int8)
    labels[0] = labels[5] = 1
    return set_features_labels(g, feats, labels)
