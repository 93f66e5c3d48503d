import numpy as np
import pytest

from capgnn.graph import SbmParams, generate_sbm, make_dataset
from capgnn.linalg import CsrMatrix, make_rng
from capgnn.train import TrainConfig, train


@pytest.fixture(scope="session")
def small_sbm():
    """40-node two-block graph with overlapping (noisy) features."""
    return generate_sbm(SbmParams((20, 20), 0.4, 0.05, 1.5), make_rng(11))


@pytest.fixture(scope="session")
def trained_small(small_sbm):
    """A converged model on ``small_sbm`` (dropout off, so probes are smooth)."""
    cfg = TrainConfig(
        epochs=300, mode="vanilla", lr=0.05, optimizer="adam",
        hidden_dims=(16,), dropout=0.0, seed=5, eval_every=50,
    )
    model, _ = train(small_sbm, cfg)
    return model


def two_node_dataset():
    """Two nodes, one edge, d=2, K=2, train={0}, test={1}."""
    adj = CsrMatrix.from_coo(2, 2, [0, 1], [1, 0], [1.0, 1.0])
    return make_dataset(
        adjacency=adj,
        features=np.array([[1.0, 0.0], [0.0, 1.0]]),
        labels=np.array([0, 1]),
        num_classes=2,
        train_mask=[True, False],
        val_mask=[False, False],
        test_mask=[False, True],
    )
