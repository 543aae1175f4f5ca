import numpy as np
import pytest

import audiodct.autograd as ag


def fd_check(build_loss, leaves, rng, h=1e-5, samples=30):
    """Central finite differences against analytic gradients.

    ``build_loss`` must rebuild the graph from the leaves' current values.
    Returns the worst relative error over sampled coordinates.
    """
    loss = build_loss()
    ag.backward(loss)
    grads = [leaf.grad.copy() if leaf.grad is not None else None for leaf in leaves]
    worst = 0.0
    for leaf, grad in zip(leaves, grads):
        assert grad is not None, "leaf received no gradient"
        flat = leaf.value.ravel()
        count = min(samples, flat.size)
        idx = rng.choice(flat.size, size=count, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            up = float(build_loss().value[0, 0])
            flat[i] = orig - h
            down = float(build_loss().value[0, 0])
            flat[i] = orig
            fd = (up - down) / (2 * h)
            an = grad.ravel()[i]
            rel = abs(an - fd) / max(abs(an), abs(fd), 1e-6)
            worst = max(worst, rel)
    for leaf in leaves:
        leaf.zero_grad()
    return worst


def random_loss(node):
    """Project an op output to a scalar with a fixed random weighting, so the
    finite-difference probe exercises every output coordinate."""
    rng = np.random.default_rng(12345)
    w = ag.constant(rng.normal(size=node.shape))
    return ag.sum_all(ag.mul(node, w))


@pytest.fixture
def rng():
    return np.random.default_rng(0)
