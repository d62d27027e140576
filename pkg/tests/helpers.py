"""Reference solvers and random instances shared by the test modules."""

import numpy as np

from annalloc.baseline import kkt_residual
from annalloc.dataset import NormStats, generate
from annalloc.effectiveness import DEFAULT_BOX, BoxSet, project_box
from annalloc.neuralnet import init_network


def projected_gradient(a, b, box, tol=1e-11, max_iter=200_000):
    """Accelerated projected gradient with gradient restart for 0.5 ||a x - b||^2 on a box."""
    step = 1.0 / np.linalg.norm(a, 2) ** 2
    x = project_box(box.center, box)
    y, t = x.copy(), 1.0
    for _ in range(max_iter):
        x_new = project_box(y - step * (a.T @ (a @ y - b)), box)
        if (y - x_new) @ (x_new - x) > 0:  # momentum points uphill
            y, t = x.copy(), 1.0
            continue
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        y = x_new + (t - 1) / t_new * (x_new - x)
        x, t = x_new, t_new
        if kkt_residual(a, b, x, box) <= tol:
            break
    return x


def random_instance(rng):
    a = rng.normal(size=(3, 5))
    b = rng.normal(scale=3.0, size=3)
    lo = -rng.uniform(0.1, 2.0, 5)
    hi = rng.uniform(0.1, 2.0, 5)
    return a, b, BoxSet(lo, hi)


def random_net(arch, seed=0, box=DEFAULT_BOX):
    rng = np.random.default_rng(seed)
    norm = NormStats(np.array([30.0, 30.0, 30.0, 0.25, 1 / 12]), np.array([0.0, 0.0, 0.0, 4.0, 0.0]))
    net = init_network(arch, norm, box, rng)
    for b in net.biases[:-1]:
        b[...] = rng.normal(scale=0.3, size=b.shape)
    return net


def random_inputs(model, n, seed):
    return generate(model, max(n, 10), seed=seed).inputs[:n]


def kink_distance(net, x):
    acts, pre = net.forward_cached(x)
    hidden = min(np.abs(z).min() for z in pre[:-1])
    raw = acts[-1]
    box = net.output_box
    sat = min(np.abs(raw - box.lower).min(), np.abs(raw - box.upper).min())
    return min(hidden, sat)
