import numpy as np
import pytest
from scipy.optimize import minimize

from pmixseg.model import PValueField


def grid_field(nx, ny, p):
    xs, ys = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    coords = np.column_stack([xs.ravel(), ys.ravel()])
    return PValueField.from_arrays(coords, p, (nx, ny))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def blob_field(seed, n, K, c_v=2):
    """Uniform background plus K compact blobs of small p-values.

    Records are ``n`` distinct voxels of a square (or cubic) grid.
    """
    rng = np.random.default_rng(seed)
    side = int(np.ceil(n ** (1.0 / c_v) * 1.2))
    dims = (side,) * c_v
    flat = rng.choice(side ** c_v, size=n, replace=False)
    coords = np.column_stack(np.unravel_index(flat, dims))
    p = rng.uniform(size=n)
    for _ in range(K):
        c = rng.uniform(0.2, 0.8, c_v) * (side - 1)
        near = np.linalg.norm(coords - c, axis=1) < side * 0.12
        p[near] = rng.beta(0.4, 60.0, near.sum())
    p = np.clip(p, 1e-12, 1 - 1e-12)
    return PValueField.from_arrays(coords, p, dims)


def pi_oracle(sw, delta):
    """BFGS over softmax logits of the feasible set.

    ``pi_0 = delta + (1-delta) s_0`` and ``pi_k = (1-delta) s_k`` map the
    simplex ``s`` onto ``{pi_0 >= delta, sum pi = 1}``, so the search is
    unconstrained.
    """
    f = sw / sw.sum()

    def pi_of(z):
        e = np.exp(z - z.max())
        s = e / e.sum()
        pi = (1 - delta) * s
        pi[0] += delta
        return pi, s

    def obj(z):
        pi, s = pi_of(z)
        g = -f * (1 - delta) / pi
        return -np.sum(f * np.log(pi)), s * (g - np.dot(g, s))

    z0 = np.log(np.maximum(f, 1e-3))
    res = minimize(obj, z0, jac=True, method="BFGS", options={"gtol": 1e-13, "maxiter": 10000})
    return pi_of(res.x)[0]


ACCEPTANCE = {}


def record(n, ok, detail):
    """Register the outcome of acceptance criterion ``n``."""
    ACCEPTANCE[n] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
