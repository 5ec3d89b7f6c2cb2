import numpy as np
import pytest

from frontdoor.nuisance import DensityRows, RatioRows
from frontdoor.sim import DgpSpec, generate

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def dataset(name, n, seed=0):
    return generate(DgpSpec(name, n, seed))


def random_density_rows(rng, n=30, binary_m=True, a0=1, grid=41):
    """Arbitrary (not necessarily coherent) nuisance values: enough for algebraic identities."""
    a = rng.integers(0, 2, n)
    a[:2] = [0, 1]
    pi1 = rng.uniform(0.1, 0.9, n)
    if binary_m:
        m = rng.integers(0, 2, n).astype(float)
        points = np.broadcast_to(np.array([0.0, 1.0]), (n, 2))
        qweights = np.ones((n, 2))
        p_a0 = rng.uniform(0.1, 0.9, n)
        p_other = rng.uniform(0.1, 0.9, n)
        f_grid = np.column_stack([1 - p_a0, p_a0])
        f_other_grid = np.column_stack([1 - p_other, p_other])
        mi = m.astype(int)
        f_a0_obs = f_grid[np.arange(n), mi]
        f_other_obs = f_other_grid[np.arange(n), mi]
        mu_grid = rng.normal(size=(n, 2, 2))
        mu_obs = mu_grid[np.arange(n), mi, :]
    else:
        m = rng.normal(size=n)
        pts = np.linspace(-4, 4, grid)
        w = np.full(grid, pts[1] - pts[0])
        w[[0, -1]] /= 2
        points = np.broadcast_to(pts, (n, grid))
        qweights = np.broadcast_to(w, (n, grid))
        centers = rng.normal(scale=0.5, size=n)
        f_grid = np.exp(-0.5 * (pts[None, :] - centers[:, None]) ** 2) / np.sqrt(2 * np.pi)
        f_other_grid = None
        f_a0_obs = rng.uniform(0.05, 0.5, n)
        f_other_obs = rng.uniform(0.05, 0.5, n)
        slope = rng.normal(size=(n, 1, 2))
        mu_grid = rng.normal(size=(n, 1, 2)) + slope * pts[None, :, None]
        mu_obs = rng.normal(size=(n, 2))
    y = rng.normal(size=n)
    return DensityRows(a=a, m=m, y=y, a0=a0, binary_m=binary_m, points=points, qweights=qweights,
                       mu_grid=mu_grid, f_grid=f_grid, f_other_grid=f_other_grid, mu_obs=mu_obs,
                       f_a0_obs=f_a0_obs, f_other_obs=f_other_obs, pi1=pi1)


def random_ratio_rows(rng, n=30, a0=1, binary_y=False):
    a = rng.integers(0, 2, n)
    a[:2] = [0, 1]
    y = rng.integers(0, 2, n).astype(float) if binary_y else rng.normal(size=n)
    mu_obs = rng.uniform(0.1, 0.9, (n, 2)) if binary_y else rng.normal(size=(n, 2))
    ratio = np.where(a == a0, 1.0, rng.uniform(0.3, 3.0, n))
    ratio_cf = np.ones((n, 2))
    ratio_cf[:, 1 - a0] = rng.uniform(0.3, 3.0, n)
    ratio = np.where(a == a0, 1.0, ratio_cf[np.arange(n), a])
    return RatioRows(a=a, y=y, a0=a0, mu_obs=mu_obs, pi1=rng.uniform(0.1, 0.9, n),
                     gamma=rng.normal(size=n), kappa=rng.normal(size=(n, 2)), ratio=ratio,
                     ratio_cf=ratio_cf if binary_y else None)
