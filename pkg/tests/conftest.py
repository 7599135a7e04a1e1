import numpy as np
import pytest

from bayesalign.geom import euler_matrix


def random_rotation(rng):
    a = rng.uniform(-np.pi, np.pi)
    b = np.arcsin(rng.uniform(-1, 1))
    c = rng.uniform(-np.pi, np.pi)
    return euler_matrix(a, b, c)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def euler_grid_inner(a, b, c, C):
    """sum_ij R_ij C_ij for R = Rz(a) Ry(b) Rx(c) over the grid a x b x c.

    Written from the axis matrices independently of the package's closed form.
    """
    c1, s1 = np.cos(a)[:, None, None], np.sin(a)[:, None, None]
    c2, s2 = np.cos(b)[None, :, None], np.sin(b)[None, :, None]
    c3, s3 = np.cos(c)[None, None, :], np.sin(c)[None, None, :]
    # rows of Ry(b) Rx(c); then R = Rz(a) (Ry Rx)
    yx = [(c2, -s2 * s3, s2 * c3), (0.0, c3, s3), (-s2, -c2 * s3, c2 * c3)]
    rz = [(c1, s1, 0.0), (-s1, c1, 0.0), (0.0, 0.0, 1.0)]
    total = 0.0
    for i in range(3):
        for j in range(3):
            rij = rz[i][0] * yx[0][j] + rz[i][1] * yx[1][j] + rz[i][2] * yx[2][j]
            total = total + rij * C[i, j]
    return total


_ACCEPTANCE = {}


@pytest.fixture
def acceptance(request):
    """``acceptance(n, ok, detail)``: record and print one pass/fail line."""
    tr = request.config.pluginmanager.get_plugin("terminalreporter")

    def report(n, ok, detail):
        n = str(n)
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[n] = line
        if tr is not None:
            tr.write_line("")
            tr.write_line(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        order = lambda k: (int("".join(c for c in k if c.isdigit())), k)
        for n in sorted(_ACCEPTANCE, key=order):
            terminalreporter.write_line(_ACCEPTANCE[n])
