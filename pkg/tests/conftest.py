import numpy as np
import pytest

import semiflow_lab as sl


@pytest.fixture(scope="session")
def pure_shift():
    return sl.instantiate("pure_shift")


@pytest.fixture(scope="session")
def riccati():
    return sl.instantiate("riccati_scalar")


@pytest.fixture(scope="session")
def hjm():
    return sl.instantiate("hjm_constant_vol")


@pytest.fixture(scope="session")
def diagonal_linear():
    return sl.instantiate("diagonal_linear")


def rk4_oracle(f, x0: np.ndarray, T: float, n: int) -> np.ndarray:
    """Independent fixed-step RK4 reference for plain ODE instances."""
    x = np.asarray(x0, dtype=float).copy()
    h = T / n
    for _ in range(n):
        k1 = f(x)
        k2 = f(x + h / 2 * k1)
        k3 = f(x + h / 2 * k2)
        k4 = f(x + h * k3)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def riccati_exact(x0: float, t):
    return x0 / (1.0 - x0 * np.asarray(t))
