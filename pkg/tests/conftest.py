import numpy as np
import pytest

from hiermimo import CsiQuality, build_config, objective


def crandn(rng, *shape):
    """Standard circularly-symmetric complex Gaussian draws."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def fd_lagrangian_grad(config, H_est, T, G, Om, sigma, lam, p_tot, first_free_row=0):
    """Central finite differences of the power Lagrangian w.r.t. free rows of T.

    L(T) = objective(T) + lam * (||T||_F^2 - p_tot); returns the max absolute
    component over real/imag perturbations of every free entry.
    """
    eps = 1e-6 * max(1.0, float(np.abs(T).max()))

    def lagrangian(T_val):
        pen = lam * (float(np.linalg.norm(T_val) ** 2) - p_tot)
        return objective(config, H_est, T_val, G, Om, sigma) + pen

    worst = 0.0
    for r in range(first_free_row, T.shape[0]):
        for c in range(T.shape[1]):
            for direction in (1.0, 1.0j):
                Tp = T.copy()
                Tm = T.copy()
                Tp[r, c] += eps * direction
                Tm[r, c] -= eps * direction
                worst = max(worst, abs(lagrangian(Tp) - lagrangian(Tm)) / (2 * eps))
    return worst


@pytest.fixture
def cfg4():
    """The K=4 single-antenna unit-variance network used in the simulations."""
    return build_config({"K": 4, "M": 1, "N": 1, "d": 1, "rho2": 1.0, "P": 10.0})


@pytest.fixture
def quality4(cfg4):
    """CSI qualities: sigma^2 = 0.25 at TX 1 and 2, perfect at TX 3 and 4."""
    return CsiQuality.from_block_variances(cfg4, [0.25, 0.25, 0.0, 0.0])
