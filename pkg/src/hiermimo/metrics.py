"""MSE matrices, error-covariance corrections, MMSE receive filters and rates.

All formulas follow the H-orientation of `model`: H is (M_tot, N_tot), the
RX-i column block is H_i = H[:, rx_slice]. The precoder T is (M_tot, d_tot)
with per-user column blocks T_k and per-TX row blocks W_j.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, PowerViolationError
from .model import ChannelRealization


def herm(a):
    return a.conj().T


def hermitize(a):
    """Kill rounding asymmetry of a nominally Hermitian matrix."""
    return 0.5 * (a + a.conj().T)


def logdet_hpd(a):
    """log det of a Hermitian positive definite matrix via Cholesky."""
    L = np.linalg.cholesky(a)
    return 2.0 * float(np.sum(np.log(np.diagonal(L).real)))


def block_diag(blocks):
    """Dense block-diagonal stack of 2-D arrays."""
    rows = sum(b.shape[0] for b in blocks)
    cols = sum(b.shape[1] for b in blocks)
    out = np.zeros((rows, cols), dtype=complex)
    r = c = 0
    for b in blocks:
        out[r:r + b.shape[0], c:c + b.shape[1]] = b
        r += b.shape[0]
        c += b.shape[1]
    return out


@dataclass(frozen=True)
class RxFilterBank:
    """Per-RX filters G_k (N_k x d_k) and their block-diagonal aggregate."""

    blocks: tuple

    @property
    def aggregate(self):
        return block_diag(self.blocks)


@dataclass(frozen=True)
class WeightBank:
    """Per-user Hermitian positive definite weights Omega_k (d_k x d_k)."""

    blocks: tuple

    @property
    def aggregate(self):
        return block_diag(self.blocks)


@dataclass(frozen=True)
class MseMatrix:
    """One user's MSE matrix, instantaneous or averaged over the CSI error."""

    matrix: np.ndarray
    variant: str  # "instantaneous" | "averaged"


@dataclass(frozen=True)
class ErrorCovariances:
    """Diagonals of Phi_k (per RX) and Psi, plus the inputs they came from."""

    phi_diag: tuple            # one (N_k,) real vector per RX
    psi_diag: np.ndarray       # (M_tot,) real vector
    sigma: np.ndarray = field(repr=False)
    T: np.ndarray = field(repr=False)
    G: object = field(repr=False)   # the filter bank (or aggregate) used

    def phi_matrix(self, k):
        return np.diag(self.phi_diag[k])

    def psi_matrix(self):
        return np.diag(self.psi_diag)


@dataclass(frozen=True)
class RateReport:
    """Per-user rates and their sum, in bits per channel use."""

    per_user: tuple
    total: float


def phi_diag_full(sigma, T):
    """All Phi diagonals at once: phi[q] = sum_p sigma[p,q]^2 (T T^H)[p,p]."""
    tt = np.einsum("pd,pd->p", T, T.conj()).real
    return tt @ (sigma**2)


def phi_matrix(config, sigma, T, k):
    """Diagonal Phi_k (N_k x N_k): CSI-error power seen at RX k's antennas.

    {Phi_k}_qq = sum_p sigma[p, q]^2 * {T T^H}_pp for q in RX k's antennas.
    """
    if sigma.shape != (config.M_tot, config.N_tot):
        raise ConfigError("sigma table has wrong shape")
    if T.shape[0] != config.M_tot:
        raise ConfigError("precoder has wrong number of rows")
    return np.diag(phi_diag_full(sigma, T)[config.rx_slices[k]])


def psi_diag_full(sigma, G_agg, omega_agg=None):
    """psi[p] = sum_q sigma[p,q]^2 * diag(G Omega G^H)[q] (Omega=I if omitted)."""
    if omega_agg is None:
        gg = np.einsum("qd,qd->q", G_agg, G_agg.conj()).real
    else:
        gg = np.einsum("qd,qd->q", G_agg @ omega_agg, G_agg.conj()).real
    return (sigma**2) @ gg


def psi_matrix(config, sigma, G, omega=None):
    """Diagonal Psi (M_tot x M_tot): CSI-error regularizer on the precoder.

    With `omega` (a WeightBank) given, the weighted form entering the
    precoder update is returned; it satisfies the trace identity
    sum_k tr(Omega_k G_k^H Phi_k G_k) = tr(T^H Psi T) for any T.
    """
    if sigma.shape != (config.M_tot, config.N_tot):
        raise ConfigError("sigma table has wrong shape")
    G_agg = G.aggregate if isinstance(G, RxFilterBank) else np.asarray(G)
    if G_agg.shape != (config.N_tot, config.d_tot):
        raise ConfigError("filter bank has wrong aggregate shape")
    om = omega.aggregate if isinstance(omega, WeightBank) else omega
    return np.diag(psi_diag_full(sigma, G_agg, om))


def error_covariances(config, sigma, T, G, omega=None):
    """Bundle Phi_k and Psi diagonals for a (sigma, T, G) triple."""
    phi = phi_diag_full(sigma, T)
    G_agg = G.aggregate if isinstance(G, RxFilterBank) else np.asarray(G)
    om = omega.aggregate if isinstance(omega, WeightBank) else omega
    psi = psi_diag_full(sigma, G_agg, om)
    return ErrorCovariances(
        phi_diag=tuple(phi[sl] for sl in config.rx_slices),
        psi_diag=psi,
        sigma=sigma,
        T=T,
        G=G,
    )


def mse_matrix(config, H_used, T, G_k, k, phi_k=None):
    """MSE matrix of user k (Eq. of the error covariance), optionally averaged.

    Passing phi_k (the (N_k,) diagonal or N_k x N_k matrix) returns the
    averaged variant M_k + G_k^H Phi_k G_k.
    """
    rx = config.rx_slices[k]
    st = config.stream_slices[k]
    d_k = config.d[k]
    C = herm(H_used[:, rx]) @ T            # N_k x d_tot
    c = C[:, st]                           # H_k^H T_k
    M = (
        np.eye(d_k)
        + herm(G_k) @ G_k
        + herm(G_k) @ (C @ herm(C)) @ G_k
        - herm(G_k) @ c
        - herm(c) @ G_k
    )
    variant = "instantaneous"
    if phi_k is not None:
        phi_k = np.asarray(phi_k)
        phi_mat = np.diag(phi_k) if phi_k.ndim == 1 else phi_k
        M = M + herm(G_k) @ phi_mat @ G_k
        variant = "averaged"
    return MseMatrix(matrix=hermitize(M), variant=variant)


def mmse_rx_filter(config, H_used, T, k, phi_k=None):
    """The filter minimizing tr of (averaged) M_k at fixed T (Eq. of the MMSE RX).

    G_k^H = T_k^H H_k (H_k^H T T^H H_k + I + Phi_k)^{-1}; returns G_k (N_k x d_k).
    """
    rx = config.rx_slices[k]
    st = config.stream_slices[k]
    C = herm(H_used[:, rx]) @ T
    J = C @ herm(C) + np.eye(config.N[k])
    if phi_k is not None:
        phi_k = np.asarray(phi_k)
        J = J + (np.diag(phi_k) if phi_k.ndim == 1 else phi_k)
    return np.linalg.solve(hermitize(J), C[:, st])


def mmse_filter_bank(config, H_used, T, sigma=None):
    """MMSE filters of all users; sigma (std table) adds the Phi_k terms."""
    phi = None if sigma is None else phi_diag_full(sigma, T)
    blocks = []
    for k in range(config.K):
        phi_k = None if phi is None else phi[config.rx_slices[k]]
        blocks.append(mmse_rx_filter(config, H_used, T, k, phi_k))
    return RxFilterBank(blocks=tuple(blocks))


def power_ratios(config, T):
    """Per-TX ratios ||W_j||_F^2 / P_j of a stacked precoder."""
    return np.array(
        [np.linalg.norm(T[sl]) ** 2 / config.P[j] for j, sl in enumerate(config.tx_slices)]
    )


def evaluate_rates(config, channel, T, enforce_power=True, power_tol=1e-6):
    """Exact rates achieved by T on the true channel with MMSE receivers.

    R_k = -log2 det M_k at the per-user MMSE filter (RXs have perfect CSI, so
    no Phi correction enters here). With enforce_power, per-TX budget
    violations beyond the relative tolerance raise PowerViolationError.
    """
    H = channel.H if isinstance(channel, ChannelRealization) else channel
    if enforce_power:
        ratios = power_ratios(config, T)
        if np.any(ratios > 1.0 + power_tol):
            j = int(np.argmax(ratios))
            raise PowerViolationError(
                f"TX {j} exceeds its power budget: ||W_j||^2/P_j = {ratios[j]:.12g}"
            )
    rates = []
    for k in range(config.K):
        rx = config.rx_slices[k]
        st = config.stream_slices[k]
        C = herm(H[:, rx]) @ T
        J = hermitize(C @ herm(C)) + np.eye(config.N[k])
        c = C[:, st]
        # MSE at the MMSE filter: M_k = I - c^H J^{-1} c
        M = hermitize(np.eye(config.d[k]) - herm(c) @ np.linalg.solve(J, c))
        rates.append(max(0.0, -logdet_hpd(M) / np.log(2.0)))
    total = float(sum(rates))
    return RateReport(per_user=tuple(rates), total=total)
