"""Centralized robust weighted-MMSE sum-rate maximization.

Alternates three closed-form updates until the surrogate objective
sum_k tr(Omega_k Mbar_k) - ln det Omega_k stalls:

  1. MMSE receive filters (with the Phi_k CSI-error correction),
  2. weights Omega_k = Mbar_k^{-1},
  3. precoder T = (H G Omega G^H H^H + Psi + lambda I)^{-1} H G Omega with the
     closed-form multiplier lambda = tr(Omega G^H G) / P_tot, followed by the
     scaling T = beta * T_tilde that restores the sum power budget exactly.

Natural log is used internally so that Omega_k = Mbar_k^{-1} is the exact
stationary weight; reported rates are in bits. The Psi entering step 3 is the
Omega-weighted form (see `metrics.psi_diag_full`), which is what the
Lagrangian derivative actually produces; with the unweighted form the
iteration loses the power identity and diverges.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .metrics import (
    ErrorCovariances,
    RxFilterBank,
    WeightBank,
    error_covariances,
    hermitize,
    herm,
    logdet_hpd,
    mse_matrix,
    phi_diag_full,
)

_NORMALIZE_SLACK = 1e-12  # per-TX normalization fires only beyond this ratio slack


@dataclass(frozen=True)
class SolverOptions:
    """Knobs of the alternating solver (shared by the hierarchical stages).

    init selects how a hierarchical stage starts its free rows: "warm"
    continues from the previous stage's solution, "matched" re-initializes
    from the matched filter. The centralized solver always starts matched
    unless an explicit T_init is passed.
    """

    max_iterations: int = 100
    tolerance: float = 1e-5            # relative objective change
    per_tx_normalize_each_round: bool = True
    init: str = "warm"                 # "warm" | "matched" (stage free rows)
    include_psi_in_w_opt: bool = True  # keep the Psi block in the fixed-rows update

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if not self.tolerance > 0:
            raise ConfigError("tolerance must be > 0")
        if self.init not in ("matched", "warm"):
            raise ConfigError(f"unknown init mode {self.init!r}")


@dataclass(frozen=True)
class SolverState:
    """Final iterates and the per-round objective trace of one solve."""

    T: np.ndarray
    G: RxFilterBank
    Omega: WeightBank
    covariances: ErrorCovariances
    lam: float
    beta: float
    objective_trace: list = field(repr=False)
    iterations: int
    converged: bool


def matched_filter_init(config, H_est, p_tot=None):
    """Columns of user k proportional to its channel block, scaled to the sum budget."""
    p_tot = config.P_tot if p_tot is None else p_tot
    cols = []
    for k in range(config.K):
        rx = config.rx_slices[k]
        cols.append(H_est[:, rx][:, : config.d[k]])
    T = np.concatenate(cols, axis=1).astype(complex)
    nrm = np.linalg.norm(T)
    if nrm > 0:
        T *= np.sqrt(p_tot) / nrm
    return T


def tx_block_powers(config, T):
    """||W_j||_F^2 of every per-TX row block."""
    row_power = np.einsum("md,md->m", T, T.conj()).real
    starts = np.concatenate(([0], np.cumsum(config.M)[:-1]))
    return np.add.reduceat(row_power, starts)


def per_tx_power_scale(config, T, free_from_tx=0):
    """Scale factor 1/sqrt(r) with r = max ratio ||W_j||^2/P_j over TXs >= free_from_tx."""
    ratios = tx_block_powers(config, T) / np.asarray(config.P)
    r = float(ratios[free_from_tx:].max())
    if r > 1.0 + _NORMALIZE_SLACK:
        return 1.0 / np.sqrt(r)
    return 1.0


# ---------------------------------------------------------------------------
# public single-step operations


def objective(config, H_est, T, G, Omega, sigma=None):
    """Robust weighted-MSE objective sum_k tr(Omega_k Mbar_k) - ln det Omega_k."""
    phi = None
    if sigma is not None:
        phi = phi_diag_full(sigma, T)
    total = 0.0
    for k in range(config.K):
        phi_k = None if phi is None else phi[config.rx_slices[k]]
        mbar = mse_matrix(config, H_est, T, G.blocks[k], k, phi_k).matrix
        om = Omega.blocks[k]
        total += float(np.trace(om @ mbar).real) - logdet_hpd(hermitize(om))
    return total


def update_weights(mbars):
    """Omega_k = Mbar_k^{-1} for each user's averaged MSE matrix."""
    blocks = []
    for mb in mbars:
        m = mb.matrix if hasattr(mb, "matrix") else mb
        blocks.append(hermitize(np.linalg.inv(m)))
    return WeightBank(blocks=tuple(blocks))


def update_precoder(config, H_est, G, Omega, psi=None, p_tot=None):
    """Closed-form precoder update; returns (T, lambda).

    T = (H G Omega G^H H^H + Psi + lambda I)^{-1} H G Omega with
    lambda = tr(Omega G^H G) / P_tot. The returned T zeroes the Lagrangian
    derivative at this lambda; it is *not* power-normalized (the solver loop
    applies the beta scaling afterwards). Singular systems (G = 0 with
    Psi = 0) fall back to the minimum-norm pseudo-solution.
    """
    p_tot = config.P_tot if p_tot is None else p_tot
    G_agg = G.aggregate if isinstance(G, RxFilterBank) else G
    om_agg = Omega.aggregate if isinstance(Omega, WeightBank) else Omega
    GO = G_agg @ om_agg
    lam = float(np.einsum("qd,qd->", GO, G_agg.conj()).real) / p_tot
    C = H_est @ G_agg
    B = H_est @ GO
    A = hermitize(B @ herm(C))
    if psi is not None:
        psi_vec = psi.psi_diag if isinstance(psi, ErrorCovariances) else np.asarray(psi)
        if psi_vec.ndim == 2:
            psi_vec = np.diagonal(psi_vec)
        A = A + np.diag(psi_vec)
    A = A + lam * np.eye(config.M_tot)
    try:
        T = np.linalg.solve(A, B)
    except np.linalg.LinAlgError:
        T = np.linalg.lstsq(A, B, rcond=None)[0]
    return T, lam


# ---------------------------------------------------------------------------
# iteration engine


class _Engine:
    """Per-(H, sigma) workspace for the alternating updates.

    Per-user filter/weight updates run on one of three paths chosen by the
    configured dimensions: plain vector arithmetic when every user is
    single-antenna single-stream, stacked LAPACK calls when all (N_k, d_k)
    agree, and a per-user loop otherwise.
    """

    def __init__(self, config, H_est, sigma):
        self.cfg = config
        self.H = np.ascontiguousarray(H_est, dtype=complex)
        if sigma is None:
            sigma = np.zeros((config.M_tot, config.N_tot))
        if sigma.shape != (config.M_tot, config.N_tot):
            raise ConfigError("sigma table has wrong shape")
        self.s2 = np.ascontiguousarray(sigma, dtype=float) ** 2
        self.no_error = not self.s2.any()
        if config.uniform_dims:
            self.mode = "scalar" if config.N[0] == config.d[0] == 1 else "uniform"
        else:
            self.mode = "loop"
        if self.mode == "uniform":
            K, Nk, dk = config.K, config.N[0], config.d[0]
            self._rows = (np.arange(K)[:, None, None] * Nk
                          + np.arange(Nk)[None, :, None])
            self._cols = (np.arange(K)[:, None, None] * dk
                          + np.arange(dk)[None, None, :])
            self._eye_d = np.eye(dk)

    # -- shared per-round pieces ------------------------------------------

    def common(self, T):
        """Quantities depending on T only: Phi diagonal and channel products."""
        if self.no_error:
            phi = np.zeros(self.cfg.N_tot)
        else:
            tt = np.einsum("pd,pd->p", T, T.conj()).real
            phi = tt @ self.s2
        F = herm(self.H) @ T
        S = F @ herm(F)
        return phi, F, S

    def filters_weights(self, phi, F, S):
        """MMSE filters, weights, their aggregates and the scalars of the T step.

        Returns (payload, G_agg, GO_agg, gg, sum_logdet_om) where payload is
        the mode-specific per-user (G_k, Omega_k) bundle and gg is the
        diagonal of G Omega G^H.
        """
        cfg = self.cfg
        n, d = cfg.N_tot, cfg.d_tot
        if self.mode == "scalar":
            K = cfg.K
            c = np.diagonal(F).copy()
            J = np.diagonal(S).real + 1.0 + phi
            g = c / J
            mbar = 1.0 - (c.conj() * g).real
            om = 1.0 / mbar
            sum_logdet_om = -float(np.log(mbar).sum())
            go = g * om
            G_agg = np.zeros((n, d), dtype=complex)
            GO_agg = np.zeros((n, d), dtype=complex)
            G_agg.flat[:: K + 1] = g
            GO_agg.flat[:: K + 1] = go
            gg = (g.conj() * go).real
            return (g, om), G_agg, GO_agg, gg, sum_logdet_om
        if self.mode == "uniform":
            K, Nk, dk = cfg.K, cfg.N[0], cfg.d[0]
            ar = np.arange(K)
            Sb = S.reshape(K, Nk, K, Nk)[ar, :, ar, :]
            cb = F.reshape(K, Nk, K, dk)[ar, :, ar, :]
            J = Sb.copy()
            J[:, np.arange(Nk), np.arange(Nk)] += 1.0 + phi.reshape(K, Nk)
            G = np.linalg.solve(J, cb)                       # (K, Nk, dk)
            Mbar = self._eye_d - herm_stack(cb) @ G
            Mbar = 0.5 * (Mbar + herm_stack(Mbar))
            Om = np.linalg.inv(Mbar)
            Om = 0.5 * (Om + herm_stack(Om))
            chol = np.linalg.cholesky(Mbar)
            sum_logdet_om = -2.0 * float(
                np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2).real))
            )
            GO = G @ Om
            G_agg = np.zeros((n, d), dtype=complex)
            GO_agg = np.zeros((n, d), dtype=complex)
            G_agg[self._rows, self._cols] = G
            GO_agg[self._rows, self._cols] = GO
            gg = np.einsum("qd,qd->q", GO_agg, G_agg.conj()).real
            return (G, Om), G_agg, GO_agg, gg, sum_logdet_om
        g_blocks, om_blocks = [], []
        sum_logdet_om = 0.0
        G_agg = np.zeros((n, d), dtype=complex)
        GO_agg = np.zeros((n, d), dtype=complex)
        for k in range(cfg.K):
            rx, st = cfg.rx_slices[k], cfg.stream_slices[k]
            J = S[rx, rx] + np.diag(1.0 + phi[rx])
            c = F[rx, st]
            G = np.linalg.solve(J, c)
            Mbar = hermitize(np.eye(cfg.d[k]) - herm(c) @ G)
            Om = hermitize(np.linalg.inv(Mbar))
            sum_logdet_om -= logdet_hpd(Mbar)
            G_agg[rx, st] = G
            GO_agg[rx, st] = G @ Om
            g_blocks.append(G)
            om_blocks.append(Om)
        gg = np.einsum("qd,qd->q", GO_agg, G_agg.conj()).real
        return (g_blocks, om_blocks), G_agg, GO_agg, gg, sum_logdet_om

    def objective_of(self, phi, F, S, payload, sum_logdet_om):
        """sum_k tr(Omega_k Mbar_k(T, G)) - ln det Omega_k at the stored filters."""
        cfg = self.cfg
        if self.mode == "scalar":
            g, om = payload
            c = np.diagonal(F)
            J = np.diagonal(S).real + 1.0 + phi
            mb = 1.0 + (g.conj() * g).real * J - 2.0 * (g.conj() * c).real
            return float((om * mb).sum()) - sum_logdet_om
        if self.mode == "uniform":
            K, Nk, dk = cfg.K, cfg.N[0], cfg.d[0]
            ar = np.arange(K)
            Sb = S.reshape(K, Nk, K, Nk)[ar, :, ar, :].copy()
            Sb[:, np.arange(Nk), np.arange(Nk)] += 1.0 + phi.reshape(K, Nk)
            cb = F.reshape(K, Nk, K, dk)[ar, :, ar, :]
            G, Om = payload
            GHc = herm_stack(G) @ cb
            Mb = self._eye_d + herm_stack(G) @ (Sb @ G) - GHc - herm_stack(GHc)
            tr = np.einsum("kij,kji->", Om, Mb).real
            return float(tr) - sum_logdet_om
        g_blocks, om_blocks = payload
        total = 0.0
        for k in range(cfg.K):
            rx, st = cfg.rx_slices[k], cfg.stream_slices[k]
            G = g_blocks[k]
            J = S[rx, rx] + np.diag(1.0 + phi[rx])
            c = F[rx, st]
            GHc = herm(G) @ c
            Mb = np.eye(cfg.d[k]) + herm(G) @ J @ G - GHc - herm(GHc)
            total += float(np.trace(om_blocks[k] @ Mb).real)
        return total - sum_logdet_om

    def banks(self, payload):
        """Materialize (RxFilterBank, WeightBank) from a filters payload."""
        if self.mode == "scalar":
            g, om = payload
            g_blocks = tuple(np.array([[v]]) for v in g)
            om_blocks = tuple(np.array([[v]], dtype=complex) for v in om)
        else:
            g_blocks = tuple(np.array(b) for b in payload[0])
            om_blocks = tuple(np.array(b) for b in payload[1])
        return RxFilterBank(blocks=g_blocks), WeightBank(blocks=om_blocks)

    def precoder_full(self, G_agg, GO_agg, gg, p_tot):
        """Closed-form lambda update plus the beta scaling to the exact budget."""
        lam = float(gg.sum()) / p_tot
        C = self.H @ G_agg
        B = self.H @ GO_agg
        A = hermitize(B @ herm(C))
        diag_add = lam if self.no_error else self.s2 @ gg + lam
        idx = np.arange(self.cfg.M_tot)
        A[idx, idx] += diag_add
        try:
            T = np.linalg.solve(A, B)
        except np.linalg.LinAlgError:
            T = np.linalg.lstsq(A, B, rcond=None)[0]
        nrm2 = float(np.einsum("md,md->", T, T.conj()).real)
        beta = np.sqrt(p_tot / nrm2) if nrm2 > 0 else 1.0
        return beta * T, lam, beta

    def precoder_fixed(self, G_agg, GO_agg, gg, w_in, budget, variant, include_psi):
        """Free-rows update with rows of w_in pinned (bisection or clipping)."""
        m_in = w_in.shape[0]
        C = self.H @ G_agg
        B = self.H @ GO_agg
        rhs_mix = np.eye(self.cfg.d_tot) - herm(C[:m_in]) @ w_in
        B_opt = B[m_in:] @ rhs_mix
        # C_opt Omega C_opt^H from the aggregates: (H_opt G Omega)(H_opt G)^H
        A_opt = hermitize(B[m_in:] @ herm(C[m_in:]))
        if include_psi and not self.no_error:
            psi = self.s2 @ gg
            idx = np.arange(A_opt.shape[0])
            A_opt[idx, idx] += psi[m_in:]
        if variant == "bisection":
            lam, w_opt = solve_power_constrained(A_opt, B_opt, budget)
        elif variant == "clipping":
            lam = 0.0
            try:
                w_opt = np.linalg.solve(A_opt, B_opt)
            except np.linalg.LinAlgError:
                w_opt = np.linalg.lstsq(A_opt, B_opt, rcond=None)[0]
            w_opt = clip_to_budget(w_opt, budget)
        else:
            raise ConfigError(f"unknown variant {variant!r}")
        return np.vstack([w_in, w_opt]), lam


def herm_stack(a):
    return a.conj().transpose(0, 2, 1)


def clip_to_budget(w_opt, budget):
    """Scale w_opt down to the remaining sum-power budget; never scale up."""
    nrm = float(np.linalg.norm(w_opt))
    if nrm == 0.0:
        return w_opt
    target = min(nrm, np.sqrt(budget))
    return w_opt * (target / nrm)


def solve_power_constrained(A, B, budget, zero_tol=1e-12):
    """min tr(W^H A W) - 2 Re tr(B^H W) s.t. ||W||_F^2 <= budget.

    A Hermitian PSD. Returns (lambda, W) with W = (A + lambda I)^{-1} B;
    lambda = 0 when the (pseudo-)solution is already within budget, else the
    unique root of ||W(lambda)||^2 = budget (the norm is decreasing in lambda).
    """
    evals, U = np.linalg.eigh(A)
    Bt = herm(U) @ B
    c = np.einsum("ij,ij->i", Bt, Bt.conj()).real
    scale = max(float(evals[-1]), 0.0)
    live = evals > scale * zero_tol if scale > 0 else evals > 0
    # lambda = 0: minimum-norm pseudo-solution exists iff no energy on the null space
    null_energy = float(c[~live].sum())
    p0 = float(np.sum(c[live] / evals[live] ** 2)) if np.any(live) else 0.0
    if null_energy <= max(float(c.sum()), 1.0) * 1e-28 and p0 <= budget:
        coef = np.zeros_like(c)
        coef[live] = 1.0 / evals[live]
        return 0.0, U @ (Bt * coef[:, None])
    lam = _power_lambda_root(np.maximum(evals, 0.0), c, budget)
    return lam, U @ (Bt / (evals + lam)[:, None])


def _power_lambda_root(d, c, budget):
    """Root of f(lam) = sum c_i/(d_i+lam)^2 - budget; f is decreasing and convex."""
    hi = float(np.sqrt(c.sum() / budget))  # power(hi) <= sum(c)/hi^2 = budget
    lo = 0.0
    lam = hi

    def f_and_fp(lam):
        den = d + lam
        return float(np.sum(c / den**2) - budget), float(-2.0 * np.sum(c / den**3))

    # Newton with a bisection safeguard; on this convex decreasing f, Newton
    # from the left of the root converges monotonically without overshoot.
    for _ in range(200):
        f, fp = f_and_fp(lam)
        if f > 0:
            lo = max(lo, lam)
        else:
            hi = min(hi, lam)
        if abs(f) <= 1e-14 * budget or hi - lo <= 1e-16 * max(1.0, hi):
            return lam
        step = lam - f / fp if fp != 0 else 0.5 * (lo + hi)
        lam = step if lo < step < hi else 0.5 * (lo + hi)
    return lam


# ---------------------------------------------------------------------------
# full solver


def robust_wmmse(config, H_est, sigma, opts=None, T_init=None):
    """Run the alternating robust WMMSE solve on one channel estimate.

    sigma is the (M_tot, N_tot) error-std table of the deciding TX (None for
    perfect CSI: the Phi/Psi corrections vanish and the plain WMMSE iteration
    results). Stops when the relative objective change drops below
    opts.tolerance; non-convergence is reported via `converged`, not raised.
    """
    opts = opts or SolverOptions()
    eng = _Engine(config, H_est, sigma)
    p_tot = config.P_tot
    T = matched_filter_init(config, H_est, p_tot) if T_init is None else np.array(T_init, dtype=complex)
    trace = []
    lam = 0.0
    beta = 1.0
    converged = False
    payload = None
    phi, F, S = eng.common(T)
    for _ in range(opts.max_iterations):
        payload, G_agg, GO_agg, gg, sum_ld = eng.filters_weights(phi, F, S)
        T, lam, beta = eng.precoder_full(G_agg, GO_agg, gg, p_tot)
        if opts.per_tx_normalize_each_round:
            T = T * per_tx_power_scale(config, T)
        phi, F, S = eng.common(T)
        trace.append(eng.objective_of(phi, F, S, payload, sum_ld))
        if len(trace) >= 2 and abs(trace[-1] - trace[-2]) <= opts.tolerance * max(
            1.0, abs(trace[-2])
        ):
            converged = True
            break
    G, Om = eng.banks(payload)
    sig = np.sqrt(eng.s2)
    return SolverState(
        T=T,
        G=G,
        Omega=Om,
        covariances=error_covariances(config, sig, T, G, Om),
        lam=lam,
        beta=beta,
        objective_trace=trace,
        iterations=len(trace),
        converged=converged,
    )


def surrogate_rate_bits(config, H_est, T, sigma=None):
    """sum_k log2 det Mbar_k^{-1} at the MMSE filters for T (the robust rate proxy)."""
    eng = _Engine(config, H_est, sigma)
    phi, F, S = eng.common(T)
    total = 0.0
    for k in range(config.K):
        rx, st = config.rx_slices[k], config.stream_slices[k]
        J = S[rx, rx] + np.diag(1.0 + phi[rx])
        c = F[rx, st]
        M = hermitize(np.eye(config.d[k]) - herm(c) @ np.linalg.solve(hermitize(J), c))
        total -= logdet_hpd(M) / np.log(2.0)
    return float(total)
