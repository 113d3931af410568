"""Network topology, channel drawing, and hierarchical per-TX CSI generation.

Conventions
-----------
The aggregate channel is stored as H of shape (M_tot, N_tot): rows index TX
antennas, columns index RX antennas, so that H^H is the N_tot x M_tot
downlink matrix. The (RX i, TX k) block occupies the rows of TX k and the
columns of RX i and has i.i.d. CN(0, rho2[i, k]) entries.

CSI error tables sigma are stored per scalar channel coefficient, i.e. as
(M_tot, N_tot) arrays aligned with H; values are constant inside each
(RX i, TX k) antenna block when configured per link. TX indices are 0-based
throughout the code; TX 0 has the worst CSI and decides first.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigError


def _as_tuple(value, K, name, kind=int):
    """Broadcast a scalar to length K or validate a length-K sequence."""
    if np.isscalar(value):
        return tuple(kind(value) for _ in range(K))
    out = tuple(kind(v) for v in value)
    if len(out) != K:
        raise ConfigError(f"{name} must have length K={K}, got {len(out)}")
    return out


def _freeze(a):
    a = np.ascontiguousarray(a)
    if a.flags.writeable:
        a = a.copy()
        a.flags.writeable = False
    return a


@dataclass(frozen=True)
class NetworkConfig:
    """Dimensions, link variances and per-TX power budgets of one network.

    K TX/RX pairs; TX i has M[i] antennas and serves RX i (N[i] antennas)
    with d[i] streams. rho2[i, k] is the variance of the (RX i, TX k) link
    coefficients, P[j] the linear power budget of TX j (unit noise).
    """

    K: int
    M: tuple
    N: tuple
    d: tuple
    rho2: np.ndarray
    P: tuple

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        for name in ("M", "N", "d"):
            vals = getattr(self, name)
            if len(vals) != self.K:
                raise ConfigError(f"{name} must have length K={self.K}")
            if any(v < 1 for v in vals):
                raise ConfigError(f"all {name} entries must be >= 1")
        if len(self.P) != self.K:
            raise ConfigError(f"P must have length K={self.K}")
        if any(p <= 0 for p in self.P):
            raise ConfigError("power budgets must be > 0")
        rho2 = np.asarray(self.rho2, dtype=float)
        if rho2.shape != (self.K, self.K):
            raise ConfigError(f"rho2 must be a {self.K}x{self.K} table")
        if not np.all(rho2 > 0):
            raise ConfigError("link variances must be > 0")
        object.__setattr__(self, "rho2", _freeze(rho2))
        for i in range(self.K):
            if self.d[i] > min(self.N[i], self.M_tot):
                raise ConfigError(
                    f"user {i}: d={self.d[i]} streams not supportable with "
                    f"N={self.N[i]} RX antennas and M_tot={self.M_tot}"
                )

    @property
    def M_tot(self):
        return sum(self.M)

    @property
    def N_tot(self):
        return sum(self.N)

    @property
    def d_tot(self):
        return sum(self.d)

    @property
    def P_tot(self):
        return float(sum(self.P))

    @cached_property
    def tx_slices(self):
        """Row slice of each TX's antenna block in H / T."""
        b = np.concatenate(([0], np.cumsum(self.M)))
        return tuple(slice(int(b[i]), int(b[i + 1])) for i in range(self.K))

    @cached_property
    def rx_slices(self):
        """Column slice of each RX's antenna block in H."""
        b = np.concatenate(([0], np.cumsum(self.N)))
        return tuple(slice(int(b[i]), int(b[i + 1])) for i in range(self.K))

    @cached_property
    def stream_slices(self):
        """Column slice of each user's streams in T / G aggregate."""
        b = np.concatenate(([0], np.cumsum(self.d)))
        return tuple(slice(int(b[i]), int(b[i + 1])) for i in range(self.K))

    @property
    def uniform_dims(self):
        """True when every user has the same (N_k, d_k); enables batched updates."""
        return len(set(self.N)) == 1 and len(set(self.d)) == 1

    def expand_link_table(self, table):
        """Expand a K x K per-link table to (M_tot, N_tot), one value per channel entry."""
        table = np.asarray(table, dtype=float)
        if table.shape != (self.K, self.K):
            raise ConfigError(f"per-link table must be {self.K}x{self.K}")
        # rows: TX k antennas, cols: RX i antennas -> value table[i, k]
        out = np.repeat(np.repeat(table.T, self.M, axis=0), self.N, axis=1)
        return out


def build_config(raw):
    """Validate a raw parameter bundle (mapping) into a NetworkConfig.

    Keys: K; M, N, d (scalar broadcast or per-TX lists); rho2 (scalar or KxK);
    P (scalar or per-TX list).
    """
    try:
        K = int(raw["K"])
    except KeyError as e:
        raise ConfigError("missing network parameter K") from e
    if K < 1:
        raise ConfigError("K must be >= 1")
    M = _as_tuple(raw.get("M", 1), K, "M")
    N = _as_tuple(raw.get("N", 1), K, "N")
    d = _as_tuple(raw.get("d", 1), K, "d")
    rho2 = raw.get("rho2", 1.0)
    if np.isscalar(rho2):
        rho2 = np.full((K, K), float(rho2))
    P = _as_tuple(raw.get("P", 1.0), K, "P", kind=float)
    return NetworkConfig(K=K, M=M, N=N, d=d, rho2=np.asarray(rho2, float), P=P)


@dataclass(frozen=True)
class ChannelRealization:
    """One draw of the aggregate channel H (M_tot x N_tot, rows=TX antennas)."""

    H: np.ndarray
    config: NetworkConfig = field(repr=False)

    def __post_init__(self):
        cfg = self.config
        if self.H.shape != (cfg.M_tot, cfg.N_tot):
            raise ConfigError(
                f"H must be {cfg.M_tot}x{cfg.N_tot}, got {self.H.shape}"
            )
        object.__setattr__(self, "H", _freeze(self.H))

    def rx_block(self, i):
        """H_i: the M_tot x N_i column block seen by RX i."""
        return self.H[:, self.config.rx_slices[i]]


def draw_channel(config, rng):
    """Draw H with independent CN(0, rho2[i, k]) entries per (RX i, TX k) block."""
    scale = np.sqrt(config.expand_link_table(config.rho2) / 2.0)
    shape = (config.M_tot, config.N_tot)
    H = scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    return ChannelRealization(H=H, config=config)


@dataclass(frozen=True)
class CsiQuality:
    """Per-TX CSI error std tables, one (M_tot, N_tot) array per TX.

    sigma[j][p, q] is the error std of channel entry (p, q) as seen by TX j.
    TXs are ordered by increasing quality: sigma[j] <= sigma[k] entrywise
    whenever j > k.
    """

    sigma: tuple
    config: NetworkConfig = field(repr=False)

    def __post_init__(self):
        cfg = self.config
        if len(self.sigma) != cfg.K:
            raise ConfigError(f"need one sigma table per TX (K={cfg.K})")
        tabs = []
        for j, tab in enumerate(self.sigma):
            tab = np.asarray(tab, dtype=float)
            if tab.shape != (cfg.M_tot, cfg.N_tot):
                raise ConfigError(
                    f"sigma table for TX {j} must be {cfg.M_tot}x{cfg.N_tot}"
                )
            if np.any(tab < 0) or np.any(tab >= 1):
                raise ConfigError(f"sigma entries of TX {j} must lie in [0, 1)")
            tabs.append(_freeze(tab))
        for j in range(1, cfg.K):
            if np.any(tabs[j] > tabs[j - 1]):
                raise ConfigError(
                    f"hierarchical ordering violated: TX {j} has worse CSI "
                    f"than TX {j - 1} on some entry"
                )
        object.__setattr__(self, "sigma", tuple(tabs))

    @classmethod
    def from_block_variances(cls, config, sigma2_per_tx):
        """Build from per-TX sigma^2 specs, each a scalar or KxK (RX i, TX k) table."""
        tabs = []
        for s2 in sigma2_per_tx:
            if np.isscalar(s2):
                s2 = np.full((config.K, config.K), float(s2))
            tabs.append(np.sqrt(config.expand_link_table(s2)))
        return cls(sigma=tuple(tabs), config=config)

    @classmethod
    def perfect(cls, config):
        zero = np.zeros((config.M_tot, config.N_tot))
        return cls(sigma=tuple(zero.copy() for _ in range(config.K)), config=config)


@dataclass(frozen=True)
class CsiSet:
    """The K per-TX channel estimates with their nested access structure."""

    estimates: tuple
    quality: CsiQuality
    config: NetworkConfig = field(repr=False)

    def __post_init__(self):
        cfg = self.config
        if len(self.estimates) != cfg.K:
            raise ConfigError(f"need one estimate per TX (K={cfg.K})")
        ests = []
        for j, est in enumerate(self.estimates):
            if est.shape != (cfg.M_tot, cfg.N_tot):
                raise ConfigError(f"estimate of TX {j} has wrong shape")
            ests.append(_freeze(est))
        object.__setattr__(self, "estimates", tuple(ests))

    def estimate(self, j):
        """The estimate TX j bases its own decision on."""
        return self.estimates[j]

    def sigma(self, j):
        return self.quality.sigma[j]

    def view(self, j):
        """Nested access of TX j: the estimates of TXs 0..j, nothing beyond."""
        return self.estimates[: j + 1]


def draw_csi(config, channel, quality, rng):
    """Generate the per-TX estimates hat_H^(j) = sqrt(1-sigma^2) H + sigma * Delta_j.

    Delta_j entries are i.i.d. standard complex Gaussian, drawn independently
    per TX. sigma = 0 reproduces H bitwise.
    """
    H = channel.H
    shape = H.shape
    ests = []
    for j in range(config.K):
        sig = quality.sigma[j]
        delta = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
        ests.append(np.sqrt(1.0 - sig**2) * H + sig * delta)
    return CsiSet(estimates=tuple(ests), quality=quality, config=config)
