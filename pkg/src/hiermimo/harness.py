"""Monte-Carlo experiment driver: seeded trials, SNR sweeps, CSV output.

Every trial draws one (channel, CSI-set) pair from a stream seeded by
(base_seed, trial_index) and scores all schemes at all SNR points on it
(common random numbers), so per-trial comparisons are paired and the whole
sweep is reproducible byte-for-byte from (config file, seed) regardless of
execution order.

Config files are flat INI text with sections [network], [quality] and
[experiment]; see `parse_config_file`.
"""

import configparser
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, InconsistencyError, PowerViolationError
from .hierarchy import Scheme, precode, precode_all
from .metrics import evaluate_rates, power_ratios
from .model import CsiQuality, NetworkConfig, build_config, draw_channel, draw_csi
from .wmmse import SolverOptions

CSV_HEADER = "snr_db,scheme,mean_sum_rate_bits,std_err,trials,flagged"
TRIAL_HEADER = "trial,snr_db,scheme,sum_rate_bits,max_power_ratio,flagged"


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything needed to reproduce one sweep."""

    network: NetworkConfig
    quality: CsiQuality
    snr_grid_db: tuple
    trials: int
    schemes: tuple
    base_seed: int
    opts: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not self.snr_grid_db:
            raise ConfigError("snr grid must be nonempty")
        if not self.schemes:
            raise ConfigError("schemes must be nonempty")


@dataclass(frozen=True)
class TrialRecord:
    trial: int
    snr_db: float
    scheme: Scheme
    sum_rate_bits: float   # nan when flagged
    max_power_ratio: float
    flagged: bool


@dataclass(frozen=True)
class ResultRow:
    snr_db: float
    scheme: Scheme
    mean_sum_rate_bits: float
    std_err: float
    trials: int
    flagged: int


@dataclass(frozen=True)
class ResultTable:
    rows: tuple

    def to_csv(self):
        lines = [CSV_HEADER]
        for r in self.rows:
            lines.append(
                f"{fmt(r.snr_db)},{r.scheme.value},{fmt(r.mean_sum_rate_bits)},"
                f"{fmt(r.std_err)},{r.trials},{r.flagged}"
            )
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text):
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0] != CSV_HEADER:
            raise ConfigError("unrecognized results CSV header")
        rows = []
        for ln in lines[1:]:
            snr, scheme, mean, err, n, fl = ln.split(",")
            rows.append(
                ResultRow(
                    snr_db=float(snr),
                    scheme=Scheme(scheme),
                    mean_sum_rate_bits=float(mean),
                    std_err=float(err),
                    trials=int(n),
                    flagged=int(fl),
                )
            )
        return cls(rows=tuple(rows))


def fmt(x):
    """Shortest exact decimal representation; round-trips through float()."""
    return repr(float(x))


def config_at_snr(network, snr_db):
    """Per-TX budgets P_j = 10^(snr/10) (unit noise), identical at every TX."""
    p = 10.0 ** (snr_db / 10.0)
    return replace(network, P=tuple(p for _ in range(network.K)))


def trial_rng(base_seed, trial_index):
    return np.random.default_rng(np.random.SeedSequence((base_seed, trial_index)))


def run_trial(spec, snr_db, trial_index):
    """Score every scheme of the spec on one seeded trial at one SNR.

    Returns {scheme: TrialRecord}. The (H, CSI) draw depends only on
    (base_seed, trial_index), so all SNR points of a trial share it. Solver
    failures flag the scheme's record instead of raising.
    """
    rng = trial_rng(spec.base_seed, trial_index)
    channel = draw_channel(spec.network, rng)
    csi = draw_csi(spec.network, channel, spec.quality, rng)
    cfg = config_at_snr(spec.network, snr_db)
    out = {}
    try:
        effs = precode_all(spec.schemes, channel, csi, cfg, spec.opts)
    except (np.linalg.LinAlgError, FloatingPointError):
        effs = None  # per-scheme fallback below isolates the failure
    for scheme in spec.schemes:
        try:
            eff = effs[scheme] if effs is not None else precode(
                scheme, channel, csi, cfg, spec.opts
            )
            ratio = float(power_ratios(cfg, eff.T).max())
            if eff.flagged:
                raise InconsistencyError(eff.note or "flagged by the scheme runner")
            rate = evaluate_rates(cfg, channel, eff.T, power_tol=1e-6).total
            rec = TrialRecord(trial_index, snr_db, scheme, rate, ratio, False)
        except (np.linalg.LinAlgError, FloatingPointError,
                PowerViolationError, InconsistencyError):
            rec = TrialRecord(trial_index, snr_db, scheme, float("nan"), float("nan"), True)
        out[scheme] = rec
    return out


def run_sweep(spec, collect_trials=False, progress=None):
    """Iterate trials x SNR grid and aggregate per (snr, scheme).

    Returns (ResultTable, trial_records); trial_records is None unless
    collect_trials. Aggregation is order-insensitive (records are reduced in
    (snr, scheme, trial) order whatever the execution order), and a fixed
    base_seed reproduces every byte of the outputs.
    """
    records = []
    for t in range(spec.trials):
        for snr_db in spec.snr_grid_db:
            records.extend(run_trial(spec, snr_db, t).values())
        if progress is not None:
            progress(t + 1, spec.trials)
    table = aggregate(records)
    return table, (records if collect_trials else None)


def aggregate(records):
    """Mean and standard error per (snr, scheme); flagged trials excluded."""
    keys = sorted(
        {(r.snr_db, r.scheme) for r in records},
        key=lambda k: (k[0], k[1].value),
    )
    rows = []
    for snr_db, scheme in keys:
        vals = sorted(
            (r.trial, r.sum_rate_bits)
            for r in records
            if r.snr_db == snr_db and r.scheme == scheme and not r.flagged
        )
        flagged = sum(
            1 for r in records if r.snr_db == snr_db and r.scheme == scheme and r.flagged
        )
        x = np.array([v for _, v in vals])
        n = len(x)
        mean = float(x.mean()) if n else 0.0
        err = float(x.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        rows.append(ResultRow(snr_db, scheme, mean, err, n, flagged))
    return ResultTable(rows=tuple(rows))


def trials_to_csv(records):
    lines = [TRIAL_HEADER]
    for r in sorted(records, key=lambda r: (r.trial, r.snr_db, r.scheme.value)):
        lines.append(
            f"{r.trial},{fmt(r.snr_db)},{r.scheme.value},{fmt(r.sum_rate_bits)},"
            f"{fmt(r.max_power_ratio)},{int(r.flagged)}"
        )
    return "\n".join(lines) + "\n"


PLOT_TEMPLATE = """\
#!/usr/bin/env python3
# Renders mean sum rate vs per-TX SNR, one curve per scheme.
import csv
from collections import defaultdict

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

CSV_PATH = {csv_path!r}

curves = defaultdict(list)
with open(CSV_PATH) as fh:
    for row in csv.DictReader(fh):
        curves[row["scheme"]].append(
            (float(row["snr_db"]), float(row["mean_sum_rate_bits"]))
        )

plt.figure(figsize=(7, 5))
for scheme in sorted(curves):
    pts = sorted(curves[scheme])
    plt.plot([p[0] for p in pts], [p[1] for p in pts], "-o", label=scheme)
plt.xlabel("per-TX SNR [dB]")
plt.ylabel("average sum rate [bits/channel use]")
plt.grid(True)
plt.legend()
plt.tight_layout()
plt.savefig({png_path!r}, dpi=150)
print("wrote", {png_path!r})
"""


def emit_outputs(table, csv_path, plot_path=None, records=None, dump_path=None):
    """Write the results CSV, optionally a plot script and the per-trial dump."""
    try:
        with open(csv_path, "w") as fh:
            fh.write(table.to_csv())
        if plot_path is not None:
            png = str(csv_path) + ".png"
            with open(plot_path, "w") as fh:
                fh.write(PLOT_TEMPLATE.format(csv_path=str(csv_path), png_path=png))
        if dump_path is not None:
            if records is None:
                raise InconsistencyError("per-trial dump requested but not collected")
            with open(dump_path, "w") as fh:
                fh.write(trials_to_csv(records))
    except OSError as e:
        raise OSError(f"{e.strerror or e}: writing experiment outputs") from e


# ---------------------------------------------------------------------------
# config file


def _parse_floats(text):
    return [float(tok) for tok in text.replace(",", " ").split()]


def _parse_ints(text):
    vals = _parse_floats(text)
    out = [int(v) for v in vals]
    if any(i != v for i, v in zip(out, vals)):
        raise ConfigError(f"expected integers, got {text!r}")
    return out


def parse_snr_grid(text):
    """Either 'start:stop:step' (inclusive stop) or a comma/space list in dB."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"SNR range must be start:stop:step, got {text!r}")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise ConfigError("SNR step must be > 0")
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        if n < 1:
            raise ConfigError(f"empty SNR range {text!r}")
        return tuple(start + i * step for i in range(n))
    return tuple(_parse_floats(text))


def parse_schemes(text):
    out = []
    for tok in text.replace(",", " ").split():
        try:
            out.append(Scheme(tok))
        except ValueError:
            valid = ", ".join(s.value for s in Scheme)
            raise ConfigError(f"unknown scheme {tok!r} (valid: {valid})") from None
    if not out:
        raise ConfigError("no schemes given")
    return tuple(out)


def _grid_or_table(text, K, what):
    vals = _parse_floats(text)
    if len(vals) == 1:
        return vals[0]
    if len(vals) == K * K:
        return np.array(vals).reshape(K, K)
    raise ConfigError(f"{what} must be a scalar or {K * K} row-major values")


def parse_config_file(path):
    """Read network + quality (+ experiment defaults) from an INI file.

    [network]   K, M, N, d (scalar or per-TX lists), rho2 (scalar or KxK
                row-major, RX rows x TX cols), P (scalar or per-TX; overridden
                by the SNR grid when one is supplied)
    [quality]   sigma2_tx<j> for j = 1..K, each a scalar or KxK row-major
                table of error variances per (RX i, TX k) link
    [experiment] snr_db, trials, schemes, seed, max_iterations, tolerance,
                per_tx_normalize_each_round (all optional; CLI flags win)
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError:
        raise
    except configparser.Error as e:
        raise ConfigError(f"malformed config file {path}: {e}") from e
    if "network" not in parser:
        raise ConfigError(f"{path}: missing [network] section")
    net = parser["network"]
    try:
        K = int(net["K"])
    except KeyError:
        raise ConfigError(f"{path}: [network] needs K") from None
    raw = {"K": K}
    for key in ("M", "N", "d"):
        if key in net:
            ints = _parse_ints(net[key])
            raw[key] = ints[0] if len(ints) == 1 else ints
    if "rho2" in net:
        raw["rho2"] = _grid_or_table(net["rho2"], K, "rho2")
    if "P" in net:
        vals = _parse_floats(net["P"])
        raw["P"] = vals[0] if len(vals) == 1 else vals
    network = build_config(raw)

    if "quality" not in parser:
        raise ConfigError(f"{path}: missing [quality] section")
    qual = parser["quality"]
    sigma2 = []
    for j in range(1, K + 1):
        key = f"sigma2_tx{j}"
        if key not in qual:
            raise ConfigError(f"{path}: [quality] needs {key}")
        sigma2.append(_grid_or_table(qual[key], K, key))
    quality = CsiQuality.from_block_variances(network, sigma2)

    exp = parser["experiment"] if "experiment" in parser else {}
    defaults = {
        "snr_grid_db": parse_snr_grid(exp["snr_db"]) if "snr_db" in exp else None,
        "trials": int(exp["trials"]) if "trials" in exp else None,
        "schemes": parse_schemes(exp["schemes"]) if "schemes" in exp else None,
        "seed": int(exp["seed"]) if "seed" in exp else None,
    }
    opt_kwargs = {}
    if "max_iterations" in exp:
        opt_kwargs["max_iterations"] = int(exp["max_iterations"])
    if "tolerance" in exp:
        opt_kwargs["tolerance"] = float(exp["tolerance"])
    if "per_tx_normalize_each_round" in exp:
        opt_kwargs["per_tx_normalize_each_round"] = exp.getboolean(
            "per_tx_normalize_each_round"
        )
    return network, quality, defaults, SolverOptions(**opt_kwargs)
