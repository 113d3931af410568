import numpy as np
import pytest

from hiermimo import (
    ConfigError,
    CsiQuality,
    ExperimentSpec,
    ResultTable,
    Scheme,
)
from hiermimo.harness import (
    CSV_HEADER,
    config_at_snr,
    emit_outputs,
    fmt,
    parse_config_file,
    parse_schemes,
    parse_snr_grid,
    run_sweep,
    run_trial,
    trials_to_csv,
)

CONFIG_TEXT = """\
[network]
K = 4
M = 1
N = 1
d = 1
rho2 = 1.0
P = 1.0

[quality]
sigma2_tx1 = 0.25
sigma2_tx2 = 0.25
sigma2_tx3 = 0.0
sigma2_tx4 = 0.0

[experiment]
snr_db = 0:30:5
trials = 1000
schemes = perfect,naive,hier-bisect,hier-clip
seed = 42
"""


@pytest.fixture
def spec4(cfg4, quality4):
    return ExperimentSpec(
        network=cfg4,
        quality=quality4,
        snr_grid_db=(0.0, 10.0),
        trials=3,
        schemes=tuple(Scheme),
        base_seed=7,
    )


class TestParsing:
    def test_snr_grid_range(self):
        assert parse_snr_grid("0:30:5") == (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0)
        assert parse_snr_grid("1,3,5") == (1.0, 3.0, 5.0)
        with pytest.raises(ConfigError):
            parse_snr_grid("0:30:5:1")
        with pytest.raises(ConfigError):
            parse_snr_grid("0:30:-5")

    def test_schemes(self):
        assert parse_schemes("perfect,naive") == (
            Scheme.PERFECT_CSIT,
            Scheme.NAIVE_DISTRIBUTED,
        )
        with pytest.raises(ConfigError):
            parse_schemes("perfect,wrong")

    def test_config_file_roundtrip(self, tmp_path):
        path = tmp_path / "exp.ini"
        path.write_text(CONFIG_TEXT)
        network, quality, defaults, opts = parse_config_file(path)
        assert network.K == 4
        assert network.M_tot == 4
        assert np.all(quality.sigma[0] == 0.5)
        assert np.all(quality.sigma[3] == 0.0)
        assert defaults["snr_grid_db"] == (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0)
        assert defaults["trials"] == 1000
        assert defaults["seed"] == 42
        assert len(defaults["schemes"]) == 4

    def test_config_file_missing_quality_key(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text(CONFIG_TEXT.replace("sigma2_tx4 = 0.0\n", ""))
        with pytest.raises(ConfigError):
            parse_config_file(path)

    def test_config_file_ordering_violation(self, tmp_path):
        path = tmp_path / "bad2.ini"
        path.write_text(CONFIG_TEXT.replace("sigma2_tx3 = 0.0", "sigma2_tx3 = 0.5"))
        with pytest.raises(ConfigError):
            parse_config_file(path)

    def test_config_file_block_table(self, tmp_path):
        table = ", ".join(["0.25"] * 16)
        text = CONFIG_TEXT.replace("sigma2_tx1 = 0.25", f"sigma2_tx1 = {table}")
        path = tmp_path / "tab.ini"
        path.write_text(text)
        _, quality, _, _ = parse_config_file(path)
        assert np.all(quality.sigma[0] == 0.5)

    def test_config_at_snr(self, cfg4):
        cfg = config_at_snr(cfg4, 20.0)
        assert cfg.P == (100.0,) * 4
        assert cfg.rho2 is cfg4.rho2


class TestRunTrial:
    def test_bitwise_determinism(self, spec4):
        a = run_trial(spec4, 10.0, 1)
        b = run_trial(spec4, 10.0, 1)
        for s in spec4.schemes:
            assert a[s].sum_rate_bits == b[s].sum_rate_bits
            assert a[s].max_power_ratio == b[s].max_power_ratio

    def test_zero_sigma_equal_rates(self, cfg4):
        spec = ExperimentSpec(
            network=cfg4,
            quality=CsiQuality.perfect(cfg4),
            snr_grid_db=(10.0,),
            trials=1,
            schemes=tuple(Scheme),
            base_seed=3,
        )
        recs = run_trial(spec, 10.0, 0)
        rates = [r.sum_rate_bits for r in recs.values()]
        assert max(rates) - min(rates) <= 1e-8

    def test_smoke_all_schemes_finite(self, spec4):
        recs = run_trial(spec4, 0.0, 0)
        for r in recs.values():
            assert not r.flagged
            assert np.isfinite(r.sum_rate_bits)
            assert r.sum_rate_bits >= 0.0
            assert r.max_power_ratio <= 1 + 1e-9


class TestRunSweep:
    def test_table_shape_and_order(self, spec4):
        table, _ = run_sweep(spec4)
        assert len(table.rows) == 2 * 4
        keys = [(r.snr_db, r.scheme.value) for r in table.rows]
        assert keys == sorted(keys)

    def test_single_trial_zero_stderr(self, cfg4, quality4):
        spec = ExperimentSpec(
            network=cfg4,
            quality=quality4,
            snr_grid_db=(5.0,),
            trials=1,
            schemes=(Scheme.NAIVE_DISTRIBUTED,),
            base_seed=11,
        )
        table, _ = run_sweep(spec)
        assert len(table.rows) == 1
        assert table.rows[0].std_err == 0.0
        assert table.rows[0].trials == 1
        assert table.rows[0].flagged == 0

    def test_doubling_trials_replays_prefix(self, cfg4, quality4):
        def records(n):
            spec = ExperimentSpec(
                network=cfg4,
                quality=quality4,
                snr_grid_db=(10.0,),
                trials=n,
                schemes=(Scheme.HIER_CLIPPING,),
                base_seed=5,
            )
            _, recs = run_sweep(spec, collect_trials=True)
            return recs

        small = records(2)
        big = records(4)
        for a, b in zip(small, big[: len(small)]):
            assert a == b

    def test_aggregation_matches_reference(self, spec4):
        table, recs = run_sweep(spec4, collect_trials=True)
        for row in table.rows:
            vals = [
                r.sum_rate_bits
                for r in recs
                if r.snr_db == row.snr_db and r.scheme == row.scheme and not r.flagged
            ]
            mean = sum(vals) / len(vals)
            var = sum((v - mean) ** 2 for v in vals) / (len(vals) - 1)
            err = np.sqrt(var / len(vals))
            assert abs(mean - row.mean_sum_rate_bits) <= 1e-12 * max(1, abs(mean))
            assert abs(err - row.std_err) <= 1e-12 * max(1, err)
            assert row.trials == len(vals)


class TestOutputs:
    def test_empty_table_header_only(self, tmp_path):
        path = tmp_path / "empty.csv"
        emit_outputs(ResultTable(rows=()), path)
        assert path.read_text() == CSV_HEADER + "\n"

    def test_csv_roundtrip_exact(self, spec4, tmp_path):
        table, _ = run_sweep(spec4)
        text = table.to_csv()
        back = ResultTable.from_csv(text)
        assert back == table

    def test_trials_csv_schema(self, spec4):
        _, recs = run_sweep(spec4, collect_trials=True)
        text = trials_to_csv(recs)
        lines = text.splitlines()
        assert lines[0] == "trial,snr_db,scheme,sum_rate_bits,max_power_ratio,flagged"
        assert len(lines) == 1 + len(recs)

    def test_plot_script_compiles(self, spec4, tmp_path):
        table, _ = run_sweep(spec4)
        csv_path = tmp_path / "res.csv"
        plot_path = tmp_path / "plot.py"
        emit_outputs(table, csv_path, plot_path=plot_path)
        compile(plot_path.read_text(), str(plot_path), "exec")

    def test_io_error_has_path_context(self, spec4, tmp_path):
        table, _ = run_sweep(spec4)
        with pytest.raises(OSError):
            emit_outputs(table, tmp_path / "missing_dir" / "res.csv")

    def test_fmt_roundtrip(self):
        for x in (0.0, 1.0, np.pi, 1e-17, 12345.6789012345678, 17.299999999999997):
            assert float(fmt(x)) == float(x)


class TestByteDeterminism:
    def test_two_sweeps_identical_csv(self, cfg4, quality4):
        def run():
            spec = ExperimentSpec(
                network=cfg4,
                quality=quality4,
                snr_grid_db=(0.0, 20.0),
                trials=2,
                schemes=tuple(Scheme),
                base_seed=42,
            )
            table, recs = run_sweep(spec, collect_trials=True)
            return table.to_csv(), trials_to_csv(recs)

        a_csv, a_dump = run()
        b_csv, b_dump = run()
        assert a_csv == b_csv
        assert a_dump == b_dump
