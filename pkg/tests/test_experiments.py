import math

import numpy as np
import pytest

from mcml.errors import ConfigError
from mcml.estimators import IsremcConfig
from mcml.experiments import (ExperimentConfig, clt_experiment,
                              fit_replications, format_summary,
                              generate_lattice, read_lattice,
                              read_records_csv, run_one, summarize,
                              unbiasedness_experiment, write_lattice,
                              write_records_csv)
from mcml.model import AutologisticLattice
from mcml.optimizer import NewtonConfig


@pytest.fixture(scope="module")
def small_lattice():
    return generate_lattice(4, (-1.0, 0.75), 300, 42)


def small_config(**kw):
    base = dict(d=4, algo="benchmark", start="zero", reps=3, master_seed=7,
                burn_in=50, samples=300, record_timing=False)
    base.update(kw)
    return ExperimentConfig(**base)


class TestLatticeIO:
    def test_round_trip(self, tmp_path, small_lattice):
        p = tmp_path / "lat.txt"
        write_lattice(p, small_lattice)
        assert np.array_equal(read_lattice(p), small_lattice)

    def test_file_format(self, tmp_path, small_lattice):
        p = tmp_path / "lat.txt"
        write_lattice(p, small_lattice)
        lines = p.read_text().splitlines()
        assert lines[0] == "d=4"
        assert len(lines) == 5
        assert all(len(row) == 4 and set(row) <= {"0", "1"} for row in lines[1:])

    def test_malformed_header(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_text("n=4\n0000\n")
        with pytest.raises(ConfigError):
            read_lattice(p)

    def test_malformed_row(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_text("d=2\n01\n0x\n")
        with pytest.raises(ConfigError):
            read_lattice(p)

    def test_truncated_file(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_text("d=3\n010\n")
        with pytest.raises(ConfigError):
            read_lattice(p)

    def test_non_binary_refused(self, tmp_path):
        with pytest.raises(ConfigError):
            write_lattice(tmp_path / "x.txt", np.full((3, 3), 2))


class TestGenerateLattice:
    def test_deterministic(self):
        a = generate_lattice(5, (-1.0, 0.75), 200, 9)
        b = generate_lattice(5, (-1.0, 0.75), 200, 9)
        assert np.array_equal(a, b)

    def test_fair_sites_statistics(self):
        # theta = 0: every site is an independent fair coin at any sweep
        d = 24
        model = AutologisticLattice(d)
        y = generate_lattice(d, (0.0, 0.0), 50, 3)
        t = model.t(y)
        se_ones = math.sqrt(d * d * 0.25)
        assert abs(t[0] - 0.5 * d * d) < 4 * se_ones
        n_edges = 2 * d * (d - 1)
        se_pairs = math.sqrt(n_edges * 0.25 * 0.75)  # crude edge-independence bound
        assert abs(t[1] - 0.25 * n_edges) < 5 * se_pairs

    def test_d10_band_against_exact_moments(self):
        # long run lands inside the exact 99% band; sanity, not proof
        d = 10
        model = AutologisticLattice(d)
        theta = np.array([-1.21, 0.75])
        y = generate_lattice(d, theta, 100000, 4)
        t = model.t(y)
        mean = model.exact_mean(theta)
        sd = np.sqrt(np.diag(model.exact_cov(theta)))
        assert np.all(np.abs(t - mean) < 2.576 * sd + 1e-9)

    def test_sweeps_validated(self):
        with pytest.raises(ConfigError):
            generate_lattice(3, (0.0, 0.0), 0, 1)


class TestRecordsCsv:
    def test_schema_and_round_trip(self, tmp_path, small_lattice):
        records = fit_replications(small_config(), small_lattice)
        p = tmp_path / "runs.csv"
        write_records_csv(p, records)
        text = p.read_text().splitlines()
        assert text[0] == ("rep,seed,theta0_hat,theta1_hat,exact_loglik,"
                           "iterations,converged,wall_ms")
        assert len(text) == 4
        back = read_records_csv(p)
        for a, b in zip(records, back):
            assert a.row() == b.row()
            assert a.theta0_hat == b.theta0_hat  # exact float round trip
            assert a.exact_loglik == b.exact_loglik

    def test_bad_header_refused(self, tmp_path):
        p = tmp_path / "runs.csv"
        p.write_text("rep,seed\n0,1\n")
        with pytest.raises(ConfigError):
            read_records_csv(p)

    def test_summary_recomputable_from_csv(self, tmp_path, small_lattice):
        records = fit_replications(small_config(), small_lattice)
        p = tmp_path / "runs.csv"
        write_records_csv(p, records)
        direct = format_summary(summarize(records))
        reread = format_summary(summarize(read_records_csv(p)))
        assert direct == reread

    def test_timing_flag(self, small_lattice):
        off = fit_replications(small_config(), small_lattice)
        assert all(r.wall_ms == 0 for r in off)
        on = fit_replications(small_config(record_timing=True), small_lattice)
        assert any(r.wall_ms >= 0 for r in on)
        # the timed and untimed runs agree on everything but the clock
        for a, b in zip(on, off):
            assert a.theta0_hat == b.theta0_hat
            assert a.seed == b.seed


class TestReplicationDeterminism:
    def test_rerun_byte_identical(self, tmp_path, small_lattice):
        pa, pb = tmp_path / "a.csv", tmp_path / "b.csv"
        write_records_csv(pa, fit_replications(small_config(), small_lattice))
        write_records_csv(pb, fit_replications(small_config(), small_lattice))
        assert pa.read_bytes() == pb.read_bytes()

    def test_worker_count_invariant(self, tmp_path, small_lattice):
        pa, pb = tmp_path / "w1.csv", tmp_path / "w2.csv"
        write_records_csv(pa, fit_replications(small_config(reps=4), small_lattice))
        write_records_csv(pb, fit_replications(small_config(reps=4, workers=2),
                                               small_lattice))
        assert pa.read_bytes() == pb.read_bytes()

    def test_run_one_matches_replication_row(self, small_lattice):
        cfg = small_config()
        records = fit_replications(cfg, small_lattice)
        solo = run_one(cfg, small_lattice, 1)
        assert solo.row() == records[1].row()

    def test_records_in_rep_order(self, small_lattice):
        records = fit_replications(small_config(reps=5), small_lattice)
        assert [r.rep for r in records] == list(range(5))
        assert len({r.seed for r in records}) == 5


class TestConfigValidation:
    def test_model_exclusivity(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(d=4, n=5)
        with pytest.raises(ConfigError):
            ExperimentConfig()

    def test_adaptive_needs_lattice(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(d=4, algo="adaptive", suffstat_only=True)

    def test_mpl_start_needs_lattice(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(d=4, start="mpl", suffstat_only=True)

    def test_unknown_algo(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(d=4, algo="anneal")

    def test_bad_start_shape(self, small_lattice):
        cfg = small_config(start=(1.0, 2.0, 3.0))
        with pytest.raises(ConfigError):
            fit_replications(cfg, small_lattice)


class TestAlgoKinds:
    def test_exact_and_mpl_through_harness(self, small_lattice):
        for algo in ("exact", "mpl"):
            recs = fit_replications(
                ExperimentConfig(d=4, algo=algo, reps=2, master_seed=1,
                                 record_timing=False), small_lattice)
            assert all(r.converged for r in recs)
            assert recs[0].theta0_hat == recs[1].theta0_hat

    def test_adaptive_through_harness(self, small_lattice):
        cfg = ExperimentConfig(d=4, algo="adaptive", start="mpl", reps=2,
                               master_seed=3, iters=4,
                               isremc=IsremcConfig(100, 1, 10, 90),
                               record_timing=False)
        recs = fit_replications(cfg, small_lattice)
        assert all(r.converged for r in recs)
        assert recs[0].theta0_hat != recs[1].theta0_hat  # distinct streams

    def test_suffstat_only_benchmark(self):
        cfg = ExperimentConfig(d=4, algo="benchmark", start="zero", reps=1,
                               master_seed=1, burn_in=50, samples=500,
                               suffstat_only=True, record_timing=False)
        recs = fit_replications(cfg, np.array([8.0, 8.0]))
        assert len(recs) == 1
        assert np.isfinite(recs[0].theta0_hat)


class TestPipelines:
    def test_unbiasedness_experiment(self, tmp_path):
        results = unbiasedness_experiment(
            tmp_path / "unbias.csv", 11, d=2, theta=(-1.0, 0.75),
            psis=((-0.8, 0.55),), configs=(IsremcConfig(10, 1, 2, 8),
                                           IsremcConfig(5, 2, 0, 4)),
            reps=800)
        assert len(results) == 2
        for res in results:
            assert abs(res["z"]) < 3.0
        lines = (tmp_path / "unbias.csv").read_text().splitlines()
        assert lines[0] == "psi0,psi1,l,r,s,n,rep,c_hat"
        assert len(lines) == 1 + 2 * 800

    def test_unbiasedness_deterministic(self, tmp_path):
        kw = dict(d=2, theta=(-1.0, 0.75), psis=((-0.5, 0.3),),
                  configs=(IsremcConfig(5, 1, 0, 4),), reps=50)
        unbiasedness_experiment(tmp_path / "a.csv", 13, **kw)
        unbiasedness_experiment(tmp_path / "b.csv", 13, **kw)
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_clt_experiment(self, tmp_path):
        records, report = clt_experiment(tmp_path / "clt.csv", 21, n=20,
                                         y_obs=14, m=2000, reps=300)
        assert len(records) == 300
        assert report.n_reps == 300
        assert report.valid
        assert report.rel_err < 0.25
        lines = (tmp_path / "clt.csv").read_text().splitlines()
        assert len(lines) == 301

    def test_clt_experiment_deterministic(self, tmp_path):
        kw = dict(n=10, y_obs=6, m=400, reps=60)
        clt_experiment(tmp_path / "a.csv", 5, **kw)
        clt_experiment(tmp_path / "b.csv", 5, **kw)
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
