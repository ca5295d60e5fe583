import math
import re

import numpy as np
import pytest

from mcml.cli import main
from mcml.experiments import (format_summary, read_lattice, read_records_csv,
                              summarize, write_lattice)
from mcml.model import AutologisticLattice
from mcml.optimizer import exact_mle


@pytest.fixture(scope="module")
def lattice_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "lat4.txt"
    rc = main(["generate", "--d=4", "--theta=-1.0,0.75", "--sweeps=200",
               "--seed=5", f"--out={path}"])
    assert rc == 0
    return path


class TestGenerate:
    def test_writes_readable_lattice(self, tmp_path, capsys):
        out = tmp_path / "lat.txt"
        assert main(["generate", "--d=6", "--sweeps=50", "--seed=2",
                     f"--out={out}"]) == 0
        y = read_lattice(out)
        assert y.shape == (6, 6)
        printed = capsys.readouterr().out
        m = re.search(r"suffstat: ones=(\d+) pairs=(\d+)", printed)
        t = AutologisticLattice(6).t(y)
        assert (int(m.group(1)), int(m.group(2))) == (t[0], t[1])

    def test_seed_reproducible(self, tmp_path):
        a, b, c = (tmp_path / n for n in ("a.txt", "b.txt", "c.txt"))
        for out in (a, b):
            main(["generate", "--d=5", "--sweeps=40", "--seed=7", f"--out={out}"])
        main(["generate", "--d=5", "--sweeps=40", "--seed=8", f"--out={c}"])
        assert a.read_bytes() == b.read_bytes()
        assert a.read_bytes() != c.read_bytes()


class TestFit:
    def fit_args(self, lattice_file, out, *extra):
        return ["fit", f"--data={lattice_file}", "--burnin=30", "--samples=300",
                "--seed=0", "--no-timing", f"--out={out}", *extra]

    def test_benchmark_csv_and_summary(self, tmp_path, lattice_file, capsys):
        out = tmp_path / "fit.csv"
        rc = main(self.fit_args(lattice_file, out, "--reps=2", "--no-plots"))
        assert rc == 0
        records = read_records_csv(out)
        assert len(records) == 2
        assert all(r.wall_ms == 0 for r in records)
        printed = capsys.readouterr().out
        assert printed == (f"wrote {out}\n"
                           + format_summary(summarize(records)) + "\n")

    def test_figures_written_by_default(self, tmp_path, lattice_file):
        out = tmp_path / "fit.csv"
        assert main(self.fit_args(lattice_file, out)) == 0
        assert (tmp_path / "fit_gaps.png").exists()
        assert (tmp_path / "fit_theta.png").exists()

    def test_no_plots_suppresses_figures(self, tmp_path, lattice_file):
        out = tmp_path / "fit.csv"
        assert main(self.fit_args(lattice_file, out, "--no-plots")) == 0
        assert not list(tmp_path.glob("*.png"))

    def test_worker_count_invariant(self, tmp_path, lattice_file):
        w1, w2 = tmp_path / "w1.csv", tmp_path / "w2.csv"
        common = ["--reps=4", "--no-plots"]
        assert main(self.fit_args(lattice_file, w1, *common)) == 0
        assert main(self.fit_args(lattice_file, w2, "--workers=2", *common)) == 0
        assert w1.read_bytes() == w2.read_bytes()

    def test_adaptive(self, tmp_path, lattice_file):
        out = tmp_path / "ad.csv"
        rc = main(["fit", f"--data={lattice_file}", "--algo=adaptive",
                   "--iters=3", "--l=80", "--r=1", "--s=10", "--n=70",
                   "--seed=0", "--no-timing", "--no-plots", f"--out={out}"])
        assert rc == 0
        rec = read_records_csv(out)[0]
        assert rec.converged
        assert np.isfinite(rec.exact_loglik)

    def test_explicit_start(self, tmp_path, lattice_file):
        out = tmp_path / "es.csv"
        rc = main(self.fit_args(lattice_file, out, "--start=-0.2,0.1",
                                "--no-plots"))
        assert rc == 0

    def test_suffstat_only(self, tmp_path):
        out = tmp_path / "ss.csv"
        rc = main(["fit", "--suffstat-only=8,8", "--d=4", "--start=zero",
                   "--burnin=30", "--samples=300", "--seed=0", "--no-timing",
                   "--no-plots", f"--out={out}"])
        assert rc == 0
        assert len(read_records_csv(out)) == 1

    def test_config_errors_exit_2(self, tmp_path, lattice_file):
        out = f"--out={tmp_path / 'x.csv'}"
        base = ["--no-plots", "--no-timing", out]
        cases = [
            # both inputs at once
            ["fit", f"--data={lattice_file}", "--suffstat-only=8,8", *base],
            # neither input
            ["fit", *base],
            # suffstat without the lattice side
            ["fit", "--suffstat-only=8,8", "--start=zero", *base],
            # adaptive cannot run from summary statistics alone
            ["fit", "--suffstat-only=8,8", "--d=4", "--algo=adaptive",
             "--start=zero", *base],
            # data file missing
            ["fit", "--data=/does/not/exist.txt", *base],
            # side disagrees with the file
            ["fit", f"--data={lattice_file}", "--d=9", *base],
        ]
        for argv in cases:
            assert main(argv) == 2, argv


class TestExact:
    def test_binomial(self, capsys):
        assert main(["exact", "--y=7", "--n=10"]) == 0
        printed = capsys.readouterr().out
        theta = float(printed.splitlines()[0].split(":")[1])
        assert theta == pytest.approx(math.log(7 / 3), abs=1e-9)

    def test_lattice_file(self, lattice_file, capsys):
        assert main(["exact", f"--data={lattice_file}"]) == 0
        printed = capsys.readouterr().out
        model = AutologisticLattice(4)
        t_obs = model.t(read_lattice(lattice_file)).astype(float)
        fit = exact_mle(model, t_obs)
        parts = printed.splitlines()[0].split(":")[1].split(",")
        assert float(parts[0]) == pytest.approx(fit.theta_hat[0], abs=1e-12)
        assert float(printed.splitlines()[1].split(":")[1]) == pytest.approx(
            fit.loglik_at_hat, abs=1e-12)

    def test_suffstat_only(self, capsys):
        assert main(["exact", "--suffstat-only=8,8", "--d=4"]) == 0
        assert "theta_hat" in capsys.readouterr().out

    def test_boundary_exits_3(self):
        assert main(["exact", "--suffstat-only=16,24", "--d=4"]) == 3
        assert main(["exact", "--y=0", "--n=10"]) == 3

    def test_y_needs_n(self):
        assert main(["exact", "--y=7"]) == 2


class TestMpl:
    def test_point_estimate(self, lattice_file, capsys):
        assert main(["mpl", f"--data={lattice_file}"]) == 0
        parts = capsys.readouterr().out.split(":")[1].split(",")
        assert len(parts) == 2
        assert all(np.isfinite(float(p)) for p in parts)

    def test_separation_exits_3(self, tmp_path):
        ones = tmp_path / "ones.txt"
        write_lattice(ones, np.ones((4, 4), dtype=np.int8))
        assert main(["mpl", f"--data={ones}"]) == 3


class TestConfigFile:
    def test_defaults_match_explicit_flags(self, tmp_path):
        ini = tmp_path / "mcml.ini"
        ini.write_text("[mcml]\nd = 5\ntheta = -0.5,0.25\nsweeps = 60\nseed = 4\n")
        a, b = tmp_path / "a.txt", tmp_path / "b.txt"
        assert main([f"--config={ini}", "generate", f"--out={a}"]) == 0
        assert main(["generate", "--d=5", "--theta=-0.5,0.25", "--sweeps=60",
                     "--seed=4", f"--out={b}"]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_explicit_flag_wins(self, tmp_path):
        ini = tmp_path / "mcml.ini"
        ini.write_text("[mcml]\nd = 5\nsweeps = 60\nseed = 4\n")
        a, b = tmp_path / "a.txt", tmp_path / "b.txt"
        main([f"--config={ini}", "generate", f"--out={a}"])
        main([f"--config={ini}", "generate", "--seed=9", f"--out={b}"])
        base = main(["generate", "--d=5", "--sweeps=60", "--seed=9",
                     f"--out={tmp_path / 'c.txt'}"])
        assert base == 0
        assert a.read_bytes() != b.read_bytes()
        assert b.read_bytes() == (tmp_path / "c.txt").read_bytes()

    def test_boolean_keys(self, tmp_path, lattice_file):
        ini = tmp_path / "mcml.ini"
        ini.write_text("[mcml]\nno_plots = true\nno_timing = yes\n"
                       "burnin = 30\nsamples = 200\n")
        out = tmp_path / "fit.csv"
        rc = main([f"--config={ini}", "fit", f"--data={lattice_file}",
                   "--seed=0", f"--out={out}"])
        assert rc == 0
        assert not list(tmp_path.glob("*.png"))
        assert read_records_csv(out)[0].wall_ms == 0

    def test_missing_file_exits_2(self, tmp_path):
        assert main([f"--config={tmp_path / 'nope.ini'}", "generate",
                     f"--out={tmp_path / 'x.txt'}"]) == 2

    def test_missing_section_exits_2(self, tmp_path):
        ini = tmp_path / "other.ini"
        ini.write_text("[other]\nd = 5\n")
        assert main([f"--config={ini}", "generate",
                     f"--out={tmp_path / 'x.txt'}"]) == 2


class TestUsageErrors:
    def test_unknown_flag(self, tmp_path, capsys):
        rc = main(["generate", "--bogus=1", f"--out={tmp_path / 'x.txt'}"])
        capsys.readouterr()
        assert rc == 2

    def test_no_subcommand(self, capsys):
        rc = main([])
        capsys.readouterr()
        assert rc == 2

    def test_bad_algo_choice(self, tmp_path, lattice_file, capsys):
        rc = main(["fit", f"--data={lattice_file}", "--algo=anneal",
                   f"--out={tmp_path / 'x.csv'}"])
        capsys.readouterr()
        assert rc == 2


class TestBinomialDemo:
    def test_outputs(self, tmp_path, capsys):
        out = tmp_path / "demo.csv"
        rc = main(["binomial-demo", "--n=10", "--y=6", "--m=600", "--reps=60",
                   "--seed=0", f"--out={out}"])
        assert rc == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "density,rep,theta_hat"
        assert len(lines) == 1 + 3 * 60
        assert (tmp_path / "demo_variance.png").exists()
        printed = capsys.readouterr().out
        assert "variance floor" in printed
        for label in ("uniform", "target", "optimal"):
            assert label in printed

    def test_no_plots(self, tmp_path):
        out = tmp_path / "demo.csv"
        rc = main(["binomial-demo", "--n=10", "--y=6", "--m=400", "--reps=30",
                   "--seed=0", "--no-plots", f"--out={out}"])
        assert rc == 0
        assert not list(tmp_path.glob("*.png"))

    def test_degenerate_count_exits_2(self, tmp_path):
        assert main(["binomial-demo", "--n=10", "--y=0",
                     f"--out={tmp_path / 'x.csv'}"]) == 2


class TestCltCheck:
    def test_passing_run(self, tmp_path, capsys):
        out = tmp_path / "clt.csv"
        rc = main(["clt-check", "--n=20", "--y=14", "--m=1500", "--reps=500",
                   "--seed=1", f"--out={out}"])
        assert rc == 0
        printed = capsys.readouterr().out
        assert "verdict: ok" in printed
        assert len(out.read_text().splitlines()) == 501
        assert (tmp_path / "clt_hist.png").exists()

    def test_failed_verdict_exits_3_and_no_plots(self, tmp_path, capsys):
        out = tmp_path / "clt.csv"
        # this seed/size combination lands outside the tolerance band
        rc = main(["clt-check", "--n=12", "--y=7", "--m=1500", "--reps=400",
                   "--seed=1", "--no-plots", f"--out={out}"])
        assert "verdict: FAILED" in capsys.readouterr().out
        assert rc == 3
        assert out.exists()  # the data still lands on disk
        assert not list(tmp_path.glob("*.png"))
