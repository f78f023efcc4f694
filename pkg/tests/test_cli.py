import json

import numpy as np
import pytest

from missreg.cli import main, read_config

from conftest import random_missing_arrays


@pytest.fixture
def data_csv(tmp_path):
    X, y, U = random_missing_arrays(7, 4, 300, 0.8, 50)
    path = tmp_path / "d.csv"
    lines = ["a,b,c,d,y"]
    for x, t in zip(X, y):
        lines.append(",".join("NA" if np.isnan(v) else repr(float(v)) for v in x)
                     + f",{float(t)!r}")
    path.write_text("\n".join(lines) + "\n")
    upath = tmp_path / "u.csv"
    upath.write_text("a,b,c,d\n" + "\n".join(",".join(repr(float(v)) for v in u) for u in U) + "\n")
    return path, upath


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def metadata(err):
    return json.loads(err.strip().splitlines()[-1])


class TestFitLow:
    def test_default_fit(self, data_csv, capsys):
        d, u = data_csv
        code, out, err = run(["fit-low", "--input", d, "--response", "y", "--unlabelled", u],
                             capsys)
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0] == "index,name,value,alpha_hat" and len(lines) == 5
        assert [l.split(",")[1] for l in lines[1:]] == ["a", "b", "c", "d"]
        meta = metadata(err)
        assert "pattern_weights" in meta

    @pytest.mark.parametrize("extra", [
        ["--weights", "unit"],
        ["--weights", "estimated", "--kappa-l", "0.1", "--kappa-u", "10"],
        ["--crossfit", "--lambda-minus", "0.05", "--lambda-plus", "20"],
        ["--threshold", "--lambda-minus", "0.05", "--lambda-plus", "20"],
        ["--cov", "pairwise"],
        ["--weights", "oracle", "--oracle-beta", "1,1,1,1", "--oracle-sigma", "1"],
    ])
    def test_variants(self, data_csv, capsys, extra):
        d, u = data_csv
        code, out, _ = run(["fit-low", "--input", d, "--response", "y", "--unlabelled", u]
                           + extra, capsys)
        assert code == 0 and len(out.strip().splitlines()) == 5

    def test_output_file_byte_identical(self, data_csv, tmp_path, capsys):
        d, u = data_csv
        outs = []
        for name in ("o1.csv", "o2.csv"):
            o = tmp_path / name
            assert run(["fit-low", "--input", d, "--response", "y", "--out", o], capsys)[0] == 0
            outs.append(o.read_bytes())
        assert outs[0] == outs[1]

    def test_config_file_supplies_defaults(self, data_csv, tmp_path, capsys):
        d, u = data_csv
        cfg = tmp_path / "run.cfg"
        cfg.write_text(f"# comment\ninput = {d}\nresponse=y\nweights=unit\n")
        assert read_config(str(cfg))["weights"] == "unit"
        a = run(["fit-low", "--config", cfg], capsys)
        b = run(["fit-low", "--input", d, "--response", "y", "--weights", "unit"], capsys)
        assert a[0] == 0 and a[1] == b[1]

    def test_flag_overrides_config(self, data_csv, tmp_path, capsys):
        d, _ = data_csv
        cfg = tmp_path / "run.cfg"
        cfg.write_text(f"input={d}\nresponse=y\nweights=unit\n")
        a = run(["fit-low", "--config", cfg, "--weights", "pilot"], capsys)
        b = run(["fit-low", "--input", d, "--response", "y"], capsys)
        assert a[1] == b[1]

    def test_unknown_config_key(self, data_csv, tmp_path, capsys):
        d, _ = data_csv
        cfg = tmp_path / "run.cfg"
        cfg.write_text(f"input={d}\nresponse=y\nbogus=1\n")
        assert run(["fit-low", "--config", cfg], capsys)[0] == 2


class TestErrors:
    def test_missing_required_option(self, data_csv, capsys):
        d, _ = data_csv
        code, _, err = run(["fit-low", "--input", d], capsys)
        assert code == 2 and "--response" in err

    def test_bad_flag(self, capsys):
        assert run(["fit-low", "--nope"], capsys)[0] == 2

    def test_variable_never_observed(self, tmp_path, capsys):
        f = tmp_path / "bad.csv"
        f.write_text("a,b,y\n1,NA,1\n2,NA,2\n3,NA,4\n")
        code, _, err = run(["fit-low", "--input", f, "--response", "y"], capsys)
        assert code == 1
        assert "VariableNeverObserved" in err and "b" in err

    def test_missing_file(self, tmp_path, capsys):
        code, _, err = run(["fit-low", "--input", tmp_path / "none.csv", "--response", "y"],
                           capsys)
        assert code == 1

    def test_no_subcommand(self, capsys):
        assert run([], capsys)[0] == 2


class TestFitHighdim:
    def test_fixed_lambda(self, data_csv, capsys):
        d, u = data_csv
        code, out, err = run(["fit-highdim", "--input", d, "--response", "y", "--unlabelled", u,
                              "--lambda", "0.2"], capsys)
        assert code == 0
        meta = metadata(err)
        assert meta["lambda"] == 0.2 and meta["max_constraint"] <= 0.2 + 1e-8
        assert out.splitlines()[0] == "index,value"

    def test_cv_deterministic(self, data_csv, capsys):
        d, _ = data_csv
        argv = ["fit-highdim", "--input", d, "--response", "y", "--cv", "--grid-size", "8",
                "--seed", "3"]
        a, b = run(argv, capsys), run(argv, capsys)
        assert a[0] == 0 and a[1] == b[1]

    def test_lambda_rule(self, data_csv, capsys):
        d, _ = data_csv
        code, _, err = run(["fit-highdim", "--input", d, "--response", "y",
                            "--lambda-rule", "structured"], capsys)
        assert code == 0 and metadata(err)["lambda"] > 0

    def test_mutually_exclusive(self, data_csv, capsys):
        d, _ = data_csv
        assert run(["fit-highdim", "--input", d, "--response", "y", "--lambda", "0.1", "--cv"],
                   capsys)[0] == 2


class TestOtherCommands:
    def test_diagnose(self, data_csv, tmp_path, capsys):
        d, u = data_csv
        dump = tmp_path / "sigma.csv"
        code, out, _ = run(["diagnose", "--input", d, "--response", "y", "--unlabelled", u,
                            "--re-s", "1", "--dump-sigma", dump], capsys)
        assert code == 0
        assert np.loadtxt(dump, delimiter=",").shape == (4, 4)
        assert "sigma_eig_1" in out

    def test_export_groups(self, data_csv, capsys):
        d, _ = data_csv
        code, out, _ = run(["export-groups", "--input", d, "--response", "y"], capsys)
        assert code == 0 and len(out.strip().splitlines()) == 301

    def test_simulate(self, tmp_path, capsys):
        o1, o2 = tmp_path / "s1.csv", tmp_path / "s2.csv"
        for o in (o1, o2):
            code, _, _ = run(["simulate", "--experiment", "fig1", "--reps", "2",
                              "--set", "x=100,300", "--out", o], capsys)
            assert code == 0
        assert o1.read_bytes() == o2.read_bytes()
        assert o1.read_text().splitlines()[0].startswith("experiment,method,x,mse")

    def test_simulate_unknown_experiment(self, capsys):
        code, _, err = run(["simulate", "--experiment", "nope", "--reps", "1"], capsys)
        assert code == 1 and "UnknownExperiment" in err

    def test_simulate_config_overrides(self, tmp_path, capsys):
        cfg = tmp_path / "sim.cfg"
        cfg.write_text("experiment=fig1\nreps=2\nx=100\nsigma=2\n")
        code, out, _ = run(["simulate", "--config", cfg], capsys)
        assert code == 0 and len(out.strip().splitlines()) == 1 + 3
