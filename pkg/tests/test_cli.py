"""End-to-end CLI workflows, exit codes, and determinism."""

import json

import numpy as np
import pytest

from conftest import write_bell_population_csv, write_patient_records_csv
from quaropt.cli import (
    EXIT_CONDITION_VIOLATIONS,
    EXIT_NO_CONVERGENCE,
    EXIT_OK,
    EXIT_SCHEMA,
    main,
)
from quaropt.rule_solver import read_rule_csv


def _run(*argv):
    return main([str(a) for a in argv])


class TestFit:
    def test_artifacts_written(self, tmp_path, patient_records_csv, population_csv):
        out = tmp_path / "work"
        code = _run(
            "fit", patient_records_csv, "--population", population_csv, "--out-dir", out
        )
        assert code == EXIT_OK
        report = json.loads((out / "fit_report.json").read_text())
        assert report["parameters"] == ["shape", "gamma1", "gamma2", "gamma3"]
        assert len(report["estimates"]) == 4
        assert len(report["standard_errors"]) == 4
        assert report["converged"] is True
        for name in ("f1_density.csv", "f0_density.csv", "infected_features.csv", "interval_fit.csv"):
            assert (out / name).exists()

    def test_empty_file_exits_one_with_diagnostic(self, tmp_path, capsys):
        bad = tmp_path / "empty.csv"
        bad.write_text("")
        code = _run("fit", bad, "--out-dir", tmp_path)
        assert code == EXIT_SCHEMA
        assert "empty file" in capsys.readouterr().err

    def test_schema_error_reports_line(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("age,risk_level,infected,z\nforty,none,1,5\n")
        code = _run("fit", bad, "--out-dir", tmp_path)
        assert code == EXIT_SCHEMA
        assert "line 2" in capsys.readouterr().err

    def test_ceiling_likelihood_off(self, tmp_path, patient_records_csv, population_csv):
        out = tmp_path / "work"
        code = _run(
            "fit",
            patient_records_csv,
            "--population",
            population_csv,
            "--ceiling-likelihood",
            "off",
            "--out-dir",
            out,
        )
        assert code == EXIT_OK

    def test_deterministic_bytes(self, tmp_path, patient_records_csv, population_csv):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        for out in (out1, out2):
            assert (
                _run("fit", patient_records_csv, "--population", population_csv, "--out-dir", out)
                == EXIT_OK
            )
        for name in ("fit_report.json", "f1_density.csv", "f0_density.csv"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


class TestSolve:
    @pytest.fixture()
    def fit_dir(self, tmp_path, patient_records_csv, population_csv):
        out = tmp_path / "work"
        assert (
            _run("fit", patient_records_csv, "--population", population_csv, "--out-dir", out)
            == EXIT_OK
        )
        return out

    def test_rule_and_solution_written(self, tmp_path, fit_dir):
        code = _run("solve", "--fit-dir", fit_dir, "--epsilon", 0.05, "--out-dir", fit_dir)
        assert code == EXIT_OK
        rule = read_rule_csv(fit_dir / "rule.csv")
        solution = json.loads((fit_dir / "solution.json").read_text())
        assert 0.0 < solution["c0"] <= solution["c_star"]
        assert abs(solution["achieved_escape"] - 0.05) < 1e-4
        assert not solution["fallback_used"]
        assert len(rule.points) == 70

    def test_young_ages_quarantined_less(self, fit_dir):
        # infected ages concentrate around 55 while the population bells at
        # 35, so the decision ratio shortens durations for the young
        _run("solve", "--fit-dir", fit_dir, "--epsilon", 0.05, "--out-dir", fit_dir)
        rule = read_rule_csv(fit_dir / "rule.csv")
        ages = np.array([p.age for p in rule.points])
        young = rule.durations[ages <= 20].mean()
        older = rule.durations[(ages >= 45) & (ages <= 65)].mean()
        assert young < older

    def test_fallback_flag_for_large_epsilon(self, fit_dir):
        code = _run("solve", "--fit-dir", fit_dir, "--epsilon", 0.9, "--out-dir", fit_dir)
        assert code == EXIT_OK
        solution = json.loads((fit_dir / "solution.json").read_text())
        assert solution["fallback_used"] is True
        assert solution["c0"] == solution["c_star"]

    def test_constant_weight_leaves_rule_unchanged(self, tmp_path, fit_dir):
        _run("solve", "--fit-dir", fit_dir, "--epsilon", 0.05, "--out-dir", fit_dir)
        base = read_rule_csv(fit_dir / "rule.csv")
        weight = tmp_path / "weight.csv"
        lines = ["risk_level,age,weight"] + [f"none,{a},2.5" for a in range(11, 81)]
        weight.write_text("\n".join(lines) + "\n")
        out2 = tmp_path / "weighted"
        _run(
            "solve", "--fit-dir", fit_dir, "--epsilon", 0.05, "--weight", weight,
            "--out-dir", out2,
        )
        weighted = read_rule_csv(out2 / "rule.csv")
        np.testing.assert_allclose(weighted.durations, base.durations, atol=1e-6)
        np.testing.assert_array_equal(weighted.durations_rounded, base.durations_rounded)

    def test_condition_violation_exit_code(self, fit_dir, monkeypatch, capsys):
        import quaropt.cli as cli_mod
        from quaropt.rule_solver import ThresholdSolution

        real = cli_mod.optimal_rule

        def fake(*args, **kwargs):
            rule, sol = real(*args, **kwargs)
            forced = ThresholdSolution(
                c0=sol.c0,
                c_star=sol.c_star,
                achieved_escape=sol.achieved_escape,
                epsilon=sol.epsilon,
                fallback_used=sol.fallback_used,
                warnings=sol.warnings + ("condition violation: forced by test",),
                n_condition_violations=60,
                n_support=70,
            )
            return rule, forced

        monkeypatch.setattr(cli_mod, "optimal_rule", fake)
        code = _run("solve", "--fit-dir", fit_dir, "--epsilon", 0.05, "--out-dir", fit_dir)
        assert code == EXIT_CONDITION_VIOLATIONS
        assert (fit_dir / "rule.csv").exists()  # output still written
        assert "condition" in capsys.readouterr().err


class TestEvaluate:
    def test_constant_15_rule_scores_15(self, tmp_path, patient_records_csv, population_csv):
        rule_path = tmp_path / "const15.csv"
        lines = ["risk_level,age,duration_days_fractional,duration_days_rounded"]
        lines += [f"none,{a},15.0,15" for a in range(11, 81)]
        rule_path.write_text("\n".join(lines) + "\n")
        out = tmp_path / "eval"
        code = _run(
            "evaluate", "--rule", rule_path, "--population", population_csv,
            "--records", patient_records_csv, "--out-dir", out,
        )
        assert code == EXIT_OK
        rows = (out / "evaluation.csv").read_text().splitlines()
        method, aqd, ep, n, rounded = rows[1].split(",")
        assert float(aqd) == 15.0
        assert 0.0 <= float(ep) <= 1.0
        assert n == "1770"

    def test_zero_rule_escapes_everything(self, tmp_path, patient_records_csv, population_csv):
        rule_path = tmp_path / "zero.csv"
        lines = ["risk_level,age,duration_days_fractional,duration_days_rounded"]
        lines += [f"none,{a},0.0,0" for a in range(11, 81)]
        rule_path.write_text("\n".join(lines) + "\n")
        out = tmp_path / "eval"
        code = _run(
            "evaluate", "--rule", rule_path, "--population", population_csv,
            "--records", patient_records_csv, "--out-dir", out,
        )
        assert code == EXIT_OK
        assert ",1.0," in (out / "evaluation.csv").read_text().splitlines()[1]


class TestSimulate:
    def test_output_shape_and_determinism(self, tmp_path):
        out1, out2 = tmp_path / "s1", tmp_path / "s2"
        for out in (out1, out2):
            code = _run(
                "simulate", "--scenario", 1, "--n", 800, "--reps", 2,
                "--seed", 11, "--out-dir", out,
            )
            assert code == EXIT_OK
        lines = (out1 / "table1.csv").read_text().splitlines()
        assert len(lines) == 4  # header + the three methods
        assert (out1 / "table1.csv").read_bytes() == (out2 / "table1.csv").read_bytes()
        assert (out1 / "duration_curves.csv").read_bytes() == (
            out2 / "duration_curves.csv"
        ).read_bytes()

    def test_different_seed_changes_output(self, tmp_path):
        out1, out2 = tmp_path / "s1", tmp_path / "s2"
        _run("simulate", "--scenario", 1, "--n", 800, "--reps", 2, "--seed", 11, "--out-dir", out1)
        _run("simulate", "--scenario", 1, "--n", 800, "--reps", 2, "--seed", 12, "--out-dir", out2)
        assert (out1 / "table1.csv").read_bytes() != (out2 / "table1.csv").read_bytes()


class TestExportCurve:
    def test_curve_written(self, tmp_path, patient_records_csv, population_csv):
        out = tmp_path / "work"
        _run("fit", patient_records_csv, "--population", population_csv, "--out-dir", out)
        code = _run("export-curve", "--fit-dir", out, "--age", 40, "--out-dir", out)
        assert code == EXIT_OK
        lines = (out / "curve_none_40.csv").read_text().splitlines()
        assert lines[0] == "y_days,density_ratio"
        assert len(lines) == 513


class TestConfig:
    def test_config_file_applies_and_flags_override(self, tmp_path, population_csv):
        records = tmp_path / "records.csv"
        write_patient_records_csv(records, seed=502)
        cfg = tmp_path / "config.json"
        cfg.write_text(json.dumps({"age_min": 20, "age_max": 70, "epsilon": 0.1}))
        out = tmp_path / "work"
        code = _run(
            "fit", records, "--population", population_csv, "--config", cfg, "--out-dir", out
        )
        assert code == EXIT_OK
        report = json.loads((out / "fit_report.json").read_text())
        assert report["age_support"] == [20, 70]
        # flag overrides the file
        out2 = tmp_path / "work2"
        code = _run(
            "fit", records, "--population", population_csv, "--config", cfg,
            "--age-min", 25, "--out-dir", out2,
        )
        assert code == EXIT_OK
        report2 = json.loads((out2 / "fit_report.json").read_text())
        assert report2["age_support"] == [25, 70]

    def test_unknown_config_key_rejected(self, tmp_path, population_csv, capsys):
        records = tmp_path / "records.csv"
        write_patient_records_csv(records, seed=503)
        cfg = tmp_path / "config.json"
        cfg.write_text(json.dumps({"bogus": 1}))
        code = _run("fit", records, "--population", population_csv, "--config", cfg)
        assert code == EXIT_SCHEMA
        assert "unknown config keys" in capsys.readouterr().err

    def test_help_lists_subcommands(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        for name in ("fit", "solve", "evaluate", "simulate", "export-curve"):
            assert name in out
