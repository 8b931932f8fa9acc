import numpy as np
import pytest

from ofs.coverage import (
    CoverageTable,
    ExperimentConfig,
    build_scenario,
    coverage_report,
    mc_stderr,
    read_coverage_csv,
    run_coverage_experiment,
    write_coverage_csv,
)


class TestMcStderr:
    def test_half_at_hundred(self):
        assert mc_stderr(0.5, 100) == pytest.approx(0.05)

    def test_degenerate(self):
        assert mc_stderr(0.0, 50) == 0.0

    def test_formula(self):
        assert mc_stderr(0.9, 1000) == pytest.approx(0.009486, abs=1e-5)

    def test_n_positive(self):
        with pytest.raises(ValueError):
            mc_stderr(0.5, 0)


def small_config(**overrides):
    base = dict(
        scenario="exact_gaussian_oracle",
        scenario_params={"n_obs": 40},
        n_datasets=4,
        alpha_grid=(0.10, 0.33),
        methods=("raw", "ofs"),
        combos=(("plugin", "plugin"),),
        iterations=600,
        burn_in=150,
        master_seed=5,
        workers=1,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


class TestExperiment:
    def test_reproducible_table(self, tmp_path):
        table_a = run_coverage_experiment(small_config())
        table_b = run_coverage_experiment(small_config())
        path_a = write_coverage_csv(table_a, tmp_path / "a.csv")
        path_b = write_coverage_csv(table_b, tmp_path / "b.csv")
        assert path_a.read_bytes() == path_b.read_bytes()

    def test_workers_do_not_change_results(self, tmp_path):
        serial = run_coverage_experiment(small_config(workers=1))
        parallel = run_coverage_experiment(small_config(workers=2))
        a = write_coverage_csv(serial, tmp_path / "s.csv")
        b = write_coverage_csv(parallel, tmp_path / "p.csv")
        assert a.read_bytes() == b.read_bytes()

    def test_structural_row_count(self):
        config = small_config(
            methods=("raw", "ofs", "curvature"),
            combos=(("plugin", "plugin"), ("plugin", "chain_cov")),
            curvature_combo="all",
        )
        table = run_coverage_experiment(config)
        p = 2  # oracle scenario has two coordinates
        expected = len(config.alpha_grid) * 3 * 2 * p
        assert len(table) == expected

    def test_monotone_in_nominal(self):
        table = run_coverage_experiment(small_config(n_datasets=8))
        for method in ("raw", "ofs"):
            for coord in ("mu", "sigma2"):
                rows = sorted(
                    table.select(method=method, coordinate=coord).rows,
                    key=lambda r: r.nominal,
                )
                values = [r.empirical for r in rows]
                assert values == sorted(values)

    def test_empty_methods_gives_header_only_csv(self, tmp_path):
        table = run_coverage_experiment(small_config(methods=(), n_datasets=1))
        path = write_coverage_csv(table, tmp_path / "empty.csv")
        lines = path.read_text().splitlines()
        assert len(lines) == 1

    def test_unknown_scenario_rejected(self):
        with pytest.raises(ValueError, match="scenario"):
            ExperimentConfig(scenario="banana")

    def test_unknown_scenario_param_rejected(self):
        with pytest.raises(ValueError, match="unknown scenario parameters"):
            build_scenario("exact_gaussian_oracle", {"bogus": 1})

    def test_alpha_grid_validated(self):
        with pytest.raises(ValueError):
            small_config(alpha_grid=(0.0,))

    def test_curvature_combo_subset(self):
        config = small_config(
            methods=("raw", "ofs", "curvature"),
            combos=(("plugin", "plugin"), ("plugin", "chain_cov")),
            curvature_combo=1,
        )
        table = run_coverage_experiment(config)
        curv = table.select(method="curvature")
        assert {(r.p_method, r.q_method) for r in curv.rows} == {("plugin", "chain_cov")}


class TestReport:
    def test_round_trip_and_curves(self, tmp_path):
        table = run_coverage_experiment(small_config())
        csv_path, curve_path = coverage_report(
            table, tmp_path / "cov.csv", tmp_path / "curves.csv"
        )
        back = read_coverage_csv(csv_path)
        assert back.rows == table.rows
        lines = curve_path.read_text().splitlines()
        assert lines[0].startswith("coordinate,method")
        assert len(lines) == len(table) + 1

    def test_select_single(self):
        table = run_coverage_experiment(small_config())
        row = table.single(
            method="raw",
            coordinate="mu",
            nominal=0.9,
            p_method="plugin",
            q_method="plugin",
        )
        assert row.n_effective == 4
        with pytest.raises(ValueError):
            CoverageTable(()).single(method="raw")
