import math

import numpy as np
import pytest

from maic.errors import InsufficientCell
from maic.estimators import Scale
from maic.simulation import (
    Confounding,
    ScenarioConfig,
    generate_population,
    run_replicate,
    run_study,
    scenario_vectors,
    subsample_by_arm,
    true_delta,
)


def cfg_with(**kwargs):
    base = dict(p=5, n_per_arm=100, confounding=Confounding.MODERATE,
                scale=Scale.IDENTITY, replicates=2, seed=11)
    base.update(kwargs)
    return ScenarioConfig(**base)


class TestScenarioConfig:
    def test_round_trip_dict(self):
        cfg = cfg_with(scale=Scale.LOGIT, alpha_slope=0.0)
        assert ScenarioConfig.from_dict(cfg.to_dict()) == cfg

    def test_json_file(self, tmp_path):
        import json

        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg_with().to_dict()))
        assert ScenarioConfig.from_json_file(path) == cfg_with()

    def test_needs_four_covariates(self):
        with pytest.raises(ValueError):
            cfg_with(p=3)

    def test_scenario_signal_on_first_four(self):
        a1, b1, b3 = scenario_vectors(Confounding.SEVERE, 6)
        np.testing.assert_allclose(a1, [0.3, 0.3, 0.3, 0.3, 0.0, 0.0])
        np.testing.assert_allclose(b1, [0.25, 0.25, 0.25, 0.25, 0.0, 0.0])
        np.testing.assert_allclose(b3, [0.15, 0.15, 0.15, 0.15, 0.0, 0.0])


class TestGeneratePopulation:
    def test_equicorrelated_covariates(self):
        cfg = cfg_with(confounding=Confounding.NONE)
        pop = generate_population(cfg, 200_000, np.random.default_rng(3))
        cov = np.cov(pop.x.T)
        np.testing.assert_allclose(np.diag(cov), 1.0, atol=0.02)
        off = cov[~np.eye(5, dtype=bool)]
        np.testing.assert_allclose(off, 0.2, atol=0.02)

    def test_moderate_standardized_mean_difference(self):
        cfg = cfg_with()
        pop = generate_population(cfg, 400_000, np.random.default_rng(4))
        t1, t2 = pop.t == 1, pop.t == 2
        for j in range(4):
            pooled_sd = pop.x[:, j].std()
            smd = (pop.x[t1, j].mean() - pop.x[t2, j].mean()) / pooled_sd
            assert smd == pytest.approx(-0.38, abs=0.02)
        # x5 carries no selection signal; its shift comes only through the
        # equicorrelation and is half that of the signal covariates
        # (cov with the selection score: 0.8 vs 1 + 3*0.2 = 1.6)
        smd5 = (pop.x[t1, 4].mean() - pop.x[t2, 4].mean()) / pop.x[:, 4].std()
        assert smd5 == pytest.approx(-0.19, abs=0.02)

    def test_null_assignment_override(self):
        cfg = cfg_with(alpha_slope=0.0)
        pop = generate_population(cfg, 100_000, np.random.default_rng(5))
        assert (pop.t == 2).mean() == pytest.approx(0.5, abs=0.01)
        for j in range(5):
            diff = pop.x[pop.t == 1, j].mean() - pop.x[pop.t == 2, j].mean()
            assert abs(diff) < 0.02

    def test_arm_codes(self):
        pop = generate_population(cfg_with(), 10_000, np.random.default_rng(6))
        assert set(np.unique(pop.z)) <= {0, 1, 2}
        assert np.all(pop.z[pop.z > 0] == pop.t[pop.z > 0])
        assert set(np.unique(pop.y)) == {0.0, 1.0}


class TestSubsample:
    def test_exact_cell_counts(self):
        cfg = cfg_with(n_per_arm=50)
        rng = np.random.default_rng(7)
        pop = generate_population(cfg, 2_000, rng)
        sub = subsample_by_arm(pop, 50, rng)
        for t, z in ((1, 0), (1, 1), (2, 0), (2, 2)):
            assert int(((sub.t == t) & (sub.z == z)).sum()) == 50
        assert len(sub.y) == 200

    def test_insufficient_cell(self):
        cfg = cfg_with(n_per_arm=50)
        rng = np.random.default_rng(8)
        pop = generate_population(cfg, 100, rng)
        with pytest.raises(InsufficientCell):
            subsample_by_arm(pop, 50, rng)

    def test_subsample_means_track_cell_means(self):
        cfg = cfg_with(n_per_arm=2_000)
        rng = np.random.default_rng(9)
        pop = generate_population(cfg, 40_000, rng)
        sub = subsample_by_arm(pop, 2_000, rng)
        cell = (pop.t == 2) & (pop.z == 2)
        sub_cell = (sub.t == 2) & (sub.z == 2)
        np.testing.assert_allclose(
            sub.x[sub_cell].mean(axis=0), pop.x[cell].mean(axis=0), atol=0.06
        )


class TestTrueDelta:
    def test_no_confounding_identity_closed_form(self):
        cfg = cfg_with(confounding=Confounding.NONE)
        expected = 1 / (1 + math.exp(0.9)) - 1 / (1 + math.exp(0.4))
        assert expected == pytest.approx(-0.11226, abs=1e-5)
        assert true_delta(cfg, n_oracle=10_000) == pytest.approx(expected, abs=1e-12)

    def test_no_confounding_logit_closed_form(self):
        cfg = cfg_with(confounding=Confounding.NONE, scale=Scale.LOGIT)
        assert true_delta(cfg, n_oracle=10_000) == pytest.approx(-0.5, abs=1e-12)

    def test_moderate_oracle_is_stable(self):
        cfg = cfg_with(scale=Scale.LOGIT)
        a = true_delta(cfg, n_oracle=1_000_000, rng=np.random.default_rng(1))
        b = true_delta(cfg, n_oracle=1_000_000, rng=np.random.default_rng(2))
        assert a == pytest.approx(b, abs=5e-4)


class TestRunReplicate:
    def test_deterministic(self):
        cfg = cfg_with(scale=Scale.LOGIT)
        a = run_replicate(cfg, 3)
        b = run_replicate(cfg, 3)
        assert a.deltas == b.deltas
        assert a.ses == b.ses
        assert a.negcontrol_reject == b.negcontrol_reject

    def test_all_outputs_present(self):
        r = run_replicate(cfg_with(), 0)
        assert set(r.deltas) == {"maic-nab", "maic-acb", "bucher", "stc"}
        assert set(r.ses) == {"fo", "po", "cs", "sw", "full"}
        assert r.negcontrol_reject in (True, False)
        assert r.ess_active is not None

    def test_tight_oversampling_still_fills_cells(self):
        # factor 1 draws exactly 4n, often short in a cell; regeneration
        # doubles the factor until every cell fills
        r = run_replicate(cfg_with(oversample_factor=1), 0)
        assert r.deltas


class TestRunStudy:
    def test_report_structure_and_determinism(self):
        cfg = cfg_with(replicates=8)
        a = run_study(cfg, threads=1, n_oracle=50_000)
        b = run_study(cfg, threads=2, n_oracle=50_000)
        assert a.to_dict() == b.to_dict()
        assert set(a.percent_bias) == {"maic-nab", "maic-acb", "bucher", "stc"}
        assert set(a.coverage) == {"fo", "po", "cs", "sw", "full"}
        assert a.failure_counts == {m: 0 for m in a.percent_bias}
        assert a.negcontrol_rejection_rate is not None

    def test_single_replicate_has_null_spread_cells(self):
        report = run_study(cfg_with(replicates=1), n_oracle=50_000)
        assert report.empirical_sd is None
        assert all(v is None for v in report.relative_length.values())
        assert all(v is None for v in report.bias_mc_se.values())

    def test_tidy_rows_cover_all_metrics(self):
        report = run_study(cfg_with(replicates=3), n_oracle=50_000)
        rows = report.tidy_rows()
        metrics = {r["metric"] for r in rows}
        assert metrics == {"percent_bias", "coverage", "relative_length",
                           "mean_se", "empirical_sd", "rejection_rate"}
        assert all("confounding" in r and "n_per_arm" in r for r in rows)

    def test_json_serializable(self):
        import json

        report = run_study(cfg_with(replicates=2), n_oracle=50_000)
        doc = json.loads(report.to_json())
        assert doc["config"]["n_per_arm"] == 100
