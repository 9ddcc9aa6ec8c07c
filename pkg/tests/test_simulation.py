import numpy as np
import pytest
from scipy.stats import chisquare

from blocklink.comparison import compare_values
from blocklink.exceptions import ConfigError
from blocklink.sampler import ChainConfig, PosteriorSample
from blocklink.simulation import (
    GroundTruth,
    SimulationConfig,
    evaluate_sample,
    generate_dataset,
    income_noise_sd,
    inject_errors,
    run_study,
    study_schema,
)
from blocklink.engine import substream

from conftest import binary_theta


def _sample_from_truth(truth: GroundTruth) -> PosteriorSample:
    links = [(s, int(t), i, j) for s, t in enumerate(truth.block_map) for i, j in truth.links[s]]
    return PosteriorSample(
        iteration=0,
        block_pairs=[(s, int(t)) for s, t in enumerate(truth.block_map)],
        links=links,
        n_m={(s, int(t)): len(truth.links[s]) for s, t in enumerate(truth.block_map)},
        theta=binary_theta(),
    )


class TestGenerator:
    def test_default_scale_counts(self):
        cfg = SimulationConfig()
        f1, f2, truth = generate_dataset(cfg, substream(1))
        assert f1.n_records == 600
        assert f2.n_records == 1200
        assert len(truth.pair_set()) == 30
        assert len(truth.link_set()) == 450

    def test_replication_yields_max_agreement(self, rng):
        cfg = SimulationConfig(s_blocks=4, t_blocks=6, n1s=5, n2t=7, n_links=3)
        f1, f2, truth = generate_dataset(cfg, rng)
        schema = study_schema()
        for s, t in truth.pair_set():
            for p, spec in enumerate(schema.block):
                assert (
                    compare_values(f1.block_values[s][p], f2.block_values[t][p], spec)
                    == spec.level_count
                )
            for i, j in truth.links[s]:
                for k, spec in enumerate(schema.record):
                    assert (
                        compare_values(
                            f1.record_values[s][i][k], f2.record_values[t][j][k], spec
                        )
                        == spec.level_count
                    )

    def test_region_uniform_chi2(self):
        cfg = SimulationConfig(s_blocks=30, t_blocks=40, n1s=1, n2t=1, n_links=1)
        regions = []
        for rep in range(300):
            f1, _, _ = generate_dataset(cfg, substream(rep))
            regions += [bv[0] for bv in f1.block_values]
        counts = np.bincount(regions)[1:5]
        assert counts.sum() == 9000
        assert chisquare(counts).pvalue > 1e-4

    def test_day_included_format(self, rng):
        cfg = SimulationConfig(s_blocks=2, t_blocks=2, n1s=3, n2t=3, n_links=2, dob_day_included=True)
        f1, _, _ = generate_dataset(cfg, rng)
        dob = f1.record_values[0][0][0]
        assert len(dob.split("-")) == 3
        day = int(dob.split("-")[2])
        assert 1 <= day <= 31

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            SimulationConfig(s_blocks=5, t_blocks=4)
        with pytest.raises(ConfigError):
            SimulationConfig(n_links=40)
        with pytest.raises(ConfigError):
            SimulationConfig(eps_region=1.0)


class TestErrorInjection:
    def test_zero_error_identity(self, rng):
        cfg = SimulationConfig(s_blocks=3, t_blocks=4, n1s=4, n2t=5, n_links=2)
        f1, _, truth = generate_dataset(cfg, rng)
        out = inject_errors(f1, cfg, substream(9), truth)
        assert out.block_values == f1.block_values
        assert out.record_values == f1.record_values

    def test_income_noise_scale(self):
        assert income_noise_sd(0.2) == pytest.approx(390.1521, abs=1e-3)
        assert income_noise_sd(0.4) == pytest.approx(594.0915, abs=1e-3)
        assert income_noise_sd(0.0) == 0.0

    def test_income_flip_rate_matches_eps(self):
        # Monte-Carlo check of the flip-probability construction
        for eps in (0.2, 0.4):
            cfg = SimulationConfig(s_blocks=1, t_blocks=1, n1s=1, n2t=1, n_links=1, eps_income=eps)
            flips = 0
            trials = 10_000
            base = SimulationConfig(s_blocks=1, t_blocks=1, n1s=1, n2t=1, n_links=1)
            f1, f2, truth = generate_dataset(base, substream(0))
            rng = substream(1)
            spec = study_schema().block[3]
            for _ in range(trials):
                noisy = inject_errors(f1, cfg, rng, truth)
                a = noisy.block_values[0][3]
                b = f2.block_values[0][3]
                flips += compare_values(a, b, spec) == 1
            assert flips / trials == pytest.approx(eps, abs=0.03)

    def test_region_resample_rate(self):
        cfg = SimulationConfig(s_blocks=200, t_blocks=200, n1s=1, n2t=1, n_links=1, eps_region=0.4)
        base = SimulationConfig(s_blocks=200, t_blocks=200, n1s=1, n2t=1, n_links=1)
        f1, _, truth = generate_dataset(base, substream(3))
        changed = 0
        total = 0
        rng = substream(4)
        for _ in range(50):
            noisy = inject_errors(f1, cfg, rng, truth)
            for s in range(200):
                total += 1
                changed += noisy.block_values[s][0] != f1.block_values[s][0]
        # resampling hits a *different* region 3/4 of the time
        assert changed / total == pytest.approx(0.4 * 0.75, abs=0.02)

    def test_dob_month_alters_links_only(self, rng):
        cfg = SimulationConfig(s_blocks=2, t_blocks=2, n1s=6, n2t=6, n_links=3, eps_dob=1.0 - 1e-9)
        base = SimulationConfig(s_blocks=2, t_blocks=2, n1s=6, n2t=6, n_links=3)
        f1, _, truth = generate_dataset(base, rng)
        noisy = inject_errors(f1, cfg, substream(5), truth)
        link_rows = truth.link_rows()
        for s in range(2):
            for i in range(6):
                before = f1.record_values[s][i][0]
                after = noisy.record_values[s][i][0]
                if (s, i) in link_rows:
                    assert before.split("-")[0] == after.split("-")[0]
                    assert before.split("-")[1] != after.split("-")[1]
                else:
                    assert before == after

    def test_dob_error_requires_truth(self, rng):
        cfg = SimulationConfig(s_blocks=2, t_blocks=2, n1s=2, n2t=2, n_links=1, eps_dob=0.2)
        f1, _, _ = generate_dataset(
            SimulationConfig(s_blocks=2, t_blocks=2, n1s=2, n2t=2, n_links=1), rng
        )
        with pytest.raises(ConfigError):
            inject_errors(f1, cfg, rng, truth=None)

    def test_input_not_mutated(self, rng):
        cfg = SimulationConfig(s_blocks=2, t_blocks=3, n1s=3, n2t=4, n_links=2,
                               eps_region=0.5, eps_income=0.5, eps_dob=0.5)
        base = SimulationConfig(s_blocks=2, t_blocks=3, n1s=3, n2t=4, n_links=2)
        f1, _, truth = generate_dataset(base, rng)
        before_blocks = [tuple(b) for b in f1.block_values]
        before_records = [list(r) for r in f1.record_values]
        inject_errors(f1, cfg, substream(6), truth)
        assert [tuple(b) for b in f1.block_values] == before_blocks
        assert [list(r) for r in f1.record_values] == before_records


class TestMetrics:
    def test_truth_scores_all_ones(self, rng):
        cfg = SimulationConfig(s_blocks=3, t_blocks=4, n1s=4, n2t=5, n_links=2)
        _, _, truth = generate_dataset(cfg, rng)
        m = evaluate_sample(_sample_from_truth(truth), truth)
        assert (m.tpr, m.ppv, m.f1, m.acc) == (1.0, 1.0, 1.0, 1.0)

    def test_empty_linkage_degenerate_ppv(self, rng):
        cfg = SimulationConfig(s_blocks=2, t_blocks=2, n1s=2, n2t=2, n_links=1)
        _, _, truth = generate_dataset(cfg, rng)
        sample = PosteriorSample(
            iteration=0,
            block_pairs=[(s, int(t)) for s, t in enumerate(truth.block_map)],
            links=[],
            n_m={},
            theta=binary_theta(),
        )
        m = evaluate_sample(sample, truth)
        assert m.tpr == 0.0 and m.ppv == 0.0 and m.f1 == 0.0
        assert m.degenerate_ppv

    def test_hand_counted_case(self):
        truth = GroundTruth(
            block_map=np.array([0]),
            links=[[(0, 0), (1, 1), (2, 2), (3, 3)]],
        )
        sample = PosteriorSample(
            iteration=0,
            block_pairs=[(0, 0)],
            links=[(0, 0, 0, 0), (0, 0, 1, 1), (0, 0, 2, 4)],
            n_m={(0, 0): 3},
            theta=binary_theta(),
        )
        m = evaluate_sample(sample, truth)
        assert m.tpr == pytest.approx(0.5)
        assert m.ppv == pytest.approx(2 / 3)
        assert m.f1 == pytest.approx(4 / 7)

    def test_f1_identity_and_bounds(self, rng):
        for _ in range(200):
            n_truth = int(rng.integers(1, 20))
            n_sample = int(rng.integers(0, 20))
            overlap = int(rng.integers(0, min(n_truth, n_sample) + 1))
            truth_links = {(0, 0, 0, k) for k in range(n_truth)}
            sample_links = {(0, 0, 0, k) for k in range(overlap)} | {
                (0, 0, 1, k) for k in range(n_sample - overlap)
            }
            from blocklink.simulation import _metric_counts

            m = _metric_counts(truth_links, sample_links, {(0, 0)}, {(0, 0)}, 1)
            assert 0 <= m.tpr <= 1 and 0 <= m.ppv <= 1 and 0 <= m.f1 <= 1
            if m.tpr + m.ppv > 0:
                assert m.f1 == pytest.approx(2 * m.tpr * m.ppv / (m.tpr + m.ppv))

    def test_acc_one_implies_links_inside_linked_pairs(self, rng):
        cfg = SimulationConfig(s_blocks=3, t_blocks=5, n1s=2, n2t=3, n_links=1)
        _, _, truth = generate_dataset(cfg, rng)
        sample = _sample_from_truth(truth)
        m = evaluate_sample(sample, truth)
        assert m.acc == 1.0
        for s, t, i, j in truth.link_set():
            assert (s, t) in sample.pair_set()


class TestStudyHarness:
    def test_tiny_study_runs_and_aggregates(self):
        study = run_study(
            [(0.0, 0.0, 0.0)],
            methods=("mlbrl",),
            replicates=2,
            base_cfg=SimulationConfig(s_blocks=2, t_blocks=3, n1s=3, n2t=4, n_links=2),
            chain=ChainConfig(iterations=40, burn_in=10, sweeps=2),
            seed=12,
        )
        summary = study.summary()
        assert len(summary) == 1
        row = summary[0]
        assert row["method"] == "mlbrl"
        assert row["replicates"] == 2
        assert 0 <= row["tpr"] <= 1
        assert row["acc_sd"] is not None

    def test_parallel_matches_serial(self):
        kwargs = dict(
            methods=("mlbrl",),
            replicates=2,
            base_cfg=SimulationConfig(s_blocks=2, t_blocks=2, n1s=2, n2t=3, n_links=1),
            chain=ChainConfig(iterations=30, burn_in=10, sweeps=1),
            seed=5,
        )
        serial = run_study([(0.0, 0.0, 0.0)], threads=1, **kwargs)
        parallel = run_study([(0.0, 0.0, 0.0)], threads=2, **kwargs)
        assert serial.summary() == parallel.summary()
