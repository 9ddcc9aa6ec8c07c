import math

import numpy as np
import pytest

from blocklink.comparison import build_comparison_cube
from blocklink.exceptions import ContractViolation
from blocklink.model import (
    BlockAssignment,
    Hyperparams,
    LinkageState,
    log_component_density,
    log_joint_likelihood,
    log_prior_linkage,
    sample_parameters,
    tally_class_counts,
)

from conftest import binary_schema, binary_theta, make_blocked_file, random_binary_instance
from oracles import enumerate_matchings


class TestComponentDensity:
    def test_uniform_binary_vector(self):
        theta = [np.array([0.5, 0.5]) for _ in range(4)]
        assert log_component_density([0, 1, 1, 0], theta) == pytest.approx(4 * math.log(0.5))

    def test_certain_agreement_gives_zero(self):
        theta = [np.array([0.0, 1.0]), np.array([0.0, 1.0])]
        assert log_component_density([1, 1], theta) == 0.0

    def test_two_variable_product(self):
        theta = [np.array([0.3, 0.7]), np.array([0.9, 0.1])]
        # variable 1 agrees (level 1), variable 2 disagrees (level 0)
        assert log_component_density([1, 0], theta) == pytest.approx(
            math.log(0.7) + math.log(0.9)
        )

    def test_zero_probability_level_is_minus_inf(self):
        theta = [np.array([0.0, 1.0])]
        assert log_component_density([0], theta) == float("-inf")

    def test_arity_mismatch(self):
        with pytest.raises(ContractViolation):
            log_component_density([1, 0], [np.array([0.5, 0.5])])

    def test_level_out_of_range(self):
        with pytest.raises(ContractViolation):
            log_component_density([2], [np.array([0.5, 0.5])])


class TestLinkagePrior:
    def test_one_by_one_half_each(self):
        assert math.exp(log_prior_linkage(0, 1, 1, 1.0, 1.0)) == pytest.approx(0.5)
        assert math.exp(log_prior_linkage(1, 1, 1, 1.0, 1.0)) == pytest.approx(0.5)

    def test_one_by_two_quarters(self):
        assert math.exp(log_prior_linkage(0, 1, 2, 1.0, 1.0)) == pytest.approx(0.5)
        # each of the two single-link matchings carries mass 1/4
        assert math.exp(log_prior_linkage(1, 1, 2, 1.0, 1.0)) == pytest.approx(0.25)

    @pytest.mark.parametrize("alpha", [0.5, 1.0, 2.0])
    @pytest.mark.parametrize("beta", [0.5, 1.0, 2.0])
    def test_normalization_over_matchings(self, alpha, beta):
        for n1 in range(1, 5):
            for n2 in range(1, 5):
                total = sum(
                    math.exp(
                        log_prior_linkage(int((m >= 0).sum()), n1, n2, alpha, beta)
                    )
                    for m in enumerate_matchings(n1, n2)
                )
                assert total == pytest.approx(1.0, abs=1e-10)

    def test_orientation_symmetry(self):
        assert log_prior_linkage(2, 3, 5, 1.5, 0.7) == pytest.approx(
            log_prior_linkage(2, 5, 3, 1.5, 0.7)
        )

    def test_out_of_range_count(self):
        with pytest.raises(ContractViolation):
            log_prior_linkage(3, 2, 5, 1.0, 1.0)
        with pytest.raises(ContractViolation):
            log_prior_linkage(-1, 2, 5, 1.0, 1.0)

    def test_large_blocks_stable(self):
        v = log_prior_linkage(5000, 10_000, 10_000, 1.0, 1.0)
        assert np.isfinite(v)


def _one_pair_cube(block_agree=True, record_agree=True):
    f1 = make_blocked_file("f1", [(1,)], [[(1,)]])
    f2 = make_blocked_file(
        "f2", [(1 if block_agree else 2,)], [[(1 if record_agree else 2,)]]
    )
    return build_comparison_cube(f1, f2, binary_schema())


class TestJointLikelihood:
    def test_single_pair_hand_product(self):
        cube = _one_pair_cube()
        theta = binary_theta(p_bm=0.9, p_cm=0.8)
        b = BlockAssignment(np.array([0]))
        c = LinkageState({0: np.array([0], dtype=np.int64)})
        assert log_joint_likelihood(b, c, theta, cube) == pytest.approx(
            math.log(0.9) + math.log(0.8)
        )

    def test_uniform_theta_invariant_in_state(self, rng):
        _, _, cube = random_binary_instance(rng, 2, 3, 2, 2)
        theta = binary_theta(0.5, 0.5, 0.5, 0.5, 0.5)
        values = set()
        for perm in [(0, 1), (1, 2), (2, 0)]:
            b = BlockAssignment(np.array(perm))
            for rows0 in enumerate_matchings(2, 2)[:4]:
                c = LinkageState({0: rows0.copy(), 1: np.full(2, -1, dtype=np.int64)})
                values.add(round(log_joint_likelihood(b, c, theta, cube), 12))
        assert len(values) == 1

    def test_flip_changes_by_log_ratio(self, rng):
        f1, f2, cube = random_binary_instance(rng, 2, 2, 3, 3)
        theta = binary_theta()
        b = BlockAssignment(np.array([1, 0]))
        rows = np.array([0, -1, 2], dtype=np.int64)
        c1 = LinkageState({0: rows.copy(), 1: np.full(3, -1, dtype=np.int64)})
        rows2 = rows.copy()
        rows2[1] = 1
        c2 = LinkageState({0: rows2, 1: np.full(3, -1, dtype=np.int64)})
        lev = int(cube.record_levels(0, 1)[1, 1, 0])
        expected_delta = math.log(theta.theta_cm[0][lev]) - math.log(theta.theta_cu[0][lev])
        got = log_joint_likelihood(b, c2, theta, cube) - log_joint_likelihood(b, c1, theta, cube)
        assert got == pytest.approx(expected_delta, abs=1e-12)

    def test_inconsistent_state_rejected(self, rng):
        _, _, cube = random_binary_instance(rng, 2, 2, 2, 2)
        theta = binary_theta()
        b = BlockAssignment(np.array([0, 1]))
        with pytest.raises(ContractViolation):
            log_joint_likelihood(b, LinkageState({0: np.zeros(2, dtype=np.int64)}), theta, cube)
        bad = LinkageState({0: np.array([0, 0], dtype=np.int64), 1: np.full(2, -1, dtype=np.int64)})
        with pytest.raises(ContractViolation):
            log_joint_likelihood(b, bad, theta, cube)

    def test_noninjective_assignment_rejected(self, rng):
        _, _, cube = random_binary_instance(rng, 2, 2, 2, 2)
        with pytest.raises(ContractViolation):
            BlockAssignment(np.array([0, 0])).validate(2)


class TestTallies:
    def test_tally_counts_by_hand(self):
        # 1 linked pair, record 0 linked and agreeing; the other pair has 1 record each.
        f1 = make_blocked_file("f1", [(1,), (2,)], [[(1,), (2,)], [(5,)]])
        f2 = make_blocked_file("f2", [(1,), (3,)], [[(1,), (9,)], [(5,)]])
        cube = build_comparison_cube(f1, f2, binary_schema())
        b = BlockAssignment(np.array([0, 1]))
        c = LinkageState(
            {0: np.array([0, -1], dtype=np.int64), 1: np.full(1, -1, dtype=np.int64)}
        )
        counts = tally_class_counts(b, c, cube)
        assert counts["bm"][0].tolist() == [1, 1]     # (0,0) agrees, (1,1) disagrees
        assert counts["bu"][0].tolist() == [2, 0]
        assert counts["cm"][0].tolist() == [0, 1]
        # linked pairs hold 2x2 + 1x1 = 5 record pairs, one of them linked
        assert counts["cu"][0].sum() == 4
        # unlinked pairs (0,1) and (1,0) hold 2x1 and 1x2 record pairs
        assert counts["cnb"][0].sum() == 4

    def test_empty_class_zero_counts(self):
        f1 = make_blocked_file("f1", [(1,)], [[(1,)]])
        f2 = make_blocked_file("f2", [(1,)], [[(1,)]])
        cube = build_comparison_cube(f1, f2, binary_schema())
        b = BlockAssignment(np.array([0]))
        c = LinkageState({0: np.full(1, -1, dtype=np.int64)})
        counts = tally_class_counts(b, c, cube)
        assert counts["cm"][0].sum() == 0
        assert counts["bu"][0].sum() == 0
        assert counts["cnb"][0].sum() == 0


class TestSampleParameters:
    def test_conjugate_concentration_large_counts(self, rng):
        # 3 agreements in 5 comparisons scaled up: the posterior mean pins at
        # the empirical rate (law of large numbers smoke test).
        f1 = make_blocked_file("f1", [(1,)], [[(i,) for i in range(5)]])
        f2 = make_blocked_file("f2", [(1,)], [[(i,) for i in [0, 1, 2, 8, 9]]])
        cube = build_comparison_cube(f1, f2, binary_schema())
        b = BlockAssignment(np.array([0]))
        c = LinkageState({0: np.arange(5, dtype=np.int64)})
        counts = tally_class_counts(b, c, cube)
        assert counts["cm"][0].tolist() == [2, 3]  # Beta(1,1) -> Beta(4, 3)
        hyper = Hyperparams.uniform(cube.schema)
        draws = [
            sample_parameters(b, c, cube, hyper, np.random.default_rng(i)).theta_cm[0][1]
            for i in range(4000)
        ]
        assert np.mean(draws) == pytest.approx(4 / 7, abs=0.01)

    def test_lln_concentration(self, rng):
        f1 = make_blocked_file("f1", [(1,)], [[(1,)]])
        f2 = make_blocked_file("f2", [(1,)], [[(1,)]])
        cube = build_comparison_cube(f1, f2, binary_schema())
        hyper = Hyperparams(
            bm=[np.array([1.0, 1.0 + 1e6])],
            bu=[np.ones(2)],
            cm=[np.ones(2)],
            cu=[np.ones(2)],
            cnb=[np.ones(2)],
        )
        b = BlockAssignment(np.array([0]))
        c = LinkageState({0: np.full(1, -1, dtype=np.int64)})
        theta = sample_parameters(b, c, cube, hyper, rng)
        assert theta.theta_bm[0][1] == pytest.approx(1.0, abs=1e-2)

    def test_empty_class_draws_from_prior(self):
        f1 = make_blocked_file("f1", [(1,)], [[(1,)]])
        f2 = make_blocked_file("f2", [(1,)], [[(2,)]])
        cube = build_comparison_cube(f1, f2, binary_schema())
        b = BlockAssignment(np.array([0]))
        c = LinkageState({0: np.full(1, -1, dtype=np.int64)})  # no links: cm empty
        hyper = Hyperparams.uniform(cube.schema)
        draws = [
            sample_parameters(b, c, cube, hyper, np.random.default_rng(i)).theta_cm[0][1]
            for i in range(3000)
        ]
        # Beta(1,1) prior: mean 1/2, variance 1/12
        assert np.mean(draws) == pytest.approx(0.5, abs=0.03)
        assert np.var(draws) == pytest.approx(1 / 12, abs=0.01)

    def test_dirichlet_multilevel_update(self):
        from blocklink.comparison import ComparisonSchema, ComparisonSpec

        schema = ComparisonSchema(
            block=[ComparisonSpec("bv", "binary-exact")],
            record=[ComparisonSpec("dob", "ordinal-multilevel", levels=3)],
        )
        f1 = make_blocked_file("f1", [(1,)], [[("1980-05",), ("1981-02",), ("1990-01",)]])
        f2 = make_blocked_file("f2", [(1,)], [[("1980-05",), ("1981-03",), ("1985-01",)]])
        cube = build_comparison_cube(f1, f2, schema)
        b = BlockAssignment(np.array([0]))
        c = LinkageState({0: np.array([0, 1, 2], dtype=np.int64)})
        counts = tally_class_counts(b, c, cube)
        # links: exact ym agree (level 2), year-only (level 1), no agreement (level 0)
        assert counts["cm"][0].tolist() == [1, 1, 1]  # Dirichlet(1,1,1) -> (2,2,2)

    def test_draws_satisfy_simplex(self, rng):
        f1, f2, cube = random_binary_instance(rng, 2, 2, 2, 2)
        hyper = Hyperparams.uniform(cube.schema)
        b = BlockAssignment(np.array([1, 0]))
        c = LinkageState({s: np.full(2, -1, dtype=np.int64) for s in range(2)})
        for seed in range(50):
            theta = sample_parameters(b, c, cube, hyper, np.random.default_rng(seed))
            theta.validate()

    def test_hyperparams_positive(self):
        with pytest.raises(ContractViolation):
            Hyperparams(bm=[np.array([0.0, 1.0])], bu=[], cm=[], cu=[], cnb=[])
