"""Pseudo-score selection: coins, operators, and invariance of the choice."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import make_synthetic_data, random_pairs, swap_inference_pairs
from scq.conformal import ConformalP, RejectionSet, pairs_from_values
from scq.errors import AllCandidatesFailed, ConfigError
from scq.modelselect import (
    CoinStream,
    Toolbox,
    preliminary_partition,
    pseudo_scores,
    ptams,
    ptams_plus,
)
from scq.pipeline import WeightConfig, run_scq
from scq.scoring import ClassifierSpec


def cp(num, n):
    return ConformalP(numerator=num, n_cal=n)


TOOLBOX = Toolbox(
    candidates=(
        ClassifierSpec("OCC", "gaussian"),
        ClassifierSpec("OCC", "knn"),
        ClassifierSpec("PUC", "kde-ratio"),
    )
)


class TestCoinStream:
    def test_deterministic(self):
        a = CoinStream(seed=99).bits(1000)
        b = CoinStream(seed=99).bits(1000)
        np.testing.assert_array_equal(a, b)

    def test_stable_under_m_changes(self):
        short = CoinStream(seed=5).bits(10)
        long = CoinStream(seed=5).bits(1000)
        np.testing.assert_array_equal(short, long[:10])

    def test_roughly_balanced(self):
        bits = CoinStream(seed=0).bits(100_000)
        assert 0.49 < bits.mean() < 0.51

    def test_consumes_only_seed_and_index(self):
        # the derivation has no data inputs at all; two different datasets
        # at the same seed necessarily share every coin
        coins = CoinStream(seed=7)
        data_a = make_synthetic_data(m=30, p=2, mu=1.0, seed=1)
        data_b = make_synthetic_data(m=30, p=2, mu=9.0, seed=2)
        assert data_a.test.features.sum() != data_b.test.features.sum()
        np.testing.assert_array_equal(coins.bits(30), coins.bits(30))

    def test_seeds_differ(self):
        assert CoinStream(seed=1).bits(64).tolist() != CoinStream(seed=2).bits(64).tolist()


class TestPreliminaryPartition:
    def test_all_ones_empty(self):
        ones = [cp(10, 9)] * 4
        assert len(preliminary_partition(ones, ones, 0.1)) == 0

    def test_single_strong_unit(self):
        # m=5, smallest possible p-value 1/100 <= alpha0/m = 0.02
        p = [cp(1, 99)] + [cp(100, 99)] * 4
        pt = [cp(100, 99)] * 5
        rej = preliminary_partition(p, pt, 0.1)
        assert rej.sorted() == [1]

    def test_swap_every_pair_identical(self):
        rng = np.random.default_rng(0)
        p = [cp(int(k), 19) for k in rng.integers(1, 21, size=12)]
        pt = [cp(int(k), 19) for k in rng.integers(1, 21, size=12)]
        a = preliminary_partition(p, pt, 0.2)
        b = preliminary_partition(pt, p, 0.2)
        assert a.indices == b.indices


class TestPseudoScores:
    def test_min_max_on_preliminary(self):
        pairs = pairs_from_values([0.3], [0.1])
        prelim = RejectionSet(indices={1}, alpha=0.1)
        u, ut = pseudo_scores(pairs, prelim, CoinStream(seed=0))
        assert (u[0], ut[0]) == (0.1, 0.3)

    def test_coin_branch_orients_pair(self):
        pairs = pairs_from_values([0.3], [0.1])
        empty = RejectionSet(indices=set(), alpha=0.1)
        # find seeds for both coin outcomes at unit 1
        seed_one = next(s for s in range(100) if CoinStream(seed=s).bits(1)[0] == 1)
        seed_zero = next(s for s in range(100) if CoinStream(seed=s).bits(1)[0] == 0)
        u, ut = pseudo_scores(pairs, empty, CoinStream(seed=seed_one))
        assert (u[0], ut[0]) == (0.1, 0.3)
        u, ut = pseudo_scores(pairs, empty, CoinStream(seed=seed_zero))
        assert (u[0], ut[0]) == (0.3, 0.1)

    @settings(max_examples=100, deadline=None)
    @given(
        st.integers(min_value=1, max_value=40),
        st.integers(min_value=0, max_value=2**32 - 1),
    )
    def test_multiset_identity(self, m, seed):
        rng = np.random.default_rng(seed)
        pairs = random_pairs(rng, m)
        prelim_ids = {int(j) for j in np.flatnonzero(rng.random(m) < 0.3) + 1}
        prelim = RejectionSet(indices=prelim_ids, alpha=0.1)
        u, ut = pseudo_scores(pairs, prelim, CoinStream(seed=seed))
        for pr, a, b in zip(pairs, u, ut):
            assert {a, b} == {pr.v, pr.v_tilde}

    def test_swap_invariance_fixed_coins(self):
        rng = np.random.default_rng(1)
        m = 30
        pairs = random_pairs(rng, m)
        swapped = [
            pairs_from_values([pr.v_tilde], [pr.v])[0] if s else pr
            for pr, s in zip(pairs, rng.random(m) < 0.5)
        ]
        swapped = pairs_from_values(
            [pr.v for pr in swapped], [pr.v_tilde for pr in swapped]
        )
        prelim = RejectionSet(indices={1, 5}, alpha=0.1)
        coins = CoinStream(seed=3)
        u1, ut1 = pseudo_scores(pairs, prelim, coins)
        u2, ut2 = pseudo_scores(swapped, prelim, coins)
        np.testing.assert_array_equal(u1, u2)
        np.testing.assert_array_equal(ut1, ut2)


class TestPtams:
    def test_single_candidate_matches_plain_run(self):
        data = make_synthetic_data(m=60, p=3, mu=3.0, seed=4)
        toolbox = Toolbox(candidates=(ClassifierSpec("OCC", "kde"),))
        trace, result = ptams(toolbox, data, alpha=0.1, coins=CoinStream(seed=8))
        plain = run_scq(data, ClassifierSpec("OCC", "kde"), WeightConfig(), alpha=0.1)
        assert trace.selected == 1
        assert result.rejection.indices == plain.rejection.indices
        np.testing.assert_array_equal(result.qvalues.q, plain.qvalues.q)

    def test_selection_swap_invariant(self):
        coins = CoinStream(seed=11)
        for inst in range(5):
            data = make_synthetic_data(m=50, p=3, mu=2.0, seed=100 + inst)
            trace0, _ = ptams(TOOLBOX, data, alpha=0.1, coins=coins)
            rng = np.random.default_rng(inst)
            for _ in range(8):
                ids = [int(j) for j in np.flatnonzero(rng.random(50) < 0.5) + 1]
                swapped = swap_inference_pairs(data, ids)
                trace1, _ = ptams(TOOLBOX, swapped, alpha=0.1, coins=coins)
                assert trace1.selected == trace0.selected
                assert [r.r_k for r in trace1.records] == [r.r_k for r in trace0.records]

    def test_failed_candidate_excluded(self):
        data = make_synthetic_data(m=40, p=2, mu=3.0, seed=5)
        toolbox = Toolbox(
            candidates=(
                ClassifierSpec("BIC", "logistic"),  # no labeled outliers: fails
                ClassifierSpec("OCC", "gaussian"),
            )
        )
        trace, _ = ptams(toolbox, data, alpha=0.1, coins=CoinStream(seed=0))
        assert trace.records[0].r_k == -1
        assert trace.records[0].error
        assert trace.selected == 2

    def test_all_candidates_failed(self):
        data = make_synthetic_data(m=20, p=2, mu=1.0, seed=6)
        toolbox = Toolbox(candidates=(ClassifierSpec("BIC", "knn"),))
        with pytest.raises(AllCandidatesFailed):
            ptams(toolbox, data, alpha=0.1, coins=CoinStream(seed=0))

    def test_tie_breaks_to_smallest_index(self):
        data = make_synthetic_data(m=30, p=2, mu=0.1, seed=7)
        toolbox = Toolbox(
            candidates=(ClassifierSpec("OCC", "kde"), ClassifierSpec("OCC", "kde"))
        )
        trace, _ = ptams(toolbox, data, alpha=0.05, coins=CoinStream(seed=1))
        assert trace.records[0].r_k == trace.records[1].r_k
        assert trace.selected == 1
        assert trace.tie_rule_applied

    def test_alpha0_default_validation(self):
        data = make_synthetic_data(m=20, p=2, mu=1.0, seed=8)
        toolbox = Toolbox(candidates=(ClassifierSpec("OCC", "gaussian"),))
        with pytest.raises(ConfigError, match="alpha0"):
            ptams(toolbox, data, alpha=0.6, coins=CoinStream(seed=0))


class TestPtamsPlus:
    def test_singleton_grid_matches_ptams(self):
        data = make_synthetic_data(m=60, p=3, mu=3.0, seed=9)
        coins = CoinStream(seed=2)
        trace_a, result_a = ptams(TOOLBOX, data, alpha=0.1, coins=coins)
        trace_b, lam, result_b = ptams_plus(
            TOOLBOX, data, alpha=0.1, coins=coins, lambda_grid=[0.1]
        )
        assert lam == 0.1
        assert trace_b.selected == trace_a.selected
        assert result_b.rejection.indices == result_a.rejection.indices
        np.testing.assert_array_equal(result_b.qvalues.q, result_a.qvalues.q)

    def test_lambda_star_swap_invariant(self):
        coins = CoinStream(seed=21)
        data = make_synthetic_data(m=50, p=3, mu=2.5, seed=22)
        _, lam0, _ = ptams_plus(
            TOOLBOX, data, alpha=0.1, coins=coins, lambda_grid=[0.05, 0.1, 0.3]
        )
        rng = np.random.default_rng(23)
        for _ in range(5):
            ids = [int(j) for j in np.flatnonzero(rng.random(50) < 0.5) + 1]
            _, lam1, _ = ptams_plus(
                TOOLBOX,
                swap_inference_pairs(data, ids),
                alpha=0.1,
                coins=coins,
                lambda_grid=[0.05, 0.1, 0.3],
            )
            assert lam1 == lam0

    def test_empty_grid_rejected(self):
        data = make_synthetic_data(m=20, p=2, mu=1.0, seed=10)
        with pytest.raises(ConfigError):
            ptams_plus(TOOLBOX, data, alpha=0.1, coins=CoinStream(seed=0), lambda_grid=[])

    def test_null_only_rejects_nothing(self):
        from scq.datamodel import InferenceData, SyntheticConfig, generate_hierarchical, split_nulls

        cfg = SyntheticConfig(
            m=60, p=2, sparsity_blocks=(), background_pi=0.0,
            alt_components=(), null_pool_size=110,
        )
        empty_runs = 0
        for seed in range(100):
            ss = np.random.SeedSequence([31, seed])
            g, s = ss.spawn(2)
            pool, test = generate_hierarchical(cfg, np.random.default_rng(g))
            split = split_nulls(pool, test.m, np.random.default_rng(s))
            data = InferenceData(split=split, test=test)
            _, _, result = ptams_plus(
                TOOLBOX, data, alpha=0.05, coins=CoinStream(seed=seed),
                lambda_grid=[0.1, 0.5, 0.9],
            )
            empty_runs += len(result.rejection) == 0
        assert empty_runs >= 99
