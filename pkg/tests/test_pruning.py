import numpy as np
import pytest

import oracles
from conftest import random_model, random_tensor
from sparsetuck.model import init_random, reconstruct_many, reconstruction_error, residuals
from sparsetuck.pruning import (PruneSchedule, StopController, compute_core_responsibilities,
                                compute_factor_responsibilities, compute_responsibilities, elbow_statistic,
                                prune_count, prune_step, should_prune)
from sparsetuck.tensor import SparseTensor, build_mode_index


def setup(seed, dims=(8, 7, 6), ranks=(3, 3, 2), nnz=200, mask_frac=0.1):
    rng = np.random.default_rng(seed)
    m = random_model(dims, ranks, rng, mask_frac=mask_frac)
    t = random_tensor(dims, nnz, rng)
    return m, t, build_mode_index(t)


def close(got, want):
    return abs(got - want) <= 1e-8 * (1 + abs(want))


class TestResponsibility:
    @pytest.mark.parametrize("seed", range(4))
    def test_zero_out_oracle(self, seed, backend):
        m, t, idx = setup(seed)
        table = compute_responsibilities(m, t, idx, backend=backend)
        for b in np.ndindex(*m.ranks):
            if not m.core_mask[b]:
                want = oracles.zero_out_responsibility(m.core, m.factors, t.indices, t.values, "core", b)
                assert close(table.core_resp[b], want)
        for n in range(3):
            for pos in np.ndindex(*m.factors[n].shape):
                if not m.factor_masks[n][pos]:
                    want = oracles.zero_out_responsibility(m.core, m.factors, t.indices, t.values, n, pos)
                    assert close(table.factor_resp[n][pos], want)

    def test_table_consistency(self, backend):
        m, t, idx = setup(7)
        table = compute_responsibilities(m, t, idx, backend=backend)
        assert table.base_re >= 0
        assert table.base_re == pytest.approx(np.sqrt(np.sum(table.residuals ** 2)) / t.norm, abs=1e-12)

    def test_zero_elements_have_zero_resp(self, backend):
        m, t, idx = setup(2, mask_frac=0.3)
        table = compute_responsibilities(m, t, idx, backend=backend)
        assert np.all(np.abs(table.core_resp[m.core == 0]) <= 1e-12)
        for n in range(3):
            assert np.all(np.abs(table.factor_resp[n][m.factors[n] == 0]) <= 1e-12)

    def test_perfect_model_infinite(self, backend):
        m = init_random((3, 3, 3), (1, 1, 1), seed=0)
        t = SparseTensor(m.dims, np.array([[1, 1, 1]]), reconstruct_many(m, np.array([[1, 1, 1]])))
        r = residuals(m, t)
        assert np.all(np.isinf(compute_core_responsibilities(m, t, r, backend=backend)))
        assert np.all(np.isinf(compute_factor_responsibilities(m, t, build_mode_index(t), 0, r, backend=backend)))

    def test_overfit_element_negative(self, backend):
        # truth has a zero at factor_1[2, 1]; a spurious value there only hurts
        rng = np.random.default_rng(11)
        truth = random_model((6, 5, 4), (2, 2, 2), rng)
        truth.factors[0][2, 1] = 0.0
        full = np.stack(np.unravel_index(np.arange(120), truth.dims), axis=1)
        t = SparseTensor(truth.dims, full, reconstruct_many(truth, full) + 0.01 * rng.standard_normal(120))
        m = truth.copy()
        m.factors[0][2, 1] = 0.8
        resp = compute_factor_responsibilities(m, t, build_mode_index(t), 0, residuals(m, t), backend=backend)
        want = oracles.zero_out_responsibility(m.core, m.factors, t.indices, t.values, 0, (2, 1))
        assert want < 0 and resp[2, 1] < 0 and close(resp[2, 1], want)


class TestPruneStep:
    def _table(self, m, t, idx):
        return compute_responsibilities(m, t, idx)

    def test_zero_rate_noop(self):
        m, t, idx = setup(0, mask_frac=0.0)
        before = m.factor_buffer.copy()
        assert prune_step(m, self._table(m, t, idx), 0.0) == {"core": 0, "factors": [0, 0, 0]}
        np.testing.assert_array_equal(before, m.factor_buffer)

    def test_quarter_of_eight(self):
        m, t, idx = setup(0, ranks=(2, 2, 2), mask_frac=0.0)
        counts = prune_step(m, self._table(m, t, idx), 0.25)
        assert counts["core"] == 2 and m.core_mask.sum() == 2
        assert counts["factors"] == [prune_count(0.25, a.size) for a in m.factors]

    def test_count_floor_guard(self):
        assert prune_count(0.29, 100) == 29
        assert prune_count(0.1, 8) == 0
        assert prune_count(0.07, 100) == 7

    @pytest.mark.parametrize("seed", range(4))
    def test_bottom_k_of_oracle_ranking(self, seed):
        m, t, idx = setup(seed)
        pr = 0.2
        expect_core = []
        cand = [b for b in np.ndindex(*m.ranks) if not m.core_mask[b]]
        scores = [oracles.zero_out_responsibility(m.core, m.factors, t.indices, t.values, "core", b) for b in cand]
        order = sorted(range(len(cand)), key=lambda k: (scores[k], np.ravel_multi_index(cand[k], m.ranks)))
        expect_core = {cand[k] for k in order[:prune_count(pr, m.core.size)]}
        old_mask = m.core_mask.copy()
        old_fmask = m.factor_mask_buffer.copy()
        prune_step(m, self._table(m, t, idx), pr)
        new = {b for b in np.ndindex(*m.ranks) if m.core_mask[b] and not old_mask[b]}
        assert new == expect_core
        assert np.all(m.core[m.core_mask] == 0) and np.all(m.factor_buffer[m.factor_mask_buffer == 1] == 0)
        # masks monotone
        assert np.all(m.factor_mask_buffer >= old_fmask) and np.all(m.core_mask >= old_mask)

    def test_ties_by_linear_index(self):
        m = init_random((4, 4), (2, 2), seed=0)
        from sparsetuck.model import ResponsibilityTable
        table = ResponsibilityTable(np.zeros(1), np.zeros((2, 2)), [np.zeros((4, 2)), np.zeros((4, 2))], 0.5)
        prune_step(m, table, 0.5)
        np.testing.assert_array_equal(m.core_mask.reshape(-1), [True, True, False, False])
        np.testing.assert_array_equal(m.factor_masks[0].reshape(-1), [True] * 4 + [False] * 4)

    def test_fewer_candidates_than_requested(self):
        m, t, idx = setup(1, ranks=(2, 2, 2), mask_frac=0.0)
        m.core_mask.reshape(-1)[:7] = True
        m.apply_masks()
        counts = prune_step(m, self._table(m, t, idx), 0.5)
        assert counts["core"] == 1 and m.core_mask.all()

    def test_pruning_zero_element_keeps_re(self):
        m, t, idx = setup(3, mask_frac=0.0)
        m.factors[1][0, 0] = 0.0
        re0 = reconstruction_error(m, t)
        m.factor_masks[1][0, 0] = True
        m.apply_masks()
        assert reconstruction_error(m, t) == pytest.approx(re0, abs=1e-12)


class TestSchedule:
    def test_defaults(self):
        s = PruneSchedule()
        got = [s.rate(t) for t in range(1, 16)]
        assert got == [min(0.01 * t, 0.1) for t in range(1, 16)]
        assert got[-1] == 0.1 and all(a <= b for a, b in zip(got, got[1:]))

    @pytest.mark.parametrize("bad", [(0.0, 0.1), (0.2, 0.1), (0.1, 1.0)])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            PruneSchedule(*bad)


class TestStopControl:
    def test_manual_threshold(self):
        assert should_prune(StopController("manual", 0.6), 0.59)
        assert not should_prune(StopController("manual", 0.6), 0.60)

    def test_manual_latches(self):
        c = StopController("manual", 0.6)
        assert not should_prune(c, 0.7)
        assert not should_prune(c, 0.1)

    def test_auto_flat_never_triggers(self):
        c = StopController("auto")
        h = []
        for _ in range(50):
            h.append((0.10, 0.05))
            assert should_prune(c, 0.0, h)
        assert elbow_statistic(h) == 0.0

    def test_auto_elbow(self):
        h = [(0.10, 0.05), (0.11, 0.05), (0.20, 0.05)]
        assert elbow_statistic(h) == pytest.approx(1.6)
        c = StopController("auto")
        assert should_prune(c, 0.0, h[:1]) and should_prune(c, 0.0, h[:2])
        assert not should_prune(c, 0.0, h)
        assert not should_prune(c, 0.0, h + [(0.1, 0.05)] * 3)

    def test_needs_three_samples(self):
        assert elbow_statistic([(0.1, 0.1), (5.0, 0.1)]) is None

    def test_invalid(self):
        with pytest.raises(ValueError):
            StopController("sometimes")
        with pytest.raises(ValueError):
            StopController("manual", 1.0)
