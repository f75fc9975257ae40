import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sssa.attention import (
    AttentionConfig,
    attend,
    cro_att,
    cross_entropy_relevance,
    learned_thresholds,
    ordering_oracle,
    patch_salience,
    spike_sum,
    ssa_baseline,
    sssa_v1,
    sssa_v2,
)
from sssa.neurons import ParameterError, SaccadicParams
from sssa.ops import OpCounter
from sssa.tensor import DomainError, ShapeError
from sssa.verify import constant_alpha_instance, verify_v1_v2

# hand-traced T=1, N=2, D=2 instance
Q = np.array([[[1, 1], [0, 1]]])
K = np.array([[[1, 0], [1, 1]]])
V = np.array([[[1, 0], [0, 1]]])


def rand_spikes(gen, shape, p=0.3):
    return (gen.random(shape) < p).astype(np.uint8)


class TestRelevance:
    def test_spike_sum(self):
        np.testing.assert_array_equal(spike_sum([[[1, 0, 1], [0, 0, 0]]]), [[2, 0]])
        np.testing.assert_array_equal(spike_sum(np.ones((1, 2, 4))), [[4, 4]])
        assert not spike_sum(np.zeros((2, 3, 4))).any()

    def test_spike_sum_rank(self):
        with pytest.raises(ShapeError):
            spike_sum(np.zeros((3, 4)))

    def test_cross_entropy_value(self):
        assert cross_entropy_relevance([1, 0, 1, 0], [1, 0, 0, 0]) == pytest.approx(0.836988, abs=1e-6)

    def test_cross_entropy_formula(self):
        # independent evaluation with natural logs
        expect = -(0.5 * math.log(0.25) + 0.5 * math.log(0.75))
        assert cross_entropy_relevance([1, 1, 0, 0], [0, 0, 0, 1]) == pytest.approx(expect, rel=1e-12)

    def test_self_entropy(self):
        assert cross_entropy_relevance([1, 0], [0, 1]) == pytest.approx(math.log(2), abs=1e-9)

    def test_clamped(self):
        v = cross_entropy_relevance([1, 0], [0, 0])
        assert math.isfinite(v) and v > 10
        assert v <= -0.5 * math.log(1e-12) + 1e-6

    def test_cro_att(self):
        np.testing.assert_array_equal(cro_att([[2, 0]], [[2, 1]]), [[[4, 2], [0, 0]]])
        np.testing.assert_array_equal(cro_att([[2, 1]], [[1, 2]]), [[[2, 4], [1, 2]]])
        assert not cro_att(np.zeros((1, 3)), [[1, 2, 3]]).any()

    def test_cro_att_shape(self):
        with pytest.raises(ShapeError):
            cro_att(np.zeros((1, 2)), np.zeros((1, 3)))

    def test_patch_salience(self):
        np.testing.assert_array_equal(patch_salience([[[4, 2], [0, 0]]]), [[6, 0]])
        np.testing.assert_array_equal(patch_salience([[[2, 4], [1, 2]]]), [[6, 3]])
        assert not patch_salience(np.zeros((2, 3, 3))).any()

    def test_salience_is_times_ones(self):
        cro = np.random.default_rng(0).integers(0, 9, size=(3, 4, 4)).astype(float)
        np.testing.assert_array_equal(patch_salience(cro), cro @ np.ones(4))

    def test_count_only_dependence(self):
        gen = np.random.default_rng(5)
        q, k = rand_spikes(gen, (2, 3, 8)), rand_spikes(gen, (2, 3, 8))
        # shuffle which positions fire inside every token; counts are unchanged
        q2 = np.stack([[gen.permutation(tok) for tok in step] for step in q])
        k2 = np.stack([[gen.permutation(tok) for tok in step] for step in k])
        np.testing.assert_array_equal(cro_att(spike_sum(q), spike_sum(k)), cro_att(spike_sum(q2), spike_sum(k2)))

    def test_integer_exactness(self):
        gen = np.random.default_rng(6)
        q, k = rand_spikes(gen, (3, 5, 7)), rand_spikes(gen, (3, 5, 7))
        patch = patch_salience(cro_att(spike_sum(q), spike_sum(k)))
        np.testing.assert_array_equal(patch, np.round(patch))


class TestV1:
    def test_hand_trace(self):
        out = sssa_v1(Q, K, V, SaccadicParams([[1.0]], [4.0]))
        np.testing.assert_array_equal(out.spikes, [[1, 0]])
        np.testing.assert_array_equal(out.masked_v, [[[1, 0], [0, 0]]])

    def test_silent_query(self):
        gen = np.random.default_rng(1)
        k, v = rand_spikes(gen, (2, 3, 4)), rand_spikes(gen, (2, 3, 4))
        out = sssa_v1(np.zeros((2, 3, 4)), k, v, SaccadicParams(np.eye(2), [1.0, 1.0]))
        assert not out.spikes.any() and not out.masked_v.any()

    def test_always_fire(self):
        gen = np.random.default_rng(2)
        q, k, v = (rand_spikes(gen, (2, 3, 4)) for _ in range(3))
        out = sssa_v1(q, k, v, SaccadicParams(np.eye(2), [-1.0, -1.0]))
        np.testing.assert_array_equal(out.masked_v, v)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            sssa_v1(Q, K[:, :1], V, SaccadicParams([[1.0]], [4.0]))

    def test_params_timesteps(self):
        with pytest.raises(ShapeError):
            sssa_v1(Q, K, V, SaccadicParams(np.eye(2), [1.0, 1.0]))


class TestV2:
    def test_computed_hand_trace(self):
        out = sssa_v2(Q, K, V, SaccadicParams([[1.0]], [4.0]), mode="computed")
        np.testing.assert_array_equal(out.spikes, [[1, 0]])
        np.testing.assert_array_equal(out.masked_v, [[[1, 0], [0, 0]]])

    def test_learned_identity(self):
        gen = np.random.default_rng(3)
        q, k, v = (rand_spikes(gen, (3, 4, 5)) for _ in range(3))
        v_th = np.array([1.0, 2.0, 3.0])
        out = sssa_v2(q, k, v, SaccadicParams(np.eye(3), v_th, alpha=1.0), mode="learned")
        np.testing.assert_array_equal(out.spikes, (spike_sum(q) >= v_th[:, None]).astype(np.uint8))

    def test_learned_thresholds(self):
        p = SaccadicParams([[1.0, 0.0], [0.5, 1.0]], [1.5, 3.5], alpha=2.0)
        np.testing.assert_allclose(learned_thresholds(p), [0.75, 1.375])

    def test_learned_alpha_positive(self):
        with pytest.raises(ParameterError):
            sssa_v2(Q, K, V, SaccadicParams([[1.0]], [1.0], alpha=-1.0), mode="learned")

    def test_learned_no_mac(self):
        gen = np.random.default_rng(4)
        q, k, v = (rand_spikes(gen, (4, 6, 8)) for _ in range(3))
        c = OpCounter()
        sssa_v2(q, k, v, SaccadicParams(np.tril(np.ones((4, 4))), np.ones(4), alpha=3.0), "learned", c)
        assert c.mac == 0 and c.ac > 0 and c.cmp == 4 * 6

    def test_constant_alpha_matches_v1(self):
        assert verify_v1_v2(200, seed=11).ok

    def test_single_step_matches_v1(self):
        assert verify_v1_v2(200, seed=12, single_step=True).ok

    def test_varying_alpha_can_differ(self):
        # alpha = [1, 3]: m_w diag(alpha) Q' != diag(alpha) m_w Q'
        q = np.array([[[1, 0]], [[1, 0]]])
        k = np.array([[[1, 0]], [[1, 1]]])
        k = np.concatenate([k, np.array([[[0, 0]], [[1, 0]]])], axis=1)
        q = np.concatenate([q, np.zeros((2, 1, 2), dtype=int)], axis=1)
        v = np.ones_like(q)
        p = SaccadicParams([[1.0, 0.0], [1.0, 1.0]], [1.0, 4.5])
        a, b = sssa_v1(q, k, v, p), sssa_v2(q, k, v, p, "computed")
        # V1 mixes salience 1 and 3 -> 4 < 4.5; V2 scales mixed count 2 by 3 -> 6
        assert a.spikes[1, 0] == 0 and b.spikes[1, 0] == 1

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            sssa_v2(Q, K, V, SaccadicParams([[1.0]], [1.0]), mode="bogus")


class TestSSA:
    def test_hand(self):
        np.testing.assert_array_equal(ssa_baseline(Q, K, V), [[[1, 2], [0, 1]]])

    def test_zero_query(self):
        assert not ssa_baseline(np.zeros((1, 2, 2)), K, V).any()

    def test_identity_pattern(self):
        eye = np.eye(3, dtype=np.uint8)[None]
        v = np.random.default_rng(0).integers(0, 2, (1, 3, 3))
        np.testing.assert_array_equal(ssa_baseline(eye, eye, v), v)

    def test_counts(self):
        c = OpCounter()
        ssa_baseline(np.zeros((2, 3, 4)), np.zeros((2, 3, 4)), np.zeros((2, 3, 4)), c)
        assert c.mac == 2 * 2 * 9 * 4


class TestProperties:
    @given(st.integers(0, 100_000))
    @settings(max_examples=40, deadline=None)
    def test_mask_semantics(self, seed):
        gen = np.random.default_rng(seed)
        q, k, v, p = constant_alpha_instance(gen)
        for out in (sssa_v1(q, k, v, p), sssa_v2(q, k, v, p, "computed"), sssa_v2(q, k, v, p, "learned")):
            assert set(np.unique(out.spikes)) <= {0, 1}
            assert np.all(out.masked_v <= v)
            on = out.spikes.astype(bool)
            np.testing.assert_array_equal(out.masked_v[on], v[on])
            assert not out.masked_v[~on].any()

    @given(st.integers(0, 100_000))
    @settings(max_examples=40, deadline=None)
    def test_permutation_equivariance(self, seed):
        gen = np.random.default_rng(seed)
        q, k, v, p = constant_alpha_instance(gen)
        perm = gen.permutation(q.shape[1])
        for fn in (lambda *a: sssa_v1(*a, p), lambda *a: sssa_v2(*a, p, "computed")):
            a, b = fn(q, k, v), fn(q[:, perm], k[:, perm], v[:, perm])
            np.testing.assert_array_equal(a.spikes[:, perm], b.spikes)
            np.testing.assert_array_equal(a.masked_v[:, perm], b.masked_v)

    def test_counter_conservation(self):
        gen = np.random.default_rng(8)
        q, k, v = (rand_spikes(gen, (3, 5, 6)) for _ in range(3))
        p = SaccadicParams(np.tril(np.ones((3, 3))), np.ones(3) * 20)
        total = OpCounter()
        out = sssa_v1(q, k, v, p, total)
        parts = OpCounter()
        qs, ks = spike_sum(q, parts), spike_sum(k, parts)
        patch = patch_salience(cro_att(qs, ks, parts), parts)
        parts.add(mac=3 * 4 // 2 * 5, cmp=patch.size)
        assert total == parts == out.counters


class TestAttend:
    def test_dispatch(self):
        p = SaccadicParams([[1.0]], [4.0])
        cfg = AttentionConfig(1, 2, 2, "v1")
        np.testing.assert_array_equal(attend(cfg, Q, K, V, p).spikes, [[1, 0]])
        assert attend(AttentionConfig(1, 2, 2, "ssa"), Q, K, V).shape == (1, 2, 2)

    def test_needs_params(self):
        with pytest.raises(ParameterError):
            attend(AttentionConfig(1, 2, 2, "v2"), Q, K, V)

    @pytest.mark.parametrize("kw", [{"t_steps": 0, "n_tokens": 1, "d_model": 1}, {"t_steps": 1, "n_tokens": 1, "d_model": 1, "variant": "x"}])
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            AttentionConfig(**kw)


class TestOrdering:
    def test_brute_force(self):
        # every subset (size <= 5) of distinct key rates at D = 8
        d = 8
        q = np.array([1, 1, 0, 1, 0, 0, 0, 0])
        keys = [np.array([1] * c + [0] * (d - c)) for c in range(1, d)]
        for size in range(1, 6):
            for combo in itertools.combinations(keys, size):
                res = ordering_oracle(q, list(combo))
                assert res.agree and not res.degenerate

    def test_single_key(self):
        assert ordering_oracle([1, 0], [[0, 1]]).agree

    def test_zero_query_degenerate(self):
        res = ordering_oracle([0, 0, 0], [[1, 0, 0], [1, 1, 0]])
        assert res.degenerate
        assert res.full_ranking == res.simplified_ranking == (0, 1)

    def test_saturated_key_rejected(self):
        with pytest.raises(DomainError):
            ordering_oracle([1, 0], [[1, 1]])
