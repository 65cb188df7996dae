"""Tests for the fingerprint pool and the gated frozen-MLP attunement."""

import numpy as np
import numpy.testing as npt
import pytest
from scipy.special import ndtr

from streamfp.fingerprints import (
    AttunementParams,
    FingerprintPool,
    aggregate,
    attune,
    attune_backward,
    gate_forward,
    load_mlp_weights,
    save_mlp_weights,
)
from streamfp.seeding import substream


def identity_params(dim, num_experts, gate=None):
    eye = np.stack([np.eye(dim)] * num_experts)
    if gate is None:
        gate = np.zeros((dim, num_experts))
    return AttunementParams(gate, eye.copy(), eye.copy())


class TestFingerprintPool:
    def test_validation(self):
        with pytest.raises(ValueError):
            FingerprintPool(np.zeros((2, 3)))  # not rank 3
        with pytest.raises(ValueError):
            FingerprintPool(np.zeros((2, 3, 4)))  # odd length
        with pytest.raises(ValueError):
            FingerprintPool(np.zeros((0, 2, 4)))  # no fingerprints
        with pytest.raises(ValueError):
            FingerprintPool(np.full((1, 2, 2), np.nan))

    def test_properties(self):
        pool = FingerprintPool(np.zeros((3, 4, 5)))
        assert (pool.count, pool.length, pool.dim) == (3, 4, 5)

    def test_init_random_scale(self):
        pool = FingerprintPool.init_random(50, 4, 20, substream(1, "p"))
        assert abs(pool.weights.std() - 0.02) < 0.002


class TestAggregate:
    def test_zero_pool(self):
        pool = FingerprintPool(np.zeros((2, 4, 3)))
        npt.assert_array_equal(aggregate(pool), np.zeros((2, 3)))

    def test_cancellation(self):
        u = np.array([1.0, -2.0, 3.0])
        pool = FingerprintPool(np.stack([u, -u])[None, :, :])
        npt.assert_allclose(aggregate(pool), np.zeros((1, 3)), atol=1e-15)

    def test_hand_sum(self):
        pool = FingerprintPool(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
        npt.assert_array_equal(aggregate(pool), [[4.0, 6.0]])


class TestGateForward:
    def test_zero_gate_uniform(self):
        pool = FingerprintPool.init_random(4, 2, 5, substream(2, "g"))
        mix, _ = gate_forward(pool, identity_params(5, 3))
        npt.assert_allclose(mix, 1.0 / 3.0, atol=1e-12)

    def test_single_expert_collapse(self):
        rng = substream(3, "g")
        pool = FingerprintPool.init_random(6, 2, 4, rng)
        params = AttunementParams.init_random(4, 3, rng)
        mix, idx = gate_forward(pool, params, r_select=1)
        npt.assert_allclose(mix, 1.0, atol=1e-12)
        pooled = pool.weights.mean(axis=1)
        scores = pooled @ params.gate
        npt.assert_array_equal(idx[:, 0], scores.argmax(axis=1))

    def test_hand_softmax_top2(self):
        # scores per fingerprint = pooled @ gate = [2, 1, 0]
        pool = FingerprintPool(np.array([[[1.0], [3.0]]]))  # pooled = [2]
        params = identity_params(1, 3, gate=np.array([[1.0, 0.5, 0.0]]))
        mix, idx = gate_forward(pool, params, r_select=2)
        npt.assert_array_equal(idx, [[0, 1]])
        npt.assert_allclose(mix, [[0.7310585786300049, 0.2689414213699951]],
                            atol=1e-10)

    def test_rows_sum_to_one(self):
        rng = substream(4, "g")
        pool = FingerprintPool.init_random(7, 4, 6, rng)
        params = AttunementParams.init_random(6, 5, rng, gate_scale=0.5)
        mix, _ = gate_forward(pool, params, r_select=3)
        npt.assert_allclose(mix.sum(axis=1), 1.0, atol=1e-12)

    def test_r_select_out_of_range(self):
        pool = FingerprintPool.init_random(2, 2, 3, substream(5, "g"))
        with pytest.raises(ValueError):
            gate_forward(pool, identity_params(3, 2), r_select=3)


class TestAttune:
    def test_identity_experts_large_input(self):
        # gelu is the identity on large positives, so identity K/V experts
        # pass the tokens through (gate weights sum to 1)
        pool = FingerprintPool(np.full((2, 2, 3), 25.0))
        out = attune(pool, identity_params(3, 3))
        npt.assert_allclose(out, pool.weights, atol=1e-6)

    def test_zero_pool_maps_to_zero(self):
        pool = FingerprintPool(np.zeros((3, 2, 4)))
        rng = substream(6, "a")
        params = AttunementParams.init_random(4, 3, rng)
        npt.assert_allclose(attune(pool, params), 0.0, atol=1e-15)

    def test_hand_single_expert(self):
        # N=1, L_p=2, D=1, R=1, W_K=[[2]], W_V=[[3]], token [1]
        # -> 3 * gelu(2) = 6 * Phi(2)
        pool = FingerprintPool(np.array([[[1.0], [1.0]]]))
        params = AttunementParams(np.zeros((1, 1)), np.array([[[2.0]]]),
                                  np.array([[[3.0]]]))
        out = attune(pool, params)
        expected = 6.0 * ndtr(2.0)
        npt.assert_allclose(out, expected, atol=1e-12)
        assert out[0, 0, 0] == pytest.approx(5.863499208310924, abs=1e-9)

    def test_shape_preserved(self):
        rng = substream(7, "a")
        pool = FingerprintPool.init_random(5, 4, 6, rng)
        params = AttunementParams.init_random(6, 3, rng)
        assert attune(pool, params).shape == (5, 4, 6)

    def test_fingerprint_permutation_equivariance(self):
        rng = substream(8, "a")
        pool = FingerprintPool(rng.standard_normal((4, 2, 5)))
        params = AttunementParams.init_random(5, 3, rng, gate_scale=0.5)
        out = attune(pool, params)
        perm = np.array([2, 0, 3, 1])
        out_perm = attune(FingerprintPool(pool.weights[perm]), params)
        npt.assert_allclose(out_perm, out[perm], atol=1e-12)

    def test_dim_mismatch(self):
        pool = FingerprintPool.init_random(2, 2, 3, substream(9, "a"))
        with pytest.raises(ValueError):
            attune(pool, identity_params(4, 2))


class TestFrozenWeights:
    def test_mlp_bank_is_write_protected(self):
        params = AttunementParams.init_random(4, 2, substream(10, "f"))
        with pytest.raises(ValueError):
            params.keys[0, 0, 0] = 1.0
        with pytest.raises(ValueError):
            params.values[0, 0, 0] = 1.0

    def test_bit_identical_across_calls(self):
        rng = substream(11, "f")
        pool = FingerprintPool(rng.standard_normal((3, 2, 4)))
        params = AttunementParams.init_random(4, 3, rng)
        before = (params.keys.tobytes(), params.values.tobytes())
        for _ in range(5):
            attune(pool, params)
            attune_backward(pool, params, rng.standard_normal((3, 2, 4)))
        after = (params.keys.tobytes(), params.values.tobytes())
        assert before == after

    def test_orthogonal_init(self):
        params = AttunementParams.init_random(6, 4, substream(12, "f"))
        for r in range(4):
            npt.assert_allclose(params.keys[r] @ params.keys[r].T, np.eye(6),
                                atol=1e-10)
            npt.assert_allclose(params.values[r] @ params.values[r].T,
                                np.eye(6), atol=1e-10)


class TestAttuneBackward:
    def test_matches_finite_differences(self):
        rng = substream(13, "b")
        pool = FingerprintPool(0.5 * rng.standard_normal((3, 2, 4)))
        params = AttunementParams.init_random(4, 3, rng, gate_scale=0.5)
        upstream = rng.standard_normal((3, 2, 4))

        def loss():
            return float(np.sum(attune(pool, params) * upstream))

        g_pool, g_gate = attune_backward(pool, params, upstream)
        h = 1e-6
        for param, grad in ((pool.weights, g_pool), (params.gate, g_gate)):
            it = np.nditer(param, flags=["multi_index"])
            while not it.finished:
                ix = it.multi_index
                orig = param[ix]
                param[ix] = orig + h
                up = loss()
                param[ix] = orig - h
                down = loss()
                param[ix] = orig
                fd = (up - down) / (2 * h)
                assert grad[ix] == pytest.approx(fd, abs=1e-6, rel=1e-5)
                it.iternext()

    def test_upstream_shape_check(self):
        pool = FingerprintPool.init_random(2, 2, 3, substream(14, "b"))
        params = AttunementParams.init_random(3, 2, substream(15, "b"))
        with pytest.raises(ValueError):
            attune_backward(pool, params, np.zeros((2, 2, 4)))


class TestWeightsFile:
    def test_roundtrip(self, tmp_path):
        rng = substream(16, "w")
        params = AttunementParams.init_random(5, 3, rng)
        path = tmp_path / "bank.sfpw"
        save_mlp_weights(path, params.keys, params.values)
        keys, values = load_mlp_weights(path)
        # f32 storage: roundtrip at single precision
        npt.assert_allclose(keys, params.keys, atol=1e-6)
        npt.assert_allclose(values, params.values, atol=1e-6)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.sfpw"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValueError):
            load_mlp_weights(path)
