"""Unit tests for the feature aggregation block."""

import numpy as np
import pytest

from anticipate import autodiff as ad
from anticipate import fa_block
from anticipate.autodiff import ShapeError, Tensor
from anticipate.fa_block import FAParams, Variant, fa_forward

import oracles
from conftest import FD_TOL_64, to_lists, weights_as_lists

ALL_VARIANTS = list(Variant)


def make_params(d=2, variant=Variant.FINAL, seed=3, dtype=np.float64):
    rng = np.random.default_rng(seed)
    params = FAParams.initialise(d, 2 * d, variant, rng, dtype=dtype)
    # unit-scale weights exercise the nonlinearities properly
    for _, t in params.named():
        t.data = t.data * 50.0
    return params


def fa_weight_lists(params):
    out = {}
    for name, tensor in params.named():
        key = name.split(".", 1)[1]
        out[key] = float(tensor.data[0]) if key == "b_r" else to_lists(tensor.data)
    return out


class TestProjections:
    def test_identity_weights(self):
        params = make_params(d=2)
        params.w_theta.data = np.eye(2)
        params.b_theta.data = np.zeros(2)
        o = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
        np.testing.assert_array_equal(fa_block.project_query(o, params).data, o.data)

    def test_zero_weight_constant_rows(self):
        params = make_params(d=2)
        params.w_phi.data = np.zeros((2, 2))
        params.b_phi.data = np.array([5.0, -1.0])
        o = Tensor(np.ones((3, 2)))
        out = fa_block.project_key(o, params)
        assert out.data.tolist() == [[5.0, -1.0]] * 3

    def test_random_case_vs_naive_loops(self, rng):
        params = make_params(d=3)
        o = rng.normal(size=(4, 3))
        got = fa_block.project_query(Tensor(o, dtype=np.float64), params).data
        expected = oracles.affine_rows(to_lists(o), to_lists(params.w_theta.data),
                                       to_lists(params.b_theta.data))
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_no_projection_variant_passthrough(self):
        params = make_params(d=2, variant=Variant.NO_PROJECTIONS)
        o = Tensor(np.array([[1.0, 2.0]]))
        assert fa_block.project_query(o, params) is o
        assert fa_block.project_key(o, params) is o


class TestHiddenCoupling:
    def test_zero_hidden_gives_zeros(self):
        params = make_params(d=2)
        out = fa_block.hidden_coupling(Tensor(np.zeros((1, 4))), params)
        assert not out.data.any()

    def test_zero_weight_gives_zeros(self, rng):
        params = make_params(d=2)
        params.w_u.data = np.zeros((4, 2))
        out = fa_block.hidden_coupling(Tensor(rng.normal(size=(1, 4))), params)
        assert not out.data.any()

    def test_random_case_vs_naive_loop(self, rng):
        params = make_params(d=3)
        h = rng.normal(size=(1, 6))
        got = fa_block.hidden_coupling(Tensor(h, dtype=np.float64), params).data
        expected = oracles.matmul_lists(to_lists(h), to_lists(params.w_u.data))[0]
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_wrong_hidden_shape(self):
        params = make_params(d=2)
        with pytest.raises(ShapeError):
            fa_block.hidden_coupling(Tensor(np.zeros((1, 3))), params)


class TestAppearanceCompare:
    @pytest.mark.parametrize("variant", [v for v in ALL_VARIANTS if v is not Variant.MEAN_SCALE])
    def test_single_object_gives_unit_weight(self, variant, rng):
        params = make_params(d=2, variant=variant)
        alpha = fa_block.appearance_compare(
            Tensor(rng.normal(size=(1, 2))), Tensor(rng.normal(size=(1, 4))), params)
        np.testing.assert_allclose(alpha.data, [[1.0]])

    def test_identical_objects_uniform_rows(self):
        params = make_params(d=2)
        o = Tensor(np.tile([0.3, -0.7], (4, 1)))
        alpha = fa_block.appearance_compare(o, Tensor(np.zeros((1, 4))), params)
        np.testing.assert_allclose(alpha.data, np.full((4, 4), 0.25), atol=1e-6)

    @pytest.mark.parametrize("variant", ALL_VARIANTS)
    def test_matches_straight_line_oracle(self, variant, rng):
        params = make_params(d=2, variant=variant)
        o = rng.normal(size=(3, 2))
        h = rng.normal(size=(1, 4))
        alpha = fa_block.appearance_compare(
            Tensor(o, dtype=np.float64), Tensor(h, dtype=np.float64), params)
        _, expected = oracles.fa_reference(to_lists(o), to_lists(h)[0],
                                           fa_weight_lists(params), variant.value)
        np.testing.assert_allclose(alpha.data, expected, atol=1e-12)

    def test_mean_scale_rows_are_e_over_n(self, rng):
        params = make_params(d=2, variant=Variant.MEAN_SCALE)
        o = rng.normal(size=(3, 2))
        h = rng.normal(size=(1, 4))
        alpha = fa_block.appearance_compare(
            Tensor(o, dtype=np.float64), Tensor(h, dtype=np.float64), params)
        u = fa_block.hidden_coupling(Tensor(h, dtype=np.float64), params)
        a = ad.tanh(ad.add(fa_block.project_query(Tensor(o, dtype=np.float64), params), u))
        b = ad.tanh(ad.add(fa_block.project_key(Tensor(o, dtype=np.float64), params), u))
        e = a.data @ b.data.T
        np.testing.assert_allclose(alpha.data, e / 3.0, atol=1e-12)
        assert np.all(np.isfinite(alpha.data))

    @pytest.mark.parametrize("variant", [v for v in ALL_VARIANTS if v is not Variant.MEAN_SCALE])
    def test_rows_sum_to_one(self, variant, rng):
        params = make_params(d=3, variant=variant)
        alpha = fa_block.appearance_compare(
            Tensor(rng.normal(size=(5, 3))), Tensor(rng.normal(size=(1, 6))), params)
        np.testing.assert_allclose(alpha.data.sum(axis=1), 1.0, atol=1e-6)

    def test_masked_columns_get_zero_weight(self, rng):
        params = make_params(d=3)
        o = rng.normal(size=(5, 3))
        alpha = fa_block.appearance_compare(
            Tensor(o, dtype=np.float64), Tensor(np.zeros((1, 6))), params, n_valid=3)
        assert not alpha.data[:, 3:].any()
        np.testing.assert_allclose(alpha.data.sum(axis=1), 1.0, atol=1e-6)


class TestFeatureRefine:
    def test_zero_value_path_is_residual_identity(self, rng):
        params = make_params(d=2)
        params.w_g.data = np.zeros((2, 2))
        params.b_g.data = np.zeros(2)
        o = Tensor(rng.normal(size=(3, 2)))
        alpha = Tensor(np.full((3, 3), 1 / 3))
        np.testing.assert_array_equal(fa_block.feature_refine(o, alpha, params).data, o.data)

    def test_single_object(self, rng):
        params = make_params(d=2)
        o = rng.normal(size=(1, 2))
        z = fa_block.feature_refine(Tensor(o, dtype=np.float64),
                                    Tensor([[1.0]], dtype=np.float64), params)
        expected = o + (o @ params.w_g.data + params.b_g.data)
        np.testing.assert_allclose(z.data, expected, atol=1e-12)

    def test_random_case_vs_triple_loop(self, rng):
        params = make_params(d=2)
        o = rng.normal(size=(3, 2))
        alpha_raw = rng.uniform(size=(3, 3))
        alpha_raw /= alpha_raw.sum(axis=1, keepdims=True)
        z = fa_block.feature_refine(Tensor(o, dtype=np.float64),
                                    Tensor(alpha_raw, dtype=np.float64), params).data
        g = oracles.affine_rows(to_lists(o), to_lists(params.w_g.data),
                                to_lists(params.b_g.data))
        expected = [[o[i][j] + sum(alpha_raw[i][k] * g[k][j] for k in range(3))
                     for j in range(2)] for i in range(3)]
        np.testing.assert_allclose(z, expected, atol=1e-12)


class TestFAForward:
    def test_zero_weights_reduce_to_mean(self, rng):
        params = make_params(d=2)
        for _, t in params.named():
            t.data = np.zeros_like(t.data)
        o = rng.normal(size=(4, 2))
        m, _ = fa_forward(Tensor(o, dtype=np.float64), Tensor(np.zeros((1, 4))), params)
        np.testing.assert_allclose(m.data, o.mean(axis=0), atol=1e-12)

    @pytest.mark.parametrize("variant", ALL_VARIANTS)
    def test_permutation_invariance_and_equivariance(self, variant, rng):
        params = make_params(d=3, variant=variant)
        o = rng.normal(size=(5, 3))
        h = rng.normal(size=(1, 6))
        m, alpha = fa_forward(Tensor(o, dtype=np.float64), Tensor(h, dtype=np.float64), params)
        perm = rng.permutation(5)
        m2, alpha2 = fa_forward(Tensor(o[perm], dtype=np.float64),
                                Tensor(h, dtype=np.float64), params)
        np.testing.assert_allclose(m2.data, m.data, atol=1e-12)
        np.testing.assert_allclose(alpha2.data, alpha.data[np.ix_(perm, perm)], atol=1e-12)

    @pytest.mark.parametrize("variant", ALL_VARIANTS)
    def test_matches_straight_line_oracle(self, variant, rng):
        params = make_params(d=2, variant=variant)
        o = rng.normal(size=(3, 2))
        h = rng.normal(size=(1, 4))
        m, alpha = fa_forward(Tensor(o, dtype=np.float64), Tensor(h, dtype=np.float64), params)
        m_ref, alpha_ref = oracles.fa_reference(to_lists(o), to_lists(h)[0],
                                                fa_weight_lists(params), variant.value)
        np.testing.assert_allclose(m.data, m_ref, atol=1e-12)
        np.testing.assert_allclose(alpha.data, alpha_ref, atol=1e-12)

    def test_masked_equals_cropped(self, rng):
        params = make_params(d=3)
        o = rng.normal(size=(6, 3))
        o[4:] = 0.0  # padded slots
        h = rng.normal(size=(1, 6))
        m_full, alpha_full = fa_forward(Tensor(o, dtype=np.float64),
                                        Tensor(h, dtype=np.float64), params, n_valid=4)
        m_crop, alpha_crop = fa_forward(Tensor(o[:4], dtype=np.float64),
                                        Tensor(h, dtype=np.float64), params)
        np.testing.assert_allclose(m_full.data, m_crop.data, atol=1e-12)
        np.testing.assert_allclose(alpha_full.data[:4, :4], alpha_crop.data, atol=1e-12)

    def test_n_valid_out_of_range(self, rng):
        params = make_params(d=2)
        with pytest.raises(ShapeError):
            fa_forward(Tensor(rng.normal(size=(3, 2))), Tensor(np.zeros((1, 4))),
                       params, n_valid=0)

    @pytest.mark.parametrize("variant", ALL_VARIANTS)
    def test_differentiable_end_to_end(self, variant, rng):
        params = make_params(d=2, variant=variant)
        h = Tensor(rng.normal(size=(1, 4)), dtype=np.float64)

        def f(x):
            m, _ = fa_forward(x, h, params)
            return ad.sum_all(ad.tanh(m))

        err = ad.finite_diff_check(f, Tensor(rng.normal(size=(3, 2)), dtype=np.float64))
        assert err < FD_TOL_64
