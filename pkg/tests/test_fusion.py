"""Gram alignment, multi-level fusion, and hypergraph convolution checks."""

import numpy as np
import pytest

from pairtrack.errors import ContractError, DegenerateInputError
from pairtrack.fusion import (
    AlignWeights,
    GramBasis,
    HyperConvParams,
    ModalityKeys,
    align_fuse,
    auto_epsilon,
    build_hypergraph,
    cross_align,
    gram_basis,
    gram_map,
    hyperconv,
    multi_level_fuse,
    propagation_matrix,
)
from pairtrack.numerics import (
    ParamStore,
    RngStream,
    backward,
    constant,
    finite_diff_grad,
    grad_max_rel_error,
    mul,
    no_grad,
    tsum,
)


def test_multi_level_fuse_single_level_identity():
    x = constant(RngStream(1).uniform(-1, 1, (5, 3)))
    out = multi_level_fuse([x], constant(np.eye(3)))
    np.testing.assert_array_equal(out.data, x.data)


def test_multi_level_fuse_selector_weights():
    rng = RngStream(2)
    a = constant(rng.uniform(-1, 1, (4, 3)))
    b = constant(rng.uniform(-1, 1, (4, 3)))
    selector = np.vstack([np.eye(3), np.zeros((3, 3))])
    out = multi_level_fuse([a, b], constant(selector))
    np.testing.assert_allclose(out.data, a.data, atol=1e-15)


def test_multi_level_fuse_matches_concat_matmul_oracle():
    rng = RngStream(3)
    levels = [constant(rng.uniform(-1, 1, (6, 4))) for _ in range(3)]
    w = rng.uniform(-1, 1, (12, 4))
    out = multi_level_fuse(levels, constant(w))
    expected = np.concatenate([l.data for l in levels], axis=1) @ w
    assert np.max(np.abs(out.data - expected)) <= 1e-12


def test_multi_level_fuse_contract_errors():
    with pytest.raises(ContractError):
        multi_level_fuse([], constant(np.eye(2)))
    with pytest.raises(ContractError):
        multi_level_fuse(
            [constant(np.zeros((2, 2))), constant(np.zeros((3, 2)))],
            constant(np.eye(4)),
        )


def test_gram_basis_identity_keys():
    basis = gram_basis(constant(np.eye(3)))
    np.testing.assert_allclose(basis.g.data, np.eye(3), atol=1e-15)
    assert abs(basis.norm - np.sqrt(3)) < 1e-12
    np.testing.assert_allclose(basis.normalized.data, np.eye(3) / np.sqrt(3), atol=1e-14)


def test_gram_basis_hand_oracle():
    basis = gram_basis(constant([[1.0, 2.0], [3.0, 4.0]]))
    np.testing.assert_allclose(basis.g.data, [[10.0, 14.0], [14.0, 20.0]], atol=1e-12)


def test_gram_is_symmetric_psd():
    for seed in range(10):
        k = constant(RngStream(100 + seed).uniform(-2, 2, (6, 4)))
        basis = gram_basis(k)
        g = basis.g.data
        assert np.max(np.abs(g - g.T)) <= 1e-10
        assert np.min(np.linalg.eigvalsh(g)) >= -1e-10


def test_gram_basis_degenerate_input():
    with pytest.raises(DegenerateInputError):
        gram_basis(constant(np.zeros((4, 3))))


def test_gram_map_isotropic_basis_is_scalar_multiple():
    basis = gram_basis(constant(np.sqrt(2.0) * np.eye(2)))
    src = constant(RngStream(5).uniform(-1, 1, (3, 2)))
    out = gram_map(src, basis)
    # g = 2I, |g|_F = 2*sqrt(2), normalized = I/sqrt(2)
    np.testing.assert_allclose(out.data, src.data / np.sqrt(2), atol=1e-14)


def test_gram_map_identity_basis():
    basis = GramBasis(g=constant(np.eye(2)), norm=1.0, normalized=constant(np.eye(2)))
    src = constant(RngStream(6).uniform(-1, 1, (4, 2)))
    np.testing.assert_array_equal(gram_map(src, basis).data, src.data)


def test_gram_map_matches_direct_recomputation():
    rng = RngStream(7)
    k = rng.uniform(-1, 1, (5, 3))
    src = rng.uniform(-1, 1, (5, 3))
    basis = gram_basis(constant(k))
    out = gram_map(constant(src), basis)
    g = k.T @ k
    expected = src @ (g / np.linalg.norm(g))
    assert np.max(np.abs(out.data - expected)) <= 1e-12


def test_align_fuse_cases():
    rng = RngStream(8)
    k = constant(rng.uniform(-1, 1, (4, 3)))
    mapped = constant(rng.uniform(-1, 1, (4, 3)))
    zero_w = constant(np.zeros(()))
    np.testing.assert_array_equal(align_fuse(k, mapped, zero_w).data, k.data)
    one_w = constant(np.ones(()))
    neg = constant(-k.data)
    np.testing.assert_allclose(align_fuse(k, neg, one_w).data, np.zeros((4, 3)), atol=1e-15)
    half = constant(np.asarray(0.5))
    np.testing.assert_allclose(
        align_fuse(k, mapped, half).data, k.data + 0.5 * mapped.data, atol=1e-15
    )


def _align_setup(seed, t=5, d=3, zero_weights=False):
    rng = RngStream(seed)
    store = ParamStore()
    keys = ModalityKeys(
        k_r=constant(rng.uniform(-1, 1, (t, d))),
        k_x=constant(rng.uniform(-1, 1, (t, d))),
    )
    if zero_weights:
        weights = AlignWeights(
            w_r=store.zeros_init("w_r", ()), w_x=store.zeros_init("w_x", ())
        )
    else:
        weights = AlignWeights(
            w_r=store.add("w_r", rng.uniform(-1, 1, ())),
            w_x=store.add("w_x", rng.uniform(-1, 1, ())),
        )
    fc_w = store.add("fc_w", rng.uniform(-1, 1, (2 * d, d)))
    return store, keys, weights, fc_w


def test_cross_align_disabled_alignment_averaging_selector():
    store, keys, weights, _ = _align_setup(9, zero_weights=True)
    d = keys.k_r.shape[1]
    averaging = np.vstack([np.eye(d), np.eye(d)]) / 2.0
    out = cross_align(keys, weights, constant(averaging))
    np.testing.assert_allclose(out.data, (keys.k_r.data + keys.k_x.data) / 2, atol=1e-14)


def test_cross_align_modality_symmetry():
    rng = RngStream(10)
    store = ParamStore()
    k = constant(rng.uniform(-1, 1, (4, 3)))
    keys = ModalityKeys(k_r=k, k_x=k)
    w = store.add("w", rng.uniform(-1, 1, ()))
    weights = AlignWeights(w_r=w, w_x=w)
    basis = gram_basis(k)
    f_x = align_fuse(k, gram_map(k, basis), w)
    f_r = align_fuse(k, gram_map(k, basis), w)
    np.testing.assert_array_equal(f_x.data, f_r.data)


def test_cross_align_composition_oracle():
    store, keys, weights, fc_w = _align_setup(11)
    out = cross_align(keys, weights, fc_w)
    # step-by-step recomputation in plain numpy
    kr, kx = keys.k_r.data, keys.k_x.data
    gr = kr.T @ kr
    gx = kx.T @ kx
    f_x = kx + float(weights.w_x.data) * (kx @ (gr / np.linalg.norm(gr)))
    f_r = kr + float(weights.w_r.data) * (kr @ (gx / np.linalg.norm(gx)))
    expected = np.concatenate([f_x, f_r], axis=1) @ fc_w.data
    assert np.max(np.abs(out.data - expected)) <= 1e-12


def test_cross_align_degenerate_keys():
    store, keys, weights, fc_w = _align_setup(12)
    bad = ModalityKeys(k_r=constant(np.zeros((5, 3))), k_x=keys.k_x)
    with pytest.raises(DegenerateInputError):
        cross_align(bad, weights, fc_w)


def test_build_hypergraph_three_point_hand_case():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [5.0, 0.0]])
    hg = build_hypergraph(pts, epsilon=2.0)
    expected = np.array([[1, 1, 0], [1, 1, 0], [0, 0, 1]])
    np.testing.assert_array_equal(hg.incidence, expected)
    np.testing.assert_array_equal(hg.d_v, [2, 2, 1])
    np.testing.assert_array_equal(hg.d_e, [2, 2, 1])
    assert hg.incidence.shape[1] == 3  # |E| = |V|


def test_build_hypergraph_isolated_and_complete():
    pts = RngStream(13).uniform(-1, 1, (6, 3))
    dists = np.sqrt(((pts[:, None] - pts[None, :]) ** 2).sum(-1))
    tiny = 0.5 * dists[dists > 0].min()
    hg = build_hypergraph(pts, tiny)
    np.testing.assert_array_equal(hg.incidence, np.eye(6, dtype=np.int64))
    np.testing.assert_array_equal(hg.d_v, np.ones(6))
    huge = 2.0 * dists.max()
    hg2 = build_hypergraph(pts, huge)
    np.testing.assert_array_equal(hg2.incidence, np.ones((6, 6), dtype=np.int64))
    np.testing.assert_array_equal(hg2.d_e, np.full(6, 6))


def test_build_hypergraph_epsilon_contract():
    with pytest.raises(ContractError):
        build_hypergraph(np.zeros((3, 2)), 0.0)
    with pytest.raises(ContractError):
        build_hypergraph(np.zeros((3, 2)), -1.0)


def test_auto_epsilon():
    pts = np.array([[0.0, 0.0], [2.0, 0.0]])
    assert abs(auto_epsilon(pts) - 1.0) < 1e-12
    assert auto_epsilon(np.zeros((3, 2))) == 1.0  # degenerate fallback
    assert auto_epsilon(np.zeros((1, 2))) == 1.0


def test_propagation_matrix_row_stochastic_over_random_instances():
    for seed in range(100):
        rng = RngStream(2000 + seed)
        v = int(rng.integers(1, 12, ()))
        pts = rng.uniform(-1, 1, (v, 3))
        eps = float(rng.uniform(0.05, 3.0, ()))
        hg = build_hypergraph(pts, eps)
        p = propagation_matrix(hg)
        assert np.max(np.abs(p.sum(axis=1) - 1.0)) <= 1e-10


def _conv_params(store, d, rng=None, zero_theta2=False, identity=False):
    if identity:
        t1 = store.add("theta1", np.eye(d))
        t2 = store.add("theta2", np.eye(d))
    else:
        t1 = store.add("theta1", rng.uniform(-1, 1, (d, d)))
        if zero_theta2:
            t2 = store.zeros_init("theta2", (d, d))
        else:
            t2 = store.add("theta2", rng.uniform(-1, 1, (d, d)))
    return HyperConvParams(theta1=t1, theta2=t2)


def test_hyperconv_zero_theta2_residual_identity_exact():
    rng = RngStream(14)
    x = constant(rng.uniform(-1, 1, (5, 4)))
    hg = build_hypergraph(x, auto_epsilon(x))
    params = _conv_params(ParamStore(), 4, rng, zero_theta2=True)
    out = hyperconv(x, hg, params)
    assert np.max(np.abs(out.data - x.data)) == 0.0


def test_hyperconv_single_vertex_identity_theta_doubles():
    x = constant([[1.0, -2.0, 3.0]])
    hg = build_hypergraph(x, 1.0)
    params = _conv_params(ParamStore(), 3, identity=True)
    np.testing.assert_allclose(hyperconv(x, hg, params).data, 2.0 * x.data, atol=1e-14)


def test_hyperconv_matrix_chain_oracle():
    rng = RngStream(15)
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [5.0, 0.0]])
    hg = build_hypergraph(pts, 2.0)
    x = rng.uniform(-1, 1, (3, 2))
    params = _conv_params(ParamStore(), 2, rng)
    out = hyperconv(constant(x), hg, params)
    h = hg.incidence.astype(float)
    chain = np.diag(1.0 / hg.d_v) @ h @ np.diag(1.0 / hg.d_e) @ h.T
    expected = x + chain @ x @ params.theta1.data @ params.theta2.data
    assert np.max(np.abs(out.data - expected)) <= 1e-12


def test_hyperconv_constant_features_double():
    rng = RngStream(16)
    x_row = rng.uniform(-1, 1, (4,))
    x = constant(np.tile(x_row, (7, 1)))
    hg = build_hypergraph(rng.uniform(-1, 1, (7, 4)), 1.5)
    params = _conv_params(ParamStore(), 4, identity=True)
    out = hyperconv(x, hg, params)
    assert np.max(np.abs(out.data - 2.0 * x.data)) <= 1e-10


def test_hyperconv_permutation_equivariance():
    rng = RngStream(17)
    x = rng.uniform(-1, 1, (8, 3))
    params = _conv_params(ParamStore(), 3, rng)
    eps = 1.2
    base = hyperconv(constant(x), build_hypergraph(x, eps), params)
    order = np.argsort(RngStream(19).uniform(0, 1, (8,)))
    permuted = hyperconv(constant(x[order]), build_hypergraph(x[order], eps), params)
    assert np.max(np.abs(permuted.data - base.data[order])) <= 1e-12


def test_gsahf_zero_init_path_reduces_to_concat_fc():
    rng = RngStream(20)
    store = ParamStore()
    keys = ModalityKeys(
        k_r=constant(rng.uniform(-1, 1, (6, 4))),
        k_x=constant(rng.uniform(-1, 1, (6, 4))),
    )
    weights = AlignWeights(
        w_r=store.zeros_init("w_r", ()), w_x=store.zeros_init("w_x", ())
    )
    fc_w = store.add("fc_w", rng.uniform(-1, 1, (8, 4)))
    aligned = cross_align(keys, weights, fc_w)
    hg = build_hypergraph(aligned, auto_epsilon(aligned))
    params = _conv_params(store, 4, rng, zero_theta2=True)
    out = hyperconv(aligned, hg, params)
    plain = np.concatenate([keys.k_x.data, keys.k_r.data], axis=1) @ fc_w.data
    assert np.max(np.abs(out.data - plain)) <= 1e-12


def test_fusion_gradients_match_finite_differences():
    rng = RngStream(21)
    store = ParamStore()
    keys = ModalityKeys(
        k_r=constant(rng.uniform(-1, 1, (5, 3))),
        k_x=constant(rng.uniform(-1, 1, (5, 3))),
    )
    weights = AlignWeights(
        w_r=store.add("w_r", rng.uniform(-0.5, 0.5, ())),
        w_x=store.add("w_x", rng.uniform(-0.5, 0.5, ())),
    )
    fc_w = store.add("fc_w", rng.uniform(-1, 1, (6, 3)))
    conv = _conv_params(store, 3, rng)
    u = rng.uniform(-1, 1, (5, 3))
    eps = 1.0

    def loss_tensor():
        aligned = cross_align(keys, weights, fc_w)
        hg = build_hypergraph(aligned, eps)
        return tsum(mul(hyperconv(aligned, hg, conv), constant(u)))

    store.zero_grad()
    backward(loss_tensor())
    for p in store:
        original = p.data.copy()

        def f(values):
            store.set_values(p.name, values)
            with no_grad():
                out = float(loss_tensor().item())
            store.set_values(p.name, original)
            return out

        fd = finite_diff_grad(f, original, h=1e-5)
        err = grad_max_rel_error(p.tensor.grad, fd)
        assert err <= 1e-4, f"{p.name}: rel err {err:.2e}"
