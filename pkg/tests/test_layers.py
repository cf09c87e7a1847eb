import numpy as np
import pytest

from attncloud import layers as L
from attncloud import tensor as T
from attncloud.errors import ShapeError
from attncloud.tensor import Tensor

from oracles import finite_diff_grad, max_rel_err

TINY = L.AttnTransformConfig(
    latent_dim=4, interim_dim=3, interim_count=5, out_points=6, attn_widths=(4, 8)
)


def block_fd_check(forward_scalar, params, tol, h=1e-6):
    """FD-check d(forward_scalar)/d(param) for every parameter tensor."""
    for name, p in params.items():
        def f(x, p=p):
            old = p.data
            p.data = x
            try:
                return forward_scalar()
            finally:
                p.data = old
        fd = finite_diff_grad(f, p.data.copy(), h=h)
        assert max_rel_err(p.grad, fd) < tol, name


def scalar_loss(out: Tensor, w: np.ndarray) -> Tensor:
    return T.reduce_sum(T.mul(out, Tensor(w)))


def test_fc_layer_identity_passthrough():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    out = L.fc_layer(x, Tensor(np.eye(3)), Tensor(np.zeros(3)))
    assert np.array_equal(out.data, x.data)


def test_fc_layer_zero_weights_returns_bias():
    x = Tensor(np.random.default_rng(0).standard_normal((4, 3)))
    b = np.array([1.0, -2.0])
    out = L.fc_layer(x, Tensor(np.zeros((3, 2))), Tensor(b))
    assert np.allclose(out.data, np.tile(b, (4, 1)))


def test_fc_layer_shape_mismatch():
    with pytest.raises(ShapeError):
        L.fc_layer(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))), Tensor(np.zeros(2)))


def test_fc_layer_gradient():
    rng = np.random.default_rng(1)
    x = Tensor(rng.standard_normal((3, 4)))
    w = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
    b = Tensor(rng.standard_normal(2), requires_grad=True)
    probe = rng.standard_normal((3, 2))
    T.backward(scalar_loss(L.fc_layer(x, w, b, "relu"), probe))
    block_fd_check(
        lambda: float((np.maximum(x.data @ w.data + b.data, 0.0) * probe).sum()),
        {"w": w, "b": b},
        tol=1e-5,
    )


def test_shared_mlp_single_point_equals_stacked_fc():
    rng = np.random.default_rng(2)
    mlp = L.MLP(rng, (3, 5, 2))
    x = rng.standard_normal(3)
    out = L.shared_mlp(Tensor(x[None, None, :]), mlp)
    manual = L.fc_layer(
        L.fc_layer(Tensor(x[None, :]), mlp.layers[0].w, mlp.layers[0].b, "relu"),
        mlp.layers[1].w, mlp.layers[1].b,
    )
    assert np.allclose(out.data[0, 0], manual.data[0], atol=1e-12)


def test_shared_mlp_permutation_equivariant():
    rng = np.random.default_rng(3)
    mlp = L.MLP(rng, (3, 8, 4))
    pts = rng.standard_normal((2, 7, 3))
    perm = rng.permutation(7)
    out = L.shared_mlp(Tensor(pts), mlp)
    out_perm = L.shared_mlp(Tensor(pts[:, perm]), mlp)
    assert np.array_equal(out.data[:, perm], out_perm.data)


def test_shared_mlp_gradient():
    rng = np.random.default_rng(4)
    mlp = L.MLP(rng, (3, 6, 2))
    pts = Tensor(rng.standard_normal((2, 5, 3)))
    probe = rng.standard_normal((2, 5, 2))
    T.backward(scalar_loss(L.shared_mlp(pts, mlp), probe))

    def forward():
        return float((L.shared_mlp(pts, mlp).data * probe).sum())

    block_fd_check(forward, mlp.parameters(), tol=1e-5)


def test_attn_single_interim_point_copies_everywhere():
    cfg = L.AttnTransformConfig(latent_dim=4, interim_dim=3, interim_count=1,
                                out_points=5, attn_widths=(4,))
    block = L.AttnTransform(cfg, np.random.default_rng(5))
    cloud, interim, attn = block(Tensor(np.random.default_rng(6).standard_normal((2, 4))))
    assert np.allclose(attn.data, 1.0, atol=1e-15)
    expected = interim.data[:, 0, :] @ block.map3d.w.data + block.map3d.b.data
    assert np.allclose(cloud.data, expected[:, None, :], atol=1e-12)


def test_attn_zero_logits_yield_centroid():
    block = L.AttnTransform(TINY, np.random.default_rng(7))
    last = block.attn_mlp.layers[-1]
    last.w.data = np.zeros_like(last.w.data)
    last.b.data = np.zeros_like(last.b.data)
    cloud, interim, attn = block(Tensor(np.random.default_rng(8).standard_normal((3, 4))))
    assert np.allclose(attn.data, 1.0 / TINY.interim_count, atol=1e-15)
    centroid = interim.data.mean(axis=1)
    expected = centroid @ block.map3d.w.data + block.map3d.b.data
    assert np.allclose(cloud.data, expected[:, None, :], atol=1e-12)


def test_attn_convex_combination_brute_force():
    # oracle: recompute every aggregated point as an explicit weighted sum
    rng = np.random.default_rng(9)
    block = L.AttnTransform(TINY, rng)
    f = Tensor(rng.standard_normal((2, 4)))
    cloud, interim, attn = block(f)
    assert np.all(attn.data >= 0.0)
    assert np.abs(attn.data.sum(axis=2) - 1.0).max() < 1e-10
    for b in range(2):
        for p in range(TINY.out_points):
            agg = sum(attn.data[b, p, j] * interim.data[b, j] for j in range(TINY.interim_count))
            recon = agg @ block.map3d.w.data + block.map3d.b.data
            assert np.abs(recon - cloud.data[b, p]).max() < 1e-12


def test_attn_batch_independence():
    rng = np.random.default_rng(10)
    block = L.AttnTransform(TINY, rng)
    f = rng.standard_normal((4, 4))
    batched, _, _ = block(Tensor(f))
    for i in range(4):
        single, _, _ = block(Tensor(f[i : i + 1]))
        assert np.abs(batched.data[i] - single.data[0]).max() < 1e-12


def test_attn_full_block_gradient():
    rng = np.random.default_rng(11)
    block = L.AttnTransform(TINY, rng)
    f = Tensor(rng.standard_normal((2, 4)))
    probe = rng.standard_normal((2, TINY.out_points, 3))
    cloud, _, _ = block(f)
    T.backward(scalar_loss(cloud, probe))
    block_fd_check(
        lambda: float((block(f)[0].data * probe).sum()),
        block.parameters(),
        tol=1e-4,
    )


def test_param_count_reference_config():
    assert L.attn_param_count(L.AttnTransformConfig()) == 803_107


def test_param_count_unit_config():
    # spec'd closed form evaluated term by term (the listed total contains
    # an arithmetic slip; the formula itself is 2 + 128 + 8320 + 129 + 6)
    cfg = L.AttnTransformConfig(latent_dim=1, interim_dim=1, interim_count=1, out_points=1)
    expected = (1 * 1 + 1) + (1 * 64 + 64) + (64 * 128 + 128) + (128 * 1 + 1) + (1 * 3 + 3)
    assert expected == 8_585
    assert L.attn_param_count(cfg) == expected


def test_param_count_doubling_latent_changes_only_interim_fc():
    base = L.AttnTransformConfig(latent_dim=16, interim_dim=4, interim_count=8, out_points=32)
    double = L.AttnTransformConfig(latent_dim=32, interim_dim=4, interim_count=8, out_points=32)
    assert L.attn_param_count(double) - L.attn_param_count(base) == 16 * 8 * 4


def test_instantiated_params_match_closed_form():
    for cfg in (TINY, L.AttnTransformConfig(latent_dim=8, interim_dim=2, interim_count=3, out_points=4)):
        block = L.AttnTransform(cfg, np.random.default_rng(12))
        total = sum(p.size for p in block.parameters().values())
        assert total == L.attn_param_count(cfg) == block.param_count


def test_attn_count_below_fc_baseline_count():
    assert L.attn_param_count(L.AttnTransformConfig()) < L.fc_decoder_param_count(1024, 2048)


def test_fc_decoder_zero_weights_all_points_at_bias():
    rng = np.random.default_rng(13)
    dec = L.FCDecoder(out_points=5, rng=rng, latent_dim=6)
    dec.fc.w.data = np.zeros_like(dec.fc.w.data)
    out = dec(Tensor(rng.standard_normal((2, 6))))
    assert np.allclose(out.data, dec.fc.b.data.reshape(1, 5, 3))


def test_fc_decoder_single_point_is_plain_fc():
    rng = np.random.default_rng(14)
    dec = L.FCDecoder(out_points=1, rng=rng, latent_dim=4)
    f = Tensor(rng.standard_normal((3, 4)))
    out = dec(f)
    plain = L.fc_layer(f, dec.fc.w, dec.fc.b)
    assert np.array_equal(out.data.reshape(3, 3), plain.data)


def test_fc_decoder_gradient():
    rng = np.random.default_rng(15)
    dec = L.FCDecoder(out_points=3, rng=rng, latent_dim=4)
    f = Tensor(rng.standard_normal((2, 4)))
    probe = rng.standard_normal((2, 3, 3))
    T.backward(scalar_loss(dec(f), probe))
    block_fd_check(lambda: float((dec(f).data * probe).sum()), dec.parameters(), tol=1e-5)


def test_folding_grid_square_and_rect():
    g = L.folding_grid(16)
    assert g.shape == (16, 2)
    assert g.min() == -0.5 and g.max() == 0.5
    assert len(L.folding_grid(512)) == 512
    assert len(np.unique(L.folding_grid(512), axis=0)) == 512


def test_folding_zero_final_round_weights_collapse_to_bias():
    rng = np.random.default_rng(16)
    dec = L.FoldingDecoder(out_points=9, rng=rng, latent_dim=5, hidden=8)
    last = dec.fold2.layers[-1]
    last.w.data = np.zeros_like(last.w.data)
    out = dec(Tensor(rng.standard_normal((2, 5))))
    assert np.allclose(out.data, last.b.data.reshape(1, 1, 3))


def test_folding_output_count_matches_grid():
    dec = L.FoldingDecoder(out_points=12, rng=np.random.default_rng(17), latent_dim=4, hidden=6)
    out = dec(Tensor(np.zeros((1, 4))))
    assert out.shape == (1, 12, 3)


def test_folding_gradient():
    rng = np.random.default_rng(18)
    dec = L.FoldingDecoder(out_points=4, rng=rng, latent_dim=3, hidden=5)
    f = Tensor(rng.standard_normal((2, 3)))
    probe = rng.standard_normal((2, 4, 3))
    T.backward(scalar_loss(dec(f), probe))
    block_fd_check(lambda: float((dec(f).data * probe).sum()), dec.parameters(), tol=1e-5)
