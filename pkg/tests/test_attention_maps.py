import numpy as np
import numpy.testing as npt
import pytest

from sit.attention import (
    VertexAttentionMap,
    average_maps,
    last_layer_row,
    patches_to_vertices,
    residual_adjust,
    rollout,
    save_attention_ssig,
    threshold_map,
)
from sit.errors import ConfigError, DataError, ShapeError
from sit.geometry import build_patch_table, read_ssig
from sit.model import AttentionRecord


def random_attention(rng, s):
    logits = rng.standard_normal((s, s))
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def make_record(rng, layers, heads, s):
    record = AttentionRecord(layers, heads)
    for layer in range(layers):
        for head in range(heads):
            record.store(layer, head, random_attention(rng, s))
    return record


def test_residual_adjust_rows_sum_to_one(rng):
    a = random_attention(rng, 7)
    adjusted = residual_adjust(a)
    npt.assert_allclose(adjusted.sum(axis=-1), 1.0, atol=1e-12)
    # for a row-stochastic input 0.5*(A+I) is already row-stochastic, so the
    # renormalization changes nothing
    npt.assert_allclose(adjusted, 0.5 * (a + np.eye(7)), atol=1e-12)
    with pytest.raises(ShapeError):
        residual_adjust(np.ones((3, 4)))


def test_residual_adjust_formula(rng):
    a = random_attention(rng, 5)
    expected = 0.5 * (a + np.eye(5))
    expected /= expected.sum(axis=1, keepdims=True)
    npt.assert_allclose(residual_adjust(a), expected, atol=1e-15)


def test_rollout_single_layer_formula(rng):
    a = random_attention(rng, 6)
    record = AttentionRecord(1, 1)
    record.store(0, 0, a)
    got = rollout(record, head=0)
    want = residual_adjust(a)[0, 1:]
    npt.assert_allclose(got, want, atol=1e-12)
    assert got.shape == (5,)


def test_rollout_two_layer_dense_oracle(rng):
    a0, a1 = random_attention(rng, 5), random_attention(rng, 5)
    record = AttentionRecord(2, 1)
    record.store(0, 0, a0)
    record.store(1, 0, a1)
    product = residual_adjust(a1) @ residual_adjust(a0)  # last layer applied last
    npt.assert_allclose(rollout(record, 0), product[0, 1:], atol=1e-8)


def test_rollout_order_matters(rng):
    # the matrices don't commute, so swapped layers give a different answer
    a0, a1 = random_attention(rng, 5), random_attention(rng, 5)
    fwd = AttentionRecord(2, 1)
    fwd.store(0, 0, a0)
    fwd.store(1, 0, a1)
    rev = AttentionRecord(2, 1)
    rev.store(0, 0, a1)
    rev.store(1, 0, a0)
    assert not np.allclose(rollout(fwd, 0), rollout(rev, 0))


def test_rollout_uniform_attention_stays_uniform():
    s = 8
    record = AttentionRecord(3, 1)
    for layer in range(3):
        record.store(layer, 0, np.full((s, s), 1.0 / s))
    got = rollout(record, 0)
    npt.assert_allclose(got, got[0], atol=1e-8)  # all patches equal
    # the dropped regression-token column means the weights sum below 1
    assert got.sum() < 1.0


def test_rollout_product_rows_stochastic(rng):
    # before dropping special columns, the rolled-out row must sum to 1
    record = make_record(rng, layers=4, heads=2, s=9)
    for head in range(2):
        full = rollout(record, head, n_patches=8)
        product = None
        for layer in range(4):
            adj = residual_adjust(record.get(layer, head))
            product = adj if product is None else adj @ product
        npt.assert_allclose(product.sum(axis=1), 1.0, atol=1e-10)
        npt.assert_allclose(full, product[0, 1:9], atol=1e-12)


def test_rollout_keeps_heads_separate(rng):
    record = make_record(rng, layers=2, heads=3, s=6)
    outs = [rollout(record, h) for h in range(3)]
    assert not np.allclose(outs[0], outs[1])
    assert not np.allclose(outs[1], outs[2])


def test_rollout_batch_axis_passes_through(rng):
    record = AttentionRecord(2, 1)
    record.store(0, 0, np.stack([random_attention(rng, 5) for _ in range(3)]))
    record.store(1, 0, np.stack([random_attention(rng, 5) for _ in range(3)]))
    out = rollout(record, 0)
    assert out.shape == (3, 4)


def test_rollout_permutation_equivariance(rng):
    # relabeling patch positions permutes the output weights identically;
    # position 0 (the readout row) stays fixed
    s = 7
    a0, a1 = random_attention(rng, s), random_attention(rng, s)
    record = AttentionRecord(2, 1)
    record.store(0, 0, a0)
    record.store(1, 0, a1)
    base = rollout(record, 0)

    patch_perm = rng.permutation(s - 1)
    full_perm = np.concatenate([[0], patch_perm + 1])
    permuted = AttentionRecord(2, 1)
    permuted.store(0, 0, a0[np.ix_(full_perm, full_perm)])
    permuted.store(1, 0, a1[np.ix_(full_perm, full_perm)])
    npt.assert_allclose(rollout(permuted, 0), base[patch_perm], atol=1e-12)


def test_rollout_validation(rng):
    record = make_record(rng, 1, 1, 4)
    with pytest.raises(ConfigError):
        rollout(record, head=1)
    with pytest.raises(ShapeError):
        rollout(record, head=0, n_patches=4)
    incomplete = AttentionRecord(2, 1)
    incomplete.store(0, 0, random_attention(rng, 4))
    from sit.errors import StateError

    with pytest.raises(StateError):
        rollout(incomplete, 0)


def test_last_layer_row(rng):
    record = make_record(rng, layers=3, heads=2, s=6)
    got = last_layer_row(record, 1)
    npt.assert_array_equal(got, record.get(2, 1)[0, 1:])


# --- patch -> vertex maps ----------------------------------------------------


def test_patches_to_vertices_constant(table31):
    out = patches_to_vertices(np.full(table31.n_patches, 0.25), table31)
    assert out.shape == (642,)
    npt.assert_allclose(out, 0.25, atol=1e-12)


def test_patches_to_vertices_one_hot(table31):
    weights = np.zeros(table31.n_patches)
    weights[12] = 1.0
    out = patches_to_vertices(weights, table31)
    members = table31.patches[12]
    counts = table31.vertex_patch_counts()
    assert (out[np.setdiff1d(np.arange(642), members)] == 0).all()
    npt.assert_allclose(out[members], 1.0 / counts[members], atol=1e-12)


def test_patches_to_vertices_mass_oracle(table31, rng):
    # sum over vertices of value*count equals sum over patches of weight*V
    weights = rng.random(table31.n_patches)
    out = patches_to_vertices(weights, table31)
    counts = table31.vertex_patch_counts()
    npt.assert_allclose(
        float((out * counts).sum()),
        float(weights.sum() * table31.verts_per_patch),
        rtol=1e-12,
    )


def test_patches_to_vertices_shape_check(table31):
    with pytest.raises(DataError):
        patches_to_vertices(np.ones(7), table31)


# --- thresholding and averaging ----------------------------------------------


def test_threshold_zero_is_copy(rng):
    values = rng.random(50)
    out = threshold_map(values, 0.0)
    npt.assert_array_equal(out, values)
    out[0] = -1.0
    assert values[0] != -1.0  # copy, not a view


def test_threshold_keeps_ceil_fraction(rng):
    values = rng.permutation(100).astype(np.float64)
    out = threshold_map(values, 0.9)
    assert (out > 0).sum() == 10  # ceil(0.1 * 100)
    kept = np.sort(values)[-10:]
    npt.assert_array_equal(np.sort(out[out > 0]), kept)


def test_threshold_sort_oracle(rng):
    values = rng.random(33)
    q = 0.7
    keep = int(np.ceil(0.3 * 33))
    out = threshold_map(values, q)
    order = np.argsort(values)[::-1]
    expected = np.zeros_like(values)
    expected[order[:keep]] = values[order[:keep]]
    npt.assert_array_equal(out, expected)


def test_threshold_argmax_always_survives(rng):
    values = rng.random(64)
    out = threshold_map(values, 0.99)
    assert out[np.argmax(values)] == values.max()
    assert (out > 0).sum() == 1


def test_threshold_validation():
    with pytest.raises(ConfigError):
        threshold_map(np.ones(4), 1.0)
    with pytest.raises(ConfigError):
        threshold_map(np.ones(4), -0.1)


def test_average_maps(rng):
    maps = []
    for i in range(4):
        values = np.zeros((2, 10))
        values[:, i] = 1.0
        maps.append(VertexAttentionMap(values=values, layer_range=(0, 1), subject=f"s{i}"))
    avg = average_maps(maps)
    assert avg.subject == "average(4 maps)"
    npt.assert_allclose(avg.values[:, :4], 0.25, atol=1e-15)
    npt.assert_allclose(avg.values[:, 4:], 0.0, atol=1e-15)

    single = average_maps(maps[:1])
    assert single.subject == "s0"
    npt.assert_array_equal(single.values, maps[0].values)

    with pytest.raises(DataError):
        average_maps([])
    with pytest.raises(DataError):
        average_maps([maps[0], VertexAttentionMap(values=np.zeros((2, 9)), layer_range=(0, 1))])


def test_vertex_map_validation():
    with pytest.raises(DataError):
        VertexAttentionMap(values=np.zeros(5), layer_range=(0, 0))
    with pytest.raises(DataError):
        VertexAttentionMap(values=-np.ones((1, 5)), layer_range=(0, 0))
    with pytest.raises(DataError):
        VertexAttentionMap(values=np.full((1, 5), np.nan), layer_range=(0, 0))


def test_save_attention_ssig_roundtrip(tmp_path, rng):
    vmap = VertexAttentionMap(values=rng.random((3, 162)), layer_range=(0, 1), subject="s1")
    path = tmp_path / "attn.ssig"
    save_attention_ssig(path, vmap)
    back = read_ssig(path)
    assert back.channel_names == ("head0", "head1", "head2")
    npt.assert_allclose(back.values, vmap.values.T, atol=1e-7)  # float32 storage
