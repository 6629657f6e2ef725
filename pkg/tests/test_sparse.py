import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import dense_bottleneck, dense_max_pool, dense_subm_conv, densify, random_sparse, sparse_to_dict
from spconvot.engine import DimensionError, Tape, Tensor
from spconvot.engine import functional as F
from spconvot.engine.gradcheck import gradcheck
from spconvot.sparse import (MSTCN, Bottleneck, ConfigError, CoordIndex, SparseTensor4D, SubMConv,
                             global_sparse_max_pool, pack, parse_dump, sparse_max_pool, submanifold_conv,
                             unpack, voxelize)


def make(coords, feats, res, batch=None, grad=False):
    return SparseTensor4D.from_arrays(np.asarray(coords), np.asarray(feats, dtype=float), res, batch,
                                      requires_grad=grad)


class TestCoordIndex:
    def test_pack_round_trip(self, rng):
        c = rng.integers(0, 64, size=(200, 5))
        np.testing.assert_array_equal(unpack(pack(c)), c)

    def test_pack_is_lexicographic(self, rng):
        c = rng.integers(0, 4, size=(300, 5))
        order = np.argsort(pack(c), kind="stable")
        lex = np.lexsort(c.T[::-1])
        np.testing.assert_array_equal(c[order], c[lex])

    def test_lookup_exact(self, rng):
        keys = np.unique(rng.integers(0, 1 << 40, size=5000))
        index = CoordIndex(keys)
        np.testing.assert_array_equal(index.lookup(keys), np.arange(keys.size))
        absent = np.setdiff1d(rng.integers(0, 1 << 40, size=5000), keys)
        assert np.all(index.lookup(absent) == -1)

    def test_colliding_keys(self):
        # many keys that share low bits still resolve exactly
        keys = np.arange(0, 1 << 20, 1 << 12, dtype=np.int64)
        index = CoordIndex(keys)
        np.testing.assert_array_equal(index.lookup(keys), np.arange(keys.size))

    def test_duplicates_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            CoordIndex(np.array([5, 9, 5]))

    def test_empty(self):
        assert CoordIndex(np.zeros(0, dtype=np.int64)).lookup(np.array([1, 2])).tolist() == [-1, -1]


class TestVoxelize:
    def test_floor_division(self):
        p = Tensor([[0.49, 0.50, 0.51]])
        s = voxelize(p, [0], [0], (1, 4, 4, 4))
        assert s.coords.tolist() == [[0, 0, 1, 2, 2]]

    def test_mean_of_colocated(self):
        p = Tensor([[0.1, 0.1, 0.1, 2.0], [0.12, 0.11, 0.1, 4.0]])
        s = voxelize(p, [0, 0], [3, 3], (4, 4, 4, 4))
        assert len(s) == 1
        np.testing.assert_allclose(s.feats.data, [[0.11, 0.105, 0.1, 3.0]])

    def test_max_aggregation(self):
        p = Tensor([[0.1, 0.1, 0.1, 2.0], [0.12, 0.11, 0.1, 4.0]])
        s = voxelize(p, [0, 0], [0, 0], (1, 4, 4, 4), aggregation="max")
        np.testing.assert_allclose(s.feats.data, [[0.12, 0.11, 0.1, 4.0]])

    def test_clamp_one(self):
        s = voxelize(Tensor([[1.0, 1.0, 0.0]]), [0], [0], (1, 64, 64, 64))
        assert s.coords.tolist() == [[0, 0, 63, 63, 0]]

    def test_empty(self):
        s = voxelize(Tensor(np.zeros((0, 4))), [], [], (2, 4, 4, 4))
        assert len(s) == 0 and s.channels == 4

    @pytest.mark.parametrize("agg", ["mean", "max"])
    def test_permutation_invariant(self, rng, agg):
        pts = rng.uniform(size=(300, 5))
        b = rng.integers(0, 2, 300)
        t = rng.integers(0, 4, 300)
        a = voxelize(Tensor(pts), b, t, (4, 4, 4, 4), aggregation=agg)
        perm = rng.permutation(300)
        c = voxelize(Tensor(pts[perm]), b[perm], t[perm], (4, 4, 4, 4), aggregation=agg)
        da, dc = sparse_to_dict(a), sparse_to_dict(c)
        assert da.keys() == dc.keys()
        for k in da:
            np.testing.assert_allclose(da[k], dc[k], rtol=1e-12)

    @pytest.mark.parametrize("agg", ["mean", "max"])
    def test_gradcheck(self, rng, agg):
        pts = Tensor(rng.uniform(size=(30, 4)), requires_grad=True)
        b = np.zeros(30, dtype=int)
        t = rng.integers(0, 2, 30)
        w = None

        def fn():
            nonlocal w
            s = voxelize(pts, b, t, (2, 2, 2, 2), aggregation=agg)
            if w is None:
                w = Tensor(rng.normal(size=s.feats.shape))
            return F.sum(F.mul(s.feats, w))

        fn()
        assert gradcheck(fn, [pts], h=1e-7) <= 1e-6


class TestSubmanifoldConv:
    def test_center_identity(self, rng):
        coords, feats = random_sparse(rng, channels=3)
        s = make(coords, feats, (4, 8, 8, 8), 2)
        W = np.zeros((27, 3, 3))
        W[13] = np.eye(3)
        out = submanifold_conv(s, Tensor(W), Tensor(np.zeros(3)), (1, 3, 3, 3))
        np.testing.assert_array_equal(out.feats.data, feats)
        assert out.cs is s.cs

    def test_adjacent_pair(self):
        s = make([[0, 0, 0, 0, 0], [0, 0, 1, 0, 0]], [[1.0], [2.0]], (1, 4, 4, 4))
        out = submanifold_conv(s, Tensor(np.ones((81, 1, 1))), None, 3)
        np.testing.assert_array_equal(out.feats.data, [[3.0], [3.0]])

    def test_isolated_site(self):
        s = make([[0, 1, 2, 2, 2]], [[5.0]], (4, 8, 8, 8))
        out = submanifold_conv(s, Tensor(np.ones((625, 1, 1))), None, 5)
        np.testing.assert_array_equal(out.feats.data, [[5.0]])

    def test_channel_mismatch(self):
        s = make([[0, 0, 0, 0, 0]], [[1.0, 2.0]], (1, 2, 2, 2))
        with pytest.raises(DimensionError):
            submanifold_conv(s, Tensor(np.ones((1, 3, 1))), None, 1)

    @pytest.mark.parametrize("extent", [(3, 3, 3, 3), (1, 3, 3, 3), (5, 1, 1, 1), (3, 5, 1, 3)])
    def test_dense_oracle(self, rng, extent):
        res = (4, 6, 6, 6)
        coords, feats = random_sparse(rng, res=res, channels=2, density=0.1)
        K = int(np.prod(extent))
        W, b = rng.normal(size=(K, 2, 3)), rng.normal(size=3)
        out = submanifold_conv(make(coords, feats, res, 2), Tensor(W), Tensor(b), extent)
        dense, mask = densify(coords, feats, 2, res)
        expect = dense_subm_conv(dense, mask, W, b, extent)[tuple(coords.T)]
        np.testing.assert_allclose(out.feats.data, expect, rtol=1e-10, atol=1e-12)

    def test_gradcheck(self, rng):
        coords, feats = random_sparse(rng, batch=1, res=(3, 4, 4, 4), channels=2, density=0.2)
        coords, feats = coords[:40], feats[:40]
        s = make(coords, feats, (3, 4, 4, 4), 1, grad=True)
        W = Tensor(rng.normal(size=(81, 2, 2)), requires_grad=True)
        b = Tensor(rng.normal(size=2), requires_grad=True)
        w = Tensor(rng.normal(size=(len(coords), 2)))
        err = gradcheck(lambda: F.sum(F.mul(submanifold_conv(s, W, b, 3).feats, w)), [s.feats, W, b],
                        max_entries=60)
        assert err <= 1e-6


class TestPooling:
    def test_single_site(self):
        s = make([[0, 2, 2, 2, 2]], [[7.0]], (4, 4, 4, 4))
        out = sparse_max_pool(s)
        assert out.coords.tolist() == [[0, 1, 1, 1, 1]]
        assert out.feats.data.tolist() == [[7.0]]
        assert out.resolution == (2, 2, 2, 2)

    def test_odd_site_hits_two_windows_per_axis(self):
        s = make([[0, 1, 1, 1, 1]], [[1.0]], (4, 4, 4, 4))
        assert len(sparse_max_pool(s)) == 16

    def test_constant_value(self, rng):
        coords, _ = random_sparse(rng)
        s = make(coords, np.full((len(coords), 2), 3.5), (4, 8, 8, 8), 2)
        out = sparse_max_pool(s)
        assert np.all(out.feats.data == 3.5)

    @pytest.mark.parametrize("res", [(4, 8, 8, 8), (3, 5, 7, 2), (1, 4, 4, 4)])
    def test_dense_oracle(self, rng, res):
        coords, feats = random_sparse(rng, res=res, channels=3, density=0.08)
        out = sparse_max_pool(make(coords, feats, res, 2))
        dense, mask = densify(coords, feats, 2, res)
        best, hit = dense_max_pool(dense, mask)
        assert out.resolution == hit.shape[1:]
        assert {tuple(c) for c in np.argwhere(hit)} == {tuple(c) for c in out.coords.tolist()}
        np.testing.assert_array_equal(out.feats.data, best[tuple(out.coords.T)])

    def test_gradcheck(self, rng):
        coords, feats = random_sparse(rng, batch=1, res=(4, 4, 4, 4), channels=2, density=0.15)
        s = make(coords[:40], feats[:40], (4, 4, 4, 4), 1, grad=True)
        w = Tensor(rng.normal(size=(len(sparse_max_pool(s)), 2)))
        assert gradcheck(lambda: F.sum(F.mul(sparse_max_pool(s).feats, w)), [s.feats]) <= 1e-6

    def test_global_pool(self, rng):
        coords, feats = random_sparse(rng, channels=4)
        s = make(coords, feats, (4, 8, 8, 8), 2)
        out = global_sparse_max_pool(s)
        expect = [feats[coords[:, 0] == b].max(axis=0) for b in range(2)]
        np.testing.assert_array_equal(out.data, expect)
        perm = rng.permutation(len(coords))
        np.testing.assert_array_equal(global_sparse_max_pool(s.permuted(perm)).data, out.data)

    def test_global_pool_single_site(self):
        s = make([[0, 0, 0, 0, 0]], [[1.0, -2.0]], (1, 1, 1, 1))
        np.testing.assert_array_equal(global_sparse_max_pool(s).data, [[1.0, -2.0]])

    def test_global_pool_empty_batch(self):
        s = make([[1, 0, 0, 0, 0]], [[1.0]], (1, 1, 1, 1), batch=2)
        with pytest.raises(ValueError, match="no active sites"):
            global_sparse_max_pool(s)

    def test_global_gradcheck(self, rng):
        coords, feats = random_sparse(rng, batch=2, res=(2, 3, 3, 3), channels=3, density=0.3)
        s = make(coords[:45], feats[:45], (2, 3, 3, 3), 2, grad=True)
        w = Tensor(rng.normal(size=(2, 3)))
        assert gradcheck(lambda: F.sum(F.mul(global_sparse_max_pool(s), w)), [s.feats]) <= 1e-6


class TestBlocks:
    def test_mstcn_widths(self, rng):
        m = MSTCN(128, rng)
        assert [b.out_channels for b in m.branches] == [32] * 4
        assert [b.extent for b in m.branches] == [(3, 1, 1, 1), (5, 1, 1, 1), (7, 1, 1, 1), (9, 1, 1, 1)]
        coords, _ = random_sparse(rng, res=(4, 4, 4, 4), density=0.1)
        out = m(make(coords, rng.normal(size=(len(coords), 128)), (4, 4, 4, 4), 2))
        assert out.channels == 128

    def test_mstcn_divisibility(self, rng):
        with pytest.raises(ConfigError):
            MSTCN(10, rng)

    def test_mstcn_single_frame_is_pointwise(self, rng):
        coords, feats = random_sparse(rng, res=(1, 4, 4, 4), channels=8, density=0.2)
        s = make(coords, feats, (1, 4, 4, 4), 2)
        m = MSTCN(8, rng)
        out = m(s).feats.data
        expect = np.concatenate([feats @ b.weight.data[b.extent[0] // 2] + b.bias.data for b in m.branches], axis=1)
        np.testing.assert_allclose(out, expect, rtol=1e-12)

    def test_mstcn_dense_oracle(self, rng):
        res = (4, 4, 4, 4)
        coords, feats = random_sparse(rng, res=res, channels=8, density=0.15)
        m = MSTCN(8, rng)
        out = m(make(coords, feats, res, 2)).feats.data
        dense, mask = densify(coords, feats, 2, res)
        parts = [dense_subm_conv(dense, mask, b.weight.data, b.bias.data, b.extent) for b in m.branches]
        expect = np.concatenate(parts, axis=-1)[tuple(coords.T)]
        np.testing.assert_allclose(out, expect, rtol=1e-10, atol=1e-12)

    def test_bottleneck_config(self, rng):
        blk = Bottleneck(128, 64, 256, rng)
        assert blk.match is not None and blk.match.out_channels == 256
        assert Bottleneck(8, 4, 8, rng).match is None
        with pytest.raises(ConfigError):
            Bottleneck(128, 32, 256, rng)

    def test_bottleneck_zero_weights_is_residual(self, rng):
        coords, feats = random_sparse(rng, res=(2, 4, 4, 4), channels=4, density=0.2)
        s = make(coords, feats, (2, 4, 4, 4), 2)
        blk = Bottleneck(4, 2, 6, rng)
        for conv in (blk.reduce.conv, blk.mix.conv, blk.expand.conv):
            conv.weight.data[...] = 0
        out = blk(s).feats.data
        np.testing.assert_allclose(out, feats @ blk.match.weight.data[0] + blk.match.bias.data, rtol=1e-12)

    def test_bottleneck_dense_oracle(self, rng):
        res = (4, 4, 4, 4)
        coords, feats = random_sparse(rng, res=res, channels=4, density=0.15)
        blk = Bottleneck(4, 2, 6, rng)
        out = blk(make(coords, feats, res, 2)).feats.data
        assert_bottleneck_matches(blk, coords, feats, res, out)


def assert_bottleneck_matches(blk, coords, feats, res, out, rtol=1e-10):
    dense, mask = densify(coords, feats, 2, res)
    np.testing.assert_allclose(out, dense_bottleneck(blk, dense, mask)[tuple(coords.T)], rtol=rtol, atol=1e-12)


def test_dump_round_trip(rng):
    coords, feats = random_sparse(rng, res=(2, 3, 3, 3), channels=2, density=0.3)
    s = make(coords, feats, (2, 3, 3, 3), 2)
    text = s.dump()
    lines = text.splitlines()
    keys = [tuple(int(v) for v in line.split()[:5]) for line in lines]
    assert keys == sorted(keys)
    back = parse_dump(text, (2, 3, 3, 3), 2)
    assert back.dump() == text


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([1, 3, 5]), st.sampled_from([1, 3]))
def test_submanifold_closure(seed, kt, ks):
    r = np.random.default_rng(seed)
    coords, feats = random_sparse(r, res=(4, 5, 5, 5), channels=2, density=0.1)
    s = make(coords, feats, (4, 5, 5, 5), 2)
    conv = SubMConv(2, 3, (kt, ks, ks, ks), r)
    out = conv(s)
    assert {tuple(c) for c in out.coords.tolist()} == {tuple(c) for c in coords.tolist()}


def test_training_mode_sparse_bn_runs(rng):
    coords, feats = random_sparse(rng, res=(2, 4, 4, 4), channels=4, density=0.2)
    s = make(coords, feats, (2, 4, 4, 4), 2, grad=True)
    blk = Bottleneck(4, 2, 4, rng)
    with Tape() as tape:
        loss = F.sum(blk(s).feats)
    tape.backward(loss)
    assert all(p.grad is not None for p in blk.parameters())
