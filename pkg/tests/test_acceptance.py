"""The nine acceptance criteria, each at its stated tolerance.

Every test prints one ``criterion N [PASS|FAIL]`` line (repeated in the
terminal summary) and then asserts.  Criterion 6 trains a model and takes
several minutes.
"""

import time

import numpy as np
import pytest

from oracles import (dense_bottleneck, dense_max_pool, dense_subm_conv, densify, interleave_bigint, random_sparse,
                     reference_dbscan, same_partition)
from spconvot.data.sequence import PersonSequence
from spconvot.engine import functional as F
from spconvot.engine.gradcheck import gradcheck
from spconvot.engine.nn import BatchNorm, Linear, PointwiseConv1d
from spconvot.engine.tensor import Tensor
from spconvot.experiments import desk_learning, shape_trace
from spconvot.geometry import CameraIntrinsics, back_project, minmax_normalize_sequence, project_instance
from spconvot.harness import benchmark
from spconvot.model import ActionNet, ModelConfig, PartEmbeddingTable, ensemble_predict, search_lambda
from spconvot.sampling import (dbscan, denoise_mask, fill_convex_hull, ifps, keep_main_cluster, prune_metric,
                               prune_percentile, quantize, zorder_keys)
from spconvot.sparse import (MSTCN, Bottleneck, SparseTensor4D, SubMConv, global_sparse_max_pool, sparse_max_pool,
                             voxelize)
from spconvot.sparse.layers import ConvBNReLU
from spconvot.tnet import TNet
from test_model import brute_lambda, mini_config, random_batch


def sparse(coords, feats, res, batch, grad=False):
    return SparseTensor4D.from_arrays(coords, feats, res, batch, requires_grad=grad)


def rel(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        return np.inf
    return float(np.max(np.abs(a - b), initial=0.0) / max(np.max(np.abs(b), initial=0.0), 1e-300))


def random_instance(r, channels):
    batch = int(r.integers(1, 3))
    res = (int(r.integers(1, 5)), *(int(v) for v in r.integers(2, 9, size=3)))
    coords, feats = random_sparse(r, batch=batch, res=res, channels=channels, density=r.uniform(0.02, 0.3))
    return coords, feats, res, batch


def conv_case(r):
    cin, cout = (int(v) for v in r.integers(1, 5, size=2))
    coords, feats, res, batch = random_instance(r, cin)
    extent = [(3, 3, 3, 3), (1, 3, 3, 3), (3, 1, 1, 1), (1, 1, 1, 1), (5, 3, 1, 3)][int(r.integers(5))]
    conv = SubMConv(cin, cout, extent, r)
    out = conv(sparse(coords, feats, res, batch))
    dense, mask = densify(coords, feats, batch, res)
    return rel(out.feats.data, dense_subm_conv(dense, mask, conv.weight.data, conv.bias.data, extent)[tuple(coords.T)])


def mstcn_case(r):
    coords, feats, res, batch = random_instance(r, 8)
    m = MSTCN(8, r)
    out = m(sparse(coords, feats, res, batch)).feats.data
    dense, mask = densify(coords, feats, batch, res)
    expect = np.concatenate([dense_subm_conv(dense, mask, b.weight.data, b.bias.data, b.extent) for b in m.branches],
                            axis=-1)
    return rel(out, expect[tuple(coords.T)])


def bottleneck_case(r):
    coords, feats, res, batch = random_instance(r, 4)
    blk = Bottleneck(4, 2, [4, 6][int(r.integers(2))], r)
    for stage in (blk.reduce, blk.mix, blk.expand):
        stage.bn.gamma.data[...] = r.uniform(0.5, 2, size=stage.bn.gamma.shape)
        stage.bn.beta.data[...] = r.normal(size=stage.bn.beta.shape)
    out = blk(sparse(coords, feats, res, batch)).feats.data
    dense, mask = densify(coords, feats, batch, res)
    return rel(out, dense_bottleneck(blk, dense, mask)[tuple(coords.T)])


def pool_case(r):
    coords, feats, res, batch = random_instance(r, 3)
    out = sparse_max_pool(sparse(coords, feats, res, batch))
    dense, mask = densify(coords, feats, batch, res)
    best, hit = dense_max_pool(dense, mask)
    if {tuple(c) for c in np.argwhere(hit).tolist()} != {tuple(c) for c in out.coords.tolist()}:
        return np.inf
    return rel(out.feats.data, best[tuple(out.coords.T)])


def global_pool_case(r):
    coords, feats, res, batch = random_instance(r, 3)
    out = global_sparse_max_pool(sparse(coords, feats, res, batch)).data
    dense, mask = densify(coords, feats, batch, res)
    expect = np.where(mask[..., None], dense, -np.inf).reshape(batch, -1, 3).max(axis=1)
    return rel(out, expect)


def test_criterion_1_sparse_matches_dense(acceptance_report):
    r = np.random.default_rng(101)
    plan = [(conv_case, 100), (mstcn_case, 40), (bottleneck_case, 40), (pool_case, 60), (global_pool_case, 30)]
    t0 = time.perf_counter()
    worst = {}
    for case, n in plan:
        worst[case.__name__] = max(case(r) for _ in range(n))
    seconds = time.perf_counter() - t0
    total = sum(n for _, n in plan)
    ok = total >= 100 and max(worst.values()) <= 1e-10 and seconds < 60
    acceptance_report(1, "sparse vs dense oracles", ok,
                      f"{total} instances, worst rel err {max(worst.values()):.2e}, {seconds:.1f}s")
    assert ok, worst


def probe(r, fn):
    """Scalar ``sum(fn() * w)`` with a fixed random ``w``, so every output entry is tested."""
    w = Tensor(r.normal(size=fn().shape))
    return lambda: F.sum(F.mul(fn(), w))


def param(r, *shape, low=None):
    data = r.normal(size=shape) if low is None else r.uniform(low, 2.0, size=shape)
    return Tensor(data, requires_grad=True)


def _elementwise_checks(r):
    a, b, sq = param(r, 4, 5), param(r, 4, 5), param(r, 3, 4, 4)
    away = Tensor(np.where(r.random((4, 5)) < 0.5, -1, 1) * r.uniform(0.01, 2, size=(4, 5)), requires_grad=True)
    return {
        "add": gradcheck(probe(r, lambda: F.add(a, b)), [a, b]),
        "add_scalar": gradcheck(probe(r, lambda: F.add(a, 1.5)), [a]),
        "mul": gradcheck(probe(r, lambda: F.mul(a, b)), [a, b]),
        "mul_scalar": gradcheck(probe(r, lambda: F.mul(a, -0.7)), [a]),
        "relu": gradcheck(probe(r, lambda: F.relu(away)), [away]),
        "add_identity": gradcheck(probe(r, lambda: F.add_identity(sq)), [sq]),
    }


def _structural_checks(r):
    x, y, x2 = param(r, 3, 4, 5), param(r, 3, 2, 5), param(r, 4, 5)
    W, Wc, bias = param(r, 5, 6), param(r, 6, 4), param(r, 6)
    m, h, table, logits = param(r, 3, 5, 2), param(r, 2, 3, 7), param(r, 6, 3), param(r, 5, 4)
    gamma, beta = param(r, 4, low=0.5), param(r, 4)
    idx = r.integers(0, 6, size=(4, 5))
    return {
        "sum": gradcheck(lambda: F.sum(x), [x]),
        "mean": gradcheck(probe(r, lambda: F.mean(x)), [x]),
        "reshape": gradcheck(probe(r, lambda: F.reshape(x, (12, 5))), [x]),
        "transpose": gradcheck(probe(r, lambda: F.transpose(x, (2, 0, 1))), [x]),
        "concat": gradcheck(probe(r, lambda: F.concat([x, y], axis=1)), [x, y]),
        "affine": gradcheck(probe(r, lambda: F.affine(x2, W, bias)), [x2, W, bias]),
        "matmul": gradcheck(probe(r, lambda: F.matmul(x, m)), [x, m]),
        "pointwise_conv1d": gradcheck(probe(r, lambda: F.pointwise_conv1d(x, Wc, bias)), [x, Wc, bias]),
        "batch_norm_train": gradcheck(
            probe(r, lambda: F.batch_norm(x, gamma, beta, np.zeros(4), np.ones(4), True)), [x, gamma, beta]),
        "batch_norm_eval": gradcheck(
            probe(r, lambda: F.batch_norm(x, gamma, beta, np.full(4, 0.3), np.full(4, 2.0), False)),
            [x, gamma, beta]),
        "max_over_points": gradcheck(probe(r, lambda: F.max_over_points(h)), [h]),
        "cross_entropy": gradcheck(lambda: F.cross_entropy(logits, [0, 3, 1, 1, 2]), [logits]),
        "gather_rows": gradcheck(probe(r, lambda: F.gather_rows(table, idx)), [table]),
    }


def _layer_checks(r):
    out = {}
    pts = param(r, 30, 3)
    pts.data[...] = r.uniform(0, 1, size=(30, 3))
    bidx, tidx = r.integers(0, 2, 30), r.integers(0, 2, 30)
    for agg in ("mean", "max"):
        out[f"voxelize_{agg}"] = gradcheck(probe(r, lambda: voxelize(pts, bidx, tidx, (2, 2, 2, 2), 2, agg).feats),
                                           [pts])
    coords, feats = random_sparse(r, batch=2, res=(3, 4, 4, 4), channels=4, density=0.12)
    st = sparse(coords, feats, (3, 4, 4, 4), 2, grad=True)
    conv = SubMConv(4, 3, 3, r)
    out["submanifold_conv"] = gradcheck(probe(r, lambda: conv(st).feats), [st.feats, conv.weight, conv.bias],
                                        max_entries=40)
    out["sparse_max_pool"] = gradcheck(probe(r, lambda: sparse_max_pool(st).feats), [st.feats])
    out["global_max_pool"] = gradcheck(probe(r, lambda: global_sparse_max_pool(st)), [st.feats])
    for name, layer in (("mstcn", MSTCN(4, r)), ("conv_bn_relu", ConvBNReLU(4, 3, 3, r)),
                        ("bottleneck", Bottleneck(4, 2, 6, r))):
        out[name] = gradcheck(probe(r, lambda: layer(st).feats), [st.feats, *layer.parameters()], max_entries=20)
    lin, pconv, pconv_nb, bn = Linear(3, 5, r), PointwiseConv1d(3, 5, r), PointwiseConv1d(3, 5, r, bias=False), BatchNorm(5)
    z, cloud = param(r, 4, 3), param(r, 2, 3, 6)
    out["linear"] = gradcheck(probe(r, lambda: lin(z)), [z, lin.weight, lin.bias])
    out["pointwise_conv"] = gradcheck(probe(r, lambda: pconv(cloud)), [cloud, pconv.weight, pconv.bias])
    out["pointwise_conv_bn"] = gradcheck(probe(r, lambda: bn(pconv_nb(cloud))), [cloud, pconv_nb.weight, bn.gamma, bn.beta])
    tnet = TNet(3, r, (8, 8, 16), (8, 6))
    tnet.head.weight.data[...] = r.normal(scale=0.3, size=tnet.head.weight.shape)
    frames = param(r, 3, 10, 3)
    out["tnet"] = gradcheck(probe(r, lambda: tnet(frames)[1]), [frames, *tnet.parameters()], max_entries=8)
    emb = PartEmbeddingTable(5, r)
    labels = r.integers(0, 6, size=(2, 7))
    out["part_embedding"] = gradcheck(probe(r, lambda: emb(labels)), [emb.weight])
    return out


def test_criterion_2_gradients(acceptance_report):
    t0 = time.perf_counter()
    r = np.random.default_rng(202)
    elementwise = _elementwise_checks(r)
    other = {**_structural_checks(r), **_layer_checks(r)}
    cfg = mini_config(use_parts=True)
    assert (cfg.frames, cfg.num_points, cfg.resolution, cfg.num_classes) == (4, 32, 8, 2)
    model = ActionNet(cfg, seed=5)
    for p in model.parameters():  # move off the zero-initialized transform head and unit BN scales
        p.data += r.normal(scale=0.05, size=p.shape)
    batch = random_batch(cfg, r)
    other["miniature_model"] = gradcheck(lambda: F.cross_entropy(model(batch), batch.labels), model.parameters(),
                                         max_entries=6)
    seconds = time.perf_counter() - t0
    worst_e, worst_o = max(elementwise.values()), max(other.values())
    ok = worst_e <= 1e-6 and worst_o <= 1e-5 and seconds < 300
    acceptance_report(2, "finite-difference gradients", ok,
                      f"{len(elementwise) + len(other)} checks, elementwise worst {worst_e:.1e}, "
                      f"others worst {worst_o:.1e} (model {other['miniature_model']:.1e}), {seconds:.1f}s")
    assert ok, {k: v for k, v in {**elementwise, **other}.items() if v > 1e-6}


def test_criterion_3_submanifold_closure(acceptance_report):
    r = np.random.default_rng(303)
    layers = {
        "conv3": SubMConv(4, 4, 3, r), "conv1333": SubMConv(4, 4, (1, 3, 3, 3), r),
        "conv_temporal": SubMConv(4, 4, (9, 1, 1, 1), r), "conv5": SubMConv(4, 4, 5, r),
        "conv_bn_relu": ConvBNReLU(4, 4, 3, r), "mstcn": MSTCN(4, r), "bottleneck": Bottleneck(4, 2, 8, r),
    }
    failures, checked = 0, 0
    for _ in range(1000):
        coords, feats, res, batch = random_instance(r, 4)
        st = sparse(coords, feats, res, batch)
        want = {tuple(c) for c in coords.tolist()}
        for layer in layers.values():
            got = layer(st).coords
            checked += 1
            if len(got) != len(coords) or {tuple(c) for c in got.tolist()} != want:
                failures += 1
    ok = failures == 0
    acceptance_report(3, "submanifold closure", ok,
                      f"1000 tensors x {len(layers)} layers, {failures} of {checked} outputs changed the site set")
    assert ok


def brute_force_ifps(points, m):
    """Recomputes every distance from scratch each step; lowest index wins ties."""
    chosen = [0]
    d2 = ((points[:, None, :] - points[None, :, :]) ** 2).sum(-1)
    while len(chosen) < m:
        gap = d2[:, chosen].min(axis=1)
        gap[chosen] = -1
        chosen.append(int(np.argmax(gap)))
    return chosen


def test_criterion_4_classical_algorithms(acceptance_report):
    r = np.random.default_rng(404)
    ifps_bad = 0
    for k in range(500):
        M = int(r.integers(1, 257))
        pts = r.normal(size=(M, 3))
        if k % 10 == 0:
            pts = np.round(pts, 1)  # duplicate points and exact ties
        m = int(r.integers(1, M + 1))
        ifps_bad += ifps(pts, m).tolist() != brute_force_ifps(pts, m)
    db_bad = 0
    for _ in range(200):
        n = int(r.integers(0, 80))
        centres = r.uniform(0, 1, size=(int(r.integers(1, 4)), 3))
        pts = centres[r.integers(0, len(centres), n)] + r.normal(scale=r.uniform(0.01, 0.1), size=(n, 3))
        eps, min_pts = r.uniform(0.02, 0.3), int(r.integers(1, 8))
        ours = dbscan(pts, eps, min_pts)
        db_bad += not same_partition(ours, reference_dbscan(pts, eps, min_pts)) if n else ours.size != 0
    z_bad = 0
    for _ in range(20):
        pts = r.normal(size=(300, 3)) * r.uniform(0.1, 100)
        q = quantize(pts)
        oracle = sorted(range(len(pts)), key=lambda i: (interleave_bigint(q[i], 21), i))
        z_bad += np.argsort(zorder_keys(pts), kind="stable").tolist() != oracle
    ok = ifps_bad == db_bad == z_bad == 0
    acceptance_report(4, "classical algorithm oracles", ok,
                      f"ifps {500 - ifps_bad}/500, dbscan {200 - db_bad}/200, z-order sorts {20 - z_bad}/20")
    assert ok


def test_criterion_5_shape_trace(acceptance_report):
    observed, expected = shape_trace(resolution=64, num_classes=5)
    ok = observed == expected and len(observed) == 11
    mismatch = [(o, e) for o, e in zip(observed, expected) if o != e]
    acceptance_report(5, "layer shape trace", ok,
                      f"{len(observed)} layers, head {dict(observed).get('head')}, mismatches {mismatch}")
    assert ok


def test_criterion_6_desk_learning(acceptance_report):
    res = desk_learning(seed=0, epochs=30, batch_size=16, time_budget=18 * 60, log=print)
    ok = res["test_accuracy"] >= 0.9 and res["epochs_run"] <= 30 and res["train_seconds"] <= 20 * 60
    acceptance_report(6, "desk-scale learning", ok,
                      f"test accuracy {res['test_accuracy']:.3f} after {res['epochs_run']} epochs, "
                      f"{res['train_seconds']:.0f}s training (+{res['generation_seconds']:.0f}s data generation), "
                      "1 CPU core")
    assert ok


def test_criterion_7_throughput_direction(acceptance_report):
    rows = benchmark(ModelConfig.desk(), points=(512, 1024, 2048), persons=(1, 2), repeats=3)
    tp = {(row["points"], row["persons"]): row["seq_per_s"] for row in rows}
    along_points = all(tp[(a, p)] > tp[(b, p)] for p in (1, 2) for a, b in ((512, 1024), (1024, 2048)))
    along_persons = all(tp[(n, 1)] > tp[(n, 2)] for n in (512, 1024, 2048))
    ok = along_points and along_persons
    table = ", ".join(f"{n}x{p}: {v:.2f}" for (n, p), v in tp.items())
    acceptance_report(7, "throughput direction", ok, f"seq/s {table}")
    assert ok


def test_criterion_8_ensemble_identity(acceptance_report):
    r = np.random.default_rng(808)
    bit_match = True
    for _ in range(200):
        n, c = int(r.integers(1, 40)), int(r.integers(2, 8))
        a = r.normal(size=(n, c)) * 10.0 ** r.integers(-3, 4)
        b = r.normal(size=(n, c)) * 10.0 ** r.integers(-3, 300)
        bit_match &= np.array_equal(ensemble_predict(a, b, 1.0, 0.0), np.argmax(a, axis=1))
    hand = [
        (np.array([[2.0, 0], [0, 1], [1, 0]]), np.array([[0.0, 1], [1, 0], [0, 3]]), np.array([0, 1, 1])),
        (np.array([[1.0, 0, 0], [0, 1, 0], [0, 0, 1]]), np.array([[0.0, 0, 2], [2, 0, 0], [0, 2, 0]]),
         np.array([2, 1, 0])),
        (np.array([[3.0, 1], [1, 3], [2, 2.5]]), np.array([[0.0, 4], [4, 0], [3, 0]]), np.array([0, 0, 0])),
        (np.array([[0.0, 1], [1, 0], [1, 0]]), np.array([[1.0, 0], [0, 1], [0, 1]]), np.array([0, 1, 0])),
    ]
    searched = sum(search_lambda(a, b, y) == brute_lambda(a, b, y) for a, b, y in hand)
    ok = bit_match and searched == len(hand)
    acceptance_report(8, "ensemble identity", ok,
                      f"lambda=(1,0) bit-match on 200 logit sets: {bit_match}; search vs brute force "
                      f"{searched}/{len(hand)}")
    assert ok


def test_criterion_9_pipeline_round_trip(acceptance_report):
    r = np.random.default_rng(909)
    worst_px, norm_ok, subset_ok = 0.0, True, True
    for _ in range(50):
        h, w = (int(v) for v in r.integers(8, 64, size=2))
        cam = CameraIntrinsics(r.uniform(50, 1000), r.uniform(0, w), r.uniform(0, h))
        depth = r.uniform(0.2, 10, size=(h, w))
        depth[r.random((h, w)) < 0.1] = 0
        mask = r.random((h, w)) < 0.6
        pf = project_instance(depth, mask, cam)
        if len(pf) == 0:
            continue
        worst_px = max(worst_px, float(np.max(np.abs(back_project(pf.points, cam) - pf.pixels))))
        seq = PersonSequence([pf.points, pf.points * r.uniform(0.5, 2)])
        normed = minmax_normalize_sequence(seq)
        norm_ok &= all(f[:, :3].min() >= 0 and f[:, :3].max() <= 1 for f in normed.frames)
        centroid = pf.points.mean(axis=0)
        for idx in (prune_metric(pf.points, centroid, r.uniform(0.5, 5)), prune_percentile(pf.points, centroid)):
            subset_ok &= bool(np.all(np.diff(idx) > 0)) and (idx.size == 0 or (idx.min() >= 0 and idx.max() < len(pf)))
        labels = dbscan(pf.points, 0.3, 4)
        keep = keep_main_cluster(pf.points, labels, centroid)
        subset_ok &= keep.shape == (len(pf),) and bool(np.all(labels[keep] != -1) or not keep.any())
        m = r.random((h, w)) < 0.05
        m[h // 4: h // 2, w // 4: w // 2] = True
        cleaned = denoise_mask(m, 4)
        filled = fill_convex_hull(cleaned)
        subset_ok &= bool(np.array_equal(filled, cleaned))  # already convex: hull fill is idempotent
        subset_ok &= bool(np.all(cleaned[h // 4: h // 2, w // 4: w // 2]))  # the large component survives
        subset_ok &= bool(np.all(fill_convex_hull(m)[m]))  # convex superset of its input
    ok = worst_px <= 1e-6 and norm_ok and subset_ok
    acceptance_report(9, "pipeline round trip", ok,
                      f"worst pixel error {worst_px:.1e}, normalized in [0,1]: {norm_ok}, "
                      f"subset/superset relations hold: {subset_ok}")
    assert ok
