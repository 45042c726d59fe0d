import numpy as np
import pytest

from gradcheck import numeric_grad, rel_err
from relforecast import diffmath as dm
from relforecast.geometry import SE2, rel_geom_arrays
from relforecast.hmp import EdgeSet, HeteroGraph, HMPLayer, hmp_layer, hmp_stack

H, D = 4, 3


def make_layer(seed=0, widths=None, classes=None):
    store = dm.ParamStore(seed=seed)
    widths = widths or {"a": H, "m": H}
    classes = classes or {"a2m": ("a", "m"), "m2a": ("m", "a"), "m2m": ("m", "m")}
    return store, HMPLayer(store, "l", widths, classes, D, H)


def random_graph(rng, n_a=3, n_m=5, n_e=12):
    feats = {"a": dm.Tensor(rng.normal(size=(n_a, H))), "m": dm.Tensor(rng.normal(size=(n_m, H)))}
    sizes = {"a": n_a, "m": n_m}

    def edge_set(src, dst):
        return EdgeSet(src, dst, rng.integers(0, sizes[src], n_e), rng.integers(0, sizes[dst], n_e),
                       dm.Tensor(rng.normal(size=(n_e, D))))

    edges = {"a2m": edge_set("a", "m"), "m2a": edge_set("m", "a"), "m2m": edge_set("m", "m")}
    return HeteroGraph(feats, edges)


def test_zero_edges_uses_neutral_message(rng):
    store, layer = make_layer()
    feats = {"a": dm.Tensor(rng.normal(size=(2, H))), "m": dm.Tensor(rng.normal(size=(3, H)))}
    empty = {k: EdgeSet(*layer.edge_classes[k], [], [], dm.Tensor(np.zeros((0, D)))) for k in layer.edge_classes}
    out = hmp_layer(HeteroGraph(feats, empty), layer)
    for cls in ("a", "m"):
        x = feats[cls]
        fused = dm.relu(layer.fuse[cls](dm.concat([dm.Tensor(np.zeros((x.shape[0], H))), layer.self_proj[cls](x)])))
        np.testing.assert_array_equal(out[cls].data, layer.gru[cls](x, fused).data)


def test_edge_storage_permutation(rng):
    _, layer = make_layer()
    g = random_graph(rng)
    base = hmp_layer(g, layer)
    edges = {}
    for k, es in g.edges.items():
        p = rng.permutation(len(es))
        edges[k] = EdgeSet(es.src_class, es.dst_class, es.src[p], es.dst[p], dm.Tensor(es.attr.data[p]))
    perm = hmp_layer(HeteroGraph(g.features, edges), layer)
    for cls in base:
        np.testing.assert_array_equal(perm[cls].data, base[cls].data)


def test_node_permutation_equivariance(rng):
    _, layer = make_layer()
    g = random_graph(rng)
    base = hmp_layer(g, layer)
    pa, pm = rng.permutation(3), rng.permutation(5)
    inv = {"a": np.argsort(pa), "m": np.argsort(pm)}
    feats = {"a": dm.Tensor(g.features["a"].data[pa]), "m": dm.Tensor(g.features["m"].data[pm])}
    edges = {k: EdgeSet(es.src_class, es.dst_class, inv[es.src_class][es.src], inv[es.dst_class][es.dst], es.attr)
             for k, es in g.edges.items()}
    out = hmp_layer(HeteroGraph(feats, edges), layer)
    np.testing.assert_allclose(out["a"].data, base["a"].data[pa], atol=1e-14)
    np.testing.assert_allclose(out["m"].data, base["m"].data[pm], atol=1e-14)


def _sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def test_line_graph_against_scalar_trace():
    # 3 nodes in one class, edges 0->1 and 1->2 of one class, hand-set weights
    store = dm.ParamStore(seed=0)
    layer = HMPLayer(store, "l", {"n": 1}, {"e": ("n", "n")}, 1, 1)
    vals = {"l.msg.e.x.w": 2.0, "l.msg.e.x.b": 0.5, "l.msg.e.e.w": -1.0, "l.self.n.w": 1.5,
            "l.self.n.b": -0.2, "l.fuse.n.w": [[0.7], [0.3]], "l.fuse.n.b": 0.1,
            "l.gru.n.wx": [[0.4, -0.6, 0.9]], "l.gru.n.wh": [[0.2, 0.5, -0.3]],
            "l.gru.n.bx": [0.1, 0.0, -0.1], "l.gru.n.bh": [0.0, 0.2, 0.05]}
    for name, v in vals.items():
        store[name].data[...] = v
    x = [0.8, -1.1, 2.0]
    attrs = [0.3, -0.7]
    g = HeteroGraph({"n": dm.Tensor(np.array(x)[:, None])},
                    {"e": EdgeSet("n", "n", [0, 1], [1, 2], dm.Tensor(np.array(attrs)[:, None]))})
    out = hmp_layer(g, layer)["n"].data[:, 0]

    expect = []
    for j in range(3):
        if j == 0:
            agg = 0.0
        else:
            i = j - 1
            agg = 2.0 * x[i] + 0.5 - 1.0 * attrs[i]
        s = 1.5 * x[j] - 0.2
        f = max(0.7 * agg + 0.3 * s + 0.1, 0.0)
        r = _sig(0.4 * f + 0.1 + 0.2 * x[j] + 0.0)
        z = _sig(-0.6 * f + 0.0 + 0.5 * x[j] + 0.2)
        n = np.tanh(0.9 * f - 0.1 + r * (-0.3 * x[j] + 0.05))
        expect.append((1 - z) * x[j] + z * n)
    np.testing.assert_allclose(out, expect, rtol=1e-12)


def test_stack_of_one_equals_layer(rng):
    _, layer = make_layer()
    g = random_graph(rng)
    a, b = hmp_stack(g, [layer]), hmp_layer(g, layer)
    for cls in a:
        np.testing.assert_array_equal(a[cls].data, b[cls].data)


def test_stack_with_closed_update_gate_keeps_features(rng):
    store = dm.ParamStore(seed=1)
    classes = {"a2m": ("a", "m"), "m2a": ("m", "a"), "m2m": ("m", "m")}
    layers = [HMPLayer(store, f"l{k}", {"a": H, "m": H}, classes, D, H) for k in range(3)]
    for name, p in store.items():
        if name.endswith(".bx"):
            p.data[H:2 * H] = -1e3
    g = random_graph(rng)
    out = hmp_stack(g, layers)
    for cls in out:
        np.testing.assert_allclose(out[cls].data, g.features[cls].data, atol=1e-12)


def test_receptive_field_with_dilations(rng):
    n, K = 40, 3
    classes = {f"succ_{k}": ("m", "m") for k in range(1, 6)}
    width = 16  # wide enough that max-pooling does not mask the perturbation
    store = dm.ParamStore(seed=5)
    layers = [HMPLayer(store, f"l{i}", {"m": width}, classes, D, width) for i in range(K)]
    edges = {}
    for k in range(1, 6):
        src = np.arange(n - k)
        edges[f"succ_{k}"] = EdgeSet("m", "m", src, src + k, dm.Tensor(rng.normal(size=(n - k, D))))
    x = rng.normal(size=(n, width))
    base = hmp_stack(HeteroGraph({"m": dm.Tensor(x)}, edges), layers)["m"].data
    x2 = x.copy()
    x2[0] += 25.0
    moved = hmp_stack(HeteroGraph({"m": dm.Tensor(x2)}, edges), layers)["m"].data
    changed = np.any(moved != base, axis=1)
    expect = np.arange(n) <= 5 * K
    np.testing.assert_array_equal(changed, expect)


def test_viewpoint_invariance_with_relative_attributes(rng):
    store = dm.ParamStore(seed=2)
    enc = dm.MLP(store, "pp", 4 + 2 * 8, [D, D])
    _, layer = make_layer(seed=3)
    cent = {"a": rng.normal(size=(3, 2)) * 30, "m": rng.normal(size=(5, 2)) * 30}
    yaw = {k: rng.uniform(-np.pi, np.pi, size=len(v)) for k, v in cent.items()}
    head = {k: np.stack([np.cos(v), np.sin(v)], 1) for k, v in yaw.items()}
    g = random_graph(rng)

    def run(c, h):
        edges = {}
        for k, es in g.edges.items():
            raw = rel_geom_arrays(c[es.src_class][es.src], h[es.src_class][es.src],
                                  c[es.dst_class][es.dst], h[es.dst_class][es.dst], 8)
            edges[k] = EdgeSet(es.src_class, es.dst_class, es.src, es.dst, enc(dm.Tensor(raw)))
        return hmp_stack(HeteroGraph(g.features, edges), [layer, layer])

    base = run(cent, head)
    T = SE2.random(rng)
    moved = run({k: T.apply_points(v) for k, v in cent.items()}, {k: T.apply_vectors(v) for k, v in head.items()})
    for cls in base:
        np.testing.assert_allclose(moved[cls].data, base[cls].data, atol=1e-9, rtol=0)


def test_gradient_all_params(rng):
    store, layer = make_layer(seed=4)
    g = random_graph(rng, n_a=2, n_m=3, n_e=6)
    out = hmp_layer(g, layer)
    loss = sum((t * t).sum() for t in out.values())
    store.zero_grad()
    loss.backward()
    names = store.names()
    analytic = [store[n].grad for n in names]

    def f():
        with dm.no_grad():
            o = hmp_layer(g, layer)
            return float(sum((t.data ** 2).sum() for t in o.values()))

    numeric = numeric_grad(f, [store[n].data for n in names])
    for name, a, b in zip(names, analytic, numeric):
        assert rel_err(a, b) < 1e-5, name


def test_width_mismatch(rng):
    _, layer = make_layer()
    g = random_graph(rng)
    bad = HeteroGraph({"a": dm.Tensor(np.zeros((3, H + 1))), "m": g.features["m"]}, g.edges)
    with pytest.raises(ValueError):
        hmp_layer(bad, layer)
