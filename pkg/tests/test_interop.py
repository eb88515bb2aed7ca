import random

import numpy as np
import pytest

from pulsenet import autodiff as ad
from pulsenet import interop as io
from pulsenet import network as net
from pulsenet import tensor as T
from pulsenet.errors import (DiscretizationError, ExportError, FormatError, UnsupportedNodeError,
                             UnsupportedTopologyError)

from helpers import edit_graph_manifest


def fixed_net(beta):
    return net.NetworkSpec((3,), (net.Linear(2), net.LIF(beta_mode="fixed", beta=beta),
                                  net.Linear(2), net.LI(beta_mode="fixed", beta=beta)))


def test_export_scaling_hand_cases():
    spec = fixed_net(0.5)
    params = net.init(spec, T.key(0), dtype="f64")
    doc = io.export_graph(spec, params, dt=1.0)
    assert np.allclose(doc.nodes["lif_1"].tau, 2.0)
    assert np.allclose(doc.nodes["linear_0"].weight, 2.0 * params["linear_0"]["w"].T)
    doc0 = io.export_graph(fixed_net(0.0), params, dt=1.0)
    assert np.allclose(doc0.nodes["li_3"].tau, 1.0)
    assert np.array_equal(doc0.nodes["linear_2"].weight, params["linear_2"]["w"].T)
    assert doc.metadata["weight_layout"] == "out_in"


def test_import_inverse_map():
    doc = io.GraphDoc(
        {"in": io.InputNode((2,)), "w": io.LinearNode(np.eye(2) * 4.0),
         "cell": io.LINode(np.array([2.0, 2.0]), np.ones(2), np.zeros(2)), "out": io.OutputNode((2,))},
        [("in", "w"), ("w", "cell"), ("cell", "out")], {"dt": 1.0})
    spec, params = io.import_graph(doc, dtype="f64")
    assert np.allclose(params["li_1"]["beta"], 0.5)
    assert np.allclose(params["linear_0"]["w"], np.eye(2) * 2.0)


def test_param_roundtrip():
    spec = net.shd_spec(inputs=12, hidden=8, classes=3)
    params = net.init(spec, T.key(1), dtype="f64")
    back_spec, back = io.import_graph(io.export_graph(spec, params, 1e-3), dtype="f64")
    assert net.resolve(back_spec)[-1].out_shape == (3,)
    for a, b in zip(ad.tree_leaves(params), ad.tree_leaves(back)):
        assert np.max(np.abs(a - b)) <= 1e-6


def test_beta_one_cannot_export():
    spec = fixed_net(1.0)
    with pytest.raises(ExportError):
        io.export_graph(spec, net.init(spec, T.key(0)))


def test_dt_larger_than_tau_rejected():
    spec = fixed_net(0.5)
    doc = io.export_graph(spec, net.init(spec, T.key(0)), dt=1.0)
    with pytest.raises(DiscretizationError):
        io.import_graph(doc, dt=3.0)


def test_edge_order_does_not_matter():
    spec = net.shd_spec(inputs=6, hidden=4, classes=2)
    doc = io.export_graph(spec, net.init(spec, T.key(0)))
    ref = io.chain_order(doc)
    edges = list(doc.edges)
    random.Random(3).shuffle(edges)
    nodes = dict(reversed(list(doc.nodes.items())))
    assert io.chain_order(io.GraphDoc(nodes, edges, doc.metadata)) == ref


def test_topology_errors():
    spec = fixed_net(0.5)
    doc = io.export_graph(spec, net.init(spec, T.key(0)))
    branch = io.GraphDoc(doc.nodes, doc.edges + [("input", "li_3")], doc.metadata)
    with pytest.raises(UnsupportedTopologyError):
        io.import_graph(branch)
    cut = io.GraphDoc(doc.nodes, doc.edges[:-1], doc.metadata)
    with pytest.raises(UnsupportedTopologyError):
        io.import_graph(cut)


def test_write_read_identity(tmp_path):
    spec = net.nmnist_spec()
    params = net.init(spec, T.key(2))
    doc = io.export_graph(spec, params)
    path = tmp_path / "g.pngr"
    io.write_graph(path, doc)
    back = io.read_graph(path)
    assert back.edges == [tuple(e) for e in doc.edges] and back.metadata == doc.metadata
    for name, node in doc.nodes.items():
        other = back.nodes[name]
        assert type(other) is type(node)
        for key, val in vars(node).items():
            got = getattr(other, key)
            if isinstance(val, np.ndarray):
                assert got.dtype == val.dtype and np.array_equal(got, val)
            else:
                assert got == val


def test_manifest_tau_edit_survives(tmp_path):
    spec = net.shd_spec(inputs=4, hidden=3, classes=2)
    doc = io.export_graph(spec, net.init(spec, T.key(0)))
    doc.nodes["lif_1"].tau = np.full(3, 7.5)
    path = tmp_path / "g.pngr"
    io.write_graph(path, doc)
    assert np.array_equal(io.read_graph(path).nodes["lif_1"].tau, np.full(3, 7.5))


def test_truncation_and_magic(tmp_path):
    spec = net.shd_spec(inputs=4, hidden=3, classes=2)
    path = tmp_path / "g.pngr"
    io.write_graph(path, io.export_graph(spec, net.init(spec, T.key(0))))
    raw = path.read_bytes()
    path.write_bytes(raw[:-10])
    with pytest.raises(FormatError, match="offset"):
        io.read_graph(path)
    path.write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(FormatError, match="magic"):
        io.read_graph(path)


def test_unsupported_node_named(tmp_path):
    spec = net.shd_spec(inputs=4, hidden=3, classes=2)
    path = tmp_path / "g.pngr"
    io.write_graph(path, io.export_graph(spec, net.init(spec, T.key(0))))

    def rename(m):
        for n in m["nodes"]:
            if n["name"] == "lif_3":
                n["kind"] = "CubaLIF"
    edit_graph_manifest(path, rename)
    with pytest.raises(UnsupportedNodeError, match="lif_3") as err:
        io.read_graph(path)
    assert err.value.node == "lif_3"


def test_nonzero_leak_rejected():
    spec = fixed_net(0.5)
    doc = io.export_graph(spec, net.init(spec, T.key(0)))
    doc.nodes["lif_1"].v_leak = np.full(2, 0.1)
    with pytest.raises(UnsupportedNodeError):
        io.import_graph(doc)


def test_per_neuron_conv_cell_gain_lives_in_resistance():
    spec = net.NetworkSpec((1, 6, 6), (net.Conv2d(2, 3), net.LIF(), net.Flatten(),
                                       net.Linear(2), net.LI()))
    params = net.init(spec, T.key(0), dtype="f64")
    doc = io.export_graph(spec, params, dt=1.0)
    beta = params["lif_1"]["beta"]
    assert np.array_equal(doc.nodes["conv_0"].weight, params["conv_0"]["w"])
    assert np.allclose(doc.nodes["lif_1"].r, 1.0 / (1.0 - beta), rtol=1e-12)
    _, back = io.import_graph(doc, dtype="f64")
    assert np.allclose(back["lif_1"]["beta"], beta, atol=1e-12)
    assert np.allclose(back["conv_0"]["w"], params["conv_0"]["w"], rtol=1e-12)
