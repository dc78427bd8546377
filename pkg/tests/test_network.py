import itertools
import math

import numpy as np
import pytest

from tnet import hierarchical as H
from tnet import network as N
from tnet.mps import dense_rdm, random_mps, von_neumann_bits


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@pytest.fixture
def rng():
    return np.random.default_rng(5)


def chain(rng, L=3, d=2, D=3, periodic=False):
    ts = []
    for l in range(L):
        dl = 1 if (l == 0 and not periodic) else D
        dr = 1 if (l == L - 1 and not periodic) else D
        ts.append(crandn(rng, dl, d, dr))
    return N.from_mps_tensors(ts, periodic=periodic), ts


def dense_chain(ts):
    psi = ts[0]
    for a in ts[1:]:
        psi = np.tensordot(psi, a, axes=(-1, 0))
    psi = np.trace(psi, axis1=0, axis2=-1) if psi.shape[0] > 1 else psi[0, ..., 0]
    return psi


def tree(rng):
    # star-shaped four-node tree with one open leg per node
    nodes = {
        "c": crandn(rng, 2, 3, 4, 2),
        "a": crandn(rng, 3, 2),
        "b": crandn(rng, 4, 3),
        "e": crandn(rng, 2, 2),
    }
    edges = [("c", 1, "a", 0), ("c", 2, "b", 0), ("c", 3, "e", 0)]
    opens = [("c", 0, "x0"), ("a", 1, "x1"), ("b", 1, "x2"), ("e", 1, "x3")]
    return N.TensorNetwork(nodes, edges, opens)


# -- structure ---------------------------------------------------------------------


def test_validation_errors(rng):
    a, b = crandn(rng, 2, 3), crandn(rng, 4, 2)
    with pytest.raises(ValueError):
        N.TensorNetwork({"a": a, "b": b}, [("a", 1, "b", 0)], [("a", 0, "s0"), ("b", 1, "s1")])
    with pytest.raises(ValueError):
        N.TensorNetwork({"a": a}, [], [("a", 0, "s0")])
    with pytest.raises(ValueError):
        N.TensorNetwork({"a": a}, [], [("a", 0, "s"), ("a", 1, "s")])


def test_mps_network_matches_dense(rng):
    net, ts = chain(rng, L=4)
    assert np.allclose(N.contract_in_order(net), dense_chain(ts), atol=1e-12)
    net, ts = chain(rng, L=4, periodic=True)
    assert np.allclose(N.contract_in_order(net), dense_chain(ts), atol=1e-12)


def test_save_load(rng, tmp_path):
    net = tree(rng)
    net.save(tmp_path / "net")
    back = N.TensorNetwork.load(tmp_path / "net")
    assert np.allclose(N.contract_loop_free(back), N.contract_loop_free(net), atol=0)


# -- gauge ----------------------------------------------------------------------------


def test_gauge_identity_is_noop(rng):
    net, _ = chain(rng)
    out = N.gauge_insert(net, 0, np.eye(3))
    for k in net.nodes:
        assert np.array_equal(out.nodes[k], net.nodes[k])


def test_gauge_random_preserves_state(rng):
    net, _ = chain(rng)
    ref = N.contract_in_order(net)
    x = crandn(rng, 3, 3)
    out = N.gauge_insert(N.gauge_insert(net, 0, x), 1, crandn(rng, 3, 3))
    assert np.max(np.abs(N.contract_in_order(out) - ref)) <= 1e-11 * np.max(np.abs(ref))
    assert not np.allclose(out.nodes[0], net.nodes[0])


def test_gauge_diagonal_two_nodes(rng):
    net, _ = chain(rng, L=2)
    ref = N.contract_in_order(net)
    out = N.gauge_insert(net, 0, np.diag([2.0, 0.5, 4.0]))
    assert np.max(np.abs(N.contract_in_order(out) - ref)) <= 1e-13 * np.max(np.abs(ref))


def test_gauge_preserves_expectation_values(rng):
    net, _ = chain(rng, L=5, D=2)
    op = np.array([[1, 0], [0, -1]])
    x = crandn(rng, 2, 2)
    for n in (net, N.gauge_insert(net, 2, x)):
        psi = N.contract_in_order(n).ravel()
        e = np.vdot(psi, np.kron(np.kron(np.eye(4), op), np.eye(4)) @ psi) / np.vdot(psi, psi)
        if n is net:
            ref = e
    assert abs(e - ref) <= 1e-10 * abs(ref)


def test_gauge_errors(rng):
    net, _ = chain(rng)
    with pytest.raises(ValueError):
        N.gauge_insert(net, 0, np.diag([1.0, 1.0, 0.0]))
    with pytest.raises(ValueError):
        N.gauge_insert(net, 0, np.eye(2))


# -- loop-free contraction -------------------------------------------------------


def test_single_node_verbatim(rng):
    t = crandn(rng, 2, 3)
    net = N.TensorNetwork({"a": t}, [], [("a", 0, "x"), ("a", 1, "y")])
    assert np.array_equal(N.contract_loop_free(net), t)


def test_tree_matches_any_order(rng):
    net = tree(rng)
    ref = N.contract_loop_free(net)
    scale = np.max(np.abs(ref))
    for order in itertools.permutations(net.nodes):
        assert np.max(np.abs(N.contract_in_order(net, order) - ref)) <= 1e-12 * scale


def test_tree_cost_reported(rng):
    net = tree(rng)
    _, cost = N.contract_loop_free(net, return_cost=True)
    assert cost > 0


def test_ring_raises(rng):
    net, _ = chain(rng, L=4, periodic=True)
    with pytest.raises(N.CycleError, match="edge"):
        N.contract_loop_free(net)


def test_disconnected_pieces(rng):
    a, b = crandn(rng, 2), crandn(rng, 3)
    net = N.TensorNetwork({"a": a, "b": b}, [], [("a", 0, "x"), ("b", 0, "y")])
    assert np.allclose(N.contract_loop_free(net), np.outer(a, b))


# -- peripheral gauge ---------------------------------------------------------------


def test_peripheral_whole_network_noop(rng):
    net = tree(rng)
    out = N.peripheral_gauge(net, net.nodes)
    for k in net.nodes:
        assert np.array_equal(out.nodes[k], net.nodes[k])


def test_peripheral_chain_middle(rng):
    net, _ = chain(rng, L=3, D=2)
    ref = N.contract_loop_free(net)
    out = N.peripheral_gauge(net, [1])
    # node 0 has legs (s, b) and node 2 has legs (a, s)
    assert N.isometry_residual(out.nodes[0], 1) < 1e-10
    assert N.isometry_residual(out.nodes[2], 0) < 1e-10
    assert np.max(np.abs(N.contract_loop_free(out) - ref)) < 1e-10 * np.max(np.abs(ref))


def test_peripheral_ttn_hat_gives_isometries(rng):
    ttn = H.random_net(H.TTN, 2, 2, rng, homogeneous=False)
    net = H.to_network(ttn)
    # scramble the gauge first so the isometric structure must be rebuilt
    for k in range(len(net.edges)):
        net = N.gauge_insert(net, k, crandn(rng, net.link_dim(k), net.link_dim(k)))
    ref = N.contract_loop_free(net)
    out = N.peripheral_gauge(net, [("hat",)])
    for nid, t in out.nodes.items():
        if nid[0] == "iso":
            assert N.isometry_residual(t, 2) < 1e-10
    got = N.contract_loop_free(out)
    assert np.max(np.abs(got - ref)) < 1e-10 * np.max(np.abs(ref))


def test_peripheral_errors(rng):
    net, _ = chain(rng, L=4, periodic=True)
    with pytest.raises(N.CycleError):
        N.peripheral_gauge(net, [0])
    net, _ = chain(rng, L=3)
    with pytest.raises(ValueError):
        N.peripheral_gauge(net, [0, 2])


# -- min-cut bound --------------------------------------------------------------------


def test_mincut_product_state(rng):
    net, _ = chain(rng, L=4, D=1)
    assert N.mincut_entropy_bound(net, {"s0", "s1"}) == 0.0


def test_mincut_open_chain(rng):
    net, _ = chain(rng, L=6, D=4)
    assert N.mincut_entropy_bound(net, {"s2", "s3"}) == pytest.approx(math.log2(4))


def test_mincut_periodic_chain(rng):
    # two bonds cut; D=2 keeps this below the three physical legs
    net, _ = chain(rng, L=6, D=2, periodic=True)
    assert N.mincut_entropy_bound(net, {"s2", "s3", "s4"}) == pytest.approx(2.0)


def test_mincut_physical_legs_cap(rng):
    # a single site cannot carry more than log2 d
    net, _ = chain(rng, L=4, D=8, periodic=True)
    assert N.mincut_entropy_bound(net, {"s1"}) == pytest.approx(1.0)


def test_mincut_region_validation(rng):
    net, _ = chain(rng, L=3)
    with pytest.raises(ValueError):
        N.mincut_entropy_bound(net, set())
    with pytest.raises(ValueError):
        N.mincut_entropy_bound(net, {"s0", "s1", "s2"})


@pytest.mark.parametrize("periodic", [False, True])
def test_mincut_dominates_entropy(rng, periodic):
    L = 10
    ts = [t for t in random_mps(L, 2, 3, rng).tensors]
    if periodic:
        ts = [crandn(rng, 3, 2, 3) for _ in range(L)]
    net = N.from_mps_tensors(ts, periodic=periodic)
    psi = N.contract_loop_free(net) if not periodic else N.contract_in_order(net)
    psi = psi.ravel() / np.linalg.norm(psi)
    for _ in range(12):
        k = int(rng.integers(1, L))
        region = sorted(rng.choice(L, size=k, replace=False).tolist())
        s = von_neumann_bits(dense_rdm(psi, [2] * L, region))
        bound = N.mincut_entropy_bound(net, {f"s{i}" for i in region})
        assert bound >= s - 1e-10


# -- exchange gates -------------------------------------------------------------------


def test_fermion_gate_sign():
    g = N.exchange_gate("fermion", 2)
    v = np.zeros(4)
    v[3] = 1
    assert np.array_equal(g @ v, -v)
    v = np.zeros(4)
    v[1] = 1  # |01> -> |10>
    assert np.array_equal(g @ v, np.eye(4)[2])


@pytest.mark.parametrize("stat,d", [("spin", 2), ("spin", 3), ("fermion", 2)])
def test_gate_squares_to_identity(stat, d):
    g = N.exchange_gate(stat, d)
    assert np.array_equal(g @ g, np.eye(d * d))


def test_anyon_pi_is_fermion():
    assert np.allclose(N.exchange_gate("anyon", 2, math.pi), N.exchange_gate("fermion", 2), atol=1e-15)


def test_gate_errors():
    with pytest.raises(ValueError):
        N.exchange_gate("fermion", 3)
    with pytest.raises(ValueError):
        N.exchange_gate("boson", 2)
