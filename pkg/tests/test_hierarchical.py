import math

import numpy as np
import pytest
import scipy.sparse.linalg as spla

from tnet import _finite_tree as ft
from tnet import cpt
from tnet import hierarchical as H
from tnet.mps import dense_rdm, von_neumann_bits
from tnet.network import contract_in_order, mincut_entropy_bound

SZ = np.diag([1.0, -1.0]).astype(complex)


@pytest.fixture
def rng():
    return np.random.default_rng(11)


@pytest.fixture
def sample_net(rng):
    return H.homogeneous_ttn(H.sample_isometry(), 2, rng=rng)


@pytest.fixture
def random_ttn(rng):
    return H.homogeneous_ttn(H.random_isometry(4, 2, rng), 3, rng=rng)


# -- structure ---------------------------------------------------------------


def test_rejects_non_isometry(rng):
    bad = H.random_isometry(4, 2, rng) * 1.01
    with pytest.raises(H.HierarchyError):
        H.homogeneous_ttn(bad, 2, rng=rng)


def test_rejects_non_unitary_disentangler(rng):
    with pytest.raises(H.HierarchyError):
        H.homogeneous_mera(H.random_isometry(4, 2, rng), 1.1 * np.eye(4), 1, rng=rng)


def test_rejects_unnormalized_hat(rng):
    with pytest.raises(H.HierarchyError):
        H.homogeneous_ttn(H.copy_isometry(2), 2, hat=np.eye(2))


def test_sizes(rng):
    assert H.random_net(H.TTN, 2, 3, rng).L == 16
    assert H.random_net(H.MERA, 2, 2, rng).L == 16


def test_homogeneity_flags(rng):
    assert H.random_net(H.TTN, 2, 3, rng).full
    assert not H.random_net(H.TTN, 2, 3, rng, homogeneous=False).full


def test_save_load_roundtrip(tmp_path, rng):
    net = H.random_net(H.MERA, 2, 1, rng, homogeneous=False)
    net.save(tmp_path)
    back = H.HierarchicalNet.load(tmp_path)
    assert back.kind == net.kind
    assert np.allclose(H.to_dense(back), H.to_dense(net), atol=1e-14)


@pytest.mark.parametrize("kind,n", [(H.TTN, 3), (H.MERA, 2)])
def test_dense_state_matches_network_contraction(kind, n, rng):
    net = H.random_net(kind, 2, n, rng, homogeneous=False)
    psi = H.to_dense(net)
    ref = contract_in_order(H.to_network(net)).reshape(-1)
    assert np.max(np.abs(psi - ref)) < 1e-12
    assert abs(np.linalg.norm(psi) - 1) < 1e-12


# -- causal cones ----------------------------------------------------------------


def test_ttn_single_site_cone_has_width_one(rng):
    net = H.random_net(H.TTN, 2, 4, rng)
    for site in range(net.L):
        _, widths = H.causal_cone(net, [site])
        assert widths == [1] * (net.n_layers + 1)


def test_ttn_odd_width_halves(rng):
    net = H.random_net(H.TTN, 2, 4, rng)
    for ell in (2, 3):
        for start in range(net.L):
            _, widths = H.causal_cone(net, [(start + k) % net.L for k in range(2 * ell - 1)])
            assert widths[1] == ell


def test_mera_cone_of_three_sites(rng):
    # sites 4, 5, 6 counted from one
    net = H.random_net(H.MERA, 2, 2, rng)
    nodes, widths = H.causal_cone(net, [3, 4, 5])
    n_dis = sum(1 for v in nodes if v[0] == "dis")
    n_iso = sum(1 for v in nodes if v[0] == "iso")
    assert n_dis == 4
    # each layer maps a 3-site window through 2 disentanglers onto 3 isometries
    assert n_iso == 6
    assert widths == [3, 3, 3]


def test_mera_width_three_is_stable(rng):
    net = H.random_net(H.MERA, 2, 3, rng)
    for start in range(net.L):
        _, widths = H.causal_cone(net, [(start + k) % net.L for k in range(3)])
        assert all(w == 3 for w in widths)


def test_cone_rejects_empty_and_gapped(rng):
    net = H.random_net(H.TTN, 2, 2, rng)
    with pytest.raises(H.HierarchyError):
        H.causal_cone(net, [])
    with pytest.raises(H.HierarchyError):
        H.causal_cone(net, [0, 2])


@pytest.mark.parametrize("kind,n", [(H.TTN, 3), (H.MERA, 2)])
def test_cone_evaluation_matches_dense(kind, n, rng):
    net = H.random_net(kind, 2, n, rng, homogeneous=False)
    psi = H.to_dense(net)
    worst = 0.0
    for start in range(0, net.L, 3):
        for width in (1, 2, 3):
            op = rng.standard_normal((2**width,) * 2) + 1j * rng.standard_normal((2**width,) * 2)
            sites = [(start + k) % net.L for k in range(width)]
            rho = dense_rdm(psi, [2] * net.L, sites)
            worst = max(worst, abs(H.expectation(net, op, start) - np.trace(op @ rho)))
            worst = max(worst, np.max(np.abs(H.reduced_density(net, start, width) - rho)))
    assert worst < 1e-10


# -- channels ------------------------------------------------------------------


def test_copy_isometry_average_map():
    kit = H.channel_kit(H.homogeneous_ttn(H.copy_isometry(3), 1))
    rho = np.diag([0.2, 0.3, 0.5]).astype(complex)
    expect = rho / 2
    expect[0, 0] += 0.5
    assert np.allclose(kit.d_avg.apply(rho), expect, atol=1e-14)
    w = np.sort(np.linalg.eigvals(kit.d_avg.superop).real)
    assert np.allclose(w, [0.5] * 8 + [1.0], atol=1e-12)


def test_partial_traces_of_s(rng):
    kit = H.channel_kit(H.random_net(H.TTN, 3, 1, rng))
    tr_r = H._partial_trace_channel(3, "right")
    tr_l = H._partial_trace_channel(3, "left")
    assert np.max(np.abs(cpt.compose(tr_r, kit.s).superop - kit.d_left.superop)) < 1e-11
    assert np.max(np.abs(cpt.compose(tr_l, kit.s).superop - kit.d_right.superop)) < 1e-11


def test_mera_with_identity_disentangler_reduces_to_ttn(rng):
    iso = H.random_isometry(4, 2, rng)
    km = H.channel_kit(H.homogeneous_mera(iso, np.eye(4), 1, rng=rng))
    kt = H.channel_kit(H.homogeneous_ttn(iso, 1, rng=rng))
    for name in ("d_left", "d_right", "s", "d_avg", "d_sla", "d_2to2"):
        assert np.max(np.abs(getattr(km, name).superop - getattr(kt, name).superop)) < 1e-12
    drop_last = cpt.CptMap([np.kron(np.eye(4), e[None, :]) for e in np.eye(2)])
    drop_first = cpt.CptMap([np.kron(e[None, :], np.eye(4)) for e in np.eye(2)])
    ref_l = cpt.compose(cpt.tensor_product(kt.d_right, kt.s), drop_last)
    ref_r = cpt.compose(cpt.tensor_product(kt.s, kt.d_left), drop_first)
    assert np.max(np.abs(km.d3_left.superop - ref_l.superop)) < 1e-12
    assert np.max(np.abs(km.d3_right.superop - ref_r.superop)) < 1e-12


def _kit_maps(kit):
    names = ["d_left", "d_right", "s", "d_avg", "d_sla", "d_2to2", "d3_left", "d3_right"]
    return [getattr(kit, n) for n in names if getattr(kit, n) is not None]


@pytest.mark.parametrize("kind", [H.TTN, H.MERA])
def test_every_map_preserves_trace(kind, rng):
    kit = H.channel_kit(H.random_net(kind, 2, 1, rng))
    for m in _kit_maps(kit):
        for _ in range(20):
            g = rng.standard_normal((m.dim_in,) * 2) + 1j * rng.standard_normal((m.dim_in,) * 2)
            rho = g @ g.conj().T
            rho /= np.trace(rho)
            assert abs(np.trace(m.apply(rho)) - 1) < 1e-12


@pytest.mark.parametrize("kind", [H.TTN, H.MERA])
def test_ascending_descending_duality(kind, rng):
    kit = H.channel_kit(H.random_net(kind, 2, 1, rng))
    for m in _kit_maps(kit):
        asc = m.adjoint()
        for _ in range(5):
            theta = rng.standard_normal((m.dim_out,) * 2) + 1j * rng.standard_normal((m.dim_out,) * 2)
            g = rng.standard_normal((m.dim_in,) * 2) + 1j * rng.standard_normal((m.dim_in,) * 2)
            rho = g @ g.conj().T / np.trace(g @ g.conj().T)
            lhs = np.trace(asc.apply(theta) @ rho)
            rhs = np.trace(theta @ m.apply(rho))
            assert abs(lhs - rhs) < 1e-12


def test_kit_rejects_bad_layer(rng):
    lay = H.Layer(H.random_isometry(4, 2, rng) * (1 + 1e-6))
    with pytest.raises(H.HierarchyError):
        H._build_kit(lay, H.TTN, H.DEFAULT_THETA)


# -- thermodynamic limit ---------------------------------------------------------


def test_copy_isometry_fixed_point():
    st = H.td_state(H.homogeneous_ttn(H.copy_isometry(2), 2))
    expect = np.diag([1.0, 0.0])
    assert np.max(np.abs(st.rho1 - expect)) < 1e-10


def test_trivial_dimension_one():
    net = H.homogeneous_ttn(np.ones((1, 1)), 2, hat=np.ones((1, 1)))
    st = H.td_state(net)
    assert st.rho1.shape == (1, 1) and abs(st.rho1[0, 0] - 1) < 1e-14
    assert abs(st.rho2[0, 0] - 1) < 1e-14


def test_series_equals_dense_fixed_point(sample_net):
    st = H.td_state(sample_net)
    fp = cpt.dense_fixed_point(H.channel_kit(sample_net).d_2to2.superop)
    assert np.max(np.abs(st.rho2 - fp)) < 1e-10
    assert st.report.residual < 1e-12


def test_rho2_theta_independent(random_ttn):
    ref = H.td_state(random_ttn).rho2
    for theta in (0.0, math.pi / 4, math.pi / 2):
        assert np.max(np.abs(H.td_state(random_ttn, theta).rho2 - ref)) < 1e-10
        fp = cpt.dense_fixed_point(H.channel_kit(random_ttn, 0, theta).d_2to2.superop)
        assert np.max(np.abs(fp - ref)) < 1e-10


def test_partial_traces_of_rho2(random_ttn):
    st = H.td_state(random_ttn)
    assert np.max(np.abs(H._reduce(st.rho2, [2, 2], [0]) - st.rho1)) < 1e-10
    assert np.max(np.abs(H._reduce(st.rho2, [2, 2], [1]) - st.rho1)) < 1e-10


def test_window_engine_agrees_with_series(random_ttn):
    st = H.td_state(random_ttn)
    assert np.max(np.abs(H.td_density(random_ttn, 1) - st.rho1)) < 1e-10
    assert np.max(np.abs(H.td_density(random_ttn, 2) - st.rho2)) < 1e-10


@pytest.mark.parametrize("kind", [H.TTN, H.MERA])
def test_window_engine_partial_trace_consistency(kind, rng):
    net = H.random_net(kind, 2, 1, rng)
    for nu in range(2, 6):
        big, small = H.td_density(net, nu), H.td_density(net, nu - 1)
        assert np.max(np.abs(H._reduce(big, [2] * nu, list(range(nu - 1))) - small)) < 1e-10
        assert np.max(np.abs(H._reduce(big, [2] * nu, list(range(1, nu))) - small)) < 1e-10


def test_finite_average_approaches_limit():
    rng = np.random.default_rng(0)
    net = H.homogeneous_ttn(H.random_isometry(4, 2, rng), 2, rng=rng)
    st = H.td_state(net)
    # this isometry has a gap of 0.72, so 20 layers suffice
    assert st.report.d_avg_gap > 0.7
    r1 = ft.averaged_levels(net, 20)[-1][0]
    assert np.max(np.abs(r1 - st.rho1)) < 1e-6


def test_finite_average_error_follows_gap(random_ttn):
    st = H.td_state(random_ttn)
    for mu in (10, 20, 40):
        r1 = ft.averaged_levels(random_ttn, mu)[-1][0]
        assert np.max(np.abs(r1 - st.rho1)) <= 2 * (1 - st.report.d_avg_gap) ** (mu - 1) + 1e-14


def test_non_mixing_rejected():
    # the identity-like isometry |j> -> |j>|j> keeps every diagonal state fixed
    iso = np.zeros((4, 2), dtype=complex)
    iso[0, 0] = iso[3, 1] = 1
    with pytest.raises(cpt.NotMixingError):
        H.td_state(H.homogeneous_ttn(iso, 2))


def test_td_state_requires_full_homogeneity(rng):
    with pytest.raises(H.HierarchyError):
        H.td_state(H.random_net(H.TTN, 2, 3, rng, homogeneous=False))


def test_series_certificate_detects_growth():
    grow = cpt.CpMap([2 * np.eye(2)])
    with pytest.raises(cpt.ConvergenceError):
        H.geometric_series(grow, np.eye(2))


# -- criticality -----------------------------------------------------------------


def test_copy_isometry_leading_exponent():
    ex = H.critical_exponents(H.homogeneous_ttn(H.copy_isometry(2), 2))
    assert abs(ex[0].xi) < 1e-12
    assert abs(ex[1].xi - (-1)) < 1e-10
    # the lam = 1 eigenoperator is the identity
    g = ex[0].operator
    assert np.allclose(g / g[0, 0], np.eye(4), atol=1e-10)


def test_exponents_match_dense_spectrum(random_ttn):
    ex = H.critical_exponents(random_ttn)
    w = np.linalg.eigvals(H.channel_kit(random_ttn).d_sla.superop)
    w = w[np.argsort(-np.abs(w))]
    lams = np.array([e.lam for e in ex])
    assert len(lams) == len(w)
    assert max(np.min(np.abs(lams - x)) for x in w) < 1e-10
    assert max(np.min(np.abs(w - x)) for x in lams) < 1e-10
    for e in ex:
        assert e.xi.real <= 1e-9
        assert abs(e.xi - np.log(e.lam) / math.log(2)) < 1e-10
    assert all(a.xi.real >= b.xi.real - 1e-12 for a, b in zip(ex, ex[1:]))


def test_eigenoperator_correlators_scale_exactly(random_ttn):
    checked = 0
    for e in H.critical_exponents(random_ttn)[1:]:
        cs = [H.ttn_correlator(random_ttn, e.operator, 2**q) for q in range(7)]
        if abs(cs[0]) < 1e-6:
            continue
        checked += 1
        for q in range(6):
            assert abs(cs[q + 1] / cs[q] - e.lam) < 1e-8
    assert checked >= 3


def test_identity_correlator_vanishes(random_ttn):
    for q in range(4):
        assert abs(H.ttn_correlator(random_ttn, np.eye(4), 2**q)) < 1e-12


def test_correlator_decays(random_ttn):
    g = np.kron(SZ, SZ)
    assert abs(H.ttn_correlator(random_ttn, g, 2**40)) < 1e-6


def test_correlator_rejects_non_power_of_two(random_ttn):
    with pytest.raises(H.HierarchyError):
        H.ttn_correlator(random_ttn, np.eye(4), 3)


def test_copy_isometry_correlator_matches_finite_average(rng):
    net = H.homogeneous_ttn(H.copy_isometry(2), 2, rng=rng)
    g = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    for q in range(1, 7):
        assert abs(H.ttn_correlator(net, g, 2**q) - ft.averaged_correlator(net, 20, g, q)) < 1e-6


def test_random_correlator_matches_deep_finite_average(random_ttn, rng):
    # the slowest transient of this isometry decays like 0.84**mu, hence the depth
    g = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    for q in range(1, 7):
        assert abs(H.ttn_correlator(random_ttn, g, 2**q) - ft.averaged_correlator(random_ttn, 250, g, q)) < 1e-10


def test_averaged_recursion_matches_per_site(random_ttn, rng):
    g = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    for q in (1, 2, 4):
        assert abs(ft.per_site_correlator(random_ttn, 10, g, q) - ft.averaged_correlator(random_ttn, 10, g, q)) < 1e-12


def test_per_site_recursion_matches_dense(rng):
    net = H.random_net(H.TTN, 2, 3, rng)
    psi = H.to_dense(net)
    _, rho, pair = list(ft.per_site_levels(net, 4))[-1]
    for j in range(net.L):
        assert np.allclose(rho[j], dense_rdm(psi, [2] * 16, [j]), atol=1e-12)
        assert np.allclose(pair[j], dense_rdm(psi, [2] * 16, [j, (j + 1) % 16]), atol=1e-12)


def test_mera_exponents_against_dense_superoperator(rng):
    net = H.random_net(H.MERA, 2, 1, rng)
    ex = H.critical_exponents(net, max_count=6)
    kit = H.channel_kit(net)
    # independent assembly: explicit Kraus sums of the two product maps
    s_l, s_r = kit.d3_left.superop, kit.d3_right.superop
    t_l, t_r = s_l.reshape((8,) * 4), s_r.reshape((8,) * 4)
    dense = 0.5 * (
        np.einsum("prjl,qskm->pqrsjklm", t_l, t_l) + np.einsum("prjl,qskm->pqrsjklm", t_r, t_r)
    ).reshape(4096, 4096)
    w = spla.eigs(dense, k=10, which="LM", tol=1e-14, return_eigenvectors=False)
    w = w[np.argsort(-np.abs(w))]
    assert abs(ex[0].lam - 1) < 1e-10
    for e in ex:
        assert np.min(np.abs(w - e.lam)) < 1e-10
        assert e.xi.real <= 1e-9


def test_exponent_csv(tmp_path, random_ttn):
    path = tmp_path / "exp.csv"
    ex = H.critical_exponents(random_ttn, max_count=4)
    H.write_exponents_csv(path, ex)
    lines = path.read_text().splitlines()
    assert lines[0] == "alpha,re_xi,im_xi,abs_lambda"
    assert len(lines) == 5


# -- fluctuations ---------------------------------------------------------------------


def test_identity_has_no_fluctuation(sample_net):
    assert abs(H.translational_fluctuation(sample_net, np.eye(2))) < 1e-12


def test_sample_isometry_fluctuates(sample_net):
    assert H.translational_fluctuation(sample_net, SZ) > 1e-6


def test_copy_isometry_fluctuation_matches_dense():
    net = H.homogeneous_ttn(H.copy_isometry(2), 2)
    kit = H.channel_kit(net)
    sig = cpt.dense_fixed_point(kit.d_sla.superop)
    r1 = cpt.dense_fixed_point(kit.d_avg.superop)
    theta = np.diag([1.0, 0.0]).astype(complex)
    ref = np.trace(np.kron(theta, theta) @ (sig - np.kron(r1, r1))).real
    assert abs(H.translational_fluctuation(net, theta) - ref) < 1e-10
    assert H.check_triviality(net)


def test_fluctuations_nonnegative(random_ttn):
    for b in H.hermitian_basis(2):
        assert H.translational_fluctuation(random_ttn, b) >= -1e-10
    assert not H.check_triviality(random_ttn)


def test_finite_fluctuation_matches_limit(random_ttn):
    _, _, e0, _ = ft.averaged_levels(random_ttn, 250)[-1]
    r1 = H.td_state(random_ttn).rho1
    ref = np.trace(np.kron(SZ, SZ) @ (e0 - np.kron(r1, r1))).real
    assert abs(H.translational_fluctuation(random_ttn, SZ) - ref) < 1e-10


# -- parent Hamiltonians -----------------------------------------------------------


def test_parent_rank_bound(sample_net):
    rho4 = H.td_density(sample_net, 4)
    assert np.linalg.matrix_rank(rho4, tol=1e-10) <= 12


def test_parent_kernel_dimension(sample_net, rng):
    term = H.parent_hamiltonian(sample_net, 4, weights=rng.uniform(0.5, 2.0, 4))
    assert np.all(np.linalg.eigvalsh(term.h) >= -1e-12)
    ev = np.linalg.eigvalsh(term.assemble(8).toarray())
    kernel = int(np.sum(ev < 1e-9))
    assert kernel == 32
    assert kernel >= 2 ** (8 // 2)


def test_parent_frustration_free(sample_net):
    term = H.parent_hamiltonian(sample_net)
    assert term.nu == 4
    assert np.max(np.abs(H.parent_energies(sample_net, term))) < 1e-9


def test_parent_mera(rng):
    net = H.random_net(H.MERA, 2, 1, rng)
    term = H.parent_hamiltonian(net)
    assert term.nu == 6
    assert np.linalg.matrix_rank(H.td_density(net, 6), tol=1e-10) <= 2**4 + 2**5
    assert np.max(np.abs(H.parent_energies(net, term))) < 1e-9


def test_parent_full_rank_error(random_ttn):
    with pytest.raises(H.KernelError, match="spectrum"):
        H.parent_hamiltonian(random_ttn, nu=2)


def test_parent_weight_validation(sample_net):
    with pytest.raises(ValueError):
        H.parent_hamiltonian(sample_net, weights=np.zeros(4))
    with pytest.raises(ValueError):
        H.parent_hamiltonian(sample_net, weights=-np.ones(4))


def test_assembled_hamiltonian_matches_explicit_sum(rng):
    g = rng.standard_normal((8, 8))
    term = H.ParentTerm(g + g.T, 3, 2, np.zeros((8, 0)), np.zeros(8))
    big = term.assemble(5).toarray()
    ref = np.zeros((32, 32))
    for l in range(5):
        t = np.kron(term.h, np.eye(4)).reshape((2,) * 10)
        src = list(range(5))
        dst = [(k + l) % 5 for k in range(5)]
        t = np.moveaxis(t, src + [s + 5 for s in src], dst + [s + 5 for s in dst])
        ref = ref + t.reshape(32, 32)
    assert np.allclose(big, ref)


# -- entanglement ----------------------------------------------------------------


@pytest.mark.parametrize("kind,n", [(H.TTN, 2), (H.MERA, 1)])
def test_mincut_dominates_interval_entropy(kind, n, rng):
    net = H.random_net(kind, 2, n, rng)
    tn = H.to_network(net)
    for start in range(net.L):
        for width in range(1, net.L):
            s = von_neumann_bits(H.reduced_density(net, start, width))
            bound = mincut_entropy_bound(tn, {f"s{(start + k) % net.L}" for k in range(width)})
            assert s <= bound + 1e-9


@pytest.mark.parametrize("kind,n", [(H.TTN, 2), (H.MERA, 1)])
def test_mincut_dominates_random_bipartitions(kind, n, rng):
    net = H.random_net(kind, 2, n, rng)
    psi = H.to_dense(net)
    tn = H.to_network(net)
    for _ in range(20):
        k = int(rng.integers(1, net.L))
        region = sorted(rng.choice(net.L, size=k, replace=False).tolist())
        s = von_neumann_bits(dense_rdm(psi, [2] * net.L, region))
        assert s <= mincut_entropy_bound(tn, {f"s{r}" for r in region}) + 1e-9


def test_ttn_interval_entropy_window(rng):
    net = H.random_net(H.TTN, 2, 3, rng)
    tn = H.to_network(net)
    for start in range(net.L):
        for ell in range(2, 7):
            s = von_neumann_bits(H.reduced_density(net, start, ell))
            cut = mincut_entropy_bound(tn, {f"s{(start + k) % net.L}" for k in range(ell)})
            assert s <= cut + 1e-9
            assert s <= 2 * math.log2(ell) * math.log2(2) + 1e-9


def test_mera_interval_entropy_window(rng):
    net = H.random_net(H.MERA, 2, 2, rng)
    for start in range(net.L):
        for ell in range(2, 7):
            s = von_neumann_bits(H.reduced_density(net, start, ell))
            assert s <= 4 * math.log2(ell) * math.log2(2) + 1e-9
