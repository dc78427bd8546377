import itertools

import numpy as np
import pytest

from tnet import mpo as O
from tnet.mps import Mps, entanglement_profile, product_state, random_mps


@pytest.fixture
def rng():
    return np.random.default_rng(21)


def random_product(rng, L, d=2):
    return product_state([rng.standard_normal(d) + 1j * rng.standard_normal(d) for _ in range(L)])


def dense_mpo(mpo):
    # independent oracle: explicit sum over all index configurations
    ws = mpo.closed_tensors()
    L, d = len(ws), ws[0].shape[1]
    out = np.zeros((d**L, d**L), dtype=complex)
    for outs in itertools.product(range(d), repeat=L):
        for ins in itertools.product(range(d), repeat=L):
            m = np.ones((1, 1))
            for w, o, i in zip(ws, outs, ins):
                m = m @ w[:, o, i, :]
            r = int("".join(map(str, outs)), d)
            c = int("".join(map(str, ins)), d)
            out[r, c] = m[0, 0]
    return out


# -- application --------------------------------------------------------------------


def test_identity_mpo_keeps_state(rng):
    m = random_mps(6, 2, 4, rng)
    out, w = O.apply(O.identity_mpo(6, 2), m)
    psi, ref = out.to_dense(), m.to_dense()
    assert abs(abs(np.vdot(psi, ref)) - 1) < 1e-12
    assert w < 1e-20


def test_flip_all():
    x = np.array([[0, 1], [1, 0]])
    out, _ = O.apply(O.product_mpo([x] * 5), product_state([0] * 5, 2))
    ref = np.zeros(32)
    ref[-1] = 1
    assert np.max(np.abs(out.to_dense() - ref)) < 1e-14


def test_to_dense_matches_explicit_sum(rng):
    mpo = O.random_mpo(4, 2, 3, rng)
    assert np.max(np.abs(mpo.to_dense() - dense_mpo(mpo))) < 1e-12


def test_random_mpo_exact(rng):
    L = 8
    mpo = O.random_mpo(L, 2, 2, rng)
    m = random_mps(L, 2, 4, rng)
    exact = O.apply_exact(mpo, m)
    assert exact.max_bond <= 8
    ref = mpo.to_dense() @ m.to_dense()
    assert np.max(np.abs(exact.to_dense() - ref)) < 1e-11 * np.max(np.abs(ref))
    out, w = O.apply(mpo, m, cutoff=0.0)
    assert np.max(np.abs(out.to_dense() - ref)) < 1e-11 * np.max(np.abs(ref))


def test_compression_monotone(rng):
    L = 8
    mpo = O.random_mpo(L, 2, 3, rng)
    m = random_mps(L, 2, 4, rng)
    weights = [O.apply(mpo, m, max_bond=D)[1] for D in (1, 2, 4, 8, 16)]
    assert all(b <= a + 1e-14 for a, b in zip(weights, weights[1:]))
    out, w = O.apply(mpo, m, max_bond=4)
    assert out.max_bond <= 4 and w > 0


def test_compression_fidelity_tracks_weight(rng):
    L = 8
    mpo = O.random_mpo(L, 2, 2, rng)
    m = random_mps(L, 2, 4, rng)
    ref = mpo.to_dense() @ m.to_dense()
    ref /= np.linalg.norm(ref)
    out, w = O.apply(mpo, m, max_bond=6)
    psi = out.to_dense() / out.norm()
    assert 1 - abs(np.vdot(ref, psi)) ** 2 <= 2 * w + 1e-12


def test_apply_mismatch(rng):
    with pytest.raises(ValueError):
        O.apply(O.identity_mpo(3, 2), random_mps(4, 2, 2, rng))
    with pytest.raises(ValueError):
        O.apply(O.identity_mpo(3, 3), random_mps(3, 2, 2, rng))


def test_boundary_vectors_shape():
    w = np.zeros((2, 2, 2, 2))
    with pytest.raises(ValueError):
        O.Mpo([w], left=np.ones(3), right=np.ones(2))


def test_compose(rng):
    a, b = O.random_mpo(4, 2, 2, rng), O.random_mpo(4, 2, 3, rng)
    assert np.allclose(O.compose(a, b).to_dense(), a.to_dense() @ b.to_dense(), atol=1e-11)


def test_save_load(rng, tmp_path):
    mpo = O.random_mpo(3, 2, 2, rng).with_boundaries(left=np.array([1.0]), right=np.array([2.0]))
    mpo.save(tmp_path / "o")
    back = O.Mpo.load(tmp_path / "o")
    assert np.array_equal(back.to_dense(), mpo.to_dense())


# -- correlator products ------------------------------------------------------------


def test_jastrow_unit_factors_identity(rng):
    L = 6
    mpo = O.from_jastrow({1: np.ones((2, 2)), 2: np.ones((2, 2))}, L, 2)
    m = random_mps(L, 2, 4, rng)
    out = O.apply_exact(mpo, m)
    assert np.max(np.abs(out.to_dense() - m.to_dense())) < 1e-12


def test_jastrow_range_one_bond_two(rng):
    mpo = O.from_jastrow({1: rng.uniform(0.5, 2, (2, 2))}, 6, 2)
    assert mpo.bond_dims[1:-1] == [2] * 5


def test_jastrow_range_two_bond_four(rng):
    mpo = O.from_jastrow({2: rng.uniform(0.5, 2, (2, 2))}, 6, 2)
    assert max(mpo.bond_dims) == 4


def test_jastrow_pointwise(rng):
    L, d = 6, 2
    c1 = rng.uniform(0.5, 2, (L - 1, d, d))
    c2 = rng.uniform(0.5, 2, (d, d))
    mpo = O.from_jastrow({1: c1, 2: c2}, L, d)
    m = random_mps(L, d, 4, rng)
    psi = m.to_dense()
    ref = np.empty_like(psi)
    for k, conf in enumerate(itertools.product(range(d), repeat=L)):
        w = np.prod([c1[j][conf[j], conf[j + 1]] for j in range(L - 1)])
        w *= np.prod([c2[conf[j], conf[j + 2]] for j in range(L - 2)])
        ref[k] = w * psi[k]
    assert np.max(np.abs(O.apply_exact(mpo, m).to_dense() - ref)) < 1e-12 * np.max(np.abs(ref))


def test_jastrow_qutrits(rng):
    L, d = 5, 3
    c = rng.uniform(0.5, 2, (d, d))
    mpo = O.from_jastrow({1: c}, L, d)
    diag = np.diag(mpo.to_dense())
    ref = np.array([np.prod([c[s[j], s[j + 1]] for j in range(L - 1)]) for s in itertools.product(range(d), repeat=L)])
    assert np.max(np.abs(diag - ref)) < 1e-12 * np.max(ref)


def test_jastrow_commute(rng):
    L = 7
    a = O.from_jastrow({1: rng.uniform(0.5, 2, (2, 2)), 3: rng.uniform(0.5, 2, (2, 2))}, L, 2)
    b = O.from_jastrow({2: rng.uniform(0.5, 2, (L - 2, 2, 2))}, L, 2)
    m = random_mps(L, 2, 4, rng)
    ab = O.apply_exact(a, O.apply_exact(b, m)).to_dense()
    ba = O.apply_exact(b, O.apply_exact(a, m)).to_dense()
    assert np.max(np.abs(ab - ba)) < 1e-11 * np.max(np.abs(ab))


def test_jastrow_range_errors():
    with pytest.raises(ValueError):
        O.from_jastrow({4: np.ones((2, 2))}, 4, 2)
    with pytest.raises(ValueError):
        O.from_jastrow({1: np.ones((3, 2, 2))}, 6, 2)


def test_entropy_bound_values():
    assert O.entanglement_bound_jastrow(1, 2) == 1.0
    assert O.entanglement_bound_jastrow(0, 2) == 0.0
    assert O.entanglement_bound_jastrow(2, 3) == pytest.approx(2 * np.log2(3))


@pytest.mark.parametrize("ell", [1, 2])
def test_entropy_bound_holds(rng, ell):
    L = 8
    factors = {r: rng.uniform(0.1, 3, (L - r, 2, 2)) for r in range(1, ell + 1)}
    mpo = O.from_jastrow(factors, L, 2)
    out = O.apply_exact(mpo, random_product(rng, L))
    psi = out.to_dense()
    psi /= np.linalg.norm(psi)
    worst = 0.0
    for cut in range(1, L):
        p = np.linalg.svd(psi.reshape(2**cut, -1), compute_uv=False) ** 2
        p = p[p > 1e-300]
        worst = max(worst, float(-np.sum(p * np.log2(p))))
    assert worst > 0.01
    assert worst <= O.entanglement_bound_jastrow(ell, 2) + 1e-10
    assert max(entanglement_profile(out)) == pytest.approx(worst, abs=1e-9)


def test_product_mpo_on_mps_type(rng):
    out, _ = O.apply(O.identity_mpo(3, 2), random_mps(3, 2, 2, rng))
    assert isinstance(out, Mps)
