"""Finite-layer reference computations for homogeneous binary TTN.

These brute-force recursions are used by the tests as oracles for the
thermodynamic-limit formulas in :mod:`tnet.hierarchical`; they are not part
of the public API.
"""

from __future__ import annotations

import numpy as np

from .cpt import CpMap, tensor_product
from .hierarchical import HierarchicalNet, _reduce, channel_kit


def _apply_many(m: CpMap, xs: np.ndarray) -> np.ndarray:
    """Apply ``m`` to a stack of matrices ``xs[n, a, b]``."""
    k = np.stack(m.kraus)
    return np.einsum("kab,nbc,kdc->nad", k, xs, k.conj(), optimize=True)


def _hat_sites(net: HierarchicalNet):
    c = net.hat.reshape(-1)
    dt = net.hat.shape[0]
    rho = np.outer(c, c.conj())
    r0 = _reduce(rho, [dt, dt], [0])
    r1 = _reduce(rho, [dt, dt], [1])
    swap = _reduce(rho, [dt, dt], [1, 0])
    return np.stack([r0, r1]), np.stack([rho, swap])


def per_site_levels(net: HierarchicalNet, mu: int):
    """One-site and adjacent-pair density matrices of every site, level by level.

    Level 1 is the two-site hat ring; level ``k`` has ``2**k`` sites. Yields
    ``(k, rho[j], pair[j])`` with ``pair[j]`` the state of ``(j, j+1 mod n)``.
    """
    kit = channel_kit(net)
    rl = tensor_product(kit.d_right, kit.d_left)
    rho, pair = _hat_sites(net)
    yield 1, rho, pair
    for k in range(2, mu + 1):
        n = rho.shape[0]
        new_rho = np.empty((2 * n,) + rho.shape[1:], dtype=np.complex128)
        new_rho[0::2] = _apply_many(kit.d_left, rho)
        new_rho[1::2] = _apply_many(kit.d_right, rho)
        new_pair = np.empty((2 * n,) + pair.shape[1:], dtype=np.complex128)
        new_pair[0::2] = _apply_many(kit.s, rho)
        new_pair[1::2] = _apply_many(rl, pair)
        rho, pair = new_rho, new_pair
        yield k, rho, pair


def per_site_correlator(net: HierarchicalNet, mu: int, gamma: np.ndarray, q: int) -> complex:
    """Connected correlator at distance ``2**q`` averaged over all ``2**mu`` sites, site by site."""
    kit = channel_kit(net)
    ll = tensor_product(kit.d_left, kit.d_left)
    rr = tensor_product(kit.d_right, kit.d_right)
    levels = list(per_site_levels(net, mu))
    _, _, sig = levels[mu - q - 1]
    for _ in range(q):
        n = sig.shape[0]
        new = np.empty((2 * n,) + sig.shape[1:], dtype=np.complex128)
        new[0::2] = _apply_many(ll, sig)
        new[1::2] = _apply_many(rr, sig)
        sig = new
    rho = levels[mu - 1][1]
    n = rho.shape[0]
    partner = rho[(np.arange(n) + 2**q) % n]
    eta = np.einsum("nab,ncd->nacbd", rho, partner).reshape(sig.shape)
    return complex(np.mean(np.einsum("ab,nba->n", gamma, sig - eta)))


def averaged_levels(net: HierarchicalNet, mu: int):
    """Translation-averaged ``rho1, rho2, eta0, eta1`` at levels ``1..mu`` via the layer recursion."""
    kit = channel_kit(net)
    rl = tensor_product(kit.d_right, kit.d_left)
    lr = tensor_product(kit.d_left, kit.d_right)
    rho, pair = _hat_sites(net)
    r1 = rho.mean(0)
    r2 = pair.mean(0)
    e0 = 0.5 * (np.kron(rho[0], rho[0]) + np.kron(rho[1], rho[1]))
    e1 = 0.5 * (np.kron(rho[0], rho[1]) + np.kron(rho[1], rho[0]))
    out = [(r1, r2, e0, e1)]
    for _ in range(2, mu + 1):
        r1, r2, e0, e1 = (
            kit.d_avg.apply(r1),
            0.5 * kit.s.apply(r1) + 0.5 * rl.apply(r2),
            kit.d_sla.apply(e0),
            0.5 * lr.apply(e0) + 0.5 * rl.apply(e1),
        )
        out.append((r1, r2, e0, e1))
    return out


def averaged_correlator(net: HierarchicalNet, mu: int, gamma: np.ndarray, q: int) -> complex:
    """Same quantity as :func:`per_site_correlator` from the averaged recursion (cheap at large ``mu``)."""
    kit = channel_kit(net)
    _, r2, _, e1 = averaged_levels(net, mu - q)[-1]
    x = r2 - e1
    for _ in range(q):
        x = kit.d_sla.apply(x)
    return complex(np.trace(gamma @ x))
