"""Variational ground-state search over MPS.

Open chains use single-site or two-site sweeps with the Hamiltonian held as
an MPO, so that the effective operator at a site is the contraction of a
left block, the local MPO tensors and a right block. Periodic chains solve a
generalized eigenproblem per site (see :func:`dmrg_pbc`).
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as spla

from .models import NnHamiltonian
from .mps import LEFT, RIGHT, Mps, canonicalize, random_mps
from .tensor import fix_column_phases, svd_matrix

#: effective dimensions up to this size are diagonalized densely
DENSE_EFFECTIVE_LIMIT = 256
#: energies may rise by at most this much between local updates
SOLVER_SLACK = 1e-9
#: periodic runs without a start state first converge at this bond dimension
WARMUP_BOND = 2
WARMUP_SWEEPS = 4
#: amplitude of the random entries added when a warm-up state is embedded
PAD_NOISE = 1e-3
#: smallest relative eigenvalue of a loop boundary matrix used by the gauge step
STABILIZER_FLOOR = 1e-4


class NonHermitianError(RuntimeError):
    pass


@dataclass
class SweepReport:
    energies: list = field(default_factory=list)
    converged: bool = False
    sweeps_used: int = 0
    total_discarded_weight: float = 0.0
    seed: int | None = None
    wall_time: float = 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self))


# -- environments ------------------------------------------------------------


def _left_env(env, a, w):
    """``env[a, w, a']`` advanced over one site."""
    t = np.tensordot(env, a, axes=(0, 0))  # (w, a', s, b)
    t = np.tensordot(t, w, axes=([0, 2], [0, 2]))  # (a', b, t, v)
    return np.tensordot(t, a.conj(), axes=([0, 2], [0, 1]))  # (b, v, b')


def _right_env(env, a, w):
    """``env[b, v, b']`` advanced over one site towards the left."""
    t = np.tensordot(a, env, axes=(2, 0))  # (a, s, v, b')
    t = np.tensordot(t, w, axes=([1, 2], [2, 3]))  # (a, b', w, t)
    return np.tensordot(t, a.conj(), axes=([1, 3], [2, 1]))  # (a, w, a')


def _apply_one(x, le, w, re):
    """Effective single-site operator on ``x[a, s, b]``; returns ``y[a', t, b']``."""
    t = np.tensordot(le, x, axes=(0, 0))  # (w, a', s, b)
    t = np.tensordot(t, w, axes=([0, 2], [0, 2]))  # (a', b, t, v)
    return np.tensordot(t, re, axes=([1, 3], [0, 1]))  # (a', t, b')


def _apply_two(x, le, w1, w2, re):
    """Effective two-site operator on ``x[a, s1, s2, b]``."""
    t = np.tensordot(le, x, axes=(0, 0))  # (w, a', s1, s2, b)
    t = np.tensordot(t, w1, axes=([0, 2], [0, 2]))  # (a', s2, b, t1, u)
    t = np.tensordot(t, w2, axes=([4, 1], [0, 2]))  # (a', b, t1, t2, v)
    t = np.tensordot(t, re, axes=([1, 4], [0, 1]))  # (a', t1, t2, b')
    return t


def _lowest(matvec, dim: int, x0: np.ndarray, dense_builder=None):
    """Lowest eigenpair of a hermitian operator given by ``matvec``."""
    if dim <= DENSE_EFFECTIVE_LIMIT and dense_builder is not None:
        m = dense_builder()
        herm = np.max(np.abs(m - m.conj().T))
        if herm > 1e-8 * max(1.0, np.max(np.abs(m))):
            raise NonHermitianError(f"effective operator not hermitian (residual {herm:.2e})")
        w, v = scipy.linalg.eigh(m, subset_by_index=[0, 0])
        return float(w[0]), v[:, 0]
    op = spla.LinearOperator((dim, dim), matvec=matvec, dtype=np.complex128)
    v0 = x0 if np.linalg.norm(x0) > 0 else None
    ncv = min(dim, 20)
    w, v = spla.eigsh(op, k=1, which="SA", v0=v0, ncv=ncv, tol=1e-13, maxiter=10_000)
    return float(w[0]), v[:, 0]


def _start_state(mps0, L, d, D, seed):
    if mps0 is None:
        rng = np.random.default_rng(seed)
        mps0 = random_mps(L, d, D, rng)
    return canonicalize(mps0, LEFT)


def _prepare(mps0, h: NnHamiltonian, D, seed):
    if h.boundary != "open":
        raise ValueError("open-chain sweeps need an open Hamiltonian")
    mpo = h.to_mpo()
    psi = _start_state(mps0, h.L, h.d, D, seed)
    ws = mpo.tensors
    L = h.L
    lefts = [None] * (L + 1)
    rights = [None] * (L + 1)
    lefts[0] = mpo.left.reshape(1, -1, 1).astype(np.complex128)
    rights[L] = mpo.right.reshape(1, -1, 1).astype(np.complex128)
    for l in range(L - 1):
        lefts[l + 1] = _left_env(lefts[l], psi.tensors[l], ws[l])
    return psi.tensors, ws, lefts, rights


def _converged(energies_per_sweep, tol):
    if len(energies_per_sweep) < 2:
        return False
    e0, e1 = energies_per_sweep[-2], energies_per_sweep[-1]
    return abs(e1 - e0) < tol * max(abs(e1), 1e-300)


def dmrg_obc_single(
    mps0: Mps | None,
    h: NnHamiltonian,
    D: int,
    tol: float = 1e-10,
    max_sweeps: int = 20,
    seed: int = 0,
) -> tuple[Mps, SweepReport]:
    """Single-site sweeps at fixed bond dimension ``D``.

    Each sweep runs right to left, then left to right. Convergence means the
    energy change over a full sweep is below ``tol * |E|``.
    """
    t0 = time.perf_counter()
    ts, ws, lefts, rights = _prepare(mps0, h, D, seed)
    L = h.L
    report = SweepReport(seed=seed)
    per_sweep = []
    for sweep in range(max_sweeps):
        for direction in ("left", "right"):
            sites = range(L - 1, -1, -1) if direction == "left" else range(L)
            _regauge(ts, "right" if direction == "left" else "left")
            for l in sites:
                a = ts[l]
                shp = a.shape
                le, re, w = lefts[l], rights[l + 1], ws[l]

                def mv(x, le=le, re=re, w=w, shp=shp):
                    return _apply_one(x.reshape(shp), le, w, re).ravel()

                def dense(le=le, re=re, w=w):
                    m = np.einsum("awx,wtsv,bvy->xtyasb", le, w, re, optimize=True)
                    n = int(np.prod(shp))
                    return m.reshape(n, n)

                e, vec = _lowest(mv, a.size, a.ravel(), dense)
                a = vec.reshape(shp)
                if direction == "left" and l > 0:
                    dl, d, dr = shp
                    u, s, vh, _ = svd_matrix(a.reshape(dl, d * dr).T)
                    u, vh = fix_column_phases(u, vh)
                    ts[l] = u.T.reshape(-1, d, dr)
                    ts[l - 1] = np.tensordot(ts[l - 1], (s[:, None] * vh).T, axes=(2, 0))
                    rights[l] = _right_env(rights[l + 1], ts[l], ws[l])
                elif direction == "right" and l < L - 1:
                    dl, d, dr = shp
                    u, s, vh, _ = svd_matrix(a.reshape(dl * d, dr))
                    u, vh = fix_column_phases(u, vh)
                    ts[l] = u.reshape(dl, d, -1)
                    ts[l + 1] = np.tensordot(s[:, None] * vh, ts[l + 1], axes=(1, 0))
                    lefts[l + 1] = _left_env(lefts[l], ts[l], ws[l])
                else:
                    ts[l] = a
            report.energies.append(e)
        per_sweep.append(e)
        report.sweeps_used = sweep + 1
        if _converged(per_sweep, tol):
            report.converged = True
            break
    report.wall_time = time.perf_counter() - t0
    gauge = [LEFT] * (L - 1) + ["center"]
    return Mps(ts, gauge), report


def dmrg_obc_double(
    mps0: Mps | None,
    h: NnHamiltonian,
    D: int,
    tol: float = 1e-10,
    max_sweeps: int = 20,
    seed: int = 0,
    cutoff: float = 1e-14,
) -> tuple[Mps, SweepReport]:
    """Two-site sweeps; bonds grow up to ``D`` and are truncated by SVD.

    The discarded weight of every truncation is summed into the report.
    """
    t0 = time.perf_counter()
    ts, ws, lefts, rights = _prepare(mps0, h, min(D, 2), seed)
    L = h.L
    report = SweepReport(seed=seed)
    per_sweep = []
    for sweep in range(max_sweeps):
        for direction in ("left", "right"):
            bonds = range(L - 2, -1, -1) if direction == "left" else range(L - 1)
            for l in bonds:
                theta = np.tensordot(ts[l], ts[l + 1], axes=(2, 0))
                shp = theta.shape
                le, re, w1, w2 = lefts[l], rights[l + 2], ws[l], ws[l + 1]

                def mv(x, le=le, re=re, w1=w1, w2=w2, shp=shp):
                    return _apply_two(x.reshape(shp), le, w1, w2, re).ravel()

                def dense(le=le, re=re, w1=w1, w2=w2):
                    m = np.einsum("awx,wtsu,uTSv,bvy->xtTyasSb", le, w1, w2, re, optimize=True)
                    n = int(np.prod(shp))
                    return m.reshape(n, n)

                e, vec = _lowest(mv, theta.size, theta.ravel(), dense)
                dl, d1, d2, dr = shp
                u, s, vh, disc = svd_matrix(vec.reshape(dl * d1, d2 * dr), D, cutoff)
                u, vh = fix_column_phases(u, vh)
                report.total_discarded_weight += disc
                s = s / np.linalg.norm(s)
                if direction == "left":
                    ts[l + 1] = vh.reshape(-1, d2, dr)
                    ts[l] = (u * s).reshape(dl, d1, -1)
                    rights[l + 1] = _right_env(rights[l + 2], ts[l + 1], ws[l + 1])
                else:
                    ts[l] = u.reshape(dl, d1, -1)
                    ts[l + 1] = (s[:, None] * vh).reshape(-1, d2, dr)
                    lefts[l + 1] = _left_env(lefts[l], ts[l], ws[l])
            report.energies.append(e)
        per_sweep.append(e)
        report.sweeps_used = sweep + 1
        if _converged(per_sweep, tol):
            report.converged = True
            break
    report.wall_time = time.perf_counter() - t0
    gauge = [LEFT] * (L - 1) + ["center"]
    return Mps(ts, gauge), report


# -- low-rank loop products --------------------------------------------------


def _tr_right(env, a, op=None):
    """Batched ``E_op . env`` for ``env[b, b', k]``; returns ``(a, a', k)``."""
    t = np.tensordot(a, env, axes=(2, 0))  # (a, s, b', k)
    if op is not None:
        t = np.tensordot(op, t, axes=(1, 1)).transpose(1, 0, 2, 3)  # (a, t, b', k)
    return np.tensordot(t, a.conj(), axes=([1, 2], [1, 2])).transpose(0, 2, 1)  # (a, a', k)


def _tr_left(env, a, op=None):
    """Batched ``env . E_op`` for ``env[a, a', k]``; returns ``(b, b', k)``."""
    t = np.tensordot(env, a, axes=(0, 0))  # (a', k, s, b)
    if op is not None:
        t = np.tensordot(t, op, axes=(2, 1)).transpose(0, 1, 3, 2)  # (a', k, t, b)
    return np.tensordot(t, a.conj(), axes=([0, 2], [0, 1])).transpose(1, 2, 0)  # (b, b', k)


def _range_finder(apply_right, apply_left, dim_left: int, dim_right: int, p: int, rng):
    """``M ~ Z W`` from a random probe ``X``: ``Y = M X``, ``Z = qr(Y)``, ``W = Z^dag M``."""
    p = min(p, dim_left, dim_right)
    x = rng.standard_normal((dim_right, p)) + 1j * rng.standard_normal((dim_right, p))
    y = apply_right(x)
    z, _ = np.linalg.qr(y)
    w = apply_left(z.conj().T)
    return z, w


def _string_apply(tensors, ops, block, direction):
    """Push a block of vectors through a product of transfer matrices."""
    if direction == "right":
        dr = tensors[-1].shape[2]
        env = block.reshape(dr, dr, -1)
        for a, op in zip(reversed(tensors), reversed(ops)):
            env = _tr_right(env, a, op)
        return env.reshape(-1, block.shape[1])
    dl = tensors[0].shape[0]
    env = block.T.reshape(dl, dl, -1)
    for a, op in zip(tensors, ops):
        env = _tr_left(env, a, op)
    return env.reshape(-1, block.shape[0]).T


def low_rank_transfer(tensors, ops, p: int, rng: np.random.Generator | None = None):
    """Factor the composite transfer matrix of a segment as ``Z @ W``.

    Parameters
    ----------
    tensors:
        Site tensors ``(D_l, d, D_r)`` of the segment, left to right.
    ops:
        One operator (or ``None`` for the identity) per site.
    p:
        Rank of the probe. ``p >= D^2`` reproduces the product exactly.

    Returns
    -------
    Z, W:
        ``Z`` is a ``D_0^2 x p`` isometry and ``W`` a ``p x D_n^2`` matrix.
        The composite matrix has rows ``(a, a')`` on the left bond (ket,
        bra) and columns ``(b, b')`` on the right bond.
    """
    if p < 1:
        raise ValueError("p must be positive")
    tensors = [np.asarray(a, dtype=np.complex128) for a in tensors]
    ops = list(ops) if ops is not None else [None] * len(tensors)
    rng = np.random.default_rng(0) if rng is None else rng
    dl, dr = tensors[0].shape[0] ** 2, tensors[-1].shape[2] ** 2
    return _range_finder(
        lambda x: _string_apply(tensors, ops, x, "right"),
        lambda y: _string_apply(tensors, ops, y, "left"),
        dl,
        dr,
        p,
        rng,
    )


def dense_transfer(tensors, ops=None) -> np.ndarray:
    """Composite transfer matrix by explicit products (oracle helper)."""
    ops = [None] * len(tensors) if ops is None else ops
    m = None
    for a, op in zip(tensors, ops):
        op = np.eye(a.shape[1]) if op is None else op
        e = np.einsum("asb,ts,ctd->acbd", a, op, a.conj()).reshape(a.shape[0] ** 2, a.shape[2] ** 2)
        m = e if m is None else m @ e
    return m


def _ham_loop_apply(h: NnHamiltonian, ts, seg, block, direction):
    """Apply the transfer product of all Hamiltonian terms supported inside ``seg``.

    ``seg`` lists site indices in chain order; bond terms count when both
    sites belong to it. Runs a small automaton with states: identity so far,
    completed energy, and one pending state per bond term.
    """
    L = h.L
    first, last = seg[0], seg[-1]
    if direction == "right":
        d = ts[last].shape[2]
        n = block.reshape(d, d, -1)
        e = np.zeros_like(n)
        pend: list = []
        for j in reversed(seg):
            a = ts[j]
            new_e = _tr_right(e, a)
            site = h.site_matrix(j)
            if np.any(site):
                new_e = new_e + _tr_right(n, a, site)
            for coef_op, env in pend:
                new_e = new_e + _tr_right(env, a, coef_op)
            new_pend = []
            if j != first:
                b = (j - 1) % L
                for c, left_op, right_op in h.two_site[b]:
                    new_pend.append((np.asarray(left_op), c * _tr_right(n, a, right_op)))
            n = _tr_right(n, a)
            e, pend = new_e, new_pend
        return e.reshape(-1, block.shape[1])
    d = ts[first].shape[0]
    n = block.T.reshape(d, d, -1)
    e = np.zeros_like(n)
    pend = []
    for j in seg:
        a = ts[j]
        new_e = _tr_left(e, a)
        site = h.site_matrix(j)
        if np.any(site):
            new_e = new_e + _tr_left(n, a, site)
        for coef_op, env in pend:
            new_e = new_e + _tr_left(env, a, coef_op)
        new_pend = []
        if j != last:
            for c, left_op, right_op in h.two_site[j]:
                new_pend.append((np.asarray(right_op), c * _tr_left(n, a, left_op)))
        n = _tr_left(n, a)
        e, pend = new_e, new_pend
    return e.reshape(-1, block.shape[0]).T


# -- periodic sweeps ---------------------------------------------------------


class NormNotPositiveError(RuntimeError):
    pass


def _check_terms(h: NnHamiltonian, tol: float = 1e-10) -> None:
    for l in range(h.L):
        m = h.site_matrix(l)
        if np.max(np.abs(m - m.conj().T)) > tol:
            raise NonHermitianError(f"one-site term on site {l} is not hermitian")
    for b in range(h.n_bonds):
        m = h.bond_matrix(b)
        if np.max(np.abs(m - m.conj().T)) > tol:
            raise NonHermitianError(f"bond term {b} is not hermitian")


def _psd_sqrt(m: np.ndarray, floor: float = 1e-12):
    """Hermitian square root and inverse square root of a positive matrix."""
    m = (m + m.conj().T) / 2
    w, v = np.linalg.eigh(m)
    w = np.clip(w, floor * max(w[-1], 1e-300), None)
    return (v * np.sqrt(w)) @ v.conj().T, (v / np.sqrt(w)) @ v.conj().T, w[-1] / w[0]


def _loop_matrices(h: NnHamiltonian, ts, l: int, p: int, rng):
    """Dense ``D^2 x D^2`` loop matrices for site ``l`` from two low-rank factors.

    Returns ``(N, terms)`` where ``N`` is the identity loop and ``terms`` a
    list of ``(M, op)`` pairs whose sum ``sum M (x) op`` is the effective
    Hamiltonian. Loop matrices have rows on the right bond of ``l`` and
    columns on its left bond.
    """
    L = h.L
    seg = [(l + k) % L for k in range(1, L)]
    inner = seg[1:-1]
    s_first, s_last = seg[0], seg[-1]
    # identity loop over the interior, then the two neighbours exactly
    z1, w1 = low_rank_transfer([ts[j] for j in inner], None, p, rng)
    db = ts[s_first].shape[0]
    da = ts[s_last].shape[2]

    def left_factor(op):
        return _tr_right(z1.reshape(ts[s_first].shape[2], ts[s_first].shape[2], -1), ts[s_first], op).reshape(db * db, -1)

    def right_factor(op):
        d = ts[s_last].shape[0]
        return _tr_left(w1.T.reshape(d, d, -1), ts[s_last], op).reshape(da * da, -1).T

    f_id, g_id = left_factor(None), right_factor(None)
    n_loop = f_id @ g_id
    terms = []
    site = h.site_matrix(l)
    if np.any(site):
        terms.append((n_loop, site))
    # bond (l, l+1): left factor on l, right factor on l+1
    for c, left_op, right_op in h.two_site[l]:
        terms.append((c * left_factor(right_op) @ g_id, np.asarray(left_op)))
    # bond (l-1, l)
    for c, left_op, right_op in h.two_site[(l - 1) % L]:
        terms.append((c * f_id @ right_factor(left_op), np.asarray(right_op)))
    # all remaining terms
    z2, w2 = _range_finder(
        lambda x: _ham_loop_apply(h, ts, seg, x, "right"),
        lambda y: _ham_loop_apply(h, ts, seg, y, "left"),
        db * db,
        da * da,
        p,
        rng,
    )
    terms.append((z2 @ w2, np.eye(h.d)))
    return n_loop, terms


def _as_form(loop: np.ndarray, da: int, db: int) -> np.ndarray:
    """Loop matrix ``M[(b,b'),(a,a')]`` as a form ``F[(a',b'),(a,b)]``."""
    return loop.reshape(db, db, da, da).transpose(3, 1, 2, 0).reshape(da * db, da * db)


def _solve_site(n_loop, terms, shape, kernel_tol: float = 1e-11):
    da, d, db = shape
    n0 = _as_form(n_loop, da, db)
    n0 = (n0 + n0.conj().T) / 2
    w, v = np.linalg.eigh(n0)
    if w[0] < -1e-8 * max(w[-1], 1e-300):
        raise NormNotPositiveError(f"loop norm has eigenvalue {w[0]:.3e} (largest {w[-1]:.3e})")
    keep = w > kernel_tol * w[-1]
    pmat = v[:, keep] / np.sqrt(w[keep])  # ((a, b), r)
    r = pmat.shape[1]
    # vector index order is (a, s, b)
    px = np.einsum("abr,st->asbtr", pmat.reshape(da, db, r), np.eye(d)).reshape(da * d * db, r * d)
    hm = np.zeros((da * d * db, da * d * db), dtype=np.complex128)
    for loop, op in terms:
        f = _as_form(loop, da, db).reshape(da, db, da, db)
        hm += np.einsum("xyab,ts->xtyasb", f, op).reshape(da * d * db, da * d * db)
    hr = px.conj().T @ hm @ px
    hr = (hr + hr.conj().T) / 2
    ev, vec = scipy.linalg.eigh(hr, subset_by_index=[0, 0])
    x = px @ vec[:, 0]
    return float(ev[0]), x.reshape(da, d, db), float(w[-1] / w[keep][0])


def _stabilize(ts, l: int, n_loop, L: int):
    """Gauge the two bonds of site ``l`` so the loop norm is close to identity.

    The loop norm is approximated by a product ``La (x) Lb`` of its partial
    traces; the square roots are absorbed into ``A[l]`` and the inverses
    into its neighbours.
    """
    da, _, db = ts[l].shape
    f = _as_form(n_loop, da, db).reshape(da, db, da, db)
    lam_a = np.einsum("xbab->xa", f)
    lam_b = np.einsum("axay->xy", f)
    # clipping keeps the gauge matrices well conditioned
    sa, isa, _ = _psd_sqrt(lam_a, STABILIZER_FLOOR)
    sb, isb, _ = _psd_sqrt(lam_b.T, STABILIZER_FLOOR)
    prv, nxt = (l - 1) % L, (l + 1) % L
    ts[l] = np.einsum("xa,asb,by->xsy", sa, ts[l], sb)
    ts[prv] = np.tensordot(ts[prv], isa, axes=(2, 0))
    ts[nxt] = np.tensordot(isb, ts[nxt], axes=(1, 0))


def pad_bonds(mps: Mps, D: int, rng: np.random.Generator, noise: float = 1e-3) -> Mps:
    """Embed a periodic MPS into bond dimension ``D`` plus small Gaussian noise."""
    ts = []
    for a in mps.tensors:
        dl, d, dr = a.shape
        b = noise * (rng.standard_normal((D, d, D)) + 1j * rng.standard_normal((D, d, D)))
        b[:dl, :, :dr] += a
        ts.append(b)
    return Mps(ts, boundary="periodic")


def _regauge(ts, direction: str) -> None:
    """QR pass around the open ring, resetting gauge drift from stabilization.

    ``"right"`` left-orthonormalizes every site but the last; ``"left"``
    right-orthonormalizes every site but the first.
    """
    L = len(ts)
    if direction == "right":
        for l in range(L - 1):
            dl, d, dr = ts[l].shape
            q, r = np.linalg.qr(ts[l].reshape(dl * d, dr))
            ts[l] = q.reshape(dl, d, -1)
            ts[l + 1] = np.tensordot(r, ts[l + 1], axes=(1, 0))
    else:
        for l in range(L - 1, 0, -1):
            dl, d, dr = ts[l].shape
            q, r = np.linalg.qr(ts[l].reshape(dl, d * dr).T)
            ts[l] = q.T.reshape(-1, d, dr)
            ts[l - 1] = np.tensordot(ts[l - 1], r.T, axes=(2, 0))
    nrm = np.linalg.norm(ts[-1] if direction == "right" else ts[0])
    if nrm > 0:
        # scalar rescaling only changes the normalization
        k = -1 if direction == "right" else 0
        ts[k] = ts[k] / nrm


def _periodic_start(mps0, h, D, seed):
    if mps0 is None:
        rng = np.random.default_rng(seed)
        mps0 = random_mps(h.L, h.d, D, rng, boundary="periodic")
    if mps0.boundary != "periodic":
        raise ValueError("periodic sweeps need a periodic MPS")
    ts = [np.asarray(a, dtype=np.complex128).copy() for a in mps0.tensors]
    _regauge(ts, "right")
    return ts


def dmrg_pbc(
    mps0: Mps | None,
    h: NnHamiltonian,
    D: int,
    p: int | None = None,
    tol: float = 1e-10,
    max_sweeps: int = 20,
    seed: int = 0,
    stabilize: bool = True,
) -> tuple[Mps, SweepReport]:
    """Single-site sweeps for periodic chains.

    At each site the loop around the ring is summarized by two low-rank
    products of rank ``p`` (identity loop and Hamiltonian remainder) and the
    generalized problem ``H A = eps N A`` is solved on the range of ``N``.
    ``p=None`` uses ``D^2``, which is exact. Without ``mps0`` the run first
    converges a bond-2 state and embeds it into bond ``D`` with weak noise.
    """
    if h.boundary != "periodic":
        raise ValueError("dmrg_pbc needs a periodic Hamiltonian")
    if h.L < 4:
        raise ValueError("periodic sweeps need L >= 4")
    _check_terms(h)
    t0 = time.perf_counter()
    L = h.L
    p = D * D if p is None else p
    if mps0 is None and D > WARMUP_BOND:
        # a random start at full D leaves many weak bond directions that decay
        # only slowly; growing from a converged small-D state avoids that
        small, _ = dmrg_pbc(None, h, WARMUP_BOND, p, tol, WARMUP_SWEEPS, seed, stabilize)
        mps0 = pad_bonds(small, D, np.random.default_rng(seed), PAD_NOISE)
    ts = _periodic_start(mps0, h, D, seed)
    rng = np.random.default_rng(seed + 1)
    report = SweepReport(seed=seed)
    per_sweep = []
    e = np.inf
    for sweep in range(max_sweeps):
        for direction in ("left", "right"):
            sites = range(L - 1, -1, -1) if direction == "left" else range(L)
            _regauge(ts, "right" if direction == "left" else "left")
            for l in sites:
                n_loop, _ = _loop_matrices(h, ts, l, p, rng) if stabilize else (None, None)
                if stabilize:
                    _stabilize(ts, l, n_loop, L)
                n_loop, terms = _loop_matrices(h, ts, l, p, rng)
                e, a, _ = _solve_site(n_loop, terms, ts[l].shape)
                ts[l] = a
                _move_center(ts, l, direction, L)
            report.energies.append(e)
        per_sweep.append(e)
        report.sweeps_used = sweep + 1
        if _converged(per_sweep, tol):
            report.converged = True
            break
    report.wall_time = time.perf_counter() - t0
    out = Mps(ts, boundary="periodic")
    return out.scaled(1 / out.norm()) if L * np.log2(h.d) <= 24 else out, report


def _move_center(ts, l, direction, L):
    dl, d, dr = ts[l].shape
    if direction == "right":
        q, r = np.linalg.qr(ts[l].reshape(dl * d, dr))
        ts[l] = q.reshape(dl, d, dr)
        nxt = (l + 1) % L
        ts[nxt] = np.tensordot(r, ts[nxt], axes=(1, 0))
    else:
        q, r = np.linalg.qr(ts[l].reshape(dl, d * dr).T)
        ts[l] = q.T.reshape(dl, d, dr)
        prv = (l - 1) % L
        ts[prv] = np.tensordot(ts[prv], r.T, axes=(2, 0))
