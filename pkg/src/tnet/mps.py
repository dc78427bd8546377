"""Matrix product states with open (or periodic) boundaries.

Site tensors have index order ``(left bond, physical, right bond)``. Open
chains have outer bonds of dimension 1; periodic chains close the product
with a trace.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensor import DEFAULT_CUTOFF, fix_column_phases, load_tensor, save_tensor, svd_matrix

LEFT, RIGHT, CENTER, UNKNOWN = "left", "right", "center", "unknown"

#: Largest number of qubits a dense state may span.
DENSE_QUBIT_LIMIT = 24


class Mps:
    """A chain of three-index tensors ``A[l]`` with shape ``(D_{l-1}, d_l, D_l)``.

    Parameters
    ----------
    tensors:
        Site tensors. They are copied and promoted to complex128.
    gauge:
        Optional per-site gauge marks (``"left"``, ``"right"``, ``"center"``,
        ``"unknown"``).
    boundary:
        ``"open"`` or ``"periodic"``.
    """

    def __init__(self, tensors: Sequence, gauge: Sequence[str] | None = None, boundary: str = "open"):
        self.tensors = [np.array(a, dtype=np.complex128) for a in tensors]
        if not self.tensors:
            raise ValueError("an MPS needs at least one site")
        for a in self.tensors:
            if a.ndim != 3:
                raise ValueError("MPS tensors must have three indices")
        for l in range(len(self.tensors) - 1):
            if self.tensors[l].shape[2] != self.tensors[l + 1].shape[0]:
                raise ValueError(f"bond mismatch between sites {l} and {l + 1}")
        if boundary not in ("open", "periodic"):
            raise ValueError(f"unknown boundary {boundary!r}")
        if boundary == "open":
            if self.tensors[0].shape[0] != 1 or self.tensors[-1].shape[2] != 1:
                raise ValueError("open MPS needs outer bond dimensions 1")
        elif self.tensors[0].shape[0] != self.tensors[-1].shape[2]:
            raise ValueError("periodic MPS needs matching outer bonds")
        self.boundary = boundary
        self.gauge = list(gauge) if gauge is not None else [UNKNOWN] * len(self.tensors)

    @property
    def L(self) -> int:
        return len(self.tensors)

    @property
    def phys_dims(self) -> list[int]:
        return [a.shape[1] for a in self.tensors]

    @property
    def d(self) -> int:
        return self.tensors[0].shape[1]

    @property
    def bond_dims(self) -> list[int]:
        """Dimensions ``D_0, ..., D_L`` of all bonds including the outer ones."""
        return [self.tensors[0].shape[0]] + [a.shape[2] for a in self.tensors]

    @property
    def max_bond(self) -> int:
        return max(self.bond_dims)

    def copy(self) -> "Mps":
        return Mps(self.tensors, self.gauge, self.boundary)

    def __getitem__(self, l: int) -> np.ndarray:
        return self.tensors[l]

    def to_dense(self) -> np.ndarray:
        check_dense_size(self.phys_dims)
        psi = self.tensors[0]
        for a in self.tensors[1:]:
            psi = np.tensordot(psi, a, axes=(-1, 0))
        if self.boundary == "open":
            return psi.reshape(-1)
        psi = np.trace(psi, axis1=0, axis2=-1)
        return psi.reshape(-1)

    def norm(self) -> float:
        return float(np.sqrt(max(overlap(self, self).real, 0.0)))

    def scaled(self, c: complex) -> "Mps":
        out = self.copy()
        out.tensors[0] = out.tensors[0] * c
        return out

    def save(self, directory) -> None:
        """Write a JSON manifest plus one binary dump per site."""
        os.makedirs(directory, exist_ok=True)
        manifest = {
            "L": self.L,
            "d": self.phys_dims,
            "bond_dims": self.bond_dims,
            "gauge": self.gauge,
            "boundary": self.boundary,
            "sites": [f"site{l:04d}.tnet" for l in range(self.L)],
        }
        for name, a in zip(manifest["sites"], self.tensors):
            save_tensor(os.path.join(directory, name), a)
        with open(os.path.join(directory, "mps.json"), "w") as fh:
            json.dump(manifest, fh, indent=2)

    @classmethod
    def load(cls, directory) -> "Mps":
        with open(os.path.join(directory, "mps.json")) as fh:
            manifest = json.load(fh)
        ts = [load_tensor(os.path.join(directory, n)) for n in manifest["sites"]]
        return cls(ts, manifest["gauge"], manifest["boundary"])


def check_dense_size(dims: Sequence[int], limit: int = DENSE_QUBIT_LIMIT) -> None:
    if float(np.sum(np.log2(dims))) > limit + 1e-9:
        raise ValueError(f"dense size guard: {len(dims)} sites exceed {limit} qubits")


# -- construction ------------------------------------------------------------


def product_state(states: Sequence, d: int | None = None) -> Mps:
    """Product MPS from local basis indices or local vectors."""
    ts = []
    for s in states:
        if np.isscalar(s):
            v = np.zeros(d, dtype=np.complex128)
            v[int(s)] = 1.0
        else:
            v = np.asarray(s, dtype=np.complex128)
        ts.append(v.reshape(1, -1, 1))
    return Mps(ts, [LEFT] * len(ts))


def random_mps(
    L: int, d: int, D: int, rng: np.random.Generator, boundary: str = "open", normalize: bool = True
) -> Mps:
    """Complex Gaussian MPS with bond dimensions capped by ``D`` and by ``d**l``."""
    ts = []
    for l in range(L):
        if boundary == "open":
            dl = min(D, d**l, d ** (L - l))
            dr = min(D, d ** (l + 1), d ** (L - l - 1))
        else:
            dl = dr = D
        ts.append(rng.standard_normal((dl, d, dr)) + 1j * rng.standard_normal((dl, d, dr)))
    mps = Mps(ts, boundary=boundary)
    if normalize:
        if boundary == "open":
            mps = canonicalize(mps, RIGHT)
        else:
            mps = mps.scaled(1 / mps.norm())
    return mps


def from_dense(state, dims: Sequence[int] | int, cutoff: float = 0.0, max_keep: int | None = None) -> Mps:
    """Exact MPS of a normalized dense state by successive SVDs.

    ``dims`` is the list of local dimensions or a single ``d``. The result is
    left-canonical; with ``cutoff=0`` only exact zero Schmidt values (below
    the default relative floor) are dropped.
    """
    psi = np.asarray(state, dtype=np.complex128).ravel()
    if np.isscalar(dims) or np.ndim(dims) == 0:
        d = int(dims)
        L = int(round(np.log(psi.size) / np.log(d)))
        dims = [d] * L
    dims = list(dims)
    if int(np.prod(dims)) != psi.size:
        raise ValueError("state length does not match the local dimensions")
    check_dense_size(dims)
    nrm = np.linalg.norm(psi)
    if abs(nrm - 1) > 1e-8:
        raise ValueError(f"input state is not normalized (norm {nrm:.6g})")
    cut = max(cutoff, DEFAULT_CUTOFF)
    ts = []
    rest = psi.reshape(1, -1)
    for l, d in enumerate(dims[:-1]):
        dl = rest.shape[0]
        m = rest.reshape(dl * d, -1)
        u, s, vh, _ = svd_matrix(m, max_keep, cut)
        u, vh = fix_column_phases(u, vh)
        ts.append(u.reshape(dl, d, -1))
        rest = s[:, None] * vh
    ts.append(rest.reshape(rest.shape[0], dims[-1], 1))
    gauge = [LEFT] * (len(dims) - 1) + [CENTER]
    return Mps(ts, gauge)


# -- gauges ------------------------------------------------------------------


def _left_step(a: np.ndarray, nxt: np.ndarray | None, max_keep=None, cutoff=DEFAULT_CUTOFF):
    """Left-orthonormalize ``a`` and push the remainder into ``nxt``."""
    dl, d, dr = a.shape
    u, s, vh, disc = svd_matrix(a.reshape(dl * d, dr), max_keep, cutoff)
    u, vh = fix_column_phases(u, vh)
    new_a = u.reshape(dl, d, -1)
    rem = s[:, None] * vh
    if nxt is None:
        return new_a, rem, disc
    return new_a, np.tensordot(rem, nxt, axes=(1, 0)), disc


def _right_step(a: np.ndarray, prv: np.ndarray | None, max_keep=None, cutoff=DEFAULT_CUTOFF):
    dl, d, dr = a.shape
    u, s, vh, disc = svd_matrix(a.reshape(dl, d * dr).T, max_keep, cutoff)
    # transpose trick keeps phase fixing on the isometry columns
    u, vh = fix_column_phases(u, vh)
    new_a = u.T.reshape(-1, d, dr)
    rem = (s[:, None] * vh).T
    if prv is None:
        return new_a, rem, disc
    return new_a, np.tensordot(prv, rem, axes=(2, 0)), disc


def canonicalize(mps: Mps, direction: str = RIGHT, normalize: bool = True) -> Mps:
    """Bring every site into the requested gauge with minimal bond dimensions.

    Two SVD passes are performed: the first in the opposite direction removes
    redundant bond dimension, the second establishes the gauge.
    """
    if mps.boundary != "open":
        raise ValueError("canonical forms are defined for open chains")
    ts = [a.copy() for a in mps.tensors]
    L = len(ts)
    if direction == RIGHT:
        ts = _sweep_left(ts)
        ts = _sweep_right(ts)
        nrm = np.linalg.norm(ts[0])
        if nrm < 1e-300:
            raise ValueError("zero-norm state")
        if normalize:
            ts[0] = ts[0] / nrm
        return Mps(ts, [RIGHT] * L)
    if direction == LEFT:
        ts = _sweep_right(ts)
        ts = _sweep_left(ts)
        nrm = np.linalg.norm(ts[-1])
        if nrm < 1e-300:
            raise ValueError("zero-norm state")
        if normalize:
            ts[-1] = ts[-1] / nrm
        return Mps(ts, [LEFT] * L)
    raise ValueError(f"unknown direction {direction!r}")


def _sweep_left(ts, upto: int | None = None):
    """Left-orthonormalize sites ``0 .. upto-1`` (default all but the last)."""
    upto = len(ts) - 1 if upto is None else upto
    for l in range(upto):
        ts[l], ts[l + 1], _ = _left_step(ts[l], ts[l + 1])
    return ts


def _sweep_right(ts, downto: int = 1):
    """Right-orthonormalize sites ``L-1 .. downto``."""
    for l in range(len(ts) - 1, downto - 1, -1):
        ts[l], ts[l - 1], _ = _right_step(ts[l], ts[l - 1])
    return ts


def mix_gauge(mps: Mps, l1: int, l2: int) -> Mps:
    """Left-gauge sites before ``l1``, right-gauge sites after ``l2``.

    Sites are numbered from 1 as in ``1 <= l1 <= l2 <= L``. Tensors inside
    the window are left untouched apart from absorbing the gauge remainders,
    so the window block carries the norm; for ``l1 == l2`` that block is the
    single center tensor at ``l1``.
    """
    L = mps.L
    if not (1 <= l1 <= l2 <= L):
        raise ValueError(f"window [{l1}, {l2}] outside 1..{L}")
    ts = [a.copy() for a in mps.tensors]
    ts = _sweep_left(ts, l1 - 1)
    ts = _sweep_right(ts, l2)
    window = [CENTER] + [UNKNOWN] * (l2 - l1)
    gauge = [LEFT] * (l1 - 1) + window + [RIGHT] * (L - l2)
    return Mps(ts, gauge)


def left_residual(a: np.ndarray) -> float:
    """``max |sum_s A_s^dag A_s - I|``."""
    m = a.reshape(-1, a.shape[2])
    return float(np.max(np.abs(m.conj().T @ m - np.eye(a.shape[2]))))


def right_residual(a: np.ndarray) -> float:
    m = a.reshape(a.shape[0], -1)
    return float(np.max(np.abs(m @ m.conj().T - np.eye(a.shape[0]))))


# -- Schmidt data and truncation --------------------------------------------


@dataclass(frozen=True)
class SchmidtData:
    bond: int
    values: np.ndarray
    entropy: float


def entropy_bits(values: np.ndarray) -> float:
    p = np.asarray(values, dtype=float) ** 2
    p = p[p > 1e-300]
    return float(-np.sum(p * np.log2(p)))


def schmidt(mps: Mps, bond: int) -> SchmidtData:
    """Schmidt values across the cut after ``bond`` sites (``1 <= bond < L``)."""
    if not (1 <= bond < mps.L):
        raise ValueError(f"bond {bond} outside 1..{mps.L - 1}")
    c = mix_gauge(mps, bond, bond)
    a = c.tensors[bond - 1]
    s = np.linalg.svd(a.reshape(-1, a.shape[2]), compute_uv=False)
    s = s[s > DEFAULT_CUTOFF * s[0]]
    s = s / np.linalg.norm(s)
    return SchmidtData(bond, s, entropy_bits(s))


def entanglement_profile(mps: Mps) -> list[float]:
    """Half-cut entropies (bits) at every bond, computed in one sweep."""
    ts = canonicalize(mps, RIGHT).tensors
    out = []
    for l in range(mps.L - 1):
        dl, d, dr = ts[l].shape
        u, s, vh, _ = svd_matrix(ts[l].reshape(dl * d, dr))
        s = s / np.linalg.norm(s)
        out.append(entropy_bits(s))
        ts[l] = u.reshape(dl, d, -1)
        ts[l + 1] = np.tensordot(s[:, None] * vh, ts[l + 1], axes=(1, 0))
    return out


def truncate(mps: Mps, bond: int, max_keep: int) -> tuple[Mps, float]:
    """Keep the ``max_keep`` largest Schmidt values across ``bond`` and renormalize.

    Returns the new MPS and the discarded weight (sum of dropped squared
    Schmidt values of the normalized input).
    """
    if max_keep < 1:
        raise ValueError("max_keep must be positive")
    if not (1 <= bond < mps.L):
        raise ValueError(f"bond {bond} outside 1..{mps.L - 1}")
    c = mix_gauge(mps, bond, bond)
    ts = c.tensors
    nrm = np.linalg.norm(ts[bond - 1])
    a = ts[bond - 1] / nrm
    dl, d, dr = a.shape
    u, s, vh, disc = svd_matrix(a.reshape(dl * d, dr), max_keep)
    s_new = s / np.linalg.norm(s)
    ts[bond - 1] = (u * s_new).reshape(dl, d, -1)
    ts[bond] = np.tensordot(vh, ts[bond], axes=(1, 0))
    gauge = [LEFT] * (bond - 1) + [CENTER] + [UNKNOWN] + [RIGHT] * (mps.L - bond - 1)
    return Mps(ts, gauge), disc


# -- transfer-matrix evaluation ---------------------------------------------


def transfer_left(env: np.ndarray, a: np.ndarray, op: np.ndarray | None = None, b: np.ndarray | None = None):
    """Advance a left environment ``env[a, a']`` (ket, bra) by one site.

    Computes ``sum env[a,a'] A[a,s,b] op[t,s] conj(B[a',t,b'])`` in the
    ``d D^3`` order.
    """
    b = a if b is None else b
    tmp = np.tensordot(env, a, axes=(0, 0))  # (a', s, b)
    if op is not None:
        tmp = np.tensordot(tmp, op, axes=(1, 1)).transpose(0, 2, 1)  # (a', t, b)
    return np.tensordot(tmp, b.conj(), axes=([0, 1], [0, 1]))  # (b, b')


def transfer_right(env: np.ndarray, a: np.ndarray, op: np.ndarray | None = None, b: np.ndarray | None = None):
    """Advance a right environment ``env[b, b']`` (ket, bra) by one site."""
    b = a if b is None else b
    tmp = np.tensordot(a, env, axes=(2, 0))  # (a, s, b')
    if op is not None:
        tmp = np.tensordot(tmp, op, axes=(1, 1)).transpose(0, 2, 1)
    return np.tensordot(tmp, b.conj(), axes=([1, 2], [1, 2]))  # (a, a')


def overlap(bra: Mps, ket: Mps) -> complex:
    """``<bra|ket>``."""
    if bra.L != ket.L:
        raise ValueError("length mismatch")
    if ket.boundary == "open" and bra.boundary == "open":
        env = np.ones((1, 1), dtype=np.complex128)
        for a, b in zip(ket.tensors, bra.tensors):
            env = transfer_left(env, a, None, b)
        return complex(env[0, 0])
    return _periodic_overlap(bra, ket)


def _periodic_overlap(bra: Mps, ket: Mps) -> complex:
    """Trace of the ring of mixed transfer matrices, ``O(L d D^5)``."""
    a0, b0 = ket.tensors[0].shape[0], bra.tensors[0].shape[0]
    env = np.eye(a0 * b0, dtype=np.complex128).reshape(a0, b0, -1)
    for a, b in zip(ket.tensors, bra.tensors):
        t = np.tensordot(env, a, axes=(0, 0))  # (b', k, s, c)
        env = np.tensordot(t, b.conj(), axes=([0, 2], [0, 1])).transpose(1, 2, 0)  # (c, c', k)
    return complex(np.trace(env.reshape(a0 * b0, a0 * b0)))


def _check_op(op, d):
    op = np.asarray(op, dtype=np.complex128)
    if op.shape != (d, d):
        raise ValueError(f"operator shape {op.shape} does not match local dimension {d}")
    return op


def expval_product(mps: Mps, ops: Sequence) -> complex:
    """``<psi| op_1 x ... x op_L |psi>`` by an ordered transfer-matrix product.

    ``None`` entries stand for the identity.
    """
    if len(ops) != mps.L:
        raise ValueError("need one operator per site")
    if mps.boundary != "open":
        raise ValueError("use the periodic evaluators for periodic chains")
    env = np.ones((1, 1), dtype=np.complex128)
    for a, op in zip(mps.tensors, ops):
        op = None if op is None else _check_op(op, a.shape[1])
        env = transfer_left(env, a, op)
    return complex(env[0, 0])


def expval_local(mps: Mps, op, l1: int, l2: int) -> complex:
    """Expectation of an operator on sites ``l1..l2`` (1-based, inclusive).

    The MPS is brought into mixed gauge around the window so that only the
    window's transfer matrices enter; the outer boundaries reduce to
    identity matrices. The result is normalized by the state norm.
    """
    if not (1 <= l1 <= l2 <= mps.L):
        raise ValueError(f"window [{l1}, {l2}] outside 1..{mps.L}")
    c = mix_gauge(mps, l1, l2)
    win = c.tensors[l1 - 1 : l2]
    dims = [a.shape[1] for a in win]
    n = int(np.prod(dims))
    op = np.asarray(op, dtype=np.complex128)
    if op.shape != (n, n):
        raise ValueError(f"operator shape {op.shape} does not match window dimension {n}")
    # contract the window into one block (dl, s1..sk, dr)
    blk = win[0]
    for a in win[1:]:
        blk = np.tensordot(blk, a, axes=(-1, 0))
    dl, dr = blk.shape[0], blk.shape[-1]
    blk = blk.reshape(dl, n, dr)
    obl = np.tensordot(op, blk, axes=(1, 1))  # (t, dl, dr)
    num = np.tensordot(blk.conj(), obl, axes=([1, 0, 2], [0, 1, 2]))
    den = np.vdot(blk, blk)
    return complex(num / den)


def expval_nn_hamiltonian(mps: Mps, h) -> float:
    """Energy of a nearest-neighbour Hamiltonian with running accumulators.

    Sweeping left to right, ``chi`` holds the norm environment, ``xi`` the
    accumulated energy environment and ``psi_p`` the environments with the
    left factor of each bond term applied on the previous site.
    """
    if h.L != mps.L:
        raise ValueError("length mismatch")
    if h.boundary != "open" or mps.boundary != "open":
        return _expval_dense(mps, h)
    h.check_hermitian_terms()
    chi = np.ones((1, 1), dtype=np.complex128)
    xi = np.zeros((1, 1), dtype=np.complex128)
    pending: list = []
    for l, a in enumerate(mps.tensors):
        d = a.shape[1]
        new_xi = transfer_left(xi, a)
        for g, op in h.one_site[l]:
            new_xi = new_xi + g * transfer_left(chi, a, _check_op(op, d))
        for coef, env in pending:
            new_xi = new_xi + coef * transfer_left(env[0], a, _check_op(env[1], d))
        pending = []
        if l < mps.L - 1:
            for coef, left_op, right_op in h.two_site[l]:
                pending.append((coef, (transfer_left(chi, a, _check_op(left_op, d)), right_op)))
        chi = transfer_left(chi, a)
        xi = new_xi
    e = xi[0, 0] / chi[0, 0]
    return float(e.real)


def _expval_dense(mps: Mps, h) -> float:
    psi = mps.to_dense()
    hm = h.to_sparse()
    return float((np.vdot(psi, hm @ psi) / np.vdot(psi, psi)).real)


def expval_mpo(mps: Mps, mpo) -> complex:
    """``<psi|O|psi> / <psi|psi>`` for an open MPO."""
    ws = mpo.closed_tensors()
    env = np.ones((1, 1, 1), dtype=np.complex128)  # (ket, mpo, bra)
    nrm = np.ones((1, 1), dtype=np.complex128)
    for a, w in zip(mps.tensors, ws):
        env = np.tensordot(env, a, axes=(0, 0))  # (w, a', s, b)
        env = np.tensordot(env, w, axes=([0, 2], [0, 2]))  # (a', b, t, v)
        env = np.tensordot(env, a.conj(), axes=([0, 2], [0, 1]))  # (b, v, b')
        nrm = transfer_left(nrm, a)
    return complex(env.reshape(-1)[0] / nrm[0, 0])


def dense_rdm(psi: np.ndarray, dims: Sequence[int], keep: Sequence[int]) -> np.ndarray:
    """Reduced density matrix of a dense state on the sites in ``keep`` (oracle)."""
    psi = np.asarray(psi).reshape(dims)
    keep = list(keep)
    rest = [i for i in range(len(dims)) if i not in keep]
    m = np.transpose(psi, keep + rest).reshape(int(np.prod([dims[i] for i in keep])), -1)
    return m @ m.conj().T


def von_neumann_bits(rho: np.ndarray) -> float:
    w = np.linalg.eigvalsh((rho + rho.conj().T) / 2)
    w = w[w > 1e-14]
    return float(-np.sum(w * np.log2(w)))
