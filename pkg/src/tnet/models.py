"""Nearest-neighbour spin Hamiltonians and the exact-diagonalization oracle.

Operator conventions: Pauli matrices with ``sigma_z |0> = |0>``.

* ``tfim``: ``-J sum sx sx - h sum sz``
* ``heisenberg``: ``J sum (sx sx + sy sy + sz sz)``
* ``xxz``: ``J sum (sx sx + sy sy + Delta sz sz) - h sum sz``
* ``hardcore``: ``-J sum (b^dag b + h.c.)`` for hard-core bosons (``d = 2``, occupation basis)
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cpt import PAULI_X, PAULI_Y, PAULI_Z

SX, SY, SZ = PAULI_X, PAULI_Y, PAULI_Z
ID2 = np.eye(2, dtype=np.complex128)
#: hard-core boson annihilator in the occupation basis |0>, |1>
B_ANN = np.array([[0, 1], [0, 0]], dtype=np.complex128)
NUM = np.diag([0.0, 1.0]).astype(np.complex128)

ED_QUBIT_LIMIT = 20


@dataclass
class NnHamiltonian:
    """Sum of one-site terms ``g * op`` and two-site terms ``h * A (x) B``.

    ``one_site[l]`` lists ``(g, op)`` pairs acting on site ``l``;
    ``two_site[b]`` lists ``(h, A, B)`` triples coupling sites ``b`` and
    ``b + 1`` (for periodic chains bond ``L - 1`` couples ``L - 1`` and ``0``).
    """

    L: int
    d: int
    one_site: list = field(default_factory=list)
    two_site: list = field(default_factory=list)
    boundary: str = "open"

    def __post_init__(self):
        if self.L < 2:
            raise ValueError("need at least two sites")
        if self.boundary not in ("open", "periodic"):
            raise ValueError(f"unknown boundary {self.boundary!r}")
        nb = self.n_bonds
        if not self.one_site:
            self.one_site = [[] for _ in range(self.L)]
        if not self.two_site:
            self.two_site = [[] for _ in range(nb)]
        if len(self.one_site) != self.L or len(self.two_site) != nb:
            raise ValueError("term lists do not match the chain length")
        for terms in self.one_site:
            for _, op in terms:
                self._check(op)
        for terms in self.two_site:
            for _, a, b in terms:
                self._check(a)
                self._check(b)

    def _check(self, op):
        if np.shape(op) != (self.d, self.d):
            raise ValueError(f"operator of shape {np.shape(op)} on d={self.d} sites")

    @property
    def n_bonds(self) -> int:
        return self.L if self.boundary == "periodic" else self.L - 1

    def bond_sites(self, b: int) -> tuple[int, int]:
        return b, (b + 1) % self.L

    def check_hermitian_terms(self, tol: float = 1e-10) -> None:
        """Warn when the term list is not manifestly hermitian."""
        for terms in self.one_site:
            for g, op in terms:
                if np.max(np.abs(g * op - np.conj(g) * np.conj(op).T)) > tol:
                    warnings.warn("non-hermitian one-site term", RuntimeWarning, stacklevel=3)
                    return
        for terms in self.two_site:
            m = sum((c * np.kron(a, b) for c, a, b in terms), np.zeros((self.d**2,) * 2))
            if np.max(np.abs(m - m.conj().T)) > tol:
                warnings.warn("non-hermitian two-site term", RuntimeWarning, stacklevel=3)
                return

    def bond_matrix(self, b: int) -> np.ndarray:
        """Two-site term of bond ``b`` as a ``d^2 x d^2`` matrix."""
        m = np.zeros((self.d**2, self.d**2), dtype=np.complex128)
        for c, a, bb in self.two_site[b]:
            m += c * np.kron(a, bb)
        return m

    def site_matrix(self, l: int) -> np.ndarray:
        m = np.zeros((self.d, self.d), dtype=np.complex128)
        for g, op in self.one_site[l]:
            m += g * np.asarray(op)
        return m

    def to_sparse(self) -> sp.csr_matrix:
        L, d = self.L, self.d
        if L * np.log2(d) > ED_QUBIT_LIMIT + 1e-9:
            raise ValueError(f"dense size guard: d^L = {d}^{L} exceeds 2^{ED_QUBIT_LIMIT}")
        n = d**L
        h = sp.csr_matrix((n, n), dtype=np.complex128)
        for l in range(L):
            m = self.site_matrix(l)
            if np.any(m):
                h = h + _embed([(l, m)], L, d)
        for b in range(self.n_bonds):
            i, j = self.bond_sites(b)
            for c, a, bb in self.two_site[b]:
                h = h + c * _embed([(i, a), (j, bb)], L, d)
        return h.tocsr()

    def to_dense(self) -> np.ndarray:
        return self.to_sparse().toarray()

    def is_hermitian(self, tol: float = 1e-10) -> bool:
        h = self.to_sparse()
        return bool(abs(h - h.getH()).max() <= tol) if h.nnz else True

    def to_mpo(self):
        """Open-boundary MPO with bond dimension ``2 + max terms per bond``."""
        from .mpo import Mpo

        if self.boundary != "open":
            raise ValueError("MPO form is built for open chains")
        d, L = self.d, self.L
        k = max((len(t) for t in self.two_site), default=0)
        D = k + 2
        ws = []
        for l in range(L):
            w = np.zeros((D, d, d, D), dtype=np.complex128)
            w[0, :, :, 0] = np.eye(d)
            w[D - 1, :, :, D - 1] = np.eye(d)
            w[0, :, :, D - 1] = self.site_matrix(l)
            if l < L - 1:
                for p, (c, a, _) in enumerate(self.two_site[l]):
                    w[0, :, :, 1 + p] = c * np.asarray(a)
            if l > 0:
                for p, (_, _, b) in enumerate(self.two_site[l - 1]):
                    w[1 + p, :, :, D - 1] = b
            ws.append(w)
        left = np.zeros(D)
        left[0] = 1
        right = np.zeros(D)
        right[D - 1] = 1
        return Mpo(ws, left, right)

    def total_charge_op(self, charges: Sequence[float]) -> sp.csr_matrix:
        """Sparse diagonal of the total charge for a per-state ``charges`` map."""
        return sp.diags(config_charges(self.L, self.d, charges).astype(float)).tocsr()


def _embed(ops, L: int, d: int) -> sp.csr_matrix:
    """Kronecker product placing ``ops[(site, matrix)]`` into an ``L``-site chain."""
    placed = dict(ops)
    out = sp.identity(1, dtype=np.complex128, format="csr")
    run = 0
    for l in range(L):
        if l in placed:
            if run:
                out = sp.kron(out, sp.identity(d**run, format="csr"), format="csr")
                run = 0
            out = sp.kron(out, sp.csr_matrix(placed[l]), format="csr")
        else:
            run += 1
    if run:
        out = sp.kron(out, sp.identity(d**run, format="csr"), format="csr")
    return out


def config_charges(L: int, d: int, charges: Sequence[float]) -> np.ndarray:
    """Total charge of every basis configuration (first site most significant)."""
    charges = np.asarray(charges)
    tot = np.zeros(1, dtype=charges.dtype)
    for _ in range(L):
        tot = (tot[:, None] + charges[None, :]).ravel()
    return tot


@dataclass(frozen=True)
class ModelSpec:
    name: str
    L: int
    J: float = 1.0
    h: float = 0.0
    delta: float = 1.0
    boundary: str = "open"

    def __post_init__(self):
        if self.L < 2:
            raise ValueError("L must be at least 2")
        if not all(np.isfinite([self.J, self.h, self.delta])):
            raise ValueError("couplings must be finite")


MODELS = ("tfim", "xxz", "heisenberg", "hardcore")


def build_hamiltonian(spec: ModelSpec) -> NnHamiltonian:
    L = spec.L
    nb = L if spec.boundary == "periodic" else L - 1
    if spec.name == "tfim":
        one = [[(-spec.h, SZ)] for _ in range(L)]
        two = [[(-spec.J, SX, SX)] for _ in range(nb)]
    elif spec.name == "heisenberg":
        one = [[] for _ in range(L)]
        two = [[(spec.J, SX, SX), (spec.J, SY, SY), (spec.J, SZ, SZ)] for _ in range(nb)]
    elif spec.name == "xxz":
        one = [[(-spec.h, SZ)] if spec.h else [] for _ in range(L)]
        two = [[(spec.J, SX, SX), (spec.J, SY, SY), (spec.J * spec.delta, SZ, SZ)] for _ in range(nb)]
    elif spec.name == "hardcore":
        one = [[(-spec.h, NUM)] if spec.h else [] for _ in range(L)]
        bd = B_ANN.conj().T
        two = [[(-spec.J, bd, B_ANN), (-spec.J, B_ANN, bd)] for _ in range(nb)]
    else:
        raise ValueError(f"unknown model {spec.name!r}")
    return NnHamiltonian(L, 2, one, two, spec.boundary)


def tfim(L: int, J: float = 1.0, h: float = 1.0, boundary: str = "open") -> NnHamiltonian:
    return build_hamiltonian(ModelSpec("tfim", L, J=J, h=h, boundary=boundary))


def heisenberg(L: int, J: float = 1.0, boundary: str = "open") -> NnHamiltonian:
    return build_hamiltonian(ModelSpec("heisenberg", L, J=J, boundary=boundary))


def xxz(L: int, delta: float, J: float = 1.0, boundary: str = "open") -> NnHamiltonian:
    return build_hamiltonian(ModelSpec("xxz", L, J=J, delta=delta, boundary=boundary))


#: charge of each local basis state for spin-1/2 chains: number of down spins
SPIN_CHARGES = (0, 1)


def ed_ground(h: NnHamiltonian, sector: int | None = None, charges: Sequence[int] = SPIN_CHARGES):
    """Lowest eigenpair, optionally restricted to a total-charge sector.

    ``charges[s]`` is the charge of local basis state ``s``; the default
    counts occupied (spin-down) sites, so ``S_z = 0`` on ``L`` sites is
    ``sector = L // 2``. Returns ``(energy, state)`` with the state embedded
    in the full space.
    """
    hm = h.to_sparse()
    n = hm.shape[0]
    idx = np.arange(n)
    if sector is not None:
        q = config_charges(h.L, h.d, charges)
        idx = np.nonzero(q == sector)[0]
        if idx.size == 0:
            raise ValueError(f"sector {sector} is empty")
        hm = hm[idx][:, idx]
    m = hm.shape[0]
    if m <= 2048:
        w, v = np.linalg.eigh(hm.toarray())
        e, vec = w[0], v[:, 0]
    else:
        rng = np.random.default_rng(0)
        v0 = rng.standard_normal(m) + 0j
        w, v = spla.eigsh(hm, k=1, which="SA", v0=v0, tol=1e-14, ncv=min(m, 40))
        e, vec = w[0], v[:, 0]
    psi = np.zeros(n, dtype=np.complex128)
    psi[idx] = vec
    res = np.linalg.norm(h.to_sparse() @ psi - e * psi)
    if res > 1e-8:
        raise RuntimeError(f"ED residual {res:.2e} too large")
    return float(e), psi


def tfim_pbc_free_fermion_energy(L: int, J: float = 1.0, h: float = 1.0) -> float:
    """Ground energy of the periodic TFIM from its free-fermion modes.

    Uses the even-parity sector with antiperiodic momenta
    ``k = (2n + 1) pi / L``, where ``eps(k) = 2 sqrt(J^2 + h^2 - 2 J h cos k)``
    and ``E = -sum_k eps(k) / 2``.
    """
    k = (2 * np.arange(L) + 1) * np.pi / L
    return float(-np.sum(np.sqrt(J**2 + h**2 - 2 * J * h * np.cos(k))))
